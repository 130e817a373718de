"""Declarative pipeline configuration loaded from YAML or JSON."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigInvalid
from .topics import OldaConfig


@dataclass
class LassoSettings:
    lam: float = 1e-5
    tol: float = 1e-7
    max_iters: int = 10_000


@dataclass
class VocabSettings:
    min_df: int = 5
    max_df_ratio: float = 0.5
    max_size: int = 50_000


@dataclass
class WinsorizeSettings:
    lo_pct: float = 1.0
    hi_pct: float = 99.0


@dataclass
class LabelerSettings:
    mode: str = "stub"  # "stub" | "http"
    url: str | None = None
    allow_fallback: bool = True


@dataclass
class PipelineConfig:
    input_dir: Path
    out_dir: Path
    year_start: int
    year_end: int
    seed: int
    embedding_dir: Path | None = None
    taxonomy_path: Path | None = None
    olda: OldaConfig = field(default_factory=OldaConfig)
    lasso: LassoSettings = field(default_factory=LassoSettings)
    vocab: VocabSettings = field(default_factory=VocabSettings)
    winsorize: WinsorizeSettings = field(default_factory=WinsorizeSettings)
    labeler: LabelerSettings = field(default_factory=LabelerSettings)

    def __post_init__(self):
        self.input_dir = Path(self.input_dir)
        self.out_dir = Path(self.out_dir)
        if self.embedding_dir is not None:
            self.embedding_dir = Path(self.embedding_dir)
        if self.taxonomy_path is not None:
            self.taxonomy_path = Path(self.taxonomy_path)
        if self.year_end <= self.year_start:
            raise ConfigInvalid("year_end must exceed year_start "
                                "(need at least one train/score pair)")
        if self.seed is None:
            raise ConfigInvalid("seed must be set explicitly")
        if self.labeler.mode not in ("stub", "http"):
            raise ConfigInvalid(f"unknown labeler mode {self.labeler.mode!r}")
        if self.labeler.mode == "http" and not self.labeler.url:
            raise ConfigInvalid("http labeler requires a url")

    @property
    def years(self) -> list[int]:
        return list(range(self.year_start, self.year_end + 1))

    @property
    def emb_dir(self) -> Path:
        return self.embedding_dir or self.input_dir

    def input_path(self, name: str) -> Path:
        return self.input_dir / name

    @classmethod
    def from_file(cls, path, seed_override: int | None = None) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text())
        except Exception as exc:
            raise ConfigInvalid(f"cannot parse {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigInvalid(f"{path}: top level must be a mapping")
        try:
            olda = OldaConfig(**raw.pop("olda", {}))
            lasso = LassoSettings(**raw.pop("lasso", {}))
            vocab = VocabSettings(**raw.pop("vocab", {}))
            winsor = WinsorizeSettings(**raw.pop("winsorize", {}))
            labeler = LabelerSettings(**raw.pop("labeler", {}))
            if seed_override is not None:
                raw["seed"] = seed_override
            # relative paths resolve against the config file location
            for key in ("input_dir", "out_dir", "embedding_dir", "taxonomy_path"):
                if raw.get(key):
                    raw[key] = (path.parent / raw[key]).resolve()
            return cls(olda=olda, lasso=lasso, vocab=vocab, winsorize=winsor,
                       labeler=labeler, **raw)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"{path}: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "input_dir": str(self.input_dir),
            "out_dir": str(self.out_dir),
            "year_start": self.year_start,
            "year_end": self.year_end,
            "seed": self.seed,
            "embedding_dir": str(self.embedding_dir) if self.embedding_dir else None,
            "taxonomy_path": str(self.taxonomy_path) if self.taxonomy_path else None,
            "olda": vars(self.olda).copy(),
            "lasso": vars(self.lasso).copy(),
            "vocab": vars(self.vocab).copy(),
            "winsorize": vars(self.winsorize).copy(),
            "labeler": vars(self.labeler).copy(),
        }

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))
