"""Report rendering: delimited outputs, human-readable tables, and
matplotlib figures written next to the CSVs.

PNG output omits the Date metadata so report artifacts are byte-stable
across reruns of the same seed.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .econometrics import HeatmapGrid, RegressionResult, ShapleyReport

_PNG_META = {"metadata": {"Date": None, "Software": None}}


def _stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def regression_table(columns: dict[str, tuple[RegressionResult, ShapleyReport | None]],
                     row_order: list[str]) -> str:
    """Coefficients with SEs in parentheses, then R2, N, and SHAP shares."""
    col_names = list(columns)
    width = max(16, max(len(c) for c in col_names) + 2)
    label_w = max(len(r) for r in row_order) + 8

    def fmt_row(label, cells):
        return label.ljust(label_w) + "".join(c.rjust(width) for c in cells) + "\n"

    out = fmt_row("", col_names)
    out += "-" * (label_w + width * len(col_names)) + "\n"
    for name in row_order:
        coef_cells, se_cells = [], []
        for res, _ in columns.values():
            if name in res.names:
                i = res.names.index(name)
                coef_cells.append(f"{res.coef[i]:.4f}{_stars(res.pvalue[i])}")
                se_cells.append(f"({res.se[i]:.4f})")
            else:
                coef_cells.append("")
                se_cells.append("")
        out += fmt_row(name, coef_cells)
        out += fmt_row("", se_cells)
    out += fmt_row("R2", [f"{res.r2:.3f}" for res, _ in columns.values()])
    out += fmt_row("N", [str(res.n) for res, _ in columns.values()])
    shap_rows = [n for n in row_order
                 if any(sh is not None and n in sh.names
                        for _, sh in columns.values())]
    for name in shap_rows:
        cells = []
        for _, sh in columns.values():
            if sh is not None and name in sh.names:
                cells.append(f"{sh.normalized[sh.names.index(name)]:.2f}")
            else:
                cells.append("")
        out += fmt_row(f"SHAP({name})", cells)
    return out


def write_regression_csv(columns: dict[str, tuple[RegressionResult,
                                                  ShapleyReport | None]],
                         path) -> None:
    with open(path, "w") as f:
        f.write("column,term,coef,se,tstat,pvalue,r2,n,shap_share\n")
        for col, (res, sh) in columns.items():
            shap = {}
            if sh is not None:
                shap = dict(zip(sh.names, sh.normalized))
            for i, name in enumerate(res.names):
                f.write(f"{col},{name},{float(res.coef[i])!r},"
                        f"{float(res.se[i])!r},{float(res.tstat[i])!r},"
                        f"{float(res.pvalue[i])!r},{float(res.r2)!r},{res.n},"
                        f"{shap.get(name, '')}\n")


# ---------------------------------------------------------------------------
# Figures


def corpus_stats_figure(stats: dict[int, dict], path: Path) -> None:
    years = sorted(stats)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    panels = [("article_count", "Total Articles"),
              ("distinct_stock_count", "Distinct Stocks"),
              ("mean_char_count", "Mean Characters")]
    for ax, (key, title) in zip(axes, panels):
        ax.bar(years, [stats[y][key] for y in years], color="#4477aa")
        ax.set_title(title)
        ax.set_xlabel("year")
    fig.tight_layout()
    fig.savefig(path, **_PNG_META)
    plt.close(fig)


def heatmap_figure(grid: HeatmapGrid, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    data = 100.0 * grid.mean_ret
    im = ax.imshow(data, origin="lower", cmap="RdYlGn", aspect="auto")
    for i in range(5):
        for j in range(5):
            if np.isfinite(data[i, j]):
                ax.text(j, i, f"{data[i, j]:.2f}", ha="center", va="center",
                        fontsize=8)
    ax.set_xlabel("soft score quintile")
    ax.set_ylabel("surprise quintile")
    ax.set_title("Mean announcement-day return (%)")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, **_PNG_META)
    plt.close(fig)


def polarity_figure(series: dict[str, dict[int, dict[str, int]]], path: Path) -> None:
    """One panel per feature kind: metatopic weight sign by year."""
    kinds = list(series)
    fig, axes = plt.subplots(len(kinds), 1, figsize=(9, 3.2 * len(kinds)),
                             squeeze=False)
    for ax, kind in zip(axes[:, 0], kinds):
        by_year = series[kind]
        years = sorted(by_year)
        metas = sorted({m for signs in by_year.values() for m in signs})
        img = np.array([[by_year[y].get(m, 0) for y in years] for m in metas],
                       dtype=float)
        ax.imshow(img, cmap="RdBu_r", vmin=-1, vmax=1, aspect="auto")
        ax.set_yticks(range(len(metas)), metas, fontsize=7)
        ax.set_xticks(range(len(years)), [str(y) for y in years], fontsize=7)
        ax.set_title(f"Metatopic weight polarity ({kind})")
    fig.tight_layout()
    fig.savefig(path, **_PNG_META)
    plt.close(fig)


def ls_series_figure(series_by_rank: dict[str, dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(9, 4))
    for rank_by, series in series_by_rank.items():
        dates = sorted(series)
        for j, style in ((1, "-"), (2, "--")):
            cum = np.cumsum([series[d][j - 1] for d in dates])
            ax.plot(dates, cum, style, label=f"{rank_by} strategy {j}")
    ax.legend(fontsize=8)
    ax.set_ylabel("cumulative long-short return")
    ax.set_title("Long-short performance by execution strategy")
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, **_PNG_META)
    plt.close(fig)
