"""Command line entry point.

Exit codes: 0 success (possibly with skipped documents), 2 bad arguments,
3 checkpoint unavailable.
"""

from __future__ import annotations

import logging
import sys

import click

from .encode import EmbedJob, embed_documents
from .errors import CheckpointUnavailable
from .formats import KIND_CODE


@click.command("embed")
@click.option("--manifest", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSONL with doc_id, year, clean_text per line.")
@click.option("--kind", required=True, type=click.Choice(sorted(KIND_CODE)))
@click.option("--checkpoint", required=True,
              help="Model name or local checkpoint directory.")
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False))
@click.option("--batch-size", type=int, default=8, show_default=True)
@click.option("--device", default="cpu", show_default=True)
@click.option("-v", "--verbose", is_flag=True)
def main(manifest, kind, checkpoint, out_dir, batch_size, device, verbose):
    """Export mean-pooled document vectors and token matrices."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    job = EmbedJob(manifest=manifest, kind=kind, checkpoint=checkpoint,
                   out_dir=out_dir, batch_size=batch_size, device=device)
    try:
        report = embed_documents(job)
    except CheckpointUnavailable as exc:
        click.echo(f"checkpoint unavailable: {exc}", err=True)
        sys.exit(3)
    click.echo(f"embedded {report.n_docs} docs into {len(report.files)} files "
               f"(revision {report.revision[:12]})")
    for doc_id in report.failed_docs:
        click.echo(f"skipped doc {doc_id}: tokenization failed", err=True)


if __name__ == "__main__":
    main()
