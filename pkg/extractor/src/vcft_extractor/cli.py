"""Command-line surface: ``extract`` writes VCFT files, ``verify`` audits them."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .extract import MODEL_TABLE, ExtractorSpec, extract, verify


@click.group()
@click.option("--verbose", is_flag=True)
def main(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("extract")
@click.option("--model", "model_id", required=True,
              type=click.Choice(sorted(MODEL_TABLE)))
@click.option("--images", "images_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "out_dir", required=True,
              type=click.Path(path_type=Path))
@click.option("--weights", type=click.Path(exists=True, dir_okay=False,
                                           path_type=Path), default=None,
              help="Checkpoint file; omitted -> seeded random weights.")
@click.option("--feature-kind", type=click.Choice(["keys", "outputs"]),
              default=None, help="Override the model family's native tap.")
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_extract(model_id, images_dir, out_dir, weights, feature_kind, seed):
    """Export per-patch features for every image in a directory."""
    spec = ExtractorSpec(model_id, feature_kind=feature_kind or "")
    try:
        written = extract(images_dir, spec, out_dir, weights=weights, seed=seed)
    except FileNotFoundError as exc:
        raise click.UsageError(str(exc))
    click.echo(f"exported {len(written)} file(s) to {out_dir}")


@main.command("verify")
@click.option("--dir", "out_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
def cmd_verify(out_dir):
    """Audit exported VCFT files against the export contract."""
    report = verify(out_dir)
    click.echo(f"checked {report.checked} file(s)")
    for problem in report.problems:
        click.echo(f"problem: {problem}", err=True)
    if not report.ok:
        sys.exit(1)
    click.echo("all files pass")
