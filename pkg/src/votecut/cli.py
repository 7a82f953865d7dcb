"""Command-line front end.

``votecut run`` discovers instances over a directory of feature files,
``votecut eval`` scores predictions against ground truth (optionally
writing a CSV and a matplotlib figure next to the JSON report),
``votecut filter`` applies the self-training confidence filter, and
``votecut render`` draws mask overlays onto an image.
"""

from __future__ import annotations

import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from .core import PipelineConfig
from .errors import VotecutError
from .featureio import (
    Annotation,
    AnnotationSet,
    ImageRecord,
    read_annotations,
    read_feature_file,
    read_ppm,
    write_annotations,
    write_ppm,
)
from .evalkit import IOU_THRESHOLDS, evaluate
from .pipeline import VOTE_SIDE, run_votecut
from .softloss import filter_pseudo_labels

log = logging.getLogger(__name__)

_CONFIG_KEYS = {
    "tau_ncut": float,
    "tau_c": float,
    "tau_m": float,
    "k_max": int,
    "max_instances": int,
    "tau_iou": float,
    "min_keep_score": float,
}


@dataclass
class RunManifest:
    features_dir: Path
    model_ids: list
    output_path: Path
    config: PipelineConfig
    images_dir: Path | None = None
    parallelism: int = 1
    use_crf: bool = True

    def __post_init__(self):
        if not self.model_ids:
            raise ValueError("model_ids must be nonempty")


def load_config_file(path) -> dict:
    """Key-value config: one ``key = value`` per line, ``#`` comments."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "crf":
            values["crf"] = value.lower()
        elif key in _CONFIG_KEYS:
            values[key] = _CONFIG_KEYS[key](value)
        else:
            raise click.UsageError(f"{path}:{lineno}: unknown config key {key!r}")
    return values


def scan_features(features_dir: Path) -> dict:
    """Map image_id -> {model_id: path} from ``<image>.<model>.vcft`` names."""
    table = {}
    for path in sorted(features_dir.glob("*.vcft")):
        parts = path.name.rsplit(".", 2)
        if len(parts) != 3:
            log.warning("ignoring unparseable feature file name %s", path.name)
            continue
        image_id, model_id = parts[0], parts[1]
        table.setdefault(image_id, {})[model_id] = path
    return table


def _image_path_for(images_dir: Path | None, image_id: str) -> Path | None:
    if images_dir is None:
        return None
    candidate = images_dir / f"{image_id}.ppm"
    return candidate if candidate.exists() else None


def _run_one(args):
    """Worker: one image end to end. Must stay picklable for process pools."""
    image_id, feature_paths, image_path, cfg, use_crf = args
    feature_maps = [
        read_feature_file(path, model_id=model_id)
        for model_id, path in feature_paths
    ]
    image_rgb = read_ppm(image_path) if image_path is not None else None
    instances = run_votecut(image_id, feature_maps, image_rgb, cfg, use_crf=use_crf)
    if image_rgb is not None:
        height, width = image_rgb.shape[:2]
        file_name = Path(image_path).name
    else:
        height = width = VOTE_SIDE
        file_name = image_id
    record = ImageRecord(image_id, file_name, width, height)
    return record, instances


def execute_run(manifest: RunManifest) -> int:
    """Returns the number of failed images; writes the annotation file."""
    table = scan_features(manifest.features_dir)
    if not table:
        raise click.UsageError(
            f"no .vcft feature files found under {manifest.features_dir}"
        )
    work = []
    skipped = 0
    for image_id in sorted(table):
        available = table[image_id]
        missing = [m for m in manifest.model_ids if m not in available]
        if missing:
            log.warning("skipping image %s: missing features for %s",
                        image_id, ", ".join(missing))
            skipped += 1
            continue
        feature_paths = [(m, available[m]) for m in manifest.model_ids]
        image_path = _image_path_for(manifest.images_dir, image_id)
        work.append((image_id, feature_paths, image_path,
                     manifest.config, manifest.use_crf))
    if not work:
        raise click.UsageError(
            "no image has features for every requested model: "
            + ", ".join(manifest.model_ids)
        )

    results = []
    failures = 0
    if manifest.parallelism <= 1:
        outcomes = map(_try_run_one, work)
    else:
        with ProcessPoolExecutor(max_workers=manifest.parallelism) as pool:
            outcomes = list(pool.map(_try_run_one, work))
    for item, outcome in zip(work, outcomes):
        if isinstance(outcome, str):
            log.error("image %s failed: %s", item[0], outcome)
            failures += 1
        else:
            results.append(outcome)

    images = [record for record, _ in results]
    annotations = [
        Annotation(image_id=inst.image_id, box=inst.box,
                   score=inst.score, mask=inst.mask)
        for _, instances in results
        for inst in instances
    ]
    write_annotations(AnnotationSet(images, annotations), manifest.output_path)
    if skipped:
        log.warning("%d image(s) skipped for missing model features", skipped)
    return failures


def _try_run_one(args):
    try:
        return _run_one(args)
    except (VotecutError, OSError, ValueError) as exc:
        return f"{type(exc).__name__}: {exc}"


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("run")
@click.option("--features", "features_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "output_path", required=True, type=click.Path(path_type=Path))
@click.option("--models", default="", help="Comma-separated model ids; "
              "defaults to every model present in the features directory.")
@click.option("--images", "images_dir", default=None,
              type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Directory of <image_id>.ppm images for CRF refinement.")
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Key-value config file; flags override its values.")
@click.option("--tau-ncut", type=float, default=None)
@click.option("--tau-c", type=float, default=None)
@click.option("--tau-m", type=float, default=None)
@click.option("--kmax", type=int, default=None)
@click.option("--max-instances", type=int, default=None)
@click.option("--crf", type=click.Choice(["on", "off"]), default=None)
@click.option("--jobs", type=int, default=1, help="Worker processes.")
def cmd_run(features_dir, output_path, models, images_dir, config_path,
            tau_ncut, tau_c, tau_m, kmax, max_instances, crf, jobs):
    """Run discovery over a feature directory and write annotations."""
    file_values = load_config_file(config_path) if config_path else {}
    flag_values = {
        "tau_ncut": tau_ncut,
        "tau_c": tau_c,
        "tau_m": tau_m,
        "k_max": kmax,
        "max_instances": max_instances,
    }
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    crf_setting = merged.pop("crf", "on")
    if crf is not None:
        crf_setting = crf
    try:
        config = PipelineConfig(**merged)
    except ValueError as exc:
        raise click.UsageError(str(exc))

    model_ids = [m for m in models.split(",") if m]
    if not model_ids:
        table = scan_features(features_dir)
        model_ids = sorted({m for mods in table.values() for m in mods})
    if not model_ids:
        raise click.UsageError(f"no .vcft feature files found under {features_dir}")

    manifest = RunManifest(
        features_dir=features_dir,
        model_ids=model_ids,
        output_path=output_path,
        config=config,
        images_dir=images_dir,
        parallelism=max(1, jobs),
        use_crf=(crf_setting == "on"),
    )
    failures = execute_run(manifest)
    if failures:
        click.echo(f"{failures} image(s) failed; see log", err=True)
        sys.exit(1)


@main.command("eval")
@click.option("--pred", "pred_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--gt", "gt_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--iou-kind", type=click.Choice(["box", "mask"]), default="box")
@click.option("--json-out", type=click.Path(path_type=Path), default=None)
@click.option("--csv-out", type=click.Path(path_type=Path), default=None,
              help="Per-threshold AP table as CSV.")
@click.option("--figure-out", type=click.Path(path_type=Path), default=None,
              help="Render the per-threshold AP curve to an image file.")
def cmd_eval(pred_path, gt_path, iou_kind, json_out, csv_out, figure_out):
    """Evaluate predictions against ground truth, print a metric table."""
    try:
        preds = read_annotations(pred_path)
        gts = read_annotations(gt_path)
        report = evaluate(preds, gts, iou_kind)
    except VotecutError as exc:
        raise click.UsageError(str(exc))

    click.echo(f"{'metric':12s} value")
    for name, value in (("AP", report.ap), ("AP50", report.ap50),
                        ("AP75", report.ap75), ("AR100", report.ar100)):
        click.echo(f"{name:12s} {value:.4f}")
    for warning in report.warnings:
        click.echo(f"warning: {warning}", err=True)
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if json_out is not None:
        Path(json_out).write_text(payload + "\n")
    else:
        click.echo(payload)
    if csv_out is not None:
        lines = ["iou_threshold,ap"]
        lines += [f"{t:.2f},{report.per_threshold[t]!r}" for t in IOU_THRESHOLDS]
        Path(csv_out).write_text("\n".join(lines) + "\n")
    if figure_out is not None:
        _save_eval_figure(report, figure_out)


def _save_eval_figure(report, figure_out):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    thresholds = list(IOU_THRESHOLDS)
    values = [report.per_threshold[t] for t in thresholds]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(thresholds, values, marker="o")
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("AP")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(f"AP {report.ap:.3f} | AP50 {report.ap50:.3f} | "
                 f"AP75 {report.ap75:.3f} | AR100 {report.ar100:.3f}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(figure_out, dpi=120)
    plt.close(fig)


@main.command("filter")
@click.option("--pred", "pred_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", "output_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--min-score", type=float, default=0.2, show_default=True)
def cmd_filter(pred_path, output_path, min_score):
    """Drop predictions whose confidence is below the threshold."""
    try:
        aset = read_annotations(pred_path)
    except VotecutError as exc:
        raise click.UsageError(str(exc))
    kept = filter_pseudo_labels(aset.annotations, min_score)
    write_annotations(AnnotationSet(list(aset.images), kept), output_path)
    click.echo(f"kept {len(kept)} of {len(aset.annotations)} annotations")


_PALETTE = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 190),
)


def render_overlay(image: np.ndarray, annotations, alpha: float = 0.4) -> np.ndarray:
    """Alpha-blend instance masks, outline boxes, and stamp score labels.

    Colors are keyed by instance index, so output is deterministic. With
    no annotations the image passes through untouched.
    """
    from PIL import Image, ImageDraw

    out = image.astype(np.float64)
    for idx, ann in enumerate(annotations):
        color = np.array(_PALETTE[idx % len(_PALETTE)], dtype=np.float64)
        bits = ann.mask.bits
        if bits.shape != image.shape[:2]:
            raise VotecutError(
                f"mask {bits.shape} does not match image {image.shape[:2]}"
            )
        out[bits] = (1.0 - alpha) * out[bits] + alpha * color
    out = np.rint(out).clip(0, 255).astype(np.uint8)
    if not annotations:
        return out

    pil = Image.fromarray(out)
    draw = ImageDraw.Draw(pil)
    for idx, ann in enumerate(annotations):
        color = _PALETTE[idx % len(_PALETTE)]
        b = ann.box
        draw.rectangle([b.x, b.y, b.x + b.w - 1, b.y + b.h - 1],
                       outline=color, width=1)
        draw.text((b.x + 2, max(0, b.y - 11)), f"{ann.score:.2f}", fill=color)
    return np.asarray(pil)


def _load_image(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    from PIL import Image

    return np.asarray(Image.open(path).convert("RGB"))


def _save_image(image: np.ndarray, path: Path):
    if path.suffix.lower() == ".ppm":
        write_ppm(image, path)
    else:
        from PIL import Image

        Image.fromarray(image).save(path)


@main.command("render")
@click.option("--image", "image_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--pred", "pred_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", "output_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--image-id", default=None,
              help="Which image's annotations to draw; defaults to the only "
                   "image in the prediction file.")
@click.option("--alpha", type=float, default=0.4, show_default=True)
def cmd_render(image_path, pred_path, output_path, image_id, alpha):
    """Draw predicted masks, boxes, and scores onto an image."""
    try:
        aset = read_annotations(pred_path)
    except VotecutError as exc:
        raise click.UsageError(str(exc))
    if image_id is None:
        if len(aset.images) != 1:
            raise click.UsageError(
                "--image-id required when predictions cover multiple images"
            )
        image_id = aset.images[0].id
    annotations = [a for a in aset.annotations
                   if str(a.image_id) == str(image_id)]
    image = _load_image(image_path)
    try:
        rendered = render_overlay(image, annotations, alpha=alpha)
    except VotecutError as exc:
        raise click.UsageError(str(exc))
    _save_image(rendered, output_path)
    click.echo(f"rendered {len(annotations)} instance(s) to {output_path}")
