"""Extractor acceptance: every supported model id exports 5 sample images
at its native input side, the grids match the patch arithmetic, the files
survive the primary reader bit for bit, and the discovery CLI produces at
least one instance per image without errors. Run with ``-s`` for the
per-model pass lines. Slow on CPU for the patch-8 backbones.
"""

import json

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from vcft_extractor.extract import MODEL_TABLE, ExtractorSpec, extract, verify

from votecut.cli import main as votecut_main
from votecut.featureio import read_annotations, read_feature_file

EXPECTED_GRIDS = {
    "dino_vits16": 30,
    "dino_vits8": 60,
    "dino_vitb16": 30,
    "dino_vitb8": 60,
    "dinov2_vits14": 34,
    "dinov2_vitb14": 34,
}

N_IMAGES = 5


@pytest.fixture(scope="module")
def sample_images(tmp_path_factory):
    root = tmp_path_factory.mktemp("samples")
    rng = np.random.default_rng(2026)
    for i in range(N_IMAGES):
        arr = np.full((96, 128, 3), 30 + 10 * i, dtype=np.uint8)
        y, x = int(rng.integers(8, 40)), int(rng.integers(8, 60))
        arr[y : y + 40, x : x + 50] = (
            int(rng.integers(150, 255)),
            int(rng.integers(0, 120)),
            int(rng.integers(0, 120)),
        )
        Image.fromarray(arr).save(root / f"sample{i}.png")
    return root


@pytest.mark.parametrize("model_id", sorted(MODEL_TABLE))
def test_criterion_12_extractor_contract(model_id, sample_images, tmp_path):
    spec = ExtractorSpec(model_id)
    out_dir = tmp_path / "features"
    written = extract(sample_images, spec, out_dir)
    assert len(written) == N_IMAGES

    side = EXPECTED_GRIDS[model_id]
    for path in written:
        fm = read_feature_file(path)
        assert (fm.grid_h, fm.grid_w) == (side, side)
        assert fm.dim == MODEL_TABLE[model_id].dim
        assert fm.model_id == model_id
        assert path.read_bytes()[20:] == fm.data.tobytes()

    report = verify(out_dir)
    assert report.ok, report.problems

    pred_path = tmp_path / "preds.json"
    result = CliRunner().invoke(
        votecut_main,
        ["run", "--features", str(out_dir), "--out", str(pred_path),
         "--models", model_id, "--crf", "off"],
        catch_exceptions=False,
    )
    assert result.exit_code == 0, result.output
    doc = json.loads(pred_path.read_text())
    per_image = {}
    for ann in doc["annotations"]:
        per_image[ann["image_id"]] = per_image.get(ann["image_id"], 0) + 1
    assert len(read_annotations(pred_path).images) == N_IMAGES
    for i in range(N_IMAGES):
        assert per_image.get(f"sample{i}", 0) >= 1
    print(f"[PASS] criterion 12 ({model_id}): grid {side}x{side}, "
          f"round-trip exact, discovery produced instances for all images")
