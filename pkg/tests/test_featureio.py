import json
import struct

import numpy as np
import pytest

from votecut.core import BinaryMask, BoundingBox
from votecut.errors import DataError, FormatError
from votecut.featureio import (
    Annotation,
    AnnotationSet,
    FeatureMap,
    ImageRecord,
    read_annotations,
    read_feature_file,
    read_ppm,
    write_annotations,
    write_feature_file,
    write_ppm,
)


def make_fm(rng, grid_h=2, grid_w=2, dim=3, model_id="dino"):
    data = rng.standard_normal((grid_h, grid_w, dim)).astype(np.float32)
    return FeatureMap(model_id, grid_h, grid_w, dim, data)


class TestVcft:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        fm = make_fm(rng, 3, 5, 7)
        path = tmp_path / "img.dino.vcft"
        write_feature_file(fm, path)
        again = read_feature_file(path)
        assert again.model_id == "dino"
        assert (again.grid_h, again.grid_w, again.dim) == (3, 5, 7)
        assert again.data.tobytes() == fm.data.tobytes()
        # writing again produces identical bytes
        path2 = tmp_path / "copy.dino.vcft"
        write_feature_file(again, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_header_layout(self, tmp_path):
        rng = np.random.default_rng(1)
        fm = make_fm(rng)
        path = tmp_path / "x.m.vcft"
        write_feature_file(fm, path)
        blob = path.read_bytes()
        assert blob[:4] == b"VCFT"
        version, gh, gw, dim = struct.unpack("<4I", blob[4:20])
        assert (version, gh, gw, dim) == (1, 2, 2, 3)
        assert len(blob) == 20 + 2 * 2 * 3 * 4

    def test_truncated_payload_rejected(self, tmp_path):
        header = b"VCFT" + struct.pack("<4I", 1, 2, 2, 3)
        path = tmp_path / "bad.m.vcft"
        path.write_bytes(header + b"\x00" * (11 * 4))  # 11 floats, needs 12
        with pytest.raises(FormatError):
            read_feature_file(path)

    def test_excess_payload_rejected(self, tmp_path):
        header = b"VCFT" + struct.pack("<4I", 1, 2, 2, 3)
        path = tmp_path / "fat.m.vcft"
        path.write_bytes(header + b"\x00" * (13 * 4))
        with pytest.raises(FormatError):
            read_feature_file(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.m.vcft"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError):
            read_feature_file(path)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "v9.m.vcft"
        path.write_bytes(b"VCFT" + struct.pack("<4I", 9, 1, 1, 1) + b"\x00" * 4)
        with pytest.raises(FormatError):
            read_feature_file(path)

    def test_non_finite_rejected(self, tmp_path):
        header = b"VCFT" + struct.pack("<4I", 1, 1, 1, 2)
        payload = struct.pack("<2f", 1.0, float("nan"))
        path = tmp_path / "nan.m.vcft"
        path.write_bytes(header + payload)
        with pytest.raises(DataError):
            read_feature_file(path)

    def test_model_id_from_filename(self, tmp_path):
        rng = np.random.default_rng(2)
        fm = make_fm(rng, model_id="vit_s16")
        path = tmp_path / "image007.vit_s16.vcft"
        write_feature_file(fm, path)
        assert read_feature_file(path).model_id == "vit_s16"

    def test_overwrite_allowed(self, tmp_path):
        rng = np.random.default_rng(3)
        path = tmp_path / "a.m.vcft"
        write_feature_file(make_fm(rng), path)
        fm2 = make_fm(rng)
        write_feature_file(fm2, path)
        assert read_feature_file(path).data.tobytes() == fm2.data.tobytes()

    def test_missing_directory_errors(self, tmp_path):
        rng = np.random.default_rng(4)
        with pytest.raises(OSError):
            write_feature_file(make_fm(rng), tmp_path / "no" / "dir" / "f.m.vcft")

    def test_feature_map_validates(self):
        with pytest.raises(FormatError):
            FeatureMap("m", 2, 2, 3, np.zeros(11, dtype=np.float32))
        with pytest.raises(DataError):
            FeatureMap("m", 1, 1, 2, np.array([1.0, np.inf], dtype=np.float32))


def random_annotation_set(rng, n_images=3, max_per_image=4):
    images, annotations = [], []
    for i in range(n_images):
        h, w = int(rng.integers(4, 9)), int(rng.integers(4, 9))
        images.append(ImageRecord(f"im{i}", f"im{i}.ppm", w, h))
        for _ in range(int(rng.integers(0, max_per_image))):
            bits = rng.random((h, w)) < 0.4
            if not bits.any():
                bits[0, 0] = True
            mask = BinaryMask.from_array(bits)
            ys, xs = np.nonzero(bits)
            box = BoundingBox(int(xs.min()), int(ys.min()),
                              int(xs.max() - xs.min() + 1),
                              int(ys.max() - ys.min() + 1))
            annotations.append(Annotation(f"im{i}", box,
                                          float(rng.random()), mask))
    return AnnotationSet(images, annotations)


class TestAnnotations:
    def test_empty_set_shape(self, tmp_path):
        path = tmp_path / "empty.json"
        write_annotations(AnnotationSet([], []), path)
        doc = json.loads(path.read_text())
        assert doc == {"images": [], "annotations": []}

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        for trial in range(5):
            aset = random_annotation_set(rng)
            path = tmp_path / f"t{trial}.json"
            write_annotations(aset, path)
            again = read_annotations(path)
            assert [im for im in again.images] == [im for im in aset.images]
            assert len(again.annotations) == len(aset.annotations)
            for a, b in zip(again.annotations, aset.annotations):
                assert a.image_id == b.image_id
                assert a.box == b.box
                assert a.score == b.score
                assert a.mask.same_as(b.mask)

    def test_unknown_image_id_rejected(self):
        mask = BinaryMask.ones(2, 2)
        ann = Annotation("ghost", BoundingBox(0, 0, 2, 2), 0.5, mask)
        with pytest.raises(DataError):
            AnnotationSet([ImageRecord("real", "r.ppm", 2, 2)], [ann])

    def test_unknown_image_id_in_file_rejected(self, tmp_path):
        doc = {
            "images": [{"id": "a", "file_name": "a.ppm", "width": 2, "height": 2}],
            "annotations": [{
                "image_id": "b", "bbox": [0, 0, 1, 1], "score": 0.5,
                "segmentation": {"size": [2, 2], "counts": [0, 4]},
            }],
        }
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            read_annotations(path)

    def test_schema_violations_rejected(self, tmp_path):
        cases = [
            {"images": []},  # missing annotations
            {"images": [{"id": 1}], "annotations": []},  # incomplete image
            {"images": [], "annotations": [{"image_id": 1}]},
            [],  # not an object
        ]
        for i, doc in enumerate(cases):
            path = tmp_path / f"s{i}.json"
            path.write_text(json.dumps(doc))
            with pytest.raises(FormatError):
                read_annotations(path)

    def test_score_out_of_range_rejected(self, tmp_path):
        doc = {
            "images": [{"id": "a", "file_name": "a.ppm", "width": 2, "height": 2}],
            "annotations": [{
                "image_id": "a", "bbox": [0, 0, 1, 1], "score": 1.5,
                "segmentation": {"size": [2, 2], "counts": [0, 4]},
            }],
        }
        path = tmp_path / "score.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            read_annotations(path)


class TestPpm:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        image = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        path = tmp_path / "img.ppm"
        write_ppm(image, path)
        assert np.array_equal(read_ppm(path), image)

    def test_rejects_wrong_maxval(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P6\n2 2\n65535\n" + b"\x00" * 24)
        with pytest.raises(FormatError):
            read_ppm(path)

    def test_rejects_short_payload(self, tmp_path):
        path = tmp_path / "short.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + b"\x00" * 11)
        with pytest.raises(FormatError):
            read_ppm(path)

    def test_comment_in_header(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# a comment\n1 1\n255\n\x01\x02\x03")
        image = read_ppm(path)
        assert image.shape == (1, 1, 3)
        assert image.tolist() == [[[1, 2, 3]]]
