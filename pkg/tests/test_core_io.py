import struct

import numpy as np
import pytest

from prism_eval import core_io
from prism_eval.core_io import (
    ActivationStack,
    CameraPose,
    CorruptionError,
    DataError,
    EmbeddingSet,
    FormatError,
    Manifest,
    RelativePose,
    TripletRecord,
)

from conftest import random_stack_arrays


def make_prsa_bytes(blocks):
    out = b"PRSA" + struct.pack("<II", 1, len(blocks))
    for blk in blocks:
        out += struct.pack("<III", *blk.shape)
    for blk in blocks:
        out += np.ascontiguousarray(blk, dtype="<f4").tobytes()
    return out


class TestPoseTypes:
    def test_azimuth_normalized(self):
        assert CameraPose(370.0, 30.0, 2.7).azimuth_deg == pytest.approx(10.0)
        assert CameraPose(-22.5, 30.0, 2.7).azimuth_deg == pytest.approx(337.5)

    def test_radius_positive(self):
        with pytest.raises(DataError):
            CameraPose(0.0, 0.0, 0.0)

    def test_relative_wraps_to_half_open_interval(self):
        assert RelativePose(180.0).d_azimuth_deg == pytest.approx(180.0)
        assert RelativePose(-180.0).d_azimuth_deg == pytest.approx(180.0)
        assert RelativePose(190.0).d_azimuth_deg == pytest.approx(-170.0)

    def test_normalization_idempotent(self, rng):
        for _ in range(200):
            raw = float(rng.uniform(-1000, 1000))
            once = core_io.normalize_relative_azimuth(raw)
            assert core_io.normalize_relative_azimuth(once) == once
            once_abs = core_io.normalize_azimuth(raw)
            assert core_io.normalize_azimuth(once_abs) == once_abs
            assert 0.0 <= once_abs < 360.0
            assert -180.0 < once <= 180.0


class TestPrsa:
    def test_minimal_file(self, tmp_path):
        blk = np.array([[[3.0, 4.0]]], dtype=np.float32)
        path = tmp_path / "one.prsa"
        path.write_bytes(make_prsa_bytes([blk]))
        stack = core_io.read_activation_file(path)
        assert stack.block_count == 1
        assert stack.shapes == ((1, 1, 2),)
        np.testing.assert_array_equal(stack.blocks[0], blk)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.prsa"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(FormatError):
            core_io.read_activation_file(path)

    def test_bad_version(self, tmp_path):
        blk = np.zeros((1, 1, 1), dtype=np.float32)
        raw = bytearray(make_prsa_bytes([blk]))
        raw[4:8] = struct.pack("<I", 9)
        path = tmp_path / "v9.prsa"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            core_io.read_activation_file(path)

    def test_roundtrip_bitwise(self, tmp_path, rng):
        blocks = [rng.standard_normal((4, 5, 3)).astype(np.float32) for _ in range(3)]
        stack = ActivationStack(tuple(blocks))
        path = tmp_path / "rt.prsa"
        core_io.write_activation_file(stack, path)
        assert path.read_bytes() == make_prsa_bytes(blocks)
        back = core_io.read_activation_file(path)
        path2 = tmp_path / "rt2.prsa"
        core_io.write_activation_file(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_roundtrip_randomized_shapes(self, tmp_path, rng):
        for i in range(10):
            blocks = random_stack_arrays(rng, max_blocks=4, max_side=8, max_channels=8)
            path = tmp_path / f"r{i}.prsa"
            core_io.write_activation_file(ActivationStack(tuple(blocks)), path)
            back = core_io.read_activation_file(path)
            assert back.block_count == len(blocks)
            for got, want in zip(back.blocks, blocks):
                np.testing.assert_array_equal(got, want)

    def test_truncated_payload(self, tmp_path):
        blk = np.ones((2, 2, 2), dtype=np.float32)
        raw = make_prsa_bytes([blk])
        path = tmp_path / "trunc.prsa"
        path.write_bytes(raw[:-4])
        with pytest.raises(CorruptionError):
            core_io.read_activation_file(path)

    def test_trailing_bytes(self, tmp_path):
        blk = np.ones((1, 1, 1), dtype=np.float32)
        path = tmp_path / "trail.prsa"
        path.write_bytes(make_prsa_bytes([blk]) + b"xx")
        with pytest.raises(CorruptionError):
            core_io.read_activation_file(path)

    def test_nonfinite_payload(self, tmp_path):
        blk = np.array([[[np.nan]]], dtype=np.float32)
        path = tmp_path / "nan.prsa"
        path.write_bytes(make_prsa_bytes([blk]))
        with pytest.raises(DataError):
            core_io.read_activation_file(path)

    def test_header_peek(self, tmp_path, rng):
        blocks = [rng.standard_normal((2, 3, 4)).astype(np.float32)]
        path = tmp_path / "peek.prsa"
        core_io.write_activation_file(ActivationStack(tuple(blocks)), path)
        assert core_io.read_activation_header(path) == [(2, 3, 4)]


class TestPrsf:
    def test_layout_size(self, tmp_path):
        emb = EmbeddingSet(np.zeros((2, 3), dtype=np.float32))
        path = tmp_path / "e.prsf"
        core_io.write_embedding_file(emb, path)
        assert path.stat().st_size == 4 + 4 + 4 + 4 + 24

    def test_roundtrip_large(self, tmp_path, rng):
        rows = rng.standard_normal((100, 2048)).astype(np.float32)
        path = tmp_path / "big.prsf"
        core_io.write_embedding_file(EmbeddingSet(rows), path)
        back = core_io.read_embedding_file(path)
        np.testing.assert_array_equal(back.rows, rows)
        path2 = tmp_path / "big2.prsf"
        core_io.write_embedding_file(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_single_row_writes(self, tmp_path):
        path = tmp_path / "one.prsf"
        core_io.write_embedding_file(EmbeddingSet(np.ones((1, 4), dtype=np.float32)), path)
        assert core_io.read_embedding_file(path).count == 1

    def test_endianness_golden_bytes(self, tmp_path):
        rows = np.array([[1.0, 2.0]], dtype=np.float32)
        path = tmp_path / "golden.prsf"
        core_io.write_embedding_file(EmbeddingSet(rows), path)
        expect = b"PRSF" + struct.pack("<III", 1, 1, 2) + struct.pack("<ff", 1.0, 2.0)
        assert path.read_bytes() == expect

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "t.prsf"
        core_io.write_embedding_file(EmbeddingSet(np.ones((2, 2), dtype=np.float32)), path)
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(CorruptionError):
            core_io.read_embedding_file(path)


class TestManifest:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("")
        manifest = core_io.load_manifest(path)
        assert len(manifest) == 0
        assert manifest.split == "train"

    def test_record_parse_and_normalize(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text(
            "source=s0 target=t0 label=negative_pose weight=0.5 daz=180 del=0 drad=0 path=a.prsa\n"
        )
        manifest = core_io.load_manifest(path)
        rec = manifest.records[0]
        assert rec.label == "negative_pose"
        assert rec.pose.d_azimuth_deg == pytest.approx(180.0)
        assert rec.weight == pytest.approx(0.5)
        assert rec.activation_path == "a.prsa"

    def test_comments_directives_defaults(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text(
            "# comment\n@split test\n@dataset gso\n\n"
            "source=s target=t label=ground_truth\n"
        )
        manifest = core_io.load_manifest(path)
        assert manifest.split == "test"
        assert manifest.dataset == "gso"
        assert manifest.records[0].weight == 1.0

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "m.txt"
        line = "source=s target=t label=positive\n"
        path.write_text(line + line)
        with pytest.raises(FormatError, match=":2"):
            core_io.load_manifest(path)

    def test_unknown_label_with_line_number(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("source=s target=t label=bogus\n")
        with pytest.raises(FormatError, match=":1"):
            core_io.load_manifest(path)

    def test_weight_out_of_range(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("source=s target=t label=positive weight=1.5\n")
        with pytest.raises(FormatError):
            core_io.load_manifest(path)

    def test_parse_error_line_number(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("source=s target=t label=positive\nnot a record\n")
        with pytest.raises(FormatError, match=":2"):
            core_io.load_manifest(path)

    def test_train_test_object_split(self, tmp_path):
        # standard benchmark split: 32 train objects, 8 test objects
        def lines(count, split, start):
            out = [f"@split {split}"]
            for i in range(count):
                out.append(
                    f"source=obj{start + i}_v0 target=obj{start + i}_v1 label=ground_truth"
                )
            return "\n".join(out) + "\n"

        train_path = tmp_path / "train.txt"
        test_path = tmp_path / "test.txt"
        train_path.write_text(lines(32, "train", 0))
        test_path.write_text(lines(8, "test", 32))
        train = core_io.load_manifest(train_path)
        test = core_io.load_manifest(test_path)
        assert (len(train), train.split) == (32, "train")
        assert (len(test), test.split) == (8, "test")
        sources = {r.source_id for r in train.records} | {r.source_id for r in test.records}
        assert len(sources) == 40

    def test_save_load_roundtrip(self, tmp_path):
        manifest = Manifest(
            records=[
                TripletRecord("s", "t", RelativePose(45.0), "ground_truth", 1.0, "x.prsa"),
                TripletRecord("s", "t2", RelativePose(45.0), "positive", 0.75, "y.prsa"),
            ],
            split="val",
            dataset="toys",
        )
        path = tmp_path / "m.txt"
        core_io.save_manifest(manifest, path)
        back = core_io.load_manifest(path)
        assert back.split == "val"
        assert back.dataset == "toys"
        assert [r.key for r in back.records] == [r.key for r in manifest.records]


class TestValidateManifest:
    def _manifest(self, paths):
        records = [
            TripletRecord(f"s{i}", f"t{i}", RelativePose(), "ground_truth", 1.0, p)
            for i, p in enumerate(paths)
        ]
        return Manifest(records=records)

    def test_all_present(self, tmp_path, rng):
        stack = ActivationStack((rng.standard_normal((2, 2, 3)).astype(np.float32),))
        for name in ("a.prsa", "b.prsa"):
            core_io.write_activation_file(stack, tmp_path / name)
        report = core_io.validate_manifest(self._manifest(["a.prsa", "b.prsa"]), tmp_path)
        assert report.ok
        assert report.checked == 2
        assert report.weight_mean == pytest.approx(1.0)

    def test_one_missing(self, tmp_path, rng):
        stack = ActivationStack((rng.standard_normal((2, 2, 3)).astype(np.float32),))
        core_io.write_activation_file(stack, tmp_path / "a.prsa")
        report = core_io.validate_manifest(self._manifest(["a.prsa", "gone.prsa"]), tmp_path)
        assert len(report.issues) == 1
        assert "gone.prsa" in report.issues[0]

    def test_dimension_mismatch(self, tmp_path):
        core_io.write_embedding_file(
            EmbeddingSet(np.zeros((1, 2048), dtype=np.float32)), tmp_path / "a.prsf"
        )
        core_io.write_embedding_file(
            EmbeddingSet(np.zeros((1, 1024), dtype=np.float32)), tmp_path / "b.prsf"
        )
        report = core_io.validate_manifest(self._manifest(["a.prsf", "b.prsf"]), tmp_path)
        assert len(report.issues) == 1
        assert "mismatch" in report.issues[0]

    def test_shape_mismatch_prsa(self, tmp_path, rng):
        s1 = ActivationStack((rng.standard_normal((2, 2, 3)).astype(np.float32),))
        s2 = ActivationStack((rng.standard_normal((2, 2, 5)).astype(np.float32),))
        core_io.write_activation_file(s1, tmp_path / "a.prsa")
        core_io.write_activation_file(s2, tmp_path / "b.prsa")
        report = core_io.validate_manifest(self._manifest(["a.prsa", "b.prsa"]), tmp_path)
        assert len(report.issues) == 1


class TestTypes:
    def test_unit_norm_flag_enforced(self):
        with pytest.raises(DataError):
            core_io.FeatureVector(np.array([3.0, 4.0], dtype=np.float32), unit_norm=True)
        fv = core_io.FeatureVector(np.array([0.6, 0.8], dtype=np.float32), unit_norm=True)
        assert fv.dim == 2

    def test_embedding_set_role(self):
        with pytest.raises(DataError):
            EmbeddingSet(np.zeros((1, 2), dtype=np.float32), role="bogus")

    def test_activation_stack_validation(self):
        with pytest.raises(DataError):
            ActivationStack(tuple())
        with pytest.raises(DataError):
            ActivationStack((np.zeros((0, 1, 1), dtype=np.float32),))

    def test_triplet_record_validation(self):
        with pytest.raises(DataError):
            TripletRecord("s", "t", RelativePose(), "bogus")
        with pytest.raises(DataError):
            TripletRecord("s", "t", RelativePose(), "positive", weight=2.0)

    def test_manifest_duplicate_detection(self):
        rec = TripletRecord("s", "t", RelativePose(), "positive")
        with pytest.raises(DataError):
            Manifest(records=[rec, rec])
