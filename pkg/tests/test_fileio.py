import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluctdecon import EmitterSet, FormatError, FrameStack, ParameterError
from fluctdecon.fileio import (
    ExperimentManifest,
    STACK_HEADER_BYTES,
    load_array,
    read_emitters,
    read_image_view,
    read_manifest,
    read_metrics_record,
    read_stack,
    save_array,
    write_emitters,
    write_image_view,
    write_manifest,
    write_metrics_record,
    write_stack,
)


class TestStackFormat:
    @given(seed=st.integers(0, 50))
    @settings(max_examples=10)
    def test_round_trip_bit_identical(self, seed, tmp_path_factory):
        rng = np.random.default_rng(seed)
        frames = rng.standard_normal((3, 5, 7)).astype(np.float32)
        stack = FrameStack(frames=frames, pixel_size_nm=25.0, fwhm_nm=176.6)
        path = str(tmp_path_factory.mktemp("stk") / "s.flk")
        write_stack(path, stack)
        back = read_stack(path)
        assert np.array_equal(back.frames, stack.frames)
        assert back.pixel_size_nm == 25.0 and back.fwhm_nm == 176.6

    def test_header_is_36_bytes_and_size_formula(self, tmp_path):
        assert STACK_HEADER_BYTES == 36
        frames = np.zeros((4, 6, 6), np.float32)
        path = str(tmp_path / "s.flk")
        write_stack(path, FrameStack(frames=frames, pixel_size_nm=10.0))
        assert os.path.getsize(path) == 36 + 4 * 6 * 6 * 4

    def test_paper_sized_stack_file_size(self, tmp_path):
        # 500 frames of 256 x 256: header + T*h*w f32 samples
        frames = np.zeros((500, 256, 256), np.float32)
        stack = FrameStack(frames=frames, pixel_size_nm=25.0, fwhm_nm=176.6)
        path = str(tmp_path / "big.flk")
        write_stack(path, stack)
        assert os.path.getsize(path) == 36 + 500 * 256 * 256 * 4
        os.unlink(path)

    def test_bad_magic_names_offset(self, tmp_path):
        path = str(tmp_path / "bad.flk")
        with open(path, "wb") as fh:
            fh.write(b"JUNK" + bytes(60))
        with pytest.raises(FormatError, match="offset 0"):
            read_stack(path)

    def test_truncated_file(self, tmp_path):
        frames = np.zeros((2, 4, 4), np.float32)
        path = str(tmp_path / "t.flk")
        write_stack(path, FrameStack(frames=frames, pixel_size_nm=10.0))
        data = open(path, "rb").read()
        with open(path, "wb") as fh:
            fh.write(data[:-7])
        with pytest.raises(FormatError, match="payload"):
            read_stack(path)

    def test_implausible_shape_rejected(self, tmp_path):
        import struct

        path = str(tmp_path / "o.flk")
        header = struct.pack("<4sIIIIdd", b"FLK1", 1, 0, 4, 4, 10.0, float("nan"))
        with open(path, "wb") as fh:
            fh.write(header)
        with pytest.raises(FormatError, match="implausible"):
            read_stack(path)


class TestImageView:
    def test_round_trip_quantization_bound(self, tmp_path, rng):
        img = rng.random((12, 12)) * 5 + 1
        path = str(tmp_path / "v.pgm")
        write_image_view(path, img)
        back, sidecar = read_image_view(path)
        span = img.max() - img.min()
        assert np.abs(back - img).max() <= span / 65535.0
        assert sidecar["scaling"] == "minmax"

    def test_constant_image_is_mid_gray(self, tmp_path):
        path = str(tmp_path / "c.pgm")
        write_image_view(path, np.full((4, 4), 2.5))
        raw = open(path, "rb").read()
        codes = np.frombuffer(raw.split(b"\n", 3)[3], dtype=">u2")
        assert np.all(codes == 32768)

    def test_binary_mask_black_and_white(self, tmp_path):
        mask = np.zeros((6, 6))
        mask[2, 3] = 1.0
        path = str(tmp_path / "m.pgm")
        write_image_view(path, mask)
        raw = open(path, "rb").read()
        codes = np.frombuffer(raw.split(b"\n", 3)[3], dtype=">u2")
        assert set(codes.tolist()) == {0, 65535}

    def test_fixed_scaling(self, tmp_path):
        img = np.array([[0.0, 0.5], [1.0, 2.0]])
        path = str(tmp_path / "f.pgm")
        write_image_view(path, img, scaling="fixed", value_range=(0.0, 1.0))
        back, sidecar = read_image_view(path)
        assert sidecar["hi"] == 1.0
        assert back.max() <= 1.0  # clipped at the range top


class TestEmitterFiles:
    def test_round_trip_exact(self, tmp_path, rng):
        emitters = EmitterSet(positions=rng.uniform(10, 900, (25, 2)), field_size_nm=1000.0)
        path = str(tmp_path / "e.txt")
        write_emitters(path, emitters)
        back = read_emitters(path)
        assert np.array_equal(back.positions, emitters.positions)
        assert back.field_size_nm == 1000.0

    def test_missing_header_rejected(self, tmp_path):
        path = str(tmp_path / "b.txt")
        with open(path, "w") as fh:
            fh.write("1.0,2.0\n")
        with pytest.raises(FormatError):
            read_emitters(path)


class TestArrays:
    def test_save_load_exact(self, tmp_path, rng):
        arr = rng.standard_normal((9, 9))
        path = str(tmp_path / "a.npy")
        save_array(path, arr)
        assert np.array_equal(load_array(path), arr)


class TestManifest:
    def test_round_trip(self, tmp_path):
        manifest = ExperimentManifest(name="t", seed=7, noise_variance_s=16.0)
        path = str(tmp_path / "m.json")
        write_manifest(path, manifest)
        assert read_manifest(path) == manifest

    def test_unknown_field_rejected(self, tmp_path):
        path = str(tmp_path / "m.json")
        with open(path, "w") as fh:
            json.dump({"name": "x", "bogus_field": 1}, fh)
        with pytest.raises(ParameterError, match="bogus_field"):
            read_manifest(path)

    def test_invalid_json_is_format_error(self, tmp_path):
        path = str(tmp_path / "m.json")
        with open(path, "w") as fh:
            fh.write("{not json")
        with pytest.raises(FormatError):
            read_manifest(path)

    def test_metrics_record_round_trip(self, tmp_path):
        path = str(tmp_path / "r.json")
        write_metrics_record(path, {"ji": np.float64(0.5), "cd": np.int64(3)})
        assert read_metrics_record(path) == {"ji": 0.5, "cd": 3}
