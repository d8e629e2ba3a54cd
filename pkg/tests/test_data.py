import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbgan.data import (DataError, PpmError, export_dataset, read_ppm,
                        synth_task, write_ppm)


class TestSynth:
    def test_invert_negates(self):
        ds = synth_task("invert", 7, 12)
        for cond, target in ds.pairs:
            assert np.array_equal(target, -cond)

    def test_values_in_range(self):
        for kind in ("invert", "edge_fill", "checker_colorize", "blur_sharpen"):
            ds = synth_task(kind, 3, 10)
            for cond, target in ds.pairs:
                assert cond.min() >= -1.0 and cond.max() <= 1.0
                assert target.min() >= -1.0 and target.max() <= 1.0
                assert cond.shape == target.shape == (32, 32, 3)

    def test_edge_fill_condition_is_binary(self):
        ds = synth_task("edge_fill", 5, 12)
        for cond, _ in ds.pairs:
            frac = np.isin(cond, (-1.0, 1.0)).mean()
            assert frac >= 0.95

    def test_blur_sharpen_smooths(self):
        ds = synth_task("blur_sharpen", 5, 12)
        for cond, target in ds.pairs:
            tv = lambda im: np.abs(np.diff(im, axis=0)).sum() + \
                np.abs(np.diff(im, axis=1)).sum()
            assert tv(cond) <= tv(target) + 1e-9

    def test_deterministic_bitwise(self):
        a = synth_task("checker_colorize", 11, 15)
        b = synth_task("checker_colorize", 11, 15)
        for (ca, ta), (cb, tb) in zip(a.pairs, b.pairs):
            assert ca.tobytes() == cb.tobytes()
            assert ta.tobytes() == tb.tobytes()
        assert a.train_indices == b.train_indices
        assert a.val_indices == b.val_indices

    def test_split_disjoint_tenth(self):
        ds = synth_task("invert", 1, 50)
        assert len(ds.val_indices) == 5
        assert len(ds.train_indices) == 45
        assert not set(ds.val_indices) & set(ds.train_indices)
        assert sorted(ds.val_indices + ds.train_indices) == list(range(50))

    def test_validation(self):
        with pytest.raises(DataError):
            synth_task("invert", 1, 9)
        with pytest.raises(DataError):
            synth_task("mystery", 1, 10)
        with pytest.raises(DataError):
            synth_task("invert", 1, 10, size=64)


class TestPpm:
    def test_quantization_endpoints(self, tmp_path):
        img = np.zeros((1, 3, 3))
        img[0, 0] = -1.0
        img[0, 1] = 0.0
        img[0, 2] = 1.0
        path = tmp_path / "q.ppm"
        write_ppm(img, path)
        blob = path.read_bytes()
        assert blob.startswith(b"P6\n3 1\n255\n")
        assert blob[len(b"P6\n3 1\n255\n"):] == bytes([0, 0, 0, 128, 128, 128,
                                                       255, 255, 255])

    def test_round_trip_idempotent(self, tmp_path):
        rng = np.random.default_rng(4)
        img = rng.uniform(-1, 1, (8, 8, 3))
        p1, p2 = tmp_path / "a.ppm", tmp_path / "b.ppm"
        write_ppm(img, p1)
        once = read_ppm(p1)
        write_ppm(once, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(once, read_ppm(p2))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31), h=st.integers(1, 6), w=st.integers(1, 6))
    def test_second_generation_stable(self, tmp_path_factory, seed, h, w):
        d = tmp_path_factory.mktemp("ppm")
        img = np.random.default_rng(seed).uniform(-1, 1, (h, w, 3))
        write_ppm(img, d / "a.ppm")
        back = read_ppm(d / "a.ppm")
        write_ppm(back, d / "b.ppm")
        assert (d / "a.ppm").read_bytes() == (d / "b.ppm").read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(PpmError):
            read_ppm(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "short.ppm"
        p.write_bytes(b"P6\n2 2\n255\n\x00\x00\x00")
        with pytest.raises(PpmError):
            read_ppm(p)

    def test_bad_maxval(self, tmp_path):
        p = tmp_path / "mv.ppm"
        p.write_bytes(b"P6\n1 1\n65535\n" + b"\x00" * 6)
        with pytest.raises(PpmError):
            read_ppm(p)

    def test_shape_validation(self, tmp_path):
        with pytest.raises(PpmError):
            write_ppm(np.zeros((4, 4)), tmp_path / "x.ppm")


class TestExport:
    def test_layout(self, tmp_path):
        ds = synth_task("invert", 2, 10)
        export_dataset(ds, tmp_path)
        for split, idxs in (("train", ds.train_indices),
                            ("val", ds.val_indices)):
            for i in idxs:
                for tag in ("cond", "target"):
                    f = tmp_path / "invert" / split / f"{i:04d}_{tag}.ppm"
                    assert f.exists()
        i = ds.val_indices[0]
        back = read_ppm(tmp_path / "invert" / "val" / f"{i:04d}_cond.ppm")
        assert np.abs(back - ds.pairs[i][0]).max() <= 1.0 / 127.5
