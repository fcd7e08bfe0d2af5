import numpy as np
import pytest

from waapo.errors import GridFormatError
from waapo.grid import GridShape, SpatialMask, StateGrid, total_variation
from waapo.gridfile import (
    load_grid,
    load_mask,
    load_model,
    read_header,
    save_grid,
    save_mask,
    save_model,
)
from waapo.metrics import DiffMap
from waapo.raster import render_diffmap
from waapo.rng import STREAM_INITIAL, STREAM_TARGET, philox_stream
from waapo.surrogate import SurrogateModel, step
from waapo.synthetic import gen_synthetic_initial


def random_state(shape, seed):
    rng = np.random.default_rng(seed)
    return StateGrid(rng.standard_normal(shape.as_tuple()))


class TestGridFile:
    def test_f64_roundtrip_bitwise(self, tmp_path):
        g = random_state(GridShape(8, 8, 2), 0)
        p = tmp_path / "g.grd"
        save_grid(p, g, ["a", "b"])
        loaded, names = load_grid(p)
        assert names == ("a", "b")
        assert np.array_equal(loaded.values, g.values)
        assert loaded.values.tobytes() == g.values.tobytes()

    def test_f32_quantization_contract(self, tmp_path):
        g = random_state(GridShape(4, 4, 2), 1)
        p = tmp_path / "g32.grd"
        save_grid(p, g, ["a", "b"], dtype="f32")
        loaded, _ = load_grid(p)
        np.testing.assert_array_equal(loaded.values, g.values.astype(np.float32).astype(np.float64))

    def test_payload_length_f32(self, tmp_path):
        g = StateGrid.zeros(GridShape(32, 64, 4))
        p = tmp_path / "desk.grd"
        save_grid(p, g, ["t2m", "u10", "v10", "sp"], dtype="f32")
        h = read_header(p)
        assert h.payload_bytes == 32 * 64 * 4 * 4 == 32768
        assert h.dtype == "f32" and (h.lat, h.lon, h.channels) == (32, 64, 4)

    def test_bad_magic_rejected(self, tmp_path):
        g = StateGrid.zeros(GridShape(2, 2, 1))
        p = tmp_path / "bad.grd"
        save_grid(p, g, ["x"])
        raw = bytearray(p.read_bytes())
        raw[:8] = b"XXXXXXXX"
        p.write_bytes(bytes(raw))
        with pytest.raises(GridFormatError):
            load_grid(p)

    def test_truncated_payload_cites_byte_counts(self, tmp_path):
        g = StateGrid.zeros(GridShape(2, 2, 1))
        p = tmp_path / "short.grd"
        save_grid(p, g, ["x"])
        raw = p.read_bytes()
        p.write_bytes(raw[:-1])
        with pytest.raises(GridFormatError) as exc:
            load_grid(p)
        msg = str(exc.value)
        assert "31" in msg and "32" in msg  # 2*2*1*8 = 32 expected, 31 actual

    def test_trailing_bytes_rejected(self, tmp_path):
        g = StateGrid.zeros(GridShape(2, 2, 1))
        p = tmp_path / "long.grd"
        save_grid(p, g, ["x"])
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(GridFormatError):
            load_grid(p)

    def test_channel_name_count_enforced(self, tmp_path):
        g = StateGrid.zeros(GridShape(2, 2, 2))
        with pytest.raises(Exception):
            save_grid(tmp_path / "n.grd", g, ["only-one"])

    def test_unicode_channel_names(self, tmp_path):
        g = StateGrid.zeros(GridShape(2, 2, 1))
        p = tmp_path / "u.grd"
        save_grid(p, g, ["température"])
        _, names = load_grid(p)
        assert names == ("température",)

    def test_mask_roundtrip(self, tmp_path):
        m = SpatialMask(np.random.default_rng(3).uniform(0, 1, (4, 6)))
        p = tmp_path / "m.grd"
        save_mask(p, m)
        loaded = load_mask(p)
        assert np.array_equal(loaded.values, m.values)

    def test_model_roundtrip(self, tmp_path):
        model = SurrogateModel.from_seed(GridShape(4, 6, 3), 11)
        save_model(tmp_path / "model", model)
        loaded = load_model(tmp_path / "model")
        assert np.array_equal(loaded.coupling_matrix, model.coupling_matrix)
        assert loaded.advection_shift == model.advection_shift
        assert loaded.shape == model.shape
        z = random_state(GridShape(4, 6, 3), 4)
        assert np.array_equal(step(loaded, z).values, step(model, z).values)


class TestRaster:
    def test_zero_map_uniform_mid(self, tmp_path):
        p = tmp_path / "zero.ppm"
        render_diffmap(DiffMap(np.zeros((3, 4)), "zero"), p)
        data = p.read_bytes()
        header, pixels = data.split(b"\n255\n", 1)
        assert header == b"P6\n4 3"
        assert pixels == bytes([255, 255, 255]) * 12

    def test_single_positive_cell(self, tmp_path):
        v = np.zeros((2, 2))
        v[0, 1] = 3.5
        p = tmp_path / "one.ppm"
        render_diffmap(DiffMap(v, "one"), p)
        pixels = p.read_bytes().split(b"\n255\n", 1)[1]
        rgb = np.frombuffer(pixels, dtype=np.uint8).reshape(2, 2, 3)
        non_mid = [(i, j) for i in range(2) for j in range(2) if tuple(rgb[i, j]) != (255, 255, 255)]
        assert non_mid == [(0, 1)]
        assert rgb[0, 1, 0] == 255 and rgb[0, 1, 2] < 255  # red side

    def test_ppm_header_arithmetic(self, tmp_path):
        v = np.array([[1.0, -1.0], [0.5, -0.5]])
        p = tmp_path / "two.ppm"
        render_diffmap(DiffMap(v, "two"), p)
        data = p.read_bytes()
        assert data.startswith(b"P6\n2 2\n255\n")
        assert len(data) == len(b"P6\n2 2\n255\n") + 12

    def test_pgm_gray(self, tmp_path):
        p = tmp_path / "g.pgm"
        render_diffmap(DiffMap(np.zeros((2, 3)), "z"), p, palette="gray")
        data = p.read_bytes()
        assert data.startswith(b"P5\n3 2\n255\n")
        assert data.split(b"\n255\n", 1)[1] == bytes([128]) * 6

    def test_negative_is_blue(self, tmp_path):
        v = np.zeros((1, 2))
        v[0, 0] = -2.0
        v[0, 1] = 2.0
        p = tmp_path / "pm.ppm"
        render_diffmap(DiffMap(v, "pm"), p, clip_quantile=1.0)
        rgb = np.frombuffer(p.read_bytes().split(b"\n255\n", 1)[1], dtype=np.uint8).reshape(1, 2, 3)
        assert tuple(rgb[0, 0]) == (0, 0, 255)
        assert tuple(rgb[0, 1]) == (255, 0, 0)

    def test_bad_palette(self, tmp_path):
        with pytest.raises(ValueError):
            render_diffmap(DiffMap(np.zeros((2, 2)), "x"), tmp_path / "x.ppm", palette="jet")


class TestSynthetic:
    def test_deterministic(self):
        shape = GridShape(8, 16, 3)
        a = gen_synthetic_initial(shape, 42)
        b = gen_synthetic_initial(shape, 42)
        assert np.array_equal(a.values, b.values)

    def test_streams_independent(self):
        shape = GridShape(8, 16, 3)
        a = gen_synthetic_initial(shape, 42, stream=STREAM_INITIAL)
        b = gen_synthetic_initial(shape, 42, stream=STREAM_TARGET)
        assert not np.array_equal(a.values, b.values)

    def test_normalization(self):
        g = gen_synthetic_initial(GridShape(16, 32, 4), 7)
        means = g.values.mean(axis=(0, 1))
        stds = g.values.std(axis=(0, 1))
        assert np.all(np.abs(means) < 1e-9)
        np.testing.assert_allclose(stds, 1.0, rtol=1e-9)

    def test_smoothing_reduces_tv(self):
        shape = GridShape(16, 32, 2)
        smooth = gen_synthetic_initial(shape, 9)
        raw = philox_stream(9, STREAM_INITIAL).standard_normal(shape.as_tuple())
        raw = (raw - raw.mean(axis=(0, 1))) / raw.std(axis=(0, 1))
        rough = StateGrid(raw)
        for n in range(2):
            assert total_variation(smooth, n) < total_variation(rough, n)

    def test_zonal_bands(self):
        shape = GridShape(16, 32, 2)
        a = gen_synthetic_initial(shape, 3, style="zonal-bands")
        b = gen_synthetic_initial(shape, 3, style="zonal-bands")
        assert np.array_equal(a.values, b.values)
        # banded structure: variance along latitude dwarfs variance along longitude
        lon_var = a.values.var(axis=1).mean()
        lat_var = a.values.var(axis=0).mean()
        assert lat_var > 5 * lon_var

    def test_unknown_style(self):
        with pytest.raises(ValueError):
            gen_synthetic_initial(GridShape(4, 4, 1), 0, style="perlin")
