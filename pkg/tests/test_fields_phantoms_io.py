import numpy as np
import pytest

from brokenray.errors import (
    ConfigError,
    CorruptHeaderError,
    FormatVersionError,
    SupportViolationError,
)
from brokenray.fields import ScalarGridField, grid_for_domain
from brokenray.io import (
    load_domain,
    load_field,
    load_sinogram,
    load_sinogram_binary,
    save_domain,
    save_field,
    save_sinogram,
    save_sinogram_binary,
)
from brokenray.phantoms import PhantomSpec, Primitive, render
from brokenray.transport import BrokenRayOperator, SamplingSpec, Sinogram


class TestScalarGridField:
    def test_centers_and_box(self):
        f = ScalarGridField.zeros([0, 0], [0.5, 0.25], (2, 4))
        lo, hi = f.box
        assert np.allclose(lo, [0, 0]) and np.allclose(hi, [1, 1])
        assert np.allclose(f.axis_centers(0), [0.25, 0.75])

    def test_interp_constant(self, rng):
        f = ScalarGridField.zeros([0, 0], 1 / 8, (8, 8))
        f.values[...] = 3.5
        pts = rng.uniform(0.01, 0.99, (50, 2))
        assert np.allclose(f.interpolate(pts), 3.5)
        # zero outside the box
        assert f.interpolate([[2.0, 0.5]])[0] == 0.0

    def test_interp_linear_exact(self):
        f = ScalarGridField.from_function([0, 0], 1 / 16, (16, 16),
                                          lambda p: 2 * p[:, 0] - 3 * p[:, 1] + 1)
        pts = np.array([[0.4, 0.6], [0.21, 0.77], [0.5, 0.5]])
        expect = 2 * pts[:, 0] - 3 * pts[:, 1] + 1
        assert np.allclose(f.interpolate(pts), expect, atol=1e-12)

    def test_validation(self):
        with pytest.raises(ConfigError):
            ScalarGridField([0, 0], [0.1, -0.1], np.zeros((4, 4)))
        with pytest.raises(ConfigError):
            ScalarGridField([0, 0], 0.1, np.full((4, 4), np.nan))
        with pytest.raises(ConfigError):
            ScalarGridField([0, 0], 0.1, np.zeros((1, 4)))

    def test_norm_and_inner(self):
        f = ScalarGridField.zeros([0, 0], 1 / 8, (8, 8))
        f.values[...] = 2.0
        assert f.l2_norm() == pytest.approx(2.0)
        assert f.inner(f) == pytest.approx(4.0)


class TestPhantoms:
    def test_empty_spec_background(self):
        g = ScalarGridField.zeros([0, 0], 1 / 8, (8, 8))
        out = render(PhantomSpec(background=0.7), g)
        assert np.all(out.values == 0.7)

    def test_box_volume_count(self):
        g = ScalarGridField.zeros([0, 0], 1 / 64, (64, 64))
        spec = PhantomSpec([Primitive("box", (0.5, 0.5), (0.25, 0.25), 1.0)])
        out = render(spec, g)
        count = int(np.sum(out.values > 0.5))
        # quarter of the area, up to one boundary cell ring
        assert abs(count - 0.25 * 64 * 64) <= 4 * 64

    def test_bump_max_at_center(self):
        g = ScalarGridField.zeros([0, 0], 1 / 33, (33, 33))
        spec = PhantomSpec([Primitive("bump", (0.5, 0.5), (0.3, 0.3), 2.0)])
        out = render(spec, g)
        assert out.values.max() == pytest.approx(2.0, rel=1e-2)

    def test_support_violation(self):
        g = ScalarGridField.zeros([0, 0], 1 / 32, (32, 32))
        spec = PhantomSpec([Primitive("box", (0.8, 0.8), (0.15, 0.15), 1.0)],
                           support_lo=(0.25, 0.25), support_hi=(0.75, 0.75))
        with pytest.raises(SupportViolationError):
            render(spec, g)

    def test_spec_roundtrip(self):
        spec = PhantomSpec([Primitive("ellipsoid", (0.4, 0.6), (0.1, 0.2), 0.5, 0.2)],
                           background=0.1, support_lo=(0, 0), support_hi=(1, 1))
        spec2 = PhantomSpec.from_dict(spec.to_dict())
        assert spec2.primitives[0] == spec.primitives[0]
        assert spec2.background == spec.background


class TestFieldIO(object):
    def test_roundtrip_bitexact(self, tmp_path, rng):
        f = ScalarGridField([0.1, -0.2], [0.03, 0.07], rng.standard_normal((9, 13)))
        p = tmp_path / "field.bin"
        save_field(p, f)
        g = load_field(p)
        assert g.values.tobytes() == f.values.tobytes()
        assert np.allclose(g.origin, f.origin)
        assert np.allclose(g.spacing, f.spacing)
        assert g.mode == f.mode

    def test_truncated_raises(self, tmp_path, rng):
        f = ScalarGridField([0, 0], 0.1, rng.standard_normal((8, 8)))
        p = tmp_path / "field.bin"
        save_field(p, f)
        data = p.read_bytes()
        p.write_bytes(data[:-16])
        with pytest.raises(CorruptHeaderError):
            load_field(p)

    def test_version_mismatch(self, tmp_path, rng):
        f = ScalarGridField([0, 0], 0.1, rng.standard_normal((4, 4)))
        p = tmp_path / "field.bin"
        save_field(p, f)
        data = p.read_bytes().replace(b"brokenray-field 1", b"brokenray-field 9", 1)
        p.write_bytes(data)
        with pytest.raises(FormatVersionError):
            load_field(p)

    def test_garbage_raises(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"not a field at all\n")
        with pytest.raises(CorruptHeaderError):
            load_field(p)


class TestSinogramIO:
    @pytest.fixture()
    def sino(self, small_op, rng):
        g = grid_for_domain(small_op.domain, 32)
        f = g.like(rng.standard_normal(g.dims))
        return small_op.forward(f)

    def test_csv_roundtrip(self, tmp_path, sino):
        p = tmp_path / "sino.csv"
        save_sinogram(p, sino)
        s2 = load_sinogram(p)
        assert s2.n_rays == sino.n_rays
        assert np.allclose(s2.values, sino.values, rtol=0, atol=1e-15 * np.abs(sino.values).max())
        assert np.allclose(s2.x, sino.x, atol=1e-14)
        assert np.allclose(s2.theta, sino.theta, atol=1e-14)
        assert np.allclose(s2.weight, sino.weight, rtol=1e-15)

    def test_binary_roundtrip(self, tmp_path, sino):
        p = tmp_path / "sino.bin"
        save_sinogram_binary(p, sino)
        s2 = load_sinogram_binary(p)
        assert np.array_equal(s2.facet, sino.facet)
        assert np.allclose(s2.values, sino.values, rtol=0, atol=0)
        assert np.allclose(s2.theta, sino.theta, atol=1e-15)

    def test_truncated_binary(self, tmp_path, sino):
        p = tmp_path / "sino.bin"
        save_sinogram_binary(p, sino)
        p.write_bytes(p.read_bytes()[:-64])
        with pytest.raises(CorruptHeaderError):
            load_sinogram_binary(p)


def test_domain_file_roundtrip(tmp_path, cube_slab):
    p = tmp_path / "dom.json"
    save_domain(p, cube_slab)
    d2 = load_domain(p)
    assert np.allclose(d2.normals, cube_slab.normals)
    assert d2.masks.keys() == cube_slab.masks.keys()


def test_3d_sinogram_roundtrip(tmp_path, cube3, rng):
    grid = grid_for_domain(cube3, 16)
    op = BrokenRayOperator(cube3, grid, sampling=SamplingSpec(6, (4, 8)), n_max=4)
    f = grid.like(rng.standard_normal(grid.dims))
    sino = op.forward(f)
    p = tmp_path / "sino3.csv"
    save_sinogram(p, sino)
    s2 = load_sinogram(p)
    assert np.allclose(s2.theta, sino.theta, atol=1e-14)
    assert np.allclose(s2.values, sino.values, atol=1e-15 * max(np.abs(sino.values).max(), 1))
