import numpy as np
import pytest

from brokenray.billiards import trace_broken_ray
from brokenray.errors import (
    IrregularInSupportError,
    SamplingMismatchError,
    SequenceMismatchError,
)
from brokenray.fields import ScalarGridField, grid_for_domain
from brokenray.geometry import BoundaryJet, unit_square
from brokenray.transport import (
    BrokenRayOperator,
    CutoffSpec,
    SamplingSpec,
    attenuation_weight,
    line_integral,
    make_boundary_sampling,
    smoothstep,
)
from brokenray.unfolding import unfold_ray

SQRT2 = np.sqrt(2.0)


class TestLineIntegral:
    def test_constant_diagonal(self, square_left):
        g = grid_for_domain(square_left, 32)
        f = g.like(np.ones(g.dims))
        v = line_integral(f, [0, 0.25], [SQRT2 / 2, SQRT2 / 2], 0, 0.75 * SQRT2)
        assert v == pytest.approx(0.75 * SQRT2, rel=1e-12)

    def test_indicator_nearest(self, square_left):
        g = grid_for_domain(square_left, 64)
        cc = g.cell_centers()
        ind = np.all(np.abs(cc - 0.5) <= 0.25, axis=1).astype(float)
        f = g.like(ind.reshape(g.dims), mode="nearest")
        v = line_integral(f, [0, 0.5], [1, 0], 0, 1.0)
        assert v == pytest.approx(0.5, abs=1e-12)

    def test_gaussian_against_dense_simpson(self, square_left):
        g = grid_for_domain(square_left, 96)
        cc = g.cell_centers()
        vals = np.exp(-((cc[:, 0] - 0.45) ** 2 / 0.02 + (cc[:, 1] - 0.55) ** 2 / 0.03))
        f = g.like(vals.reshape(g.dims))
        p = np.array([0.0, 0.2])
        th = np.array([0.8, 0.6])
        t1 = 1.1
        # oracle: dense composite Simpson on the same interpolant
        n = 200_001
        ts = np.linspace(0, t1, n)
        fv = f.interpolate(p[None, :] + ts[:, None] * th[None, :])
        w = np.ones(n)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        oracle = float((ts[1] - ts[0]) / 3 * np.sum(w * fv))
        v = line_integral(f, p, th, 0, t1, step=5e-4)
        assert v == pytest.approx(oracle, rel=1e-6)
        # default half-cell step stays within second-order accuracy
        assert line_integral(f, p, th, 0, t1) == pytest.approx(oracle, rel=1e-4)

    def test_degenerate_interval(self, square_left):
        g = grid_for_domain(square_left, 16)
        f = g.like(np.ones(g.dims))
        assert line_integral(f, [0.5, 0.5], [1, 0], 0.3, 0.3) == 0.0


class TestAttenuationWeight:
    @pytest.fixture()
    def ray45(self, square_left):
        jet = BoundaryJet.make(square_left, [0, 0.25], [SQRT2 / 2, SQRT2 / 2])
        return trace_broken_ray(square_left, jet, n_max=5)

    def test_no_attenuation(self, ray45):
        assert attenuation_weight(None, ray45, 2, 0.1) == 1.0

    def test_constant_sigma_first_segment(self, square_left, ray45):
        g = grid_for_domain(square_left, 64)
        sig = g.like(np.full(g.dims, 0.8))
        t = 0.3
        w = attenuation_weight(sig, ray45, 0, t)
        assert w == pytest.approx(np.exp(-0.8 * t), rel=1e-10)

    def test_constant_sigma_second_segment(self, square_left, ray45):
        g = grid_for_domain(square_left, 64)
        sig = g.like(np.ones(g.dims))
        w = attenuation_weight(sig, ray45, 1, 0.0)
        assert w == pytest.approx(np.exp(-0.75 * SQRT2), rel=1e-10)

    def test_in_unit_interval(self, square_left, ray45, rng):
        g = grid_for_domain(square_left, 32)
        sig = g.like(np.abs(rng.standard_normal(g.dims)))
        for _ in range(10):
            j = int(rng.integers(0, ray45.n_segments))
            t = rng.uniform(0, ray45.seg_len[j])
            w = attenuation_weight(sig, ray45, j, t)
            assert 0 < w <= 1.0


class TestSampling:
    def test_total_weight_2d(self, square3):
        samp = make_boundary_sampling(square3, SamplingSpec(48, 48))
        # integral of |nu.theta| over the inward half-circle is 2 per unit length
        assert samp.total_weight() == pytest.approx(2.0 * 3, rel=2e-3)

    def test_total_weight_3d(self, cube3):
        samp = make_boundary_sampling(cube3, SamplingSpec(12, (8, 32)))
        # pi per unit area per facet
        assert samp.total_weight() == pytest.approx(np.pi * 3, rel=2e-3)

    def test_masked_positions_excluded(self, cube_slab):
        samp = make_boundary_sampling(cube_slab, SamplingSpec(10, (4, 8)))
        # no sample position above the mask plane
        assert np.all(samp.x[:, 2] <= 0.9 + 1e-12)

    def test_interpolation_reproduces_nodes(self, square3, rng):
        samp = make_boundary_sampling(square3, SamplingSpec(16, 16))
        vals = rng.standard_normal(samp.n_rays)
        out = samp.interpolate(vals, samp.x, samp.theta, samp.facet)
        assert np.allclose(out, vals, atol=1e-12)


class TestForwardOperator:
    def test_total_length_diagonal(self, square_left):
        # alpha == 1, sigma = 0, f == 1: the value is the total ray length
        grid = grid_for_domain(square_left, 64)
        f1 = grid.like(np.ones(grid.dims))
        op = BrokenRayOperator(square_left, grid, sampling=SamplingSpec(16, 16), n_max=6)
        vals = op.forward_values(f1)
        # compare each active ray value to its traced length
        act = np.nonzero(op.active)[0]
        for r in act[:: max(1, len(act) // 60)]:
            jet = BoundaryJet(tuple(op.sampling.x[r]), tuple(op.sampling.theta[r]),
                              int(op.sampling.facet[r]))
            ray = trace_broken_ray(square_left, jet, 6)
            assert vals[r] == pytest.approx(ray.total_length, rel=1e-9)

    def test_attenuated_chord_closed_form(self):
        dom = unit_square(measure_facets=(0, 1))
        grid = grid_for_domain(dom, 64)
        c = 0.9
        sig = grid.like(np.full(grid.dims, c))
        f1 = grid.like(np.ones(grid.dims))
        op = BrokenRayOperator(dom, grid, sigma=sig, sampling=SamplingSpec(16, 32), n_max=0)
        vals = op.forward_values(f1)
        act = np.nonzero(op.active)[0]
        for r in act:
            t, _ = dom.exit_time(op.sampling.x[r], op.sampling.theta[r])
            assert vals[r] == pytest.approx((1 - np.exp(-c * t)) / c, rel=2e-5)

    def test_disjoint_support_zero(self, small_op):
        grid = small_op.grid
        cc = grid.cell_centers()
        # support sits in a corner pocket missed by a fat beam cutoff
        f = grid.like((np.linalg.norm(cc - [0.5, 0.5], axis=1) < 1e-9).astype(float).reshape(grid.dims))
        vals = small_op.forward_values(f)
        misses = []
        for r in np.nonzero(small_op.active)[0]:
            jet = BoundaryJet(tuple(small_op.sampling.x[r]),
                              tuple(small_op.sampling.theta[r]),
                              int(small_op.sampling.facet[r]))
            ray = trace_broken_ray(small_op.domain, jet, small_op.n_max)
            dmin = min(np.min(np.linalg.norm(
                ray.seg_start[k] + np.linspace(0, 1, 32)[:, None] * ray.seg_len[k] * ray.seg_dir[k]
                - [0.5, 0.5], axis=1)) for k in range(ray.n_segments))
            if dmin > 0.1:
                misses.append(r)
        assert misses
        assert np.allclose(vals[misses], 0.0)

    def test_linearity(self, small_op, rng):
        grid = small_op.grid
        f = grid.like(rng.standard_normal(grid.dims))
        g = grid.like(rng.standard_normal(grid.dims))
        lhs = small_op.forward_values(f + g)
        rhs = small_op.forward_values(f) + small_op.forward_values(g)
        assert np.allclose(lhs, rhs, atol=1e-12 * max(1, np.abs(rhs).max()))

    def test_unfolded_equivalence(self, square3, rng):
        """Forward value equals the straight-line integral of the pulled-back
        field along the unfolded ray."""
        from brokenray.checks import random_regular_rays
        grid = grid_for_domain(square3, 64)
        cc = grid.cell_centers()
        f = grid.like(np.exp(-20 * np.sum((cc - [0.5, 0.55]) ** 2, axis=1)).reshape(grid.dims))
        for ray in random_regular_rays(square3, 12, 6, rng):
            direct = sum(line_integral(f, ray.seg_start[k], ray.seg_dir[k],
                                       0, float(ray.seg_len[k]), step=1e-3)
                         for k in range(ray.n_segments))
            u = unfold_ray(square3, ray)
            # integrate along the unfolded line, pulling each point back
            n = max(2, int(np.ceil(u.length / 1e-3)))
            ts = (np.arange(n) + 0.5) * (u.length / n)
            pts = u.start[None, :] + ts[:, None] * u.direction[None, :]
            cuts = np.concatenate([[0.0], np.cumsum(ray.seg_len)])
            total = 0.0
            for j in range(ray.n_segments):
                sel = (ts >= cuts[j]) & (ts < cuts[j + 1])
                back = u.seg_maps[j].inverse().apply(pts[sel])
                total += float(np.sum(f.interpolate(back))) * (u.length / n)
            assert total == pytest.approx(direct, rel=2e-6, abs=1e-9)

    def test_sampling_mismatch(self, small_op, rng):
        with pytest.raises(SamplingMismatchError):
            small_op.adjoint_values(rng.standard_normal(small_op.plan.n_rays + 1))


class TestCutoffs:
    def test_smoothstep_endpoints(self):
        assert smoothstep(0.0) == 0.0
        assert smoothstep(1.0) == 1.0
        ts = np.linspace(0, 1, 11)
        s = smoothstep(ts)
        assert np.all(np.diff(s) >= 0)

    def test_cutoff_plateau_and_support(self):
        spec = CutoffSpec((0, 0.5), (1, 0), radius_x=0.2, radius_theta=0.3,
                          transition=0.4)
        x = np.array([[0, 0.5], [0, 0.65], [0, 0.75]])
        th = np.tile([1.0, 0.0], (3, 1))
        v = spec(x, th)
        assert v[0] == 1.0          # inside the shrunk plateau
        assert 0.0 < v[1] < 1.0     # transition band
        assert v[2] == 0.0          # outside support

    def test_binary_mode(self):
        spec = CutoffSpec((0, 0.5), (1, 0), 0.2, 0.3, mode="binary")
        v = spec(np.array([[0, 0.55], [0, 0.75]]), np.tile([1.0, 0], (2, 1)))
        assert list(v) == [1.0, 0.0]

    def test_irregular_in_support_raises(self, square_left):
        grid = grid_for_domain(square_left, 16)
        # wide beam spilling onto corner-grazing rays
        bad = CutoffSpec((0, 0.5), (1, 0), radius_x=0.55, radius_theta=1.5)
        with pytest.raises(IrregularInSupportError):
            BrokenRayOperator(square_left, grid, alpha=bad,
                              sampling=SamplingSpec(32, 32), n_max=2)

    def test_sequence_mismatch_raises(self, square_left):
        grid = grid_for_domain(square_left, 16)
        # narrow position range but angular range mixing 0- and 1-bounce paths
        mixed = CutoffSpec((0, 0.5), (1, 0), radius_x=0.05, radius_theta=0.9,
                           transition=0.2)
        with pytest.raises((SequenceMismatchError, IrregularInSupportError)):
            BrokenRayOperator(square_left, grid, alpha=mixed,
                              sampling=SamplingSpec(48, 48), n_max=6)

    def test_valid_beam_accepted(self, square_left):
        grid = grid_for_domain(square_left, 16)
        ok = CutoffSpec((0, 0.5), (1, 0), radius_x=0.15, radius_theta=0.12,
                        transition=0.5)
        op = BrokenRayOperator(square_left, grid, alpha=ok,
                               sampling=SamplingSpec(48, 96), n_max=3)
        sup = op.alpha_values > 0
        assert sup.any()
        assert len(np.unique(op.plan.group_of_ray[sup])) == 1

    def test_cutoff_groups_cover_alpha_one(self, small_op):
        # facet-sequence grouping partitions the active set
        gids = small_op.plan.group_of_ray[small_op.active]
        assert (gids >= 0).all()
        assert small_op.plan.n_groups >= len(np.unique(gids))
