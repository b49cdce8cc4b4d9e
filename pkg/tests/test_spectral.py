import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from obdk.spectral import (FlowState, GridError, ModelParams, create_grid, curl_tensor, div3,
                           div_tensor, divergence, full_to_sym, gradient, inner, l2_norm_physical,
                           l2_norm_spectral, lambda_power, leray_project, lp_norm_physical,
                           random_state, sym_to_full, to_physical, to_spectral, tri_weights)


@pytest.fixture(scope="module", params=[(2, 32, 2 * math.pi * 2), (3, 16, 2 * math.pi)])
def grid(request):
    return create_grid(*request.param)


class TestGrid:
    def test_k_min(self):
        g = create_grid(2, 64, 64 * math.pi)
        assert g.k_min == pytest.approx(1 / 32)

    @pytest.mark.parametrize("n", [7, 0, -2])
    def test_bad_n(self, n):
        with pytest.raises(GridError):
            create_grid(2, n, 1.0)

    def test_bad_dim(self):
        with pytest.raises(GridError):
            create_grid(4, 8, 1.0)

    def test_shapes(self, grid):
        assert grid.spec_shape[-1] == grid.n // 2 + 1
        assert grid.xi_vec.shape == (grid.dim,) + grid.spec_shape

    def test_dealias_cutoff(self):
        g = create_grid(2, 48, 2 * math.pi)
        assert g.dealias_mask[0, 16] == 1 and g.dealias_mask[0, 17] == 0


class TestParams:
    def test_p4_d2_rejected(self):
        with pytest.raises(ValueError, match="p=4 with d=2 excluded"):
            ModelParams(dim=2, p_index=4.0)

    def test_slip_range(self):
        with pytest.raises(ValueError, match=r"\[-1, 1\]"):
            ModelParams(q_slip=1.5)

    @pytest.mark.parametrize("p,d", [(1.5, 2), (4.5, 3), (6.5, 3)])
    def test_p_range(self, p, d):
        with pytest.raises(ValueError):
            ModelParams(dim=d, p_index=p)

    def test_p4_d3_allowed(self):
        assert ModelParams(dim=3, p_index=4.0).p_index == 4.0


class TestTransforms:
    def test_round_trip(self, grid):
        rng = np.random.default_rng(0)
        f = rng.standard_normal((grid.dim,) + grid.shape)
        assert np.allclose(to_physical(grid, to_spectral(grid, f)), f, atol=1e-13)

    def test_parseval(self, grid):
        s = random_state(grid, np.random.default_rng(1))
        ph = to_physical(grid, s.tau_hat)
        w = tri_weights(grid.dim)
        assert l2_norm_physical(grid, ph, w) == pytest.approx(l2_norm_spectral(grid, s.tau_hat, w),
                                                              rel=1e-12)

    def test_single_mode_value(self):
        g = create_grid(2, 16, 2 * math.pi)
        x, y = g.coords()
        f = np.cos(3 * x)
        assert l2_norm_spectral(g, to_spectral(g, f)) == pytest.approx(math.sqrt(2) * math.pi, rel=1e-12)

    def test_lp_inf(self):
        g = create_grid(2, 16, 2 * math.pi)
        x, y = g.coords()
        assert lp_norm_physical(g, np.sin(x), np.inf) == pytest.approx(1.0, abs=1e-2)


class TestOperators:
    def test_leray(self, grid):
        rng = np.random.default_rng(2)
        v = to_spectral(grid, rng.standard_normal((grid.dim,) + grid.shape))
        p = leray_project(grid, v)
        assert np.abs(divergence(grid, p)).max() < 1e-12
        assert np.allclose(leray_project(grid, p), p, atol=1e-14)

    def test_tensor_laplacian(self, grid):
        s = random_state(grid, np.random.default_rng(3))
        tf = s.tau_full()
        lhs = -grid.k2 * tf
        rhs = gradient(grid, div_tensor(grid, tf)) + div3(grid, curl_tensor(grid, tf))
        assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(lhs).max()

    def test_sym_round_trip(self, grid):
        s = random_state(grid, np.random.default_rng(4))
        assert np.array_equal(full_to_sym(sym_to_full(s.tau_hat, grid.dim), grid.dim), s.tau_hat)

    def test_negative_power_mean(self):
        g = create_grid(2, 8, 2 * math.pi)
        f = np.zeros(g.spec_shape, complex)
        f[0, 0] = 1.0
        with pytest.raises(ValueError, match="nonzero mean"):
            lambda_power(g, f, -1.0)

    def test_leray_divtau_inner(self, grid):
        s = random_state(grid, np.random.default_rng(5))
        dt = div_tensor(grid, s.tau_full())
        a = inner(grid, leray_project(grid, dt), s.u_hat)
        assert a == pytest.approx(inner(grid, dt, s.u_hat), rel=1e-10)


class TestFlowState:
    def test_shape_check(self, grid):
        s = random_state(grid, np.random.default_rng(6))
        with pytest.raises(GridError):
            FlowState(grid, 0.0, s.u_hat[:1], s.tau_hat)

    def test_random_state_divergence_free(self, grid):
        s = random_state(grid, np.random.default_rng(7))
        assert s.divergence_residual() < 1e-14

    def test_physical_real(self, grid):
        s = random_state(grid, np.random.default_rng(8))
        back = to_spectral(grid, to_physical(grid, s.u_hat))
        assert np.allclose(back, s.u_hat, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), s=st.floats(-2.0, 2.0))
def test_lambda_power_composition(seed, s):
    g = create_grid(2, 16, 2 * math.pi * 1.5)
    u = random_state(g, np.random.default_rng(seed)).u_hat
    a = lambda_power(g, lambda_power(g, u, s), -s)
    assert np.allclose(a, u, rtol=1e-10, atol=1e-14 * np.abs(u).max())
