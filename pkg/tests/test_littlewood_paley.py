import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from obdk.littlewood_paley import (BandRangeError, DyadicConfig, assemble, band_of, band_table,
                                   besov_norm, chemin_lerner, energy_history, hybrid_norm,
                                   initial_energy, membership_from_weighted, split_low_high)
from obdk.spectral import create_grid, l2_norm_spectral, random_state, to_spectral


@pytest.fixture(scope="module")
def grid():
    return create_grid(2, 64, 2 * math.pi * 4)


@pytest.fixture(scope="module")
def cfg(grid):
    return DyadicConfig.for_grid(grid)


class TestBands:
    @pytest.mark.parametrize("kmag,k", [(1.0, 0), (1.5, 1), (2.0, 1), (0.5, -1), (0.51, 0)])
    def test_band_of(self, kmag, k):
        assert band_of(kmag) == k

    def test_range(self, grid, cfg):
        assert cfg.k_lo == band_of(grid.k_min)
        assert cfg.k0 == cfg.k_hi - 3
        assert list(cfg.high_bands)[0] == cfg.k0 - 1

    def test_bad_k0(self, grid):
        with pytest.raises(BandRangeError):
            DyadicConfig.for_grid(grid, k0=99)

    def test_parseval_over_bands(self, grid, cfg):
        u = random_state(grid, np.random.default_rng(0)).u_hat
        t = band_table(u, cfg)
        assert math.sqrt(sum(v * v for v in t.values())) == pytest.approx(l2_norm_spectral(grid, u),
                                                                          rel=1e-12)

    def test_smooth_partition(self, grid):
        c = DyadicConfig.for_grid(grid, filter="smooth")
        tot = sum(c.weights(k) for k in c.bands)
        assert np.abs(tot[grid.k2 > 0] - 1).max() < 1e-12

    def test_split_overlap(self, grid, cfg):
        u = random_state(grid, np.random.default_rng(1)).u_hat
        lo, hi = split_low_high(u, cfg)
        both = cfg.weights(cfg.k0) + cfg.weights(cfg.k0 - 1)
        assert np.allclose(lo + hi - u, u * both)


class TestBesov:
    def test_single_band_field(self, grid, cfg):
        x, y = grid.coords()
        m = 5
        f = to_spectral(grid, np.cos(m * grid.k_min * x))
        k = band_of(m * grid.k_min)
        rep = besov_norm(f, 0.7, 2.0, 1.0, cfg)
        expected = 2 ** (0.7 * k) * l2_norm_spectral(grid, f)
        assert rep.value == pytest.approx(expected, rel=1e-12)
        assert rep.to_dict()["bands"][0].keys() == {"k", "norm"}

    def test_physical_p_matches_l2(self, grid, cfg):
        u = random_state(grid, np.random.default_rng(2)).u_hat
        a = besov_norm(u, 0.0, 2.0, 1.0, cfg).value
        b = assemble({k: v for k, v in band_table(u, cfg, 2.0).items()}, 0.0, 1.0)
        assert a == pytest.approx(b)

    def test_hybrid_sigma_range(self, grid, cfg):
        s = random_state(grid, np.random.default_rng(3))
        with pytest.raises(ValueError):
            hybrid_norm(s, 1.5, cfg)

    def test_initial_energy_positive(self, grid, cfg):
        s = random_state(grid, np.random.default_rng(4))
        assert initial_energy(s, cfg) > 0


class TestTimeNorms:
    def test_chemin_lerner_constant_series(self, grid, cfg):
        s = random_state(grid, np.random.default_rng(5))
        series = [s.with_fields(s.u_hat, s.tau_hat, t) for t in (0.0, 1.0, 2.0)]
        sup = chemin_lerner(series, np.inf, 0.0, 2.0, cfg, "all", "u")
        l1 = chemin_lerner(series, 1.0, 0.0, 2.0, cfg, "all", "u")
        assert l1 == pytest.approx(2.0 * sup, rel=1e-12)

    def test_energy_tables_match_states(self, grid, cfg):
        rng = np.random.default_rng(6)
        s = random_state(grid, rng)
        series = [s.with_fields(s.u_hat * math.exp(-t), s.tau_hat * math.exp(-t), t)
                  for t in np.linspace(0, 1, 5)]
        hist = energy_history(series, cfg)
        assert hist[0] == pytest.approx(initial_energy(s, cfg), rel=1e-12)
        assert np.all(np.diff(hist) >= -1e-15)


class TestMembership:
    def test_ring_detected(self):
        w = {k: 1.0 for k in range(-10, 1)}
        rep = membership_from_weighted(w, -1.0, 0.5, 1, -10, 0)
        assert rep.in_class and rep.truncated

    def test_gap_too_large(self):
        w = {k: (1.0 if k % 4 == 0 else 0.0) for k in range(-12, 1)}
        assert not membership_from_weighted(w, -1.0, 0.5, 2, -12, 0).in_class
        assert membership_from_weighted(w, -1.0, 0.5, 4, -12, 0).in_class

    def test_decaying_not_member(self):
        w = {k: 2.0 ** k for k in range(-12, 1)}
        rep = membership_from_weighted(w, -1.0, 0.5, 1, -12, 0)
        assert not rep.in_class and math.isfinite(rep.sup_bound)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 31), s=st.floats(-1.0, 2.0), c=st.floats(0.1, 10.0))
def test_besov_homogeneous(seed, s, c):
    g = create_grid(2, 16, 2 * math.pi * 2)
    cfg = DyadicConfig.for_grid(g)
    u = random_state(g, np.random.default_rng(seed)).u_hat
    a = besov_norm(u, s, 2.0, 1.0, cfg).value
    assert besov_norm(c * u, s, 2.0, 1.0, cfg).value == pytest.approx(c * a, rel=1e-12)
