import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from obdk.harness import (ProfileSpec, compensated_band, continuum_membership, continuum_profile,
                          dtilde_functional, fit_exponent, gen_initial, linear_decay_experiment,
                          sharpness_experiment, shell_quadrature, sigma2, sphere_area)
from obdk.littlewood_paley import DyadicConfig, pair_table
from obdk.spectral import ModelParams, create_grid

NORMAL3 = ModelParams(dim=3)
T_GRID = np.geomspace(1, 1e4, 41)


class TestFit:
    def test_power_law(self):
        t = np.geomspace(1, 1e3, 30)
        r = fit_exponent(t, 3 * (1 + t * t) ** (-0.375))
        assert r.exponent == pytest.approx(0.75, abs=1e-12) and r.r2 == pytest.approx(1.0)

    def test_constant(self):
        t = np.geomspace(1, 100, 20)
        r = fit_exponent(t, np.full(t.size, 2.0))
        assert r.exponent == 0.0 and r.ci_halfwidth == 0.0

    def test_log_oscillation_bounded_bias(self):
        t = np.geomspace(1, 1e4, 80)
        v = (1 + t * t) ** (-0.25) * (1 + 0.1 * np.sin(np.log(t)))
        assert fit_exponent(t, v).exponent == pytest.approx(0.5, abs=0.05)

    @pytest.mark.parametrize("t,msg", [(np.geomspace(1, 100, 5), ">= 8"),
                                       (np.linspace(1, 5, 20), "decade")])
    def test_rejections(self, t, msg):
        with pytest.raises(ValueError, match=msg):
            fit_exponent(t, t ** -1.0)

    def test_nonpositive(self):
        t = np.geomspace(1, 100, 20)
        with pytest.raises(ValueError, match="non-positive"):
            fit_exponent(t, np.zeros(t.size))

    def test_compensated(self):
        t = np.geomspace(1, 100, 20)
        assert compensated_band(t, (1 + t * t) ** -0.5, 1.0) == pytest.approx(1.0)


class TestSigma2:
    @pytest.mark.parametrize("sigma,sigma1,d,branch,value", [
        (0.5, -1.0, 3, 1, 0.01),
        (0.0, -1.0, 2, 2, 0.01),
        (1.0, -1.0, 2, 4, 0.01),
        (-0.2, -0.5, 3, 2, 0.01),
        (0.3, 0.0, 3, 3, 0.01),
        (1.5, 0.0, 3, 4, 0.01),
    ])
    def test_branches(self, sigma, sigma1, d, branch, value):
        s = sigma2(sigma, sigma1, d)
        assert s.branch == branch and s.value == pytest.approx(value)

    def test_prime_values(self):
        assert sigma2(0.3, 0.0, 3).sigma2_prime == pytest.approx(0.5)
        assert sigma2(-0.2, -0.5, 3).sigma2_prime == pytest.approx(0.99)
        assert sigma2(1.5, -1.0, 3).sigma2_prime == pytest.approx(0.5)

    def test_alpha_star(self):
        s = sigma2(1.0, -1.0, 2)
        assert s.alpha_star == pytest.approx(0.5 * (1 + 1 + 0.01) - 0.01)

    @pytest.mark.parametrize("args", [(2.0, -1.0, 2), (-1.0, -1.0, 2), (0.5, 0.0, 2)])
    def test_out_of_range(self, args):
        with pytest.raises(ValueError):
            sigma2(*args)

    def test_bad_epsilon(self):
        with pytest.raises(ValueError, match="sigma_dprime"):
            sigma2(0.0, -1.0, 2, sigma_dprime=0.2)


class TestProfiles:
    def test_bad_class(self):
        with pytest.raises(ValueError, match="class"):
            ProfileSpec(-1.0, klass="flat")

    def test_generic_gaps_grow(self):
        b = ProfileSpec(-1.0, "generic").bands(-40, 0)
        assert np.all(np.diff(-np.diff(b)) > 0)

    def test_grid_membership(self):
        g = create_grid(2, 64, 2 * math.pi * 8)
        cfg = DyadicConfig.for_grid(g)
        P = ModelParams(dim=2)
        s = gen_initial(ProfileSpec(-0.5, "ring", 1, 0.3), g, P, cfg)
        tab = pair_table(s, cfg, 2.0, cfg.low_bands)
        top = min(cfg.k0, int(math.log2(g.dealias_cutoff)))
        for k in range(cfg.k_lo, top + 1):
            w = 2 ** (-0.5 * k) * tab[k]
            assert w == pytest.approx(2 * 0.3, rel=1e-10)
        assert s.divergence_residual() < 1e-13

    def test_sigma1_range(self):
        g = create_grid(2, 32, 2 * math.pi * 8)
        with pytest.raises(ValueError, match="sigma1"):
            gen_initial(ProfileSpec(0.2), g, ModelParams(dim=2))

    def test_too_few_bands(self):
        g = create_grid(2, 16, 2 * math.pi)
        with pytest.raises(ValueError, match="4 low bands"):
            gen_initial(ProfileSpec(-1.0), g, ModelParams(dim=2))


class TestContinuum:
    def test_sphere_area(self):
        assert sphere_area(2) == pytest.approx(2 * math.pi)
        assert sphere_area(3) == pytest.approx(4 * math.pi)

    def test_shell_volume(self):
        k, w = shell_quadrature(0, 0, 3)
        assert w.sum() == pytest.approx(4 * math.pi / 3 * (1 - 2 ** -3), rel=1e-12)

    def test_membership(self):
        spec = ProfileSpec(-1.0, "ring", 1, 1.0)
        prof = continuum_profile(spec, 3, NORMAL3, k_lo=-30, k_top=2)
        assert continuum_membership(prof, -1.0, 1.0, 1).in_class

    def test_heat_rate_exact(self):
        spec = ProfileSpec(-1.0, "ring", 1, 1.0, tau_mode="solenoidal")
        out = linear_decay_experiment(spec, [0.0], T_GRID, NORMAL3, window=(10, 1e4))
        assert out[0.0].fit.exponent == pytest.approx(0.5, abs=1e-3)

    def test_zero_amplitude(self):
        spec = ProfileSpec(-1.0, "ring", 1, 0.0)
        out = linear_decay_experiment(spec, [0.0], T_GRID, NORMAL3)
        assert np.all(out[0.0].values == 0)

    def test_mode_check(self):
        with pytest.raises(ValueError, match="mode"):
            linear_decay_experiment(ProfileSpec(-1.0), [0.0], T_GRID, NORMAL3, mode="bogus")

    def test_sigma_must_exceed_sigma1(self):
        with pytest.raises(ValueError, match="exceed"):
            linear_decay_experiment(ProfileSpec(-1.0), [-1.0], T_GRID, NORMAL3)


class TestSharpness:
    def test_steep_reported_not_fatal(self):
        rep = sharpness_experiment(ProfileSpec(-1.0, "steep", 1, 1.0), [0.0, 1.0], NORMAL3)
        d = rep.to_dict()
        assert all(v["expected"] for v in d["verdicts"].values())


def test_dtilde_zero_error():
    g = create_grid(2, 64, 2 * math.pi * 8)
    cfg = DyadicConfig.for_grid(g)
    s = gen_initial(ProfileSpec(-1.0, "ring", 1, 0.1), g, ModelParams(dim=2), cfg)
    z = [s.with_fields(0 * s.u_hat, 0 * s.tau_hat, t) for t in (0.0, 1.0, 2.0)]
    assert np.all(dtilde_functional(z, -1.0, 2.0, cfg, [0.0, 1.0]).total == 0)


@settings(max_examples=10, deadline=None)
@given(alpha=st.floats(0.0, 3.0), c=st.floats(1e-3, 1e3))
def test_fit_recovers_exponent(alpha, c):
    t = np.geomspace(0.5, 500, 25)
    assert fit_exponent(t, c * (1 + t * t) ** (-alpha / 2)).exponent == pytest.approx(alpha, abs=1e-9)
