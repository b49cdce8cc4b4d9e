import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from obdk.linear import propagate_state_closed
from obdk.solver import (BlowUpError, SolverConfig, Stepper, coevolve_error, nonlinear_rhs,
                         q_bilinear, simulate)
from obdk.spectral import ModelParams, create_grid, random_state

P = ModelParams(q_slip=0.5)


@pytest.fixture(scope="module")
def small():
    g = create_grid(2, 16, 2 * math.pi)
    return g, random_state(g, np.random.default_rng(0), amplitude=1.0, spectral_slope=1)


def _run(g, s0, scheme, n, T):
    c = SolverConfig(dt=T / n, t_end=T, params=P, scheme=scheme)
    stp = Stepper(g, c)
    u, t = s0.u_hat, s0.tau_hat
    for _ in range(n):
        u, t = stp.step(u, t, T / n)
    return np.concatenate([u.ravel(), t.ravel()])


class TestConfig:
    def test_bad_scheme(self):
        with pytest.raises(ValueError, match="scheme"):
            SolverConfig(dt=0.1, t_end=1, params=P, scheme="euler")

    def test_bad_snapshots(self):
        with pytest.raises(ValueError):
            SolverConfig(dt=0.1, t_end=1, params=P, snapshot_times=[0.5, 0.2])

    def test_rk4_stability_guard(self, small):
        g, _ = small
        c = SolverConfig(dt=0.5, t_end=1, params=P, scheme="rk4-full")
        with pytest.raises(ValueError, match="stability"):
            c.check_stability(g)


class TestNonlinearTerms:
    def test_q_zero_slip_is_commutator(self):
        rng = np.random.default_rng(1)
        tau = rng.standard_normal((2, 2, 4))
        tau = tau + tau.transpose(1, 0, 2)
        gu = rng.standard_normal((2, 2, 4))
        om = 0.5 * (gu - gu.transpose(1, 0, 2))
        expect = np.einsum("ik...,kj...->ij...", tau, om) - np.einsum("ik...,kj...->ij...", om, tau)
        assert np.allclose(q_bilinear(tau, gu, 0.0), expect)

    def test_q_symmetric(self):
        rng = np.random.default_rng(2)
        tau = rng.standard_normal((3, 3, 5))
        tau = tau + tau.transpose(1, 0, 2)
        q = q_bilinear(tau, rng.standard_normal((3, 3, 5)), 0.7)
        assert np.allclose(q, q.transpose(1, 0, 2))

    def test_rhs_divergence_free(self, small):
        g, s0 = small
        F, _ = nonlinear_rhs(s0, P)
        div = sum(g.xi[j] * F[j] for j in range(2))
        assert np.abs(div).max() <= 1e-13 * np.abs(F).max()


class TestIntegrators:
    def test_gated_equals_closed_form(self, small):
        g, s0 = small
        c = SolverConfig(dt=0.1, t_end=1.0, params=P, gate_nonlinear=True)
        stp = Stepper(g, c)
        u, t = s0.u_hat, s0.tau_hat
        for _ in range(10):
            u, t = stp.step(u, t, 0.1)
        ref = propagate_state_closed(s0, 1.0, P)
        assert np.abs(u - ref.u_hat).max() <= 1e-12 * np.abs(ref.u_hat).max()

    def test_etd_order(self, small):
        g, s0 = small
        xs = [_run(g, s0, "etd-rk2", n, 0.5) for n in (10, 20, 40)]
        e1, e2 = np.abs(xs[0] - xs[1]).max(), np.abs(xs[1] - xs[2]).max()
        assert math.log2(e1 / e2) >= 1.9

    @pytest.mark.slow
    def test_rk4_order(self, small):
        g, s0 = small
        xs = [_run(g, s0, "rk4-full", n, 0.5) for n in (50, 100, 200)]
        e1, e2 = np.abs(xs[0] - xs[1]).max(), np.abs(xs[1] - xs[2]).max()
        assert math.log2(e1 / e2) >= 3.9


class TestSimulate:
    def test_snapshots_exact(self, small):
        g, s0 = small
        c = SolverConfig(dt=0.03, t_end=0.2, params=P, snapshot_times=[0.0, 0.1, 0.2])
        ser = simulate(s0, c)
        assert ser.times == [0.0, 0.1, 0.2]
        assert max(ser.divergence) < 1e-12

    def test_blowup_guard(self, small):
        g, s0 = small
        big = s0.with_fields(s0.u_hat * 1e4, s0.tau_hat * 1e4)
        c = SolverConfig(dt=0.05, t_end=2.0, params=P, snapshot_times=list(np.linspace(0, 2, 41)),
                         blowup_factor=1.5)
        with pytest.raises(BlowUpError):
            simulate(big, c)

    def test_zero_data_stays_zero(self, small):
        g, s0 = small
        z = s0.with_fields(0 * s0.u_hat, 0 * s0.tau_hat)
        ser = simulate(z, SolverConfig(dt=0.1, t_end=0.3, params=P, snapshot_times=[0.0, 0.3]))
        assert np.all(ser.states[-1].u_hat == 0)
        assert ser.energy[-1] == 0

    def test_coevolve_error_small_amplitude(self, small):
        g, s0 = small
        tiny = s0.with_fields(s0.u_hat * 1e-6, s0.tau_hat * 1e-6)
        c = SolverConfig(dt=0.01, t_end=0.2, params=P, snapshot_times=[0.0, 0.1, 0.2])
        ser = simulate(tiny, c)
        errs = coevolve_error(tiny, ser, P)
        assert errs[0].norm() == 0
        assert errs[-1].norm() <= 1e-4 * ser.states[-1].norm()


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_step_preserves_divergence_free(seed):
    g = create_grid(2, 16, 2 * math.pi)
    s = random_state(g, np.random.default_rng(seed), amplitude=0.5)
    u, t = Stepper(g, SolverConfig(dt=0.05, t_end=0.05, params=P)).step(s.u_hat, s.tau_hat, 0.05)
    div = sum(g.xi[j] * u[j] for j in range(2))
    assert np.abs(div).max() <= 1e-13 * np.abs(u).max()
