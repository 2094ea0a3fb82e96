"""Forward diffusion and reverse ancestral chain."""

import numpy as np
import pytest

from w2lab.errors import DivergenceError
from w2lab.sampler import (ReverseMode, forward_diffuse, generate,
                           reverse_ancestral)
from w2lab.schedule import NoiseSchedule, build_sigmoid_schedule
from w2lab.synthdata import DatasetSpec, generate as draw_dataset


class TestForwardDiffuse:
    def test_matches_stepwise_chain_in_law(self):
        # Oracle: iterate x <- sqrt(1-beta) x + sqrt(beta) z step by step from
        # a point mass and compare moments against the one-shot marginal and
        # the analytic values.
        sch = build_sigmoid_schedule(10)
        a = 0.7
        n = 200_000
        rng = np.random.default_rng(0)
        x = np.full(n, a)
        for t in range(1, sch.T + 1):
            b = sch.beta[t - 1]
            x = np.sqrt(1 - b) * x + np.sqrt(b) * rng.standard_normal(n)

        one_shot = forward_diffuse(sch, np.full((n, 1), a), sch.T,
                                   np.random.default_rng(1))[:, 0]

        abar = sch.alpha_bar[-1]
        want_mean = np.sqrt(abar) * a
        want_var = 1 - abar
        se_mean = np.sqrt(want_var / n)
        for sample in (x, one_shot):
            assert abs(sample.mean() - want_mean) < 4 * se_mean
            assert abs(sample.var() - want_var) / want_var < 0.02

    def test_t1_small_noise(self):
        sch = build_sigmoid_schedule(10)
        x0 = np.zeros((50_000, 1))
        xt = forward_diffuse(sch, x0, 1, np.random.default_rng(2))
        # At t=1 the injected variance is exactly beta_1 = 1e-5.
        assert abs(xt.var() - 1e-5) / 1e-5 < 0.05

    def test_deterministic_under_seed(self):
        sch = build_sigmoid_schedule(5)
        x0 = np.ones((10, 2))
        a = forward_diffuse(sch, x0, 3, np.random.default_rng(7))
        b = forward_diffuse(sch, x0, 3, np.random.default_rng(7))
        assert np.array_equal(a, b)


class TestReverseAncestral:
    def test_empty_schedule_is_identity(self):
        sch = NoiseSchedule(beta=np.array([]), alpha_bar=np.array([]))
        x = np.random.default_rng(3).normal(size=(8, 2))
        out = reverse_ancestral(lambda X, t: X, sch, x, np.random.default_rng(4))
        assert np.array_equal(out, x)
        assert out is not x

    def test_last_step_adds_no_noise(self):
        # With T=1 the single reverse step is deterministic: no draw happens,
        # so the rng state is untouched.
        sch = build_sigmoid_schedule(2)
        sch1 = NoiseSchedule(beta=sch.beta[:1], alpha_bar=sch.alpha_bar[:1])
        rng = np.random.default_rng(5)
        state_before = rng.bit_generator.state["state"]["state"]
        x = np.array([[0.4], [-0.2]])
        out = reverse_ancestral(lambda X, t: -X, sch1, x, rng)
        assert rng.bit_generator.state["state"]["state"] == state_before
        b = sch1.beta[0]
        np.testing.assert_allclose(out, (x - b * x) / np.sqrt(1 - b), rtol=1e-12)

    def test_true_score_round_trip_recovers_variance(self):
        # With the exact marginal score of a centered Gaussian, the reverse
        # chain started from the diffused batch must come back to the source
        # law up to discretization error.
        sch = build_sigmoid_schedule(10)
        s0_sq = 0.1
        n = 100_000
        rng = np.random.default_rng(6)
        x0 = np.sqrt(s0_sq) * rng.standard_normal((n, 1))

        def true_score(X, t):
            var_t = sch.alpha_bar[t - 1] * s0_sq + (1 - sch.alpha_bar[t - 1])
            return -X / var_t

        q0, w2_terminal = generate(true_score, sch, ReverseMode.SHARED_TERMINAL,
                                   x0, rng)
        assert w2_terminal == 0.0
        assert abs(q0.points.mean()) < 0.01
        assert abs(q0.points.var() - s0_sq) / s0_sq < 0.05

    def test_divergence_raises_with_timestep(self):
        sch = build_sigmoid_schedule(10)
        x = np.ones((4, 1))
        blow_up = lambda X, t: X * 1e60
        with np.errstate(over="ignore"), pytest.raises(DivergenceError, match="t="):
            reverse_ancestral(blow_up, sch, x, np.random.default_rng(8))

    def test_nan_score_raises(self):
        sch = build_sigmoid_schedule(5)
        x = np.ones((3, 2))
        bad = lambda X, t: np.full_like(X, np.nan)
        with pytest.raises(DivergenceError):
            reverse_ancestral(bad, sch, x, np.random.default_rng(9))


class TestGenerate:
    def test_shared_terminal_reports_zero(self):
        sch = build_sigmoid_schedule(6)
        data = draw_dataset(DatasetSpec("gauss2d-1cluster", n=64, seed=1))
        q0, w2_terminal = generate(lambda X, t: -X, sch,
                                   ReverseMode.SHARED_TERMINAL, data,
                                   np.random.default_rng(10))
        assert w2_terminal == 0.0
        assert q0.points.shape == (64, 2)

    def test_fresh_terminal_reports_gap(self):
        sch = build_sigmoid_schedule(6)
        data = draw_dataset(DatasetSpec("gauss2d-1cluster", n=64, seed=1))
        q0, w2_terminal = generate(lambda X, t: -X, sch,
                                   ReverseMode.FRESH_TERMINAL, data,
                                   np.random.default_rng(11))
        assert w2_terminal > 0.0
        assert np.isfinite(w2_terminal)
        assert q0.points.shape == (64, 2)

    def test_deterministic_under_seed(self):
        sch = build_sigmoid_schedule(6)
        data = draw_dataset(DatasetSpec("gauss1d-2cluster", n=32, seed=2))
        a, _ = generate(lambda X, t: -X, sch, ReverseMode.SHARED_TERMINAL,
                        data, np.random.default_rng(12))
        b, _ = generate(lambda X, t: -X, sch, ReverseMode.SHARED_TERMINAL,
                        data, np.random.default_rng(12))
        assert np.array_equal(a.points, b.points)
        c, _ = generate(lambda X, t: -X, sch, ReverseMode.SHARED_TERMINAL,
                        data, np.random.default_rng(13))
        assert not np.array_equal(a.points, c.points)
