"""Unwrapping, linear detrending, and input-configuration tests."""

import numpy as np
import pytest

from gfsense.csi import AmplitudeMatrix, PhaseMatrix, PhaseState
from gfsense.errors import PhaseStateError, ShapeError
from gfsense.phase import (
    InputConfig,
    build_model_input,
    fit_linear_trend,
    sanitize,
    unwrap_temporal,
)
from gfsense.rng import SplitMix64

TWO_PI = 2.0 * np.pi


def raw(values):
    return PhaseMatrix(np.atleast_2d(np.asarray(values, dtype=float)), PhaseState.RAW)


def unwrapped(values):
    return PhaseMatrix(
        np.atleast_2d(np.asarray(values, dtype=float)), PhaseState.UNWRAPPED
    )


def random_raw(seed, s=6, t=10):
    rng = SplitMix64(seed)
    vals = rng.uniform(size=(s, t), low=-np.pi, high=np.pi)
    return PhaseMatrix(vals, PhaseState.RAW)


class TestUnwrap:
    def test_single_jump_corrected(self):
        out = unwrap_temporal(raw([[0.1, 3.0, -3.0], [0, 0, 0]]))
        np.testing.assert_allclose(
            out.values[0], [0.1, 3.0, 3.28318531], atol=1e-8
        )
        assert out.state is PhaseState.UNWRAPPED

    def test_constant_series_unchanged(self):
        out = unwrap_temporal(raw([[1.0, 1.0, 1.0], [0, 0, 0]]))
        np.testing.assert_array_equal(out.values[0], [1.0, 1.0, 1.0])

    def test_difference_of_exactly_pi_untouched(self):
        series = [[0.0, np.pi, 0.0], [0, 0, 0]]
        out = unwrap_temporal(raw(series))
        np.testing.assert_array_equal(out.values, np.array(series))

    def test_requires_raw_state(self):
        with pytest.raises(PhaseStateError):
            unwrap_temporal(unwrapped([[0.0, 1.0]]))

    def test_congruence_mod_two_pi(self):
        for seed in range(10):
            p = random_raw(seed, s=8, t=40)
            out = unwrap_temporal(p)
            delta = out.values - p.values
            residual = delta - TWO_PI * np.round(delta / TWO_PI)
            assert np.max(np.abs(residual)) < 1e-9

    def test_consecutive_difference_bound(self):
        for seed in range(10):
            out = unwrap_temporal(random_raw(seed + 100, s=8, t=40))
            diffs = np.abs(np.diff(out.values, axis=1))
            assert diffs.max() <= np.pi + 1e-9

    def test_first_packet_unchanged(self):
        p = random_raw(5)
        out = unwrap_temporal(p)
        np.testing.assert_array_equal(out.values[:, 0], p.values[:, 0])


class TestLinearTrend:
    def test_exact_line(self):
        alpha, beta = fit_linear_trend([2.0, 4.0, 6.0])
        assert alpha == pytest.approx(2.0, abs=1e-12)
        assert beta == pytest.approx(0.0, abs=1e-12)

    def test_constant_vector(self):
        alpha, beta = fit_linear_trend([1.0, 1.0, 1.0])
        assert alpha == pytest.approx(0.0, abs=1e-12)
        assert beta == pytest.approx(1.0, abs=1e-12)

    def test_three_point_fit_against_grid_search(self):
        col = np.array([0.0, 1.0, 3.0])
        alpha, beta = fit_linear_trend(col)
        assert alpha == pytest.approx(1.5, abs=1e-4)
        assert beta == pytest.approx(-1.6667, abs=1e-4)
        # independent oracle: dense grid search over (alpha, beta)
        k = np.arange(1.0, 4.0)
        grid = np.linspace(-3, 3, 601)
        best = min(
            ((float(np.sum((col - a * k - b) ** 2)), a, b)
             for a in grid for b in grid),
            key=lambda x: x[0],
        )
        assert best[1] == pytest.approx(alpha, abs=0.011)
        assert best[2] == pytest.approx(beta, abs=0.011)

    def test_underdetermined(self):
        with pytest.raises(ShapeError):
            fit_linear_trend([1.0])


class TestSanitize:
    def test_exactly_linear_columns_become_zero(self):
        s, t = 8, 5
        k = np.arange(1.0, s + 1.0)
        rng = SplitMix64(3)
        v = np.empty((s, t))
        for i in range(t):
            v[:, i] = rng.uniform() * k + rng.uniform()
        out, trend = sanitize(unwrapped(v))
        assert np.max(np.abs(out.values)) < 1e-9
        assert out.state is PhaseState.SANITIZED
        assert trend.alpha.shape == (t,)

    def test_residual_orthogonality(self):
        s = 8
        k = np.arange(1.0, s + 1.0)
        for seed in range(5):
            v = SplitMix64(seed).normal(size=(s, 6), std=3.0)
            out, _ = sanitize(unwrapped(v))
            assert np.max(np.abs(out.values.sum(axis=0))) < 1e-6
            assert np.max(np.abs(k @ out.values)) < 1e-6 * s

    def test_matches_per_column_fit(self):
        v = SplitMix64(77).normal(size=(8, 5), std=2.0)
        out, trend = sanitize(unwrapped(v))
        k = np.arange(1.0, 9.0)
        for i in range(5):
            a, b = fit_linear_trend(v[:, i])
            assert a == pytest.approx(trend.alpha[i], abs=1e-12)
            assert b == pytest.approx(trend.beta[i], abs=1e-12)
            np.testing.assert_allclose(
                out.values[:, i], v[:, i] - a * k - b, atol=1e-12
            )

    def test_idempotent_on_sanitized_values(self):
        v = SplitMix64(5).normal(size=(6, 4))
        once, _ = sanitize(unwrapped(v))
        # state override: feed the sanitized values back in as "unwrapped"
        again, trend = sanitize(unwrapped(once.values))
        assert np.max(np.abs(again.values - once.values)) < 1e-9
        assert np.max(np.abs(trend.alpha)) < 1e-9
        assert np.max(np.abs(trend.beta)) < 1e-9

    def test_invariant_to_added_linear_term(self):
        s, t = 7, 6
        k = np.arange(1.0, s + 1.0)[:, None]
        v = SplitMix64(12).normal(size=(s, t))
        shifted = v + 0.7 * k + 1.3
        out_a, _ = sanitize(unwrapped(v))
        out_b, _ = sanitize(unwrapped(shifted))
        assert np.max(np.abs(out_a.values - out_b.values)) < 1e-6

    def test_rejects_raw_state(self):
        with pytest.raises(PhaseStateError):
            sanitize(random_raw_matrix())


def random_raw_matrix():
    return PhaseMatrix(
        SplitMix64(1).uniform(size=(4, 4), low=-3.0, high=3.0), PhaseState.RAW
    )


class TestModelInputs:
    def setup_method(self):
        rng = SplitMix64(21)
        self.amp = AmplitudeMatrix(rng.uniform(size=(5, 6), low=0.1, high=2.0))
        self.phase = PhaseMatrix(
            rng.uniform(size=(5, 6), low=-np.pi, high=np.pi), PhaseState.RAW
        )

    def test_amplitude_only_passthrough(self):
        mi = build_model_input(self.amp, self.phase, InputConfig.AMPLITUDE_ONLY)
        assert mi.tensor.shape == (1, 5, 6)
        np.testing.assert_array_equal(mi.tensor[0], self.amp.values)

    def test_channel_counts(self):
        for cfg, m in [
            (InputConfig.PHASE_ONLY_UNWRAPPED, 1),
            (InputConfig.AMPLITUDE_ONLY, 1),
            (InputConfig.AMP_PLUS_UNWRAPPED, 2),
            (InputConfig.AMP_PLUS_SANITIZED, 2),
        ]:
            mi = build_model_input(self.amp, self.phase, cfg)
            assert mi.tensor.shape[0] == m
            assert cfg.channels_per_receiver == m

    def test_amp_plus_sanitized_linear_phase_gives_zero_plane(self):
        k = np.arange(1.0, 6.0)[:, None]
        lin = PhaseMatrix(
            np.clip(0.05 * k + 0.1 * np.ones((1, 6)), -3, 3), PhaseState.RAW
        )
        mi = build_model_input(self.amp, lin, InputConfig.AMP_PLUS_SANITIZED)
        np.testing.assert_array_equal(mi.tensor[0], self.amp.values)
        assert np.max(np.abs(mi.tensor[1])) < 1e-9

    def test_amp_plus_unwrapped_fixes_jump(self):
        vals = np.zeros((5, 3))
        vals[0] = [0.1, 3.0, -3.0]
        amp = AmplitudeMatrix(np.ones((5, 3)))
        mi = build_model_input(
            amp, PhaseMatrix(vals, PhaseState.RAW), InputConfig.AMP_PLUS_UNWRAPPED
        )
        np.testing.assert_allclose(mi.tensor[1][0], [0.1, 3.0, 3.28318531], atol=1e-8)

    def test_shape_mismatch(self):
        small = AmplitudeMatrix(np.ones((4, 6)))
        with pytest.raises(ShapeError):
            build_model_input(small, self.phase, InputConfig.AMPLITUDE_ONLY)
