"""Tests for DDIM / RF schedules, single steps and trajectories."""

import math
import unittest

import numpy as np
import pytest

from conftest import ConstantPredictor
from latent_edit.denoisers import SOURCE, single_gaussian
from latent_edit.errors import ScheduleError, ShapeMismatchError
from latent_edit.latent import LatentGrid, full, l2_relative_error, sample_gaussian, zeros
from latent_edit.schedulers import (
    CountingDenoiser,
    DdimSchedule,
    RfSchedule,
    build_ddim_schedule,
    build_rf_schedule,
    ddim_coefficients,
    ddim_denoise_step,
    ddim_forward_diffuse,
    ddim_invert_step,
    denoise_loop,
    denoise_step,
    invert_step,
    invert_trajectory,
    noise_level,
    rf_denoise_step,
    rf_forward_diffuse,
    rf_invert_step,
)


def _round_trip_error(z0, model, sched):
    trajectory = invert_trajectory(z0, model, sched)
    return l2_relative_error(denoise_loop(trajectory.final, model, sched), z0)


class TestDdimSchedule(unittest.TestCase):
    def test_single_step_schedule(self):
        sched = build_ddim_schedule(1, beta_start=0.02, beta_end=0.02, num_train_steps=1)
        self.assertEqual(sched.alpha_bar[0], 1.0)
        self.assertAlmostEqual(sched.alpha_bar[1], 0.98, places=15)

    def test_defaults_match_cumulative_product(self):
        sched = build_ddim_schedule(50)
        betas = [0.00085 + (0.012 - 0.00085) * i / 999 for i in range(1000)]
        cumulative = []
        product = 1.0
        for beta in betas:
            product *= 1.0 - beta
            cumulative.append(product)
        stride = 1000 // 50
        expected = [1.0] + [cumulative[999 - stride * (50 - j)] for j in range(1, 51)]
        np.testing.assert_allclose(sched.alpha_bar, expected, rtol=0, atol=1e-12)
        self.assertEqual(sched.train_timesteps[-1], 999)

    def test_strictly_decreasing(self):
        for steps in (1, 7, 15, 50, 1000):
            alpha_bar = build_ddim_schedule(steps).alpha_bar
            self.assertTrue(all(b < a for a, b in zip(alpha_bar, alpha_bar[1:])))
            self.assertGreater(alpha_bar[-1], 0.0)

    def test_invalid_ranges(self):
        with self.assertRaises(ScheduleError):
            build_ddim_schedule(10, beta_start=0.02, beta_end=0.01)
        with self.assertRaises(ScheduleError):
            build_ddim_schedule(10, beta_start=0.0)
        with self.assertRaises(ScheduleError):
            build_ddim_schedule(0)
        with self.assertRaises(ScheduleError):
            build_ddim_schedule(11, num_train_steps=10)

    def test_schedule_validation(self):
        with self.assertRaises(ScheduleError):
            DdimSchedule(alpha_bar=(0.9, 0.5))
        with self.assertRaises(ScheduleError):
            DdimSchedule(alpha_bar=(1.0, 0.5, 0.5))

    def test_schedule_error_is_value_error(self):
        with self.assertRaises(ValueError):
            build_ddim_schedule(0)


class TestRfSchedule(unittest.TestCase):
    def test_uniform_grid(self):
        sched = build_rf_schedule(4)
        self.assertEqual(sched.timesteps, (0.0, 0.25, 0.5, 0.75, 1.0))

    def test_shift_keeps_endpoints_and_order(self):
        sched = build_rf_schedule(8, shift=3.0)
        self.assertEqual(sched.timesteps[0], 0.0)
        self.assertEqual(sched.timesteps[-1], 1.0)
        self.assertTrue(all(b > a for a, b in zip(sched.timesteps, sched.timesteps[1:])))
        self.assertAlmostEqual(sched.timesteps[4], 3.0 * 0.5 / (1.0 + 2.0 * 0.5))

    def test_rejects_non_monotone(self):
        with self.assertRaises(ScheduleError):
            RfSchedule(timesteps=(0.0, 0.6, 0.4, 1.0))
        with self.assertRaises(ScheduleError):
            build_rf_schedule(0)


def test_ddim_forward_diffuse_examples():
    sched = DdimSchedule(alpha_bar=(1.0, 0.25))
    z0 = full((1, 1, 1), 2.0)
    eps = full((1, 1, 1), 4.0)
    assert ddim_forward_diffuse(z0, eps, 1, sched).values[0, 0, 0] == pytest.approx(0.5 * 2 + math.sqrt(0.75) * 4)
    assert ddim_forward_diffuse(z0, eps, 0, sched).equals(z0)
    np.testing.assert_allclose(ddim_forward_diffuse(z0, zeros((1, 1, 1)), 1, sched).values, 0.5 * z0.values)


def test_ddim_forward_diffuse_shape_mismatch():
    sched = build_ddim_schedule(5)
    with pytest.raises(ShapeMismatchError):
        ddim_forward_diffuse(zeros((1, 2, 2)), zeros((1, 2, 3)), 1, sched)


def test_ddim_denoise_zero_predictor_rescales(zero_predictor, shape):
    sched = build_ddim_schedule(10)
    z = sample_gaussian(shape, 1)
    out = ddim_denoise_step(z, 4, zero_predictor, sched)
    factor = math.sqrt(sched.alpha_bar[3] / sched.alpha_bar[4])
    np.testing.assert_allclose(out.values, factor * z.values, rtol=1e-15, atol=0)


def test_ddim_denoise_step_rejects_t0(zero_predictor, shape):
    sched = build_ddim_schedule(10)
    with pytest.raises(ScheduleError):
        ddim_denoise_step(zeros(shape), 0, zero_predictor, sched)
    with pytest.raises(ScheduleError):
        ddim_invert_step(zeros(shape), 0, zero_predictor, sched)


def test_ddim_degenerate_coefficients():
    scale, noise = ddim_coefficients(0.4, 0.4)
    assert scale == 1.0
    assert noise == pytest.approx(0.0, abs=1e-15)


def test_ddim_denoise_step_matches_scalar_oracle():
    mu, var = 0.7, 0.3
    mean = full((1, 1, 1), mu)
    model = single_gaussian(mean, var).with_condition(SOURCE)
    sched = build_ddim_schedule(20)
    t = 9
    z = ddim_forward_diffuse(mean, full((1, 1, 1), 1.3), t, sched)

    a_t, a_prev = sched.alpha_bar[t], sched.alpha_bar[t - 1]
    zt = z.values[0, 0, 0]
    z0_hat = mu + math.sqrt(a_t) * var / (a_t * var + 1 - a_t) * (zt - math.sqrt(a_t) * mu)
    eps_hat = (zt - math.sqrt(a_t) * z0_hat) / math.sqrt(1 - a_t)
    expected = (
        math.sqrt(a_prev / a_t) * zt
        + (math.sqrt(1 - a_prev) - math.sqrt((1 - a_t) * a_prev / a_t)) * eps_hat
    )
    out = ddim_denoise_step(z, t, model, sched)
    assert out.values[0, 0, 0] == pytest.approx(expected, abs=1e-12)


def test_ddim_invert_undoes_denoise_for_constant_predictor(constant_predictor, shape):
    sched = build_ddim_schedule(25)
    z = sample_gaussian(shape, 3)
    for t in (1, 2, 12, 25):
        back = ddim_invert_step(ddim_denoise_step(z, t, constant_predictor, sched), t, constant_predictor, sched)
        np.testing.assert_allclose(back.values, z.values, rtol=0, atol=1e-12)


def test_ddim_first_inversion_step_evaluates_at_t(shape):
    class Recording(ConstantPredictor):
        def predict_noise(self, z, t, sched):
            seen.append(t)
            return super().predict_noise(z, t, sched)

    seen = []
    sched = build_ddim_schedule(5)
    model = Recording(zeros(shape))
    invert_trajectory(zeros(shape), model, sched)
    assert seen == [1, 1, 2, 3, 4]


def test_ddim_round_trip_within_tolerance(round_trip_mixture):
    mixture, z0 = round_trip_mixture
    model = mixture.with_condition(SOURCE)
    assert _round_trip_error(z0, model, build_ddim_schedule(50)) <= 1e-2


def test_ddim_round_trip_error_shrinks_with_steps(round_trip_mixture):
    mixture, z0 = round_trip_mixture
    model = mixture.with_condition(SOURCE)
    errors = [_round_trip_error(z0, model, build_ddim_schedule(n)) for n in (10, 25, 50, 100)]
    for coarse, fine in zip(errors, errors[1:]):
        assert fine <= 1.1 * coarse
    assert errors[-1] <= 1.1 * errors[1]


def test_rf_forward_diffuse_examples():
    z0 = full((1, 1, 1), 2.0)
    eps = full((1, 1, 1), 4.0)
    assert rf_forward_diffuse(z0, eps, 0.0).equals(z0)
    assert rf_forward_diffuse(z0, eps, 1.0).equals(eps)
    assert rf_forward_diffuse(z0, eps, 0.5).values[0, 0, 0] == pytest.approx(3.0)
    with pytest.raises(ScheduleError):
        rf_forward_diffuse(z0, eps, 1.5)


def test_rf_steps_reject_bad_interval(zero_predictor, shape):
    z = zeros(shape)
    with pytest.raises(ScheduleError):
        rf_denoise_step(z, 0.3, 0.5, zero_predictor)
    with pytest.raises(ScheduleError):
        rf_invert_step(z, 0.5, 0.5, zero_predictor)


def test_rf_zero_velocity_keeps_latent(zero_predictor, shape):
    z = sample_gaussian(shape, 4)
    assert rf_denoise_step(z, 0.5, 0.25, zero_predictor).equals(z)
    assert rf_invert_step(z, 0.5, 0.25, zero_predictor).equals(z)


def test_rf_constant_field_integrates_exactly(shape):
    c = sample_gaussian(shape, 8)
    model = ConstantPredictor(c)
    z1 = sample_gaussian(shape, 9)
    sched = build_rf_schedule(7)
    z0 = denoise_loop(z1, model, sched)
    np.testing.assert_allclose(z0.values, (z1 - c).values, rtol=0, atol=1e-12)

    trajectory = invert_trajectory(z0, model, sched)
    back = denoise_loop(trajectory.final, model, sched)
    np.testing.assert_allclose(back.values, z0.values, rtol=0, atol=1e-12)


def test_rf_first_inversion_step_evaluates_at_t_i(shape):
    class Recording(ConstantPredictor):
        def predict_velocity(self, z, t):
            seen.append(t)
            return super().predict_velocity(z, t)

    seen = []
    invert_trajectory(zeros(shape), Recording(zeros(shape)), build_rf_schedule(4))
    assert seen == [0.25, 0.25, 0.5, 0.75]


def test_rf_round_trip_is_first_order(gaussian_rf):
    mixture, _, z0 = gaussian_rf
    model = mixture.with_condition(SOURCE)
    coarse = _round_trip_error(z0, model, build_rf_schedule(28))
    fine = _round_trip_error(z0, model, build_rf_schedule(56))
    assert coarse <= 2e-2
    assert 0.4 <= fine / coarse <= 0.6


def test_rf_denoise_converges_to_exact_flow(gaussian_rf):
    mixture, mean, _ = gaussian_rf
    model = mixture.with_condition(SOURCE)
    z1 = sample_gaussian(mean.shape, 31)
    # Exact flow of a Gaussian from noise z1 to t = 0: mu + sigma * z1.
    exact = mean + z1.scale(0.5)
    err_coarse = l2_relative_error(denoise_loop(z1, model, build_rf_schedule(32)), exact)
    err_fine = l2_relative_error(denoise_loop(z1, model, build_rf_schedule(64)), exact)
    assert err_fine < err_coarse


def test_single_gaussian_ddim_sampling_reaches_data(shape):
    mean = sample_gaussian(shape, 12).scale(3.0)
    model = single_gaussian(mean, 0.04).with_condition(SOURCE)
    z0 = denoise_loop(sample_gaussian(shape, 13), model, build_ddim_schedule(50))
    rms = np.sqrt(np.mean((z0.values - mean.values) ** 2))
    assert rms <= 3 * 0.2


def test_invert_trajectory_single_step(zero_predictor, shape):
    z0 = sample_gaussian(shape, 2)
    sched = build_ddim_schedule(1)
    trajectory = invert_trajectory(z0, zero_predictor, sched)
    assert len(trajectory) == 2
    assert trajectory[0].equals(z0)
    assert trajectory.final.equals(ddim_invert_step(z0, 1, zero_predictor, sched))


def test_invert_trajectory_counts_one_call_per_step(localized_scenario):
    sched = build_ddim_schedule(15)
    model = CountingDenoiser(localized_scenario.denoiser.with_condition(SOURCE))
    trajectory = invert_trajectory(localized_scenario.z0_source, model, sched)
    assert len(trajectory) == 16
    assert model.calls == 15
    ratio = trajectory.final.l2_norm() / math.sqrt(trajectory.shape.size)
    assert 0.5 <= ratio <= 2.0


def test_generic_dispatch_matches_sampler_steps(constant_predictor, shape):
    z = sample_gaussian(shape, 6)
    ddim = build_ddim_schedule(10)
    assert denoise_step(z, 3, constant_predictor, ddim).equals(ddim_denoise_step(z, 3, constant_predictor, ddim))
    assert invert_step(z, 3, constant_predictor, ddim).equals(ddim_invert_step(z, 3, constant_predictor, ddim))
    rf = build_rf_schedule(10)
    assert denoise_step(z, 3, constant_predictor, rf).equals(rf_denoise_step(z, rf.timesteps[3], rf.timesteps[2], constant_predictor))
    with pytest.raises(ScheduleError):
        denoise_step(z, 0, constant_predictor, rf)


def test_denoise_loop_hook_sees_every_level(zero_predictor, shape):
    seen = []

    def hook(index, z):
        seen.append(index)
        return z

    denoise_loop(zeros(shape), zero_predictor, build_rf_schedule(5), on_step=hook)
    assert seen == [4, 3, 2, 1, 0]


def test_noise_level():
    ddim = build_ddim_schedule(10)
    assert noise_level(ddim, 0) == 0.0
    assert noise_level(ddim, 10) == pytest.approx(1.0 - ddim.alpha_bar[10])
    assert noise_level(build_rf_schedule(4), 2) == 0.5


def test_latent_grid_constructed_from_nested_lists():
    grid = LatentGrid([[[1.0, 2.0]]])
    assert grid.shape.as_tuple() == (1, 1, 2)
