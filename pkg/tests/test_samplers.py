import numpy as np
import pytest

from bddm import ConfigurationError
from bddm.denoisers import DenoiserSpec, denoise_nonblind
from bddm.mixture import GaussianMixture, sample
from bddm.noise_posterior import NoisePrior
from bddm.presets import gaussian_model, two_component_mixture
from bddm.samplers import (
    AdaptiveDiffusion,
    SamplerConfig,
    Trajectory,
    matched_pair,
    run_blind,
    run_blind_batch,
    run_nonblind_ve,
)
from bddm.schedules import DiffusionSchedule, ExplicitSchedule

PRIOR = NoisePrior.flat(0.002, 10.0)


def blind_mle_spec(model):
    return DenoiserSpec.analytic_blind_mle(model, PRIOR)


class TestRunBlind:
    def test_point_mass_single_step(self):
        model = GaussianMixture.from_covariance([1.0], [np.zeros(6)], np.zeros((6, 6)), 1)
        cfg = SamplerConfig(
            step_size=1.0, sigma_max=2.0, sigma_min=0.05, integrator="euler", diffusion=None, seed=3
        )
        traj = run_blind(blind_mle_spec(model), cfg)
        assert traj.n_steps == 1
        np.testing.assert_allclose(traj.states[1], np.zeros(6), atol=1e-12)
        assert traj.terminated_by == "sigma_min_reached"

    def test_schedule_tracking(self, mixture_d500):
        spec = blind_mle_spec(mixture_d500)
        sched = DiffusionSchedule.proportional(0.5, 4.0)
        gaps = []
        for i in range(20):
            cfg = SamplerConfig(
                step_size=0.5, sigma_max=4.0, sigma_min=0.05,
                integrator="exp_euler", diffusion=sched, seed=500 + i,
            )
            traj = run_blind(spec, cfg)
            target = 4.0 * np.exp(-0.5 * traj.times)
            mask = traj.sigma_hats >= 0.1
            gaps.append(np.abs(traj.sigma_hats[mask] - target[mask]) / target[mask])
        assert np.median(np.concatenate(gaps)) <= 0.1

    def test_mixture_hit_ratio(self, mixture_d500):
        spec = blind_mle_spec(mixture_d500)
        cfg = SamplerConfig(
            step_size=0.3, sigma_max=4.0, sigma_min=0.05, integrator="euler", diffusion=None, seed=60
        )
        out = run_blind_batch(spec, cfg, 400)
        chart = mixture_d500.support_chart()
        pts = chart.project(out["states"])
        mu = chart.project(mixture_d500.means)
        hits = (np.linalg.norm(pts - mu[1], axis=1) < np.linalg.norm(pts - mu[0], axis=1)).mean()
        assert 0.4 <= hits <= 0.6
        assert np.all(out["terminated_by"] == "sigma_min_reached")

    @pytest.mark.slow
    def test_gaussian_covariance_recovery(self, gaussian_d500):
        # first-order integrator: ~20% covariance deficit at h=0.5, halving with h
        spec = blind_mle_spec(gaussian_d500)
        chart = gaussian_d500.support_chart()
        factor = chart.basis.T @ gaussian_d500.cov_factor
        true_cov = factor @ factor.T
        errs = {}
        for h, n in ((0.5, 6000), (0.25, 6000)):
            cfg = SamplerConfig(
                step_size=h, sigma_max=4.0, sigma_min=0.05,
                integrator="exp_euler", diffusion=AdaptiveDiffusion(0.5), seed=7000,
            )
            out = run_blind_batch(spec, cfg, n)
            emp = np.cov(chart.project(out["states"]).T)
            errs[h] = np.linalg.norm(emp - true_cov) / np.linalg.norm(true_cov)
        assert errs[0.5] <= 0.27
        assert errs[0.25] <= 0.15
        assert errs[0.25] <= 0.8 * errs[0.5]

    def test_max_steps_flagged(self, mixture_d500):
        spec = blind_mle_spec(mixture_d500)
        cfg = SamplerConfig(
            step_size=0.05, sigma_max=4.0, sigma_min=0.01,
            integrator="euler", diffusion=None, max_steps=3, seed=5,
        )
        traj = run_blind(spec, cfg)
        assert traj.terminated_by == "max_steps"
        assert traj.n_steps == 3

    def test_batch_matches_single(self, mixture_d500):
        spec = blind_mle_spec(mixture_d500)
        cfg = SamplerConfig(
            step_size=0.4, sigma_max=4.0, sigma_min=0.05,
            integrator="exp_euler", diffusion=AdaptiveDiffusion(0.5), seed=901,
        )
        out = run_blind_batch(spec, cfg, 3)
        # batched BLAS kernels differ from single-row ones at the last ulp and
        # the flat posterior argmax amplifies that to ~1e-8; both paths are
        # individually bit-deterministic
        for i in range(3):
            single = run_blind(spec, SamplerConfig(
                step_size=0.4, sigma_max=4.0, sigma_min=0.05,
                integrator="exp_euler", diffusion=AdaptiveDiffusion(0.5), seed=901 + i,
            ))
            np.testing.assert_allclose(single.final_state, out["states"][i], atol=1e-5)
            n_est = single.sigma_hats.size
            np.testing.assert_allclose(single.sigma_hats, out["sigma_hats"][i, :n_est], atol=1e-5)

    def test_determinism(self, mixture_d500):
        spec = blind_mle_spec(mixture_d500)
        cfg = SamplerConfig(
            step_size=0.4, sigma_max=4.0, sigma_min=0.05,
            integrator="exp_euler", diffusion=AdaptiveDiffusion(0.5), seed=42,
        )
        t1, t2 = run_blind(spec, cfg), run_blind(spec, cfg)
        np.testing.assert_array_equal(t1.states, t2.states)
        np.testing.assert_array_equal(t1.sigma_hats, t2.sigma_hats)
        np.testing.assert_array_equal(t1.injected, t2.injected)

    def test_rejects_nonblind_denoiser(self, mixture_d500):
        cfg = SamplerConfig(step_size=0.3, sigma_max=4.0, sigma_min=0.05, seed=0)
        with pytest.raises(ConfigurationError):
            run_blind(DenoiserSpec.analytic_nonblind(mixture_d500), cfg)


class TestRunNonblindVe:
    def test_one_step_conjugate_gaussian(self):
        rng = np.random.default_rng(8)
        factor = rng.standard_normal((4, 4)) * 0.6
        cov = factor @ factor.T
        model = GaussianMixture.from_covariance([1.0], [np.ones(4)], cov, 4)
        spec = DenoiserSpec.analytic_nonblind(model)
        s0, s1 = 2.0, 1.2
        cfg = SamplerConfig(step_size=0.1, sigma_max=s0, sigma_min=0.01, seed=17)
        traj = run_nonblind_ve(spec, np.array([s0, s1]), cfg)
        x0 = traj.states[0]
        # independent route: conjugate posterior mean through a dense solve
        post_mean = np.ones(4) + cov @ np.linalg.solve(cov + s0**2 * np.eye(4), x0 - np.ones(4))
        drift = (s0**2 - s1**2) * np.linalg.solve(cov + s0**2 * np.eye(4), post_mean - x0) / 1.0
        score = (post_mean - x0) / s0**2
        expect = x0 + (s0**2 - s1**2) * score + np.sqrt(s0**2 - s1**2) * traj.injected[0]
        np.testing.assert_allclose(traj.states[1], expect, atol=1e-10)

    def test_constant_sequence_is_identity(self, mixture_d500):
        spec = DenoiserSpec.analytic_nonblind(mixture_d500)
        cfg = SamplerConfig(step_size=0.1, sigma_max=2.0, sigma_min=0.01, seed=3)
        traj = run_nonblind_ve(spec, np.array([2.0, 2.0, 2.0]), cfg)
        np.testing.assert_array_equal(traj.states[0], traj.states[1])
        np.testing.assert_array_equal(traj.states[0], traj.states[2])

    def test_residual_exceeds_schedule_mid_run(self, mixture_d500):
        spec = DenoiserSpec.analytic_nonblind(mixture_d500)
        sched = ExplicitSchedule("log_sigma", 100, 0.05, 4.0)
        for seed in range(5):
            cfg = SamplerConfig(step_size=0.2, sigma_max=4.0, sigma_min=0.05, seed=900 + seed)
            traj = run_nonblind_ve(spec, sched, cfg)
            mid = slice(10, 91)
            frac = np.mean(traj.sigma_hats[mid] > traj.sigma_scheduled[mid])
            assert frac >= 0.8

    def test_requires_conditioning(self, mixture_d500):
        cfg = SamplerConfig(step_size=0.2, sigma_max=4.0, sigma_min=0.05, seed=0)
        with pytest.raises(ConfigurationError):
            run_nonblind_ve(blind_mle_spec(mixture_d500), np.array([4.0, 2.0]), cfg)


class TestMatchedPair:
    def test_same_seed_identical_blind_runs(self, mixture_d500):
        spec = blind_mle_spec(mixture_d500)
        cfg = SamplerConfig(
            step_size=0.3, sigma_max=4.0, sigma_min=0.05,
            integrator="euler", diffusion=AdaptiveDiffusion(0.5), seed=77,
        )
        a, b = run_blind(spec, cfg), run_blind(spec, cfg)
        np.testing.assert_array_equal(a.states, b.states)

    def test_shared_noise_stream(self, mixture_d500):
        blind = blind_mle_spec(mixture_d500)
        nonblind = DenoiserSpec.analytic_nonblind(mixture_d500)
        cfg = SamplerConfig(
            step_size=0.3, sigma_max=4.0, sigma_min=0.05,
            integrator="euler", diffusion=AdaptiveDiffusion(0.2), seed=0,
        )
        sched = ExplicitSchedule("log_sigma", 30, 0.05, 4.0)
        bt, nt = matched_pair(blind, cfg, nonblind, sched, shared_seed=424)
        np.testing.assert_array_equal(bt.states[0], nt.states[0])
        k = min(bt.injected.shape[0], nt.injected.shape[0])
        np.testing.assert_array_equal(bt.injected[:k], nt.injected[:k])
        assert bt.seed == nt.seed == 424

    def test_dimension_mismatch_rejected(self, mixture_d500, mixture_d2):
        cfg = SamplerConfig(step_size=0.3, sigma_max=4.0, sigma_min=0.05, seed=0)
        with pytest.raises(ConfigurationError):
            matched_pair(
                blind_mle_spec(mixture_d500),
                cfg,
                DenoiserSpec.analytic_nonblind(mixture_d2),
                ExplicitSchedule("log_sigma", 10, 0.05, 4.0),
                shared_seed=1,
            )

    def test_starting_levels_must_match(self, mixture_d500):
        cfg = SamplerConfig(step_size=0.3, sigma_max=2.0, sigma_min=0.05, seed=0)
        with pytest.raises(ConfigurationError):
            matched_pair(
                blind_mle_spec(mixture_d500),
                cfg,
                DenoiserSpec.analytic_nonblind(mixture_d500),
                ExplicitSchedule("log_sigma", 10, 0.05, 4.0),
                shared_seed=1,
            )


def test_trajectory_validation():
    with pytest.raises(ConfigurationError):
        Trajectory(
            times=np.array([0.0, 1.0]),
            states=np.zeros((3, 2)),
            sigma_hats=np.array([1.0, 0.5]),
            injected=np.zeros((1, 2)),
            terminated_by="sigma_min_reached",
            seed=0,
        )


def test_trajectory_export(tmp_path, mixture_d500):
    from bddm.samplers import dump_states, trajectory_to_csv

    spec = blind_mle_spec(mixture_d500)
    cfg = SamplerConfig(step_size=0.3, sigma_max=4.0, sigma_min=0.05, integrator="euler", seed=12)
    traj = run_blind(spec, cfg)
    csv_path = tmp_path / "traj.csv"
    trajectory_to_csv(traj, csv_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "step,t,sigma_hat,state_norm"
    assert len(lines) == traj.times.size + 1
    bin_path, meta_path = tmp_path / "states.bin", tmp_path / "states.json"
    dump_states(traj, bin_path, meta_path)
    import json

    meta = json.loads(meta_path.read_text())
    arr = np.frombuffer(bin_path.read_bytes(), dtype="<f8").reshape(meta["shape"])
    np.testing.assert_array_equal(arr, traj.states)
