"""Simulation-laboratory tests: generators, scoring, replication loop."""

import numpy as np
import pandas as pd
import pytest

from spatialmt import (
    GroundTruth,
    NOISE_KERNELS,
    SetupConfig,
    evaluate,
    generate_setup,
    run_replications,
    sample_gp,
)


def cfg_1d(setup="I", m=301, **kwargs):
    base = dict(setup=setup, sparsity="sparse", gamma=3.0, noise="weak",
                m=m, reps=1, seed=42)
    base.update(kwargs)
    return SetupConfig(**base)


class TestConfigAndTruth:
    @pytest.mark.parametrize("kwargs", [
        {"setup": "VI"},
        {"sparsity": "loose"},
        {"noise": "none"},
        {"m": 5},
        {"reps": 0},
        {"gamma": 0.0},
    ])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            cfg_1d(**kwargs)

    def test_truth_defaults_theta_to_positive_mean(self):
        truth = GroundTruth(np.array([-1.0, 0.0, 2.0]))
        assert truth.theta.tolist() == [False, False, True]

    def test_square_m_required_in_2d(self):
        with pytest.raises(ValueError, match="square"):
            generate_setup(cfg_1d(setup="IV", m=90))


class TestGenerators:
    def test_reproducible(self):
        for setup, m in (("I", 100), ("III", 100), ("IV", 100),
                         ("ozone", 40)):
            a = generate_setup(cfg_1d(setup=setup, m=m))
            b = generate_setup(cfg_1d(setup=setup, m=m))
            assert np.array_equal(a[1], b[1])
            assert np.array_equal(a[2].mu, b[2].mu)
            c = generate_setup(cfg_1d(setup=setup, m=m, seed=43))
            assert not np.array_equal(a[1], c[1])

    def test_setup_i_profile(self):
        domain, obs, truth = generate_setup(cfg_1d())
        x = domain.coords[:, 0]
        assert obs.shape == (1, 301)
        # single bump of radius 1 at 15, unit peak scaled by gamma
        assert truth.mu[x == 15.0] == pytest.approx(3.0)
        assert np.all(truth.mu[np.abs(x - 15.0) >= 1.0] == 0.0)
        assert truth.mu.max() == pytest.approx(3.0)
        dense = generate_setup(cfg_1d(sparsity="dense"))[2]
        assert dense.theta.sum() > truth.theta.sum()

    def test_setup_ii_signal_drawn_before_noise(self):
        lo = generate_setup(cfg_1d(setup="II", gamma=1.0))
        hi = generate_setup(cfg_1d(setup="II", gamma=4.0))
        assert np.array_equal(lo[2].theta, hi[2].theta)
        # same seed, same noise: observations differ by the mean shift only
        want = 3.0 * lo[2].theta.astype(float)
        assert np.allclose(hi[1] - lo[1], want)

    def test_setup_iii_mixed_signs(self):
        truth = generate_setup(cfg_1d(setup="III", sparsity="medium"))[2]
        assert 0 < truth.theta.sum() < truth.theta.size

    def test_setup_iv_cluster_rates(self):
        # exactly one grid point of the 10x10 layout falls in the disk
        domain = generate_setup(cfg_1d(setup="IV", m=100))[0]
        d2 = np.sum((domain.coords - 0.5) ** 2, axis=1)
        inside = d2 <= 0.25 ** 2
        assert inside.sum() == 1
        hits_in, hits_out, n = 0, 0, 250
        for seed in range(n):
            truth = generate_setup(cfg_1d(setup="IV", m=100,
                                          seed=1000 + seed))[2]
            hits_in += int(truth.theta[inside][0])
            hits_out += int(truth.theta[~inside].sum())
        assert 0.82 < hits_in / n < 0.97
        assert hits_out / (n * 99) < 0.03

    def test_setup_v_smooth_and_dense_composition(self):
        medium = generate_setup(cfg_1d(setup="V", m=100,
                                       sparsity="medium"))[2]
        again = generate_setup(cfg_1d(setup="V", m=100, sparsity="medium",
                                      seed=7))[2]
        # the smooth field is deterministic
        assert np.array_equal(medium.mu, again.mu)
        dense = generate_setup(cfg_1d(setup="V", m=100,
                                      sparsity="dense"))[2]
        assert np.all(dense.mu >= medium.mu - 1e-12)

    def test_ozone_panel(self):
        domain, obs, truth = generate_setup(cfg_1d(setup="ozone", m=40),
                                            beta0=0.3)
        assert obs.shape == (12, 40)
        # layout is frozen; only the noise follows the seed
        domain2, obs2, _ = generate_setup(cfg_1d(setup="ozone", m=40,
                                                 seed=9), beta0=0.3)
        assert np.array_equal(domain.coords, domain2.coords)
        assert not np.array_equal(obs, obs2)
        # beta0 shifts every declared trend by the same amount
        truth4 = generate_setup(cfg_1d(setup="ozone", m=40),
                                beta0=0.4)[2]
        assert np.allclose(truth.mu - truth4.mu, 0.1)
        # outside both trend clusters the slope is exactly zero
        far = np.min([np.hypot(domain.coords[:, 0] - cx,
                               domain.coords[:, 1] - cy)
                      for cx, cy, _ in ((1.4, 1.6, 0), (3.4, 3.2, 0))],
                     axis=0) >= 1.6
        assert far.any()
        assert np.all(truth.mu[far] == -0.3)
        assert np.array_equal(truth.theta, truth.mu > 0)
        assert truth.theta.sum() > 0

    def test_sample_gp_moments(self):
        # grid spacing 0.1 against range 0.2: neighbor correlation ~0.47
        domain = generate_setup(cfg_1d(m=301))[0]
        draws = np.stack([sample_gp(NOISE_KERNELS["strong"], domain, s)
                          for s in range(300)])
        cov = np.cov(draws.T)
        assert abs(np.diag(cov).mean() - 1.0) < 0.05
        nn = np.diag(cov, k=1).mean()
        assert 0.3 < nn < 0.62


class TestEvaluate:
    def test_hand_values(self):
        truth = GroundTruth(np.array([1.0, -1.0, 1.0, -1.0]))
        fdp, power = evaluate(np.array([True, True, False, False]), truth)
        assert fdp == 0.5 and power == 0.5

    def test_empty_mask(self):
        truth = GroundTruth(np.array([1.0, -1.0]))
        assert evaluate(np.zeros(2, dtype=bool), truth) == (0.0, 0.0)

    def test_no_signals_power_is_nan(self):
        truth = GroundTruth(np.array([-1.0, -1.0]))
        fdp, power = evaluate(np.array([True, False]), truth)
        assert fdp == 1.0 and np.isnan(power)


class TestRunReplications:
    def run(self, **kwargs):
        base = dict(cfg=cfg_1d(m=150, gamma=4.0, reps=3, seed=11),
                    procedures=("bh", "st", "2d-st"), q=0.1)
        base.update(kwargs)
        return run_replications(**base)

    def test_shapes_and_matched_counts(self):
        summary, rec = self.run()
        assert len(rec) == 9
        assert set(rec["procedure"]) == {"bh", "st", "2d-st"}
        assert len(summary) == 9
        assert set(summary["metric"]) == {"fdp", "power", "n_rejected"}
        two_d = rec[rec["procedure"] == "2d-st"]
        assert np.isfinite(two_d["n_rejected_1d_init"]).all()
        # the matched initializer can only be improved upon
        assert (two_d["n_rejected"]
                >= two_d["n_rejected_1d_init"]).all()
        st_rows = rec[rec["procedure"] == "st"]
        assert st_rows["n_rejected_1d_init"].isna().all()
        assert ((rec["fdp"] >= 0) & (rec["fdp"] <= 1)).all()

    def test_replicate_seeds_are_xor_offsets(self):
        _, rec = self.run()
        _, only = self.run(cfg=cfg_1d(m=150, gamma=4.0, reps=1,
                                      seed=11 ^ 2))
        a = rec[rec["rep"] == 2].reset_index(drop=True)
        b = only.copy()
        b["rep"] = 2
        pd.testing.assert_frame_equal(a, b)

    def test_threads_match_serial(self):
        serial_summary, serial_rec = self.run()
        thread_summary, thread_rec = self.run(threads=2)
        pd.testing.assert_frame_equal(serial_rec, thread_rec)
        pd.testing.assert_frame_equal(serial_summary, thread_summary)

    def test_unknown_procedure_rejected(self):
        with pytest.raises(ValueError, match="unknown procedures"):
            self.run(procedures=("bh", "mystery"))

    def test_failure_policy(self):
        # kappa larger than the domain breaks every replicate
        with pytest.raises(RuntimeError, match="replicates failed"):
            self.run(kappa=500)

    def test_grouped_procedures_smoke(self):
        summary, rec = self.run(procedures=("sabha", "2d-sa", "gbh",
                                            "2d-gbh"),
                                cfg=cfg_1d(m=150, gamma=4.0, reps=2,
                                           seed=3))
        assert len(rec) == 8
        assert np.isfinite(
            summary[summary["metric"] == "n_rejected"]["mean"]).all()
