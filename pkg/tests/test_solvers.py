"""Tests for the transceiver power-allocation solvers."""

import numpy as np
import pytest

from iseasim.solvers import (
    FdmInstance,
    TdmInstance,
    baseline_channel_inversion,
    baseline_equal,
    brute_force_oracle,
    design_md,
    design_mse,
    fdm_md_optimal,
    fdm_mse_dual,
    mse_min_over_rx,
    random_fdm_instance,
    random_tdm_instance,
    rx_mse_optimal,
    solve,
    tdm_md_optimal,
    tdm_mse_optimal,
)
from iseasim.validation import ValidationError


def rel_gap(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


class TestInstanceValidation:
    def test_tdm_requires_positive_data(self):
        with pytest.raises(ValidationError):
            TdmInstance(gains=[1.0, 0.0], budgets=[1.0, 1.0],
                        moments=[1.0, 1.0], est_vars=[1.0, 1.0], noise_var=0.1)

    def test_tdm_allows_zero_noise_and_delta(self):
        TdmInstance(gains=[1.0], budgets=[1.0], moments=[1.0],
                    est_vars=[1.0], noise_var=0.0, delta=0.0)

    def test_fdm_requires_positive_noise(self):
        with pytest.raises(ValidationError):
            FdmInstance(gains=np.ones((1, 2)), budgets=[1.0],
                        moments=np.ones((1, 2)), est_vars=np.ones((1, 2)),
                        noise_var=0.0)


class TestTdmMseOptimal:
    def test_single_device_closed_form(self):
        h, P, nu2, sv, noise = 1.3, 2.0, 0.8, 0.5, 0.1
        inst = TdmInstance(gains=[h], budgets=[P], moments=[nu2],
                           est_vars=[sv], noise_var=noise)
        rep = tdm_mse_optimal(inst)
        b_full = np.sqrt(P / nu2)
        a_expected = h * sv * b_full / (h * h * sv * b_full ** 2 + noise)
        assert rep.design.tx[0, 0] == pytest.approx(b_full)
        assert rep.design.rx[0] == pytest.approx(a_expected)

    def test_noiseless_reaches_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            inst = random_tdm_instance(rng, 3)
            inst = TdmInstance(gains=inst.gains, budgets=inst.budgets,
                               moments=inst.moments, est_vars=inst.est_vars,
                               noise_var=0.0, delta=inst.delta)
            assert tdm_mse_optimal(inst).objective <= 1e-12

    def test_reference_instance_matches_oracle(self):
        inst = TdmInstance(gains=[1.0, 0.6, 0.3], budgets=np.ones(3),
                           moments=np.ones(3), est_vars=np.ones(3),
                           noise_var=0.1)
        rep = tdm_mse_optimal(inst)
        oracle = brute_force_oracle(inst, "mse", grid_resolution=21)
        assert rel_gap(rep.objective, oracle.objective) < 1e-3

    def test_threshold_partition_is_monotone(self):
        # full-power devices must have weaker effective links than
        # inverting devices
        rng = np.random.default_rng(1)
        for _ in range(50):
            inst = random_tdm_instance(rng, int(rng.integers(2, 5)))
            rep = tdm_mse_optimal(inst)
            u = inst.gains * np.sqrt(inst.budgets / inst.moments)
            full = np.array(rep.extras["full_power"])
            if full.any() and (~full).any():
                assert u[full].max() <= u[~full].min() + 1e-9


class TestTdmMdOptimal:
    def test_single_device_full_power(self):
        inst = TdmInstance(gains=[0.9], budgets=[1.5], moments=[1.2],
                           est_vars=[0.7], noise_var=0.2, delta=2.0)
        rep = tdm_md_optimal(inst)
        assert rep.design.tx[0, 0] == pytest.approx(np.sqrt(1.5 / 1.2))

    def test_equal_links_all_full_power(self):
        # 1-D oracle over the common cap value
        K = 4
        inst = TdmInstance(gains=np.full(K, 1.1), budgets=np.full(K, 2.0),
                           moments=np.full(K, 1.0), est_vars=np.full(K, 0.5),
                           noise_var=0.3, delta=1.0)
        rep = tdm_md_optimal(inst)
        b_full = np.sqrt(2.0 / 1.0)
        np.testing.assert_allclose(rep.design.tx[:, 0], b_full, rtol=1e-12)
        u = 1.1 * b_full
        caps = np.linspace(0.0, u, 2000)
        vals = []
        for tau in caps:
            c = np.minimum(np.full(K, u), tau)
            vals.append(c.sum() ** 2 / (np.sum(c * c) + 0.3 / 0.5))
        assert rep.extras["tau"] >= caps[int(np.argmax(vals))] - 1e-6

    def test_random_instances_match_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            inst = random_tdm_instance(rng, 3, homogeneous_vars=True)
            rep = tdm_md_optimal(inst)
            oracle = brute_force_oracle(inst, "md", grid_resolution=17)
            assert rel_gap(rep.objective, oracle.objective) < 1e-3

    def test_heterogeneous_vars_rejected(self):
        inst = TdmInstance(gains=[1.0, 1.0], budgets=[1.0, 1.0],
                           moments=[1.0, 1.0], est_vars=[0.5, 0.9],
                           noise_var=0.1, delta=1.0)
        with pytest.raises(ValidationError, match="brute_force_oracle"):
            tdm_md_optimal(inst)

    def test_zero_delta_rejected(self):
        inst = TdmInstance(gains=[1.0], budgets=[1.0], moments=[1.0],
                           est_vars=[1.0], noise_var=0.1, delta=0.0)
        with pytest.raises(ValidationError):
            tdm_md_optimal(inst)


class TestTdmEquivalence:
    def test_designs_achieve_identical_metrics(self):
        # homogeneous estimate variances: the MSE-optimal and MD-optimal
        # per-slot designs induce the same MSE and the same MD
        rng = np.random.default_rng(3)
        for _ in range(50):
            inst = random_tdm_instance(rng, int(rng.integers(1, 4)),
                                       homogeneous_vars=True)
            if inst.delta <= 0:
                continue
            rep_mse = tdm_mse_optimal(inst)
            rep_md = tdm_md_optimal(inst)
            assert rel_gap(design_mse(inst, rep_md.design), rep_mse.objective) < 1e-6
            assert rel_gap(design_md(inst, rep_mse.design), rep_md.objective) < 1e-6


class TestFdmMseDual:
    def test_single_subcarrier_matches_tdm(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            ti = random_tdm_instance(rng, 3)
            fi = FdmInstance(gains=ti.gains[:, None], budgets=ti.budgets,
                             moments=ti.moments[:, None],
                             est_vars=ti.est_vars[:, None],
                             noise_var=max(ti.noise_var, 1e-3),
                             delta=np.array([max(ti.delta, 0.1)]))
            ti2 = TdmInstance(gains=ti.gains, budgets=ti.budgets,
                              moments=ti.moments, est_vars=ti.est_vars,
                              noise_var=max(ti.noise_var, 1e-3),
                              delta=max(ti.delta, 0.1))
            rep_f = fdm_mse_dual(fi)
            rep_t = tdm_mse_optimal(ti2)
            assert rel_gap(rep_f.objective, rep_t.objective) < 1e-4

    def test_flat_symmetric_instance_splits_evenly(self):
        K, N = 2, 3
        inst = FdmInstance(gains=np.full((K, N), 1.2), budgets=np.full(K, 1.5),
                           moments=np.full((K, N), 0.8),
                           est_vars=np.full((K, N), 0.4), noise_var=0.2,
                           delta=np.full(N, 1.0))
        rep = fdm_mse_dual(inst)
        power = inst.moments * rep.design.tx ** 2
        spread = power.max(axis=1) - power.min(axis=1)
        np.testing.assert_array_less(spread, 1e-6 * power.max())

    def test_random_instances_match_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(15):
            inst = random_fdm_instance(rng, 2, 2)
            rep = fdm_mse_dual(inst)
            oracle = brute_force_oracle(inst, "mse")
            assert rel_gap(rep.objective, oracle.objective) < 1e-3
            assert rep.kkt_residual <= 1e-6

    def test_duality_gap_reported_small(self):
        rng = np.random.default_rng(6)
        inst = random_fdm_instance(rng, 3, 2)
        rep = fdm_mse_dual(inst)
        assert rep.extras["dual_value"] <= rep.objective + 1e-9
        assert rep.extras["duality_gap"] < 1e-3 * max(rep.objective, 1e-9)


class TestFdmMdOptimal:
    def test_single_subcarrier_matches_tdm(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            ti = random_tdm_instance(rng, 3, homogeneous_vars=True)
            noise = max(ti.noise_var, 1e-3)
            delta = max(ti.delta, 0.1)
            fi = FdmInstance(gains=ti.gains[:, None], budgets=ti.budgets,
                             moments=ti.moments[:, None],
                             est_vars=ti.est_vars[:, None],
                             noise_var=noise, delta=np.array([delta]))
            ti2 = TdmInstance(gains=ti.gains, budgets=ti.budgets,
                              moments=ti.moments, est_vars=ti.est_vars,
                              noise_var=noise, delta=delta)
            assert rel_gap(fdm_md_optimal(fi).objective,
                           tdm_md_optimal(ti2).objective) < 1e-4

    def test_single_device_matches_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            inst = random_fdm_instance(rng, 1, 2)
            rep = fdm_md_optimal(inst)
            oracle = brute_force_oracle(inst, "md")
            assert rel_gap(rep.objective, oracle.objective) < 1e-3

    def test_uniform_delta_flat_channel_splits_evenly(self):
        K, N = 3, 2
        inst = FdmInstance(gains=np.full((K, N), 0.9), budgets=np.full(K, 2.0),
                           moments=np.full((K, N), 1.1),
                           est_vars=np.full((K, N), 0.6), noise_var=0.15,
                           delta=np.full(N, 2.0))
        rep = fdm_md_optimal(inst)
        power = inst.moments * rep.design.tx ** 2
        spread = power.max(axis=1) - power.min(axis=1)
        np.testing.assert_array_less(spread, 1e-6 * power.max())

    def test_zero_delta_subcarrier_gets_zero_power(self):
        inst = FdmInstance(gains=np.ones((2, 2)), budgets=np.ones(2),
                           moments=np.ones((2, 2)), est_vars=np.full((2, 2), 0.5),
                           noise_var=0.1, delta=np.array([1.0, 0.0]))
        rep = fdm_md_optimal(inst)
        np.testing.assert_array_equal(rep.design.tx[:, 1], 0.0)

    def test_z_consistency_within_tolerance(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            inst = random_fdm_instance(rng, 2, 2)
            rep = fdm_md_optimal(inst)
            assert rep.extras["z_consistency"] <= 1e-8

    def test_all_zero_delta_rejected(self):
        inst = FdmInstance(gains=np.ones((1, 1)), budgets=[1.0],
                           moments=np.ones((1, 1)), est_vars=np.ones((1, 1)),
                           noise_var=0.1, delta=np.array([0.0]))
        with pytest.raises(ValidationError):
            fdm_md_optimal(inst)


class TestBaselines:
    def test_equal_meets_power_exactly(self):
        rng = np.random.default_rng(10)
        inst = random_fdm_instance(rng, 3, 2)
        design = baseline_equal(inst)
        np.testing.assert_allclose(design.device_power(), inst.budgets,
                                   rtol=1e-12)

    def test_equal_single_subcarrier_is_full_power(self):
        rng = np.random.default_rng(11)
        inst = random_fdm_instance(rng, 2, 1)
        design = baseline_equal(inst)
        np.testing.assert_allclose(design.tx[:, 0],
                                   np.sqrt(inst.budgets / inst.moments[:, 0]))

    def test_equal_never_beats_the_mse_solver(self):
        rng = np.random.default_rng(12)
        for _ in range(30):
            inst = random_fdm_instance(rng, int(rng.integers(1, 4)),
                                       int(rng.integers(1, 3)))
            mse_equal = design_mse(inst, baseline_equal(inst))
            mse_opt = fdm_mse_dual(inst).objective
            assert mse_opt <= mse_equal * (1 + 1e-9)

    def test_inversion_branches(self):
        strong = FdmInstance(gains=np.full((1, 2), 50.0), budgets=[1.0],
                             moments=np.ones((1, 2)), est_vars=np.ones((1, 2)),
                             noise_var=0.1, delta=np.ones(2))
        design = baseline_channel_inversion(strong)
        np.testing.assert_allclose(design.tx, 1.0 / 50.0)
        weak = FdmInstance(gains=np.full((1, 2), 0.01), budgets=[1.0],
                           moments=np.ones((1, 2)), est_vars=np.ones((1, 2)),
                           noise_var=0.1, delta=np.ones(2))
        design = baseline_channel_inversion(weak)
        np.testing.assert_allclose(design.tx, np.sqrt(0.5))

    def test_inversion_never_violates_power(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            inst = random_fdm_instance(rng, 3, 2)
            design = baseline_channel_inversion(inst)
            assert np.all(design.device_power() <= inst.budgets * (1 + 1e-9))


class TestFdmDominance:
    def test_objective_ordering_between_designs(self):
        rng = np.random.default_rng(14)
        for _ in range(25):
            inst = random_fdm_instance(rng, int(rng.integers(1, 4)),
                                       int(rng.integers(1, 3)))
            rep_c = fdm_mse_dual(inst)
            rep_d = fdm_md_optimal(inst)
            assert design_mse(inst, rep_c.design) \
                <= design_mse(inst, rep_d.design) * (1 + 1e-6)
            assert design_md(inst, rep_d.design) \
                >= design_md(inst, rep_c.design) * (1 - 1e-6)


class TestBruteForceOracle:
    def test_single_variable_convex_instance(self):
        inst = TdmInstance(gains=[1.0], budgets=[1.0], moments=[1.0],
                           est_vars=[1.0], noise_var=0.2, delta=1.0)
        rep = tdm_mse_optimal(inst)
        oracle = brute_force_oracle(inst, "mse", grid_resolution=15)
        assert rel_gap(oracle.objective, rep.objective) < 1e-6

    def test_never_better_than_proven_optimum(self):
        rng = np.random.default_rng(15)
        for _ in range(100):
            inst = random_tdm_instance(rng, int(rng.integers(1, 4)))
            rep = tdm_mse_optimal(inst)
            oracle = brute_force_oracle(inst, "mse")
            assert oracle.objective >= rep.objective * (1 - 1e-3) - 1e-12

    def test_deterministic(self):
        rng = np.random.default_rng(16)
        inst = random_fdm_instance(rng, 2, 2)
        a = brute_force_oracle(inst, "mse")
        b = brute_force_oracle(inst, "mse")
        assert a.objective == b.objective
        np.testing.assert_array_equal(a.design.tx, b.design.tx)

    def test_dimension_limit(self):
        rng = np.random.default_rng(17)
        inst = random_fdm_instance(rng, 4, 2)
        with pytest.raises(ValidationError, match="6 free"):
            brute_force_oracle(inst, "mse")

    def test_bad_objective_rejected(self):
        rng = np.random.default_rng(18)
        inst = random_fdm_instance(rng, 2, 2)
        with pytest.raises(ValidationError):
            brute_force_oracle(inst, "snr")


class TestFeasibilityInvariant:
    def test_every_solver_returns_feasible_designs(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            fi = random_fdm_instance(rng, int(rng.integers(1, 4)),
                                     int(rng.integers(1, 3)))
            for name in ("fdm_mse", "fdm_md", "equal", "channel_inversion"):
                report = solve(fi, name)
                used = report.design.device_power()
                assert np.all(used <= fi.budgets * (1 + 1e-9))
            ti = random_tdm_instance(rng, int(rng.integers(1, 4)),
                                     homogeneous_vars=True)
            for name in ("tdm_mse", "tdm_md"):
                report = solve(ti, name)
                used = report.design.device_power()
                assert np.all(used <= ti.budgets * (1 + 1e-9))

    def test_unknown_solver_rejected(self):
        rng = np.random.default_rng(20)
        with pytest.raises(ValidationError):
            solve(random_fdm_instance(rng, 1, 1), "genie")


class TestRxHelpers:
    def test_rx_rule_minimizes_the_per_subcarrier_mse(self):
        rng = np.random.default_rng(21)
        inst = random_fdm_instance(rng, 3, 2)
        tx = np.sqrt(inst.budgets[:, None] / (2 * inst.moments)) * 0.7
        rx = rx_mse_optimal(inst, tx)

        def total(rx_vec):
            mis = rx_vec[None, :] * inst.gains * tx - 1.0
            return float(np.sum(mis * mis * inst.est_vars)
                         + np.sum(rx_vec ** 2) * inst.noise_var)
        best = total(rx)
        for bump in (0.99, 1.01):
            assert total(rx * bump) >= best - 1e-12
        assert total(rx) == pytest.approx(mse_min_over_rx(inst, tx), rel=1e-12)

    def test_solve_report_serialization(self, tmp_path):
        rng = np.random.default_rng(22)
        inst = random_fdm_instance(rng, 2, 2)
        rep = fdm_mse_dual(inst)
        path = tmp_path / "report.json"
        rep.save(path)
        import json
        doc = json.loads(path.read_text())
        assert doc["objective"] == rep.objective
        assert doc["converged"] is True
