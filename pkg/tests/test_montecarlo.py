import numpy as np
import pytest

from drboot.analysis import ALL_METHODS, METHOD_SANDWICH
from drboot.dgp import CONSTANT, HETEROGENEOUS, DGPConfig
from drboot.montecarlo import (
    CELL_BOTH_CORRECT,
    CELL_OR_MISSPECIFIED,
    STAGE_ESTIMATE,
    STAGE_SHARED_FIT,
    MonteCarloResult,
    run_monte_carlo,
    sandwich_failure_count,
    spec_cell_label,
    standard_grid,
)
from drboot.weighting import Estimand


@pytest.fixture(scope="module")
def small_run() -> MonteCarloResult:
    cells = (
        DGPConfig("1", effect=CONSTANT, N=250),
        DGPConfig("1", effect=CONSTANT, N=250, or_correct=False),
    )
    return run_monte_carlo(
        cells, M=12, R=60, master_seed=5, truth_size=100_000
    )


def results_equal(a: MonteCarloResult, b: MonteCarloResult) -> bool:
    if (a.metrics, a.failures, a.ess, a.truths) != (
        b.metrics, b.failures, b.ess, b.truths
    ):
        return False
    if len(a.propensity) != len(b.propensity):
        return False
    return all(
        p.replicate == q.replicate
        and np.array_equal(p.z, q.z)
        and np.array_equal(p.e_hat, q.e_hat)
        for p, q in zip(a.propensity, b.propensity)
    )


class TestGridHelpers:
    def test_labels(self):
        assert spec_cell_label(True, True) == "both_correct"
        assert spec_cell_label(True, False) == "or_misspecified"
        assert spec_cell_label(False, True) == "ps_misspecified"
        assert spec_cell_label(False, False) == "both_misspecified"

    def test_standard_grid_covers_all_cells(self):
        grid = standard_grid("2", HETEROGENEOUS)
        assert len(grid) == 4
        labels = [spec_cell_label(c.ps_correct, c.or_correct) for c in grid]
        assert len(set(labels)) == 4
        assert all(c.N == 1000 for c in grid)


class TestShape:
    def test_row_counts(self, small_run):
        # 2 cells x 2 estimands x 4 methods
        assert len(small_run.metrics) == 16
        assert len(small_run.ess) == 4
        assert {row.spec_cell for row in small_run.metrics} == {
            CELL_BOTH_CORRECT, CELL_OR_MISSPECIFIED,
        }

    def test_used_plus_failed_is_m(self, small_run):
        for row in small_run.metrics:
            assert row.n_used + row.n_failures == small_run.M

    def test_constant_truth_is_exactly_four(self, small_run):
        assert all(row.truth == 4.0 for row in small_run.metrics)
        assert all(t.value == 4.0 and t.mc_se == 0.0
                   for t in small_run.truths)

    def test_point_metrics_shared_across_method_rows(self, small_run):
        seen = {}
        for row in small_run.metrics:
            key = (row.spec_cell, row.estimand)
            if key in seen:
                assert row.bias_pct == seen[key].bias_pct
                assert row.rmse == seen[key].rmse
                assert row.esd == seen[key].esd
            else:
                seen[key] = row

    def test_rmse_dominates_mean_error(self, small_run):
        for row in small_run.metrics:
            mean_error = row.bias_pct * abs(row.truth) / 100.0
            assert row.rmse >= mean_error - 1e-12

    def test_cp_is_a_fraction(self, small_run):
        for row in small_run.metrics:
            assert 0.0 <= row.cp <= 1.0

    def test_propensity_sample_per_cell(self, small_run):
        assert len(small_run.propensity) == 2
        for sample in small_run.propensity:
            assert sample.e_hat.shape == sample.z.shape
            assert np.all((sample.e_hat > 0.0) & (sample.e_hat < 1.0))
            assert set(np.unique(sample.z)) <= {0, 1}

    def test_cells_sharing_a_design_see_identical_data(self, small_run):
        # both cells fit the same (correct) propensity model on shared
        # replicate data, so their plotting samples must coincide
        first, second = small_run.propensity
        assert first.replicate == second.replicate
        assert np.array_equal(first.z, second.z)
        assert np.array_equal(first.e_hat, second.e_hat)


class TestDeterminism:
    def test_worker_count_does_not_change_results(self):
        kwargs = dict(
            cells=(DGPConfig("1", effect=CONSTANT, N=150),),
            M=4, R=30, master_seed=9, truth_size=100_000,
        )
        assert results_equal(
            run_monte_carlo(workers=1, **kwargs),
            run_monte_carlo(workers=2, **kwargs),
        )

    def test_master_seed_matters(self):
        kwargs = dict(
            cells=(DGPConfig("1", effect=CONSTANT, N=150),),
            methods=(METHOD_SANDWICH,), M=4, R=2, truth_size=100_000,
        )
        a = run_monte_carlo(master_seed=0, **kwargs)
        b = run_monte_carlo(master_seed=1, **kwargs)
        assert a.metrics != b.metrics


class TestRecovery:
    def test_constant_effect_recovered_when_specs_correct(self):
        res = run_monte_carlo(
            (DGPConfig("1", effect=CONSTANT, N=400),),
            M=30, R=80, master_seed=2, truth_size=100_000,
        )
        for row in res.metrics:
            # bias_pct encodes |mean - 4| / 4; the check is a
            # 4 ESD / sqrt(M) band around the truth
            band = 4.0 * row.esd / np.sqrt(row.n_used)
            assert row.bias_pct / 100.0 * 4.0 <= band
            assert row.cp >= 0.8

    def test_reduced_design_shares_base_model_truth(self):
        cells = (
            DGPConfig("5b", effect=HETEROGENEOUS),
            DGPConfig("1", effect=HETEROGENEOUS, N=100),
        )
        res = run_monte_carlo(
            cells, methods=(METHOD_SANDWICH,), M=4, R=2,
            master_seed=1, truth_size=100_000,
        )
        by_key = {(t.model_id, t.estimand): t for t in res.truths}
        for est in (Estimand.ATT, Estimand.ATC):
            assert by_key[("5b", est)].value == by_key[("1", est)].value
            assert by_key[("5b", est)].value != 4.0


class TestFailureAccounting:
    def test_tiny_sample_failures_are_counted_not_raised(self):
        res = run_monte_carlo(
            (DGPConfig("5b"),), methods=(METHOD_SANDWICH,),
            M=120, R=2, master_seed=77, truth_size=100_000,
        )
        att = sandwich_failure_count(res, Estimand.ATT)
        atc = sandwich_failure_count(res, Estimand.ATC)
        assert atc > 0
        assert att < atc
        stages = {row.stage for row in res.failures}
        assert STAGE_ESTIMATE in stages
        # shared propensity failures sit in their own rows with no estimand
        for row in res.failures:
            if row.stage == STAGE_SHARED_FIT:
                assert row.estimand is None
        # aggregates drop exactly the failed replicates
        for row in res.metrics:
            assert row.n_used < res.M
            assert row.n_used >= 1

    def test_mean_ess_skips_failed_replicates(self):
        res = run_monte_carlo(
            (DGPConfig("5b"),), methods=(METHOD_SANDWICH,),
            M=60, R=2, master_seed=77, truth_size=100_000,
        )
        for row in res.ess:
            assert row.n_used <= res.M
            if row.estimand is Estimand.ATT:
                assert row.identity_arm_violations == 0
                # treated tilt is flat, so the mean across replicates is a
                # mean of integers
                assert row.ess_treated_mean < 50.0


class TestEss:
    def test_treated_target_identity_arm_is_exact(self, small_run):
        for row in small_run.ess:
            if row.estimand is Estimand.ATT:
                assert row.identity_arm_violations == 0
                assert row.ess_control_mean < 250.0
            else:
                assert row.identity_arm_violations == 0
                assert row.ess_treated_mean < 250.0


class TestValidation:
    def test_empty_grid(self):
        with pytest.raises(ValueError):
            run_monte_carlo(())

    def test_single_replicate(self):
        with pytest.raises(ValueError):
            run_monte_carlo((DGPConfig("1", N=100),), M=1)

    def test_duplicate_cells(self):
        cell = DGPConfig("1", N=100)
        with pytest.raises(ValueError, match="duplicate"):
            run_monte_carlo((cell, DGPConfig("1", N=100)), M=2)

    def test_full_population_target_rejected(self):
        with pytest.raises(ValueError):
            run_monte_carlo(
                (DGPConfig("1", N=100),), estimands=(Estimand.ATE,), M=2
            )

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="unknown"):
            run_monte_carlo(
                (DGPConfig("1", N=100),), methods=("jackknife",), M=2
            )

    def test_tiny_r_with_bootstrap_methods(self):
        with pytest.raises(ValueError, match="R"):
            run_monte_carlo(
                (DGPConfig("1", N=100),), methods=ALL_METHODS, M=2, R=1
            )
