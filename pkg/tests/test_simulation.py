import logging
import math

import numpy as np
import pytest

from isostack import (
    EstimatorSpec,
    ValidationError,
    breiman_stats,
    estimate_df,
    make_scenario,
    monte_carlo,
    risk_gap_experiment,
    run_replication,
    sequence_model_basis,
)
from isostack.serialize import stable_json
from isostack.simulation import _oracle_telescoping

from oracles import antitonic_population_weights, population_risk


def test_presets():
    sc = make_scenario({"preset": "theorem1-default"})
    assert sc.n == 256 and sc.count == 10 and sc.d == tuple(3 * k for k in range(1, 11))
    assert sc.sigma == 1.0
    assert np.all(sc.theta[:30] > 0)

    null = make_scenario({"preset": "null-signal"})
    assert np.all(null.theta == 0.0)

    breiman = make_scenario({"preset": "breiman-like"})
    assert breiman.count == 40
    assert breiman.d[-1] <= breiman.n
    # all presets satisfy the three-dimension spacing of the gap theorem
    for scenario in (sc, null, breiman):
        diffs = np.diff((0,) + scenario.d)
        assert np.all(diffs >= 3)


def test_make_scenario_validation():
    with pytest.raises(ValidationError):
        make_scenario({"preset": "nope"})
    with pytest.raises(ValidationError):
        make_scenario({"n": 10, "sigma": 1.0, "d": [4, 20]})  # d_M > n
    with pytest.raises(ValidationError):
        make_scenario({"n": 10, "sigma": 1.0})  # no schedule
    # custom basis must be orthonormal under the empirical inner product
    with pytest.raises(ValidationError):
        make_scenario(
            {"n": 4, "sigma": 1.0, "d": [1], "basis": np.ones((4, 2)).tolist()}
        )
    basis = sequence_model_basis(6)
    sc = make_scenario(
        {
            "n": 6,
            "sigma": 2.0,
            "d": [2, 4],
            "basis": basis.vectors.tolist(),
            "coef": {"kind": "explicit", "values": [1.0, 0.5]},
        }
    )
    assert sc.basis is not None and sc.theta[0] == 1.0


def test_run_replication_deterministic():
    sc = make_scenario({"preset": "null-signal"})
    est = [EstimatorSpec("fixed_projection", {"k": 2}), EstimatorSpec("stack", {"tau": 0.5, "lambda": 2.0})]
    a = run_replication(sc, est, seed=42)
    b = run_replication(sc, est, seed=42)
    assert a == b
    assert all(v >= 0.0 and math.isfinite(v) for v in a.values())


def test_run_replication_matches_monte_carlo_rows():
    sc = make_scenario({"preset": "theorem1-default"})
    est = [EstimatorSpec("best", {"lambda": 2.0}), EstimatorSpec("l0stack")]
    report = monte_carlo(sc, est, nrep=5, seed=9)
    for r in range(5):
        single = run_replication(sc, est, seed=9, rep=r)
        for j, spec in enumerate(est):
            assert single[spec.label] == report.samples["loss"][r, j]


def test_null_signal_projection_calibration():
    # with f = 0, the projection loss is (sigma^2/n) chi^2(d_k), so the
    # mean must sit near sigma^2 d_k / n
    sc = make_scenario({"preset": "null-signal"})
    est = [EstimatorSpec("fixed_projection", {"k": 3}), EstimatorSpec("fixed_projection", {"k": 1})]
    report = monte_carlo(sc, est, nrep=4000, seed=123)
    target = sc.sigma2 * sc.d[2] / sc.n
    e = report.estimators[0]
    assert abs(e.mean_loss - target) <= 4.0 * e.se_loss
    # paired gap matches the analytic difference
    gap = report.gaps[0]
    expected_gap = sc.sigma2 * (sc.d[2] - sc.d[0]) / sc.n
    assert abs(gap.mean - expected_gap) <= 4.0 * gap.se


def test_monte_carlo_determinism_and_jobs():
    sc = make_scenario({"preset": "null-signal"})
    est = [EstimatorSpec("stack", {"tau": 0.5, "lambda": 2.0}), EstimatorSpec("best", {"lambda": 2.0})]
    r1 = monte_carlo(sc, est, nrep=60, seed=5)
    r2 = monte_carlo(sc, est, nrep=60, seed=5)
    assert stable_json(r1.to_dict()) == stable_json(r2.to_dict())
    r4 = monte_carlo(sc, est, nrep=60, seed=5, jobs=3)
    assert stable_json(r1.to_dict()) == stable_json(r4.to_dict())


def test_estimate_df_projection_and_null():
    sc = make_scenario({"preset": "theorem1-default"})
    rep = estimate_df(sc, EstimatorSpec("fixed_projection", {"k": 2}), nrep=3000, seed=17)
    assert abs(rep.df_mean - sc.d[1]) <= 4.0 * rep.df_se
    assert abs(rep.identity_mean) <= 4.0 * rep.identity_se

    null = estimate_df(sc, EstimatorSpec("fixed_projection", {"k": 0}), nrep=1000, seed=17)
    assert null.df_mean == 0.0

    with pytest.raises(ValidationError):
        estimate_df(sc, EstimatorSpec("fixed_projection", {"k": 1}), nrep=10, seed=17)


def test_estimate_df_fixed_weights():
    sc = make_scenario({"preset": "theorem1-default"})
    rep = estimate_df(sc, EstimatorSpec("oracle_stack"), nrep=3000, seed=29)
    info = _oracle_telescoping(sc, 1e-12)
    target = float(info["alpha"] @ np.asarray(sc.d, dtype=float))
    assert abs(rep.df_mean - target) <= 4.0 * rep.df_se
    assert abs(rep.identity_mean) <= 4.0 * rep.identity_se


def test_oracle_weights_match_antitonic_projection():
    for preset in ("theorem1-default", "breiman-like", "null-signal"):
        sc = make_scenario({"preset": preset})
        info = _oracle_telescoping(sc, 1e-13)
        reference = antitonic_population_weights(sc)
        assert np.allclose(info["c"], reference, atol=1e-8)
        assert info["population_risk"] == pytest.approx(population_risk(sc, reference), abs=1e-10)
        # no feasible perturbation improves the population risk
        rng = np.random.default_rng(0)
        for _ in range(100):
            alpha = np.maximum(info["alpha"] + rng.normal(0, 0.05, sc.count), 0.0)
            c = np.cumsum(alpha[::-1])[::-1]
            assert population_risk(sc, c) >= info["population_risk"] - 1e-12


def test_risk_gap_positive_small_scale():
    report = risk_gap_experiment(
        {"scenario": {"preset": "theorem1-default"}, "tau": 0.5, "lambda": 2.0},
        nrep=4000,
        seed=31,
    )
    gap = report.extras["gap"]
    assert gap["ci_low"] > 0.0
    margin = report.extras["margin_over_plugin"]
    assert margin["mean"] >= -4.0 * margin["se"]
    assert report.extras["dimension_condition_ok"]


def test_risk_gap_warning_when_conditions_fail(caplog):
    config = {
        "scenario": {"n": 64, "M": 5, "d_spacing": 1, "sigma": 1.0, "coef": {"kind": "zero"}},
        "tau": 0.5,
        "lambda": 2.0,
    }
    with caplog.at_level(logging.WARNING, logger="isostack.simulation"):
        risk_gap_experiment(config, nrep=50, seed=1)
    assert any("positive-gap guarantee" in rec.message for rec in caplog.records)


def test_risk_gap_other_presets_positive():
    for preset, reps in (("null-signal", 4000), ("breiman-like", 1500)):
        report = risk_gap_experiment(
            {"scenario": {"preset": preset}, "tau": 0.5, "lambda": 2.0},
            nrep=reps,
            seed=77,
        )
        assert report.extras["gap"]["ci_low"] > 0.0


def test_tau_equals_lambda_gap_positive():
    report = risk_gap_experiment(
        {"scenario": {"preset": "theorem1-default"}, "tau": 0.5, "lambda": 0.5},
        nrep=4000,
        seed=41,
    )
    assert report.extras["gap"]["ci_low"] > 0.0


def test_james_stein_gap_matches_plugin():
    # under the null signal E[1/chi^2_d] = 1/(d-2), so the James-Stein gap
    # is exactly sigma^2 (d-2) / n; the per-replication plug-in must agree
    sc = make_scenario({"preset": "null-signal"})
    k = 3
    est = [EstimatorSpec("fixed_projection", {"k": k}), EstimatorSpec("james_stein", {"k": k})]
    report = monte_carlo(sc, est, nrep=6000, seed=53, js_plugin_k=k)
    loss = report.samples["loss"]
    plugin = report.samples["js_plugin"][:, 0]
    margin = (loss[:, 0] - loss[:, 1]) - plugin
    mean = margin.mean()
    se = margin.std(ddof=1) / math.sqrt(len(margin))
    assert abs(mean) <= 4.0 * se
    analytic = sc.sigma2 * (sc.d[k - 1] - 2.0) / sc.n
    gap = report.gaps[0]
    assert abs(gap.mean - analytic) <= 4.0 * gap.se


def test_breiman_stats_runs_and_enforces_theorems(caplog):
    sc = make_scenario({"preset": "theorem1-default"})
    with caplog.at_level(logging.INFO, logger="isostack.simulation"):
        summary = breiman_stats(sc, nrep=800, seed=61)
    assert summary.mean_sum_stack < 1.0
    assert summary.mean_l0_stack <= sc.count
    assert summary.mean_dim_l0stack >= 0.0
    assert summary.l0_null_count >= 0


def test_adaptive_correction_matches_stack_risk():
    sc = make_scenario({"preset": "theorem1-default"})
    rep = estimate_df(sc, EstimatorSpec("stack", {"tau": 1.0, "lambda": 1.0}), nrep=4000, seed=71)
    assert rep.corrected_mean is not None
    assert abs(rep.corrected_mean) <= 4.0 * rep.corrected_se


def test_ensemble_estimator_in_engine():
    sc = make_scenario({"preset": "theorem1-default"})
    est = [EstimatorSpec("ensemble", {"m": 4, "B": 30, "lambda": 2.0})]
    a = monte_carlo(sc, est, nrep=30, seed=3)
    b = monte_carlo(sc, est, nrep=30, seed=3)
    assert stable_json(a.to_dict()) == stable_json(b.to_dict())


def test_estimator_spec_validation():
    with pytest.raises(ValidationError):
        EstimatorSpec("nope")
    with pytest.raises(ValidationError):
        EstimatorSpec("stack", {"tau": -1.0, "lambda": 2.0})
    with pytest.raises(ValidationError):
        EstimatorSpec("qagg", {"eta": 1.5})
    spec = EstimatorSpec.from_config({"kind": "stack", "tau": 0.5, "lambda": 2.0})
    assert spec.label == "stack(lambda=2,tau=0.5)"
    assert EstimatorSpec.from_config("l0stack").kind == "l0stack"


def test_estimator_failure_recorded_not_fatal():
    sc = make_scenario({"preset": "null-signal"})
    est = [EstimatorSpec("fixed_projection", {"k": 99}), EstimatorSpec("best", {"lambda": 2.0})]
    report = monte_carlo(sc, est, nrep=10, seed=2)
    assert report.estimators[0].failures == 10
    assert report.estimators[0].mean_loss is None
    assert report.estimators[1].failures == 0


def test_user_basis_scenario_runs():
    basis = sequence_model_basis(32)
    sc = make_scenario(
        {
            "n": 32,
            "sigma": 1.0,
            "d": [3, 6, 9],
            "basis": basis.vectors.tolist(),
            "coef": {"kind": "geometric", "scale": 1.0, "rate": 0.7},
        }
    )
    est = [EstimatorSpec("stack", {"tau": 0.5, "lambda": 2.0}), EstimatorSpec("best", {"lambda": 2.0})]
    report = monte_carlo(sc, est, nrep=200, seed=13)
    assert all(e.failures == 0 for e in report.estimators)
    # identical generating process through the sequence-model fast path
    fast = make_scenario(
        {
            "n": 32,
            "sigma": 1.0,
            "d": [3, 6, 9],
            "coef": {"kind": "geometric", "scale": 1.0, "rate": 0.7},
        }
    )
    fast_report = monte_carlo(fast, est, nrep=200, seed=13)
    for a, b in zip(report.estimators, fast_report.estimators):
        assert a.mean_loss == pytest.approx(b.mean_loss, rel=1e-10)
