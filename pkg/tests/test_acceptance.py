"""Acceptance suite: one test per numbered criterion, each printing a
PASS/FAIL line (run with ``pytest -s`` to see them live).

Criteria 3-6 are long-running Monte Carlo checks at desk scale (nsim=500,
B=300); expect on the order of an hour of total runtime on one core.
"""

import json
import time

import numpy as np
import pytest
from scipy.stats import ks_2samp

from dosequiv.asymptotics import build_asymptotic_model, sample_T
from dosequiv.bootstrap import TestConfig, empirical_quantile, test_one
from dosequiv.cli import main
from dosequiv.design import GroupVariances, StudyDesign, generate
from dosequiv.distance import DistanceTarget, _scan_weighted_diff, d_inf, d_inf_inf, distance_for_target
from dosequiv.estimate import CellStats, FamilySpec, fit_cells, fit_constrained
from dosequiv.models import ModelFamily, emax_model
from dosequiv.simharness import load_scenario, run_scenario

from conftest import CASE_STUDY_CSV, SCENARIO_DIR

pytestmark = pytest.mark.acceptance

DESK_NSIM = 500
DESK_B = 300


def report(criterion: int, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")


# ---------------------------------------------------------------------------
# Criterion 1: distance columns of the six result tables, +-0.005
# ---------------------------------------------------------------------------

PRINTED_ONE = {
    "a": [0.00, 0.04, 0.07, 0.09, 0.10, 0.11, 0.14, 0.19],
    "b": [0.10, 0.06, 0.03, 0.00, 0.04, 0.08, 0.10, 0.12, 0.13, 0.14],
    "c": [0.03, 0.04, 0.06, 0.10, 0.13, 0.16, 0.20],
}
PRINTED_MANY = {
    "a": [0.00, 0.04, 0.07, 0.09, 0.10, 0.12, 0.15, 0.19],
    "b": PRINTED_ONE["b"],
    "c": PRINTED_ONE["c"],
}


def test_criterion_01_distance_columns():
    t0 = time.perf_counter()
    mismatches = []
    checked = 0
    for name in ("a", "b", "c"):
        scenario = load_scenario(SCENARIO_DIR / f"scenario_{name}_one.json")
        rng = (scenario.doses[0], scenario.doses[-1])
        for row, printed1, printedm in zip(scenario.rows, PRINTED_ONE[name], PRINTED_MANY[name]):
            models = scenario.true_models(row)
            one = d_inf(models, scenario.weights, 1, rng).value
            many = d_inf_inf(models, scenario.weights, (1, 2, 3), rng).value
            for kind, got, want in (("one", one, printed1), ("many", many, printedm)):
                checked += 1
                if abs(got - want) > 0.005:
                    mismatches.append(
                        f"{name.upper()}/{kind} {row.label}: computed {got:.4f} vs printed {want:.2f}"
                    )
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 5.0
    report(1, ok, f"{checked - len(mismatches)}/{checked} table values within 0.005 "
                  f"({elapsed:.1f}s); mismatches: {mismatches if mismatches else 'none'}")
    assert elapsed < 5.0
    assert not mismatches, "; ".join(mismatches)


# ---------------------------------------------------------------------------
# Criterion 2: case-study statistics from the published fitted curves
# ---------------------------------------------------------------------------

def test_criterion_02_case_study_statistics(case_models):
    rng = (0.0, 4.0)
    w = (1 / 7, 3 / 7, 3 / 7)
    got = {
        "J": d_inf(case_models, w, 1, rng).value,
        "A": d_inf(case_models, w, 2, rng).value,
        "E": d_inf(case_models, w, 3, rng).value,
        "all": d_inf_inf(case_models, w, (1, 2, 3), rng).value,
    }
    want = {"J": 0.337, "A": 0.116, "E": 0.087, "all": 0.337}
    ok = all(abs(got[k] - want[k]) <= 0.01 for k in want)
    report(2, ok, ", ".join(f"{k}: {got[k]:.4f} (target {want[k]} +- 0.01)" for k in want))
    for k in want:
        assert got[k] == pytest.approx(want[k], abs=0.01)


# ---------------------------------------------------------------------------
# Criteria 3-5: scenario A one-subgroup rejection rates at desk scale
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def scenario_a_rates():
    scenario = load_scenario(SCENARIO_DIR / "scenario_a_one.json").subset(
        ["(25, 0.47)", "(7, 0.42)", "(2, 0.4)"]
    )
    result = run_scenario(scenario, nsim=DESK_NSIM, b=DESK_B, alpha=0.1, delta=0.1,
                          seed=101, workers=1)
    return {row.label: row for row in result.rows}


def test_criterion_03_boundary_level(scenario_a_rates):
    row = scenario_a_rates["(7, 0.42)"]
    ok = 0.06 <= row.rejection_rate <= 0.13
    report(3, ok, f"boundary (7, 0.42): rejection {row.rejection_rate:.3f} "
                  f"(n={row.n_done}, target [0.06, 0.13], paper 0.094)")
    assert 0.06 <= row.rejection_rate <= 0.13


def test_criterion_04_power(scenario_a_rates):
    row = scenario_a_rates["(25, 0.47)"]
    ok = row.rejection_rate >= 0.95
    report(4, ok, f"power (25, 0.47): rejection {row.rejection_rate:.3f} (target >= 0.95)")
    assert row.rejection_rate >= 0.95


def test_criterion_05_interior_null(scenario_a_rates):
    row = scenario_a_rates["(2, 0.4)"]
    ok = row.rejection_rate <= 0.02
    report(5, ok, f"interior null (2, 0.4): rejection {row.rejection_rate:.3f} (target <= 0.02)")
    assert row.rejection_rate <= 0.02


# ---------------------------------------------------------------------------
# Criterion 6: scenario A worst-subgroup test at the boundary
# ---------------------------------------------------------------------------

def test_criterion_06_boundary_level_many():
    scenario = load_scenario(SCENARIO_DIR / "scenario_a_many.json").subset(["(7, 0.42)"])
    result = run_scenario(scenario, nsim=DESK_NSIM, b=DESK_B, alpha=0.1, delta=0.1,
                          seed=202, workers=1)
    rate = result.rows[0].rejection_rate
    ok = 0.06 <= rate <= 0.14
    report(6, ok, f"worst-subgroup boundary (7, 0.42): rejection {rate:.3f} "
                  f"(target [0.06, 0.14], paper 0.100)")
    assert 0.06 <= rate <= 0.14


# ---------------------------------------------------------------------------
# Criterion 7: common-seed quantile monotonicity across thresholds
# ---------------------------------------------------------------------------

def test_criterion_07_quantile_monotonicity():
    design = StudyDesign(
        doses=np.array([0.0, 10.0, 25.0, 50.0, 100.0, 150.0]),
        allocations=np.full((3, 6), 10, dtype=int),
        weights=np.array([1 / 7, 3 / 7, 3 / 7]),
    )
    fams = [FamilySpec(ModelFamily.EMAX_FIXED_HILL, hill=1.0)] * 3
    fixed = [emax_model(0, 0.46, 26, 1, fixed_hill=True),
             emax_model(0, 0.46, 25.5, 1, fixed_hill=True)]
    rng = np.random.default_rng(303)
    violations = []
    for i in range(100):
        mu1 = emax_model(0, rng.uniform(0.35, 0.5), rng.uniform(4, 40), 1, fixed_hill=True)
        dataset = generate(
            design, [mu1, *fixed], GroupVariances(np.full(3, 0.01)),
            np.random.SeedSequence([303, i]),
        )
        seed = int(rng.integers(0, 2**31))
        quantiles = []
        for delta in (0.15, 0.25):
            cfg = TestConfig(delta=delta, alpha=0.1, b=199, seed=seed, target=DistanceTarget.one(1))
            res = test_one(dataset, design, fams, cfg)
            quantiles.append(res.distribution.quantile_alpha)
        if not quantiles[0] <= quantiles[1]:
            violations.append((i, quantiles))
    ok = not violations
    report(7, ok, f"quantile monotonicity over 100 datasets: {len(violations)} violations")
    assert not violations, violations


# ---------------------------------------------------------------------------
# Criterion 8: two-subgroup distance identity
# ---------------------------------------------------------------------------

def test_criterion_08_two_subgroup_identity():
    rng = np.random.default_rng(506)
    worst = 0.0
    for _ in range(500):
        m1 = emax_model(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 120), rng.uniform(0.3, 4))
        m2 = emax_model(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 120), rng.uniform(0.3, 4))
        p1 = rng.uniform(0.05, 0.95)
        lhs = d_inf([m1, m2], (p1, 1 - p1), 1, (0.0, 150.0)).value
        raw, _ = _scan_weighted_diff([m1, m2], np.array([1.0, -1.0]), 0.0, 150.0)
        worst = max(worst, abs(lhs - (1 - p1) * raw))
    ok = worst <= 1e-12
    report(8, ok, f"max identity error over 500 draws: {worst:.2e} (target <= 1e-12)")
    assert worst <= 1e-12


# ---------------------------------------------------------------------------
# Criterion 9: large-n error law matches the sampled limit variable
# ---------------------------------------------------------------------------

def test_criterion_09_limit_distribution():
    scale = 20
    design = StudyDesign(
        doses=np.array([0.0, 10.0, 25.0, 50.0, 100.0, 150.0]),
        allocations=np.full((3, 6), 25 * scale, dtype=int),
        weights=np.array([1 / 7, 3 / 7, 3 / 7]),
    )
    models = (
        emax_model(0, 0.42, 7, 1, fixed_hill=True),
        emax_model(0, 0.46, 26, 1, fixed_hill=True),
        emax_model(0, 0.46, 25.5, 1, fixed_hill=True),
    )
    sigma2 = np.full(3, 0.01)
    target = DistanceTarget.one(1)
    asym = build_asymptotic_model(design, models, sigma2, target)
    assert len(asym.extremal_plus) + len(asym.extremal_minus) == 1  # singleton set
    limit = sample_T(asym, 1, 200_000, 404)
    fams = [FamilySpec(ModelFamily.EMAX_FIXED_HILL, hill=1.0)] * 3
    n = design.n_total
    nsim = 2000
    scaled = np.empty(nsim)
    for s in range(nsim):
        ds = generate(design, models, GroupVariances(sigma2), np.random.SeedSequence([405, s]))
        fit = fit_cells(CellStats.from_dataset(ds, design), design, fams)
        d_hat = distance_for_target(fit.models, design.weights, target, design.dose_range).value
        scaled[s] = np.sqrt(n) * (d_hat - asym.distance_value)
    ks = ks_2samp(scaled, limit).statistic
    ok = ks <= 0.05
    report(9, ok, f"KS distance between sqrt(n) errors (n={n}, {nsim} sims) and the "
                  f"sampled limit: {ks:.4f} (target <= 0.05)")
    assert ks <= 0.05


# ---------------------------------------------------------------------------
# Criterion 10: byte-identical reruns across worker counts
# ---------------------------------------------------------------------------

def _strip_timestamp(path):
    doc = json.loads(path.read_text())
    doc.pop("created_utc", None)
    return doc


def test_criterion_10_reproducibility(tmp_path):
    design = {
        "doses": [0, 1, 2, 3, 4],
        "allocations": [[12, 12, 12, 11, 11], [29, 28, 28, 28, 28], [34, 34, 34, 34, 34]],
        "weights": [1 / 7, 3 / 7, 3 / 7],
        "labels": ["J", "A", "E"],
    }
    fams = [{"family": "emax_fixed_hill", "hill": 1.0}] * 3
    test_cfg = tmp_path / "test.json"
    test_cfg.write_text(json.dumps({
        "schema_version": 1, "design": design, "families": fams,
        "test": {"target": {"kind": "many", "subgroups": [1, 2, 3]}, "delta": 0.5,
                 "alpha": [0.05, 0.1], "b": 60, "seed": 17, "include_values": True},
    }))
    docs = []
    for i, workers in enumerate((1, 2, 1)):
        out = tmp_path / f"test_out_{i}.json"
        code = main(["test", "--config", str(test_cfg), "--data", str(CASE_STUDY_CSV),
                     "--out", str(out), "--workers", str(workers)])
        assert code == 0
        docs.append(_strip_timestamp(out))
    test_ok = docs[0] == docs[1] == docs[2]

    sims = []
    for i, workers in enumerate((1, 3)):
        out = tmp_path / f"sim_{i}.csv"
        code = main(["simulate", "--config", str(SCENARIO_DIR / "scenario_a_one.json"),
                     "--out", str(out), "--nsim", "4", "--b", "20", "--seed", "7",
                     "--rows", "(25, 0.47)", "--workers", str(workers)])
        assert code == 0
        # The trailing runtime_s column is a timing field, excluded like the
        # JSON timestamps.
        rows = [line.rsplit(",", 1)[0] for line in out.read_text().splitlines()]
        sims.append(rows)
    sim_ok = sims[0] == sims[1]

    asymps = []
    for i in range(2):
        out = tmp_path / f"asymp_{i}.json"
        cfg = tmp_path / "asymp.json"
        cfg.write_text(json.dumps({
            "schema_version": 1, "design": design,
            "models": [
                {"family": "emax_fixed_hill", "hill": 1.0, "params": [0.38, 0.66, 3.94]},
                {"family": "emax_fixed_hill", "hill": 1.0, "params": [0.0, 0.68, 1.41]},
                {"family": "emax_fixed_hill", "hill": 1.0, "params": [-0.03, 0.9, 0.85]},
            ],
            "sigma2": [0.58, 0.67, 0.72],
            "asymp": {"target": {"kind": "many", "subgroups": [1, 2, 3]}, "draws": 50000, "seed": 5},
        }))
        assert main(["asymp", "--config", str(cfg), "--out", str(out)]) == 0
        asymps.append(_strip_timestamp(out))
    asymp_ok = asymps[0] == asymps[1]

    ok = test_ok and sim_ok and asymp_ok
    report(10, ok, f"byte-identical outputs (minus timestamp): test {test_ok}, "
                   f"simulate {sim_ok}, asymp {asymp_ok}")
    assert test_ok and sim_ok and asymp_ok
