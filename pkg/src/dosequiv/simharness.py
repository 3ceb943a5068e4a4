"""Rejection-probability experiments over the three study scenarios.

A :class:`Scenario` bundles everything one results-table column needs: the
trial geometry (doses, per-cell allocations, weights, error SDs), the two
fixed reference curves, the list of varying first-subgroup curves (one table
row each), whether Hill coefficients are estimated, and which test runs
(one subgroup or several).  Scenario files ship as JSON under ``scenarios/``
and load with :func:`load_scenario`.

``run_scenario`` simulates ``nsim`` trials per row, runs the configured
bootstrap test on each, and reports rejection rates with binomial Monte
Carlo standard errors, plus the exact (no Monte Carlo) distance column
recomputed from the true curves.  Streams derive from
``SeedSequence([seed, row, replicate, purpose])`` so results are identical
for any worker count.

After a run the harness asserts the coarse sanity ordering: rows with zero
true distance must reject at least as often as boundary rows, which must
reject at least as often as rows inside the null.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .design import GroupVariances, StudyDesign, generate
from .distance import DistanceTarget, distance_for_target
from .errors import ConfigError, DosequivError, SimulationError
from .estimate import FamilySpec
from .models import ModelFamily, emax_model
from .bootstrap import TestConfig, test_many, test_one

SCENARIO_SCHEMA_VERSION = 1

STANDARD_DOSES = (0.0, 10.0, 25.0, 50.0, 100.0, 150.0)

# Per-dose patient counts of the four designs studied: equal/edge-heavy dose
# allocation under equal (150/150/150) and unequal (66/192/192) group sizes.
ALLOC_EQUAL_GROUPS_EQUAL_DOSES = tuple(tuple([25] * 6) for _ in range(3))
ALLOC_EQUAL_GROUPS_EDGE_DOSES = tuple(tuple([35, 20, 20, 20, 20, 35]) for _ in range(3))
ALLOC_UNEQUAL_GROUPS_EQUAL_DOSES = (
    tuple([11] * 6),
    tuple([32] * 6),
    tuple([32] * 6),
)
ALLOC_UNEQUAL_GROUPS_EDGE_DOSES = (
    (15, 9, 9, 9, 9, 15),
    (46, 25, 25, 25, 25, 46),
    (46, 25, 25, 25, 25, 46),
)


@dataclass(frozen=True)
class ScenarioRow:
    """One table row: label plus the varying first-subgroup curve."""

    label: str
    curve: tuple[float, float, float, float]  # (e0, emax, ed50, h)


@dataclass(frozen=True)
class Scenario:
    name: str
    doses: tuple[float, ...]
    weights: tuple[float, ...]
    sigma: tuple[float, ...]
    allocations: tuple[tuple[int, ...], ...]
    other_curves: tuple[tuple[float, float, float, float], ...]
    rows: tuple[ScenarioRow, ...]
    fix_hill: bool
    hill: float
    test_kind: str               # "one" | "many"
    subgroups: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.test_kind not in ("one", "many"):
            raise ConfigError(f"unknown test kind {self.test_kind!r}")
        if len(self.other_curves) != len(self.weights) - 1:
            raise ConfigError("need one fixed curve per non-varying subgroup")

    @property
    def design(self) -> StudyDesign:
        return StudyDesign(
            doses=np.asarray(self.doses),
            allocations=np.asarray(self.allocations, dtype=int),
            weights=np.asarray(self.weights),
        )

    @property
    def target(self) -> DistanceTarget:
        if self.test_kind == "one":
            return DistanceTarget.one(self.subgroups[0])
        return DistanceTarget.many(self.subgroups)

    def families(self) -> list[FamilySpec]:
        if self.fix_hill:
            return [FamilySpec(ModelFamily.EMAX_FIXED_HILL, hill=self.hill)] * len(self.weights)
        return [FamilySpec(ModelFamily.EMAX_FULL)] * len(self.weights)

    def true_models(self, row: ScenarioRow):
        return tuple(emax_model(*c) for c in (row.curve, *self.other_curves))

    def subset(self, labels) -> "Scenario":
        keep = [r for r in self.rows if r.label in set(labels)]
        if len(keep) != len(set(labels)):
            missing = set(labels) - {r.label for r in self.rows}
            raise ConfigError(f"unknown row label(s): {sorted(missing)}")
        return replace(self, rows=tuple(keep))


def load_scenario(path) -> Scenario:
    """Load and validate a scenario JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    allowed = {
        "schema_version", "name", "doses", "weights", "sigma", "allocations",
        "other_curves", "rows", "fix_hill", "hill", "test",
    }
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown scenario keys {sorted(unknown)}")
    if raw.get("schema_version") != SCENARIO_SCHEMA_VERSION:
        raise ConfigError(
            f"{path}: schema_version must be {SCENARIO_SCHEMA_VERSION}, "
            f"got {raw.get('schema_version')!r}"
        )
    test = raw.get("test", {})
    if set(test) - {"kind", "subgroups"}:
        raise ConfigError(f"{path}: unknown test keys {sorted(set(test) - {'kind', 'subgroups'})}")
    rows = []
    for row in raw["rows"]:
        if set(row) - {"label", "curve"}:
            raise ConfigError(f"{path}: unknown row keys {sorted(set(row) - {'label', 'curve'})}")
        rows.append(ScenarioRow(label=str(row["label"]), curve=tuple(float(v) for v in row["curve"])))
    return Scenario(
        name=str(raw["name"]),
        doses=tuple(float(d) for d in raw["doses"]),
        weights=tuple(float(w) for w in raw["weights"]),
        sigma=tuple(float(s) for s in raw["sigma"]),
        allocations=tuple(tuple(int(n) for n in row) for row in raw["allocations"]),
        other_curves=tuple(tuple(float(v) for v in c) for c in raw["other_curves"]),
        rows=tuple(rows),
        fix_hill=bool(raw["fix_hill"]),
        hill=float(raw.get("hill", 1.0)),
        test_kind=str(test.get("kind", "one")),
        subgroups=tuple(int(i) for i in test.get("subgroups", [1])),
    )


@dataclass(frozen=True)
class SimRow:
    label: str
    curve: tuple[float, float, float, float]
    d_true: float
    n_reject: int
    n_done: int
    nsim: int
    b: int
    rejection_rate: float
    mc_se: float
    failures: int
    runtime_s: float


@dataclass(frozen=True)
class SimResult:
    scenario: str
    test_kind: str
    alpha: float
    delta: float
    nsim: int
    b: int
    seed: int
    rows: tuple[SimRow, ...]


# Worker context for process pools.
_SIM_CTX = None


def _sim_init(ctx):
    global _SIM_CTX
    _SIM_CTX = ctx


def _simulate_one(task):
    """Run the configured test on one simulated dataset; returns (row, ok, reject)."""
    row_idx, rep = task
    (scenario, b, alpha, delta, seed) = _SIM_CTX
    design = scenario.design
    row = scenario.rows[row_idx]
    models = scenario.true_models(row)
    variances = GroupVariances(np.asarray(scenario.sigma) ** 2)
    data_seed = np.random.SeedSequence([seed, row_idx, rep, 0])
    test_seed = int(np.random.SeedSequence([seed, row_idx, rep, 1]).generate_state(1)[0])
    dataset = generate(design, models, variances, data_seed)
    config = TestConfig(delta=delta, alpha=alpha, b=b, seed=test_seed, target=scenario.target)
    runner = test_one if scenario.test_kind == "one" else test_many
    try:
        result = runner(dataset, design, scenario.families(), config, workers=1)
    except DosequivError:
        return row_idx, False, False
    return row_idx, True, bool(result.reject)


def run_scenario(
    scenario: Scenario,
    nsim: int,
    b: int,
    alpha: float = 0.1,
    delta: float = 0.1,
    seed: int = 0,
    workers: int = 1,
) -> SimResult:
    """Simulate rejection rates for every row of a scenario.

    Raises
    ------
    SimulationError
        If more than 1 % of a row's replicates fail, or the zero-distance /
        boundary / interior-null rejection ordering is violated.
    """
    if nsim < 1 or b < 1:
        raise ValueError("nsim and b must be >= 1")
    design = scenario.design
    d_true = []
    for row in scenario.rows:
        models = scenario.true_models(row)
        d_true.append(
            distance_for_target(models, design.weights, scenario.target, design.dose_range).value
        )

    ctx = (scenario, b, alpha, delta, seed)
    tasks = [(r, i) for r in range(len(scenario.rows)) for i in range(nsim)]
    rejects = [0] * len(scenario.rows)
    dones = [0] * len(scenario.rows)
    t0 = time.perf_counter()
    if workers <= 1:
        _sim_init(ctx)
        outcomes = [_simulate_one(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_sim_init, initargs=(ctx,)) as ex:
            outcomes = list(ex.map(_simulate_one, tasks, chunksize=8))
    wall = time.perf_counter() - t0
    for row_idx, ok, reject in outcomes:
        if ok:
            dones[row_idx] += 1
            rejects[row_idx] += int(reject)
    per_row_time = wall / max(len(scenario.rows), 1)

    rows_out = []
    for r, row in enumerate(scenario.rows):
        failures = nsim - dones[r]
        if failures > 0.01 * nsim:
            raise SimulationError(
                f"row {row.label}: {failures}/{nsim} simulated trials failed (> 1 % budget)"
            )
        rate = rejects[r] / dones[r] if dones[r] else float("nan")
        rows_out.append(
            SimRow(
                label=row.label,
                curve=row.curve,
                d_true=float(d_true[r]),
                n_reject=rejects[r],
                n_done=dones[r],
                nsim=nsim,
                b=b,
                rejection_rate=rate,
                mc_se=float(np.sqrt(max(rate * (1.0 - rate), 0.0) / dones[r])) if dones[r] else float("nan"),
                failures=failures,
                runtime_s=per_row_time,
            )
        )
    result = SimResult(
        scenario=scenario.name,
        test_kind=scenario.test_kind,
        alpha=alpha,
        delta=delta,
        nsim=nsim,
        b=b,
        seed=seed,
        rows=tuple(rows_out),
    )
    _check_ordering(result, delta)
    return result


def _check_ordering(result: SimResult, delta: float, tol: float = 0.005) -> None:
    """Zero-distance rows must reject at least as often as boundary rows,
    boundary rows at least as often as interior-null rows."""
    zero = [r.rejection_rate for r in result.rows if r.d_true <= tol]
    boundary = [r.rejection_rate for r in result.rows if abs(r.d_true - delta) <= tol]
    interior = [r.rejection_rate for r in result.rows if r.d_true > delta + tol]
    if zero and boundary and min(zero) < max(boundary):
        raise SimulationError(
            f"sanity ordering violated: zero-distance rate {min(zero):.3f} "
            f"< boundary rate {max(boundary):.3f}"
        )
    if boundary and interior and min(boundary) < max(interior):
        raise SimulationError(
            f"sanity ordering violated: boundary rate {min(boundary):.3f} "
            f"< interior-null rate {max(interior):.3f}"
        )
    if zero and interior and min(zero) < max(interior):
        raise SimulationError(
            f"sanity ordering violated: zero-distance rate {min(zero):.3f} "
            f"< interior-null rate {max(interior):.3f}"
        )


CSV_COLUMNS = (
    "scenario", "label", "e0", "emax", "ed50", "h", "d_true",
    "n_reject", "n_done", "nsim", "b", "rejection_rate", "mc_se",
    "failures", "runtime_s",
)


def _csv_field(value: str) -> str:
    if any(c in value for c in ',"\n'):
        return '"' + value.replace('"', '""') + '"'
    return value


def emit_table(results) -> tuple[str, str]:
    """Render results as CSV and as aligned text; returns ``(csv, text)``."""
    if isinstance(results, SimResult):
        results = [results]
    csv_lines = [",".join(CSV_COLUMNS)]
    text_rows = [("scenario", "row", "d_true", "rate", "mc_se", "nsim", "B")]
    for res in results:
        for row in res.rows:
            e0, emax, ed50, h = row.curve
            csv_lines.append(
                f"{res.scenario},{_csv_field(row.label)},{e0:.17g},{emax:.17g},{ed50:.17g},{h:.17g},"
                f"{row.d_true:.6f},{row.n_reject},{row.n_done},{row.nsim},{row.b},"
                f"{row.rejection_rate:.6f},{row.mc_se:.6f},{row.failures},{row.runtime_s:.1f}"
            )
            text_rows.append(
                (
                    res.scenario,
                    row.label,
                    f"{row.d_true:.3f}",
                    f"{row.rejection_rate:.3f}",
                    f"{row.mc_se:.3f}",
                    str(row.nsim),
                    str(row.b),
                )
            )
    widths = [max(len(r[c]) for r in text_rows) for c in range(len(text_rows[0]))]
    text_lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in text_rows]
    return "\n".join(csv_lines) + "\n", "\n".join(text_lines) + "\n"
