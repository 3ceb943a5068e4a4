"""Constrained parametric bootstrap tests, p-values, and threshold calibration.

The one-subgroup test runs the five steps: unconstrained MLE and statistic,
boundary-constrained plug-in estimate, B parametric resamples with the
estimated group variances, a refit of every resample, and the decision
``statistic < q_alpha``.  The several-subgroup test is identical with the
worst-subgroup distance throughout.  The intersection-union variant runs the
one-subgroup test per subgroup and rejects only if all of them reject.

Conventions (documented here once, asserted in the test suite):

* Empirical quantile: the lower order statistic at rank ``ceil(alpha * B)``
  of the sorted replicate values.
* p-value: ``(1/B) * #{b : value_b <= statistic}``.
* Decision: reject iff ``statistic < quantile``; with the two conventions
  above this is exactly equivalent to ``p_value < alpha``.

Reproducibility: replicate ``b`` draws from an independent PCG64 stream
seeded by ``SeedSequence([seed, b])``, in canonical (subgroup, dose, patient)
order, so results are bit-identical for any worker count, and bootstrap runs
at different thresholds share errors (common random numbers).

Failed replicates: a refit that does not converge from the plug-in start is
retried with the standard multistart candidates; if none converge, the
best-SSE candidate still contributes its value (kept for determinism) and
the replicate counts as failed.  More than 1 % of B failed replicates aborts
the run with diagnostics.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .design import Dataset, StudyDesign
from .distance import DistanceTarget, distance_for_target
from .errors import BootstrapError
from .estimate import (
    CellStats,
    ConstrainedFitResult,
    FamilySpec,
    FitResult,
    _fit_group,
    fit_cells,
    fit_constrained,
)
from .models import evaluate

WORKERS_ENV_VAR = "DOSEQUIV_WORKERS"


def default_workers() -> int:
    """Worker count from the environment, defaulting to 1."""
    raw = os.environ.get(WORKERS_ENV_VAR, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class TestConfig:
    """Threshold, level, replication count, seed, and target of one test."""

    delta: float
    alpha: float
    b: int
    seed: int
    target: DistanceTarget

    def __post_init__(self) -> None:
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.b < 1:
            raise ValueError(f"b must be >= 1, got {self.b}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class BootstrapDistribution:
    """Replicate statistics in replicate order plus the decision quantile."""

    values: NDArray[np.float64]
    quantile_alpha: float


@dataclass(frozen=True)
class TestResult:
    statistic: float
    distribution: BootstrapDistribution
    p_value: float
    reject: bool
    fit: FitResult
    constrained: ConstrainedFitResult
    config: TestConfig
    failures: int


@dataclass(frozen=True)
class IuTestResult:
    """Intersection-union summary: per-subgroup results, max p, all-reject."""

    results: tuple[TestResult, ...]
    subgroups: tuple[int, ...]
    p_value: float
    reject: bool


@dataclass(frozen=True)
class CalibrationPoint:
    delta: float
    quantile: float
    p_value: float
    reject: bool


@dataclass(frozen=True)
class CalibrationResult:
    """p-value-vs-threshold curve and the smallest rejecting threshold."""

    statistic: float
    points: tuple[CalibrationPoint, ...]
    delta_hat: float | None
    monotone_violations: tuple[float, ...]


def empirical_quantile(values: NDArray[np.float64], alpha: float) -> float:
    """Lower order statistic at rank ``ceil(alpha * B)`` (1-based)."""
    b = values.size
    rank = math.ceil(alpha * b - 1e-9)
    rank = min(max(rank, 1), b)
    return float(np.sort(values)[rank - 1])


def p_value_of(values: NDArray[np.float64], statistic: float) -> float:
    return float(np.count_nonzero(values <= statistic)) / values.size


# ---------------------------------------------------------------------------
# Replicate engine
# ---------------------------------------------------------------------------

# Worker state for process pools (set once per worker via initializer).
_WORKER_CTX = None


def _replicate_range(ctx, b_lo: int, b_hi: int):
    """Compute replicate statistics for b in [b_lo, b_hi)."""
    (seed, design, specs, beta_gen, sigma2, target) = ctx
    doses = design.doses
    max_dose = float(doses[-1])
    k, r = design.k, design.r
    counts = design.allocations
    mu_gen = np.stack([evaluate(m, doses) for m in _gen_models(specs, beta_gen, max_dose)])
    sigmas = np.sqrt(np.asarray(sigma2, dtype=float))
    values = np.empty(b_hi - b_lo)
    failed = np.zeros(b_hi - b_lo, dtype=bool)
    for pos, b in enumerate(range(b_lo, b_hi)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
        means = np.empty((k, r))
        within = np.empty((k, r))
        for l in range(k):
            for j in range(r):
                z = rng.standard_normal(int(counts[l, j]))
                eps = sigmas[l] * z
                m = eps.mean()
                means[l, j] = mu_gen[l, j] + m
                within[l, j] = float(np.sum((eps - m) ** 2))
        models = []
        ok = True
        for l, spec in enumerate(specs):
            bounds = spec.resolve_bounds(max_dose)
            beta, _sse, conv, _nfev = _fit_group(
                spec, doses, counts[l], means[l], float(within[l].sum()), bounds,
                extra_start=beta_gen[l], early_exit=True,
            )
            ok = ok and conv
            models.append(spec.model(beta, max_dose))
        values[pos] = distance_for_target(
            models, design.weights, target, design.dose_range
        ).value
        failed[pos] = not ok
    return values, failed


def _gen_models(specs, betas, max_dose):
    return tuple(spec.model(np.asarray(b, float), max_dose) for spec, b in zip(specs, betas))


def _init_worker(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker_task(span):
    return _replicate_range(_WORKER_CTX, span[0], span[1])


def _bootstrap_values(
    design, specs, beta_gen, sigma2, target, b_total, seed, workers
) -> tuple[NDArray[np.float64], int]:
    """Run B replicates, in-process or across a process pool.

    Returns the replicate values in replicate order and the failure count.
    """
    ctx = (seed, design, tuple(specs), tuple(np.asarray(b, float) for b in beta_gen),
           tuple(float(s) for s in sigma2), target)
    if workers <= 1 or b_total < 8:
        values, failed = _replicate_range(ctx, 0, b_total)
        return values, int(failed.sum())
    n_chunks = min(workers * 4, b_total)
    edges = np.linspace(0, b_total, n_chunks + 1).astype(int)
    spans = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ctx,)) as ex:
        parts = list(ex.map(_worker_task, spans))
    values = np.concatenate([p[0] for p in parts])
    failures = int(sum(p[1].sum() for p in parts))
    return values, failures


def _check_failures(failures: int, b_total: int) -> None:
    if failures > 0.01 * b_total:
        raise BootstrapError(
            f"{failures} of {b_total} bootstrap replicates failed to refit "
            f"(> 1 % budget); inspect the model/bounds configuration"
        )


# ---------------------------------------------------------------------------
# Public tests
# ---------------------------------------------------------------------------

def _run_test(
    dataset_or_cells, design, families, config, workers, *,
    fit: FitResult | None = None,
) -> TestResult:
    if isinstance(dataset_or_cells, CellStats):
        cells = dataset_or_cells
    else:
        cells = CellStats.from_dataset(dataset_or_cells, design)
    if fit is None:
        fit = fit_cells(cells, design, families)
    statistic = distance_for_target(
        fit.models, design.weights, config.target, design.dose_range
    ).value
    constrained = fit_constrained(
        cells, design, families, config.target, config.delta, fit=fit
    )
    values, failures = _bootstrap_values(
        design, families, constrained.beta_hathat, fit.sigma2, config.target,
        config.b, config.seed, workers,
    )
    _check_failures(failures, config.b)
    quantile = empirical_quantile(values, config.alpha)
    return TestResult(
        statistic=float(statistic),
        distribution=BootstrapDistribution(values=values, quantile_alpha=quantile),
        p_value=p_value_of(values, statistic),
        reject=bool(statistic < quantile),
        fit=fit,
        constrained=constrained,
        config=config,
        failures=failures,
    )


def test_one(
    dataset: Dataset | CellStats,
    design: StudyDesign,
    families,
    config: TestConfig,
    workers: int = 1,
) -> TestResult:
    """Constrained parametric bootstrap test for one subgroup vs population.

    ``config.target`` must be a ``"one"`` target; rejection establishes that
    the subgroup curve stays within ``delta`` of the population curve over
    the whole dose range, at level ``alpha``.
    """
    if config.target.kind != "one":
        raise ValueError("test_one requires a 'one' target")
    return _run_test(dataset, design, families, config, workers)


def test_many(
    dataset: Dataset | CellStats,
    design: StudyDesign,
    families,
    config: TestConfig,
    workers: int = 1,
) -> TestResult:
    """Simultaneous test for several subgroups via the worst-subgroup distance."""
    if config.target.kind != "many":
        raise ValueError("test_many requires a 'many' target")
    return _run_test(dataset, design, families, config, workers)


def test_many_iu(
    dataset: Dataset | CellStats,
    design: StudyDesign,
    families,
    config: TestConfig,
    workers: int = 1,
) -> IuTestResult:
    """Intersection-union alternative: one test per subgroup, reject iff all do.

    Every per-subgroup test runs at level ``config.alpha`` with the same seed;
    the summary p-value is the maximum of the individual p-values.
    """
    if config.target.kind != "many":
        raise ValueError("test_many_iu requires a 'many' target")
    if isinstance(dataset, CellStats):
        cells = dataset
    else:
        cells = CellStats.from_dataset(dataset, design)
    fit = fit_cells(cells, design, families)
    results = []
    for i in config.target.subgroups:
        cfg_i = TestConfig(
            delta=config.delta, alpha=config.alpha, b=config.b, seed=config.seed,
            target=DistanceTarget.one(i),
        )
        results.append(_run_test(cells, design, families, cfg_i, workers, fit=fit))
    return IuTestResult(
        results=tuple(results),
        subgroups=config.target.subgroups,
        p_value=max(r.p_value for r in results),
        reject=all(r.reject for r in results),
    )


# The test runners are library API whose names begin with "test_"; keep
# pytest from collecting them when imported into a test module.
test_one.__test__ = False
test_many.__test__ = False
test_many_iu.__test__ = False


def calibrate_delta(
    dataset: Dataset | CellStats,
    design: StudyDesign,
    families,
    target: DistanceTarget,
    alpha: float,
    b: int,
    seed: int,
    grid,
    workers: int = 1,
) -> CalibrationResult:
    """Smallest threshold on a grid at which similarity can be claimed.

    Runs the bootstrap test at every threshold of the increasing ``grid``
    with common random numbers (one seed for all thresholds) and returns the
    p-value curve plus the smallest rejecting threshold (None if the test
    rejects nowhere on the grid).  Thresholds at or below the observed
    statistic share one bootstrap run, since the plug-in estimate is the
    unconstrained fit for all of them.
    """
    grid = [float(d) for d in grid]
    if not grid or any(d <= 0 for d in grid) or any(
        b2 <= a2 for a2, b2 in zip(grid, grid[1:])
    ):
        raise ValueError("grid must be strictly increasing and positive")
    if isinstance(dataset, CellStats):
        cells = dataset
    else:
        cells = CellStats.from_dataset(dataset, design)
    fit = fit_cells(cells, design, families)
    statistic = distance_for_target(
        fit.models, design.weights, target, design.dose_range
    ).value

    unconstrained_values: NDArray[np.float64] | None = None
    points: list[CalibrationPoint] = []
    for delta in grid:
        config = TestConfig(delta=delta, alpha=alpha, b=b, seed=seed, target=target)
        if statistic >= delta:
            if unconstrained_values is None:
                res = _run_test(cells, design, families, config, workers, fit=fit)
                unconstrained_values = res.distribution.values
            values = unconstrained_values
        else:
            res = _run_test(cells, design, families, config, workers, fit=fit)
            values = res.distribution.values
        quantile = empirical_quantile(values, alpha)
        points.append(
            CalibrationPoint(
                delta=delta,
                quantile=quantile,
                p_value=p_value_of(values, statistic),
                reject=bool(statistic < quantile),
            )
        )
    delta_hat = next((p.delta for p in points if p.reject), None)
    violations = tuple(
        p.delta for p in points if delta_hat is not None and p.delta > delta_hat and not p.reject
    )
    return CalibrationResult(
        statistic=float(statistic),
        points=tuple(points),
        delta_hat=delta_hat,
        monotone_violations=violations,
    )
