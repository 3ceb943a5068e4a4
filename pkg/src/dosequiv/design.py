"""Trial structure, datasets, CSV ingestion, and synthetic data generation.

A :class:`StudyDesign` fixes the dose levels ``d_1 < ... < d_r`` (with
``d_1 = 0`` for placebo), the per-cell patient counts ``n[l, j]`` for
subgroup ``l`` at dose ``j``, and the known population proportions
``p_1..p_k`` used to form the full-population curve.

Reproducibility: all random generation in this package uses numpy's PCG64
bit generator seeded through ``numpy.random.SeedSequence``; ``generate``
draws responses in canonical ``(subgroup, dose, patient)`` order, so a given
``(seed, design, models, variances)`` always yields a bit-identical dataset,
on every platform and thread count.

CSV format (the single ingestion format)::

    subgroup,dose,response
    1,0,0.4171
    ...

with a 1-based integer subgroup index, decimal dose and response, UTF-8,
and LF or CRLF line endings.  ``save_csv`` emits LF and 17-significant-digit
decimals so that a save/load round trip is bit-exact.  Doses are matched to
the design by parsed decimal value, not by column position or index, because
different studies use different dose scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import DataValidationError
from .models import DoseResponseModel, evaluate

RNG_SCHEME = "numpy PCG64 via SeedSequence; draws in (subgroup, dose, patient) order"

CSV_HEADER = "subgroup,dose,response"


@dataclass(frozen=True)
class StudyDesign:
    """Doses, per-cell allocations, and population weights of a trial.

    Attributes
    ----------
    doses : ndarray, shape (r,)
        Strictly increasing dose levels with ``doses[0] == 0`` (placebo).
    allocations : ndarray, shape (k, r)
        Patient counts ``n[l, j]`` per subgroup and dose, all >= 1.
    weights : ndarray, shape (k,)
        Known population proportions ``p_l`` (positive, summing to 1).
    labels : tuple of str, optional
        Subgroup display labels (metadata only; indices stay 1-based ints).
    """

    doses: NDArray[np.float64]
    allocations: NDArray[np.int64]
    weights: NDArray[np.float64]
    labels: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        doses = np.asarray(self.doses, dtype=float)
        alloc = np.asarray(self.allocations, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=float)
        for name, arr in (("doses", doses), ("allocations", alloc), ("weights", weights)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if doses.ndim != 1 or doses.size < 2:
            raise ValueError("need at least two dose levels")
        if doses[0] != 0.0:
            raise ValueError(f"first dose must be the placebo 0, got {doses[0]}")
        if np.any(np.diff(doses) <= 0):
            raise ValueError("doses must be strictly increasing")
        if alloc.ndim != 2 or alloc.shape[1] != doses.size:
            raise ValueError(f"allocations must have shape (k, {doses.size})")
        if np.any(alloc < 1):
            raise ValueError("every (subgroup, dose) cell needs at least one patient")
        if weights.shape != (alloc.shape[0],):
            raise ValueError("weights must have one entry per subgroup")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to 1")
        if self.labels is not None and len(self.labels) != alloc.shape[0]:
            raise ValueError("labels must have one entry per subgroup")

    @property
    def k(self) -> int:
        """Number of subgroups."""
        return self.allocations.shape[0]

    @property
    def r(self) -> int:
        """Number of dose levels."""
        return self.doses.size

    @property
    def group_sizes(self) -> NDArray[np.int64]:
        """Per-subgroup totals ``n_l``."""
        return self.allocations.sum(axis=1)

    @property
    def n_total(self) -> int:
        return int(self.allocations.sum())

    @property
    def dose_range(self) -> tuple[float, float]:
        return float(self.doses[0]), float(self.doses[-1])


@dataclass(frozen=True)
class GroupVariances:
    """Per-subgroup error variances ``sigma2_l``.

    The model assumes strictly positive variances; a zero entry is accepted
    here so noiseless data can be generated for exact-recovery checks, but
    estimation and the asymptotic machinery require positive values.
    """

    sigma2: NDArray[np.float64]

    def __post_init__(self) -> None:
        sigma2 = np.asarray(self.sigma2, dtype=float)
        sigma2.setflags(write=False)
        object.__setattr__(self, "sigma2", sigma2)
        if sigma2.ndim != 1 or sigma2.size == 0:
            raise ValueError("sigma2 must be a non-empty 1-d sequence")
        if np.any(sigma2 < 0) or not np.all(np.isfinite(sigma2)):
            raise ValueError("variances must be finite and >= 0")


@dataclass(frozen=True)
class Dataset:
    """Observations keyed by (subgroup, dose index).

    Attributes
    ----------
    subgroup : ndarray of int
        1-based subgroup index per record.
    dose_index : ndarray of int
        0-based index into the design's dose vector per record.
    response : ndarray of float
        Observed response per record.
    """

    subgroup: NDArray[np.int64]
    dose_index: NDArray[np.int64]
    response: NDArray[np.float64]

    def __post_init__(self) -> None:
        sub = np.asarray(self.subgroup, dtype=np.int64)
        dix = np.asarray(self.dose_index, dtype=np.int64)
        resp = np.asarray(self.response, dtype=float)
        if not (sub.shape == dix.shape == resp.shape) or sub.ndim != 1:
            raise ValueError("subgroup, dose_index, response must be equal-length 1-d arrays")
        if not np.all(np.isfinite(resp)):
            raise DataValidationError("responses must all be finite")
        for name, arr in (("subgroup", sub), ("dose_index", dix), ("response", resp)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.subgroup.size

    def validate(self, design: StudyDesign) -> None:
        """Check record counts per (subgroup, dose) cell against the design."""
        k, r = design.k, design.r
        if self.subgroup.size and (self.subgroup.min() < 1 or self.subgroup.max() > k):
            bad = int(self.subgroup[(self.subgroup < 1) | (self.subgroup > k)][0])
            raise DataValidationError(f"subgroup index {bad} outside 1..{k}")
        counts = np.zeros((k, r), dtype=np.int64)
        np.add.at(counts, (self.subgroup - 1, self.dose_index), 1)
        if not np.array_equal(counts, design.allocations):
            mism = np.argwhere(counts != design.allocations)
            msgs = [
                f"cell (subgroup {l + 1}, dose {design.doses[j]:g}): "
                f"expected {design.allocations[l, j]}, found {counts[l, j]}"
                for l, j in mism[:10]
            ]
            raise DataValidationError("record counts do not match design: " + "; ".join(msgs))


def load_csv(path, design: StudyDesign) -> Dataset:
    """Load and validate a ``subgroup,dose,response`` CSV against a design.

    Doses in the file must match the design's dose levels by decimal value.
    Raises :class:`DataValidationError` naming the offending dose, subgroup,
    cell, or line number.
    """
    subs: list[int] = []
    dixs: list[int] = []
    resps: list[float] = []
    dose_lookup = {float(d): j for j, d in enumerate(design.doses)}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataValidationError(f"{path}: empty file")
    header = lines[0].strip().lower().replace(" ", "")
    if header != CSV_HEADER:
        raise DataValidationError(
            f"{path}: expected header '{CSV_HEADER}', found '{lines[0].strip()}'"
        )
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataValidationError(f"{path}:{lineno}: expected 3 fields, found {len(parts)}")
        try:
            sub = int(parts[0])
            dose = float(parts[1])
            resp = float(parts[2])
        except ValueError as exc:
            raise DataValidationError(f"{path}:{lineno}: unparseable row ({exc})") from exc
        if not (1 <= sub <= design.k):
            raise DataValidationError(
                f"{path}:{lineno}: subgroup index {sub} outside 1..{design.k}"
            )
        if dose not in dose_lookup:
            raise DataValidationError(
                f"{path}:{lineno}: dose {parts[1].strip()} is not a design dose level"
            )
        subs.append(sub)
        dixs.append(dose_lookup[dose])
        resps.append(resp)
    ds = Dataset(np.array(subs), np.array(dixs), np.array(resps))
    ds.validate(design)
    return ds


def save_csv(dataset: Dataset, design: StudyDesign, path) -> None:
    """Write a dataset as CSV (LF endings, 17 significant digits)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for sub, dix, resp in zip(dataset.subgroup, dataset.dose_index, dataset.response):
            fh.write(f"{int(sub)},{design.doses[dix]:.17g},{resp:.17g}\n")


def generate(
    design: StudyDesign,
    models: tuple[DoseResponseModel, ...] | list[DoseResponseModel],
    variances: GroupVariances,
    seed,
) -> Dataset:
    """Simulate responses ``Y = mu_l(d_j) + sigma_l * z`` with standard-normal z.

    ``seed`` is an integer (or a ``numpy.random.SeedSequence`` for callers
    that manage their own streams).  Identical inputs yield a bit-identical
    dataset; see :data:`RNG_SCHEME`.
    """
    if len(models) != design.k:
        raise ValueError(f"need {design.k} models, got {len(models)}")
    if variances.sigma2.size != design.k:
        raise ValueError(f"need {design.k} variances, got {variances.sigma2.size}")
    rng = np.random.default_rng(seed)
    subs: list[NDArray[np.int64]] = []
    dixs: list[NDArray[np.int64]] = []
    resps: list[NDArray[np.float64]] = []
    for l in range(design.k):
        sigma = float(np.sqrt(variances.sigma2[l]))
        for j in range(design.r):
            n_cell = int(design.allocations[l, j])
            mean = evaluate(models[l], float(design.doses[j]))
            z = rng.standard_normal(n_cell)
            subs.append(np.full(n_cell, l + 1, dtype=np.int64))
            dixs.append(np.full(n_cell, j, dtype=np.int64))
            resps.append(mean + sigma * z)
    return Dataset(np.concatenate(subs), np.concatenate(dixs), np.concatenate(resps))
