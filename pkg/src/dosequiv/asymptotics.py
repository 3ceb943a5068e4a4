"""Constructive large-sample objects: information blocks and limit samplers.

With group fractions ``kappa_l = n_l / n`` and within-group dose fractions
``kappa_lj = n_lj / n_l``, the scaled MLE error ``sqrt(n) (betahat - beta)``
is asymptotically centered normal with block-diagonal covariance

    Sigma = diag( (1/kappa_1) Sigma_1^{-1}, ..., (1/kappa_k) Sigma_k^{-1} ),
    Sigma_l = (1/sigma2_l) sum_j kappa_lj grad_l(d_j) grad_l(d_j)^T ,

where ``grad_l`` is the parameter gradient of the subgroup curve.  The scaled
error of the plug-in distance converges to the non-normal limit

    T = max( max_{d in E+} G(d),  max_{d in E-} -G(d) ),
    G(d) = (d/dbeta [mu_i(d) - pop(d)])^T Z,    Z ~ N(0, Sigma),

with ``E+-`` the doses where the signed curve difference attains plus/minus
its maximum; the several-subgroup limit ``S`` is the same construction over
indexed extremal pairs ``(i, d)``.  This module builds ``Sigma`` exactly and
samples ``T``/``S`` by chunked, seed-stable Monte Carlo; the test suite uses
it to validate the bootstrap against the theory at large ``n``.

The theory assumes the limit variable has a continuous distribution, which
is unchecked when the extremal set has more than one point; callers can
consult :func:`multi_point` to flag that case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .design import StudyDesign
from .distance import DistanceTarget, distance_for_target
from .models import DoseResponseModel, gradient

EIG_FLOOR = 1e-12
EIG_FLOOR_MASS = 1e-8
CHUNK = 1 << 14


@dataclass(frozen=True)
class AsymptoticModel:
    """Design limits, true curves, covariance, and extremal sets for a target."""

    kappas: NDArray[np.float64]          # (k,)
    kappa_doses: NDArray[np.float64]     # (k, r)
    sigma2: NDArray[np.float64]          # (k,)
    models: tuple[DoseResponseModel, ...]
    weights: NDArray[np.float64]
    doses: NDArray[np.float64]
    sigma_matrix: NDArray[np.float64]    # (gamma, gamma)
    target: DistanceTarget
    distance_value: float
    extremal_plus: tuple[tuple[int, float], ...]
    extremal_minus: tuple[tuple[int, float], ...]


def information_blocks(
    kappa_doses,
    doses,
    models,
    sigma2,
) -> tuple[NDArray[np.float64], list[NDArray[np.float64]]]:
    """Assemble ``Sigma`` and the per-subgroup information blocks ``Sigma_l``.

    Parameters
    ----------
    kappa_doses : (k, r) array
        Within-group dose fractions ``kappa_lj`` scaled by the group
        fraction: pass ``allocations / n_l`` rows together with ``kappas``
        folded in by the caller, or use :func:`build_asymptotic_model`.
        Here the rows must sum to 1 and ``Sigma`` is returned unscaled by
        ``kappa_l`` (the caller applies ``1/kappa_l``).

    Returns
    -------
    (Sigma_unscaled_blocks_stacked, blocks)
        ``blocks[l]`` is ``Sigma_l``; the first element is the block-diagonal
        matrix ``diag(Sigma_1^{-1}, ...)`` without the ``1/kappa_l`` factors.

    Raises
    ------
    np.linalg.LinAlgError
        If some ``Sigma_l`` is singular (the message names the subgroup).
    """
    kappa_doses = np.asarray(kappa_doses, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ValueError("information blocks need strictly positive variances")
    blocks: list[NDArray[np.float64]] = []
    inverses: list[NDArray[np.float64]] = []
    for l, model in enumerate(models):
        g = gradient(model, doses)  # (r, gamma_l)
        block = (g.T * kappa_doses[l]) @ g / sigma2[l]
        blocks.append(block)
        try:
            inverses.append(np.linalg.inv(block))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"information block for subgroup {l + 1} is singular: {exc}"
            ) from exc
    gamma = sum(b.shape[0] for b in blocks)
    big = np.zeros((gamma, gamma))
    off = 0
    for inv in inverses:
        s = inv.shape[0]
        big[off : off + s, off : off + s] = inv
        off += s
    return big, blocks


def build_asymptotic_model(
    design: StudyDesign,
    models,
    sigma2,
    target: DistanceTarget,
) -> AsymptoticModel:
    """Limits, covariance, and extremal sets implied by a design and true curves."""
    models = tuple(models)
    sigma2 = np.asarray(sigma2, dtype=float)
    n_l = design.group_sizes.astype(float)
    kappas = n_l / n_l.sum()
    kappa_doses = design.allocations / n_l[:, None]
    inv_stack, _blocks = information_blocks(kappa_doses, design.doses, models, sigma2)
    # Scale each block by 1/kappa_l.
    sigma_matrix = inv_stack.copy()
    off = 0
    for l, model in enumerate(models):
        s = model.family.n_params
        sigma_matrix[off : off + s, off : off + s] /= kappas[l]
        off += s
    dres = distance_for_target(models, design.weights, target, design.dose_range)
    plus = tuple((i, d) for (i, d), s in zip(dres.argmax_points, dres.signs) if s > 0)
    minus = tuple((i, d) for (i, d), s in zip(dres.argmax_points, dres.signs) if s < 0)
    return AsymptoticModel(
        kappas=kappas,
        kappa_doses=kappa_doses,
        sigma2=sigma2,
        models=models,
        weights=np.asarray(design.weights, dtype=float),
        doses=design.doses,
        sigma_matrix=sigma_matrix,
        target=target,
        distance_value=dres.value,
        extremal_plus=plus,
        extremal_minus=minus,
    )


def multi_point(asym: AsymptoticModel) -> bool:
    """True when the extremal set has more than one point (continuity of the
    limit distribution is then unverified)."""
    return (len(asym.extremal_plus) + len(asym.extremal_minus)) > 1


def _difference_gradient(asym: AsymptoticModel, subgroup: int, dose: float) -> NDArray[np.float64]:
    """Stacked gradient of ``mu_i(d) - pop(d)`` with respect to all parameters."""
    parts = []
    for l, model in enumerate(asym.models):
        coef = (1.0 if (subgroup - 1) == l else 0.0) - asym.weights[l]
        parts.append(coef * gradient(model, dose))
    return np.concatenate(parts)


def _covariance_factor(sigma: NDArray[np.float64]) -> NDArray[np.float64]:
    eigvals, eigvecs = np.linalg.eigh(sigma)
    clipped = np.clip(eigvals, EIG_FLOOR, None)
    raised = float(np.sum(clipped - eigvals))
    trace = float(np.trace(sigma))
    if raised > EIG_FLOOR_MASS * max(trace, EIG_FLOOR):
        raise np.linalg.LinAlgError(
            f"covariance is not positive definite (floored eigenvalue mass "
            f"{raised:.3e} exceeds {EIG_FLOOR_MASS:g} of trace {trace:.3e})"
        )
    return eigvecs * np.sqrt(clipped)


def _sample_limit(asym: AsymptoticModel, n_draws: int, seed: int) -> NDArray[np.float64]:
    rows = []
    for i, d in asym.extremal_plus:
        rows.append(_difference_gradient(asym, i, d))
    for i, d in asym.extremal_minus:
        rows.append(-_difference_gradient(asym, i, d))
    if not rows:
        raise ValueError("extremal sets are empty")
    a_mat = np.vstack(rows)  # (n_points, gamma)
    factor = _covariance_factor(asym.sigma_matrix)  # (gamma, gamma)
    proj = a_mat @ factor  # (n_points, gamma)
    out = np.empty(n_draws)
    pos = 0
    chunk_idx = 0
    while pos < n_draws:
        size = min(CHUNK, n_draws - pos)
        rng = np.random.default_rng(np.random.SeedSequence([seed, chunk_idx]))
        # One row of draws per sample keeps short runs prefix-identical to
        # longer runs under the same seed.
        xi = rng.standard_normal((size, factor.shape[1]))
        out[pos : pos + size] = (xi @ proj.T).max(axis=1)
        pos += size
        chunk_idx += 1
    return out


def sample_T(asym: AsymptoticModel, subgroup: int, n_draws: int, seed: int) -> NDArray[np.float64]:
    """Draws of the one-subgroup limit variable ``T``.

    ``asym`` must have been built for the one-subgroup target of ``subgroup``.
    Sampling is chunked with per-chunk substreams, so results are identical
    for any chunk schedule and match :func:`sample_S` for a singleton set
    under the same seed.
    """
    if asym.target.kind != "one" or asym.target.subgroups != (subgroup,):
        raise ValueError("asym was not built for this one-subgroup target")
    return _sample_limit(asym, n_draws, seed)


def sample_S(asym: AsymptoticModel, subgroups, n_draws: int, seed: int) -> NDArray[np.float64]:
    """Draws of the several-subgroup limit variable ``S``."""
    subgroups = tuple(int(i) for i in subgroups)
    if asym.target.kind != "many" or asym.target.subgroups != subgroups:
        raise ValueError("asym was not built for this subgroup set")
    return _sample_limit(asym, n_draws, seed)
