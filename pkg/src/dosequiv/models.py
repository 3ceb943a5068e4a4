"""Parametric dose-response curve families: evaluation and parameter gradients.

Two E-max families are shipped:

``EMAX_FULL``
    4 free parameters ``(e0, emax, ed50, h)``:
    ``mu(d) = e0 + emax * d**h / (d**h + ed50**h)``.

``EMAX_FIXED_HILL``
    3 free parameters ``(e0, emax, ed50)`` with the Hill coefficient ``h``
    held at a model-level constant (default 1).

Models are immutable after construction and safe to share across threads.
Other curve families would plug in behind the same interface but are not
shipped; everything downstream only relies on ``evaluate``/``gradient``.

Conventions at the edges of the dose range:

* ``d = 0`` evaluates to ``e0`` exactly, for every admissible ``h > 0``.
* At ``d = 0`` the parameter gradient is ``(1, 0, ..., 0)``; in particular
  the derivative with respect to ``h`` is defined as its limit value 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray


class ModelFamily(enum.Enum):
    """Supported curve families; the value doubles as the JSON config name."""

    EMAX_FULL = "emax_full"
    EMAX_FIXED_HILL = "emax_fixed_hill"

    @property
    def n_params(self) -> int:
        return 4 if self is ModelFamily.EMAX_FULL else 3

    @property
    def param_names(self) -> tuple[str, ...]:
        if self is ModelFamily.EMAX_FULL:
            return ("e0", "emax", "ed50", "h")
        return ("e0", "emax", "ed50")


# Default box bounds (compact parameter space; optimizer stability).  The
# ed50 upper bound scales with the dose range; everything is overridable.
E0_BOUNDS = (-10.0, 10.0)
EMAX_BOUNDS = (-10.0, 10.0)
ED50_LOWER = 1e-3
ED50_UPPER_FACTOR = 10.0
HILL_BOUNDS = (0.1, 10.0)


def default_bounds(family: ModelFamily, max_dose: float) -> NDArray[np.float64]:
    """Default per-parameter closed intervals, shape ``(n_params, 2)``."""
    rows = [E0_BOUNDS, EMAX_BOUNDS, (ED50_LOWER, ED50_UPPER_FACTOR * float(max_dose))]
    if family is ModelFamily.EMAX_FULL:
        rows.append(HILL_BOUNDS)
    return np.asarray(rows, dtype=float)


@dataclass(frozen=True)
class EmaxParams:
    """E-max parameter vector in response/dose units.

    Attributes
    ----------
    e0 : float
        Placebo effect, the response at dose 0.
    emax : float
        Maximum effect (asymptote of the effect above placebo).
    ed50 : float
        Dose producing half of ``emax``; must be positive.
    h : float
        Hill coefficient controlling steepness; must be positive.
    """

    e0: float
    emax: float
    ed50: float
    h: float = 1.0

    def __post_init__(self) -> None:
        vals = (self.e0, self.emax, self.ed50, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite E-max parameters: {vals}")
        if self.ed50 <= 0:
            raise ValueError(f"ed50 must be > 0, got {self.ed50}")
        if self.h <= 0:
            raise ValueError(f"h must be > 0, got {self.h}")

    def as_array(self, family: ModelFamily) -> NDArray[np.float64]:
        if family is ModelFamily.EMAX_FULL:
            return np.array([self.e0, self.emax, self.ed50, self.h], dtype=float)
        return np.array([self.e0, self.emax, self.ed50], dtype=float)


@dataclass(frozen=True)
class DoseResponseModel:
    """A curve family together with a concrete parameter vector and box bounds.

    ``params`` has length 4 (``EMAX_FULL``) or 3 (``EMAX_FIXED_HILL``); for the
    fixed-Hill family the Hill coefficient is ``hill``.
    """

    family: ModelFamily
    params: NDArray[np.float64]
    bounds: NDArray[np.float64] | None = None
    hill: float = 1.0
    label: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        params = np.asarray(self.params, dtype=float)
        params.setflags(write=False)
        object.__setattr__(self, "params", params)
        if params.shape != (self.family.n_params,):
            raise ValueError(
                f"{self.family.name} expects {self.family.n_params} parameters, "
                f"got shape {params.shape}"
            )
        if not np.all(np.isfinite(params)):
            raise ValueError(f"non-finite parameters: {params}")
        # Delegate positivity checks to EmaxParams.
        EmaxParams(*self._full_params())
        if self.bounds is not None:
            bounds = np.asarray(self.bounds, dtype=float)
            bounds.setflags(write=False)
            object.__setattr__(self, "bounds", bounds)
            if bounds.shape != (self.family.n_params, 2):
                raise ValueError(f"bounds must have shape ({self.family.n_params}, 2)")
            if np.any(params < bounds[:, 0]) or np.any(params > bounds[:, 1]):
                raise ValueError(f"parameters {params} outside bounds {bounds}")

    def _full_params(self) -> tuple[float, float, float, float]:
        if self.family is ModelFamily.EMAX_FULL:
            e0, emax, ed50, h = self.params
        else:
            e0, emax, ed50 = self.params
            h = self.hill
        return float(e0), float(emax), float(ed50), float(h)

    @property
    def emax_params(self) -> EmaxParams:
        return EmaxParams(*self._full_params())

    def with_params(self, params: NDArray[np.float64]) -> "DoseResponseModel":
        return DoseResponseModel(self.family, params, self.bounds, self.hill, self.label)


def emax_model(
    e0: float,
    emax: float,
    ed50: float,
    h: float = 1.0,
    *,
    fixed_hill: bool = False,
    bounds: NDArray[np.float64] | None = None,
    label: str | None = None,
) -> DoseResponseModel:
    """Convenience constructor from the four scalar E-max parameters."""
    if fixed_hill:
        return DoseResponseModel(
            ModelFamily.EMAX_FIXED_HILL, np.array([e0, emax, ed50]), bounds, h, label
        )
    return DoseResponseModel(
        ModelFamily.EMAX_FULL, np.array([e0, emax, ed50, h]), bounds, h, label
    )


def _check_doses(d: NDArray[np.float64]) -> NDArray[np.float64]:
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("doses must be finite and >= 0")
    return d


def evaluate(model: DoseResponseModel, d) -> NDArray[np.float64] | float:
    """Evaluate ``mu(d)`` at one dose or an array of doses.

    Parameters
    ----------
    model : DoseResponseModel
    d : float or array
        Dose(s), all >= 0.

    Returns
    -------
    float or ndarray
        Response values; scalar input yields a scalar.
    """
    scalar = np.ndim(d) == 0
    d = _check_doses(d)
    e0, emax, ed50, h = model._full_params()
    # 0**h == 0 for h > 0, so d = 0 lands on e0 exactly.
    dh = d if h == 1.0 else d**h
    out = e0 + emax * dh / (dh + ed50**h)
    return float(out) if scalar else out


def gradient(model: DoseResponseModel, d) -> NDArray[np.float64]:
    """Parameter gradient ``d mu / d beta`` at one dose or an array of doses.

    Returns shape ``(n_params,)`` for scalar ``d`` and ``(len(d), n_params)``
    otherwise.  Component order follows ``model.family.param_names``.  At
    ``d = 0`` only the ``e0`` component is nonzero; the Hill component uses
    its limit value 0 there.
    """
    scalar = np.ndim(d) == 0
    d = np.atleast_1d(_check_doses(d))
    e0, emax, ed50, h = model._full_params()
    dh = d**h
    eh = ed50**h
    denom = dh + eh
    frac = dh / denom  # d(mu)/d(emax)
    d_e0 = np.ones_like(d)
    d_ed50 = -emax * dh * h * ed50 ** (h - 1.0) / denom**2
    cols = [d_e0, frac, d_ed50]
    if model.family is ModelFamily.EMAX_FULL:
        with np.errstate(divide="ignore", invalid="ignore"):
            logratio = np.log(np.where(d > 0, d, 1.0)) - np.log(ed50)
        d_h = np.where(d > 0, emax * dh * eh * logratio / denom**2, 0.0)
        cols.append(d_h)
    out = np.column_stack(cols)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(
            f"non-finite gradient for params {model.params} at doses {d}"
        )
    return out[0] if scalar else out


def _eval_and_grad_raw(
    family: ModelFamily,
    params: NDArray[np.float64],
    hill: float,
    doses: NDArray[np.float64],
    log_doses: NDArray[np.float64],
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Validation-free evaluate+gradient for optimizer inner loops.

    ``log_doses`` must be ``log(doses)`` with the placebo entry replaced by
    an arbitrary finite value (its Hill-gradient is 0 by convention anyway).
    """
    if family is ModelFamily.EMAX_FULL:
        e0, emax, ed50, h = params
    else:
        e0, emax, ed50 = params
        h = hill
    dh = doses if h == 1.0 else doses**h
    eh = ed50**h
    denom = dh + eh
    frac = dh / denom
    mu = e0 + emax * frac
    d_ed50 = -emax * dh * h * ed50 ** (h - 1.0) / denom**2
    if family is ModelFamily.EMAX_FULL:
        d_h = np.where(
            doses > 0.0,
            emax * dh * eh * (log_doses - np.log(ed50)) / denom**2,
            0.0,
        )
        grad = np.column_stack([np.ones_like(doses), frac, d_ed50, d_h])
    else:
        grad = np.column_stack([np.ones_like(doses), frac, d_ed50])
    return mu, grad
