"""Construct the labeled case-study CSV shipped under data/.

The original trial data carries no region labels and the random region
allocation behind the published analysis is not recoverable, so the shipped
file is a synthetic reconstruction with the same structure: 369 patients at
doses 0..4 split 58/141/170 across the three regions, built so that the
maximum-likelihood fit reproduces the published per-region curves and error
variances exactly:

* residuals are drawn per region, projected onto the orthocomplement of the
  model's gradient column space at the published parameters (making the
  published parameters a stationary point of the least-squares objective),
* then rescaled so the mean squared residual equals the published variance.

Rerunning this script regenerates data/case_study.csv byte-identically.
"""

import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from dosequiv.design import Dataset, StudyDesign, save_csv
from dosequiv.estimate import FamilySpec, fit_mle
from dosequiv.models import ModelFamily, emax_model, evaluate, gradient

SEED = 20240917

DESIGN = StudyDesign(
    doses=np.array([0.0, 1.0, 2.0, 3.0, 4.0]),
    allocations=np.array(
        [
            [12, 12, 12, 11, 11],  # region 1: 58
            [29, 28, 28, 28, 28],  # region 2: 141
            [34, 34, 34, 34, 34],  # region 3: 170
        ]
    ),
    weights=np.array([1 / 7, 3 / 7, 3 / 7]),
    labels=("J", "A", "E"),
)

CURVES = [
    emax_model(0.38, 0.66, 3.94, 1.0, fixed_hill=True),
    emax_model(0.00, 0.68, 1.41, 1.0, fixed_hill=True),
    emax_model(-0.03, 0.90, 0.85, 1.0, fixed_hill=True),
]

SIGMA2 = np.array([0.58, 0.67, 0.72])


def build() -> Dataset:
    rng = np.random.default_rng(SEED)
    subs, dixs, resps = [], [], []
    for l in range(DESIGN.k):
        x_idx = np.repeat(np.arange(DESIGN.r), DESIGN.allocations[l])
        x = DESIGN.doses[x_idx]
        n_l = x.size
        mu = evaluate(CURVES[l], x)
        jac = gradient(CURVES[l], x)
        eps = rng.normal(0.0, np.sqrt(SIGMA2[l]), size=n_l)
        # Remove the gradient-space component, then rescale to the target MSE.
        coef = np.linalg.solve(jac.T @ jac, jac.T @ eps)
        resid = eps - jac @ coef
        resid *= np.sqrt(n_l * SIGMA2[l] / np.sum(resid**2))
        subs.append(np.full(n_l, l + 1))
        dixs.append(x_idx)
        resps.append(mu + resid)
    return Dataset(np.concatenate(subs), np.concatenate(dixs), np.concatenate(resps))


def main() -> None:
    out = pathlib.Path(__file__).resolve().parents[1] / "data" / "case_study.csv"
    dataset = build()
    dataset.validate(DESIGN)
    save_csv(dataset, DESIGN, out)
    print(f"wrote {out} ({len(dataset)} records)")

    fams = [FamilySpec(ModelFamily.EMAX_FIXED_HILL, hill=1.0)] * 3
    fit = fit_mle(dataset, DESIGN, fams)
    for l, (beta, s2) in enumerate(zip(fit.betas, fit.sigma2)):
        target = CURVES[l].params
        print(
            f"region {l + 1}: beta={np.round(beta, 6)} (published {target}), "
            f"sigma2={s2:.6f} (published {SIGMA2[l]})"
        )
        assert np.max(np.abs(beta - target)) < 1e-5, "MLE does not reproduce published fit"
        assert abs(s2 - SIGMA2[l]) < 1e-9, "variance does not reproduce published value"


if __name__ == "__main__":
    main()
