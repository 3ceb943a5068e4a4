import pathlib

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dosequiv.design import StudyDesign, load_csv
from dosequiv.estimate import FamilySpec
from dosequiv.models import ModelFamily, emax_model

settings.register_profile(
    "numeric", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("numeric")

REPO_ROOT = pathlib.Path(__file__).resolve().parents[1]
CASE_STUDY_CSV = REPO_ROOT / "data" / "case_study.csv"
SCENARIO_DIR = REPO_ROOT / "scenarios"
CONFIG_DIR = REPO_ROOT / "configs"

# Published case-study fits: (e0, emax, ed50) per region, Hill fixed at 1.
CASE_STUDY_CURVES = (
    (0.38, 0.66, 3.94),
    (0.00, 0.68, 1.41),
    (-0.03, 0.90, 0.85),
)
CASE_STUDY_SIGMA2 = (0.58, 0.67, 0.72)


@pytest.fixture(scope="session")
def case_design():
    return StudyDesign(
        doses=np.array([0.0, 1.0, 2.0, 3.0, 4.0]),
        allocations=np.array([[12, 12, 12, 11, 11], [29, 28, 28, 28, 28], [34, 34, 34, 34, 34]]),
        weights=np.array([1 / 7, 3 / 7, 3 / 7]),
        labels=("J", "A", "E"),
    )


@pytest.fixture(scope="session")
def case_dataset(case_design):
    return load_csv(CASE_STUDY_CSV, case_design)


@pytest.fixture(scope="session")
def case_families():
    return [FamilySpec(ModelFamily.EMAX_FIXED_HILL, hill=1.0)] * 3


@pytest.fixture(scope="session")
def case_models():
    return tuple(emax_model(*c, 1.0, fixed_hill=True) for c in CASE_STUDY_CURVES)


@pytest.fixture(scope="session")
def trial_design():
    """Balanced three-subgroup design: 6 doses, 25 patients per cell."""
    return StudyDesign(
        doses=np.array([0.0, 10.0, 25.0, 50.0, 100.0, 150.0]),
        allocations=np.full((3, 6), 25, dtype=int),
        weights=np.array([1 / 7, 3 / 7, 3 / 7]),
    )


@pytest.fixture(scope="session")
def trial_models():
    """Boundary configuration of the balanced design."""
    return (
        emax_model(0, 0.42, 7, 1, fixed_hill=True),
        emax_model(0, 0.46, 26, 1, fixed_hill=True),
        emax_model(0, 0.46, 25.5, 1, fixed_hill=True),
    )


@pytest.fixture(scope="session")
def trial_families():
    return [FamilySpec(ModelFamily.EMAX_FIXED_HILL, hill=1.0)] * 3
