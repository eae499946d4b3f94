"""Additive-model fitting by simplified smooth backfitting and tests on its components."""

__version__ = "0.1.0"

from .backfit import AdditiveFit, ModelSpec, fit_backfitting, fit_explicit, hat_matrices  # noqa: E402
from .bandwidth import BandwidthSearch, select_bandwidths_cv, testing_bandwidth  # noqa: E402
from .bootstrap import BootstrapPlan, BootstrapResult, conditional_bootstrap, run_test  # noqa: E402
from .data import Dataset, read_csv  # noqa: E402
from .inference import LossSpec, TestProblem, TestReport, are_lf_glr  # noqa: E402
from .kernel import KernelSpec  # noqa: E402

__all__ = [
    "AdditiveFit",
    "BandwidthSearch",
    "BootstrapPlan",
    "BootstrapResult",
    "Dataset",
    "KernelSpec",
    "LossSpec",
    "ModelSpec",
    "TestProblem",
    "TestReport",
    "are_lf_glr",
    "conditional_bootstrap",
    "fit_backfitting",
    "fit_explicit",
    "hat_matrices",
    "read_csv",
    "run_test",
    "select_bandwidths_cv",
    "testing_bandwidth",
]
