"""Hierarchical Archimedean copulas for competing-risks survival analysis."""

from .generators import (
    DomainError,
    EmpiricalGenerator,
    ParametricGenerator,
    SubordinatorGenerator,
    check_nesting,
    phi,
    phi_derivs,
    phi_inverse,
)
from .hac import HierarchicalCopula, IndependentCopula, SymmetricCopula, cdf, partial, kendall_tau_exact
from .marginals import MonotoneSurvivalNet, WeibullCoxMarginals
from .metrics import ctd_index, ibs, predict, predict_cif, survival_l1
from .sampling import SurvivalDataset, default_spec, generate_synthetic, sample_copula
from .training import TrainConfig, fit, fit_inner_regeneration, fit_pairwise, select_structure

__version__ = "0.1.0"
