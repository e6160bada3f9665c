"""Wasserstein distributionally robust chance constraints with Gaussian references."""

from ._jit import USE_NUMBA
from .coeff import c_opt, c_pess, coefficient, nominal_coefficient, watershed
from .gaussian import gaussian_cvar, m_alpha, std_cdf, std_pdf, std_quantile

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA",
    "c_opt",
    "c_pess",
    "coefficient",
    "gaussian_cvar",
    "m_alpha",
    "nominal_coefficient",
    "std_cdf",
    "std_pdf",
    "std_quantile",
    "watershed",
]
