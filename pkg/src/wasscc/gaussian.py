"""Standard-normal special functions and the generalized mean m_alpha."""

import math

import numpy as np

from . import kernels

SQRT_2PI = math.sqrt(2.0 * math.pi)


class ProbLevel(float):
    """A probability strictly inside (0, 1).

    Behaves as a plain ``float``; construction rejects the endpoints and
    anything non-finite.
    """

    def __new__(cls, p, name="p"):
        value = float(p)
        if not (0.0 < value < 1.0):
            raise ValueError(f"{name} must lie in the open interval (0, 1), got {p!r}")
        return super().__new__(cls, value)


def std_pdf(z):
    """Standard normal density; accepts scalars or arrays."""
    if np.ndim(z) == 0:
        z = float(z)
        return kernels.INV_SQRT_2PI * math.exp(-0.5 * z * z)
    z = np.asarray(z, dtype=float)
    return kernels.INV_SQRT_2PI * np.exp(-0.5 * z * z)


def std_cdf(z):
    """Standard normal CDF, ``erfc(-z / sqrt(2)) / 2``.

    ``erfc`` is the C library's, accurate to a few ulp in relative terms, so the
    lower tail keeps full relative precision down to z = -37 and beyond.
    """
    if np.ndim(z) == 0:
        return 0.5 * math.erfc(-float(z) * kernels.INV_SQRT2)
    return kernels.ndtr_array(z)


def std_quantile(p):
    """Inverse of :func:`std_cdf` on (0, 1).

    Acklam's rational initializer followed by two Halley steps; the upper half
    is computed as ``-q(1 - p)`` so the refinement always runs on the
    relatively accurate lower tail.
    """
    if np.ndim(p) == 0:
        return _quantile_scalar(float(ProbLevel(p)))
    arr = np.ascontiguousarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ValueError("std_quantile requires every level in (0, 1)")
    return kernels.ndtri_array(arr)


def _quantile_scalar(p):
    return kernels.ndtri_scalar(p)


def gaussian_cvar(tail):
    """``CVaR_{1-tail}(Y)`` for standard normal Y: ``pdf(q(1 - tail)) / tail``."""
    eps = float(ProbLevel(tail, "tail"))
    # pdf is even, so q(eps) avoids the rounding in 1 - eps
    return std_pdf(_quantile_scalar(eps)) / eps


def gaussian_var(level):
    """``VaR_level(Y)`` for standard normal Y (the ``level`` quantile)."""
    return std_quantile(level)


def upper_partial_expectation(t):
    """``E[Y 1{Y >= t}]`` for standard normal Y, which is ``pdf(t)``."""
    return std_pdf(t)


def tail_mass_integral(lo, hi):
    """``int_lo^hi VaR_q(Y) dq`` as a difference of densities.

    Both arguments are CDF levels in (0, 1).
    """
    return std_pdf(std_quantile(lo)) - std_pdf(std_quantile(hi))


def m_alpha(a, b, theta, alpha):
    """Generalized mean ``m_alpha(a, b; theta)``.

    ``alpha`` may be ``+inf``/``-inf``. Returns 0 when ``a * b == 0``. Near
    ``alpha = 0`` the power mean is computed in the log domain; below 1e-12 it
    switches to the geometric branch.
    """
    if a < 0 or b < 0:
        raise ValueError("m_alpha is defined for nonnegative arguments")
    if not (0.0 <= theta <= 1.0):
        raise ValueError("theta must lie in [0, 1]")
    if a * b == 0:
        return 0.0
    if alpha == math.inf:
        return float(max(a, b))
    if alpha == -math.inf:
        return float(min(a, b))
    la, lb = math.log(a), math.log(b)
    if abs(alpha) < 1e-12:
        return math.exp(theta * la + (1.0 - theta) * lb)
    if abs(alpha) * max(abs(la), abs(lb)) < 1.0:
        # log1p/expm1 keep the 1/alpha division free of cancellation
        s = theta * math.expm1(alpha * la) + (1.0 - theta) * math.expm1(alpha * lb)
        return math.exp(math.log1p(s) / alpha)
    # log-sum-exp of theta a^alpha + (1 - theta) b^alpha
    terms = []
    if theta > 0:
        terms.append(math.log(theta) + alpha * la)
    if theta < 1:
        terms.append(math.log1p(-theta) + alpha * lb)
    top = max(terms)
    lse = top + math.log(sum(math.exp(t - top) for t in terms))
    return math.exp(lse / alpha)
