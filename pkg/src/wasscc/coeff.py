"""Scalar SOC coefficients for Gaussian references.

``c_pess`` and ``c_opt`` are one-dimensional optimizations over an auxiliary
tail level ``eps'``. With ``K(q) = pdf(Phi^{-1}(q))`` (the partial expectation
``E[Y 1{Y >= Phi^{-1}(1-q)}]``) the two objectives are

    pessimistic:  inf_{e in (0, eps)}  (delta + K(eps) - K(e)) / (eps - e)
    optimistic:   sup_{e in (eps, 1)}  (-delta + K(e) - K(eps)) / (e - eps)

The first is quasiconvex and the second quasiconcave, and each has a strictly
monotone stationarity function, so a golden-section bracket followed by
bisection on the stationarity sign finds the global optimum.
"""

import csv
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .gaussian import ProbLevel, std_pdf, std_quantile
from . import kernels

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_CLIP = 1e-9


class DomainError(ValueError):
    """Argument outside the region where a coefficient is defined."""


@dataclass(frozen=True)
class CoeffResult:
    c: float
    argopt_eps_prime: float
    iterations: int
    residual: float


@dataclass(frozen=True)
class WatershedPoint:
    eps: float
    delta_star: float
    delta_root: float = math.nan


def _K(q):
    # pdf is even, so pdf(q(1 - e)) == pdf(q(e)) and the low tail is exact
    return std_pdf(kernels.ndtri_scalar(q))


def _minimize_unimodal(f, G, lo, hi):
    """Minimize unimodal ``f`` on [lo, hi]; ``G`` is increasing with ``G(x*) = 0``."""
    a, b = lo, hi
    iterations = 0
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > 1e-3 * (hi - lo):
        iterations += 1
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    # widen to the full interval if the stationary point is not bracketed
    if G(a) > 0.0:
        a = lo
    if G(b) < 0.0:
        b = hi
    ga, gb = G(a), G(b)
    if ga >= 0.0:
        return a, iterations, abs(ga)
    if gb <= 0.0:
        return b, iterations, abs(gb)
    while True:
        iterations += 1
        mid = 0.5 * (a + b)
        if not (a < mid < b) or b - a <= 1e-16 * b:
            break
        gm = G(mid)
        if gm == 0.0:
            a = b = mid
            break
        if gm < 0.0:
            a = mid
        else:
            b = mid
    x = a if abs(G(a)) <= abs(G(b)) else b
    return x, iterations, abs(G(x))


def _check_delta(delta):
    delta = float(delta)
    if not (delta > 0.0) or not math.isfinite(delta):
        raise DomainError(f"delta must be positive and finite, got {delta!r}")
    return delta


@functools.lru_cache(maxsize=4096)
def c_pess(eps, delta):
    """Pessimistic coefficient ``c_p`` for ``eps`` in (0, 1/2] and ``delta > 0``."""
    eps = float(ProbLevel(eps, "eps"))
    if eps > 0.5:
        raise DomainError(f"c_pess requires eps <= 0.5, got {eps}")
    delta = _check_delta(delta)
    k_eps = _K(eps)

    def objective(e):
        return (delta + k_eps - _K(e)) / (eps - e)

    def stationarity(e):
        # numerator of d objective / de; increasing in e
        return kernels.ndtri_scalar(e) * (eps - e) + delta + k_eps - _K(e)

    lo, hi = min(_CLIP, 0.5 * eps), eps - min(_CLIP, 0.5 * eps)
    while stationarity(lo) > 0.0 and lo > 1e-300:
        lo *= 1e-3
    e_star, iterations, residual = _minimize_unimodal(objective, stationarity, lo, hi)
    return CoeffResult(objective(e_star), e_star, iterations, residual)


@functools.lru_cache(maxsize=4096)
def c_opt(eps, delta):
    """Optimistic coefficient ``c_o`` for ``eps`` in (0, 1) and ``delta > 0``.

    The search variable is ``s = 1 - eps'`` so levels near 1 keep precision.
    """
    eps = float(ProbLevel(eps, "eps"))
    delta = _check_delta(delta)
    k_eps = _K(eps)
    room = 1.0 - eps

    def quotient(s):
        return (-delta + _K(s) - k_eps) / (room - s)

    def stationarity(s):
        # J(e) = -q(e)(e - eps) + delta - K(e) + K(eps), decreasing in e = 1 - s
        return kernels.ndtri_scalar(s) * (room - s) + delta - _K(s) + k_eps

    lo, hi = min(_CLIP, 0.5 * room), room - min(_CLIP, 0.5 * room)
    while stationarity(lo) > 0.0 and lo > 1e-300:
        lo *= 1e-3
    s_star, iterations, residual = _minimize_unimodal(lambda s: -quotient(s), stationarity, lo, hi)
    return CoeffResult(quotient(s_star), 1.0 - s_star, iterations, residual)


def watershed_closed_form(eps):
    return std_pdf(0.0) - std_pdf(std_quantile(eps))


def watershed_root(eps):
    """Radius where ``c_opt(eps, .)`` crosses zero, by Brent's method."""
    eps = float(eps)
    guess = watershed_closed_form(eps)
    lo, hi = 0.5 * guess, min(2.0 * guess + 1e-3, 1.0)
    while c_opt(eps, lo).c <= 0.0:
        lo *= 0.5
    while c_opt(eps, hi).c >= 0.0:
        hi *= 2.0
    return optimize.brentq(lambda d: c_opt(eps, d).c, lo, hi, xtol=1e-15, rtol=1e-14, maxiter=200)


def watershed(eps, verify=True):
    """The radius at which ``c_opt`` vanishes.

    The closed form ``pdf(0) - pdf(Phi^{-1}(eps))`` is the answer; with
    ``verify`` it is cross-checked by root finding and a discrepancy above
    1e-6 raises ``RuntimeError``.
    """
    eps = float(ProbLevel(eps, "eps"))
    if eps >= 0.5:
        raise DomainError(f"no positive watershed radius exists for eps >= 0.5 (got {eps})")
    delta_star = watershed_closed_form(eps)
    root = math.nan
    if verify and delta_star > 1e-12:
        root = watershed_root(eps)
        if abs(root - delta_star) > 1e-6:
            raise RuntimeError(
                f"watershed mismatch at eps={eps}: closed form {delta_star!r}, root {root!r}"
            )
    return WatershedPoint(eps, delta_star, root)


def watershed_sweep(eps_grid, verify=True):
    grid = [float(e) for e in eps_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("eps grid must be strictly increasing")
    if grid and not (0.0 < grid[0] and grid[-1] < 0.5):
        raise DomainError("eps grid must lie inside (0, 0.5)")
    return [watershed(e, verify=verify) for e in grid]


def write_watershed_csv(points, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epsi", "delta"])
        for p in points:
            writer.writerow([f"{p.eps:.9g}", f"{p.delta_star:.9g}"])


def read_watershed_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["epsi", "delta"]:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        return np.array([[float(r["epsi"]), float(r["delta"])] for r in reader]).reshape(-1, 2)


def nominal_coefficient(eps):
    """``Phi^{-1}(1 - eps)``, the coefficient of the reference chance constraint."""
    return -std_quantile(float(ProbLevel(eps, "eps")))


def coefficient(eps, delta, mode):
    """``c_p``/``c_o`` by mode; ``delta == 0`` gives the nominal coefficient."""
    if delta == 0:
        return nominal_coefficient(eps)
    if mode == "pessimistic":
        return c_pess(eps, delta).c
    if mode == "optimistic":
        return c_opt(eps, delta).c
    raise ValueError(f"mode must be 'pessimistic' or 'optimistic', got {mode!r}")
