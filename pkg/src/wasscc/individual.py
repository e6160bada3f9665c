"""Individual chance constraints with LHS uncertainty and a Gaussian reference.

Under a Wasserstein ball measured in the Sigma^{-1/2}-weighted 2-norm, both the
pessimistic and the optimistic constraint reduce to

    a(x)' mu + c ||Sigma^{1/2} a(x)||_2 <= b(x)

with ``c = c_p`` or ``c = c_o`` from :mod:`wasscc.coeff`. ``delta = 0`` uses
the reference coefficient ``Phi^{-1}(1 - eps)``.
"""

import csv
import math
import itertools
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import optimize

from .coeff import coefficient
from .gaussian import ProbLevel

MODES = ("pessimistic", "optimistic")


class InfeasibleError(RuntimeError):
    """No point satisfies the constraints."""


class SolverError(RuntimeError):
    """The numerical solver failed to converge."""


class NonConvexError(ValueError):
    """Optimistic region is non-convex (negative coefficient)."""


@dataclass(frozen=True)
class AmbiguitySpec:
    """Wasserstein radius ``delta >= 0`` and risk level ``epsilon``.

    ``delta == 0`` denotes the reference (non-robust) chance constraint.
    """

    epsilon: float
    delta: float
    norm: str = "mahalanobis"

    def __post_init__(self):
        ProbLevel(self.epsilon, "epsilon")
        if not (self.delta >= 0.0) or not np.isfinite(self.delta):
            raise ValueError(f"delta must be finite and nonnegative, got {self.delta!r}")

    def with_delta(self, delta):
        return AmbiguitySpec(self.epsilon, delta, self.norm)


def sqrtm_psd(sigma):
    """Symmetric square root; rank deficiency below 1e-12 * trace is an error."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-15):
        raise ValueError("covariance must be symmetric")
    w, V = np.linalg.eigh(0.5 * (sigma + sigma.T))
    if w.min() <= 1e-12 * np.trace(sigma):
        raise ValueError(f"covariance is not positive definite (min eigenvalue {w.min():.3e})")
    return (V * np.sqrt(w)) @ V.T


@dataclass
class IndividualInstance:
    """``a(x) = a0 + a_lin x`` (length d) and ``b(x) = b0 + b_lin . x``."""

    mu: np.ndarray
    sigma: np.ndarray
    a0: np.ndarray
    a_lin: np.ndarray
    b0: float
    b_lin: np.ndarray
    amb: AmbiguitySpec
    sqrt_sigma: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.a0 = np.asarray(self.a0, dtype=float)
        self.a_lin = np.atleast_2d(np.asarray(self.a_lin, dtype=float))
        self.b_lin = np.asarray(self.b_lin, dtype=float)
        self.b0 = float(self.b0)
        d = self.mu.size
        if self.sigma.shape != (d, d) or self.a0.shape != (d,) or self.a_lin.shape[0] != d:
            raise ValueError("inconsistent dimensions in individual instance")
        if self.b_lin.shape != (self.a_lin.shape[1],):
            raise ValueError("b_lin must have one entry per decision variable")
        self.sqrt_sigma = sqrtm_psd(self.sigma)

    @property
    def n(self):
        return self.a_lin.shape[1]

    def a(self, x):
        return self.a0 + self.a_lin @ np.asarray(x, dtype=float)

    def b(self, x):
        return self.b0 + float(self.b_lin @ np.asarray(x, dtype=float))

    def spread(self, x):
        """``||Sigma^{1/2} a(x)||_2``."""
        return float(np.linalg.norm(self.sqrt_sigma @ self.a(x)))


class Membership(NamedTuple):
    feasible: bool
    margin: float


def soc_membership(inst, x, mode, c=None):
    """Margin ``b(x) - a(x)'mu - c ||Sigma^{1/2} a(x)||`` and its sign.

    When ``a(x) = 0`` the constraint is deterministic and the margin is ``b(x)``.
    """
    if c is None:
        c = coefficient(inst.amb.epsilon, inst.amb.delta, mode)
    ax = inst.a(x)
    if not np.any(ax):
        margin = inst.b(x)
    else:
        margin = inst.b(x) - float(ax @ inst.mu) - c * float(np.linalg.norm(inst.sqrt_sigma @ ax))
    return Membership(margin >= 0.0, margin)


# ---------------------------------------------------------------------------
# portfolio

@dataclass
class PortfolioInstance:
    """Maximize expected return s.t. ``P(R'x >= target) >= 1 - eps`` on the simplex.

    ``risk_free``, when given, is a deterministic asset placed first in the
    decision vector; ``mean_returns``/``covariance`` describe the risky ones.
    """

    mean_returns: np.ndarray
    covariance: np.ndarray
    target_return: float
    amb: AmbiguitySpec
    risk_free: Optional[float] = None

    def __post_init__(self):
        self.mean_returns = np.asarray(self.mean_returns, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        k = self.mean_returns.size
        if self.covariance.shape != (k, k):
            raise ValueError("covariance must be n_risky x n_risky")
        if np.any(np.diag(self.covariance) <= 0):
            raise ValueError("covariance diagonal must be positive")
        if not np.isfinite(self.target_return):
            raise ValueError("target return must be finite")

    @property
    def n_assets(self):
        return self.mean_returns.size + (self.risk_free is not None)

    @property
    def labels(self):
        risky = [f"S{i + 1}" for i in range(self.mean_returns.size)]
        return (["F"] if self.risk_free is not None else []) + risky

    @property
    def expected_returns(self):
        if self.risk_free is None:
            return self.mean_returns.copy()
        return np.concatenate([[self.risk_free], self.mean_returns])

    def to_individual(self):
        k = self.mean_returns.size
        offset = self.n_assets - k
        a_lin = np.zeros((k, self.n_assets))
        a_lin[:, offset:] = -np.eye(k)
        b_lin = np.zeros(self.n_assets)
        if self.risk_free is not None:
            b_lin[0] = self.risk_free
        return IndividualInstance(
            self.mean_returns, self.covariance, np.zeros(k), a_lin, -self.target_return, b_lin, self.amb
        )

    def truncated(self, keep):
        """Sub-instance on the risky assets with indices ``keep`` (0-based)."""
        keep = list(keep)
        return PortfolioInstance(
            self.mean_returns[keep], self.covariance[np.ix_(keep, keep)],
            self.target_return, self.amb, self.risk_free,
        )


def market_factor_portfolio(epsilon=0.15, delta=0.0, target=1.0, n_stocks=10):
    """Deposit with return 1 plus stocks ``R_i = R0_i + r``.

    ``R0_i ~ N(1 + 0.01 i, (0.03 i)^2)`` independent, market factor
    ``r ~ N(0, 0.01^2)`` shared by every stock.
    """
    i = np.arange(1, n_stocks + 1)
    cov = np.diag((0.03 * i) ** 2) + 0.01 ** 2
    return PortfolioInstance(1.0 + 0.01 * i, cov, target, AmbiguitySpec(epsilon, delta), risk_free=1.0)


@dataclass
class PortfolioSolution:
    x: np.ndarray
    objective: float
    margin: float
    coefficient: float
    status: str
    diagnostics: dict = field(default_factory=dict)


def solve_portfolio(inst, mode="pessimistic", tol=1e-6, allow_nonconvex=False):
    """Optimal allocation under the SOC form of the chance constraint.

    Convex cases (``c >= 0``) are solved as a conic program. A negative
    optimistic coefficient makes the region non-convex; it is rejected unless
    ``allow_nonconvex`` is set and there are at most three assets, in which
    case the 1e-3 simplex grid is enumerated.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    c = coefficient(inst.amb.epsilon, inst.amb.delta, mode)
    ind = inst.to_individual()
    g = inst.expected_returns
    if c < 0:
        if not allow_nonconvex:
            raise NonConvexError(
                f"optimistic coefficient {c:.6g} < 0: feasible region is non-convex "
                "(pass allow_nonconvex for n <= 3 enumeration)"
            )
        if inst.n_assets > 3:
            raise NonConvexError("non-convex enumeration is limited to n <= 3 assets")
        best = simplex_grid_search(ind, g, c, step=1e-3)
        if best is None:
            raise InfeasibleError("no simplex grid point satisfies the constraint")
        x, obj = best
        return PortfolioSolution(x, obj, soc_membership(ind, x, mode, c).margin, c, "grid")
    x = _solve_conic(ind, g, c)
    margin = soc_membership(ind, x, mode, c).margin
    if margin < -tol:
        raise SolverError(f"solver returned a point violating the constraint by {-margin:.3e}")
    kkt = kkt_check(ind, g, x, c, tol)
    diagnostics = {"kkt_residual": kkt.residual, "kkt_ok": kkt.ok, "multiplier": kkt.multiplier}
    return PortfolioSolution(x, float(g @ x), margin, c, "optimal", diagnostics)


def _solve_conic(ind, g, c):
    import cvxpy as cp

    n = ind.n
    x = cp.Variable(n, nonneg=True)
    ax = ind.a0 + ind.a_lin @ x
    rhs = ind.b0 + ind.b_lin @ x - ind.mu @ ax
    constraints = [cp.sum(x) == 1]
    if c > 0:
        constraints.append(cp.SOC(rhs / c, ind.sqrt_sigma @ ax))
    else:
        constraints.append(rhs >= 0)
    prob = cp.Problem(cp.Maximize(g @ x), constraints)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11)
    except cp.SolverError as exc:
        raise SolverError(str(exc)) from exc
    if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        raise InfeasibleError("no allocation on the simplex satisfies the chance constraint")
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or x.value is None:
        raise SolverError(f"conic solver ended with status {prob.status}")
    xv = np.asarray(x.value, dtype=float)
    xv[xv < 1e-9] = 0.0
    return xv / xv.sum()


def simplex_grid_points(n, step=1e-3):
    """All points of the simplex in R^n with coordinates on the ``step`` lattice."""
    k = int(round(1.0 / step))
    if n == 1:
        return np.ones((1, 1))
    if n == 2:
        i = np.arange(k + 1)
        return np.column_stack([i, k - i]) / k
    if n == 3:
        i, j = np.triu_indices(k + 1)
        # i <= j: pairs (i, j - i, k - j)
        pts = np.column_stack([i, j - i, k - j])
        return pts / k
    return np.array([p for p in itertools.product(range(k + 1), repeat=n) if sum(p) == k]) / k


def simplex_grid_search(ind, g, c, step=1e-3):
    """Best feasible simplex grid point, or ``None``."""
    X = simplex_grid_points(ind.n, step)
    A = ind.a0[None, :] + X @ ind.a_lin.T
    spread = np.linalg.norm(A @ ind.sqrt_sigma.T, axis=1)
    b = ind.b0 + X @ ind.b_lin
    margin = np.where(np.any(A != 0, axis=1), b - A @ ind.mu - c * spread, b)
    ok = margin >= 0
    if not np.any(ok):
        return None
    values = X @ g
    values[~ok] = -np.inf
    best = int(np.argmax(values))
    return X[best], float(values[best])


class KKTResult(NamedTuple):
    ok: bool
    residual: float
    multiplier: float


def kkt_check(ind, g, x, c, tol=1e-6):
    """First-order optimality of ``x`` for ``max g'x`` on the simplex with the SOC margin.

    Finds nonnegative multipliers for the active constraints (margin if
    ``|margin| <= tol``, lower bounds where ``x_j <= tol``) plus a free simplex
    multiplier that best explain ``g``; the residual is the inf-norm misfit.
    At ``a(x) = 0`` the norm term is not differentiable and its whole
    subdifferential (the unit ball) is allowed.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    margin = soc_membership(ind, x, "pessimistic", c).margin
    use_margin = abs(margin) <= tol
    lower = np.flatnonzero(x <= tol)
    base = ind.b_lin - ind.a_lin.T @ ind.mu
    s = ind.sqrt_sigma @ ind.a(x)
    norm = np.linalg.norm(s)
    if use_margin and norm <= 1e-12 and c != 0:
        return _kkt_at_kink(ind, g, base, lower, c, tol)
    cols = []
    if use_margin:
        grad = base
        if norm > 0:
            grad = grad - c * ind.a_lin.T @ (ind.sqrt_sigma.T @ s) / norm
        cols.append(grad)
    for j in lower:
        e = np.zeros(n)
        e[j] = 1.0
        cols.append(e)
    cols.append(-np.ones(n))
    cols.append(np.ones(n))
    M = np.column_stack(cols)
    # g + M z = 0 with z >= 0
    z, _ = optimize.nnls(M, -g)
    residual = float(np.max(np.abs(g + M @ z)))
    return KKTResult(residual <= tol, residual, float(z[0]) if use_margin else 0.0)


def _kkt_at_kink(ind, g, base, lower, c, tol):
    import cvxpy as cp

    n = g.size
    lam = cp.Variable(nonneg=True)
    v = cp.Variable(ind.mu.size)
    nu = cp.Variable()
    bound = cp.Variable(lower.size, nonneg=True) if lower.size else None
    r = g + lam * base - c * (ind.a_lin.T @ (ind.sqrt_sigma.T @ v)) - nu * np.ones(n)
    if bound is not None:
        sel = np.zeros((n, lower.size))
        sel[lower, np.arange(lower.size)] = 1.0
        r = r + sel @ bound
    prob = cp.Problem(cp.Minimize(cp.norm(r, "inf")), [cp.norm(v, 2) <= lam])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        prob.solve(solver=cp.CLARABEL)
    residual = float(prob.value) if prob.value is not None else math.inf
    return KKTResult(residual <= tol, residual, float(lam.value) if lam.value is not None else 0.0)


def write_allocation_csv(x, path):
    """One headerless row of fractions (columns F, S1, ... when a deposit exists)."""
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow([f"{v:.12g}" for v in x])


def read_allocation_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) != 1:
        raise ValueError(f"allocation file must hold exactly one row, found {len(rows)}")
    x = np.array([float(v) for v in rows[0]])
    if np.any(x < 0) or abs(x.sum() - 1.0) > 1e-9:
        raise ValueError("allocation must be nonnegative fractions summing to 1")
    return x
