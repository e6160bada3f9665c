"""Joint chance constraints with right-hand-side uncertainty.

The safety set is ``{zeta : zeta_i <= T_i x / scale_i}``, i.e. ``A = diag(scale)``,
and the reference distribution has independent Gaussian marginals
``zeta_i ~ N(mu_i, sigma_i^2)``. With ``f(x, zeta) = min_i (T_i x / scale_i - zeta_i)``
the robust constraint holds iff ``rho(u) >= delta`` where

    phi(x, y) = int_0^y (P[f(x, zeta) >= t] - (1 - eps)) dt
    rho(u)    = sup {phi(x, y) : 0 <= x <= U, c'x <= u, y >= 0}.

``rho`` is evaluated by block coordinate ascent: an x-step maximizing
``log phi(., y)`` by projected gradient ascent, then the exact y-step
``y = VaR_eps(f(x, zeta))``.
"""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import special

from . import kernels
from ._jit import thread_count
from .gaussian import ProbLevel
from .individual import AmbiguitySpec, InfeasibleError

PHI_TOL = 1e-9
MAX_INTERVALS = 1 << 20


class UnreachableError(RuntimeError):
    """The target radius exceeds rho at the largest possible budget."""


@dataclass
class ProductionInstance:
    """Procure capacity ``x`` (``0 <= x <= U``, cost ``c'x``) to cover random demands.

    ``T`` is the m x n coverage matrix; ``scale`` holds the coefficient of
    ``zeta_i`` in row i (1 for the plain model ``T x >= zeta``).
    """

    T: np.ndarray
    cost: np.ndarray
    capacity: float
    mu: np.ndarray
    sigma: np.ndarray
    amb: AmbiguitySpec
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        self.T = np.ascontiguousarray(np.atleast_2d(np.asarray(self.T, dtype=float)))
        self.cost = np.ascontiguousarray(np.asarray(self.cost, dtype=float))
        self.mu = np.ascontiguousarray(np.asarray(self.mu, dtype=float))
        self.sigma = np.ascontiguousarray(np.asarray(self.sigma, dtype=float))
        self.capacity = float(self.capacity)
        m, n = self.T.shape
        self.scale = np.ones(m) if self.scale is None else np.asarray(self.scale, dtype=float)
        if self.cost.shape != (n,) or self.mu.shape != (m,) or self.sigma.shape != (m,) or self.scale.shape != (m,):
            raise ValueError("inconsistent dimensions in production instance")
        if np.any(self.sigma <= 0):
            raise ValueError("demand standard deviations must be positive")
        if np.any(self.scale == 0):
            raise ValueError("zero row: the demand coefficient of some row vanishes")
        if not np.all(np.any(self.T != 0, axis=1)):
            raise ValueError("every row of T must cover at least one facility")
        if np.any(self.cost < 0):
            raise ValueError("costs must be nonnegative")
        if not self.capacity > 0:
            raise ValueError("capacity bound must be positive")

    @property
    def m(self):
        return self.T.shape[0]

    @property
    def n(self):
        return self.T.shape[1]

    @property
    def max_budget(self):
        return float(self.cost.sum() * self.capacity)

    @property
    def T_unit(self):
        """Rows of T divided by the (absolute) demand coefficient."""
        return self.T / np.abs(self.scale)[:, None]

    def slack_mean(self, x):
        """``T_i x / scale_i - mu_i``: the mean of each row's slack."""
        return self.T_unit @ np.asarray(x, dtype=float) - self.mu

    def with_amb(self, epsilon=None, delta=None):
        amb = AmbiguitySpec(
            self.amb.epsilon if epsilon is None else epsilon,
            self.amb.delta if delta is None else delta,
            self.amb.norm,
        )
        return replace(self, amb=amb)


def normalize_rows(inst):
    """Equivalent instance whose demand coefficients all have unit norm.

    Dividing row i by ``|scale_i|`` leaves the feasible region, ``f`` and
    ``phi`` unchanged; the demands themselves are the same random variables.
    """
    if np.any(inst.scale < 0):
        raise ValueError("negative demand coefficients are not supported")
    return replace(inst, T=inst.T_unit, scale=np.ones(inst.m))


def random_production_instance(seed, n=10, m=5, capacity=200.0, epsilon=0.15, delta=0.0, spread=0.1):
    """Random production instance with costs in {1..10} and mean demands in [10, 51].

    Coverage is a random 0/1 matrix with at least one facility per location;
    demand standard deviations are ``spread * mu``.
    """
    rng = np.random.default_rng(seed)
    cost = rng.integers(1, 11, size=n).astype(float)
    mu = rng.uniform(10.0, 51.0, size=m)
    T = (rng.random((m, n)) < 0.5).astype(float)
    for i in range(m):
        if not T[i].any():
            T[i, rng.integers(n)] = 1.0
    return ProductionInstance(T, cost, capacity, mu, spread * mu, AmbiguitySpec(epsilon, delta))


# ---------------------------------------------------------------------------
# f, survival, VaR, phi

def f_min(inst, x, zeta):
    """``min_i (T_i x / scale_i - zeta_i)``; ``zeta`` may be a batch (rows)."""
    zeta = np.asarray(zeta, dtype=float)
    return np.min(inst.T_unit @ np.asarray(x, dtype=float) - zeta, axis=-1)


def survival(inst, x, t):
    """``P[f(x, zeta) >= t] = prod_i Phi((T_i x / scale_i - t - mu_i) / sigma_i)``."""
    s = inst.slack_mean(x)
    if np.ndim(t) == 0:
        return float(kernels.survival_scalar(s, inst.sigma, float(t)))
    return kernels._survival_np(s, inst.sigma, t)


def log_survival_grad(inst, x, t):
    """``log P[f(x, zeta) >= t]`` and its gradient in x (tail-stable)."""
    z = (inst.slack_mean(x) - t) / inst.sigma
    logcdf = special.log_ndtr(z)
    mills = np.exp(-0.5 * z * z - 0.5 * math.log(2.0 * math.pi) - logcdf)
    return float(logcdf.sum()), inst.T_unit.T @ (mills / inst.sigma)


def var_f(inst, x, eps, tol=1e-10):
    """``VaR_eps(f(x, zeta))``: the t with ``survival(x, t) = 1 - eps``."""
    eps = float(ProbLevel(eps, "eps"))
    t = kernels.var_root(inst.slack_mean(x), inst.sigma, 1.0 - eps, tol)
    if not math.isfinite(t):
        raise RuntimeError("could not bracket the quantile within 60 standard deviations")
    return float(t)


def _phi_raw(inst, x, y, with_grad, tol):
    s = np.ascontiguousarray(inst.slack_mean(x))
    total, _ = kernels.phi_quad(
        s, inst.sigma, np.ascontiguousarray(inst.T_unit), 1.0 - inst.amb.epsilon, float(y), tol, with_grad, MAX_INTERVALS
    )
    return total


def phi(inst, x, y, tol=PHI_TOL):
    """``int_0^y (survival(x, t) - (1 - eps)) dt`` by adaptive Simpson."""
    if y < 0:
        raise ValueError("y must be nonnegative")
    return float(_phi_raw(inst, x, y, False, tol)[0])


def grad_x_phi(inst, x, y, tol=PHI_TOL):
    """Gradient of :func:`phi` in x (same quadrature, integrand differentiated)."""
    if y < 0:
        raise ValueError("y must be nonnegative")
    return _phi_raw(inst, x, y, True, tol)[1:].copy()


def phi_and_grad(inst, x, y, tol=PHI_TOL):
    out = _phi_raw(inst, x, y, True, tol)
    return float(out[0]), out[1:].copy()


@dataclass(frozen=True)
class PhiDomainPoint:
    x: np.ndarray
    y: float
    phi: float
    in_domain: bool


def phi_point(inst, x, y):
    x = np.asarray(x, dtype=float)
    return PhiDomainPoint(x, float(y), phi(inst, x, y), survival(inst, x, y) >= 1.0 - inst.amb.epsilon)


# ---------------------------------------------------------------------------
# projected gradient ascent on {0 <= x <= U, c'x <= u}

def project(inst, v, budget):
    return kernels.project_box_budget(np.ascontiguousarray(v, dtype=float), inst.capacity, inst.cost, float(budget))


def linear_max(inst, g, budget):
    """``max g'z`` over ``{0 <= z <= U, c'z <= u}`` (fractional knapsack)."""
    z = np.zeros(inst.n)
    free = (g > 0) & (inst.cost == 0)
    z[free] = inst.capacity
    cand = np.flatnonzero((g > 0) & (inst.cost > 0))
    left = float(budget)
    for j in cand[np.argsort(-g[cand] / inst.cost[cand], kind="stable")]:
        if left <= 0:
            break
        z[j] = min(inst.capacity, left / inst.cost[j])
        left -= inst.cost[j] * z[j]
    return z


class AscentResult(NamedTuple):
    x: np.ndarray
    value: float
    gap: float
    steps: int


def _projected_ascent(value_grad, x0, proj, gap_fn, tol, max_steps, admissible=None, stop=None):
    """Maximize a concave ``value_grad`` over a polytope (via ``proj``).

    Barzilai-Borwein trial steps with Armijo backtracking (factor 0.5,
    sufficient-increase 1e-4). A trial point rejected by ``admissible`` halves
    the step. ``gap_fn(x, f, g)`` bounds the remaining suboptimality; the loop
    ends once it is at most ``tol``.
    """
    x = proj(x0)
    f, g = value_grad(x)
    alpha = 1.0
    steps = 0
    gap = gap_fn(x, f, g)
    while steps < max_steps and gap > tol:
        if stop is not None and stop(x, f):
            break
        steps += 1
        a = alpha
        accepted = False
        for _ in range(100):
            xn = proj(x + a * g)
            d = xn - x
            if not np.any(d):
                break
            if admissible is not None and not admissible(xn):
                a *= 0.5
                continue
            fn, gn = value_grad(xn)
            if fn >= f + 1e-4 * float(g @ d):
                accepted = True
                break
            a *= 0.5
        if not accepted:
            break
        sy = float(d @ (gn - g))
        ss = float(d @ d)
        alpha = min(max(ss / -sy, 1e-10), 1e10) if sy < 0 else min(2.0 * a, 1e10)
        x, f, g = xn, fn, gn
        gap = gap_fn(x, f, g)
    return AscentResult(x, f, gap, steps)


def oracle_max_x(inst, y, budget, tol, x0=None, max_steps=50_000):
    """Approximately maximize ``phi(., y)`` over the budget polytope.

    Ascent runs on ``log phi`` over the whole polytope; trial points with
    ``phi <= 0`` (where the log is undefined) halve the step. The stop
    is certified: with ``gap = max_z grad log phi . (z - x)`` over the
    polytope, ``phi* - phi <= phi (exp(gap) - 1) <= tol``. A start with
    ``phi <= 0`` is first moved into the region ``phi > 0``; if none is found
    the best point reached is returned.
    """
    if y <= 0:
        raise ValueError("oracle requires y > 0")
    if budget < 0:
        raise InfeasibleError("budget polytope is empty")
    if x0 is None:
        x0 = project(inst, np.full(inst.n, inst.capacity), budget)
    x0 = project(inst, x0, budget)
    if phi(inst, x0, y) <= 0.0:
        x0 = _enter_domain(inst, y, budget, x0)
        if phi(inst, x0, y) <= 0.0:
            return x0

    def value_grad(x):
        p, gr = phi_and_grad(inst, x, y)
        p = max(p, 1e-300)
        return math.log(p), gr / p

    def admissible(x):
        return phi(inst, x, y) > 0.0

    def gap_fn(x, f, g):
        lin = float(g @ (linear_max(inst, g, budget) - x))
        return math.exp(f) * math.expm1(min(max(lin, 0.0), 700.0))

    res = _projected_ascent(value_grad, x0, lambda v: project(inst, v, budget), gap_fn, tol, max_steps, admissible)
    return res.x


def _enter_domain(inst, y, budget, x0):
    """Move ``x0`` to a point with ``phi(., y) > 0`` if one exists.

    First ascends the concave ``log survival(., y)`` (``survival(x, y) >=
    1 - eps`` already forces ``phi > 0``), then ``phi`` itself from there.
    """
    proj = lambda v: project(inst, v, budget)
    positive = lambda x, f: phi(inst, x, y) > 0.0
    res = _projected_ascent(
        lambda v: log_survival_grad(inst, v, y), x0, proj,
        lambda v, f, g: float(g @ (linear_max(inst, g, budget) - v)), 1e-10, 5000, stop=positive,
    )
    if positive(res.x, res.value):
        return res.x

    def gap_fn(x, f, g):
        return float(g @ (linear_max(inst, g, budget) - x))

    res = _projected_ascent(lambda v: phi_and_grad(inst, v, y), res.x, proj, gap_fn, 1e-12, 5000, stop=positive)
    return res.x


def initial_point(inst, budget, eps0_sequence=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)):
    """A budget-feasible x with ``survival(x, eps0) >= 1 - eps``, or ``None``.

    Each ``eps0`` is tried in turn by maximizing ``log survival(., eps0)`` to
    convergence, which also gives BCA a well-centred start.
    """
    if budget < 0:
        raise InfeasibleError("budget polytope is empty")
    level = 1.0 - inst.amb.epsilon
    x = project(inst, np.full(inst.n, inst.capacity), budget)
    for eps0 in eps0_sequence:

        def value_grad(v, t=eps0):
            return log_survival_grad(inst, v, t)

        res = _projected_ascent(
            value_grad, x, lambda v: project(inst, v, budget),
            lambda v, f, g: float(g @ (linear_max(inst, g, budget) - v)), 1e-8, 2000,
        )
        x = res.x
        if survival(inst, x, eps0) >= level:
            return x, eps0
    return None


def var_grad(inst, x, t):
    """Gradient in x of ``VaR_eps(f(x, zeta))`` at its value ``t``.

    Implicit differentiation of ``survival(x, t) = 1 - eps``: a convex
    combination of the rows of T weighted by Mills ratios.
    """
    z = (inst.slack_mean(x) - t) / inst.sigma
    w = np.exp(-0.5 * z * z - 0.5 * math.log(2.0 * math.pi) - special.log_ndtr(z)) / inst.sigma
    return inst.T_unit.T @ (w / w.sum())


def max_var_point(inst, budget, x0, tol=1e-6, max_steps=2000):
    """Maximize the (concave) ``VaR_eps(f(., zeta))`` over the budget polytope from ``x0``."""
    eps = inst.amb.epsilon

    def value_grad(x):
        t = var_f(inst, x, eps)
        return t, var_grad(inst, x, t)

    res = _projected_ascent(
        value_grad, x0, lambda v: project(inst, v, budget),
        lambda v, f, g: float(g @ (linear_max(inst, g, budget) - v)), tol, max_steps,
    )
    return res.x


# ---------------------------------------------------------------------------
# block coordinate ascent

@dataclass
class BcaIterate:
    x: np.ndarray
    y: float
    phi: float
    eps: float


@dataclass
class BcaTrace:
    iterates: List[BcaIterate] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def phis(self):
        return np.array([it.phi for it in self.iterates])

    @property
    def ys(self):
        return np.array([it.y for it in self.iterates])


def bca_rho(inst, budget, y_tol=1e-6, max_iter=200, eps1=1e-3, warm_start=True):
    """``rho(budget)`` by alternating x- and y-maximization.

    Returns ``(rho, trace)``; ``rho = 0`` with ``stop_reason ==
    'infeasible_start'`` when no budget-feasible point meets the nominal
    constraint with positive VaR. With ``warm_start`` the feasible start is
    moved to the VaR maximizer before the first x-step.
    """
    trace = BcaTrace()
    start = initial_point(inst, budget)
    if start is None:
        trace.stop_reason = "infeasible_start"
        return 0.0, trace
    x, _ = start
    eps = inst.amb.epsilon
    if warm_start:
        x = max_var_point(inst, budget, x)
    y = var_f(inst, x, eps)
    trace.iterates.append(BcaIterate(x, y, phi(inst, x, y), 0.0))
    trace.stop_reason = "iteration_cap"
    for k in range(1, max_iter + 1):
        eps_k = eps1 / k
        x = oracle_max_x(inst, y, budget, eps_k, x0=x)
        y_new = var_f(inst, x, eps)
        trace.iterates.append(BcaIterate(x, y_new, phi(inst, x, y_new), eps_k))
        converged = abs(y_new - y) <= y_tol
        y = y_new
        if converged:
            trace.stop_reason = "y_converged"
            break
    return trace.iterates[-1].phi, trace


def envelope_sweep(inst, budgets, workers=None, **bca_kwargs):
    """``[(u, rho(u))]`` over an increasing budget grid.

    Grid points are independent and run concurrently; output order follows
    the grid.
    """
    grid = [float(u) for u in budgets]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("budget grid must be nondecreasing")
    workers = workers or thread_count()

    def one(u):
        return bca_rho(inst, u, **bca_kwargs)[0]

    if workers <= 1 or len(grid) <= 1:
        rhos = [one(u) for u in grid]
    else:
        with ThreadPoolExecutor(max_workers=min(workers, len(grid))) as pool:
            rhos = list(pool.map(one, grid))
    return list(zip(grid, rhos))


def write_envelope_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["budget", "radius"])
        for u, r in rows:
            writer.writerow([f"{u:.12g}", f"{r:.12g}"])


def read_envelope_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["budget", "radius"]:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        return np.array([[float(r["budget"]), float(r["radius"])] for r in reader]).reshape(-1, 2)


@dataclass
class MinCostResult:
    budget: float
    x: np.ndarray
    rho: float
    evaluations: int


def min_cost(inst, delta_target=None, rel_tol=1e-4, rho_fn=None):
    """Smallest budget whose ``rho`` reaches ``delta_target`` (default: the instance radius).

    Bisection on ``u`` over ``[0, c'(U 1)]`` to width ``rel_tol`` times the
    range; the returned x comes from the BCA run at the final upper end.
    """
    delta = inst.amb.delta if delta_target is None else float(delta_target)
    if not delta > 0:
        raise ValueError("target radius must be positive")
    rho_fn = rho_fn or (lambda u: _rho_with_x(inst, u))
    lo, hi = 0.0, inst.max_budget
    r_lo, x_lo = rho_fn(lo)
    evaluations = 1
    if r_lo >= delta:
        return MinCostResult(0.0, x_lo, r_lo, evaluations)
    r_hi, x_hi = rho_fn(hi)
    evaluations += 1
    if r_hi < delta:
        raise UnreachableError(f"radius {delta:.6g} exceeds rho at the full budget ({r_hi:.6g})")
    tol_u = rel_tol * (hi - lo)
    while hi - lo > tol_u:
        mid = 0.5 * (lo + hi)
        r, x = rho_fn(mid)
        evaluations += 1
        if r >= delta:
            hi, r_hi, x_hi = mid, r, x
        else:
            lo = mid
    return MinCostResult(hi, x_hi, r_hi, evaluations)


def _rho_with_x(inst, budget):
    rho, trace = bca_rho(inst, budget)
    x = trace.iterates[-1].x if trace.iterates else np.zeros(inst.n)
    return rho, x
