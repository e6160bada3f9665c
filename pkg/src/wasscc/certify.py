"""Sample-based certificates for robust chance constraint membership.

Both tests use only reference samples and distances to the safe set
``S(x) = {z : A z <= b}`` or its complement:

    pessimistic:  delta / eps + CVaR_{1-eps}(-dist(z, S^c(x)))  <= 0
    optimistic:   CVaR_{eps}(-dist(z, S(x))) + delta / (1 - eps) >= 0

Here ``CVaR_beta`` is the mean of the upper ``1 - beta`` tail. The verdict is
``pass``/``fail`` when the statistic clears zero by three bootstrap standard
errors, ``indeterminate`` otherwise.

Sampling is counter based: chunk ``j`` of the uniform stream comes from
``Philox(key=(seed, j))``, each raw 64-bit word ``r`` maps to
``((r >> 11) + 0.5) / 2**53`` and then through the normal quantile. The stream
depends only on ``seed``, never on how chunks are scheduled.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from ._jit import thread_count
from .gaussian import ProbLevel
from .individual import IndividualInstance, PortfolioInstance
from .joint import ProductionInstance

CHUNK = 1 << 16
N_BOOT = 200
BAND = 3.0
_BIG = 1e100
_BOOT_KEY = (1 << 64) - 1


@dataclass(frozen=True)
class SafetySystem:
    """Safe set ``{xi : A xi <= b}`` at a fixed decision, in Euclidean coordinates."""

    A: np.ndarray
    b: np.ndarray
    box: bool = False

    def normalized(self):
        norms = np.linalg.norm(self.A, axis=1)
        live = norms > 0
        A = self.A.copy()
        b = self.b.copy()
        A[live] /= norms[live, None]
        b[live] /= norms[live]
        return SafetySystem(A, b, self.box)


@dataclass(frozen=True)
class Certificate:
    statistic: float
    std_error: float
    n_samples: int
    verdict: str
    seed: int

    def to_record(self):
        return f"{self.statistic!r},{self.std_error!r},{self.n_samples},{self.verdict},{self.seed}"

    @classmethod
    def from_record(cls, line):
        parts = line.strip().split(",")
        if len(parts) != 5:
            raise ValueError(f"certificate record needs 5 fields, got {len(parts)}")
        verdict = parts[3]
        if verdict not in ("pass", "fail", "indeterminate"):
            raise ValueError(f"unknown verdict {verdict!r}")
        return cls(float(parts[0]), float(parts[1]), int(parts[2]), verdict, int(parts[4]))


def verdict_for(statistic, std_error, feasible_side):
    """``feasible_side`` is -1 when small statistics certify, +1 when large ones do."""
    signed = feasible_side * statistic
    if signed > BAND * std_error:
        return "pass"
    if signed < -BAND * std_error:
        return "fail"
    return "indeterminate"


# ---------------------------------------------------------------------------
# distances

def dist_unsafe(safety, zeta):
    """Distance from each sample (row of ``zeta``) to the unsafe set.

    ``max(min_i (b_i - a_i'z) / ||a_i||, 0)`` over rows with ``a_i != 0``; a
    degenerate row with ``b_i < 0`` makes every point unsafe (distance 0),
    and if all rows are degenerate and satisfied the distance is infinite.
    """
    Z = np.ascontiguousarray(np.atleast_2d(zeta), dtype=float)
    norms = np.linalg.norm(safety.A, axis=1)
    dead = norms == 0
    if np.any(dead & (safety.b < 0)):
        return np.zeros(Z.shape[0])
    slack = kernels.row_slack(np.ascontiguousarray(safety.A), np.ascontiguousarray(safety.b, dtype=float), Z)
    return np.maximum(slack, 0.0)


def dist_safe(safety, zeta):
    """Distance from each sample to the safe set (one row, or a box ``z <= b``)."""
    Z = np.ascontiguousarray(np.atleast_2d(zeta), dtype=float)
    if safety.box:
        return kernels.box_excess(np.ascontiguousarray(safety.b, dtype=float), Z)
    if safety.A.shape[0] != 1:
        raise ValueError("distance to the safe set is only available for a single row or a box")
    a = safety.A[0]
    norm = np.linalg.norm(a)
    if norm == 0:
        return np.zeros(Z.shape[0]) if safety.b[0] >= 0 else np.full(Z.shape[0], np.inf)
    return np.maximum((Z @ a - safety.b[0]) / norm, 0.0)


# ---------------------------------------------------------------------------
# empirical CVaR with bootstrap

def empirical_cvar(values, tail):
    """Mean of the upper ``tail`` fraction, via ``gamma + E[(v - gamma)^+] / tail``.

    ``gamma`` is the ``ceil((1 - tail) N)``-th order statistic, which is a
    minimizer of the Rockafellar-Uryasev objective on the empirical measure.
    """
    tail = float(ProbLevel(tail, "tail"))
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("empty sample")
    return float(kernels.cvar_sorted_counts(v, np.ones(v.size, dtype=np.int64), tail))


def cvar_with_se(values, tail, seed, n_boot=N_BOOT):
    """Empirical CVaR and its nonparametric bootstrap standard error."""
    tail = float(ProbLevel(tail, "tail"))
    v = np.sort(np.asarray(values, dtype=float).ravel())
    n = v.size
    est = float(kernels.cvar_sorted_counts(v, np.ones(n, dtype=np.int64), tail))
    rng = np.random.Generator(np.random.Philox(key=_key(seed, _BOOT_KEY)))
    reps = np.empty(n_boot)
    for r in range(n_boot):
        counts = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.int64)
        reps[r] = kernels.cvar_sorted_counts(v, counts, tail)
    return est, float(np.std(reps, ddof=1))


# ---------------------------------------------------------------------------
# sampling

def _key(seed, word):
    return np.array([int(seed) & _BOOT_KEY, word], dtype=np.uint64)


def _uniform_chunk(seed, j, count):
    raw = np.random.Philox(key=_key(seed, j)).random_raw(count)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def standard_normal(seed, n, d, workers=None):
    """``n x d`` standard normal draws from the counter-based stream of ``seed``."""
    total = n * d
    nchunks = -(-total // CHUNK)
    sizes = [min(CHUNK, total - j * CHUNK) for j in range(nchunks)]

    def chunk(j):
        return kernels.ndtri_array(_uniform_chunk(seed, j, sizes[j]))

    workers = workers or thread_count()
    if workers > 1 and nchunks > 1:
        with ThreadPoolExecutor(max_workers=min(workers, nchunks)) as pool:
            parts = list(pool.map(chunk, range(nchunks)))
    else:
        parts = [chunk(j) for j in range(nchunks)]
    out = np.concatenate(parts) if parts else np.empty(0)
    return out.reshape(n, d)


# ---------------------------------------------------------------------------
# instance adapters: safety system at x plus a reference sampler, both in the
# coordinates where the ambiguity norm is Euclidean

@dataclass
class _Frame:
    safety: SafetySystem
    epsilon: float
    delta: float
    draw: Callable[[int, int], np.ndarray]


def _frame(inst, x, delta):
    if isinstance(inst, PortfolioInstance):
        inst = inst.to_individual()
    x = np.asarray(x, dtype=float)
    if isinstance(inst, IndividualInstance):
        # whitened: zeta = mu + Sigma^{1/2} w, w ~ N(0, I); the Sigma^{-1/2} norm becomes Euclidean
        a = inst.a(x)
        safety = SafetySystem((inst.sqrt_sigma @ a)[None, :], np.array([inst.b(x) - float(a @ inst.mu)]))
        d = inst.mu.size

        def draw(n, seed):
            return standard_normal(seed, n, d)

    elif isinstance(inst, ProductionInstance):
        # Euclidean norm on zeta itself; the safe set is the box zeta <= T x / scale
        safety = SafetySystem(np.eye(inst.m), inst.T_unit @ x, box=True)

        def draw(n, seed):
            return inst.mu + standard_normal(seed, n, inst.m) * inst.sigma

    else:
        raise TypeError(f"unsupported instance type {type(inst).__name__}")
    return _Frame(safety, inst.amb.epsilon, inst.amb.delta if delta is None else float(delta), draw)


def certify_pess(inst, x, n_samples=100_000, seed=0, delta=None):
    """Certificate for the pessimistic constraint at ``x`` (radius from the instance unless given)."""
    frame = _frame(inst, x, delta)
    Z = frame.draw(n_samples, seed)
    d = dist_unsafe(frame.safety, Z)
    vals = -np.minimum(d, _BIG)
    cvar, se = cvar_with_se(vals, frame.epsilon, seed)
    stat = frame.delta / frame.epsilon + cvar
    return Certificate(stat, se, n_samples, verdict_for(stat, se, -1), seed)


def certify_opt(inst, x, n_samples=100_000, seed=0, delta=None):
    """Certificate for the optimistic constraint at ``x``."""
    frame = _frame(inst, x, delta)
    Z = frame.draw(n_samples, seed)
    d = dist_safe(frame.safety, Z)
    vals = -np.minimum(d, _BIG)
    cvar, se = cvar_with_se(vals, 1.0 - frame.epsilon, seed)
    stat = cvar + frame.delta / (1.0 - frame.epsilon)
    return Certificate(stat, se, n_samples, verdict_for(stat, se, +1), seed)


def certify(inst, x, mode, n_samples=100_000, seed=0, delta=None):
    if mode == "pessimistic":
        return certify_pess(inst, x, n_samples, seed, delta)
    if mode == "optimistic":
        return certify_opt(inst, x, n_samples, seed, delta)
    raise ValueError(f"mode must be 'pessimistic' or 'optimistic', got {mode!r}")
