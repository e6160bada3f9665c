"""Independent high-precision and brute-force references used across the tests."""

import mpmath as mp
import numpy as np

mp.mp.dps = 50


def ncdf(z):
    return float(mp.ncdf(mp.mpf(z)))


def npdf(z):
    return float(mp.npdf(mp.mpf(z)))


def nquantile(p):
    """Solve ``log ncdf(x) = log p`` to 50 digits (stable deep in either tail)."""
    p = mp.mpf(p)
    if p > mp.mpf("0.5"):
        return -nquantile(1 - p)
    lp = mp.log(p)
    # asymptotic start, then Newton in log space
    x = -mp.sqrt(-2 * lp) if p < mp.mpf("0.1") else mp.mpf(0)
    for _ in range(100):
        c = mp.ncdf(x)
        step = (mp.log(c) - lp) * c / mp.npdf(x)
        x -= step
        if abs(step) < mp.mpf(10) ** -40 * (1 + abs(x)):
            break
    return float(x)


def gaussian_cvar(tail):
    q = nquantile(tail)
    return float(mp.npdf(mp.mpf(q)) / mp.mpf(tail))


def c_pess_grid(eps, delta, n=200_001):
    """Pessimistic coefficient by brute force on a log-spaced grid of e in (0, eps)."""
    from scipy import stats

    e = np.concatenate([np.geomspace(1e-14, eps * 1e-3, n // 4), np.linspace(eps * 1e-3, eps * (1 - 1e-9), n)])
    K = stats.norm.pdf(stats.norm.ppf(e))
    Ke = stats.norm.pdf(stats.norm.ppf(eps))
    return float(np.min((delta + Ke - K) / (eps - e)))


def c_opt_grid(eps, delta, n=200_001):
    from scipy import stats

    s = np.concatenate([np.geomspace(1e-14, (1 - eps) * 1e-3, n // 4), np.linspace((1 - eps) * 1e-3, (1 - eps) * (1 - 1e-9), n)])
    K = stats.norm.pdf(stats.norm.ppf(s))
    Ke = stats.norm.pdf(stats.norm.ppf(eps))
    return float(np.max((-delta + K - Ke) / ((1 - eps) - s)))


def soc_margin_rows(ind, X, c):
    """Margins of the SOC constraint at every row of ``X`` (brute force)."""
    A = ind.a0[None, :] + X @ ind.a_lin.T
    spread = np.sqrt(np.einsum("ki,ij,kj->k", A, ind.sigma, A))
    b = ind.b0 + X @ ind.b_lin
    return np.where(np.any(A != 0, axis=1), b - A @ ind.mu - c * spread, b)


def simplex3_search(ind, g, c, step=1e-3, refine=0):
    """Best feasible point of a 3-simplex lattice; ``refine`` zooms in by 10x that many times."""
    def lattice(center, half, h):
        a = np.arange(center[0] - half, center[0] + half + h / 2, h)
        b = np.arange(center[1] - half, center[1] + half + h / 2, h)
        A, B = np.meshgrid(a, b, indexing="ij")
        X = np.column_stack([A.ravel(), B.ravel(), 1 - A.ravel() - B.ravel()])
        X = np.clip(X, 0, None)
        X = X[np.abs(X.sum(axis=1) - 1) < 1e-12]
        return X

    k = int(round(1 / step))
    i, j = np.triu_indices(k + 1)
    X = np.column_stack([i, j - i, k - j]) / k
    best = None
    h = step
    for level in range(refine + 1):
        ok = soc_margin_rows(ind, X, c) >= 0
        if not np.any(ok):
            return best
        vals = np.where(ok, X @ g, -np.inf)
        idx = int(np.argmax(vals))
        best = (X[idx], float(vals[idx]))
        if level < refine:
            X = lattice(best[0], 2 * h, h / 10)
            h /= 10
    return best


# ---------------------------------------------------------------------------
# joint RHS references (plain numpy/scipy, no shared code with the package)

def gl_survival(Tu, mu, sigma, x, t):
    """``prod_i ndtr((T_i x - mu_i - t) / sigma_i)`` for an array of t."""
    from scipy.special import ndtr

    s = Tu @ x - mu
    t = np.asarray(t, dtype=float)
    return np.prod(ndtr((s[None, :] - t.reshape(-1, 1)) / sigma[None, :]), axis=1).reshape(t.shape)


def gl_phi(Tu, mu, sigma, eps, x, y, panels=16, nodes=40):
    """Composite Gauss-Legendre value of ``int_0^y (S(t) - (1 - eps)) dt``."""
    if y == 0:
        return 0.0
    g, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(0.0, y, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    t = 0.5 * (b - a) * g[None, :] + 0.5 * (a + b)
    S = gl_survival(Tu, mu, sigma, x, t.ravel()).reshape(t.shape)
    return float(np.sum(0.5 * (b - a) * w[None, :] * (S - (1 - eps))))


def bisect_var(Tu, mu, sigma, eps, x):
    """VaR of ``min_i (T_i x - zeta_i)`` by plain bisection on the survival."""
    lo, hi = -1e3, 1e3
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gl_survival(Tu, mu, sigma, x, mid) >= 1 - eps:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def rho_segment_oracle(Tu, mu, sigma, eps, cost, cap, u, points=401):
    """``rho(u)`` for n = 2 by scanning the budget line (phi grows with x when T >= 0)."""
    x1_hi = min(cap, u / cost[0])
    x1_lo = max(0.0, (u - cost[1] * cap) / cost[0])

    def psi(x):
        v = bisect_var(Tu, mu, sigma, eps, x)
        return gl_phi(Tu, mu, sigma, eps, x, v) if v > 0 else 0.0

    if u >= cost @ np.full(2, cap):
        return psi(np.full(2, cap))
    from scipy.optimize import minimize_scalar

    line = lambda a: np.array([a, (u - cost[0] * a) / cost[1]])
    grid = np.linspace(x1_lo, x1_hi, points)
    vals = [psi(line(a)) for a in grid]
    k = int(np.argmax(vals))
    if vals[k] <= 0:
        return 0.0
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, points - 1)]
    res = minimize_scalar(lambda a: -psi(line(a)), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    return max(vals[k], -res.fun)
