"""Hot numeric kernels.

Each kernel exists as an ``@njit`` function (suffix ``_nb``) and a numpy
function (suffix ``_np``). The unsuffixed name bound at import time is the one
the rest of the package calls; ``WASSCC_DISABLE_JIT=1`` selects the numpy set.

Scalar-sequential kernels (root finding, projection bisection) have no useful
vectorized form; their numpy flavour is a plain Python loop over numpy calls.
"""

import math

import numpy as np
from scipy import special

from ._jit import USE_NUMBA, njit

INV_SQRT2 = 0.7071067811865476
INV_SQRT_2PI = 0.3989422804014327

# Acklam's rational initializer for the normal quantile (rel. error < 1.15e-9),
# refined below by two Halley steps on erfc.
_A0, _A1, _A2 = -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02
_A3, _A4, _A5 = 1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00
_B0, _B1, _B2 = -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02
_B3, _B4 = 6.680131188771972e01, -1.328068155288572e01
_C0, _C1, _C2 = -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00
_C3, _C4, _C5 = -2.549671492537710e00, 4.374664141464968e00, 2.938163982698783e00
_D0, _D1, _D2, _D3 = 7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00
_P_LOW = 0.02425


# ---------------------------------------------------------------------------
# scalar special functions

@njit
def ndtr(z):
    return 0.5 * math.erfc(-z * INV_SQRT2)


@njit
def npdf(z):
    return INV_SQRT_2PI * math.exp(-0.5 * z * z)


@njit
def _ndtri_lower(p):
    # valid for 0 < p <= 0.5; the upper half is reflected so 1 - p is exact
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C0 * q + _C1) * q + _C2) * q + _C3) * q + _C4) * q + _C5) / (
            (((_D0 * q + _D1) * q + _D2) * q + _D3) * q + 1.0
        )
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A0 * r + _A1) * r + _A2) * r + _A3) * r + _A4) * r + _A5) * q / (
            ((((_B0 * r + _B1) * r + _B2) * r + _B3) * r + _B4) * r + 1.0
        )
    for _ in range(2):
        d = npdf(x)
        if d == 0.0:
            break
        u = (ndtr(x) - p) / d
        x = x - u / (1.0 + 0.5 * x * u)
    return x


@njit
def ndtri(p):
    if not (p > 0.0):
        return -np.inf if p == 0.0 else np.nan
    if not (p < 1.0):
        return np.inf if p == 1.0 else np.nan
    if p > 0.5:
        return -_ndtri_lower(1.0 - p)
    return _ndtri_lower(p)


@njit
def _ndtri_array_nb(p):
    out = np.empty(p.size)
    flat = p.ravel()
    for i in range(flat.size):
        out[i] = ndtri(flat[i])
    return out.reshape(p.shape)


def _ndtr_array_np(z):
    return 0.5 * special.erfc(-np.asarray(z, dtype=float) * INV_SQRT2)


def _ndtri_array_np(p):
    p = np.asarray(p, dtype=float)
    upper = p > 0.5
    pl = np.where(upper, 1.0 - p, p)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = np.sqrt(-2.0 * np.log(np.where(pl < _P_LOW, pl, 0.5)))
        tail = (((((_C0 * q + _C1) * q + _C2) * q + _C3) * q + _C4) * q + _C5) / (
            (((_D0 * q + _D1) * q + _D2) * q + _D3) * q + 1.0
        )
        qc = pl - 0.5
        r = qc * qc
        central = (((((_A0 * r + _A1) * r + _A2) * r + _A3) * r + _A4) * r + _A5) * qc / (
            ((((_B0 * r + _B1) * r + _B2) * r + _B3) * r + _B4) * r + 1.0
        )
        x = np.where(pl < _P_LOW, tail, central)
        for _ in range(2):
            d = INV_SQRT_2PI * np.exp(-0.5 * x * x)
            u = (_ndtr_array_np(x) - pl) / d
            step = u / (1.0 + 0.5 * x * u)
            x = np.where(d > 0.0, x - step, x)
    x = np.where(upper, -x, x)
    x = np.where(p == 0.0, -np.inf, x)
    x = np.where(p == 1.0, np.inf, x)
    return np.where((p < 0.0) | (p > 1.0) | np.isnan(p), np.nan, x)


# ---------------------------------------------------------------------------
# product-of-Gaussian-marginals survival  S(t) = prod_i Phi((s_i - t) / sigma_i)

@njit
def _survival_nb(s, sigma, t):
    prod = 1.0
    for i in range(s.size):
        prod *= ndtr((s[i] - t) / sigma[i])
    return prod


def _survival_np(s, sigma, t):
    t = np.asarray(t, dtype=float)
    z = (s[None, :] - t.reshape(-1, 1)) / sigma[None, :]
    out = np.prod(_ndtr_array_np(z), axis=1)
    return out.reshape(t.shape) if t.ndim else float(out[0])


@njit
def _survival_and_slope(s, sigma, t):
    """S(t) and dS/dt via prefix/suffix products (no division by Phi)."""
    m = s.size
    cdf = np.empty(m)
    dens = np.empty(m)
    for i in range(m):
        z = (s[i] - t) / sigma[i]
        cdf[i] = ndtr(z)
        dens[i] = npdf(z) / sigma[i]
    prefix = 1.0
    others = np.empty(m)
    for i in range(m):
        others[i] = prefix
        prefix *= cdf[i]
    suffix = 1.0
    for i in range(m - 1, -1, -1):
        others[i] *= suffix
        suffix *= cdf[i]
    slope = 0.0
    for i in range(m):
        slope -= dens[i] * others[i]
    return prefix, slope


# ---------------------------------------------------------------------------
# adaptive Simpson for  phi(x, y) = int_0^y (S(t) - level) dt  and its x-gradient
#
# Both flavours apply the same per-interval rule: an interval of width w whose
# inherited tolerance is tol accepts when max|S2 - S1| <= 15 tol (Richardson
# corrected), otherwise both halves inherit tol / 2. The jitted version walks
# the tree depth-first, the numpy version level by level; they accept the same
# intervals and differ only in summation order.

_MAX_DEPTH = 60


@njit
def _phi_integrand_nb(s, sigma, T, level, t, with_grad, out):
    m = s.size
    if not with_grad:
        out[0] = _survival_nb(s, sigma, t) - level
        return
    cdf = np.empty(m)
    dens = np.empty(m)
    for i in range(m):
        z = (s[i] - t) / sigma[i]
        cdf[i] = ndtr(z)
        dens[i] = npdf(z) / sigma[i]
    others = np.empty(m)
    prefix = 1.0
    for i in range(m):
        others[i] = prefix
        prefix *= cdf[i]
    suffix = 1.0
    for i in range(m - 1, -1, -1):
        others[i] *= suffix
        suffix *= cdf[i]
    out[0] = prefix - level
    n = T.shape[1]
    for j in range(n):
        acc = 0.0
        for i in range(m):
            if T[i, j] != 0.0:
                acc += T[i, j] * dens[i] * others[i]
        out[1 + j] = acc


@njit
def _phi_quad_nb(s, sigma, T, level, y, tol, with_grad, max_intervals):
    k = 1 + T.shape[1] if with_grad else 1
    total = np.zeros(k)
    if y <= 0.0:
        return total, 0
    D = _MAX_DEPTH + 2
    sa = np.empty(D)
    sb = np.empty(D)
    stol = np.empty(D)
    sdepth = np.empty(D, dtype=np.int64)
    sfa = np.empty((D, k))
    sfm = np.empty((D, k))
    sfb = np.empty((D, k))
    swhole = np.empty((D, k))
    fa = np.empty(k)
    fm = np.empty(k)
    fb = np.empty(k)
    _phi_integrand_nb(s, sigma, T, level, 0.0, with_grad, fa)
    _phi_integrand_nb(s, sigma, T, level, 0.5 * y, with_grad, fm)
    _phi_integrand_nb(s, sigma, T, level, y, with_grad, fb)
    top = 0
    sa[0] = 0.0
    sb[0] = y
    stol[0] = tol
    sdepth[0] = 0
    sfa[0] = fa
    sfm[0] = fm
    sfb[0] = fb
    swhole[0] = y / 6.0 * (fa + 4.0 * fm + fb)
    top = 1
    evaluations = 3
    flm = np.empty(k)
    frm = np.empty(k)
    while top > 0:
        top -= 1
        a = sa[top]
        b = sb[top]
        itol = stol[top]
        depth = sdepth[top]
        fa[:] = sfa[top]
        fm[:] = sfm[top]
        fb[:] = sfb[top]
        whole = swhole[top].copy()
        mid = 0.5 * (a + b)
        h = b - a
        _phi_integrand_nb(s, sigma, T, level, 0.5 * (a + mid), with_grad, flm)
        _phi_integrand_nb(s, sigma, T, level, 0.5 * (mid + b), with_grad, frm)
        evaluations += 2
        left = h / 12.0 * (fa + 4.0 * flm + fm)
        right = h / 12.0 * (fm + 4.0 * frm + fb)
        err = 0.0
        for c in range(k):
            e = abs(left[c] + right[c] - whole[c])
            if e > err:
                err = e
        if err <= 15.0 * itol or depth >= _MAX_DEPTH or evaluations >= max_intervals:
            for c in range(k):
                total[c] += left[c] + right[c] + (left[c] + right[c] - whole[c]) / 15.0
        else:
            sa[top] = mid
            sb[top] = b
            stol[top] = 0.5 * itol
            sdepth[top] = depth + 1
            sfa[top] = fm
            sfm[top] = frm
            sfb[top] = fb
            swhole[top] = right
            top += 1
            sa[top] = a
            sb[top] = mid
            stol[top] = 0.5 * itol
            sdepth[top] = depth + 1
            sfa[top] = fa
            sfm[top] = flm
            sfb[top] = fm
            swhole[top] = left
            top += 1
    return total, evaluations


def _phi_integrand_np(s, sigma, T, level, t, with_grad):
    """Integrand at a vector of abscissae; returns shape (len(t), k)."""
    z = (s[None, :] - t[:, None]) / sigma[None, :]
    cdf = _ndtr_array_np(z)
    surv = np.prod(cdf, axis=1)
    if not with_grad:
        return (surv - level)[:, None]
    dens = INV_SQRT_2PI * np.exp(-0.5 * z * z) / sigma[None, :]
    m = s.size
    ones = np.ones((t.size, 1))
    prefix = np.cumprod(np.hstack([ones, cdf[:, :-1]]), axis=1) if m > 1 else ones
    suffix = np.cumprod(np.hstack([ones, cdf[:, :0:-1]]), axis=1)[:, ::-1] if m > 1 else ones
    weights = dens * prefix * suffix
    grad = weights @ T
    return np.hstack([(surv - level)[:, None], grad])


def _phi_quad_np(s, sigma, T, level, y, tol, with_grad, max_intervals):
    k = 1 + T.shape[1] if with_grad else 1
    if y <= 0.0:
        return np.zeros(k), 0
    f0 = _phi_integrand_np(s, sigma, T, level, np.array([0.0, 0.5 * y, y]), with_grad)
    a = np.array([0.0])
    b = np.array([y])
    fa, fm, fb = f0[0:1], f0[1:2], f0[2:3]
    whole = y / 6.0 * (fa + 4.0 * fm + fb)
    itol = np.array([tol])
    total = np.zeros(k)
    evaluations = 3
    depth = 0
    while a.size:
        mid = 0.5 * (a + b)
        h = (b - a)[:, None]
        fnew = _phi_integrand_np(
            s, sigma, T, level, np.concatenate([0.5 * (a + mid), 0.5 * (mid + b)]), with_grad
        )
        flm, frm = fnew[: a.size], fnew[a.size:]
        evaluations += 2 * a.size
        left = h / 12.0 * (fa + 4.0 * flm + fm)
        right = h / 12.0 * (fm + 4.0 * frm + fb)
        both = left + right
        err = np.max(np.abs(both - whole), axis=1)
        done = err <= 15.0 * itol
        if depth >= _MAX_DEPTH or evaluations >= max_intervals:
            done[:] = True
        total += np.sum(both[done] + (both[done] - whole[done]) / 15.0, axis=0)
        keep = ~done
        a, mid, b = a[keep], mid[keep], b[keep]
        fa, fm, fb, flm, frm = fa[keep], fm[keep], fb[keep], flm[keep], frm[keep]
        left, right = left[keep], right[keep]
        itol = np.concatenate([0.5 * itol[keep], 0.5 * itol[keep]])
        # children in (left halves..., right halves...) order
        a, b = np.concatenate([a, mid]), np.concatenate([mid, b])
        fa, fm, fb = np.vstack([fa, fm]), np.vstack([flm, frm]), np.vstack([fm, fb])
        whole = np.vstack([left, right])
        depth += 1
    return total, evaluations


# ---------------------------------------------------------------------------
# VaR of f(x, zeta) = min_i (s_i - eta_i), eta_i ~ N(0, sigma_i^2): root of S(t) = level

@njit
def _var_root_nb(s, sigma, level, tol):
    smax = 0.0
    for i in range(sigma.size):
        if sigma[i] > smax:
            smax = sigma[i]
    lo = np.inf
    hi = np.inf
    for i in range(s.size):
        lo = min(lo, s[i] - 8.0 * sigma[i])
        hi = min(hi, s[i] + 8.0 * sigma[i])
    base_lo = lo
    base_hi = hi
    while _survival_nb(s, sigma, lo) < level:
        lo -= 8.0 * smax
        if base_lo - lo > 60.0 * smax:
            return np.nan
    while _survival_nb(s, sigma, hi) > level:
        hi += 8.0 * smax
        if hi - base_hi > 60.0 * smax:
            return np.nan
    t = 0.5 * (lo + hi)
    for _ in range(200):
        val, slope = _survival_and_slope(s, sigma, t)
        r = val - level
        if abs(r) <= tol:
            return t
        if r > 0.0:
            lo = t
        else:
            hi = t
        if hi - lo <= 4e-16 * (1.0 + abs(t)):
            return t
        nt = t - r / slope if slope < 0.0 else 0.5 * (lo + hi)
        if not (lo < nt < hi):
            nt = 0.5 * (lo + hi)
        t = nt
    return t


def _var_root_np(s, sigma, level, tol):
    smax = float(np.max(sigma))

    def surv(t):
        return float(np.prod(_ndtr_array_np((s - t) / sigma)))

    lo = float(np.min(s - 8.0 * sigma))
    hi = float(np.min(s + 8.0 * sigma))
    base_lo, base_hi = lo, hi
    while surv(lo) < level:
        lo -= 8.0 * smax
        if base_lo - lo > 60.0 * smax:
            return np.nan
    while surv(hi) > level:
        hi += 8.0 * smax
        if hi - base_hi > 60.0 * smax:
            return np.nan
    t = 0.5 * (lo + hi)
    for _ in range(200):
        z = (s - t) / sigma
        cdf = _ndtr_array_np(z)
        val = float(np.prod(cdf))
        r = val - level
        if abs(r) <= tol:
            return t
        if r > 0.0:
            lo = t
        else:
            hi = t
        if hi - lo <= 4e-16 * (1.0 + abs(t)):
            return t
        dens = INV_SQRT_2PI * np.exp(-0.5 * z * z) / sigma
        others = np.array([np.prod(np.delete(cdf, i)) for i in range(s.size)])
        slope = -float(dens @ others)
        nt = t - r / slope if slope < 0.0 else 0.5 * (lo + hi)
        if not (lo < nt < hi):
            nt = 0.5 * (lo + hi)
        t = nt
    return t


# ---------------------------------------------------------------------------
# Euclidean projection onto {0 <= x <= U, c'x <= u}, c >= 0, by bisection on the
# halfspace multiplier.

@njit
def _project_box_budget_nb(v, upper, cost, budget):
    n = v.size
    x = np.empty(n)
    spend = 0.0
    for j in range(n):
        x[j] = min(max(v[j], 0.0), upper)
        spend += cost[j] * x[j]
    if spend <= budget:
        return x
    lam_lo = 0.0
    lam_hi = 0.0
    for j in range(n):
        if cost[j] > 0.0:
            lam_hi = max(lam_hi, v[j] / cost[j])
    for _ in range(200):
        lam = 0.5 * (lam_lo + lam_hi)
        spend = 0.0
        for j in range(n):
            spend += cost[j] * min(max(v[j] - lam * cost[j], 0.0), upper)
        if spend > budget:
            lam_lo = lam
        else:
            lam_hi = lam
        if lam_hi - lam_lo <= 1e-15 * (1.0 + lam_hi):
            break
    for j in range(n):
        x[j] = min(max(v[j] - lam_hi * cost[j], 0.0), upper)
    return x


def _project_box_budget_np(v, upper, cost, budget):
    x = np.clip(v, 0.0, upper)
    if cost @ x <= budget:
        return x
    pos = cost > 0
    lo, hi = 0.0, float(np.max(v[pos] / cost[pos], initial=0.0))
    for _ in range(200):
        lam = 0.5 * (lo + hi)
        if cost @ np.clip(v - lam * cost, 0.0, upper) > budget:
            lo = lam
        else:
            hi = lam
        if hi - lo <= 1e-15 * (1.0 + hi):
            break
    return np.clip(v - hi * cost, 0.0, upper)


# ---------------------------------------------------------------------------
# per-sample slack and distances

@njit(parallel=False)
def _row_slack_nb(A, b, Z):
    """min over non-degenerate rows of (b_i - a_i'z) / ||a_i||_2, per sample."""
    N, d = Z.shape
    m = A.shape[0]
    norms = np.empty(m)
    for i in range(m):
        acc = 0.0
        for j in range(d):
            acc += A[i, j] * A[i, j]
        norms[i] = math.sqrt(acc)
    out = np.empty(N)
    for k in range(N):
        best = np.inf
        for i in range(m):
            if norms[i] == 0.0:
                continue
            acc = b[i]
            for j in range(d):
                acc -= A[i, j] * Z[k, j]
            v = acc / norms[i]
            if v < best:
                best = v
        out[k] = best
    return out


def _row_slack_np(A, b, Z):
    norms = np.linalg.norm(A, axis=1)
    live = norms > 0
    if not np.any(live):
        return np.full(Z.shape[0], np.inf)
    return np.min((b[live][None, :] - Z @ A[live].T) / norms[live][None, :], axis=1)


@njit
def _box_excess_nb(b, Z):
    """||(z - b)^+||_2 per sample."""
    N, m = Z.shape
    out = np.empty(N)
    for k in range(N):
        acc = 0.0
        for i in range(m):
            e = Z[k, i] - b[i]
            if e > 0.0:
                acc += e * e
        out[k] = math.sqrt(acc)
    return out


def _box_excess_np(b, Z):
    return np.linalg.norm(np.maximum(Z - b[None, :], 0.0), axis=1)


# ---------------------------------------------------------------------------
# empirical CVaR on weighted sorted values (bootstrap replicates as counts)

@njit
def _cvar_sorted_counts_nb(v_sorted, counts, tail):
    """Upper-tail CVaR of the sample with multiplicities ``counts``."""
    N = 0
    for i in range(counts.size):
        N += counts[i]
    k = N - int(math.floor(tail * N + 1e-9))
    if k < 1:
        k = 1
    # k-th order statistic (1-indexed) of the resample
    seen = 0
    gamma = v_sorted[v_sorted.size - 1]
    for i in range(v_sorted.size):
        seen += counts[i]
        if seen >= k:
            gamma = v_sorted[i]
            break
    acc = 0.0
    for i in range(v_sorted.size - 1, -1, -1):
        e = v_sorted[i] - gamma
        if e <= 0.0:
            break
        acc += counts[i] * e
    return gamma + acc / (tail * N)


def _cvar_sorted_counts_np(v_sorted, counts, tail):
    N = int(counts.sum())
    k = max(1, N - int(math.floor(tail * N + 1e-9)))
    idx = int(np.searchsorted(np.cumsum(counts), k))
    gamma = v_sorted[min(idx, v_sorted.size - 1)]
    excess = np.maximum(v_sorted - gamma, 0.0)
    return float(gamma + (counts @ excess) / (tail * N))


# ---------------------------------------------------------------------------
# dispatch

def _ndtri_scalar_np(p):
    return float(_ndtri_array_np(np.array([p]))[0])


if USE_NUMBA:
    ndtri_scalar = ndtri
    ndtri_array = _ndtri_array_nb
    survival_scalar = _survival_nb
    phi_quad = _phi_quad_nb
    var_root = _var_root_nb
    project_box_budget = _project_box_budget_nb
    row_slack = _row_slack_nb
    box_excess = _box_excess_nb
    cvar_sorted_counts = _cvar_sorted_counts_nb
else:
    ndtri_scalar = _ndtri_scalar_np
    ndtri_array = _ndtri_array_np
    survival_scalar = _survival_np
    phi_quad = _phi_quad_np
    var_root = _var_root_np
    project_box_budget = _project_box_budget_np
    row_slack = _row_slack_np
    box_excess = _box_excess_np
    cvar_sorted_counts = _cvar_sorted_counts_np

ndtr_array = _ndtr_array_np
