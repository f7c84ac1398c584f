# Scalar kernels shared by the numpy evaluators and the compiled particle loops.
# Parameter tuple convention for compiled code:
#   lam, eps, eta, part, scale, ks (n_modes x d int64), coefs (n_modes,), offset
# part: 0 = full V, 1 = short range V*chi(|x|/eta), 2 = long range V*(1-chi(|x|/eta)).

import math

import numpy as np
from numba import njit

R_BLEND = 0.5  # log r(s) = log s for s <= R_BLEND/2, constant for s >= R_BLEND
LOG_QUARTER = math.log(0.25)
_CIN_TERMS = 40


@njit(cache=True, nogil=True)
def cin(x):
    """Cin(x) = int_0^x (1 - cos t)/t dt, by its (entire) power series."""
    x2 = x * x
    term = x2 / 2.0  # x^{2k}/(2k)! for k = 1
    total = 0.0
    sign = 1.0
    for k in range(1, _CIN_TERMS):
        total += sign * term / (2.0 * k)
        term *= x2 / ((2.0 * k + 1.0) * (2.0 * k + 2.0))
        sign = -sign
        if term < 1e-18 * abs(total):
            break
    return total


@njit(cache=True, nogil=True, inline="always")
def chi(s):
    if s <= 0.5:
        return 1.0
    if s >= 1.0:
        return 0.0
    return 0.5 * (1.0 + math.cos(math.pi * (2.0 * s - 1.0)))


@njit(cache=True, nogil=True, inline="always")
def chi_prime(s):
    if s <= 0.5 or s >= 1.0:
        return 0.0
    return -math.pi * math.sin(math.pi * (2.0 * s - 1.0))


@njit(cache=True, nogil=True)
def log_radius(s, cin_pi):
    """Periodised log|x| as a function of the minimal-image norm s > 0."""
    if s <= 0.25:
        return math.log(s)
    if s >= R_BLEND:
        s = R_BLEND
    return LOG_QUARTER + 0.5 * (cin(4.0 * math.pi * s) - cin_pi)


@njit(cache=True, nogil=True, inline="always")
def log_radius_prime(s):
    if s <= 0.25:
        return 1.0 / s
    if s >= R_BLEND:
        return 0.0
    return chi(s / R_BLEND) / s


@njit(cache=True, nogil=True, inline="always")
def min_image(v):
    # any periodic representative works for the (periodic) potential
    return v - math.floor(v + 0.5)


@njit(cache=True, nogil=True)
def pair_value(m, lam, eps, eta, part, scale, ks, coefs, offset, cin_pi):
    """Potential at a minimal-image displacement m (1-D array of length d)."""
    d = m.shape[0]
    s2 = 0.0
    for j in range(d):
        s2 += m[j] * m[j]
    s = math.sqrt(s2)
    if part == 1 and s >= eta:
        return 0.0
    if part == 2 and s <= 0.5 * eta:
        return 0.0
    val = offset
    for q in range(coefs.shape[0]):
        ph = 0.0
        for j in range(d):
            ph += ks[q, j] * m[j]
        val += coefs[q] * math.cos(2.0 * math.pi * ph)
    if lam != 0.0:
        if s == 0.0:
            lr = math.log(eps) if eps > 0.0 else -math.inf
        else:
            lr = log_radius(s, cin_pi)
            if eps > 0.0:
                le = math.log(eps)
                if lr < le:
                    lr = le
        val += lam * lr
    if part == 1:
        val *= chi(s / eta)
    elif part == 2:
        val *= 1.0 - chi(s / eta)
    return scale * val


@njit(cache=True, nogil=True, inline="always")
def pair_grad(m, out, lam, eps, eta, part, scale, ks, coefs, offset, cin_pi):
    """Gradient at minimal-image displacement m, written into out."""
    d = m.shape[0]
    s2 = 0.0
    for j in range(d):
        s2 += m[j] * m[j]
    s = math.sqrt(s2)
    for j in range(d):
        out[j] = 0.0
    for q in range(coefs.shape[0]):
        ph = 0.0
        for j in range(d):
            ph += ks[q, j] * m[j]
        f = -2.0 * math.pi * coefs[q] * math.sin(2.0 * math.pi * ph)
        for j in range(d):
            out[j] += f * ks[q, j]
    radial = 0.0
    if lam != 0.0 and s > 0.0:
        active = True
        if eps > 0.25:
            active = log_radius(s, cin_pi) >= math.log(eps)
        elif eps > 0.0:
            active = s >= eps
        if active:
            radial = lam * log_radius_prime(s)
    if part == 0:
        if s > 0.0:
            for j in range(d):
                out[j] += radial * m[j] / s
    else:
        c = chi(s / eta)
        w = c if part == 1 else 1.0 - c
        dc = chi_prime(s / eta) / eta
        if part == 2:
            dc = -dc
        v = 0.0
        if dc != 0.0:
            v = pair_value(m, lam, eps, eta, 0, 1.0, ks, coefs, offset, cin_pi)
        for j in range(d):
            out[j] *= w
        if s > 0.0:
            for j in range(d):
                out[j] += (w * radial + v * dc) * m[j] / s
    for j in range(d):
        out[j] *= scale


CIN_PI = float(cin(math.pi))


@njit(cache=True, nogil=True)
def radial_drift_sum(x, lam, eps, scale):
    """drift_sum specialised to V = lam * log max(r, eps) with eps <= 1/4."""
    n, d = x.shape
    out = np.zeros((n, d))
    m = np.empty(d)
    inv_n = scale * lam / n
    eps2 = eps * eps
    for i in range(n):
        for j in range(i + 1, n):
            s2 = 0.0
            for k in range(d):
                v = x[i, k] - x[j, k]
                v -= math.floor(v + 0.5)
                m[k] = v
                s2 += v * v
            if s2 >= 0.25 or s2 < eps2 or s2 == 0.0:
                continue
            if s2 <= 0.0625:
                f = inv_n / s2
            else:
                s = math.sqrt(s2)
                f = inv_n * 0.5 * (1.0 - math.cos(4.0 * math.pi * s)) / s2
            for k in range(d):
                out[i, k] -= f * m[k]
                out[j, k] += f * m[k]
    return out


@njit(cache=True, nogil=True)
def radial_drift_sum_1d(x, lam, eps, scale):
    n = x.shape[0]
    out = np.zeros((n, 1))
    c = scale * lam / n
    for i in range(n):
        xi = x[i, 0]
        acc = 0.0
        for j in range(i + 1, n):
            v = xi - x[j, 0]
            v -= math.floor(v + 0.5)
            s = abs(v)
            if s >= 0.5 or s < eps or s == 0.0:
                continue
            if s <= 0.25:
                f = c / v
            else:
                f = c * 0.5 * (1.0 - math.cos(4.0 * math.pi * s)) / v
            acc -= f
            out[j, 0] += f
        out[i, 0] += acc
    return out


@njit(cache=True, nogil=True)
def drift_sum(x, lam, eps, eta, part, scale, ks, coefs, offset, cin_pi):
    """(1/N) sum_{j != i} -grad V(x_i - x_j) for all i, exploiting odd symmetry."""
    n, d = x.shape
    if part == 0 and coefs.shape[0] == 0 and eps <= 0.25:
        if d == 1:
            return radial_drift_sum_1d(x, lam, eps, scale)
        return radial_drift_sum(x, lam, eps, scale)
    out = np.zeros((n, d))
    m = np.empty(d)
    g = np.empty(d)
    inv_n = 1.0 / n
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(d):
                m[k] = min_image(x[i, k] - x[j, k])
            pair_grad(m, g, lam, eps, eta, part, scale, ks, coefs, offset, cin_pi)
            for k in range(d):
                out[i, k] -= g[k] * inv_n
                out[j, k] += g[k] * inv_n
    return out


@njit(cache=True, nogil=True)
def pair_energy_sum(x, lam, eps, eta, part, scale, ks, coefs, offset, cin_pi):
    """sum_{i != j} V(x_i - x_j), counting each ordered pair (V even)."""
    n, d = x.shape
    m = np.empty(d)
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(d):
                m[k] = min_image(x[i, k] - x[j, k])
            total += pair_value(m, lam, eps, eta, part, scale, ks, coefs, offset, cin_pi)
    return 2.0 * total


@njit(cache=True, nogil=True)
def cyclic_tridiag_solve(lower, diag, upper, rhs):
    """Solve ``lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`` with
    periodic wrap, independently for every column (arrays of shape (m, L)).
    Sherman-Morrison on top of the Thomas algorithm; requires m >= 3."""
    m, nl = rhs.shape
    out = np.empty((m, nl))
    b = np.empty(m)
    y = np.empty(m)
    z = np.empty(m)
    cp = np.empty(m)
    for col in range(nl):
        gamma = -diag[0, col]
        alpha = lower[0, col]  # couples x[0] to x[m-1]
        beta = upper[m - 1, col]  # couples x[m-1] to x[0]
        for i in range(m):
            b[i] = diag[i, col]
        b[0] -= gamma
        b[m - 1] -= alpha * beta / gamma
        # factorise once, solve for rhs (y) and the correction vector (z)
        cp[0] = upper[0, col] / b[0]
        y[0] = rhs[0, col] / b[0]
        z[0] = gamma / b[0]
        for i in range(1, m):
            den = b[i] - lower[i, col] * cp[i - 1]
            cp[i] = upper[i, col] / den if i < m - 1 else 0.0
            zi = beta if i == m - 1 else 0.0
            y[i] = (rhs[i, col] - lower[i, col] * y[i - 1]) / den
            z[i] = (zi - lower[i, col] * z[i - 1]) / den
        for i in range(m - 2, -1, -1):
            y[i] -= cp[i] * y[i + 1]
            z[i] -= cp[i] * z[i + 1]
        fact = (y[0] + alpha * y[m - 1] / gamma) / (1.0 + z[0] + alpha * z[m - 1] / gamma)
        for i in range(m):
            out[i, col] = y[i] - fact * z[i]
    return out
