"""Combinatorial partition functions, exponential moments and the
Euler-Lagrange fixed point of the large-deviation functional.

    Z_{N,M} = (N! / N^N) sum_{n_1 + ... + n_p = N} prod_k n_k^{n_k} / n_k!,   p = M^d,

with ``0^0 = 1``; it equals the integral over the torus of
``prod_i L_M[mu_N](x_i)`` for the empirical measure ``mu_N``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import DomainError, InternalError, PreconditionError
from .potentials import grid_offsets, kernel_on_grid
from .torus import GridDensity, cell_index, lm_apply, minimal_image

__all__ = [
    "multinomial_count",
    "compositions_count",
    "enumerate_compositions",
    "log_znm_exact",
    "znm_exact",
    "znm_definitional",
    "znm_formula_fraction",
    "znm_bounds",
    "fit_bound_constants",
    "stirling_check",
    "MonteCarloResult",
    "znm_monte_carlo",
    "symmetrize",
    "exp_moment_estimate",
    "LdpFixedPoint",
    "ldp_fixed_point",
    "bump_kernel",
    "lm_smoothing_error",
]


# --- exact combinatorics -------------------------------------------------


def multinomial_count(parts) -> int:
    """``N! / (n_1! ... n_p!)`` as an exact integer."""
    parts = [int(v) for v in parts]
    if any(v < 0 for v in parts):
        raise DomainError("parts must be nonnegative")
    out = math.factorial(sum(parts))
    for v in parts:
        out //= math.factorial(v)
    return out


def compositions_count(p: int, q: int) -> int:
    """Number of compositions of ``q`` into ``p`` positive parts, ``C(q-1, p-1)``."""
    if p < 1:
        raise DomainError("p must be >= 1")
    if q < p:
        return 0
    return math.comb(q - 1, p - 1)


def enumerate_compositions(total: int, parts: int, positive: bool = False):
    """All ``parts``-tuples of nonnegative (or positive) integers summing to ``total``."""
    low = 1 if positive else 0
    if parts == 1:
        if total >= low:
            yield (total,)
        return
    for first in range(low, total - low * (parts - 1) + 1):
        for rest in enumerate_compositions(total - first, parts - 1, positive):
            yield (first,) + rest


def _log_cell_series(n: int) -> np.ndarray:
    k = np.arange(n + 1, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(k > 0, k * np.log(np.where(k > 0, k, 1.0)), 0.0) - gammaln(k + 1)
    return out


def _log_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.size - 1
    out = np.empty(n + 1)
    for t in range(n + 1):
        out[t] = logsumexp(a[: t + 1] + b[t::-1])
    return out


def log_znm_exact(N: int, M: int, d: int = 1) -> float:
    """``log Z_{N,M}`` by log-domain dynamic programming over cells.

    The ``p = M^d``-fold convolution of ``a_n = n^n / n!`` is formed by
    repeated squaring, ``O(N^2 log p)``.
    """
    if N < 1 or M < 1 or d < 1:
        raise DomainError("N, M and d must be positive")
    p = M**d
    base = _log_cell_series(N)
    result = None
    power = base
    while p:
        if p & 1:
            result = power if result is None else _log_convolve(result, power)
        p >>= 1
        if p:
            power = _log_convolve(power, power)
    return float(gammaln(N + 1) - N * math.log(N) + result[N])


def znm_exact(N: int, M: int, d: int = 1) -> float:
    return math.exp(log_znm_exact(N, M, d))


def znm_formula_fraction(N: int, p: int) -> Fraction:
    """Composition sum evaluated in exact rational arithmetic (small cases)."""
    total = Fraction(0)
    for comp in enumerate_compositions(N, p):
        term = Fraction(1)
        for n in comp:
            term *= Fraction(n**n, math.factorial(n))
        total += term
    return Fraction(math.factorial(N), N**N) * total


def znm_definitional(N: int, p: int) -> Fraction:
    """``int prod_i L_M[mu_N](x_i) dX`` by enumerating the ``p^N`` cell assignments.

    Each assignment has volume ``p^-N`` and integrand ``prod_i (p / N) n_{k_i}``.
    """
    total = Fraction(0)
    for assign in itertools.product(range(p), repeat=N):
        counts = [0] * p
        for k in assign:
            counts[k] += 1
        term = Fraction(1)
        for k in assign:
            term *= Fraction(p * counts[k], N)
        total += term
    return total / Fraction(p) ** N


def znm_bounds(N: int, p: int, c_lower: float = 1.0, c_upper: float = 1.0):
    """``(lower, upper)`` envelope ``C^-p N^((p-1)/2) / p^(p-1/2)`` and ``C N^(p+1/2)``."""
    lower = c_lower ** (-p) * N ** ((p - 1) / 2.0) / p ** (p - 0.5)
    upper = c_upper * N ** (p + 0.5)
    return lower, upper


def fit_bound_constants(N_values, p_values, d: int = 1):
    """Smallest constants making the envelope hold on the given grid.

    Returns ``(c_lower, c_upper, rows)``; rows are
    ``(N, p, log Z, log lower(C=1), log upper(C=1))``.  Only pairs with
    ``p <= N / 2`` are used.
    """
    rows = []
    c_low = 0.0
    c_up = 0.0
    for p in p_values:
        M = round(p ** (1.0 / d))
        if M**d != p:
            raise DomainError(f"p={p} is not a perfect {d}-th power")
        for N in N_values:
            if p > N / 2:
                continue
            lz = log_znm_exact(N, M, d)
            llow = (p - 1) / 2.0 * math.log(N) - (p - 0.5) * math.log(p)
            lup = (p + 0.5) * math.log(N)
            rows.append((N, p, lz, llow, lup))
            c_low = max(c_low, math.exp((llow - lz) / p))
            c_up = max(c_up, math.exp(lz - lup))
    return c_low, c_up, rows


def stirling_check(n_max: int = 1000):
    """Check ``sqrt(n+1) (n/e)^n <= n!`` for ``0 <= n <= n_max`` and return the
    minimal ``C`` with ``n! <= C sqrt(n) (n/e)^n`` over ``1 <= n <= n_max``."""
    n = np.arange(n_max + 1, dtype=float)
    logfact = gammaln(n + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        npow = np.where(n > 0, n * np.log(np.where(n > 0, n, 1.0)) - n, 0.0)
    lower_ok = bool(np.all(0.5 * np.log(n + 1) + npow <= logfact + 1e-12))
    ratio = logfact[1:] - 0.5 * np.log(n[1:]) - npow[1:]
    return lower_ok, float(np.exp(ratio.max())), int(np.argmax(ratio)) + 1


# --- Monte Carlo ---------------------------------------------------------


@dataclass
class MonteCarloResult:
    """Mean of ``exp(w)`` over samples ``w``, in linear and log form.

    ``log_stderr`` is a blocked jackknife error of ``log_mean``.
    """

    mean: float
    stderr: float
    log_mean: float
    log_stderr: float
    n_samples: int


def _summarize(logw: np.ndarray, n_blocks: int = 50) -> MonteCarloResult:
    n = logw.size
    log_mean = float(logsumexp(logw) - math.log(n))
    w = np.exp(logw - log_mean)  # relative weights, mean 1
    stderr_rel = float(w.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    blocks = min(n_blocks, n)
    if blocks >= 2:
        parts = np.array_split(logw, blocks)
        sums = np.array([logsumexp(b) for b in parts])
        sizes = np.array([b.size for b in parts], dtype=float)
        loo = np.array([logsumexp(np.delete(sums, j)) - math.log(n - sizes[j]) for j in range(blocks)])
        log_se = float(math.sqrt((blocks - 1) / blocks * np.sum((loo - loo.mean()) ** 2)))
    else:
        log_se = float("nan")
    mean = math.exp(log_mean)
    return MonteCarloResult(mean, mean * stderr_rel, log_mean, log_se, n)


def _batches(n_samples: int, batch: int):
    start = 0
    while start < n_samples:
        yield start // batch, min(batch, n_samples - start)
        start += batch


def znm_monte_carlo(N: int, M: int, rho_bar: GridDensity, n_samples: int, seed: int = 0, batch: int = 20000) -> MonteCarloResult:
    """Estimate ``int exp(N int mu_N log(L_M[mu_N] / rho_bar)) rho_bar^N dX``.

    Draws ``X ~ rho_bar^N`` (cell by cell, uniform within cells) so that the
    density factors cancel exactly against the piecewise-constant ``rho_bar``;
    the expectation equals ``Z_{N,M}`` for every ``rho_bar``.
    """
    if n_samples < 100:
        raise DomainError("n_samples must be >= 100")
    d = rho_bar.d
    p = M**d
    logw = np.empty(n_samples)
    for b, size in _batches(n_samples, batch):
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), b)))
        x = rho_bar.sample(size * N, rng)
        k = cell_index(x, M).reshape(size, N)
        counts = np.zeros((size, p), dtype=np.int64)
        np.add.at(counts, (np.repeat(np.arange(size), N), k.ravel()), 1)
        occ = np.take_along_axis(counts, k, axis=1)
        rb = rho_bar.evaluate(x, method="constant").reshape(size, N)
        logw[b * batch : b * batch + size] = np.sum(np.log(p * occ / N) - np.log(rb), axis=1)
    return _summarize(logw)


def _as_matrix(f, rho_bar: GridDensity) -> np.ndarray:
    """Grid function on pairs of cells as a ``(m^d, m^d)`` matrix in flat cell order."""
    m, d = rho_bar.m, rho_bar.d
    cells = m**d
    if callable(f):
        c = rho_bar.centers().reshape(-1, d, order="F") if d > 1 else rho_bar.centers().reshape(-1, 1)
        if d > 1:
            c = np.stack([np.ravel(rho_bar.centers()[..., j], order="F") for j in range(d)], axis=-1)
        return np.asarray(f(c[:, None, :], c[None, :, :]), dtype=float)
    arr = np.asarray(f, dtype=float)
    if arr.shape == (cells, cells):
        return arr
    if arr.shape == (m,) * (2 * d):
        return arr.reshape(cells, cells, order="F")
    raise DomainError(f"grid function has shape {arr.shape}, expected ({cells}, {cells})")


def symmetrize(F: np.ndarray, weights: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """``phi = f - f *_y rho - f *_x rho + <f rho, rho>`` with both cancellations checked."""
    r = F @ weights
    c = weights @ F
    tot = float(weights @ r)
    phi = F - r[:, None] - c[None, :] + tot
    scale = max(1.0, float(np.max(np.abs(F))))
    if np.max(np.abs(phi @ weights)) > tol * scale or np.max(np.abs(weights @ phi)) > tol * scale:
        raise InternalError("symmetrised kernel does not integrate to zero against the reference")
    return phi


def exp_moment_estimate(f, rho_bar: GridDensity, N: int, alpha: float, n_samples: int, seed: int = 0, batch: int = 5000) -> MonteCarloResult:
    """Monte-Carlo ``E exp((alpha / N) sum_{i,j} phi(x_i, x_j))`` for ``X ~ rho_bar^N``.

    ``f`` is constant on pairs of grid cells, so only the cell occupancy
    vector matters; it is drawn directly as ``Multinomial(N, cell masses)``.
    """
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    w = rho_bar.flat() / rho_bar.flat().sum()
    phi = symmetrize(_as_matrix(f, rho_bar), w)
    logw = np.empty(n_samples)
    if not np.any(phi):
        logw[:] = 0.0
        return _summarize(logw)
    for b, size in _batches(n_samples, batch):
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), b)))
        n = rng.multinomial(N, w, size=size).astype(float)
        logw[b * batch : b * batch + size] = alpha / N * np.einsum("sa,ab,sb->s", n, phi, n)
    return _summarize(logw)


# --- Euler-Lagrange fixed point ------------------------------------------


@dataclass
class LdpFixedPoint:
    u: np.ndarray
    mu: np.ndarray
    m_u: float
    residual: float
    iterations: int
    i_value: float
    converged: bool
    ratios: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    def undamped_ratio(self, damping: float) -> float:
        """Contraction factor of the undamped map inferred from the last measured ratio."""
        if not self.ratios:
            return float("nan")
        return (self.ratios[-1] - (1.0 - damping)) / damping


def _kernel_table(v_tilde, m: int, d: int) -> np.ndarray:
    if isinstance(v_tilde, np.ndarray):
        if v_tilde.shape != (m,) * d:
            raise DomainError("kernel table does not match the grid")
        return v_tilde
    return np.asarray(kernel_on_grid(v_tilde, m, d, mode="cell"))


def ldp_fixed_point(
    v_tilde,
    rho_bar: GridDensity,
    damping: float = 0.5,
    tol: float = 1e-12,
    max_iter: int = 1000,
    u0=None,
) -> LdpFixedPoint:
    """Damped Picard iteration for ``u = -V * (rho (e^{2u} / M_u - 1))``.

    ``v_tilde`` is an offset table on the grid of ``rho_bar`` or an evaluator
    (cell-averaged).  Returns the iterate, ``M_u``, the sup-norm residual and
    ``I = F(mu) - int mu log(mu / rho)`` at ``mu = rho e^{2u} / M_u``.
    """
    if not 0 < damping <= 1:
        raise DomainError("damping must lie in (0, 1]")
    m, d = rho_bar.m, rho_bar.d
    rho = rho_bar.values
    if np.any(rho <= 0):
        raise DomainError("reference density must be strictly positive")
    table = _kernel_table(v_tilde, m, d)
    vol = float(m) ** (-d)
    axes = tuple(range(d))
    that = np.fft.rfftn(table)

    def conv(g):
        return np.fft.irfftn(that * np.fft.rfftn(g), s=(m,) * d, axes=axes) * vol

    def rhs(u):
        e = np.exp(2.0 * u)
        mu_ = float(np.sum(rho * e)) * vol
        return -conv(rho * (e / mu_ - 1.0)), mu_

    u = np.zeros((m,) * d) if u0 is None else np.array(u0, dtype=float).reshape((m,) * d)
    ratios, residuals = [], []
    prev_step = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g, _ = rhs(u)
        res = float(np.max(np.abs(g - u)))
        residuals.append(res)
        if res < tol:
            converged = True
            break
        new = (1.0 - damping) * u + damping * g
        step = float(np.max(np.abs(new - u)))
        if prev_step:
            ratios.append(step / prev_step)
        prev_step = step
        u = new
    g, m_u = rhs(u)
    residual = float(np.max(np.abs(g - u)))
    if not converged and residual < tol:
        converged = True
    e = np.exp(2.0 * u)
    mu = rho * e / m_u
    diff = mu - rho
    f_val = -float(np.sum(diff * conv(diff))) * vol
    kl = float(np.sum(mu * (2.0 * u - math.log(m_u)))) * vol
    return LdpFixedPoint(u, mu, m_u, residual, it, f_val - kl, converged, ratios, residuals)


# --- smoothing versus block averaging ------------------------------------


def bump_kernel(x):
    """Smooth compactly supported bump ``exp(-1 / (1 - |x|^2))`` on the unit ball (unnormalised)."""
    r2 = np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(r2 < 1.0, np.exp(-1.0 / np.maximum(1.0 - r2, 1e-300)), 0.0)


def lm_smoothing_error(mu: GridDensity, eps: float, M: int, kernel=bump_kernel) -> float:
    """``|| L_eps * mu - L_M[L_eps * mu] ||_1`` on the grid of ``mu``.

    ``L_eps(x) = eps^-d L(x / eps)`` is built from ``kernel`` on the grid,
    normalised to unit mass; the grid resolution must be a multiple of ``M``.
    """
    if M * eps < 1:
        raise PreconditionError(f"M * eps = {M * eps} < 1")
    m, d = mu.m, mu.d
    offs = minimal_image(grid_offsets(m, d))
    table = kernel(offs / eps)
    table = table / (table.sum() / m**d)
    axes = tuple(range(d))
    smooth = np.fft.irfftn(np.fft.rfftn(table) * np.fft.rfftn(mu.values), s=(m,) * d, axes=axes) / m**d
    sm = GridDensity(smooth, check=False)
    block = lm_apply(sm, M)
    # expand the block average back to the fine grid
    up = block.values
    for axis in range(d):
        up = np.repeat(up, m // M, axis=axis)
    return float(np.sum(np.abs(smooth - up))) / m**d
