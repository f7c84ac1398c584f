"""Sample-based estimators for ensembles of particle configurations.

All three-term expansions share one helper, so that the estimates for V, its
short-range part and its long-range part are exactly linear in the potential:

    Q_V(X) = (1/N^2) sum_{i != j} V(x_i - x_j) - (2/N) sum_i (V * rho)(x_i) + <V * rho, rho>.

``V * rho`` is the discrete convolution of the reference density with the
cell-averaged kernel table, interpolated multilinearly at the particles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, rel_entr

from . import _kernels
from .errors import DomainError, PreconditionError, StatisticsError
from .potentials import PairPotential, PotentialSpec, kernel_on_grid, split_short_long
from .torus import GridDensity, cell_index, lm_apply

__all__ = [
    "EnsembleSnapshot",
    "Estimate",
    "DiagnosticsRecord",
    "three_term",
    "kn_estimate",
    "hn_estimate",
    "f_functional",
    "split_identity_terms",
    "marginal_l1",
    "default_marginal_M",
    "duality_check",
    "log_hls_gap",
]


@dataclass
class EnsembleSnapshot:
    time: float
    configs: list
    seed: int = 0
    params_hash: str = ""

    def __post_init__(self):
        self.configs = [np.asarray(getattr(c, "positions", c), dtype=float) for c in self.configs]
        if not self.configs:
            raise DomainError("empty ensemble")
        shapes = {c.shape for c in self.configs}
        if len(shapes) != 1:
            raise DomainError("all replicas must share N and d")

    @property
    def n(self) -> int:
        return self.configs[0].shape[0]

    @property
    def d(self) -> int:
        return self.configs[0].shape[1]

    @property
    def replicas(self) -> int:
        return len(self.configs)


@dataclass
class Estimate:
    mean: float
    stderr: float
    values: np.ndarray = field(repr=False)

    @classmethod
    def from_values(cls, values) -> "Estimate":
        v = np.asarray(values, dtype=float)
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
        return cls(float(v.mean()), se, v)


@dataclass
class DiagnosticsRecord:
    time: float
    kn: float
    kn_stderr: float
    hn: float
    f: float
    f_stderr: float
    marginal_l1: dict
    notes: str = ""


def _ensemble(ens):
    if isinstance(ens, EnsembleSnapshot):
        return ens
    arr = np.asarray(getattr(ens, "positions", ens), dtype=float)
    if arr.ndim == 2:
        return EnsembleSnapshot(0.0, [arr])
    return EnsembleSnapshot(0.0, list(ens))


class _Convolver:
    """``pot * rho_bar`` on the grid of ``rho_bar`` plus its self-energy."""

    def __init__(self, pot: PairPotential, rho_bar: GridDensity, kernel: str = "cell"):
        m, d = rho_bar.m, rho_bar.d
        table = np.asarray(kernel_on_grid(pot, m, d, mode=kernel))
        axes = tuple(range(d))
        conv = np.fft.irfftn(np.fft.rfftn(table) * np.fft.rfftn(rho_bar.values), s=(m,) * d, axes=axes) / m**d
        self.field = GridDensity(conv, check=False)
        self.self_energy = float(np.sum(conv * rho_bar.values)) / m**d

    def at(self, x, method="linear"):
        return self.field.evaluate(x, method=method)


def three_term(positions, rho_bar: GridDensity, pot: PairPotential, kernel: str = "cell", _conv=None, method="linear") -> float:
    """``Q_V`` above for one configuration (exact O(N^2) pair sum)."""
    x = np.ascontiguousarray(np.asarray(positions, dtype=float))
    n = x.shape[0]
    conv = _conv or _Convolver(pot, rho_bar, kernel)
    pair = float(_kernels.pair_energy_sum(x, *pot.numba_args())) if n > 1 else 0.0
    one = float(np.sum(conv.at(x, method)))
    return pair / n**2 - 2.0 * one / n + conv.self_energy


def kn_estimate(
    ens, rho_bar: GridDensity, spec: PotentialSpec, eps: float | None = None, kernel: str = "cell", method: str = "linear", pot=None
) -> Estimate:
    """Modulated energy ``(1/(2 sigma)) Q_{V_eps}`` averaged over replicas.

    ``eps`` defaults to ``spec.epsilon`` or, if that is zero, one cell of
    ``rho_bar``'s grid; pass the particle regularisation to keep the pair
    and convolution terms consistent.
    """
    ens = _ensemble(ens)
    if not spec.sigma > 0:
        raise DomainError("the modulated energy needs sigma > 0")
    if pot is None:
        e = eps if eps is not None else (spec.epsilon or 1.0 / rho_bar.m)
        pot = PairPotential(spec, eps=e)
    conv = _Convolver(pot, rho_bar, kernel)
    vals = [three_term(c, rho_bar, pot, _conv=conv, method=method) / (2.0 * spec.sigma) for c in ens.configs]
    return Estimate.from_values(vals)


def f_functional(config, rho_bar: GridDensity, v0: PairPotential, kernel: str = "cell", method: str = "linear") -> float:
    """``F(mu_N) = -Q_{V0}`` for one configuration."""
    pos = getattr(config, "positions", config)
    return -three_term(pos, rho_bar, v0, kernel=kernel, method=method)


def split_identity_terms(config, rho_bar: GridDensity, spec: PotentialSpec, eps: float, kernel: str = "cell"):
    """``(K(V), K(W), -(lam/(2 sigma)) F)`` for one configuration; the first
    minus the second equals the third."""
    if not spec.sigma > 0:
        raise DomainError("the modulated energy needs sigma > 0")
    sp = split_short_long(spec, eps)
    full = PairPotential(spec, eps=eps)
    kv = three_term(config, rho_bar, full, kernel) / (2 * spec.sigma)
    kw = three_term(config, rho_bar, sp.w, kernel) / (2 * spec.sigma)
    if spec.lam == 0:
        return kv, kw, 0.0
    f = f_functional(config, rho_bar, sp.v0, kernel)
    return kv, kw, -(spec.lam / (2 * spec.sigma)) * f


def hn_estimate(ens, rho_bar: GridDensity, M: int, check_regime: bool = True, method: str = "linear") -> Estimate:
    """Average over replicas of ``(1/N) sum_i log(L_M[mu_N](x_i) / rho_bar(x_i))``.

    For samples drawn from ``rho_bar`` itself the estimate carries a positive
    bias of order ``(M^d - 1) / (2N)``; it is reported, not removed.
    """
    ens = _ensemble(ens)
    n, d = ens.n, ens.d
    if check_regime and M**d > n / 2:
        raise PreconditionError(f"M^d = {M**d} exceeds N/2 = {n / 2}")
    vals = []
    for x in ens.configs:
        k = cell_index(x, M)
        counts = np.bincount(k, minlength=M**d)
        lm = counts[k] * float(M) ** d / n
        rb = rho_bar.evaluate(x, method=method)
        if np.any(rb <= 0):
            raise DomainError("reference density vanishes at a particle")
        vals.append(float(np.mean(np.log(lm) - np.log(rb))))
    return Estimate.from_values(vals)


def default_marginal_M(n_samples: int, k: int, d: int, grid_m: int | None = None) -> int:
    """Largest M with ``M^(kd) <= n_samples / 25`` (and dividing ``grid_m`` if given)."""
    target = max(1, int(math.floor((n_samples / 25.0) ** (1.0 / (k * d)) + 1e-9)))
    if grid_m is None:
        return target
    for M in range(target, 0, -1):
        if grid_m % M == 0:
            return M
    return 1


def marginal_l1(ens, rho_bar: GridDensity, k: int, M: int | None = None, tuples: str = "disjoint") -> float:
    """L1 distance between the k-particle histogram on the ``M``-grid of
    ``Pi^(kd)`` and the binned ``rho_bar^(x) k``.

    Samples are the disjoint k-tuples ``(x_{jk}, ..., x_{jk+k-1})`` of every
    replica (exchangeability makes each an equally valid draw of the k-marginal);
    ``tuples="first"`` uses only the first k particles of each replica.
    """
    ens = _ensemble(ens)
    n, d = ens.n, ens.d
    if k < 1 or k > n:
        raise DomainError("k must lie in [1, N]")
    per = n // k if tuples == "disjoint" else 1
    n_samples = per * ens.replicas
    if M is None:
        M = default_marginal_M(n_samples, k, d, rho_bar.m)
    bins = M ** (k * d)
    if n_samples < 5 * bins:
        raise StatisticsError(f"{n_samples} samples for {bins} bins; need at least {5 * bins}", required=5 * bins)
    hist = np.zeros(bins)
    for x in ens.configs:
        idx = cell_index(x[: per * k], M).reshape(per, k)
        flat = idx @ (M**d) ** np.arange(k)
        hist += np.bincount(flat, minlength=bins)
    hist /= hist.sum()
    masses = lm_apply(rho_bar, M).flat() * float(M) ** (-d)
    ref = masses
    for _ in range(k - 1):
        ref = np.outer(ref, masses).ravel(order="F")  # later particles are slower digits
    return float(np.abs(hist - ref / ref.sum()).sum())


def duality_check(rho, rho_bar, psi, alpha: float, n_scale: int):
    """Both sides of ``int psi drho <= (KL(rho|rho_bar) + log int e^{a N psi} drho_bar) / (a N)``
    on a finite probability space."""
    rho = np.asarray(rho, dtype=float)
    rho_bar = np.asarray(rho_bar, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if abs(rho.sum() - 1) > 1e-9 or abs(rho_bar.sum() - 1) > 1e-9:
        raise DomainError("both vectors must be probability vectors")
    if np.any((rho > 0) & (rho_bar <= 0)):
        raise DomainError("rho is not absolutely continuous with respect to rho_bar")
    if not alpha > 0 or n_scale < 1:
        raise DomainError("alpha must be positive and n_scale >= 1")
    an = alpha * n_scale
    lhs = float(np.dot(rho, psi))
    kl = float(np.sum(rel_entr(rho, rho_bar)))
    pos = rho_bar > 0
    lme = float(logsumexp(an * psi[pos], b=rho_bar[pos]))
    return lhs, (kl + lme) / an


def log_hls_gap(rho: GridDensity) -> float:
    """``-int int log r(x - y) rho rho - (1/d) int rho log rho`` with the
    periodised radius and the cell-averaged log kernel."""
    d, m = rho.d, rho.m
    if np.any(rho.values <= 0):
        raise DomainError("density must be strictly positive")
    logr = PairPotential(PotentialSpec(lam=1.0, sigma=1.0, d=d))
    table = np.asarray(kernel_on_grid(logr, m, d, mode="cell"))
    vol = float(m) ** (-d)
    axes = tuple(range(d))
    conv = np.fft.irfftn(np.fft.rfftn(table) * np.fft.rfftn(rho.values), s=(m,) * d, axes=axes) * vol
    inter = float(np.sum(conv * rho.values)) * vol
    ent = float(np.sum(rho.values * np.log(rho.values))) * vol
    return -inter - ent / d
