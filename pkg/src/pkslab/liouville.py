"""Grid solver for the N-particle Liouville equation in weighted-diffusion form

    d_t rho_N = sigma div(G_N grad(rho_N / G_N)),
    G_N = exp(-(1 / (2 N sigma)) sum_{i != j} V_eps(x_i - x_j)),

on the product torus with ``N * d <= 3``.  The joint density lives on a
``(m,) * (N d)`` grid whose axis ``i * d + k`` is coordinate ``k`` of particle
``i``.  Face weights are geometric means of neighbouring ``G`` values, so any
multiple of ``G`` is an exact discrete steady state.  Implicit Euler in the
variable ``u = rho / G`` gives the symmetric positive system
``(diag G + dt sigma L_G) u = rho^n`` solved by preconditioned CG; the update
itself is written in flux form so mass is conserved to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import DomainError, InternalError, ResourceError
from .meanfield import KernelTables, MeanFieldSolver
from .potentials import PotentialSpec, regularize
from .torus import GridDensity

__all__ = [
    "MAX_CELLS",
    "GibbsFieldN",
    "LiouvilleField",
    "gibbs_field",
    "tensor_power",
    "liouville_step",
    "LiouvilleTrajectory",
    "run_liouville",
    "entropy_dissipation_report",
    "ModulatedEnergy",
    "modulated_free_energy_en",
]

MAX_CELLS = 2_100_000
DENSITY_FLOOR = 1e-300


def _check_budget(n: int, d: int, m: int):
    if n * d > 3:
        raise DomainError(f"Liouville grids are limited to N*d <= 3 (got {n * d})")
    if m ** (n * d) > MAX_CELLS:
        raise ResourceError(f"grid of {m}^{n * d} cells exceeds the budget of {MAX_CELLS}")


@dataclass
class GibbsFieldN:
    log_values: np.ndarray
    n: int
    d: int
    m: int
    eps: float

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)


@dataclass
class LiouvilleField:
    values: np.ndarray
    n: int
    d: int
    eps: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != self.n * self.d:
            raise DomainError("field rank must equal N * d")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def cell_volume(self) -> float:
        return float(self.m) ** (-self.values.ndim)

    def mass(self) -> float:
        return float(self.values.sum()) * self.cell_volume

    def swap_particles(self, i: int, j: int) -> np.ndarray:
        """Values with particles ``i`` and ``j`` exchanged."""
        axes = list(range(self.values.ndim))
        for k in range(self.d):
            axes[i * self.d + k], axes[j * self.d + k] = axes[j * self.d + k], axes[i * self.d + k]
        return np.transpose(self.values, axes)


def _pair_sum(table: np.ndarray, n: int, d: int, m: int) -> np.ndarray:
    """``sum_{i != j} table[x_i - x_j]`` over ordered pairs on the product grid."""
    idx = np.indices((m,) * (n * d), sparse=True)
    total = np.zeros((m,) * (n * d))
    for i in range(n):
        for j in range(i + 1, n):
            off = tuple((idx[i * d + k] - idx[j * d + k]) % m for k in range(d))
            total = total + 2.0 * table[off]
    return total


def _one_body_sum(field1: np.ndarray, n: int, d: int, m: int) -> np.ndarray:
    """``sum_i field1[x_i]`` on the product grid."""
    idx = np.indices((m,) * (n * d), sparse=True)
    total = np.zeros((m,) * (n * d))
    for i in range(n):
        total = total + field1[tuple(idx[i * d + k] for k in range(d))]
    return total


def gibbs_field(spec: PotentialSpec, n: int, m: int, eps: float) -> GibbsFieldN:
    """``log G = -(1/(2 N sigma)) sum_{i != j} V_eps(x_i - x_j)`` at cell centres."""
    d = spec.d
    _check_budget(n, d, m)
    if not eps > 0:
        raise DomainError("eps must be positive")
    if not spec.sigma > 0:
        raise DomainError("sigma must be positive")
    table = KernelTables.build(spec, m, eps).potential if m >= 8 else _small_table(spec, m, eps)
    log_g = -_pair_sum(table, n, d, m) / (2.0 * n * spec.sigma)
    return GibbsFieldN(log_g, n, d, m, eps)


def _small_table(spec, m, eps):
    from .potentials import kernel_on_grid

    return np.asarray(kernel_on_grid(regularize(spec, eps), m, spec.d, mode="point"))


def tensor_power(rho_bar, n: int) -> LiouvilleField:
    """``rho_bar^{(x) n}`` sampled on the product grid."""
    base = rho_bar.values if isinstance(rho_bar, GridDensity) else np.asarray(rho_bar, dtype=float)
    d = base.ndim
    _check_budget(n, d, base.shape[0])
    out = base
    for _ in range(n - 1):
        out = np.multiply.outer(out, base)
    return LiouvilleField(out, n, d)


class _WeightedLaplacian:
    """``L_G u = -sum_axes div(G_face grad u) / h^2`` with geometric-mean faces."""

    def __init__(self, log_g: np.ndarray):
        self.shape = log_g.shape
        self.h = 1.0 / log_g.shape[0]
        shift = float(log_g.max())
        self.log_g = log_g
        self.g = np.exp(log_g - shift)  # scaled so max G = 1
        self.faces = [np.exp(0.5 * (log_g + np.roll(log_g, -1, axis=a)) - shift) for a in range(log_g.ndim)]
        self.diag_lap = sum(f + np.roll(f, 1, axis=a) for a, f in enumerate(self.faces)) / self.h**2

    def flux_div(self, u: np.ndarray) -> np.ndarray:
        """``div(G_face grad u)`` (sums to zero over the grid)."""
        out = np.zeros(self.shape)
        for a, f in enumerate(self.faces):
            flux = f * (np.roll(u, -1, axis=a) - u)
            out += flux - np.roll(flux, 1, axis=a)
        return out / self.h**2

    def dissipation(self, u: np.ndarray) -> float:
        """``sum_faces G_face (du)(d log u) / h^2 * vol``, faces touching empty cells skipped."""
        with np.errstate(divide="ignore", invalid="ignore"):
            lu = np.where(u > DENSITY_FLOOR, np.log(np.maximum(u, DENSITY_FLOOR)), np.nan)
        total = 0.0
        for a, f in enumerate(self.faces):
            du = np.roll(u, -1, axis=a) - u
            dl = np.roll(lu, -1, axis=a) - lu
            term = f * du * dl
            total += float(np.nansum(term))
        vol = self.h ** len(self.shape)
        return total / self.h**2 * vol


def _implicit_solve(op: _WeightedLaplacian, rho: np.ndarray, coef: float, rtol: float):
    """Solve ``(diag G + coef L_G) u = rho`` (G scaled as in ``op``)."""
    n = rho.size
    diag = op.g + coef * op.diag_lap

    def matvec(v):
        v = v.reshape(op.shape)
        return (op.g * v - coef * op.flux_div(v)).ravel()

    A = LinearOperator((n, n), matvec=matvec, dtype=float)
    P = LinearOperator((n, n), matvec=lambda v: v / diag.ravel(), dtype=float)
    x0 = (rho / op.g).ravel()
    u, info = cg(A, rho.ravel(), x0=x0, rtol=rtol, atol=0.0, M=P, maxiter=20 * n)
    if info != 0:
        raise InternalError(f"conjugate gradient did not converge (info={info})")
    return u.reshape(op.shape)


def liouville_step(
    rho: LiouvilleField,
    dt: float,
    spec: PotentialSpec,
    gibbs: GibbsFieldN | None = None,
    rtol: float = 1e-13,
    return_dissipation: bool = False,
    _op: _WeightedLaplacian | None = None,
):
    """One implicit Euler step of the weighted diffusion.

    The scheme is unconditionally stable, so the only requirement on ``dt`` is
    positivity.  With ``return_dissipation`` the discrete entropy dissipation
    of the step (per unit time) is returned as well.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise DomainError("dt must be positive and finite")
    if gibbs is None:
        gibbs = gibbs_field(spec, rho.n, rho.m, rho.eps)
    op = _op or _WeightedLaplacian(gibbs.log_values)
    coef = dt * spec.sigma
    u = _implicit_solve(op, rho.values, coef, rtol)
    new = rho.values + coef * op.flux_div(u)
    out = LiouvilleField(new, rho.n, rho.d, rho.eps)
    if return_dissipation:
        return out, spec.sigma * op.dissipation(u)
    return out


def _entropy(values: np.ndarray, log_g: np.ndarray) -> float:
    pos = values > DENSITY_FLOOR
    vol = float(values.shape[0]) ** (-values.ndim)
    return float(np.sum(values[pos] * (np.log(values[pos]) - log_g[pos]))) * vol


@dataclass
class ModulatedEnergy:
    total: float
    relative_entropy: float
    modulated_energy: float


def _reference_fields(rho_bar, spec: PotentialSpec, n: int, tables: KernelTables):
    """log rho_bar_N and log G_{rho_bar,N} on the product grid."""
    vals = rho_bar.values if isinstance(rho_bar, GridDensity) else np.asarray(rho_bar, dtype=float)
    if np.any(vals <= 0):
        raise DomainError("reference density must be strictly positive")
    d, m = vals.ndim, vals.shape[0]
    vconv = tables.potential_field(vals)
    vol = float(m) ** (-d)
    self_energy = float(np.sum(vconv * vals)) * vol
    log_ref = _one_body_sum(np.log(vals), n, d, m)
    log_gref = -_one_body_sum(vconv, n, d, m) / spec.sigma + n * self_energy / (2.0 * spec.sigma)
    return log_ref, log_gref


def modulated_free_energy_en(
    rho: LiouvilleField, rho_bar, spec: PotentialSpec, gibbs: GibbsFieldN | None = None, tables: KernelTables | None = None
) -> ModulatedEnergy:
    """``E_N = (1/N) int rho log[(rho / G_N)(G_ref / rho_bar^N)] = H_N + K_N`` by grid quadrature."""
    n, m = rho.n, rho.m
    if gibbs is None:
        gibbs = gibbs_field(spec, n, m, rho.eps)
    tables = tables or KernelTables.build(spec, m, gibbs.eps)
    log_ref, log_gref = _reference_fields(rho_bar, spec, n, tables)
    v = rho.values
    pos = v > DENSITY_FLOOR
    vol = rho.cell_volume
    lv = np.log(v[pos])
    total = float(np.sum(v[pos] * (lv - gibbs.log_values[pos] + log_gref[pos] - log_ref[pos]))) * vol / n
    h_n = float(np.sum(v[pos] * (lv - log_ref[pos]))) * vol / n
    k_n = float(np.sum(v * (log_gref - gibbs.log_values))) * vol / n
    return ModulatedEnergy(total, h_n, k_n)


def _face_mean(v, a):
    return 0.5 * (v + np.roll(v, -1, axis=a))


def _modulated_dissipation(rho, log_g, log_ref, log_gref, sigma, n) -> float:
    """``(sigma/N) int rho |grad log(rho/rho_ref) - grad log(G_N/G_ref)|^2`` on faces."""
    v = rho
    h = 1.0 / v.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(v > DENSITY_FLOOR, np.log(np.maximum(v, DENSITY_FLOOR)), np.nan) - log_ref - log_g + log_gref
    total = 0.0
    for a in range(v.ndim):
        g = (np.roll(phi, -1, axis=a) - phi) / h
        total += float(np.nansum(_face_mean(v, a) * g * g))
    return sigma / n * total * h**v.ndim


def _commutator_term(rho, rho_bar_vals, spec, tables: KernelTables, n: int) -> float:
    """``-1/2 E_rho int_{x != y} grad V(x-y).(phi(x)-phi(y)) (dmu - drho_bar)^2``
    with ``phi = grad log rho_bar + grad(V * rho_bar) / sigma``; implemented for d = 1."""
    d, m = rho_bar_vals.ndim, rho_bar_vals.shape[0]
    if d != 1:
        raise DomainError("commutator term implemented for d = 1")
    h = 1.0 / m
    lr = np.log(rho_bar_vals)
    grad_log = (np.roll(lr, -1) - np.roll(lr, 1)) / (2 * h)
    grad_vconv = -tables.velocity(rho_bar_vals)[..., 0]
    phi = grad_log + grad_vconv / spec.sigma
    gv = -tables.force[..., 0]  # grad V at offsets
    i = np.arange(m)
    A = gv[(i[:, None] - i[None, :]) % m] * (phi[:, None] - phi[None, :])  # A[a, b]
    vol = h
    a_rho = A @ rho_bar_vals * vol  # int A(x, y) rho_bar(y) dy
    a_rr = float(rho_bar_vals @ a_rho) * vol
    idx = np.indices((m,) * n, sparse=True)
    pair = np.zeros((m,) * n)
    for p in range(n):
        for q in range(n):
            if p != q:
                pair = pair + A[idx[p], idx[q]]
    one = _one_body_sum(a_rho, n, 1, m)
    integrand = pair / n**2 - 2.0 * one / n + a_rr
    return -0.5 * float(np.sum(rho * integrand)) * float(m) ** (-n)


@dataclass
class LiouvilleTrajectory:
    times: list
    snapshots: list
    entropy: list
    dissipation_cum: list
    mass: list
    gibbs: GibbsFieldN = field(repr=False)
    energies: list = field(default_factory=list)
    modulated_dissipation_cum: list = field(default_factory=list)
    commutator_cum: list = field(default_factory=list)

    def rows(self):
        out = []
        for k, t in enumerate(self.times):
            e = self.energies[k] if self.energies else None
            out.append(
                (
                    t,
                    self.mass[k],
                    self.entropy[k],
                    self.dissipation_cum[k],
                    e.total if e else float("nan"),
                    e.relative_entropy if e else float("nan"),
                    e.modulated_energy if e else float("nan"),
                )
            )
        return out


def run_liouville(
    rho0: LiouvilleField,
    spec: PotentialSpec,
    dt: float,
    t_end: float,
    output_every: int = 1,
    rho_bar0: GridDensity | None = None,
    rtol: float = 1e-13,
) -> LiouvilleTrajectory:
    """Integrate to ``t_end`` with fixed ``dt``, accumulating entropy dissipation.

    With ``rho_bar0`` the mean-field density is co-evolved with the same
    regularised kernel and the modulated free energy, its dissipation and the
    commutator term (d = 1) are tracked as well.
    """
    n, d, m = rho0.n, rho0.d, rho0.m
    gibbs = gibbs_field(spec, n, m, rho0.eps)
    op = _WeightedLaplacian(gibbs.log_values)
    steps = int(round(t_end / dt))
    if abs(steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise DomainError("t_end must be a multiple of dt")
    rho = rho0
    traj = LiouvilleTrajectory([0.0], [rho.values.copy()], [_entropy(rho.values, gibbs.log_values)], [0.0], [rho.mass()], gibbs)
    mf = None
    if rho_bar0 is not None:
        mf = MeanFieldSolver(rho_bar0, spec, dt, eps=rho0.eps)
        traj.energies.append(modulated_free_energy_en(rho, mf.density, spec, gibbs, mf.tables))
        traj.modulated_dissipation_cum.append(0.0)
        traj.commutator_cum.append(0.0)
    cum, cum_mod, cum_com = 0.0, 0.0, 0.0
    for k in range(1, steps + 1):
        rho, diss = liouville_step(rho, dt, spec, gibbs, rtol=rtol, return_dissipation=True, _op=op)
        cum += dt * diss
        if mf is not None:
            bar = mf.advance_to(k * dt).values
            log_ref, log_gref = _reference_fields(bar, spec, n, mf.tables)
            cum_mod += dt * _modulated_dissipation(rho.values, gibbs.log_values, log_ref, log_gref, spec.sigma, n)
            if d == 1:
                cum_com += dt * _commutator_term(rho.values, bar, spec, mf.tables, n)
        if k % output_every == 0 or k == steps:
            traj.times.append(k * dt)
            traj.snapshots.append(rho.values.copy())
            traj.entropy.append(_entropy(rho.values, gibbs.log_values))
            traj.dissipation_cum.append(cum)
            traj.mass.append(rho.mass())
            if mf is not None:
                traj.energies.append(modulated_free_energy_en(rho, mf.density, spec, gibbs, mf.tables))
                traj.modulated_dissipation_cum.append(cum_mod)
                traj.commutator_cum.append(cum_com)
    return traj


@dataclass
class EntropyRow:
    t: float
    entropy: float
    dissipation_cum: float
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def entropy_dissipation_report(traj: LiouvilleTrajectory, spec: PotentialSpec | None = None) -> list:
    """Rows with ``lhs = S(t) + sigma int_0^t D`` and ``rhs = S(0)``, where
    ``S = int rho log(rho / G_N)``; the entropy inequality is ``lhs <= rhs``."""
    s0 = traj.entropy[0]
    return [EntropyRow(t, s, c, s + c, s0) for t, s, c in zip(traj.times, traj.entropy, traj.dissipation_cum)]
