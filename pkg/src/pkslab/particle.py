"""N-particle Euler-Maruyama simulation on the torus.

Noise for step ``k`` of replica ``r`` comes from
``default_rng(SeedSequence((seed + r, k)))`` and row ``i`` belongs to particle
``i``; the trajectory is therefore a function of ``(seed, replica, init,
params)`` only, whatever the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import CFLError, DomainError
from .potentials import PairPotential, PotentialSpec
from .torus import GridDensity, lm_apply, minimal_image, wrap

__all__ = [
    "ParticleConfiguration",
    "SimParams",
    "Trajectory",
    "default_eps",
    "stable_dt",
    "drift",
    "drift_reference",
    "pair_energy",
    "step_em",
    "simulate",
    "simulate_ensemble",
    "sample_initial",
    "empirical_density",
]


@dataclass
class ParticleConfiguration:
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise DomainError("positions must be an (N, d) array with N >= 1")
        if np.any(pos < 0.0) or np.any(pos >= 1.0) or not np.all(np.isfinite(pos)):
            raise DomainError("particle coordinates must lie in [0, 1)")
        self.positions = pos

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]


@dataclass
class SimParams:
    dt: float
    t_end: float
    sigma: float
    seed: int = 0
    eps: float | None = None
    output_times: tuple = ()
    check_stability: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.t_end < 0 or self.sigma < 0:
            raise DomainError("t_end and sigma must be nonnegative")
        self.output_times = tuple(float(t) for t in self.output_times)


@dataclass
class Trajectory:
    times: list
    snapshots: list
    metadata: dict = field(default_factory=dict)

    def final(self) -> ParticleConfiguration:
        return ParticleConfiguration(self.snapshots[-1])


def default_eps(n: int, d: int, dt: float = 0.0, lam: float = 0.0) -> float:
    """Force regularisation: ``0.1 N^(-1/d)``, enlarged if needed for stability at ``dt``."""
    eps = 0.1 * n ** (-1.0 / d)
    if lam > 0 and dt > 0:
        eps = max(eps, math.sqrt(10.0 * dt * lam / n))
    return eps


def stable_dt(n: int, eps: float, lam: float) -> float:
    """Largest admissible step: the drift's Lipschitz constant is about ``lam / (N eps^2)``
    per pair, so we require ``dt <= 0.1 N eps^2 / lam``."""
    if lam <= 0:
        return math.inf
    return 0.1 * n * eps * eps / lam


def _as_positions(config) -> np.ndarray:
    if isinstance(config, ParticleConfiguration):
        return config.positions
    pos = np.asarray(config, dtype=float)
    return pos[:, None] if pos.ndim == 1 else pos


def drift(config, spec: PotentialSpec, eps: float) -> np.ndarray:
    """Row ``i``: ``(1/N) sum_{j != i} -grad V_eps(x_i - x_j)`` (compiled, O(N^2/2))."""
    if not eps > 0:
        raise DomainError("drift requires a positive regularisation eps")
    pos = np.ascontiguousarray(_as_positions(config))
    return _kernels.drift_sum(pos, *PairPotential(spec, eps=eps).numba_args())


def drift_reference(config, spec: PotentialSpec, eps: float) -> np.ndarray:
    """Dense numpy evaluation of the same sum, for testing."""
    pos = _as_positions(config)
    n = pos.shape[0]
    pot = PairPotential(spec, eps=eps)
    disp = minimal_image(pos[:, None, :] - pos[None, :, :])
    g = pot.grad(disp)
    g[np.arange(n), np.arange(n)] = 0.0
    return -g.sum(axis=1) / n


def pair_energy(config, spec: PotentialSpec, eps: float, part: int = 0) -> float:
    """``sum_{i != j} V_eps(x_i - x_j)`` over ordered pairs."""
    pos = np.ascontiguousarray(_as_positions(config))
    return float(_kernels.pair_energy_sum(pos, *PairPotential(spec, eps=eps, part=part).numba_args()))


def _noise(seed: int, step: int, shape) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(step)))).standard_normal(shape)


def step_em(config, params: SimParams, spec: PotentialSpec, step: int, replica: int = 0, eps: float | None = None):
    """One Euler-Maruyama step; returns the new configuration."""
    pos = _as_positions(config)
    n, d = pos.shape
    eps = eps if eps is not None else (params.eps or default_eps(n, d, params.dt, spec.lam))
    x = pos
    if spec.lam != 0.0 or spec.correction_modes:
        x = x + params.dt * drift(pos, spec, eps)
    if params.sigma > 0:
        xi = _noise(params.seed + replica, step, (n, d))
        x = x + math.sqrt(2.0 * params.sigma * params.dt) * xi
    return ParticleConfiguration(wrap(x))


def _schedule(params: SimParams):
    n_steps = int(math.floor(params.t_end / params.dt + 1e-9))
    wanted = params.output_times or (params.t_end,)
    steps, rounded = [], []
    for t in wanted:
        k = int(math.floor(t / params.dt + 1e-9))
        if not 0 <= k <= n_steps:
            raise DomainError(f"output time {t} outside [0, t_end]")
        if abs(k * params.dt - t) > 1e-9 * max(1.0, abs(t)):
            rounded.append((t, k * params.dt))
        steps.append(k)
    return n_steps, sorted(set(steps)), rounded


def simulate(init, params: SimParams, spec: PotentialSpec, replica: int = 0) -> Trajectory:
    """Integrate to ``t_end`` recording snapshots at ``params.output_times``
    (rounded down to multiples of dt; the rounding is listed in metadata)."""
    pos = _as_positions(init).copy()
    n, d = pos.shape
    eps = params.eps or default_eps(n, d, params.dt, spec.lam)
    if params.check_stability and params.dt > stable_dt(n, eps, spec.lam) * (1 + 1e-12):
        raise CFLError(
            f"dt={params.dt} exceeds the stability bound {stable_dt(n, eps, spec.lam):.3g} "
            f"for N={n}, eps={eps:.3g}, lam={spec.lam}"
        )
    n_steps, record, rounded = _schedule(params)
    times, snaps = [], []
    cfg = ParticleConfiguration(wrap(pos))
    if 0 in record:
        times.append(0.0)
        snaps.append(cfg.positions.copy())
    for k in range(n_steps):
        cfg = step_em(cfg, params, spec, k, replica=replica, eps=eps)
        if k + 1 in record:
            times.append((k + 1) * params.dt)
            snaps.append(cfg.positions.copy())
    meta = {
        "seed": params.seed + replica,
        "replica": replica,
        "n": n,
        "d": d,
        "eps": eps,
        "dt": params.dt,
        "steps": n_steps,
        "rounded_times": rounded,
    }
    return Trajectory(times, snaps, meta)


def sample_initial(rho: GridDensity, n: int, seed: int, replica: int = 0) -> ParticleConfiguration:
    """``n`` i.i.d. points from ``rho`` on a stream reserved for initial data."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed) + replica, 2**62)))
    return ParticleConfiguration(rho.sample(n, rng))


def simulate_ensemble(init, params: SimParams, spec: PotentialSpec, n_replicas: int, threads: int = 1, n: int | None = None):
    """Run ``n_replicas`` independent replicas (replica ``r`` uses seed ``seed + r``).

    ``init`` is either a configuration shared by all replicas or a
    :class:`GridDensity`, in which case each replica draws ``n`` i.i.d.
    initial points from it.  Results are returned in replica order and do not
    depend on ``threads``.
    """
    if n_replicas < 1:
        raise DomainError("n_replicas must be >= 1")
    if isinstance(init, GridDensity) and n is None:
        raise DomainError("particle count n is required when sampling the initial data")

    def one(r):
        start = sample_initial(init, n, params.seed, r) if isinstance(init, GridDensity) else init
        return simulate(start, params, spec, replica=r)

    if threads <= 1:
        return [one(r) for r in range(n_replicas)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n_replicas)))


def empirical_density(config, M: int) -> GridDensity:
    if M < 1:
        raise DomainError("M must be >= 1")
    return lm_apply(_as_positions(config), M)
