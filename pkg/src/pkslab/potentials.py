"""Singular attractive pair potential on the torus.

V(x) = lam * log r(x) + V_e(x), where r is a periodised radius equal to the
Euclidean length of the minimal-image displacement ``|m|`` for ``|m| <= 1/4``
and smoothly frozen for ``|m| >= 1/2``:

    log r(s) = log(1/4) + int_{1/4}^{s} chi(2t) / t dt      (s >= 1/4)
             = log(1/4) + (Cin(4 pi s) - Cin(pi)) / 2        (1/4 <= s <= 1/2)

so ``s * d/ds log r(s) = chi(2s) <= 1``.  The smooth correction V_e is a finite
cosine series plus a constant offset.

Evaluators in this module are pure numpy (they use scipy's cosine integral);
the compiled particle loops in ``_kernels`` reimplement the same formulas,
and the tests check the two routes against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, special

from . import _kernels
from .errors import DomainError, SingularityError
from .torus import minimal_image

__all__ = [
    "PotentialSpec",
    "PairPotential",
    "chi",
    "log_radius",
    "eval_V",
    "eval_gradV",
    "regularize",
    "split_short_long",
    "SplitPotential",
    "verify_assumptions",
    "zero_mean",
    "kernel_on_grid",
]

_LOG_QUARTER = math.log(0.25)
_CIN_PI = float(np.euler_gamma + math.log(math.pi) - special.sici(math.pi)[1])

FULL, SHORT, LONG = 0, 1, 2


def _cin(x):
    x = np.asarray(x, dtype=float)
    return np.euler_gamma + np.log(x) - special.sici(x)[1]


def chi(s):
    """C^1 bump: 1 on [0, 1/2], 0 on [1, inf), raised cosine in between."""
    s = np.asarray(s, dtype=float)
    mid = 0.5 * (1.0 + np.cos(np.pi * (2.0 * s - 1.0)))
    return np.where(s <= 0.5, 1.0, np.where(s >= 1.0, 0.0, mid))


def chi_prime(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0.5) & (s < 1.0)
    return np.where(inside, -np.pi * np.sin(np.pi * (2.0 * s - 1.0)), 0.0)


def log_radius(s):
    """Periodised ``log |x|`` as a function of the minimal-image norm ``s``."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        inner = np.log(s)
    sc = np.clip(s, 0.25, 0.5)
    outer = _LOG_QUARTER + 0.5 * (_cin(4.0 * np.pi * sc) - _CIN_PI)
    return np.where(s <= 0.25, inner, outer)


def log_radius_prime(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        inv = 1.0 / s
    return np.where(s <= 0.25, inv, np.where(s >= 0.5, 0.0, chi(2.0 * s) * inv))


@dataclass(frozen=True)
class PotentialSpec:
    """Parameters of the pair potential.

    ``correction_modes`` is a tuple of ``(k, coef)`` with ``k`` an integer
    d-tuple; the correction is ``offset + sum coef * cos(2 pi k.x)`` and is even
    by construction.  ``p`` is the exponent used by the integrability check.
    """

    lam: float
    sigma: float
    d: int = 1
    eta: float = 0.25
    epsilon: float = 0.0
    correction_modes: tuple = field(default=())
    offset: float = 0.0
    p: float = 2.0

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError("lam must be >= 0 (attractive potential)")
        if self.sigma < 0:
            raise DomainError("sigma must be >= 0")
        if self.d < 1:
            raise DomainError("dimension must be >= 1")
        if not 0.0 < self.eta <= 0.5:
            raise DomainError("eta must lie in (0, 1/2]")
        if self.epsilon < 0:
            raise DomainError("epsilon must be >= 0")
        modes = []
        for k, c in self.correction_modes:
            k = tuple(int(v) for v in np.atleast_1d(k))
            if len(k) != self.d:
                raise DomainError(f"correction mode {k} has wrong dimension")
            modes.append((k, float(c)))
        object.__setattr__(self, "correction_modes", tuple(modes))

    @property
    def critical_lambda(self) -> float:
        return 2.0 * self.d * self.sigma

    @property
    def subcritical(self) -> bool:
        return self.lam < self.critical_lambda

    def to_dict(self) -> dict:
        return {
            "lam": self.lam,
            "sigma": self.sigma,
            "d": self.d,
            "eta": self.eta,
            "epsilon": self.epsilon,
            "offset": self.offset,
            "p": self.p,
            "correction_modes": [[list(k), c] for k, c in self.correction_modes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PotentialSpec":
        data = dict(data)
        modes = tuple((tuple(k), c) for k, c in data.pop("correction_modes", ()))
        return cls(correction_modes=modes, **data)

    def mode_arrays(self):
        if not self.correction_modes:
            return np.zeros((0, self.d), dtype=np.int64), np.zeros(0)
        ks = np.array([k for k, _ in self.correction_modes], dtype=np.int64)
        cs = np.array([c for _, c in self.correction_modes], dtype=float)
        return ks.reshape(-1, self.d), cs


@dataclass(frozen=True)
class PairPotential:
    """Callable evaluator of V (or a regularised / split piece of it).

    ``part`` is 0 for V itself, 1 for the short-range piece ``V chi(|x|/eta)``
    and 2 for the long-range piece ``V (1 - chi(|x|/eta))``.  The result is
    multiplied by ``scale``.  With ``eps > 0`` the log is replaced by
    ``log max(r, eps)``.
    """

    spec: PotentialSpec
    eps: float = 0.0
    part: int = FULL
    scale: float = 1.0

    def _prep(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.spec.d,):
            raise DomainError(f"expected points of dimension {self.spec.d}, got shape {x.shape}")
        m = minimal_image(x)
        s = np.linalg.norm(m, axis=-1)
        return m, s

    def _singular(self, s):
        return self.eps <= 0.0 and self.spec.lam > 0.0 and np.any(s == 0.0)

    def _log_part(self, s):
        lr = log_radius(s)
        if self.eps > 0.0:
            lr = np.maximum(lr, math.log(self.eps))
        return lr

    def _full_value(self, m, s):
        ks, cs = self.spec.mode_arrays()
        val = np.full(s.shape, self.spec.offset)
        if cs.size:
            val = val + np.cos(2.0 * np.pi * (m @ ks.T)) @ cs
        if self.spec.lam != 0.0:
            val = val + self.spec.lam * self._log_part(s)
        return val

    def __call__(self, x):
        m, s = self._prep(x)
        if self._singular(s):
            raise SingularityError("potential evaluated at the origin without regularisation")
        with np.errstate(invalid="ignore"):
            val = self._full_value(m, s)
            if self.part == SHORT:
                val = np.where(s >= self.spec.eta, 0.0, val * chi(s / self.spec.eta))
            elif self.part == LONG:
                val = np.where(s <= 0.5 * self.spec.eta, 0.0, val * (1.0 - chi(s / self.spec.eta)))
        return self.scale * val

    def grad(self, x):
        m, s = self._prep(x)
        if self._singular(s):
            raise SingularityError("gradient evaluated at the origin without regularisation")
        spec = self.spec
        ks, cs = spec.mode_arrays()
        g = np.zeros(m.shape)
        if cs.size:
            sines = np.sin(2.0 * np.pi * (m @ ks.T))
            g = g - 2.0 * np.pi * (sines * cs) @ ks
        safe = np.where(s > 0.0, s, 1.0)
        unit = m / safe[..., None]
        radial = np.zeros(s.shape)
        if spec.lam != 0.0:
            radial = spec.lam * np.where(s > 0.0, log_radius_prime(safe), 0.0)
            if self.eps > 0.0:
                radial = np.where(log_radius(safe) >= math.log(self.eps), radial, 0.0)
        if self.part == FULL:
            g = g + radial[..., None] * unit
        else:
            c = chi(s / spec.eta)
            w = c if self.part == SHORT else 1.0 - c
            dc = chi_prime(s / spec.eta) / spec.eta
            if self.part == LONG:
                dc = -dc
            with np.errstate(invalid="ignore"):
                v = np.where(dc != 0.0, self._full_value(m, safe), 0.0)
            g = g * w[..., None] + (w * radial + v * dc)[..., None] * unit
        return self.scale * g

    def numba_args(self):
        """Positional parameter tuple for the compiled kernels in ``_kernels``."""
        ks, cs = self.spec.mode_arrays()
        return (
            float(self.spec.lam),
            float(self.eps),
            float(self.spec.eta),
            int(self.part),
            float(self.scale),
            np.ascontiguousarray(ks),
            np.ascontiguousarray(cs),
            float(self.spec.offset),
            _kernels.CIN_PI,
        )


def eval_V(x, spec: PotentialSpec):
    """V at torus displacement(s) ``x``; the origin raises unless ``spec.epsilon > 0``."""
    return PairPotential(spec, eps=spec.epsilon)(x)


def eval_gradV(x, spec: PotentialSpec):
    return PairPotential(spec, eps=spec.epsilon).grad(x)


def regularize(spec: PotentialSpec, eps: float) -> PairPotential:
    """V_eps = lam * log max(r, eps) + V_e, an evaluator that also has ``.grad``."""
    if not eps > 0.0:
        raise DomainError("regularisation scale must be positive")
    return PairPotential(spec, eps=float(eps))


@dataclass(frozen=True)
class SplitPotential:
    """``V = lam * v0 + w`` with ``short = lam * v0 = V chi(|x|/eta)``.

    For ``lam == 0`` the normalised ``v0`` is undefined and is set equal to
    ``short``.
    """

    v0: PairPotential
    w: PairPotential
    short: PairPotential
    lam: float


def split_short_long(spec: PotentialSpec, eps: float | None = None) -> SplitPotential:
    eps = spec.epsilon if eps is None else float(eps)
    short = PairPotential(spec, eps=eps, part=SHORT)
    w = PairPotential(spec, eps=eps, part=LONG)
    v0 = replace(short, scale=1.0 / spec.lam) if spec.lam > 0 else short
    return SplitPotential(v0=v0, w=w, short=short, lam=spec.lam)


@dataclass
class AssumptionReport:
    lp_norm: float
    lp_stderr: float
    lower_constant: float
    gradient_constant: float
    subcritical: bool
    sample_size: int
    violations: list

    def to_dict(self):
        return dict(self.__dict__)


def verify_assumptions(spec: PotentialSpec, sample_size: int, seed: int = 0) -> AssumptionReport:
    """Monte-Carlo check of integrability, log lower bound and ``|grad V| |x|`` bound.

    Uses the unregularised potential at uniform random points of the torus.
    """
    if sample_size < 1:
        raise DomainError("sample_size must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.random((sample_size, spec.d)) - 0.5
    s = np.linalg.norm(x, axis=-1)
    keep = s > 0
    x, s = x[keep], s[keep]
    pot = PairPotential(spec)
    v = pot(x)
    g = np.linalg.norm(pot.grad(x), axis=-1)
    absp = np.abs(v) ** spec.p
    mean = absp.mean()
    lp = mean ** (1.0 / spec.p)
    se_mean = absp.std(ddof=1) / math.sqrt(absp.size) if absp.size > 1 else float("nan")
    lp_se = se_mean * lp / (spec.p * mean) if mean > 0 else 0.0
    lower = float(np.min(v - spec.lam * np.log(s)))
    gconst = float(np.max(g * s))
    violations = []
    if not np.isfinite(lp):
        violations.append("L^p norm not finite")
    if not np.isfinite(lower):
        violations.append("lower bound constant not finite")
    if not spec.subcritical:
        violations.append("lam >= 2 d sigma (supercritical)")
    return AssumptionReport(float(lp), float(lp_se), lower, gconst, spec.subcritical, int(s.size), violations)


def _radial_mean_log(d: int, eps: float) -> float:
    le = math.log(eps) if eps > 0 else -math.inf

    def g(s):
        return max(float(log_radius(s)), le) if s > 0 else le

    pts = [0.25] + ([eps] if 0 < eps < 0.5 else [])
    if d == 1:
        val, _ = integrate.quad(g, 0.0, 0.5, points=pts, limit=200)
        return 2.0 * val
    if d == 2:
        val, _ = integrate.quad(lambda s: g(s) * 2.0 * math.pi * s, 0.0, 0.5, points=pts, limit=200)
        return val + g(0.5) * (1.0 - math.pi / 4.0)
    raise DomainError("continuum normalisation implemented for d in {1, 2}")


def zero_mean(spec: PotentialSpec, eps: float | None = None, m: int | None = None) -> PotentialSpec:
    """Copy of ``spec`` with ``offset`` chosen so that V integrates to zero.

    Without ``m`` the continuum integral of the (optionally regularised) V is
    used; with ``m`` the mean of the point-sampled grid kernel at
    regularisation ``eps`` (default one cell) is zeroed instead.
    """
    base = replace(spec, offset=0.0)
    if m is not None:
        e = 1.0 / m if eps is None else eps
        table = kernel_on_grid(regularize(base, e), m, spec.d, mode="point")
        return replace(spec, offset=-float(table.mean()))
    e = spec.epsilon if eps is None else eps
    # cosine modes with k != 0 integrate to zero; k == 0 modes are constants
    const = sum(c for k, c in spec.correction_modes if not any(k))
    return replace(spec, offset=-(spec.lam * _radial_mean_log(spec.d, e) + const))


def grid_offsets(m: int, d: int) -> np.ndarray:
    """Displacements ``j / m`` for every grid offset, shape ``(m,) * d + (d,)``."""
    c = np.arange(m) / m
    grids = np.meshgrid(*([c] * d), indexing="ij")
    return np.stack(grids, axis=-1)


def kernel_on_grid(func, m: int, d: int, mode: str = "point", order: int = 6, refine: int = 8, depth: int = 24) -> np.ndarray:
    """Table ``K[j] = func(j / m)`` ("point") or its average over the cell of
    width ``1/m`` centred at ``j / m`` ("cell").

    ``func`` maps ``(..., d)`` points to values (``(...)``) or vectors
    (``(..., d)``).  Cell averages use tensor Gauss-Legendre with each cell
    split into ``refine**d`` sub-boxes for cells adjacent to the origin; the
    origin cell itself is resolved by ``depth`` levels of nested boxes.
    """
    offs = grid_offsets(m, d)
    if mode == "point":
        return np.asarray(func(offs))
    if mode != "cell":
        raise DomainError(f"unknown kernel mode {mode!r}")
    h = 1.0 / m
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes = 0.5 * nodes
    weights = 0.5 * weights

    def box_average(centres, width, sub):
        # average of func over boxes centred at ``centres`` (n, d) of side ``width``
        pts1 = ((np.arange(sub) + 0.5) / sub - 0.5)[:, None] + nodes[None, :] / sub
        pts1 = pts1.ravel() * width
        w1 = np.tile(weights, sub) / sub
        grids = np.meshgrid(*([pts1] * d), indexing="ij")
        rel = np.stack([g.ravel() for g in grids], axis=-1)
        wt = np.ones(1)
        for _ in range(d):
            wt = np.multiply.outer(wt, w1).ravel()
        vals = np.asarray(func(centres[:, None, :] + rel[None, :, :]))
        if vals.ndim == 3:
            return np.einsum("nqd,q->nd", vals, wt)
        return vals @ wt

    flat = offs.reshape(-1, d)
    dist = np.linalg.norm(minimal_image(flat), axis=-1)
    near = dist < 1.5 * h * math.sqrt(d) + 1e-12
    sample = np.asarray(func(np.full((1, d), 0.3)))  # output shape probe, away from the origin
    out = np.zeros((flat.shape[0],) + sample.shape[1:])
    if np.any(~near):
        out[~near] = box_average(flat[~near], h, 1)
    if np.any(near):
        out[near] = box_average(flat[near], h, refine)
    # the origin cell holds the log singularity: nest boxes of side 1/3 around it
    origin = np.flatnonzero(dist == 0.0)
    if origin.size:
        shifts = np.stack(np.meshgrid(*([np.array([-1.0, 0.0, 1.0])] * d), indexing="ij"), axis=-1).reshape(-1, d)
        ring = shifts[np.any(shifts != 0.0, axis=1)]
        acc, weight, width = 0.0, 1.0, h
        for _ in range(depth):
            if width < 3e-13:  # smaller offsets vanish under the periodic wrap
                break
            width /= 3.0
            acc = acc + weight * box_average(ring * width, width, 2).sum(axis=0) / 3.0**d
            weight /= 3.0**d
        acc = acc + weight * box_average(np.zeros((1, d)) + 0.25 * width, width / 2.0, 1)[0]
        out[origin[0]] = acc
    return out.reshape((m,) * d + sample.shape[1:])
