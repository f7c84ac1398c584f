"""Periodic geometry of the unit torus [0, 1)^d.

Grid convention (used by every module): a grid with ``m`` cells per axis is
stored as an array of shape ``(m,) * d`` whose axis ``j`` indexes coordinate
``j``; cell ``(i_0, ..., i_{d-1})`` is the half-open box
``prod_j [i_j / m, (i_j + 1) / m)`` with centre ``(i_j + 1/2) / m``.  The flat
(lexicographic) cell number is ``k = sum_j i_j * m**j``, i.e. the first
coordinate varies fastest.  ``np.ravel(values, order="F")`` produces that
ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = [
    "wrap",
    "periodic_displacement",
    "torus_distance",
    "cell_index",
    "cell_multi_index",
    "GridDensity",
    "HypercubePartition",
    "lm_apply",
]


def wrap(raw):
    """Map arbitrary real coordinates onto the torus, coordinate-wise mod 1."""
    x = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("wrap: non-finite coordinate")
    out = np.mod(x, 1.0)
    # np.mod(-1e-18, 1.0) == 1.0 in floating point
    out[out >= 1.0] = 0.0
    return out


def periodic_displacement(x, y):
    """Minimal-image displacement ``v`` with ``wrap(y + v) == wrap(x)``.

    Every component satisfies ``-1/2 < v_j <= 1/2``; exact ties at 1/2 are
    resolved towards ``+1/2``.  Broadcasts over leading axes.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1:] != y.shape[-1:]:
        raise DomainError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return minimal_image(x - y)


def minimal_image(v):
    """Minimal-image representative of a raw displacement, in (-1/2, 1/2]."""
    v = np.asarray(v, dtype=float)
    return -(np.mod(0.5 - v, 1.0) - 0.5)


def torus_distance(x, y):
    return np.linalg.norm(periodic_displacement(x, y), axis=-1)


def cell_multi_index(x, M):
    """Per-axis cell indices ``floor(M * x_j)`` clipped into ``[0, M)``."""
    if M < 1:
        raise DomainError("M must be >= 1")
    idx = np.floor(np.asarray(x, dtype=float) * M).astype(np.int64)
    return np.clip(idx, 0, M - 1)


def cell_index(x, M):
    """Lexicographic cell number of ``x`` in the ``M``-partition (first axis fastest)."""
    idx = cell_multi_index(x, M)
    d = idx.shape[-1]
    weights = M ** np.arange(d, dtype=np.int64)
    return idx @ weights


@dataclass
class GridDensity:
    """Cell-averaged density on the uniform torus grid.

    ``values`` has shape ``(m,) * d`` and, for a probability density, mean 1.
    Set ``check=False`` to hold signed fields (velocities, potentials).
    """

    values: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        shape = self.values.shape
        if len(shape) == 0 or len(set(shape)) != 1:
            raise DomainError(f"grid must be a cube of cells, got shape {shape}")
        if self.check:
            if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
                raise DomainError("density values must be finite and nonnegative")
            if abs(self.mass() - 1.0) > 1e-8:
                raise DomainError(f"density mass {self.mass()!r} differs from 1")

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def mass(self) -> float:
        return float(self.values.mean())

    def cell_masses(self) -> np.ndarray:
        return self.values * self.cell_volume

    def centers(self) -> np.ndarray:
        """Cell centres as an array of shape ``(m,) * d + (d,)``."""
        c = (np.arange(self.m) + 0.5) / self.m
        grids = np.meshgrid(*([c] * self.d), indexing="ij")
        return np.stack(grids, axis=-1)

    def flat(self) -> np.ndarray:
        """Values in lexicographic cell order."""
        return np.ravel(self.values, order="F")

    @classmethod
    def uniform(cls, m: int, d: int) -> "GridDensity":
        return cls(np.ones((m,) * d))

    @classmethod
    def from_function(cls, f, m: int, d: int, normalize: bool = True, order: int = 4):
        """Cell averages of ``f`` (vectorised over ``(..., d)`` points) by Gauss-Legendre."""
        nodes, weights = np.polynomial.legendre.leggauss(order)
        nodes = 0.5 * (nodes + 1.0)
        weights = 0.5 * weights
        base = np.arange(m)
        pts1 = ((base[:, None] + nodes[None, :]) / m).ravel()
        w1 = np.tile(weights, m)
        grids = np.meshgrid(*([pts1] * d), indexing="ij")
        pts = np.stack(grids, axis=-1)
        vals = np.asarray(f(pts), dtype=float)
        wt = w1
        for _ in range(d - 1):
            wt = np.multiply.outer(wt, w1)
        vals = vals * wt
        for axis in range(d):
            shape = list(vals.shape)
            shape[axis : axis + 1] = [m, order]
            vals = vals.reshape(shape).sum(axis=axis + 1)
        values = vals
        if normalize:
            values = values / values.mean()
        return cls(values, check=normalize)

    def evaluate(self, x, method: str = "linear") -> np.ndarray:
        """Evaluate at torus points ``x`` of shape ``(..., d)``.

        ``"constant"`` returns the value of the containing cell; ``"linear"``
        interpolates multilinearly between periodic cell centres.
        """
        x = np.asarray(x, dtype=float)
        m, d = self.m, self.d
        if method == "constant":
            idx = cell_multi_index(x, m)
            return self.values[tuple(idx[..., j] for j in range(d))]
        if method != "linear":
            raise DomainError(f"unknown interpolation method {method!r}")
        s = x * m - 0.5
        i0 = np.floor(s).astype(np.int64)
        frac = s - i0
        out = np.zeros(x.shape[:-1])
        for corner in range(2**d):
            w = np.ones(x.shape[:-1])
            index = []
            for j in range(d):
                bit = (corner >> j) & 1
                w = w * (frac[..., j] if bit else 1.0 - frac[..., j])
                index.append(np.mod(i0[..., j] + bit, m))
            out += w * self.values[tuple(index)]
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` i.i.d. points: cell by inverse CDF of cell masses, then uniform in the cell."""
        masses = self.flat() / self.flat().sum()
        cdf = np.cumsum(masses)
        cdf[-1] = 1.0
        u = rng.random(n)
        k = np.searchsorted(cdf, u, side="right")
        k = np.minimum(k, masses.size - 1)
        idx = np.stack(np.unravel_index(k, (self.m,) * self.d, order="F"), axis=-1)
        jitter = rng.random((n, self.d))
        return wrap((idx + jitter) / self.m)


@dataclass
class HypercubePartition:
    """Occupancy counts ``n_k`` of the ``M**d`` cells, lexicographically ordered."""

    M: int
    d: int
    counts: np.ndarray

    @classmethod
    def from_positions(cls, positions, M: int) -> "HypercubePartition":
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        d = positions.shape[1]
        k = cell_index(positions, M)
        counts = np.bincount(k, minlength=M**d)
        return cls(M, d, counts)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def cell_volume(self) -> float:
        return float(self.M) ** (-self.d)


def _positions_of(f):
    pos = getattr(f, "positions", None)
    if pos is not None:
        return np.asarray(pos, dtype=float)
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 2:
        return arr
    return None


def lm_apply(f, M: int) -> GridDensity:
    """Block average ``L_M[f]`` on the ``M``-partition.

    ``f`` is a :class:`GridDensity` whose resolution is a multiple of ``M``, or
    a particle set (``(N, d)`` array or object with ``positions``) taken as
    the empirical measure.  The result is piecewise constant on the M-grid,
    equal to ``M**d`` times the mass of ``f`` in each cell.
    """
    if M <= 0:
        raise DomainError("M must be positive")
    if isinstance(f, GridDensity):
        m, d = f.m, f.d
        if m % M:
            raise DomainError(f"grid resolution {m} is not a multiple of M={M}")
        b = m // M
        v = f.values
        for axis in range(d):
            shape = list(v.shape)
            shape[axis : axis + 1] = [M, b]
            v = v.reshape(shape).mean(axis=axis + 1)
        return GridDensity(v, check=f.check)
    pos = _positions_of(f)
    if pos is None:
        raise DomainError("lm_apply expects a GridDensity or an (N, d) particle array")
    part = HypercubePartition.from_positions(pos, M)
    dens = part.counts * (float(M) ** part.d) / part.n
    values = dens.reshape((M,) * part.d, order="F")
    return GridDensity(values)
