"""Wavelet (Haar/Schauder) synthesis of independent Brownian motions on [0, 1].

Coefficients are stored per Haar level ``h`` (``2**h`` positions each) plus one
top coefficient per component carrying ``Z(1)``.  Refining the level-``h``
skeleton into the level-``h + 1`` skeleton consumes Haar level ``h``:

    left  = parent / 2 + s * w
    right = parent - left,          s = 2 ** (-(h + 2) / 2)

so ``Var(left) = 2**-(h+1)`` when ``Var(parent) = 2**-h``.  The Steele linear
index of Haar coefficient ``(h, k)`` is ``2**h + k + 1``; index 1 is the top
coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import EpsStrongError, InvariantViolation

FREE, BELOW, ABOVE = 0, 1, 2
TAG_NAMES = {FREE: "free", BELOW: "below", ABOVE: "above"}
TAG_CODES = {v: k for k, v in TAG_NAMES.items()}


class LatticeDepthError(EpsStrongError, ValueError):
    """The lattice does not reach the requested level."""


def haar_eval(t: float) -> int:
    """Mother Haar wavelet: +1 on [0, 1/2), -1 on [1/2, 1], 0 elsewhere."""
    if 0 <= t < 0.5:
        return 1
    if 0.5 <= t <= 1:
        return -1
    return 0


def midpoint_scale(child_level: int) -> float:
    """Standard deviation of the midpoint displacement producing ``child_level``."""
    return 2.0 ** (-(child_level + 1) / 2)


def midpoint_refine(parent: float, w: float, child_level: int) -> tuple[float, float]:
    if child_level < 1:
        raise ValueError("child level must be at least 1")
    left = parent / 2 + midpoint_scale(child_level) * w
    return left, parent - left


def refine_increments(parent: np.ndarray, w: np.ndarray, child_level: int) -> np.ndarray:
    """Vectorised midpoint refinement along the last axis.

    ``parent`` and ``w`` share shape ``(..., 2**(child_level - 1))``; the result
    has ``2**child_level`` entries in time order.
    """
    left = parent / 2 + midpoint_scale(child_level) * w
    out = np.empty(parent.shape[:-1] + (2 * parent.shape[-1],))
    out[..., 0::2] = left
    out[..., 1::2] = parent - left
    return out


def synthesize(top: np.ndarray, levels: Iterable[np.ndarray]) -> np.ndarray:
    """Increments on the finest grid reached by ``levels``.

    ``top`` has shape ``(...,)`` and level ``h`` has shape ``(..., 2**h)``.
    """
    inc = np.asarray(top, dtype=float)[..., None]
    for h, w in enumerate(levels):
        inc = refine_increments(inc, w, h + 1)
    return inc


def coarsen(increments: np.ndarray) -> np.ndarray:
    """Pairwise sums along the last axis (one level coarser)."""
    return increments[..., 0::2] + increments[..., 1::2]


def steele_index(level: int, position: int | np.ndarray) -> int | np.ndarray:
    return 2**level + position + 1


def index_to_level(index: int) -> tuple[int, int]:
    """Inverse of :func:`steele_index` for Haar coefficients (index >= 2)."""
    if index < 2:
        raise ValueError("index 1 is the top coefficient")
    h = (index - 1).bit_length() - 1
    return h, index - 1 - 2**h


@dataclass
class PathSkeleton:
    """Increments of all components on the level-``n`` dyadic grid."""

    level: int
    increments: np.ndarray  # shape (d', 2**level)

    @property
    def dprime(self) -> int:
        return self.increments.shape[0]

    def path(self) -> np.ndarray:
        """Values ``Z(k / 2**n)`` for ``k = 0..2**n``, shape ``(d', 2**n + 1)``."""
        z = np.zeros((self.dprime, self.increments.shape[1] + 1))
        np.cumsum(self.increments, axis=1, out=z[:, 1:])
        return z

    def coarsen(self) -> "PathSkeleton":
        if self.level == 0:
            raise ValueError("level 0 cannot be coarsened")
        return PathSkeleton(self.level - 1, coarsen(self.increments))


@dataclass
class WaveletLattice:
    """Append-only store of standard-normal coefficients with conditioning tags."""

    top: np.ndarray
    coeffs: list[np.ndarray] = field(default_factory=list)
    tags: list[np.ndarray] = field(default_factory=list)
    thresholds: list[np.ndarray] = field(default_factory=list)
    _skeletons: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def dprime(self) -> int:
        return self.top.shape[0]

    @property
    def depth(self) -> int:
        """Finest skeleton level available (number of Haar levels stored)."""
        return len(self.coeffs)

    def append_level(
        self,
        values: np.ndarray,
        tags: np.ndarray | int = FREE,
        thresholds: np.ndarray | float = math.inf,
    ) -> None:
        h = self.depth
        shape = (self.dprime, 2**h)
        values = np.asarray(values, dtype=float)
        if values.shape != shape:
            raise ValueError(f"level {h} needs shape {shape}, got {values.shape}")
        self.coeffs.append(values)
        self.tags.append(np.broadcast_to(np.asarray(tags, dtype=np.int8), shape).copy())
        self.thresholds.append(
            np.broadcast_to(np.asarray(thresholds, dtype=float), shape).copy()
        )

    def increments(self, n: int) -> np.ndarray:
        """Level-``n`` increments, shape ``(d', 2**n)``, cached per level."""
        if n > self.depth:
            raise LatticeDepthError(f"lattice depth {self.depth} < requested level {n}")
        if not self._skeletons:
            self._skeletons.append(self.top[:, None].astype(float))
        while len(self._skeletons) <= n:
            h = len(self._skeletons) - 1
            self._skeletons.append(
                refine_increments(self._skeletons[h], self.coeffs[h], h + 1)
            )
        return self._skeletons[n]

    def truncate(self, depth: int) -> None:
        """Drop Haar levels at and beyond ``depth`` (used to undo rejected proposals)."""
        del self.coeffs[depth:]
        del self.tags[depth:]
        del self.thresholds[depth:]
        del self._skeletons[depth + 1 :]

    def copy(self) -> "WaveletLattice":
        return WaveletLattice(
            self.top.copy(),
            [c.copy() for c in self.coeffs],
            [t.copy() for t in self.tags],
            [t.copy() for t in self.thresholds],
        )

    def check_tags(self) -> None:
        """Raise if any stored coefficient violates its conditioning tag."""
        for h, (w, tag, c) in enumerate(zip(self.coeffs, self.tags, self.thresholds)):
            bad = ((tag == BELOW) & ~(np.abs(w) <= c)) | ((tag == ABOVE) & ~(np.abs(w) > c))
            if bad.any():
                i, k = np.argwhere(bad)[0]
                raise InvariantViolation(
                    f"coefficient (component {i}, level {h}, position {k}) = {w[i, k]} "
                    f"violates tag {TAG_NAMES[int(tag[i, k])]}({c[i, k]})"
                )


def skeleton_from_lattice(lattice: WaveletLattice, n: int) -> PathSkeleton:
    return PathSkeleton(n, lattice.increments(n).copy())


def sample_below(rng: np.random.Generator, c: np.ndarray) -> np.ndarray:
    """Standard normals restricted to ``|x| <= c`` by inverse CDF."""
    c = np.asarray(c, dtype=float)
    lo = ndtr(-c)
    out = ndtri(lo + rng.random(c.shape) * (ndtr(c) - lo))
    # Rounding in ndtri can push a value a hair past the boundary.
    bad = ~(np.abs(out) <= c)
    while bad.any():
        cb = c[bad]
        lob = ndtr(-cb)
        out[bad] = ndtri(lob + rng.random(cb.shape) * (ndtr(cb) - lob))
        bad = ~(np.abs(out) <= c)
    return out


def sample_above(rng: np.random.Generator, c: np.ndarray) -> np.ndarray:
    """Standard normals restricted to ``|x| > c``.

    Exponential-proposal rejection for the one-sided tail, random sign.
    """
    c = np.asarray(c, dtype=float)
    mag = np.empty(c.shape)
    todo = np.ones(c.shape, dtype=bool)
    while todo.any():
        ct = c[todo]
        lam = (ct + np.sqrt(ct * ct + 4)) / 2
        z = ct + rng.exponential(size=ct.shape) / lam
        ok = (rng.random(ct.shape) <= np.exp(-((z - lam) ** 2) / 2)) & (z > ct)
        idx = np.flatnonzero(todo)[ok]
        mag.flat[idx] = z[ok]
        todo.flat[idx] = False
    sign = np.where(rng.random(c.shape) < 0.5, -1.0, 1.0)
    return sign * mag


def sample_conditioned_gaussian(rng: np.random.Generator, c: float, side: str) -> float:
    if not c > 0:
        raise ValueError("threshold must be positive")
    if side == "below":
        return float(sample_below(rng, np.array([c]))[0])
    if side == "above":
        return float(sample_above(rng, np.array([c]))[0])
    raise ValueError(f"side must be 'below' or 'above', not {side!r}")


def free_lattice(rng: np.random.Generator, dprime: int, depth: int) -> WaveletLattice:
    """Unconditioned lattice with ``depth`` Haar levels."""
    lat = WaveletLattice(rng.standard_normal(dprime))
    for h in range(depth):
        lat.append_level(rng.standard_normal((dprime, 2**h)))
    return lat
