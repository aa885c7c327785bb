"""Hard-ball configurations, contacts and contact graphs."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from hardball.errors import InputError, PreconditionError

DEFAULT_TOL_CONTACT = 1e-7


@dataclass(frozen=True)
class BallConfiguration:
    """Labeled centers of ``n`` balls of hard-core diameter ``radius`` in R^d.

    ``box`` is the side length of a periodic cube, or ``None`` for free space.
    Positions are never wrapped, so labels and trajectories stay continuous;
    periodic distances use the minimum image.
    """

    positions: np.ndarray
    radius: float = 1.0
    box: Optional[float] = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2:
            raise InputError("positions must be an (n, d) array")
        if not np.all(np.isfinite(pos)):
            raise InputError("non-finite coordinate in configuration")
        if not (self.radius > 0 and np.isfinite(self.radius)):
            raise InputError(f"radius must be positive, got {self.radius}")
        if self.box is not None and not self.box > 0:
            raise InputError(f"box must be positive or None, got {self.box}")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def with_positions(self, positions: np.ndarray) -> "BallConfiguration":
        return BallConfiguration(positions, self.radius, self.box)

    def subset(self, indices) -> "BallConfiguration":
        return BallConfiguration(self.positions[np.asarray(indices)], self.radius, self.box)

    def to_text(self) -> str:
        box = "free" if self.box is None else repr(float(self.box))
        lines = [f"{self.dim} {self.radius!r} {self.n} {box}"]
        for row in self.positions:
            lines.append(" ".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BallConfiguration":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not rows or len(rows[0]) != 4:
            raise InputError("header must read 'd r n box'")
        d, r, n, box = rows[0]
        try:
            d, n, r = int(d), int(n), float(r)
            box_val = None if box == "free" else float(box)
            coords = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
        except ValueError as exc:
            raise InputError(f"malformed configuration table: {exc}") from exc
        if coords.shape != (n, d):
            raise InputError(f"expected {n} rows of {d} coordinates, got shape {coords.shape}")
        return cls(coords, r, box_val)


@dataclass(frozen=True)
class ContactPair:
    j: int
    k: int
    gap: float

    def __post_init__(self):
        if self.j == self.k:
            raise InputError("contact pair needs two distinct balls")
        if self.j > self.k:
            j, k = self.k, self.j
            object.__setattr__(self, "j", j)
            object.__setattr__(self, "k", k)


def minimum_image(diff: np.ndarray, box: Optional[float]) -> np.ndarray:
    if box is None:
        return diff
    return diff - box * np.round(diff / box)


def sqnorm(v: np.ndarray) -> np.ndarray:
    """Squared norm along the last axis, summed in a fixed coordinate order."""
    out = v[..., 0] * v[..., 0]
    for c in range(1, v.shape[-1]):
        out = out + v[..., c] * v[..., c]
    return out


@functools.lru_cache(maxsize=32)
def _triu(n: int):
    I, J = np.triu_indices(n, 1)
    I.flags.writeable = False
    J.flags.writeable = False
    return I, J


def pair_table(positions: np.ndarray, box: Optional[float]):
    """All unordered pairs in lexicographic order with separation vectors.

    Returns ``(I, J, diff, dist)`` where ``diff[p] = x[I[p]] - x[J[p]]``.
    """
    n = positions.shape[0]
    I, J = _triu(n)
    diff = minimum_image(positions[I] - positions[J], box)
    return I, J, diff, np.sqrt(sqnorm(diff))


def validate(config: BallConfiguration, tol_hc: Optional[float] = None) -> bool:
    """True iff every pair of centers is at least ``r - tol_hc`` apart."""
    if config.n == 0:
        raise PreconditionError("configuration has no balls")
    if tol_hc is None:
        tol_hc = 1e-9 * config.radius
    if config.n == 1:
        return True
    *_, dist = pair_table(config.positions, config.box)
    return bool(np.all(dist >= config.radius - tol_hc))


def min_pair_distance(positions: np.ndarray, box: Optional[float]) -> float:
    if positions.shape[0] < 2:
        return np.inf
    return float(pair_table(positions, box)[3].min())


def contact_pairs(config: BallConfiguration, tol_contact: float = DEFAULT_TOL_CONTACT) -> list[ContactPair]:
    """Pairs whose centers are within ``r (1 + tol_contact)``, with their gaps."""
    if config.n < 2:
        return []
    I, J, _, dist = pair_table(config.positions, config.box)
    r = config.radius
    hit = np.nonzero(dist <= r * (1.0 + tol_contact))[0]
    return [ContactPair(int(I[p]), int(J[p]), float(dist[p] - r)) for p in hit]


def contact_graph_components(config: BallConfiguration, eps: float) -> list[list[int]]:
    """Connected components of the graph linking balls closer than ``r + eps``.

    Components are returned sorted by their smallest label, each sorted.
    """
    if eps < 0:
        raise PreconditionError("eps must be non-negative")
    n = config.n
    if n == 1:
        return [[0]]
    I, J, _, dist = pair_table(config.positions, config.box)
    link = dist <= config.radius + eps
    graph = coo_matrix((np.ones(int(link.sum())), (I[link], J[link])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    groups: dict[int, list[int]] = {}
    for idx, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(idx)
    return sorted(groups.values(), key=lambda g: g[0])


def normal_direction(
    config: BallConfiguration, pair: ContactPair, tol_contact: float = DEFAULT_TOL_CONTACT
) -> np.ndarray:
    """Inward unit normal of the pair constraint, as an (n, d) array.

    Block ``j`` is ``u / sqrt(2)`` and block ``k`` is ``-u / sqrt(2)`` with
    ``u`` the unit vector from ``x^k`` to ``x^j``.
    """
    if config.n < 2:
        raise PreconditionError("a single ball has no constraint boundary")
    j, k = pair.j, pair.k
    diff = minimum_image(config.positions[j] - config.positions[k], config.box)
    dist = float(np.sqrt(sqnorm(diff)))
    if dist - config.radius > config.radius * tol_contact:
        raise PreconditionError(f"pair ({j}, {k}) is not in contact (gap {dist - config.radius:.3e})")
    u = diff / dist
    out = np.zeros_like(config.positions)
    out[j] = u / np.sqrt(2.0)
    out[k] = -u / np.sqrt(2.0)
    return out
