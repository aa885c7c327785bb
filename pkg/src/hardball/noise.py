"""Keyed dyadic Brownian noise with Brownian-bridge refinement.

Increments live on a fixed-point lattice of spacing ``2**-44`` and are stored
as integers.  Refinement splits each integer increment into two integers that
add back exactly, so aggregating a refined path recovers the coarse path bit
for bit, also after conversion to floating point.

Every random draw is keyed by ``(seed, ball, level)`` with the unit-time block
of the step index in the Philox counter, so a ball's noise does not depend on how many
other balls exist or on which subsystem consumes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hardball.errors import InputError

QUANTUM_BITS = 44
QUANTUM = 2.0**-QUANTUM_BITS
MAX_INCREMENTS = 2**28
_MASK64 = (1 << 64) - 1


def _normals(seed: int, ball: int, level: int, block: int, count: int) -> np.ndarray:
    """Standard normals of unit-time block ``block`` in the stream (seed, ball, level).

    The block index sits in the Philox counter, so each block is generated
    from a fixed-length array whatever the horizon.
    """
    key = np.array([seed & _MASK64, ((ball << 16) | level) & _MASK64], dtype=np.uint64)
    counter = np.array([0, block, 0, 0], dtype=np.uint64)
    bitgen = np.random.Philox(key=key, counter=counter)
    half = (count + 1) // 2
    raw = bitgen.random_raw(2 * half)
    u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    u2 = ((raw[1::2] >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    rad = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * half)
    out[0::2] = rad * np.cos(theta)
    out[1::2] = rad * np.sin(theta)
    return out[:count]


def _stream(seed: int, ball: int, level: int, first: int, steps: int, dim: int) -> np.ndarray:
    """Normals for steps ``first .. first+steps-1`` of the level-``level`` draws.

    Level 0 draws one increment per unit time; level ``m >= 1`` draws one
    bridge midpoint per level ``m-1`` step.
    """
    per_block = 1 if level == 0 else 2 ** (level - 1)
    b0, b1 = first // per_block, (first + steps - 1) // per_block
    chunks = [_normals(seed, ball, level, b, per_block * dim).reshape(per_block, dim) for b in range(b0, b1 + 1)]
    z = np.concatenate(chunks, axis=0)
    start = first - b0 * per_block
    return z[start:start + steps]


def _check_steps(level: int, horizon: float, n_balls: int, dim: int) -> int:
    if level < 0 or int(level) != level:
        raise InputError(f"level must be a non-negative integer, got {level}")
    if not horizon > 0 or not math.isfinite(horizon):
        raise InputError(f"horizon must be positive, got {horizon}")
    exact = horizon * 2.0**level
    steps = int(round(exact))
    if steps < 1 or abs(exact - steps) > 1e-9 * max(exact, 1.0):
        raise InputError(f"horizon {horizon} is not a multiple of the step 2^-{level}")
    if steps * max(n_balls, 1) * max(dim, 1) > MAX_INCREMENTS:
        raise InputError(f"{steps} steps for {n_balls} balls exceeds the increment budget")
    return steps


@dataclass(frozen=True)
class DyadicBrownianPath:
    """Brownian increments of ``n_balls`` balls in R^d on the grid ``k 2^-level``."""

    seed: int
    level: int
    horizon: float
    n_balls: int
    dim: int
    quanta: np.ndarray  # (steps, n_balls, dim) int64
    ball_ids: tuple = ()
    offset: int = 0

    def __post_init__(self):
        if not self.ball_ids:
            object.__setattr__(self, "ball_ids", tuple(range(self.n_balls)))

    @property
    def dt(self) -> float:
        return 2.0**-self.level

    @property
    def n_steps(self) -> int:
        return self.quanta.shape[0]

    @property
    def increments(self) -> np.ndarray:
        return self.quanta * QUANTUM

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def values(self) -> np.ndarray:
        """``B`` at the grid times, starting from zero; exact partial sums."""
        cum = np.zeros((self.n_steps + 1,) + self.quanta.shape[1:], dtype=np.int64)
        np.cumsum(self.quanta, axis=0, out=cum[1:])
        return cum * QUANTUM

    def balls(self, indices) -> "DyadicBrownianPath":
        """Noise of a subsystem, same values as in the full system."""
        idx = np.asarray(indices, dtype=int)
        ids = tuple(self.ball_ids[i] for i in idx)
        return DyadicBrownianPath(
            self.seed, self.level, self.horizon, len(idx), self.dim, self.quanta[:, idx], ids, self.offset
        )

    def steps(self, start: int, stop: int) -> "DyadicBrownianPath":
        return DyadicBrownianPath(
            self.seed, self.level, (stop - start) * self.dt, self.n_balls, self.dim,
            self.quanta[start:stop], self.ball_ids, self.offset + start,
        )

    def aggregate(self) -> "DyadicBrownianPath":
        """Coarsen by one level; exact inverse of :func:`refine`."""
        if self.level == 0 or self.n_steps % 2:
            raise InputError("cannot aggregate below level 0 or an odd number of steps")
        if self.offset % 2:
            raise InputError("cannot aggregate a window starting at an odd step")
        q = self.quanta[0::2] + self.quanta[1::2]
        return DyadicBrownianPath(
            self.seed, self.level - 1, self.horizon, self.n_balls, self.dim, q, self.ball_ids, self.offset // 2
        )


def _bridge_split(coarse: np.ndarray, seed: int, ball: int, level: int, offset: int = 0) -> np.ndarray:
    """Split level ``level-1`` increments of one ball into level ``level`` ones."""
    steps, dim = coarse.shape
    z = _stream(seed, ball, level, offset, steps, dim)
    # midpoint of a bridge over a step of length h: mean Delta/2, variance h/4
    half_sd = 0.5 * math.sqrt(2.0 ** -(level - 1)) / QUANTUM
    first = coarse // 2 + np.rint(z * half_sd).astype(np.int64)
    second = coarse - first
    out = np.empty((2 * steps, dim), dtype=np.int64)
    out[0::2] = first
    out[1::2] = second
    return out


def sample_path(seed: int, level: int, horizon: float, n_balls: int, dim: int) -> DyadicBrownianPath:
    """Deterministic Brownian increments at step ``2^-level`` on ``[0, horizon]``."""
    steps = _check_steps(level, horizon, n_balls, dim)
    seed = int(seed)
    n0 = -(-steps // 2**level)
    quanta = np.empty((steps, n_balls, dim), dtype=np.int64)
    for ball in range(n_balls):
        q = np.rint(_stream(seed, ball, 0, 0, n0, dim) / QUANTUM).astype(np.int64)
        for m in range(1, level + 1):
            # only the steps that cover [0, horizon] at the next level are split
            need = -(-steps // 2 ** (level - m + 1))
            q = _bridge_split(q[:need], seed, ball, m)
        quanta[:, ball] = q[:steps]
    return DyadicBrownianPath(seed, level, float(horizon), n_balls, dim, quanta)


def refine(path: DyadicBrownianPath) -> DyadicBrownianPath:
    """The same Brownian path one level finer."""
    level = path.level + 1
    _check_steps(level, path.horizon, path.n_balls, path.dim)
    quanta = np.empty((2 * path.n_steps, path.n_balls, path.dim), dtype=np.int64)
    for i, ball in enumerate(path.ball_ids):
        quanta[:, i] = _bridge_split(path.quanta[:, i], path.seed, ball, level, path.offset)
    return DyadicBrownianPath(
        path.seed, level, path.horizon, path.n_balls, path.dim, quanta, path.ball_ids, 2 * path.offset
    )
