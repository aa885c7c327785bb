"""Discrete Skorohod problem for hard balls.

Each step moves the balls by a driving displacement and then restores the
hard-core constraints by projected Gauss-Seidel sweeps over the violated
pairs.  Every pair keeps an accumulated separation ``lam >= 0`` (the discrete
local-time effort), which may shrink again during the sweeps, so at the fixed
point a pair has ``lam > 0`` only if it ends in contact.

Pairs are grouped into connected components of the active-pair graph and each
component is iterated to its own convergence.  Balls that never come into
contact therefore see exactly the same arithmetic whether they are solved
alone or as part of a larger system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from hardball.errors import ConvergenceError, InputError, PreconditionError
from hardball.geometry import BallConfiguration, minimum_image, pair_table, sqnorm, validate

DEFAULT_MAX_ITER = 10_000
_KDTREE_THRESHOLD = 96


@dataclass(frozen=True)
class DrivingSegment:
    dt: float
    displacement: np.ndarray

    def __post_init__(self):
        disp = np.asarray(self.displacement, dtype=float)
        if not np.all(np.isfinite(disp)):
            raise InputError("non-finite driving displacement")
        if not self.dt > 0:
            raise InputError("segment length must be positive")
        object.__setattr__(self, "displacement", disp)


@dataclass
class StepLedger:
    """Reflection applied in one step.

    ``push[p]`` is the total increase of ``x^j - x^k`` produced by pair
    ``pairs[p] = (j, k)``; ball j received ``weights[p, 0] * push[p]`` and
    ball k ``-weights[p, 1] * push[p]``.
    """

    pairs: np.ndarray
    dL: np.ndarray
    push: np.ndarray
    weights: np.ndarray
    sweeps: int = 0

    @classmethod
    def empty(cls, dim: int) -> "StepLedger":
        return cls(np.zeros((0, 2), dtype=int), np.zeros(0), np.zeros((0, dim)), np.zeros((0, 2)))

    def reflection(self, n: int) -> np.ndarray:
        out = np.zeros((n, self.push.shape[1]))
        if len(self.pairs):
            np.add.at(out, self.pairs[:, 0], self.weights[:, :1] * self.push)
            np.add.at(out, self.pairs[:, 1], -self.weights[:, 1:] * self.push)
        return out


@dataclass
class ReflectionLedger:
    """Cumulative reflection term, its total variation and pair local times."""

    n: int
    dim: int
    steps: list = field(default_factory=list)
    local_times: dict = field(default_factory=dict)
    total_variation: list = field(default_factory=lambda: [0.0])
    ball_variation: list = field(default_factory=list)

    def __post_init__(self):
        if not self.ball_variation:
            self.ball_variation = [np.zeros(self.n)]

    def record(self, step: StepLedger) -> None:
        refl = step.reflection(self.n)
        self.steps.append(step)
        self.total_variation.append(self.total_variation[-1] + float(np.sqrt(np.sum(refl * refl))))
        self.ball_variation.append(self.ball_variation[-1] + np.sqrt(sqnorm(refl)))
        for (j, k), dl in zip(step.pairs, step.dL):
            if dl > 0:
                key = (int(j), int(k))
                self.local_times[key] = self.local_times.get(key, 0.0) + float(dl)

    def local_time(self, j: int, k: int) -> float:
        return self.local_times.get((min(j, k), max(j, k)), 0.0)

    def local_time_path(self, j: int, k: int) -> np.ndarray:
        key = (min(j, k), max(j, k))
        inc = [0.0]
        for st in self.steps:
            hit = np.nonzero((st.pairs[:, 0] == key[0]) & (st.pairs[:, 1] == key[1]))[0]
            inc.append(float(st.dL[hit].sum()) if hit.size else 0.0)
        return np.cumsum(inc)

    def reflection_path(self) -> np.ndarray:
        """phi at the grid times, shape (steps + 1, n, d)."""
        out = np.zeros((len(self.steps) + 1, self.n, self.dim))
        for i, st in enumerate(self.steps):
            out[i + 1] = out[i] + st.reflection(self.n)
        return out


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (steps + 1, n, d)
    radius: float
    box: Optional[float] = None
    driving: Optional[np.ndarray] = None  # cumulative driving displacement w

    @property
    def n_steps(self) -> int:
        return self.positions.shape[0] - 1

    def at(self, i: int) -> BallConfiguration:
        return BallConfiguration(self.positions[i], self.radius, self.box)

    @property
    def final(self) -> BallConfiguration:
        return self.at(-1)


def _close_pairs(y: np.ndarray, box: Optional[float], cut: float):
    """Lexicographically sorted pairs at distance < cut."""
    n = y.shape[0]
    if n < 2:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    if n <= _KDTREE_THRESHOLD:
        I, J, _, dist = pair_table(y, box)
        hit = dist < cut
        return I[hit], J[hit]
    pts = y if box is None else np.mod(y, box)
    tree = cKDTree(pts, boxsize=box)
    pairs = tree.query_pairs(cut * (1 + 1e-12), output_type="ndarray")
    if pairs.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    pairs = np.sort(pairs, axis=1)
    diff = minimum_image(y[pairs[:, 0]] - y[pairs[:, 1]], box)
    pairs = pairs[np.sqrt(sqnorm(diff)) < cut]
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order, 0], pairs[order, 1]


def _components(pairs: list[tuple[int, int]]) -> list[list[tuple[int, int]]]:
    parent: dict[int, int] = {}

    def find(a):
        while parent.setdefault(a, a) != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for j, k in pairs:
        ra, rb = find(j), find(k)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list] = {}
    for p in sorted(pairs):
        groups.setdefault(find(p[0]), []).append(p)
    return [groups[g] for g in sorted(groups)]


def project(
    y: np.ndarray,
    radius: float,
    box: Optional[float] = None,
    mobile: Optional[np.ndarray] = None,
    tol_proj: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
) -> StepLedger:
    """Restore ``|y^j - y^k| >= radius`` in place; returns the applied reflection."""
    n, dim = y.shape
    r = radius
    tol = 1e-10 * r if tol_proj is None else tol_proj
    tol_stop = 0.1 * tol
    if mobile is None:
        mobile = np.ones(n, dtype=bool)
    lam: dict[tuple[int, int], float] = {}
    push: dict[tuple[int, int], np.ndarray] = {}
    weight: dict[tuple[int, int], tuple[float, float]] = {}
    total_sweeps = 0

    def violated():
        I, J = _close_pairs(y, box, r)
        return [(int(j), int(k)) for j, k in zip(I, J) if (j, k) not in lam and (mobile[j] or mobile[k])]

    new = violated()
    while new:
        for p in new:
            lam[p] = 0.0
            push[p] = np.zeros(dim)
            mj, mk = float(mobile[p[0]]), float(mobile[p[1]])
            weight[p] = (mj / (mj + mk), mk / (mj + mk))
        fresh = set(new)
        for comp in _components(list(lam)):
            if fresh.isdisjoint(comp):
                continue
            total_sweeps += _solve_component(y, comp, r, box, lam, push, weight, tol, tol_stop, max_iter)
        new = violated()

    keys = sorted(push)
    if not keys:
        step = StepLedger.empty(dim)
        step.sweeps = total_sweeps
        return step
    pairs = np.array(keys, dtype=int).reshape(-1, 2)
    w = np.array([weight[p] for p in keys])
    dL = np.array([max(weight[p]) * lam[p] / r for p in keys])
    return StepLedger(pairs, dL, np.array([push[p] for p in keys]), w, total_sweeps)


def _solve_component(y, comp, r, box, lam, push, weight, tol, tol_stop, max_iter) -> int:
    # plain floats: per-pair numpy calls dominate the cost at these sizes
    balls = sorted({b for p in comp for b in p})
    pts = {b: [float(v) for v in y[b]] for b in balls}
    acc = {p: [float(v) for v in push[p]] for p in comp}
    dim = y.shape[1]
    try:
        for sweep in range(1, max_iter + 1):
            biggest = 0.0
            for p in comp:
                j, k = p
                xj, xk = pts[j], pts[k]
                diff = [xj[c] - xk[c] for c in range(dim)]
                if box is not None:
                    diff = [v - box * round(v / box) for v in diff]
                s2 = 0.0
                for v in diff:
                    s2 += v * v
                dist = math.sqrt(s2)
                old = lam[p]
                new = old + (r - dist)
                if new < 0.0:
                    new = 0.0
                delta = new - old
                if delta != 0.0:
                    wj, wk = weight[p]
                    step = [delta * (v / dist) for v in diff]
                    if wj:
                        for c in range(dim):
                            xj[c] += wj * step[c]
                    if wk:
                        for c in range(dim):
                            xk[c] -= wk * step[c]
                    a = acc[p]
                    for c in range(dim):
                        a[c] += step[c]
                    lam[p] = new
                    if abs(delta) > biggest:
                        biggest = abs(delta)
            if biggest <= tol_stop:
                _store(y, pts, push, acc)
                worst = _worst_violation(y, comp, r, box)
                if worst <= tol:
                    return sweep
    finally:
        _store(y, pts, push, acc)
    raise ConvergenceError(f"projection did not converge in {max_iter} sweeps", _worst_violation(y, comp, r, box))


def _store(y, pts, push, acc) -> None:
    for b, v in pts.items():
        y[b] = v
    for p, v in acc.items():
        push[p] = np.array(v)


def _worst_violation(y, comp, r, box) -> float:
    idx = np.array(comp)
    diff = minimum_image(y[idx[:, 0]] - y[idx[:, 1]], box)
    return float(max(0.0, np.max(r - np.sqrt(sqnorm(diff)))))


def solve_step(
    config: BallConfiguration,
    seg: DrivingSegment,
    tol_proj: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    mobile: Optional[np.ndarray] = None,
) -> tuple[BallConfiguration, StepLedger]:
    """One step of the discrete Skorohod map: move, then reflect."""
    if seg.displacement.shape != config.positions.shape:
        raise InputError("displacement shape does not match the configuration")
    y = config.positions + seg.displacement
    if mobile is not None:
        y[~mobile] = config.positions[~mobile]
    step = project(y, config.radius, config.box, mobile, tol_proj, max_iter)
    return config.with_positions(y), step


def solve_path(
    x0: BallConfiguration,
    path: Sequence[DrivingSegment],
    tol_proj: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    mobile: Optional[np.ndarray] = None,
) -> tuple[Trajectory, ReflectionLedger]:
    if not validate(x0):
        raise PreconditionError("initial configuration violates the hard core")
    n, dim = x0.positions.shape
    positions = np.empty((len(path) + 1, n, dim))
    positions[0] = x0.positions
    times = np.zeros(len(path) + 1)
    driving = np.zeros_like(positions)
    ledger = ReflectionLedger(n, dim)
    y = x0.positions.copy()
    for i, seg in enumerate(path):
        if seg.displacement.shape != y.shape:
            raise InputError(f"segment {i} has the wrong shape")
        disp = seg.displacement.copy()
        if mobile is not None:
            disp[~mobile] = 0.0
        y = y + disp
        ledger.record(project(y, x0.radius, x0.box, mobile, tol_proj, max_iter))
        positions[i + 1] = y
        driving[i + 1] = driving[i] + disp
        times[i + 1] = times[i] + seg.dt
    return Trajectory(times, positions, x0.radius, x0.box, driving), ledger


# --------------------------------------------------------------------------
# stability estimate


@dataclass
class ContractionReport:
    lhs: np.ndarray
    rhs: np.ndarray
    max_ratio: float
    passed: bool
    C: float


def _contraction_terms(sol1, sol2, w1, w2, x1, x2):
    (traj1, led1), (traj2, led2) = sol1, sol2
    if traj1.positions.shape != traj2.positions.shape or not np.array_equal(traj1.times, traj2.times):
        raise InputError("solutions are not on the same time grid")
    w1, w2 = np.asarray(w1, dtype=float), np.asarray(w2, dtype=float)
    if w1.shape != traj1.positions.shape or w2.shape != traj1.positions.shape:
        raise InputError("driving paths must be sampled on the solution grid")
    steps = traj1.positions.shape[0]
    lhs = np.sqrt(np.sum((traj1.positions - traj2.positions).reshape(steps, -1) ** 2, axis=1))
    wdiff = np.sqrt(np.sum((w1 - w2).reshape(steps, -1) ** 2, axis=1))
    base = np.maximum.accumulate(wdiff) + float(np.sqrt(np.sum((np.asarray(x1) - np.asarray(x2)) ** 2)))
    tv = np.asarray(led1.total_variation) + np.asarray(led2.total_variation)
    return lhs, base, tv


# relative slack for rounding in the computed norms
_ROUNDING = 1e-12


def contraction_check(sol1, sol2, w1, w2, x1, x2, C: float) -> ContractionReport:
    """Check ``|z1 - z2|(t) <= (||w1 - w2||_t + |x1 - x2|) exp(C (||phi1||_t + ||phi2||_t))``.

    ``sol`` is a ``(Trajectory, ReflectionLedger)`` pair, ``w`` the driving path
    values at the grid times (starting at zero).
    """
    lhs, base, tv = _contraction_terms(sol1, sol2, w1, w2, x1, x2)
    rhs = base * np.exp(C * tv)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    max_ratio = float(ratio.max())
    return ContractionReport(lhs, rhs, max_ratio, bool(max_ratio <= 1.0 + _ROUNDING), C)


def fit_contraction_constant(sol1, sol2, w1, w2, x1, x2) -> float:
    """Smallest ``C >= 0`` for which :func:`contraction_check` passes (inf if none)."""
    lhs, base, tv = _contraction_terms(sol1, sol2, w1, w2, x1, x2)
    C = 0.0
    for l, b, v in zip(lhs, base, tv):
        if l <= b * (1.0 + _ROUNDING):
            continue
        if v <= 0.0 or b <= 0.0:
            return math.inf
        C = max(C, math.log(l / b) / v)
    return C
