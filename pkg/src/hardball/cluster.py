"""Finite-cluster decomposition of trajectories.

Within each time window the balls are split into clusters that are more than
``r + eps`` apart at the window start.  Each cluster is evolved on its own
with its own keyed noise; afterwards a guard checks that no two clusters came
within the interaction range during the window.  Violating clusters are
merged and the window is replayed with the same noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from hardball.errors import InputError, PreconditionError
from hardball.geometry import BallConfiguration, contact_graph_components, minimum_image, pair_table, sqnorm
from hardball.integrator import simulate_ske_n
from hardball.noise import DyadicBrownianPath
from hardball.potentials import ZERO_FREE, FreePotential, PairPotential
from hardball.skorohod import ReflectionLedger, StepLedger, Trajectory


@dataclass
class ClusterPartition:
    window: tuple
    groups: list
    eps: float
    frozen_env: tuple = ()

    def labels(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=int)
        for c, g in enumerate(self.groups):
            out[g] = c
        return out


def _min_cross_distance(positions: np.ndarray, labels: np.ndarray, box) -> float:
    I, J, _, dist = pair_table(positions, box)
    cross = labels[I] != labels[J]
    return float(dist[cross].min()) if np.any(cross) else math.inf


def detect_clusters(
    config: BallConfiguration, eps: float, window: tuple = (0.0, 0.0), frozen_env: Iterable[int] = ()
) -> ClusterPartition:
    """Components of the graph linking balls within ``r + eps``."""
    if not eps > 0:
        raise PreconditionError("eps must be positive")
    groups = contact_graph_components(config, eps)
    part = ClusterPartition(tuple(window), groups, eps, tuple(frozen_env))
    if len(groups) > 1:
        gap = _min_cross_distance(config.positions, part.labels(config.n), config.box)
        assert gap > config.radius + eps, "partition soundness"
    return part


def _set_distances(a: np.ndarray, b: np.ndarray, box) -> np.ndarray:
    """Minimum distance between two ball sets at each grid time; a is (K, m, d)."""
    diff = minimum_image(a[:, :, None, :] - b[:, None, :, :], box)
    return np.sqrt(sqnorm(diff)).reshape(a.shape[0], -1).min(axis=1)


def guard_check(
    cluster_traj: Trajectory,
    env_traj: Trajectory,
    window: Optional[tuple],
    eps_guard: float,
    reach: float = 0.0,
) -> bool:
    """True iff the cluster kept clear of the environment throughout the window.

    Clear means every cluster-environment distance exceeded
    ``max(r + eps_guard, reach)`` at every grid time of the window, where
    ``reach`` is the range of the smooth interaction.
    """
    if cluster_traj.positions.shape[0] != env_traj.positions.shape[0] or not np.allclose(
        cluster_traj.times, env_traj.times, rtol=0, atol=1e-12
    ):
        raise InputError("cluster and environment trajectories are on different grids")
    if env_traj.positions.shape[1] == 0 or cluster_traj.positions.shape[1] == 0:
        return True
    times = cluster_traj.times
    if window is None:
        sel = slice(None)
    else:
        tol = 1e-12 * max(1.0, abs(window[1]))
        sel = (times >= window[0] - tol) & (times <= window[1] + tol)
    threshold = max(cluster_traj.radius + eps_guard, reach)
    d = _set_distances(cluster_traj.positions[sel], env_traj.positions[sel], cluster_traj.box)
    return bool(np.all(d > threshold))


@dataclass
class WindowRecord:
    window: int
    t_start: float
    t_stop: float
    clusters: list
    guards: list = field(default_factory=list)
    merges: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "window": self.window,
            "t_start": self.t_start,
            "t_stop": self.t_stop,
            "clusters": self.clusters,
            "guards": self.guards,
            "merges": self.merges,
        }


def default_window_count(T: float, level: int) -> int:
    return int(math.ceil(T * 2.0 ** (level / 2.0)))


def _merge(groups: list, links: list) -> list:
    parent = list(range(len(groups)))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    for a, b in links:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    merged: dict[int, list] = {}
    for i, g in enumerate(groups):
        merged.setdefault(find(i), []).extend(g)
    return sorted((sorted(g) for g in merged.values()), key=lambda g: g[0])


def localized_simulate(
    x0: BallConfiguration,
    pair: PairPotential,
    free: FreePotential = ZERO_FREE,
    path: Optional[DyadicBrownianPath] = None,
    T: Optional[float] = None,
    M: Optional[int] = None,
    eps: float = 1.0,
    *,
    eps_guard: Optional[float] = None,
    frozen: Optional[np.ndarray] = None,
    force_merge: Sequence[int] = (),
    **kwargs,
) -> tuple[Trajectory, ReflectionLedger, list]:
    """Window-by-window cluster evolution with guard checks and merge-and-replay.

    ``force_merge`` lists windows in which the first two clusters are merged
    after their first run regardless of the guard outcome, to exercise the
    replay path.
    """
    if path is None:
        raise InputError("a driving path is required")
    n, dim = x0.positions.shape
    steps = path.n_steps
    if T is None:
        T = steps * path.dt
    if abs(T - steps * path.dt) > 1e-9 * max(T, 1.0):
        raise InputError("T must match the path horizon")
    if M is None:
        M = default_window_count(T, path.level)
    if M < 1 or M > steps:
        raise InputError(f"window count must lie in [1, {steps}]")
    if eps_guard is None:
        eps_guard = eps / 2.0
    if eps_guard > eps:
        raise InputError("eps_guard must not exceed eps")
    reach = 0.0 if pair.is_zero else pair.reach
    frozen = np.zeros(n, dtype=bool) if frozen is None else np.asarray(frozen, dtype=bool)
    forced = set(force_merge)

    positions = np.empty((steps + 1, n, dim))
    driving = np.zeros((steps + 1, n, dim))
    positions[0] = x0.positions
    ledger = ReflectionLedger(n, dim)
    history = []
    bounds = [(i * steps) // M for i in range(M + 1)]
    times = path.times

    for i in range(M):
        s0, s1 = bounds[i], bounds[i + 1]
        start = BallConfiguration(positions[s0], x0.radius, x0.box)
        part = detect_clusters(start, eps, (times[s0], times[s1]), np.nonzero(frozen)[0].tolist())
        groups = part.groups
        record = WindowRecord(i, float(times[s0]), float(times[s1]), [list(map(int, g)) for g in groups])
        runs: dict[tuple, tuple] = {}
        first_pass = True
        while True:
            for g in groups:
                key = tuple(g)
                if key not in runs:
                    sub_path = path.balls(g).steps(s0, s1)
                    sub_frozen = frozen[g] if frozen.any() else None
                    runs[key] = simulate_ske_n(start.subset(g), pair, free, sub_path, frozen=sub_frozen, **kwargs)
            links, guards = [], []
            for a in range(len(groups)):
                for b in range(a + 1, len(groups)):
                    ta, tb = runs[tuple(groups[a])][0], runs[tuple(groups[b])][0]
                    ok = guard_check(ta, tb, None, eps_guard, reach)
                    if not ok:
                        links.append((a, b))
                    guards.append({"clusters": [a, b], "passed": ok})
            if first_pass and i in forced and len(groups) > 1 and (0, 1) not in links:
                links.append((0, 1))
                guards.append({"clusters": [0, 1], "passed": False, "forced": True})
            record.guards.append(guards)
            first_pass = False
            if not links:
                break
            merged = _merge(groups, links)
            record.merges.append({"from": [list(map(int, g)) for g in groups], "to": [list(map(int, g)) for g in merged]})
            groups = merged
        record.clusters = [list(map(int, g)) for g in groups]
        history.append(record)

        step_parts: list[list[StepLedger]] = [[] for _ in range(s1 - s0)]
        for g in groups:
            traj, led = runs[tuple(g)]
            idx = np.asarray(g)
            positions[s0 + 1:s1 + 1, idx] = traj.positions[1:]
            driving[s0 + 1:s1 + 1, idx] = driving[s0, idx] + traj.driving[1:]
            for k, st in enumerate(led.steps):
                if len(st.pairs):
                    st = StepLedger(idx[st.pairs], st.dL, st.push, st.weights, st.sweeps)
                step_parts[k].append(st)
        for parts in step_parts:
            ledger.record(_concat_steps(parts, dim))

    return Trajectory(times, positions, x0.radius, x0.box, driving), ledger, history


def _concat_steps(parts: list, dim: int) -> StepLedger:
    parts = [p for p in parts if len(p.pairs)]
    if not parts:
        return StepLedger.empty(dim)
    pairs = np.concatenate([p.pairs for p in parts])
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return StepLedger(
        pairs[order],
        np.concatenate([p.dL for p in parts])[order],
        np.concatenate([p.push for p in parts])[order],
        np.concatenate([p.weights for p in parts])[order],
        sum(p.sweeps for p in parts),
    )


# --------------------------------------------------------------------------
# finite-cluster witnesses


@dataclass
class FcpWitness:
    """Nested open sets, each a union of open axis-aligned boxes on a grid.

    ``open_sets[i]`` is a pair ``(lo, hi)`` of (B, d) arrays.
    """

    eps: float
    p: int
    T: float
    a: float
    M: int
    open_sets: list
    radius: float
    seed_resolution: float  # 0 for a single cube seed

    @property
    def inner_radius(self) -> float:
        return self.a + self.M

    @property
    def outer_radius(self) -> float:
        return self.a + self.M + self.M**self.p

    def violations(self, trajectory: Optional[Trajectory] = None) -> list[str]:
        """Every failed containment, empty when the witness is valid."""
        out = []
        lo0, hi0 = self.open_sets[0]
        far = np.sqrt(sqnorm(np.maximum(np.abs(lo0), np.abs(hi0))))
        if np.any(far > self.outer_radius):
            out.append(f"O_0 leaves the ball of radius {self.outer_radius}")
        for i in range(self.M - 1):
            lo, hi = self.open_sets[i + 1]
            if not _boxes_inside(lo - self.eps, hi + self.eps, *self.open_sets[i]):
                out.append(f"eps-neighborhood of O_{i + 1} is not inside O_{i}")
        if not _covers_ball(self.open_sets[-1], self.inner_radius, self.seed_resolution):
            out.append(f"O_{self.M - 1} does not contain the ball of radius {self.inner_radius}")
        if trajectory is not None:
            rho = (self.radius + self.eps) / 2.0
            for i, sel in enumerate(_window_samples(trajectory.times, self.T, self.M)):
                bad = _window_conflicts(trajectory.positions[sel], *self.open_sets[i], rho)
                if bad:
                    out.append(f"window {i}: balls {bad} cross the boundary of O_{i}")
        return out

    def as_dict(self) -> dict:
        return {
            "eps": self.eps,
            "p": self.p,
            "T": self.T,
            "a": self.a,
            "M": self.M,
            "open_sets": [
                [{"lo": l.tolist(), "hi": h.tolist()} for l, h in zip(lo, hi)] for lo, hi in self.open_sets
            ],
        }


@dataclass
class FcpRefusal:
    window: int
    reason: str
    ball: Optional[int] = None


def _boxes_inside(lo, hi, LO, HI) -> bool:
    """Each box (lo, hi) lies in some box (LO, HI)."""
    ok = np.all((LO[None] <= lo[:, None]) & (hi[:, None] <= HI[None]), axis=2)
    return bool(np.all(ok.any(axis=1)))


def _in_open_boxes(points, lo, hi) -> np.ndarray:
    return np.any(np.all((lo[None] < points[:, None]) & (points[:, None] < hi[None]), axis=2), axis=1)


def _ball_inside(points, lo, hi, rho) -> bool:
    """Every open rho-ball around the points lies in a single box of the union."""
    inside = np.all((lo[None] <= points[:, None] - rho) & (points[:, None] + rho <= hi[None]), axis=2)
    return bool(np.all(inside.any(axis=1)))


def _ball_clear(points, lo, hi, rho) -> bool:
    """No open rho-ball around the points meets the union of open boxes."""
    gap = np.maximum(np.maximum(lo[None] - points[:, None], points[:, None] - hi[None]), 0.0)
    return bool(np.all(np.sqrt(sqnorm(gap)) >= rho))


def _window_samples(times, T, M):
    tol = 1e-12 * max(1.0, T)
    out = []
    for i in range(M):
        t0, t1 = i * T / M, (i + 1) * T / M
        out.append(np.nonzero((times >= t0 - tol) & (times <= t1 + tol))[0])
    return out


def _window_conflicts(pos, lo, hi, rho) -> list:
    """Balls violating the in/out rule of one window; pos is (K, n, d)."""
    start_inside = _in_open_boxes(pos[0], lo, hi)
    bad = []
    for j in range(pos.shape[1]):
        ok = _ball_inside(pos[:, j], lo, hi, rho) if start_inside[j] else _ball_clear(pos[:, j], lo, hi, rho)
        if not ok:
            bad.append(j)
    return bad


def _snap_out(lo, hi, g):
    """Outward rounding to the grid; values already on it stay put."""
    a, b = lo / g, hi / g
    ra, rb = np.rint(a), np.rint(b)
    a = np.where(np.abs(a - ra) < 1e-9, ra, np.floor(a))
    b = np.where(np.abs(b - rb) < 1e-9, rb, np.ceil(b))
    return a * g, b * g


def _seed_cells(radius: float, h: float, dim: int) -> np.ndarray:
    """Integer corners of the closed h-cells meeting the closed ball."""
    m = int(math.ceil(radius / h))
    axes = [np.arange(-m, m)] * dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    lo = grid * h
    gap = np.maximum(np.maximum(lo - 0.0, 0.0 - (lo + h)), 0.0)
    return grid[np.sqrt(sqnorm(gap)) <= radius]


def _seed_boxes(radius: float, h: float, g: float, dim: int):
    """Union of slabs covering the ball; each slab overlaps its neighbors by g."""
    cells = _seed_cells(radius, h, dim)
    slabs = {}
    for c in map(tuple, cells):
        key = c[:-1]
        lo, hi = slabs.get(key, (c[-1], c[-1]))
        slabs[key] = (min(lo, c[-1]), max(hi, c[-1]))
    los, his = [], []
    for key, (a, b) in sorted(slabs.items()):
        base = np.array(key + (a,), dtype=float) * h
        top = np.array(key + (b,), dtype=float) * h + h
        los.append(base - g)
        his.append(top + g)
    return np.array(los), np.array(his)


def _covers_ball(open_set, radius: float, h: float) -> bool:
    lo, hi = open_set
    dim = lo.shape[1]
    if h <= 0:
        # single cube seed
        return bool(np.any(np.all((lo <= -radius) & (hi >= radius), axis=1)))
    cells = _seed_cells(radius, h, dim) * h
    ok = np.all((lo[None] < cells[:, None]) & (cells[:, None] + h < hi[None]), axis=2)
    return bool(np.all(ok.any(axis=1)))


def _close_window(lo, hi, pos, rho, g, bound):
    """Grow (lo, hi) until every ball is either inside for the whole window or clear.

    Returns the boxes and, if a box escapes the ball of radius ``bound``, the
    offending ball.
    """
    n = pos.shape[1]
    sweeps_lo, sweeps_hi = _snap_out(pos.min(axis=0) - rho, pos.max(axis=0) + rho, g)
    changed = True
    while changed:
        changed = False
        start_inside = _in_open_boxes(pos[0], lo, hi)
        for j in range(n):
            if start_inside[j]:
                ok = _ball_inside(pos[:, j], lo, hi, rho)
            else:
                ok = _ball_clear(pos[:, j], lo, hi, rho)
            if ok:
                continue
            lo = np.vstack([lo, sweeps_lo[j]])
            hi = np.vstack([hi, sweeps_hi[j]])
            far = math.sqrt(float(sqnorm(np.maximum(np.abs(sweeps_lo[j]), np.abs(sweeps_hi[j])))))
            if far > bound:
                return lo, hi, j
            changed = True
            break
    return lo, hi, None


def fcp_certificate(
    trajectory: Trajectory, eps: float, p: int, T: float, a: float, M: int
) -> Union[FcpWitness, FcpRefusal]:
    """Search unions of grid boxes for nested sets certifying the finite-cluster event.

    The grid spacing is ``eps / 2``.  Windows are processed from the last one
    (whose set must contain the ball of radius ``a + M``) backwards, each set
    seeded with the ``eps``-inflation of the next and grown only as far as the
    in/out rule forces; the result is the least witness built from the seed,
    so a refusal means no witness with that seed exists.
    """
    if trajectory.times[-1] < T - 1e-12 * max(T, 1.0):
        raise InputError("trajectory does not cover [0, T]")
    if not (eps > 0 and M >= 1 and p >= 1):
        raise InputError("need eps > 0, M >= 1 and p >= 1")
    g = eps / 2.0
    dim = trajectory.positions.shape[2]
    rho = (trajectory.radius + eps) / 2.0
    inner, outer = a + M, a + M + M**p
    samples = _window_samples(trajectory.times, T, M)

    attempts = []
    c = math.ceil(inner / g - 1e-9) * g
    attempts.append((np.full((1, dim), -c), np.full((1, dim), c), 0.0))
    h = g * max(1, math.ceil(inner / 16.0 / g))
    attempts.append(_seed_boxes(inner, h, g, dim) + (h,))

    refusal = None
    for lo, hi, res in attempts:
        sets = [None] * M
        refusal = None
        for i in range(M - 1, -1, -1):
            if i < M - 1:
                lo, hi = sets[i + 1]
                lo, hi = _snap_out(lo - eps, hi + eps, g)
            pos = trajectory.positions[samples[i]]
            lo, hi, ball = _close_window(lo, hi, pos, rho, g, outer)
            if ball is not None:
                refusal = FcpRefusal(i, f"window {i}: ball {ball} is forced outside the ball of radius {outer}", ball)
                break
            far = np.sqrt(sqnorm(np.maximum(np.abs(lo), np.abs(hi))))
            if np.any(far > outer):
                refusal = FcpRefusal(i, f"window {i}: O_{i} cannot stay inside the ball of radius {outer}")
                break
            sets[i] = (lo, hi)
        if refusal is None:
            witness = FcpWitness(eps, p, T, a, M, sets, trajectory.radius, res)
            if not witness.violations(trajectory):
                return witness
            refusal = FcpRefusal(0, "; ".join(witness.violations(trajectory)))
    return refusal
