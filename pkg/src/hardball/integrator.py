"""Frozen-drift dyadic scheme, refinement study and uniqueness probe."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from hardball.errors import InputError, PreconditionError
from hardball.geometry import BallConfiguration, validate
from hardball.noise import DyadicBrownianPath, refine, sample_path
from hardball.potentials import (
    ZERO_FREE,
    FreePotential,
    PairPotential,
    drift_field,
    lipschitz_bound,
    ruelle_check,
)
from hardball.skorohod import (
    DEFAULT_MAX_ITER,
    ReflectionLedger,
    Trajectory,
    fit_contraction_constant,
    project,
)


@functools.lru_cache(maxsize=64)
def _certificate(pair: PairPotential, r: float, dim: int):
    return ruelle_check(pair, r, dim)


@functools.lru_cache(maxsize=64)
def cached_lipschitz(pair: PairPotential, r: float, dim: int) -> float:
    return lipschitz_bound(pair, r, dim)


def simulate_ske_n(
    x0: BallConfiguration,
    pair: PairPotential,
    free: FreePotential = ZERO_FREE,
    path: Optional[DyadicBrownianPath] = None,
    *,
    frozen: Optional[np.ndarray] = None,
    drift_level: Optional[int] = None,
    tol_proj: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[Trajectory, ReflectionLedger]:
    """Run the scheme with the drift frozen at the left end of each dyadic step.

    The drift is frozen on the grid of step ``2**-drift_level`` (default: the
    path's own level).  A path finer than the drift grid resolves the
    reflection between drift updates; the trajectory and ledger are then
    reported on the path's grid.

    ``frozen`` marks balls held fixed (an outer shell standing in for the
    environment of a truncated infinite system); they still repel mobile balls
    through the hard core and the pair potential.
    """
    if path is None:
        raise InputError("a driving path is required")
    n, dim = x0.positions.shape
    if (path.n_balls, path.dim) != (n, dim):
        raise InputError(f"path is for {path.n_balls} balls in R^{path.dim}, configuration has {n} in R^{dim}")
    if not validate(x0):
        raise PreconditionError("initial configuration violates the hard core")
    pair.check_dimension(dim)
    if pair.cutoff is None and not pair.is_zero and not _certificate(pair, x0.radius, dim).finite:
        raise PreconditionError("untruncated pair potential is not of Ruelle class")
    if x0.box is not None and pair.reach > 0.5 * x0.box:
        raise InputError("interaction range must not exceed half the periodic box")

    if drift_level is None:
        drift_level = path.level
    if not 0 <= drift_level <= path.level:
        raise InputError("drift level must lie between 0 and the path level")
    hold = 2 ** (path.level - drift_level)
    mobile = None if frozen is None else ~np.asarray(frozen, dtype=bool)
    dt = path.dt
    inc = path.increments
    steps = path.n_steps
    positions = np.empty((steps + 1, n, dim))
    driving = np.zeros((steps + 1, n, dim))
    positions[0] = x0.positions
    ledger = ReflectionLedger(n, dim)
    y = x0.positions.copy()
    drift = None
    for k in range(steps):
        if k % hold == 0:
            drift = drift_field(y, pair, free, x0.box) * dt
        disp = inc[k] + drift
        if mobile is not None:
            disp[~mobile] = 0.0
        y = y + disp
        ledger.record(project(y, x0.radius, x0.box, mobile, tol_proj, max_iter))
        positions[k + 1] = y
        driving[k + 1] = driving[k] + disp
    return Trajectory(path.times, positions, x0.radius, x0.box, driving), ledger


def _sup_gap(coarse: Trajectory, fine: Trajectory) -> float:
    a = coarse.positions
    b = fine.positions[:: fine.n_steps // coarse.n_steps]
    diff = (a - b).reshape(a.shape[0], -1)
    return float(np.sqrt(np.max(np.sum(diff * diff, axis=1))))


@dataclass
class RefinementReport:
    levels: list
    gaps: list
    slope: float
    strictly_decreasing: bool

    def table(self) -> list[dict]:
        return [
            {"level": a, "next_level": b, "sup_gap": g}
            for a, b, g in zip(self.levels[:-1], self.levels[1:], self.gaps)
        ]


def refinement_study(
    x0: BallConfiguration,
    pair: PairPotential,
    free: FreePotential,
    seed: int,
    n_list: Sequence[int],
    T: float,
    *,
    reflection_level: Optional[int] = None,
    common_noise: bool = True,
    **kwargs,
) -> RefinementReport:
    """Sup-norm gaps between consecutive levels driven by one refined Brownian path.

    With ``common_noise`` every level reflects on the same fine noise grid
    (``reflection_level``, default two levels below the finest drift level),
    so consecutive levels differ only in where the drift is frozen.
    Otherwise each level uses the noise at its own resolution.

    Gaps are measured on the coarser grid; ``slope`` is the least-squares
    slope of ``log(gap)`` against the coarser level.
    """
    levels = list(n_list)
    if any(b <= a for a, b in zip(levels, levels[1:])) or len(levels) < 2:
        raise InputError("n_list must hold at least two strictly ascending levels")
    if reflection_level is None:
        reflection_level = levels[-1] + 2
    if common_noise and reflection_level < levels[-1]:
        raise InputError("reflection level must not be coarser than the finest drift level")
    path = sample_path(seed, levels[0], T, x0.n, x0.dim)
    trajs = []
    if common_noise:
        while path.level < reflection_level:
            path = refine(path)
    for lev in levels:
        if common_noise:
            traj = simulate_ske_n(x0, pair, free, path, drift_level=lev, **kwargs)[0]
            stride = 2 ** (reflection_level - lev)
            traj = Trajectory(traj.times[::stride], traj.positions[::stride], traj.radius, traj.box)
        else:
            while path.level < lev:
                path = refine(path)
            traj = simulate_ske_n(x0, pair, free, path, **kwargs)[0]
        trajs.append(traj)
    gaps = [_sup_gap(a, b) for a, b in zip(trajs, trajs[1:])]
    positive = [g > 0 for g in gaps]
    if all(positive):
        slope = float(np.polyfit(levels[:-1], np.log(gaps), 1)[0])
    else:
        slope = math.nan
    decreasing = all(b < a for a, b in zip(gaps, gaps[1:]))
    return RefinementReport(levels, gaps, slope, decreasing)


@dataclass
class UniquenessReport:
    times: np.ndarray
    divergence: np.ndarray
    delta: float
    K: float
    first_contact: Optional[int]
    gronwall: np.ndarray
    gronwall_ok: bool
    C: float
    contraction_envelope: np.ndarray

    @property
    def pre_contact(self) -> slice:
        end = len(self.times) if self.first_contact is None else self.first_contact
        return slice(0, end)


def uniqueness_probe(
    x0: BallConfiguration,
    x0_alt: BallConfiguration,
    pair: PairPotential,
    free: FreePotential,
    path: DyadicBrownianPath,
    K: Optional[float] = None,
    **kwargs,
) -> UniquenessReport:
    """Run twice from nearby starts with identical noise and compare.

    Before the first reflection in either run the gap obeys the Gronwall
    envelope ``delta exp(K t)``; afterwards the stability estimate with the
    measured reflection variation is fitted for its constant ``C``.
    """
    sol1 = simulate_ske_n(x0, pair, free, path, **kwargs)
    sol2 = simulate_ske_n(x0_alt, pair, free, path, **kwargs)
    t1, t2 = sol1[0], sol2[0]
    steps = t1.positions.shape[0]
    div = np.sqrt(np.sum((t1.positions - t2.positions).reshape(steps, -1) ** 2, axis=1))
    delta = float(div[0])
    if K is None:
        K = 0.0 if pair.is_zero and free.is_zero else cached_lipschitz(pair, x0.radius, x0.dim)
    first = None
    for i, (a, b) in enumerate(zip(sol1[1].steps, sol2[1].steps)):
        if len(a.pairs) or len(b.pairs):
            first = i + 1
            break
    with np.errstate(over="ignore"):
        gronwall = delta * np.exp(K * t1.times) if delta > 0 else np.zeros_like(t1.times)
    pre = slice(0, steps if first is None else first)
    ok = bool(np.all(div[pre] <= gronwall[pre]))
    C = fit_contraction_constant(sol1, sol2, t1.driving, t2.driving, x0.positions, x0_alt.positions)
    wdiff = np.sqrt(np.sum((t1.driving - t2.driving).reshape(steps, -1) ** 2, axis=1))
    base = np.maximum.accumulate(wdiff) + delta
    tv = np.asarray(sol1[1].total_variation) + np.asarray(sol2[1].total_variation)
    with np.errstate(over="ignore"):
        envelope = base * np.exp((C if math.isfinite(C) else 0.0) * tv)
    return UniquenessReport(t1.times, div, delta, K, first, gronwall, ok, C, envelope)
