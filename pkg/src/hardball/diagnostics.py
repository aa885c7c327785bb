"""Runtime diagnostics for trajectories: no-big-jump index, modulus of
continuity, exterior-sphere sampling and invariant maxima."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from hardball.errors import InputError
from hardball.geometry import BallConfiguration, min_pair_distance, minimum_image, sqnorm, validate
from hardball.noise import DyadicBrownianPath
from hardball.skorohod import ReflectionLedger, Trajectory


def label_order(positions: np.ndarray) -> np.ndarray:
    """Ball indices sorted by distance from the origin; ties keep index order."""
    return np.argsort(sqnorm(positions), kind="stable")


def diagnostics_nbj(trajectory: Trajectory, ell: float, T: Optional[float] = None) -> int:
    """Smallest m such that balls labelled above m never enter ``{|x| <= ell}``.

    Labels run 1, 2, ... in order of initial distance from the origin.
    """
    pos = trajectory.positions
    if T is not None:
        pos = pos[trajectory.times <= T + 1e-12 * max(1.0, T)]
    rank = np.empty(pos.shape[1], dtype=int)
    rank[label_order(pos[0])] = np.arange(1, pos.shape[1] + 1)
    entered = np.any(sqnorm(pos) <= ell * ell, axis=0)
    return int(rank[entered].max()) if entered.any() else 0


def _grid_values(obj) -> tuple[np.ndarray, float]:
    if isinstance(obj, DyadicBrownianPath):
        return obj.values(), obj.dt
    if isinstance(obj, Trajectory):
        return obj.positions, float(obj.times[1] - obj.times[0]) if len(obj.times) > 1 else 1.0
    raise InputError("expected a Brownian path or a trajectory; pass dt for raw arrays")


def diagnostics_continuity(values, delta: float, dt: Optional[float] = None, T: Optional[float] = None) -> float:
    """``sup |w(s) - w(t)|`` over grid times with ``|s - t| <= delta``.

    ``values`` is a path, a trajectory or an array whose first axis is time
    on a uniform grid of step ``dt``.  Norms are Euclidean over all remaining
    axes.
    """
    if not delta > 0:
        raise InputError("delta must be positive")
    if dt is None:
        w, dt = _grid_values(values)
    else:
        w = np.asarray(values, dtype=float)
    if T is not None:
        w = w[: int(math.floor(T / dt + 1e-9)) + 1]
    w = w.reshape(w.shape[0], -1)
    lags = min(int(math.floor(delta / dt + 1e-9)), w.shape[0] - 1)
    best = 0.0
    for h in range(1, lags + 1):
        d = w[h:] - w[:-h]
        best = max(best, float(np.sqrt(np.max(np.sum(d * d, axis=1)))))
    return best


def continuity_envelope(values, deltas, dt: Optional[float] = None) -> dict:
    """Measured modulus against ``sqrt(delta log(1/delta))``; the constant is reported only."""
    rows = []
    for delta in deltas:
        m = diagnostics_continuity(values, delta, dt)
        env = math.sqrt(delta * math.log(1.0 / delta)) if delta < 1 else math.sqrt(delta)
        rows.append({"delta": delta, "modulus": m, "ratio": m / env})
    return {"rows": rows, "constant": max(r["ratio"] for r in rows)}


def exterior_sphere_diagnostic(
    config: BallConfiguration, alpha: Optional[float] = None, samples: int = 1000, scale: float = 0.5, seed: int = 0
) -> dict:
    """Sample the uniform exterior-sphere condition at every contact of ``config``.

    For a contact with inward normal ``n`` at ``x`` and a feasible ``y`` the
    condition asks ``|y - x|^2 + 2 alpha <y - x, n> >= 0``; pairwise geometry
    gives it for ``alpha <= r / sqrt(2)``.  Returns the worst margin found.
    """
    from hardball.geometry import contact_pairs, normal_direction

    r = config.radius
    alpha = r / math.sqrt(2.0) if alpha is None else alpha
    rng = np.random.default_rng(seed)
    worst, tested = math.inf, 0
    for pair in contact_pairs(config):
        normal = normal_direction(config, pair)
        for _ in range(samples):
            delta = rng.normal(scale=scale * r, size=config.positions.shape)
            y = config.with_positions(config.positions + delta)
            if not validate(y, tol_hc=0.0):
                continue
            margin = float(np.sum(delta * delta) + 2.0 * alpha * np.sum(delta * normal))
            worst = min(worst, margin)
            tested += 1
    return {"alpha": alpha, "tested": tested, "worst_margin": worst, "passed": bool(worst >= -1e-12)}


def invariant_summary(
    trajectory: Trajectory,
    ledger: ReflectionLedger,
    path: Optional[DyadicBrownianPath] = None,
    tol_contact: float = 1e-7,
) -> dict:
    """Maxima of the runtime invariants along a trajectory.

    ``momentum_residual`` (needs the path) is ``max_t |sum_j (X_t - X_0 - B_t)|``,
    which vanishes up to rounding when there is no free potential.
    """
    r, box = trajectory.radius, trajectory.box
    pos = trajectory.positions
    min_dist = min(min_pair_distance(p, box) for p in pos) if pos.shape[1] > 1 else math.inf
    support_gap, recon, negative = 0.0, 0.0, 0
    for i, st in enumerate(ledger.steps):
        if len(st.pairs):
            pos_dl = st.dL > 0
            if np.any(st.dL < 0):
                negative += 1
            if pos_dl.any():
                pr = st.pairs[pos_dl]
                diff = minimum_image(pos[i + 1, pr[:, 0]] - pos[i + 1, pr[:, 1]], box)
                gap = (np.sqrt(sqnorm(diff)) - r) / r
                support_gap = max(support_gap, float(gap.max()))
        if trajectory.driving is not None:
            moved = pos[i + 1] - pos[i] - (trajectory.driving[i + 1] - trajectory.driving[i])
            recon = max(recon, float(np.max(np.abs(moved - st.reflection(ledger.n)))))
    out = {
        "steps": len(ledger.steps),
        "min_pair_distance": min_dist,
        "hard_core_deficit": max(0.0, r - min_dist),
        "support_gap": support_gap,
        "support_ok": bool(support_gap <= tol_contact),
        "negative_local_time_steps": negative,
        "reconstruction_error": recon if trajectory.driving is not None else None,
        "total_variation": ledger.total_variation[-1],
        "max_local_time": max(ledger.local_times.values(), default=0.0),
    }
    if path is not None:
        B = path.values()
        resid = np.sum(pos - pos[0] - B, axis=1)
        out["momentum_residual"] = float(np.max(np.sqrt(sqnorm(resid))))
    return out
