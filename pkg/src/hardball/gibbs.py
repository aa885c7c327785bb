"""Canonical hard-core Gibbs sampling and a reversibility check for the dynamics.

The sampler targets the density ``exp(-sum_j Phi(x_j) - sum_{j<k} Psi(x_j - x_k))``
on hard-core configurations in a periodic box.  That is the measure the
drift ``-grad Phi / 2 - sum grad Psi / 2`` keeps invariant, so pairs are
counted once here even though :func:`hardball.potentials.hamiltonian` sums
ordered pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from hardball.errors import InputError
from hardball.geometry import BallConfiguration, minimum_image, pair_table, sqnorm, validate
from hardball.noise import sample_path
from hardball.potentials import ZERO_FREE, FreePotential, PairPotential


@dataclass(frozen=True)
class GibbsSamplerConfig:
    box: float
    n_balls: int
    pair: PairPotential = field(default_factory=PairPotential.hard_core_only)
    free: FreePotential = ZERO_FREE
    sweeps: int = 200
    proposal_scale: float = 0.5
    seed: int = 0
    dim: int = 2
    radius: float = 1.0

    def __post_init__(self):
        if not (self.box > 0 and math.isfinite(self.box)):
            raise InputError("box side must be positive")
        if self.n_balls < 1 or self.sweeps < 0 or not self.proposal_scale > 0:
            raise InputError("need n_balls >= 1, sweeps >= 0 and a positive proposal scale")

    @property
    def burn_in(self) -> int:
        return self.sweeps // 2


def lattice_placement(cfg: GibbsSamplerConfig) -> np.ndarray:
    """Simple cubic lattice filling the box row by row."""
    m = int(math.ceil(cfg.n_balls ** (1.0 / cfg.dim) - 1e-12))
    spacing = cfg.box / m
    if spacing < cfg.radius:
        raise InputError(
            f"{cfg.n_balls} balls of diameter {cfg.radius} do not fit on a lattice in a box of side {cfg.box}"
        )
    grid = np.stack(np.meshgrid(*[np.arange(m)] * cfg.dim, indexing="ij"), axis=-1).reshape(-1, cfg.dim)
    return (grid[: cfg.n_balls] + 0.5) * spacing


def acceptance_probability(dE):
    """Metropolis rule ``min(1, exp(-dE))``; ``dE = inf`` is always rejected."""
    dE = np.asarray(dE, dtype=float)
    with np.errstate(over="ignore"):
        return np.where(dE <= 0, 1.0, np.exp(-np.maximum(dE, 0.0)))


def energy_change(pos: np.ndarray, j: int, new: np.ndarray, cfg: GibbsSamplerConfig) -> np.ndarray:
    """Energy change of moving ball ``j`` to ``new`` in a batch of configurations.

    ``pos`` is (R, n, d) and ``new`` is (R, d).  Returns ``inf`` for replicas
    where the move breaks the hard core.
    """
    others = np.delete(pos, j, axis=1)
    d_new = np.sqrt(sqnorm(minimum_image(others - new[:, None], cfg.box)))
    d_old = np.sqrt(sqnorm(minimum_image(others - pos[:, j][:, None], cfg.box)))
    dE = cfg.free.value(new) - cfg.free.value(pos[:, j])
    if not cfg.pair.is_zero:
        cut = math.inf if cfg.pair.cutoff is None else cfg.pair.cutoff
        safe_new = np.where(d_new >= cfg.radius, d_new, cfg.radius)
        e_new = np.where(d_new < cut, cfg.pair.energy(safe_new), 0.0)
        e_old = np.where(d_old < cut, cfg.pair.energy(d_old), 0.0)
        dE = dE + e_new.sum(axis=1) - e_old.sum(axis=1)
    blocked = np.any(d_new < cfg.radius, axis=1)
    return np.where(blocked, np.inf, dE)


def gibbs_energy(config: BallConfiguration, cfg: GibbsSamplerConfig) -> float:
    """``sum Phi + sum_{j<k} Psi`` with ``inf`` on overlap."""
    total = float(np.sum(cfg.free.value(config.positions)))
    if config.n < 2:
        return total
    _, _, _, dist = pair_table(config.positions, config.box)
    if np.any(dist < config.radius):
        return math.inf
    if cfg.pair.is_zero:
        return total
    if cfg.pair.cutoff is not None:
        dist = dist[dist < cfg.pair.cutoff]
    return total + float(np.sum(cfg.pair.energy(dist)))


def _replica_rng(seed: int, replica: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), stream, replica])))


@dataclass
class GibbsBatch:
    configs: list
    acceptance_rate: float
    metadata: dict


def gibbs_sample_batch(cfg: GibbsSamplerConfig, replicas: int, start: Optional[np.ndarray] = None) -> GibbsBatch:
    """Independent Metropolis chains, vectorized over replicas.

    Replica ``i`` uses its own random stream, so replica 0 of any batch equals
    :func:`gibbs_sample` with the same config.
    """
    if replicas < 1:
        raise InputError("need at least one replica")
    x0 = lattice_placement(cfg) if start is None else np.asarray(start, dtype=float)
    if not validate(BallConfiguration(x0, cfg.radius, cfg.box), tol_hc=0.0):
        raise InputError("initial placement violates the hard core")
    n, d = cfg.n_balls, cfg.dim
    pos = np.repeat(x0[None], replicas, axis=0)
    rngs = [_replica_rng(cfg.seed, i, 0) for i in range(replicas)]
    steps = np.stack([g.uniform(-cfg.proposal_scale, cfg.proposal_scale, (cfg.sweeps, n, d)) for g in rngs], axis=1)
    coins = np.stack([g.random((cfg.sweeps, n)) for g in rngs], axis=1)
    accepted = 0
    for s in range(cfg.sweeps):
        for j in range(n):
            new = np.mod(pos[:, j] + steps[s, :, j], cfg.box)
            ok = coins[s, :, j] < acceptance_probability(energy_change(pos, j, new, cfg))
            pos[ok, j] = new[ok]
            accepted += int(ok.sum())
    configs = [BallConfiguration(p, cfg.radius, cfg.box) for p in pos]
    for c in configs:
        if not validate(c, tol_hc=0.0):
            raise AssertionError("sampler produced an overlapping configuration")
    moves = max(cfg.sweeps * n * replicas, 1)
    meta = {"sweeps": cfg.sweeps, "burn_in": cfg.burn_in, "replicas": replicas, "acceptance_rate": accepted / moves}
    return GibbsBatch(configs, accepted / moves, meta)


def gibbs_sample(cfg: GibbsSamplerConfig) -> BallConfiguration:
    """Configuration after ``cfg.sweeps`` single-ball Metropolis sweeps from a lattice."""
    return gibbs_sample_batch(cfg, 1).configs[0]


def radial_histogram(configs, r: float, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Pair-distance counts on ``bins`` equal bins over ``[r, 4r]``."""
    edges = np.linspace(r, 4.0 * r, bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    for c in configs:
        _, _, _, dist = pair_table(c.positions, c.box)
        dist = dist[(dist >= r - 1e-6 * r) & (dist <= 4.0 * r)]
        counts += np.histogram(np.clip(dist, r, 4.0 * r), bins=edges)[0]
    return edges, counts


@dataclass
class ReversibilityReport:
    statistic: float
    p_value: float
    passed: bool
    edges: np.ndarray
    before: np.ndarray
    after: np.ndarray
    metadata: dict

    def histogram_rows(self) -> list[tuple]:
        return [
            (float(a), float(b), int(u), int(v))
            for a, b, u, v in zip(self.edges[:-1], self.edges[1:], self.before, self.after)
        ]

    def as_dict(self) -> dict:
        return {"chi2": self.statistic, "p_value": self.p_value, "passed": self.passed, **self.metadata}


def compare_histograms(before: np.ndarray, after: np.ndarray, alpha: float = 0.01) -> tuple[float, float, bool]:
    """Chi-square homogeneity test of two count vectors; empty bins are dropped."""
    keep = (before + after) > 0
    if keep.sum() < 2 or np.array_equal(before, after):
        return 0.0, 1.0, True
    res = stats.chi2_contingency(np.vstack([before[keep], after[keep]]))
    return float(res[0]), float(res[1]), bool(res[1] > alpha)


def reversibility_test(
    cfg: GibbsSamplerConfig,
    level: int,
    T: float,
    replicas: int,
    *,
    start: str = "gibbs",
    reflection_level: Optional[int] = None,
    alpha: float = 0.01,
    bins: int = 20,
    **kwargs,
) -> ReversibilityReport:
    """Compare radial distributions before and after evolving sampled replicas for time T.

    ``start='lattice'`` replaces the Gibbs draws by identical lattice starts,
    a non-equilibrium control on which the test should fail.

    The drift is frozen on the ``2**-level`` grid while the reflection is
    resolved on the finer ``2**-reflection_level`` noise grid (default two
    levels finer).  Projecting only at drift-grid times leaves an atom of
    pairs at exact contact whose mass scales like the square root of the
    step, which this histogram test is sensitive to.
    """
    from hardball.integrator import simulate_ske_n

    if reflection_level is None:
        reflection_level = level + 2
    if reflection_level < level:
        raise InputError("reflection level must not be coarser than the drift level")
    if start == "gibbs":
        batch = gibbs_sample_batch(cfg, replicas)
        initial, meta = batch.configs, dict(batch.metadata)
    elif start == "lattice":
        x0 = lattice_placement(cfg)
        initial = [BallConfiguration(x0, cfg.radius, cfg.box) for _ in range(replicas)]
        meta = {"replicas": replicas}
    else:
        raise InputError(f"unknown start {start!r}")
    final = []
    for i, c in enumerate(initial):
        if T == 0:
            final.append(c)
            continue
        seed = int(np.random.SeedSequence([int(cfg.seed), 1, i]).generate_state(1, np.uint64)[0])
        path = sample_path(seed, reflection_level, T, c.n, c.dim)
        traj, _ = simulate_ske_n(c, cfg.pair, cfg.free, path, drift_level=level, **kwargs)
        wrapped = np.mod(traj.final.positions, cfg.box)
        final.append(BallConfiguration(wrapped, cfg.radius, cfg.box))
    edges, before = radial_histogram(initial, cfg.radius, bins)
    _, after = radial_histogram(final, cfg.radius, bins)
    stat, p, ok = compare_histograms(before, after, alpha)
    meta.update({"start": start, "level": level, "reflection_level": reflection_level, "T": T, "alpha": alpha})
    return ReversibilityReport(stat, p, ok, edges, before, after, meta)
