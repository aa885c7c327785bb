from __future__ import annotations

import json

import numpy as np
import pytest

from hardball.cluster import (
    FcpRefusal,
    FcpWitness,
    default_window_count,
    detect_clusters,
    fcp_certificate,
    guard_check,
    localized_simulate,
)
from hardball.errors import InputError, PreconditionError
from hardball.geometry import BallConfiguration
from hardball.integrator import simulate_ske_n
from hardball.noise import sample_path
from hardball.potentials import ZERO_FREE, PairPotential
from hardball.skorohod import Trajectory

LJ = PairPotential.lennard_jones(beta=1.0, cutoff=2.5)


def cfg(points, r=1.0):
    return BallConfiguration(np.array(points, dtype=float), r)


def test_detect_examples():
    two = cfg([(0, 0), (1.01, 0), (50, 0), (51.01, 0)])
    assert detect_clusters(two, 0.1).groups == [[0, 1], [2, 3]]
    chain = cfg([(0, 0), (1.05, 0), (2.1, 0), (3.15, 0)])
    assert detect_clusters(chain, 0.1).groups == [[0, 1, 2, 3]]
    assert detect_clusters(chain, 0.01).groups == [[0], [1], [2], [3]]
    with pytest.raises(PreconditionError):
        detect_clusters(chain, 0.0)


def test_partition_labels():
    part = detect_clusters(cfg([(0, 0), (9, 0), (1.2, 0)]), 0.5)
    assert part.labels(3).tolist() == [0, 1, 0]


def _static(points, steps=4, dt=0.25):
    pos = np.broadcast_to(np.array(points, dtype=float), (steps + 1,) + np.shape(points)).copy()
    return Trajectory(np.arange(steps + 1) * dt, pos, 1.0)


def test_guard_examples():
    a = _static([(0.0, 0.0)])
    far = _static([(10.0, 0.0)])
    assert guard_check(a, far, (0.0, 1.0), 0.5)
    empty = Trajectory(a.times, np.zeros((5, 0, 2)), 1.0)
    assert guard_check(a, empty, (0.0, 1.0), 0.5)
    crossing = far.positions.copy()
    crossing[2, 0] = (1.2, 0.0)
    env = Trajectory(a.times, crossing, 1.0)
    assert not guard_check(a, env, (0.0, 1.0), 0.5)
    # outside the window the crossing is ignored
    assert guard_check(a, env, (0.75, 1.0), 0.5)
    # reach beyond r + eps_guard
    assert not guard_check(a, far, None, 0.5, reach=10.5)


def test_guard_grid_mismatch():
    with pytest.raises(InputError):
        guard_check(_static([(0, 0)], 4), _static([(5, 0)], 3), None, 0.5)


def test_default_window_count():
    assert default_window_count(1.0, 10) == 32
    assert default_window_count(0.5, 9) == 12


def _two_groups(sep=50.0):
    pts = [(0.0, 0.0), (1.1, 0.0), (sep, 0.0), (sep + 1.1, 0.0)]
    return cfg(pts)


def test_localized_equals_monolithic_bit_exact():
    x0 = _two_groups()
    path = sample_path(7, 7, 1.0, 4, 2)
    mono, mled = simulate_ske_n(x0, LJ, ZERO_FREE, path)
    loc, lled, hist = localized_simulate(x0, LJ, ZERO_FREE, path, eps=3.0, M=4)
    assert np.array_equal(mono.positions, loc.positions)
    assert lled.local_times == mled.local_times
    assert len(hist) == 4 and all(len(r.clusters) == 2 for r in hist)


def test_single_cluster_identical():
    x0 = cfg([(0.0, 0.0), (1.1, 0.0), (2.2, 0.3)])
    path = sample_path(1, 6, 0.5, 3, 2)
    mono = simulate_ske_n(x0, LJ, ZERO_FREE, path)[0]
    loc = localized_simulate(x0, LJ, ZERO_FREE, path, eps=3.0, M=2)[0]
    assert np.array_equal(mono.positions, loc.positions)


def test_forced_merge_replays_and_matches():
    x0 = _two_groups()
    path = sample_path(3, 6, 1.0, 4, 2)
    mono = simulate_ske_n(x0, LJ, ZERO_FREE, path)[0]
    loc, _, hist = localized_simulate(x0, LJ, ZERO_FREE, path, eps=3.0, M=4, force_merge=[1])
    assert np.max(np.abs(mono.positions - loc.positions)) <= 1e-9
    assert hist[1].merges and hist[1].clusters == [[0, 1, 2, 3]]
    assert not hist[0].merges
    json.dumps([h.as_dict() for h in hist])


def test_guard_violation_triggers_merge():
    # separate at the start, then drift inside the cutoff range (seed chosen so they do)
    x0 = cfg([(0.0, 0.0), (3.6, 0.0)])
    path = sample_path(1, 6, 1.0, 2, 2)
    mono = simulate_ske_n(x0, LJ, ZERO_FREE, path)[0]
    loc, _, hist = localized_simulate(x0, LJ, ZERO_FREE, path, eps=2.5, M=1)
    assert np.max(np.abs(mono.positions - loc.positions)) <= 1e-9
    assert any(h.merges for h in hist)


def test_localized_input_errors():
    x0 = _two_groups()
    path = sample_path(0, 3, 1.0, 4, 2)
    with pytest.raises(InputError):
        localized_simulate(x0, LJ, ZERO_FREE, path, M=100)
    with pytest.raises(InputError):
        localized_simulate(x0, LJ, ZERO_FREE, path, eps=1.0, eps_guard=2.0)
    with pytest.raises(InputError):
        localized_simulate(x0, LJ, ZERO_FREE, path, T=2.0)


def _confined(steps=8, T=1.0):
    rng = np.random.default_rng(0)
    base = np.array([(0, 0), (1.5, 0), (-1.5, 0), (0, 1.5), (0, -1.5), (1.5, 1.5)], dtype=float)
    jitter = rng.uniform(-0.05, 0.05, (steps + 1,) + base.shape)
    return Trajectory(np.linspace(0, T, steps + 1), base + jitter, 1.0)


def test_fcp_witness_for_confined_balls():
    traj = _confined()
    w = fcp_certificate(traj, eps=0.5, p=2, T=1.0, a=2.0, M=2)
    assert isinstance(w, FcpWitness)
    assert w.violations(traj) == []
    assert len(w.open_sets) == 2
    out = json.loads(json.dumps(w.as_dict()))
    assert out["M"] == 2 and len(out["open_sets"]) == 2


def test_fcp_single_window_single_box():
    # in d=2 a cube fits between the two radii only for small a
    pos = np.broadcast_to(np.array([(-0.5, 0.0), (0.5, 0.0)]), (5, 2, 2))
    traj = Trajectory(np.linspace(0, 1.0, 5), pos.copy(), 1.0)
    w = fcp_certificate(traj, eps=1e-3, p=1, T=1.0, a=0.4, M=1)
    assert isinstance(w, FcpWitness)
    lo, hi = w.open_sets[0]
    assert lo.shape[0] == 1


def test_fcp_refusal_names_window():
    steps = 8
    pos = np.zeros((steps + 1, 2, 2))
    pos[:, 1, 0] = np.linspace(3.0, 40.0, steps + 1)
    traj = Trajectory(np.linspace(0, 1.0, steps + 1), pos, 1.0)
    res = fcp_certificate(traj, eps=0.5, p=1, T=1.0, a=1.0, M=2)
    assert isinstance(res, FcpRefusal)
    assert f"window {res.window}" in res.reason


def test_witness_violations_detects_tampering():
    traj = _confined()
    w = fcp_certificate(traj, eps=0.5, p=2, T=1.0, a=2.0, M=2)
    lo, hi = w.open_sets[0]
    bad = FcpWitness(w.eps, w.p, w.T, w.a, w.M, [(lo * 0.1, hi * 0.1), w.open_sets[1]], w.radius, w.seed_resolution)
    assert bad.violations()
