from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardball import cli
from hardball.diagnostics import (
    continuity_envelope,
    diagnostics_continuity,
    diagnostics_nbj,
    exterior_sphere_diagnostic,
    invariant_summary,
)
from hardball.errors import InputError
from hardball.geometry import BallConfiguration
from hardball.integrator import simulate_ske_n
from hardball.noise import sample_path
from hardball.potentials import ZERO_FREE, PairPotential
from hardball.skorohod import Trajectory


def _traj(pos, dt=0.1):
    pos = np.asarray(pos, dtype=float)
    return Trajectory(np.arange(pos.shape[0]) * dt, pos, 1.0)


def test_nbj_examples():
    far = np.full((3, 4, 2), 10.0)
    far[:, :, 1] = np.arange(4) * 3.0
    assert diagnostics_nbj(_traj(far), 2.0) == 0
    one = far.copy()
    one[1, 0] = (0.5, 0.0)
    assert diagnostics_nbj(_traj(one), 2.0) == 1
    # label 3 is the third closest at t = 0
    late = far.copy()
    late[2, 2] = (0.0, 0.0)
    assert diagnostics_nbj(_traj(late), 2.0) == 3
    assert diagnostics_nbj(_traj(late), 2.0, T=0.1) == 0


def _nbj_brute(pos, ell):
    n = pos.shape[1]
    order = sorted(range(n), key=lambda j: (float(np.sum(pos[0, j] ** 2)), j))
    for m in range(n, -1, -1):
        if m == 0:
            return 0
        label_m = order[m - 1]
        if any(np.sum(pos[t, label_m] ** 2) <= ell * ell for t in range(pos.shape[0])):
            return m


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 7), st.floats(0.5, 4.0))
def test_nbj_matches_brute_force(seed, n, ell):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-5, 5, (6, n, 2))
    assert diagnostics_nbj(_traj(pos), ell) == _nbj_brute(pos, ell)


def test_continuity_examples():
    const = np.ones((11, 2, 2))
    assert diagnostics_continuity(const, 0.3, dt=0.125) == 0.0
    t = np.arange(17) * 0.125
    lin = np.stack([3.0 * t, np.zeros_like(t)], axis=1)[:, None, :]
    assert diagnostics_continuity(lin, 0.5, dt=0.125) == 1.5
    with pytest.raises(InputError):
        diagnostics_continuity(const, 0.0, dt=0.1)
    with pytest.raises(InputError):
        diagnostics_continuity(const, 0.1)


def test_continuity_on_brownian_path_reports_constant():
    path = sample_path(3, 10, 1.0, 1, 1)
    env = continuity_envelope(path, [2.0**-6, 2.0**-4, 2.0**-2])
    assert math.isfinite(env["constant"]) and env["constant"] > 0
    mods = [row["modulus"] for row in env["rows"]]
    assert mods == sorted(mods)


def test_exterior_sphere_condition_holds():
    c = BallConfiguration(np.array([[0.0, 0], [1.0, 0], [0.5, 0.9]]), 1.0)
    res = exterior_sphere_diagnostic(c, samples=300)
    assert res["tested"] > 0 and res["passed"]


def test_invariant_summary_fields():
    x0 = BallConfiguration(np.array([[0.0, 0], [1.05, 0], [0, 1.1]]), 1.0)
    path = sample_path(0, 7, 0.5, 3, 2)
    traj, led = simulate_ske_n(x0, PairPotential.lennard_jones(cutoff=2.5), ZERO_FREE, path)
    s = invariant_summary(traj, led, path)
    assert s["min_pair_distance"] >= 1 - 1e-9
    assert s["support_ok"] and s["negative_local_time_steps"] == 0
    assert s["reconstruction_error"] < 1e-12
    assert s["momentum_residual"] < 1e-10 * path.n_steps


SIMULATE = """\
# small free-space run
seed = 3
level = 6
T = 0.5
d = 2
n_balls = 4
spacing = 1.1
potential = lj
cutoff = 2.5
"""


def _write(tmp_path, text, name="spec.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_cli_simulate_outputs_and_determinism(tmp_path):
    spec = _write(tmp_path, SIMULATE)
    assert cli.main(["simulate", "--spec", str(spec), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["simulate", "--spec", str(spec), "--out", str(tmp_path / "b")]) == 0
    for name in ("trajectory.csv", "ledger.csv", "summary.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["spec"]["level"] == 6


def test_cli_manifest_replay(tmp_path):
    spec = _write(tmp_path, SIMULATE)
    cli.main(["simulate", "--spec", str(spec), "--out", str(tmp_path / "a")])
    manifest = tmp_path / "a" / "manifest.json"
    assert cli.main(["simulate", "--spec", str(manifest), "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "c" / "trajectory.csv").read_bytes()
    assert cli.main(["gibbs-sample", "--spec", str(manifest), "--out", str(tmp_path / "d")]) == 1


def test_cli_unknown_key_exits_1(tmp_path, capsys):
    spec = _write(tmp_path, SIMULATE + "colour = blue\n")
    assert cli.main(["simulate", "--spec", str(spec), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "colour" in err and "line 10" in err


def test_cli_bad_value_and_missing_file(tmp_path):
    assert cli.main(["simulate", "--spec", str(_write(tmp_path, "level = ten\n")), "--out", str(tmp_path)]) == 1
    assert cli.main(["simulate", "--spec", str(tmp_path / "missing.txt"), "--out", str(tmp_path)]) == 1


def test_cli_invariant_violation_exits_2(tmp_path, monkeypatch):
    real = cli.simulate_ske_n

    def broken(*args, **kwargs):
        traj, led = real(*args, **kwargs)
        traj.positions[-1, 1] = traj.positions[-1, 0]
        return traj, led

    monkeypatch.setattr(cli, "simulate_ske_n", broken)
    out = tmp_path / "out"
    assert cli.main(["simulate", "--spec", str(_write(tmp_path, SIMULATE)), "--out", str(out)]) == 2
    assert not (out / "trajectory.csv").exists()


@pytest.mark.parametrize(
    "command,extra,artifact",
    [
        ("diagnostics", "", "summary.json"),
        ("cluster-sim", "M = 4\neps = 3.0\n", "partitions.json"),
        ("refine-study", "n_list = 3,4,5\n", "summary.json"),
        ("uniqueness-probe", "", "summary.json"),
    ],
)
def test_cli_commands(tmp_path, command, extra, artifact):
    spec = _write(tmp_path, SIMULATE + extra)
    assert cli.main([command, "--spec", str(spec), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / artifact).exists()


def test_cli_gibbs_commands(tmp_path):
    text = "seed = 1\nbox = 8\nn_balls = 6\nsweeps = 10\nreplicas = 4\nlevel = 4\nT = 0.25\n"
    spec = _write(tmp_path, text)
    assert cli.main(["gibbs-sample", "--spec", str(spec), "--out", str(tmp_path / "g")]) == 0
    conf = BallConfiguration.from_text((tmp_path / "g" / "configuration.txt").read_text())
    assert conf.n == 6 and conf.box == 8.0
    assert cli.main(["reversibility", "--spec", str(spec), "--out", str(tmp_path / "r")]) == 0
    rows = (tmp_path / "r" / "histograms.csv").read_text().splitlines()
    assert rows[0] == "bin_left,bin_right,count_before,count_after" and len(rows) == 21


def test_cli_seed_override(tmp_path):
    spec = _write(tmp_path, SIMULATE)
    cli.main(["simulate", "--spec", str(spec), "--out", str(tmp_path / "a"), "--seed", "99"])
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 99
    assert cli.main(["simulate", "--spec", str(spec), "--out", str(tmp_path / "b"), "--seed", "-1"]) == 1
