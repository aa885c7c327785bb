"""Command-line front end.

    hardball <command> --spec <file> [--out <dir>] [--seed <u64>]

The spec file holds ``key = value`` lines with ``#`` comments.  A
``manifest.json`` written by an earlier run is also accepted as a spec file and
reproduces that run.  Exit status: 0 on success, 1 on input errors, 2 on an
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from hardball import __version__
from hardball.cluster import default_window_count, localized_simulate
from hardball.diagnostics import (
    continuity_envelope,
    diagnostics_continuity,
    diagnostics_nbj,
    exterior_sphere_diagnostic,
    invariant_summary,
)
from hardball.errors import ConvergenceError, DomainError, InputError, InvariantViolation, PreconditionError
from hardball.geometry import BallConfiguration, min_pair_distance
from hardball.gibbs import GibbsSamplerConfig, gibbs_sample, lattice_placement, reversibility_test
from hardball.integrator import refinement_study, simulate_ske_n, uniqueness_probe
from hardball.io import write_histograms_csv, write_json, write_ledger_csv, write_trajectory_csv
from hardball.noise import sample_path
from hardball.potentials import ZERO_FREE, PairPotential, drift_tail_bound, ruelle_check

COMMANDS = ("simulate", "refine-study", "uniqueness-probe", "cluster-sim", "gibbs-sample", "reversibility", "diagnostics")


def _opt_float(text: str):
    return None if text.lower() in ("none", "free", "") else float(text)


def _cutoff(text: str):
    t = text.lower()
    return t if t in ("none", "default") else float(text)


def _int_list(text: str) -> list:
    return [int(v) for v in text.replace(",", " ").split()]


def _bool(text: str) -> bool:
    t = text.lower()
    if t not in ("true", "false", "1", "0", "yes", "no"):
        raise ValueError(f"not a boolean: {text}")
    return t in ("true", "1", "yes")


# key -> (parser, default)
KEYS = {
    "seed": (int, 0),
    "level": (int, 10),
    "drift_level": (lambda s: None if s.lower() == "none" else int(s), None),
    "T": (float, 1.0),
    "d": (int, 2),
    "r": (float, 1.0),
    "box": (_opt_float, None),
    "n_balls": (int, 2),
    "init": (str, "lattice"),
    "init_file": (str, ""),
    "spacing": (float, 1.5),
    "potential": (str, "none"),
    "beta": (float, 1.0),
    "a": (int, 4),
    "cutoff": (_cutoff, "default"),
    "tol_proj": (_opt_float, None),
    "max_iter": (int, 10_000),
    "n_list": (_int_list, [6, 7, 8, 9, 10]),
    "perturbation": (float, 1e-6),
    "M": (lambda s: None if s.lower() == "none" else int(s), None),
    "eps": (float, 1.0),
    "eps_guard": (_opt_float, None),
    "force_merge": (_int_list, []),
    "sweeps": (int, 200),
    "proposal_scale": (float, 0.5),
    "replicas": (int, 100),
    "reflection_level": (lambda s: None if s.lower() == "none" else int(s), None),
    "start": (str, "gibbs"),
    "ell": (float, 3.0),
    "delta": (float, 0.1),
    "write_trajectory": (_bool, True),
}


class SpecError(InputError):
    pass


def parse_spec(text: str) -> dict:
    """Parse ``key = value`` lines into typed values; unknown keys are errors."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise SpecError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise SpecError(f"line {lineno}: duplicate key {key!r}")
        try:
            out[key] = KEYS[key][0](value)
        except ValueError as exc:
            raise SpecError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return out


def load_spec(path: Path) -> tuple[dict, str]:
    """Returns the parsed keys and, for a manifest, its command."""
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        spec = data.get("spec", {})
        unknown = sorted(set(spec) - set(KEYS))
        if unknown:
            raise SpecError(f"unknown key {unknown[0]!r}")
        return spec, data.get("command")
    return parse_spec(text), None


def resolve(spec: dict) -> dict:
    full = {k: default for k, (_, default) in KEYS.items()}
    full.update(spec)
    return full


def _pair(s: dict) -> PairPotential:
    kind = s["potential"].lower()
    cutoff = s["cutoff"]
    if cutoff == "none":
        cutoff = None
    if kind in ("none", "zero"):
        return PairPotential.hard_core_only(s["r"])
    if kind in ("lj", "lennard-jones-6-12"):
        return PairPotential.lennard_jones(s["beta"], s["r"], cutoff)
    if kind == "riesz":
        return PairPotential.riesz(s["a"], s["beta"], s["r"], cutoff)
    raise SpecError(f"unknown potential {s['potential']!r}")


def _gibbs_cfg(s: dict, pair: PairPotential) -> GibbsSamplerConfig:
    if s["box"] is None:
        raise SpecError("gibbs sampling needs a periodic box")
    return GibbsSamplerConfig(
        s["box"], s["n_balls"], pair, sweeps=s["sweeps"], proposal_scale=s["proposal_scale"],
        seed=s["seed"], dim=s["d"], radius=s["r"],
    )


def _initial(s: dict, pair: PairPotential) -> BallConfiguration:
    init = s["init"]
    if init == "file":
        if not s["init_file"]:
            raise SpecError("init = file needs init_file")
        return BallConfiguration.from_text(Path(s["init_file"]).read_text())
    if init == "gibbs":
        return gibbs_sample(_gibbs_cfg(s, pair))
    if init == "lattice":
        n, d, r = s["n_balls"], s["d"], s["r"]
        if s["box"] is not None:
            cfg = GibbsSamplerConfig(s["box"], n, dim=d, radius=r)
            return BallConfiguration(lattice_placement(cfg), r, s["box"])
        if s["spacing"] < r:
            raise SpecError("lattice spacing below the hard-core diameter")
        m = int(math.ceil(n ** (1.0 / d) - 1e-12))
        grid = np.stack(np.meshgrid(*[np.arange(m)] * d, indexing="ij"), axis=-1).reshape(-1, d)[:n]
        return BallConfiguration((grid - (m - 1) / 2.0) * s["spacing"], r, None)
    raise SpecError(f"unknown init {init!r}")


def _check_sin(traj, tol: float) -> None:
    for i, p in enumerate(traj.positions):
        if p.shape[0] > 1:
            m = min_pair_distance(p, traj.box)
            if m < traj.radius - tol:
                raise InvariantViolation(f"hard core violated at step {i}: distance {m!r} < {traj.radius!r}")


def _check_support(summary: dict) -> None:
    if not summary["support_ok"]:
        raise InvariantViolation(f"local time increased away from contact (gap {summary['support_gap']!r})")


def _write_run(out: Path, traj, ledger, s, summary) -> list:
    _check_sin(traj, 1e-9 * traj.radius)
    _check_support(summary)
    files = []
    if s["write_trajectory"]:
        write_trajectory_csv(out / "trajectory.csv", traj)
        write_ledger_csv(out / "ledger.csv", traj, ledger)
        files += ["trajectory.csv", "ledger.csv"]
    return files


def _certificate(pair: PairPotential, r: float, d: int) -> dict:
    if pair.is_zero:
        return {"kind": pair.kind}
    cert = ruelle_check(pair, r, d)
    out = {"kind": pair.kind, "finite": cert.finite, "sum_grad_bound": cert.sum_grad_bound,
           "sum_hess_bound": cert.sum_hess_bound}
    if pair.cutoff is not None:
        out["drift_tail_bound"] = drift_tail_bound(pair, pair.cutoff, d, r)
    return out


def run(command: str, spec: dict, out: Path) -> dict:
    """Execute one experiment, writing artifacts into ``out``; returns the summary."""
    if command not in COMMANDS:
        raise SpecError(f"unknown command {command!r}")
    s = resolve(spec)
    out.mkdir(parents=True, exist_ok=True)
    pair = _pair(s)
    kw = {"tol_proj": s["tol_proj"], "max_iter": s["max_iter"]}
    files: list = []
    summary: dict = {"command": command}

    if command in ("simulate", "diagnostics", "cluster-sim"):
        x0 = _initial(s, pair)
        path = sample_path(s["seed"], s["level"], s["T"], x0.n, x0.dim)
        if command == "cluster-sim":
            traj, ledger, history = localized_simulate(
                x0, pair, path=path, M=s["M"], eps=s["eps"], eps_guard=s["eps_guard"],
                force_merge=s["force_merge"], **kw,
            )
            write_json(out / "partitions.json", [h.as_dict() for h in history])
            files.append("partitions.json")
            summary["windows"] = len(history)
            summary["merges"] = sum(len(h.merges) for h in history)
            summary["M"] = s["M"] if s["M"] is not None else default_window_count(s["T"], s["level"])
        else:
            traj, ledger = simulate_ske_n(x0, pair, path=path, drift_level=s["drift_level"], **kw)
        summary["invariants"] = invariant_summary(traj, ledger, path)
        summary["certificate"] = _certificate(pair, x0.radius, x0.dim)
        if command == "diagnostics":
            summary["nbj_m"] = diagnostics_nbj(traj, s["ell"], s["T"])
            summary["continuity"] = {
                "delta": s["delta"],
                "brownian": diagnostics_continuity(path, s["delta"]),
                "trajectory": diagnostics_continuity(traj, s["delta"]),
                "envelope": continuity_envelope(path, [s["delta"] / 4, s["delta"] / 2, s["delta"]]),
            }
            summary["exterior_sphere"] = exterior_sphere_diagnostic(traj.final, samples=200, seed=s["seed"])
        files += _write_run(out, traj, ledger, s, summary["invariants"])

    elif command == "refine-study":
        x0 = _initial(s, pair)
        rep = refinement_study(x0, pair, ZERO_FREE, s["seed"], s["n_list"], s["T"], **kw)
        summary.update({"table": rep.table(), "slope": rep.slope, "strictly_decreasing": rep.strictly_decreasing})

    elif command == "uniqueness-probe":
        x0 = _initial(s, pair)
        alt = x0.positions.copy()
        alt[0, 0] += s["perturbation"]
        x1 = x0.with_positions(alt)
        path = sample_path(s["seed"], s["level"], s["T"], x0.n, x0.dim)
        rep = uniqueness_probe(x0, x1, pair, ZERO_FREE, path, **kw)
        summary.update({
            "delta": rep.delta, "K": rep.K, "first_contact_step": rep.first_contact,
            "gronwall_ok": rep.gronwall_ok, "C": rep.C, "max_divergence": float(rep.divergence.max()),
        })
        if not rep.gronwall_ok:
            raise InvariantViolation("pre-contact divergence exceeds the Gronwall envelope")

    elif command == "gibbs-sample":
        cfg = _gibbs_cfg(s, pair)
        conf = gibbs_sample(cfg)
        (out / "configuration.txt").write_text(conf.to_text())
        files.append("configuration.txt")
        summary.update({"min_pair_distance": min_pair_distance(conf.positions, conf.box),
                        "sweeps": cfg.sweeps, "burn_in": cfg.burn_in})

    elif command == "reversibility":
        cfg = _gibbs_cfg(s, pair)
        rep = reversibility_test(cfg, s["level"], s["T"], s["replicas"], start=s["start"],
                                 reflection_level=s["reflection_level"], **kw)
        write_histograms_csv(out / "histograms.csv", rep.histogram_rows())
        files.append("histograms.csv")
        summary.update(rep.as_dict())

    write_json(out / "summary.json", summary)
    files.append("summary.json")
    manifest = {"command": command, "version": __version__, "seed": s["seed"], "spec": s, "outputs": files + ["manifest.json"]}
    write_json(out / "manifest.json", manifest)
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hardball", description="Brownian hard-ball simulations")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--spec", required=True, type=Path, help="key = value experiment file or a manifest.json")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="overrides the seed in the spec file")
    args = parser.parse_args(argv)
    try:
        spec, manifest_cmd = load_spec(args.spec)
        if manifest_cmd is not None and manifest_cmd != args.command:
            raise SpecError(f"manifest is for {manifest_cmd!r}, not {args.command!r}")
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise SpecError("seed must be an unsigned 64-bit integer")
            spec["seed"] = args.seed
        run(args.command, spec, args.out)
    except (InvariantViolation, ConvergenceError) as exc:
        print(f"hardball: invariant violation: {exc}", file=sys.stderr)
        return 2
    except (InputError, PreconditionError, DomainError, OSError, ValueError) as exc:
        print(f"hardball: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
