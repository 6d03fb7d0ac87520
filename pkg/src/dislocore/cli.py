"""Command-line entry point.

    dislocore <command> --config run.json [--out DIR] [--assert-slope 2.0:0.3]

Commands: gamma, elastic, pn-solve, atom-solve, consistency, stability,
converge, check-assumptions. Exit codes: 0 success, 1 invalid input,
2 solver failure, 3 failed acceptance check.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .atomistic import SolverError, write_checkpoint
from .experiments import Setup, build_point, consistency, converge, default_sweep, material_for_eps, stability
from .material import ModelAssumptionError, check_assumptions, compute_eps, elastic_constants, sample_gamma_x
from .pn_solver import bps_energy, profile_for_material, sinusoidal_profile, solve_profile
from .potentials import LAYER_GAP, MORSE_C, MORSE_RE, ThreeBodyPotential, TwoBodyPotential

log = logging.getLogger("dislocore")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_ACCEPT = 0, 1, 2, 3

_POS = {"type": "number", "exclusiveMinimum": 0}
_TOL = {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-2}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "potential": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda": _POS,
                "gamma_sw": _POS,
                "sw_cutoff": _POS,
                "D_e": {"type": "number"},
                "c": _POS,
                "r_e": _POS,
                "d_z": _POS,
            },
        },
        "lattice": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "a": _POS,
                "L": _POS,
                "n_y": {"type": "integer", "minimum": 1},
                "R_cut": _POS,
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"ode_tol": _TOL, "newton_tol": _TOL, "krylov_tol": _TOL},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps": {"type": "array", "items": _POS, "minItems": 1},
                "D_e": {"type": "array", "items": _POS, "minItems": 1},
            },
        },
        "eps": _POS,
        "gamma_model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "K"],
            "properties": {
                "type": {"enum": ["sinusoidal"]},
                "K": _POS,
                "alpha_pn": _POS,
                "x_max": _POS,
                "n": {"type": "integer", "minimum": 2},
            },
        },
        "stability": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"gap_eps": _POS, "gap_n": {"type": "integer", "minimum": 3}},
        },
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
    },
}


class InputError(ValueError):
    """Invalid command line or configuration."""


class AcceptanceError(RuntimeError):
    """A requested acceptance check did not hold."""


def content_hash(data: bytes) -> str:
    """Git blob hash of the given bytes."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def load_config(path: Path) -> tuple[dict, bytes]:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not UTF-8 text") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"{path}: invalid config at {where}: {exc.message}") from exc
    a = cfg.get("lattice", {}).get("a", 1.0)
    if a != 1.0:
        raise InputError(f"{path}: only the lattice constant a = 1 is supported (lengths are in units of a)")
    sweep = cfg.get("sweep", {})
    if "eps" in sweep and "D_e" in sweep:
        raise InputError(f"{path}: give either sweep.eps or sweep.D_e, not both")
    return cfg, raw


def make_setup(cfg: dict) -> Setup:
    p = cfg.get("potential", {})
    lat = cfg.get("lattice", {})
    sol = cfg.get("solver", {})
    intra = ThreeBodyPotential(lam=p.get("lambda", 1.0), gamma=p.get("gamma_sw", 0.2), rc=p.get("sw_cutoff", 1.58))
    inter = TwoBodyPotential(De=p.get("D_e", 1.0), c=p.get("c", MORSE_C), re=p.get("r_e", MORSE_RE),
                             dz=p.get("d_z", LAYER_GAP))
    if "c" in p or "r_e" in p:
        from .potentials import decay_cutoff

        inter = replace(inter, r_cut=decay_cutoff(inter.c, inter.re, inter.dz))
    setup = Setup(intra=intra, inter=inter, L=lat.get("L", 20.0), n_y=lat.get("n_y", 1), R_cut=lat.get("R_cut"),
                  ode_tol=sol.get("ode_tol", 1e-12), newton_tol=sol.get("newton_tol", 1e-10),
                  krylov_tol=sol.get("krylov_tol", 1e-8))
    return setup


def sweep_eps(cfg: dict, setup: Setup) -> list[float]:
    sweep = cfg.get("sweep", {})
    if "eps" in sweep:
        return [float(e) for e in sweep["eps"]]
    if "D_e" in sweep:
        return [compute_eps(setup.intra, replace(setup.inter, De=d)).eps for d in sweep["D_e"]]
    return default_sweep()


def point_eps(cfg: dict, setup: Setup) -> float:
    if "eps" in cfg:
        return float(cfg["eps"])
    return compute_eps(setup.intra, setup.inter).eps


def parse_slope(text: str) -> tuple[float, float]:
    try:
        target, tol = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise InputError(f"--assert-slope expects TARGET:TOL, got {text!r}") from exc
    if tol <= 0:
        raise InputError("--assert-slope tolerance must be positive")
    return target, tol


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


class Writer:
    """Writes CSV outputs that start with a manifest comment line."""

    def __init__(self, out: Path, chash: str, command: str):
        self.out = out
        self.header = f"# manifest: config={chash} command={command} version={__version__}"
        self.files = []

    def csv(self, name: str, columns, rows) -> Path:
        path = self.out / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.header + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.files.append(name)
        return path


def check_slope(name: str, slope: float, stderr: float, spec) -> None:
    """Pass when the whole window slope +- 2 stderr lies in target +- tol."""
    if spec is None:
        return
    target, tol = spec
    se = 0.0 if not np.isfinite(stderr) else stderr
    lo, hi = slope - 2.0 * se, slope + 2.0 * se
    if not (np.isfinite(slope) and lo >= target - tol and hi <= target + tol):
        raise AcceptanceError(f"{name} slope {slope:.4f} +- {2 * se:.4f} outside [{target - tol:.4f}, {target + tol:.4f}]")
    log.info("%s slope %.4f +- %.4f within [%.4f, %.4f]", name, slope, 2 * se, target - tol, target + tol)


# commands

def cmd_gamma(cfg, setup, w, args):
    from .material import GammaSurface

    t, g, ga, gb = sample_gamma_x(GammaSurface(setup.inter), 201)
    w.csv("gamma.csv", ["t", "gamma", "gamma_A", "gamma_B"], zip(t, g, ga, gb))


def cmd_elastic(cfg, setup, w, args):
    rows = []
    for part in ("total", "A", "B"):
        el = elastic_constants(setup.intra, part)
        rows += [(part, "alpha1", el.alpha1), (part, "alpha2", el.alpha2), (part, "cross", el.cross),
                 (part, "residual_stress", el.residual_stress)]
    mat = compute_eps(setup.intra, setup.inter)
    rows += [("total", "gamma_xx0", mat.gamma_xx0), ("total", "eps", mat.eps)]
    w.csv("elastic.csv", ["part", "quantity", "value"], rows)


def cmd_pn_solve(cfg, setup, w, args):
    gm = cfg.get("gamma_model")
    if gm is not None:
        K = gm["K"]
        a_pn = gm.get("alpha_pn", 1.0)
        gamma = lambda t: K * np.sin(np.pi * np.asarray(t)) ** 2
        prof = solve_profile(gamma, a_pn, 2.0 * np.pi**2 * K, x_max=gm.get("x_max", 20.0), rtol=setup.ode_tol)
        x = np.linspace(-gm.get("x_max", 20.0), gm.get("x_max", 20.0), gm.get("n", 801))
        exact = sinusoidal_profile(x, K, a_pn)
        phi = prof.phi(x)
        w.csv("profile.csv", ["x", "phi", "phi_exact"], zip(x, phi, exact))
        w.csv("pn_summary.csv", ["quantity", "value"],
              [("sup_error", float(np.max(np.abs(phi - exact)))), ("energy", prof.energy(a_pn)),
               ("bps_bound", bps_energy(gamma, a_pn))])
        return
    mat = compute_eps(setup.intra, setup.inter)
    prof = profile_for_material(mat, rtol=setup.ode_tol)
    x = np.linspace(-20.0, 20.0, 801)
    surf = mat.rescaled_gamma()
    gamma = lambda t: surf.along_x(t, order=0)[0]
    w.csv("profile.csv", ["x", "phi", "dphi", "u_plus"], zip(x, prof.phi(x), prof.dphi(x), prof.u_plus(x)))
    w.csv("pn_summary.csv", ["quantity", "value"],
          [("eps", mat.eps), ("alpha_pn", mat.elastic.alpha_pn), ("energy", prof.energy(mat.elastic.alpha_pn)),
           ("bps_bound", bps_energy(gamma, mat.elastic.alpha_pn))])


def cmd_atom_solve(cfg, setup, w, args):
    pt = build_point(setup, point_eps(cfg, setup))
    res = pt.model.solve(tol=setup.newton_tol, krylov_tol=setup.krylov_tol)
    w.csv("atoms.csv", ["v1", "v2", "sublattice", "layer", "x", "y", "u"], pt.model.field_rows(res.x))
    w.csv("newton.csv", ["iteration", "force_inf_norm"], enumerate(res.history))
    w.csv("atom_summary.csv", ["quantity", "value"],
          [("eps", pt.eps), ("ndof", pt.model.ndof), ("energy", res.energy), ("residual", res.residual),
           ("iterations", res.iterations), ("error_X_eps", pt.model.error_norm(res.x))])
    write_checkpoint(w.out / "atoms.ckpt", pt.model.checkpoint_params(), res.x)
    w.files.append("atoms.ckpt")


def cmd_consistency(cfg, setup, w, args):
    rep = consistency(setup, sweep_eps(cfg, setup), workers=None)
    w.csv("consistency.csv", ["eps", "dual_residual"], rep.rows())
    w.csv("consistency_fit.csv", ["slope", "stderr"], [(rep.slope, rep.stderr)])
    check_slope("consistency", rep.slope, rep.stderr, args.assert_slope)


def cmd_converge(cfg, setup, w, args):
    rep = converge(setup, sweep_eps(cfg, setup), workers=None)
    # wall times go to the manifest log only, so the table stays deterministic
    w.csv("converge.csv", ["eps", "error_X_eps", "newton_residual", "iterations", "ndof"],
          [r[:5] for r in rep.rows()])
    w.csv("converge_fit.csv", ["slope", "stderr", "n_points", "n_excluded"],
          [(rep.slope, rep.stderr, len(rep.points), len(rep.excluded))])
    if rep.excluded:
        w.csv("converge_excluded.csv", ["eps", "reason"], rep.excluded)
        for e, why in rep.excluded:
            log.warning("eps %.6g excluded: %s", e, why)
    if len(rep.points) < 2:
        raise SolverError("fewer than two eps values converged")
    check_slope("convergence", rep.slope, rep.stderr, args.assert_slope)


def cmd_stability(cfg, setup, w, args):
    st = cfg.get("stability", {})
    rep = stability(setup, point_eps(cfg, setup), gap_eps=st.get("gap_eps", 0.025), gap_n=st.get("gap_n", 18))
    w.csv("stability.csv", ["quantity", "value", "residual"], rep.rows())


def cmd_check_assumptions(cfg, setup, w, args):
    st = cfg.get("stability", {})
    eps = point_eps(cfg, setup)
    rep = stability(setup, eps, gap_eps=st.get("gap_eps", 0.025), gap_n=st.get("gap_n", 18))
    inter = material_for_eps(setup, eps).inter if "eps" in cfg else setup.inter
    report = check_assumptions(setup.intra, inter, rep.continuum, (rep.gap_a, rep.gap_b),
                               seed=cfg.get("seed", 0))
    w.csv("assumptions.csv", ["assumption", "status", "value", "detail"], report.rows())


COMMANDS = {
    "gamma": cmd_gamma,
    "elastic": cmd_elastic,
    "pn-solve": cmd_pn_solve,
    "atom-solve": cmd_atom_solve,
    "consistency": cmd_consistency,
    "stability": cmd_stability,
    "converge": cmd_converge,
    "check-assumptions": cmd_check_assumptions,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dislocore", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    ap.add_argument("--out", type=Path, default=None, help="output directory (default ./out)")
    ap.add_argument("--assert-slope", default=None, metavar="TARGET:TOL",
                    help="fail with exit code 3 unless the fitted slope is within TARGET +- TOL")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    manifest = {"command": args.command, "version": __version__}
    code = EXIT_OK
    try:
        if args.assert_slope is not None:
            if args.command not in ("converge", "consistency"):
                raise InputError("--assert-slope applies to converge and consistency only")
            args.assert_slope = parse_slope(args.assert_slope)
        cfg, raw = load_config(args.config)
        chash = content_hash(raw)
        out = args.out or Path(cfg.get("output", "out"))
        out.mkdir(parents=True, exist_ok=True)
        manifest.update(config=cfg, config_hash=chash, config_path=str(args.config))
        setup = make_setup(cfg)
        w = Writer(out, chash, args.command)
        try:
            COMMANDS[args.command](cfg, setup, w, args)
        finally:
            manifest["outputs"] = w.files
    except (SolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        # LinAlgError derives from ValueError, so this handler comes first
        print(f"solver failure: {exc}", file=sys.stderr)
        code = EXIT_SOLVER
    except (InputError, ModelAssumptionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except AcceptanceError as exc:
        print(f"acceptance check failed: {exc}", file=sys.stderr)
        code = EXIT_ACCEPT
    manifest["wall_time_s"] = time.perf_counter() - t0
    manifest["exit_code"] = code
    with open(out / "run-manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
