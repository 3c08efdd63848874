"""Command-line interface.

Commands: ``simulate``, ``certify``, ``relative``, ``brackets``, ``lemmas``.
Exit codes: 0 success, 2 certificate or structural check failed, 3 solver
failure, 4 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config, write_snapshot
from .errors import BudgetExceeded, ConfigError, NSCHError, NonConvergence, PositivityLoss
from .grid import Grid
from .ledger import CertTolerances, Ledger, certify, write_csv

EXIT_OK, EXIT_CERT, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4
RNG_NAME = "numpy PCG64 (numpy.random.default_rng)"

log = logging.getLogger("nschtherm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _say(args, *msg):
    if not args.quiet:
        print(*msg)


def _outdir(args) -> Path:
    out = Path(args.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create {out}: {exc.strerror}") from None
    return out


def _write_info(out: Path, **items):
    with open(out / "run_info.txt", "w") as fh:
        fh.write(f"version = {__version__}\nrng = {RNG_NAME}\n")
        for k, v in items.items():
            fh.write(f"{k} = {v}\n")


# ---------------------------------------------------------------------------
# simulate / certify


def _simulate(cfg: RunConfig, out: Path):
    """Run, write ``ledger.csv`` and snapshots; returns the ledger rows."""
    from .solver import iterate

    ctrl = cfg.controls
    led = Ledger(cfg.params)
    state = cfg.initial_state()
    last = None
    try:
        for st in iterate(state, cfg.params, ctrl):
            led(st)
            if st.step == 0 or (ctrl.snapshot_every and st.step % ctrl.snapshot_every == 0):
                write_snapshot(st, out)
            last = st
    finally:
        write_csv(led.rows, out / "ledger.csv")
    if last is not None and not (ctrl.snapshot_every and last.step % ctrl.snapshot_every == 0) \
            and last.step != 0:
        write_snapshot(last, out)
    return led.rows


def _tolerances(cfg: RunConfig) -> CertTolerances:
    return CertTolerances(**cfg.certify)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args)
    _write_info(out, command="simulate", config=args.config, seed=cfg.controls.seed)
    rows = _simulate(cfg, out)
    rep = certify(rows, _tolerances(cfg))
    _say(args, f"{len(rows) - 1} steps to t = {rows[-1].time:.6g}; ledger written to {out / 'ledger.csv'}")
    _say(args, rep.summary())
    if args.strict and not rep.passed:
        return EXIT_CERT
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args)
    _write_info(out, command="certify", config=args.config, seed=cfg.controls.seed)
    rows = _simulate(cfg, out)
    rep = certify(rows, _tolerances(cfg))
    with open(out / "certificates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["certificate", "passed", "worst_step", "worst_value"])
        for c in rep.certificates:
            w.writerow([c.name, int(c.passed), c.worst_step, repr(float(c.worst_value))])
    _say(args, rep.summary())
    return EXIT_OK if rep.passed else EXIT_CERT


# ---------------------------------------------------------------------------
# relative


def _experiment_config(cfg: RunConfig):
    from .relenergy import ExperimentConfig

    if cfg.ic_kind != "manufactured":
        raise ConfigError("relative --refine needs [ic] kind = manufactured")
    ic = cfg.ic
    extra = set(ic) - {"a_phi", "a_theta", "a_u", "t_prep", "dt_prep"}
    if extra:
        raise ConfigError(f"relative --refine does not support [ic] keys {sorted(extra)}")
    g = cfg.grid
    return ExperimentConfig(g.nx, g.ny, cfg.controls.dt, cfg.controls.t_end, cfg.params,
                            ic.get("a_phi", 0.5), ic.get("a_theta", 0.1), ic.get("a_u", 0.1),
                            g.lx, g.ly, ic.get("t_prep", 0.0), ic.get("dt_prep", 1e-4))


def cmd_relative(args) -> int:
    from .relenergy import align_trajectory, gronwall_verify, weak_strong_experiment
    from .solver import run

    cfg = load_config(args.config)
    if cfg.params.delta != 0:
        raise ConfigError("the relative energy check needs delta = 0")
    if args.refine < 1 or (args.refine > 1 and args.refine % 2):
        raise ConfigError("--refine must be 1 or even")
    if args.k_scale < 0:
        raise ConfigError("--k-scale must be nonnegative")
    out = _outdir(args)
    kw = dict(k_scale=args.k_scale, viscous=args.viscous)
    if args.reference is not None:
        ref = load_config(args.reference)
        if ref.params != cfg.params:
            raise ConfigError("both configurations must share [physics]")
        dt = max(cfg.controls.dt, ref.controls.dt)
        t_end = cfg.controls.t_end
        if abs(ref.controls.t_end - t_end) > 1e-12 * max(1.0, t_end):
            raise ConfigError("both configurations must share t_end")
        coarse = cfg.grid if cfg.grid.size <= ref.grid.size else ref.grid
        times = dt * np.arange(int(round(t_end / dt)) + 1)
        a = align_trajectory(run(cfg.initial_state(), cfg.params, cfg.controls), coarse, times, cfg.params)
        b = align_trajectory(run(ref.initial_state(), ref.params, ref.controls), coarse, times, cfg.params)
        rep = gronwall_verify(a, b, cfg.params, **kw)
        _write_info(out, command="relative", config=args.config, reference=args.reference)
    else:
        rep = weak_strong_experiment(_experiment_config(cfg), args.refine, **kw)
        _write_info(out, command="relative", config=args.config, refine=args.refine)
    rep.write_csv(out / "relenergy.csv")
    _say(args, f"max R = {rep.max_R:.6e}  min slack = {rep.min_slack:.6e}  "
               f"k_min = {rep.k_min:.6g}  M = {rep.M:.6g}")
    if args.strict and not (rep.min_slack >= 0 and np.isfinite(rep.k_min)):
        return EXIT_CERT
    return EXIT_OK


# ---------------------------------------------------------------------------
# brackets


# K DE is a consistency error that shrinks with h, so it is reported only.
BRACKET_TOL = {"J_antisymmetry": 1e-12, "K_symmetry": 1e-12, "J_DS": 1e-12}


def cmd_brackets(args) -> int:
    from .generic import assemble_J, assemble_K, check_brackets, random_generic_state
    from .thermo import PhysParams

    if args.grid < 4:
        raise ConfigError("--grid must be at least 4")
    g = Grid(args.grid, args.grid)
    params = PhysParams()
    rng = np.random.default_rng(args.seed)
    q = random_generic_state(g, params, rng)
    rep = check_brackets(g, params, rng, args.probes, state=q)
    out = _outdir(args)
    _write_info(out, command="brackets", grid=args.grid, seed=args.seed, probes=args.probes)
    failed = [k for k, tol in BRACKET_TOL.items() if getattr(rep, k) > tol]
    if rep.K_min_probe < -1e-10 * rep.K_norm:
        failed.append("K_min_probe")
    with open(out / "brackets.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "value"])
        for name, val in rep.rows():
            w.writerow([name, repr(float(val))])
    for name, val in rep.rows():
        _say(args, f"{name:22s} {float(val): .6e}{'  FAIL' if name in failed else ''}")
    if args.dump:
        for name, mat in (("J", assemble_J(q)), ("K", assemble_K(q, params))):
            np.savetxt(out / f"{name}.dat", mat, fmt="%.17g")
    return EXIT_CERT if failed else EXIT_OK


# ---------------------------------------------------------------------------
# lemmas


def cmd_lemmas(args) -> int:
    from .thermo import lemma_suite, write_lemma_csv

    if args.samples < 1:
        raise ConfigError("--samples must be positive")
    if not 0.0 <= args.delta_max < 1.0:
        raise ConfigError("--delta-max must lie in [0, 1)")
    rng = np.random.default_rng(args.seed)
    rows = lemma_suite(rng, args.samples, (0.0, args.delta_max), field_trials=args.trials)
    out = _outdir(args)
    _write_info(out, command="lemmas", samples=args.samples, seed=args.seed,
                delta_max=args.delta_max)
    write_lemma_csv(rows, out / "lemmas.csv")
    bad = [r for r in rows if r.violations]
    for r in rows:
        _say(args, f"{r.lemma:18s} {r.max_value: .6e}  violations {r.violations}")
    return EXIT_CERT if bad else EXIT_OK


# ---------------------------------------------------------------------------


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # the copy attached to each command must not overwrite flags given before it
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = _Parser(add_help=False)
    common.add_argument("--output-dir", default=d("."), help="directory for output files")
    common.add_argument("--strict", action="store_true", default=d(False),
                        help="exit 2 when a certificate fails (simulate, relative)")
    common.add_argument("--quiet", action="store_true", default=d(False),
                        help="suppress the summary")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = _Parser(prog="nschtherm", description=__doc__.splitlines()[0],
                parents=[_global_flags(suppress=False)])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="run a simulation and write the ledger")
    s.add_argument("config")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("certify", parents=[common], help="simulate and certify (exit 2 on failure)")
    s.add_argument("config")
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("relative", parents=[common], help="relative energy / Gronwall check")
    s.add_argument("config")
    s.add_argument("reference", nargs="?", help="configuration of the reference run")
    s.add_argument("--refine", type=int, default=2, help="refinement factor (1 or even)")
    s.add_argument("--k-scale", type=float, default=1.0, help="constant in the regularity weight")
    s.add_argument("--viscous", choices=("full", "sym"), default="full",
                   help="viscous heating form in the entropy residual")
    s.set_defaults(func=cmd_relative)

    s = sub.add_parser("brackets", parents=[common], help="bracket structure checks")
    s.add_argument("--grid", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--probes", type=int, default=200)
    s.add_argument("--dump", action="store_true", help="also write J.dat and K.dat")
    s.set_defaults(func=cmd_brackets)

    s = sub.add_parser("lemmas", parents=[common], help="scalar inequality scans")
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=200, help="random field pairs for ratio scans")
    s.add_argument("--delta-max", type=float, default=0.0,
                   help="sample delta in [0, delta-max) for the inequalities")
    s.set_defaults(func=cmd_lemmas)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, BudgetExceeded) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PositivityLoss, NonConvergence) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NSCHError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
