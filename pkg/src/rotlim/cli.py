"""Command-line entry point ``rotlim``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 failed
check in ``--assert`` mode.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, NumericError
from .fast_heat import HeatConfig, est_phi_scenario, make_forcing, rate_sweep
from .harness import SweepConfig, default_seed, emit_report, parse_config_file, run_convergence_suite
from .limit import LimitParams, LimitState, limit0_residual, limit_initial_data, simulate_limit
from .littlewood_paley import lp_property_battery
from .nsc import FlowParams, ill_prepared_data, matched_state, simulate, write_diagnostics_csv
from .spectral import GridSpec, SpectralScalar, SpectralVec2, curl2d, read_snapshots, write_snapshot

log = logging.getLogger("rotlim")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ASSERT = 0, 2, 3, 4


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


# --- subcommands ----------------------------------------------------------------------


def cmd_simulate(args) -> int:
    grid = GridSpec(args.n)
    params = FlowParams(args.eps, args.alpha, args.beta, args.mu, args.gamma, args.a)
    r0, u0 = ill_prepared_data(args.seed, args.eps, args.amp, grid, args.kmax)
    t0 = time.monotonic()
    res = simulate(matched_state(r0, u0, args.eps), params, args.T, args.dt, stride=args.stride)
    log.info("simulate finished in %.2fs", time.monotonic() - t0)
    if args.out:
        out = Path(args.out)
        write_snapshot(out, [[s.r, s.m[0], s.m[1]] for s in res.states])
        meta = {
            "kind": "nsc",
            "components": ["r", "m1", "m2"],
            "frame_dt": args.dt * args.stride,
            "times": [float(t) for t in res.times],
            "params": {k: getattr(params, k) for k in ("eps", "alpha", "beta", "mu", "gamma", "a")},
            "n": args.n,
            "seed": args.seed,
            "amp": args.amp,
        }
        _sidecar(out).write_text(json.dumps(meta, indent=2) + "\n")
    if args.diag:
        write_diagnostics_csv(res.diagnostics, args.diag)
    last = res.diagnostics[-1]
    print(
        f"t={last.t:g} energy={last.energy:.6g} dissipation={last.dissipation:.6g} "
        f"min_rho={last.min_rho:.4f} energy_excess={res.energy_excess():.3e}"
    )
    return EXIT_OK


def cmd_heat_decay(args) -> int:
    if len(args.eps_list) < 4:
        raise ConfigurationError("--eps-list needs at least 4 values")
    grid = GridSpec(args.n)
    if args.forcing == "estphi":
        rep = est_phi_scenario(args.eps_list, args.alpha, args.beta, args.s, grid, args.delta, args.T, args.dt_g)
    else:
        x1, _ = grid.points()
        phi0 = SpectralScalar.from_physical(grid, np.cos(x1)) if args.forcing == "none" else SpectralScalar.zeros(grid)
        forcing = make_forcing(args.forcing, grid, args.T, args.dt_g)
        tmpl = HeatConfig(args.eps_list[0], args.beta, args.s, args.delta, args.T, phi0, forcing, args.dt_g)
        rep = rate_sweep(args.eps_list, tmpl)
    body = rep.to_dict()
    text = json.dumps(body, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(f"slope={rep.slope:.4f} target={rep.slope_target:.4f} slope_ok={rep.slope_ok} band_ok={rep.band_ok}")
    if args.assert_ and not rep.passed:
        return EXIT_ASSERT
    return EXIT_OK


def _limit_init(args, grid: GridSpec) -> LimitState:
    if args.init == "seed":
        r0, u0 = ill_prepared_data(args.seed, 1.0, args.amp, grid, args.kmax)
        return limit_initial_data(r0, u0)
    frames = read_snapshots(args.init)
    if not frames:
        raise ConfigurationError(f"{args.init} holds no records")
    comps = frames[0]
    if comps[0].grid != grid:
        raise ConfigurationError(f"{args.init} has n={comps[0].grid.n}, expected --n {grid.n}")
    if len(comps) == 2:
        return LimitState(0.0, comps[0], comps[1])
    if len(comps) == 3:
        return limit_initial_data(comps[0], SpectralVec2((comps[1], comps[2])))
    raise ConfigurationError("init file must hold (omega, sigma) or (r0, u0_1, u0_2)")


def cmd_limit(args) -> int:
    grid = GridSpec(args.n)
    st0 = _limit_init(args, grid)
    params = LimitParams(args.mu, bool(args.beta_one))
    frames = simulate_limit(st0, params, args.T, args.dt, args.stride)
    if args.out:
        out = Path(args.out)
        write_snapshot(out, [[f.omega, f.sigma] for f in frames])
        meta = {
            "kind": "limit",
            "components": ["omega", "sigma"],
            "frame_dt": args.dt * args.stride,
            "times": [float(f.time) for f in frames],
            "params": {"mu": args.mu, "beta_is_one": bool(args.beta_one)},
            "n": args.n,
        }
        _sidecar(out).write_text(json.dumps(meta, indent=2) + "\n")
    print(f"frames={len(frames)} t_end={frames[-1].time:g}")
    return EXIT_OK


def cmd_limit0_residual(args) -> int:
    path = Path(args.traj)
    meta = {}
    side = _sidecar(path)
    if side.exists():
        meta = json.loads(side.read_text())
    frames = read_snapshots(path)
    frame_dt = args.frame_dt if args.frame_dt is not None else meta.get("frame_dt")
    if frame_dt is None:
        raise ConfigurationError("frame spacing unknown: pass --frame-dt or keep the .json sidecar")
    mu = args.mu if args.mu is not None else meta.get("params", {}).get("mu")
    if mu is None:
        raise ConfigurationError("viscosity unknown: pass --mu or keep the .json sidecar")
    kind = meta.get("kind") or ("limit" if len(frames[0]) == 2 else "nsc")
    if kind == "limit":
        omega = [f[0] for f in frames]
        sigma = [f[1] for f in frames]
    else:
        eps = args.eps if args.eps is not None else meta.get("params", {}).get("eps")
        if eps is None:
            raise ConfigurationError("eps unknown for a compressible trajectory: pass --eps")
        omega, sigma = [], []
        for r, m1, m2 in frames:
            rho = 1.0 + r.physical()
            if rho.min() <= 0:
                raise NumericError("trajectory frame has nonpositive density")
            u = SpectralVec2.from_physical(r.grid, np.stack([m1.physical(), m2.physical()]) / rho)
            omega.append(curl2d(u))
            sigma.append(r / eps)
    k = args.stride
    omega, sigma = omega[::k], sigma[::k]
    times = meta.get("times")
    times = times[::k] if times else [i * frame_dt * k for i in range(len(omega))]
    R = limit0_residual(omega, sigma, frame_dt * k, mu, args.s_neg, times=times)
    rows = list(zip(times[1:-1], R))
    if args.out:
        with Path(args.out).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "residual"])
            for t, v in rows:
                w.writerow([f"{t:.17g}", f"{v:.17g}"])
    print(f"frames={len(omega)} max_residual={float(np.max(R)):.6e}")
    return EXIT_OK


_SWEEP_KEYS = {
    "eps_list": "eps_list", "alpha": "alpha", "beta": "beta", "mu": "mu", "gamma": "gamma", "a": "a",
    "seed": "seed", "n": "n", "T": "T", "dt": "dt", "frame_dt": "frame_dt", "t_skip": "t_skip",
    "amp": "amp", "jobs": "jobs",
}


def cmd_sweep(args) -> int:
    kwargs = {k: getattr(args, dest) for dest, k in _SWEEP_KEYS.items() if getattr(args, dest) is not None}
    if "eps_list" not in kwargs:
        raise ConfigurationError("--eps-list is required (flag or config file)")
    cfg = SweepConfig(**kwargs)
    t0 = time.monotonic()
    rep = run_convergence_suite(cfg)
    log.info("sweep finished in %.2fs", time.monotonic() - t0)
    if args.out:
        emit_report(rep, args.out, "json")
    if args.csv:
        emit_report(rep, args.csv, "csv")
    for m in rep.members:
        print(
            f"eps={m.eps:<10g} {m.status:<6} div={m.div_l2t:.4g} residual={m.residual_l2:.4g} "
            f"sigma={m.sigma_linf:.4g} distance={m.distance:.4g}"
        )
    for name, ok in rep.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if args.assert_ and not rep.passed:
        return EXIT_ASSERT
    return EXIT_OK


def cmd_lp_check(args) -> int:
    results = lp_property_battery(seed=args.seed)
    for r in results:
        print(r.line())
    if args.assert_ and not all(r.passed for r in results):
        return EXIT_ASSERT
    return EXIT_OK


# --- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rotlim", description="Fast rotation / low Mach / large bulk viscosity lab")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress and runtimes to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="key = value file; keys are flag names without dashes")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="random seed (default: $ROTLIM_SEED or 0)")

    s = sub.add_parser("simulate", help="run the compressible solver from ill-prepared data")
    common(s)
    s.add_argument("--eps", type=float, default=0.25)
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--mu", type=float, default=0.05)
    s.add_argument("--gamma", type=float, default=2.0)
    s.add_argument("--a", type=float, default=1.0)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--dt", type=float, default=2e-3)
    s.add_argument("--stride", type=int, default=5)
    s.add_argument("--amp", type=float, default=0.5)
    s.add_argument("--kmax", type=float, default=4.0)
    s.add_argument("--out", help="trajectory file (SPF1 records r, m1, m2)")
    s.add_argument("--diag", help="diagnostics CSV")
    s.set_defaults(func=cmd_simulate)

    h = sub.add_parser("heat-decay", help="fast-diffusion decay sweep")
    common(h, seed=False)
    h.add_argument("--beta", type=float, default=1.0)
    h.add_argument("--alpha", type=float, default=0.0, help="used by --forcing estphi")
    h.add_argument("--s", type=float, default=2.0)
    h.add_argument("--delta", type=float, default=0.1)
    h.add_argument("--T", type=float, default=1.0)
    h.add_argument("--eps-list", type=_float_list, default=None)
    h.add_argument("--forcing", choices=["none", "single", "multi", "estphi"], default="multi")
    h.add_argument("--n", type=int, default=64)
    h.add_argument("--dt-g", type=float, default=1.0 / 64)
    h.add_argument("--out")
    h.add_argument("--assert", dest="assert_", action="store_true")
    h.set_defaults(func=cmd_heat_decay)

    li = sub.add_parser("limit", help="run the limit (omega, sigma) system")
    common(li)
    li.add_argument("--mu", type=float, default=0.05)
    li.add_argument("--beta-one", type=int, choices=[0, 1], default=1)
    li.add_argument("--n", type=int, default=64)
    li.add_argument("--T", type=float, default=1.0)
    li.add_argument("--dt", type=float, default=2e-3)
    li.add_argument("--stride", type=int, default=5)
    li.add_argument("--init", default="seed", help="'seed' or an SPF1 file with (omega, sigma) or (r0, u0)")
    li.add_argument("--amp", type=float, default=0.5)
    li.add_argument("--kmax", type=float, default=4.0)
    li.add_argument("--out")
    li.set_defaults(func=cmd_limit)

    r = sub.add_parser("limit0-residual", help="residual of the limit vorticity law along a trajectory")
    common(r, seed=False)
    r.add_argument("--traj", required=False)
    r.add_argument("--stride", type=int, default=1)
    r.add_argument("--s-neg", type=float, default=3.0)
    r.add_argument("--frame-dt", type=float, default=None)
    r.add_argument("--mu", type=float, default=None)
    r.add_argument("--eps", type=float, default=None)
    r.add_argument("--out")
    r.set_defaults(func=cmd_limit0_residual)

    w = sub.add_parser("sweep", help="eps sweep of compressible runs against the limit")
    common(w)
    w.add_argument("--eps-list", type=_float_list, default=None)
    for name, typ in (("alpha", float), ("beta", float), ("mu", float), ("gamma", float), ("a", float),
                      ("n", int), ("T", float), ("dt", float), ("frame-dt", float), ("t-skip", float),
                      ("amp", float), ("jobs", int)):
        w.add_argument(f"--{name}", type=typ, default=None)
    w.add_argument("--out", help="JSON report")
    w.add_argument("--csv", help="CSV report")
    w.add_argument("--assert", dest="assert_", action="store_true")
    w.set_defaults(func=cmd_sweep)

    lp = sub.add_parser("lp-check", help="Littlewood-Paley property battery")
    common(lp)
    lp.add_argument("--assert", dest="assert_", action="store_true")
    lp.set_defaults(func=cmd_lp_check)
    return p


def _apply_config_file(parser: argparse.ArgumentParser, args: argparse.Namespace, argv: Sequence[str]) -> argparse.Namespace:
    """Fill options from ``--config``; flags given on the command line win."""
    if not getattr(args, "config", None):
        return args
    sub = next(
        a for a in parser._subparsers._group_actions if isinstance(a, argparse._SubParsersAction)  # noqa: SLF001
    ).choices[args.command]
    by_flag = {opt.lstrip("-"): act for act in sub._actions for opt in act.option_strings}  # noqa: SLF001
    defaults = {}
    for key, raw in parse_config_file(args.config).items():
        act = by_flag.get(key)
        if act is None or key in ("config", "help"):
            raise ConfigurationError(f"unknown config key {key!r} for {args.command}")
        if isinstance(act, argparse._StoreTrueAction):  # noqa: SLF001
            defaults[act.dest] = raw.lower() in ("1", "true", "yes", "on")
            continue
        try:
            val = act.type(raw) if act.type else raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigurationError(f"config key {key!r}: {exc}") from None
        if act.choices is not None and val not in act.choices:
            raise ConfigurationError(f"config key {key!r}: {raw!r} not in {list(act.choices)}")
        defaults[act.dest] = val
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _apply_config_file(parser, args, argv)
        if hasattr(args, "seed") and args.seed is None:
            args.seed = default_seed()
        if getattr(args, "command", None) == "heat-decay" and args.eps_list is None:
            args.eps_list = [2.0**-k for k in range(1, 7)]
        if getattr(args, "command", None) == "limit0-residual" and not args.traj:
            raise ConfigurationError("--traj is required")
        return args.func(args)
    except (ConfigurationError, DomainError) as exc:
        print(f"rotlim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"rotlim: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"rotlim: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
