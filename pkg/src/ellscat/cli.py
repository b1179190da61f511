"""Command line experiment runner.

Every subcommand reads a TOML file (``--config``), writes its artifacts to
``--out`` and echoes the effective configuration into ``report.txt``.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .duhamel import TailError
from .equations import get_preset, semilinear_power
from .null_condition import BilinearFormField, flat_transform, is_null, null_decay_probe
from .rates import fit_rate
from .solver import (
    ChartError,
    NonContractionError,
    SolveConfig,
    radial_ode_oracle,
    solve_dirichlet,
    solve_scatter,
    solve_scatter_refined,
    solve_zero,
)
from .sphere import SpectralField, SphereBasis
from .storage import load_trajectory, save_trajectory, write_csv

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_NONCONTRACTION = 3
EXIT_TAIL = 4
EXIT_CHART = 5


class ConfigError(ValueError):
    pass


_GRID_KEYS = ("d", "lmax", "oversample", "r0", "dt", "span")
_SOLVE_KEYS = ("s", "eps_fp", "max_iter", "t1", "t_data", "noise_rel", "max_escalations", "fit_window", "zero_mean")


def load_config(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _preset_from(cfg):
    d = int(cfg.get("grid", {}).get("d", 3))
    if "preset" in cfg:
        name = cfg["preset"]
        try:
            if isinstance(name, dict):
                kind = name.get("kind")
                params = {k: v for k, v in name.items() if k != "kind"}
                params.setdefault("d", d)
                pre = get_preset(kind, **params)
            else:
                pre = get_preset(name)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad preset: {exc}") from exc
    elif "nonlinearity" in cfg:
        nl = cfg["nonlinearity"]
        try:
            pre = semilinear_power(d, int(nl["p"]), float(nl.get("kappa", 1.0)))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad nonlinearity: {exc}") from exc
    else:
        raise ConfigError("config needs 'preset' or [nonlinearity]")
    if pre.d != d:
        raise ConfigError(f"preset is for d = {pre.d} but grid.d = {d}")
    return pre


def _solve_config(cfg, mode, threads):
    grid = cfg.get("grid", {})
    solve = cfg.get("solve", {})
    unknown = set(grid) - set(_GRID_KEYS)
    unknown |= set(solve) - set(_SOLVE_KEYS) - {"refined", "dirichlet"}
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    kw = {k: grid[k] for k in _GRID_KEYS if k in grid}
    kw.update({k: solve[k] for k in _SOLVE_KEYS if k in solve})
    if "fit_window" in kw:
        kw["fit_window"] = tuple(kw["fit_window"])
    try:
        return SolveConfig(mode=mode, threads=threads, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _field_from_modes(basis, ncomp, spec):
    """Data from ``modes = [[comp, ell, m, value], ...]`` or ``[ell, m, value]``."""
    c = np.zeros((ncomp, basis.nmodes))
    for entry in spec:
        if len(entry) == 3:
            comp, (ell, m, val) = 0, entry
        elif len(entry) == 4:
            comp, ell, m, val = entry
        else:
            raise ConfigError(f"bad mode entry {entry}")
        try:
            c[int(comp), basis.mode_index(int(ell), int(m))] += float(val)
        except (KeyError, IndexError, ValueError) as exc:
            raise ConfigError(f"bad mode entry {entry}: {exc}") from exc
    return SpectralField(basis, c)


def build_data(cfg, basis, ncomp, seed):
    data = cfg.get("data", {})
    if "trace_file" in data:
        T, _ = load_trajectory(data["trace_file"])
        if not T.basis.same_as(basis) or T.ncomp != ncomp:
            raise ConfigError("trace file does not match the grid")
        return SpectralField(basis, T.v[0].copy())
    field = SpectralField.zeros(basis, ncomp)
    if "modes" in data:
        field = field + _field_from_modes(basis, ncomp, data["modes"])
    if "random" in data:
        rnd = data["random"]
        rng = np.random.default_rng(seed)
        amp = float(rnd.get("amplitude", 0.01))
        lo, hi = int(rnd.get("lmin", 0)), int(rnd.get("lmax", basis.lmax))
        sel = (basis.ell >= lo) & (basis.ell <= hi)
        c = np.zeros((ncomp, basis.nmodes))
        c[:, sel] = amp * rng.standard_normal((ncomp, int(sel.sum())))
        field = field + SpectralField(basis, c)
    return field


def _fmt(v):
    if isinstance(v, float):
        return "%.17g" % v
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def write_report(path, items):
    with open(path, "w") as fh:
        for k, v in items:
            fh.write(f"{k} = {_fmt(v)}\n")


def _config_items(cfg, prefix="config"):
    out = []
    for k, v in sorted(cfg.items()):
        if isinstance(v, dict):
            out.extend(_config_items(v, f"{prefix}.{k}"))
        else:
            out.append((f"{prefix}.{k}", v))
    return out


def _run_solve(args, cfg, kind):
    pre = _preset_from(cfg)
    refined = bool(cfg.get("solve", {}).get("refined", False))
    mode = {"infinity": "scatter_refined" if refined else "scatter", "dirichlet": "dirichlet", "zero": "zero_scatter"}[kind]
    if kind == "zero" and cfg.get("solve", {}).get("dirichlet", False):
        mode = "zero_dirichlet"
    sc = _solve_config(cfg, mode, args.threads)
    basis = sc.basis()
    u0 = build_data(cfg, basis, pre.spec.ncomp, args.seed)
    if kind == "infinity":
        sol = (solve_scatter_refined if refined else solve_scatter)(u0, pre.spec, sc)
    elif kind == "dirichlet":
        sol = solve_dirichlet(u0, pre.spec, sc)
    else:
        sol = solve_zero(u0, pre.spec, sc, dirichlet=mode == "zero_dirichlet")
    out = Path(args.out)
    save_trajectory(out / "trajectory.bin", sol.trajectory, sc.s)
    r, z = sol.decay_samples()
    write_csv(out / "decay.csv", ["r", "z_err"], [r, z])
    rep = sol.report
    items = [("preset", pre.name)] + _config_items(cfg)
    items += [(f"effective.{k}", v) for k, v in asdict(sc).items()]
    items += [
        ("converged", rep.converged),
        ("iterations", rep.iterations),
        ("final_increment", rep.final_residual),
        ("contraction_ratios", list(rep.ratios)),
        ("escalations", rep.escalations),
        ("t0", rep.t0),
        ("predicted_nu", rep.predicted_nu),
        ("predicted_nu_structured", rep.predicted_nu_structured),
        ("fitted_slope", rep.slope),
        ("fit_intercept", rep.intercept),
        ("fit_residual", rep.fit_residual),
        ("fit_window", list(sc.window)),
        ("tail.noise_modes", rep.tail.get("noise_modes")),
        ("tail.dropped_tails", rep.tail.get("dropped_tails")),
        ("tail.error_estimate", rep.tail.get("tail_error_estimate")),
    ]
    if rep.first_iterate_rate is not None:
        items.append(("first_iterate_slope", rep.first_iterate_rate))
        items.append(("refined_slope", rep.refined_slope))
    if sol.v_plus is not None:
        items.append(("v_plus", list(sol.v_plus.coeffs.ravel())))
    write_report(out / "report.txt", items)
    return EXIT_OK if rep.converged else EXIT_NONCONTRACTION


def _matrix(entry):
    try:
        re = np.asarray(entry["real"], dtype=float)
        im = np.asarray(entry.get("imag", np.zeros((2, 2))), dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad matrix: {exc}") from exc
    if re.shape != (2, 2) or im.shape != (2, 2):
        raise ConfigError("form matrices must be 2x2")
    return BilinearFormField.constant(re + 1j * im)


def _forms(cfg):
    forms = cfg.get("null", {}).get("forms")
    if not forms:
        raise ConfigError("[null] needs a 'forms' table")
    return {name: _matrix(entry) for name, entry in forms.items()}


def _run_check_null(args, cfg):
    items = []
    for name, A in _forms(cfg).items():
        F = flat_transform(A).coeffs[:, :, A.kmax]
        items.append((f"{name}.is_null", is_null(A)))
        items.append((f"{name}.flat_diag_abs", [abs(F[0, 0]), abs(F[1, 1])]))
    write_report(Path(args.out) / "report.txt", _config_items(cfg) + items)
    return EXIT_OK


def _run_probe_null(args, cfg):
    nc = cfg.get("null", {})
    lmax = int(nc.get("lmax", 8))
    b = SphereBasis(2, lmax)
    u0 = _field_from_modes(b, 1, nc.get("u0", []))
    v0 = _field_from_modes(b, 1, nc.get("v0", nc.get("u0", [])))
    t_range = tuple(nc.get("t_range", (1.0, 10.0)))
    s = float(nc.get("s", 2.6))
    items = _config_items(cfg)
    out = Path(args.out)
    for name, A in _forms(cfg).items():
        try:
            res = null_decay_probe(u0, v0, A, s=s, t_range=t_range, dt=float(nc.get("dt", 0.25)))
        except ValueError as exc:
            raise ConfigError(f"probe {name}: {exc}") from exc
        write_csv(out / f"probe_{name}.csv", ["t", "y_norm"], [res.times, res.norms])
        items += [(f"{name}.slope", res.slope), (f"{name}.predicted_slope", -2.0 if is_null(A) else 0.0),
                  (f"{name}.fit_residual", res.residual)]
    write_report(out / "report.txt", items)
    return EXIT_OK


def _run_rates(args, cfg):
    rc = cfg.get("rates", {})
    d = int(cfg.get("grid", {}).get("d", 3))
    ps = rc.get("p", [5])
    amps = rc.get("amplitude", [0.1])
    kappa = float(rc.get("kappa", 1.0))
    sc = _solve_config({k: v for k, v in cfg.items() if k in ("grid", "solve")}, "scatter", args.threads)
    basis = sc.basis()
    rows = {"d": [], "p": [], "amplitude": [], "predicted_nu": [], "slope": [], "residual": []}
    for p in ps:
        pre = semilinear_power(d, int(p), kappa)
        for amp in amps:
            u0 = SpectralField.mode(basis, 0, value=float(amp) * np.sqrt(4 * np.pi if d == 3 else 2 * np.pi))
            sol = solve_scatter(u0, pre.spec, sc)
            for k, v in zip(rows, (d, p, amp, pre.nu1, sol.report.slope, sol.report.fit_residual)):
                rows[k].append(v)
    write_csv(Path(args.out) / "rates.csv", list(rows), list(rows.values()))
    write_report(Path(args.out) / "report.txt", _config_items(cfg) + [(k, list(v)) for k, v in rows.items()])
    return EXIT_OK


def _run_radial(args, cfg):
    rc = cfg.get("radial", {})
    try:
        d, p = int(rc["d"]), int(rc["p"])
        kappa, bv = float(rc.get("kappa", 1.0)), float(rc["boundary_value"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad [radial] table: {exc}") from exc
    prof = radial_ode_oracle(d, p, kappa, bv, r_max=float(rc.get("r_max", 1e4)))
    lo, hi = rc.get("window", (2.0, 100.0))
    r = np.geomspace(1.0, float(rc.get("r_out", 100.0)), int(rc.get("samples", 200)))
    u = prof(r)
    ul = prof.linear(r)
    z = np.abs(u - ul) * r ** (d - 2)
    write_csv(Path(args.out) / "radial.csv", ["r", "u", "u_lin", "z_err"], [r, u, ul, z])
    sel = (r >= lo) & (r <= hi)
    fit = fit_rate(r[sel], z[sel])
    write_report(Path(args.out) / "report.txt", _config_items(cfg) + [
        ("asymptotic_c", prof.c), ("predicted_nu", float((d - 2) * p - d)),
        ("fitted_slope", fit.slope), ("fit_residual", fit.residual),
    ])
    return EXIT_OK


def _run_verify(args, cfg):
    from . import verify

    results = verify.run_all()
    items = [(name, "pass" if ok else "fail") for name, ok, _ in results]
    items += [(f"{name}.value", val) for name, _, val in results]
    write_report(Path(args.out) / "report.txt", items)
    for name, ok, val in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} ({_fmt(val)})")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_VERIFY


COMMANDS = {
    "solve-infinity": lambda a, c: _run_solve(a, c, "infinity"),
    "solve-dirichlet": lambda a, c: _run_solve(a, c, "dirichlet"),
    "solve-zero": lambda a, c: _run_solve(a, c, "zero"),
    "check-null": _run_check_null,
    "probe-null": _run_probe_null,
    "rates": _run_rates,
    "verify": _run_verify,
    "oracle-radial": _run_radial,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="ellscat", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "verify", help="TOML experiment file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
        Path(args.out).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonContractionError as exc:
        print(f"non-contraction: {exc}", file=sys.stderr)
        return EXIT_NONCONTRACTION
    except TailError as exc:
        print(f"tail failure: {exc}", file=sys.stderr)
        return EXIT_TAIL
    except ChartError as exc:
        print(f"chart exit: {exc}", file=sys.stderr)
        return EXIT_CHART


if __name__ == "__main__":
    sys.exit(main())
