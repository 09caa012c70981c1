"""Batch front-end: JSON experiment configs in, CSV plus summary out.

Usage: nfde-lab <task> --config <path> [--out <dir>]

Tasks: check, simulate, pair, invert, mass-audit, covering. Every run
writes result.csv, summary.txt, and config.echo.json (the parsed config
with all defaults materialized) into the output directory. Floats are
serialized with round-trip precision, so identical configs produce
byte-identical outputs.

Exit codes: 0 success / all checks passed; 1 a requested condition failed;
2 malformed config; 3 structural precondition violated (includes unstable
operators and unordered initial pairs); 4 a monitored invariant exceeded
its threshold; 5 divergence.

The environment variable NFDE_THREADS caps internal parallelism; the
implementation is vectorized and runs within any cap of one or more.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys as _sys

import numpy as np

from .base_flow import GOLDEN_FREQ, TorusFlow, TorusPoint, TrigPoly
from .compartment import (
    CONDITIONS,
    CompartmentalSystem,
    NeutralDiagSystem,
    PipeSpec,
    ShapeFn,
    TransportSpec,
    check_condition,
    mass_balance_residual,
    suggest_a,
)
from .d_operator import (
    AtomicMeasureFamily,
    DOperatorSpec,
    MeasureAtom,
    SamplingConfig,
    eval_Dhat_segment,
    identity_poly_matrix,
    invert_Dhat,
    stability_margin,
)
from .errors import (
    ConfigError,
    DivergenceError,
    HorizonError,
    NfdeError,
    NoReturnTimesError,
    SingularBError,
    StructuralPreconditionError,
    UnorderedPairError,
    UnstableMarginError,
)
from .history import HistoryGrid, export_csv, from_function, import_csv
from .integrator import (
    SimConfig,
    covering_diagnostic,
    pair_to_csv,
    required_z_horizon,
    run,
    run_ordered_pair,
    trajectory_to_csv,
)
from .ordering import ConeSpec, make_comparison_upper

TASKS = ("check", "simulate", "pair", "invert", "mass-audit", "covering")

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_CONFIG = 2
EXIT_STRUCTURAL = 3
EXIT_THRESHOLD = 4
EXIT_DIVERGED = 5


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def thread_cap() -> int:
    raw = os.environ.get("NFDE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# --- config parsing ---------------------------------------------------------


def _req(node: dict, key: str, where: str):
    if key not in node:
        raise ConfigError(f"missing key {key!r} in {where}")
    return node[key]


def _parse_poly(node, where: str) -> TrigPoly:
    if isinstance(node, (int, float)):
        return TrigPoly.const(float(node))
    if not isinstance(node, dict):
        raise ConfigError(f"{where}: polynomial must be a number or an object")
    constant = float(node.get("constant", 0.0))
    terms = []
    for t in node.get("terms", []):
        k = _req(t, "k", f"{where}.terms")
        terms.append((np.atleast_1d(k), float(t.get("cos", 0.0)), float(t.get("sin", 0.0))))
    return TrigPoly.from_terms(constant, terms)


def _parse_shape(node, where: str) -> ShapeFn:
    if node is None or node == "identity":
        return ShapeFn.identity()
    if node == "saturate":
        return ShapeFn.saturate()
    if isinstance(node, dict) and node.get("kind") == "sine_bend":
        return ShapeFn.sine_bend(float(_req(node, "eps", where)))
    raise ConfigError(f"{where}: unknown shape {node!r}")


def _parse_matrix_of(parser, node, m, where):
    if not isinstance(node, list) or len(node) != m:
        raise ConfigError(f"{where}: expected an {m}x{m} matrix")
    out = []
    for i, row in enumerate(node):
        if not isinstance(row, list) or len(row) != m:
            raise ConfigError(f"{where}[{i}]: expected {m} entries")
        out.append([parser(v, f"{where}[{i}][{j}]") for j, v in enumerate(row)])
    return out


def _parse_flow(cfg: dict) -> TorusFlow:
    node = cfg.get("flow", {})
    freqs = node.get("freqs", [GOLDEN_FREQ])
    try:
        return TorusFlow(np.asarray(freqs, dtype=float))
    except (ValueError, TypeError) as e:
        raise ConfigError(f"flow: {e}") from e


def _parse_transports(node, m, where):
    def one(v, w):
        shape = ShapeFn.identity()
        if isinstance(v, dict) and ("gain" in v or "shape" in v):
            shape = _parse_shape(v.get("shape"), w)
            gain = _parse_poly(v.get("gain", 0.0), w)
        else:
            gain = _parse_poly(v, w)
        return TransportSpec(gain, shape)

    return tuple(tuple(row) for row in _parse_matrix_of(one, node, m, where))


def _parse_system(cfg: dict, flow: TorusFlow):
    node = _req(cfg, "system", "config")
    kind = _req(node, "kind", "system")
    m = int(_req(node, "m", "system"))
    if kind == "neutral_diag":
        c = [_parse_poly(v, "system.c") for v in _req(node, "c", "system")]
        if len(c) != m:
            raise ConfigError("system.c must have m entries")
        alpha = np.asarray(_req(node, "alpha", "system"), dtype=float)
        rho_node = _req(node, "rho", "system")
        rho = np.atleast_2d(np.asarray(rho_node, dtype=float))
        gains = _parse_transports(_req(node, "gains", "system"), m, "system.gains")
        try:
            return NeutralDiagSystem(
                m=m,
                c=tuple(c),
                alpha=alpha,
                rho=rho,
                transports=gains,
                flow=flow,
                g6=bool(node.get("g6", False)),
            )
        except (ValueError, TypeError) as e:
            raise ConfigError(f"system: {e}") from e
    if kind == "compartmental":
        dspec = _parse_dspec(node, m, flow)
        transports = _parse_transports(
            _req(node, "transports", "system"), m, "system.transports"
        )
        outflows = tuple(
            _parse_transports([[v]], 1, "system.outflows")[0][0]
            for v in node.get("outflows", [0.0] * m)
        )
        inflows = tuple(
            _parse_poly(v, "system.inflows") for v in node.get("inflows", [0.0] * m)
        )
        pipes_node = node.get("pipes")
        if pipes_node is None:
            pipes = tuple(tuple(PipeSpec.instant() for _ in range(m)) for _ in range(m))
        else:
            if len(pipes_node) != m or any(len(row) != m for row in pipes_node):
                raise ConfigError("system.pipes must be an m x m grid of atom lists")
            pipes = tuple(
                tuple(
                    PipeSpec(tuple((float(r), float(w)) for r, w in cell))
                    for cell in row
                )
                for row in pipes_node
            )
        try:
            return CompartmentalSystem(
                m=m,
                transports=transports,
                outflows=outflows,
                inflows=inflows,
                pipes=pipes,
                dspec=dspec,
                flow=flow,
            )
        except (ValueError, TypeError) as e:
            raise ConfigError(f"system: {e}") from e
    if kind == "d_operator":
        return _parse_dspec(node, m, flow)
    raise ConfigError(f"system.kind {kind!r} is not supported")


def _parse_dspec(node, m, flow) -> DOperatorSpec:
    if "B" in node:
        B = _parse_matrix_of(_parse_poly, node["B"], m, "system.B")
    else:
        B = identity_poly_matrix(m)
    atoms = []
    for k, at in enumerate(node.get("atoms", [])):
        lag = float(_req(at, "lag", f"system.atoms[{k}]"))
        weight = _parse_matrix_of(
            _parse_poly, _req(at, "weight", f"system.atoms[{k}]"), m, "weight"
        )
        atoms.append(MeasureAtom(lag, weight))
    try:
        return DOperatorSpec(m, B, AtomicMeasureFamily(tuple(atoms)), flow)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"system: {e}") from e


def _parse_cone(cfg: dict, m: int):
    node = cfg.get("cone")
    if node is None:
        return None
    if "a_diag" in node:
        A = np.diag(np.asarray(node["a_diag"], dtype=float))
    elif "A" in node:
        A = np.asarray(node["A"], dtype=float)
    else:
        raise ConfigError("cone needs a_diag or A")
    horizon = node.get("horizon", "inf")
    horizon = math.inf if horizon in ("inf", None) else float(horizon)
    try:
        return ConeSpec(A, horizon, bool(node.get("assume_hurwitz", False)))
    except ValueError as e:
        raise ConfigError(f"cone: {e}") from e


def _parse_sampling(cfg: dict) -> SamplingConfig:
    node = cfg.get("sampling", {})
    return SamplingConfig(
        grid_per_dim=int(node.get("grid_per_dim", 64)),
        orbit_points=int(node.get("orbit_points", 512)),
        orbit_step=float(node.get("orbit_step", 0.37)),
    )


def _parse_sim(cfg: dict, cone) -> SimConfig:
    node = cfg.get("sim", {})
    try:
        return SimConfig(
            h=float(node.get("h", 0.01)),
            t_end=float(node.get("t_end", 10.0)),
            inv_tol=float(node.get("inv_tol", 1e-8)),
            n_trunc=(int(node["n_trunc"]) if node.get("n_trunc") is not None else None),
            log_stride=int(node.get("log_stride", 1)),
            cone=cone,
            tol_cone=float(node.get("tol_cone", 1e-9)),
            divergence_limit=float(node.get("divergence_limit", 1e9)),
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(f"sim: {e}") from e


def _parse_history(node, where, m, step, horizon) -> HistoryGrid:
    kind = _req(node, "kind", where)
    horizon = float(node.get("horizon", horizon))
    step = float(node.get("step", step))
    if kind == "constant":
        value = np.atleast_1d(np.asarray(_req(node, "value", where), dtype=float))
        if value.size != m:
            raise ConfigError(f"{where}: value must have {m} entries")
        return from_function(lambda s: np.tile(value, (s.size, 1)), step, horizon)
    if kind == "sinusoid":
        base = np.atleast_1d(np.asarray(_req(node, "base", where), dtype=float))
        amp = np.atleast_1d(np.asarray(node.get("amp", [0.0] * m), dtype=float))
        period = np.atleast_1d(np.asarray(node.get("period", [1.0] * m), dtype=float))
        phase = np.atleast_1d(np.asarray(node.get("phase", [0.0] * m), dtype=float))
        if not (base.size == amp.size == period.size == phase.size == m):
            raise ConfigError(f"{where}: component counts must equal m")

        def f(s):
            return base[None, :] + amp[None, :] * np.sin(
                2.0 * np.pi * s[:, None] / period[None, :] + phase[None, :]
            )

        return from_function(f, step, horizon)
    if kind == "csv":
        return import_csv(_req(node, "path", where))
    raise ConfigError(f"{where}: unknown history kind {kind!r}")


def _echo(cfg, outdir):
    with open(os.path.join(outdir, "config.echo.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_summary(outdir, lines):
    with open(os.path.join(outdir, "summary.txt"), "w") as fh:
        for line in lines:
            fh.write(line + "\n")


def _write_rows(outdir, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    with open(os.path.join(outdir, "result.csv"), "w", newline="") as fh:
        fh.write(buf.getvalue())


# --- tasks -------------------------------------------------------------------


def cmd_check(cfg: dict, outdir: str) -> int:
    flow = _parse_flow(cfg)
    sys_obj = _parse_system(cfg, flow)
    if not isinstance(sys_obj, NeutralDiagSystem):
        raise ConfigError("task=check needs a neutral_diag system")
    node = cfg.get("check", {})
    conds = node.get("conditions", ["G5"])
    for c in conds:
        if c not in CONDITIONS:
            raise ConfigError(f"unknown condition {c!r}")
    sampling = _parse_sampling(cfg)
    a_node = node.get("a", "auto")
    rows = []
    lines = [f"task=check conditions={','.join(conds)}"]
    all_pass = True
    for cond in conds:
        if a_node == "auto":
            trial = node.get("trial_a")
            sugg = suggest_a(sys_obj, cond, sampling, trial)
            a = sugg.a
            lines.append(f"{cond}: suggested a = {[_fmt(v) for v in a]}")
        else:
            a = np.asarray(a_node, dtype=float)
        report = check_condition(sys_obj, cond, a, sampling)
        all_pass &= report.passed
        for compv in report.components:
            if compv.skipped:
                rows.append([cond, compv.index, "skipped", "", "", "pass"])
                continue
            for sub in compv.subs:
                witness = ";".join(_fmt(v) for v in sub.witness.theta)
                rows.append(
                    [
                        cond,
                        compv.index,
                        sub.name,
                        _fmt(sub.min_margin),
                        witness,
                        "pass" if compv.passed else "fail",
                    ]
                )
                lines.append(
                    f"{cond} comp {compv.index} {sub.name}: margin {_fmt(sub.min_margin)}"
                    f"{' (strict)' if sub.strict_everywhere else ''}"
                )
            if compv.note:
                lines.append(f"{cond} comp {compv.index}: {compv.note}")
        for notev in report.notes:
            lines.append(f"{cond}: note: {notev}")
        lines.append(f"{cond}: {'PASS' if report.passed else 'FAIL'}")
    _write_rows(outdir, ["condition", "component", "sub", "margin", "witness_theta", "verdict"], rows)
    lines.append(f"overall={'PASS' if all_pass else 'FAIL'}")
    _write_summary(outdir, lines)
    print("\n".join(lines))
    return EXIT_OK if all_pass else EXIT_FAILED_CHECK


def _sim_setup(cfg):
    flow = _parse_flow(cfg)
    sys_obj = _parse_system(cfg, flow)
    if isinstance(sys_obj, DOperatorSpec):
        raise ConfigError("simulation tasks need a compartmental system")
    cone = _parse_cone(cfg, sys_obj.m)
    sim = _parse_sim(cfg, cone)
    need = required_z_horizon(sys_obj, sim)
    z0 = _parse_history(
        _req(cfg, "z_init", "config"), "z_init", sys_obj.m, sim.h, need + 2 * sim.h
    )
    p0 = TorusPoint(np.asarray(cfg.get("theta0", [0.0] * flow.dim), dtype=float))
    return flow, sys_obj, sim, z0, p0


def cmd_simulate(cfg: dict, outdir: str) -> int:
    flow, sys_obj, sim, z0, p0 = _sim_setup(cfg)
    log = run(sys_obj, p0, z0, sim)
    trajectory_to_csv(log, os.path.join(outdir, "result.csv"))
    mass_dev = float(np.max(np.abs(log.M - log.M[0])))
    lines = [
        "task=simulate",
        f"steps={int(round(sim.t_end / sim.h))}",
        f"max_abs_mass_deviation={_fmt(mass_dev)}",
        f"final_z={[_fmt(v) for v in log.z[-1]]}",
    ]
    code = EXIT_OK
    thr = cfg.get("thresholds", {}).get("mass_residual")
    if thr is not None and mass_dev > float(thr):
        lines.append(f"threshold_exceeded=mass_residual ({_fmt(mass_dev)} > {_fmt(thr)})")
        code = EXIT_THRESHOLD
    _write_summary(outdir, lines)
    print("\n".join(lines))
    return code


def cmd_pair(cfg: dict, outdir: str) -> int:
    flow, sys_obj, sim, z_x, p0 = _sim_setup(cfg)
    if sim.cone is None:
        raise ConfigError("task=pair needs a cone")
    node = _req(cfg, "z_init_y", "config")
    if isinstance(node, dict) and node.get("kind") == "ordered_offset":
        lam = float(node.get("lam", 0.1))
        comp = make_comparison_upper(
            sim.cone, sys_obj.m, step=sim.h, horizon=z_x.horizon
        )
        yhat_x = eval_Dhat_segment(sys_obj.dspec, p0, z_x, z_x.J - int(
            np.ceil(sys_obj.dspec.support / sim.h - 1e-9)
        ))
        bump = invert_Dhat(
            sys_obj.dspec,
            p0,
            HistoryGrid(sim.h, comp.hist.samples[: yhat_x.J + 1], comp.hist.tail),
            sim.inv_tol,
        )
        rows = z_x.sample_many(-sim.h * np.arange(bump.J + 1)) + lam * bump.samples
        z_y = HistoryGrid(sim.h, rows, z_x.tail)
    else:
        z_y = _parse_history(node, "z_init_y", sys_obj.m, sim.h, z_x.horizon)
    plog = run_ordered_pair(sys_obj, p0, z_x, z_y, sim)
    pair_to_csv(plog, os.path.join(outdir, "result.csv"))
    min_margin = float(np.min(plog.cone_margin))
    max_gap = float(np.max(np.abs(plog.d_gap)))
    lines = [
        "task=pair",
        f"min_cone_margin={_fmt(min_margin)}",
        f"max_abs_d_gap={_fmt(max_gap)}",
        f"final_z_diff_sup={_fmt(plog.z_diff_sup[-1])}",
    ]
    code = EXIT_OK
    thr = cfg.get("thresholds", {}).get("cone_margin")
    if thr is not None and min_margin < float(thr):
        lines.append(f"threshold_exceeded=cone_margin ({_fmt(min_margin)} < {_fmt(thr)})")
        code = EXIT_THRESHOLD
    _write_summary(outdir, lines)
    print("\n".join(lines))
    return code


def cmd_invert(cfg: dict, outdir: str) -> int:
    flow = _parse_flow(cfg)
    sys_obj = _parse_system(cfg, flow)
    dspec = sys_obj if isinstance(sys_obj, DOperatorSpec) else sys_obj.dspec
    node = _req(cfg, "yhat", "config")
    tol = float(cfg.get("sim", {}).get("inv_tol", 1e-8))
    yhat = _parse_history(node, "yhat", dspec.m, 0.05, 40.0)
    p0 = TorusPoint(np.asarray(cfg.get("theta0", [0.0] * flow.dim), dtype=float))
    est = stability_margin(dspec, _parse_sampling(cfg))
    x = invert_Dhat(dspec, p0, yhat, tol)
    export_csv(x, os.path.join(outdir, "result.csv"))
    back = eval_Dhat_segment(dspec, p0, x, yhat.J)
    resid = float(np.max(np.abs(back.samples - yhat.samples)))
    lines = [
        "task=invert",
        f"lambda={_fmt(est.lam)}",
        f"k_bound={_fmt(est.k_bound)}",
        f"roundtrip_residual={_fmt(resid)}",
    ]
    _write_summary(outdir, lines)
    print("\n".join(lines))
    return EXIT_OK


def cmd_mass_audit(cfg: dict, outdir: str) -> int:
    flow, sys_obj, sim, z0, p0 = _sim_setup(cfg)
    log = run(sys_obj, p0, z0, sim)
    resid = mass_balance_residual(sys_obj, log)
    rows = [
        [_fmt(log.t[i]), _fmt(log.M[i]), _fmt(resid[i])] for i in range(log.t.size)
    ]
    _write_rows(outdir, ["t", "M", "residual"], rows)
    worst = float(np.max(np.abs(resid)))
    lines = ["task=mass-audit", f"max_abs_residual={_fmt(worst)}"]
    code = EXIT_OK
    thr = cfg.get("thresholds", {}).get("mass_residual")
    if thr is not None and worst > float(thr):
        lines.append(f"threshold_exceeded=mass_residual ({_fmt(worst)} > {_fmt(thr)})")
        code = EXIT_THRESHOLD
    _write_summary(outdir, lines)
    print("\n".join(lines))
    return code


def cmd_covering(cfg: dict, outdir: str) -> int:
    flow, sys_obj, sim, z0, p0 = _sim_setup(cfg)
    node = cfg.get("covering", {})
    tols = [float(v) for v in node.get("return_tols", [1e-1, 3e-2, 1e-2])]
    window = float(node.get("window", 50.0))
    t_min = float(node.get("t_min", 0.0))
    log = run(sys_obj, p0, z0, sim)
    rows = []
    lines = ["task=covering"]
    maxima = []
    for tol in tols:
        rep = covering_diagnostic(log, flow, p0, tol, window, t_min)
        maxima.append(rep.e_max)
        for T, dist, e in rep.entries:
            rows.append([_fmt(tol), _fmt(T), _fmt(dist), _fmt(e)])
        lines.append(
            f"return_tol={_fmt(tol)} returns={len(rep.entries)} "
            f"e_max={_fmt(rep.e_max)} e_min={_fmt(rep.e_min)}"
        )
    _write_rows(outdir, ["return_tol", "T", "phase_dist", "e"], rows)
    monotone = all(b <= a + 1e-15 for a, b in zip(maxima, maxima[1:]))
    lines.append(f"e_max_trend_monotone_decreasing={'yes' if monotone else 'no'}")
    lines.append("diagnostic_only=yes")
    _write_summary(outdir, lines)
    print("\n".join(lines))
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nfde-lab",
        description="Batch experiments on neutral compartmental delay systems.",
    )
    parser.add_argument("task", choices=TASKS)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=".")
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=_sys.stderr)
        return EXIT_CONFIG
    os.makedirs(args.out, exist_ok=True)
    dispatch = {
        "check": cmd_check,
        "simulate": cmd_simulate,
        "pair": cmd_pair,
        "invert": cmd_invert,
        "mass-audit": cmd_mass_audit,
        "covering": cmd_covering,
    }
    try:
        if int(cfg.get("schema", 1)) != 1:
            raise ConfigError(f"unsupported schema version {cfg.get('schema')!r}")
        cfg.setdefault("schema", 1)
        cfg["task"] = args.task
        cfg["_threads"] = thread_cap()
        # materialize defaults so the echo is complete
        sim = dict(cfg.get("sim", {}))
        for key, val in (
            ("h", 0.01),
            ("t_end", 10.0),
            ("inv_tol", 1e-8),
            ("n_trunc", None),
            ("log_stride", 1),
            ("tol_cone", 1e-9),
            ("divergence_limit", 1e9),
        ):
            sim.setdefault(key, val)
        cfg["sim"] = sim
        smp = dict(cfg.get("sampling", {}))
        for key, val in (("grid_per_dim", 64), ("orbit_points", 512), ("orbit_step", 0.37)):
            smp.setdefault(key, val)
        cfg["sampling"] = smp
        cfg.setdefault("flow", {"freqs": [GOLDEN_FREQ]})
        _echo(cfg, args.out)
        return dispatch[args.task](cfg, args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=_sys.stderr)
        return EXIT_CONFIG
    except (
        StructuralPreconditionError,
        UnstableMarginError,
        SingularBError,
        UnorderedPairError,
        HorizonError,
        NoReturnTimesError,
    ) as e:
        print(f"precondition violated: {e}", file=_sys.stderr)
        return EXIT_STRUCTURAL
    except DivergenceError as e:
        print(f"diverged: {e}", file=_sys.stderr)
        return EXIT_DIVERGED
    except NfdeError as e:
        print(f"error: {e}", file=_sys.stderr)
        return EXIT_CONFIG


def console_main():  # pragma: no cover
    _sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    console_main()
