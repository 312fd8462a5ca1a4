"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 parameter rejection,
3 I/O, 4 solver non-convergence.  Outputs carry no timestamps, so identical
configs give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any

import numpy as np

from vortexpatch import __version__
from vortexpatch.contour import near_boundary, stream_function_at, velocity_at
from vortexpatch.errors import ParameterError, PatchError, SolverError
from vortexpatch.fourier import FourierEvenSeries
from vortexpatch.solver import (
    BranchState,
    ContinuationConfig,
    Problem,
    continue_branch,
    make_problem,
    nash_moser_solve,
    verify_solution,
)
from vortexpatch.spectral import (
    BifurcationPoint,
    theta_roots,
    three_layer_bifurcation,
    three_layer_block,
    three_layer_window,
    two_layer_block,
)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VERIFY, EXIT_PARAM, EXIT_IO, EXIT_SOLVER = 0, 1, 2, 3, 4

DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "family": "two_layer",
    "m": 2,
    "root": "+",
    "J": 64,
    "N_q": 512,
    "n_max": 50,
    "output_dir": "out",
    "formats": ["csv", "json"],
    "solver": {
        "ds": 1e-3,
        "max_steps": 5,
        "newton_tol": 1e-11,
        "max_newton_iters": 12,
        "mode": "newton",
    },
}
SOLVER_KEYS = ("ds", "max_steps", "newton_tol", "max_newton_iters", "mode")

log = logging.getLogger("vortexpatch")


class ConfigError(Exception):
    """Malformed configuration (exit 2) as opposed to unreadable files (exit 3)."""


# --------------------------------------------------------------------------
# serialisation helpers


def fhex(x: float) -> str:
    return float(x).hex()


def unhex(s) -> float:
    return float.fromhex(s) if isinstance(s, str) else float(s)


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _digest(obj: Any) -> str:
    return hashlib.sha256(_canonical(obj).encode("utf-8")).hexdigest()


def _plain(obj: Any) -> Any:
    """numpy-free copy suitable for json."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(payload), indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _g17(x: float) -> str:
    return f"{float(x):.17g}"


# --------------------------------------------------------------------------
# configuration


def _coerce(value: str) -> Any:
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def load_config(path: str | None, overrides: list[str] | None = None) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if path:
        user = _read_json(Path(path))
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        solver = user.pop("solver", {}) or {}
        cfg.update(user)
        cfg["solver"].update(solver)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        value = _coerce(raw)
        if key in SOLVER_KEYS:
            cfg["solver"][key] = value
        else:
            cfg[key] = value
    return validate_config(cfg)


def validate_config(cfg: dict) -> dict:
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg.get('schema_version')!r}")
    family = cfg.get("family")
    if family not in ("two_layer", "three_layer"):
        raise ConfigError(f"family must be two_layer or three_layer, got {family!r}")
    try:
        cfg["m"] = int(cfg["m"])
        cfg["J"] = int(cfg["J"])
        cfg["N_q"] = int(cfg["N_q"])
        cfg["n_max"] = int(cfg["n_max"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"integer field malformed: {exc}") from exc
    if cfg["m"] < 2 or cfg["J"] < 1 or cfg["n_max"] < 2:
        raise ConfigError("need m >= 2, J >= 1, n_max >= 2")
    if cfg["N_q"] < 4 or cfg["N_q"] % 2:
        raise ConfigError("N_q must be an even integer >= 4")
    if cfg["solver"].get("mode") in ("nash-moser",):
        cfg["solver"]["mode"] = "nash_moser"
    try:
        ContinuationConfig(**{k: cfg["solver"][k] for k in SOLVER_KEYS})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver section invalid: {exc}") from exc
    if family == "two_layer":
        if "b" not in cfg:
            raise ConfigError("two_layer needs 'b'")
        cfg["b"] = float(cfg["b"])
        if cfg.get("root") not in ("+", "-"):
            raise ConfigError("root must be '+' or '-'")
        theta_roots(cfg["b"], cfg["m"])  # admissibility
    else:
        for key in ("b2", "theta2"):
            if key not in cfg:
                raise ConfigError(f"three_layer needs {key!r}")
            cfg[key] = float(cfg[key])
        lo, hi = three_layer_window(cfg["b2"], cfg["m"])
        if not lo < cfg["theta2"] < hi:
            raise ParameterError("PARAM_WINDOW", f"theta2 = {cfg['theta2']} outside ({lo:.15g}, {hi:.15g})")
    return cfg


def problem_spec(cfg: dict) -> dict:
    keys = ["family", "m", "J", "N_q", "n_max"]
    keys += ["b", "root"] if cfg["family"] == "two_layer" else ["b2", "theta2"]
    return {k: cfg[k] for k in keys}


def config_hash(cfg: dict) -> str:
    return _digest({k: v for k, v in cfg.items() if k != "output_dir"})


def problem_hash(cfg: dict) -> str:
    return _digest(problem_spec(cfg))


def build_problem(spec: dict) -> Problem:
    params = {"b": spec["b"]} if spec["family"] == "two_layer" else {"b2": spec["b2"], "theta2": spec["theta2"]}
    return make_problem(spec["family"], spec["m"], spec["J"], spec["N_q"], **params)


def _stamp(cfg: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "tool_version": __version__,
            "config_hash": config_hash(cfg), "problem_hash": problem_hash(cfg)}


# --------------------------------------------------------------------------
# certificates


def compute_point(cfg: dict) -> BifurcationPoint:
    problem = build_problem(problem_spec(cfg))
    return problem.bifurcation(n_max=cfg["n_max"], root=cfg.get("root"))


def certificate_payload(cfg: dict, point: BifurcationPoint) -> dict:
    details = {k: v for k, v in point.details.items()}
    return {
        **_stamp(cfg),
        "kind": "bifurcation_certificate",
        "problem": problem_spec(cfg),
        "family": point.family,
        "fold": point.fold,
        "parameters": point.parameters,
        "theta_star": point.theta_star,
        "theta_star_hex": fhex(point.theta_star),
        "kernel_vector": point.kernel_vector,
        "cokernel_vector": point.cokernel_vector,
        "transversality": point.transversality,
        "det_m1_row_normalized": point.det_m1,
        "higher_mode_margin": point.higher_mode_margin,
        "margins": point.margins,
        "details": details,
        "certified": True,
    }


def point_from_certificate(cert: dict, truncation: int) -> BifurcationPoint:
    m = int(cert["fold"])
    v = np.asarray(cert["kernel_vector"], dtype=float)
    w = np.asarray(cert["cokernel_vector"], dtype=float)
    return BifurcationPoint(
        fold=m,
        family=cert["family"],
        parameters=cert["parameters"],
        theta_star=unhex(cert["theta_star_hex"]),
        kernel=tuple(FourierEvenSeries.mode(m, truncation, 1, c) for c in v),
        cokernel=(),
        transversality=float(cert["transversality"]),
        higher_mode_margin=float(cert["higher_mode_margin"]),
        kernel_vector=v,
        cokernel_vector=w,
        det_m1=float(cert["det_m1_row_normalized"]),
        margins=np.asarray(cert["margins"], dtype=float),
    )


# --------------------------------------------------------------------------
# branch records


def state_record(state: BranchState) -> dict:
    d = state.diagnostics
    rec = {
        "s": fhex(state.amplitude),
        "theta": fhex(state.theta),
        "coefficients": [[fhex(c) for c in r.coeffs] for r in state.perturbations],
        "residual": fhex(state.residual),
        "circulation": fhex(d["circulation"]),
        "exterior_velocity": fhex(d["exterior_velocity_sup"]),
        "min_gap": fhex(d["min_gap"]),
        "iterations": state.iterations,
    }
    if "b3" in d:
        rec["b3"] = fhex(d["b3"])
    return rec


def state_from_record(rec: dict, fold: int) -> BranchState:
    R = tuple(FourierEvenSeries(fold, [unhex(c) for c in row]) for row in rec["coefficients"])
    diag = {
        "circulation": unhex(rec["circulation"]),
        "exterior_velocity_sup": unhex(rec["exterior_velocity"]),
        "min_gap": unhex(rec["min_gap"]),
    }
    if "b3" in rec:
        diag["b3"] = unhex(rec["b3"])
    return BranchState(unhex(rec["s"]), unhex(rec["theta"]), R, unhex(rec["residual"]), diag,
                       int(rec.get("iterations", 0)))


def branch_csv(states: list[BranchState], family: str, stamp: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# tool_version={stamp['tool_version']} config_hash={stamp['config_hash']}\n")
    writer = csv.writer(buf, lineterminator="\n")
    header = ["index", "s", "theta", "residual", "circulation", "exterior_velocity", "min_gap"]
    if family == "three_layer":
        header.append("b3")
    n_layers = len(states[0].perturbations) if states else 0
    J = states[0].perturbations[0].truncation if states else 0
    header += [f"a{i + 1}_{j + 1}" for i in range(n_layers) for j in range(J)]
    writer.writerow(header)
    for k, st in enumerate(states):
        d = st.diagnostics
        row = [k, _g17(st.amplitude), _g17(st.theta), _g17(st.residual), _g17(d["circulation"]),
               _g17(d["exterior_velocity_sup"]), _g17(d["min_gap"])]
        if family == "three_layer":
            row.append(_g17(d["b3"]))
        row += [_g17(c) for r in st.perturbations for c in r.coeffs]
        writer.writerow(row)
    return buf.getvalue()


# --------------------------------------------------------------------------
# commands


def cmd_bifurcate(args, cfg: dict) -> int:
    out = Path(args.out or cfg["output_dir"])
    point = compute_point(cfg)
    _write_json(out / "certificate.json", certificate_payload(cfg, point))
    print(f"certified {point.family} m={point.fold} theta*={point.theta_star:.15g} "
          f"transversality={point.transversality:.6g} margin={point.higher_mode_margin:.3e}")
    return EXIT_OK


def cmd_continue(args, cfg: dict) -> int:
    out = Path(args.out or cfg["output_dir"])
    cert_path = Path(args.certificate) if args.certificate else out / "certificate.json"
    cert = _read_json(cert_path)
    if cert.get("problem_hash") != problem_hash(cfg):
        raise ParameterError("CONFIG_MISMATCH", f"certificate {cert_path} was issued for a different problem")
    spec = problem_spec(cfg)
    problem = build_problem(spec)
    point = point_from_certificate(cert, problem.truncation)
    scfg = ContinuationConfig(**{k: cfg["solver"][k] for k in SOLVER_KEYS},
                              truncation=problem.truncation, nodes=problem.nodes)
    traces = []
    if scfg.mode == "newton":
        result = continue_branch(problem, point, scfg)
        states, stop, folds, errors, near = result.states, result.stop_reason, result.folds, result.errors, result.near_trivial
    else:
        states, errors, stop, folds, near = [], [], "max_steps", [], []
        for k in range(1, scfg.max_steps + 1):
            try:
                st, tr = nash_moser_solve(problem, point, k * scfg.ds, scfg)
            except PatchError as exc:
                errors.append(f"step {k}: {exc}")
                stop = "nesting" if exc.code in ("NESTING_VIOLATION", "NOT_NESTED") else "no_convergence"
                break
            states.append(st)
            traces.append({"s": fhex(k * scfg.ds), "a": [fhex(x) for x in tr.a], "b": [fhex(x) for x in tr.b],
                           "cutoff": [fhex(x) for x in tr.cutoff], "C": [fhex(x) for x in tr.C]})
    stamp = _stamp(cfg)
    summary = {
        "n_states": len(states),
        "max_amplitude": max((abs(s.amplitude) for s in states), default=0.0),
        "stop_reason": stop,
        "folds": folds,
        "near_trivial": near,
        "errors": errors,
    }
    payload = {**stamp, "kind": "branch", "problem": spec, "mode": scfg.mode,
               "theta_star_hex": cert["theta_star_hex"],
               "kernel_vector": cert["kernel_vector"],
               "summary": summary, "states": [state_record(s) for s in states]}
    if traces:
        payload["nash_moser_traces"] = traces
    _write_json(out / "branch.json", payload)
    (out / "branch.csv").write_text(branch_csv(states, spec["family"], stamp), encoding="utf-8")
    print(f"{len(states)} states, max amplitude {summary['max_amplitude']:.6g}, stop: {stop}")
    if not states:
        return EXIT_SOLVER
    return EXIT_OK


def _load_branch(path: Path) -> tuple[dict, Problem, list[BranchState]]:
    rec = _read_json(path)
    if rec.get("kind") != "branch":
        raise ConfigError(f"{path} is not a branch record")
    problem = build_problem(rec["problem"])
    states = [state_from_record(r, problem.fold) for r in rec["states"]]
    return rec, problem, states


def cmd_verify(args) -> int:
    record = Path(args.record)
    rec, problem, states = _load_branch(record)
    out = Path(args.out) if args.out else record.parent
    rows, ok = [], True
    for k, st in enumerate(states):
        rep = verify_solution(st, problem, strict=args.strict)
        ok &= rep.passed
        rows.append({"index": k, "passed": rep.passed, "failures": list(rep.failures), "metrics": rep.metrics})
        status = "PASS" if rep.passed else "FAIL " + ",".join(rep.failures)
        print(f"state {k}: {status} residual={rep.metrics.get('residual', float('nan')):.3e}")
    payload = {"schema_version": SCHEMA_VERSION, "tool_version": __version__, "config_hash": rec.get("config_hash"),
               "kind": "verification_report", "record": record.name, "strict": args.strict,
               "passed": bool(ok), "states": rows}
    _write_json(out / "report.json", payload)
    return EXIT_OK if ok else EXIT_VERIFY


def parse_grid(text: str) -> tuple[np.ndarray, np.ndarray]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 6:
        raise ConfigError("grid must be x0,x1,nx,y0,y1,ny")
    x0, x1, nx, y0, y1, ny = parts
    return np.linspace(float(x0), float(x1), int(nx)), np.linspace(float(y0), float(y1), int(ny))


def sample_rows(problem: Problem, state: BranchState, xs: np.ndarray, ys: np.ndarray) -> list[list]:
    system = problem.system(state.theta, state.perturbations)
    rows = []
    geo = system.geometry()
    for i in range(len(system.layers)):
        for x, y in geo.z[i]:
            rows.append([f"boundary{i + 1}", _g17(x), _g17(y), "", "", "", 0])
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    flagged = near_boundary(system, pts)
    good = pts[~flagged]
    u = velocity_at(system, good) if good.size else np.zeros((0, 2))
    psi = stream_function_at(system, good) if good.size else np.zeros(0)
    k = 0
    for p, bad in zip(pts, flagged):
        if bad:
            rows.append(["grid", _g17(p[0]), _g17(p[1]), "nan", "nan", "nan", 1])
        else:
            rows.append(["grid", _g17(p[0]), _g17(p[1]), _g17(u[k, 0]), _g17(u[k, 1]), _g17(psi[k]), 0])
            k += 1
    return rows


def cmd_sample(args) -> int:
    record = Path(args.record)
    rec, problem, states = _load_branch(record)
    if not -len(states) <= args.state < len(states):
        raise ConfigError(f"state index {args.state} out of range (0..{len(states) - 1})")
    xs, ys = parse_grid(args.grid)
    rows = sample_rows(problem, states[args.state], xs, ys)
    out = Path(args.out) if args.out else record.parent
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"# tool_version={__version__} config_hash={rec.get('config_hash')} state={args.state}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["kind", "x", "y", "u", "v", "psi", "flagged"])
    writer.writerows(rows)
    (out / "fields.csv").write_text(buf.getvalue(), encoding="utf-8")
    n_flag = sum(r[-1] for r in rows)
    print(f"wrote {len(rows)} samples ({n_flag} flagged near a boundary)")
    return EXIT_OK


def cmd_spectrum(args, cfg: dict) -> int:
    out = Path(args.out or cfg["output_dir"])
    m, n_max = cfg["m"], cfg["n_max"]
    blocks = []
    if cfg["family"] == "two_layer":
        point = compute_point(cfg)
        for n in range(1, n_max + 1):
            blk = two_layer_block(cfg["b"], point.theta_star, n * m)
            blocks.append({"n": n, "mode": n * m, "entries": blk.entries, "det": blk.det})
    else:
        point = three_layer_bifurcation(cfg["b2"], cfg["theta2"], m, n_max, cfg["J"])
        b3 = point.parameters["b3"]
        for n in range(1, n_max + 1):
            blk = three_layer_block(cfg["b2"], cfg["theta2"], b3, point.theta_star, n, m)
            blocks.append({"n": n, "mode": n * m, "entries": blk.entries, "det": blk.det})
    _write_json(out / "spectrum.json", {**_stamp(cfg), "kind": "spectrum", "theta_star": point.theta_star,
                                        "blocks": blocks})
    for b in blocks[: min(8, len(blocks))]:
        print(f"n={b['n']:3d} mode={b['mode']:4d} det={b['det']:+.6e}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpatch", description="Bifurcation and continuation of stationary vortex patches.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory (overrides config output_dir)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a scalar config field")
        p.add_argument("--n-max", type=int, help="highest block index for mode certification")
        return p

    with_config(sub.add_parser("bifurcate", help="certify a bifurcation point"))
    p = with_config(sub.add_parser("continue", help="trace a branch from a certificate"))
    p.add_argument("--certificate", help="certificate path (default OUT/certificate.json)")
    p.add_argument("--mode", choices=["newton", "nash-moser"], help="corrector")
    p = sub.add_parser("verify", help="re-verify a branch record")
    p.add_argument("record", help="branch.json")
    p.add_argument("--strict", type=int, default=2, help="quadrature multiplier")
    p.add_argument("--out", help="directory for report.json (default: next to the record)")
    p = sub.add_parser("sample", help="sample boundaries and fields for plotting")
    p.add_argument("record", help="branch.json")
    p.add_argument("--state", type=int, default=-1)
    p.add_argument("--grid", default="-1.5,1.5,31,-1.5,1.5,31", help="x0,x1,nx,y0,y1,ny")
    p.add_argument("--out", help="directory for fields.csv (default: next to the record)")
    with_config(sub.add_parser("spectrum", help="dump M_n tables"))
    return parser


def _error(code: str, message: str, status: int) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": message, "exit_code": status}) + "\n")
    return status


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("verify", "sample"):
            return cmd_verify(args) if args.command == "verify" else cmd_sample(args)
        overrides = list(args.set)
        if getattr(args, "n_max", None) is not None:
            overrides.append(f"n_max={args.n_max}")
        if getattr(args, "mode", None):
            overrides.append(f"mode={json.dumps(args.mode.replace('-', '_'))}")
        cfg = load_config(args.config, overrides)
        handler = {"bifurcate": cmd_bifurcate, "continue": cmd_continue, "spectrum": cmd_spectrum}[args.command]
        return handler(args, cfg)
    except ParameterError as exc:
        return _error(exc.code, exc.message or str(exc), EXIT_PARAM)
    except ConfigError as exc:
        return _error("CONFIG_INVALID", str(exc), EXIT_PARAM)
    except SolverError as exc:
        return _error(exc.code, exc.message or str(exc), EXIT_SOLVER)
    except PatchError as exc:
        return _error(exc.code, exc.message or str(exc), EXIT_SOLVER)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        return _error("IO_ERROR", f"{type(exc).__name__}: {exc}", EXIT_IO)


if __name__ == "__main__":
    raise SystemExit(main())
