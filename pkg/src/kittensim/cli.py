"""`kittensim` command line: layout audits, kernel runs, pipeline simulations,
grid/L2 studies and cost estimates, each wrapped in a report envelope."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from kittensim import __version__
from kittensim import layouts
from kittensim.kernels import KERNELS, TOLERANCES, make_config, make_inputs, run_kernel
from kittensim.kernels.runner import RunManifest, _cfg_dict
from kittensim.machine import WorkProfile, estimate_cost, gemm_work, preset_h100
from kittensim.scenarios import (
    ScenarioError,
    SimPoint,
    load_profile,
    load_scenario,
    run_l2_study,
    run_occupancy_study,
    run_persistent_study,
    run_sim_point,
    run_two_wave,
)
from kittensim.tiles import save_tensor


class CommandError(Exception):
    pass


@dataclass
class ReportEnvelope:
    command: str
    config: dict
    seed: int
    payload: dict
    ok: bool = True
    version: str = __version__
    wall_time_s: float = 0.0
    rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"command": self.command, "version": self.version, "seed": self.seed,
                "config": self.config, "ok": self.ok, "payload": self.payload,
                "wall_time_s": self.wall_time_s}

    def payload_bytes(self) -> bytes:
        return json.dumps(self.payload, sort_keys=True).encode()

    def render(self, fmt: str) -> str:
        if fmt == "json":
            return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable) + "\n"
        return _to_csv(self.rows or _flatten_rows(self.payload))


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not serializable: {type(x).__name__}")


def _flatten_rows(payload: dict, prefix: str = "") -> list[dict]:
    out = []
    for k, v in payload.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.extend(_flatten_rows(v, key + "."))
        elif isinstance(v, list):
            out.append({"key": key, "value": json.dumps(v)})
        else:
            out.append({"key": key, "value": v})
    return out


def _to_csv(rows: list[dict]) -> str:
    cols: list[str] = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()})
    return buf.getvalue()


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _config_file(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    try:
        with open(args.config) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(data, dict):
        raise CommandError("config file must hold a JSON object")
    return data


def _merge(file_cfg: dict, flags: dict) -> dict:
    """Flags win over the config file; unset flags fall through."""
    out = dict(file_cfg)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _mapper(parallel: int):
    if parallel and parallel > 1:
        pool = ProcessPoolExecutor(max_workers=parallel)
        return pool, pool.map
    return None, map


# ---------------------------------------------------------------------------
# commands


def cmd_audit_layout(args) -> ReportEnvelope:
    cfg = _merge(_config_file(args), {"rows": args.rows, "cols": args.cols, "dtype": args.dtype,
                                      "mode": args.mode, "pattern": args.pattern,
                                      "pad_bytes": args.pad_bytes, "row": args.row,
                                      "col": args.col})
    cfg.setdefault("dtype", "bf16")
    cfg.setdefault("pattern", "tensorcore")
    if "rows" not in cfg or "cols" not in cfg:
        raise CommandError("--rows and --cols are required")
    eb = {"bf16": 2, "fp32": 4}.get(cfg["dtype"])
    if eb is None:
        raise CommandError(f"unknown dtype {cfg['dtype']!r}")
    payload: dict = {}
    if cfg.get("mode") is None:
        mode = layouts.select_swizzle(cfg["rows"], cfg["cols"], eb)
        payload["selected_mode"] = mode.value
    else:
        mode = layouts.SwizzleMode.parse(cfg["mode"])
    layout = layouts.SharedLayout(cfg["rows"], cfg["cols"], eb, mode,
                                  pad_bytes=cfg.get("pad_bytes") or 4)
    pattern = layouts.parse_pattern(cfg["pattern"], cfg.get("row") or 0, cfg.get("col") or 0)
    report = layouts.analyze_conflicts(layout, pattern)
    payload.update(mode=mode.value, **report.to_dict(), bijective=layouts.check_bijective(layout))
    return ReportEnvelope("audit-layout", cfg, args.seed, payload,
                          rows=[{"mode": mode.value, "pattern": cfg["pattern"], **report.to_dict()}])


_KERNEL_FLAGS = {
    "gemm": {"m": "M", "n": "N", "k": "K", "dtype": "dtype"},
    "attention": {"b": "B", "h": "H", "n": "N", "d": "D", "kv_rows": "kv_rows", "dtype": "dtype"},
    "rotary": {"b": "B", "h": "H", "n": "N", "headdim": "headdim", "dtype": "dtype"},
}


def cmd_run_kernel(args) -> ReportEnvelope:
    name = args.kernel
    flags = {field_: getattr(args, flag) for flag, field_ in _KERNEL_FLAGS[name].items()}
    cfg_in = _merge(_config_file(args), flags)
    try:
        cfg = make_config(name, **cfg_in)
    except (TypeError, ValueError) as exc:
        raise CommandError(f"bad {name} config: {exc}") from exc
    inputs = make_inputs(cfg, args.seed)
    if name == "rotary" and args.identity_tables:
        inputs["cos"] = np.ones_like(inputs["cos"])
        inputs["sin"] = np.zeros_like(inputs["sin"])
    got, expected, result = run_kernel(cfg, inputs, backend=args.backend,
                                       seed=args.seed if args.backend == "cooperative" else None)
    diff = got.astype(np.float64) - expected
    manifest = RunManifest(name, _cfg_dict(cfg), args.seed, args.backend,
                           float(np.max(np.abs(diff))),
                           float(np.linalg.norm(diff) / max(np.linalg.norm(expected), 1e-300)),
                           args.tolerance if args.tolerance is not None else TOLERANCES[name],
                           result.steps, list(expected.shape))
    payload = manifest.to_dict()
    if name == "rotary" and args.identity_tables:
        payload["exact_identity"] = bool(np.array_equal(got, inputs["x"]))
    if args.save_output:
        save_tensor(args.save_output, got)
        payload["output_file"] = str(args.save_output)
    ok = manifest.passed and payload.get("exact_identity", True)
    return ReportEnvelope("run-kernel", payload["config"], args.seed, payload, ok=ok,
                          rows=[{k: v for k, v in payload.items() if k != "config"}])


def cmd_simulate(args) -> ReportEnvelope:
    file_cfg = _config_file(args)
    if args.occupancy:
        try:
            scenario = load_scenario(args.occupancy)
            payload = run_occupancy_study(scenario, args.kernel)
        except (ScenarioError, KeyError, TypeError) as exc:
            raise CommandError(str(exc)) from exc
        rows = []
        for tag in ("lcsf", "synchronous"):
            for p in payload[tag]["points"]:
                rows.append({"config": tag, **p})
        ok = payload["lcsf_dominates"]
        return ReportEnvelope("simulate", {"kernel": args.kernel, "occupancy": args.occupancy},
                              args.seed, payload, ok=ok, rows=rows)
    cfg = _merge(file_cfg, {"stages": args.stages, "workers": args.workers,
                            "profile": args.profile, "iterations": args.iterations})
    stages = _int_list(str(cfg.get("stages", "1-4")))
    workers = _int_list(str(cfg.get("workers", "1")))
    iterations = int(cfg.get("iterations", 32))
    try:
        profile = load_profile(cfg.get("profile", "gemm"))
    except (ScenarioError, ValueError) as exc:
        raise CommandError(str(exc)) from exc
    points = [SimPoint(args.kernel, s, w, iterations, args.synchronous)
              for w in workers for s in stages]
    pool, mapper = _mapper(args.parallel)
    try:
        rows = list(mapper(partial(run_sim_point, profile=profile, trace_dir=args.trace_dir), points))
    finally:
        if pool:
            pool.shutdown()
    ok_rows = [r for r in rows if r["status"] == "ok"]
    trend = {}
    for w in workers:
        tps = [r["throughput"] for r in ok_rows if r["workers"] == w]
        if len(tps) == len(stages) and len(tps) > 1:
            trend[str(w)] = all(b > a for a, b in zip(tps, tps[1:]))
    payload = {"profile": profile.to_dict(), "points": rows,
               "strictly_increasing_in_stages": trend}
    cfg.update(kernel=args.kernel, synchronous=args.synchronous)
    return ReportEnvelope("simulate", cfg, args.seed, payload,
                          ok=all(r["status"] == "ok" for r in rows), rows=rows)


def cmd_grid(args) -> ReportEnvelope:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        raise CommandError(str(exc)) from exc
    payload: dict = {"name": scenario.get("name", str(args.scenario))}
    rows: list[dict] = []
    ok = True
    known = {"l2", "persistent", "two_wave"}
    if not known & set(scenario):
        raise CommandError(f"scenario has none of the sections {sorted(known)}")
    pool, mapper = _mapper(args.parallel)
    try:
        if "l2" in scenario:
            payload["l2"] = run_l2_study(scenario["l2"], args.infinite_l2, mapper)
            rows.extend({"section": "l2", **r} for r in payload["l2"]["orders"])
        if "persistent" in scenario:
            payload["persistent"] = run_persistent_study(scenario["persistent"], preset_h100())
            ok &= payload["persistent"]["all_persistent_le_relaunch"]
            rows.extend({"section": "persistent", **r} for r in payload["persistent"]["rows"])
        if "two_wave" in scenario:
            payload["two_wave"] = run_two_wave(scenario["two_wave"])
            rows.append({"section": "two_wave", **payload["two_wave"]})
    except (ScenarioError, KeyError, TypeError, ValueError) as exc:
        raise CommandError(f"malformed scenario: {exc}") from exc
    finally:
        if pool:
            pool.shutdown()
    cfg = {"scenario": str(args.scenario), "infinite_l2": args.infinite_l2}
    return ReportEnvelope("grid", cfg, args.seed, payload, ok=ok, rows=rows)


def cmd_cost(args) -> ReportEnvelope:
    cfg = _merge(_config_file(args), {"m": args.m, "n": args.n, "k": args.k,
                                      "elem_bytes": args.elem_bytes})
    params = preset_h100(args.calibration)
    if "work" in cfg:
        try:
            profile = WorkProfile(**cfg["work"])
        except TypeError as exc:
            raise CommandError(f"bad work profile: {exc}") from exc
    elif all(cfg.get(x) for x in ("m", "n", "k")):
        profile = gemm_work(cfg["m"], cfg["n"], cfg["k"], cfg.get("elem_bytes") or 2)
    else:
        raise CommandError("give --m/--n/--k or a config file with a 'work' object")
    cost = estimate_cost(profile, params)
    payload = {"work": profile.__dict__, **cost.to_dict()}
    rows = [{"term": k, "seconds": v} for k, v in cost.terms.items()]
    rows.append({"term": "overall", "seconds": cost.overall})
    return ReportEnvelope("cost", cfg, args.seed, payload, rows=rows)


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser):
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", type=Path, help="write the report here instead of stdout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", type=int, default=1, help="shard independent points over N processes")
    p.add_argument("--config", help="JSON config; command-line flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kittensim", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit-layout", help="bank-conflict audit of one shared-memory layout")
    _common(p)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--dtype", choices=("bf16", "fp32"))
    p.add_argument("--mode", help="naive|padded|rowxor|sw32|sw64|sw128 (omit to auto-select)")
    p.add_argument("--pattern", help="tensorcore|row|column")
    p.add_argument("--pad-bytes", type=int)
    p.add_argument("--row", type=int, help="row for the row pattern")
    p.add_argument("--col", type=int, help="column for the row/column patterns")
    p.set_defaults(func=cmd_audit_layout)

    p = sub.add_parser("run-kernel", help="run a kernel and compare against the float64 oracle")
    _common(p)
    p.add_argument("kernel", choices=KERNELS)
    for flag in ("m", "n", "k", "b", "h", "d", "headdim", "kv-rows"):
        p.add_argument(f"--{flag}", type=int)
    p.add_argument("--dtype", choices=("fp32", "bf16"))
    p.add_argument("--backend", choices=("cooperative", "threads"), default="cooperative")
    p.add_argument("--identity-tables", action="store_true", help="rotary: cos=1, sin=0")
    p.add_argument("--tolerance", type=float, help="override the max-abs-error threshold")
    p.add_argument("--save-output", type=Path, help="write the output tensor (.npy or .csv)")
    p.set_defaults(func=cmd_run_kernel)

    p = sub.add_parser("simulate", help="timed pipeline simulation over stage/worker grids")
    _common(p)
    p.add_argument("kernel", choices=KERNELS + ("none",))
    p.add_argument("--stages", help="e.g. 1-4 or 1,2,4")
    p.add_argument("--workers", help="consumer worker counts, e.g. 1-3")
    p.add_argument("--profile", help="'gemm' (derived) or a latency-profile JSON path")
    p.add_argument("--iterations", type=int)
    p.add_argument("--synchronous", action="store_true", help="fused workers, no overlap")
    p.add_argument("--trace-dir", help="write one Chrome trace per point here")
    p.add_argument("--occupancy", help="occupancy scenario (shipped name or path)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("grid", help="block-order L2 replay and persistent-grid makespans")
    _common(p)
    p.add_argument("scenario", help="shipped scenario name or JSON path")
    p.add_argument("--infinite-l2", action="store_true", help="compulsory misses only")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("cost", help="max-plus-overhead cost estimate")
    _common(p)
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--elem-bytes", type=int)
    p.add_argument("--calibration", help="calibration JSON (default: env override or packaged)")
    p.set_defaults(func=cmd_cost)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        env = args.func(args)
    except (CommandError, ValueError, OSError) as exc:
        print(f"kittensim {args.command}: error: {exc}", file=sys.stderr)
        return 2
    env.wall_time_s = time.perf_counter() - t0
    text = env.render(args.format)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    if not env.ok:
        print(f"kittensim {args.command}: checks failed", file=sys.stderr)
    return 0 if env.ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
