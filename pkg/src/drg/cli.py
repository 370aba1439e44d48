"""``drg`` command line: run, emit, protocol-sim, verify, bench.

Exit codes: 0 success, 1 validation error, 2 runtime or engine error,
3 verification failure.
"""

from __future__ import annotations

import os

# BLAS reads its thread count when numpy is first imported, so cap it here.
_threads = os.environ.get("DRG_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from dataclasses import asdict, dataclass  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from .bench import bench, loglog_slope, to_csv  # noqa: E402
from .checks import DEFAULT_BOUNDS, run_checks  # noqa: E402
from .engine import (  # noqa: E402
    ConfigError,
    EngineConfig,
    EngineError,
    EngineState,
    MaturityError,
    emission_rng,
    emit,
    init,
    step,
)
from .protocol import ADVERSARIES, protocol_sim  # noqa: E402

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; usage problems are validation errors here
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunReport:
    config: dict
    log_path: str
    checkpoint_path: str
    steps: int
    mean_objective: float
    defeat_rate: float
    wall_seconds: float


def load_config(path: str | None, seed_hex: str | None) -> EngineConfig:
    obj = {}
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"not valid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(obj, dict):
            raise ConfigError("config", "top level must be a JSON object")
    if seed_hex is not None:
        obj["seed"] = seed_hex
    return EngineConfig.from_json(obj)


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    if args.resume:
        ckpt = json.loads(Path(args.resume).read_text())
        config = EngineConfig.from_json(ckpt["config"]) if args.config is None else load_config(args.config, args.seed)
        state = EngineState.from_json(ckpt, config)
    else:
        config = load_config(args.config, args.seed)
        state = init(config)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".steps.jsonl")
    t0 = time.perf_counter()
    objectives, reached = [], 0
    with log_path.open("w") as log:
        for _ in range(args.steps):
            try:
                state = step(state, config)
            except EngineError as exc:
                # keep what was done so far
                out.write_text(json.dumps({**state.to_json(), "config": config.to_json()}))
                print(f"engine error at m={state.m}: {exc}", file=sys.stderr)
                if exc.best:
                    print(f"best attempt: {json.dumps(exc.best)}", file=sys.stderr)
                return EXIT_RUNTIME
            entry = state.last_log
            log.write(json.dumps(entry, sort_keys=True) + "\n")
            objectives.extend(v for key, v in entry.items() if key.startswith("objective_"))
            reached += bool(entry["reached_target"])
    out.write_text(json.dumps({**state.to_json(), "config": config.to_json()}))
    report = RunReport(
        config=config.to_json(),
        log_path=str(log_path),
        checkpoint_path=str(out),
        steps=args.steps,
        mean_objective=float(np.mean(objectives)),
        defeat_rate=reached / args.steps,
        wall_seconds=time.perf_counter() - t0,
    )
    print(json.dumps(asdict(report)))
    return EXIT_OK


def _load_checkpoint(path: str) -> tuple[EngineConfig, EngineState]:
    try:
        ckpt = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if "config" not in ckpt:
        raise ConfigError("config", "checkpoint carries no config")
    config = EngineConfig.from_json(ckpt["config"])
    return config, EngineState.from_json(ckpt, config)


def cmd_emit(args) -> int:
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    config, state = _load_checkpoint(args.checkpoint)
    try:
        X = emit(state, config, emission_rng(state), args.count)
    except MaturityError as exc:
        print(
            f"checkpoint not mature: at m={state.m}, emission needs ceil(maturity_factor n ln n) = "
            f"{exc.required} steps; {exc.remaining} remaining",
            file=sys.stderr,
        )
        return EXIT_RUNTIME
    lines = ["".join("1" if b else "0" for b in row) for row in X.astype(bool)]
    _write(args.out, "".join(line + "\n" for line in lines))
    return EXIT_OK


def cmd_protocol_sim(args) -> int:
    if args.adversary not in ADVERSARIES:
        raise UsageError(f"unknown adversary {args.adversary!r}; choose from {', '.join(ADVERSARIES)}")
    config = load_config(args.config, args.seed)
    if args.adversary == "oracle" and config.n > config.oracle_n_max:
        raise ConfigError("n", f"oracle adversary needs n <= oracle_n_max = {config.oracle_n_max}")
    if args.rounds < 1:
        raise UsageError("--rounds must be >= 1")
    rep = protocol_sim(config, args.rounds, args.adversary, args.rounds_per_step, args.constant)
    row = rep.to_json()
    if args.format == "csv":
        keys = list(row)
        text = ",".join(keys) + "\n" + ",".join(str(row[k]) for k in keys) + "\n"
    else:
        text = json.dumps(row) + "\n"
    _write(args.out, text)
    return EXIT_OK


def cmd_verify(args) -> int:
    bounds = dict(DEFAULT_BOUNDS)
    for key in bounds:
        val = getattr(args, f"{key}_bound")
        if val is not None:
            bounds[key] = val
    header = f"{'#':>2}  {'check':<32} {'property':<66} result"
    print(header)
    print("-" * len(header))

    def report(res):
        mark = "PASS" if res.passed else "FAIL"
        print(f"{res.number:>2}  {res.name:<32} {res.claim:<66} {mark}  ({res.seconds:.1f}s)")
        print(f"    {res.detail}")
        sys.stdout.flush()

    results = run_checks(args.level, bounds, report)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--sizes must be comma-separated integers, got {text!r}") from None
    bad = [n for n in sizes if n < 6 or n % 2]
    if not sizes or bad:
        raise UsageError(f"sizes must be even and >= 6, got {bad or text!r}")
    return sizes


DEFAULT_SIZES = {"partition": "64,128,256,512,1024", "bilinear": "32,64,128,256"}


def cmd_bench(args) -> int:
    methods = ("bilinear", "partition") if args.method == "both" else (args.method,)
    rows, slopes = [], {}
    for method in methods:
        sizes = _sizes(args.sizes or DEFAULT_SIZES[method])
        part = bench(sizes, method, k=args.k, repeats=args.repeats)
        rows.extend(part)
        slopes[method] = loglog_slope(part) if len(sizes) > 1 else math.nan
    if args.format == "json":
        _write(args.out, json.dumps({"rows": rows, "slopes": slopes}) + "\n")
    else:
        _write(args.out, to_csv(rows))
    for method, s in slopes.items():
        print(f"{method} log-log slope: {s:.3f}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="drg", description="Deep random generator workbench")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="advance the engine and write a checkpoint plus a JSON-lines step log")
    r.add_argument("--config", help="JSON config with EngineConfig field names")
    r.add_argument("--seed", help="hex seed, overrides the config's")
    r.add_argument("--steps", type=int, required=True)
    r.add_argument("--out", required=True, help="checkpoint path")
    r.add_argument("--log", help="step log path (default: <out>.steps.jsonl)")
    r.add_argument("--resume", help="continue from this checkpoint")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("emit", help="print vectors drawn from a matured checkpoint, one 0/1 line each")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--count", type=int, default=1)
    e.add_argument("--out", help="output path (default: stdout)")
    e.set_defaults(func=cmd_emit)

    s = sub.add_parser("protocol-sim", help="two matured partner engines and an observer")
    s.add_argument("--config")
    s.add_argument("--seed")
    s.add_argument("--rounds", type=int, default=10**4)
    s.add_argument("--adversary", default="bilinear")
    s.add_argument("--constant", type=float, default=0.0, help="value of the constant adversary")
    s.add_argument("--rounds-per-step", type=int, default=100)
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--out")
    s.set_defaults(func=cmd_protocol_sim)

    v = sub.add_parser("verify", help="run the acceptance checks")
    v.add_argument("--level", choices=("fast", "full"), default="fast")
    for key, val in DEFAULT_BOUNDS.items():
        flag = "--" + key.replace("_", "-") + "-bound"
        v.add_argument(flag, dest=f"{key}_bound", type=float, help=f"override the {key} constant (default {val:g})")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="fit + search wall times and the log-log slope")
    b.add_argument("--method", choices=("bilinear", "partition", "both"), default="both")
    b.add_argument("--sizes", help="comma-separated even sizes >= 6")
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--k", type=float, default=16.0)
    b.add_argument("--format", choices=("json", "csv"), default="csv")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"drg: usage error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConfigError as exc:
        print(f"drg: invalid config field {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EngineError as exc:
        print(f"drg: engine error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, KeyError) as exc:
        print(f"drg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
