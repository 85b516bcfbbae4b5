"""``brctc`` command-line entry point.

Record-oriented subcommands read JSON lines and write one JSON line per
input line, in input order. A record that fails produces an error line
``{"id": ..., "error": <type>, "message": ...}`` and processing continues.

Exit codes: 0 clean, 2 when some records (or checks) failed, 1 fatal.

Any long option can also be set through an environment variable named
``BRCTC_`` plus the option name upper-cased with dashes as underscores, for
example ``BRCTC_LAMBDA=10`` or ``BRCTC_FRAME_MS=40``. Command-line flags win.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from importlib import resources
from itertools import islice
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from .align import Alignment, best_path, greedy_path, token_spans, trim, trim_point
from .errors import BRCTCError, InfeasibleAlignment, ParseError
from .gradcheck import random_grid, run_grad_check
from .latency import utterance_latency
from .lattice import PosteriorGrid, ctc_loss, log_softmax
from .oracle import enumerate_paths, oracle_objective, score_paths
from .risk import RiskSpec, brctc_loss

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2
ENV_PREFIX = "BRCTC_"
GRAD_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 1e-9

logger = logging.getLogger("brctc")


# ---------------------------------------------------------------- records


def parse_record(line: str, lineno: int) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise ParseError(f"line {lineno}: record must be a JSON object")
    rec.setdefault("id", str(lineno))
    return rec


def _matrix(rec: dict, key: str) -> np.ndarray:
    try:
        arr = np.asarray(rec[key], dtype=np.float64)
    except (ValueError, TypeError):
        raise ParseError(f"{key} must be a rectangular numeric grid") from None
    if arr.ndim != 2:
        raise ParseError(f"{key} must be two-dimensional, got {arr.ndim} dimensions")
    return arr


def record_grid(rec: dict) -> PosteriorGrid:
    """The posterior grid of a record; exactly one of logits/logprobs."""
    has_logits, has_logprobs = "logits" in rec, "logprobs" in rec
    if has_logits == has_logprobs:
        raise ParseError("record needs exactly one of 'logits' or 'logprobs'")
    if has_logits:
        logits = _matrix(rec, "logits")
        if not np.isfinite(logits).all():
            raise ParseError("logits must be finite")
        return PosteriorGrid(log_softmax(logits))
    try:
        return PosteriorGrid(_matrix(rec, "logprobs"))
    except ValueError as exc:
        raise ParseError(f"logprobs: {exc}") from None


def record_labels(rec: dict, key: str = "labels") -> list[int]:
    labels = rec.get(key)
    if not isinstance(labels, list) or not all(isinstance(k, int) and not isinstance(k, bool) for k in labels):
        raise ParseError(f"'{key}' must be a list of integer token ids")
    return labels


def error_line(rec_id, exc: Exception) -> dict:
    return {"id": rec_id, "error": type(exc).__name__, "message": str(exc)}


def _read_lines(path: str):
    if path == "-":
        yield from enumerate(sys.stdin, start=1)
        return
    with open(path, encoding="utf-8") as fh:
        yield from enumerate(fh, start=1)


def stream_records(args, handler) -> int:
    """Apply ``handler(record) -> dict`` to every non-blank input line.

    Lines are processed in bounded chunks so at most ``workers * 4``
    records are in flight; output order always matches input order.
    """
    out = sys.stdout if args.output == "-" else open(args.output, "w", encoding="utf-8")
    failures = 0

    def process(item):
        lineno, line = item
        rec_id = str(lineno)
        try:
            rec = parse_record(line, lineno)
            rec_id = rec["id"]
            return handler(rec), False
        except (BRCTCError, ValueError, IndexError) as exc:
            return error_line(rec_id, exc), True

    try:
        lines = ((n, line) for n, line in _read_lines(args.input) if line.strip())
        workers = max(1, args.workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            while True:
                chunk = list(islice(lines, workers * 4))
                if not chunk:
                    break
                results = pool.map(process, chunk) if workers > 1 else map(process, chunk)
                for result, failed in results:
                    failures += failed
                    out.write(json.dumps(result) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_PARTIAL if failures else EXIT_OK


# ------------------------------------------------------------ subcommands


def risk_spec(args) -> RiskSpec:
    return RiskSpec(args.risk, args.lam)


def cmd_loss(args) -> int:
    spec = risk_spec(args)

    def handle(rec):
        y = record_grid(rec)
        res = brctc_loss(y, record_labels(rec), spec, grad=args.grad)
        row = {"id": rec["id"], "loss": res.neg_log_objective}
        if res.warning:
            row["clamped_tokens"] = list(res.clamped)
        if args.grad:
            row["grad"] = res.grad_logits.tolist()
        return row

    return stream_records(args, handle)


def cmd_grad_check(args) -> int:
    spec = risk_spec(args)
    gate = None
    for step in args.step:
        results = run_grad_check(spec, args.seed, args.instances, args.t_max, args.u_max, args.vocab, step)
        checked = [r for r in results if not r.skipped]
        err = max(r.rel_error for r in checked)
        if gate is None:
            gate = err
        print(
            json.dumps(
                {
                    "risk": spec.kind,
                    "lambda": spec.lam,
                    "step": step,
                    "checked": len(checked),
                    "skipped": len(results) - len(checked),
                    "max_rel_error": err,
                }
            )
        )
    # only the first step gates the exit code; further steps are a sweep
    return EXIT_OK if gate < GRAD_TOLERANCE else EXIT_PARTIAL


def compare_with_oracle(y: PosteriorGrid, labels) -> dict:
    """Oracle path sum against the lattice, feasibility included."""
    paths = score_paths(y.probs, enumerate_paths(y.T, labels, y.V))
    oracle = math.fsum(p.posterior for p in paths)
    try:
        lattice = math.exp(-ctc_loss(y, labels).neg_log_objective)
        feasible = True
    except InfeasibleAlignment:
        lattice, feasible = 0.0, False
    ok = feasible == bool(paths) and abs(lattice - oracle) <= ORACLE_TOLERANCE
    return {"T": y.T, "labels": list(labels), "oracle": oracle, "lattice": lattice, "feasible": feasible, "pass": ok}


def builtin_fixture(name: str) -> dict:
    text = resources.files("brctc").joinpath("fixtures", f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def run_fixture(fx: dict) -> dict:
    if fx.get("kind") == "objective":
        value = oracle_objective(fx["posteriors"], fx["risks"])
        row = {"fixture": fx.get("name"), "objective": value}
        if "expected" in fx:
            row["pass"] = value == fx["expected"]
        return row
    y = record_grid(fx)
    row = compare_with_oracle(y, record_labels(fx))
    row["fixture"] = fx.get("name")
    return row


def cmd_oracle_compare(args) -> int:
    rows = []
    if args.fixture:
        for item in args.fixture:
            if os.path.exists(item):
                fx = json.loads(FsPath(item).read_text(encoding="utf-8"))
            else:
                fx = builtin_fixture(item)
            rows.append(run_fixture(fx))
    else:
        rng = np.random.default_rng(args.seed)
        for _ in range(args.instances):
            rows.append(compare_with_oracle(*random_grid(rng, args.t_max, args.u_max, args.vocab)))
    for row in rows:
        print(json.dumps(row))
    return EXIT_OK if all(r.get("pass", True) for r in rows) else EXIT_PARTIAL


def cmd_trim(args) -> int:
    def handle(rec):
        y = record_grid(rec)
        labels = rec.get("labels")
        report = trim_point(y, args.threshold, args.margin, num_tokens=len(labels) if labels else None)
        row = {"id": rec["id"], **report.to_dict()}
        if "hidden" in rec:
            row["hidden"] = trim(_matrix(rec, "hidden"), report).tolist()
        return row

    return stream_records(args, handle)


def cmd_latency(args) -> int:
    dls = []
    matched = 0

    def handle(rec):
        nonlocal matched
        ref = record_labels(rec)
        starts = rec.get("ref_events")
        if not isinstance(starts, list) or len(starts) != len(ref):
            raise ParseError("'ref_events' must list one start frame per reference token")
        if "path" in rec:
            path = record_labels(rec, "path")
            ali = Alignment(tuple(path), math.nan, token_spans(path))
        elif args.alignment == "forced":
            ali = best_path(record_grid(rec), ref)
        else:
            ali = greedy_path(record_grid(rec))
        report = utterance_latency(ali, ref, starts, args.frame_ms, args.chunk_ms, args.right_context_ms, args.rtf)
        if report.dl is not None:
            dls.append(report.dl)
        matched += report.matched_tokens
        return {
            "id": rec["id"],
            **report.to_dict(),
            "emission_end_frames": list(ali.end_frames),
            "ref_start_frames": list(starts),
        }

    # the corpus summary needs every record, so run serially
    args.workers = 1
    code = stream_records(args, handle)
    mean_dl = sum(dls) / len(dls) if dls else None
    summary = utterance_summary(args, mean_dl, matched, len(dls))
    if args.output == "-":
        print(json.dumps(summary))
    else:
        with open(args.output, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(summary) + "\n")
    return code


def utterance_summary(args, mean_dl, matched, n) -> dict:
    dcl = args.chunk_ms / 2 + args.right_context_ms
    cl = args.chunk_ms * args.rtf
    return {
        "summary": {
            "utterances_with_dl": n,
            "matched_tokens": matched,
            "dcl": dcl,
            "cl": cl,
            "mean_dl": mean_dl,
            "total_hw_independent": None if mean_dl is None else dcl + mean_dl,
            "total": None if mean_dl is None else dcl + mean_dl + cl,
        }
    }


# --------------------------------------------------------------- train-toy


TRAIN_KEYS = {"risk": str, "lambda": float, "clamp_floor": float, "epochs": int, "lr": float, "window": int, "hidden": int}


def load_train_config(path: str | None, seed: int | None):
    """Parse a ``key = value`` file into (ToyTaskConfig, RiskSpec, optimizer kwargs)."""
    from .toy import DEFAULT_LAMBDA, DEFAULT_TRAINING, ToyTaskConfig

    values: dict[str, str] = {}
    if path:
        parser = configparser.ConfigParser()
        try:
            parser.read_string("[toy]\n" + FsPath(path).read_text(encoding="utf-8"))
        except configparser.Error as exc:
            raise ParseError(f"{path}: {exc}") from None
        values = dict(parser["toy"])
    cfg_types = {f.name: f.type for f in fields(ToyTaskConfig)}
    unknown = set(values) - set(cfg_types) - set(TRAIN_KEYS)
    if unknown:
        raise ParseError(f"unknown config keys: {sorted(unknown)}")
    cfg_kwargs = {}
    for name, raw in values.items():
        if name in cfg_types:
            cast = float if cfg_types[name] in (float, "float") else int
            try:
                cfg_kwargs[name] = cast(raw)
            except ValueError:
                raise ParseError(f"{name}: cannot parse {raw!r}") from None
    if seed is not None:
        cfg_kwargs["seed"] = seed
    cfg = ToyTaskConfig(**cfg_kwargs)
    opts = dict(DEFAULT_TRAINING)
    for name, cast in TRAIN_KEYS.items():
        if name in values:
            try:
                opts[name] = cast(values[name])
            except ValueError:
                raise ParseError(f"{name}: cannot parse {values[name]!r}") from None
    kind = opts.pop("risk").replace("-", "_")
    lam = opts.pop("lambda", None)
    spec = RiskSpec(kind, DEFAULT_LAMBDA[kind] if lam is None else lam, opts.pop("clamp_floor"))
    return cfg, spec, opts


def write_pgm(path, probs: np.ndarray) -> None:
    """Binary graymap: one row per symbol (blank on top), one column per frame."""
    img = np.round(np.clip(probs.T, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def cmd_train_toy(args) -> int:
    from .toy import ToyModel, gen_dataset, evaluate_spikes, train

    cfg, spec, opts = load_train_config(args.config, args.seed)
    out = FsPath(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set, eval_set = gen_dataset(cfg)
    model = ToyModel.init(cfg.feature_dim, cfg.vocab_size, opts["window"], opts["hidden"], seed=cfg.seed)
    result = train(model, train_set, spec, epochs=opts["epochs"], lr=opts["lr"])
    result.model.save(out / "model.npz")
    with open(out / "loss_trace.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(result.loss_trace, start=1):
            writer.writerow([epoch, repr(loss)])
    stats = evaluate_spikes(result.model, eval_set, args.threshold, args.margin, args.frame_ms)
    with open(out / "spikes.jsonl", "w", encoding="utf-8") as fh:
        for row in stats["utterances"]:
            fh.write(json.dumps(row) + "\n")
        fh.write(json.dumps({"summary": stats["summary"]}) + "\n")
    heat = out / "heatmaps"
    heat.mkdir(exist_ok=True)
    limit = len(eval_set) if args.heatmaps is None else args.heatmaps
    for idx, utt in enumerate(eval_set[:limit]):
        write_pgm(heat / f"eval_{idx:04d}.pgm", result.model.posterior(utt.features).probs)
    print(json.dumps({"risk": spec.kind, "lambda": spec.lam, "final_loss": result.loss_trace[-1], **stats["summary"]}))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_io(p):
    p.add_argument("-i", "--input", default="-", help="JSONL input file ('-' for stdin)")
    p.add_argument("-o", "--output", default="-", help="JSONL output file ('-' for stdout)")
    p.add_argument("--workers", type=int, default=1, help="records processed concurrently")


def _add_risk(p):
    p.add_argument("--risk", default="vanilla", choices=["vanilla", "downsample", "early-emission", "early_emission"])
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="risk factor (>= 0)")


def _add_sizes(p, instances):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=instances)
    p.add_argument("--t-max", type=int, default=8)
    p.add_argument("--u-max", type=int, default=4)
    p.add_argument("--vocab", type=int, default=3, help="vocabulary size (largest, for oracle-compare)")


def _add_trim(p):
    p.add_argument("--threshold", type=float, default=0.99, help="confident-blank probability")
    p.add_argument("--margin", type=int, default=5, help="frames kept past the last unsure frame")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brctc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("loss", help="per-record loss (and gradient)")
    _add_io(p)
    _add_risk(p)
    p.add_argument("--grad", action="store_true", help="include the logit gradient inline")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("grad-check", help="analytic vs finite-difference gradients")
    _add_risk(p)
    _add_sizes(p, 20)
    p.add_argument("--step", type=float, nargs="+", default=[1e-5], help="one or more difference steps")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("oracle-compare", help="lattice vs exhaustive path enumeration")
    _add_sizes(p, 50)
    p.add_argument(
        "--fixture",
        nargs="+",
        help="fixture JSON files, or builtin names: grouping_example, infeasible_example",
    )
    p.set_defaults(func=cmd_oracle_compare)

    p = sub.add_parser("trim", help="trim hidden sequences at trailing confident blanks")
    _add_io(p)
    _add_trim(p)
    p.set_defaults(func=cmd_trim)

    p = sub.add_parser("latency", help="data-collecting, computational and drift latency")
    _add_io(p)
    p.add_argument("--frame-ms", type=float, default=40.0)
    p.add_argument("--chunk-ms", type=float, default=0.0)
    p.add_argument("--right-context-ms", type=float, default=0.0)
    p.add_argument("--rtf", type=float, default=0.0)
    p.add_argument("--alignment", choices=["greedy", "forced"], default="greedy")
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser("train-toy", help="train and evaluate the synthetic model")
    p.add_argument("--config", help="key = value file (task, risk and optimizer settings)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--frame-ms", type=float, default=1.0)
    p.add_argument("--heatmaps", type=int, default=None, help="number of eval heatmaps (default all)")
    _add_trim(p)
    p.set_defaults(func=cmd_train_toy)

    _apply_env(parser)
    return parser


def env_name(option: str) -> str:
    """``--frame-ms`` -> ``BRCTC_FRAME_MS``."""
    return ENV_PREFIX + option.lstrip("-").replace("-", "_").upper()


def _apply_env(parser: argparse.ArgumentParser) -> None:
    """Replace option defaults with values from the environment."""
    parsers = [parser]
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            parsers.extend(action.choices.values())
    for p in parsers:
        for action in p._actions:
            longs = [o for o in action.option_strings if o.startswith("--")]
            if not longs or action.dest in ("help", "version"):
                continue
            raw = os.environ.get(env_name(longs[0]))
            if raw is None:
                continue
            if action.nargs == 0:
                action.default = raw.lower() in ("1", "true", "yes", "on")
            elif action.nargs == "+":
                action.default = [action.type(v) for v in raw.split(",")]
            else:
                action.default = action.type(raw) if action.type else raw


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, BRCTCError, ValueError) as exc:
        print(f"brctc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
