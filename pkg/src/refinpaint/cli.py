"""Command-line entry points for every pipeline stage.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .config import load_config
from .engine import EngineConfig, refinpaint, write_trace
from .evaluation import (
    compare_single_pass_vs_refinpaint,
    comparison_report,
    masking_ratio_sweep,
    render_comparison_table,
    render_sweep_table,
    save_report,
    sweep_report,
)
from .midi import parse_smf, write_smf
from .models import ModelConfig, load_checkpoint
from .remi import encode
from .service import bar_span, place_window, splice_fragment_score
from .training import TrainConfig, train_evaluator, train_feedback, train_inpainter

DEFAULT_SWEEP_RATIOS = (0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # print synopsis on stderr, exit code 1
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="refinpaint", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("tokenize", help="dump a MIDI file as one token per line")
    p.add_argument("midi", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("corpus", help="corpus management")
    csub = p.add_subparsers(dest="corpus_command", required=True, parser_class=_Parser)
    b = csub.add_parser("build", help="scan a directory of .mid files into a manifest")
    b.add_argument("dir", type=Path)
    b.add_argument("--toy", type=int, default=None, help="generate N toy pieces first")
    b.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one of the three models")
    p.add_argument("kind", choices=["inpainter", "feedback", "evaluator"])
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("run", help="batch refinement of a bar range in one file")
    p.add_argument("--midi", type=Path, required=True)
    p.add_argument("--bars", required=True, help="inclusive range, e.g. 2..3")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--keep", type=int, default=None)
    p.add_argument("--config", type=Path, required=True, help="checkpoint config")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--trace", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="objective evaluation reports")
    esub = p.add_subparsers(dest="eval_command", required=True, parser_class=_Parser)
    s = esub.add_parser("sweep", help="masked NLL across masking ratios")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--seed", type=int, default=0)
    c = esub.add_parser("compare", help="single pass vs iterative refinement")
    c.add_argument("--config", type=Path, required=True)
    c.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="start the proofreading session service")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--state-dir", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _read_json_or_toml(path: Path) -> dict:
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(path.read_text())
    return json.loads(path.read_text())


def _train_command(args) -> int:
    doc = _read_json_or_toml(args.config)
    data_dir = corpus_mod.data_dir(doc.get("data_dir"))
    out_dir = Path(doc.get("out_dir", "runs")) / args.kind
    train_kwargs = dict(doc.get("train", {}))
    if args.seed is not None:
        train_kwargs["seed"] = args.seed
    cfg = TrainConfig(**train_kwargs)
    model_cfg = ModelConfig(**doc["model"]) if "model" in doc else None
    if args.kind == "inpainter":
        report = train_inpainter(data_dir, cfg, model_cfg, out_dir)
    elif args.kind == "evaluator":
        report = train_evaluator(data_dir, cfg, model_cfg, out_dir)
    else:
        inpainter_path = doc.get("inpainter_checkpoint")
        if not inpainter_path:
            raise UsageError("feedback training needs inpainter_checkpoint in the config")
        report = train_feedback(data_dir, inpainter_path, cfg, model_cfg, out_dir)
    print(
        f"trained {args.kind}: {report.steps_run} steps, "
        f"final loss {report.losses[-1]:.4f}, val {report.val_metrics}, "
        f"checkpoint {report.checkpoint_path}"
    )
    return 0


def _run_command(args) -> int:
    svc = load_config(args.config)
    inpainter = load_checkpoint(Path(svc.inpainter).read_bytes(), "inpainter")
    feedback = load_checkpoint(Path(svc.feedback).read_bytes(), "feedback")
    raw = args.midi.read_bytes()
    full = np.asarray(encode(parse_smf(raw)).to_ids(), dtype=np.int64)
    try:
        lo, hi = args.bars.split("..")
        bar_from, bar_to = int(lo), int(hi)
    except ValueError:
        raise UsageError(f"--bars must look like 2..3, got {args.bars!r}")
    frag_start, frag_end = bar_span(full, bar_from, bar_to)
    max_len = inpainter.config.max_len
    window_start, window_len = place_window(full, frag_start, frag_end, max_len)
    window = full[window_start : window_start + window_len]
    m_u = np.zeros(window_len, dtype=bool)
    m_u[frag_start - window_start : frag_end - window_start] = True

    config = EngineConfig(
        iterations=args.iterations if args.iterations is not None else svc.engine.iterations,
        temperature=svc.engine.temperature,
        top_p=svc.engine.top_p,
        keep_override=args.keep,
        seed=args.seed,
    )
    records, selected = refinpaint(window, m_u, inpainter, feedback, config)
    frag_tokens = records[selected].x_hat[frag_start - window_start : frag_end - window_start]
    score = splice_fragment_score(full, frag_start, frag_end, frag_tokens)
    out_path = args.out or args.midi.with_suffix(".refined.mid")
    out_path.write_bytes(write_smf(score))
    trace_path = args.trace or out_path.with_suffix(".trace.json")
    write_trace(trace_path, records, selected, config, m_u)
    print(
        f"bars {bar_from}..{bar_to}: {len(records)} iterations, "
        f"selected {selected} (gfs {records[selected].gfs:.3f}) -> {out_path}"
    )
    return 0


def _eval_command(args) -> int:
    doc = _read_json_or_toml(args.config)
    svc = load_config(args.config)
    data_dir = corpus_mod.data_dir(doc.get("data_dir"))
    splits = corpus_mod.load_split_sequences(data_dir)
    test_set = splits[corpus_mod.TEST] or splits[corpus_mod.VAL]
    inpainter = load_checkpoint(Path(svc.inpainter).read_bytes(), "inpainter")
    out_path = Path(doc.get("report", f"eval_{args.eval_command}.json"))
    eval_doc = doc.get("eval", {})
    if args.eval_command == "sweep":
        rows = masking_ratio_sweep(
            inpainter,
            test_set,
            ratios=eval_doc.get("ratios", DEFAULT_SWEEP_RATIOS),
            fragment_pct=eval_doc.get("fragment_pct", 0.30),
            n_instances=eval_doc.get("n_instances"),
            seed=args.seed,
        )
        save_report(sweep_report(rows, {"seed": args.seed}), out_path)
        print(render_sweep_table(rows))
    else:
        feedback = load_checkpoint(Path(svc.feedback).read_bytes(), "feedback")
        evaluator = load_checkpoint(Path(svc.evaluator).read_bytes(), "evaluator")
        rows, per_instance = compare_single_pass_vs_refinpaint(
            inpainter,
            feedback,
            evaluator,
            test_set,
            fragment_pcts=tuple(eval_doc.get("fragment_pcts", (0.5, 0.3, 0.1))),
            n_instances=eval_doc.get("n_instances", 100),
            iterations=svc.engine.iterations,
            temperature=svc.engine.temperature,
            top_p=svc.engine.top_p,
            seed=args.seed,
        )
        save_report(comparison_report(rows, per_instance, {"seed": args.seed}), out_path)
        print(render_comparison_table(rows))
    print(f"report -> {out_path}")
    return 0


def cli_dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "tokenize":
            seq = encode(parse_smf(args.midi.read_bytes()))
            text = seq.dump_lines()
            if args.out:
                args.out.write_text(text)
            else:
                sys.stdout.write(text)
            return 0
        if args.command == "corpus":
            if args.toy:
                entries = corpus_mod.write_toy_corpus(args.toy, args.seed, args.dir)
            else:
                entries = corpus_mod.build_manifest(args.dir)
                corpus_mod.write_manifest(entries, args.dir / "manifest.jsonl")
            by_split = {}
            for e in entries:
                by_split[e.split] = by_split.get(e.split, 0) + 1
            print(f"{len(entries)} files -> {args.dir / 'manifest.jsonl'} ({by_split})")
            return 0
        if args.command == "train":
            return _train_command(args)
        if args.command == "run":
            return _run_command(args)
        if args.command == "eval":
            return _eval_command(args)
        if args.command == "serve":
            svc = load_config(args.config)
            if args.port is not None:
                svc.port = args.port
            if args.state_dir is not None:
                svc.state_dir = str(args.state_dir)
            from .service import serve

            serve(svc)
            return 0
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        message = str(exc)
        if "usage:" not in message:
            message += "\n" + parser.format_usage()
        print(message, file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:  # console entry point
    sys.exit(cli_dispatch(sys.argv[1:]))
