"""Command-line entry point sequencing the two-phase workflow.

Exit codes: 0 success, 1 invariant or assertion failure, 2 usage or
configuration error (including a missing input file or phase).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from . import checkpoint as ckpt
from .config import ABLATIONS, ConfigError, apply_overrides, load_run_config
from .jsonl import read_jsonl, write_jsonl
from .labeler import load_rule_table, segment_report, stub_labeler
from .metrics import evaluate_texts, write_rows_csv
from .mining import ReportSegment, mine_triplets, read_segments, read_triplets, write_segments, write_triplets
from .model import MissingPhaseError, Phase2Trainer, build_generator, load_dataset, load_generator
from .synth import synth_generate
from .tensor import ContractError
from .text_encoder import save_text_refiner, train_text_refiner

log = logging.getLogger("finealign")

LOSS_COLUMNS = ("step", "total", "ce", "cls_i", "itc")


class UsageError(Exception):
    pass


def _path(args, cfg, name, must_exist=True):
    value = getattr(args, name, None) or cfg.paths.get(name)
    if value is None:
        raise UsageError(f"--{name.replace('_', '-')} is required")
    if must_exist and not os.path.exists(value):
        raise UsageError(f"{name} not found: {value}")
    return value


def _out(args, cfg, default):
    out = args.out or cfg.paths.get(f"{args.command}_out") or default
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return out


def _table(cfg):
    if cfg.rules is None:
        return None
    if not os.path.exists(cfg.rules):
        raise UsageError(f"rule table not found: {cfg.rules}")
    return load_rule_table(cfg.rules)


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_loss_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


# -- subcommands ----------------------------------------------------------------


def cmd_synth(args, cfg):
    if args.n_samples is not None:
        cfg.synth.n_samples = args.n_samples
    out_dir = args.out or cfg.paths.get("synth_out") or "data"
    path = synth_generate(cfg.synth, cfg.seed, out_dir, _table(cfg))
    print(f"wrote {cfg.synth.n_samples} samples to {path}")


def cmd_segment(args, cfg):
    rows = read_jsonl(_path(args, cfg, "dataset"))
    table = _table(cfg)
    segments = []
    for i, row in enumerate(rows):
        sid = str(row.get("id", f"r{i}"))
        for j, text in enumerate(segment_report(row["report"])):
            segments.append(ReportSegment(f"{sid}.s{j}", text, stub_labeler(text, table)))
    out = _out(args, cfg, "segments.jsonl")
    write_segments(out, segments)
    print(f"wrote {len(segments)} segments to {out}")


def cmd_mine(args, cfg):
    segments = read_segments(_path(args, cfg, "segments"))
    triplets = mine_triplets(segments, per_class_cap=cfg.cap, seed=cfg.seed)
    out = _out(args, cfg, "triplets.jsonl")
    write_triplets(out, triplets)
    print(f"wrote {len(triplets)} triplets to {out}")


def cmd_train_tfr(args, cfg):
    dataset = load_dataset(_path(args, cfg, "dataset"), normalize_saliency=cfg.normalize_saliency)
    segments = read_segments(_path(args, cfg, "segments"))
    triplets = read_triplets(_path(args, cfg, "triplets"))
    if not triplets:
        raise ContractError("phase 1 needs at least one triplet; the triplet file is empty")
    reports = [(s.report, s.labels) for s in dataset]
    encoder, vocab, curve = train_text_refiner(segments, triplets, cfg.tfr, reports=reports)
    out = _out(args, cfg, "tfr.ckpt.json")
    save_text_refiner(out, encoder, vocab, curve)
    print(f"phase 1: loss {curve[0][1]:.4f} -> {curve[-1][1]:.4f}; wrote {out}")


def cmd_train(args, cfg):
    tfr = getattr(args, "tfr", None) or cfg.paths.get("tfr")
    if tfr is None or not os.path.exists(tfr):
        raise MissingPhaseError(
            "phase 1 (train-tfr) checkpoint missing" + (f": {tfr}" if tfr else "; pass --tfr"))
    dataset = load_dataset(_path(args, cfg, "dataset"), normalize_saliency=cfg.normalize_saliency)
    n_patches, d_in = dataset[0].image.shape
    cfg.model.n_patches, cfg.model.d_in = n_patches, d_in
    tfr_doc = ckpt.load(tfr, kind="text_refiner")
    phase1_hash = tfr_doc["text_encoder_hash"]
    if args.resume:
        trainer = Phase2Trainer.restore(args.resume, dataset)
        if trainer.gen.text_hash != phase1_hash:
            raise ContractError("resume checkpoint was trained against a different phase-1 encoder")
        if args.steps is not None:
            trainer.gen.config.steps = args.steps
    else:
        gen = build_generator(cfg.model, tfr_doc)
        if ckpt.params_hash(gen.text.state_dict()) != phase1_hash:
            raise ContractError("phase-1 checkpoint parameters do not match their recorded hash")
        trainer = Phase2Trainer(gen, dataset)

    def report(step, total, ce, cls_i, itc):
        if step % 50 == 0:
            log.info("step %d total %.4f ce %.4f cls_i %.4f itc %.4f", step, total, ce, cls_i, itc)

    trainer.run(trainer.gen.config.steps, on_step=report, verify_frozen=True)
    if ckpt.params_hash(trainer.gen.text.state_dict()) != phase1_hash:
        raise ContractError("text encoder drifted from the phase-1 checkpoint during phase 2")
    out = _out(args, cfg, "model.ckpt.json")
    trainer.save(out)
    loss_log = args.loss_log or os.path.splitext(out)[0] + ".loss.csv"
    write_loss_log(loss_log, trainer.log)
    first, last = trainer.log[0][1], trainer.log[-1][1]
    print(f"phase 2: loss {first:.4f} -> {last:.4f} over {len(trainer.log)} steps; wrote {out} and {loss_log}")


def cmd_generate(args, cfg):
    gen = load_generator(_path(args, cfg, "checkpoint"))
    dataset = load_dataset(_path(args, cfg, "dataset"), normalize_saliency=cfg.normalize_saliency)
    rows = [{"id": s.id, "report": gen.generate_text(s, args.max_len)} for s in dataset]
    out = _out(args, cfg, "generated.jsonl")
    write_jsonl(out, rows)
    print(f"wrote {len(rows)} generated reports to {out}")


def cmd_evaluate(args, cfg):
    generated = read_jsonl(_path(args, cfg, "generated"))
    refs = {str(r["id"]): r["report"] for r in read_jsonl(_path(args, cfg, "dataset"))}
    missing = [g["id"] for g in generated if str(g["id"]) not in refs]
    if missing:
        raise ContractError(f"generated ids without a reference: {missing[:5]}")
    if not generated:
        raise ContractError("nothing to evaluate: the generated file is empty")
    cands = [g["report"] for g in generated]
    report, rows = evaluate_texts(cands, [refs[str(g["id"])] for g in generated], _table(cfg))
    for row, g in zip(rows, generated):
        row["id"] = g["id"]
    out = _out(args, cfg, "eval.json")
    with open(out, "w") as fh:
        fh.write(report.to_json())
    stem = os.path.splitext(out)[0]
    with open(stem + ".table.txt", "w") as fh:
        fh.write(report.to_table())
    write_rows_csv(stem + ".samples.csv", rows)
    print(report.to_table(), end="")


def cmd_gradcheck(args, cfg):
    from .gradcheck import format_result, run_suite

    results = run_suite(args.draws, cfg.seed, names=args.check or None,
                        on_result=lambda r: print(format_result(r), flush=True))
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise ContractError(f"gradient check failed: {', '.join(failed)}")
    print(f"all {len(results)} checks passed")


COMMANDS = {
    "synth": cmd_synth,
    "segment": cmd_segment,
    "mine": cmd_mine,
    "train-tfr": cmd_train_tfr,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output file (or directory for synth)")
    common.add_argument("--rules", help="rule table JSON replacing the bundled one")
    common.add_argument("--normalize-saliency", action="store_true",
                        help="rescale saliency rows to max 1 instead of rejecting them")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="finealign", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--n-samples", type=int)

    s = sub.add_parser("segment", parents=[common], help="split and label report sentences")
    s.add_argument("--dataset")

    s = sub.add_parser("mine", parents=[common], help="mine triplets from labelled segments")
    s.add_argument("--segments")
    s.add_argument("--cap", type=int, help="max triplets per class")

    s = sub.add_parser("train-tfr", parents=[common], help="phase 1: train the text encoder")
    for name in ("--dataset", "--segments", "--triplets"):
        s.add_argument(name)
    s.add_argument("--steps", type=int)
    s.add_argument("--beta", type=float)
    s.add_argument("--triplet-form", choices=("standard", "literal"))

    s = sub.add_parser("train", parents=[common], help="phase 2: train the report generator")
    s.add_argument("--dataset")
    s.add_argument("--tfr", help="phase-1 checkpoint")
    s.add_argument("--resume", help="continue from a phase-2 checkpoint")
    s.add_argument("--steps", type=int)
    s.add_argument("--loss-log", help="CSV of per-step losses (default: next to --out)")
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--tau", type=float)
    s.add_argument("--lambda-cls-i", type=float)
    s.add_argument("--lambda-itc", type=float)
    s.add_argument("--ablate", action="append", choices=ABLATIONS, help="disable a feature path (repeatable)")

    s = sub.add_parser("generate", parents=[common], help="greedy-decode reports")
    s.add_argument("--checkpoint")
    s.add_argument("--dataset")
    s.add_argument("--max-len", type=int)

    s = sub.add_parser("evaluate", parents=[common], help="score generated reports")
    s.add_argument("--generated")
    s.add_argument("--dataset", help="references (dataset JSONL)")

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    s.add_argument("--draws", type=int, default=20)
    s.add_argument("--check", action="append", help="run only the named check (repeatable)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_run_config(args.config), args)
        COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, MissingPhaseError) as exc:
        print(f"finealign {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, AssertionError, ValueError, KeyError) as exc:
        print(f"finealign {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
