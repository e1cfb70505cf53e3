"""``unitface`` command line: gen-data, train, generate, eval, verify.

Exit codes: 0 success, 1 I/O failure, 2 usage or configuration error,
3 malformed input file, 4 verification failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

from . import __version__
from .config import RunConfig, RunConfigError
from .evaluation import MetricError, ab_aggregate, default_rig, edit_distance, latency_metrics, lve
from .formats import (FormatError, format_kv, read_clip, read_latency, read_lines, read_ratings, read_rig,
                      read_units, write_clip, write_report, write_units)
from .model import ConfigError, ModelConfig, OmniModel
from .numerics import FAULTABLE
from .pipeline.checkpoint import load_checkpoint, save_checkpoint
from .pipeline.corpus import DEFAULT_SIZES, KINDS, generate_corpus
from .pipeline.corpus_io import read_corpus, write_corpus
from .pipeline.stages import STAGES, StageConfigError, stage_plan
from .pipeline.training import train_stage
from .semantic import TokenSequence
from .units import UnitSequence

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_FORMAT, EXIT_VERIFY = 0, 1, 2, 3, 4
RUN_CONFIG = "run_config.txt"
CHECKPOINT = "checkpoint.exck"


class UsageError(ValueError):
    pass


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_run_config(directory: Path, command: str, entries: dict[str, object]) -> None:
    (directory / RUN_CONFIG).write_text(format_kv({"command": command, **entries}), encoding="utf-8",
                                        newline="\n")


def _model_from_checkpoint(ck) -> OmniModel:
    model = OmniModel(ModelConfig.from_dict(ck.model_config))
    model.load_state(ck.params)
    return model


# --------------------------------------------------------------------------
# gen-data
# --------------------------------------------------------------------------

def _parse_sizes(items) -> dict[str, int]:
    sizes = dict(DEFAULT_SIZES)
    for item in items or ():
        k, sep, v = item.partition("=")
        if not sep or k not in KINDS:
            raise UsageError(f"--sizes entries look like asr=256 with kind in {', '.join(KINDS)}; got {item!r}")
        try:
            sizes[k] = int(v)
        except ValueError:
            raise UsageError(f"size for {k} must be an integer, got {v!r}") from None
        if sizes[k] < 1:
            raise UsageError(f"size for {k} must be >= 1, got {sizes[k]}")
    return sizes


def cmd_gen_data(args) -> int:
    cfg = RunConfig.load(args.config)
    seed = cfg.seed(args.seed)
    sizes = _parse_sizes(args.sizes)
    mc = cfg.model_config(seed)
    corpus = generate_corpus(seed, sizes, vocab_text=mc.vocab_text, vocab_units=mc.vocab_units, d_enc=mc.d_enc,
                             unit_rate=mc.unit_rate, fps=mc.fps, min_len=args.min_len, max_len=args.max_len)
    out = _out_dir(args.out_dir)
    write_corpus(out, corpus)
    _write_run_config(out, "gen-data", {"seed": seed, **{f"size_{k}": sizes[k] for k in KINDS},
                                        "min_len": args.min_len, "max_len": args.max_len,
                                        "vocab_text": mc.vocab_text, "vocab_units": mc.vocab_units,
                                        "d_enc": mc.d_enc})
    print(f"wrote {sum(sizes.values())} samples to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    seed = cfg.seed(args.seed)
    plan = stage_plan(args.stage, cfg.schedule_overrides())
    corpus = read_corpus(args.data_dir)
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        model = _model_from_checkpoint(resume)
    elif args.init:
        init = load_checkpoint(args.init)
        prev = STAGES[STAGES.index(args.stage) - 1] if args.stage != "I" else None
        if prev is not None and not args.from_scratch and (init.stage != prev or not init.complete):
            raise UsageError(f"stage {args.stage} starts from a finished stage {prev} checkpoint; "
                             f"{args.init} is stage {init.stage or '?'}"
                             f"{'' if init.complete else ' (incomplete)'}")
        model = _model_from_checkpoint(init)
    else:
        if args.stage != "I" and not args.from_scratch:
            prev = STAGES[STAGES.index(args.stage) - 1]
            raise UsageError(f"stage {args.stage} needs a stage {prev} checkpoint (--init), "
                             f"or pass --from-scratch")
        model = OmniModel(cfg.model_config(seed))
    t = corpus.teachers
    if (t.vocab_text, t.vocab_units, t.d_enc) != (model.cfg.vocab_text, model.cfg.vocab_units, model.cfg.d_enc):
        raise UsageError(f"corpus vocabularies/feature width ({t.vocab_text}, {t.vocab_units}, {t.d_enc}) do not "
                         f"match the model ({model.cfg.vocab_text}, {model.cfg.vocab_units}, {model.cfg.d_enc})")
    out = _out_dir(args.out_dir)
    _write_run_config(out, "train", {"seed": seed, "data_dir": args.data_dir,
                                     "init": args.init or "", "resume": args.resume or "",
                                     "from_scratch": int(args.from_scratch),
                                     **{k: v for k, v in model.cfg.to_dict().items()}})
    with open(out / RUN_CONFIG, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(plan.to_text())

    def progress(step, loss):
        if args.verbose:
            print(f"step {step} loss {loss:.6f}", file=sys.stderr)

    report = train_stage(plan, corpus, model, seed, resume=resume, stop_after=args.stop_after, on_step=progress)
    save_checkpoint(report.checkpoint, out / CHECKPOINT)
    lines = ["step,loss"] + [f"{i},{v!r}" for i, v in enumerate(report.losses, 1)]
    (out / "loss.csv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    first = report.losses[0] if report.losses else float("nan")
    last = report.losses[-1] if report.losses else float("nan")
    print(f"stage {args.stage}: {report.steps}/{report.total_steps} steps, loss {first:.4f} -> {last:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# generate
# --------------------------------------------------------------------------

def _parse_tokens(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"--prompt-tokens must be integers, got {text!r}") from None


def cmd_generate(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    model = _model_from_checkpoint(ck)
    out = _out_dir(args.out)
    entries = {"checkpoint": args.checkpoint, "sample_seed": "" if args.sample_seed is None else args.sample_seed}
    if args.units_file:
        seqs = read_units(args.units_file)
        for sid, units in seqs:
            if not units:
                raise FormatError(f"{args.units_file}: sequence {sid!r} is empty")
            try:
                clip = model.face_from_units(UnitSequence(units, model.cfg.unit_rate))
            except IndexError as e:
                raise FormatError(f"{args.units_file}: sequence {sid!r}: {e}") from None
            write_clip(out / f"clip_{sid}.csv", clip)
        _write_run_config(out, "generate", {**entries, "units_file": args.units_file})
        print(f"wrote {len(seqs)} clip(s) to {out}")
        return EXIT_OK
    prompt = _parse_tokens(args.prompt_tokens)
    if not prompt:
        raise UsageError("--prompt-tokens is empty")
    for t in prompt:
        if not 0 <= t < model.cfg.vocab_text:
            raise UsageError(f"prompt token {t} outside [0, {model.cfg.vocab_text})")
    tokens, units, clip = model.generate(TokenSequence(prompt), max_tokens=args.max_tokens,
                                         max_units=args.max_units, seed=args.sample_seed)
    write_units(out / "tokens.txt", [("response", tokens.ids)])
    write_units(out / "units.txt", [("response", units.units)])
    if clip is not None:
        write_clip(out / "clip.csv", clip)
    _write_run_config(out, "generate", {**entries, "prompt_tokens": " ".join(map(str, prompt)),
                                        "max_tokens": args.max_tokens, "max_units": args.max_units})
    print(f"{len(tokens)} tokens, {len(units)} units, {0 if clip is None else clip.frames} frames -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------

def _clip_dir(path) -> dict[str, object]:
    p = Path(path)
    if not p.is_dir():
        raise FormatError(f"{p}: not a directory of clip CSV files")
    return {f.name: read_clip(f) for f in sorted(p.glob("*.csv"))}


def _eval_rows(args) -> list[tuple[str, float]]:
    m = args.metric
    if m == "lve":
        if not (args.pred and args.ref):
            raise UsageError("lve needs --pred and --ref clip directories")
        pred, ref = _clip_dir(args.pred), _clip_dir(args.ref)
        if set(pred) != set(ref) or not pred:
            raise FormatError(f"clip directories hold different or no files "
                              f"({len(pred)} vs {len(ref)}; {sorted(set(pred) ^ set(ref))[:3]})")
        rig = read_rig(args.rig) if args.rig else default_rig()
        names = sorted(pred)
        return [("lve", lve([pred[n] for n in names], [ref[n] for n in names], rig)), ("samples", len(names))]
    if m == "ab":
        if not args.sheet:
            raise UsageError("ab needs --sheet")
        r = ab_aggregate(read_ratings(args.sheet))
        return [("win", r.win), ("tie", r.tie), ("overall", r.overall), ("mmf", r.mmf)]
    if m == "latency":
        if not args.records:
            raise UsageError("latency needs --records")
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always")
            r = latency_metrics(read_latency(args.records))
        if r.excluded:
            print(f"warning: {r.excluded} record(s) with zero speech duration left out of RTF", file=sys.stderr)
        return [("rtf", r.rtf), ("speech_ttft", r.ttft), ("face_latency", r.face_latency), ("excluded", r.excluded)]
    if not (args.ref and args.hyp):
        raise UsageError("wer needs --ref and --hyp transcript files")
    refs, hyps = read_lines(args.ref), read_lines(args.hyp)
    if len(refs) != len(hyps):
        raise FormatError(f"{args.ref} has {len(refs)} lines but {args.hyp} has {len(hyps)}")
    edits = words = 0
    per = []
    for n, (r, h) in enumerate(zip(refs, hyps), 1):
        rw, hw = r.split(), h.split()
        if not rw:
            raise FormatError(f"{args.ref}:{n}: empty reference")
        d = edit_distance(rw, hw)
        edits += d
        words += len(rw)
        per.append(d / len(rw))
    if not per:
        raise FormatError(f"{args.ref}: no transcripts")
    return [("wer", edits / words), ("mean_utterance_wer", sum(per) / len(per)), ("utterances", len(per))]


def cmd_eval(args) -> int:
    try:
        rows = _eval_rows(args)
    except MetricError as e:
        raise FormatError(str(e)) from None
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_report(out, rows)
        entries = {k: getattr(args, k) for k in ("metric", "pred", "ref", "hyp", "rig", "sheet", "records")}
        _write_run_config(out.parent, "eval", {k: "" if v is None else v for k, v in entries.items()})
    for k, v in rows:
        print(f"{k},{float(v)!r}")
    return EXIT_OK


# --------------------------------------------------------------------------
# verify
# --------------------------------------------------------------------------

def cmd_verify(args) -> int:
    from .verify import run_suite

    seeds = tuple(int(s) for s in args.seeds.split(","))
    results = run_suite(args.suite, args.inject_fault, seeds)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:28s} {r.detail}  [{r.seconds:.1f}s]")
    failed = [r for r in results if not r.passed]
    tag = f" with fault in {args.inject_fault}" if args.inject_fault else ""
    print(f"{len(results) - len(failed)}/{len(results)} checks passed{tag}")
    return EXIT_VERIFY if failed else EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unitface", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"unitface {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a seeded synthetic corpus")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--sizes", nargs="*", metavar="KIND=N", help="per-kind sample counts, e.g. asr=64 face=32")
    g.add_argument("--min-len", type=int, default=8)
    g.add_argument("--max-len", type=int, default=24)
    g.add_argument("--config", help="key=value file (model vocabularies, seed)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--stage", required=True, choices=STAGES)
    t.add_argument("--data-dir", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--config", help="key=value overrides (schedule row names, model dims, seed)")
    t.add_argument("--init", help="checkpoint of the previous stage")
    t.add_argument("--from-scratch", action="store_true", help="allow a stage without its predecessor")
    t.add_argument("--resume", help="continue an interrupted run of this stage")
    t.add_argument("--stop-after", type=int, help="stop after this many steps (resumable)")
    t.add_argument("--seed", type=int)
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    gen = sub.add_parser("generate", help="prompt → tokens, units, clip; or units → clip")
    gen.add_argument("--checkpoint", required=True)
    src = gen.add_mutually_exclusive_group(required=True)
    src.add_argument("--prompt-tokens", help="space- or comma-separated token ids")
    src.add_argument("--units-file", help="unit sequences to animate directly")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--max-tokens", type=int, default=32)
    gen.add_argument("--max-units", type=int, default=96)
    gen.add_argument("--sample-seed", type=int, help="sample instead of greedy decoding")
    gen.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", help="compute a metric report")
    e.add_argument("--metric", required=True, choices=("lve", "ab", "latency", "wer"))
    e.add_argument("--pred", help="lve: directory of predicted clip CSVs")
    e.add_argument("--ref", help="lve: reference clip directory; wer: reference transcripts")
    e.add_argument("--hyp", help="wer: hypothesis transcripts (one per line)")
    e.add_argument("--rig", help="lve: rig JSON (default: built-in seeded rig)")
    e.add_argument("--sheet", help="ab: rating CSV")
    e.add_argument("--records", help="latency: record CSV")
    e.add_argument("--out", help="report CSV path")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="gradient and invariant self-checks")
    v.add_argument("--suite", choices=("gradients", "invariants", "all"), default="all")
    v.add_argument("--inject-fault", choices=FAULTABLE, help="negate one primitive's gradient")
    v.add_argument("--seeds", default="0,1,2")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except (UsageError, RunConfigError, StageConfigError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"i/o error: {e.filename or ''}: {e.strerror or e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
