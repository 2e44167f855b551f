"""``dv-forge``: command-line entry point.

Exit codes: 0 success, 1 validation error or bad usage, 2 runtime error.
Every command that writes files also writes a manifest with the resolved
config hash, input hashes, tool version and output hashes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ToolConfig, load_config, require_path
from .doc_render import derive_seed, read_ppm, render_corpus, render_document, write_ppm
from .errors import TrainingDiverged, ValidationError
from .eval_harness import (
    EvalRecord, gen_contextual, gen_noncontextual, grid_for_tokens, make_record,
    resolution_sweep, score_answers, ScorePolicy, word_frequencies,
)
from .label_align import AlignConfig, build_samples, compute_stats, read_jsonl, read_samples, write_jsonl, write_samples
from .patch_grid import GridConfig
from .tokenizer import byte_vocab, load_vocab

logger = logging.getLogger("dvforge")

TOOL = "dv-forge"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


# --- manifests ----------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_input(path: Path) -> str:
    """Hash of a file, or of every file under a directory keyed by relative path."""
    if path.is_file():
        return sha256_file(path)
    h = hashlib.sha256()
    for f in sorted(p for p in path.rglob("*") if p.is_file() and p.name != "manifest.json"):
        h.update(f.relative_to(path).as_posix().encode() + b"\0" + sha256_file(f).encode() + b"\n")
    return h.hexdigest()


def write_manifest(path: Path, command: str, cfg: ToolConfig, inputs: dict, outputs: list[Path], args: dict | None = None) -> None:
    """Deterministic run record; holds no timestamps or absolute paths."""
    root = path.parent
    manifest = {
        "tool": TOOL,
        "version": __version__,
        "command": command,
        "args": args or {},
        "config_hash": cfg.digest(),
        "inputs": {k: hash_input(Path(p)) for k, p in sorted(inputs.items())},
        "outputs": {p.relative_to(root).as_posix(): sha256_file(p) for p in sorted(outputs)},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _files_under(d: Path) -> list[Path]:
    return sorted(p for p in d.rglob("*") if p.is_file() and p.name != "manifest.json")


def _out_dir(path: str) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _vocab(args, cfg: ToolConfig):
    path = args.vocab or cfg.paths.vocab
    if not path:
        raise ValidationError("missing required path: vocab (pass --vocab or set [paths] vocab)")
    return load_vocab(require_path(path, "vocab")), Path(path)


# --- toy datasets on disk -----------------------------------------------


def _write_split(examples, d: Path) -> None:
    d.mkdir(parents=True, exist_ok=True)
    for e in examples:
        write_ppm(e.image, d / e.sample.image_ref)
    write_samples([e.sample for e in examples], d / "samples.jsonl")


def _load_split(samples_file: Path):
    from .toy import ToyExample

    out = []
    for s in read_samples(samples_file):
        img_path = samples_file.parent / s.image_ref
        if not img_path.is_file():
            raise ValidationError(f"{samples_file}: image {s.image_ref} not found")
        out.append(ToyExample(s, read_ppm(img_path), [lab.word for lab in s.vision_labels]))
    return out


def _check_toy_data(examples, tc) -> None:
    for e in examples:
        g = e.sample.grid
        if g.cell != tc.cell or g.rows > tc.max_rows or g.cols > tc.max_cols:
            raise ValidationError(f"sample {e.sample.sample_id}: grid {g.rows}x{g.cols}@{g.cell} does not fit the toy model")
        bad = [lab.first_token_id for lab in e.sample.vision_labels if lab.first_token_id >= tc.vocab_size]
        if bad:
            raise ValidationError(f"sample {e.sample.sample_id}: label ids {bad} outside the byte vocabulary")


def _toy_cfg(cfg: ToolConfig):
    return replace(cfg.toy, seed=cfg.seed)


# --- subcommands --------------------------------------------------------


def cmd_align(args, cfg: ToolConfig) -> int:
    ocr = require_path(args.ocr, "ocr")
    qa = require_path(args.qa, "qa")
    v, vpath = _vocab(args, cfg)
    out = _out_dir(args.out)
    acfg = AlignConfig(
        grid=cfg.grid, qa_per_image=cfg.align.qa_per_image, instruction=cfg.align.instruction,
        label_prefix=cfg.align.label_prefix, seed=cfg.seed,
    )
    audit: list[dict] = []
    samples = build_samples(ocr, qa, acfg, v, audit.append, workers=args.workers)
    write_samples(samples, out / "samples.jsonl")
    write_jsonl(audit, out / "audit.jsonl")
    stats = compute_stats(samples, v, cfg.align.coverage_mode)
    write_jsonl([stats.to_record()], out / "stats.json")
    logger.info("align: %d samples, %d audit rows", len(samples), len(audit))
    outputs = [out / "samples.jsonl", out / "audit.jsonl", out / "stats.json"]
    write_manifest(out / "manifest.json", "align", cfg, {"ocr": ocr, "qa": qa, "vocab": vpath}, outputs)
    return 0


def cmd_render(args, cfg: ToolConfig) -> int:
    docs_path = require_path(args.docs, "docs")
    v, vpath = _vocab(args, cfg)
    out = _out_dir(args.out)
    png = args.png or cfg.render.png
    samples = render_corpus(
        list(read_jsonl(docs_path)), cfg.render_spec(), v, cfg.grid, out,
        png=png, prefix=cfg.align.label_prefix, workers=args.workers,
    )
    write_samples(samples, out / "samples.jsonl")
    logger.info("render: %d documents", len(samples))
    write_manifest(out / "manifest.json", "render", cfg, {"docs": docs_path, "vocab": vpath}, _files_under(out), {"png": png})
    return 0


def cmd_toydata(args, cfg: ToolConfig) -> int:
    from .toy import make_dataset

    out = _out_dir(args.out)
    _write_split(make_dataset(cfg.data.train_size, cfg.seed, cfg.task, prefix="train"), out / "train")
    _write_split(make_dataset(cfg.data.val_size, cfg.seed, cfg.task, prefix="val"), out / "val")
    write_manifest(out / "manifest.json", "toydata", cfg, {}, _files_under(out))
    return 0


def cmd_stats(args, cfg: ToolConfig) -> int:
    src = require_path(args.input, "in")
    samples_file = src / "samples.jsonl" if src.is_dir() else src
    if not samples_file.is_file():
        raise ValidationError(f"in: no samples.jsonl under {src}")
    if args.vocab or cfg.paths.vocab:
        v, vpath = _vocab(args, cfg)
        inputs = {"in": samples_file, "vocab": vpath}
    else:
        logger.warning("no vocabulary given; counting text labels as UTF-8 bytes")
        v, inputs = byte_vocab(), {"in": samples_file}
    stats = compute_stats(read_samples(samples_file), v, cfg.align.coverage_mode)
    name = src.name if src.is_dir() else src.stem
    print(stats.table(name))
    if args.out:
        out = _out_dir(args.out)
        write_jsonl([stats.to_record()], out / "stats.json")
        (out / "stats.txt").write_text(stats.table(name) + "\n", encoding="utf-8")
        write_manifest(out / "manifest.json", "stats", cfg, inputs, [out / "stats.json", out / "stats.txt"])
    return 0


def cmd_losscheck(args, cfg: ToolConfig) -> int:
    from .checks import loss_suite

    seed = cfg.seed if args.seed is None else args.seed
    results = loss_suite(seed, include_model=not args.skip_model)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    if args.out:
        out = _out_dir(args.out)
        recs = [{"name": r.name, "passed": r.passed, "value": r.value, "threshold": r.threshold} for r in results]
        write_jsonl(recs, out / "losscheck.jsonl")
        write_manifest(out / "manifest.json", "losscheck", cfg, {}, [out / "losscheck.jsonl"], {"seed": seed})
    return 0 if ok else 2


def cmd_train(args, cfg: ToolConfig) -> int:
    from .toy import save_params, train

    data = require_path(args.data, "data")
    train_file, val_file = data / "train" / "samples.jsonl", data / "val" / "samples.jsonl"
    for f in (train_file, val_file):
        if not f.is_file():
            raise ValidationError(f"data: expected {f.relative_to(data)} (create one with `dv-forge toydata`)")
    tc = _toy_cfg(cfg)
    tc.check_trainable()
    train_set, val_set = _load_split(train_file), _load_split(val_file)
    _check_toy_data(train_set + val_set, tc)
    out = _out_dir(args.out)
    try:
        params, report = train(tc, train_set, val_set, cfg.loss)
    except TrainingDiverged as e:
        write_jsonl(e.report.records(), out / "report.jsonl")
        raise
    save_params(out / "params.bin", params, tc)
    write_jsonl(report.records(), out / "report.jsonl")
    final = report.final()
    print(f"step {final.step}: text loss {final.text_loss:.4f}, vision loss {final.vision_loss:.4f}, "
          f"extraction {final.extraction_accuracy:.3f}, vision top-1 {final.vision_top1:.3f}")
    write_manifest(out / "manifest.json", "train", cfg, {"data": data}, [out / "params.bin", out / "report.jsonl"])
    return 0


def _find_sample(data: Path, sample_id: str):
    files = [data] if data.is_file() else sorted(data.rglob("samples.jsonl"))
    for f in files:
        for e in _load_split(f):
            if e.sample.sample_id == sample_id:
                return e
    raise ValidationError(f"sample: {sample_id!r} not found under {data}")


def cmd_probe(args, cfg: ToolConfig) -> int:
    from .toy import load_params, probe_table, probe_visual_logits

    params_path = require_path(args.params, "params")
    data = require_path(args.data, "data")
    tc, params = load_params(params_path)
    ex = _find_sample(data, args.sample)
    _check_toy_data([ex], tc)
    ids = probe_visual_logits(params, tc, ex, args.k)
    labels = {lab.token_index: lab.word for lab in ex.sample.vision_labels}
    lines = [f"# sample {ex.sample.sample_id}: top-{args.k} ids per visual position (row, col)"]
    for line, i in zip(probe_table(ids, ex.sample.grid.cols).splitlines(), range(len(ids))):
        lines.append(line + (f"   label: {labels[i]}" if i in labels else ""))
    text = "\n".join(lines)
    print(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")
        write_manifest(out.with_name(out.name + ".manifest.json"), "probe", cfg,
                       {"params": params_path, "data": data}, [out], {"sample": args.sample, "k": args.k})
    return 0


def _eval_docs(task: str, corpus: Path, cfg: ToolConfig) -> list[tuple[str, str]]:
    """(doc_id, text) pairs to render for the OCR-style tasks."""
    lines = [ln.strip() for ln in corpus.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValidationError(f"corpus: {corpus} has no text")
    e = cfg.eval
    if task == "contextual":
        texts = gen_contextual(lines, cfg.seed, e.samples, e.min_chars, e.max_chars)
    else:
        freq = word_frequencies(lines)
        texts = [" ".join(gen_noncontextual(freq, derive_seed(cfg.seed, f"nc{i}"), e.min_chars, e.max_chars)) for i in range(e.samples)]
    return [(f"{task}{i:04d}", t) for i, t in enumerate(texts)]


def _render_eval_docs(docs, cfg: ToolConfig, tc):
    from .toy import READ_PROMPT, ToyExample

    task = cfg.task
    spec = replace(task.render_spec(), rows=None)
    gcfg = GridConfig(cell=task.cell, min_pixels=task.cell**2, max_pixels=task.cell**2 * tc.max_rows * tc.max_cols)
    v = byte_vocab()
    out = []
    for doc_id, text in docs:
        r = render_document(text.split(), (READ_PROMPT, text), replace(spec, seed=derive_seed(cfg.seed, doc_id)), v, gcfg, doc_id=doc_id)
        ex = ToyExample(r.sample, r.image, text.split())
        _check_toy_data([ex], tc)
        out.append(ex)
    return out


def _eval_examples(args, cfg: ToolConfig, tc):
    corpus = require_path(args.corpus, "corpus")
    if args.task == "extraction":
        f = corpus / "samples.jsonl" if corpus.is_dir() else corpus
        examples = _load_split(f)
        _check_toy_data(examples, tc)
        return corpus, examples
    return corpus, _render_eval_docs(_eval_docs(args.task, corpus, cfg), cfg, tc)


def _write_records(out: Path, records: list[EvalRecord], extra: dict | None = None) -> dict:
    summary = score_answers(records, ScorePolicy(lowercase=False))
    summary.update(extra or {})
    write_jsonl([r.to_record() for r in records] + [{"summary": summary}], out)
    return summary


def cmd_eval(args, cfg: ToolConfig) -> int:
    from .toy import greedy_decode, load_params

    params_path = require_path(args.params, "params")
    tc, params = load_params(params_path)
    corpus, examples = _eval_examples(args, cfg, tc)
    preds = greedy_decode(params, tc, examples)
    records = [
        make_record(args.task, p, e.sample.response, e.sample.grid.token_count, e.sample.sample_id)
        for p, e in zip(preds, examples)
    ]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    summary = _write_records(out, records)
    print(json.dumps(summary, sort_keys=True))
    write_manifest(out.with_name(out.name + ".manifest.json"), "eval", cfg,
                   {"params": params_path, "corpus": corpus}, [out], {"task": args.task})
    return 0


def _parse_tokens(text: str | None, cfg: ToolConfig) -> list[int]:
    if text:
        try:
            tokens = [int(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise ValidationError(f"tokens: expected comma-separated integers, got {text!r}") from None
    else:
        tokens = list(cfg.eval.tokens)
    if not tokens or min(tokens) <= 0:
        raise ValidationError("tokens: need at least one positive token count (--tokens or [eval] tokens)")
    return tokens


def cmd_sweep(args, cfg: ToolConfig) -> int:
    from .toy import greedy_decode, load_params, regrid

    params_path = require_path(args.params, "params")
    tc, params = load_params(params_path)
    tokens = _parse_tokens(args.tokens, cfg)
    corpus, examples = _eval_examples(args, cfg, tc)
    records: list[EvalRecord] = []
    skipped: dict[str, list[int]] = {}
    for e in examples:
        def decode(image, grid, e=e):
            return greedy_decode(params, tc, [regrid(e, grid, image)])[0]

        h, w = e.image.shape[:2]
        fits = [t for t in tokens if (g := grid_for_tokens(t, h / w, tc.cell)) is not None
                and g.rows <= tc.max_rows and g.cols <= tc.max_cols]
        recs, skip = resolution_sweep(decode, e.image, e.sample.response, fits, tc.cell, args.task, e.sample.sample_id)
        records.extend(recs)
        skip = sorted(set(skip) | (set(tokens) - set(fits)))
        if skip:
            skipped[e.sample.sample_id] = skip
    by_res = {}
    for t in sorted({r.resolution for r in records}):
        by_res[str(t)] = score_answers([r for r in records if r.resolution == t], ScorePolicy(lowercase=False))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    summary = _write_records(out, records, {"by_resolution": by_res, "skipped": skipped})
    for t, s in by_res.items():
        print(f"tokens {t:>4}: mean NED {s['mean_ned']:.4f}  exact {s['exact_match']:.3f}  n={s['count']}")
    logger.info("sweep: %d records, overall mean NED %s", summary["count"], summary["mean_ned"])
    write_manifest(out.with_name(out.name + ".manifest.json"), "sweep", cfg,
                   {"params": params_path, "corpus": corpus}, [out], {"task": args.task, "tokens": tokens})
    return 0


# --- parser -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI config file (defaults apply when omitted)")
    common.add_argument("--workers", type=int, default=1, help="max parallel worker processes (output is identical for any value)")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging verbosity on stderr")

    p = _Parser(prog=TOOL, description="Build vision-label corpora, check the losses and run the toy model.")
    p.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("align", parents=[common], help="label OCR word boxes onto patch grids")
    s.add_argument("--ocr", required=True, help="JSONL of {image_id, width, height, words}")
    s.add_argument("--qa", required=True, help="JSONL of {image_id, question, answer}")
    s.add_argument("--vocab", help="vocabulary file (overrides [paths] vocab)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(fn=cmd_align)

    s = sub.add_parser("render", parents=[common], help="render word documents with exact labels")
    s.add_argument("--docs", required=True, help="JSONL of {doc_id, text, question, answer}")
    s.add_argument("--vocab", help="vocabulary file (overrides [paths] vocab)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--png", action="store_true", help="also write PNG copies of the images")
    s.set_defaults(fn=cmd_render)

    s = sub.add_parser("toydata", parents=[common], help="render the synthetic train/val sets for the toy model")
    s.add_argument("--out", required=True, help="output directory (gets train/ and val/)")
    s.set_defaults(fn=cmd_toydata)

    s = sub.add_parser("stats", parents=[common], help="print corpus statistics")
    s.add_argument("--in", dest="input", required=True, help="labeled directory or samples.jsonl")
    s.add_argument("--vocab", help="vocabulary for counting text labels (default: UTF-8 bytes)")
    s.add_argument("--out", help="also write stats.json and stats.txt here")
    s.set_defaults(fn=cmd_stats)

    s = sub.add_parser("losscheck", parents=[common], help="run the loss identity and gradient checks")
    s.add_argument("--seed", type=int, help="seed for the random batches (default: config seed)")
    s.add_argument("--skip-model", action="store_true", help="skip the slower full-model gradient check")
    s.add_argument("--out", help="also write losscheck.jsonl here")
    s.set_defaults(fn=cmd_losscheck)

    s = sub.add_parser("train", parents=[common], help="train the toy model")
    s.add_argument("--data", required=True, help="directory with train/ and val/ splits")
    s.add_argument("--out", required=True, help="output directory for params.bin and report.jsonl")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("probe", parents=[common], help="top-k ids at each visual position of one sample")
    s.add_argument("--params", required=True, help="params.bin from train")
    s.add_argument("--data", required=True, help="directory or samples.jsonl holding the sample")
    s.add_argument("--sample", required=True, help="sample id")
    s.add_argument("--k", type=int, default=5, help="ids per position")
    s.add_argument("--out", help="also write the table to this file")
    s.set_defaults(fn=cmd_probe)

    for name, fn, helptext in (("eval", cmd_eval, "score the toy model on an OCR-style task"),
                               ("sweep", cmd_sweep, "score the toy model across visual token budgets")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--task", required=True, choices=["contextual", "noncontextual", "extraction"],
                       help="extraction reads rendered samples; the others render text from --corpus")
        s.add_argument("--params", required=True, help="params.bin from train")
        s.add_argument("--corpus", required=True, help="text file (one passage per line) or samples for extraction")
        s.add_argument("--out", required=True, help="output JSONL file")
        if name == "sweep":
            s.add_argument("--tokens", help="comma-separated visual token counts (default: [eval] tokens)")
        s.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(
        level=getattr(logging, args.log_level), stream=sys.stderr,
        format="level=%(levelname)s logger=%(name)s msg=%(message)s", force=True,
    )
    try:
        if args.workers < 1:
            raise ValidationError("--workers must be >= 1")
        cfg = load_config(args.config)
        return args.fn(args, cfg)
    except ValidationError as e:
        print(f"{TOOL}: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - any other failure is a runtime error
        logger.debug("runtime failure", exc_info=True)
        print(f"{TOOL}: runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
