"""Command-line entry point.

Subcommands: gen-prompts, zero-shot, train, eval, apriori, check-grads.
Exit codes: 0 success, 1 error (including bad flags), 2 empty-result warning.
Every subcommand is deterministic given identical flags and seed on the
reference backend.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from mobmod import apriori as apriori_mod
from mobmod import evaluation, prompts, tokenizer, training
from mobmod.dataset import load_manifest
from mobmod.encoder import BackendConfig, BackendError, create_backend
from mobmod.evaluation import EvalConfig
from mobmod.prompts import PromptError, PromptSet

GRADCHECK_THRESHOLD = 1e-4
GRADCHECK_BUG_ENV = "MOBMOD_GRADCHECK_BUG"  # test hook: corrupts analytic grads
THREADS_ENV = "MOBMOD_THREADS"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_EMPTY = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map argparse's exit(2) onto our error path
        raise UsageError(message)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError, BackendError, PromptError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mobmod", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-prompts", help="generate a prompt template file")
    p.add_argument(
        "--strategy",
        required=True,
        choices=["default", "context", "pairs", "features", "apriori-regenerate"],
    )
    p.add_argument("--tokens", help="token-lists JSON file, or builtin 'initial'/'candidate'")
    p.add_argument("--pairs", help="mined pairs file (apriori-regenerate only)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_prompts)

    for name, fn in (("zero-shot", _cmd_zero_shot), ("eval", _cmd_eval)):
        p = sub.add_parser(name, help=f"run the {name} evaluation")
        _add_data_flags(p)
        if name == "eval":
            p.add_argument("--proj", required=True, help="trained projection file")
        p.add_argument("--report", required=True, help="per-template CSV output path")
        p.add_argument("--markdown", help="optional markdown summary output path")
        p.set_defaults(func=fn)

    p = sub.add_parser("train", help="train the projection layer")
    _add_data_flags(p)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--out", required=True, help="projection output file")
    p.add_argument("--metrics", help="metrics CSV path (default: <out>.metrics.csv)")
    p.add_argument("--warm-start", help="visual-projection file for weight warm start")
    p.add_argument("--feature-cache", help="pooled-feature cache file to reuse or create")
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("apriori", help="mine frequent token pairs from evaluation records")
    p.add_argument("--records", required=True, help="per-template CSV from zero-shot/eval")
    p.add_argument("--min-support", type=float, default=apriori_mod.DEFAULT_MIN_SUPPORT)
    p.add_argument("--out-pairs", required=True)
    p.add_argument("--out-templates", required=True)
    p.set_defaults(func=_cmd_apriori)

    p = sub.add_parser("check-grads", help="finite-difference gradient diagnostics")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=_cmd_check_grads)

    return parser


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True)
    p.add_argument("--templates", help="template library file")
    p.add_argument(
        "--strategy",
        choices=["default", "context", "pairs", "features"],
        help="generate templates in-process instead of --templates",
    )
    p.add_argument("--tokens", help="token-lists JSON file, or builtin 'initial'/'candidate'")
    p.add_argument("--backend", choices=["reference", "model"], default="reference")
    p.add_argument("--image-model")
    p.add_argument("--text-model")
    p.add_argument("--vocab", help="vocabulary file (defaults to a builtin character vocab)")
    p.add_argument("--merges", help="merges file (required with --vocab)")
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--logit-scale", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--threads", type=int, default=None)


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV)
    return max(1, int(env)) if env else 1


def _load_backend(args):
    if args.backend == "model":
        if not (args.image_model and args.text_model):
            raise UsageError("--backend model requires --image-model and --text-model")
        config = BackendConfig(
            kind="model-file",
            image_model_path=args.image_model,
            text_model_path=args.text_model,
        )
    else:
        config = BackendConfig(kind="reference", seed=args.seed)
    return create_backend(config)


def _load_vocab(args) -> tokenizer.Vocabulary:
    if args.vocab or args.merges:
        if not (args.vocab and args.merges):
            raise UsageError("--vocab and --merges must be given together")
        return tokenizer.load_vocabulary(args.vocab, args.merges)
    return builtin_vocabulary()


def builtin_vocabulary() -> tokenizer.Vocabulary:
    """Character-level fallback vocabulary over printable ASCII."""
    import string

    chars = sorted(set(string.printable) - set(string.whitespace))
    tokens = chars + [tokenizer.SOT_TOKEN, tokenizer.EOT_TOKEN, tokenizer.PAD_TOKEN]
    token_to_id = {t: i for i, t in enumerate(tokens)}
    return tokenizer.Vocabulary(
        token_to_id=token_to_id,
        merges=[],
        sot_id=token_to_id[tokenizer.SOT_TOKEN],
        eot_id=token_to_id[tokenizer.EOT_TOKEN],
        pad_id=token_to_id[tokenizer.PAD_TOKEN],
    )


def _token_lists(args) -> prompts.TokenLists:
    if not args.tokens:
        raise UsageError(f"--tokens is required for strategy {args.strategy!r}")
    if args.tokens in prompts.BUILTIN_TOKEN_LISTS:
        return prompts.BUILTIN_TOKEN_LISTS[args.tokens]
    return prompts.load_token_lists(args.tokens)


def _build_prompt_set(args) -> PromptSet:
    if args.strategy == "default":
        return prompts.default_templates()
    if args.strategy == "context":
        base = prompts.default_templates()
        return PromptSet(templates=[t for t in base.templates if t.strategy == "context"])
    if args.strategy == "pairs":
        return prompts.generate_pair_templates(_token_lists(args))
    if args.strategy == "features":
        return prompts.generate_feature_templates(_token_lists(args))
    raise UsageError(f"unknown strategy {args.strategy!r}")


def _load_prompt_set(args) -> PromptSet:
    if bool(args.templates) == bool(args.strategy):
        raise UsageError("exactly one of --templates and --strategy is required")
    if args.templates:
        return prompts.load_template_library(args.templates)
    return _build_prompt_set(args)


def _snapshot(args, **extra) -> dict:
    keys = ("seed", "frames", "logit_scale", "backend", "strategy", "templates")
    snap = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    snap.update(extra)
    return snap


def _cmd_gen_prompts(args) -> int:
    if args.strategy == "apriori-regenerate":
        if not args.pairs:
            raise UsageError("--pairs is required for strategy 'apriori-regenerate'")
        prompt_set = apriori_mod.regenerate_from_pairs(apriori_mod.load_pairs_file(args.pairs))
    else:
        prompt_set = _build_prompt_set(args)
    count = prompts.write_template_library(prompt_set, args.out)
    print(f"wrote {count} templates to {args.out}")
    return EXIT_OK


def _cmd_zero_shot(args) -> int:
    entries = load_manifest(args.manifest)
    prompt_set = _load_prompt_set(args)
    backend = _load_backend(args)
    vocab = _load_vocab(args)
    config = EvalConfig(
        frames_per_clip=args.frames, logit_scale=args.logit_scale, threads=_threads(args)
    )
    report = evaluation.run_zero_shot(
        entries, prompt_set, backend, vocab, config, extra_config=_snapshot(args)
    )
    _emit(report, args)
    return EXIT_OK


def _cmd_eval(args) -> int:
    entries = load_manifest(args.manifest)
    prompt_set = _load_prompt_set(args)
    backend = _load_backend(args)
    vocab = _load_vocab(args)
    layer = training.load_projection(args.proj)
    config = EvalConfig(
        frames_per_clip=args.frames, logit_scale=args.logit_scale, threads=_threads(args)
    )
    report = evaluation.run_supervised(
        entries, prompt_set, layer, backend, vocab, config,
        extra_config=_snapshot(args, proj=args.proj),
    )
    _emit(report, args)
    return EXIT_OK


def _emit(report, args) -> None:
    evaluation.emit_report(report, "csv", args.report)
    print(f"wrote {len(report.per_template)} per-template rows to {args.report}")
    if args.markdown:
        evaluation.emit_report(report, "markdown", args.markdown)
    for name, value in report.rows.items():
        print(f"{name}: {value:.4f}")


def _cmd_train(args) -> int:
    entries = load_manifest(args.manifest)
    train_entries = [e for e in entries if e.split == "train"]
    if not train_entries:
        raise ValueError("manifest has no train-split entries")
    prompt_set = _load_prompt_set(args)
    backend = _load_backend(args)
    vocab = _load_vocab(args)
    eval_config = EvalConfig(frames_per_clip=args.frames, threads=_threads(args))

    cache_path = Path(args.feature_cache) if args.feature_cache else None
    if cache_path and cache_path.exists():
        kind, seed, cached = training.load_feature_cache(cache_path)
        if kind != backend.kind or (backend.kind == "reference" and seed != args.seed):
            raise ValueError(
                f"feature cache {cache_path} was built with backend {kind!r} seed {seed},"
                f" not {backend.kind!r} seed {args.seed}"
            )
        missing = [e.id for e in train_entries if e.id not in cached]
        if missing:
            raise ValueError(f"feature cache missing clips: {missing[:5]}")
        ids = [e.id for e in train_entries]
        features = np.stack([cached[i] for i in ids])
        labels = [e.label for e in train_entries]
    else:
        ids, labels, vectors = evaluation.pooled_clip_vectors(
            train_entries, backend, eval_config, space="feature"
        )
        features = np.stack(vectors)
        if cache_path:
            training.save_feature_cache(
                cache_path, backend.kind, args.seed, dict(zip(ids, features))
            )

    warm = training.load_visual_projection(args.warm_start) if args.warm_start else None
    config = training.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        frames_per_clip=args.frames,
        learning_rate=args.lr,
        logit_scale=args.logit_scale,
        seed=args.seed,
        max_steps=args.max_steps,
    )
    layer, metrics = training.train(
        features, labels, prompt_set, backend, vocab, config, warm_start=warm
    )
    training.save_projection(layer, args.out)
    metrics_path = args.metrics or f"{args.out}.metrics.csv"
    snapshot = _snapshot(
        args, epochs=args.epochs, batch=args.batch, lr=args.lr, out=args.out
    )
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config: {json.dumps(snapshot, sort_keys=True)}\n")
        fh.write("epoch,loss,accuracy\n")
        for m in metrics:
            fh.write(f"{m.epoch},{m.loss:.6f},{m.accuracy:.6f}\n")
    print(f"trained {config.epochs} epochs; final accuracy {metrics[-1].accuracy:.4f}")
    print(f"wrote projection to {args.out} and metrics to {metrics_path}")
    return EXIT_OK


def _cmd_apriori(args) -> int:
    if not 0 < args.min_support <= 1:
        raise UsageError(f"--min-support must be in (0, 1], got {args.min_support}")
    records = evaluation.load_eval_records(args.records)
    transactions = apriori_mod.build_transactions(records)
    if not transactions:
        _write_empty(args.out_pairs)
        print("warning: no records above the median accuracy; empty output", file=sys.stderr)
        return EXIT_EMPTY
    pairs = apriori_mod.apriori_frequent_pairs(transactions, args.min_support)
    apriori_mod.write_pairs_file(pairs, args.out_pairs)
    if not pairs:
        print("warning: no frequent pairs at this support; empty output", file=sys.stderr)
        return EXIT_EMPTY
    try:
        prompt_set = apriori_mod.regenerate_from_pairs(pairs)
    except PromptError as exc:
        print(f"warning: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    count = prompts.write_template_library(prompt_set, args.out_templates)
    print(f"wrote {len(pairs)} pairs to {args.out_pairs} and {count} templates to {args.out_templates}")
    return EXIT_OK


def _write_empty(path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n"):
        pass


def _cmd_check_grads(args) -> int:
    if args.trials < 1:
        raise UsageError(f"--trials must be >= 1, got {args.trials}")
    inject = os.environ.get(GRADCHECK_BUG_ENV) == "1"
    max_rel = training.gradient_check(args.seed, args.trials, inject_bug=inject)
    status = "ok" if max_rel < GRADCHECK_THRESHOLD else "FAIL"
    print(f"max relative gradient error over {args.trials} trials: {max_rel:.3e} [{status}]")
    return EXIT_OK if max_rel < GRADCHECK_THRESHOLD else EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
