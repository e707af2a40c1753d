"""Command-line pipeline: data generation, training, evaluation, the bias
sweep, generation quality, hard-set filtering and theorem verification.

Every command writes a RunManifest capturing the resolved configuration,
seeds and output hashes; `rerun` replays a manifest, and replays are
byte-identical because all randomness flows from explicit seeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bayes, metrics
from .checkpoint import file_sha256, load_model_with_meta, save_model
from .data import (
    LABELS,
    SPLITTERS,
    CorpusSpec,
    SyntheticBiasConfig,
    TokenOracle,
    build_hard_set,
    build_vocabulary,
    debias_eval_set,
    generate_corpus,
    inject_synthetic_bias,
    read_jsonl,
    write_jsonl,
)
from .seqmodel import ClsConfig, SeqConfig, SeqModel, TextClassifier
from .training import TrainConfig, finetune_config, fit

THEOREM_TOLERANCE = 1e-6


# ---------------------------------------------------------------------------
# run manifests


class RunContext:
    def __init__(self, command: str, argv: list[str], args):
        self.command = command
        self.argv = list(argv)
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.seed = getattr(args, "seed", None)
        self.config = {k: v for k, v in vars(args).items()
                       if k not in ("func",) and not k.startswith("_")}
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.started = time.time()

    def track_input(self, path) -> Path:
        path = Path(path)
        self.inputs[str(path)] = file_sha256(path)
        return path

    def track_output(self, path) -> Path:
        self.outputs[str(Path(path))] = ""
        return Path(path)

    def write_manifest(self) -> Path:
        for p in list(self.outputs):
            self.outputs[p] = file_sha256(p)
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "seed": self.seed,
            "resolved_config": _jsonable(self.config),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_clock_sec": time.time() - self.started,
        }
        path = self.out_dir / f"manifest-{self.command}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        os.replace(tmp, path)
        return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _write_text(ctx: RunContext, name: str, text: str) -> Path:
    path = ctx.out_dir / name
    path.write_text(text)
    ctx.track_output(path)
    return path


# ---------------------------------------------------------------------------
# shared model/option plumbing


def _seq_config(args) -> SeqConfig:
    return SeqConfig(d_model=args.d_model, n_heads=args.n_heads,
                     n_enc_layers=args.enc_layers, n_dec_layers=args.dec_layers,
                     d_ff=args.d_ff, max_len=args.max_len)


def _cls_config(args) -> ClsConfig:
    return ClsConfig(d_model=args.d_model, n_heads=args.n_heads,
                     n_layers=args.enc_layers, d_ff=args.d_ff,
                     max_len=args.max_len)


def _train_config(args, objective: str) -> TrainConfig:
    base = TrainConfig(learning_rate=args.lr, max_epochs=args.epochs,
                       batch_size=args.batch_size, patience=args.patience,
                       word_dropout=args.word_dropout,
                       weight_decay=args.weight_decay, seed=args.seed,
                       objective=objective)
    return base


def _parse_prior(spec: str | None, n_labels: int):
    if spec is None or spec == "uniform":
        return bayes.UniformPrior(n_labels)
    if spec.startswith("empirical:"):
        data = read_jsonl(spec.split(":", 1)[1])
        return bayes.EmpiricalPrior.from_dataset(data, n_labels)
    if spec.startswith("learned:"):
        model, _ = load_model_with_meta(spec.split(":", 1)[1])
        if not isinstance(model, TextClassifier):
            raise SystemExit("learned prior checkpoint must be a classifier")
        return bayes.LearnedPrior(model, frozen=True)
    raise SystemExit(f"unknown prior {spec!r}; use uniform, empirical:PATH "
                     f"or learned:CKPT")


def _model_inputs(model, meta: dict, dataset):
    mode = meta.get("input_mode", "joined")
    if mode == "joined":
        return [bayes.joined_input(ex) for ex in dataset]
    splitter = SPLITTERS[mode]
    return [splitter(ex).b for ex in dataset]


def _predict_records(model, meta, prior, dataset) -> list[metrics.PredictionRecord]:
    if isinstance(model, SeqModel):
        split_name = meta.get("input_mode", "hypothesis-only")
        splits = [SPLITTERS[split_name](ex) for ex in dataset]
        post = bayes.posteriors(model, prior, splits)
        preds = np.argmax(post, axis=1)
        return [metrics.PredictionRecord(id=ex.id, gold=ex.label, pred=int(p),
                                         posterior=[float(x) for x in row])
                for ex, p, row in zip(dataset, preds, post)]
    if isinstance(model, TokenOracle):
        preds = model.predict([ex.hypothesis for ex in dataset])
        return [metrics.PredictionRecord(id=ex.id, gold=ex.label, pred=int(p))
                for ex, p in zip(dataset, preds)]
    proba = model.predict_proba(_model_inputs(model, meta, dataset))
    preds = np.argmax(proba, axis=1)
    return [metrics.PredictionRecord(id=ex.id, gold=ex.label, pred=int(p),
                                     posterior=[float(x) for x in row])
            for ex, p, row in zip(dataset, preds, proba)]


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(argv, args) -> int:
    ctx = RunContext("gen-data", argv, args)
    spec = CorpusSpec(entities=args.entities, attr_types=args.attr_types,
                      values_per_type=args.values, per_label=args.per_label,
                      seed=args.seed)
    splits = {
        "train": generate_corpus(spec),
        "dev": generate_corpus(CorpusSpec(
            entities=args.entities, attr_types=args.attr_types,
            values_per_type=args.values, per_label=args.dev_per_label,
            seed=args.seed + 1)),
        "test": generate_corpus(CorpusSpec(
            entities=args.entities, attr_types=args.attr_types,
            values_per_type=args.values, per_label=args.test_per_label,
            seed=args.seed + 2)),
    }
    if args.bias_ratio is not None:
        cfg = SyntheticBiasConfig(args.bias_ratio, seed=args.seed)
        splits = {k: inject_synthetic_bias(v, cfg) for k, v in splits.items()}
        splits["test_stripped"] = debias_eval_set(splits["test"], cfg, "strip")
        splits["test_rerand"] = debias_eval_set(splits["test"], cfg, "rerandomize")
    for name, dataset in splits.items():
        path = ctx.out_dir / f"{name}.jsonl"
        write_jsonl(path, dataset)
        ctx.track_output(path)
        print(f"wrote {path} ({len(dataset)} examples)")
    ctx.write_manifest()
    return 0


# ---------------------------------------------------------------------------
# train

VALID_TRAIN_MATRIX = """\
valid (objective, prior) combinations:
  generative      no prior (inference uses uniform)
  bias-only       no prior (requires --split)
  discriminative  no prior
  finetune        --prior uniform | empirical:PATH | learned:CKPT (required)"""


def cmd_train(argv, args) -> int:
    ctx = RunContext("train", argv, args)
    train_set = read_jsonl(ctx.track_input(args.train))
    dev_set = read_jsonl(ctx.track_input(args.dev))
    if args.objective != "finetune" and args.prior is not None:
        raise SystemExit(f"--prior is only valid for finetune\n{VALID_TRAIN_MATRIX}")
    if args.objective == "finetune" and args.prior is None:
        raise SystemExit(f"finetune requires --prior\n{VALID_TRAIN_MATRIX}")
    if args.objective == "bias-only" and args.split is None:
        raise SystemExit(f"bias-only training requires --split\n{VALID_TRAIN_MATRIX}")

    vocab = build_vocabulary(train_set)
    ckpt = ctx.out_dir / (args.ckpt_name or "model.ckpt")

    if args.objective in ("generative", "finetune"):
        split_name = args.split or "hypothesis-only"
        splitter = SPLITTERS[split_name]
        pairs = [(splitter(ex), ex.label) for ex in train_set]
        dev_pairs = [(splitter(ex), ex.label) for ex in dev_set]
        if args.objective == "generative":
            model = SeqModel(vocab, _seq_config(args), seed=args.seed)
            log = fit(model, pairs, dev_pairs, _train_config(args, "generative-nll"))
        else:
            if args.init is not None:
                model, init_meta = load_model_with_meta(ctx.track_input(args.init))
                if not isinstance(model, SeqModel):
                    raise SystemExit("--init must point at a generative checkpoint")
                split_name = init_meta.get("input_mode", split_name)
                splitter = SPLITTERS[split_name]
            else:
                model = SeqModel(vocab, _seq_config(args), seed=args.seed)
            prior = _parse_prior(args.prior, vocab.n_labels)
            cfg = _train_config(args, "finetune-bayes")
            if not args.no_finetune_defaults:
                cfg = finetune_config(_train_config(args, "generative-nll"))
            log = fit(model, pairs, dev_pairs, cfg, prior=prior)
        save_model(ckpt, model, meta={"input_mode": split_name})
    else:
        cfg = _train_config(args, "discriminative-ce")
        if args.objective == "bias-only":
            splitter = SPLITTERS[args.split]
            model, log = bayes.train_bias_only(train_set, dev_set, splitter,
                                               vocab, _cls_config(args), cfg)
            save_model(ckpt, model, meta={"input_mode": args.split})
        else:
            model, log = bayes.train_discriminative(train_set, dev_set, vocab,
                                                    _cls_config(args), cfg)
            save_model(ckpt, model, meta={"input_mode": "joined"})

    ctx.track_output(ckpt)
    _write_text(ctx, "trainlog.json", json.dumps({
        "train_losses": log.train_losses,
        "val_metrics": log.val_metrics,
        "best_epoch": log.best_epoch,
    }, indent=2))
    ctx.write_manifest()
    print(f"saved checkpoint {ckpt} (best epoch {log.best_epoch}, "
          f"val {log.val_metrics[log.best_epoch]:.4f})")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(argv, args) -> int:
    ctx = RunContext("eval", argv, args)
    model, meta = load_model_with_meta(ctx.track_input(args.ckpt))
    if args.split is not None:
        meta = dict(meta, input_mode=args.split)
    n_labels = model.vocab.n_labels
    prior = _parse_prior(args.prior, n_labels)
    test_set = read_jsonl(ctx.track_input(args.data))
    records = _predict_records(model, meta, prior, test_set)
    metrics.write_predictions(ctx.track_output(ctx.out_dir / "predictions_test.jsonl"),
                              records)
    acc_test = metrics.accuracy(records)
    acc_hard = d = None
    if args.hard is not None:
        hard_set = read_jsonl(ctx.track_input(args.hard))
        hard_records = _predict_records(model, meta, prior, hard_set)
        metrics.write_predictions(
            ctx.track_output(ctx.out_dir / "predictions_hard.jsonl"), hard_records)
        acc_hard = metrics.accuracy(hard_records)
        d = metrics.delta(acc_test, acc_hard)
    correlation = None
    if args.bias_model is not None:
        if args.bias_model == "oracle:token":
            bias_model, bias_meta = TokenOracle(), {}
        else:
            bias_model, bias_meta = load_model_with_meta(
                ctx.track_input(args.bias_model))
        bias_records = _predict_records(bias_model, bias_meta, prior, test_set)
        correlation = metrics.rho(records, bias_records)
    report = metrics.MetricsReport(
        accuracy_test=acc_test, accuracy_hard=acc_hard, delta=d, rho=correlation,
        metadata={"checkpoint": Path(args.ckpt).name,
                  "prior": args.prior or "uniform",
                  "input_mode": meta.get("input_mode", "joined"),
                  "data": Path(args.data).name,
                  "hard": Path(args.hard).name if args.hard else None,
                  "seed": args.seed})
    _write_text(ctx, "report.json", report.to_json())
    _write_text(ctx, "report.txt", report.to_table() + "\n")
    ctx.write_manifest()
    print(report.to_table())
    return 0


# ---------------------------------------------------------------------------
# generate


def cmd_generate(argv, args) -> int:
    ctx = RunContext("generate", argv, args)
    model, meta = load_model_with_meta(ctx.track_input(args.ckpt))
    if not isinstance(model, SeqModel):
        raise SystemExit("generate requires a generative checkpoint")
    dataset = read_jsonl(ctx.track_input(args.data))
    splitter = SPLITTERS[meta.get("input_mode", "hypothesis-only")]
    labels_for = (lambda ex: [ex.label]) if args.label_source == "gold" \
        else (lambda ex: list(range(model.vocab.n_labels)))
    rows = []
    candidates, references = [], []
    for i, ex in enumerate(dataset):
        split = splitter(ex)
        for y in labels_for(ex):
            out = model.generate(split.b, y, mode=args.mode,
                                 temperature=args.temperature,
                                 seed=args.seed + i if args.mode == "sample" else None,
                                 max_len=args.gen_max_len)
            rows.append({"id": ex.id, "label": LABELS[y], "generation": " ".join(out)})
            if y == ex.label:
                candidates.append(out)
                references.append(list(split.r))
    gen_path = ctx.out_dir / "generations.jsonl"
    with open(gen_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    ctx.track_output(gen_path)
    result = {
        "bleu": metrics.bleu(candidates, references),
        "self_bleu_generated": metrics.self_bleu(candidates),
        "self_bleu_gold": metrics.self_bleu(references),
        "n_generations": len(rows),
    }
    _write_text(ctx, "generation_metrics.json",
                json.dumps(result, indent=2, sort_keys=True))
    ctx.write_manifest()
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# hard-set


def cmd_hard_set(argv, args) -> int:
    ctx = RunContext("hard-set", argv, args)
    dataset = read_jsonl(ctx.track_input(args.data))
    model, meta = load_model_with_meta(ctx.track_input(args.bias_model))
    splitter = SPLITTERS[meta.get("input_mode", "hypothesis-only")]
    hard = build_hard_set(dataset, model, splitter)
    out = ctx.out_dir / "hard.jsonl"
    write_jsonl(out, hard)
    ctx.track_output(out)
    ctx.write_manifest()
    print(f"hard set: {len(hard)} of {len(dataset)} examples -> {out}")
    return 0


# ---------------------------------------------------------------------------
# sweep


def _sweep_eval(model, meta, dataset, prior):
    records = _predict_records(model, meta, prior, dataset)
    return records, metrics.accuracy(records)


def cmd_sweep(argv, args) -> int:
    ctx = RunContext("sweep", argv, args)
    base_train = read_jsonl(ctx.track_input(args.train))
    base_dev = read_jsonl(ctx.track_input(args.dev))
    base_test = read_jsonl(ctx.track_input(args.test))
    ratios = [float(x) for x in args.ratios.split(",")]
    seeds = [int(x) for x in args.seeds.split(",")]
    csv_path = ctx.out_dir / "sweep.csv"
    fieldnames = ["ratio", "model", "seed", "acc_biased", "acc_unbiased",
                  "acc_rerand", "delta", "rho"]
    wrote_header = False
    oracle = TokenOracle()

    def run_one(ratio, seed):
        cfg = SyntheticBiasConfig(ratio, seed=seed)
        train_inj = inject_synthetic_bias(base_train, cfg)
        dev_inj = inject_synthetic_bias(base_dev, cfg)
        test_inj = inject_synthetic_bias(base_test, cfg)
        test_stripped = debias_eval_set(test_inj, cfg, "strip")
        test_rerand = debias_eval_set(test_inj, cfg, "rerandomize")
        vocab = build_vocabulary(train_inj)
        oracle_records = _predict_records(oracle, {}, None, test_rerand)
        rows = []

        disc, _ = bayes.train_discriminative(
            train_inj, dev_inj, vocab, _cls_config(args),
            _train_config_seeded(args, "discriminative-ce", seed))
        rows.append(_sweep_row("discriminative", disc, {"input_mode": "joined"},
                               ratio, seed, test_inj, test_stripped, test_rerand,
                               oracle_records))

        gen = SeqModel(vocab, _seq_config(args), seed=seed)
        pairs = [(SPLITTERS["hypothesis-only"](ex), ex.label) for ex in train_inj]
        dev_pairs = [(SPLITTERS["hypothesis-only"](ex), ex.label) for ex in dev_inj]
        fit(gen, pairs, dev_pairs,
            _train_config_seeded(args, "generative-nll", seed))
        rows.append(_sweep_row("generative", gen,
                               {"input_mode": "hypothesis-only"},
                               ratio, seed, test_inj, test_stripped, test_rerand,
                               oracle_records))
        return rows

    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        wrote_header = True
        try:
            for ratio in ratios:
                for seed in seeds:
                    for row in run_one(ratio, seed):
                        writer.writerow(row)
                        fh.flush()
        except Exception as exc:  # preserve the partial CSV, mark the abort
            fh.write(f"# aborted: {exc}\n")
            ctx.track_output(csv_path)
            ctx.write_manifest()
            raise
    ctx.track_output(csv_path)
    ctx.write_manifest()
    print(f"sweep complete -> {csv_path}")
    return 0


def _train_config_seeded(args, objective, seed) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, max_epochs=args.epochs,
                       batch_size=args.batch_size, patience=args.patience,
                       word_dropout=args.word_dropout,
                       weight_decay=args.weight_decay, seed=seed,
                       objective=objective)


def _sweep_row(name, model, meta, ratio, seed, test_inj, test_stripped,
               test_rerand, oracle_records):
    prior = bayes.UniformPrior(len(LABELS))
    _, acc_biased = _sweep_eval(model, meta, test_inj, prior)
    _, acc_unbiased = _sweep_eval(model, meta, test_stripped, prior)
    rerand_records, acc_rerand = _sweep_eval(model, meta, test_rerand, prior)
    return {
        "ratio": ratio, "model": name, "seed": seed,
        "acc_biased": f"{acc_biased:.6f}",
        "acc_unbiased": f"{acc_unbiased:.6f}",
        "acc_rerand": f"{acc_rerand:.6f}",
        "delta": f"{acc_biased - acc_rerand:.6f}",
        "rho": f"{metrics.rho(rerand_records, oracle_records):.6f}",
    }


# ---------------------------------------------------------------------------
# verify-theorem


def cmd_verify_theorem(argv, args) -> int:
    from .vocab import MASK, PAD, UNK, Vocabulary, label_token

    ctx = RunContext("verify-theorem", argv, args)
    if args.prior == "uniform":
        priors = [("uniform", bayes.UniformPrior(len(LABELS)))]
    else:
        vec = [float(x) for x in args.prior.split(",")]
        priors = [(args.prior, bayes.EmpiricalPrior(vec))]

    models = []
    if args.ckpt is not None:
        model, _ = load_model_with_meta(ctx.track_input(args.ckpt))
        if not isinstance(model, SeqModel):
            raise SystemExit("verify-theorem requires a generative checkpoint")
        models.append(("checkpoint", model))
    else:
        tokens = ["<pad>", "<bos>", "<eos>", "<unk>", "MASK"] + \
            [label_token(k) for k in range(3)]
        voc = Vocabulary(tokens=tokens, n_labels=3)
        cfg = SeqConfig(d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=1,
                        d_ff=16, max_len=args.max_r_len + 2)
        for i in range(args.n_models):
            models.append((f"random-{i}", SeqModel(voc, cfg, seed=args.seed + i)))

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    checks = 0
    for model_name, model in models:
        voc = model.vocab
        non_special = [i for i in range(len(voc)) if i != voc.eos_id]
        for _ in range(args.n_b):
            blen = int(rng.integers(1, max(2, model.config.max_len - 1)))
            b_ids = rng.choice(non_special, size=blen)
            b = voc.decode([int(i) for i in b_ids])
            for prior_name, prior in priors:
                implied = bayes.implied_bias(model, prior, b,
                                             max_r_len=args.max_r_len)
                dev = float(np.abs(implied - prior.probs(b)).max())
                worst = max(worst, dev)
                checks += 1
    passed = worst <= THEOREM_TOLERANCE
    result = {"max_abs_deviation": worst, "tolerance": THEOREM_TOLERANCE,
              "checks": checks, "models": len(models),
              "priors": [p for p, _ in priors], "pass": passed}
    _write_text(ctx, "theorem.json", json.dumps(result, indent=2, sort_keys=True))
    ctx.write_manifest()
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# rerun


def cmd_rerun(argv, args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    replay = list(manifest["argv"])
    if args.out_dir is not None:
        if "--out-dir" in replay:
            i = replay.index("--out-dir")
            replay[i + 1] = args.out_dir
        else:
            replay += ["--out-dir", args.out_dir]
    return main(replay)


# ---------------------------------------------------------------------------
# parser


def _add_common(p, default_out="runs"):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=default_out)
    p.add_argument("--config", default=None,
                   help="JSON file of flag defaults (explicit flags win)")


def _add_model_flags(p):
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--enc-layers", type=int, default=2)
    p.add_argument("--dec-layers", type=int, default=2)
    p.add_argument("--d-ff", type=int, default=128)
    p.add_argument("--max-len", type=int, default=64)


def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--word-dropout", type=float, default=0.0)
    p.add_argument("--weight-decay", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genclass",
        description="generative-classifier debiasing pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--entities", type=int, default=20)
    p.add_argument("--attr-types", type=int, default=4)
    p.add_argument("--values", type=int, default=5)
    p.add_argument("--per-label", type=int, default=2000)
    p.add_argument("--dev-per-label", type=int, default=150)
    p.add_argument("--test-per-label", type=int, default=300)
    p.add_argument("--bias-ratio", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--objective", required=True,
                   choices=["generative", "bias-only", "discriminative", "finetune"])
    p.add_argument("--split", choices=sorted(SPLITTERS),
                   default=None)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--prior", default=None)
    p.add_argument("--init", default=None,
                   help="generative checkpoint to fine-tune from")
    p.add_argument("--ckpt-name", default=None)
    p.add_argument("--no-finetune-defaults", action="store_true",
                   help="use the explicit hyperparameter flags for finetune "
                        "instead of the x0.5 lr / 5 epoch defaults")
    _add_model_flags(p)
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--hard", default=None)
    p.add_argument("--prior", default=None)
    p.add_argument("--split", choices=sorted(SPLITTERS), default=None)
    p.add_argument("--bias-model", default=None,
                   help="checkpoint or oracle:token, for the rho column")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="decode remainders and score BLEU")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label-source", choices=["gold", "each"], default="gold")
    p.add_argument("--mode", choices=["greedy", "sample"], default="greedy")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--gen-max-len", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("hard-set", help="filter examples a bias model gets wrong")
    p.add_argument("--data", required=True)
    p.add_argument("--bias-model", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_hard_set)

    p = sub.add_parser("sweep", help="bias-ratio sweep over both model families")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--ratios", required=True, help="comma list, e.g. 0,0.5,0.8")
    p.add_argument("--seeds", required=True, help="comma list, e.g. 1,2,3")
    _add_model_flags(p)
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-theorem",
                       help="check implied bias == prior by enumeration")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--n-models", type=int, default=20)
    p.add_argument("--n-b", type=int, default=50)
    p.add_argument("--max-r-len", type=int, default=3)
    p.add_argument("--prior", default="uniform",
                   help="'uniform' or a comma probability vector")
    _add_common(p)
    p.set_defaults(func=cmd_verify_theorem)

    p = sub.add_parser("rerun", help="replay a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_rerun)
    return parser


def _apply_config_file(parser, argv):
    # --config provides defaults; explicit flags still win because argparse
    # parses them after set_defaults
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        overrides = json.loads(Path(cfg_path).read_text())
        for action in parser._subparsers._group_actions:
            for sub in action.choices.values():
                known = {a.dest for a in sub._actions}
                sub.set_defaults(**{k: v for k, v in overrides.items()
                                    if k in known})


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _apply_config_file(parser, argv)
    args = parser.parse_args(argv)
    if args.command == "rerun":
        return cmd_rerun(argv, args)
    return args.func(argv, args)


if __name__ == "__main__":
    sys.exit(main())
