"""Command-line entry point: synth, train, parse, eval and gradcheck.

Every subcommand reads an optional JSON config (``--config``) whose keys
mirror the long flag names with dashes turned into underscores; flags given
on the command line win over the file.  Exit status is 0 on success, 1 on
invalid configuration or a failed check, 2 on runtime errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .corpus import (CorpusError, SyntheticConfig, build_vocab, document_to_json, dump_corpus,
                     generate_synthetic, load_corpus, load_embeddings, relation_names)
from .model import PROFILES, Model, profile
from .numerics import GradCheckReport, finite_diff_check, make_rng
from .training import (CheckpointError, TrainConfig, TrainingError, document_loss, load_checkpoint,
                       save_checkpoint, train)
from .tree import TreeError, aggregate_report, parseval

log = logging.getLogger("topdown_drs")


class ConfigError(ValueError):
    """Configuration problems; ``problems`` lists every violated field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    profile: str = "en"
    model: dict = field(default_factory=dict)      # ModelConfig overrides
    train: dict = field(default_factory=dict)      # TrainConfig overrides
    train_path: str | None = None
    dev_path: str | None = None
    embeddings: str | None = None
    ignore_pos: bool = False
    min_token_count: int = 1
    seed: int = 1
    output_dir: str = "run"

    def model_config(self):
        return profile(self.profile, **self.model)

    def train_config(self) -> TrainConfig:
        base = dict(PROFILES[self.profile]["train"], seed=self.seed)
        base.update(self.train)
        return TrainConfig(**base)

    def validate(self) -> list:
        problems = []
        if self.profile not in PROFILES:
            problems.append(f"profile: unknown {self.profile!r} (choose from {sorted(PROFILES)})")
            return problems
        try:
            self.model_config()
        except TypeError as exc:
            problems.append(f"model: {exc}")
        try:
            problems += [f"train: {p}" for p in self.train_config().validate()]
        except TypeError as exc:
            problems.append(f"train: {exc}")
        if not self.train_path:
            problems.append("train_path: a training corpus is required")
        elif not Path(self.train_path).is_file():
            problems.append(f"train_path: no such file {self.train_path}")
        if self.dev_path and not Path(self.dev_path).is_file():
            problems.append(f"dev_path: no such file {self.dev_path}")
        if self.embeddings and not Path(self.embeddings).is_file():
            problems.append(f"embeddings: no such file {self.embeddings}")
        if self.min_token_count < 1:
            problems.append("min_token_count: must be >= 1")
        return problems


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc.strerror}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: {path}:{exc.lineno}: {exc.msg}"]) from exc
    if not isinstance(data, dict):
        raise ConfigError([f"config: {path} must hold a JSON object"])
    return data


def _merge(args, defaults: dict) -> dict:
    """Config file values, then explicitly given flags on top."""
    out = dict(defaults)
    out.update(_read_config(getattr(args, "config", None)))
    for k, v in vars(args).items():
        if k in ("command", "config", "func", "log_level") or v is None:
            continue
        out[k] = v
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- subcommands ---------------------------------------------------------

def cmd_synth(args) -> int:
    opts = _merge(args, {"n_docs": 100, "edu_range": [2, 10], "vocab_size": 50, "relations": 16, "seed": 7,
                         "fillers": [1, 3], "split": [80, 10, 10], "out": "synthetic"})
    split = [int(x) for x in opts["split"]]
    problems = []
    if len(split) != 3 or min(split) < 0 or sum(split) <= 0:
        problems.append(f"split: need three non-negative ratios, got {split}")
    cfg = SyntheticConfig(n_docs=int(opts["n_docs"]), edu_count_range=tuple(opts["edu_range"]),
                          vocab_size=int(opts["vocab_size"]), n_relations=int(opts["relations"]),
                          seed=int(opts["seed"]), filler_range=tuple(opts["fillers"]))
    try:
        cfg.validate()
    except ValueError as exc:
        problems.append(str(exc))
    if problems:
        raise ConfigError(problems)
    docs = generate_synthetic(cfg)
    total = sum(split)
    n_train = cfg.n_docs * split[0] // total
    n_dev = cfg.n_docs * split[1] // total
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    parts = {"train": docs[:n_train], "dev": docs[n_train:n_train + n_dev], "test": docs[n_train + n_dev:]}
    for name, part in parts.items():
        dump_corpus(part, out / f"{name}.jsonl")
        print(f"{name}: {len(part)} documents -> {out / f'{name}.jsonl'}")
    return 0


def _run_config(args) -> RunConfig:
    opts = _merge(args, {})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(opts) - known - {"epochs", "batch_size", "learning_rate", "dropout"})
    if unknown:
        raise ConfigError([f"{k}: unknown configuration key" for k in unknown])
    train_over = dict(opts.pop("train", {}) or {})
    for k in ("epochs", "batch_size", "learning_rate", "dropout"):
        if k in opts:
            train_over[k] = opts.pop(k)
    cfg = RunConfig(**opts, train=train_over)
    problems = cfg.validate()
    if problems:
        raise ConfigError(problems)
    return cfg


def cmd_train(args) -> int:
    cfg = _run_config(args)
    train_cfg = cfg.train_config()
    model_cfg = cfg.model_config()
    docs = load_corpus(cfg.train_path, ignore_pos=cfg.ignore_pos)
    dev = load_corpus(cfg.dev_path, ignore_pos=cfg.ignore_pos) if cfg.dev_path else []
    if not docs:
        raise ConfigError([f"train_path: {cfg.train_path} holds no documents"])
    vocab = build_vocab(docs, cfg.min_token_count)
    if len(vocab.relations) > model_cfg.n_relations:
        raise ConfigError([f"model: corpus has {len(vocab.relations)} relation labels, "
                           f"n_relations is {model_cfg.n_relations}"])
    emb = None
    if cfg.embeddings:
        emb = load_embeddings(cfg.embeddings, vocab, model_cfg.word_dim, seed=cfg.seed)
        log.info("%d of %d tokens have pretrained vectors", emb.n_pretrained, len(vocab.words))
    model = Model.create(model_cfg, vocab, seed=cfg.seed, word_embeddings=emb)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", {**asdict(cfg), "model": model_cfg.to_dict(), "train": asdict(train_cfg)})
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        def record(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        result = train(model, docs, dev, train_cfg, on_record=record)
    save_checkpoint(model, out / "final.ckpt", {"epoch": train_cfg.epochs})
    model.restore(result.best)
    save_checkpoint(model, out / "best.ckpt", {"epoch": result.best_epoch, "dev_full_micro": result.best_dev})
    dev_note = f", dev full micro-F1 {result.best_dev:.1f}" if result.best_dev is not None else ""
    print(f"best epoch {result.best_epoch}{dev_note}; checkpoints in {out}")
    return 0


def cmd_parse(args) -> int:
    opts = _merge(args, {"ignore_pos": False})
    problems = [f"{k}: required" for k in ("checkpoint", "input", "output") if not opts.get(k)]
    if problems:
        raise ConfigError(problems)
    model = load_checkpoint(opts["checkpoint"])
    docs = load_corpus(opts["input"], ignore_pos=bool(opts["ignore_pos"]))
    rate = model.vocab.unknown_rate(docs)
    print(f"unknown-token rate: {100 * rate:.2f}%", file=sys.stderr)
    if rate > 0.5:
        log.warning("more than half of the input tokens are outside the model vocabulary")
    with open(opts["output"], "w", encoding="utf-8") as fh:
        for doc in docs:
            pred = replace(doc, gold_tree=model.parse(doc))
            fh.write(json.dumps(document_to_json(pred), ensure_ascii=False, sort_keys=True) + "\n")
    print(f"parsed {len(docs)} documents -> {opts['output']}")
    return 0


def cmd_eval(args) -> int:
    opts = _merge(args, {})
    problems = [f"{k}: required" for k in ("pred", "gold") if not opts.get(k)]
    if problems:
        raise ConfigError(problems)
    pred = {d.doc_id: d for d in load_corpus(opts["pred"])}
    gold = {d.doc_id: d for d in load_corpus(opts["gold"])}
    missing = sorted(set(gold) ^ set(pred))
    if missing:
        raise ConfigError([f"doc_id {k}: present in only one of the corpora" for k in missing])
    counts = []
    for doc_id in sorted(gold):
        g, p = gold[doc_id], pred[doc_id]
        if g.binary_tree is None or p.binary_tree is None:
            raise ConfigError([f"doc_id {doc_id}: missing tree"])
        counts.append(parseval(p.binary_tree, g.binary_tree))
    report = aggregate_report(counts)
    print(report.to_text(), end="")
    if opts.get("report"):
        Path(opts["report"]).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def gradcheck(profile_name: str = "tiny", n_docs: int = 5, n_samples: int = 200, seed: int = 1,
              epsilon: float = 1e-5, tolerance: float = 1e-3, overrides: dict | None = None) -> GradCheckReport:
    """Central-difference check of the full loss on seeded 3-EDU documents."""
    if n_samples <= 0:
        raise ConfigError(["n_samples: must be positive"])
    if n_docs <= 0:
        raise ConfigError(["n_docs: must be positive"])
    docs = generate_synthetic(SyntheticConfig(n_docs=n_docs, edu_count_range=(3, 3), seed=seed))
    cfg = profile(profile_name, **(overrides or {}))
    vocab = build_vocab(docs, relations=relation_names(cfg.n_relations))
    model = Model.create(cfg, vocab, seed=seed)
    params = model.trainable()
    rng = make_rng(seed)
    report = None
    for doc in docs:
        r = finite_diff_check(lambda: document_loss(model, doc)[1], params, epsilon, tolerance, n_samples, rng)
        report = r if report is None else report.merge(r)
    return report


def cmd_gradcheck(args) -> int:
    opts = _merge(args, {"profile": "tiny", "n_docs": 5, "n_samples": 200, "seed": 1, "epsilon": 1e-5,
                         "tolerance": 1e-3})
    if opts["profile"] not in PROFILES:
        raise ConfigError([f"profile: unknown {opts['profile']!r}"])
    t0 = time.perf_counter()
    report = gradcheck(opts["profile"], int(opts["n_docs"]), int(opts["n_samples"]), int(opts["seed"]),
                       float(opts["epsilon"]), float(opts["tolerance"]), opts.get("model"))
    width = max(len(k) for k in report.errors)
    for name, err in report.errors.items():
        flag = "ok" if err <= report.tolerance else "FAIL"
        print(f"{name:<{width}}  {report.samples[name]:5d} coords  max rel err {err:.3e}  {flag}")
    verdict = "passed" if report.passed else "FAILED"
    print(f"gradcheck {verdict}: max {report.max_error:.3e} (tolerance {report.tolerance:g}) "
          f"in {time.perf_counter() - t0:.1f}s")
    return 0 if report.passed else 1


# --- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="topdown-drs", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write train/dev/test synthetic corpora")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--n-docs", type=int)
    s.add_argument("--edu-range", type=int, nargs=2, metavar=("LO", "HI"))
    s.add_argument("--vocab-size", type=int)
    s.add_argument("--relations", type=int)
    s.add_argument("--fillers", type=int, nargs=2, metavar=("LO", "HI"))
    s.add_argument("--split", type=int, nargs=3, metavar=("TRAIN", "DEV", "TEST"))
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a parser and keep the best dev checkpoint")
    t.add_argument("--config")
    t.add_argument("--profile", choices=sorted(PROFILES))
    t.add_argument("--train", dest="train_path")
    t.add_argument("--dev", dest="dev_path")
    t.add_argument("--embeddings")
    t.add_argument("--ignore-pos", action="store_true", default=None)
    t.add_argument("--min-token-count", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--dropout", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", dest="output_dir")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("parse", help="predict trees for a corpus")
    r.add_argument("--config")
    r.add_argument("--checkpoint")
    r.add_argument("--input")
    r.add_argument("--output")
    r.add_argument("--ignore-pos", action="store_true", default=None)
    r.set_defaults(func=cmd_parse)

    e = sub.add_parser("eval", help="Parseval scores of predicted against gold trees")
    e.add_argument("--config")
    e.add_argument("--pred")
    e.add_argument("--gold")
    e.add_argument("--report", help="also write the report as JSON here")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every parameter block")
    g.add_argument("--config")
    g.add_argument("--profile", choices=sorted(PROFILES))
    g.add_argument("--n-docs", type=int)
    g.add_argument("--n-samples", type=int)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--tolerance", type=float)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 1
    except (CorpusError, CheckpointError, TrainingError, TreeError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
