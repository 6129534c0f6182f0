"""Command-line pipeline driver.

Every command reads its inputs from flags or a ``key = value`` config file
(flags win), writes its artifacts into ``--out-dir`` and records a
``manifest.json`` with input/output hashes next to them.

Exit codes: 0 ok, 1 usage, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__
from .corpus import (
    CorpusError,
    Dataset,
    parse_taxonomy,
    parse_text_corpus,
    parse_xml_repo,
    read_vocab,
    stats,
    subsample,
    write_taxonomy,
    write_text_corpus,
    write_vocab,
    write_xml_repo,
)
from .features import fit_tfidf, pifa, read_label_features, transform_dataset, write_label_features
from .hlt import build_hlt_report, segment_tree
from .metrics import DEFAULT_KS, EvalReport, RankedPrediction, evaluate, format_report, format_table
from .plt import PltConfig, load, predict_dataset, save, train
from .transfer import TransferMode, flatten_report, inject_hierarchy, strip_meta
from .tree import LabelTree, TreeError, read_tree, write_tree

log = logging.getLogger("htcxml")

COMMANDS = (
    "ingest", "stats", "tfidf", "pifa", "build-tree", "segment",
    "flatten", "inject", "train", "predict", "evaluate", "compare",
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class PipelineConfig:
    train: str | None = None
    val: str | None = None
    test: str | None = None
    taxonomy: str | None = None
    tree: str | None = None
    vocab: str | None = None
    label_features: str | None = None
    model: str | None = None
    preds: str | None = None
    reports: list[str] = field(default_factory=list)
    mode: str = "full"
    plan: list[int] = field(default_factory=list)
    seed: int = 0
    budget: int = 512
    ks: list[int] = field(default_factory=lambda: list(DEFAULT_KS))
    epochs: int = 10
    learning_rate: float = 0.5
    l2: float = 1e-4
    beam: int = 10
    neg_cap: int = 2000
    top_k: int = 10
    max_iters: int = 50
    n_train: int = 0
    n_val: int = 0
    l2_normalize_pifa: bool = False
    strip_meta: bool = False
    threshold: float = 0.5
    workers: int = 1
    out_dir: str = "out"

    def validate(self) -> None:
        if not self.ks or sorted(set(self.ks)) != list(self.ks) or min(self.ks) < 1:
            raise UsageError("ks must be a non-empty ascending list of positive integers")
        try:
            TransferMode(self.mode)
        except ValueError:
            raise UsageError(f"mode must be 'full' or 'leaf', got {self.mode!r}") from None
        if any(k < 1 for k in self.plan):
            raise UsageError("branching plan entries must be positive")

    def plt_config(self) -> PltConfig:
        return PltConfig(self.epochs, self.learning_rate, self.l2, self.beam, self.neg_cap, self.seed)


_LIST_INT = {"plan", "ks"}
_LIST_STR = {"reports"}


def _coerce(key: str, raw, template: PipelineConfig):
    if key in _LIST_INT:
        if isinstance(raw, list):
            return [int(v) for v in raw]
        return [int(v) for v in str(raw).replace(",", " ").split()]
    if key in _LIST_STR:
        return list(raw) if isinstance(raw, list) else str(raw).split()
    default = getattr(template, key)
    if isinstance(default, bool):
        return raw if isinstance(raw, bool) else str(raw).strip().lower() in {"1", "true", "yes", "on"}
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return None if raw is None else str(raw)


def read_config_file(path: str | Path) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    text = Path(path).read_text(encoding="utf-8")
    parser.read_string("[pipeline]\n" + text)
    return {k.replace("-", "_"): v for k, v in parser["pipeline"].items()}


def resolve_config(file_values: dict, flag_values: dict) -> PipelineConfig:
    cfg = PipelineConfig()
    known = set(asdict(cfg))
    for source in (file_values, flag_values):
        for key, raw in source.items():
            if raw is None:
                continue
            if key not in known:
                raise UsageError(f"unknown config key {key!r}")
            try:
                setattr(cfg, key, _coerce(key, raw, PipelineConfig()))
            except ValueError:
                raise UsageError(f"bad value for {key}: {raw!r}") from None
    cfg.validate()
    return cfg


# data helpers


def _is_text(path: str) -> bool:
    return Path(path).suffix in {".jsonl", ".json"}


def load_dataset(path: str, vocab: list[str] | None = None) -> Dataset:
    if _is_text(path):
        return parse_text_corpus(path, vocab)
    return parse_xml_repo(path, vocab)


def save_dataset(ds: Dataset, path: Path) -> Path:
    if ds.has_features and path.suffix not in {".jsonl", ".json"}:
        write_xml_repo(ds, path)
    else:
        path = path.with_suffix(".jsonl")
        write_text_corpus(ds, path)
    return path


def _need(cfg: PipelineConfig, *keys: str) -> None:
    missing = [k for k in keys if not getattr(cfg, k)]
    if missing:
        raise UsageError(f"missing required input(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")
    for k in keys:
        value = getattr(cfg, k)
        for p in value if isinstance(value, list) else [value]:
            if isinstance(p, str) and not Path(p).exists():
                raise CorpusError(f"--{k.replace('_', '-')}: no such file {p!r}")


def _vocab(cfg: PipelineConfig) -> list[str] | None:
    return read_vocab(cfg.vocab) if cfg.vocab else None


def _split_paths(cfg: PipelineConfig) -> list[tuple[str, str]]:
    return [(name, getattr(cfg, name)) for name in ("train", "val", "test") if getattr(cfg, name)]


def _load_tree(path: str) -> LabelTree:
    """Node-format files (``.nodes``) or HTC taxonomy files."""
    return read_tree(path) if Path(path).suffix == ".nodes" else parse_taxonomy(path)


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# commands


def cmd_ingest(cfg: PipelineConfig, out: Path) -> list[Path]:
    _need(cfg, "train")
    vocab = _vocab(cfg)
    written = []
    for name, path in _split_paths(cfg):
        ds = load_dataset(path, vocab)
        target = out / (f"{name}.jsonl" if _is_text(path) else f"{name}.txt")
        written.append(save_dataset(ds, target))
        print(f"{name}: {len(ds)} docs, {ds.n_labels} labels, {ds.feature_dim} features")
        if vocab is None:
            vocab = list(ds.label_vocab)
    if cfg.n_train or cfg.n_val:
        ds = load_dataset(cfg.train, vocab)
        tr, va = subsample(ds, cfg.n_train, cfg.n_val, cfg.seed)
        written.append(save_dataset(tr, out / ("sub_train" + Path(written[0]).suffix)))
        written.append(save_dataset(va, out / ("sub_val" + Path(written[0]).suffix)))
        print(f"subsample: {len(tr)} train / {len(va)} val (seed {cfg.seed})")
    write_vocab(vocab, out / "labels.txt")
    written.append(out / "labels.txt")
    return written


def cmd_stats(cfg: PipelineConfig, out: Path) -> list[Path]:
    _need(cfg, "train")
    vocab = _vocab(cfg)
    splits = {}
    for name, path in _split_paths(cfg):
        splits[name] = load_dataset(path, vocab)
        vocab = vocab or list(splits[name].label_vocab)
    if len(splits) > 1 and cfg.vocab is None and any(_is_text(p) for _, p in _split_paths(cfg)):
        merged = sorted({n for ds in splits.values() for n in ds.label_vocab})
        splits = {name: load_dataset(path, merged) for name, path in _split_paths(cfg)}
    st = stats(splits["train"], splits.get("val"), splits.get("test"))
    print("#Labels & #Train & #Val & #Test & Avg(L_i)")
    print(st.row())
    _write_json(asdict(st), out / "stats.json")
    return [out / "stats.json"]


def cmd_tfidf(cfg: PipelineConfig, out: Path) -> list[Path]:
    _need(cfg, "train")
    vocab = _vocab(cfg)
    train_ds = load_dataset(cfg.train, vocab)
    if not train_ds.has_text:
        raise CorpusError("tfidf needs a raw-text corpus")
    vocab = list(train_ds.label_vocab)
    model = fit_tfidf(train_ds)
    written = []
    for name, path in _split_paths(cfg):
        ds = train_ds if name == "train" else load_dataset(path, vocab)
        feat = transform_dataset(model, ds)
        target = out / f"{name}.txt"
        write_xml_repo(feat, target)
        written.append(target)
    write_vocab(vocab, out / "labels.txt")
    tokens = sorted(model.vocab, key=model.vocab.get)
    _write_json(
        {"tokens": tokens, "idf": model.idf.tolist(), "n_docs_fitted": model.n_docs_fitted},
        out / "tfidf.json",
    )
    return [*written, out / "labels.txt", out / "tfidf.json"]


def cmd_pifa(cfg: PipelineConfig, out: Path) -> list[Path]:
    _need(cfg, "train")
    ds = load_dataset(cfg.train, _vocab(cfg))
    if ds.has_features:
        lfm = pifa(ds, l2_normalize=cfg.l2_normalize_pifa)
    else:
        model = fit_tfidf(ds)
        feat = transform_dataset(model, ds)
        lfm = pifa(feat, l2_normalize=cfg.l2_normalize_pifa)
    target = out / "label_features.txt"
    write_label_features(lfm, target)
    write_vocab(ds.label_vocab, out / "labels.txt")
    print(f"pifa: {lfm.n_labels} labels x {lfm.dim} features, {lfm.matrix.nnz} non-zeros")
    return [target, out / "labels.txt"]


def cmd_build_tree(cfg: PipelineConfig, out: Path) -> list[Path]:
    if not cfg.plan:
        raise UsageError("build-tree needs a branching plan (--plan)")
    vocab = _vocab(cfg)
    if cfg.label_features:
        _need(cfg, "label_features")
        lfm = read_label_features(cfg.label_features)
        names = vocab or [str(i) for i in range(lfm.n_labels)]
    else:
        _need(cfg, "train")
        ds = load_dataset(cfg.train, vocab)
        if not ds.has_features:
            ds = transform_dataset(fit_tfidf(ds), ds)
        lfm = pifa(ds, l2_normalize=cfg.l2_normalize_pifa)
        names = list(ds.label_vocab)
    tree, report = build_hlt_report(lfm, cfg.plan, cfg.seed, cfg.max_iters, names)
    write_tree(tree, out / "tree.nodes")
    write_taxonomy(tree, out / "tree.taxonomy")
    _write_json(report.to_dict(), out / "build_report.json")
    print(
        f"tree: depth {tree.depth}, levels {tree.level_counts()}, "
        f"leaf fanout {report.leaf_fanout:.2f}"
    )
    return [out / "tree.nodes", out / "tree.taxonomy", out / "build_report.json"]


def cmd_segment(cfg: PipelineConfig, out: Path) -> list[Path]:
    _need(cfg, "tree")
    tree = _load_tree(cfg.tree)
    segments = segment_tree(tree, cfg.budget)
    seg_dir = out / "segments"
    seg_dir.mkdir(exist_ok=True)
    written = []
    for i, seg in enumerate(segments):
        target = seg_dir / f"segment_{i:05d}.nodes"
        write_tree(seg, target)
        written.append(target)
    print(f"segment: {len(segments)} sub-trees, max {max(s.n_nodes for s in segments)} nodes")
    return written


def cmd_flatten(cfg: PipelineConfig, out: Path) -> list[Path]:
    _need(cfg, "train", "taxonomy")
    tree = _load_tree(cfg.taxonomy)
    written = []
    reports = {}
    vocab = _vocab(cfg)
    out_vocab: tuple[str, ...] = ()
    for name, path in _split_paths(cfg):
        ds = load_dataset(path, vocab)
        flat, rep = flatten_report(ds, tree, cfg.mode)
        out_vocab = flat.label_vocab
        target = out / (f"{name}.txt" if flat.has_features else f"{name}.jsonl")
        written.append(save_dataset(flat, target))
        reports[name] = asdict(rep) | {"mode": rep.mode.value}
        print(f"{name}: {rep.n_docs} docs, {rep.n_labels_out} labels, {rep.n_empty} now unlabeled")
    write_vocab(out_vocab, out / "labels.txt")
    _write_json(reports, out / "transfer_report.json")
    return [*written, out / "labels.txt", out / "transfer_report.json"]


def cmd_inject(cfg: PipelineConfig, out: Path) -> list[Path]:
    _need(cfg, "train", "tree")
    tree = _load_tree(cfg.tree)
    vocab = _vocab(cfg)
    written = []
    out_vocab: tuple[str, ...] = ()
    for name, path in _split_paths(cfg):
        ds = load_dataset(path, vocab)
        injected, _ = inject_hierarchy(ds, tree)
        out_vocab = injected.label_vocab
        target = out / (f"{name}.txt" if injected.has_features else f"{name}.jsonl")
        written.append(save_dataset(injected, target))
    write_taxonomy(tree, out / "taxonomy.txt")
    write_vocab(out_vocab, out / "labels.txt")
    return [*written, out / "taxonomy.txt", out / "labels.txt"]


def cmd_train(cfg: PipelineConfig, out: Path) -> list[Path]:
    _need(cfg, "train", "tree")
    ds = load_dataset(cfg.train, _vocab(cfg))
    tree = _load_tree(cfg.tree)
    model = train(ds, tree, cfg.plt_config())
    save(model, out / "model.plt")
    print(f"train: {tree.n_nodes - 1} node classifiers over {model.feature_dim} features")
    return [out / "model.plt"]


def cmd_predict(cfg: PipelineConfig, out: Path) -> list[Path]:
    _need(cfg, "model", "test")
    model = load(cfg.model)
    ds = load_dataset(cfg.test, _vocab(cfg))
    preds = predict_dataset(model, ds, cfg.beam, cfg.top_k)
    target = out / "predictions.jsonl"
    with open(target, "w", encoding="utf-8", newline="\n") as fh:
        for doc, p in zip(ds.docs, preds):
            fh.write(json.dumps({"doc": doc.id, "labels": list(p.labels), "scores": list(p.scores)}) + "\n")
    return [target]


def read_predictions(path: str | Path) -> list[RankedPrediction]:
    preds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                preds.append(RankedPrediction(tuple(rec["labels"]), tuple(rec["scores"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad prediction record ({exc})") from None
    return preds


def cmd_evaluate(cfg: PipelineConfig, out: Path) -> list[Path]:
    _need(cfg, "preds", "test")
    ds = load_dataset(cfg.test, _vocab(cfg))
    preds = read_predictions(cfg.preds)
    if cfg.strip_meta:
        _need(cfg, "tree")
        tree = _load_tree(cfg.tree)
        preds = [strip_meta(p, tree, ds.label_vocab) for p in preds]
    report = evaluate(preds, ds.label_sets(), cfg.ks, threshold=cfg.threshold, universe=ds.n_labels)
    report.name = Path(cfg.preds).stem
    report.save(out / "report.json")
    table = format_table([report])
    (out / "report.txt").write_text(table + format_report(report), encoding="utf-8")
    sys.stdout.write(table)
    return [out / "report.json", out / "report.txt"]


def cmd_compare(cfg: PipelineConfig, out: Path) -> list[Path]:
    _need(cfg, "reports")
    reports = [EvalReport.load(p) for p in cfg.reports]
    names = [r.name or Path(p).parent.name for r, p in zip(reports, cfg.reports)]
    table = format_table(reports, names)
    (out / "comparison.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return [out / "comparison.txt"]


HANDLERS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "tfidf": cmd_tfidf,
    "pifa": cmd_pifa,
    "build-tree": cmd_build_tree,
    "segment": cmd_segment,
    "flatten": cmd_flatten,
    "inject": cmd_inject,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


def write_manifest(command: str, cfg: PipelineConfig, outputs: Sequence[Path], out: Path) -> Path:
    inputs = {}
    for key in ("train", "val", "test", "taxonomy", "tree", "vocab", "label_features", "model", "preds"):
        value = getattr(cfg, key)
        if value and Path(value).exists():
            inputs[key] = {"path": value, "sha256": _sha256(Path(value))}
    for i, p in enumerate(cfg.reports):
        inputs[f"report_{i}"] = {"path": p, "sha256": _sha256(Path(p))}
    manifest = {
        "command": command,
        "config": asdict(cfg),
        "seed": cfg.seed,
        "versions": {"htcxml": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "inputs": inputs,
        "outputs": {str(p.relative_to(out)): _sha256(p) for p in sorted(set(outputs))},
    }
    target = out / "manifest.json"
    _write_json(manifest, target)
    return target


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="htcxml", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--mode", choices=["full", "leaf"])
    p.add_argument("--budget", type=int)
    p.add_argument("--beam", type=int)
    p.add_argument("--top-k", type=int)
    p.add_argument("--out-dir")
    for name in ("train", "val", "test", "taxonomy", "tree", "vocab", "label-features", "model", "preds"):
        p.add_argument(f"--{name}")
    p.add_argument("--reports", nargs="+")
    p.add_argument("--plan", help="branching factors, e.g. '512,8'")
    p.add_argument("--ks", help="P@k cut-offs, e.g. '1,2,3,5'")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--neg-cap", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--l2-normalize-pifa", action="store_true", default=None)
    p.add_argument("--strip-meta", action="store_true", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    flags = {k: v for k, v in vars(args).items() if k not in {"command", "config", "verbose"}}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve_config(file_values, flags)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        outputs = HANDLERS[args.command](cfg, out)
        write_manifest(args.command, cfg, outputs, out)
    except UsageError as exc:
        print(f"htcxml {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, TreeError, ValueError, OSError, configparser.Error) as exc:
        print(f"htcxml {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"htcxml {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
