"""Command-line surface: train, eval, and probe subcommands.

Every run writes one JSON manifest (command, seed, input digests, output
paths) next to its result CSVs; reruns of an identical invocation produce
byte-identical outputs. Numeric CSV fields carry 6 decimal places.

Exit codes: 0 success, 2 usage, 3 data/format, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, space_analysis, tagger_model, train_eval
from .embedding_io import ChannelProvider, load_contextual, load_static_text
from .errors import (
    AlignmentError,
    CompatibilityError,
    ContractError,
    DegeneracyError,
    DimensionError,
    FormatError,
    InputError,
    LabelError,
    MetaseqError,
    NumericError,
    ParameterError,
    ParseError,
    RangeError,
    StateError,
    TruncatedError,
    WindowError,
)
from .linguistic_features import AbstractnessLexicon, AbstractnessScorer, PosVocabulary
from .tagger_model import ModelConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

_USAGE_ERRORS = (ParameterError,)
_NUMERIC_ERRORS = (NumericError, DegeneracyError)
_DATA_ERRORS = (ParseError, FormatError, TruncatedError, AlignmentError,
                CompatibilityError, InputError, DimensionError, LabelError,
                ContractError, StateError, WindowError, RangeError, OSError)

_CONFIG_TUPLE_KEYS = {"window_sizes": int, "class_weights": float,
                      "channel_order": str, "pos_tags": str}
_CONFIG_INT_KEYS = {"unified_dim", "static_dim", "kernels_per_window",
                    "hidden_size", "epochs", "seed"}
_CONFIG_FLOAT_KEYS = {"input_dropout", "hidden_dropout", "learning_rate"}
_CONFIG_BOOL_KEYS = {"use_pos", "use_abstractness", "lowercase_lexicon"}


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def parse_config_file(path) -> dict:
    """`key=value` lines; `#` starts a comment; lists are comma-separated."""
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}: line {lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                if key in _CONFIG_TUPLE_KEYS:
                    cast = _CONFIG_TUPLE_KEYS[key]
                    out[key] = tuple(cast(v.strip()) for v in value.split(",") if v.strip())
                elif key in _CONFIG_INT_KEYS:
                    out[key] = int(value)
                elif key in _CONFIG_FLOAT_KEYS:
                    out[key] = float(value)
                elif key in _CONFIG_BOOL_KEYS:
                    if value.lower() not in ("true", "false", "0", "1"):
                        raise ValueError(f"bad boolean {value!r}")
                    out[key] = value.lower() in ("true", "1")
                else:
                    raise ParameterError(f"{path}: line {lineno}: unknown key {key!r}")
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
    return out


def _resolve_seed(args, file_values: dict) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in file_values:
        return file_values["seed"]
    env = os.environ.get("METASEQ_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ParameterError(f"METASEQ_SEED={env!r} is not an integer") from None
    return 0


def _build_config(args) -> ModelConfig:
    values = parse_config_file(args.config) if args.config else {}
    values["seed"] = _resolve_seed(args, values)
    if getattr(args, "epochs", None) is not None:
        values["epochs"] = args.epochs
    return ModelConfig(**values)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, args_list: list[str], config_path,
                    seed: int, inputs: list, outputs: list[Path],
                    extra: dict | None = None) -> Path:
    manifest = {
        "command": args_list,
        "config_path": str(config_path) if config_path else None,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in sorted(str(x) for x in inputs)},
        "outputs": sorted(str(p) for p in outputs),
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_layers(config: ModelConfig, layer_paths: list[str], parser) -> dict[str, object]:
    contextual_channels = [c for c in config.channel_order if c != "G"]
    if len(layer_paths) != len(contextual_channels):
        parser.error(f"expected {len(contextual_channels)} --layers files for "
                     f"channels {contextual_channels}, got {len(layer_paths)}")
    files = {}
    for name, path in zip(contextual_channels, layer_paths):
        layer = load_contextual(path)
        if layer.dimension != config.unified_dim:
            raise CompatibilityError(
                f"{path}: layer dimension {layer.dimension} != configured "
                f"unified dimension {config.unified_dim}")
        files[name] = layer
    return files


def _make_provider(config: ModelConfig, args, parser,
                   train_sentences=None) -> tuple[ChannelProvider, ModelConfig, list]:
    """Wire static table, layer files and feature encoders per the config."""
    inputs = list(args.layers or [])
    static_table = None
    if "G" in config.channel_order:
        if not args.glove:
            parser.error("channel G is configured but --glove is missing")
        static_table = load_static_text(args.glove)
        inputs.append(args.glove)
        if static_table.dimension != config.static_dim:
            raise CompatibilityError(
                f"{args.glove}: vector dimension {static_table.dimension} != "
                f"configured static dimension {config.static_dim}")
    layer_files = _load_layers(config, args.layers or [], parser)

    pos_vocab = None
    if config.use_pos:
        if not config.pos_tags:
            tags = sorted({t.pos for s in train_sentences for t in s.tokens})
            config = dataclasses.replace(config, pos_tags=tuple(tags))
        pos_vocab = PosVocabulary(config.pos_tags)

    scorer = None
    if config.use_abstractness:
        if not getattr(args, "abst_lexicon", None):
            parser.error("use_abstractness is configured but --abst-lexicon is missing")
        if static_table is None:
            parser.error("use_abstractness requires the static channel G")
        lexicon = AbstractnessLexicon.load(args.abst_lexicon)
        scorer = AbstractnessScorer(lexicon, static_table, config.lowercase_lexicon)
        inputs.append(args.abst_lexicon)

    provider = ChannelProvider(config.channel_order, static_table, layer_files,
                               pos_vocab, scorer)
    return provider, config, inputs


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args, parser, argv: list[str]) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _build_config(args)
    train_sentences = train_eval.parse_dataset(args.data)
    inputs = [args.data]
    if args.dev:
        dev_sentences = train_eval.parse_dataset(args.dev)
        inputs.append(args.dev)
    else:
        dev_sentences = None
    provider, config, extra_inputs = _make_provider(config, args, parser,
                                                    train_sentences)
    inputs.extend(extra_inputs)
    if args.config:
        inputs.append(args.config)

    curve: list[tuple[int, float, float]] = []
    checkpoint = tagger_model.train(
        train_sentences, provider, config, dev_sentences=dev_sentences,
        on_epoch=lambda epoch, loss, f1: curve.append((epoch, loss, f1)))

    ckpt_path = out_dir / "checkpoint.mseq"
    tagger_model.save_checkpoint(checkpoint, ckpt_path)
    curve_path = out_dir / "training_curve.csv"
    with open(curve_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,dev_f1\n")
        for epoch, loss, f1 in curve:
            fh.write(f"{epoch},{_fmt(loss)},{_fmt(f1)}\n")
    _write_manifest(out_dir, argv, args.config, config.seed, inputs,
                    [ckpt_path, curve_path],
                    extra={"best_epoch": checkpoint.epoch,
                           "best_dev_f1": _fmt(checkpoint.dev_f1)})
    print(f"checkpoint: {ckpt_path} (epoch {checkpoint.epoch}, "
          f"dev F1 {_fmt(checkpoint.dev_f1)})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

_REPORT_HEADER = "split,class,P,R,F1,Acc,TP,FP,FN,TN\n"


def _report_row(split: str, cls: str, r: train_eval.MetricsReport) -> str:
    return (f"{split},{cls},{_fmt(r.precision)},{_fmt(r.recall)},{_fmt(r.f1)},"
            f"{_fmt(r.accuracy)},{r.tp},{r.fp},{r.fn},{r.tn}\n")


def cmd_eval(args, parser, argv: list[str]) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = tagger_model.load_checkpoint(args.checkpoint)
    config = checkpoint.config
    sentences = train_eval.parse_dataset(args.data)
    provider, config, extra_inputs = _make_provider(config, args, parser, sentences)
    inputs = [args.checkpoint, args.data, *extra_inputs]

    model = tagger_model.MetaphorTagger.from_checkpoint(checkpoint)
    predictions = []
    flat_pred, flat_gold, flat_mask = [], [], []
    for index, sent in enumerate(sentences):
        probs = model.predict_probs(provider.channels(sent, index))
        labels = np.argmax(probs, axis=1)
        predictions.append(labels.tolist())
        flat_pred.extend(labels.tolist())
        flat_gold.extend(sent.labels().tolist())
        flat_mask.extend(sent.target_mask().tolist())

    overall = train_eval.compute_metrics(flat_pred, flat_gold, flat_mask)
    rows = [_report_row("overall", "ALL", overall)]
    if args.breakdown:
        per_class = train_eval.breakdown(sentences, predictions, key=args.breakdown)
        if args.breakdown == "pos":
            order = [c for c in (*train_eval.OPEN_CLASS_POS, "ALL") if c in per_class]
        else:
            order = sorted(per_class)
        rows.extend(_report_row(args.breakdown, cls, per_class[cls]) for cls in order)

    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(_REPORT_HEADER)
        fh.writelines(rows)
    _write_manifest(out_dir, argv, None, config.seed, inputs, [metrics_path])
    print(f"metrics: {metrics_path} (F1 {_fmt(overall.f1)})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------

def _read_scores_csv(path) -> dict[int, float]:
    scores = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.lower().startswith("layer,"):
            raise ParseError(f"{path}: expected header `layer,score`")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"{path}: line {lineno}: expected layer,score")
            scores[int(parts[0])] = float(parts[1])
    return scores


def _open_class_rows(sentences, layer):
    rows, tokens = [], []
    for index, sent in enumerate(sentences):
        mat = layer.matrix(index)
        if mat.shape[0] != len(sent.tokens):
            raise AlignmentError(
                f"sentence {sent.sentence_id}: {mat.shape[0]} embedding rows "
                f"for {len(sent.tokens)} tokens")
        for t_idx, tok in enumerate(sent.tokens):
            if tok.target and tok.pos in train_eval.OPEN_CLASS_POS:
                rows.append(mat[t_idx])
                tokens.append(tok)
    if not rows:
        raise InputError("no open-class target tokens to project")
    return np.asarray(rows), tokens


def cmd_probe(args, parser, argv: list[str]) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sentences = train_eval.parse_dataset(args.data)
    seed = _resolve_seed(args, {})
    layers = [load_contextual(p) for p in args.layer_files]
    inputs = [args.data, *args.layer_files]
    outputs: list[Path] = []
    extra: dict = {}

    if args.mode == "cosine":
        pairs = space_analysis.build_pairs(sentences, seed)

        def one(layer):
            return layer.layer_index, space_analysis.avg_pair_cosine(pairs, layer)

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            rows = sorted(pool.map(one, layers))
        path = out_dir / "probe_cosine.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("layer,avg_cosine,n_pairs\n")
            for layer_index, value in rows:
                fh.write(f"{layer_index},{_fmt(value)},{len(pairs)}\n")
        outputs.append(path)

    elif args.mode == "l2":
        if len(layers) < 2:
            parser.error("mode=l2 needs a reference file plus at least one layer file")
        reference = layers[0].all_rows()

        def one(layer):
            rows_b = layer.all_rows()
            if args.l2_variant == "rotated":
                value = space_analysis.procrustes_align(rows_b, reference).avg_l2
            else:
                value = space_analysis.avg_l2(reference, rows_b)
            return layer.layer_index, value

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            rows = sorted(pool.map(one, layers[1:]))
        pearson_text = ""
        if args.scores:
            inputs.append(args.scores)
            scores = _read_scores_csv(args.scores)
            series = [(value, scores[idx]) for idx, value in rows if idx in scores]
            if len(series) >= 2:
                pearson_text = _fmt(space_analysis.pearson_r(
                    [a for a, _ in series], [b for _, b in series]))
        path = out_dir / "probe_l2.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("layer,avg_l2,pearson_vs_f1\n")
            for layer_index, value in rows:
                fh.write(f"{layer_index},{_fmt(value)},{pearson_text}\n")
        outputs.append(path)
        extra["l2_variant"] = args.l2_variant

    else:  # pca
        variance: dict[str, tuple[str, str]] = {}

        def one(layer):
            data, tokens = _open_class_rows(sentences, layer)
            projection = space_analysis.pca_2d(data)
            return layer.layer_index, projection, tokens

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = sorted(pool.map(one, layers), key=lambda item: item[0])
        for layer_index, projection, tokens in results:
            path = out_dir / f"pca_layer{layer_index}.csv"
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("token,pos,x,y\n")
                for tok, (x, y) in zip(tokens, projection.points):
                    fh.write(f"{tok.text},{tok.pos},{_fmt(x)},{_fmt(y)}\n")
            outputs.append(path)
            variance[str(layer_index)] = tuple(
                _fmt(v) for v in projection.explained_variance)
            print(f"layer {layer_index}: explained variance "
                  f"{variance[str(layer_index)]}")
        extra["explained_variance"] = variance

    _write_manifest(out_dir, argv, None, seed, inputs, outputs, extra=extra)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metaseq",
        description="Multi-channel CNN+BiLSTM metaphor tagger and "
                    "embedding-space probes.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="run seed (default: METASEQ_SEED env or 0)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap for parallel sections")
        p.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", help="train a tagger")
    p_train.add_argument("--data", required=True, help="training TSV")
    p_train.add_argument("--dev", help="development TSV for model selection")
    p_train.add_argument("--glove", help="static embedding text file")
    p_train.add_argument("--layers", nargs="*", default=[],
                         help="contextual layer files, one per non-G channel")
    p_train.add_argument("--abst-lexicon", help="abstractness TSV lexicon")
    p_train.add_argument("--config", help="key=value model configuration file")
    p_train.add_argument("--epochs", type=int, default=None,
                         help="override the configured epoch count")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--glove")
    p_eval.add_argument("--layers", nargs="*", default=[])
    p_eval.add_argument("--abst-lexicon")
    p_eval.add_argument("--breakdown", choices=("genre", "pos"))
    common(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_probe = sub.add_parser("probe", help="embedding-space diagnostics")
    p_probe.add_argument("--data", required=True)
    p_probe.add_argument("--layer-files", nargs="+", required=True)
    p_probe.add_argument("--mode", choices=("cosine", "l2", "pca"), required=True)
    p_probe.add_argument("--scores",
                         help="layer,score CSV correlated against avg_l2")
    p_probe.add_argument("--l2-variant", choices=("rotated", "raw"),
                         default="rotated")
    common(p_probe)
    p_probe.set_defaults(func=cmd_probe)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args, parser, argv)
    except SystemExit as exc:  # parser.error inside a command
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERIC_ERRORS as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MetaseqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
