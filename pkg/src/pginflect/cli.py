"""Command-line entry point.

Subcommands: train, predict, evaluate, augment (multitask | hallucinate),
lowres-exp. Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure. Progress goes to stderr; results go to files.
"""

from __future__ import annotations

import hashlib
import sys
from pathlib import Path

import click

from . import decoding, evaluation, training
from .augment import (
    group_by_lemma,
    hallucinate,
    observed_alphabet,
    to_reinflection,
)
from .data import (
    InflectionExample,
    format_predictions,
    parse_test_tsv,
    parse_train_tsv,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericError,
    ParseError,
    PGInflectError,
)
from .model import ModelConfig, load_model
from .training import TrainConfig


def _read(path: Path) -> str:
    return Path(path).read_text(encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _infer_lang(path: Path) -> str:
    # Shared-task layout: {lang}.trn / {lang}.dev / {lang}.tst
    return Path(path).name.rsplit(".", 1)[0]


def _status(message: str) -> None:
    print(message, file=sys.stderr)


def model_options(f):
    f = click.option("--embedding-dim", default=256, show_default=True)(f)
    f = click.option("--encoder-layers", default=4, show_default=True)(f)
    f = click.option("--decoder-layers", default=4, show_default=True)(f)
    f = click.option("--feed-forward-dim", default=1024, show_default=True)(f)
    f = click.option("--attention-heads", default=4, show_default=True)(f)
    f = click.option("--dropout", default=0.1, show_default=True)(f)
    return f


def train_options(f):
    f = click.option("--batch-size", default=64, show_default=True)(f)
    f = click.option("--epochs", default=60, show_default=True)(f)
    f = click.option("--pretrain-epochs", default=10, show_default=True)(f)
    f = click.option("--learning-rate", default=1e-3, show_default=True)(f)
    f = click.option("--warmup-steps", default=400, show_default=True)(f)
    f = click.option("--patience", default=10, show_default=True)(f)
    f = click.option("--seed", default=0, show_default=True)(f)
    return f


def _make_configs(kw) -> tuple[ModelConfig, TrainConfig]:
    # vocab_size is a placeholder; training replaces it once the
    # vocabulary is built.
    model_config = ModelConfig(
        vocab_size=8,
        embedding_dim=kw["embedding_dim"],
        encoder_layers=kw["encoder_layers"],
        decoder_layers=kw["decoder_layers"],
        feed_forward_dim=kw["feed_forward_dim"],
        attention_heads=kw["attention_heads"],
        dropout=kw["dropout"],
    )
    train_config = TrainConfig(
        batch_size=kw["batch_size"],
        max_epochs=kw["epochs"],
        pretrain_epochs=kw["pretrain_epochs"],
        learning_rate=kw["learning_rate"],
        warmup_steps=kw["warmup_steps"],
        patience=kw["patience"],
        seed=kw["seed"],
        use_copy=kw.get("copy", True),
        use_multitask=kw.get("multitask", True),
        use_hallucination=kw.get("hallucination", True),
        hallucination_size=kw.get("hallucination_size", 10_000),
        low_resource_threshold=kw.get("low_resource_threshold", 1000),
    )
    return model_config, train_config


@click.group()
def cli():
    """Morphological inflection with a pointer-generator transformer."""


@cli.command("train")
@click.option("--train", "train_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dev", "dev_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--lang", default=None, help="Language name; default: train file basename.")
@click.option("--copy/--no-copy", default=True, show_default=True)
@click.option("--multitask/--no-multitask", default=True, show_default=True)
@click.option("--hallucinate/--no-hallucinate", "hallucination", default=True, show_default=True)
@click.option("--hallucination-size", default=10_000, show_default=True)
@click.option("--low-resource-threshold", default=1000, show_default=True)
@model_options
@train_options
def cmd_train(train_path, dev_path, out_dir, lang, **kw):
    """Train on a shared-task TSV; write checkpoints and a run manifest."""
    model_config, train_config = _make_configs(kw)
    lang = lang or _infer_lang(train_path)
    train_set = parse_train_tsv(_read(train_path))
    dev_set = parse_train_tsv(_read(dev_path))
    if not train_set:
        raise DataError(f"{train_path}: empty training set")
    pretrain, finetune = training.build_pipeline_data(train_set, train_config)
    _status(
        f"[{lang}] train={len(train_set)} finetune={len(finetune)} "
        f"pretrain={len(pretrain) if pretrain else 0}"
    )
    checkpoints = training.train(
        pretrain, finetune, dev_set, model_config, train_config
    )
    best = max(c.dev_accuracy for c in checkpoints if c.phase == "finetune")
    _status(f"[{lang}] {len(checkpoints)} checkpoints, best dev accuracy {best:.4f}")
    training.write_checkpoints(
        checkpoints,
        out_dir,
        lang,
        train_config,
        model_config,
        input_hashes={"train": _sha256(train_path), "dev": _sha256(dev_path)},
    )


@cli.command("predict")
@click.argument("checkpoints", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test", "test_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--beam", default=0, show_default=True, help="Beam width; 0 = greedy.")
@click.option("--seed", default=0, show_default=True, help="Tie-break seed for ensemble votes.")
def cmd_predict(checkpoints, test_path, out_path, beam, seed):
    """Decode a test TSV with one checkpoint or a majority-vote ensemble."""
    models = [load_model(p) for p in checkpoints]
    hashes = {m.vocab.content_hash() for m in models}
    if len(hashes) > 1:
        raise CheckpointError("incompatible ensemble: vocabulary hashes differ")
    examples = parse_test_tsv(_read(test_path))
    if len(models) == 1 and beam > 0:
        forms = [
            decoding.beam_decode(models[0], ex, beam).form for ex in examples
        ]
    elif len(models) == 1:
        forms = [p.form for p in decoding.greedy_decode_batch(models[0], examples)]
    else:
        if beam > 0:
            raise ConfigError("beam decoding is single-model only")
        forms = decoding.ensemble_predict(models, examples, seed=seed)
    Path(out_path).write_text(
        format_predictions(list(zip(examples, forms))), encoding="utf-8"
    )
    _status(f"wrote {len(forms)} predictions to {out_path}")


def _align(gold: list[InflectionExample], pred: list[InflectionExample], name: str):
    gold_keys = [(ex.lemma, ex.tags) for ex in gold]
    pred_keys = [(ex.lemma, ex.tags) for ex in pred]
    if gold_keys != pred_keys:
        unmatched = [k for k in gold_keys if k not in set(pred_keys)]
        unmatched += [k for k in pred_keys if k not in set(gold_keys)]
        shown = ", ".join(f"{l}/{';'.join(t)}" for l, t in unmatched[:5])
        raise DataError(f"{name}: gold/prediction keys do not align: {shown}")


@cli.command("evaluate")
@click.option("--gold", "gold_paths", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Gold test file(s), 3-column TSV; repeatable, one per language.")
@click.option("--pred-dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory with {lang}.pred prediction files.")
@click.option("--train-dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory with {lang}.trn files (group sizes).")
@click.option("--out-prefix", required=True, type=click.Path(dir_okay=False))
def cmd_evaluate(gold_paths, pred_dir, train_dir, out_prefix):
    """Per-language accuracy plus macro Low/Other/All report."""
    if not gold_paths:
        raise click.UsageError("at least one --gold file is required")
    per_language: dict[str, float] = {}
    sizes: dict[str, int] = {}
    for gold_path in gold_paths:
        lang = _infer_lang(gold_path)
        gold = parse_train_tsv(_read(gold_path))
        pred_path = Path(pred_dir) / f"{lang}.pred"
        if not pred_path.exists():
            raise DataError(f"missing prediction file {pred_path}")
        pred = parse_train_tsv(_read(pred_path))
        _align(gold, pred, lang)
        train_path = Path(train_dir) / f"{lang}.trn"
        if not train_path.exists():
            raise DataError(f"missing train file {train_path}")
        sizes[lang] = len(parse_train_tsv(_read(train_path)))
        per_language[lang] = evaluation.exact_match_accuracy(
            [ex.form for ex in gold], [ex.form for ex in pred]
        )
    report = evaluation.macro_report(per_language, sizes)
    Path(str(out_prefix) + ".tsv").write_text(report.to_tsv(), encoding="utf-8")
    Path(str(out_prefix) + ".txt").write_text(report.summary(), encoding="utf-8")
    _status(report.summary())


@cli.group("augment")
def cmd_augment():
    """Data augmentation utilities."""


@cmd_augment.command("multitask")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_augment_multitask(in_path, out_path):
    """Expand an inflection set into a reinflection multitask set."""
    examples = parse_train_tsv(_read(in_path))
    expanded = to_reinflection(group_by_lemma(examples))
    Path(out_path).write_text(
        format_predictions([(ex, ex.form) for ex in expanded]), encoding="utf-8"
    )
    _status(f"{len(examples)} -> {len(expanded)} examples")


@cmd_augment.command("hallucinate")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--n", default=10_000, show_default=True)
@click.option("--seed", default=0, show_default=True)
def cmd_augment_hallucinate(in_path, out_path, n, seed):
    """Generate pseudo-examples by random stem substitution."""
    examples = parse_train_tsv(_read(in_path))
    pseudo = hallucinate(examples, n, observed_alphabet(examples), seed)
    Path(out_path).write_text(
        format_predictions([(ex, ex.form) for ex in pseudo]), encoding="utf-8"
    )
    _status(f"wrote {len(pseudo)} pseudo-examples")


@cli.command("lowres-exp")
@click.option("--data-dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory with {lang}.trn and {lang}.dev files.")
@click.option("--langs", required=True, help="Comma-separated language names.")
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--multitask/--no-multitask", default=False, show_default=True)
@click.option("--hallucinate/--no-hallucinate", "hallucination", default=False, show_default=True)
@model_options
@train_options
def cmd_lowres_exp(data_dir, langs, seeds, out_path, **kw):
    """Copy vs no-copy comparison at 100 training examples per language."""
    model_config, train_config = _make_configs(kw)
    datasets = {}
    for lang in [l.strip() for l in langs.split(",") if l.strip()]:
        train_path = Path(data_dir) / f"{lang}.trn"
        dev_path = Path(data_dir) / f"{lang}.dev"
        if not train_path.exists() or not dev_path.exists():
            raise DataError(f"missing {lang}.trn or {lang}.dev in {data_dir}")
        datasets[lang] = (
            parse_train_tsv(_read(train_path)),
            parse_train_tsv(_read(dev_path)),
        )
    seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    result, _ = evaluation.low_resource_experiment(
        datasets, seed_list, model_config, train_config
    )
    Path(out_path).write_text(result.to_tsv(), encoding="utf-8")
    _status(
        f"copy={result.mean_copy():.4f} vanilla={result.mean_vanilla():.4f} "
        f"delta={result.mean_delta():+.4f}"
    )


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as e:
        print(f"usage error: {e.format_message()}", file=sys.stderr)
        return 1
    except click.Abort:
        return 1
    except (ParseError, DataError, CheckpointError, ConfigError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except PGInflectError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
