"""Command-line entry point: generate, train, predict, ensemble, stack,
calibrate, evaluate.

Every command exits 0 on success and nonzero with a single machine-parseable
``error:<Kind>: <message>`` line on stderr otherwise.  All randomness is
controlled by --seed, and reports identify their inputs by content digest, so
reruns with identical inputs and flags produce byte-identical outputs.
Options may be preloaded from an INI file via --config (one section per
command) or from CXRTREES_* environment variables; explicit flags win.
"""

from __future__ import annotations

import configparser
import functools
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import ensembling, evaluation, labels as labels_mod, store, synthetic, trees
from .errors import CxrError, DataError, FormatError

_EXTRA_COLUMNS = ("Sex", "Age", "Frontal/Lateral", "AP/PA")
_ID_ALIASES = ("sample_id", "Path")

_path_in = click.Path(exists=True, dir_okay=False)
_path_out = click.Path(dir_okay=False, writable=True)


def _command_errors(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except CxrError as e:
            click.echo(f"error:{type(e).__name__}: {e}", err=True)
            sys.exit(1)
        except OSError as e:
            click.echo(f"error:OSError: {e}", err=True)
            sys.exit(1)

    return wrapper


def _load_config(path: str) -> dict:
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    out: dict = {}
    for section in parser.sections():
        out[section] = {k.replace("-", "_"): v for k, v in parser.items(section)}
    return out


@click.group(context_settings={"auto_envvar_prefix": "CXRTREES"})
@click.option("--config", type=_path_in, default=None,
              help="INI file providing option defaults, one section per command.")
@click.pass_context
def main(ctx, config):
    """Tree-ensemble training, model combination, and ROC evaluation
    over image-embedding datasets."""
    if config:
        ctx.default_map = _load_config(config)


def _read_embeddings(path: str) -> store.EmbeddingMatrix:
    if path.lower().endswith(".csv"):
        return store.read_embedding_csv(path)
    return store.read_embedding_file(path)


def _registry_for_csv(path: str, which: str) -> labels_mod.LabelRegistry:
    """Build the label registry for a CSV: the default 14 findings, or every
    non-id, non-demographic column in header order."""
    if which == "default":
        return labels_mod.default_registry()
    with open(path, "r", encoding="utf-8") as fh:
        header = [c.strip() for c in fh.readline().rstrip("\n").split(",")]
    names = [c for c in header if c and c not in _ID_ALIASES and c not in _EXTRA_COLUMNS]
    if not names:
        raise FormatError(f"{path}: no label columns found")
    focus = [n for n in names if n in labels_mod.FOCUS_FINDINGS]
    return labels_mod.LabelRegistry.from_names(names, focus=focus)


def _select_label_names(selector: str, registry: labels_mod.LabelRegistry) -> tuple[str, ...]:
    if selector == "all":
        return registry.names
    if selector == "focus":
        focus = registry.focus_names
        if not focus:
            raise DataError("no focus labels in this registry; use --select-labels")
        return focus
    names = tuple(s.strip() for s in selector.split(",") if s.strip())
    unknown = [n for n in names if n not in registry]
    if unknown:
        raise DataError(f"labels not in registry: {unknown}")
    return names


def _soft_labels(
    path: str, registry_opt: str, policy: str, lsr_a: float, lsr_b: float, seed: int
) -> labels_mod.SoftLabelMatrix:
    registry = _registry_for_csv(path, registry_opt)
    annotations = labels_mod.parse_label_csv(path, registry, policy=policy)
    cfg = labels_mod.LsrConfig(lsr_a, lsr_b, seed)
    return labels_mod.apply_lsr(annotations, cfg, registry)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_stamp(path: str) -> dict:
    return {"path": str(path), "sha256": _sha256(path)}


def _dump_json(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@main.command("gen-synthetic")
@click.option("--n", type=int, default=1000, show_default=True)
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--labels", "label_csv", default=",".join(labels_mod.FOCUS_FINDINGS),
              show_default=True, help="Comma-separated label names.")
@click.option("--hierarchy", type=_path_in, default=None,
              help="Hierarchy file (child: parent per line) over the given labels.")
@click.option("--sigma", type=float, default=0.5, show_default=True)
@click.option("--uncertain-fraction", type=float, default=0.05, show_default=True)
@click.option("--lsr-a", type=float, default=0.55, show_default=True)
@click.option("--lsr-b", type=float, default=0.85, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-embeddings", type=_path_out, required=True)
@click.option("--out-labels", type=_path_out, required=True)
@click.option("--out-truth", type=_path_out, default=None,
              help="Optional CSV of clean binary truth (no uncertainty injected).")
@_command_errors
def gen_synthetic(n, dim, label_csv, hierarchy, sigma, uncertain_fraction,
                  lsr_a, lsr_b, seed, out_embeddings, out_labels, out_truth):
    """Generate a synthetic embedding dataset with planted label structure."""
    names = [s.strip() for s in label_csv.split(",") if s.strip()]
    focus = [s for s in names if s in labels_mod.FOCUS_FINDINGS]
    registry = labels_mod.LabelRegistry.from_names(names, focus=focus)
    h = (labels_mod.load_hierarchy_file(hierarchy, registry)
         if hierarchy else labels_mod.LabelHierarchy.empty(registry))
    spec = synthetic.SyntheticSpec(
        n_samples=n, dim=dim, hierarchy=h, noise_sigma=sigma,
        uncertain_fraction=uncertain_fraction, lsr_a=lsr_a, lsr_b=lsr_b, seed=seed,
    )
    ds, truth = synthetic.generate(spec)
    store.write_embedding_file(ds.embeddings, out_embeddings)
    labels_mod.write_label_csv(truth.annotations, registry, out_labels)
    if out_truth:
        clean = [
            labels_mod.RawAnnotation(
                ann.sample_id,
                np.where(truth.hard_labels[i] == 1,
                         labels_mod.AnnotationValue.POSITIVE,
                         labels_mod.AnnotationValue.NEGATIVE).astype(np.int8),
            )
            for i, ann in enumerate(truth.annotations)
        ]
        labels_mod.write_label_csv(clean, registry, out_truth)
    click.echo(f"wrote {ds.n} samples: {out_embeddings}, {out_labels}")


@main.command("train")
@click.option("--embeddings", type=_path_in, required=True)
@click.option("--labels", "labels_path", type=_path_in, required=True)
@click.option("--family", type=click.Choice(["forest", "boosted"]), default="forest",
              show_default=True)
@click.option("--select-labels", default="focus", show_default=True,
              help="'focus', 'all', or comma-separated label names.")
@click.option("--registry", type=click.Choice(["auto", "default"]), default="auto",
              show_default=True, help="Label registry: CSV columns or the 14 findings.")
@click.option("--unmentioned-policy",
              type=click.Choice(list(labels_mod.UNMENTIONED_POLICIES)),
              default="negative", show_default=True)
@click.option("--n-estimators", type=int, default=200, show_default=True)
@click.option("--max-depth", type=int, default=None,
              help="Default: 15 for forest, 3 for boosted.")
@click.option("--min-samples-split", type=int, default=2, show_default=True)
@click.option("--min-samples-leaf", type=int, default=10, show_default=True)
@click.option("--max-features", default="sqrt", show_default=True,
              help="'sqrt', 'all', or a fixed integer count.")
@click.option("--rounds", type=int, default=50, show_default=True)
@click.option("--learning-rate", type=float, default=0.1, show_default=True)
@click.option("--l2-lambda", type=float, default=1.0, show_default=True)
@click.option("--binarize-at", type=float, default=None,
              help="Binarize soft targets at this threshold before training.")
@click.option("--lsr-a", type=float, default=0.55, show_default=True)
@click.option("--lsr-b", type=float, default=0.85, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", type=_path_out, required=True)
@_command_errors
def train(embeddings, labels_path, family, select_labels, registry,
          unmentioned_policy, n_estimators, max_depth, min_samples_split,
          min_samples_leaf, max_features, rounds, learning_rate, l2_lambda,
          binarize_at, lsr_a, lsr_b, seed, threads, out):
    """Train one tree ensemble per selected label."""
    emb = _read_embeddings(embeddings)
    reg = _registry_for_csv(labels_path, registry)
    soft = _soft_labels(labels_path, registry, unmentioned_policy, lsr_a, lsr_b, seed)
    selected = _select_label_names(select_labels, reg)
    ds = store.align(emb, soft)
    if family == "forest":
        if max_features not in ("sqrt", "all"):
            try:
                max_features = int(max_features)
            except ValueError:
                raise DataError(f"bad --max-features value {max_features!r}") from None
        hp = trees.ForestHyperparams(
            n_estimators=n_estimators,
            max_depth=15 if max_depth is None else max_depth,
            min_samples_split=min_samples_split,
            min_samples_leaf=min_samples_leaf,
            max_features=max_features,
            seed=seed,
        )
        model = trees.train_random_forest(ds, selected, hp, n_threads=threads,
                                          binarize_at=binarize_at)
    else:
        hp = trees.BoostHyperparams(
            rounds=rounds,
            max_depth=3 if max_depth is None else max_depth,
            learning_rate=learning_rate,
            l2_lambda=l2_lambda,
            seed=seed,
        )
        model = trees.train_gradient_boosting(ds, selected, hp, n_threads=threads,
                                              binarize_at=binarize_at)
    trees.write_model_file(model, out)
    click.echo(f"trained {family} on {ds.n} samples x {len(selected)} labels: {out}")


@main.command("predict")
@click.option("--model", "model_path", type=_path_in, required=True)
@click.option("--embeddings", type=_path_in, required=True)
@click.option("--classifier-name", default=None,
              help="Name recorded in the output CSV; defaults to the model file stem.")
@click.option("--out", type=_path_out, required=True)
@_command_errors
def predict_cmd(model_path, embeddings, classifier_name, out):
    """Apply a trained model to an embedding file."""
    model = trees.read_model_file(model_path)
    emb = _read_embeddings(embeddings)
    name = classifier_name or Path(model_path).stem
    preds = model.predict(emb)
    pset = ensembling.PredictionSet.single(name, model.label_names, emb.sample_ids, preds)
    ensembling.write_predictions_csv(pset, out)
    click.echo(f"wrote predictions for {emb.n} samples: {out}")


@main.command("ensemble")
@click.argument("predictions", nargs=-1, required=True, type=_path_in)
@click.option("--strategy", type=click.Choice(["simple", "entropy"]), default="simple",
              show_default=True)
@click.option("--mode", type=click.Choice(list(ensembling.ENSEMBLE_MODES)),
              default="normalized", show_default=True,
              help="Entropy weighting flavor (entropy strategy only).")
@click.option("--out", type=_path_out, required=True)
@_command_errors
def ensemble_cmd(predictions, strategy, mode, out):
    """Combine prediction CSVs by averaging."""
    pset = ensembling.PredictionSet.combine(
        [ensembling.read_predictions_csv(p) for p in predictions]
    )
    combined = np.empty((pset.n_samples, len(pset.labels)), dtype=np.float64)
    for i in range(pset.n_samples):
        P = pset.matrix_for(i)
        if strategy == "simple":
            combined[i] = ensembling.simple_average(P).values
        else:
            combined[i] = ensembling.entropy_weighted_average(P, mode=mode).values
    name = "ensemble_simple" if strategy == "simple" else (
        "ensemble_entropy" if mode == "normalized" else "ensemble_entropy_literal"
    )
    out_set = ensembling.PredictionSet.single(name, pset.labels, pset.sample_ids, combined)
    ensembling.write_predictions_csv(out_set, out)
    click.echo(f"wrote {strategy} ensemble of {len(pset.classifier_names)} classifiers: {out}")


@main.group("stack")
def stack_group():
    """Train or apply a stacking meta-learner."""


@stack_group.command("train")
@click.argument("predictions", nargs=-1, required=True, type=_path_in)
@click.option("--labels", "labels_path", type=_path_in, required=True,
              help="Label CSV for the meta training samples (the held-out split).")
@click.option("--registry", type=click.Choice(["auto", "default"]), default="auto",
              show_default=True)
@click.option("--unmentioned-policy",
              type=click.Choice(list(labels_mod.UNMENTIONED_POLICIES)),
              default="negative", show_default=True)
@click.option("--n-estimators", type=int, default=1400, show_default=True)
@click.option("--max-depth", type=int, default=30, show_default=True)
@click.option("--min-samples-split", type=int, default=5, show_default=True)
@click.option("--min-samples-leaf", type=int, default=1, show_default=True)
@click.option("--max-features", default="sqrt", show_default=True)
@click.option("--lsr-a", type=float, default=0.55, show_default=True)
@click.option("--lsr-b", type=float, default=0.85, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", type=_path_out, required=True)
@_command_errors
def stack_train_cmd(predictions, labels_path, registry, unmentioned_policy,
                    n_estimators, max_depth, min_samples_split, min_samples_leaf,
                    max_features, lsr_a, lsr_b, seed, threads, out):
    """Train the meta-learner on base classifiers' held-out predictions."""
    base = ensembling.PredictionSet.combine(
        [ensembling.read_predictions_csv(p) for p in predictions]
    )
    targets = _soft_labels(labels_path, registry, unmentioned_policy, lsr_a, lsr_b, seed)
    if max_features not in ("sqrt", "all"):
        max_features = int(max_features)
    hp = trees.ForestHyperparams(
        n_estimators=n_estimators, max_depth=max_depth,
        min_samples_split=min_samples_split, min_samples_leaf=min_samples_leaf,
        max_features=max_features, seed=seed,
    )
    model = ensembling.stack_train(base, targets, hp, n_threads=threads)
    ensembling.write_stacking_file(model, out)
    click.echo(f"trained stacking model over {len(base.classifier_names)} classifiers: {out}")


@stack_group.command("apply")
@click.argument("predictions", nargs=-1, required=True, type=_path_in)
@click.option("--model", "model_path", type=_path_in, required=True)
@click.option("--out", type=_path_out, required=True)
@_command_errors
def stack_apply_cmd(predictions, model_path, out):
    """Apply a trained stacking model to prediction CSVs."""
    model = ensembling.read_stacking_file(model_path)
    pset = ensembling.PredictionSet.combine(
        [ensembling.read_predictions_csv(p) for p in predictions]
    )
    combined = ensembling.stack_predict_set(model, pset)
    out_set = ensembling.PredictionSet.single(
        "ensemble_stacking", model.labels, pset.sample_ids, combined
    )
    ensembling.write_predictions_csv(out_set, out)
    click.echo(f"wrote stacked predictions: {out}")


def _read_calibration(path: str) -> evaluation.ThresholdCalibration:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        names = tuple(doc["labels"])
        thresholds = np.array([doc["thresholds"][n] for n in names], dtype=np.float64)
        delta = float(doc["delta"])
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: malformed calibration file ({e})") from None
    return evaluation.ThresholdCalibration(names, thresholds, delta)


@main.command("calibrate")
@click.option("--predictions", type=_path_in, required=True,
              help="Prediction CSV of a single classifier (the validation set).")
@click.option("--band-delta", type=float, default=0.05, show_default=True)
@click.option("--auto-delta", is_flag=True, default=False,
              help="Pick the smallest grid delta reaching --target-uncertain.")
@click.option("--target-uncertain", type=float, default=0.10, show_default=True)
@click.option("--out", type=_path_out, default=None)
@_command_errors
def calibrate_cmd(predictions, band_delta, auto_delta, target_uncertain, out):
    """Set per-label thresholds to the mean validation output."""
    pset = ensembling.read_predictions_csv(predictions)
    if len(pset.classifier_names) != 1:
        raise DataError("calibration expects a single-classifier prediction file")
    cal = evaluation.calibrate_threshold(
        pset.values[0], pset.labels, delta=band_delta,
        auto_target=target_uncertain if auto_delta else None,
    )
    doc = {
        "inputs": {"predictions": _input_stamp(predictions)},
        "labels": list(cal.labels),
        "thresholds": {n: float(t) for n, t in zip(cal.labels, cal.thresholds)},
        "delta": cal.delta,
    }
    _dump_json(doc, out)


@main.command("eval")
@click.option("--predictions", type=_path_in, required=True)
@click.option("--truth", type=_path_in, required=True,
              help="Label CSV; uncertain cells count as positive.")
@click.option("--registry", type=click.Choice(["auto", "default"]), default="auto",
              show_default=True)
@click.option("--calibration", type=_path_in, default=None,
              help="Calibration JSON; adds banded confusion matrices.")
@click.option("--roc-out", type=_path_out, default=None,
              help="Optional CSV of ROC points for external plotting.")
@click.option("--out", type=_path_out, default=None)
@_command_errors
def eval_cmd(predictions, truth, registry, calibration, roc_out, out):
    """Report per-label AUROC (and confusion counts, given a calibration)."""
    pset = ensembling.read_predictions_csv(predictions)
    reg = _registry_for_csv(truth, registry)
    annotations = labels_mod.parse_label_csv(truth, reg, policy="negative")
    missing = [lab for lab in pset.labels if lab not in reg]
    if missing:
        raise DataError(f"truth file lacks labels: {missing}")
    row_of = {a.sample_id: i for i, a in enumerate(annotations)}
    absent = [s for s in pset.sample_ids if s not in row_of]
    if absent:
        raise DataError(f"truth file lacks {len(absent)} predicted samples "
                        f"(first: {absent[0]!r})")
    codes = np.stack([annotations[row_of[s]].values for s in pset.sample_ids])
    cols = [reg.id_of(lab) for lab in pset.labels]
    binary = np.isin(
        codes[:, cols],
        (labels_mod.AnnotationValue.POSITIVE, labels_mod.AnnotationValue.UNCERTAIN),
    ).astype(np.int64)

    cal = _read_calibration(calibration) if calibration else None
    if cal is not None and set(cal.labels) != set(pset.labels):
        raise DataError("calibration labels differ from prediction labels")

    report: dict = {
        "inputs": {
            "predictions": _input_stamp(predictions),
            "truth": _input_stamp(truth),
        },
        "labels": list(pset.labels),
        "classifiers": {},
    }
    if cal is not None:
        report["inputs"]["calibration"] = _input_stamp(calibration)
        report["calibration"] = {
            "delta": cal.delta,
            "thresholds": {n: float(t) for n, t in zip(cal.labels, cal.thresholds)},
        }

    roc_rows: list[tuple] = []
    for ci, cname in enumerate(pset.classifier_names):
        scores = pset.values[ci]
        per_label = {
            lab: evaluation.auroc(scores[:, j], binary[:, j])
            for j, lab in enumerate(pset.labels)
        }
        entry: dict = {
            "auroc": per_label,
            "mean_auroc": float(np.mean(list(per_label.values()))),
        }
        if cal is not None:
            order = [cal.labels.index(lab) for lab in pset.labels]
            aligned = evaluation.ThresholdCalibration(
                pset.labels, cal.thresholds[order], cal.delta
            )
            decisions = evaluation.classify_with_band(scores, aligned)
            entry["confusion"] = {
                lab: evaluation.confusion_matrix(decisions[:, j], binary[:, j]).as_dict()
                for j, lab in enumerate(pset.labels)
            }
        report["classifiers"][cname] = entry
        if roc_out:
            for j, lab in enumerate(pset.labels):
                for pt in evaluation.roc_curve(scores[:, j], binary[:, j]):
                    roc_rows.append((cname, lab, pt.threshold, pt.fpr, pt.tpr))

    if roc_out:
        with open(roc_out, "w", encoding="utf-8") as fh:
            fh.write("classifier,label,threshold,fpr,tpr\n")
            for row in roc_rows:
                fh.write(f"{row[0]},{row[1]},{row[2]:.12g},{row[3]:.12g},{row[4]:.12g}\n")
    _dump_json(report, out)


if __name__ == "__main__":
    main()
