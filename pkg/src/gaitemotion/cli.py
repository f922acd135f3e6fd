"""Command-line entry points.

Commands: synth, stats, train, eval, predict, ablate, sweep.  Run
``gaitemotion <command> --help`` for the flags of each.

Settings resolve as command-line flag, then ``--config`` JSON file, then the
built-in default.  The resolved settings are written next to every output
(``run_config.json``) and repeated in the header of every CSV and in the
``meta`` field of every JSON report.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .affective import FEATURE_NAMES, mean_feature_histograms, write_histogram_csv
from .estimator import GaitEmotionClassifier
from .exceptions import ConfigError, EmptyError, GaitEmotionError
from .gait_io import (
    Dataset,
    generate_synthetic,
    label_matrix,
    load_cache,
    load_dataset,
    preprocess_temporal,
    save_cache,
    save_dataset,
    split_dataset,
)
from .labels_metrics import CLASS_NAMES, evaluate
from .rotation import extract_rotations
from .skeleton import canonical_skeleton
from .training import load_checkpoint, predict_proba, save_checkpoint, write_log_csv

logger = logging.getLogger("gaitemotion")

SWEEP_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class RunConfig:
    dataset: str | None = None
    out_dir: str | None = None
    seed: int | None = None
    embed_dim: int = 32
    joint_dim: int = 16
    classifier_dims: tuple = (16, 8)
    decoder_hidden: int | None = None
    dropout: float = 0.1
    lambda_quat: float = 2.0
    lambda_aff: float = 2.0
    epochs: int = 500
    batch_size: int = 32
    use_hierarchical_pooling: bool = True
    use_affective_loss: bool = True
    use_unlabeled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "classifier_dims", tuple(self.classifier_dims))

    @property
    def use_autoencoder(self):
        # the labeled-only baseline without HP and AL has no decoder at all
        return self.use_unlabeled or self.use_hierarchical_pooling or self.use_affective_loss

    def require_seed(self):
        if self.seed is None:
            raise ConfigError("a seed is required (--seed or 'seed' in the config file)")
        return int(self.seed)

    def to_dict(self):
        d = asdict(self)
        d["classifier_dims"] = list(self.classifier_dims)
        return d

    def estimator(self, **overrides) -> GaitEmotionClassifier:
        params = dict(
            embed_dim=self.embed_dim,
            joint_dim=self.joint_dim,
            classifier_dims=self.classifier_dims,
            decoder_hidden=self.decoder_hidden,
            dropout=self.dropout,
            use_hierarchical_pooling=self.use_hierarchical_pooling,
            use_affective_loss=self.use_affective_loss,
            use_autoencoder=self.use_autoencoder,
            lambda_quat=self.lambda_quat,
            lambda_aff=self.lambda_aff,
            epochs=self.epochs,
            batch_size=self.batch_size,
            random_state=self.require_seed(),
        )
        params.update(overrides)
        return GaitEmotionClassifier(**params)


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, overridden by the ``--config`` file, overridden by flags."""
    values = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return RunConfig(**values)


def meta(cfg: RunConfig | None = None, **extra) -> dict:
    out = {"tool": "gaitemotion", "version": __version__}
    if cfg is not None:
        out["config"] = cfg.to_dict()
    out.update(extra)
    return out


def header_lines(info: dict):
    return [f"{k}: {json.dumps(v, sort_keys=True)}" for k, v in info.items()]


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def persist_config(cfg: RunConfig, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "run_config.json", meta(cfg))


def write_rows_csv(path, rows, columns, info):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines(info):
            fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        writer.writerows(rows)


def read_rows_csv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


# --- data preparation -------------------------------------------------------


def _fingerprint(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cached_positions(ds: Dataset, dataset_path=None) -> dict:
    """Preprocessed ``(48, 21, 3)`` positions keyed by sample id.

    With a dataset path, results are cached in ``<dataset>.cache.npz`` and
    reused while the dataset file is unchanged.
    """
    if dataset_path is None:
        return {s.id: preprocess_temporal(s) for s in ds}
    cache = Path(str(dataset_path) + ".cache.npz")
    digest = _fingerprint(dataset_path)
    if cache.exists():
        arrays = load_cache(cache)
        if str(arrays.pop("__source_sha256__", "")) == digest and set(arrays) == {s.id for s in ds}:
            return arrays
    arrays = {s.id: preprocess_temporal(s) for s in ds}
    save_cache(cache, {**arrays, "__source_sha256__": np.array(digest)})
    return arrays


def _arrays(samples, positions):
    X = np.stack([positions[s.id] for s in samples]) if samples else np.zeros((0, 48, 21, 3))
    return X, label_matrix(samples)


def fit_and_score(cfg: RunConfig, ds: Dataset, positions=None, unlabeled_fraction=None):
    """Split, train and evaluate one configuration.

    Returns ``(estimator, report)`` with the AP report on the test split.
    ``unlabeled_fraction`` keeps a seeded, nested subset of the unlabeled
    training gaits (the sweep); otherwise ``use_unlabeled`` decides.
    """
    seed = cfg.require_seed()
    positions = positions if positions is not None else cached_positions(ds)
    ds = split_dataset(ds, seed)
    train = ds.split("train")
    labeled = [s for s in train if s.labeled]
    unlabeled = [s for s in train if not s.labeled]
    if unlabeled_fraction is None:
        unlabeled_fraction = 1.0 if cfg.use_unlabeled else 0.0
    order = np.random.default_rng(seed).permutation(len(unlabeled))
    keep = int(round(unlabeled_fraction * len(unlabeled)))
    train = labeled + [unlabeled[i] for i in sorted(order[:keep])]

    X, y = _arrays(train, positions)
    X_val, y_val = _arrays(ds.split("val"), positions)
    X_test, y_test = _arrays(ds.split("test"), positions)
    clf = cfg.estimator()
    clf.fit(X, y, X_val, y_val)
    return clf, clf.evaluate(X_test, y_test)


def report_row(report):
    row = {f"ap_{c}": report["ap"].get(c, float("nan")) for c in CLASS_NAMES}
    row["map"] = report["map"]
    return row


# --- commands ---------------------------------------------------------------


def cmd_synth(args):
    seed = args.seed
    ds = generate_synthetic(args.labeled, args.unlabeled, seed)
    out = Path(args.output)
    save_dataset(ds, out)
    write_json(Path(str(out) + ".meta.json"), meta(labeled=args.labeled, unlabeled=args.unlabeled, seed=seed))
    print(f"wrote {len(ds)} gaits to {out}")
    return ds


def cmd_stats(args):
    ds = load_dataset(args.dataset)
    if not ds.labeled:
        raise EmptyError("the dataset has no labeled gaits")
    n_features = args.features or len(FEATURE_NAMES)
    if not 1 <= n_features <= len(FEATURE_NAMES):
        raise ConfigError(f"--features must lie in 1..{len(FEATURE_NAMES)}")
    positions = cached_positions(ds, args.dataset)
    rows = mean_feature_histograms(
        [positions[s.id] for s in ds.labeled], [s.label_probs for s in ds.labeled], bins=args.bins, n_features=n_features
    )
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_histogram_csv(rows, out, header_lines(meta(dataset=str(args.dataset), bins=args.bins, features=n_features)))
    if args.plot:
        _plot_histograms(rows, out.with_suffix(".png"))
    print(f"wrote {len(rows)} histogram rows to {out}")
    return rows


def _plot_histograms(rows, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    features = list(dict.fromkeys(r["feature"] for r in rows))
    fig, axes = plt.subplots(len(features), 1, figsize=(6, 2 * len(features)), squeeze=False)
    for ax, feat in zip(axes[:, 0], features):
        for cls in CLASS_NAMES:
            sel = [r for r in rows if r["feature"] == feat and r["class"] == cls]
            ax.step([r["bin_left"] for r in sel], [r["count"] for r in sel], where="post", label=cls)
        ax.set_title(feat, fontsize=8)
    axes[0, 0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_train(args):
    cfg = resolve_config(args)
    cfg.require_seed()
    if cfg.dataset is None or cfg.out_dir is None:
        raise ConfigError("train needs a dataset and an output directory")
    out = Path(cfg.out_dir)
    persist_config(cfg, out)
    ds = load_dataset(cfg.dataset)
    clf, report = fit_and_score(cfg, ds, cached_positions(ds, cfg.dataset))
    info = meta(cfg)
    save_checkpoint(
        out / "model.pt",
        clf.model_,
        epoch=clf.best_epoch_,
        meta={**info, "class_weights": clf.class_weights_.tolist(), "best_val_map": clf.state_.best_val_map},
    )
    write_log_csv(clf.history_, out / "epochs.csv", header_lines(info))
    write_json(out / "test_report.json", {**report, "meta": info})
    print(f"best epoch {clf.best_epoch_}, test mAP {report['map']:.4f}")
    return clf, report


def _checkpoint_config(payload, args) -> RunConfig:
    stored = payload.get("meta", {}).get("config", {})
    cfg = RunConfig(**{k: v for k, v in stored.items() if k in CONFIG_KEYS})
    updates = {k: getattr(args, k) for k in ("dataset", "seed") if getattr(args, k, None) is not None}
    return replace(cfg, **updates)


def _select(ds: Dataset, split: str, seed):
    if split == "all":
        return list(ds.samples)
    if seed is None:
        raise ConfigError("selecting a split needs a seed")
    return split_dataset(ds, seed).split(split)


def _probabilities(args):
    """Return ``(ids, probabilities, samples, cfg)`` from a checkpoint or a prediction CSV."""
    if args.predictions:
        rows = read_rows_csv(args.predictions)
        ids = [r["id"] for r in rows]
        probs = np.array([[float(r[f"p_{c}"]) for c in CLASS_NAMES] for r in rows])
        return ids, probs, None, None
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    model, payload = load_checkpoint(args.checkpoint)
    cfg = _checkpoint_config(payload, args)
    if cfg.dataset is None:
        raise ConfigError("no dataset given and none recorded in the checkpoint")
    ds = load_dataset(cfg.dataset)
    samples = _select(ds, args.split, cfg.seed)
    positions = cached_positions(ds, cfg.dataset)
    X, _ = _arrays(samples, positions)
    if X.shape[1:3] != (model.cfg.n_frames, model.cfg.n_joints):
        raise ConfigError("checkpoint shape does not match the preprocessed dataset")
    rot = extract_rotations(X, canonical_skeleton())
    return [s.id for s in samples], predict_proba(model, rot), samples, cfg


def cmd_eval(args):
    ids, probs, samples, cfg = _probabilities(args)
    if samples is None:
        ds = load_dataset(args.dataset)
        by_id = {s.id: s for s in ds}
        samples = [by_id[i] for i in ids]
    labeled = [i for i, s in enumerate(samples) if s.labeled]
    if not labeled:
        raise EmptyError("no labeled gaits to evaluate")
    truth = label_matrix([samples[i] for i in labeled])
    report = evaluate(probs[labeled], truth)
    report["meta"] = meta(cfg, split=args.split, n_evaluated=len(labeled))
    write_json(args.output, report)
    print(f"mAP {report['map']:.4f}")
    return report


def cmd_predict(args):
    args.predictions = None
    ids, probs, _, cfg = _probabilities(args)
    bits = (probs > 1.0 / probs.shape[1]).astype(int)
    rows = []
    for i, p, b in zip(ids, probs, bits):
        row = {"id": i}
        row.update({f"p_{c}": repr(float(v)) for c, v in zip(CLASS_NAMES, p)})
        row.update({c: int(v) for c, v in zip(CLASS_NAMES, b)})
        rows.append(row)
    columns = ["id"] + [f"p_{c}" for c in CLASS_NAMES] + list(CLASS_NAMES)
    write_rows_csv(args.output, rows, columns, meta(cfg, split=args.split))
    print(f"wrote {len(rows)} predictions to {args.output}")
    return rows


ABLATION_GRID = tuple(
    (unlabeled, hp, al) for unlabeled in (False, True) for hp in (False, True) for al in (False, True)
)
RESULT_COLUMNS = [f"ap_{c}" for c in CLASS_NAMES] + ["map"]


def run_ablation(cfg: RunConfig, ds: Dataset, positions=None, out_dir=None):
    """Train the 2 x 2 x 2 grid (data, HP, AL); one result row per cell."""
    positions = positions if positions is not None else cached_positions(ds)
    rows = []
    for unlabeled, hp, al in ABLATION_GRID:
        row_cfg = replace(cfg, use_unlabeled=unlabeled, use_hierarchical_pooling=hp, use_affective_loss=al)
        clf, report = fit_and_score(row_cfg, ds, positions)
        name = f"{'all' if unlabeled else 'labeled'}_hp{int(hp)}_al{int(al)}"
        if out_dir is not None:
            run_dir = Path(out_dir) / name
            persist_config(row_cfg, run_dir)
            write_log_csv(clf.history_, run_dir / "epochs.csv", header_lines(meta(row_cfg)))
            write_json(run_dir / "test_report.json", {**report, "meta": meta(row_cfg)})
        row = {"row": name, "data": "all" if unlabeled else "labeled", "hp": int(hp), "al": int(al)}
        row.update(report_row(report))
        rows.append(row)
        logger.info("%s mAP %.4f", name, report["map"])
    return rows


def cmd_ablate(args):
    cfg = resolve_config(args)
    cfg.require_seed()
    out = Path(cfg.out_dir or ".")
    persist_config(cfg, out)
    ds = load_dataset(cfg.dataset)
    rows = run_ablation(cfg, ds, cached_positions(ds, cfg.dataset), out)
    write_rows_csv(out / "ablation.csv", rows, ["row", "data", "hp", "al"] + RESULT_COLUMNS, meta(cfg))
    for r in rows:
        print(f"{r['row']:<16} mAP {r['map']:.4f}")
    return rows


def run_sweep(cfg: RunConfig, ds: Dataset, positions=None, fractions=SWEEP_FRACTIONS):
    positions = positions if positions is not None else cached_positions(ds)
    rows = []
    for frac in fractions:
        _, report = fit_and_score(cfg, ds, positions, unlabeled_fraction=frac)
        rows.append({"unlabeled_fraction": frac, **report_row(report)})
        logger.info("fraction %.2f mAP %.4f", frac, report["map"])
    return rows


def cmd_sweep(args):
    cfg = resolve_config(args)
    cfg.require_seed()
    out = Path(cfg.out_dir or ".")
    persist_config(cfg, out)
    ds = load_dataset(cfg.dataset)
    if not ds.unlabeled:
        raise EmptyError("the sweep needs unlabeled gaits")
    rows = run_sweep(cfg, ds, cached_positions(ds, cfg.dataset))
    write_rows_csv(out / "sweep.csv", rows, ["unlabeled_fraction"] + RESULT_COLUMNS, meta(cfg))
    for r in rows:
        print(f"fraction {r['unlabeled_fraction']:.2f} mAP {r['map']:.4f}")
    return rows


# --- argument parsing -------------------------------------------------------


def _add_run_flags(p, need_output=True):
    p.add_argument("--config", help="JSON file with run settings (flags override it)")
    p.add_argument("--dataset", help="JSON-lines dataset")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--seed", type=int, help="seed for the split, initialization and shuffling (required)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--joint-dim", dest="joint_dim", type=int, help="per-joint feature width h")
    p.add_argument("--classifier-dims", dest="classifier_dims", type=int, nargs=2)
    p.add_argument("--decoder-hidden", dest="decoder_hidden", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lambda-quat", dest="lambda_quat", type=float)
    p.add_argument("--lambda-aff", dest="lambda_aff", type=float)
    p.add_argument("--hp", dest="use_hierarchical_pooling", action=argparse.BooleanOptionalAction, default=None,
                   help="hierarchical pooling")
    p.add_argument("--al", dest="use_affective_loss", action=argparse.BooleanOptionalAction, default=None,
                   help="affective loss constraint")
    p.add_argument("--unlabeled", dest="use_unlabeled", action=argparse.BooleanOptionalAction, default=None,
                   help="train on unlabeled gaits too")


def build_parser():
    parser = argparse.ArgumentParser(prog="gaitemotion", description="Perceived emotion from 3D gait.")
    parser.add_argument("--version", action="version", version=f"gaitemotion {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--labeled", type=int, required=True)
    p.add_argument("--unlabeled", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="per-class affective feature histograms")
    p.add_argument("--dataset", required=True)
    p.add_argument("--features", type=int, help="first N features only")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--plot", action="store_true", help="also render a PNG (needs matplotlib)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train one model")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, what in (("eval", cmd_eval, "JSON AP report"), ("predict", cmd_predict, "per-gait CSV")):
        p = sub.add_parser(name, help=f"write a {what}")
        p.add_argument("--checkpoint")
        p.add_argument("--dataset", help="defaults to the dataset recorded in the checkpoint")
        p.add_argument("--seed", type=int, help="defaults to the seed recorded in the checkpoint")
        p.add_argument("--split", choices=("train", "val", "test", "all"), default="test" if name == "eval" else "all")
        p.add_argument("-o", "--output", required=True)
        if name == "eval":
            p.add_argument("--predictions", help="score a predict CSV instead of running a checkpoint")
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="train the 8-row HP x AL x data ablation grid")
    _add_run_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="test mAP against the fraction of unlabeled data used")
    _add_run_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "eval" and not (args.checkpoint or args.predictions):
        parser.error("eval needs --checkpoint or --predictions")
    if args.command == "eval" and args.predictions and not args.dataset:
        parser.error("--predictions needs --dataset for the ground truth")
    if args.command == "predict" and not args.checkpoint:
        parser.error("predict needs --checkpoint")
    try:
        args.func(args)
    except (GaitEmotionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
