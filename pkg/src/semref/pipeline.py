"""Referee-loop orchestration and evaluation metrics.

One loop round trains the classifier on RGB plus the current feedback
channels, predicts, and scores against ground truth. Between rounds the
referee turns each scene's prediction into fresh channels. Round zero
always uses all-zero channels. Test scenes run the same number of rounds
as training, with their channels recomputed from their own predictions;
ground truth is used only for metrics, never for certainty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classifier import PixelClassifier, TrainConfig, predict, train, weights_from_labels
from .ontology import Ontology, default_ontology, load_ontology
from .raster import LabelRaster, MultiChannelRaster, ProbabilityRaster, concat_channels
from .referee import FeedbackChannels, referee_channels
from .synth import CLASS_NAMES, SceneBundle

DSM_NONE = "none"
DSM_TRUE = "true"


@dataclass
class LoopConfig:
    max_rounds: int = 3
    epsilon: float = 0.2  # convergence threshold on validation accuracy, percentage points
    certainty_threshold: float = 0.7
    tile_size: int = 64
    ontology_path: str | None = None
    dsm: str = DSM_NONE  # "none" (class-prior elevation), "true", or a raster path
    seed: int = 0
    base_filters: int = 8
    train: TrainConfig = field(default_factory=TrainConfig)
    # Feedback rounds continue from the previous round's weights with this
    # config (usually fewer epochs at a lower rate); None reuses `train`.
    feedback_train: TrainConfig | None = None
    # Re-initialize the model every round instead of warm-starting.
    retrain_from_scratch: bool = False
    reuse_first_channels: bool = False  # keep round-1 channels for later rounds
    dsm_thresholds: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds must be >= 1, got {self.max_rounds}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.0 < self.certainty_threshold <= 1.0:
            raise ValueError("certainty_threshold must be in (0, 1]")

    def load_ontology(self) -> Ontology:
        if self.ontology_path:
            return load_ontology(self.ontology_path)
        return default_ontology()

    def to_dict(self) -> dict:
        def train_dict(cfg: TrainConfig | None):
            if cfg is None:
                return None
            return {
                "learning_rate": cfg.learning_rate,
                "batch_size": cfg.batch_size,
                "max_epochs": cfg.max_epochs,
                "patch_size": cfg.patch_size,
                "val_fraction": cfg.val_fraction,
                "patience": cfg.patience,
                "seed": cfg.seed,
                "steps_per_epoch": cfg.steps_per_epoch,
                "class_balance": cfg.class_balance,
            }

        return {
            "max_rounds": self.max_rounds,
            "epsilon": self.epsilon,
            "certainty_threshold": self.certainty_threshold,
            "tile_size": self.tile_size,
            "ontology_path": self.ontology_path,
            "dsm": self.dsm,
            "seed": self.seed,
            "base_filters": self.base_filters,
            "retrain_from_scratch": self.retrain_from_scratch,
            "reuse_first_channels": self.reuse_first_channels,
            "dsm_thresholds": list(self.dsm_thresholds),
            "train": train_dict(self.train),
            "feedback_train": train_dict(self.feedback_train),
        }


@dataclass
class Metrics:
    """Row-normalized confusion percentages plus accuracy summaries.

    Confusion rows follow ground-truth classes; rows for classes absent
    from the ground truth hold NaN and are reported as absent.
    """

    class_names: tuple[str, ...]
    confusion: np.ndarray  # (K, K) float64 percentages
    per_class: dict[str, float]
    overall: float
    absent: tuple[str, ...]

    def to_dict(self) -> dict:
        conf = [
            [None if np.isnan(v) else round(float(v), 6) for v in row] for row in self.confusion
        ]
        return {
            "class_names": list(self.class_names),
            "confusion": conf,
            "per_class": {
                k: (None if np.isnan(v) else round(float(v), 6)) for k, v in self.per_class.items()
            },
            "overall": round(float(self.overall), 6),
            "absent": list(self.absent),
        }


def confusion_metrics(
    pred: LabelRaster | np.ndarray,
    truth: LabelRaster | np.ndarray,
    class_names: tuple[str, ...] = CLASS_NAMES,
) -> Metrics:
    """Confusion matrix in row percentages, per-class and overall accuracy."""
    p = pred.values if isinstance(pred, LabelRaster) else np.asarray(pred)
    t = truth.values if isinstance(truth, LabelRaster) else np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {t.shape} differ in shape")
    k = len(class_names)
    counts = np.bincount((t.ravel().astype(np.int64) * k + p.ravel()), minlength=k * k).reshape(k, k)
    row_sums = counts.sum(axis=1)
    confusion = np.full((k, k), np.nan)
    present = row_sums > 0
    confusion[present] = counts[present] / row_sums[present, None] * 100.0
    per_class = {
        name: (float(confusion[i, i]) if present[i] else float("nan"))
        for i, name in enumerate(class_names)
    }
    overall = float(np.trace(counts) / counts.sum() * 100.0)
    absent = tuple(name for i, name in enumerate(class_names) if not present[i])
    return Metrics(tuple(class_names), confusion, per_class, overall, absent)


def format_confusion(metrics: Metrics) -> str:
    """Render the matrix with one decimal per cell, rows as actual classes."""
    width = max(len(n) for n in metrics.class_names) + 2
    header = " " * width + "".join(f"{n:>{width}}" for n in metrics.class_names)
    lines = [header]
    for i, name in enumerate(metrics.class_names):
        row = metrics.confusion[i]
        cells = "".join(
            f"{'absent':>{width}}" if np.isnan(v) else f"{v:>{width}.1f}" for v in row
        )
        lines.append(f"{name:>{width}}" + cells)
    lines.append(f"overall accuracy: {metrics.overall:.1f}")
    return "\n".join(lines)


def _scene_input(bundle: SceneBundle, channels: FeedbackChannels) -> np.ndarray:
    return concat_channels(bundle.rgb, channels.to_raster()).values


def _dsm_for(bundle: SceneBundle, config: LoopConfig) -> np.ndarray | None:
    if config.dsm == DSM_NONE:
        return None
    if config.dsm == DSM_TRUE:
        return bundle.true_dsm
    from .raster import load_raster

    raster = load_raster(config.dsm, "channels")
    return raster.values[:, :, 0]


def run_round(
    model: PixelClassifier,
    train_scenes: list[tuple[np.ndarray, np.ndarray]],
    eval_scenes: list[tuple[np.ndarray, np.ndarray]],
    weights: np.ndarray,
    train_config: TrainConfig,
    class_names: tuple[str, ...] = CLASS_NAMES,
) -> tuple[PixelClassifier, list[ProbabilityRaster], Metrics, list[dict]]:
    """Train on the given inputs, predict the eval scenes, score them.

    `train_scenes` and `eval_scenes` hold (input HWC, labels HW) pairs;
    eval labels are ground truth used for metrics only.
    """
    history = train(model, train_scenes, weights, train_config)
    probs = [predict(model, x) for x, _ in eval_scenes]
    preds = np.concatenate([pr.argmax().values.ravel() for pr in probs])
    truths = np.concatenate([lab.ravel() for _, lab in eval_scenes])
    metrics = confusion_metrics(preds, truths, class_names)
    return model, probs, metrics, history


def _histogram_report(hist, dominant, concepts) -> dict:
    rows = [
        {"relation": rel, "concept": con, "pairs": n, "regions": hist.region_counts()[(rel, con)]}
        for (rel, con), n in sorted(hist.counts.items())
    ]
    return {
        "pairs_by_relation_and_concept": rows,
        "total_pairs": hist.total_pairs(),
        "dominant": None if dominant is None else {"relation": dominant[0], "concept": dominant[1]},
        "inferred_concepts": concepts,
    }


def _referee_pass(bundle, probs, ontology, config) -> tuple[FeedbackChannels, dict]:
    channels, hist, dominant, concepts, verdicts = referee_channels(
        probs,
        ontology,
        threshold=config.certainty_threshold,
        tile_size=config.tile_size,
        dsm=_dsm_for(bundle, config),
        dsm_thresholds=config.dsm_thresholds,
    )
    counts = {"shadow": 0, "inconsistent": 0, "none": 0}
    for v in verdicts:
        counts[v.verdict] += 1
    report = _histogram_report(hist, dominant, concepts)
    report["verdict_counts"] = counts
    return channels, report


@dataclass
class LoopResult:
    config: LoopConfig
    rounds: list[dict]
    baseline_overall: float
    final_overall: float
    final_metrics: Metrics
    converged_early: bool

    @property
    def improvement(self) -> float:
        return self.final_overall - self.baseline_overall

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "rounds": self.rounds,
            "train_round_count": len(self.rounds),
            "test_round_count": len(self.rounds),
            "baseline_overall": round(self.baseline_overall, 6),
            "final_overall": round(self.final_overall, 6),
            "improvement": round(self.improvement, 6),
            "converged_early": self.converged_early,
        }


def run_loop(
    config: LoopConfig,
    train_bundles: list[SceneBundle],
    test_bundles: list[SceneBundle],
) -> LoopResult:
    """Run the full referee loop and evaluate every round on the test scenes."""
    if not train_bundles or not test_bundles:
        raise ValueError("need at least one training and one test scene")
    shapes = {(b.labels.height, b.labels.width) for b in train_bundles + test_bundles}
    if len(shapes) > 1:
        raise ValueError(f"scenes must share dimensions, got {sorted(shapes)}")
    ontology = config.load_ontology()
    num_classes = len(CLASS_NAMES)
    weights, absent = weights_from_labels(
        np.concatenate([b.labels.values.ravel() for b in train_bundles]), num_classes
    )
    train_ch = [FeedbackChannels.zeros((b.labels.height, b.labels.width)) for b in train_bundles]
    test_ch = [FeedbackChannels.zeros((b.labels.height, b.labels.width)) for b in test_bundles]
    probs_train: list[ProbabilityRaster] = []
    probs_test: list[ProbabilityRaster] = []

    rounds: list[dict] = []
    prev_val: float | None = None
    converged = False
    for rnd in range(config.max_rounds):
        referee_reports: dict = {}
        if rnd > 0 and not (config.reuse_first_channels and rnd > 1):
            new_train, train_rep = [], []
            for bundle, probs in zip(train_bundles, probs_train):
                ch, rep = _referee_pass(bundle, probs, ontology, config)
                new_train.append(ch)
                train_rep.append(rep)
            new_test, test_rep = [], []
            for bundle, probs in zip(test_bundles, probs_test):
                ch, rep = _referee_pass(bundle, probs, ontology, config)
                new_test.append(ch)
                test_rep.append(rep)
            train_ch, test_ch = new_train, new_test
            referee_reports = {"train_scenes": train_rep, "test_scenes": test_rep}
        for ch in train_ch + test_ch:
            ch.validate()

        train_scenes = [
            (_scene_input(b, ch), b.labels.values) for b, ch in zip(train_bundles, train_ch)
        ]
        test_scenes = [
            (_scene_input(b, ch), b.labels.values) for b, ch in zip(test_bundles, test_ch)
        ]
        if rnd == 0 or config.retrain_from_scratch:
            model = PixelClassifier(
                in_channels=6,
                num_classes=num_classes,
                base_filters=config.base_filters,
                seed=config.seed,
                zero_init_channels_from=3,
            )
        base_cfg = config.train
        if rnd > 0 and config.feedback_train is not None and not config.retrain_from_scratch:
            base_cfg = config.feedback_train
        round_cfg = replace(base_cfg, seed=base_cfg.seed + 1000 * rnd)
        model, probs_test, metrics, history = run_round(
            model, train_scenes, test_scenes, weights, round_cfg
        )
        probs_train = [predict(model, x) for x, _ in train_scenes]
        val_acc = history[-1]["val_accuracy"] * 100.0 if history else float("nan")
        rounds.append(
            {
                "round": rnd,
                "val_accuracy": round(val_acc, 6),
                "epochs": len(history),
                "test": metrics.to_dict(),
                "referee": referee_reports,
                "absent_classes": list(CLASS_NAMES[i] for i in absent),
            }
        )
        if prev_val is not None and abs(val_acc - prev_val) < config.epsilon:
            converged = True
            break
        prev_val = val_acc

    baseline = rounds[0]["test"]["overall"]
    final = rounds[-1]["test"]["overall"]
    final_metrics = confusion_metrics(
        np.concatenate([p.argmax().values.ravel() for p in probs_test]),
        np.concatenate([b.labels.values.ravel() for b in test_bundles]),
    )
    return LoopResult(
        config=config,
        rounds=rounds,
        baseline_overall=baseline,
        final_overall=final,
        final_metrics=final_metrics,
        converged_early=converged,
    )


def write_report(result: LoopResult, out_dir: str | Path) -> tuple[Path, Path]:
    """Write the loop report as JSON plus a per-round CSV; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    report_path.write_text(
        json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="ascii"
    )
    csv_path = out / "metrics.csv"
    lines = ["round,overall," + ",".join(CLASS_NAMES)]
    for row in result.rounds:
        per_class = row["test"]["per_class"]
        cells = [str(row["round"]), f"{row['test']['overall']:.6f}"]
        cells += [
            "" if per_class[name] is None else f"{per_class[name]:.6f}" for name in CLASS_NAMES
        ]
        lines.append(",".join(cells))
    csv_path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return report_path, csv_path


# -- key-value config files --------------------------------------------------


def parse_loop_config(text: str) -> tuple[LoopConfig, dict]:
    """Parse a key-value config file into a LoopConfig plus extra keys.

    Unknown keys (scene sources, generator knobs) are returned untouched
    for the caller. Lines are `key value...`; `#` starts a comment.
    """
    values: dict[str, list[str]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 2:
            raise ValueError(f"config line {line_no}: expected 'key value', got {line!r}")
        values[tokens[0]] = tokens[1:]

    def pop(key, cast, default):
        if key in values:
            return cast(values.pop(key)[0])
        return default

    train = TrainConfig(
        learning_rate=pop("train.learning_rate", float, 1e-4),
        batch_size=pop("train.batch_size", int, 8),
        max_epochs=pop("train.max_epochs", int, 50),
        patch_size=pop("train.patch_size", int, 64),
        val_fraction=pop("train.val_fraction", float, 0.1),
        patience=pop("train.patience", int, 5),
        seed=pop("train.seed", int, 0),
        steps_per_epoch=pop("train.steps_per_epoch", int, None),
    )
    config = LoopConfig(
        max_rounds=pop("max_rounds", int, 3),
        epsilon=pop("epsilon", float, 0.2),
        certainty_threshold=pop("certainty_threshold", float, 0.7),
        tile_size=pop("tile_size", int, 64),
        ontology_path=pop("ontology", str, None),
        dsm=pop("dsm", str, DSM_NONE),
        seed=pop("seed", int, 0),
        base_filters=pop("base_filters", int, 8),
        reuse_first_channels=pop("reuse_first_channels", lambda s: s.lower() == "true", False),
        train=train,
    )
    return config, values
