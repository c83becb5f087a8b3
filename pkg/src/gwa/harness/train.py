"""Reference trainer: runs a desk-scale classifier and emits telemetry.

Every optimization step aligns the batch against the head weights in force
at the step's start, streams the scores into the epoch distribution, and
(optionally) writes the binary trace plus the per-sample score file.
Validation/test splits exist only to grade the validation-free criteria;
they never feed the alignment math.
"""

from __future__ import annotations

import io
import json
import math
import sys
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .. import controller
from ..alignment import HeadSnapshot, compute_alignment_batch
from ..errors import DatasetLoad, NonFiniteLoss
from ..ingest import SCORE_DTYPE, ScoreWriter
from ..moments import DEFAULT_BETA, EpochDistribution, GwaSeries
from ..projection import ProjectionSpec, project_head, project_latents
from ..trace import TraceHeader, TraceWriter
from . import datasets
from .models import Adam, Mlp, Sgd, SoftmaxRegression, accuracy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class ProjectionConfig:
    enabled: bool = False
    dim: int = 192
    seed: int = 0


@dataclass
class TrainerConfig:
    model: str = "softmax_regression"
    hidden_dim: int = 64
    activation: str = "relu"
    optimizer: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    label_noise_fraction: float = 0.0
    random_labels: bool = False
    dataset: str = "gaussian_blobs"
    n_samples: int = 1000
    classes: int = 5
    dim: int = 20
    separation: float = 2.0
    noise_std: float = 0.1
    csv_path: str = ""
    images_path: str = ""
    labels_path: str = ""
    subsample: int = 0
    val_fraction: float = 0.0
    test_size: int = 2000
    test_fraction: float = 0.2
    warmup_fraction: float = 0.10
    beta: float = DEFAULT_BETA
    include_bias: bool = False
    retain_scores: bool = True
    emit_trace: bool = True
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.label_noise_fraction <= 1.0:
            raise ValueError("label_noise_fraction must be in [0, 1]")
        if self.label_noise_fraction > 0 and self.random_labels:
            raise ValueError("label_noise_fraction and random_labels are mutually exclusive")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.model not in ("softmax_regression", "mlp"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainerConfig":
        obj = dict(obj)
        proj = obj.pop("projection", {})
        known = {f for f in cls.__dataclass_fields__ if f != "projection"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(projection=ProjectionConfig(**proj), **obj)

    @classmethod
    def from_toml(cls, path) -> "TrainerConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


def load_split(config: TrainerConfig, rng: np.random.Generator) -> datasets.Split:
    """Materialize train/val/test and corrupt the training labels."""
    if config.dataset == "gaussian_blobs":
        def gen(n):
            return datasets.gaussian_blobs(
                rng, n, config.classes, config.dim, config.separation
            )
    elif config.dataset == "two_moons":
        def gen(n):
            return datasets.two_moons(rng, n, config.noise_std)
    elif config.dataset in ("csv", "idx_images"):
        gen = None
    else:
        raise DatasetLoad(f"unknown dataset {config.dataset!r}")

    if gen is not None:
        # one pool, then slices: all three splits share the distribution
        val_n = int(round(config.val_fraction * config.n_samples))
        x, y = gen(config.n_samples + val_n + config.test_size)
        train_x, train_y = x[: config.n_samples], y[: config.n_samples]
        val_x = x[config.n_samples : config.n_samples + val_n]
        val_y = y[config.n_samples : config.n_samples + val_n]
        test_x, test_y = x[config.n_samples + val_n :], y[config.n_samples + val_n :]
    else:
        if config.dataset == "csv":
            x, y = datasets.load_csv(config.csv_path)
        else:
            x, y = datasets.load_idx_images(
                config.images_path, config.labels_path, config.subsample
            )
        perm = rng.permutation(len(y))
        x, y = x[perm], y[perm]
        n_test = int(round(config.test_fraction * len(y)))
        n_val = int(round(config.val_fraction * len(y)))
        if n_test + n_val >= len(y):
            raise DatasetLoad("val_fraction + test_fraction leave no training data")
        test_x, test_y = x[:n_test], y[:n_test]
        val_x, val_y = x[n_test : n_test + n_val], y[n_test : n_test + n_val]
        train_x, train_y = x[n_test + n_val :], y[n_test + n_val :]

    classes = int(max(train_y.max(), val_y.max(initial=0), test_y.max(initial=0))) + 1
    noisy_y, flipped = datasets.corrupt_labels(
        rng,
        train_y,
        classes,
        flip_fraction=config.label_noise_fraction,
        randomize=config.random_labels,
    )
    return datasets.Split(
        train_x=train_x,
        train_y=noisy_y,
        val_x=val_x,
        val_y=val_y,
        test_x=test_x,
        test_y=test_y,
        flipped=flipped,
    )


def build_model(config: TrainerConfig, dim: int, classes: int, rng: np.random.Generator):
    if config.model == "mlp":
        return Mlp(dim, classes, rng, hidden_dim=config.hidden_dim, activation=config.activation)
    return SoftmaxRegression(dim, classes, rng)


def build_optimizer(config: TrainerConfig, model):
    if config.optimizer == "adam":
        return Adam(
            model.params,
            config.lr,
            config.beta1,
            config.beta2,
            config.eps,
            weight_decay=config.weight_decay,
        )
    return Sgd(
        model.params, config.lr, config.momentum, weight_decay=config.weight_decay
    )


@dataclass
class TrainResult:
    config: TrainerConfig
    series: GwaSeries
    train_acc: list[float]
    val_acc: list[float]
    test_acc: list[float]
    prediction_changes: list[Optional[float]]
    predictions_by_epoch: list[np.ndarray]
    flip_mask: np.ndarray
    scores: np.ndarray  # SCORE_DTYPE rows for every (sample, epoch)
    decisions: dict
    model: object = None  # trained model, for post-hoc analysis
    split: Optional[datasets.Split] = None
    trace_path: Optional[str] = None

    def report(self) -> dict:
        """JSON-ready run report."""
        def clean(v):
            return None if v is None or (isinstance(v, float) and math.isnan(v)) else v

        epochs = []
        for i, dist in enumerate(self.series.epochs):
            row = dist.summarize()
            row["train_acc"] = clean(self.train_acc[i])
            row["val_acc"] = clean(self.val_acc[i])
            row["test_acc"] = clean(self.test_acc[i])
            row["prediction_change"] = clean(self.prediction_changes[i])
            epochs.append(row)
        return {
            "config": self.config.to_dict(),
            "epochs": epochs,
            "decisions": self.decisions,
            "flipped_sample_ids": np.flatnonzero(self.flip_mask).tolist(),
            "mislabel_detection": self._mislabel_metrics(),
        }

    def _mislabel_metrics(self) -> Optional[dict]:
        """precision@(#flipped) of the ascending ranking at the chosen epoch."""
        flipped = np.flatnonzero(self.flip_mask).astype(np.uint64)
        if len(flipped) == 0 or len(self.scores) == 0:
            return None
        from .analyze import rank_samples

        selected = self.decisions["gwa_scratch"]["selected_epoch"]
        ranking = rank_samples(self.scores, selected)
        return {
            "selected_epoch": selected,
            "num_flipped": int(len(flipped)),
            "chance_rate": float(len(flipped) / len(self.flip_mask)),
            "precision_at_num_flipped": ranking.precision_at_k(flipped),
        }


def _oracle_decision(values: list[float], criterion: controller.Criterion) -> dict:
    best = int(np.argmax(values))
    return controller.StopDecision(
        selected_epoch=best,
        criterion=criterion,
        warmup_epochs=0,
        rationale={"best_value": float(values[best])},
    ).to_json_obj()


def train(config: TrainerConfig, out_dir: Optional[Path] = None) -> TrainResult:
    """Train per config, streaming alignment telemetry; deterministic in seed."""
    seed_seq = np.random.SeedSequence(config.seed)
    data_rng, init_rng, shuffle_rng = (
        np.random.default_rng(s) for s in seed_seq.spawn(3)
    )
    split = load_split(config, data_rng)
    n = len(split.train_y)
    classes = split.num_classes
    model = build_model(config, split.dim, classes, init_rng)
    optimizer = build_optimizer(config, model)

    proj_spec = None
    if config.projection.enabled:
        proj_spec = ProjectionSpec(
            source_dim=model.head_weights.shape[1],
            target_dim=config.projection.dim,
            seed=config.projection.seed,
        )

    steps_per_epoch = math.ceil(n / config.batch_size)
    header = TraceHeader(
        latent_dim=model.head_weights.shape[1],
        num_classes=classes,
        dataset_size=n,
        batch_size=config.batch_size,
        steps_per_epoch=steps_per_epoch,
        bias_present=True,
        probs_are_logits=False,
    )

    trace_sink = None
    trace_path = None
    writer = None
    if config.emit_trace:
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            trace_path = out_dir / "trace.bin"
            trace_sink = open(trace_path, "wb")
        else:
            trace_sink = io.BytesIO()
        writer = TraceWriter(trace_sink, header)

    score_sink = io.BytesIO()
    score_writer = ScoreWriter(score_sink)

    sample_ids = np.arange(n, dtype=np.uint64)
    series = GwaSeries(
        total_steps=config.epochs * steps_per_epoch,
        steps_per_epoch=steps_per_epoch,
        batch_size=config.batch_size,
        dataset_size=n,
    )
    train_acc: list[float] = []
    val_acc: list[float] = []
    test_acc: list[float] = []
    prediction_changes: list[Optional[float]] = []
    predictions_by_epoch: list[np.ndarray] = []

    try:
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(n)
            dist = EpochDistribution(
                epoch=epoch, beta=config.beta, retain_scores=config.retain_scores
            )
            epoch_preds = np.empty(n, dtype=np.int64)
            for step in range(steps_per_epoch):
                idx = order[step * config.batch_size : (step + 1) * config.batch_size]
                x = split.train_x[idx]
                y = split.train_y[idx]
                ids = sample_ids[idx]

                latents = model.latents(x)
                probs64 = model.head_forward(latents)
                probs = probs64.astype(np.float32)
                w_f32 = model.head_weights.astype(np.float32)
                b_f32 = model.head_bias.astype(np.float32)

                with np.errstate(divide="ignore"):
                    loss = -np.log(probs64[np.arange(len(y)), y]).mean()
                if not np.isfinite(loss):
                    raise NonFiniteLoss("training diverged", epoch=epoch)

                if writer is not None:
                    writer.write_step(
                        epoch, step, w_f32, b_f32, ids, latents, probs, y.astype(np.uint32)
                    )

                snapshot = HeadSnapshot(weights=w_f32, bias=b_f32, epoch=epoch, step=step)
                align_latents = latents
                if proj_spec is not None:
                    align_latents = project_latents(proj_spec, latents)
                    snapshot = project_head(proj_spec, snapshot)
                    snapshot.epoch, snapshot.step = epoch, step
                gamma, grad_norm = compute_alignment_batch(
                    align_latents,
                    probs,
                    y.astype(np.uint32),
                    snapshot,
                    include_bias=config.include_bias,
                )
                dist.add_batch(gamma, sample_ids=ids)
                score_writer.write_batch(ids, epoch, step, gamma, grad_norm)
                epoch_preds[idx] = probs.argmax(axis=1)

                grads = model.backward(x, latents, probs64, y)
                optimizer.step(grads)

            if config.retain_scores:
                dist.check_consistency()
            dist.summarize()
            series.append(dist)

            if predictions_by_epoch:
                prev = predictions_by_epoch[-1]
                prediction_changes.append(float(np.mean(epoch_preds != prev)))
            else:
                prediction_changes.append(None)
            predictions_by_epoch.append(epoch_preds)

            train_acc.append(accuracy(model, split.train_x, split.train_y))
            val_acc.append(accuracy(model, split.val_x, split.val_y))
            test_acc.append(accuracy(model, split.test_x, split.test_y))
        if writer is not None:
            writer.flush()
    finally:
        if trace_path is not None and trace_sink is not None:
            trace_sink.close()

    decisions = {}
    scratch = controller.select_scratch(series, config.warmup_fraction)
    decisions["gwa_scratch"] = scratch.to_json_obj()
    if len(series) >= 6:
        decisions["gwa_finetune"] = controller.select_finetune(series).to_json_obj()
    changes = controller.PredictionChangeSeries(prediction_changes)
    decisions["labelwave"] = controller.decide_from_changes(
        changes, config.warmup_fraction
    ).to_json_obj()
    if len(split.val_y):
        decisions["val_accuracy"] = _oracle_decision(val_acc, controller.Criterion.VAL_ACCURACY)
    decisions["oracle_test"] = {
        "selected_epoch": int(np.argmax(test_acc)),
        "criterion": "oracle_test",
        "warmup_epochs": 0,
        "rationale": {"best_value": float(max(test_acc))},
    }

    scores = np.frombuffer(score_sink.getvalue(), dtype=SCORE_DTYPE)
    result = TrainResult(
        config=config,
        series=series,
        train_acc=train_acc,
        val_acc=val_acc,
        test_acc=test_acc,
        prediction_changes=prediction_changes,
        predictions_by_epoch=predictions_by_epoch,
        flip_mask=split.flipped,
        scores=scores,
        decisions=decisions,
        model=model,
        split=split,
        trace_path=str(trace_path) if trace_path else None,
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "scores.bin").write_bytes(score_sink.getvalue())
        with open(out_dir / "epochs.jsonl", "w") as fh:
            series.write_jsonl(fh)
        report = result.report()
        report["paths"] = {
            "trace": "trace.bin" if trace_path else None,
            "scores": "scores.bin",
            "epochs": "epochs.jsonl",
        }
        with open(out_dir / "report.json", "w") as fh:
            json.dump(report, fh, indent=2, allow_nan=False)
            fh.write("\n")
    return result
