"""Contrastive Divergence training with per-epoch diagnostics."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .data import SampleSet
from .evaluation import ScoreSet, score_predictions
from .inference import classify_batch, gibbs_step
from .model import TENSOR_NAMES, ModelParams, UnitKind, frame_total, hidden_prob, one_hot, visible_conditional

log = logging.getLogger(__name__)

BCE_CLAMP = 1e-12
REPORT_COLUMNS = ("epoch", "recon_error", "bce", "accuracy", "precision", "recall", "f1", "mcc")


class DivergenceError(RuntimeError):
    """A parameter update produced NaN or infinite values."""

    def __init__(self, message: str, tensor: str | None = None, epoch: int | None = None):
        super().__init__(message)
        self.tensor = tensor
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    epochs: int = 1
    cd_steps: int = 1
    batch_size: int = 100
    seed: int = 0
    shuffle: bool = False
    eval_every: int = 1
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name in ("epochs", "cd_steps", "batch_size", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass(frozen=True)
class ParamDeltas:
    """Same tensors as ModelParams; batch-averaged CD statistics (or per-sample
    with a leading axis when requested)."""

    W: np.ndarray
    a: np.ndarray
    b: np.ndarray
    A: np.ndarray
    B: np.ndarray
    U: np.ndarray
    s: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "ParamDeltas":
        return cls(**{name: np.zeros_like(arr) for name, arr in params.tensors().items()})


def _phase_stats(v, h, y, history, v_mean=None, per_sample=False) -> dict[str, np.ndarray]:
    """Sufficient statistics of one CD phase.

    ``v`` pairs with ``h`` in the weight statistic; ``v_mean`` (defaults to
    ``v``) feeds the visible-bias statistics.
    """
    v_mean = v if v_mean is None else v_mean
    if per_sample:
        outer = lambda x, z: x[:, :, None] * z[:, None, :]  # noqa: E731
        return {
            "W": outer(v, h), "a": v_mean, "b": h,
            "A": outer(history, v_mean), "B": outer(history, h),
            "U": outer(h, y), "s": y,
        }
    n = len(v)
    return {
        "W": v.T @ h / n, "a": v_mean.mean(axis=0), "b": h.mean(axis=0),
        "A": history.T @ v_mean / n, "B": history.T @ h / n,
        "U": h.T @ y / n, "s": y.mean(axis=0),
    }


def cd_gradients(params: ModelParams, batch, rng: np.random.Generator, cd_steps: int = 1,
                 per_sample: bool = False) -> ParamDeltas:
    """CD-k statistics <.>_data - <.>_recon, averaged over the batch.

    Positive phase uses hidden probabilities given the observed frame and
    label. The negative phase runs ``cd_steps`` Gibbs steps with sampled
    hidden states; its statistics use the hidden probabilities of the final
    reconstruction, the mean of the final visible conditional and the final
    label distribution. The weight and label-coupling statistics pair the
    hidden probabilities with the sampled reconstruction they were computed
    from, which keeps the estimator unbiased when the data are model samples.
    """
    batch = SampleSet.from_samples(batch)
    if len(batch) == 0:
        raise ValueError("empty batch")
    if batch.frames.shape[1] != params.config.visible_dim or batch.history.shape[1] != params.config.history_dim:
        raise ValueError(
            f"batch dims (V={batch.frames.shape[1]}, N*V={batch.history.shape[1]}) do not match model "
            f"(V={params.config.visible_dim}, N*V={params.config.history_dim})"
        )
    if cd_steps < 1:
        raise ValueError("cd_steps must be >= 1")
    L = params.config.label_dim
    v0, hist = batch.frames, batch.history
    y0 = one_hot(batch.labels, L)
    h0 = hidden_prob(params, v0, hist, label=batch.labels)
    positive = _phase_stats(v0, h0, y0, hist, per_sample=per_sample)

    m = frame_total(v0) if params.kind is UnitKind.COUNT else None
    v, y = v0, batch.labels
    for _ in range(cd_steps):
        step = gibbs_step(params, v, y, hist, rng, m=m)
        v, y = step.v_recon, step.y_recon
    h_neg = hidden_prob(params, v, hist, label=y)
    negative = _phase_stats(v, h_neg, one_hot(y, L), hist, v_mean=step.v_params, per_sample=per_sample)
    negative["s"] = step.y_prob if per_sample else step.y_prob.mean(axis=0)
    return ParamDeltas(**{name: positive[name] - negative[name] for name in TENSOR_NAMES})


def apply_update(params: ModelParams, deltas: ParamDeltas, learning_rate: float) -> ModelParams:
    """Plain SGD step ``params + learning_rate * deltas``."""
    updated = {}
    for name, value in params.tensors().items():
        delta = getattr(deltas, name)
        if delta.shape != value.shape:
            raise ValueError(f"delta {name} has shape {delta.shape}, expected {value.shape}")
        new = value + learning_rate * delta
        if not np.all(np.isfinite(new)):
            raise DivergenceError(f"non-finite values in {name} after update", tensor=name)
        updated[name] = new
    return params.replace(**updated)


def reconstruction_error(params: ModelParams, dataset) -> float:
    """Mean over samples of ||v - E[v | h_mean]||^2 / V (deterministic)."""
    dataset = SampleSet.from_samples(dataset)
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    v, hist = dataset.frames, dataset.history
    h = hidden_prob(params, v, hist, label=dataset.labels)
    v_mean = visible_conditional(params, h, hist, m=frame_total(v))
    return float(np.mean(np.sum((v - v_mean) ** 2, axis=1)) / params.config.visible_dim)


def binary_cross_entropy(labels, p_positive) -> float:
    p = np.clip(np.asarray(p_positive, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def classification_bce(params: ModelParams, dataset) -> float:
    if params.config.label_dim != 2:
        raise ValueError(f"binary cross-entropy needs 2 labels, model has {params.config.label_dim}")
    dataset = SampleSet.from_samples(dataset)
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    _, posterior, _ = classify_batch(params, dataset.frames, dataset.history)
    return binary_cross_entropy(dataset.labels, posterior[:, 1])


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    recon_error: float
    bce: float
    scores: ScoreSet

    def row(self) -> list:
        s = self.scores
        return [self.epoch, self.recon_error, self.bce, s.accuracy, s.precision, s.recall, s.f1, s.mcc]


@dataclass
class TrainReport:
    """Diagnostics before training (``initial``) and at each evaluated epoch."""

    initial: EpochRecord
    rows: list[EpochRecord] = field(default_factory=list)
    checkpoint: str | None = None

    @property
    def final(self) -> EpochRecord:
        return self.rows[-1] if self.rows else self.initial

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for rec in self.rows:
            writer.writerow([rec.epoch] + [repr(float(x)) for x in rec.row()[1:]])
        return buf.getvalue()


def evaluate_epoch(params: ModelParams, dataset: SampleSet, epoch: int) -> EpochRecord:
    _, _, predicted = classify_batch(params, dataset.frames, dataset.history)
    record = EpochRecord(
        epoch=epoch,
        recon_error=reconstruction_error(params, dataset),
        bce=classification_bce(params, dataset),
        scores=score_predictions(predicted, dataset.labels),
    )
    if not (np.isfinite(record.recon_error) and np.isfinite(record.bce)):
        raise DivergenceError(f"non-finite diagnostics at epoch {epoch}", epoch=epoch)
    return record


def train(params: ModelParams, train_set, eval_set, config: TrainConfig, progress=None):
    """Run CD-k over chronological (or shuffled) mini-batches.

    Returns ``(params, TrainReport)``; the result is a pure function of the
    inputs and ``config.seed``.
    """
    train_set = SampleSet.from_samples(train_set)
    eval_set = SampleSet.from_samples(eval_set)
    for name, ds in (("train", train_set), ("eval", eval_set)):
        if len(ds) == 0:
            raise ValueError(f"{name} set is empty")
        if ds.frames.shape[1] != params.config.visible_dim or ds.history.shape[1] != params.config.history_dim:
            raise ValueError(f"{name} set dimensions do not match the model")

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    chain_rng = np.random.default_rng(seeds[0])
    order_rng = np.random.default_rng(seeds[1])
    velocity = ParamDeltas.zeros_like(params)
    use_velocity = config.momentum > 0 or config.weight_decay > 0

    report = TrainReport(initial=evaluate_epoch(params, eval_set, 0))
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(n) if config.shuffle else None
        for start in range(0, n, config.batch_size):
            if order is None:
                batch = train_set[start:start + config.batch_size]
            else:
                batch = train_set[order[start:start + config.batch_size]]
            deltas = cd_gradients(params, batch, chain_rng, config.cd_steps)
            if use_velocity:
                decayed = {}
                for name, d in deltas.tensors().items():
                    if config.weight_decay and name in ("W", "A", "B", "U"):
                        d = d - config.weight_decay * getattr(params, name)
                    decayed[name] = config.momentum * getattr(velocity, name) + d
                velocity = deltas = ParamDeltas(**decayed)
            try:
                params = apply_update(params, deltas, config.learning_rate)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}", tensor=exc.tensor, epoch=epoch) from None
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            record = evaluate_epoch(params, eval_set, epoch)
            report.rows.append(record)
            log.info("epoch %d recon=%.4f bce=%.4f mcc=%.3f", epoch, record.recon_error, record.bce,
                     record.scores.mcc)
            if progress is not None:
                progress(record)
    return params, report
