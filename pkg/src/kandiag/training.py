"""Adam training against the binary cross-entropy objective, plus the
rank-based AUC and thresholded accuracy used for evaluation."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import Dataset, batches
from .errors import ConfigError, ContractError, MetricError, ShapeError, TrainingError
from .models import DiagnosisModel, DinaModel, project_monotone

PRED_CLAMP = 1e-7


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 0.002
    epochs: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gumbel_tau_start: float = 1.0
    gumbel_tau_end: float = 0.3
    monotone_projection: bool = True

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be at least 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.gumbel_tau_start <= 0 or self.gumbel_tau_end <= 0:
            raise ConfigError("gumbel temperatures must be positive")


@dataclass
class Metrics:
    auc: float
    acc: float
    loss: float
    n_evaluated: int


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_auc: float
    test_acc: float
    wall_time: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def final(self) -> EpochRecord:
        return self.records[-1]

    def to_lines(self) -> list[str]:
        return [
            json.dumps(
                {
                    "epoch": r.epoch,
                    "train_loss": r.train_loss,
                    "test_auc": r.test_auc,
                    "test_acc": r.test_acc,
                    "wall_time": r.wall_time,
                },
                sort_keys=True,
            )
            for r in self.records
        ]


def bce_loss(predictions: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross entropy; predictions are clamped away from {0, 1}."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if predictions.values.shape != labels.shape:
        raise ShapeError(
            f"bce_loss: predictions {predictions.values.shape} vs labels {labels.shape}"
        )
    p = ag.clamp(predictions, PRED_CLAMP, 1.0 - PRED_CLAMP)
    r = ag.constant(labels)
    one = ag.constant(np.ones_like(labels))
    ll = ag.add(
        ag.mul(r, ag.log(p)),
        ag.mul(ag.sub(one, r), ag.log(ag.sub(one, p))),
    )
    return ag.scale(ag.mean_all(ll), -1.0)


class Adam:
    """Bias-corrected Adam over an ordered parameter list."""

    def __init__(self, params: list[Tensor], lr: float = 0.002,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in params]
        self.v = [np.zeros_like(p.values) for p in params]

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if g.shape != self.m[i].shape:
                raise ContractError(
                    f"adam state shape {self.m[i].shape} does not match gradient {g.shape}"
                )
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1.0 - self.beta2 ** self.t)
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        ag.zero_grads(self.params)


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank (Mann-Whitney) AUC with average ranks for tied scores."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both a positive and a negative example")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores), dtype=np.float64)
    # average the 1-based ranks across each run of equal scores
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(scores)]))
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + 1 + b)
    rank_sum_pos = ranks[labels == 1].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def acc(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    """Fraction of thresholded predictions matching the labels."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if len(scores) == 0:
        raise ContractError("accuracy of an empty prediction set is undefined")
    return float(((scores >= threshold) == (labels == 1)).mean())


def predict_batch(model: DiagnosisModel, students: np.ndarray,
                  exercises: np.ndarray) -> np.ndarray:
    """Evaluation-mode predictions as a flat array."""
    with ag.no_grad():
        out = model.forward(students, exercises, train_mode=False)
    return out.values.ravel()


def evaluate(model: DiagnosisModel, dataset: Dataset,
             which: str = "test") -> Metrics:
    students, exercises, labels = dataset.arrays(which)
    scores = predict_batch(model, students, exercises)
    clipped = np.clip(scores, PRED_CLAMP, 1.0 - PRED_CLAMP)
    loss = float(-np.mean(labels * np.log(clipped) + (1 - labels) * np.log(1 - clipped)))
    return Metrics(
        auc=auc(scores, labels),
        acc=acc(scores, labels),
        loss=loss,
        n_evaluated=len(labels),
    )


def train(model: DiagnosisModel, dataset: Dataset,
          config: TrainConfig | None = None) -> TrainHistory:
    """Run the full optimization loop and per-epoch test evaluation.

    Deterministic for a fixed config seed: batch order, any sampling noise,
    and the temperature schedule are all derived from it.
    """
    config = config if config is not None else TrainConfig()
    config.validate()
    if not dataset.is_split:
        raise ContractError("train needs a split dataset")
    params = model.parameters()
    optimizer = Adam(params, lr=config.learning_rate, beta1=config.beta1,
                     beta2=config.beta2, eps=config.eps)
    rng = np.random.default_rng(config.seed)
    students, exercises, labels = dataset.arrays("train")
    history = TrainHistory()
    for epoch in range(config.epochs):
        start = time.perf_counter()
        if isinstance(model, DinaModel) and config.epochs > 1:
            frac = epoch / (config.epochs - 1)
            model.set_temperature(
                config.gumbel_tau_start
                + (config.gumbel_tau_end - config.gumbel_tau_start) * frac
            )
        losses = []
        for batch_no, idx in enumerate(batches(len(labels), config.batch_size, rng)):
            out = model.forward(students[idx], exercises[idx],
                                train_mode=True, rng=rng)
            loss = bce_loss(out, labels[idx])
            value = float(loss.values[0, 0])
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}"
                )
            losses.append(value)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if config.monotone_projection:
                project_monotone(model)
        metrics = evaluate(model, dataset, "test")
        history.records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=float(np.mean(losses)),
                test_auc=metrics.auc,
                test_acc=metrics.acc,
                wall_time=time.perf_counter() - start,
            )
        )
    model.trained = True
    return history
