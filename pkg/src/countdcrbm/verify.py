"""Property suite: enumeration oracles and statistical checks on tiny models.

Each check returns a CheckResult; ``run_all`` drives them for the
``verify`` command.
"""

from __future__ import annotations

import contextlib
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from unittest import mock

import numpy as np

from .data import SampleSet, aggregate_labels
from .evaluation import ConfusionCounts, score, score_predictions
from .inference import (
    classify,
    enumerate_hidden_conditional,
    enumerate_joint,
    enumerate_label_logits,
    enumerate_visible_conditional,
)
from .model import (
    ModelConfig,
    ModelParams,
    UnitKind,
    hidden_prob,
    load_params,
    save_params,
    visible_conditional,
)
from .training import TrainConfig, cd_gradients, train


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    observed: str
    expected: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: observed {self.observed}; expected {self.expected} ({self.seconds:.1f}s)"


def random_params(config: ModelConfig, rng: np.random.Generator, scale: float = 1.0) -> ModelParams:
    tensors = {name: rng.normal(0.0, scale, size=shape) for name, shape in config.shapes().items()}
    return ModelParams(config, **tensors)


def random_frame(kind: UnitKind, size, rng: np.random.Generator, max_count: int = 10) -> np.ndarray:
    if kind is UnitKind.COUNT:
        return rng.integers(0, max_count + 1, size=size).astype(np.float64)
    if kind is UnitKind.BINARY:
        return rng.integers(0, 2, size=size).astype(np.float64)
    return rng.normal(size=size)


def check_classification_oracle(seed: int = 0, n_models: int = 120, tol: float = 1e-6) -> CheckResult:
    """classify score differences vs brute-force label logits."""
    rng = np.random.default_rng(seed)
    kinds = list(UnitKind)
    worst, mismatches = 0.0, 0
    for i in range(n_models):
        kind = kinds[i % len(kinds)]
        config = ModelConfig(
            visible_dim=int(rng.integers(1, 5)),
            hidden_dim=int(rng.integers(1, 11)),
            label_dim=int(rng.integers(2, 4)),
            history_len=int(rng.integers(1, 3)),
            unit_kind=kind,
        )
        params = random_params(config, rng, scale=0.5)
        v = random_frame(kind, config.visible_dim, rng)
        hist = random_frame(kind, config.history_dim, rng)
        result = classify(params, v, hist)
        logits = enumerate_label_logits(params, v, hist)
        diff = (result.scores - result.scores[0]) - (logits - logits[0])
        worst = max(worst, float(np.max(np.abs(diff))))
        mismatches += int(result.predicted != int(np.argmax(logits)))
    return CheckResult(
        "classify matches enumeration",
        worst <= tol and mismatches == 0,
        f"max |score diff error| = {worst:.2e}, argmax mismatches = {mismatches}/{n_models}",
        f"<= {tol:g} and 0 mismatches",
    )


def check_conditional_oracle(seed: int = 0, n_models: int = 120, tol: float = 1e-9) -> CheckResult:
    """hidden_prob / visible_conditional vs energy-ratio conditionals (binary)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_models):
        config = ModelConfig(
            visible_dim=int(rng.integers(1, 4)),
            hidden_dim=int(rng.integers(1, 4)),
            label_dim=int(rng.integers(2, 4)),
            history_len=int(rng.integers(1, 3)),
            unit_kind=UnitKind.BINARY,
        )
        params = random_params(config, rng)
        v = random_frame(UnitKind.BINARY, config.visible_dim, rng)
        h = random_frame(UnitKind.BINARY, config.hidden_dim, rng)
        hist = random_frame(UnitKind.BINARY, config.history_dim, rng)
        y = int(rng.integers(config.label_dim))
        ph = hidden_prob(params, v, hist, label=y)
        for j in range(config.hidden_dim):
            worst = max(worst, abs(ph[j] - enumerate_hidden_conditional(params, v, y, h, hist, j)))
        # without a label the hidden conditional is that of the generative model
        blind = params.replace(U=np.zeros_like(params.U), s=np.zeros_like(params.s))
        ph_blind = hidden_prob(params, v, hist)
        for j in range(config.hidden_dim):
            worst = max(worst, abs(ph_blind[j] - enumerate_hidden_conditional(blind, v, y, h, hist, j)))
        pv = visible_conditional(params, h, hist)
        for i in range(config.visible_dim):
            worst = max(worst, abs(pv[i] - enumerate_visible_conditional(params, v, y, h, hist, i)))
    return CheckResult(
        "conditionals match enumeration",
        worst <= tol,
        f"max abs deviation = {worst:.2e}",
        f"<= {tol:g}",
    )


def check_count_conservation(seed: int = 0, n_draws: int = 1000, tol: float = 1e-10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        config = ModelConfig(
            visible_dim=int(rng.integers(1, 9)),
            hidden_dim=int(rng.integers(1, 9)),
            history_len=int(rng.integers(1, 4)),
            unit_kind=UnitKind.COUNT,
        )
        params = random_params(config, rng, scale=float(rng.uniform(0.1, 3.0)))
        h = random_frame(UnitKind.BINARY, config.hidden_dim, rng)
        hist = random_frame(UnitKind.COUNT, config.history_dim, rng, max_count=5)
        m = int(rng.integers(0, 101))
        rates = visible_conditional(params, h, hist, m=m)
        worst = max(worst, abs(rates.sum() - m) / max(m, 1))
    return CheckResult(
        "count rates sum to m",
        worst <= tol,
        f"max relative error = {worst:.2e}",
        f"<= {tol:g}",
    )


def sample_from_model(params: ModelParams, histories: np.ndarray, rng: np.random.Generator) -> SampleSet:
    """Exact draws of (v, y) given each history, by enumerating the joint."""
    frames = np.empty((len(histories), params.config.visible_dim))
    labels = np.empty(len(histories), dtype=np.int64)
    cache = {}
    for n, hist in enumerate(histories):
        key = hist.tobytes()
        if key not in cache:
            cache[key] = enumerate_joint(params, hist)
        grid_v, _, grid_y, probs = cache[key]
        k = rng.choice(len(probs), p=probs)
        frames[n], labels[n] = grid_v[k], grid_y[k]
    return SampleSet(histories, frames, labels, np.arange(len(histories)))


def equilibrium_z_scores(seed: int = 0, n_samples: int = 10_000) -> dict[str, np.ndarray]:
    """|batch mean| / (std / sqrt(n)) of every CD delta entry on model samples."""
    rng = np.random.default_rng(seed)
    config = ModelConfig(visible_dim=2, hidden_dim=2, label_dim=2, history_len=1, unit_kind=UnitKind.BINARY)
    params = random_params(config, rng, scale=0.7)
    histories = random_frame(UnitKind.BINARY, (n_samples, config.history_dim), rng)
    data = sample_from_model(params, histories, rng)
    deltas = cd_gradients(params, data, rng, per_sample=True)
    z = {}
    for name, per_sample in deltas.tensors().items():
        mean = per_sample.mean(axis=0)
        se = per_sample.std(axis=0, ddof=1) / math.sqrt(n_samples)
        z[name] = np.where(se > 0, np.abs(mean) / np.where(se > 0, se, 1.0), np.where(mean == 0, 0.0, np.inf))
    return z


def check_cd_equilibrium(seed: int = 0, n_samples: int = 10_000) -> CheckResult:
    z = equilibrium_z_scores(seed, n_samples)
    worst_name = max(z, key=lambda k: z[k].max())
    worst = float(z[worst_name].max())
    return CheckResult(
        "CD deltas vanish on model samples",
        worst <= 3.0,
        f"max |mean|/se = {worst:.2f} (in {worst_name})",
        "<= 3 standard errors",
    )


def check_metrics() -> CheckResult:
    s = score(ConfusionCounts(tp=40, fp=10, tn=30, fn=20))
    expected = {"precision": 0.8, "recall": 2 / 3, "f1": 8 / 11, "mcc": 1000 / math.sqrt(6_000_000), "accuracy": 0.7}
    worst = max(abs(getattr(s, k) - v) for k, v in expected.items())
    truth = np.array([1] * 10 + [0] * 90)
    never = score_predictions(np.zeros_like(truth), truth)
    ok = worst <= 1e-4 and never.f1 == 0.0 and never.mcc == 0.0
    return CheckResult(
        "metric formulas",
        ok,
        f"max error = {worst:.1e}; never-miss f1={never.f1}, mcc={never.mcc}",
        "<= 1e-4; f1 = mcc = 0",
    )


def brute_force_labels(stream, window: int) -> np.ndarray:
    T = len(stream)
    return np.array([int(any(stream[t + k] for k in range(window + 1))) for t in range(T - window)])


def check_label_aggregation(seed: int = 0, n_streams: int = 60) -> CheckResult:
    rng = np.random.default_rng(seed)
    failures = 0
    for i in range(n_streams):
        window = (1, 4, 128)[i % 3]
        T = int(rng.integers(window + 1, 513))
        stream = (rng.random(T) < rng.uniform(0.0, 0.05)).astype(np.int8)
        if not np.array_equal(aggregate_labels(stream, window), brute_force_labels(stream, window)):
            failures += 1
    return CheckResult("label aggregation", failures == 0, f"{failures} mismatching streams", "0")


def check_determinism(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    config = ModelConfig(visible_dim=3, hidden_dim=4, label_dim=2, history_len=2, unit_kind=UnitKind.COUNT)
    params = random_params(config, rng, scale=0.1)
    n = 120
    data = SampleSet(
        random_frame(UnitKind.COUNT, (n, config.history_dim), rng, 4),
        random_frame(UnitKind.COUNT, (n, config.visible_dim), rng, 4),
        rng.integers(0, 2, n),
        np.arange(n),
    )
    cfg = TrainConfig(learning_rate=1e-3, epochs=3, batch_size=32, seed=seed, shuffle=True)
    p1, r1 = train(params, data[:80], data[80:], cfg)
    p2, r2 = train(params, data[:80], data[80:], cfg)
    same_report = r1.to_csv() == r2.to_csv() and r1.initial == r2.initial and r1.rows == r2.rows
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.json"
        save_params(p1, path)
        loaded = load_params(path)
    same_classify = all(
        np.array_equal(classify(p1, s.frame, s.history).scores, classify(loaded, s.frame, s.history).scores)
        for s in data
    )
    return CheckResult(
        "determinism and round-trip",
        same_report and same_classify,
        f"reports identical={same_report}, reloaded classify bit-exact={same_classify}",
        "both True",
    )


def _timed(fn, *args, **kwargs) -> CheckResult:
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    return CheckResult(result.name, result.passed, result.observed, result.expected, time.perf_counter() - start)


def _broken_softplus(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


FAULTS = {"softplus": ("countdcrbm.inference.softplus", _broken_softplus)}


def run_all(seed: int = 0, inject: str | None = None) -> list[CheckResult]:
    """Run every check; ``inject`` swaps in a known-bad component to prove the
    suite can fail."""
    patch = contextlib.nullcontext()
    if inject is not None:
        if inject not in FAULTS:
            raise ValueError(f"unknown fault {inject!r}; choose from {sorted(FAULTS)}")
        target, replacement = FAULTS[inject]
        patch = mock.patch(target, replacement)
    with patch:
        return [
            _timed(check_classification_oracle, seed),
            _timed(check_conditional_oracle, seed),
            _timed(check_count_conservation, seed),
            _timed(check_cd_equilibrium, seed),
            _timed(check_metrics),
            _timed(check_label_aggregation, seed),
            _timed(check_determinism, seed),
        ]
