"""Instruction-mix traces, supervised windows and the synthetic trace generator.

Trace CSV layout (UTF-8, LF)::

    cycle,op_<cat1>,...,op_<catV>,miss_<cache1>[,miss_<cacheK>]

One row per cycle, ``cycle`` counting up from 0 by 1, nonnegative integer
op counts and 0/1 miss flags.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

DEFAULT_CATEGORIES = ("int_alu", "fp_alu", "load", "store", "branch", "sync", "misc")
DEFAULT_WINDOW = 128
SYNTHETIC_STREAM = "synthetic"


class TraceFormatError(ValueError):
    """Malformed trace or generator-config file."""


@dataclass(eq=False)
class Trace:
    categories: list[str]
    counts: np.ndarray
    miss_streams: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[1] != len(self.categories):
            raise ValueError(f"counts shape {self.counts.shape} does not match {len(self.categories)} categories")
        if np.any(self.counts < 0):
            raise ValueError("instruction counts must be nonnegative")
        streams = {}
        for name, stream in self.miss_streams.items():
            stream = np.asarray(stream, dtype=np.int8)
            if stream.shape != (self.length,):
                raise ValueError(f"miss stream {name!r} has length {stream.shape}, expected {self.length}")
            if not np.all((stream == 0) | (stream == 1)):
                raise ValueError(f"miss stream {name!r} must be binary")
            streams[name] = stream
        self.miss_streams = streams

    @property
    def length(self) -> int:
        return self.counts.shape[0]

    @property
    def visible_dim(self) -> int:
        return self.counts.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            list(self.categories) == list(other.categories)
            and np.array_equal(self.counts, other.counts)
            and self.miss_streams.keys() == other.miss_streams.keys()
            and all(np.array_equal(self.miss_streams[k], other.miss_streams[k]) for k in self.miss_streams)
        )


def format_trace(trace: Trace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = list(trace.miss_streams)
    writer.writerow(["cycle"] + [f"op_{c}" for c in trace.categories] + [f"miss_{n}" for n in names])
    streams = [trace.miss_streams[n] for n in names]
    for t in range(trace.length):
        writer.writerow([t, *trace.counts[t].tolist(), *(int(s[t]) for s in streams)])
    return buf.getvalue()


def save_trace(trace: Trace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_trace(trace))


def _parse_int(token: str, lineno: int, column: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise TraceFormatError(f"line {lineno}: column {column!r} is not an integer: {token!r}") from None


def load_trace(path) -> Trace:
    """Parse a trace CSV; every validation error names the offending line."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TraceFormatError("line 1: empty file, expected header")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "cycle":
        raise TraceFormatError(f"line 1: header must start with 'cycle', got {header[:1]}")
    categories, misses = [], []
    for name in header[1:]:
        if name.startswith("op_") and not misses:
            categories.append(name[3:])
        elif name.startswith("miss_"):
            misses.append(name[5:])
        else:
            raise TraceFormatError(f"line 1: unexpected column {name!r} (op_ columns must precede miss_ columns)")
    if not categories:
        raise TraceFormatError("line 1: no op_<category> columns")
    if not misses:
        raise TraceFormatError("line 1: no miss_<cache> columns")

    width = len(header)
    V = len(categories)
    counts = np.zeros((len(rows) - 1, V), dtype=np.int64)
    streams = np.zeros((len(misses), len(rows) - 1), dtype=np.int8)
    for t, row in enumerate(rows[1:]):
        lineno = t + 2
        if len(row) != width:
            raise TraceFormatError(f"line {lineno}: expected {width} fields, got {len(row)}")
        cycle = _parse_int(row[0], lineno, "cycle")
        if cycle != t:
            raise TraceFormatError(f"line {lineno}: cycle must be {t}, got {cycle}")
        for i in range(V):
            value = _parse_int(row[1 + i], lineno, header[1 + i])
            if value < 0:
                raise TraceFormatError(f"line {lineno}: negative count {value} in {header[1 + i]!r}")
            counts[t, i] = value
        for k in range(len(misses)):
            value = _parse_int(row[1 + V + k], lineno, header[1 + V + k])
            if value not in (0, 1):
                raise TraceFormatError(f"line {lineno}: miss flag must be 0 or 1, got {value}")
            streams[k, t] = value
    return Trace(categories, counts, dict(zip(misses, streams)))


def aggregate_labels(miss_stream, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """y[t] = 1 iff a miss occurs anywhere in cycles [t, t + window] (inclusive).

    Defined for t in [0, T - window - 1], so the output has length T - window.
    """
    stream = np.asarray(miss_stream)
    T = stream.shape[0]
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if T <= window:
        raise ValueError(f"stream of length {T} is too short for window {window}")
    csum = np.concatenate(([0], np.cumsum(stream != 0)))
    t = np.arange(T - window)
    return (csum[t + window + 1] - csum[t] > 0).astype(np.int8)


def bin_trace(trace: Trace, bin_size: int) -> Trace:
    """Sum counts (and OR misses) over consecutive blocks of ``bin_size`` cycles.

    A trailing partial block is kept, so total instruction counts are preserved.
    """
    if bin_size < 1:
        raise ValueError(f"bin size must be >= 1, got {bin_size}")
    if bin_size == 1:
        return trace
    starts = np.arange(0, trace.length, bin_size)
    counts = np.add.reduceat(trace.counts, starts, axis=0)
    streams = {k: np.maximum.reduceat(s, starts) for k, s in trace.miss_streams.items()}
    return Trace(list(trace.categories), counts, streams)


@dataclass(frozen=True)
class Sample:
    history: np.ndarray
    frame: np.ndarray
    label: int
    origin_t: int

    def one_hot(self, label_dim: int = 2) -> np.ndarray:
        return np.eye(label_dim)[self.label]


@dataclass(eq=False)
class SampleSet(Sequence):
    """A sequence of Samples stored as stacked arrays.

    Indexing with an int yields a Sample; slices and index arrays yield a
    SampleSet.
    """

    history: np.ndarray
    frames: np.ndarray
    labels: np.ndarray
    origin_t: np.ndarray

    def __post_init__(self):
        self.history = np.asarray(self.history, dtype=np.float64)
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.origin_t = np.asarray(self.origin_t, dtype=np.int64)
        n = len(self.labels)
        if not (len(self.history) == len(self.frames) == len(self.origin_t) == n):
            raise ValueError("sample arrays must have equal length")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, index):
        if isinstance(index, (int, np.integer)):
            return Sample(self.history[index], self.frames[index], int(self.labels[index]), int(self.origin_t[index]))
        return SampleSet(self.history[index], self.frames[index], self.labels[index], self.origin_t[index])

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def visible_dim(self) -> int:
        return self.frames.shape[1]

    @property
    def history_len(self) -> int:
        return self.history.shape[1] // self.frames.shape[1]

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "SampleSet":
        if isinstance(samples, SampleSet):
            return samples
        samples = list(samples)
        if not samples:
            raise ValueError("no samples")
        return cls(
            np.stack([s.history for s in samples]),
            np.stack([s.frame for s in samples]),
            np.array([s.label for s in samples]),
            np.array([s.origin_t for s in samples]),
        )


def window_dataset(trace: Trace, history_len: int, cache_name: str, window: int = DEFAULT_WINDOW,
                   bin_size: int = 1) -> SampleSet:
    """One Sample per valid time step of the (optionally binned) trace.

    With binning, the label horizon becomes ceil(window / bin_size) bins.
    Sample count is ``T' - ceil(window / bin_size) - history_len``.
    """
    if cache_name not in trace.miss_streams:
        raise KeyError(f"unknown cache {cache_name!r}; trace has {sorted(trace.miss_streams)}")
    if history_len < 1:
        raise ValueError(f"history length must be >= 1, got {history_len}")
    binned = bin_trace(trace, bin_size)
    horizon = math.ceil(window / bin_size)
    T = binned.length
    if T <= history_len + horizon:
        raise ValueError(
            f"trace too short: {T} steps after binning, need more than {history_len} + {horizon}"
        )
    labels = aggregate_labels(binned.miss_streams[cache_name], horizon)
    counts = binned.counts.astype(np.float64)
    ts = np.arange(history_len, T - horizon)
    # lag index runs oldest-first: t-N, ..., t-1
    lags = ts[:, None] + np.arange(-history_len, 0)[None, :]
    history = counts[lags].reshape(len(ts), history_len * binned.visible_dim)
    return SampleSet(history, counts[ts], labels[ts], ts)


def split_chronological(samples, train_fraction: float = 0.8):
    """First floor(fraction * n) samples (by origin_t) for training, rest for test."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train fraction must be in (0, 1), got {train_fraction}")
    samples = SampleSet.from_samples(samples)
    order = np.argsort(samples.origin_t, kind="stable")
    samples = samples[order]
    n_train = math.floor(train_fraction * len(samples))
    if n_train == 0 or n_train == len(samples):
        raise ValueError(f"split of {len(samples)} samples at {train_fraction} leaves one side empty")
    return samples[:n_train], samples[n_train:]


# -- synthetic generator ------------------------------------------------------

@dataclass
class GeneratorConfig:
    """Hidden "activity" Markov chain emitting Poisson instruction counts."""

    transition: np.ndarray
    rates: np.ndarray
    miss_prob: np.ndarray
    length: int
    seed: int = 0
    categories: list[str] = field(default_factory=lambda: list(DEFAULT_CATEGORIES))
    initial: np.ndarray | None = None

    def __post_init__(self):
        self.transition = np.atleast_2d(np.asarray(self.transition, dtype=np.float64))
        self.rates = np.atleast_2d(np.asarray(self.rates, dtype=np.float64))
        self.miss_prob = np.atleast_1d(np.asarray(self.miss_prob, dtype=np.float64))
        K = self.num_activities
        if self.transition.shape != (K, K):
            raise ValueError(f"transition must be {K}x{K}, got {self.transition.shape}")
        if np.any(self.transition < 0) or not np.allclose(self.transition.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("transition rows must be nonnegative and sum to 1")
        if self.rates.shape != (K, len(self.categories)):
            raise ValueError(f"rates must be {K}x{len(self.categories)}, got {self.rates.shape}")
        if np.any(self.rates < 0):
            raise ValueError("rates must be nonnegative")
        if self.miss_prob.shape != (K,) or np.any((self.miss_prob < 0) | (self.miss_prob > 1)):
            raise ValueError(f"miss_prob must be {K} probabilities in [0, 1]")
        if self.initial is None:
            self.initial = np.full(K, 1.0 / K)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        if self.initial.shape != (K,) or abs(self.initial.sum() - 1.0) > 1e-9:
            raise ValueError("initial distribution must have K entries summing to 1")
        if self.length < 1:
            raise ValueError("length must be positive")

    @property
    def num_activities(self) -> int:
        return self.transition.shape[0]


def _fmt_row(values) -> str:
    return ",".join(repr(float(x)) for x in values)


def format_generator_config(config: GeneratorConfig) -> str:
    lines = [
        f"num_activities = {config.num_activities}",
        f"length = {config.length}",
        f"seed = {config.seed}",
        f"categories = {','.join(config.categories)}",
        f"initial = {_fmt_row(config.initial)}",
        f"miss_prob = {_fmt_row(config.miss_prob)}",
    ]
    lines += [f"transition.{k} = {_fmt_row(row)}" for k, row in enumerate(config.transition)]
    lines += [f"rates.{k} = {_fmt_row(row)}" for k, row in enumerate(config.rates)]
    return "\n".join(lines) + "\n"


def read_key_values(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TraceFormatError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise TraceFormatError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _floats(text: str, where: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise TraceFormatError(f"{where}: expected comma-separated numbers, got {text!r}") from None


def generator_config_from_values(values: dict[str, str]) -> GeneratorConfig:
    try:
        K = int(values["num_activities"])
        categories = [c.strip() for c in values["categories"].split(",")] if "categories" in values \
            else list(DEFAULT_CATEGORIES)
        transition = [_floats(values[f"transition.{k}"], f"transition.{k}") for k in range(K)]
        rates = [_floats(values[f"rates.{k}"], f"rates.{k}") for k in range(K)]
        return GeneratorConfig(
            transition=transition,
            rates=rates,
            miss_prob=_floats(values["miss_prob"], "miss_prob"),
            length=int(values["length"]),
            seed=int(values.get("seed", 0)),
            categories=categories,
            initial=_floats(values["initial"], "initial") if "initial" in values else None,
        )
    except KeyError as exc:
        raise TraceFormatError(f"generator config missing key {exc.args[0]!r}") from None


def load_generator_config(path) -> GeneratorConfig:
    return generator_config_from_values(read_key_values(path))


def generate_synthetic(config: GeneratorConfig) -> Trace:
    """Sample a trace: activity chain, Poisson counts, Bernoulli misses."""
    rng = np.random.default_rng(config.seed)
    T, K = config.length, config.num_activities
    u = rng.random(T)
    cdf = np.cumsum(config.transition, axis=1)
    activity = np.empty(T, dtype=np.int64)
    activity[0] = min(np.searchsorted(np.cumsum(config.initial), u[0], side="right"), K - 1)
    for t in range(1, T):
        activity[t] = min(np.searchsorted(cdf[activity[t - 1]], u[t], side="right"), K - 1)
    counts = rng.poisson(config.rates[activity])
    misses = (rng.random(T) < config.miss_prob[activity]).astype(np.int8)
    return Trace(list(config.categories), counts, {SYNTHETIC_STREAM: misses})


def default_generator_config(length: int = 20_000, seed: int = 0, miss_prob=(0.0005, 0.05),
                             stay: float = 0.998) -> GeneratorConfig:
    """Two activities with disjoint instruction supports.

    Activity 0 is compute-bound (ALU + branch), activity 1 memory-bound
    (load/store/sync/misc).
    """
    rates = [
        [2.0, 1.0, 0.0, 0.0, 0.5, 0.0, 0.0],
        [0.0, 0.0, 1.5, 1.0, 0.0, 0.2, 0.3],
    ]
    transition = [[stay, 1.0 - stay], [1.0 - stay, stay]]
    return GeneratorConfig(transition, rates, list(miss_prob), length, seed)
