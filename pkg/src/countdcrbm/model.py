"""Model definition for the (Count-)DCRBM family.

A conditional RBM whose visible and hidden biases are shifted by a linear
function of the previous ``N`` visible frames, with a softmax label layer
coupled to the hidden units. Three visible unit types are supported:
binary (Bernoulli), real (unit-variance Gaussian) and count (constrained
Poisson, i.e. replicated-softmax style rates that sum to the frame total).

All functions accept a single example (1-D arrays) or a batch (leading
batch axis) and never mutate their inputs.

History vectors are the concatenation ``v[t-N], ..., v[t-1]``, oldest first.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit, gammaln

FORMAT_TAG = "countdcrbm-model"
FORMAT_VERSION = 1
HISTORY_ORDER = "oldest-first"

TENSOR_NAMES = ("W", "a", "b", "A", "B", "U", "s")


class ShapeError(ValueError):
    """Raised when array dimensions disagree with the model configuration."""


class UnitKind(str, enum.Enum):
    BINARY = "binary"
    REAL = "real"
    COUNT = "count"


@dataclass(frozen=True)
class ModelConfig:
    visible_dim: int
    hidden_dim: int
    label_dim: int = 2
    history_len: int = 1
    unit_kind: UnitKind = UnitKind.COUNT

    def __post_init__(self):
        for name in ("visible_dim", "hidden_dim", "label_dim", "history_len"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        object.__setattr__(self, "unit_kind", UnitKind(self.unit_kind))

    @property
    def history_dim(self) -> int:
        return self.history_len * self.visible_dim

    def shapes(self) -> dict[str, tuple[int, ...]]:
        V, H, L, NV = self.visible_dim, self.hidden_dim, self.label_dim, self.history_dim
        return {"W": (V, H), "a": (V,), "b": (H,), "A": (NV, V), "B": (NV, H), "U": (H, L), "s": (L,)}

    def to_dict(self) -> dict:
        return {
            "visible_dim": int(self.visible_dim),
            "hidden_dim": int(self.hidden_dim),
            "label_dim": int(self.label_dim),
            "history_len": int(self.history_len),
            "unit_kind": self.unit_kind.value,
        }


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Learnable tensors of a DCRBM.

    ``W`` (V, H) visible-hidden weights, ``a`` (V,) and ``b`` (H,) static
    biases, ``A`` (N*V, V) and ``B`` (N*V, H) autoregressive bias matrices,
    ``U`` (H, L) hidden-label couplings and ``s`` (L,) label biases.
    """

    config: ModelConfig
    W: np.ndarray
    a: np.ndarray
    b: np.ndarray
    A: np.ndarray
    B: np.ndarray
    U: np.ndarray
    s: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, shape in self.config.shapes().items():
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def kind(self) -> UnitKind:
        return self.config.unit_kind

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TENSOR_NAMES}

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        return cls(config, **{k: np.zeros(v) for k, v in config.shapes().items()})


def init_params(config: ModelConfig, seed: int = 0, frames=None, init_scale: float = 0.01) -> ModelParams:
    """Small uniform weights, zero biases.

    For count units, ``frames`` (the training frames) sets the visible bias
    to the log of each unit's mean share of the frame total.
    """
    rng = np.random.default_rng(seed)
    shapes = config.shapes()
    tensors = {}
    for name in ("W", "A", "B", "U"):
        tensors[name] = rng.uniform(-init_scale, init_scale, size=shapes[name])
    for name in ("a", "b", "s"):
        tensors[name] = np.zeros(shapes[name])
    if config.unit_kind is UnitKind.COUNT and frames is not None:
        frames = np.asarray(frames, dtype=np.float64).reshape(-1, config.visible_dim)
        totals = frames.sum(axis=1)
        nonempty = totals > 0
        if nonempty.any():
            shares = (frames[nonempty] / totals[nonempty, None]).mean(axis=0)
            tensors["a"] = np.log(np.maximum(shares, 1e-6))
    return ModelParams(config, **tensors)


def sigmoid(x):
    return expit(x)


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def one_hot(labels, label_dim: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim > 0 and labels.dtype.kind == "f" and labels.shape[-1] == label_dim:
        return labels.astype(np.float64)
    labels = labels.astype(np.int64)
    if np.any(labels < 0) or np.any(labels >= label_dim):
        raise ValueError(f"label index out of range [0, {label_dim})")
    return np.eye(label_dim)[labels]


def _check_last(arr, size, what):
    if arr.shape[-1:] != (size,):
        raise ShapeError(f"{what} has trailing dimension {arr.shape[-1:] or ()}, expected {size}")


def _as_history(params: ModelParams, history) -> np.ndarray:
    history = np.asarray(history, dtype=np.float64)
    _check_last(history, params.config.history_dim, "history")
    return history


def _as_visible(params: ModelParams, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    _check_last(v, params.config.visible_dim, "visible frame")
    return v


def _as_hidden(params: ModelParams, h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    _check_last(h, params.config.hidden_dim, "hidden vector")
    return h


def validate_frame(v, kind: UnitKind) -> None:
    """Raise ValueError when ``v`` violates the unit-kind domain."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("frame contains non-finite values")
    if kind is UnitKind.BINARY and not np.all((v == 0) | (v == 1)):
        raise ValueError("binary frame must contain only 0/1")
    if kind is UnitKind.COUNT and not (np.all(v >= 0) and np.all(v == np.round(v))):
        raise ValueError("count frame must contain nonnegative integers")


def dynamic_biases(params: ModelParams, history):
    """Return ``(c, d)``: the static biases shifted by the history window."""
    history = _as_history(params, history)
    c = params.a + history @ params.A
    d = params.b + history @ params.B
    return c, d


def energy(params: ModelParams, v, h, history) -> np.ndarray:
    """Generative energy E_C(v, h | history) for the model's unit kind."""
    v = _as_visible(params, v)
    h = _as_hidden(params, h)
    validate_frame(v, params.kind)
    c, d = dynamic_biases(params, history)
    interaction = np.einsum("...i,ij,...j->...", v, params.W, h)
    hidden_term = np.sum(d * h, axis=-1)
    if params.kind is UnitKind.REAL:
        visible_term = -0.5 * np.sum((v - c) ** 2, axis=-1)
    elif params.kind is UnitKind.BINARY:
        visible_term = np.sum(c * v, axis=-1)
    else:
        visible_term = np.sum(c * v - gammaln(v + 1.0), axis=-1)
    return -(visible_term + hidden_term + interaction)


def discriminative_energy(params: ModelParams, v, h, y, history) -> np.ndarray:
    """E_DC = E_C - h^T U y - s^T y, with ``y`` a class index (or one-hot)."""
    y = one_hot(y, params.config.label_dim)
    h_arr = _as_hidden(params, h)
    label_term = np.einsum("...j,jl,...l->...", h_arr, params.U, y) + np.sum(params.s * y, axis=-1)
    return energy(params, v, h, history) - label_term


def hidden_activation(params: ModelParams, v, history, label=None) -> np.ndarray:
    v = _as_visible(params, v)
    _, d = dynamic_biases(params, history)
    act = d + v @ params.W
    if label is not None:
        act = act + one_hot(label, params.config.label_dim) @ params.U.T
    return act


def hidden_prob(params: ModelParams, v, history, label=None) -> np.ndarray:
    """p(h_j = 1 | v, history[, label]) for every hidden unit."""
    return sigmoid(hidden_activation(params, v, history, label))


def visible_activation(params: ModelParams, h, history) -> np.ndarray:
    h = _as_hidden(params, h)
    c, _ = dynamic_biases(params, history)
    return c + h @ params.W.T


def visible_conditional(params: ModelParams, h, history, m=None) -> np.ndarray:
    """Distribution parameters of p(v | h, history).

    Real: Gaussian means (unit variance). Binary: Bernoulli probabilities.
    Count: Poisson rates ``m * softmax(activation)`` which sum to ``m``.
    """
    act = visible_activation(params, h, history)
    if params.kind is UnitKind.REAL:
        return act
    if params.kind is UnitKind.BINARY:
        return sigmoid(act)
    if m is None:
        raise ValueError("count units need the frame total m")
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError(f"frame total must be nonnegative, got {m.min()}")
    return m[..., None] * softmax(act)


def label_prob(params: ModelParams, h) -> np.ndarray:
    """Softmax over s_l + sum_j u_jl h_j; ``h`` may hold probabilities."""
    h = _as_hidden(params, h)
    return softmax(params.s + h @ params.U)


def frame_total(v) -> np.ndarray:
    return np.sum(np.asarray(v, dtype=np.float64), axis=-1)


# -- serialization ---------------------------------------------------------

def params_to_document(params: ModelParams) -> dict:
    tensors = {}
    for name, arr in params.tensors().items():
        tensors[name] = {"shape": list(arr.shape), "data": [float(x) for x in arr.ravel(order="C")]}
    return {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "history_order": HISTORY_ORDER,
        "config": params.config.to_dict(),
        "tensors": tensors,
        "metadata": params.metadata,
    }


def params_from_document(doc: dict) -> ModelParams:
    if doc.get("format") != FORMAT_TAG:
        raise ValueError(f"not a model document (format={doc.get('format')!r})")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')!r}")
    if doc.get("history_order", HISTORY_ORDER) != HISTORY_ORDER:
        raise ValueError(f"unsupported history order {doc['history_order']!r}")
    config = ModelConfig(**doc["config"])
    tensors = {}
    for name in TENSOR_NAMES:
        entry = doc["tensors"][name]
        tensors[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return ModelParams(config, metadata=dict(doc.get("metadata", {})), **tensors)


def save_params(params: ModelParams, path) -> None:
    # json writes floats via repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(params_to_document(params), indent=1) + "\n", encoding="utf-8")


def load_params(path) -> ModelParams:
    return params_from_document(json.loads(Path(path).read_text(encoding="utf-8")))
