"""Exact label scoring, Gibbs sampling and brute-force enumeration oracles."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import (
    ModelParams,
    UnitKind,
    discriminative_energy,
    frame_total,
    hidden_activation,
    hidden_prob,
    label_prob,
    softmax,
    softplus,
    visible_conditional,
)

MAX_ENUMERATION_HIDDEN = 20


class CapacityError(ValueError):
    """Raised when an exhaustive enumeration would be too large."""


@dataclass(frozen=True)
class LabelScores:
    scores: np.ndarray
    posterior: np.ndarray
    predicted: int


def label_scores(params: ModelParams, v, history) -> np.ndarray:
    """Negative free energy of every label, up to a label-independent constant.

    Shape ``(..., L)``. The hidden units are summed out analytically:
    ``score(l) = s_l + sum_j softplus(d_j + u_jl + (v W)_j)``.
    """
    base = hidden_activation(params, v, history)
    return params.s + np.sum(softplus(base[..., :, None] + params.U), axis=-2)


def free_energy_score(params: ModelParams, v, history, label: int) -> float:
    L = params.config.label_dim
    if not 0 <= label < L:
        raise IndexError(f"class index {label} out of range [0, {L})")
    base = hidden_activation(params, v, history)
    return params.s[label] + np.sum(softplus(base + params.U[:, label]), axis=-1)


def classify(params: ModelParams, v, history) -> LabelScores:
    scores = label_scores(params, v, history)
    if scores.ndim != 1:
        raise ValueError("classify takes a single frame; use classify_batch")
    return LabelScores(scores=scores, posterior=softmax(scores), predicted=int(np.argmax(scores)))


def classify_batch(params: ModelParams, v, history):
    """Vectorised classify: returns ``(scores, posterior, predicted)`` arrays.

    ``np.argmax`` returns the first maximum, so ties go to the lower index.
    """
    scores = label_scores(params, v, history)
    return scores, softmax(scores), np.argmax(scores, axis=-1)


@dataclass(frozen=True)
class GibbsStep:
    h_sample: np.ndarray
    v_recon: np.ndarray
    y_recon: np.ndarray
    h_prob: np.ndarray
    v_params: np.ndarray
    y_prob: np.ndarray


def sample_visible(params: ModelParams, v_params, rng: np.random.Generator) -> np.ndarray:
    if params.kind is UnitKind.REAL:
        return v_params + rng.standard_normal(np.shape(v_params))
    if params.kind is UnitKind.BINARY:
        return (rng.random(np.shape(v_params)) < v_params).astype(np.float64)
    return rng.poisson(v_params).astype(np.float64)


def sample_categorical(probs, rng: np.random.Generator) -> np.ndarray:
    probs = np.asarray(probs)
    u = rng.random(probs.shape[:-1] + (1,))
    cdf = np.cumsum(probs, axis=-1)
    # clamp guards against cdf[-1] rounding below u
    return np.minimum(np.sum(cdf < u, axis=-1), probs.shape[-1] - 1)


def gibbs_step(params: ModelParams, v, y, history, rng: np.random.Generator, m=None) -> GibbsStep:
    """One bottom-up / top-down pass.

    Draw order is fixed (hidden, visible, label) so results are a pure
    function of the generator state. For count units ``m`` defaults to the
    total of ``v``; the chain keeps it fixed across steps.
    """
    h_prob = hidden_prob(params, v, history, label=y)
    h_sample = (rng.random(h_prob.shape) < h_prob).astype(np.float64)
    if params.kind is UnitKind.COUNT and m is None:
        m = frame_total(v)
    v_params = visible_conditional(params, h_sample, history, m=m)
    v_recon = sample_visible(params, v_params, rng)
    y_prob = label_prob(params, h_sample)
    y_recon = sample_categorical(y_prob, rng)
    return GibbsStep(h_sample, v_recon, y_recon, h_prob, v_params, y_prob)


# -- enumeration oracles -----------------------------------------------------

def all_hidden_states(hidden_dim: int) -> np.ndarray:
    if hidden_dim > MAX_ENUMERATION_HIDDEN:
        raise CapacityError(
            f"refusing to enumerate 2^{hidden_dim} hidden states (limit H <= {MAX_ENUMERATION_HIDDEN})"
        )
    return np.array(list(itertools.product((0.0, 1.0), repeat=hidden_dim)))


def enumerate_label_logits(params: ModelParams, v, history) -> np.ndarray:
    """log sum_h exp(-E_DC(y=l, v, h | history)) for each label, by brute force."""
    states = all_hidden_states(params.config.hidden_dim)
    v = np.asarray(v, dtype=np.float64)
    history = np.asarray(history, dtype=np.float64)
    vs = np.broadcast_to(v, (len(states),) + v.shape)
    hs = np.broadcast_to(history, (len(states),) + history.shape)
    logits = []
    for label in range(params.config.label_dim):
        neg_energy = -discriminative_energy(params, vs, states, label, hs)
        logits.append(logsumexp(neg_energy))
    return np.array(logits)


def enumerate_hidden_conditional(params: ModelParams, v, y, h, history, unit: int) -> float:
    """p(h_unit = 1 | v, y, rest of h, history) from the energy ratio."""
    h0 = np.array(h, dtype=np.float64)
    h1 = h0.copy()
    h0[unit], h1[unit] = 0.0, 1.0
    e0 = discriminative_energy(params, v, h0, y, history)
    e1 = discriminative_energy(params, v, h1, y, history)
    return float(1.0 / (1.0 + np.exp(e1 - e0)))


def enumerate_visible_conditional(params: ModelParams, v, y, h, history, unit: int) -> float:
    """p(v_unit = 1 | rest of v, y, h, history) for binary units."""
    if params.kind is not UnitKind.BINARY:
        raise ValueError("visible enumeration oracle is defined for binary units only")
    v0 = np.array(v, dtype=np.float64)
    v1 = v0.copy()
    v0[unit], v1[unit] = 0.0, 1.0
    e0 = discriminative_energy(params, v0, h, y, history)
    e1 = discriminative_energy(params, v1, h, y, history)
    return float(1.0 / (1.0 + np.exp(e1 - e0)))


def enumerate_joint(params: ModelParams, history) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Exact joint p(v, h, y | history) for a tiny binary model.

    Returns ``(v_states, h_states, labels, probs)`` flattened over all
    configurations. The partition function appears only here.
    """
    if params.kind is not UnitKind.BINARY:
        raise ValueError("joint enumeration is defined for binary units only")
    V, H, L = params.config.visible_dim, params.config.hidden_dim, params.config.label_dim
    if V + H > MAX_ENUMERATION_HIDDEN:
        raise CapacityError(f"refusing to enumerate 2^{V + H} joint states")
    vs = np.array(list(itertools.product((0.0, 1.0), repeat=V)))
    hs = all_hidden_states(H)
    grid_v = np.repeat(vs, len(hs) * L, axis=0)
    grid_h = np.tile(np.repeat(hs, L, axis=0), (len(vs), 1))
    grid_y = np.tile(np.arange(L), len(vs) * len(hs))
    hist = np.broadcast_to(np.asarray(history, dtype=np.float64), (len(grid_y), params.config.history_dim))
    neg_energy = -discriminative_energy(params, grid_v, grid_h, grid_y, hist)
    probs = np.exp(neg_energy - logsumexp(neg_energy))
    return grid_v, grid_h, grid_y, probs

