"""Bag-level pooling baselines: max, mean, and gated-free attention.

These classifiers never see instance labels. Each bag is pooled into a
single feature vector (max / mean / attention-weighted sum over its
instances) and a linear head maps that vector to two-class probabilities
trained with cross entropy against the bag label.

Instance scores are derived afterwards: the attention arm exposes its
per-instance attention weights (min-max normalized over the whole
corpus), the max and mean arms score each instance by running it through
the head alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (ClassifierParams, Gradients, SgdConfig, forward,
                    init_classifier, soft_cross_entropy)
from .numkit import Rng, softmax

POOL_KINDS = ("max", "mean", "attention")


@dataclass
class AttentionParams:
    """Two-layer scoring net: weight = softmax_k(w . tanh(V f_k))."""

    v: np.ndarray  # (L, feature_dim) projection
    w: np.ndarray  # (L,) scorer

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.v.ndim != 2 or self.w.shape != (self.v.shape[0],):
            raise ValueError("attention shapes disagree")


@dataclass
class PoolParams:
    """Trained baseline: pooling kind, linear head, optional attention."""

    kind: str
    head: ClassifierParams
    attention: AttentionParams | None = None

    def __post_init__(self):
        if self.kind not in POOL_KINDS:
            raise ValueError(f"unknown pooling kind: {self.kind!r}")
        if (self.kind == "attention") != (self.attention is not None):
            raise ValueError("attention parameters required iff kind is attention")


@dataclass
class PoolGradients:
    head: Gradients
    v: np.ndarray | None = None
    w: np.ndarray | None = None


def attention_pool(params: AttentionParams, bag_features: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Pool a (K, d) bag into (bag_feature (d,), weights (K,)).

    Weights are a softmax over per-instance scores w . tanh(V f_k), so
    they are positive and sum to one for any bag size.
    """
    feats = np.asarray(bag_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("bag features must be a nonempty (K, d) matrix")
    scores = np.tanh(feats @ params.v.T) @ params.w
    weights = softmax(scores)
    return weights @ feats, weights


def pool_bag(params: PoolParams, bag_features: np.ndarray
             ) -> tuple[np.ndarray, np.ndarray | None]:
    """Pooled feature for one bag plus attention weights when applicable."""
    feats = np.asarray(bag_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("bag features must be a nonempty (K, d) matrix")
    if params.kind == "max":
        return feats.max(axis=0), None
    if params.kind == "mean":
        return feats.mean(axis=0), None
    return attention_pool(params.attention, feats)


def bag_probability(params: PoolParams, bag_features: np.ndarray) -> float:
    """Positive-class probability for one bag."""
    pooled, _ = pool_bag(params, bag_features)
    return float(forward(params.head, pooled)[0])


def pool_loss_and_grads(params: PoolParams, bag_feats: list[np.ndarray],
                        targets: np.ndarray) -> tuple[float, PoolGradients]:
    """Mean bag-level cross entropy and gradients for every trainable array.

    targets is (n_bags, 2), positive class first. Max and mean pooling
    have no parameters below the head, so only head gradients exist for
    them; the attention arm also backpropagates through its softmax
    weighting into w and V.
    """
    targets = np.asarray(targets, dtype=np.float64)
    n = len(bag_feats)
    if targets.shape != (n, 2):
        raise ValueError("targets must be (n_bags, 2)")
    head = params.head
    g_w_out = np.zeros_like(head.w_out)
    g_b_out = np.zeros_like(head.b_out)
    g_v = np.zeros_like(params.attention.v) if params.attention else None
    g_w = np.zeros_like(params.attention.w) if params.attention else None
    total = 0.0
    for b, feats in enumerate(bag_feats):
        feats = np.asarray(feats, dtype=np.float64)
        if params.kind == "attention":
            t_mat = np.tanh(feats @ params.attention.v.T)  # (K, L)
            scores = t_mat @ params.attention.w
            weights = softmax(scores)
            pooled = weights @ feats
        else:
            pooled, _ = pool_bag(params, feats)
            weights = None
        probs = forward(head, pooled)
        total += soft_cross_entropy(probs, targets[b])
        dlogits = (probs - targets[b]) / n
        g_w_out += np.outer(dlogits, pooled)
        g_b_out += dlogits
        if params.kind == "attention":
            d_pooled = head.w_out.T @ dlogits
            d_weights = feats @ d_pooled
            # softmax Jacobian-vector product
            d_scores = weights * (d_weights - weights @ d_weights)
            g_w += t_mat.T @ d_scores
            d_pre = np.outer(d_scores, params.attention.w) * (1.0 - t_mat ** 2)
            g_v += d_pre.T @ feats
    grads = PoolGradients(Gradients(None, None, g_w_out, g_b_out), v=g_v, w=g_w)
    return total / n, grads


def init_pool_params(kind: str, feature_dim: int, attention_hidden: int = 64,
                     rng: Rng | None = None) -> PoolParams:
    """Fresh baseline parameters; attention arrays drawn U(+-1/sqrt(fan_in))."""
    rng = rng or Rng(0)
    head = init_classifier(feature_dim, arch="linear", rng=rng)
    attn = None
    if kind == "attention":
        bound_v = 1.0 / np.sqrt(feature_dim)
        bound_w = 1.0 / np.sqrt(attention_hidden)
        attn = AttentionParams(
            v=rng.uniform(-bound_v, bound_v, (attention_hidden, feature_dim)),
            w=rng.uniform(-bound_w, bound_w, attention_hidden))
    return PoolParams(kind, head, attn)


def pool_baseline_train(dataset, kind: str, sgd: SgdConfig,
                        attention_hidden: int = 64) -> PoolParams:
    """Train a pooling baseline on bag labels only.

    Bags are shuffled each epoch and consumed in batches of
    sgd.batch_size bags; every array updates by plain SGD.
    """
    if kind not in POOL_KINDS:
        raise ValueError(f"unknown pooling kind: {kind!r}")
    if not dataset.positive_bags() or not dataset.negative_bags():
        raise ValueError("dataset must contain both bag classes")
    init_rng = Rng(sgd.seed, stream=11)
    shuffle_rng = Rng(sgd.seed, stream=12)
    params = init_pool_params(kind, dataset.feature_dim, attention_hidden,
                              init_rng)
    feats = [b.feature_matrix() for b in dataset.bags]
    # one-hot bag targets, positive class first
    targets = np.zeros((len(dataset.bags), 2))
    for i, bag in enumerate(dataset.bags):
        targets[i, 0 if bag.label == 1 else 1] = 1.0
    for _ in range(sgd.epochs):
        order = shuffle_rng.permutation(len(feats))
        for start in range(0, len(order), sgd.batch_size):
            idx = order[start:start + sgd.batch_size]
            _, grads = pool_loss_and_grads(params, [feats[i] for i in idx],
                                           targets[idx])
            head = params.head
            head.w_out -= sgd.learning_rate * grads.head.w_out
            head.b_out -= sgd.learning_rate * grads.head.b_out
            if params.attention is not None:
                params.attention.v -= sgd.learning_rate * grads.v
                params.attention.w -= sgd.learning_rate * grads.w
    return params


def attention_instance_scores(attn: np.ndarray) -> np.ndarray:
    """Min-max normalize corpus attention weights into [0, 1].

    Rank order is preserved, so rank-based metrics are unaffected. A
    constant vector (no spread at all) maps to 0.5 everywhere.
    """
    raw = np.asarray(attn, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("empty attention vector")
    lo, hi = raw.min(), raw.max()
    if hi - lo == 0.0:
        return np.full(raw.shape, 0.5)
    return (raw - lo) / (hi - lo)


def baseline_instance_scores(params: PoolParams, dataset) -> np.ndarray:
    """Per-instance positive scores, corpus order = dataset bag order."""
    if params.kind == "attention":
        chunks = [attention_pool(params.attention, b.feature_matrix())[1]
                  for b in dataset.bags]
        return attention_instance_scores(np.concatenate(chunks))
    stacked = np.concatenate([b.feature_matrix() for b in dataset.bags])
    return forward(params.head, stacked)[:, 0]


def baseline_bag_scores(params: PoolParams, dataset) -> np.ndarray:
    """Positive-class probability per bag, in dataset order."""
    return np.array([bag_probability(params, b.feature_matrix())
                     for b in dataset.bags])


def pool_params_to_vector(params: PoolParams) -> np.ndarray:
    parts = [params.head.w_out.ravel(), params.head.b_out.ravel()]
    if params.attention is not None:
        parts += [params.attention.v.ravel(), params.attention.w.ravel()]
    return np.concatenate(parts)


def vector_to_pool_params(params: PoolParams, vec: np.ndarray) -> PoolParams:
    """Write a flat vector back into the parameter arrays, in place."""
    vec = np.asarray(vec, dtype=np.float64)
    arrays = [params.head.w_out, params.head.b_out]
    if params.attention is not None:
        arrays += [params.attention.v, params.attention.w]
    offset = 0
    for arr in arrays:
        arr.flat[:] = vec[offset:offset + arr.size]
        offset += arr.size
    if offset != vec.size:
        raise ValueError("vector length does not match parameter count")
    return params
