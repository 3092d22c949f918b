"""Fixed-weight score-trained network and the edge-popup local trainer.

Layers are bias-free fully connected maps stored as (fan_out, fan_in)
float32 matrices.  Weights never change after construction; training moves
only the scores.  Forward passes keep the top-k scored edges per layer;
backward passes use the straight-through estimator, so score gradients are
upstream * input * weight for every edge, masked or not.  All reductions
run in float64; parameters stay float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import InitKind, RngStream, TAG_SCORES, TAG_WEIGHTS, derive, init_scores, init_weights
from .ranking import argsort_ranking, keep_count, reorder_scores

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    fan_in: int
    fan_out: int
    activation: str = "relu"

    def __post_init__(self):
        if self.fan_in < 1 or self.fan_out < 1:
            raise ValueError("layer fans must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def n_edges(self) -> int:
        return self.fan_in * self.fan_out


@dataclass
class SgdConfig:
    """Minibatch SGD settings (momentum and weight decay apply to scores)."""

    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    batch_size: int = 8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class Minibatch:
    inputs: np.ndarray
    labels: np.ndarray


def validate_architecture(specs: list[LayerSpec]) -> None:
    if not specs:
        raise ValueError("architecture must have at least one layer")
    for a, b in zip(specs, specs[1:]):
        if a.fan_out != b.fan_in:
            raise ValueError(f"layer widths do not chain: {a.fan_out} -> {b.fan_in}")
    if specs[-1].activation != "identity":
        raise ValueError("last layer must use the identity activation")


class Supernetwork:
    """Fixed random weights plus mutable per-edge scores, layer by layer."""

    def __init__(self, specs: list[LayerSpec], weights: list[np.ndarray],
                 scores: list[np.ndarray], seed: int):
        validate_architecture(specs)
        self.specs = specs
        self.weights = []
        for w in weights:
            w = np.array(w, dtype=np.float32)  # own copy, frozen below
            w.flags.writeable = False
            self.weights.append(w)
        self.scores = [np.array(s, dtype=np.float32) for s in scores]
        self.seed = seed
        for spec, w, s in zip(specs, self.weights, self.scores):
            if w.shape != (spec.fan_out, spec.fan_in) or s.shape != w.shape:
                raise ValueError("weight/score shapes do not match the specs")

    @classmethod
    def from_seed(cls, seed: int, specs: list[LayerSpec],
                  weight_init: InitKind = InitKind.SIGNED_KAIMING_CONSTANT) -> "Supernetwork":
        """Reconstruct the network any party can build from the shared seed.

        One tagged sub-stream fills all weight matrices in layer order, a
        second fills all score matrices, so server and clients agree
        bitwise.
        """
        w_rng = derive(seed, [TAG_WEIGHTS])
        s_rng = derive(seed, [TAG_SCORES])
        weights = [init_weights((sp.fan_out, sp.fan_in), weight_init, w_rng) for sp in specs]
        scores = [init_scores((sp.fan_out, sp.fan_in), s_rng) for sp in specs]
        return cls(specs, weights, scores, seed)

    def reorder_all_scores(self, ranking: list[np.ndarray]) -> None:
        """Overwrite scores so their layer-wise order matches ``ranking``."""
        for i, (s, perm) in enumerate(zip(self.scores, ranking)):
            flat = np.sort(s.ravel(), kind="stable")
            self.scores[i] = reorder_scores(flat, perm).reshape(s.shape)

    def score_rankings(self) -> list[np.ndarray]:
        return [argsort_ranking(s) for s in self.scores]


def mask_layer(scores: np.ndarray, k: float) -> np.ndarray:
    """Binary mask keeping the top-k fraction of edges by score.

    Ties go to the lower flat index first in the ascending order, so equal
    scores are dropped from index 0 upward.
    """
    flat = np.asarray(scores, dtype=np.float64).ravel()
    if not np.all(np.isfinite(flat)):
        raise ValueError("scores must be finite")
    t = flat.size - keep_count(flat.size, k)
    order = np.argsort(flat, kind="stable")
    mask = np.zeros(flat.size, dtype=np.float32)
    mask[order[t:]] = 1.0
    return mask.reshape(np.asarray(scores).shape)


@dataclass
class ForwardCache:
    """Per-layer tensors kept for the backward pass."""

    batch: Minibatch
    inputs: list[np.ndarray] = field(default_factory=list)        # Z per layer
    pre_activations: list[np.ndarray] = field(default_factory=list)  # I per layer
    masks: list[np.ndarray] = field(default_factory=list)


def ep_forward(net: Supernetwork, k: float, batch: Minibatch) -> tuple[np.ndarray, ForwardCache]:
    """Masked forward pass; returns logits and the cache for ep_backward."""
    x = np.asarray(batch.inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.specs[0].fan_in:
        raise ValueError(f"input width {x.shape} does not match fan_in {net.specs[0].fan_in}")
    cache = ForwardCache(batch=batch)
    for spec, w, s in zip(net.specs, net.weights, net.scores):
        m = mask_layer(s, k)
        cache.inputs.append(x)
        cache.masks.append(m)
        with np.errstate(over="ignore", invalid="ignore"):
            pre = x @ (w * m).astype(np.float64).T
        cache.pre_activations.append(pre)
        x = np.maximum(pre, 0.0) if spec.activation == "relu" else pre
    return cache.pre_activations[-1], cache


def softmax_cross_entropy_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(mean cross-entropy)/d(logits): (softmax - onehot) / batch."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)
    grad = probs
    grad[np.arange(len(labels)), labels] -= 1.0
    return grad / len(labels)


def score_gradient(upstream: np.ndarray, inputs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Straight-through edge gradient: dL/ds[v,u] = dL/dI[v] * Z[u] * W[v,u]."""
    return (np.asarray(upstream, dtype=np.float64).T @ np.asarray(inputs, dtype=np.float64)) \
        * np.asarray(weights, dtype=np.float64)


def ep_backward(net: Supernetwork, k: float, batch: Minibatch,
                cache: ForwardCache) -> list[np.ndarray]:
    """Score gradients per layer for mean softmax cross-entropy.

    Gradients exist for every edge (the mask is treated as identity);
    gradients flowing to earlier layers pass through masked weights only.
    """
    if cache.batch is not batch:
        raise ValueError("forward cache does not belong to this batch")
    labels = np.asarray(batch.labels, dtype=np.int64)
    dldi = softmax_cross_entropy_grad(cache.pre_activations[-1], labels)
    grads: list[np.ndarray] = [None] * len(net.specs)
    for i in range(len(net.specs) - 1, -1, -1):
        grads[i] = score_gradient(dldi, cache.inputs[i], net.weights[i])
        if i > 0:
            masked_w = (net.weights[i] * cache.masks[i]).astype(np.float64)
            dz = dldi @ masked_w
            if net.specs[i - 1].activation == "relu":
                dz = dz * (cache.pre_activations[i - 1] > 0)
            dldi = dz
    return grads


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray],
             buffers: list[np.ndarray], sgd: SgdConfig) -> None:
    """One momentum/weight-decay SGD step, in place, float32 parameters."""
    for p, g, buf in zip(params, grads, buffers):
        step = np.asarray(g, dtype=np.float64) + sgd.weight_decay * p.astype(np.float64)
        buf *= sgd.momentum
        buf += step
        with np.errstate(over="ignore"):
            p -= (sgd.learning_rate * buf).astype(np.float32)


def edge_popup_train(net: Supernetwork, batches: list[Minibatch], epochs: int,
                     k: float, sgd: SgdConfig, rng: RngStream) -> list[np.ndarray]:
    """Train scores for ``epochs`` passes; weights are untouched.

    Batch groupings are fixed; only their order is reshuffled each epoch
    from ``rng``.  Returns the (mutated) score matrices.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if not batches:
        raise ValueError("training data is empty")
    buffers = [np.zeros(s.shape, dtype=np.float64) for s in net.scores]
    order = np.arange(len(batches))
    for _ in range(epochs):
        rng.shuffle(order)
        for bi in order:
            batch = batches[bi]
            _, cache = ep_forward(net, k, batch)
            grads = ep_backward(net, k, batch, cache)
            sgd_step(net.scores, grads, buffers, sgd)
    return net.scores


def evaluate(net: Supernetwork, k: float, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax-correct predictions under the current mask."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("dataset is empty")
    logits, _ = ep_forward(net, k, Minibatch(inputs=np.asarray(inputs), labels=labels))
    return float(np.mean(np.argmax(logits, axis=1) == labels))


# --- Dense (weight-trained) helpers for the baseline protocols --------------


def dense_forward(weights: list[np.ndarray], specs: list[LayerSpec],
                  inputs: np.ndarray) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    x = np.asarray(inputs, dtype=np.float64)
    zs, pres = [], []
    for spec, w in zip(specs, weights):
        zs.append(x)
        with np.errstate(over="ignore", invalid="ignore"):
            pre = x @ w.astype(np.float64).T
        pres.append(pre)
        x = np.maximum(pre, 0.0) if spec.activation == "relu" else pre
    return pres[-1], zs, pres


def dense_weight_grads(weights: list[np.ndarray], specs: list[LayerSpec],
                       batch: Minibatch) -> list[np.ndarray]:
    labels = np.asarray(batch.labels, dtype=np.int64)
    logits, zs, pres = dense_forward(weights, specs, batch.inputs)
    dldi = softmax_cross_entropy_grad(logits, labels)
    grads: list[np.ndarray] = [None] * len(specs)
    for i in range(len(specs) - 1, -1, -1):
        grads[i] = dldi.T @ zs[i]
        if i > 0:
            dz = dldi @ weights[i].astype(np.float64)
            if specs[i - 1].activation == "relu":
                dz = dz * (pres[i - 1] > 0)
            dldi = dz
    return grads


def dense_train(weights: list[np.ndarray], specs: list[LayerSpec],
                batches: list[Minibatch], epochs: int, sgd: SgdConfig,
                rng: RngStream) -> list[np.ndarray]:
    """Plain weight training with the same loop shape as edge_popup_train."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if not batches:
        raise ValueError("training data is empty")
    weights = [np.array(w, dtype=np.float32) for w in weights]
    buffers = [np.zeros(w.shape, dtype=np.float64) for w in weights]
    order = np.arange(len(batches))
    for _ in range(epochs):
        rng.shuffle(order)
        for bi in order:
            grads = dense_weight_grads(weights, specs, batches[bi])
            sgd_step(weights, grads, buffers, sgd)
    return weights


def dense_evaluate(weights: list[np.ndarray], specs: list[LayerSpec],
                   inputs: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("dataset is empty")
    logits, _, _ = dense_forward(weights, specs, inputs)
    preds = np.argmax(np.nan_to_num(logits, nan=-np.inf, posinf=np.inf, neginf=-np.inf), axis=1)
    return float(np.mean(preds == labels))


def flatten_params(mats: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([m.astype(np.float64).ravel() for m in mats])


def unflatten_params(vec: np.ndarray, specs: list[LayerSpec]) -> list[np.ndarray]:
    out, pos = [], 0
    for sp in specs:
        n = sp.n_edges
        # poisoned updates can exceed float32 range; saturating to inf is fine
        with np.errstate(over="ignore"):
            mat = np.asarray(vec[pos : pos + n], dtype=np.float32)
        out.append(mat.reshape(sp.fan_out, sp.fan_in))
        pos += n
    if pos != len(vec):
        raise ValueError("parameter vector does not match the architecture")
    return out
