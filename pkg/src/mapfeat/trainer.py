"""Feed-forward embedding model, tuple mining, and the training loop.

The model maps observation vectors to feature vectors through a small
MLP (nonlinear hidden layers, linear output, optional L2 normalization).
Forward, backward and the SGD loop are hand-rolled numpy so runs are
bit-reproducible under a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .files import atomic_write_text, fmt_float
from .geometry import angle_diff, classify_pairs
from .losses import LossConfig, combined_loss
from .scene import Scene

__all__ = [
    "EmbeddingModel",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "TrainingTuple",
    "backward",
    "forward",
    "forward_batch",
    "init_model",
    "load_model",
    "mine_tuples",
    "resolve_lambda",
    "save_model",
    "train",
]

ACTIVATIONS = ("tanh", "relu", "linear")


class TrainingError(ValueError):
    """Raised when a training run cannot proceed."""


@dataclass
class EmbeddingModel:
    """MLP parameters plus the resolved proportionality constant.

    ``weights[l]`` has shape (fan_in, fan_out); hidden layers apply the
    activation, the output layer is linear, optionally L2-normalized.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    normalize: bool = True
    lam: Optional[float] = None

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
            normalize=self.normalize,
            lam=self.lam,
        )


def init_model(
    input_dim: int,
    hidden_sizes: Sequence[int],
    feature_dim: int,
    activation: str = "tanh",
    normalize: bool = True,
    rng: Optional[np.random.Generator] = None,
) -> EmbeddingModel:
    """Glorot-uniform initialized model with zero biases."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}")
    if rng is None:
        rng = np.random.default_rng(0)
    sizes = [int(input_dim)] + [int(h) for h in hidden_sizes] + [int(feature_dim)]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EmbeddingModel(weights, biases, activation=activation, normalize=normalize)


def _activate(z: np.ndarray, tag: str) -> np.ndarray:
    if tag == "tanh":
        return np.tanh(z)
    if tag == "relu":
        return np.maximum(z, 0.0)
    return z


def _activate_grad(z: np.ndarray, out: np.ndarray, tag: str) -> np.ndarray:
    if tag == "tanh":
        return 1.0 - out * out
    if tag == "relu":
        return (z > 0.0).astype(float)
    return np.ones_like(z)


def _forward_trace(model: EmbeddingModel, observations):
    """Batch forward pass keeping intermediates for backprop."""
    x = np.atleast_2d(np.asarray(observations, dtype=float))
    if x.shape[1] != model.input_dim:
        raise ValueError(
            f"observation dimension {x.shape[1]} does not match model input {model.input_dim}"
        )
    n_layers = len(model.weights)
    acts = [x]
    pres = []
    h = x
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pres.append(z)
        h = z if layer == n_layers - 1 else _activate(z, model.activation)
        acts.append(h)
    if model.normalize:
        norms = np.maximum(np.linalg.norm(h, axis=1, keepdims=True), 1e-12)
        feats = h / norms
    else:
        norms = None
        feats = h
    return feats, (acts, pres, norms)


def forward_batch(model: EmbeddingModel, observations) -> np.ndarray:
    """Features for a batch of observations, shape (n, feature_dim)."""
    feats, _ = _forward_trace(model, observations)
    return feats


def forward(model: EmbeddingModel, observation) -> np.ndarray:
    """Feature vector for a single observation."""
    obs = np.asarray(observation, dtype=float)
    if obs.ndim != 1:
        raise ValueError("forward expects a single observation vector")
    return forward_batch(model, obs[None, :])[0]


def _backward_from_trace(model: EmbeddingModel, trace, feature_grads: np.ndarray):
    acts, pres, norms = trace
    n_layers = len(model.weights)
    g = np.atleast_2d(np.asarray(feature_grads, dtype=float))
    if model.normalize:
        raw = acts[-1]
        feats = raw / norms
        dot = np.sum(feats * g, axis=1, keepdims=True)
        delta = (g - feats * dot) / norms
    else:
        delta = g
    grad_w = [np.empty(0)] * n_layers
    grad_b = [np.empty(0)] * n_layers
    for layer in reversed(range(n_layers)):
        dz = delta if layer == n_layers - 1 else delta * _activate_grad(
            pres[layer], acts[layer + 1], model.activation
        )
        grad_w[layer] = acts[layer].T @ dz
        grad_b[layer] = dz.sum(axis=0)
        if layer > 0:
            delta = dz @ model.weights[layer].T
    return grad_w, grad_b


def backward(model: EmbeddingModel, observations, feature_grads):
    """Exact loss gradient w.r.t. every parameter.

    ``feature_grads`` must be the loss gradient w.r.t. the features the
    model produced for this same observation batch.
    """
    feats, trace = _forward_trace(model, observations)
    g = np.atleast_2d(np.asarray(feature_grads, dtype=float))
    if g.shape != feats.shape:
        raise ValueError(f"feature_grads shape {g.shape} does not match features {feats.shape}")
    return _backward_from_trace(model, trace, g)


@dataclass(frozen=True)
class TrainConfig:
    """Training-loop hyperparameters; geometry radii in meters."""

    r1: float = 1.0
    r2: float = 4.0
    positives_per_anchor: int = 6
    negatives_per_anchor: int = 6
    hard_fraction: float = 0.5
    cache_refresh_iters: int = 400
    learning_rate: float = 0.05
    epochs: int = 40
    batch_anchors: int = 1
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    hidden_sizes: tuple = (64, 64)
    feature_dim: int = 16
    activation: str = "tanh"
    normalize: bool = True
    momentum: float = 0.0
    max_heading: Optional[float] = None
    train_conditions: Optional[tuple] = None

    def __post_init__(self):
        if not self.r1 < self.r2:
            raise ValueError("r1 must be smaller than r2")
        if self.positives_per_anchor < 1 or self.negatives_per_anchor < 1:
            raise ValueError("positives/negatives per anchor must be at least 1")
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise ValueError("hard_fraction must lie in [0, 1]")
        if self.cache_refresh_iters < 1:
            raise ValueError("cache_refresh_iters must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_anchors < 1:
            raise ValueError("batch_anchors must be at least 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.loss.nv_variant in ("quadruplet", "lazy_quadruplet") and (
            self.negatives_per_anchor < 2
        ):
            raise ValueError("quadruplet variants need negatives_per_anchor >= 2")


@dataclass(frozen=True)
class TrainingTuple:
    """Anchor plus mined positive and negative indices into the training scene."""

    anchor: int
    positives: np.ndarray
    negatives: np.ndarray


def mine_tuples(
    anchor: int,
    scene: Scene,
    feature_cache: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
) -> Optional[TrainingTuple]:
    """Mine one training tuple, or None when the anchor is starved.

    Positives are drawn uniformly from the anchor's r1-ball. A
    ``hard_fraction`` share of the negatives are the valid negatives
    closest to the anchor in cached feature space; the rest are uniform
    over the remaining negatives.
    """
    locs = scene.locations
    d = np.einsum("ij,ij->i", locs - locs[anchor], locs - locs[anchor])
    pos_mask = d <= config.r1 * config.r1
    pos_mask[anchor] = False
    if config.max_heading is not None:
        pos_mask &= angle_diff(scene.headings, scene.headings[anchor]) <= config.max_heading
    neg_mask = d >= config.r2 * config.r2
    pos_idx = np.flatnonzero(pos_mask)
    neg_idx = np.flatnonzero(neg_mask)
    if len(pos_idx) < config.positives_per_anchor or len(neg_idx) < config.negatives_per_anchor:
        return None
    positives = rng.choice(pos_idx, size=config.positives_per_anchor, replace=False)
    n_hard = math.ceil(config.hard_fraction * config.negatives_per_anchor)
    diff = feature_cache[neg_idx] - feature_cache[anchor]
    feat_d = np.einsum("ij,ij->i", diff, diff)
    order = np.argsort(feat_d, kind="stable")
    hard = neg_idx[order[:n_hard]]
    n_rand = config.negatives_per_anchor - n_hard
    if n_rand > 0:
        rest = rng.choice(neg_idx[order[n_hard:]], size=n_rand, replace=False)
        # Hardest negatives last: quadruplet variants treat the final
        # negative as the second negative, so it should sit in the dense
        # feature region near the anchor, as the other negatives do.
        negatives = np.concatenate([rest, hard[::-1]])
    else:
        negatives = hard[::-1]
    return TrainingTuple(anchor=int(anchor), positives=positives, negatives=negatives)


def _tuple_positive_pairs(scene: Scene, idx: np.ndarray, config: TrainConfig) -> np.ndarray:
    """All positive pairs among the tuple members, indexed into the tuple.

    The proportionality loss runs over every pair of batch images within
    r1 (heading filter included), not only (anchor, positive) pairs:
    negatives mined far from the anchor are often close to each other.
    """
    headings = scene.headings[idx] if config.max_heading is not None else None
    pairs = classify_pairs(
        scene.locations[idx],
        config.r1,
        config.r2,
        headings=headings,
        max_heading=config.max_heading,
    )
    return pairs.positives


def resolve_lambda(model: EmbeddingModel, scene: Scene, config: TrainConfig) -> float:
    """Calibrate lam = r1^2 / (max positive-pair squared feature distance)."""
    headings = scene.headings if config.max_heading is not None else None
    pairs = classify_pairs(
        scene.locations, config.r1, config.r2, headings=headings, max_heading=config.max_heading
    )
    if pairs.positives.shape[0] == 0:
        raise TrainingError("no positive pairs in the training scene; cannot calibrate lam")
    feats = forward_batch(model, scene.observations)
    i, j = pairs.positives[:, 0], pairs.positives[:, 1]
    diff = feats[i] - feats[j]
    max_sq = float(np.max(np.einsum("ij,ij->i", diff, diff)))
    if max_sq <= 0:
        raise TrainingError("positive pairs have zero feature distance; cannot calibrate lam")
    return config.r1 * config.r1 / max_sq


@dataclass
class TrainResult:
    """Final model plus per-update loss log and loop accounting."""

    model: EmbeddingModel
    lam: float
    loss_log: list
    anchor_visits: int
    skipped: int
    cache_refreshes: int


def train(scene: Scene, config: TrainConfig) -> TrainResult:
    """Run SGD over mined tuples under the combined loss.

    The feature cache used for hard-negative mining is refreshed every
    ``cache_refresh_iters`` anchor visits. Identical (scene, config)
    pairs produce bit-identical models.
    """
    sub = (
        scene.subset_by_condition(config.train_conditions)
        if config.train_conditions is not None
        else scene
    )
    if sub.n_images < 2:
        raise TrainingError("training scene has fewer than 2 images")
    rng = np.random.default_rng(config.seed)
    model = init_model(
        sub.obs_dim,
        config.hidden_sizes,
        config.feature_dim,
        activation=config.activation,
        normalize=config.normalize,
        rng=rng,
    )
    lam = config.loss.lam if config.loss.lam is not None else resolve_lambda(model, sub, config)
    loss_cfg = config.loss.resolved(config.r1, lam)
    model.lam = lam

    n = sub.n_images
    n_pos = config.positives_per_anchor
    cache = forward_batch(model, sub.observations)
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]

    loss_log: list = []
    visits = 0
    skipped = 0
    refreshes = 0
    mined_any = False
    acc_w = acc_b = None
    acc_count = 0
    acc_val = acc_nv = acc_vg = 0.0

    def apply_update():
        nonlocal acc_w, acc_b, acc_count, acc_val, acc_nv, acc_vg
        for layer in range(len(model.weights)):
            if config.momentum > 0:
                vel_w[layer] = config.momentum * vel_w[layer] - config.learning_rate * acc_w[layer]
                vel_b[layer] = config.momentum * vel_b[layer] - config.learning_rate * acc_b[layer]
                model.weights[layer] += vel_w[layer]
                model.biases[layer] += vel_b[layer]
            else:
                model.weights[layer] -= config.learning_rate * acc_w[layer]
                model.biases[layer] -= config.learning_rate * acc_b[layer]
        loss_log.append((visits, acc_val, acc_nv, acc_vg))
        acc_w = acc_b = None
        acc_count = 0
        acc_val = acc_nv = acc_vg = 0.0

    for _ in range(config.epochs):
        order = rng.permutation(n)
        for anchor in order:
            visits += 1
            tup = mine_tuples(int(anchor), sub, cache, config, rng)
            if tup is None:
                skipped += 1
            else:
                mined_any = True
                idx = np.concatenate([[tup.anchor], tup.positives, tup.negatives])
                feats, trace = _forward_trace(model, sub.observations[idx])
                lv = combined_loss(
                    feats[0],
                    feats[1 : 1 + n_pos],
                    feats[1 + n_pos :],
                    sub.locations[tup.anchor],
                    sub.locations[tup.positives],
                    loss_cfg,
                    negative_locations=sub.locations[tup.negatives],
                    vg_pairs=_tuple_positive_pairs(sub, idx, config),
                )
                gw, gb = _backward_from_trace(model, trace, lv.feature_grads)
                if acc_w is None:
                    acc_w, acc_b = gw, gb
                else:
                    for layer in range(len(gw)):
                        acc_w[layer] += gw[layer]
                        acc_b[layer] += gb[layer]
                acc_count += 1
                acc_val += lv.value
                acc_nv += lv.nv_value
                acc_vg += lv.vg_value
                if acc_count == config.batch_anchors:
                    apply_update()
            if visits % config.cache_refresh_iters == 0:
                cache = forward_batch(model, sub.observations)
                refreshes += 1
    if acc_count > 0:
        apply_update()
    if not mined_any:
        raise TrainingError(
            "no anchor yielded a valid tuple; check r1/r2 against the scene geometry"
        )
    return TrainResult(
        model=model,
        lam=lam,
        loss_log=loss_log,
        anchor_visits=visits,
        skipped=skipped,
        cache_refreshes=refreshes,
    )


def save_model(model: EmbeddingModel, path) -> None:
    """Write a checkpoint: topology header plus flat full-precision params."""
    lines = [
        "# mapfeat model v1",
        "layer_sizes " + " ".join(str(s) for s in model.layer_sizes),
        f"activation {model.activation}",
        f"normalize {1 if model.normalize else 0}",
        f"lam {fmt_float(model.lam) if model.lam is not None else 'none'}",
        "params",
    ]
    for w, b in zip(model.weights, model.biases):
        lines.extend(fmt_float(v) for v in w.ravel())
        lines.extend(fmt_float(v) for v in b.ravel())
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_model(path) -> EmbeddingModel:
    """Read a checkpoint written by :func:`save_model`."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "# mapfeat model v1":
        raise ValueError(f"{path}: not a mapfeat model checkpoint")
    try:
        sizes = [int(v) for v in lines[1].split()[1:]]
        activation = lines[2].split()[1]
        normalize = lines[3].split()[1] == "1"
        lam_text = lines[4].split()[1]
        lam = None if lam_text == "none" else float(lam_text)
        if lines[5].strip() != "params":
            raise ValueError("missing params marker")
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed checkpoint header: {exc}") from None
    values = [float(v) for v in lines[6:] if v.strip()]
    expected = sum(
        sizes[k] * sizes[k + 1] + sizes[k + 1] for k in range(len(sizes) - 1)
    )
    if len(values) != expected:
        raise ValueError(f"{path}: expected {expected} parameters, found {len(values)}")
    weights, biases = [], []
    pos = 0
    for k in range(len(sizes) - 1):
        n_w = sizes[k] * sizes[k + 1]
        weights.append(np.array(values[pos : pos + n_w]).reshape(sizes[k], sizes[k + 1]))
        pos += n_w
        biases.append(np.array(values[pos : pos + sizes[k + 1]]))
        pos += sizes[k + 1]
    return EmbeddingModel(weights, biases, activation=activation, normalize=normalize, lam=lam)
