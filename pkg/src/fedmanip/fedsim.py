"""Federated fine-tuning loop on a surrogate low-rank-adapter classifier.

The model is a chain of linear layers with a frozen backbone and trainable
low-rank factors per layer: the effective weight of layer l is
``W0 + scale * (G + B @ A)`` where ``G`` is the accumulated global delta for
that layer, ``scale = alpha / rank`` (switchable off) and ``B @ A`` is the
agent's local low-rank increment.  Agents transmit the flattened
concatenation of their per-layer ``B @ A`` products; the server takes a
size-weighted mean and adds it to the global delta vector.  Everything is
full batch and closed form, so the whole loop is deterministic per seed and
gradients can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mathcore import SeededRng, as_matrix, as_vector

__all__ = [
    "Backbone",
    "Dataset",
    "GlobalState",
    "SurrogateModel",
    "TrainingDivergence",
    "UpdateVector",
    "aggregate",
    "apply_global",
    "dirichlet_partition",
    "evaluate",
    "flatten",
    "init_global",
    "local_train",
    "make_backbone",
    "synth_dataset",
    "train_factors",
    "unflatten",
]


class TrainingDivergence(RuntimeError):
    """Raised when a training loss turns non-finite (learning-rate blowup)."""


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Labelled feature matrix: ``features`` is (n, dim), labels in [0, C)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        feats = as_matrix(self.features)
        labels = np.asarray(self.labels)
        if feats.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if labels.shape != (feats.shape[0],):
            raise ValueError("labels must be one integer per sample")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError("labels out of range [0, num_classes)")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    @property
    def size(self) -> int:
        return self.features.shape[0]


def _simplex_means(num_classes: int, dim: int, separation: float) -> np.ndarray:
    """Class means at mutual distance ``separation``, deterministically.

    The C scaled standard-basis points are centered and re-expressed in an
    orthonormal basis of their span (C-1 dimensions), then embedded into the
    first C-1 coordinates of the target space.
    """
    if dim < num_classes - 1:
        raise ValueError(
            f"dim {dim} too small to place {num_classes} equidistant class means"
        )
    verts = (separation / np.sqrt(2.0)) * np.eye(num_classes)
    verts -= verts.mean(axis=0, keepdims=True)
    u, sing, _ = np.linalg.svd(verts, full_matrices=False)
    coords = u[:, : num_classes - 1] * sing[: num_classes - 1]
    means = np.zeros((num_classes, dim))
    means[:, : num_classes - 1] = coords
    return means


def synth_dataset(
    num_classes: int,
    dim: int,
    per_class: int,
    separation: float,
    rng: SeededRng,
    name: str = "synthetic",
) -> Dataset:
    """Gaussian blobs with unit covariance and equidistant class means.

    The means depend only on (num_classes, dim, separation), so independent
    draws (train pool, server test set) share the same class geometry.
    ``separation`` 0 collapses all means to the origin, which is useful for
    chance-level checks.
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if per_class < 1:
        raise ValueError("need at least one sample per class")
    if separation < 0:
        raise ValueError("separation must be nonnegative")
    means = _simplex_means(num_classes, dim, separation)
    gen = rng.generator
    feats = np.empty((num_classes * per_class, dim))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for c in range(num_classes):
        block = slice(c * per_class, (c + 1) * per_class)
        feats[block] = means[c] + gen.standard_normal((per_class, dim))
        labels[block] = c
    return Dataset(feats, labels, num_classes, name=name)


def dirichlet_partition(
    ds: Dataset,
    agents: int,
    concentration: float,
    rng: SeededRng,
    max_attempts: int = 1000,
) -> list[Dataset]:
    """Split a dataset into non-IID agent shards.

    For every class a proportion vector over agents is drawn from a
    symmetric Dirichlet; counts are apportioned by largest remainder and the
    shuffled class indices are handed out contiguously.  Draws where some
    agent ends up empty are rejected and resampled, so every returned shard
    has at least one sample.  The shards are disjoint and exhaustive.
    """
    if agents < 1:
        raise ValueError("need at least one agent")
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    if ds.size == 0:
        raise ValueError("cannot partition an empty dataset")
    gen = rng.generator
    class_indices = [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]
    for _ in range(max_attempts):
        assigned: list[list[np.ndarray]] = [[] for _ in range(agents)]
        for idxs in class_indices:
            if idxs.size == 0:
                continue
            props = gen.dirichlet(np.full(agents, concentration))
            raw = props * idxs.size
            counts = np.floor(raw).astype(int)
            short = idxs.size - counts.sum()
            if short > 0:
                # Largest remainders get the leftovers; ties at lower index.
                order = np.argsort(-(raw - counts), kind="stable")
                counts[order[:short]] += 1
            shuffled = idxs.copy()
            gen.shuffle(shuffled)
            start = 0
            for a in range(agents):
                assigned[a].append(shuffled[start : start + counts[a]])
                start += counts[a]
        sizes = [sum(part.size for part in parts) for parts in assigned]
        if min(sizes) >= 1:
            shards = []
            for a, parts in enumerate(assigned):
                take = np.sort(np.concatenate(parts))
                shards.append(
                    Dataset(
                        ds.features[take],
                        ds.labels[take],
                        ds.num_classes,
                        name=f"{ds.name}/agent-{a}",
                    )
                )
            return shards
    raise RuntimeError(
        f"could not draw a partition giving every one of {agents} agents "
        f"at least one sample in {max_attempts} attempts"
    )


# ---------------------------------------------------------------------------
# Surrogate model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Backbone:
    """Frozen part of the surrogate model, shared by all agents.

    ``w0`` holds one frozen (d, k) weight matrix per adapted layer, in
    forward order; the input dimension of layer l+1 equals the output
    dimension of layer l and the last output dimension is the class count.
    """

    w0: tuple[np.ndarray, ...]
    rank: int
    alpha: float
    dropout: float
    num_classes: int
    scaling_mode: str = "alpha_over_r"

    def __post_init__(self):
        if self.scaling_mode not in ("alpha_over_r", "none"):
            raise ValueError(f"unknown scaling mode {self.scaling_mode!r}")
        for w in self.w0:
            d, k = w.shape
            if self.rank > min(d, k) // 2:
                raise ValueError(
                    f"rank {self.rank} too large for layer shape {w.shape}; "
                    f"low-rank regime requires rank <= min(d, k) / 2"
                )
        if self.w0[-1].shape[0] != self.num_classes:
            raise ValueError("last layer must map to num_classes outputs")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.w0]

    @property
    def flat_dim(self) -> int:
        return sum(d * k for d, k in self.shapes)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank if self.scaling_mode == "alpha_over_r" else 1.0


@dataclass
class SurrogateModel:
    """Backbone plus one (A, B) low-rank factor pair per adapted layer."""

    backbone: Backbone
    lora_a: list[np.ndarray]
    lora_b: list[np.ndarray]

    def layer_deltas(self) -> list[np.ndarray]:
        return [b @ a for a, b in zip(self.lora_a, self.lora_b)]


def make_backbone(
    dim_in: int,
    num_classes: int,
    rank: int,
    alpha: float,
    dropout: float,
    rng: SeededRng,
    hidden_dims: tuple[int, ...] = (),
    scaling_mode: str = "alpha_over_r",
) -> Backbone:
    """Draw the frozen backbone once: per layer, W0 ~ N(0, 1/fan_in)."""
    dims = [dim_in, *hidden_dims, num_classes]
    gen = rng.generator
    w0 = []
    for k, d in zip(dims[:-1], dims[1:]):
        w0.append(gen.standard_normal((d, k)) / np.sqrt(k))
    return Backbone(tuple(w0), rank, alpha, dropout, num_classes, scaling_mode)


def init_local_model(
    backbone: Backbone, rng: SeededRng, a_init_std: float = 0.0
) -> SurrogateModel:
    """Fresh factors with B = 0, so the initial delta is zero.

    ``a_init_std`` 0 uses the fan-in rule A ~ N(0, 1/k) (the down-projection
    init low-rank adapters normally use); a positive value pins the standard
    deviation explicitly.  The A scale matters beyond symmetry breaking: the
    first factor-update magnitudes are proportional to it, so it sets how
    large one local session's increment is relative to the local gradient.
    """
    gen = rng.generator
    lora_a, lora_b = [], []
    for d, k in backbone.shapes:
        std = a_init_std if a_init_std > 0.0 else 1.0 / np.sqrt(k)
        lora_a.append(std * gen.standard_normal((backbone.rank, k)))
        lora_b.append(np.zeros((d, backbone.rank)))
    return SurrogateModel(backbone, lora_a, lora_b)


# ---------------------------------------------------------------------------
# Flat update vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UpdateVector:
    """One agent's transmitted update: flattened per-layer delta matrices.

    ``claimed_size`` is the dataset size the agent reports for weighting
    (adversaries lie).  ``is_malicious`` exists for the harness and metrics
    only; nothing on the server path may read it.
    """

    values: np.ndarray
    agent_id: int
    round: int
    claimed_size: int
    is_malicious: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", as_vector(self.values))
        if self.claimed_size < 1:
            raise ValueError("claimed_size must be a positive integer")


def flatten(layer_deltas: list[np.ndarray]) -> np.ndarray:
    """Concatenate row-major vectorizations of the per-layer deltas, layer 1..L."""
    return np.concatenate([np.ravel(d, order="C") for d in layer_deltas])


def unflatten(values: np.ndarray, shapes: list[tuple[int, int]]) -> list[np.ndarray]:
    """Inverse of :func:`flatten` for the given layer shapes."""
    values = as_vector(values)
    expected = sum(d * k for d, k in shapes)
    if values.shape[0] != expected:
        raise ValueError(
            f"flat vector has length {values.shape[0]}, layer shapes need {expected}"
        )
    out, offset = [], 0
    for d, k in shapes:
        out.append(values[offset : offset + d * k].reshape(d, k))
        offset += d * k
    return out


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _effective_weights(
    backbone: Backbone,
    global_delta: list[np.ndarray],
    model: SurrogateModel | None = None,
    row_masks: list[np.ndarray] | None = None,
) -> list[np.ndarray]:
    """Per-layer effective weights W0 + scale * adapter.

    Training-time dropout masks rows of the whole adapter (the accumulated
    global delta plus the local factor product): the adapter is one object
    at inference time, and masking all of it keeps the regularisation noise
    proportional to the adapter's size rather than to the freshly
    re-initialised local increment.
    """
    scale = backbone.scale
    weights = []
    for layer, w0 in enumerate(backbone.w0):
        delta = global_delta[layer]
        if model is not None:
            delta = delta + model.lora_b[layer] @ model.lora_a[layer]
            if row_masks is not None:
                delta = row_masks[layer][:, None] * delta
        weights.append(w0 + scale * delta)
    return weights


def _forward(weights: list[np.ndarray], x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    acts = [x]
    h = x
    for w in weights:
        h = h @ w.T
        acts.append(h)
    return h, acts


def _softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -float(log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def _backprop_layer_grads(
    weights: list[np.ndarray], acts: list[np.ndarray], dlogits: np.ndarray
) -> list[np.ndarray]:
    """Gradient of the loss with respect to each layer's effective weight."""
    grads: list[np.ndarray] = [np.empty(0)] * len(weights)
    dh = dlogits
    for layer in range(len(weights) - 1, -1, -1):
        grads[layer] = dh.T @ acts[layer]
        if layer > 0:
            dh = dh @ weights[layer]
    return grads


def loss_and_grad_flat(
    backbone: Backbone, w_flat: np.ndarray, ds: Dataset
) -> tuple[float, np.ndarray]:
    """Cross-entropy loss at global parameters ``w_flat`` and its gradient.

    The gradient is taken with respect to the flat delta vector itself
    (the ``scale`` factor from the effective-weight map is included), which
    is what the adversary's objective differentiates through.
    """
    global_delta = unflatten(w_flat, backbone.shapes)
    weights = _effective_weights(backbone, global_delta)
    logits, acts = _forward(weights, ds.features)
    loss, dlogits = _softmax_xent(logits, ds.labels)
    layer_grads = _backprop_layer_grads(weights, acts, dlogits)
    grad = flatten([backbone.scale * g for g in layer_grads])
    return loss, grad


def train_factors(
    backbone: Backbone,
    global_delta: list[np.ndarray],
    ds: Dataset,
    epochs: int,
    lr: float,
    rng: SeededRng,
    dropout_enabled: bool = False,
    a_init_std: float = 0.0,
) -> tuple[SurrogateModel, list[float]]:
    """Full-batch gradient descent on the local factors; returns loss trace.

    One epoch is one full-batch step.  When dropout is enabled, a fresh
    Bernoulli row mask over each layer's ``B @ A`` product is drawn per epoch
    and the kept rows are rescaled by 1/(1-p) (training only).
    """
    model = init_local_model(backbone, rng.split("init"), a_init_std)
    gen = rng.split("dropout").generator
    scale = backbone.scale
    losses = []
    for epoch in range(epochs):
        row_masks = None
        if dropout_enabled and backbone.dropout > 0.0:
            keep = 1.0 - backbone.dropout
            row_masks = [
                (gen.random(d) < keep).astype(np.float64) / keep
                for d, _ in backbone.shapes
            ]
        weights = _effective_weights(backbone, global_delta, model, row_masks)
        logits, acts = _forward(weights, ds.features)
        loss, dlogits = _softmax_xent(logits, ds.labels)
        if not np.isfinite(loss):
            raise TrainingDivergence(
                f"non-finite training loss at epoch {epoch} (lr={lr})"
            )
        losses.append(loss)
        layer_grads = _backprop_layer_grads(weights, acts, dlogits)
        for layer, g in enumerate(layer_grads):
            g_delta = scale * g
            if row_masks is not None:
                g_delta = row_masks[layer][:, None] * g_delta
            grad_b = g_delta @ model.lora_a[layer].T
            grad_a = model.lora_b[layer].T @ g_delta
            model.lora_b[layer] -= lr * grad_b
            model.lora_a[layer] -= lr * grad_a
    return model, losses


# ---------------------------------------------------------------------------
# Global state and the server side
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GlobalState:
    """Server-held flat global delta vector plus the frozen backbone."""

    backbone: Backbone
    w: np.ndarray
    eta: float
    round: int = 0

    def __post_init__(self):
        object.__setattr__(self, "w", as_vector(self.w))
        if self.w.shape[0] != self.backbone.flat_dim:
            raise ValueError("global vector length does not match backbone shapes")


def init_global(backbone: Backbone, eta: float) -> GlobalState:
    return GlobalState(backbone, np.zeros(backbone.flat_dim), eta, round=0)


def local_train(
    global_state: GlobalState,
    local: Dataset,
    epochs: int,
    lr: float,
    rng: SeededRng,
    agent_id: int,
    dropout_enabled: bool = False,
    a_init_std: float = 0.0,
) -> UpdateVector:
    """Run local epochs from the broadcast state and return the increment."""
    global_delta = unflatten(global_state.w, global_state.backbone.shapes)
    model, _ = train_factors(
        global_state.backbone, global_delta, local, epochs, lr, rng,
        dropout_enabled, a_init_std,
    )
    return UpdateVector(
        flatten(model.layer_deltas()),
        agent_id=agent_id,
        round=global_state.round + 1,
        claimed_size=local.size,
    )


def aggregate(updates: list[UpdateVector]) -> np.ndarray:
    """Claimed-size-weighted mean of the updates.

    The reduction runs in ascending ``agent_id`` order regardless of the
    order the list arrives in, so the result is permutation invariant down
    to the bit.
    """
    if not updates:
        raise ValueError("cannot aggregate an empty update list")
    ordered = sorted(updates, key=lambda u: u.agent_id)
    length = ordered[0].values.shape[0]
    total = 0
    for u in ordered:
        if u.values.shape[0] != length:
            raise ValueError("update length mismatch")
        if u.claimed_size <= 0:
            raise ValueError("claimed size must be positive")
        total += u.claimed_size
    out = np.zeros(length)
    for u in ordered:
        out += (u.claimed_size / total) * u.values
    return out


def apply_global(g: GlobalState, delta: np.ndarray, eta: float | None = None) -> GlobalState:
    """One server step: w <- w + eta * delta, round incremented."""
    delta = as_vector(delta)
    if delta.shape[0] != g.w.shape[0]:
        raise ValueError("delta length does not match global state")
    step = g.eta if eta is None else eta
    return replace(g, w=g.w + step * delta, round=g.round + 1)


def evaluate(g: GlobalState, ds: Dataset) -> float:
    """Fraction of argmax-correct predictions of the global model on ``ds``."""
    if ds.size == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    weights = _effective_weights(g.backbone, unflatten(g.w, g.backbone.shapes))
    logits, _ = _forward(weights, ds.features)
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == ds.labels))
