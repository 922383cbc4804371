"""Variational graph autoencoder over the correlation graph.

Two graph-convolution layers (shared first layer, separate mean and
log-sigma heads), a reparameterised latent, and an inner-product decoder,
trained by full-batch gradient ascent on the evidence lower bound.  The
forward pass and all gradients are written out by hand in numpy so the
whole training run is a deterministic function of the seed and can be
checked against central finite differences.

The signed cosine adjacency plays two roles with two clampings: propagation
uses max(A, 0) + I (keeps the degree matrix positive definite), while the
reconstruction target is the affine map (A + 1) / 2, which turns signed
similarities into soft Bernoulli edge targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphcraft import CorrelationGraph
from .mathcore import SeededRng, as_matrix

__all__ = [
    "VgaeParams",
    "VgaeState",
    "decode",
    "elbo",
    "encode",
    "normalize_adjacency",
    "train_vgae",
]

EDGE_PROB_FLOOR = 1e-7
#: Saturation bounds keeping exp() finite on degenerate (near-binary) graphs;
#: the backward pass masks the clamped entries, so gradients stay exact.
LOG_SIGMA_BOUND = 8.0
LOGIT_BOUND = 30.0

DEFAULT_HIDDEN1 = 64
DEFAULT_HIDDEN2 = 32
DEFAULT_EPOCHS = 30
DEFAULT_LR = 0.01


@dataclass
class VgaeParams:
    """Trainable weights: first layer plus the two variational heads."""

    w1: np.ndarray
    w_mu: np.ndarray
    w_sigma: np.ndarray


@dataclass
class VgaeState:
    """Weights and the quantities of the final forward pass after training."""

    params: VgaeParams
    mu: np.ndarray
    log_sigma: np.ndarray
    z: np.ndarray
    a_hat: np.ndarray
    elbo_trace: np.ndarray


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Symmetric propagation matrix D^{-1/2} (max(A,0) + I) D^{-1/2}."""
    a = as_matrix(adjacency)
    n, m = a.shape
    if n != m:
        raise ValueError("adjacency must be square")
    if float(np.max(np.abs(a - a.T))) > 1e-9 * max(1.0, float(np.max(np.abs(a)))):
        raise ValueError("adjacency must be symmetric")
    a_tilde = np.clip(a, 0.0, None) + np.eye(n)
    degrees = a_tilde.sum(axis=1)
    if degrees.min() <= 0.0:
        raise AssertionError("degree must be positive after clamping (has +I)")
    inv_sqrt = 1.0 / np.sqrt(degrees)
    p = a_tilde * inv_sqrt[:, None] * inv_sqrt[None, :]
    return 0.5 * (p + p.T)


def _forward(
    x: np.ndarray,
    p: np.ndarray,
    params: VgaeParams,
    eps: np.ndarray | None,
) -> dict:
    """Full forward pass; ``eps`` None means the noise-free (Z = mu) path."""
    px = p @ x
    u1 = px @ params.w1
    h = np.maximum(u1, 0.0)
    ph = p @ h
    mu = ph @ params.w_mu
    raw_log_sigma = ph @ params.w_sigma
    log_sigma = np.clip(raw_log_sigma, -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND)
    sigma = np.exp(log_sigma)
    z = mu if eps is None else mu + sigma * eps
    raw_logits = z @ z.T
    raw_logits = 0.5 * (raw_logits + raw_logits.T)
    logits = np.clip(raw_logits, -LOGIT_BOUND, LOGIT_BOUND)
    a_hat = 1.0 / (1.0 + np.exp(-logits))
    return {
        "px": px, "u1": u1, "h": h, "ph": ph,
        "mu": mu, "log_sigma": log_sigma, "sigma": sigma,
        "ls_mask": np.abs(raw_log_sigma) < LOG_SIGMA_BOUND,
        "logit_mask": np.abs(raw_logits) < LOGIT_BOUND,
        "eps": eps, "z": z, "a_hat": a_hat,
    }


def encode(
    features: np.ndarray,
    propagation: np.ndarray,
    params: VgaeParams,
    rng: SeededRng,
    deterministic: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map node features X = F^T through the encoder.

    Returns (Z, mu, log_sigma) where Z = mu + exp(log_sigma) * eps with
    standard-normal eps drawn from ``rng``; ``deterministic`` short-circuits
    the noise (the log-sigma -> -inf limit) so Z equals mu exactly.
    """
    x = as_matrix(features).T
    nodes = x.shape[0]
    eps = None if deterministic else rng.generator.standard_normal(
        (nodes, params.w_mu.shape[1])
    )
    cache = _forward(x, as_matrix(propagation), params, eps)
    return cache["z"], cache["mu"], cache["log_sigma"]


def decode(z: np.ndarray) -> np.ndarray:
    """Inner-product decoder: sigmoid(Z Z^T), exactly symmetric."""
    z = as_matrix(z)
    logits = z @ z.T
    logits = 0.5 * (logits + logits.T)
    return 1.0 / (1.0 + np.exp(-logits))


def elbo(
    a_hat: np.ndarray,
    a_target: np.ndarray,
    mu: np.ndarray,
    log_sigma: np.ndarray,
) -> float:
    """Evidence lower bound: pairwise Bernoulli likelihood minus KL.

    The reconstruction term runs over unordered node pairs (diagonal
    excluded, matching the zero-diagonal adjacency convention); edge
    probabilities are clamped away from {0, 1} before the logs.
    """
    a_hat = as_matrix(a_hat)
    a_target = as_matrix(a_target)
    if a_hat.shape != a_target.shape:
        raise ValueError("reconstruction and target shapes differ")
    n = a_hat.shape[0]
    iu = np.triu_indices(n, k=1)
    probs = np.clip(a_hat[iu], EDGE_PROB_FLOOR, 1.0 - EDGE_PROB_FLOOR)
    targets = a_target[iu]
    recon = float(np.sum(targets * np.log(probs) + (1.0 - targets) * np.log(1.0 - probs)))
    sigma_sq = np.exp(2.0 * np.asarray(log_sigma))
    kl = 0.5 * float(np.sum(np.asarray(mu) ** 2 + sigma_sq - 2.0 * np.asarray(log_sigma) - 1.0))
    return recon - kl


def _objective_and_grads(
    params: VgaeParams,
    x: np.ndarray,
    p: np.ndarray,
    a_target: np.ndarray,
    eps: np.ndarray | None,
) -> tuple[float, VgaeParams, dict]:
    """ELBO value and its gradient with respect to every weight matrix.

    The reconstruction gradient uses the usual sigmoid cancellation
    (target - a_hat), i.e. it is exact wherever the clamp in :func:`elbo`
    is inactive, which holds on every graph this model trains on.
    """
    cache = _forward(x, p, params, eps)
    value = elbo(cache["a_hat"], a_target, cache["mu"], cache["log_sigma"])

    n = x.shape[0]
    off_diag = 1.0 - np.eye(n)
    # recon = 1/2 sum_{m != m'} [...], so each ordered pair carries weight 1/2.
    d_logits = 0.5 * (a_target - cache["a_hat"]) * off_diag * cache["logit_mask"]
    d_z = 2.0 * d_logits @ cache["z"]

    d_mu = d_z - cache["mu"]
    if eps is None:
        d_log_sigma = -(cache["sigma"] ** 2 - 1.0)
    else:
        d_log_sigma = d_z * eps * cache["sigma"] - (cache["sigma"] ** 2 - 1.0)
    d_log_sigma = d_log_sigma * cache["ls_mask"]

    d_w_mu = cache["ph"].T @ d_mu
    d_w_sigma = cache["ph"].T @ d_log_sigma
    d_h = p @ (d_mu @ params.w_mu.T) + p @ (d_log_sigma @ params.w_sigma.T)
    d_u1 = d_h * (cache["u1"] > 0.0)
    d_w1 = cache["px"].T @ d_u1
    return value, VgaeParams(d_w1, d_w_mu, d_w_sigma), cache


def init_params(
    input_dim: int, hidden1: int, hidden2: int, rng: SeededRng
) -> VgaeParams:
    """Weights ~ N(0, 1/fan_in)."""
    gen = rng.generator
    w1 = gen.standard_normal((input_dim, hidden1)) / np.sqrt(input_dim)
    w_mu = gen.standard_normal((hidden1, hidden2)) / np.sqrt(hidden1)
    w_sigma = gen.standard_normal((hidden1, hidden2)) / np.sqrt(hidden1)
    return VgaeParams(w1, w_mu, w_sigma)


def train_vgae(
    graph: CorrelationGraph,
    epochs: int = DEFAULT_EPOCHS,
    lr: float = DEFAULT_LR,
    rng: SeededRng | None = None,
    hidden1: int = DEFAULT_HIDDEN1,
    hidden2: int = DEFAULT_HIDDEN2,
    features_mode: str = "updates",
    infer_mode: str = "mean",
) -> tuple[VgaeState, np.ndarray]:
    """Train on a correlation graph and return the reconstructed adjacency.

    Node features are the transposed feature matrix (each node sees its
    coordinate's values across the observed updates); ``features_mode
    "identity"`` swaps in one-hot features for the featureless ablation.
    After training, the returned adjacency is decoded from ``mu``
    (``infer_mode "mean"``, noise-free) or from the last sampled ``z``.
    """
    if rng is None:
        rng = SeededRng(0)
    if features_mode == "updates":
        x = graph.features.T.copy()
    elif features_mode == "identity":
        x = np.eye(graph.num_nodes)
    else:
        raise ValueError(f"unknown features mode {features_mode!r}")
    if infer_mode not in ("mean", "sample"):
        raise ValueError(f"unknown inference mode {infer_mode!r}")

    p = normalize_adjacency(graph.adjacency)
    a_target = 0.5 * (graph.adjacency + 1.0)
    np.fill_diagonal(a_target, 0.0)  # diagonal never enters the pair sums
    params = init_params(x.shape[1], hidden1, hidden2, rng.split("init"))
    noise_gen = rng.split("noise").generator

    nodes, latent = graph.num_nodes, hidden2
    trace = []
    cache = None
    for epoch in range(epochs):
        eps = noise_gen.standard_normal((nodes, latent))
        value, grads, cache = _objective_and_grads(params, x, p, a_target, eps)
        if not np.isfinite(value):
            raise RuntimeError(f"non-finite ELBO at epoch {epoch} (lr={lr})")
        trace.append(value)
        params.w1 += lr * grads.w1
        params.w_mu += lr * grads.w_mu
        params.w_sigma += lr * grads.w_sigma

    final_eps = None
    if infer_mode == "sample" and epochs > 0 and cache is not None:
        final_eps = cache["eps"]
    final = _forward(x, p, params, final_eps)
    state = VgaeState(
        params=params,
        mu=final["mu"],
        log_sigma=final["log_sigma"],
        z=final["z"],
        a_hat=final["a_hat"],
        elbo_trace=np.asarray(trace),
    )
    return state, final["a_hat"]
