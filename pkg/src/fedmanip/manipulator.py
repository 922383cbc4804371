"""Attack optimisation core: stealth-constrained malicious update synthesis.

Per communication round the adversary observes a subset of benign updates,
builds the correlation graph, trains the autoencoder, spectrally
resynthesises a starting update, and then refines it by gradient ascent on
an augmented Lagrangian: the surrogate global loss minus multiplier and
quadratic-penalty terms for the two stealth constraints (Euclidean distance
to the predicted global update, cosine-similarity aggregate against the
observed benign updates).  The dual multipliers take one projected step per
round and persist across rounds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import graphcraft, gst, vgae
from .fedsim import Backbone, Dataset, GlobalState, UpdateVector, loss_and_grad_flat
from .mathcore import SeededRng, as_vector, cosine

__all__ = [
    "AdversaryState",
    "AttackSettings",
    "DualState",
    "StealthReport",
    "SurrogateObjective",
    "augmented_lagrangian",
    "dual_update",
    "estimate_thresholds",
    "inner_maximize",
    "nearest_rank_percentile",
    "predict_global",
    "run_augmp_round",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DualState:
    """Multipliers, penalties and thresholds of the stealth constraints."""

    lam: float = 0.0
    theta: float = 0.0
    rho_lam: float = 1.0
    rho_theta: float = 1.0
    step: float = 0.05
    d_threshold: float = 1.0
    sim_threshold: float = 0.9
    round: int = 0

    def __post_init__(self):
        if self.lam < 0.0 or self.theta < 0.0:
            raise ValueError("dual variables must be nonnegative")
        if self.rho_lam <= 0.0 or self.rho_theta <= 0.0:
            raise ValueError("penalty parameters must be positive")
        if self.step <= 0.0:
            raise ValueError("dual step size must be positive")


@dataclass(frozen=True)
class StealthReport:
    """Self-reported stealth metrics of one submitted malicious update."""

    distance: float
    similarity: float
    d_threshold: float
    sim_threshold: float

    @property
    def distance_ok(self) -> bool:
        return self.distance <= self.d_threshold

    @property
    def similarity_ok(self) -> bool:
        return self.similarity <= self.sim_threshold


@dataclass(frozen=True)
class SurrogateObjective:
    """Adversary-held loss: evaluated on its own split at predicted weights.

    ``loss_and_grad`` maps a candidate global delta to the surrogate loss at
    ``w_prev + eta * delta`` and the gradient with respect to the delta (the
    server learning rate is chained in here).
    """

    backbone: Backbone
    w_prev: np.ndarray
    eta: float
    eval_set: Dataset

    def loss_and_grad(self, delta_g: np.ndarray) -> tuple[float, np.ndarray]:
        loss, grad = loss_and_grad_flat(
            self.backbone, self.w_prev + self.eta * delta_g, self.eval_set
        )
        return loss, self.eta * grad


def nearest_rank_percentile(values, q: float) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest value."""
    values = np.sort(as_vector(values))
    n = values.shape[0]
    if n == 0:
        raise ValueError("percentile of an empty sample")
    rank = int(np.ceil(q / 100.0 * n))
    rank = min(max(rank, 1), n)
    return float(values[rank - 1])


def estimate_thresholds(
    distances, pair_similarities, margin: float, percentile: float
) -> tuple[float, float]:
    """Thresholds from the previous round's benign statistics.

    Distance threshold is (1 + margin) times the largest benign distance to
    the global update; the similarity threshold is the nearest-rank
    percentile of the benign pairwise similarities.  Round one has no prior
    statistics and must use configured defaults instead.
    """
    distances = as_vector(distances)
    if distances.shape[0] < 2:
        raise ValueError("need at least two benign distances from the prior round")
    d_threshold = (1.0 + margin) * float(distances.max())
    sim_threshold = nearest_rank_percentile(pair_similarities, percentile)
    return d_threshold, sim_threshold


def predict_global(
    observed: list[UpdateVector], own_values: np.ndarray, own_claimed: int
) -> np.ndarray:
    """Adversary's forecast of the aggregated update it is about to cause.

    Claimed-size-weighted mean over the observed benign updates plus the
    adversary's own candidate; exact when the adversary sees every other
    participant, otherwise the forecast gap shows up in the metrics.
    """
    if not observed:
        raise ValueError("cannot predict aggregation with nothing observed")
    own_values = as_vector(own_values)
    total = own_claimed + sum(u.claimed_size for u in observed)
    out = (own_claimed / total) * own_values
    for u in sorted(observed, key=lambda u: u.agent_id):
        if u.values.shape[0] != own_values.shape[0]:
            raise ValueError("update length mismatch")
        out += (u.claimed_size / total) * u.values
    return out


@dataclass
class _ObjectiveTerms:
    value: float
    grad: np.ndarray
    loss: float
    distance: float
    similarity: float


class _AttackObjective:
    """Augmented Lagrangian of one adversary for one round, differentiable.

    The distance constraint chains through the aggregation forecast: with
    own weight a, the forecast is c + a * delta, so the deviation is
    (1 - a) * delta - c and the loss chain factor is a.  The similarity
    aggregate uses the hard max (or mean) as its value; for the max policy
    the gradient is taken through a log-sum-exp smoothing so ascent does not
    chatter between near-tied benign partners.
    """

    def __init__(
        self,
        dual: DualState,
        surrogate: SurrogateObjective,
        observed: list[UpdateVector],
        own_claimed: int,
        similarity_policy: str = "max",
        penalty_form: str = "paper",
        lse_temperature: float = 50.0,
        al_penalty_off: bool = False,
        coords: np.ndarray | None = None,
    ):
        if similarity_policy not in ("max", "mean"):
            raise ValueError(f"unknown similarity policy {similarity_policy!r}")
        if penalty_form not in ("paper", "hinge"):
            raise ValueError(f"unknown penalty form {penalty_form!r}")
        self.dual = dual
        self.surrogate = surrogate
        self.observed = sorted(observed, key=lambda u: u.agent_id)
        self.own_claimed = own_claimed
        self.similarity_policy = similarity_policy
        self.penalty_form = penalty_form
        self.lse_temperature = lse_temperature
        self.al_penalty_off = al_penalty_off
        self.coords = None if coords is None else np.asarray(coords, dtype=np.int64)
        total = own_claimed + sum(u.claimed_size for u in self.observed)
        self.own_weight = own_claimed / total
        benign_part = np.zeros_like(self.observed[0].values)
        for u in self.observed:
            benign_part += (u.claimed_size / total) * u.values
        self.benign_part = benign_part

    def _similarity(self, delta: np.ndarray) -> tuple[float, np.ndarray]:
        norm = float(np.linalg.norm(delta))
        if norm == 0.0:
            return 0.0, np.zeros_like(delta)
        sims = np.array([cosine(u.values, delta) for u in self.observed])
        grads = []
        for u in self.observed:
            b = u.values
            nb = float(np.linalg.norm(b))
            if nb == 0.0:
                grads.append(np.zeros_like(delta))
                continue
            c = float(np.dot(b, delta) / (nb * norm))
            grads.append(b / (nb * norm) - c * delta / (norm * norm))
        if self.similarity_policy == "mean":
            return float(sims.mean()), np.mean(grads, axis=0)
        value = float(sims.max())
        scaled = self.lse_temperature * (sims - sims.max())
        weights = np.exp(scaled)
        weights /= weights.sum()
        grad = np.zeros_like(delta)
        for w, g in zip(weights, grads):
            grad += w * g
        return value, grad

    def terms(self, delta: np.ndarray) -> _ObjectiveTerms:
        delta = as_vector(delta)
        predicted = self.benign_part + self.own_weight * delta
        loss, grad_loss_pred = self.surrogate.loss_and_grad(predicted)
        grad_value = self.own_weight * grad_loss_pred

        deviation = delta - predicted
        distance = float(np.linalg.norm(deviation))
        if distance > 0.0:
            grad_distance = (1.0 - self.own_weight) * deviation / distance
        else:
            grad_distance = np.zeros_like(delta)

        similarity, grad_similarity = self._similarity(delta)

        value = loss
        if not self.al_penalty_off:
            viol_d = distance - self.dual.d_threshold
            viol_s = similarity - self.dual.sim_threshold
            if self.penalty_form == "paper":
                pen_d, pen_s = viol_d, viol_s
            else:
                pen_d, pen_s = max(viol_d, 0.0), max(viol_s, 0.0)
            value -= self.dual.lam * viol_d + self.dual.theta * viol_s
            value -= 0.5 * self.dual.rho_lam * pen_d**2
            value -= 0.5 * self.dual.rho_theta * pen_s**2
            grad_value = (
                grad_value
                - (self.dual.lam + self.dual.rho_lam * pen_d) * grad_distance
                - (self.dual.theta + self.dual.rho_theta * pen_s) * grad_similarity
            )
        if self.coords is not None:
            masked = np.zeros_like(grad_value)
            masked[self.coords] = grad_value[self.coords]
            grad_value = masked
        return _ObjectiveTerms(value, grad_value, loss, distance, similarity)


def augmented_lagrangian(
    delta: np.ndarray,
    dual: DualState,
    surrogate: SurrogateObjective,
    observed: list[UpdateVector],
    own_claimed: int,
    **options,
) -> tuple[float, np.ndarray]:
    """Value and gradient of the stealth-penalised adversarial objective."""
    objective = _AttackObjective(dual, surrogate, observed, own_claimed, **options)
    t = objective.terms(delta)
    return t.value, t.grad


def inner_maximize(
    init: np.ndarray,
    dual: DualState,
    surrogate: SurrogateObjective,
    observed: list[UpdateVector],
    own_claimed: int,
    steps: int = 50,
    step_size: float = 0.1,
    grad_clip: float = 10.0,
    step_scale: float = 1.0,
    trace_out: list | None = None,
    **options,
) -> np.ndarray:
    """Gradient ascent from the spectral initialisation; best iterate wins.

    The gradient is clipped to ``grad_clip`` in norm per step and the step
    length is ``step_size * step_scale``; callers tie ``step_scale`` to the
    stealth radius so the search stays resolved even when the constraint set
    shrinks by orders of magnitude as training converges.  A non-finite
    objective value rolls back to the last finite iterate and stops.
    """
    if steps < 1:
        raise ValueError("need at least one ascent step")
    if step_size < 0:
        raise ValueError("step size must be nonnegative")
    if step_scale <= 0:
        raise ValueError("step scale must be positive")
    objective = _AttackObjective(dual, surrogate, observed, own_claimed, **options)
    x = as_vector(init).copy()
    t = objective.terms(x)
    if trace_out is not None:
        trace_out.append(t.value)
    best, best_value = x.copy(), t.value
    for _ in range(steps):
        grad = t.grad
        norm = float(np.linalg.norm(grad))
        if norm > grad_clip:
            grad = grad * (grad_clip / norm)
        candidate = x + step_size * step_scale * grad
        t_next = objective.terms(candidate)
        if not np.isfinite(t_next.value):
            log.warning(
                "inner maximisation hit a non-finite objective; "
                "rolling back to the last finite iterate"
            )
            break
        x, t = candidate, t_next
        if trace_out is not None:
            trace_out.append(t.value)
        if t.value > best_value:
            best, best_value = x.copy(), t.value
    return best


def project_ball(
    x: np.ndarray,
    center: np.ndarray,
    radius: float,
    coords: np.ndarray | None = None,
) -> np.ndarray:
    """Pull a point into a Euclidean ball, moving only selected coordinates.

    The unselected coordinates stay exactly where they are (they carry the
    benign-mean filling); the selected block is shrunk toward the center
    just enough for the whole vector to satisfy the radius, when possible.
    """
    offset = x - center
    if float(np.linalg.norm(offset)) <= radius:
        return x.copy()
    if coords is None:
        return center + offset * (radius / float(np.linalg.norm(offset)))
    mask = np.zeros(x.shape[0], dtype=bool)
    mask[np.asarray(coords, dtype=np.int64)] = True
    fixed_norm_sq = float(np.sum(offset[~mask] ** 2))
    sel_norm = float(np.linalg.norm(offset[mask]))
    budget_sq = max(0.0, radius**2 - fixed_norm_sq)
    scale = np.sqrt(budget_sq) / sel_norm if sel_norm > 0.0 else 0.0
    if scale >= 1.0:
        return x.copy()
    out = x.copy()
    out[mask] = center[mask] + scale * offset[mask]
    return out


def _forecast_ball(
    observed: list[UpdateVector], own_claimed: int, target: float
) -> tuple[np.ndarray, float]:
    """Center and radius, in update space, of the forecast distance ball.

    The constraint |delta - forecast(delta)| <= target with forecast
    c + a * delta is the plain ball |delta - c/(1-a)| <= target/(1-a).
    """
    total = own_claimed + sum(u.claimed_size for u in observed)
    own_weight = own_claimed / total
    benign_part = np.zeros_like(observed[0].values)
    for u in sorted(observed, key=lambda u: u.agent_id):
        benign_part += (u.claimed_size / total) * u.values
    return benign_part / (1.0 - own_weight), target / (1.0 - own_weight)


def restore_feasibility(
    init: np.ndarray,
    observed: list[UpdateVector],
    own_claimed: int,
    target: float,
    coords: np.ndarray | None = None,
    slack: float = 0.9,
) -> np.ndarray:
    """Shrink the initialisation's deviation into the distance ball.

    The spectral synthesis controls the direction of the candidate update
    but says nothing about its magnitude relative to the stealth radius, so
    before refinement the deviation from the forecast aggregate is rescaled
    to ``slack * target`` whenever it starts outside.  Only the optimisable
    coordinates move; the benign-mean filling of the rest stays untouched.
    """
    center, radius = _forecast_ball(observed, own_claimed, target)
    return project_ball(init, center, slack * radius, coords)


def _shared_spread_direction(observed: list[UpdateVector], round_index: int) -> np.ndarray:
    """Unit vector every coalition member derives from shared observations.

    Seeded by a digest of the observed benign mean, so all adversaries that
    see the same updates compute the same direction without communicating.
    """
    import hashlib

    mean = np.mean([u.values for u in observed], axis=0)
    digest = hashlib.sha256(mean.tobytes() + str(round_index).encode()).digest()
    gen = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "big")))
    direction = gen.standard_normal(mean.shape[0])
    return direction / float(np.linalg.norm(direction))


def diversify_deviation(
    x: np.ndarray,
    center: np.ndarray,
    spread: float,
    direction: np.ndarray,
    sign: float,
    coords: np.ndarray | None = None,
) -> np.ndarray:
    """Rotate the deviation partly onto a shared direction, sign-alternated.

    Independent adversaries running the identical algorithm end up pushing
    along nearly the same loss-ascent direction, and that mutual alignment
    is exactly what a pairwise-similarity screen catches.  Mixing a
    ``spread`` fraction of the deviation onto a direction derived from the
    shared observations, with the sign keyed to the adversary index, caps
    the coalition's internal cosine near 1 - 2 * spread^2 while the
    sign-alternating components cancel out of the aggregate.  Norms are
    preserved, so the distance constraint is untouched.
    """
    if spread <= 0.0:
        return x.copy()
    mask = None
    if coords is not None:
        mask = np.zeros(x.shape[0], dtype=bool)
        mask[np.asarray(coords, dtype=np.int64)] = True
    offset = x - center
    work = offset if mask is None else offset * mask
    norm = float(np.linalg.norm(work))
    if norm == 0.0:
        return x.copy()
    axis = direction if mask is None else direction * mask
    axis = axis - (float(axis @ work) / norm**2) * work
    axis_norm = float(np.linalg.norm(axis))
    if axis_norm == 0.0:
        return x.copy()
    axis = axis / axis_norm
    mixed = np.sqrt(1.0 - spread**2) * work + sign * spread * norm * axis
    out = x.copy()
    if mask is None:
        return center + mixed
    out[mask] = center[mask] + mixed[mask]
    return out


def _cap_similarity(
    x: np.ndarray,
    references: list[np.ndarray],
    cap: float,
    coords: np.ndarray | None = None,
    sweeps: int = 4,
) -> np.ndarray:
    """Reduce the worst cosine against the references to at most ``cap``.

    Norm-preserving: the component along the offending reference is lowered
    and the orthogonal remainder rescaled, so the distance constraints are
    disturbed as little as possible.  Restricted to the optimisable
    coordinate block when one is given.
    """
    mask = None
    if coords is not None:
        mask = np.zeros(x.shape[0], dtype=bool)
        mask[np.asarray(coords, dtype=np.int64)] = True
    out = x.copy()
    for _ in range(sweeps):
        worst, worst_ref = cap, None
        for ref in references:
            c = cosine(ref, out)
            if c > worst:
                worst, worst_ref = c, ref
        if worst_ref is None:
            break
        work = out if mask is None else out * mask
        ref = worst_ref if mask is None else worst_ref * mask
        ref_norm = float(np.linalg.norm(ref))
        norm = float(np.linalg.norm(work))
        if ref_norm == 0.0 or norm == 0.0:
            break
        unit = ref / ref_norm
        along = float(work @ unit)
        ortho = work - along * unit
        ortho_norm = float(np.linalg.norm(ortho))
        target_along = cap * norm
        if ortho_norm == 0.0:
            break
        ortho = ortho * (np.sqrt(max(norm**2 - target_along**2, 0.0)) / ortho_norm)
        fixed = target_along * unit + ortho
        if mask is None:
            out = fixed
        else:
            out[mask] = fixed[mask]
    return out


def dual_update(dual: DualState, distance: float, similarity: float) -> DualState:
    """Projected multiplier step for both constraints (Moreau projection)."""
    lam = max(0.0, dual.lam + dual.step * (distance - dual.d_threshold))
    theta = max(0.0, dual.theta + dual.step * (similarity - dual.sim_threshold))
    return replace(dual, lam=lam, theta=theta, round=dual.round + 1)


# ---------------------------------------------------------------------------
# Per-round orchestration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackSettings:
    """Tunable knobs of the synthesis pipeline."""

    visibility: float = 1.0
    select_dim: int = 128
    select_policy: str = "variance-top"
    row_policy: str = "random"
    vgae_epochs: int = vgae.DEFAULT_EPOCHS
    vgae_lr: float = vgae.DEFAULT_LR
    vgae_hidden1: int = vgae.DEFAULT_HIDDEN1
    vgae_hidden2: int = vgae.DEFAULT_HIDDEN2
    vgae_features: str = "updates"
    vgae_infer: str = "mean"
    inner_steps: int = 50
    inner_step_size: float = 0.1
    grad_clip: float = 10.0
    similarity_policy: str = "max"
    penalty_form: str = "paper"
    lse_temperature: float = 50.0
    al_penalty_off: bool = False
    grl_off: bool = False
    # Constraint-target plumbing: the adversary enforces margined versions of
    # the tighter of the broadcast thresholds and its own estimate of the
    # current-round benign statistics (it observes the benign population, so
    # it can recompute the same max-distance and percentile the server uses).
    distance_margin: float = 0.7
    similarity_margin: float = 0.05
    threshold_margin: float = 0.0
    threshold_percentile: float = 95.0
    rho_lambda: float = 1.0
    rho_theta: float = 1.0
    # Anticipation of the server's per-round screen: the submitted update is
    # finally projected into current_band_margin times the benign band the
    # adversary measures around the previous global update, and coalition
    # members spread their deviations apart by sibling_spread.
    current_band_margin: float = 0.9
    sibling_spread: float = 0.55


def _internal_targets(
    observed: list[UpdateVector],
    broadcast: tuple[float, float],
    settings: AttackSettings,
) -> tuple[float, float]:
    """The adversary's own working constraint thresholds for one round.

    The distance side margins the broadcast threshold directly (the final
    projection guarantees the submitted update respects it; the margin
    absorbs the unobservable sibling adversaries' shift of the realised
    aggregate).  The similarity side additionally caps against the
    adversary's own estimate of the current-round benign percentile, because
    benign alignment is far more volatile round over round than the
    dispersion radius.
    """
    pairs = [
        cosine(a.values, b.values)
        for i, a in enumerate(observed)
        for b in observed[i + 1 :]
    ]
    s_estimate = nearest_rank_percentile(pairs, settings.threshold_percentile)
    d_target = settings.distance_margin * broadcast[0]
    s_target = min(broadcast[1], s_estimate) - settings.similarity_margin
    return max(d_target, 1e-12), s_target


@dataclass
class AdversaryState:
    """Identity and cross-round state of one adversarial agent."""

    agent_id: int
    objective_set: Dataset
    dual: DualState = field(default_factory=DualState)
    last_claimed: int = 1


def _synthesize_init(
    observed: list[UpdateVector],
    benign_mean: np.ndarray,
    adversary_index: int,
    round_index: int,
    settings: AttackSettings,
    rng: SeededRng,
) -> tuple[np.ndarray, np.ndarray | None, dict]:
    """Graph -> VGAE -> spectral transform -> one candidate update row."""
    select_dim = min(settings.select_dim, benign_mean.shape[0])
    selected = graphcraft.select_params(observed, select_dim, settings.select_policy)
    graph = graphcraft.build_graph(observed, selected, round_index)
    state, a_hat = vgae.train_vgae(
        graph,
        epochs=settings.vgae_epochs,
        lr=settings.vgae_lr,
        rng=rng.split("vgae"),
        hidden1=settings.vgae_hidden1,
        hidden2=settings.vgae_hidden2,
        features_mode=settings.vgae_features,
        infer_mode=settings.vgae_infer,
    )
    basis = gst.gft_basis(gst.laplacian(np.clip(graph.adjacency, 0.0, None)))
    coeffs = gst.spectral_coeffs(graph.features, basis)
    basis_hat = gst.gft_basis(gst.laplacian(a_hat))
    f_hat = gst.reconstruct_features(coeffs, basis_hat)
    row = gst.initial_malicious(
        f_hat,
        settings.row_policy,
        rng.split("row"),
        adversary_index=adversary_index,
        reference=benign_mean[selected],
    )
    debug = {
        "elbo_trace": state.elbo_trace.tolist(),
        "spectral_shift": float(np.linalg.norm(f_hat - graph.features)),
        "reconstructed_adjacency": a_hat,
    }
    return gst.embed_full(row, selected, benign_mean), selected, debug


def run_augmp_round(
    benign_updates: list[UpdateVector],
    global_state: GlobalState,
    adversaries: list[AdversaryState],
    broadcast_thresholds: tuple[float, float],
    settings: AttackSettings,
    rng: SeededRng,
    prev_delta: np.ndarray | None = None,
) -> list[tuple[UpdateVector, StealthReport, dict]]:
    """One full attack round across all adversaries.

    Each adversary observes, synthesises, refines and reports independently
    on its own rng stream; its dual state advances by one projected step at
    the end.  ``prev_delta`` is the previous round's broadcast global update
    (zero at round one), which the adversary uses to anticipate the server's
    current-round distance screen.  Any synthesis failure degrades to
    submitting the benign coordinate-wise mean (fail stealthy) with the
    stage recorded in the debug payload.
    """
    round_index = global_state.round + 1
    if prev_delta is None:
        prev_delta = np.zeros(global_state.backbone.flat_dim)
    results = []
    for index, adv in enumerate(adversaries):
        adv_rng = rng.split(f"adversary-{adv.agent_id}")
        stage = "observe"
        debug: dict = {"round": round_index, "agent_id": adv.agent_id}
        try:
            observed = graphcraft.observe_benign(
                benign_updates, settings.visibility, adv_rng.split("observe")
            )
            claimed = max(1, int(np.median([u.claimed_size for u in observed])))
            adv.last_claimed = claimed
            benign_mean = np.mean([u.values for u in observed], axis=0)

            d_target, s_target = _internal_targets(observed, broadcast_thresholds, settings)
            adv.dual = replace(
                adv.dual,
                d_threshold=d_target,
                sim_threshold=s_target,
                rho_lam=settings.rho_lambda / d_target,
                rho_theta=settings.rho_theta,
            )

            coords = None
            objective = SurrogateObjective(
                global_state.backbone,
                global_state.w,
                global_state.eta,
                adv.objective_set,
            )
            trace: list = []
            if settings.grl_off:
                # Ablation: the graph-guided generation is replaced by the
                # mean-based construction, and that construction is what gets
                # submitted (its too-close / too-aligned geometry is the
                # whole point of the variant); the dual bookkeeping below
                # still runs on its measured metrics.
                final = benign_mean.copy()
            else:
                stage = "synthesize"
                init, coords, synth_debug = _synthesize_init(
                    observed, benign_mean, index, round_index, settings, adv_rng
                )
                debug.update(synth_debug)
                init = restore_feasibility(
                    init, observed, claimed, adv.dual.d_threshold, coords
                )

                stage = "refine"
                final = inner_maximize(
                    init,
                    adv.dual,
                    objective,
                    observed,
                    claimed,
                    steps=settings.inner_steps,
                    step_size=settings.inner_step_size,
                    grad_clip=settings.grad_clip,
                    step_scale=max(adv.dual.d_threshold, 1e-12),
                    trace_out=trace,
                    similarity_policy=settings.similarity_policy,
                    penalty_form=settings.penalty_form,
                    lse_temperature=settings.lse_temperature,
                    al_penalty_off=settings.al_penalty_off,
                    coords=coords,
                )
            if not settings.al_penalty_off and not settings.grl_off:
                # The ascent settles near the boundary but the equilibrium
                # drifts with the loss-gradient magnitude; the submitted
                # update is pulled exactly inside the working radius (the
                # direction the refinement found is preserved), spread away
                # from the coalition's common push, and finally clipped into
                # the band the current-round distance screen will use.  The
                # two ablations skip this feasibility polish: dropping it is
                # the point of the penalty ablation, and the mean-based
                # construction is supposed to keep its naive geometry.
                center, radius = _forecast_ball(observed, claimed, adv.dual.d_threshold)
                final = project_ball(final, center, radius, coords)
                if settings.sibling_spread > 0.0 and len(adversaries) > 1:
                    final = diversify_deviation(
                        final,
                        center,
                        settings.sibling_spread,
                        _shared_spread_direction(observed, round_index),
                        1.0 if index % 2 == 0 else -1.0,
                        coords,
                    )
                band = settings.current_band_margin * max(
                    float(np.linalg.norm(u.values - prev_delta)) for u in observed
                )
                references = [u.values for u in observed]
                final = _cap_similarity(
                    final, references, adv.dual.sim_threshold, coords
                )
                # Alternating projections onto the two (convex) distance
                # balls converge to a point of their intersection whenever it
                # is nonempty; the band ball goes last so the current-round
                # screen is met exactly even when the balls barely touch.
                for _ in range(4):
                    final = project_ball(final, center, radius, coords)
                    final = project_ball(final, prev_delta, band, coords)
            stage = "report"
            final_terms = _AttackObjective(
                adv.dual,
                objective,
                observed,
                claimed,
                similarity_policy=settings.similarity_policy,
                penalty_form=settings.penalty_form,
                lse_temperature=settings.lse_temperature,
                al_penalty_off=settings.al_penalty_off,
            ).terms(final)
            predicted = predict_global(observed, final, claimed)
            debug.update(
                {
                    "objective_trace": trace,
                    "surrogate_loss": final_terms.loss,
                    "distance": final_terms.distance,
                    "similarity": final_terms.similarity,
                    "lambda": adv.dual.lam,
                    "theta": adv.dual.theta,
                    "predicted_global": predicted,
                }
            )
            if settings.al_penalty_off:
                adv.dual = replace(adv.dual, lam=0.0, theta=0.0, round=adv.dual.round + 1)
            else:
                adv.dual = dual_update(adv.dual, final_terms.distance, final_terms.similarity)
            values = final
            report = StealthReport(
                distance=final_terms.distance,
                similarity=final_terms.similarity,
                d_threshold=broadcast_thresholds[0],
                sim_threshold=broadcast_thresholds[1],
            )
        except Exception as exc:  # noqa: BLE001 - fail-stealthy by contract
            log.warning(
                "adversary %d failed at stage %s (%s); submitting benign mean",
                adv.agent_id, stage, exc,
            )
            benign = [u for u in benign_updates if not u.is_malicious]
            if not benign:
                raise
            values = np.mean([u.values for u in benign], axis=0)
            claimed = max(1, int(np.median([u.claimed_size for u in benign])))
            debug["failed_stage"] = stage
            debug["error"] = repr(exc)
            report = StealthReport(
                distance=float("nan"),
                similarity=float("nan"),
                d_threshold=broadcast_thresholds[0],
                sim_threshold=broadcast_thresholds[1],
            )
        update = UpdateVector(
            values,
            agent_id=adv.agent_id,
            round=round_index,
            claimed_size=claimed,
            is_malicious=True,
        )
        results.append((update, report, debug))
    return results
