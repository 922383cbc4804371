"""Self-check suites: numerical invariants runnable from the command line.

Each check returns a result naming the module, the operation and the
tolerance it enforces, so a failure points straight at the broken contract.
Suites: ``numerics``, ``gradients``, ``gst``, ``duals``, ``determinism``,
and ``all``.
"""

from __future__ import annotations

import filecmp
import json
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fedsim, gst, manipulator, vgae
from .config import ExperimentConfig
from .harness import run_experiment
from .mathcore import SeededRng, cosine, euclid, sym_eig

__all__ = ["CheckResult", "SUITES", "fd_gradient", "run_suite"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    tolerance: str
    passed: bool
    detail: str


def fd_gradient(func, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        bumped = x.copy()
        bumped[i] += h
        up = func(bumped)
        bumped[i] -= 2 * h
        down = func(bumped)
        grad[i] = (up - down) / (2 * h)
    return grad


def _rel_err(found: np.ndarray, expected: np.ndarray) -> float:
    denom = max(1e-12, float(np.linalg.norm(expected)))
    return float(np.linalg.norm(found - expected)) / denom


# ---------------------------------------------------------------------------
# numerics
# ---------------------------------------------------------------------------

def _check_eig() -> list[CheckResult]:
    out = []
    worst_resid, worst_orth, worst_trace = 0.0, 0.0, 0.0
    for size in (3, 8, 16):
        for seed in range(3):
            gen = SeededRng(100 + seed).split(f"eig-{size}").generator
            raw = gen.standard_normal((size, size))
            s = 0.5 * (raw + raw.T)
            pair = sym_eig(s)
            recon = pair.eigenvectors @ np.diag(pair.eigenvalues) @ pair.eigenvectors.T
            worst_resid = max(
                worst_resid, float(np.linalg.norm(recon - s)) / float(np.linalg.norm(s))
            )
            gram = pair.eigenvectors.T @ pair.eigenvectors
            worst_orth = max(worst_orth, float(np.max(np.abs(gram - np.eye(size)))))
            worst_trace = max(
                worst_trace,
                abs(float(np.trace(s)) - float(pair.eigenvalues.sum()))
                / max(1.0, abs(float(np.trace(s)))),
            )
    out.append(CheckResult(
        "mathcore.sym_eig.reconstruction", "<= 1e-8 relative",
        worst_resid <= 1e-8, f"worst residual {worst_resid:.3e}",
    ))
    out.append(CheckResult(
        "mathcore.sym_eig.orthonormality", "<= 1e-10",
        worst_orth <= 1e-10, f"worst gram deviation {worst_orth:.3e}",
    ))
    out.append(CheckResult(
        "mathcore.sym_eig.trace", "<= 1e-9 relative",
        worst_trace <= 1e-9, f"worst trace mismatch {worst_trace:.3e}",
    ))
    return out


def _check_metrics() -> list[CheckResult]:
    gen = SeededRng(7).split("metrics").generator
    worst_sym, worst_scale, worst_tri = 0.0, 0.0, 0.0
    for _ in range(50):
        u = gen.standard_normal(12)
        v = gen.standard_normal(12)
        w = gen.standard_normal(12)
        worst_sym = max(worst_sym, abs(cosine(u, v) - cosine(v, u)))
        c = float(gen.uniform(0.1, 10.0))
        worst_scale = max(worst_scale, abs(cosine(c * u, v) - cosine(u, v)))
        worst_tri = max(worst_tri, euclid(u, w) - (euclid(u, v) + euclid(v, w)))
    return [
        CheckResult("mathcore.cosine.symmetry", "exact", worst_sym == 0.0,
                    f"worst asymmetry {worst_sym:.3e}"),
        CheckResult("mathcore.cosine.scale_invariance", "<= 1e-12",
                    worst_scale <= 1e-12, f"worst deviation {worst_scale:.3e}"),
        CheckResult("mathcore.euclid.triangle", "<= 1e-12 slack",
                    worst_tri <= 1e-12, f"worst violation {worst_tri:.3e}"),
    ]


def _check_aggregate() -> list[CheckResult]:
    gen = SeededRng(11).split("agg").generator
    worst = 0.0
    for _ in range(20):
        n = int(gen.integers(2, 7))
        updates = [
            fedsim.UpdateVector(gen.standard_normal(10), agent_id=i, round=1,
                                claimed_size=int(gen.integers(1, 9)))
            for i in range(n)
        ]
        got = fedsim.aggregate(updates)
        total = sum(u.claimed_size for u in updates)
        brute = np.zeros(10)
        for u in updates:
            brute += u.claimed_size * u.values
        brute /= total
        worst = max(worst, float(np.max(np.abs(got - brute))))
    return [CheckResult("fedsim.aggregate.weighted_mean", "<= 1e-12",
                        worst <= 1e-12, f"worst deviation {worst:.3e}")]


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def _check_local_loss_grad() -> list[CheckResult]:
    rng = SeededRng(21)
    backbone = fedsim.make_backbone(4, 3, 1, 2.0, 0.0, rng.split("bb"))
    ds = fedsim.synth_dataset(3, 4, 2, 3.0, rng.split("ds"))
    w = 0.1 * rng.split("w").generator.standard_normal(backbone.flat_dim)
    _, grad = fedsim.loss_and_grad_flat(backbone, w, ds)
    fd = fd_gradient(lambda x: fedsim.loss_and_grad_flat(backbone, x, ds)[0], w)
    err = _rel_err(grad, fd)
    return [CheckResult("fedsim.local_train.gradient", "<= 1e-4 relative vs FD",
                        err <= 1e-4, f"relative error {err:.3e}")]


def _check_elbo_grad() -> list[CheckResult]:
    rng = SeededRng(22)
    gen = rng.split("graph").generator
    n = 6
    raw = gen.uniform(-1.0, 1.0, size=(n, n))
    adj = np.triu(raw, 1)
    adj = adj + adj.T
    feats = gen.standard_normal((4, n))
    x = feats.T
    p = vgae.normalize_adjacency(adj)
    target = 0.5 * (adj + 1.0)
    params = vgae.init_params(4, 5, 3, rng.split("init"))
    eps = rng.split("eps").generator.standard_normal((n, 3))

    def pack(p_: vgae.VgaeParams) -> np.ndarray:
        return np.concatenate([p_.w1.ravel(), p_.w_mu.ravel(), p_.w_sigma.ravel()])

    def unpack(flat: np.ndarray) -> vgae.VgaeParams:
        a = flat[: params.w1.size].reshape(params.w1.shape)
        b = flat[params.w1.size : params.w1.size + params.w_mu.size].reshape(params.w_mu.shape)
        c = flat[params.w1.size + params.w_mu.size :].reshape(params.w_sigma.shape)
        return vgae.VgaeParams(a, b, c)

    value, grads, _ = vgae._objective_and_grads(params, x, p, target, eps)
    assert np.isfinite(value)
    fd = fd_gradient(
        lambda flat: vgae._objective_and_grads(unpack(flat), x, p, target, eps)[0],
        pack(params),
    )
    err = _rel_err(pack(grads), fd)
    return [CheckResult("vgae.elbo.gradient", "<= 1e-4 relative vs FD",
                        err <= 1e-4, f"relative error {err:.3e}")]


def _al_scenario():
    rng = SeededRng(23)
    backbone = fedsim.make_backbone(5, 2, 1, 2.0, 0.0, rng.split("bb"))
    ds = fedsim.synth_dataset(2, 5, 3, 4.0, rng.split("ds"))
    gen = rng.split("updates").generator
    observed = [
        fedsim.UpdateVector(0.3 * gen.standard_normal(backbone.flat_dim),
                            agent_id=i, round=1, claimed_size=3)
        for i in range(3)
    ]
    surrogate = manipulator.SurrogateObjective(
        backbone, 0.1 * gen.standard_normal(backbone.flat_dim), 1.0, ds
    )
    dual = manipulator.DualState(
        lam=0.4, theta=0.2, rho_lam=1.5, rho_theta=0.8,
        step=0.05, d_threshold=0.5, sim_threshold=0.5,
    )
    delta = 0.3 * gen.standard_normal(backbone.flat_dim)
    return dual, surrogate, observed, delta


def _check_al_grad() -> list[CheckResult]:
    dual, surrogate, observed, delta = _al_scenario()
    results = []
    for form in ("paper", "hinge"):
        _, grad = manipulator.augmented_lagrangian(
            delta, dual, surrogate, observed, 3, penalty_form=form,
            similarity_policy="mean",
        )
        fd = fd_gradient(
            lambda x: manipulator.augmented_lagrangian(
                x, dual, surrogate, observed, 3, penalty_form=form,
                similarity_policy="mean",
            )[0],
            delta,
        )
        err = _rel_err(grad, fd)
        results.append(CheckResult(
            f"manipulator.augmented_lagrangian.gradient[{form}]",
            "<= 1e-4 relative vs FD", err <= 1e-4, f"relative error {err:.3e}",
        ))
    return results


# ---------------------------------------------------------------------------
# gst
# ---------------------------------------------------------------------------

def _random_graph(n: int, seed: int) -> np.ndarray:
    gen = SeededRng(seed).split("gstgraph").generator
    raw = gen.uniform(0.0, 1.0, size=(n, n))
    adj = np.triu(raw, 1)
    adj = adj + adj.T
    return adj


def _check_gst() -> list[CheckResult]:
    out = []
    worst_round, worst_rowsum, worst_eigmin, worst_norm = 0.0, 0.0, 0.0, 0.0
    for n, seed in ((5, 1), (9, 2), (12, 3)):
        adj = _random_graph(n, seed)
        lap = gst.laplacian(adj)
        worst_rowsum = max(worst_rowsum, float(np.max(np.abs(lap.sum(axis=1)))))
        basis = gst.gft_basis(lap)
        worst_eigmin = max(worst_eigmin, -float(basis.eigenvalues.min()))
        feats = SeededRng(seed).split("feats").generator.standard_normal((4, n))
        coeffs = gst.spectral_coeffs(feats, basis)
        worst_norm = max(
            worst_norm,
            abs(float(np.linalg.norm(coeffs)) - float(np.linalg.norm(feats))),
        )
        back = gst.reconstruct_features(coeffs, basis)
        worst_round = max(worst_round, float(np.linalg.norm(back - feats)))
    out.append(CheckResult("gst.roundtrip.identity_basis", "<= 1e-10 Frobenius",
                           worst_round <= 1e-10, f"worst |F_hat - F| {worst_round:.3e}"))
    out.append(CheckResult("gst.laplacian.row_sums", "<= 1e-9",
                           worst_rowsum <= 1e-9, f"worst row sum {worst_rowsum:.3e}"))
    out.append(CheckResult("gst.gft_basis.eigenvalue_floor", ">= -1e-9",
                           worst_eigmin <= 1e-9, f"most negative eigenvalue {-worst_eigmin:.3e}"))
    out.append(CheckResult("gst.spectral_coeffs.norm_preservation", "<= 1e-9",
                           worst_norm <= 1e-9, f"worst norm drift {worst_norm:.3e}"))
    return out


# ---------------------------------------------------------------------------
# duals
# ---------------------------------------------------------------------------

def _check_duals() -> list[CheckResult]:
    gen = SeededRng(31).split("duals").generator
    violations = 0
    sequences = 10_000
    for _ in range(sequences):
        dual = manipulator.DualState(
            lam=float(gen.uniform(0.0, 2.0)),
            theta=float(gen.uniform(0.0, 2.0)),
            rho_lam=float(gen.uniform(0.1, 3.0)),
            rho_theta=float(gen.uniform(0.1, 3.0)),
            step=float(gen.uniform(0.01, 1.0)),
            d_threshold=float(gen.uniform(0.1, 2.0)),
            sim_threshold=float(gen.uniform(-0.5, 1.0)),
        )
        for _ in range(3):
            dual = manipulator.dual_update(
                dual, float(gen.uniform(0.0, 4.0)), float(gen.uniform(-1.0, 1.0))
            )
            if dual.lam < 0.0 or dual.theta < 0.0:
                violations += 1
    return [CheckResult("manipulator.dual_update.nonnegativity",
                        ">= 0 over 1e4 sequences", violations == 0,
                        f"{violations} violations in {sequences} sequences")]


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------

def _tiny_config() -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.agents = 3
    cfg.adversaries = 1
    cfg.rounds = 3
    cfg.train_per_class = 20
    cfg.test_per_class = 10
    cfg.attack = "augmp"
    cfg.select_dim = 8
    cfg.vgae_epochs = 5
    cfg.inner_steps = 5
    cfg.validate()
    return cfg


def _check_determinism() -> list[CheckResult]:
    cfg = _tiny_config()
    with tempfile.TemporaryDirectory() as tmp:
        dir_a, dir_b = Path(tmp) / "a", Path(tmp) / "b"
        run_experiment(cfg, dir_a)
        run_experiment(cfg, dir_b)
        same_csv = filecmp.cmp(dir_a / "metrics.csv", dir_b / "metrics.csv", shallow=False)
        sum_a = json.loads((dir_a / "summary.json").read_text())
        sum_b = json.loads((dir_b / "summary.json").read_text())
        sum_a.pop("wall_time_s")
        sum_b.pop("wall_time_s")
        same_summary = sum_a == sum_b
    return [
        CheckResult("harness.run_experiment.metrics_determinism", "byte-identical",
                    same_csv, "metrics.csv identical" if same_csv else "metrics.csv differs"),
        CheckResult("harness.run_experiment.summary_determinism",
                    "identical minus wall time", same_summary,
                    "summary.json identical" if same_summary else "summary.json differs"),
    ]


SUITES: dict[str, tuple] = {
    "numerics": (_check_eig, _check_metrics, _check_aggregate),
    "gradients": (_check_local_loss_grad, _check_elbo_grad, _check_al_grad),
    "gst": (_check_gst,),
    "duals": (_check_duals,),
    "determinism": (_check_determinism,),
}
SUITES["all"] = tuple(fn for suite in ("numerics", "gradients", "gst", "duals", "determinism")
                      for fn in SUITES[suite])


def run_suite(name: str) -> list[CheckResult]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    results = []
    for check in SUITES[name]:
        results.extend(check())
    return results
