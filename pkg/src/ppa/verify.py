"""Runnable verification suites shared by the CLI and the acceptance tests.

Each suite returns a list of (check name, passed, detail) records so callers
can render a pass/fail table or assert on it.
"""

from __future__ import annotations

import numpy as np

from . import theory
from .data import GroupPrior, SyntheticSpec, generate_synthetic
from .pipeline import infer_pseudo_groups, run_ppa, train_biased
from .probe import LinearScorer, TrainConfig, ce_loss, gla_loss, la_loss
from .projection import build_projection

CheckRecord = tuple[str, bool, str]


def projection_suite(n_cases: int = 100, seed: int = 0, tol: float = 1e-9) -> list[CheckRecord]:
    """Operator invariants for random proxy matrices with K <= d <= 32."""
    rng = np.random.default_rng(seed)
    worst_sym = worst_idem = worst_ann = worst_trace = 0.0
    for _ in range(n_cases):
        d = int(rng.integers(2, 33))
        k = int(rng.integers(1, d + 1))
        z = rng.normal(size=(k, d))
        if rng.random() < 0.25 and k >= 2:
            z[-1] = z[0] * rng.normal()  # force rank deficiency sometimes
            if not z[-1].any():
                z[-1] = z[0]
        op = build_projection(z)
        pi = op.pi
        worst_sym = max(worst_sym, float(np.abs(pi - pi.T).max()))
        worst_idem = max(worst_idem, float(np.abs(pi @ pi - pi).max()))
        worst_ann = max(worst_ann, float(np.abs(z @ pi).max() / max(np.abs(z).max(), 1.0)))
        worst_trace = max(worst_trace, abs(float(np.trace(pi)) - (d - op.source_rank)))
    records = [
        ("projection.symmetry", worst_sym <= tol, f"max |Pi - Pi^T| = {worst_sym:.3e}"),
        ("projection.idempotence", worst_idem <= tol, f"max |Pi Pi - Pi| = {worst_idem:.3e}"),
        ("projection.annihilation", worst_ann <= tol, f"max |Z Pi| (row-relative) = {worst_ann:.3e}"),
        ("projection.trace_rank", worst_trace <= 1e-8, f"max |trace - (d - rank)| = {worst_trace:.3e}"),
    ]
    return records


def gradient_suite(n_cases: int = 50, seed: int = 0, tol: float = 1e-5) -> list[CheckRecord]:
    """Central finite differences against the analytic gradients of all losses."""
    rng = np.random.default_rng(seed)
    h = 1e-6
    worst = {"ce": 0.0, "la": 0.0, "gla": 0.0}
    for _ in range(n_cases):
        c = int(rng.integers(2, 6))
        d = int(rng.integers(2, 8))
        w = rng.normal(size=(c, d))
        x = rng.normal(size=d)
        target = int(rng.integers(0, c))
        prior = GroupPrior(prior=rng.dirichlet(np.ones(c) * 2.0) * 0.98 + 0.02 / c, tau=float(rng.uniform(0.3, 2.0)))
        for kind in ("ce", "la", "gla"):
            def loss_at(weights):
                scorer = LinearScorer(weights, target_space="class", normalize=False)
                if kind == "ce":
                    return ce_loss(scorer, x, target)[0]
                if kind == "la":
                    return la_loss(scorer, x, target, prior)[0]
                return gla_loss(scorer, x, target, prior)[0]

            scorer = LinearScorer(w, target_space="class", normalize=False)
            if kind == "ce":
                _, grads = ce_loss(scorer, x, target)
            elif kind == "la":
                _, grads = la_loss(scorer, x, target, prior)
            else:
                _, grads = gla_loss(scorer, x, target, prior)
            fd = np.zeros_like(w)
            for i in range(c):
                for j in range(d):
                    wp, wm = w.copy(), w.copy()
                    wp[i, j] += h
                    wm[i, j] -= h
                    fd[i, j] = (loss_at(wp) - loss_at(wm)) / (2 * h)
            scale = max(np.abs(grads.weights).max(), np.abs(fd).max(), 1e-8)
            worst[kind] = max(worst[kind], float(np.abs(grads.weights - fd).max() / scale))
    return [
        (f"gradients.{kind}", err <= tol, f"max relative error = {err:.3e}")
        for kind, err in worst.items()
    ]


def aggregation_suite(seed: int = 0, n_inputs: int = 1000, tol: float = 1e-9) -> list[CheckRecord]:
    """Output-space group sums equal aggregated weight-space logits on a trained head."""
    spec = SyntheticSpec.from_rho(
        rho=0.9,
        n_per_class={"train": (300, 300), "val": (120, 120)},
        core_mean_separation=2.0,
        spurious_mean_separation=4.0,
        noise_sigma=1.0,
        feature_dim=8,
        distractor_dims=6,
        seed=seed,
    )
    ds, z = generate_synthetic(spec)
    cfg = TrainConfig(epochs=12, seed=seed)
    run = run_ppa(ds, z, tau=1.0, cfg=cfg)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(n_inputs, ds.dim))
    group_logits = run.group_head.logits(x)
    summed = group_logits.reshape(n_inputs, ds.class_count, 2).sum(axis=2)
    direct = run.classifier.scorer.logits(x)
    gap = float(np.abs(summed - direct).max())
    return [("aggregation.identity", gap <= tol, f"max |sum_g h_g - f_y| = {gap:.3e} over {n_inputs} inputs")]


def weight_shift_suite(n_cases: int = 100, seed: int = 0, tol: float = 1e-8) -> list[CheckRecord]:
    """Noise-free projected-regression identity on random scenarios."""
    worst = 0.0
    produced = 0
    s = seed
    while produced < n_cases:
        try:
            residual = theory.spurious_weight_identity_residual(
                theory.sample_regression_scenario(s, n=50, d=3, noise_sigma=0.0)
            )
        except theory.DegenerateScenarioError:
            s += 1
            continue
        worst = max(worst, residual)
        produced += 1
        s += 1
    return [("weight_shift.noise_free", worst <= tol, f"max residual = {worst:.3e} over {n_cases} scenarios")]


def weight_shift_noise_trend(seed: int = 0, sizes: tuple[int, ...] = (100, 1000, 10000), n_seeds: int = 20) -> list[CheckRecord]:
    """Median residual under noise must shrink as the sample size grows."""
    medians = []
    for n in sizes:
        residuals = []
        s = seed
        while len(residuals) < n_seeds:
            try:
                residuals.append(
                    theory.spurious_weight_identity_residual(
                        theory.sample_regression_scenario(s, n=n, d=3, noise_sigma=0.1)
                    )
                )
            except theory.DegenerateScenarioError:
                pass
            s += 1
        medians.append(float(np.median(residuals)))
    decreasing = all(medians[i + 1] < medians[i] for i in range(len(medians) - 1))
    detail = ", ".join(f"n={n}: {m:.3e}" for n, m in zip(sizes, medians))
    return [("weight_shift.noise_decay", decreasing, detail)]


def error_decomposition_suite(n_worlds: int = 50, seed: int = 0, tol: float = 1e-12) -> list[CheckRecord]:
    """Two balanced-group-error computations agree on random worlds and classifiers."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_worlds):
        world = theory.sample_world(seed + i, n_points=int(rng.integers(2, 9)))
        decisions = rng.integers(0, 2, size=world.n_points)
        worst = max(worst, theory.decomposition_residual(world, decisions))
    return [("error_decomposition.agreement", worst <= tol, f"max residual = {worst:.3e} over {n_worlds} worlds")]


def group_sum_rule_suite(n_worlds: int = 10, seed: int = 0, tol: float = 1e-12) -> list[CheckRecord]:
    """Group-sum rule attains the enumerated optimum; grid minimum sits at tau=1."""
    worst_gap = 0.0
    tau_ok = True
    details = []
    for i in range(n_worlds):
        world = theory.sample_attribute_noise_world(seed + i, n_points=4)
        cert = theory.certify_group_sum_rule(world)
        worst_gap = max(worst_gap, cert.gap)
        if cert.bge_by_tau[1.0] > cert.enumerated_min + tol:
            tau_ok = False
            details.append(f"world {i}: tau=1 bge {cert.bge_by_tau[1.0]:.6f} > min {cert.enumerated_min:.6f}")
    return [
        ("group_sum.optimality", worst_gap <= tol, f"max gap to enumerated min = {worst_gap:.3e}"),
        ("group_sum.tau_grid", tau_ok, "; ".join(details) if details else "tau=1 attains the grid minimum"),
    ]


SUITES = {
    "projection": lambda seeds: projection_suite(n_cases=seeds),
    "gradients": lambda seeds: gradient_suite(n_cases=seeds),
    "aggregation": lambda seeds: aggregation_suite(seed=max(seeds, 1) - 1),
    "prop1": lambda seeds: weight_shift_suite(n_cases=seeds) + weight_shift_noise_trend(),
    "lemma1": lambda seeds: error_decomposition_suite(n_worlds=seeds),
    "prop2": lambda seeds: group_sum_rule_suite(n_worlds=max(seeds, 10)),
}


def run_suites(names: list[str], seeds: int) -> list[CheckRecord]:
    records: list[CheckRecord] = []
    for name in names:
        records.extend(SUITES[name](seeds))
    return records
