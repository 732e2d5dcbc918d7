"""Self-check suites run by ``grwczsl verify``.

Each suite returns a :class:`SuiteResult`; :func:`run_all` runs them in order.
The suites are also the oracles behind the acceptance tests, so they take
their instance counts as arguments.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from . import losses, walk
from .data import SyntheticSpec, TaskData, build_static_schedule, generate_synthetic
from .hallucinate import interpolate_attributes
from .linalg import Identity, Uniform, row_softmax
from .losses import LossWeights
from .nets import GradTape, finite_diff_check, numeric_grad, relative_error
from .replay import ReplayBuffer, per_class_counts
from .svgplot import pearson
from .trainer import (StreamReport, TaskContext, TrainerConfig, TrainerState,
                      aggregate_metrics, discriminator_objective, generator_objective,
                      harmonic, train_task_stream)

GRAD_TOL = 1e-4
WALK_TOL = 1e-12
STOCH_TOL = 1e-9
GDB_MIN_R = 0.1


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


# --- gradients ---------------------------------------------------------------

# instance sizes for the gradient oracle
D_A, D_X, HIDDEN, N_S, N_H, R_STEPS = 4, 8, 8, 3, 5, 3


def _input_check(f: Callable[[], float], analytic: Dict[str, np.ndarray],
                 arrays: Dict[str, np.ndarray]) -> float:
    return max(relative_error(analytic[k], numeric_grad(f, arrays[k])) for k in arrays)


def _grad_instance(seed):
    rng = np.random.default_rng(seed)
    return {
        "real": rng.normal(size=(N_S, D_X)),
        "fake": rng.normal(size=(N_S, D_X)),
        "emb": rng.normal(size=(N_S, D_X)),
        "x": rng.normal(size=(N_H, D_X)),
        "labels": rng.integers(0, N_S, size=N_H),
        "bank": rng.normal(size=(N_S, D_X)),
        "centers": rng.normal(size=(N_S, D_X)),
        "samples": rng.normal(size=(N_H, D_X)),
        "real_c": rng.normal(size=(N_S, D_X)),
        "gen_c": rng.normal(size=(N_S, D_X)),
        "attrs": rng.normal(size=(N_S, D_A)),
    }


def _loss_errors(seed) -> Dict[str, float]:
    I = _grad_instance(seed)
    tau, gamma = 10.0, 0.7
    err = {}

    _, dr, df, de = losses.real_fake_loss_grad(I["real"], I["fake"], I["emb"])
    err["real_fake"] = _input_check(
        lambda: losses.real_fake_loss(I["real"], I["fake"], I["emb"]),
        {"real": dr, "fake": df, "emb": de},
        {k: I[k] for k in ("real", "fake", "emb")})

    _, dx, db = losses.classification_loss_grad(I["x"], I["labels"], I["bank"], tau)
    err["classification"] = _input_check(
        lambda: losses.classification_loss(I["x"], I["labels"], I["bank"], tau),
        {"x": dx, "bank": db}, {k: I[k] for k in ("x", "bank")})

    _, dx, db = losses.creativity_loss_grad(I["x"], I["bank"], tau)
    err["creativity"] = _input_check(
        lambda: losses.creativity_loss(I["x"], I["bank"], tau),
        {"x": dx, "bank": db}, {k: I[k] for k in ("x", "bank")})

    for name, target in (("grw_uniform", Uniform()), ("grw_identity", Identity())):
        _, dc, ds = walk.grw_loss(I["centers"], I["samples"], target, gamma, R_STEPS)

        def f(target=target):
            res = walk.walk_landing(walk.build_transitions(I["centers"], I["samples"]), R_STEPS)
            return walk.grw_objective(res, target, gamma)

        err[name] = _input_check(f, {"centers": dc, "samples": ds},
                                 {k: I[k] for k in ("centers", "samples")})

    _, dg = losses.nuclear_loss_grad(I["real_c"], I["gen_c"])
    err["nuclear"] = _input_check(
        lambda: losses.nuclear_loss_grad(I["real_c"], I["gen_c"])[0],
        {"gen_c": dg}, {"gen_c": I["gen_c"]})

    # with N_S = 3 classes at most 2 neighbours exist
    k, margin = N_S - 1, 0.1
    _, dg = losses.semantic_alignment_loss_grad(I["real_c"], I["gen_c"], I["attrs"], k, margin)
    err["semantic_alignment"] = _input_check(
        lambda: losses.semantic_alignment_loss_grad(
            I["real_c"], I["gen_c"], I["attrs"], k, margin)[0],
        {"gen_c": dg}, {"gen_c": I["gen_c"]})
    return err


def _toy_trainer(seed):
    rng = np.random.default_rng(seed)
    cfg = TrainerConfig(hidden_g=HIDDEN, hidden_d=HIDDEN, batch_size=N_H, center_samples=2,
                        seed=seed, track_gdb=False)
    weights = LossWeights(R=R_STEPS, sal_neighbors=N_S - 1)
    state = TrainerState(D_A, D_X, cfg, weights)
    labels = np.arange(N_H) % N_S
    ctx = TaskContext(
        seen=list(range(N_S)), current=list(range(N_S)),
        attr_bank=rng.normal(size=(N_S, D_A)),
        real_centers=rng.normal(size=(N_S, D_X)),
        current_rows=np.arange(N_S),
        features=rng.normal(size=(N_H, D_X)),
        labels=labels,
    )
    return state, ctx


def _composed_errors(seed) -> Dict[str, float]:
    state, ctx = _toy_trainer(seed)
    X, y = ctx.features, ctx.labels
    draw = 1000 + seed

    def loss_d(net):
        state.D_tape = GradTape()
        parts = discriminator_objective(state, ctx, X, y, np.random.default_rng(draw))
        return parts["L_D"], state.D_tape.grads

    def loss_g(net):
        state.G_tape = GradTape()
        parts, _, _ = generator_objective(state, ctx, X, y, np.random.default_rng(draw))
        return parts["L_G"], state.G_tape.grads

    return {"composed_L_D": finite_diff_check(loss_d, state.D),
            "composed_L_G": finite_diff_check(loss_g, state.G)}


def gradient_errors(seed) -> Dict[str, float]:
    """Max relative finite-difference error per checked loss for one instance."""
    return {**_loss_errors(seed), **_composed_errors(seed)}


def suite_gradients(n_instances=20) -> SuiteResult:
    worst: Dict[str, float] = {}
    for seed in range(n_instances):
        for k, v in gradient_errors(seed).items():
            worst[k] = max(worst.get(k, 0.0), v)
    name, value = max(worst.items(), key=lambda kv: kv[1])
    return SuiteResult("gradients", value < GRAD_TOL,
                       f"max rel err {value:.2e} ({name}) over {n_instances} instances")


# --- stochasticity -------------------------------------------------------------

def _random_triple(rng, n_s=None, n_h=None, d=None):
    n_s = n_s or int(rng.integers(2, 5))
    n_h = n_h or int(rng.integers(2, 7))
    d = d or int(rng.integers(1, 6))
    scale = rng.uniform(0.1, 3.0)
    return walk.build_transitions(scale * rng.normal(size=(n_s, d)),
                                  scale * rng.normal(size=(n_h, d)))


def stochasticity_violations(n_cases=100, seed=0) -> Dict[str, float]:
    rng = np.random.default_rng(seed)
    worst = {"row_sum": 0.0, "negative": 0.0, "pxx_diag": 0.0, "alpha_range": 0.0,
             "same_pair": 0.0}
    for _ in range(n_cases):
        t = _random_triple(rng)
        res = walk.walk_landing(t, int(rng.integers(0, 6)))
        mats = [t.p_cx, t.p_xx, t.p_xc, *res.landings, res.visit[None, :]]
        for M in mats:
            worst["row_sum"] = max(worst["row_sum"], float(np.max(np.abs(M.sum(axis=1) - 1))))
            worst["negative"] = max(worst["negative"], float(-min(M.min(), 0.0)))
        worst["pxx_diag"] = max(worst["pxx_diag"], float(np.max(np.diag(t.p_xx))))
        Z = rng.normal(scale=50.0, size=(3, 5))
        worst["row_sum"] = max(worst["row_sum"], float(np.max(np.abs(row_softmax(Z).sum(1) - 1))))

        k = int(rng.integers(2, 8))
        batch = interpolate_attributes(rng.normal(size=(k, 3)), int(rng.integers(1, 20)), rng)
        a = batch.alphas
        worst["alpha_range"] = max(worst["alpha_range"],
                                   float(np.max(np.maximum(0.2 - a, a - 0.8))), 0.0)
        worst["same_pair"] = max(worst["same_pair"],
                                 float(np.any(batch.pairs[:, 0] == batch.pairs[:, 1])))
    return worst


def suite_stochasticity(n_cases=100) -> SuiteResult:
    w = stochasticity_violations(n_cases)
    ok = (w["row_sum"] <= STOCH_TOL and w["negative"] == 0.0 and w["pxx_diag"] <= 1e-6
          and w["alpha_range"] == 0.0 and w["same_pair"] == 0.0)
    return SuiteResult("stochasticity", ok,
                       f"row-sum dev {w['row_sum']:.1e}, max p_xx diag {w['pxx_diag']:.1e}")


# --- walk oracle ------------------------------------------------------------

def explicit_softmax(S):
    E = np.exp(S - S.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def explicit_landings(centers, samples, R):
    """Walk landings from a direct matrix-power chain, built without the library."""
    C, X = np.asarray(centers), np.asarray(samples)
    sq = lambda A, B: -((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
    s_xx = sq(X, X)
    s_xx[np.diag_indices_from(s_xx)] = -np.inf
    p_cx, p_xx, p_xc = explicit_softmax(sq(C, X)), explicit_softmax(s_xx), explicit_softmax(sq(X, C))
    return [p_cx @ np.linalg.matrix_power(p_xx, r) @ p_xc for r in range(R + 1)]


def walk_oracle_error(n_cases=100, seed=0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        t = _random_triple(rng)
        R = int(rng.integers(0, 6))
        got = walk.walk_landing(t, R).landings
        ref = explicit_landings(t.centers, t.samples, R)
        worst = max(worst, max(float(np.max(np.abs(a - b))) for a, b in zip(got, ref)))
    return worst


def entropy_floor_gap(n_cases=100, seed=0):
    """``(min over instances of objective - floor, |objective - floor| when forced uniform)``."""
    rng = np.random.default_rng(seed)
    min_gap, forced = np.inf, 0.0
    for _ in range(n_cases):
        t = _random_triple(rng)
        R = int(rng.integers(0, 6))
        gamma = float(rng.uniform(0.05, 1.0))
        res = walk.walk_landing(t, R)
        floor = walk.grw_floor(t.n_centers, t.n_samples, gamma, R)
        min_gap = min(min_gap, walk.grw_objective(res, Uniform(), gamma) - floor)
        n_s, n_h = t.n_centers, t.n_samples
        uniform = walk.WalkResult(landings=[np.full((n_s, n_s), 1 / n_s)] * (R + 1),
                                  visit=np.full(n_h, 1 / n_h), triple=t)
        forced = max(forced, abs(walk.grw_objective(uniform, Uniform(), gamma) - floor))
    return float(min_gap), float(forced)


def suite_walk_oracle(n_cases=100) -> SuiteResult:
    err = walk_oracle_error(n_cases)
    gap, forced = entropy_floor_gap(n_cases)
    ok = err <= WALK_TOL and gap >= -1e-9 and forced <= 1e-9
    return SuiteResult("walk_oracle", ok,
                       f"landing err {err:.1e}, floor gap min {gap:.2e}, uniform {forced:.1e}")


# --- replay balance -----------------------------------------------------------

def replay_balance_violations(n_sequences=50, capacities=(7, 10, 100), seed=0) -> List[str]:
    rng = np.random.default_rng(seed)
    problems = []
    for B in capacities:
        for s in range(n_sequences):
            buf = ReplayBuffer(capacity=B, seed=int(rng.integers(2**31)))
            n_tasks = int(rng.integers(1, 7))
            next_id = 0
            for _ in range(n_tasks):
                k = int(rng.integers(1, 5))
                classes = list(range(next_id, next_id + k))
                next_id += k
                # every class brings at least B rows, so quotas are always fillable
                sizes = rng.integers(B, B + 40, size=k)
                X = rng.normal(size=(int(sizes.sum()), 2))
                y = np.repeat(classes, sizes)
                buf.update(TaskData(X, y, {c: np.ones(2) for c in classes}))
                counts = np.array(list(per_class_counts(buf).values()))
                if counts.sum() > B:
                    problems.append(f"B={B} seq {s}: total {counts.sum()} > {B}")
                if counts.max() - counts.min() > 1:
                    problems.append(f"B={B} seq {s}: spread {counts.max() - counts.min()}")
    return problems


def suite_replay_balance(n_sequences=50) -> SuiteResult:
    problems = replay_balance_violations(n_sequences)
    q = ReplayBuffer(capacity=10).quotas([0, 1, 2, 3])
    example_ok = [q[c] for c in range(4)] == [3, 3, 2, 2]
    ok = not problems and example_ok
    detail = "quota B=10, 4 classes -> [3, 3, 2, 2]" if ok else "; ".join(problems[:3]) or \
        f"quota example gave {[q[c] for c in range(4)]}"
    return SuiteResult("replay_balance", ok, detail)


# --- metrics ---------------------------------------------------------------------

def metric_checks() -> Dict[str, bool]:
    checks = {"H(0.6,0.3)=0.4": harmonic(0.6, 0.3) == 0.4, "H(0,0)=0": harmonic(0.0, 0.0) == 0.0}
    r = StreamReport(seen_acc=[0.7, 0.6, 0.5], unseen_acc=[0.2, 0.3, None],
                     final_seen_acc=[0.7, 0.6, 0.5])
    aggregate_metrics(r)
    checks["BWT=0 without forgetting"] = r.BWT == 0.0
    r = StreamReport(seen_acc=[0.5, 0.6], unseen_acc=[0.5, None], final_seen_acc=[0.5, 0.6])
    mSA, mUA, mHA, _ = aggregate_metrics(r)
    checks["T=2 hand aggregation"] = (abs(mSA - 0.55) < 1e-15 and mUA == 0.5 and mHA == 0.5)
    return checks


def suite_metrics() -> SuiteResult:
    checks = metric_checks()
    failed = [k for k, v in checks.items() if not v]
    return SuiteResult("metrics", not failed,
                       f"{len(checks)} closed-form checks" if not failed else ", ".join(failed))


# --- GDB correlation ----------------------------------------------------------

def within_task_correlations(gdb_trace) -> Dict[int, Optional[float]]:
    """Pearson r between walk loss and GDB over the epochs of each task."""
    by_task: Dict[int, list] = {}
    for t, _, grw, gdb in gdb_trace:
        by_task.setdefault(int(t), []).append((grw, gdb))
    return {t: pearson(*zip(*rows)) for t, rows in sorted(by_task.items())}


def mean_within_task_correlation(gdb_trace) -> Optional[float]:
    """Expected within-task r for a task drawn uniformly at random."""
    rs = [r for r in within_task_correlations(gdb_trace).values() if r is not None]
    return float(np.mean(rs)) if rs else None


def gdb_run(seed=0, epochs=None) -> StreamReport:
    """Default synthetic benchmark with the default trainer settings."""
    spec = SyntheticSpec(seed=seed)
    train, test = generate_synthetic(spec).split(0.2, np.random.default_rng(seed))
    cfg = TrainerConfig(seed=seed)
    if epochs is not None:
        cfg.epochs = epochs
    state = TrainerState(spec.d_a, spec.d_x, cfg)
    return train_task_stream(state, train, build_static_schedule(spec.n_classes, spec.n_tasks),
                             eval_dataset=test)


def suite_gdb_correlation(seed=0) -> SuiteResult:
    trace = gdb_run(seed).gdb_trace
    r = mean_within_task_correlation(trace)
    pooled = pearson(*zip(*[(g, d) for _, _, g, d in trace])) if trace else None
    ok = r is not None and r > GDB_MIN_R
    detail = "no variation in trace" if r is None else \
        f"mean within-task r = {r:.3f} (pooled r = {pooled:.3f})"
    return SuiteResult("gdb_correlation", ok, detail)


SUITES = {
    "gradients": suite_gradients,
    "stochasticity": suite_stochasticity,
    "walk_oracle": suite_walk_oracle,
    "replay_balance": suite_replay_balance,
    "metrics": suite_metrics,
    "gdb_correlation": suite_gdb_correlation,
}


def run_all(names=None) -> List[SuiteResult]:
    results = []
    for name in names or SUITES:
        start = time.perf_counter()
        try:
            res = SUITES[name]()
        except Exception as exc:  # a crashing suite is a failing suite
            res = SuiteResult(name, False, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - start
        results.append(res)
    return results


def format_table(results: List[SuiteResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'suite':<{width}}  result  time    detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  "
                     f"{r.seconds:5.1f}s  {r.detail}")
    return "\n".join(lines)
