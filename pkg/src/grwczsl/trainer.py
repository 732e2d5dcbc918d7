"""Continual zero-shot training over a task stream.

Per batch the discriminator takes one step, then the generator takes one
step. The generator objective adds the inductive terms: a creativity penalty
on samples generated from hallucinated attributes, the random-walk loss that
pushes walks through those samples to land uniformly on the seen classes, and
the random-walk regularizer that asks walks through generated seen samples to
return to their starting class.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import losses, walk
from .data import Dataset, TaskData, TaskSchedule
from .exceptions import ConfigError, NumericError, StateError
from .hallucinate import (AttributeDictionary, HallucinatedBatch, dictionary_init,
                          dictionary_sample, interpolate_attributes)
from .linalg import Identity, Uniform, cosine_sim_matrix
from .losses import LossWeights
from .nets import AdamState, GradTape, TwoLayerNet, adam_step, backward, forward
from .replay import ReplayBuffer, per_class_counts

log = logging.getLogger(__name__)

HALLUCINATION_MODES = ("interpolation", "dictionary")


@dataclass
class TrainerConfig:
    hidden_g: int = 64
    hidden_d: int = 64
    d_z: Optional[int] = None  # defaults to d_a
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.005
    weight_decay: float = 1e-5
    dict_lr: Optional[float] = None  # defaults to lr
    buffer_capacity: int = 5000
    buffer_mode: str = "real"
    generative_per_class: int = 200
    hallucination: str = "interpolation"
    center_samples: int = 5
    leaky_slope: float = 0.2
    g_output: str = "identity"
    seed: int = 0
    track_gdb: bool = True

    def validate(self):
        for name in ("hidden_g", "hidden_d", "epochs", "batch_size", "center_samples"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.d_z is not None and self.d_z < 1:
            raise ConfigError("d_z must be positive")
        if self.lr < 0 or self.weight_decay < 0 or (self.dict_lr is not None and self.dict_lr < 0):
            raise ConfigError("learning rates and weight decay must be non-negative")
        if self.hallucination not in HALLUCINATION_MODES:
            raise ConfigError(f"hallucination must be one of {HALLUCINATION_MODES}")
        if self.buffer_mode not in ("real", "generative"):
            raise ConfigError("buffer_mode must be 'real' or 'generative'")
        if self.buffer_capacity < 0:
            raise ConfigError("buffer_capacity must be non-negative")
        return self


class TrainerState:
    """Networks, optimizers, replay buffer and RNG for one training run."""

    def __init__(self, d_a, d_x, config: Optional[TrainerConfig] = None,
                 weights: Optional[LossWeights] = None):
        self.config = (config or TrainerConfig()).validate()
        self.weights = weights or LossWeights()
        self.weights.validate()
        cfg = self.config
        self.d_a = int(d_a)
        self.d_x = int(d_x)
        self.d_z = int(cfg.d_z or d_a)
        self.rng = np.random.default_rng(cfg.seed)
        self.G = TwoLayerNet(self.d_a + self.d_z, cfg.hidden_g, self.d_x, rng=self.rng,
                             slope=cfg.leaky_slope, output_activation=cfg.g_output)
        self.D = TwoLayerNet(self.d_a, cfg.hidden_d, self.d_x, rng=self.rng,
                             slope=cfg.leaky_slope)
        self.G_tape = GradTape()
        self.D_tape = GradTape()
        self.G_opt = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.D_opt = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.dictionary: Optional[AttributeDictionary] = None
        self.buffer = ReplayBuffer(cfg.buffer_capacity, cfg.buffer_mode,
                                   seed=int(self.rng.integers(2**32)),
                                   generative_per_class=cfg.generative_per_class)
        self.task_index = 0

    # -- inference helpers ----------------------------------------------------

    def embed(self, attrs) -> np.ndarray:
        return forward(self.D, np.asarray(attrs, dtype=np.float64))

    def generate(self, attrs, rng=None) -> np.ndarray:
        attrs = np.asarray(attrs, dtype=np.float64)
        rng = self.rng if rng is None else rng
        z = rng.standard_normal((attrs.shape[0], self.d_z))
        return forward(self.G, np.hstack([attrs, z]))

    def predict(self, X, attrs) -> np.ndarray:
        """Row index into ``attrs`` of the most cosine-similar embedding."""
        return np.argmax(cosine_sim_matrix(X, self.embed(attrs)), axis=1)

    def seen_classes(self):
        return self.buffer.seen_classes

    # generative replay hooks
    def sample_features(self, attrs):
        return self.generate(attrs)

    def predict_seen(self, X):
        seen = self.seen_classes()
        bank = np.stack([self.buffer.attr_bank[c] for c in seen])
        return np.asarray(seen)[self.predict(X, bank)]


@dataclass
class TaskContext:
    """Per-task arrays shared by every batch of the task."""

    seen: List[int]
    current: List[int]
    attr_bank: np.ndarray        # N_s x d_a, rows ordered like ``seen``
    real_centers: np.ndarray     # N_s x d_x from current data plus buffer
    current_rows: np.ndarray     # rows of ``seen`` that belong to this task
    features: np.ndarray
    labels: np.ndarray           # row indices into ``seen``

    @property
    def n_seen(self):
        return len(self.seen)


def make_task_context(state: TrainerState, task: TaskData) -> TaskContext:
    bank = dict(state.buffer.attr_bank)
    bank.update(task.attributes)
    seen = sorted(bank)
    row = {c: i for i, c in enumerate(seen)}
    Xb, yb = state.buffer.items()
    if len(yb):
        X = np.concatenate([task.features, Xb])
        y = np.concatenate([task.labels, yb])
    else:
        X, y = task.features, task.labels
    centers = np.zeros((len(seen), state.d_x))
    for c in seen:
        rows = X[y == c]
        if len(rows):
            centers[row[c]] = rows.mean(axis=0)
        else:
            # nothing stored for this class any more; fall back to its embedding
            centers[row[c]] = state.embed(bank[c][None, :])[0]
    return TaskContext(
        seen=seen,
        current=sorted(task.classes),
        attr_bank=np.stack([bank[c] for c in seen]),
        real_centers=centers,
        current_rows=np.array([row[c] for c in task.classes], dtype=np.int64),
        features=X,
        labels=np.array([row[c] for c in y], dtype=np.int64),
    )


def iter_batches(ctx: TaskContext, batch_size, rng):
    perm = rng.permutation(len(ctx.labels))
    for start in range(0, len(perm), batch_size):
        idx = perm[start:start + batch_size]
        yield ctx.features[idx], ctx.labels[idx]


def _check_finite(parts, where):
    for k, v in parts.items():
        if not np.isfinite(v):
            raise NumericError(f"non-finite {k} loss in {where} step")


def discriminator_objective(state: TrainerState, ctx: TaskContext, X, y, rng) -> dict:
    """Evaluate ``L_D`` on one batch and accumulate its gradient on ``state.D_tape``.

    All randomness comes from ``rng``; parameters are left untouched.
    """
    w = state.weights
    n = len(y)
    a = ctx.attr_bank[y]
    X_sg = state.generate(a, rng)
    cur = np.isin(y, ctx.current_rows)

    E = forward(state.D, np.vstack([a, ctx.attr_bank]), state.D_tape)
    E_b, E_bank = E[:n], E[n:]

    rf, _, _, dE_rf = losses.real_fake_loss_grad(X[cur], X_sg[cur], E_b[cur])
    cls_real, _, dbank_real = losses.classification_loss_grad(X, y, E_bank, w.tau)
    cls_fake, _, dbank_fake = losses.classification_loss_grad(X_sg, y, E_bank, w.tau)
    rd, dbank_rd = losses.discriminator_regularizer_grad(E_bank, ctx.real_centers)

    parts = {"real_fake": rf, "classification": cls_real + cls_fake, "rd": rd}
    _check_finite(parts, "discriminator")
    coef = losses.discriminator_coefficients(w)
    dE = np.zeros_like(E)
    dE[:n][cur] = coef["real_fake"] * dE_rf
    dE[n:] = coef["classification"] * (dbank_real + dbank_fake) + coef["rd"] * dbank_rd
    backward(state.D, state.D_tape, dE)
    parts["L_D"] = losses.compose_discriminator_loss(
        {k: parts[k] for k in ("real_fake", "classification", "rd")}, w)
    return parts


def discriminator_step(state: TrainerState, ctx: TaskContext, X, y) -> dict:
    parts = discriminator_objective(state, ctx, X, y, state.rng)
    adam_step(state.D, state.D_tape, state.D_opt)
    return parts


def hallucinate(state: TrainerState, ctx: TaskContext, n, rng) -> HallucinatedBatch:
    if state.config.hallucination == "dictionary":
        return dictionary_sample(state.dictionary, n, rng)
    return interpolate_attributes(ctx.attr_bank, n, rng)


def generator_objective(state: TrainerState, ctx: TaskContext, X, y, rng):
    """Evaluate ``L_G`` on one batch and accumulate its gradient on ``state.G_tape``.

    Returns ``(parts, halluc, d_halluc_attrs)``; the last two feed the
    dictionary update and are ``None`` when nothing was hallucinated.
    """
    w = state.weights
    cfg = state.config
    n = len(y)
    m = cfg.center_samples
    N_s = ctx.n_seen
    a = ctx.attr_bank[y]
    cur = np.isin(y, ctx.current_rows)
    E_b = state.embed(a)
    E_bank = state.embed(ctx.attr_bank)
    halluc = hallucinate(state, ctx, n, rng) if N_s >= 2 else None
    n_h = len(halluc) if halluc is not None else 0

    blocks = [a, np.repeat(ctx.attr_bank, m, axis=0)]
    if halluc is not None:
        blocks.append(halluc.attributes)
    A_in = np.vstack(blocks)
    Z = rng.standard_normal((A_in.shape[0], state.d_z))
    out = forward(state.G, np.hstack([A_in, Z]), state.G_tape)
    X_sg = out[:n]
    X_c = out[n:n + N_s * m]
    X_h = out[n + N_s * m:]
    centers = X_c.reshape(N_s, m, -1).mean(axis=1)

    d_sg = np.zeros_like(X_sg)
    d_centers = np.zeros_like(centers)
    d_h = np.zeros_like(X_h)

    rf, _, d_fake, _ = losses.real_fake_loss_grad(X[cur], X_sg[cur], E_b[cur])
    d_sg[cur] += d_fake
    cls_real = losses.classification_loss(X, y, E_bank, w.tau)
    cls_fake, d_cls, _ = losses.classification_loss_grad(X_sg, y, E_bank, w.tau)
    d_sg += w.lambda_cls * d_cls

    creativity = grw = grw_reg = 0.0
    if N_s >= 2:
        creativity, d_cre, _ = losses.creativity_loss_grad(X_h, E_bank, w.tau)
        d_h += w.lambda_c * d_cre
        if n_h >= 2:
            grw, dc_g, dh_g = walk.grw_loss(centers, X_h, Uniform(), w.gamma, w.R)
            d_centers += w.lambda_i * dc_g
            d_h += w.lambda_i * dh_g
        if n >= 2:
            grw_reg, dc_r, dsg_r = walk.grw_loss(centers, X_sg, Identity(), w.gamma, w.R)
            d_centers += w.lambda_i * dc_r
            d_sg += w.lambda_i * dsg_r

    rows = ctx.current_rows
    k_eff = min(int(w.sal_neighbors), len(rows) - 1)
    if k_eff >= 1:
        rg, d_rg = losses.generator_regularizer_grad(
            ctx.real_centers[rows], centers[rows], ctx.attr_bank[rows],
            replace(w, sal_neighbors=k_eff))
    else:
        rg = losses.discriminator_regularizer(centers[rows], ctx.real_centers[rows])
        d_rg = 2.0 * (centers[rows] - ctx.real_centers[rows])
    d_centers[rows] += w.lambda_rg * d_rg

    parts = {"real_fake": rf, "classification": cls_real + cls_fake,
             "creativity": creativity, "grw": grw, "grw_reg": grw_reg, "rg": rg}
    _check_finite(parts, "generator")

    upstream = np.vstack([d_sg, np.repeat(d_centers / m, m, axis=0), d_h])
    d_in = backward(state.G, state.G_tape, upstream)
    parts["L_G"] = losses.compose_generator_loss(
        {k: parts[k] for k in ("real_fake", "classification", "creativity",
                               "grw", "grw_reg", "rg")}, w)
    d_h_attrs = d_in[n + N_s * m:, :state.d_a] if halluc is not None else None
    return parts, halluc, d_h_attrs


def generator_step(state: TrainerState, ctx: TaskContext, X, y) -> dict:
    parts, halluc, d_h_attrs = generator_objective(state, ctx, X, y, state.rng)
    adam_step(state.G, state.G_tape, state.G_opt)
    if state.dictionary is not None and halluc is not None and halluc.indices is not None:
        state.dictionary.accumulate(halluc, d_h_attrs)
        state.dictionary.step()
    return parts


def train_epoch(state: TrainerState, ctx: TaskContext, batches=None) -> dict:
    """One pass over the current task data concatenated with the buffer."""
    if batches is None:
        batches = iter_batches(ctx, state.config.batch_size, state.rng)
    sums: Dict[str, float] = {}
    count = 0
    for X, y in batches:
        d_parts = discriminator_step(state, ctx, X, y)
        g_parts = generator_step(state, ctx, X, y)
        for k, v in d_parts.items():
            sums["D_" + k] = sums.get("D_" + k, 0.0) + v
        for k, v in g_parts.items():
            sums["G_" + k] = sums.get("G_" + k, 0.0) + v
        count += 1
    return {k: v / max(count, 1) for k, v in sums.items()}


def train_task(state: TrainerState, task: TaskData, epochs=None,
               on_epoch: Optional[Callable[[int, dict], None]] = None) -> List[dict]:
    """Train on one task's slice, then fold it into the replay buffer."""
    if len(task) == 0:
        raise StateError("task has no training data")
    if task.features.shape[1] != state.d_x:
        raise ConfigError(f"features have width {task.features.shape[1]}, expected {state.d_x}")
    epochs = state.config.epochs if epochs is None else epochs
    ctx = make_task_context(state, task)
    if state.config.hallucination == "dictionary" and ctx.n_seen >= 2:
        state.dictionary = dictionary_init(ctx.attr_bank, state.rng,
                                           lr=state.config.dict_lr or state.config.lr)
    history = []
    for e in range(epochs):
        stats = train_epoch(state, ctx)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(e + 1, stats)
    state.buffer.update(task, classifier=state)
    state.task_index += 1
    return history


# --- evaluation --------------------------------------------------------------

def per_class_accuracy(state: TrainerState, dataset: Dataset) -> np.ndarray:
    """Accuracy per class over all dataset classes (NaN where a class has no rows)."""
    pred = state.predict(dataset.features, dataset.class_attrs)
    acc = np.full(dataset.n_classes, np.nan)
    for c in range(dataset.n_classes):
        mask = dataset.labels == c
        if mask.any():
            acc[c] = float(np.mean(pred[mask] == c))
    return acc


def _mean_over(acc, classes):
    vals = acc[list(classes)]
    vals = vals[~np.isnan(vals)]
    return float(vals.mean()) if vals.size else None


def evaluate_task(state: TrainerState, dataset: Dataset, schedule: TaskSchedule, t
                  ) -> Tuple[float, Optional[float]]:
    """``(S_t, U_t)``: mean per-class accuracy on seen and unseen classes.

    Predictions range over every class in ``dataset``. ``U_t`` is ``None``
    once nothing is left unseen.
    """
    acc = per_class_accuracy(state, dataset)
    unseen = schedule.unseen(t)
    return _mean_over(acc, schedule.seen(t)), (_mean_over(acc, unseen) if unseen else None)


def harmonic(s, u) -> float:
    return 0.0 if s + u == 0 else 2.0 * s * u / (s + u)


@dataclass
class StreamReport:
    seen_acc: List[float] = field(default_factory=list)
    unseen_acc: List[Optional[float]] = field(default_factory=list)
    per_class: List[List[float]] = field(default_factory=list)
    final_seen_acc: List[float] = field(default_factory=list)  # S_T(D^{1:t})
    gdb_trace: List[Tuple[int, int, float, float]] = field(default_factory=list)
    buffer_counts: List[Dict[int, int]] = field(default_factory=list)  # after each task
    mSA: Optional[float] = None
    mUA: Optional[float] = None
    mHA: Optional[float] = None
    BWT: Optional[float] = None

    @property
    def harmonic_per_task(self):
        return [harmonic(s, u) for s, u in zip(self.seen_acc, self.unseen_acc) if u is not None]

    def to_dict(self):
        return asdict(self)


def aggregate_metrics(report: StreamReport):
    """Fill and return ``(mSA, mUA, mHA, BWT)``; unseen-based entries are
    ``None`` for a single-task stream."""
    S = report.seen_acc
    T = len(S)
    if T == 0:
        raise StateError("no per-task accuracies recorded")
    U = report.unseen_acc[:T - 1]
    if len(U) != T - 1 or any(u is None for u in U) or any(s is None for s in S):
        raise StateError("missing unseen accuracies")
    if len(report.final_seen_acc) < T - 1:
        raise StateError("missing final seen accuracies for backward transfer")
    report.mSA = float(np.mean(S))
    if T > 1:
        report.mUA = float(np.mean(U))
        report.mHA = float(np.mean([harmonic(s, u) for s, u in zip(S[:T - 1], U)]))
        report.BWT = float(np.mean([report.final_seen_acc[t] - S[t] for t in range(T - 1)]))
    else:
        report.mUA = report.mHA = report.BWT = None
    return report.mSA, report.mUA, report.mHA, report.BWT


def hallucinated_accuracy(state: TrainerState, batch: HallucinatedBatch, rng=None) -> float:
    """Share of hallucinated samples whose nearest hallucinated embedding is their own."""
    if len(batch) == 0:
        raise StateError("empty hallucinated batch")
    X_h = state.generate(batch.attributes, rng)
    return float(np.mean(state.predict(X_h, batch.attributes) == np.arange(len(batch))))


def gdb_estimate(state: TrainerState, dataset: Dataset, schedule: TaskSchedule, t,
                 halluc_batch: HallucinatedBatch, rng=None) -> float:
    """``|acc on generated hallucinated samples - unseen test accuracy|``."""
    acc_h = hallucinated_accuracy(state, halluc_batch, rng)
    _, acc_u = evaluate_task(state, dataset, schedule, t)
    if acc_u is None:
        raise StateError(f"task {t} has no unseen classes")
    return abs(acc_h - acc_u)


def train_task_stream(state: TrainerState, dataset: Dataset, schedule: TaskSchedule,
                      epochs=None, eval_dataset: Optional[Dataset] = None) -> StreamReport:
    """Run the whole stream; training only ever sees ``dataset.task_data(seen)``.

    ``eval_dataset`` holds the test rows; when omitted the training rows are
    scored instead.
    """
    eval_ds = eval_dataset if eval_dataset is not None else dataset
    report = StreamReport()
    T = schedule.n_tasks
    for t in range(1, T + 1):
        task = dataset.task_data(schedule.current(t))
        gdb_rng = np.random.default_rng([state.config.seed, t])

        def on_epoch(epoch, stats, t=t, task=task):
            if not (state.config.track_gdb and t < T):
                return
            n = state.config.batch_size
            if state.dictionary is not None:
                batch = dictionary_sample(state.dictionary, n, gdb_rng)
            else:
                known = np.stack([task.attributes[c] for c in task.classes]
                                 + [state.buffer.attr_bank[c] for c in state.buffer.seen_classes
                                    if c not in task.attributes])
                if known.shape[0] < 2:
                    return
                batch = interpolate_attributes(known, n, gdb_rng)
            d = gdb_estimate(state, eval_ds, schedule, t, batch, gdb_rng)
            report.gdb_trace.append((t, epoch, float(stats.get("G_grw", 0.0)), d))

        train_task(state, task, epochs, on_epoch)
        report.buffer_counts.append(per_class_counts(state.buffer))
        s, u = evaluate_task(state, eval_ds, schedule, t)
        report.seen_acc.append(s)
        report.unseen_acc.append(u)
        report.per_class.append(per_class_accuracy(state, eval_ds).tolist())
        log.info("task %d/%d: S=%.4f U=%s", t, T, s, "-" if u is None else f"{u:.4f}")
    final = np.array(report.per_class[-1])
    report.final_seen_acc = [_mean_over(final, schedule.seen(t)) for t in range(1, T + 1)]
    aggregate_metrics(report)
    return report
