"""Training orchestration: teacher pool, student pre-training, agent
pre-training and the alternating distill / policy-update loop.

Strategies
    baseline  cross-entropy only, teachers unused
    aver      equal weights 1/M on both losses
    conf      confidence weights on both losses
    div       divergence weights (KL softmax for logits, cosine softmax for features)
    rl        policy-generated weights fused with conf and div
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor_core as tc
from .agent import ActionWeights, PolicyNet, act, confidence_weights, divergence_weights_feature, divergence_weights_logit
from .data import Dataset, Shard, batches
from .distill import KDConfig, TeacherOutputs, mtkd_loss, task_loss, teacher_ce
from .errors import ParameterError
from .models import DenseNet, NetSpec, build_net
from .rl import REWARD_NORMS, SURROGATES, EpisodeHistory, compute_reward, normalize_rewards, pg_update
from .rng import derive_seed
from .state import StateMask, build_state, state_dim

log = logging.getLogger(__name__)

STRATEGIES = ("baseline", "aver", "conf", "div", "rl")


@dataclass
class TeacherConfig:
    hidden: list = field(default_factory=lambda: [[64, 64], [64, 64], [48, 48], [32, 32]])
    epochs: int = 40
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    seed: int = 0


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 60
    batch_size: int = 64
    student_lr: float = 0.05
    agent_lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    kd: KDConfig = field(default_factory=KDConfig)
    strategy: str = "rl"
    state_mask: StateMask = field(default_factory=StateMask)
    standardize_state: bool = False
    reward_norm: str = "rescaled-mean"
    pg_surrogate: str = "log"
    reward_timing: str = "post"
    gamma_mode: str = "constant"
    gammas: tuple = (1 / 3, 1 / 3, 1 / 3, 1 / 3, 1 / 3, 1 / 3)
    student_hidden: int = 16
    agent_hidden: int = 128
    lr_decay_at: float = 2.0 / 3.0
    patience: int = 0
    teacher_count: int = 4

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ParameterError("batch_size and epochs must be at least 1")
        if not (self.student_lr > 0 and self.agent_lr > 0):
            raise ParameterError("learning rates must be positive")
        if self.strategy not in STRATEGIES:
            raise ParameterError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.reward_norm not in REWARD_NORMS:
            raise ParameterError(f"unknown reward-norm {self.reward_norm!r}")
        if self.pg_surrogate not in SURROGATES:
            raise ParameterError(f"unknown pg-surrogate {self.pg_surrogate!r}")
        if self.reward_timing not in ("post", "pre"):
            raise ParameterError(f"unknown reward-timing {self.reward_timing!r}")
        if self.gamma_mode not in ("constant", "learnable"):
            raise ParameterError(f"unknown gamma mode {self.gamma_mode!r}")
        if len(self.gammas) != 6:
            raise ParameterError("gammas needs six values (logit gen/conf/div, feature gen/conf/div)")

    def lr_at(self, epoch: int) -> float:
        decay_epoch = int(round(self.lr_decay_at * self.epochs))
        return self.student_lr * (0.1 if epoch >= decay_epoch else 1.0)


# ---------------------------------------------------------------------------
# teachers
# ---------------------------------------------------------------------------


class TeacherPool:
    def __init__(self, nets, noise_rates=None, accuracies=None):
        self.nets = list(nets)
        self.noise_rates = list(noise_rates) if noise_rates is not None else [None] * len(self.nets)
        self.accuracies = list(accuracies) if accuracies is not None else [None] * len(self.nets)

    def __len__(self):
        return len(self.nets)

    @property
    def feature_dims(self):
        return [n.feature_dim for n in self.nets]

    def outputs(self, x, labels) -> TeacherOutputs:
        feats, logits = [], []
        for net in self.nets:
            f, z = net.forward_features(x, cache=False)
            feats.append(f)
            logits.append(z)
        ce = np.stack([teacher_ce(z, labels) for z in logits], axis=1)
        return TeacherOutputs(feats, logits, ce)

    def subset(self, teachers) -> "TeacherPool":
        teachers = list(teachers)
        return TeacherPool(
            [self.nets[m] for m in teachers],
            [self.noise_rates[m] for m in teachers],
            [self.accuracies[m] for m in teachers],
        )

    def checksum(self) -> str:
        return "".join(n.checksum() for n in self.nets)

    def as_checkpoint(self):
        nets = {f"teacher_{m + 1}": net for m, net in enumerate(self.nets)}
        meta = {"noise_rates": self.noise_rates, "accuracies": self.accuracies}
        return nets, meta

    @classmethod
    def from_checkpoint(cls, nets: dict, meta: dict) -> "TeacherPool":
        names = sorted((n for n in nets if n.startswith("teacher_")), key=lambda s: int(s.split("_")[1]))
        return cls([nets[n] for n in names], meta.get("noise_rates"), meta.get("accuracies"))


def _train_classifier(net: DenseNet, x, y, epochs, lr, momentum, weight_decay, batch_size, seed):
    for epoch in range(epochs):
        for idx in batches(np.arange(x.shape[0]), batch_size, seed, epoch):
            logits = net.forward(x[idx])
            loss, grad = tc.cross_entropy(logits, y[idx])
            net.backward(grad / len(idx))
            tc.sgd_step(net.parameters(), lr, momentum, weight_decay)


def train_teachers(specs, shards, dataset: Dataset, cfg: TeacherConfig) -> TeacherPool:
    """Train one teacher per (spec, shard) with plain cross-entropy; frozen afterwards."""
    if len(specs) < 1 or len(specs) != len(shards):
        raise ParameterError("need one shard per teacher spec and at least one teacher")
    nets, accs = [], []
    x_test, y_test = dataset.split("test")
    for m, (spec, shard) in enumerate(zip(specs, shards)):
        net = build_net(spec)
        _train_classifier(net, shard.features, shard.labels, cfg.epochs, cfg.lr, cfg.momentum,
                          cfg.weight_decay, cfg.batch_size, derive_seed(cfg.seed, f"teacher-{m}-batches"))
        acc = evaluate(net, dataset, "test") if len(y_test) else float("nan")
        log.info("teacher %d (noise %.2f, layers %s): test acc %.4f", m + 1, shard.noise_rate, spec.layer_sizes, acc)
        nets.append(net)
        accs.append(acc)
    return TeacherPool(nets, [s.noise_rate for s in shards], accs)


def teacher_specs(dataset: Dataset, cfg: TeacherConfig):
    return [
        NetSpec.mlp([dataset.dim, *hidden, dataset.class_count], derive_seed(cfg.seed, f"teacher-{m}-init"))
        for m, hidden in enumerate(cfg.hidden)
    ]


def build_pool(dataset: Dataset, cfg: TeacherConfig) -> TeacherPool:
    if len(cfg.hidden) != len(dataset.shards):
        raise ParameterError(f"{len(cfg.hidden)} teacher architectures for {len(dataset.shards)} shards")
    return train_teachers(teacher_specs(dataset, cfg), dataset.shards, dataset, cfg)


# ---------------------------------------------------------------------------
# student
# ---------------------------------------------------------------------------


class Student:
    """Student classifier plus one affine regressor per teacher."""

    def __init__(self, net: DenseNet, regressors):
        self.net = net
        self.regressors = list(regressors)

    @classmethod
    def build(cls, in_dim, classes, hidden, feature_dims, seed):
        net = build_net(NetSpec.mlp([in_dim, hidden, classes], derive_seed(seed, "student-init")))
        regs = [
            build_net(NetSpec([hidden, d], ["none"], derive_seed(seed, f"regressor-{m}-init")))
            for m, d in enumerate(feature_dims)
        ]
        return cls(net, regs)

    def parameters(self):
        params = self.net.parameters()
        for r in self.regressors:
            params = params + r.parameters()
        return params

    def forward(self, x, cache=True, with_regressors=True):
        f, logits = self.net.forward_features(x, cache=cache)
        regressed = [r.forward(f, cache=cache) for r in self.regressors] if with_regressors else []
        return logits, regressed

    def backward(self, result):
        grad_feature = None
        for r, g in zip(self.regressors, result.grad_regressed):
            gf = r.backward(g)
            grad_feature = gf if grad_feature is None else grad_feature + gf
        self.net.backward(result.grad_logits, grad_feature)

    def checksum(self) -> str:
        return self.net.checksum() + "".join(r.checksum()[:16] for r in self.regressors)


def evaluate(net: DenseNet, dataset: Dataset, split: str = "test") -> float:
    x, y = dataset.split(split)
    if len(y) == 0:
        raise ParameterError(f"cannot evaluate on an empty {split} split")
    logits = net.forward(x, cache=False)
    return float(np.mean(np.argmax(logits, axis=1) == y))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def metrics_header(M: int) -> list:
    return (
        ["epoch", "strategy", "total_loss", "task_loss", "logit_kd", "feature_kd", "acc"]
        + [f"w_l_{m}" for m in range(1, M + 1)]
        + [f"w_f_{m}" for m in range(1, M + 1)]
        + [f"reward_{m}" for m in range(1, M + 1)]
    )


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


@dataclass
class EpochRow:
    epoch: int
    strategy: str
    total_loss: float
    task_loss: float
    logit_kd: float
    feature_kd: float
    acc: float
    w_l: list = None
    w_f: list = None
    reward: list = None


@dataclass
class RunMetrics:
    strategy: str
    teachers: int
    rows: list = field(default_factory=list)

    @property
    def final_acc(self) -> float:
        return self.rows[-1].acc

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(metrics_header(self.teachers))
        blank = [None] * self.teachers
        for r in self.rows:
            writer.writerow(
                [_fmt(v) for v in (r.epoch, r.strategy, r.total_loss, r.task_loss, r.logit_kd, r.feature_kd, r.acc)]
                + [_fmt(v) for v in (r.w_l or blank)]
                + [_fmt(v) for v in (r.w_f or blank)]
                + [_fmt(v) for v in (r.reward or blank)]
            )
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "RunMetrics":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            M = sum(1 for h in header if h.startswith("w_l_"))
            if header != metrics_header(M):
                raise ParameterError(f"{path}: unexpected metrics header")

            def num(s):
                return None if s == "" else float(s)

            def vec(cells):
                vals = [num(c) for c in cells]
                return None if all(v is None for v in vals) else vals

            rows = []
            for cells in reader:
                rows.append(EpochRow(int(cells[0]), cells[1], *(num(c) for c in cells[2:7]),
                                     vec(cells[7 : 7 + M]), vec(cells[7 + M : 7 + 2 * M]),
                                     vec(cells[7 + 2 * M : 7 + 3 * M])))
        strategy = rows[0].strategy if rows else ""
        return cls(strategy, M, rows)


class _EpochAccumulator:
    def __init__(self, M):
        self.n = 0
        self.sums = np.zeros(4)
        self.w_l = np.zeros(M)
        self.w_f = np.zeros(M)
        self.reward = np.zeros(M)
        self.weighted = False
        self.rewarded = False

    def add(self, result, B, action=None, raw_reward=None):
        self.n += B
        self.sums += B * np.array([result.loss, result.task, result.logit_kd, result.feature_kd])
        if action is not None:
            self.weighted = True
            self.w_l += action.w_l.sum(axis=0)
            self.w_f += action.w_f.sum(axis=0)
        if raw_reward is not None:
            self.rewarded = True
            self.reward += raw_reward.sum(axis=0)

    def row(self, epoch, strategy, acc):
        s = self.sums / max(self.n, 1)
        return EpochRow(
            epoch, strategy, *s, acc,
            list(self.w_l / self.n) if self.weighted else None,
            list(self.w_f / self.n) if self.weighted else None,
            list(self.reward / self.n) if self.rewarded else None,
        )


# ---------------------------------------------------------------------------
# the loops
# ---------------------------------------------------------------------------


@dataclass
class DistillContext:
    """Everything a distillation run reads: data, frozen teacher outputs, config."""

    dataset: Dataset
    cfg: TrainConfig
    teacher_out: TeacherOutputs = None  # over all N samples

    @classmethod
    def create(cls, dataset: Dataset, pool: TeacherPool, cfg: TrainConfig):
        out = pool.outputs(dataset.features, dataset.labels) if pool is not None and len(pool) else None
        return cls(dataset, cfg, out)

    @property
    def teachers(self):
        return self.teacher_out.count if self.teacher_out is not None else 0


def _strategy_weights(strategy, teachers: TeacherOutputs, state, policy, B):
    M = teachers.count
    if strategy == "aver":
        u = np.full((B, M), 1.0 / M)
        return ActionWeights.fixed(u, u)
    if strategy == "conf":
        w = confidence_weights(teachers.ce)
        return ActionWeights.fixed(w, w)
    if strategy == "div":
        return ActionWeights.fixed(divergence_weights_logit(state.kl), divergence_weights_feature(state.cos))
    if strategy == "rl":
        return act(policy, state)
    raise ParameterError(f"no weights for strategy {strategy!r}")


def _epoch(ctx: DistillContext, student: Student, epoch: int, strategy: str, policy=None,
           history: EpisodeHistory = None, on_batch=None):
    cfg = ctx.cfg
    ds = ctx.dataset
    M = ctx.teachers
    acc_ = _EpochAccumulator(max(M, 1))
    lr = cfg.lr_at(epoch)
    for b, idx in enumerate(batches(ds.train_idx, cfg.batch_size, cfg.seed, epoch)):
        x, y = ds.features[idx], ds.labels[idx]
        B = len(idx)
        if strategy == "baseline":
            logits, _ = student.forward(x, with_regressors=False)
            result = task_loss(logits, y)
            student.net.backward(result.grad_logits)
            tc.sgd_step(student.net.parameters(), lr, cfg.momentum, cfg.weight_decay)
            acc_.add(result, B)
            if on_batch:
                on_batch(epoch, b, None, result)
            continue

        teachers = ctx.teacher_out.take(idx)
        logits, regressed = student.forward(x)
        state = None
        if strategy in ("div", "rl"):
            state = build_state(logits, regressed, teachers, cfg.state_mask, cfg.standardize_state)
        action = _strategy_weights(strategy, teachers, state, policy, B)
        result = mtkd_loss(logits, regressed, teachers, action, y, cfg.kd)
        raw = None
        if strategy == "rl" and cfg.reward_timing == "pre":
            raw = compute_reward(logits, regressed, teachers, y, cfg.kd)
        student.backward(result)
        tc.sgd_step(student.parameters(), lr, cfg.momentum, cfg.weight_decay)
        if strategy == "rl":
            if raw is None:
                post_logits, post_reg = student.forward(x, cache=False)
                raw = compute_reward(post_logits, post_reg, teachers, y, cfg.kd)
            history.record(state.vector, action, normalize_rewards(raw, cfg.reward_norm), raw)
        acc_.add(result, B, action, raw)
        if on_batch:
            on_batch(epoch, b, action, result)
    return acc_


def make_policy(ctx: DistillContext, cfg: TrainConfig) -> PolicyNet:
    dim = state_dim(cfg.state_mask, ctx.teacher_out.feature_dims, ctx.dataset.class_count)
    return PolicyNet(dim, ctx.teachers, cfg.agent_hidden, derive_seed(cfg.seed, "agent-init"),
                     gammas=np.reshape(cfg.gammas, (2, 3)), learnable_gammas=cfg.gamma_mode == "learnable")


def make_student(ctx: DistillContext, cfg: TrainConfig) -> Student:
    dims = ctx.teacher_out.feature_dims if ctx.teacher_out is not None else []
    return Student.build(ctx.dataset.dim, ctx.dataset.class_count, cfg.student_hidden, dims, cfg.seed)


def pretrain_student(student: Student, ctx: DistillContext, on_batch=None) -> EpochRow:
    """One epoch of equal-weight multi-teacher distillation (epoch index 0)."""
    acc_ = _epoch(ctx, student, 0, "aver", on_batch=on_batch)
    return acc_.row(1, ctx.cfg.strategy, evaluate(student.net, ctx.dataset))


def pretrain_agent(policy: PolicyNet, student: Student, ctx: DistillContext) -> EpisodeHistory:
    """Collect (state, equal-weight action, reward) over the train split with the
    student frozen, then run one policy-gradient replay."""
    cfg = ctx.cfg
    ds = ctx.dataset
    history = EpisodeHistory()
    M = ctx.teachers
    for idx in batches(ds.train_idx, cfg.batch_size, cfg.seed, 0):
        x, y = ds.features[idx], ds.labels[idx]
        teachers = ctx.teacher_out.take(idx)
        logits, regressed = student.forward(x, cache=False)
        state = build_state(logits, regressed, teachers, cfg.state_mask, cfg.standardize_state)
        action = ActionWeights.uniform(len(idx), M)
        raw = compute_reward(logits, regressed, teachers, y, cfg.kd)
        history.record(state.vector, action, normalize_rewards(raw, cfg.reward_norm), raw)
    pg_update(policy, history, cfg.agent_lr, cfg.pg_surrogate)
    return history


def alternating_train(student: Student, policy, ctx: DistillContext, start_epoch: int = 0,
                      on_batch=None, on_epoch=None) -> RunMetrics:
    """Epochs ``start_epoch .. cfg.epochs-1``: distill over shuffled batches with
    the agent frozen, then replay the epoch's history for the policy update."""
    cfg = ctx.cfg
    strategy = cfg.strategy
    metrics = RunMetrics(strategy, ctx.teachers or cfg.teacher_count)
    history = EpisodeHistory()
    best, stale = -1.0, 0
    for epoch in range(start_epoch, cfg.epochs):
        history.reset()
        acc_ = _epoch(ctx, student, epoch, strategy, policy, history, on_batch)
        if strategy == "rl" and len(history):
            pg_update(policy, history, cfg.agent_lr, cfg.pg_surrogate)
        acc = evaluate(student.net, ctx.dataset)
        metrics.rows.append(acc_.row(epoch + 1, strategy, acc))
        if on_epoch:
            on_epoch(epoch, student, policy)
        if cfg.patience > 0:
            if acc > best:
                best, stale = acc, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("stopping at epoch %d: no improvement in %d epochs", epoch + 1, cfg.patience)
                    break
    return metrics


def run_strategy(strategy: str, cfg: TrainConfig, dataset: Dataset, pool: TeacherPool = None,
                 on_batch=None, on_epoch=None):
    """Run one strategy end to end. Returns ``(metrics, student, policy)``.

    For ``rl`` the first epoch is the equal-weight student pre-training epoch,
    followed by agent pre-training; the epoch budget includes it.
    """
    if strategy not in STRATEGIES:
        raise ParameterError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    cfg = replace(cfg, strategy=strategy)
    if strategy != "baseline" and (pool is None or len(pool) == 0):
        raise ParameterError(f"strategy {strategy!r} needs a teacher pool")
    ctx = DistillContext.create(dataset, pool if strategy != "baseline" else None, cfg)
    student = make_student(ctx, cfg)
    if strategy == "baseline":
        student.regressors = []
    policy = None
    if strategy != "rl":
        return alternating_train(student, None, ctx, 0, on_batch, on_epoch), student, None

    policy = make_policy(ctx, cfg)
    first = pretrain_student(student, ctx, on_batch)
    history = pretrain_agent(policy, student, ctx)
    raw = np.concatenate([ep.raw_rewards for ep in history])
    first.reward = list(raw.mean(axis=0))
    metrics = RunMetrics(strategy, ctx.teachers)
    metrics.rows.append(first)
    if cfg.epochs > 1:
        metrics.rows.extend(alternating_train(student, policy, ctx, 1, on_batch, on_epoch).rows)
    return metrics, student, policy
