"""Single- and multi-teacher distillation losses with gradients.

Per sample ``i`` the multi-teacher loss is

    CE(student_i, y_i)
      + alpha * sum_m w_l[i, m] * KL_tau(teacher_m_i || student_i)
      + beta  * sum_m w_f[i, m] * MSE(r_m(f_student_i), f_teacher_m_i)

and the batch loss is the mean over samples. ``r_m`` is the affine regressor
that maps the student feature into teacher ``m``'s feature space; its output
is what callers pass in as ``regressed``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc
from .errors import ParameterError, ShapeError


@dataclass
class KDConfig:
    alpha: float = 1.0
    beta: float = 5.0
    temperature: float = 4.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ParameterError("alpha and beta must be non-negative")
        if not self.temperature > 0:
            raise ParameterError("temperature must be positive")


@dataclass
class TeacherOutputs:
    """Frozen teacher outputs for one batch (or a whole split)."""

    features: list  # M arrays, B x d_m
    logits: list  # M arrays, B x C
    ce: np.ndarray  # B x M

    def __post_init__(self):
        if len(self.features) != len(self.logits):
            raise ShapeError("features and logits must list the same teachers")
        if not self.logits:
            return
        B, C = self.logits[0].shape
        for f, z in zip(self.features, self.logits):
            if z.shape != (B, C) or f.shape[0] != B:
                raise ShapeError("all teachers must share batch size and class count")
        self.ce = np.asarray(self.ce, dtype=np.float64).reshape(B, len(self.logits))

    @property
    def count(self):
        return len(self.logits)

    @property
    def batch_size(self):
        return self.logits[0].shape[0]

    @property
    def feature_dims(self):
        return [f.shape[1] for f in self.features]

    def take(self, idx) -> "TeacherOutputs":
        return TeacherOutputs([f[idx] for f in self.features], [z[idx] for z in self.logits], self.ce[idx])

    def subset(self, teachers) -> "TeacherOutputs":
        teachers = list(teachers)
        return TeacherOutputs(
            [self.features[m] for m in teachers], [self.logits[m] for m in teachers], self.ce[:, teachers]
        )


@dataclass
class KDResult:
    loss: float
    task: float
    logit_kd: float  # already scaled by alpha
    feature_kd: float  # already scaled by beta
    per_sample: np.ndarray
    grad_logits: np.ndarray
    grad_regressed: list = field(default_factory=list)

    @property
    def breakdown(self):
        return {"task": self.task, "logit_kd": self.logit_kd, "feature_kd": self.feature_kd}


def teacher_ce(teacher_logits, labels) -> np.ndarray:
    """Per-sample cross-entropy of a frozen teacher (no gradient is produced)."""
    loss, _ = tc.cross_entropy(teacher_logits, labels)
    return loss


def per_teacher_terms(student_logits, regressed, teachers: TeacherOutputs, labels, temperature):
    """Raw per-sample terms: CE (B,), KL (B, M) and feature MSE (B, M)."""
    if len(regressed) != teachers.count:
        raise ShapeError(f"{len(regressed)} regressed features for {teachers.count} teachers")
    ce, _ = tc.cross_entropy(student_logits, labels)
    kl = np.stack([tc.kl_divergence(student_logits, z, temperature)[0] for z in teachers.logits], axis=1)
    mse = np.stack([tc.mse(r, f)[0] for r, f in zip(regressed, teachers.features)], axis=1)
    return ce, kl, mse


def _unpack_weights(weights, B, M):
    if hasattr(weights, "w_l"):
        w_l, w_f = weights.w_l, weights.w_f
    else:
        w_l, w_f = weights
    w_l = np.asarray(w_l, dtype=np.float64)
    w_f = np.asarray(w_f, dtype=np.float64)
    if w_l.shape != (B, M) or w_f.shape != (B, M):
        raise ShapeError(f"weights must be {(B, M)}, got {w_l.shape} and {w_f.shape}")
    return w_l, w_f


def mtkd_loss(student_logits, regressed, teachers: TeacherOutputs, weights, labels, cfg: KDConfig) -> KDResult:
    """Weighted multi-teacher loss and its gradient w.r.t. student logits and
    each regressed feature. ``weights`` is an ActionWeights or ``(w_l, w_f)``."""
    student_logits = tc.as_matrix(student_logits)
    B, C = student_logits.shape
    M = teachers.count
    if teachers.batch_size != B:
        raise ShapeError(f"student batch {B} vs teacher batch {teachers.batch_size}")
    w_l, w_f = _unpack_weights(weights, B, M)
    if len(regressed) != M:
        raise ShapeError(f"{len(regressed)} regressed features for {M} teachers")

    ce, grad = tc.cross_entropy(student_logits, labels)
    logit_term = np.zeros(B)
    feat_term = np.zeros(B)
    grad_regressed = []
    for m in range(M):
        kl, kl_grad = tc.kl_divergence(student_logits, teachers.logits[m], cfg.temperature)
        mse, mse_grad = tc.mse(regressed[m], teachers.features[m])
        logit_term += w_l[:, m] * kl
        feat_term += w_f[:, m] * mse
        grad += cfg.alpha * w_l[:, m : m + 1] * kl_grad
        grad_regressed.append(cfg.beta * w_f[:, m : m + 1] * mse_grad / B)
    per_sample = ce + cfg.alpha * logit_term + cfg.beta * feat_term
    return KDResult(
        loss=float(per_sample.mean()),
        task=float(ce.mean()),
        logit_kd=float(cfg.alpha * logit_term.mean()),
        feature_kd=float(cfg.beta * feat_term.mean()),
        per_sample=per_sample,
        grad_logits=grad / B,
        grad_regressed=grad_regressed,
    )


def single_kd_loss(student_logits, regressed_feature, teacher_feature, teacher_logits, labels, cfg: KDConfig):
    """One-teacher loss ``CE + alpha*KL + beta*MSE(r(f_s), f_t)``."""
    teacher_logits = tc.as_matrix(teacher_logits)
    B = teacher_logits.shape[0]
    teachers = TeacherOutputs(
        [tc.as_matrix(teacher_feature)], [teacher_logits], teacher_ce(teacher_logits, labels).reshape(B, 1)
    )
    ones = np.ones((B, 1))
    return mtkd_loss(student_logits, [tc.as_matrix(regressed_feature)], teachers, (ones, ones), labels, cfg)


def task_loss(student_logits, labels) -> KDResult:
    """Cross-entropy only, shaped like the other results (the baseline)."""
    ce, grad = tc.cross_entropy(student_logits, labels)
    B = ce.shape[0]
    return KDResult(float(ce.mean()), float(ce.mean()), 0.0, 0.0, ce, grad / B, [])
