"""Rewards, reward normalization, episode history and the policy-gradient step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .agent import ActionWeights, PolicyNet
from .distill import KDConfig, TeacherOutputs, per_teacher_terms
from .errors import ParameterError, StateError

REWARD_NORMS = ("rescaled-mean", "literal")
SURROGATES = ("log", "linear")


def compute_reward(student_logits, regressed, teachers: TeacherOutputs, labels, cfg: KDConfig) -> np.ndarray:
    """``R[i, m] = -(CE_i + alpha*KL_im + beta*MSE_im)``; B x M, always <= 0.

    Pass outputs from a cache-free forward taken after the student update.
    """
    ce, kl, mse = per_teacher_terms(student_logits, regressed, teachers, labels, cfg.temperature)
    return -(ce[:, None] + cfg.alpha * kl + cfg.beta * mse)


def normalize_rewards(raw, mode: str = "rescaled-mean") -> np.ndarray:
    """Per-sample min-max rescale over teachers, then mean subtraction.

    ``rescaled-mean`` subtracts the mean of the rescaled values (zero-sum rows);
    ``literal`` subtracts the mean of the raw rewards instead. Rows where all
    teachers tie come back as zeros in both modes.
    """
    if mode not in REWARD_NORMS:
        raise ParameterError(f"unknown reward normalization {mode!r}")
    raw = tc.as_matrix(raw)
    lo = raw.min(axis=1, keepdims=True)
    span = raw.max(axis=1, keepdims=True) - lo
    flat = span[:, 0] == 0.0
    scaled = (raw - lo) / np.where(span == 0.0, 1.0, span)
    if mode == "rescaled-mean":
        out = scaled - scaled.mean(axis=1, keepdims=True)
    else:
        out = scaled - raw.mean(axis=1, keepdims=True)
    out[flat] = 0.0
    return out


@dataclass
class Episode:
    states: np.ndarray  # B x state_dim
    action: ActionWeights
    rewards: np.ndarray  # normalized, B x M
    raw_rewards: np.ndarray = None


class EpisodeHistory:
    def __init__(self):
        self._entries = []

    def record(self, states, action, rewards, raw_rewards=None):
        states = tc.as_matrix(states)
        rewards = tc.as_matrix(rewards)
        if states.shape[0] != rewards.shape[0] or action.w_l.shape != rewards.shape:
            raise ParameterError("state, action and reward batches disagree in shape")
        self._entries.append(Episode(states.copy(), action, rewards.copy(), raw_rewards))

    def reset(self):
        self._entries = []

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __getitem__(self, i):
        return self._entries[i]


def record_episode(history: EpisodeHistory, state, action, normalized_rewards, raw_rewards=None):
    vector = state.vector if hasattr(state, "vector") else state
    history.record(vector, action, normalized_rewards, raw_rewards)


def _head_terms(w, R, surrogate):
    """Objective contribution and d/d(pre-softmax logits) for one head."""
    if surrogate == "log":
        value = float((R * np.log(np.maximum(w, 1e-300))).sum())
        grad = R - w * R.sum(axis=1, keepdims=True)
    else:
        value = float((R * w).sum())
        grad = w * (R - (w * R).sum(axis=1, keepdims=True))
    return value, grad


def surrogate_objective(policy: PolicyNet, states, rewards, surrogate: str = "log") -> float:
    """``J = sum_i sum_m R[i,m] * (g(w_l_gen) + g(w_f_gen))`` with g = log or identity."""
    if surrogate not in SURROGATES:
        raise ParameterError(f"unknown surrogate {surrogate!r}")
    w_l, w_f = policy.forward(states, cache=False)
    R = tc.as_matrix(rewards)
    return _head_terms(w_l, R, surrogate)[0] + _head_terms(w_f, R, surrogate)[0]


def accumulate_surrogate_grad(policy: PolicyNet, states, rewards, surrogate: str = "log", sign: float = 1.0) -> float:
    """Add ``sign * dJ/dtheta`` into the policy's parameter grads; return J."""
    if surrogate not in SURROGATES:
        raise ParameterError(f"unknown surrogate {surrogate!r}")
    R = tc.as_matrix(rewards)
    w_l, w_f = policy.forward(states, cache=True)
    jl, gl = _head_terms(w_l, R, surrogate)
    jf, gf = _head_terms(w_f, R, surrogate)
    policy.backward(sign * gl, sign * gf)
    return jl + jf


def gamma_objective_grad(gammas, w_gen, action: ActionWeights, rewards, surrogate: str = "log"):
    """``dJ/dgammas`` (2x3) of the surrogate evaluated on the fused weights."""
    R = tc.as_matrix(rewards)
    grad = np.zeros((2, 3))
    value = 0.0
    for h, (gen, div) in enumerate(((w_gen[0], action.w_l_div), (w_gen[1], action.w_f_div))):
        parts = (gen, action.w_conf, div)
        fused = sum(gammas[h, k] * parts[k] for k in range(3))
        if surrogate == "log":
            fused = np.maximum(fused, 1e-300)
            value += float((R * np.log(fused)).sum())
            coeff = R / fused
        else:
            value += float((R * fused).sum())
            coeff = R
        for k in range(3):
            grad[h, k] = float((coeff * parts[k]).sum())
    return value, grad


def pg_update(policy: PolicyNet, history: EpisodeHistory, eta: float, surrogate: str = "log"):
    """Replay ``history`` in order, one gradient-ascent step on J per entry."""
    if not eta > 0:
        raise ParameterError("eta must be positive")
    if len(history) == 0:
        raise StateError("policy-gradient update on an empty episode history")
    for ep in history:
        policy.zero_grad()
        accumulate_surrogate_grad(policy, ep.states, ep.rewards, surrogate, sign=-1.0)
        tc.sgd_step(policy.parameters(), eta)
        if policy.learnable_gammas:
            w_gen = policy.forward(ep.states, cache=False)
            gam = policy.gammas
            _, g = gamma_objective_grad(gam, w_gen, ep.action, ep.rewards, surrogate)
            # chain through the per-row softmax
            dlogits = gam * (g - (gam * g).sum(axis=1, keepdims=True))
            policy.gamma_logits.value += eta * dlogits
