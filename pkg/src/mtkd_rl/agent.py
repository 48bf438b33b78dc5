"""Teacher-weighting agent.

A single policy network reads the concatenated state of all teachers and
emits two distributions over the M teachers, one for the logit-level loss
and one for the feature-level loss. Each is mixed with a confidence rule
(teachers with low cross-entropy on the true label weigh more) and a
divergence rule (softmax over feature cosines, resp. over KL gaps) using
per-head mixing coefficients gamma.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .errors import ParameterError, ShapeError, StateError
from .models import DenseNet, NetSpec, build_net
from .rng import derive_seed

log = logging.getLogger(__name__)

# rows: logit head, feature head; columns: generator, confidence, divergence
DEFAULT_GAMMAS = np.full((2, 3), 1.0 / 3.0)


class PolicyNet:
    """Shared ReLU trunk with two affine+softmax heads (logit-level, feature-level).

    With ``learnable_gammas`` the mixing coefficients are ``softmax`` of a
    2x3 parameter, which starts at zero (equal thirds).
    """

    def __init__(self, state_dim: int, teachers: int, hidden: int = 128, seed: int = 0,
                 gammas=None, learnable_gammas: bool = False):
        if teachers < 1 or state_dim < 1 or hidden < 1:
            raise ParameterError("state_dim, teachers and hidden must be positive")
        self.trunk = build_net(NetSpec([state_dim, hidden], ["relu"], derive_seed(seed, "agent-trunk")))
        self.head_l = build_net(NetSpec([hidden, teachers], ["none"], derive_seed(seed, "agent-head-l")))
        self.head_f = build_net(NetSpec([hidden, teachers], ["none"], derive_seed(seed, "agent-head-f")))
        self.learnable_gammas = learnable_gammas
        if learnable_gammas:
            self.gamma_logits = tc.ParamTensor(np.zeros((2, 3)))
            self._fixed_gammas = None
        else:
            g = DEFAULT_GAMMAS if gammas is None else np.asarray(gammas, dtype=np.float64).reshape(2, 3)
            if np.any(g < 0):
                raise ParameterError("gamma coefficients must be non-negative")
            self._fixed_gammas = g.copy()
            self.gamma_logits = None
        self._probs = None

    @property
    def state_dim(self):
        return self.trunk.in_dim

    @property
    def teachers(self):
        return self.head_l.out_dim

    @property
    def gammas(self) -> np.ndarray:
        if self.learnable_gammas:
            return tc.softmax_rows(self.gamma_logits.value)
        return self._fixed_gammas.copy()

    def parameters(self):
        return self.trunk.parameters() + self.head_l.parameters() + self.head_f.parameters()

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, states, cache=True):
        states = tc.as_matrix(states)
        if states.shape[1] != self.state_dim:
            raise ShapeError(f"state has {states.shape[1]} entries, policy expects {self.state_dim}")
        h = self.trunk.forward(states, cache=cache)
        w_l = tc.softmax_rows(self.head_l.forward(h, cache=cache))
        w_f = tc.softmax_rows(self.head_f.forward(h, cache=cache))
        if cache:
            self._probs = (w_l, w_f)
        return w_l, w_f

    def backward(self, grad_zl, grad_zf):
        """Backprop gradients given w.r.t. the two heads' pre-softmax logits."""
        if self._probs is None:
            raise StateError("policy backward without a cached forward pass")
        gh = self.head_l.backward(grad_zl) + self.head_f.backward(grad_zf)
        self.trunk.backward(gh)
        self._probs = None

    def nets(self) -> dict:
        return {"agent_trunk": self.trunk, "agent_head_l": self.head_l, "agent_head_f": self.head_f}

    def checksum(self) -> str:
        return "".join(n.checksum()[:16] for n in self.nets().values())


@dataclass
class ActionWeights:
    w_l: np.ndarray
    w_f: np.ndarray
    w_l_gen: np.ndarray
    w_f_gen: np.ndarray
    w_conf: np.ndarray
    w_l_div: np.ndarray
    w_f_div: np.ndarray
    gammas: np.ndarray

    @classmethod
    def uniform(cls, batch: int, teachers: int) -> "ActionWeights":
        u = np.full((batch, teachers), 1.0 / teachers)
        g = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        return cls(u, u.copy(), u.copy(), u.copy(), u.copy(), u.copy(), u.copy(), g)

    @classmethod
    def fixed(cls, w_l, w_f) -> "ActionWeights":
        """Weights from a fixed rule, recorded as the 'generator' with gamma (1, 0, 0)."""
        w_l = np.asarray(w_l, dtype=np.float64)
        w_f = np.asarray(w_f, dtype=np.float64)
        g = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        return cls(w_l, w_f, w_l, w_f, w_l, w_l, w_f, g)


def agent_forward(policy: PolicyNet, state, cache=True):
    vector = state.vector if hasattr(state, "vector") else state
    return policy.forward(vector, cache=cache)


def confidence_weights(ce) -> np.ndarray:
    """``w_m = (1 - softmax(ce)_m) / (M - 1)`` per row; lower CE gets more weight."""
    ce = tc.as_matrix(ce)
    M = ce.shape[1]
    if M == 1:
        log.info("confidence weights need at least two teachers; using weight 1")
        return np.ones_like(ce)
    if not np.all(np.isfinite(ce)):
        raise ParameterError("teacher losses must be finite")
    return (1.0 - tc.softmax_rows(ce)) / (M - 1)


def divergence_weights_feature(cos) -> np.ndarray:
    return tc.softmax_rows(cos)


def divergence_weights_logit(kl) -> np.ndarray:
    return tc.softmax_rows(kl)


def fuse_weights(gen, conf, div, gammas=DEFAULT_GAMMAS):
    """Mix ``gen=(w_l_gen, w_f_gen)``, ``conf`` and ``div=(w_l_div, w_f_div)``.

    ``gammas`` is 2x3: row 0 for the logit head, row 1 for the feature head,
    columns (generator, confidence, divergence).
    """
    g = np.asarray(gammas, dtype=np.float64).reshape(2, 3)
    w_l_gen, w_f_gen = gen
    w_l_div, w_f_div = div
    shapes = {np.shape(w_l_gen), np.shape(w_f_gen), np.shape(conf), np.shape(w_l_div), np.shape(w_f_div)}
    if len(shapes) != 1:
        raise ShapeError(f"constituent weight shapes differ: {sorted(shapes)}")
    w_l = g[0, 0] * w_l_gen + g[0, 1] * conf + g[0, 2] * w_l_div
    w_f = g[1, 0] * w_f_gen + g[1, 1] * conf + g[1, 2] * w_f_div
    return w_l, w_f


def act(policy: PolicyNet, state, cache=False) -> ActionWeights:
    """Full action for a state batch: generator heads fused with the two rules."""
    w_l_gen, w_f_gen = agent_forward(policy, state, cache=cache)
    conf = confidence_weights(state.ce)
    w_l_div = divergence_weights_logit(state.kl)
    w_f_div = divergence_weights_feature(state.cos)
    gammas = policy.gammas
    w_l, w_f = fuse_weights((w_l_gen, w_f_gen), conf, (w_l_div, w_f_div), gammas)
    return ActionWeights(w_l, w_f, w_l_gen, w_f_gen, conf, w_l_div, w_f_div, gammas)
