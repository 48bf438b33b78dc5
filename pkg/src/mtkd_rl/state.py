"""Per-sample, per-teacher state embedding for the weighting agent.

For teacher ``m`` and sample ``i`` the block is

    [ teacher feature (d_m) | teacher logits (C) | teacher CE | cos | KL ]

where ``cos`` compares the regressed student feature with the teacher
feature and ``KL`` is KL(teacher || student) at temperature 1. The agent
sees the blocks of all teachers concatenated in teacher order. Components
switched off in the mask are left out of each block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .distill import TeacherOutputs
from .errors import ParameterError, ShapeError

COMPONENTS = ("feature", "logits", "ce", "cos", "kl")


@dataclass(frozen=True)
class StateMask:
    feature: bool = True
    logits: bool = True
    ce: bool = True
    cos: bool = True
    kl: bool = True

    def __post_init__(self):
        if not any(getattr(self, c) for c in COMPONENTS):
            raise ParameterError("a state mask must enable at least one component")

    @property
    def enabled(self):
        return tuple(c for c in COMPONENTS if getattr(self, c))

    @classmethod
    def parse(cls, text: str) -> "StateMask":
        """``all``, ``performance``, ``gaps`` or a comma list of component names."""
        text = text.strip().lower()
        if text in PRESETS:
            return PRESETS[text]
        names = {t.strip() for t in text.split(",") if t.strip()}
        unknown = names - set(COMPONENTS)
        if unknown:
            raise ParameterError(f"unknown state components {sorted(unknown)}")
        return cls(**{c: c in names for c in COMPONENTS})

    def name(self) -> str:
        for key, preset in PRESETS.items():
            if preset == self:
                return key
        return ",".join(self.enabled)


PRESETS = {
    "all": StateMask(),
    "performance": StateMask(cos=False, kl=False),
    "gaps": StateMask(feature=False, logits=False, ce=False),
}


def _component_width(name, d_m, C):
    return {"feature": d_m, "logits": C, "ce": 1, "cos": 1, "kl": 1}[name]


def state_dim(mask: StateMask, feature_dims, class_count: int) -> int:
    return sum(_component_width(c, d, class_count) for d in feature_dims for c in mask.enabled)


def component_slices(mask: StateMask, feature_dims, class_count: int) -> dict:
    """``{(teacher, component): slice}`` into the flat state vector."""
    out = {}
    pos = 0
    for m, d in enumerate(feature_dims):
        for c in mask.enabled:
            w = _component_width(c, d, class_count)
            out[(m, c)] = slice(pos, pos + w)
            pos += w
    return out


@dataclass
class StateEmbedding:
    vector: np.ndarray  # B x state_dim, agent input
    ce: np.ndarray  # B x M
    cos: np.ndarray  # B x M
    kl: np.ndarray  # B x M
    mask: StateMask
    feature_dims: tuple
    class_count: int

    def component(self, teacher: int, name: str) -> np.ndarray:
        sl = component_slices(self.mask, self.feature_dims, self.class_count)[(teacher, name)]
        return self.vector[:, sl]


def _zscore_columns(v):
    std = v.std(axis=0)
    std[std == 0.0] = 1.0
    return (v - v.mean(axis=0)) / std


def build_state(student_logits, regressed, teachers: TeacherOutputs, mask: StateMask = PRESETS["all"],
                standardize: bool = False) -> StateEmbedding:
    """Assemble the agent input for a batch.

    Pure: reads the given arrays only, so it can run between a forward pass
    and the matching backward pass.
    """
    student_logits = tc.as_matrix(student_logits)
    B, C = student_logits.shape
    M = teachers.count
    if len(regressed) != M:
        raise ShapeError(f"{len(regressed)} regressed features for {M} teachers")
    if teachers.batch_size != B:
        raise ShapeError(f"student batch {B} vs teacher batch {teachers.batch_size}")
    cos = np.empty((B, M))
    kl = np.empty((B, M))
    for m in range(M):
        if regressed[m].shape != teachers.features[m].shape:
            raise ShapeError(
                f"regressor {m} outputs {regressed[m].shape}, teacher feature is {teachers.features[m].shape}"
            )
        cos[:, m] = tc.cosine_rows(regressed[m], teachers.features[m])
        kl[:, m] = tc.kl_divergence(student_logits, teachers.logits[m], 1.0)[0]

    blocks = []
    for m in range(M):
        parts = {
            "feature": teachers.features[m],
            "logits": teachers.logits[m],
            "ce": teachers.ce[:, m : m + 1],
            "cos": cos[:, m : m + 1],
            "kl": kl[:, m : m + 1],
        }
        blocks.extend(parts[c] for c in mask.enabled)
    vector = np.concatenate(blocks, axis=1)
    if standardize:
        vector = _zscore_columns(vector)
    return StateEmbedding(vector, teachers.ce.copy(), cos, kl, mask, tuple(teachers.feature_dims), C)
