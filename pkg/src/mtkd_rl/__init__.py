"""Multi-teacher knowledge distillation with a policy-gradient teacher-weighting agent."""

__version__ = "0.1.0"
