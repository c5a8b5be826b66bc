"""Exception types shared across the package.

Flow-control errors (integration blow-ups, filter divergence, guidance
fallbacks) get their own classes so callers can catch them without
swallowing genuine bugs.  Contract misuse (bad shapes, bad config) raises
ShapeError / ConfigError with enough context to locate the call site.
"""
from __future__ import annotations


class PidmError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(PidmError):
    """Operands passed to an op do not satisfy its shape contract."""

    def __init__(self, op: str, *shapes) -> None:
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        detail = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {detail}")


class ConfigError(PidmError):
    """Invalid configuration value or config-file entry."""


class ContainerError(PidmError):
    """Binary container violates the format (magic, version, truncation)."""


class NumericalError(PidmError):
    """Base class for runtime numerical failures that callers may absorb."""


class NonFiniteGradientError(NumericalError):
    """A gradient buffer produced during backward() contains NaN or Inf."""

    def __init__(self, node_id: int, op: str) -> None:
        self.node_id = node_id
        self.op = op
        super().__init__(f"non-finite gradient at node {node_id} (op {op!r})")


class IntegrationError(NumericalError):
    """A stage evaluation inside a solver step produced NaN or Inf."""

    def __init__(self, stage: int, detail: str = "") -> None:
        self.stage = stage
        msg = f"non-finite values in stage {stage}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class BoundExceeded(PidmError):
    """A rollout left the system's amplitude bound."""

    def __init__(self, step_index: int, bound: float) -> None:
        self.step_index = step_index
        self.bound = bound
        super().__init__(f"amplitude bound {bound} exceeded at step {step_index}")


class CorpusError(PidmError):
    """Corpus generation could not assemble enough admissible trajectories."""


class TrainingDiverged(NumericalError):
    """Training loss became non-finite."""

    def __init__(self, step: int, recent_losses) -> None:
        self.step = step
        self.recent_losses = list(recent_losses)
        tail = ", ".join(f"{v:.4g}" for v in self.recent_losses)
        super().__init__(f"non-finite loss at optimizer step {step}; recent losses [{tail}]")


class FilterDivergence(NumericalError):
    """Every ensemble member blew up at the same filter step."""

    def __init__(self, step_index: int) -> None:
        self.step_index = step_index
        super().__init__(f"all ensemble members blew up at step {step_index}")


class EstimationError(PidmError):
    """An estimator had no valid data to work with."""
