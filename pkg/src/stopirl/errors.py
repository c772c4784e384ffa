"""Exception hierarchy shared by the simulators, solvers and file readers."""

from __future__ import annotations


class StopIRLError(Exception):
    """Base class for all package errors."""


# beliefs
class ZeroEvidence(StopIRLError):
    """The Bayes normalizer vanished: the observation is impossible under the belief."""


class NotASimplexPoint(StopIRLError):
    """A vector is not a probability vector within tolerance."""


class InvalidModel(StopIRLError):
    """Model or cost parameters violate their invariants."""


# forward simulation
class NoConvergence(StopIRLError):
    """Value iteration did not reach its tolerance within the iteration budget."""


class HorizonExceeded(StopIRLError):
    """A trial ran past the hard cap on the stopping time."""


# datasets
class MissingStratum(StopIRLError):
    """Some (environment, state) pair has no trials."""


class SchemaViolation(StopIRLError):
    """A dataset file does not conform to the schema.

    Attributes:
        path: JSON path of the offending field.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class VersionMismatch(StopIRLError):
    """A dataset file declares an unsupported schema version."""


class MissingTauMax(StopIRLError):
    """The stopping-time bound is required but absent."""


# inverse problems
class UnsupportedAction(StopIRLError):
    """Posterior requested for an action that is never chosen."""


class InvalidCycle(StopIRLError):
    """A cycle has fewer than two or repeated environment indices."""


class TooManyEnvironments(StopIRLError):
    """Cycle enumeration requested above the configured cap."""


class DegenerateDataset(StopIRLError):
    """All environments exhibit the same behaviour, so costs are unidentifiable."""


class DimensionMismatch(StopIRLError):
    """Dataset or cost shapes are inconsistent with the requested test."""


class InfeasibleSUMCOST(StopIRLError):
    """No continue-cost potentials exist for the supplied stopping costs."""


class UnboundedObjective(StopIRLError):
    """The estimator objective is unbounded under the given settings."""


class InvalidAlphaStar(StopIRLError):
    """The reveal-probability lower bound lies outside (0, 1)."""
