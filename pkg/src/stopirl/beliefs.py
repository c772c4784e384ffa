"""Probability types and Bayes-update kernels.

Beliefs are immutable probability vectors. Gaussian likelihoods are handled in
log space so long observation runs do not underflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidModel, NotASimplexPoint, ZeroEvidence

SIMPLEX_TOL = 1e-9


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Belief:
    """A probability vector over the X states."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __len__(self) -> int:
        return self.probs.shape[0]

    def __getitem__(self, idx):
        return self.probs[idx]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Belief):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    def __repr__(self) -> str:
        return f"Belief({np.array2string(self.probs, precision=6)})"


def validate_simplex(raw, tol: float = SIMPLEX_TOL) -> Belief:
    """Check that ``raw`` is a probability vector and return it as a Belief.

    A sum drifting from 1 by at most ``tol`` is renormalized away.

    Raises:
        NotASimplexPoint: on a negative or non-finite entry, a bad shape, or a
            sum outside ``1 ± tol``.
    """
    arr = np.asarray(raw, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise NotASimplexPoint(f"expected a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NotASimplexPoint("non-finite entry")
    if np.any(arr < 0.0):
        raise NotASimplexPoint(f"negative entry in {arr.tolist()}")
    total = float(arr.sum())
    if abs(total - 1.0) > tol:
        raise NotASimplexPoint(f"entries sum to {total!r}")
    return Belief(arr / total)


def _as_probs(belief) -> np.ndarray:
    if isinstance(belief, Belief):
        return belief.probs
    return validate_simplex(belief).probs


def bayes_update(belief, likelihoods) -> Belief:
    """Posterior proportional to the elementwise product of likelihood and belief.

    Raises:
        ZeroEvidence: if the likelihood vanishes on the support of the belief.
    """
    pi = _as_probs(belief)
    lik = np.asarray(likelihoods, dtype=float)
    if lik.shape != pi.shape:
        raise InvalidModel(f"likelihood shape {lik.shape} does not match belief {pi.shape}")
    if np.any(lik < 0) or not np.all(np.isfinite(lik)):
        raise InvalidModel("likelihoods must be finite and nonnegative")
    joint = lik * pi
    z = joint.sum()
    if z <= 0.0:
        raise ZeroEvidence("observation has zero probability under the belief")
    return Belief(joint / z)


def bayes_update_log(belief, log_likelihoods) -> Belief:
    """Bayes update from log-likelihoods, stabilised by max-subtraction."""
    pi = _as_probs(belief)
    ll = np.asarray(log_likelihoods, dtype=float)
    with np.errstate(divide="ignore"):
        logj = ll + np.log(pi)
    top = np.max(logj)
    if not np.isfinite(top):
        raise ZeroEvidence("observation has zero probability under the belief")
    w = np.exp(logj - top)
    return Belief(w / w.sum())


@dataclass(frozen=True, eq=False)
class GaussianObservationModel:
    """Per-state Gaussian observation densities B(y, x)."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float).ravel()
        variances = np.asarray(self.variances, dtype=float).ravel()
        if means.shape != variances.shape or means.size < 1:
            raise InvalidModel("means and variances must be equal-length vectors")
        if np.any(variances <= 0) or not np.all(np.isfinite(variances)):
            raise InvalidModel("variances must be positive and finite")
        if not np.all(np.isfinite(means)):
            raise InvalidModel("means must be finite")
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "variances", _frozen(variances))

    @property
    def n_states(self) -> int:
        return self.means.shape[0]

    def log_likelihood(self, y) -> np.ndarray:
        """Log densities; ``y`` of shape S gives an array of shape S + (X,)."""
        y = np.asarray(y, dtype=float)[..., None]
        return -0.5 * ((y - self.means) ** 2 / self.variances + np.log(2 * np.pi * self.variances))

    def likelihood(self, y) -> np.ndarray:
        return np.exp(self.log_likelihood(y))

    def update(self, belief, y: float) -> Belief:
        """Posterior after observing ``y``."""
        return bayes_update_log(belief, self.log_likelihood(y))


@dataclass(frozen=True, eq=False)
class SearchObservationModel:
    """Reveal probabilities alpha(a) of the found/not-found channel."""

    reveal_probs: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.reveal_probs, dtype=float).ravel()
        if alpha.size < 1 or np.any(alpha <= 0) or np.any(alpha > 1) or not np.all(np.isfinite(alpha)):
            raise InvalidModel("reveal probabilities must lie in (0, 1]")
        object.__setattr__(self, "reveal_probs", _frozen(alpha))

    @property
    def n_actions(self) -> int:
        return self.reveal_probs.shape[0]


def bayes_update_search(belief, action: int, found: bool, model: SearchObservationModel) -> Belief:
    """Belief after searching ``action`` without finding the target.

    A successful search ends the episode, so only ``found=False`` is accepted.

    Raises:
        ZeroEvidence: if the belief is a point mass on ``action`` and the reveal
            probability there is 1.
    """
    if found:
        raise ValueError("a found outcome terminates the episode; no update is defined")
    pi = np.array(_as_probs(belief), dtype=float)
    if pi.shape[0] != model.n_actions:
        raise InvalidModel("belief and reveal-probability dimensions differ")
    pi[action] *= 1.0 - model.reveal_probs[action]
    z = pi.sum()
    if z <= 0.0:
        raise ZeroEvidence("not-found is impossible: target surely at the searched location")
    return Belief(pi / z)


def validate_stop_costs(costs, zero_diagonal: bool = False) -> np.ndarray:
    """Check an X-by-A stopping-cost matrix and return it as a float array.

    With ``zero_diagonal`` the matrix must be square with exact zeros on the
    diagonal (misclassification costs).
    """
    s = np.array(costs, dtype=float)
    if s.ndim != 2:
        raise InvalidModel(f"cost matrix must be 2-D, got shape {s.shape}")
    if not np.all(np.isfinite(s)) or np.any(s < 0):
        raise InvalidModel("stopping costs must be finite and nonnegative")
    if zero_diagonal:
        if s.shape[0] != s.shape[1]:
            raise InvalidModel("misclassification costs need X = A")
        if np.any(np.diag(s) != 0):
            raise InvalidModel("misclassification costs need a zero diagonal")
    return s


def validate_search_costs(costs, normalize: bool = False) -> np.ndarray:
    """Check a positive search-cost vector, optionally scaling it so entry 0 is 1."""
    l = np.array(costs, dtype=float).ravel()
    if l.size < 1 or not np.all(np.isfinite(l)) or np.any(l <= 0):
        raise InvalidModel("search costs must be finite and positive")
    if normalize:
        l = l / l[0]
    return l
