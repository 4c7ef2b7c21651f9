"""Causal discrete-time filtering of the hidden factor from panel counts.

Each step performs a Bayes update of the hidden-state law against the
observed migration counts, then pushes the posterior through the hidden
chain's transition matrix.  The per-state observation weights are binomial
(single tracked transition) or multinomial (full migration matrix) with the
combinatorial coefficients dropped — they cancel in the normalization, and
dropping them keeps the accumulated log-likelihood identical to the one the
calibration recursions compute.

Smoothing (conditioning on the full sample) lives in
:mod:`migfilter.calibrate`; everything here only looks backwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ImpossibleObservationError, ModelError
from .model import (
    FilterState,
    HiddenFactorSpec,
    MigrationLaw,
    MigrationPanel,
    Mode,
    predict_transition_probs,
    renormalize,
)

__all__ = [
    "FilterTrajectory",
    "filter_step_univariate",
    "filter_step_multivariate",
    "run_filter",
]


@dataclass(frozen=True)
class FilterTrajectory:
    """Output of a filtering run.

    ``states`` has one entry per grid time including the initial law;
    ``predicted_ratios[t]`` is the transition-probability forecast issued
    *before* observing step ``t`` (shape (p, p), or a scalar series for
    univariate runs); ``loglik`` accumulates the log-probability of each
    observed step under the one-step-ahead predictive law.

    Continuous runs additionally report, per reporting interval, how much of
    the filtered law's movement came from the hidden chain's own drift
    (``prediction_parts``) versus the observation updates
    (``correction_parts``).
    """

    states: tuple[FilterState, ...]
    predicted_ratios: np.ndarray
    loglik: float
    prediction_parts: np.ndarray | None = None
    correction_parts: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    def probs_matrix(self) -> np.ndarray:
        """Filtered probabilities as an array of shape (n_steps + 1, m)."""
        return np.array([s.probs for s in self.states])

    def times(self) -> np.ndarray:
        return np.array([s.time_index for s in self.states])


def _finish_step(
    weighted_prior: np.ndarray, trans: np.ndarray
) -> tuple[np.ndarray, float]:
    """Normalize a weighted posterior and push it through the hidden chain.

    Returns the new filtered law and the log of the normalizing constant
    (the step's predictive log-likelihood contribution).
    """
    norm = weighted_prior.sum()
    posterior = weighted_prior / norm
    return renormalize(trans.T @ posterior), float(np.log(norm))


def _safe_log_law(per_state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Log of the migration matrices with a mask of their zero cells.

    Zero cells get log 0 -> 0 here; whether they make a state impossible is
    decided against the observed counts (zero counts never do).
    """
    positive = per_state > 0.0
    log_law = np.log(np.where(positive, per_state, 1.0))
    return log_law, (~positive).astype(float)


def _univariate_log_weights(d_n: int, y: int, jump_probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_l = np.log(jump_probs)
        log_1ml = np.log1p(-jump_probs)
    w = np.zeros_like(jump_probs)
    if d_n > 0:
        w = w + d_n * log_l
    if y - d_n > 0:
        w = w + (y - d_n) * log_1ml
    return w


def filter_step_univariate(
    state: FilterState,
    d_n: int,
    y: int,
    factor: HiddenFactorSpec,
    jump_probs: np.ndarray,
) -> FilterState:
    """Assimilate one step of a single tracked transition.

    ``d_n`` of the ``y`` exposed entities jumped this step; ``jump_probs[h]``
    is the per-entity jump probability under hidden state ``h``.  The update
    reweights the current law by the binomial likelihood (coefficient
    dropped) and then applies the hidden chain's transition matrix.
    """
    jump_probs = np.asarray(jump_probs, dtype=float)
    if not 0 <= d_n <= y:
        raise DataError(f"need 0 <= d_n <= y, got d_n={d_n}, y={y}")
    if factor.mode is not Mode.DISCRETE:
        raise ModelError("filter_step_univariate requires a discrete-mode factor")
    w = _univariate_log_weights(int(d_n), int(y), jump_probs)
    weighted = _apply_log_weights(state.probs, w, state.time_index)
    probs, _ = _finish_step(weighted, factor.trans)
    return FilterState(probs, time_index=state.time_index + 1)


def _apply_log_weights(prior: np.ndarray, log_w: np.ndarray, time_index) -> np.ndarray:
    top = np.max(log_w)
    if not np.isfinite(top):
        raise ImpossibleObservationError(
            "observation has zero probability under every hidden state",
            time_index=time_index,
        )
    weighted = np.exp(log_w - top) * prior
    if weighted.sum() <= 0.0:
        raise ImpossibleObservationError(
            "observation has zero probability under every hidden state "
            "carrying prior mass",
            time_index=time_index,
        )
    return weighted


def _multivariate_log_weights(
    d_n: np.ndarray, log_law: np.ndarray, zero_mask: np.ndarray
) -> np.ndarray:
    """Per-state log-likelihood of one step's count matrix.

    ``log_law`` is log of the per-state matrices with zeros replaced by 0
    (those cells are masked separately via ``zero_mask``); cells with zero
    counts are skipped even when the law gives them zero probability.
    """
    w = np.einsum("jk,ijk->i", d_n, log_law)
    impossible = np.einsum("jk,ijk->i", (d_n > 0).astype(float), zero_mask) > 0
    w[impossible] = -np.inf
    return w


def filter_step_multivariate(
    state: FilterState,
    d_n: np.ndarray,
    y: np.ndarray,
    factor: HiddenFactorSpec,
    law: MigrationLaw,
) -> FilterState:
    """Assimilate one panel step of the full migration count matrix.

    The per-state weight is the multinomial likelihood of ``d_n`` given
    exposures ``y`` (coefficients dropped, computed in log space); the prior
    is reweighted and pushed through the hidden chain.
    """
    d_n = np.asarray(d_n, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if factor.mode is not Mode.DISCRETE or law.mode is not Mode.DISCRETE:
        raise ModelError("filter_step_multivariate requires discrete mode")
    if np.any(d_n.sum(axis=1) != y):
        raise DataError("conservation violated: counts rows must sum to exposures")
    log_law, zero_mask = _safe_log_law(law.per_state)
    w = _multivariate_log_weights(d_n, log_law, zero_mask)
    weighted = _apply_log_weights(state.probs, w, state.time_index)
    probs, _ = _finish_step(weighted, factor.trans)
    return FilterState(probs, time_index=state.time_index + 1)


def run_filter(
    panel: MigrationPanel,
    factor: HiddenFactorSpec,
    law: MigrationLaw,
    init: FilterState | np.ndarray | None = None,
) -> FilterTrajectory:
    """Filter the hidden factor through a whole panel.

    ``states[t]`` is the filtered law after assimilating steps ``1..t``
    (``states[0]`` is the initial law, by default the factor's ``pi``).
    Because step ``t``'s moves are driven by the hidden state at the step's
    start, the forecast for step ``t`` mixes the migration matrices with
    ``states[t-1]`` directly — no extra chain propagation.
    """
    if factor.mode is not Mode.DISCRETE or law.mode is not Mode.DISCRETE:
        raise ModelError("run_filter requires discrete mode")
    if law.n_states != factor.m:
        raise ModelError("law/factor state counts disagree")
    if panel.p != law.p:
        raise ModelError(f"panel has {panel.p} rating classes, law has {law.p}")
    if init is None:
        state = FilterState(factor.pi, time_index=0)
    elif isinstance(init, FilterState):
        state = FilterState(init.probs, time_index=0)
    else:
        state = FilterState(np.asarray(init, dtype=float), time_index=0)

    log_law, zero_mask = _safe_log_law(law.per_state)

    states = [state]
    predicted = np.empty((panel.steps, law.p, law.p))
    loglik = 0.0
    for t in range(panel.steps):
        predicted[t] = predict_transition_probs(law, state)
        w = _multivariate_log_weights(panel.counts[t], log_law, zero_mask)
        try:
            weighted = _apply_log_weights(state.probs, w, t)
        except ImpossibleObservationError as exc:
            exc.time_index = t
            raise
        probs, log_norm = _finish_step(weighted, factor.trans)
        loglik += log_norm + float(np.max(w))
        state = FilterState(probs, time_index=t + 1)
        states.append(state)
    return FilterTrajectory(
        states=tuple(states), predicted_ratios=predicted, loglik=loglik
    )
