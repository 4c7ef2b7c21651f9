"""Core model types: hidden economic factor, conditional migration laws,
aggregated observation panels and filter states.

All containers are immutable after construction (arrays are set read-only),
so they can be shared freely across threads; every operation in the package
is a pure function of its inputs.

Conventions used throughout the package:

* hidden states are anonymous integers ``0..m-1``,
* rating categories are integers ``0..p-1``, ordered from best to worst
  (whether the last one is absorbing is entirely up to the matrices),
* ``trans`` is a row-stochastic one-step matrix ``K`` in discrete mode and
  an intensity matrix (generator, rows sum to zero) in continuous mode,
* panel step ``t`` is driven by the hidden state at the *start* of the step
  (one-step response lag between the factor and the ratings).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ModelError

__all__ = [
    "Mode",
    "HiddenFactorSpec",
    "MigrationLaw",
    "MigrationPanel",
    "FilterState",
    "EventStream",
    "validate_model",
    "evolve_prior",
    "predict_transition_probs",
    "generator_to_transition",
    "transition_to_generator",
    "risk_scores",
    "sort_states_by_risk",
    "model_to_json",
    "model_from_json",
]

_SUM_TOL = 1e-12
_RENORM_TRIGGER = 1e-13


class Mode(str, enum.Enum):
    """Time convention of a model: one-step matrices or intensity matrices."""

    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def _freeze_int(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.int64, copy=True)
    out.setflags(write=False)
    return out


def renormalize(probs: np.ndarray, trigger: float = _RENORM_TRIGGER) -> np.ndarray:
    """Project a near-probability vector back onto the simplex.

    Tiny negative entries from floating-point arithmetic are clipped to 0;
    the vector is rescaled only when its sum drifts further than ``trigger``
    from 1, so exact results pass through bit-identically.
    """
    probs = np.where(probs < 0.0, 0.0, probs)
    total = probs.sum()
    if total <= 0.0:
        raise ModelError("probability vector has collapsed to zero mass")
    if abs(total - 1.0) > trigger:
        probs = probs / total
    return probs


@dataclass(frozen=True)
class HiddenFactorSpec:
    """Finite-state hidden economic factor.

    Parameters
    ----------
    pi : array_like, shape (m,)
        Initial law of the hidden state.
    trans : array_like, shape (m, m)
        Row-stochastic one-step matrix (discrete mode) or intensity matrix
        with nonnegative off-diagonals and zero row sums (continuous mode).
    mode : Mode
    """

    pi: np.ndarray
    trans: np.ndarray
    mode: Mode = Mode.DISCRETE

    def __post_init__(self):
        object.__setattr__(self, "pi", _freeze(np.atleast_1d(self.pi)))
        object.__setattr__(self, "trans", _freeze(np.atleast_2d(self.trans)))
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def m(self) -> int:
        return self.pi.shape[0]

    def violations(self) -> list[str]:
        """All invariant violations of this factor (empty list = valid)."""
        out = []
        m = self.m
        if self.trans.shape != (m, m):
            out.append(
                f"factor: trans has shape {self.trans.shape}, expected {(m, m)}"
            )
            return out
        if np.any(self.pi < 0):
            out.append("factor: pi has negative entries")
        s = self.pi.sum()
        if abs(s - 1.0) > _SUM_TOL:
            out.append(f"factor: pi sums to {s!r}, expected 1")
        if self.mode is Mode.DISCRETE:
            if np.any(self.trans < 0):
                out.append("factor: trans has negative entries")
            for i, row_sum in enumerate(self.trans.sum(axis=1)):
                if abs(row_sum - 1.0) > _SUM_TOL:
                    out.append(f"factor: trans row {i} sums to {row_sum!r}, expected 1")
        else:
            off = self.trans[~np.eye(m, dtype=bool)]
            if np.any(off < 0):
                out.append("factor: generator has negative off-diagonal entries")
            for i, row_sum in enumerate(self.trans.sum(axis=1)):
                if abs(row_sum) > _SUM_TOL:
                    out.append(f"factor: generator row {i} sums to {row_sum!r}, expected 0")
        return out


@dataclass(frozen=True)
class MigrationLaw:
    """Per-hidden-state rating migration matrices.

    ``per_state[h]`` is the p x p one-step transition matrix (discrete mode)
    or intensity matrix (continuous mode) common to every entity while the
    hidden factor sits in state ``h``.
    """

    per_state: np.ndarray
    mode: Mode = Mode.DISCRETE

    def __post_init__(self):
        arr = np.asarray(self.per_state, dtype=float)
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
            raise ModelError(
                f"per_state must have shape (m, p, p), got {arr.shape}"
            )
        object.__setattr__(self, "per_state", _freeze(arr))
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def n_states(self) -> int:
        return self.per_state.shape[0]

    @property
    def p(self) -> int:
        return self.per_state.shape[1]

    def violations(self) -> list[str]:
        out = []
        p = self.p
        eye = np.eye(p, dtype=bool)
        for h, mat in enumerate(self.per_state):
            if self.mode is Mode.DISCRETE:
                if np.any(mat < 0):
                    out.append(f"law: state {h} matrix has negative entries")
                for j, row_sum in enumerate(mat.sum(axis=1)):
                    if abs(row_sum - 1.0) > _SUM_TOL:
                        out.append(
                            f"law: state {h} row {j} sums to {row_sum!r}, expected 1"
                        )
            else:
                if np.any(mat[~eye] < 0):
                    out.append(
                        f"law: state {h} intensity matrix has negative off-diagonals"
                    )
                for j, row_sum in enumerate(mat.sum(axis=1)):
                    if abs(row_sum) > _SUM_TOL:
                        out.append(
                            f"law: state {h} intensity row {j} sums to {row_sum!r}, expected 0"
                        )
        return out


@dataclass(frozen=True)
class MigrationPanel:
    """Aggregated migration observations on a regular time grid.

    ``exposures[t, j]`` counts the entities holding rating ``j`` when
    interval ``t`` opens; ``counts[t, j, k]`` counts those among them holding
    ``k`` when it closes (the diagonal holds the stayers).  Every exposed
    entity either stays or moves, so ``counts[t, j].sum() == exposures[t, j]``.
    """

    exposures: np.ndarray
    counts: np.ndarray
    step_length_days: int = 1

    def __post_init__(self):
        object.__setattr__(self, "exposures", _freeze_int(np.atleast_2d(self.exposures)))
        object.__setattr__(self, "counts", _freeze_int(self.counts))
        if self.counts.ndim != 3 or self.counts.shape[:2] != self.exposures.shape:
            raise DataError(
                "counts must have shape (steps, p, p) matching exposures "
                f"{self.exposures.shape}, got {self.counts.shape}"
            )
        if self.counts.shape[1] != self.counts.shape[2]:
            raise DataError(f"counts must be square per step, got {self.counts.shape}")
        if self.step_length_days <= 0:
            raise DataError("step_length_days must be positive")
        if np.any(self.exposures < 0) or np.any(self.counts < 0):
            raise DataError("exposures and counts must be nonnegative")
        bad = np.nonzero(self.counts.sum(axis=2) != self.exposures)
        if bad[0].size:
            t, j = int(bad[0][0]), int(bad[1][0])
            raise DataError(
                f"conservation violated at step {t}, rating {j}: "
                f"counts sum to {int(self.counts[t, j].sum())} but exposure is "
                f"{int(self.exposures[t, j])}"
            )

    @property
    def steps(self) -> int:
        return self.exposures.shape[0]

    @property
    def p(self) -> int:
        return self.exposures.shape[1]


@dataclass(frozen=True)
class FilterState:
    """Filtered law of the hidden factor at one point in time."""

    probs: np.ndarray
    time_index: float = 0.0

    def __post_init__(self):
        probs = np.atleast_1d(np.asarray(self.probs, dtype=float))
        if np.any(probs < -1e-10):
            raise ModelError("filter state has negative probabilities")
        s = probs.sum()
        if abs(s - 1.0) > 1e-10:
            raise ModelError(f"filter state probabilities sum to {s!r}, expected 1")
        object.__setattr__(self, "probs", _freeze(renormalize(probs)))

    @property
    def m(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class EventStream:
    """Individually dated rating transitions on ``[0, horizon]``.

    Event ``i`` moves one entity from ``sources[i]`` to ``targets[i]`` at
    ``times[i]`` (strictly increasing: no simultaneous jumps).  Exposures
    start at ``initial_exposures`` and follow the events; an optional
    boundary track overrides them at given times, which is how entry and
    censoring at aggregation-step boundaries are represented.
    """

    times: np.ndarray
    sources: np.ndarray
    targets: np.ndarray
    initial_exposures: np.ndarray
    horizon: float
    boundary_times: np.ndarray | None = None
    boundary_exposures: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", _freeze(np.atleast_1d(self.times)))
        object.__setattr__(self, "sources", _freeze_int(np.atleast_1d(self.sources)))
        object.__setattr__(self, "targets", _freeze_int(np.atleast_1d(self.targets)))
        object.__setattr__(
            self, "initial_exposures", _freeze_int(np.atleast_1d(self.initial_exposures))
        )
        if self.boundary_times is not None:
            object.__setattr__(self, "boundary_times", _freeze(np.atleast_1d(self.boundary_times)))
            object.__setattr__(
                self, "boundary_exposures", _freeze_int(np.atleast_2d(self.boundary_exposures))
            )
        n = self.times.shape[0]
        if self.sources.shape[0] != n or self.targets.shape[0] != n:
            raise DataError("times, sources and targets must have equal length")
        if n and (np.any(self.times <= 0) or np.any(self.times > self.horizon)):
            raise DataError("event times must lie in (0, horizon]")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise DataError("event times must be strictly increasing")
        if np.any(self.sources == self.targets):
            raise DataError("events must change the rating (source != target)")

    @property
    def n_events(self) -> int:
        return self.times.shape[0]

    @property
    def p(self) -> int:
        return self.initial_exposures.shape[0]

    def exposure_snapshots(self) -> np.ndarray:
        """Exposure vector in force just before each event, shape (n, p).

        Raises :class:`DataError` if an event departs from an empty rating
        class, which would make the stream inconsistent.
        """
        y = self.initial_exposures.astype(np.int64).copy()
        out = np.empty((self.n_events, self.p), dtype=np.int64)
        b = 0
        bt = self.boundary_times
        for i in range(self.n_events):
            t = self.times[i]
            while bt is not None and b < bt.shape[0] and bt[b] <= t:
                y = self.boundary_exposures[b].astype(np.int64).copy()
                b += 1
            out[i] = y
            j, k = int(self.sources[i]), int(self.targets[i])
            if y[j] <= 0:
                raise DataError(
                    f"event {i} at t={t}: departure from rating {j} with no exposure"
                )
            y[j] -= 1
            y[k] += 1
        return out


def validate_model(factor: HiddenFactorSpec, law: MigrationLaw) -> list[str]:
    """Collect every invariant violation of a (factor, law) pair.

    Violations are returned as human-readable strings; an empty list means
    the model is valid.  Nothing is raised: broken input is data here.
    """
    out = factor.violations() + law.violations()
    if law.n_states != factor.m:
        out.append(
            f"law has {law.n_states} per-state matrices but factor has {factor.m} states"
        )
    if law.mode is not factor.mode:
        out.append(f"law mode {law.mode.value} differs from factor mode {factor.mode.value}")
    return out


def evolve_prior(state: FilterState, factor: HiddenFactorSpec, dt: float = 1.0) -> FilterState:
    """One-step (or one-``dt``) prior law of the hidden factor.

    Discrete mode applies the transition matrix once (``dt`` is ignored);
    continuous mode takes a single explicit Euler step ``p + k^T p * dt``,
    which matches the exact matrix-exponential propagation to O(dt^2).
    """
    if factor.mode is Mode.DISCRETE:
        probs = factor.trans.T @ state.probs
        new_time = state.time_index + 1
    else:
        if dt <= 0:
            raise ModelError(f"dt must be positive in continuous mode, got {dt}")
        rate = float(np.max(-np.diag(factor.trans), initial=0.0))
        if dt * rate >= 1.0:
            raise ModelError(
                f"dt={dt} too large for generator with exit rate {rate}: "
                "Euler step would leave the simplex"
            )
        probs = state.probs + factor.trans.T @ state.probs * dt
        new_time = state.time_index + dt
    return FilterState(renormalize(probs), time_index=new_time)


def predict_transition_probs(law: MigrationLaw, state: FilterState) -> np.ndarray:
    """Forecast transition probabilities: the filtered mixture of the
    per-state migration matrices, ``sum_h probs[h] * per_state[h]``.

    Requires a discrete-mode law; convert intensities first with
    :func:`generator_to_transition`.
    """
    if law.mode is not Mode.DISCRETE:
        raise ModelError("predict_transition_probs needs a discrete (probability) law")
    if law.n_states != state.m:
        raise ModelError(
            f"law has {law.n_states} states but filter state has {state.m}"
        )
    return np.tensordot(state.probs, law.per_state, axes=1)


def generator_to_transition(gen: np.ndarray, dt: float, exact: bool = False) -> np.ndarray:
    """Convert an intensity matrix to a ``dt``-step probability matrix.

    Default is the small-step linearization ``I + gen*dt`` (entries clipped
    to [0, 1] and rows renormalized if the step is not small); ``exact=True``
    uses the matrix exponential instead.
    """
    gen = np.asarray(gen, dtype=float)
    if exact:
        from scipy.linalg import expm

        return expm(gen * dt)
    out = np.eye(gen.shape[-1]) + gen * dt
    if np.any(out < 0):
        out = np.clip(out, 0.0, None)
        out = out / out.sum(axis=-1, keepdims=True)
    return out


def transition_to_generator(mat: np.ndarray, dt: float) -> np.ndarray:
    """Inverse of the linearized conversion: ``(mat - I) / dt``."""
    mat = np.asarray(mat, dtype=float)
    return (mat - np.eye(mat.shape[-1])) / dt


def risk_scores(law: MigrationLaw) -> np.ndarray:
    """Per-hidden-state riskiness: mean downgrade mass of each matrix.

    The score of state ``h`` is the average over rating rows of the total
    probability (or intensity) assigned to strictly worse ratings.  Used to
    order anonymous hidden states stably across calibration restarts.
    """
    p = law.p
    down = np.triu(np.ones((p, p)), k=1)
    return np.einsum("hjk,jk->h", law.per_state, down) / p


def sort_states_by_risk(
    factor: HiddenFactorSpec, law: MigrationLaw
) -> tuple[HiddenFactorSpec, MigrationLaw, np.ndarray]:
    """Relabel hidden states from least to most risky.

    Returns the permuted factor and law plus the permutation used, where
    ``perm[new_index] = old_index``.
    """
    perm = np.argsort(risk_scores(law), kind="stable")
    new_factor = HiddenFactorSpec(
        pi=factor.pi[perm],
        trans=factor.trans[np.ix_(perm, perm)],
        mode=factor.mode,
    )
    new_law = MigrationLaw(per_state=law.per_state[perm], mode=law.mode)
    return new_factor, new_law, perm


def model_to_json(factor: HiddenFactorSpec, law: MigrationLaw, extra: dict | None = None) -> str:
    """Serialize a model to the package's JSON document format."""
    doc = {
        "mode": factor.mode.value,
        "m": factor.m,
        "p": law.p,
        "pi": factor.pi.tolist(),
        "trans": factor.trans.tolist(),
        "law": law.per_state.tolist(),
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2)


def model_from_json(text: str) -> tuple[HiddenFactorSpec, MigrationLaw]:
    """Parse a model JSON document and validate it."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid model JSON: {exc}") from exc
    try:
        mode = Mode(doc["mode"])
        factor = HiddenFactorSpec(pi=doc["pi"], trans=doc["trans"], mode=mode)
        law = MigrationLaw(per_state=doc["law"], mode=mode)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"model JSON missing or malformed field: {exc}") from exc
    if factor.m != doc.get("m", factor.m) or law.p != doc.get("p", law.p):
        raise DataError("model JSON dimensions disagree with its arrays")
    problems = validate_model(factor, law)
    if problems:
        raise ModelError("invalid model: " + "; ".join(problems))
    return factor, law
