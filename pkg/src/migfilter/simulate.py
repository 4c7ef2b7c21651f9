"""Synthetic regime-switching migration data.

Simulation keeps a closed cohort (no entry or censoring): every entity
present at time zero stays in the sample, so the conservation invariant of
:class:`~migfilter.model.MigrationPanel` holds exactly and test oracles stay
closed-form.  All draws come from one ``numpy`` generator seeded from the
config, so identical configs give bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ModelError
from .model import (
    EventStream,
    HiddenFactorSpec,
    MigrationLaw,
    MigrationPanel,
    Mode,
    _freeze,
    _freeze_int,
)

__all__ = [
    "SimulationConfig",
    "PiecewisePath",
    "simulate_hidden_path",
    "simulate_panel_discrete",
    "simulate_events_continuous",
    "demo_model",
]


@dataclass(frozen=True)
class SimulationConfig:
    """What to simulate: cohort sizes, horizon and randomness.

    ``horizon`` counts steps in discrete mode and is a real time span (days)
    in continuous mode.
    """

    entities_per_rating: np.ndarray
    horizon: float
    seed: int
    mode: Mode = Mode.DISCRETE
    step_length_days: int = 1

    def __post_init__(self):
        object.__setattr__(
            self, "entities_per_rating", _freeze_int(np.atleast_1d(self.entities_per_rating))
        )
        object.__setattr__(self, "mode", Mode(self.mode))
        if np.any(self.entities_per_rating < 0) or not np.any(self.entities_per_rating > 0):
            raise DataError("entities_per_rating must be nonnegative with at least one positive")
        if self.horizon <= 0:
            raise DataError("horizon must be positive")

    @property
    def p(self) -> int:
        return self.entities_per_rating.shape[0]


@dataclass(frozen=True)
class PiecewisePath:
    """Piecewise-constant continuous-time path: ``states[i]`` holds on
    ``[times[i], times[i+1])`` and the last state holds to the horizon."""

    times: np.ndarray
    states: np.ndarray
    horizon: float

    def __post_init__(self):
        object.__setattr__(self, "times", _freeze(np.atleast_1d(self.times)))
        object.__setattr__(self, "states", _freeze_int(np.atleast_1d(self.states)))

    def state_at(self, t: float) -> int:
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return int(self.states[max(idx, 0)])


def _check_mode(factor: HiddenFactorSpec, config: SimulationConfig) -> None:
    if factor.mode is not config.mode:
        raise ModelError(
            f"config mode {config.mode.value} does not match factor mode {factor.mode.value}"
        )


def simulate_hidden_path(factor: HiddenFactorSpec, config: SimulationConfig):
    """Sample a trajectory of the hidden factor.

    Discrete mode returns an integer array of length ``horizon + 1``
    (state at each grid time).  Continuous mode returns a
    :class:`PiecewisePath`: holding times are exponential with the diagonal
    exit rate, jump targets proportional to the off-diagonal intensities.
    """
    _check_mode(factor, config)
    rng = np.random.default_rng(config.seed)
    return _hidden_path(factor, config, rng)


def _hidden_path(factor: HiddenFactorSpec, config: SimulationConfig, rng):
    m = factor.m
    state = int(rng.choice(m, p=factor.pi))
    if factor.mode is Mode.DISCRETE:
        steps = int(config.horizon)
        path = np.empty(steps + 1, dtype=np.int64)
        path[0] = state
        for t in range(1, steps + 1):
            state = int(rng.choice(m, p=factor.trans[state]))
            path[t] = state
        return path
    times = [0.0]
    states = [state]
    t = 0.0
    while True:
        rate = -factor.trans[state, state]
        if rate <= 0.0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= config.horizon:
            break
        weights = factor.trans[state].copy()
        weights[state] = 0.0
        state = int(rng.choice(m, p=weights / weights.sum()))
        times.append(t)
        states.append(state)
    return PiecewisePath(np.array(times), np.array(states), float(config.horizon))


def simulate_panel_discrete(
    factor: HiddenFactorSpec, law: MigrationLaw, config: SimulationConfig
) -> tuple[MigrationPanel, np.ndarray]:
    """Simulate an aggregated migration panel for a closed cohort.

    Step ``t`` draws, per rating class ``j``, a multinomial split of the
    ``Y[t, j]`` exposed entities over target ratings with probabilities
    ``law.per_state[theta[t], j]`` — the hidden state at the step's start
    drives the step's moves.  Exposures for ``t + 1`` are the column sums.
    """
    _check_mode(factor, config)
    if config.mode is not Mode.DISCRETE:
        raise ModelError("simulate_panel_discrete requires discrete mode")
    if law.n_states != factor.m:
        raise ModelError("law/factor state counts disagree")
    rng = np.random.default_rng(config.seed)
    path = _hidden_path(factor, config, rng)
    steps = int(config.horizon)
    p = law.p
    if config.p != p:
        raise DataError(f"entities_per_rating has {config.p} classes, law has {p}")
    exposures = np.zeros((steps, p), dtype=np.int64)
    counts = np.zeros((steps, p, p), dtype=np.int64)
    y = config.entities_per_rating.astype(np.int64).copy()
    for t in range(steps):
        exposures[t] = y
        mats = law.per_state[path[t]]
        for j in range(p):
            if y[j] > 0:
                counts[t, j] = rng.multinomial(y[j], mats[j])
        y = counts[t].sum(axis=0)
    panel = MigrationPanel(exposures, counts, step_length_days=config.step_length_days)
    return panel, path


def simulate_events_continuous(
    factor: HiddenFactorSpec, law: MigrationLaw, config: SimulationConfig
) -> tuple[EventStream, PiecewisePath]:
    """Simulate individually dated migrations by competing exponential clocks.

    At any instant the live clocks are the hidden factor's exit rate and one
    clock per feasible migration ``(j, k)`` with rate
    ``Y[j] * law.per_state[theta, j, k]``; every event (either kind)
    restarts them all, which is exact for the joint Markov dynamics.  Only
    migrations are emitted in the stream; the hidden path is returned
    alongside.
    """
    _check_mode(factor, config)
    if config.mode is not Mode.CONTINUOUS:
        raise ModelError("simulate_events_continuous requires continuous mode")
    if law.n_states != factor.m:
        raise ModelError("law/factor state counts disagree")
    p = law.p
    if config.p != p:
        raise DataError(f"entities_per_rating has {config.p} classes, law has {p}")
    rng = np.random.default_rng(config.seed)
    off_diag = ~np.eye(p, dtype=bool)

    theta = int(rng.choice(factor.m, p=factor.pi))
    hidden_times = [0.0]
    hidden_states = [theta]
    y = config.entities_per_rating.astype(np.int64).copy()
    times: list[float] = []
    sources: list[int] = []
    targets: list[int] = []

    t = 0.0
    horizon = float(config.horizon)
    while True:
        mig_rates = y[:, None] * law.per_state[theta]
        mig_rates = np.where(off_diag, mig_rates, 0.0)
        hidden_rate = -factor.trans[theta, theta]
        total = hidden_rate + mig_rates.sum()
        if total <= 0.0:
            break
        t += rng.exponential(1.0 / total)
        if t >= horizon:
            break
        u = rng.uniform(0.0, total)
        if u < hidden_rate:
            weights = factor.trans[theta].copy()
            weights[theta] = 0.0
            theta = int(rng.choice(factor.m, p=weights / weights.sum()))
            hidden_times.append(t)
            hidden_states.append(theta)
        else:
            flat = np.cumsum(mig_rates.ravel())
            idx = int(np.searchsorted(flat, u - hidden_rate, side="right"))
            j, k = divmod(idx, p)
            times.append(t)
            sources.append(j)
            targets.append(k)
            y[j] -= 1
            y[k] += 1
    stream = EventStream(
        times=np.array(times, dtype=float),
        sources=np.array(sources, dtype=np.int64),
        targets=np.array(targets, dtype=np.int64),
        initial_exposures=config.entities_per_rating,
        horizon=horizon,
    )
    path = PiecewisePath(np.array(hidden_times), np.array(hidden_states), horizon)
    return stream, path


def demo_model(
    m: int = 3, p: int = 3, mode: Mode = Mode.DISCRETE, spread: float = 4.0
) -> tuple[HiddenFactorSpec, MigrationLaw]:
    """A small synthetic model with well-separated migration regimes.

    These are illustrative parameters (sticky hidden chain, geometric risk
    ladder across states), not estimates from any dataset.  ``spread``
    scales how far apart the per-state downgrade levels sit.
    """
    base_move = 0.02 if mode is Mode.DISCRETE else 0.002
    if m > 1:
        trans = np.full((m, m), 0.05 / (m - 1))
        np.fill_diagonal(trans, 0.95)
    else:
        trans = np.array([[1.0]])
    if mode is Mode.CONTINUOUS:
        trans = transition_mat_to_gen(trans)
    pi = np.full(m, 1.0 / m)
    factor = HiddenFactorSpec(pi=pi, trans=trans, mode=mode)

    per_state = np.zeros((m, p, p))
    for h in range(m):
        level = base_move * spread ** (h / max(m - 1, 1))
        mat = np.zeros((p, p))
        for j in range(p):
            for k in range(p):
                if k == j:
                    continue
                mat[j, k] = level / (1.0 + abs(j - k)) * (1.5 if k > j else 0.5)
        if mode is Mode.DISCRETE:
            np.fill_diagonal(mat, 0.0)
            np.fill_diagonal(mat, 1.0 - mat.sum(axis=1))
        else:
            np.fill_diagonal(mat, -mat.sum(axis=1))
        per_state[h] = mat
    law = MigrationLaw(per_state=per_state, mode=mode)
    return factor, law


def transition_mat_to_gen(mat: np.ndarray) -> np.ndarray:
    """Turn a sticky transition matrix into a generator with the same
    off-diagonal proportions (unit time per step)."""
    gen = np.array(mat, dtype=float)
    np.fill_diagonal(gen, 0.0)
    np.fill_diagonal(gen, -gen.sum(axis=1))
    return gen
