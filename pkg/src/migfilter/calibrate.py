"""EM calibration of the hidden factor and migration laws.

The E-step runs scaled forward/backward recursions over the panel's
aggregated per-step likelihood weights (per-step normalization with a
log-scale accumulator, so samples thousands of steps long cannot
underflow).  The discrete M-step is closed form.

The continuous adaptation calibrates on a fine grid with at most one jump
per interval: interval likelihoods come from a uniform picker model (one
entity at a time is allowed to move), the hidden-chain updates stay closed
form, and the migration rows are maximized numerically under simplex
constraints.  The fitted fine-grid probabilities convert to intensity
matrices by the small-step linearization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize

from .errors import DataError, ImpossibleObservationError, ModelError
from .filtering import _safe_log_law
from .model import (
    EventStream,
    HiddenFactorSpec,
    MigrationLaw,
    MigrationPanel,
    Mode,
    model_to_json,
    renormalize,
    sort_states_by_risk,
    transition_to_generator,
)

__all__ = [
    "EmConfig",
    "CalibrationResult",
    "ForwardResult",
    "BackwardResult",
    "forward_pass",
    "backward_pass",
    "posteriors",
    "m_step",
    "em_fit",
    "picker_weights",
    "em_fit_continuous",
]


@dataclass(frozen=True)
class EmConfig:
    """Knobs of the EM run.

    ``tol`` is the relative log-likelihood improvement below which a restart
    is declared converged; ``floor`` is the minimum probability kept in any
    migration-law entry so no observation can become impossible mid-run.
    """

    restarts: int = 10
    max_iters: int = 500
    tol: float = 1e-8
    seed: int = 0
    floor: float = 1e-12
    mode: Mode = Mode.DISCRETE

    def __post_init__(self):
        if self.restarts < 1:
            raise DataError("restarts must be at least 1")
        if self.tol <= 0:
            raise DataError("tol must be positive")
        if not 0 <= self.floor < 1:
            raise DataError("floor must lie in [0, 1)")


@dataclass(frozen=True)
class CalibrationResult:
    """Fitted parameters plus convergence diagnostics.

    ``loglik_trace`` is the best restart's per-iteration log-likelihood
    (evaluated at the parameters entering each iteration); traces are
    non-decreasing up to the configured tolerances.
    """

    factor: HiddenFactorSpec
    law: MigrationLaw
    loglik_trace: np.ndarray
    best_restart: int
    converged: bool
    restart_traces: tuple[np.ndarray, ...] = ()
    restart_seeds: tuple[int, ...] = ()
    fine_dt: float | None = None

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])

    def to_json(self) -> str:
        extra = {
            "diagnostics": {
                "best_restart": self.best_restart,
                "converged": self.converged,
                "loglik": self.loglik,
                "loglik_trace": np.asarray(self.loglik_trace).tolist(),
                "restart_traces": [np.asarray(t).tolist() for t in self.restart_traces],
                "restart_seeds": [int(s) for s in self.restart_seeds],
            }
        }
        if self.fine_dt is not None:
            extra["diagnostics"]["fine_dt"] = self.fine_dt
        return model_to_json(self.factor, self.law, extra=extra)


class ForwardResult(NamedTuple):
    """Scaled forward probabilities: row ``t`` (normalized to sum 1) times
    ``exp(log_scale[t])`` is the joint likelihood of the first ``t + 1``
    observed steps and the hidden state driving step ``t + 1``."""

    alpha: np.ndarray
    log_scale: np.ndarray
    loglik: float


class BackwardResult(NamedTuple):
    """Scaled backward probabilities, same convention as ForwardResult."""

    beta: np.ndarray
    log_scale: np.ndarray


def _panel_log_weights(panel: MigrationPanel, law: MigrationLaw) -> np.ndarray:
    """Per-step, per-state log-likelihood of the observed count matrices
    (multinomial coefficients dropped).  Shape (steps, m); impossible
    combinations get -inf."""
    log_law, zero_mask = _safe_log_law(law.per_state)
    counts = panel.counts.astype(float)
    logg = np.einsum("tjk,ijk->ti", counts, log_law)
    impossible = np.einsum("tjk,ijk->ti", (counts > 0).astype(float), zero_mask) > 0
    logg[impossible] = -np.inf
    return logg


def _unknown_initial_log_weights(panel: MigrationPanel, law: MigrationLaw) -> np.ndarray:
    """First-step weights when initial ratings are treated as unobserved:
    each entity's start is drawn from the initial empirical rating mix."""
    n = panel.exposures[0].sum()
    if n == 0:
        return np.zeros(law.n_states)
    mix = panel.exposures[0] / n
    landed = panel.counts[0].sum(axis=0).astype(float)
    arrival = np.einsum("j,ijk->ik", mix, law.per_state)
    with np.errstate(divide="ignore"):
        log_arrival = np.log(arrival)
    w = np.where(landed[None, :] > 0, landed[None, :] * log_arrival, 0.0)
    return w.sum(axis=1)


def _forward(logg: np.ndarray, pi: np.ndarray, trans: np.ndarray) -> ForwardResult:
    steps, m = logg.shape
    alpha = np.empty((steps, m))
    log_scale = np.empty(steps)
    carry = pi
    total = 0.0
    for t in range(steps):
        top = logg[t].max()
        if not np.isfinite(top):
            raise ImpossibleObservationError(
                "observations at one step are impossible under every hidden state",
                time_index=t,
            )
        if t > 0:
            carry = trans.T @ alpha[t - 1]
        row = carry * np.exp(logg[t] - top)
        norm = row.sum()
        if norm <= 0.0:
            raise ImpossibleObservationError(
                "observations are impossible under every reachable hidden state",
                time_index=t,
            )
        alpha[t] = row / norm
        total += math.log(norm) + top
        log_scale[t] = total
    return ForwardResult(alpha=alpha, log_scale=log_scale, loglik=total)


def _backward(logg: np.ndarray, trans: np.ndarray) -> BackwardResult:
    steps, m = logg.shape
    beta = np.empty((steps, m))
    log_scale = np.empty(steps)
    beta[steps - 1] = 1.0 / m
    log_scale[steps - 1] = math.log(m)
    for t in range(steps - 2, -1, -1):
        top = logg[t + 1].max()
        row = trans @ (np.exp(logg[t + 1] - top) * beta[t + 1])
        norm = row.sum()
        if norm <= 0.0:
            raise ImpossibleObservationError(
                "observations are impossible under every reachable hidden state",
                time_index=t + 1,
            )
        beta[t] = row / norm
        log_scale[t] = log_scale[t + 1] + math.log(norm) + top
    return BackwardResult(beta=beta, log_scale=log_scale)


def forward_pass(
    panel: MigrationPanel,
    factor: HiddenFactorSpec,
    law: MigrationLaw,
    observed_initial_ratings: bool = True,
) -> ForwardResult:
    """Scaled forward recursion over the panel.

    Row ``t`` of ``alpha`` refers to the hidden state driving step ``t``
    (the state in force at the step's start).  ``observed_initial_ratings``
    conditions on the known time-zero ratings; the alternative replaces them
    by the empirical initial mix.
    """
    logg = _panel_log_weights(panel, law)
    if not observed_initial_ratings and panel.steps > 0:
        logg = logg.copy()
        logg[0] = _unknown_initial_log_weights(panel, law)
    if panel.steps == 0:
        return ForwardResult(
            alpha=np.empty((0, factor.m)), log_scale=np.empty(0), loglik=0.0
        )
    return _forward(logg, factor.pi, factor.trans)


def backward_pass(
    panel: MigrationPanel, factor: HiddenFactorSpec, law: MigrationLaw
) -> BackwardResult:
    """Scaled backward recursion; the terminal column is flat (nothing is
    observed after the last step)."""
    if panel.steps == 0:
        return BackwardResult(beta=np.empty((0, factor.m)), log_scale=np.empty(0))
    logg = _panel_log_weights(panel, law)
    return _backward(logg, factor.trans)


def posteriors(
    fwd: ForwardResult,
    bwd: BackwardResult,
    panel: MigrationPanel,
    factor: HiddenFactorSpec,
    law: MigrationLaw,
    observed_initial_ratings: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Smoothing posteriors of the hidden chain given the whole sample.

    Returns ``u`` of shape (steps, m) — the marginal law of the hidden state
    driving each step — and ``v`` of shape (steps - 1, m, m), the joint law
    of consecutive hidden states; ``v[t]`` has row marginal ``u[t]`` and
    column marginal ``u[t + 1]``.
    """
    if panel.steps == 0:
        m = factor.m
        return np.empty((0, m)), np.empty((0, m, m))
    logg = _panel_log_weights(panel, law)
    if not observed_initial_ratings:
        logg = logg.copy()
        logg[0] = _unknown_initial_log_weights(panel, law)
    return _posteriors_from(logg, fwd, bwd, factor.trans)


def _posteriors_from(
    logg: np.ndarray, fwd: ForwardResult, bwd: BackwardResult, trans: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    steps, m = logg.shape
    u = fwd.alpha * bwd.beta
    u /= u.sum(axis=1, keepdims=True)
    v = np.empty((steps - 1, m, m))
    for t in range(steps - 1):
        g = np.exp(logg[t + 1] - logg[t + 1].max())
        joint = fwd.alpha[t][:, None] * trans * (g * bwd.beta[t + 1])[None, :]
        v[t] = joint / joint.sum()
    return u, v


def m_step(
    u: np.ndarray,
    v: np.ndarray,
    panel: MigrationPanel,
    prev_law: MigrationLaw | None = None,
    floor: float = 1e-12,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form maximization given the smoothing posteriors.

    Returns updated ``(pi, trans, per_state)`` arrays.  The migration row of
    a state whose expected exposure in some rating class falls below
    ``floor`` keeps its previous value (no information to update it with);
    migration rows are floored at ``floor`` and renormalized.
    """
    steps, m = u.shape
    p = panel.p
    pi = renormalize(u[0].copy(), trigger=0.0)

    if steps > 1:
        k_num = v.sum(axis=0)
        k_den = u[:-1].sum(axis=0)
        trans = np.where(k_den[:, None] > 0, k_num / np.where(k_den[:, None] > 0, k_den[:, None], 1.0), 1.0 / m)
    else:
        trans = np.full((m, m), 1.0 / m)
    trans = trans / trans.sum(axis=1, keepdims=True)

    num = np.einsum("ti,tkr->ikr", u, panel.counts.astype(float))
    den = np.einsum("ti,tk->ik", u, panel.exposures.astype(float))
    per_state = np.empty((m, p, p))
    for i in range(m):
        for k in range(p):
            if den[i, k] < max(floor, 1e-300):
                if prev_law is not None:
                    per_state[i, k] = prev_law.per_state[i, k]
                else:
                    per_state[i, k] = 1.0 / p
            else:
                per_state[i, k] = num[i, k] / den[i, k]
    per_state = np.maximum(per_state, floor)
    per_state /= per_state.sum(axis=2, keepdims=True)
    return pi, trans, per_state


def _random_init(rng, m: int, p: int, floor: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniform draws on the relevant simplices, floored away from the edge."""
    pi = rng.dirichlet(np.ones(m))
    trans = rng.dirichlet(np.ones(m), size=m)
    per_state = rng.dirichlet(np.ones(p), size=(m, p))
    pi = np.maximum(pi, floor)
    pi /= pi.sum()
    trans = np.maximum(trans, floor)
    trans /= trans.sum(axis=1, keepdims=True)
    per_state = np.maximum(per_state, floor)
    per_state /= per_state.sum(axis=2, keepdims=True)
    return pi, trans, per_state


def em_fit(panel: MigrationPanel, m: int, cfg: EmConfig) -> CalibrationResult:
    """Multi-start EM fit of the discrete model.

    Each restart starts from independent uniform draws on the parameter
    simplices and iterates expectation and maximization until the relative
    log-likelihood improvement drops below ``cfg.tol`` (or ``max_iters``).
    The best restart by final log-likelihood wins; its states are relabeled
    from least to most risky before being returned.
    """
    if panel.steps == 0:
        raise DataError("cannot calibrate on an empty panel")
    if m < 1:
        raise DataError("need at least one hidden state")
    if cfg.floor >= 1.0 / max(m, panel.p):
        raise DataError(
            f"floor {cfg.floor} too large for {m} states / {panel.p} ratings"
        )
    master = np.random.default_rng(cfg.seed)
    seeds = [int(s) for s in master.integers(0, 2**63 - 1, size=cfg.restarts)]
    traces: list[np.ndarray] = []
    fits: list[tuple[np.ndarray, np.ndarray, np.ndarray] | None] = []
    converged_flags: list[bool] = []
    failures: list[str] = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        pi, trans, per_state = _random_init(rng, m, panel.p, cfg.floor)
        try:
            trace, params, conv = _em_single(
                panel, pi, trans, per_state, cfg, _discrete_e_and_m
            )
        except ImpossibleObservationError as exc:
            failures.append(str(exc))
            traces.append(np.empty(0))
            fits.append(None)
            converged_flags.append(False)
            continue
        traces.append(trace)
        fits.append(params)
        converged_flags.append(conv)
    if all(f is None for f in fits):
        raise ModelError(
            "every EM restart failed on impossible observations: " + failures[0]
        )
    finals = [t[-1] if t.size else -np.inf for t in traces]
    best = int(np.argmax(finals))
    pi, trans, per_state = fits[best]
    factor = HiddenFactorSpec(pi=pi, trans=trans, mode=Mode.DISCRETE)
    law = MigrationLaw(per_state=per_state, mode=Mode.DISCRETE)
    factor, law, _ = sort_states_by_risk(factor, law)
    return CalibrationResult(
        factor=factor,
        law=law,
        loglik_trace=traces[best],
        best_restart=best,
        converged=converged_flags[best],
        restart_traces=tuple(traces),
        restart_seeds=tuple(seeds),
    )


def _discrete_e_and_m(panel, pi, trans, per_state, cfg):
    factor = HiddenFactorSpec(pi=pi, trans=trans, mode=Mode.DISCRETE)
    law = MigrationLaw(per_state=per_state, mode=Mode.DISCRETE)
    fwd = forward_pass(panel, factor, law)
    bwd = backward_pass(panel, factor, law)
    u, v = posteriors(fwd, bwd, panel, factor, law)
    new_pi, new_trans, new_per_state = m_step(u, v, panel, prev_law=law, floor=cfg.floor)
    return fwd.loglik, (new_pi, new_trans, new_per_state)


def _em_single(panel, pi, trans, per_state, cfg, e_and_m):
    """Run one EM restart; returns (trace, final params, converged)."""
    trace = []
    converged = False
    params = (pi, trans, per_state)
    for _ in range(cfg.max_iters):
        loglik, new_params = e_and_m(panel, *params, cfg)
        trace.append(loglik)
        if len(trace) > 1:
            prev = trace[-2]
            if loglik - prev <= cfg.tol * max(abs(prev), 1.0):
                converged = True
                params = new_params
                break
        params = new_params
    return np.array(trace), params, converged


# --------------------------------------------------------------------------
# Continuous adaptation: fine grid, uniform picker likelihood, numeric M-step
# --------------------------------------------------------------------------


def _fine_grid_from_panel(panel: MigrationPanel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a panel whose steps are fine intervals (at most one jump each)."""
    p = panel.p
    off = ~np.eye(p, dtype=bool)
    totals = panel.counts[:, off].sum(axis=1)
    bad = np.nonzero(totals > 1)[0]
    if bad.size:
        raise DataError(
            f"fine-grid step {int(bad[0])} holds {int(totals[bad[0]])} jumps; "
            "the picker likelihood needs at most one per interval"
        )
    src = np.full(panel.steps, -1, dtype=np.int64)
    dst = np.full(panel.steps, -1, dtype=np.int64)
    where = np.nonzero(totals == 1)[0]
    for t in where:
        j, k = [int(x[0]) for x in np.nonzero(panel.counts[t] * off)]
        src[t] = j
        dst[t] = k
    return panel.exposures.copy(), src, dst


def _fine_grid_from_stream(
    stream: EventStream, fine_dt: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bin an event stream onto intervals of length ``fine_dt``.

    Exposures are sampled at interval starts (boundary overrides applied
    first); an interval holding two events is an error — choose a finer
    grid or spread the data first.
    """
    n_f = stream.horizon / fine_dt
    if abs(n_f - round(n_f)) > 1e-6:
        raise DataError(
            f"horizon {stream.horizon} is not a whole number of fine intervals "
            f"of {fine_dt}"
        )
    n_f = int(round(n_f))
    p = stream.p
    exposures = np.zeros((n_f, p), dtype=np.int64)
    src = np.full(n_f, -1, dtype=np.int64)
    dst = np.full(n_f, -1, dtype=np.int64)
    y = stream.initial_exposures.astype(np.int64).copy()
    b = 0
    e = 0
    for t in range(n_f):
        start = t * fine_dt
        while (
            stream.boundary_times is not None
            and b < stream.boundary_times.shape[0]
            and stream.boundary_times[b] <= start + 1e-9
        ):
            y = stream.boundary_exposures[b].astype(np.int64).copy()
            b += 1
        exposures[t] = y
        end = (t + 1) * fine_dt
        while e < stream.n_events and stream.times[e] <= end + 1e-9:
            if src[t] >= 0:
                raise DataError(
                    f"two events fall into fine interval {t}; use a finer grid"
                )
            src[t] = int(stream.sources[e])
            dst[t] = int(stream.targets[e])
            y[src[t]] -= 1
            y[dst[t]] += 1
            e += 1
    return exposures, src, dst


def _picker_log_weights(
    exposures: np.ndarray,
    src: np.ndarray,
    dst: np.ndarray,
    per_state: np.ndarray,
    n_bar: float,
    all_stayers_diagonal: bool = False,
) -> np.ndarray:
    """Per-interval, per-state log-likelihood under the uniform picker model.

    One entity slot out of ``n_bar`` is picked uniformly; a slot outside the
    current sample forbids jumps, a picked entity moves by its migration
    row.  Under the default reading only the picked entity contributes a
    probability factor; ``all_stayers_diagonal`` makes every unpicked entity
    contribute its staying probability as well.
    """
    n_t = exposures.sum(axis=1).astype(float)
    if np.any(n_t > n_bar):
        raise DataError("n_bar must dominate the per-interval entity totals")
    m = per_state.shape[0]
    s_count = exposures.shape[0]
    diag = np.einsum("ijj->ij", per_state)
    with np.errstate(divide="ignore"):
        log_diag = np.log(diag)
    nojump = src < 0
    logw = np.empty((s_count, m))
    if all_stayers_diagonal:
        stay_cnt = exposures.astype(float).copy()
        jump_rows = np.nonzero(~nojump)[0]
        stay_cnt[jump_rows, src[jump_rows]] -= 1.0
        logw[:] = stay_cnt @ log_diag.T
        for t in jump_rows:
            with np.errstate(divide="ignore"):
                logw[t] += np.log(per_state[:, src[t], dst[t]]) - math.log(n_bar)
    else:
        base = (1.0 - n_t / n_bar)[:, None] + (exposures.astype(float) @ diag.T) / n_bar
        with np.errstate(divide="ignore"):
            logw[nojump] = np.log(base[nojump])
        for t in np.nonzero(~nojump)[0]:
            with np.errstate(divide="ignore"):
                logw[t] = np.log(per_state[:, src[t], dst[t]]) - math.log(n_bar)
    return logw


def picker_weights(
    panel_fine: MigrationPanel,
    law: MigrationLaw,
    n_bar: float | None = None,
    all_stayers_diagonal: bool = False,
) -> np.ndarray:
    """Interval likelihood matrix of a fine-grid panel, shape (steps, m).

    ``n_bar`` defaults to the largest per-interval entity total; it must
    dominate every interval.  Weights are strictly positive whenever the law
    has no exact zeros (flooring guarantees that during calibration).
    """
    exposures, src, dst = _fine_grid_from_panel(panel_fine)
    if n_bar is None:
        n_bar = float(exposures.sum(axis=1).max(initial=0))
    return np.exp(
        _picker_log_weights(exposures, src, dst, law.per_state, n_bar, all_stayers_diagonal)
    )


def _jump_posterior_mass(
    u: np.ndarray, src: np.ndarray, dst: np.ndarray, m: int, p: int
) -> np.ndarray:
    """Expected number of picked jumps per (state, source, target)."""
    mass = np.zeros((m, p, p))
    jump_rows = np.nonzero(src >= 0)[0]
    for t in jump_rows:
        mass[:, src[t], dst[t]] += u[t]
    return mass


def _row_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _optimize_picker_rows(
    jump_mass: np.ndarray,
    u_nj: np.ndarray,
    y_nj: np.ndarray,
    n_bar: float,
    start: np.ndarray,
    floor: float,
    gtol: float = 1e-8,
) -> tuple[np.ndarray, float, float, bool]:
    """Maximize one state's picker-likelihood contribution over its
    row-stochastic migration matrix.

    Rows are reparameterized by softmax logits and ascended jointly (the
    no-jump terms couple the diagonal entries across rows), with analytic
    gradients.  Returns the new matrix, the objective before and after, and
    whether the optimizer improved it.
    """
    p = start.shape[0]
    c_nj = 1.0 - y_nj.sum(axis=1) / n_bar

    def q_of(mat: np.ndarray) -> float:
        with np.errstate(divide="ignore"):
            log_mat = np.log(mat)
        jump_term = float(np.sum(np.where(jump_mass > 0, jump_mass * log_mat, 0.0)))
        w = c_nj + (y_nj @ np.diag(mat).copy()) / n_bar
        nojump_term = float(u_nj @ np.log(w))
        return jump_term + nojump_term

    jump_row_mass = jump_mass.sum(axis=1)

    def neg_q_and_grad(x: np.ndarray):
        mat = _row_softmax(x.reshape(p, p))
        with np.errstate(divide="ignore"):
            log_mat = np.log(mat)
        jump_term = np.sum(np.where(jump_mass > 0, jump_mass * log_mat, 0.0))
        diag = np.diag(mat).copy()
        w = c_nj + (y_nj @ diag) / n_bar
        nojump_term = u_nj @ np.log(w)
        # gradient in logits, division-free through the softmax chain rule
        grad_x = jump_mass - mat * jump_row_mass[:, None]
        d_diag = ((u_nj / w) @ y_nj / n_bar) * diag
        grad_x -= mat * d_diag[:, None]
        grad_x[np.diag_indices(p)] += d_diag
        return -(jump_term + nojump_term), -grad_x.ravel()

    q_start = q_of(start)
    x0 = np.log(np.maximum(start, floor)).ravel()
    res = minimize(
        neg_q_and_grad,
        x0,
        jac=True,
        method="L-BFGS-B",
        options={"gtol": gtol, "ftol": 1e-13, "maxiter": 300},
    )
    mat = _row_softmax(res.x.reshape(p, p))
    mat = np.maximum(mat, floor)
    mat /= mat.sum(axis=1, keepdims=True)
    q_end = q_of(mat)
    if q_end + 1e-12 * (1.0 + abs(q_start)) < q_start:
        return start, q_start, q_start, False
    return mat, q_start, q_end, True


def em_fit_continuous(
    data: EventStream | MigrationPanel,
    m: int,
    cfg: EmConfig,
    fine_dt: float | None = None,
    to_generator: bool = True,
    all_stayers_diagonal: bool = False,
    fixed_law: MigrationLaw | None = None,
) -> CalibrationResult:
    """Multi-start EM fit adapted to event data with no simultaneous jumps.

    ``data`` is either an event stream (binned onto intervals of
    ``fine_dt``, which must isolate every jump) or an already-fine panel.
    Interval likelihoods come from the uniform picker model; the hidden
    chain's updates are closed form while the migration rows are maximized
    numerically (an iteration only ever accepts a non-decreasing objective).
    The fitted fine-grid probabilities are returned as intensity matrices
    when ``to_generator`` is set.

    Passing ``fixed_law`` (a discrete picker-convention law) pins the
    migration matrices and calibrates the hidden chain alone.

    Conversion note: the fitted migration matrix is the law of a *picked*
    entity, and an entity is picked once per ``n_bar`` intervals on average,
    so its intensities are ``(L - I) / (n_bar * fine_dt)``; the hidden chain
    moves every interval, so its generator is ``(K - I) / fine_dt``.
    """
    if isinstance(data, EventStream):
        if fine_dt is None:
            raise DataError("fine_dt is required when calibrating on an event stream")
        exposures, src, dst = _fine_grid_from_stream(data, fine_dt)
    else:
        exposures, src, dst = _fine_grid_from_panel(data)
        if fine_dt is None:
            fine_dt = float(data.step_length_days)
    if exposures.shape[0] == 0:
        raise DataError("cannot calibrate on an empty sample")
    if m < 1:
        raise DataError("need at least one hidden state")
    p = exposures.shape[1]
    if cfg.floor >= 1.0 / max(m, p):
        raise DataError(f"floor {cfg.floor} too large for {m} states / {p} ratings")
    n_bar = float(exposures.sum(axis=1).max(initial=0))
    if n_bar <= 0:
        raise DataError("sample holds no entities")
    nojump = src < 0

    master = np.random.default_rng(cfg.seed)
    seeds = [int(s) for s in master.integers(0, 2**63 - 1, size=cfg.restarts)]
    traces: list[np.ndarray] = []
    fits: list[tuple[np.ndarray, np.ndarray, np.ndarray] | None] = []
    converged_flags: list[bool] = []
    notes: list[str] = []
    failures: list[str] = []

    def e_and_m(_panel, pi, trans, per_state, cfg):
        logw = _picker_log_weights(
            exposures, src, dst, per_state, n_bar, all_stayers_diagonal
        )
        fwd = _forward(logw, pi, trans)
        bwd = _backward(logw, trans)
        u, v = _posteriors_from(logw, fwd, bwd, trans)
        new_pi = renormalize(u[0].copy(), trigger=0.0)
        if u.shape[0] > 1:
            k_num = v.sum(axis=0)
            k_den = u[:-1].sum(axis=0)
            new_trans = np.where(
                k_den[:, None] > 0,
                k_num / np.where(k_den[:, None] > 0, k_den[:, None], 1.0),
                1.0 / m,
            )
        else:
            new_trans = np.full((m, m), 1.0 / m)
        new_trans = new_trans / new_trans.sum(axis=1, keepdims=True)

        if fixed_law is not None:
            return fwd.loglik, (new_pi, new_trans, per_state)
        jump_mass = _jump_posterior_mass(u, src, dst, m, p)
        u_nj = u[nojump]
        y_nj = exposures[nojump].astype(float)
        new_per_state = np.empty_like(per_state)
        for i in range(m):
            if all_stayers_diagonal:
                stay = u_nj[:, i] @ y_nj
                stay = stay + _jump_stay_mass(u[:, i], src, exposures)
                target = jump_mass[i] + np.diag(stay)
                row = np.maximum(target, 0.0)
                row = np.maximum(row, cfg.floor)
                new_per_state[i] = row / row.sum(axis=1, keepdims=True)
                continue
            mat, q0, q1, improved = _optimize_picker_rows(
                jump_mass[i], u_nj[:, i], y_nj, n_bar, per_state[i], cfg.floor
            )
            if not improved and q1 < q0:
                notes.append(f"state {i}: optimizer non-improvement, row kept")
            new_per_state[i] = mat
        return fwd.loglik, (new_pi, new_trans, new_per_state)

    for seed in seeds:
        rng = np.random.default_rng(seed)
        pi0, trans0, per0 = _random_init(rng, m, p, cfg.floor)
        if fixed_law is not None:
            if fixed_law.n_states != m or fixed_law.p != p:
                raise ModelError("fixed_law dimensions do not match the data/model")
            per0 = fixed_law.per_state.copy()
        try:
            trace, params, conv = _em_single(None, pi0, trans0, per0, cfg, e_and_m)
        except ImpossibleObservationError as exc:
            failures.append(str(exc))
            traces.append(np.empty(0))
            fits.append(None)
            converged_flags.append(False)
            continue
        traces.append(trace)
        fits.append(params)
        converged_flags.append(conv)
    if all(f is None for f in fits):
        raise ModelError(
            "every EM restart failed on impossible observations: " + failures[0]
        )
    finals = [t[-1] if t.size else -np.inf for t in traces]
    best = int(np.argmax(finals))
    pi, trans, per_state = fits[best]
    factor = HiddenFactorSpec(pi=pi, trans=trans, mode=Mode.DISCRETE)
    law = MigrationLaw(per_state=per_state, mode=Mode.DISCRETE)
    factor, law, _ = sort_states_by_risk(factor, law)
    if to_generator:
        factor = HiddenFactorSpec(
            pi=factor.pi,
            trans=transition_to_generator(factor.trans, fine_dt),
            mode=Mode.CONTINUOUS,
        )
        law = MigrationLaw(
            per_state=transition_to_generator(law.per_state, n_bar * fine_dt),
            mode=Mode.CONTINUOUS,
        )
    return CalibrationResult(
        factor=factor,
        law=law,
        loglik_trace=traces[best],
        best_restart=best,
        converged=converged_flags[best],
        restart_traces=tuple(traces),
        restart_seeds=tuple(seeds),
        fine_dt=fine_dt,
    )


def _jump_stay_mass(u_i: np.ndarray, src: np.ndarray, exposures: np.ndarray) -> np.ndarray:
    """Stayer exponents contributed by jump intervals under the
    all-stayers-diagonal convention."""
    jump_rows = np.nonzero(src >= 0)[0]
    out = np.zeros(exposures.shape[1])
    for t in jump_rows:
        cnt = exposures[t].astype(float).copy()
        cnt[src[t]] -= 1.0
        out += u_i[t] * cnt
    return out
