"""Ingestion of entity-level rating histories, panel construction,
evaluation metrics and the file formats shared by the command-line tools.

A rating history is a CSV of ``entity_id,date,rating`` rows.  The rating
alphabet is declared by the caller (ordered best to worst) together with a
censor label; an entity spends the time between consecutive events at its
last posted label, and spells at the censor label drop it from exposures
until a real rating reappears.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .filtering import FilterTrajectory
from .model import FilterState, MigrationPanel

__all__ = [
    "RatingEvent",
    "RatingPaths",
    "EvaluationReport",
    "ingest_ratings",
    "export_ratings",
    "build_panel",
    "r_squared",
    "realized_ratios",
    "evaluate_predictions",
    "rolling_backtest",
    "panel_to_csv",
    "panel_from_csv",
    "trajectory_to_csv",
    "trajectory_from_csv",
    "events_to_csv",
    "events_from_csv",
]


@dataclass(frozen=True)
class RatingEvent:
    """One posting in an entity's rating history."""

    entity_id: str
    date: dt.date
    rating: str


@dataclass(frozen=True)
class RatingPaths:
    """Per-entity piecewise-constant rating paths.

    ``events[entity]`` is date-sorted with one entry per date (duplicates
    resolved last-wins at ingestion).  A path holds each label from its
    event date (inclusive) until the next event; before the first event the
    entity is unobserved, and the censor label marks gaps explicitly.
    """

    events: dict[str, tuple[tuple[dt.date, str], ...]]
    alphabet: tuple[str, ...]
    censor_label: str
    duplicate_count: int = 0

    @property
    def p(self) -> int:
        return len(self.alphabet)

    def rating_index_at(self, entity: str, date: dt.date) -> int | None:
        """Index of the entity's rating on ``date``; None if unobserved or
        censored."""
        path = self.events.get(entity)
        if not path:
            return None
        label = None
        for event_date, event_label in path:
            if event_date > date:
                break
            label = event_label
        if label is None or label == self.censor_label:
            return None
        return self.alphabet.index(label)

    def date_range(self) -> tuple[dt.date, dt.date]:
        dates = [d for path in self.events.values() for d, _ in path]
        if not dates:
            raise DataError("no events ingested")
        return min(dates), max(dates)


def ingest_ratings(
    source: str | io.TextIOBase,
    alphabet: list[str] | tuple[str, ...],
    censor_label: str = "W",
) -> RatingPaths:
    """Read a rating-history CSV into per-entity paths.

    ``source`` is a path or an open text stream with header
    ``entity_id,date,rating`` and ISO-8601 dates.  Labels outside the
    alphabet (censor label aside) are rejected; malformed rows are reported
    with their line numbers; several postings of one entity on the same date
    keep the last one and count as duplicates.
    """
    alphabet = tuple(alphabet)
    if censor_label in alphabet:
        raise DataError(f"censor label {censor_label!r} must not be in the alphabet")
    if len(set(alphabet)) != len(alphabet):
        raise DataError("alphabet labels must be distinct")
    close = False
    if isinstance(source, (str, bytes)):
        handle = open(source, "r", newline="")
        close = True
    else:
        handle = source
    problems: list[str] = []
    rows: dict[str, dict[dt.date, str]] = {}
    duplicates = 0
    try:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise DataError("empty ratings file")
        if [h.strip() for h in header[:3]] != ["entity_id", "date", "rating"]:
            raise DataError(
                f"expected header entity_id,date,rating, got {','.join(header)}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                problems.append(f"line {line_no}: expected 3 fields, got {len(row)}")
                continue
            entity, date_text, label = row[0].strip(), row[1].strip(), row[2].strip()
            try:
                date = dt.date.fromisoformat(date_text)
            except ValueError:
                problems.append(f"line {line_no}: bad date {date_text!r}")
                continue
            if label != censor_label and label not in alphabet:
                problems.append(f"line {line_no}: unknown rating {label!r}")
                continue
            per_entity = rows.setdefault(entity, {})
            if date in per_entity:
                duplicates += 1
            per_entity[date] = label
    finally:
        if close:
            handle.close()
    if problems:
        raise DataError(
            f"{len(problems)} malformed row(s): " + "; ".join(problems[:10])
        )
    if not rows:
        raise DataError("ratings file holds no events")
    events = {
        entity: tuple(sorted(per_entity.items()))
        for entity, per_entity in sorted(rows.items())
    }
    return RatingPaths(
        events=events,
        alphabet=alphabet,
        censor_label=censor_label,
        duplicate_count=duplicates,
    )


def export_ratings(paths: RatingPaths, target: str | io.TextIOBase) -> None:
    """Write paths back to the ingestion CSV format (round-trip inverse)."""
    close = False
    if isinstance(target, (str, bytes)):
        handle = open(target, "w", newline="")
        close = True
    else:
        handle = target
    try:
        writer = csv.writer(handle)
        writer.writerow(["entity_id", "date", "rating"])
        for entity, path in paths.events.items():
            for date, label in path:
                writer.writerow([entity, date.isoformat(), label])
    finally:
        if close:
            handle.close()


def build_panel(
    paths: RatingPaths,
    step_days: int,
    origin_date: dt.date | None = None,
    num_steps: int | None = None,
) -> MigrationPanel:
    """Aggregate entity paths onto left-closed intervals of ``step_days``.

    An entity counts toward interval ``t`` only when it carries a real
    rating at both the interval's start and end snapshots; it then
    contributes one start-rating exposure and one endpoint-to-endpoint count
    (intra-interval moves collapse).  Entities censored at either snapshot
    drop out of that interval, which keeps conservation exact by
    construction.
    """
    if step_days < 1:
        raise DataError("step_days must be at least 1")
    first, last = paths.date_range()
    if origin_date is None:
        origin_date = first
    if num_steps is None:
        span = (last - origin_date).days
        num_steps = max(1, -(-span // step_days))
    p = paths.p
    exposures = np.zeros((num_steps, p), dtype=np.int64)
    counts = np.zeros((num_steps, p, p), dtype=np.int64)
    snap_dates = [origin_date + dt.timedelta(days=t * step_days) for t in range(num_steps + 1)]
    for entity in paths.events:
        start_idx = paths.rating_index_at(entity, snap_dates[0])
        for t in range(num_steps):
            end_idx = paths.rating_index_at(entity, snap_dates[t + 1])
            if start_idx is not None and end_idx is not None:
                exposures[t, start_idx] += 1
                counts[t, start_idx, end_idx] += 1
            start_idx = end_idx
    return MigrationPanel(exposures, counts, step_length_days=step_days)


def r_squared(predicted: np.ndarray, realized: np.ndarray) -> float:
    """Share of the realized series' variance explained by the forecasts.

    ``1 - SSE / SST`` with SST taken about the realized mean; at most 1,
    negative when the forecast does worse than that mean.
    """
    predicted = np.asarray(predicted, dtype=float)
    realized = np.asarray(realized, dtype=float)
    if predicted.shape != realized.shape or predicted.ndim != 1:
        raise DataError("predicted and realized must be 1-d series of equal length")
    if predicted.shape[0] < 2:
        raise DataError("need at least two points to score a forecast")
    sst = float(np.sum((realized - realized.mean()) ** 2))
    if sst == 0.0:
        raise DataError("realized series is constant; its variance ratio is undefined")
    sse = float(np.sum((predicted - realized) ** 2))
    return 1.0 - sse / sst


@dataclass(frozen=True)
class EvaluationReport:
    """Per-transition forecast quality over a panel.

    ``series[(j, k)]`` holds the aligned (predicted, realized) ratio series
    for transition j -> k; ``r2[(j, k)]`` their variance-explained score.
    Transitions with no counts or a constant realized series are skipped and
    listed under ``skipped``.
    """

    r2: dict[tuple[int, int], float]
    series: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]]
    step_length_days: int
    skipped: tuple[tuple[int, int], ...] = ()

    def to_json(self) -> str:
        doc = {
            "step_length_days": self.step_length_days,
            "r2": {f"{j}->{k}": val for (j, k), val in self.r2.items()},
            "skipped": [f"{j}->{k}" for j, k in self.skipped],
            "series": {
                f"{j}->{k}": {
                    "predicted": pred.tolist(),
                    "realized": real.tolist(),
                }
                for (j, k), (pred, real) in self.series.items()
            },
        }
        return json.dumps(doc, indent=2)


def realized_ratios(panel: MigrationPanel) -> np.ndarray:
    """Observed per-step transition frequencies, shape (steps, p, p).

    Steps where a source rating has no exposure get NaN rows and are masked
    out by the evaluation.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(
            panel.exposures[:, :, None] > 0,
            panel.counts / panel.exposures[:, :, None].astype(float),
            np.nan,
        )


def evaluate_predictions(
    panel: MigrationPanel,
    trajectory: FilterTrajectory,
    min_steps: int = 2,
) -> EvaluationReport:
    """Score a trajectory's forecasts against a panel's realized ratios.

    Forecast ``t`` must refer to panel step ``t`` (both filters emit them
    that way).  Every off-diagonal transition with observed counts and a
    non-constant realized series gets a score.
    """
    if trajectory.predicted_ratios.shape[0] != panel.steps:
        raise DataError(
            f"trajectory carries {trajectory.predicted_ratios.shape[0]} forecasts "
            f"but the panel has {panel.steps} steps"
        )
    ratios = realized_ratios(panel)
    r2: dict[tuple[int, int], float] = {}
    series: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    skipped: list[tuple[int, int]] = []
    p = panel.p
    for j in range(p):
        for k in range(p):
            if j == k:
                continue
            if panel.counts[:, j, k].sum() == 0:
                skipped.append((j, k))
                continue
            mask = ~np.isnan(ratios[:, j, k])
            realized = ratios[mask, j, k]
            predicted = trajectory.predicted_ratios[mask, j, k]
            if realized.shape[0] < min_steps or np.all(realized == realized[0]):
                skipped.append((j, k))
                continue
            r2[(j, k)] = r_squared(predicted, realized)
            series[(j, k)] = (predicted, realized)
    return EvaluationReport(
        r2=r2,
        series=series,
        step_length_days=panel.step_length_days,
        skipped=tuple(skipped),
    )


def rolling_backtest(
    panel: MigrationPanel,
    m: int,
    cfg,
    initial_steps: int,
    refit_every: int,
) -> EvaluationReport:
    """Out-of-sample forecasts under periodic recalibration.

    The model is fitted on steps ``[0, cut)``; the causal filter then runs
    over the full history through ``cut + refit_every`` and only the
    forecasts of the new window count as out-of-sample.  The cut rolls
    forward by ``refit_every`` until the panel is exhausted, and the stitched
    window forecasts are scored against the realized ratios.
    """
    from .calibrate import em_fit
    from .filtering import run_filter

    if not 0 < initial_steps < panel.steps:
        raise DataError("initial_steps must split the panel")
    if refit_every < 1:
        raise DataError("refit_every must be positive")
    predicted = np.full((panel.steps, panel.p, panel.p), np.nan)
    cut = initial_steps
    while cut < panel.steps:
        window_end = min(cut + refit_every, panel.steps)
        history = MigrationPanel(
            panel.exposures[:cut], panel.counts[:cut], panel.step_length_days
        )
        result = em_fit(history, m, cfg)
        full = MigrationPanel(
            panel.exposures[:window_end],
            panel.counts[:window_end],
            panel.step_length_days,
        )
        traj = run_filter(full, result.factor, result.law)
        predicted[cut:window_end] = traj.predicted_ratios[cut:window_end]
        cut = window_end
    oos = slice(initial_steps, panel.steps)
    oos_panel = MigrationPanel(
        panel.exposures[oos], panel.counts[oos], panel.step_length_days
    )
    fake_traj = FilterTrajectory(
        states=(FilterState(np.ones(m) / m, time_index=0),),
        predicted_ratios=predicted[oos],
        loglik=0.0,
    )
    return evaluate_predictions(oos_panel, fake_traj)


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------


def panel_to_csv(panel: MigrationPanel, target: str | io.TextIOBase) -> None:
    """Header ``t,Y_1..Y_p,N_1_1..N_p_p``; counts row-major per step."""
    close = False
    if isinstance(target, (str, bytes)):
        handle = open(target, "w", newline="")
        close = True
    else:
        handle = target
    try:
        writer = csv.writer(handle)
        p = panel.p
        header = (
            ["t"]
            + [f"Y_{j + 1}" for j in range(p)]
            + [f"N_{j + 1}_{k + 1}" for j in range(p) for k in range(p)]
        )
        writer.writerow(header)
        for t in range(panel.steps):
            writer.writerow(
                [t + 1]
                + panel.exposures[t].tolist()
                + panel.counts[t].ravel().tolist()
            )
    finally:
        if close:
            handle.close()


def panel_from_csv(source: str | io.TextIOBase, step_length_days: int = 1) -> MigrationPanel:
    close = False
    if isinstance(source, (str, bytes)):
        handle = open(source, "r", newline="")
        close = True
    else:
        handle = source
    try:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0] != "t":
            raise DataError("panel CSV must start with header t,Y_1..,N_1_1..")
        n_y = sum(1 for h in header if h.startswith("Y_"))
        if n_y == 0 or len(header) != 1 + n_y + n_y * n_y:
            raise DataError(f"panel CSV header has unexpected width {len(header)}")
        exposures = []
        counts = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [int(x) for x in row]
            except ValueError as exc:
                raise DataError(f"panel CSV line {line_no}: {exc}") from exc
            exposures.append(vals[1 : 1 + n_y])
            counts.append(np.array(vals[1 + n_y :]).reshape(n_y, n_y))
        if not exposures:
            raise DataError("panel CSV holds no steps")
        return MigrationPanel(
            np.array(exposures), np.array(counts), step_length_days=step_length_days
        )
    finally:
        if close:
            handle.close()


def trajectory_to_csv(trajectory: FilterTrajectory, target: str | io.TextIOBase) -> None:
    """Header ``t,I_1..I_m,nu_1_1..nu_p_p``; forecast row ``t`` was issued
    before step/interval ``t`` (the final state row carries no forecast)."""
    close = False
    if isinstance(target, (str, bytes)):
        handle = open(target, "w", newline="")
        close = True
    else:
        handle = target
    try:
        writer = csv.writer(handle)
        m = trajectory.states[0].m
        p = trajectory.predicted_ratios.shape[1] if trajectory.predicted_ratios.size else 0
        header = (
            ["t"]
            + [f"I_{h + 1}" for h in range(m)]
            + [f"nu_{j + 1}_{k + 1}" for j in range(p) for k in range(p)]
        )
        writer.writerow(header)
        n_forecasts = trajectory.predicted_ratios.shape[0]
        for idx, state in enumerate(trajectory.states):
            row = [repr(float(state.time_index))] + [repr(float(x)) for x in state.probs]
            if idx < n_forecasts:
                row += [repr(float(x)) for x in trajectory.predicted_ratios[idx].ravel()]
            else:
                row += [""] * (p * p)
            writer.writerow(row)
    finally:
        if close:
            handle.close()


def trajectory_from_csv(source: str | io.TextIOBase) -> FilterTrajectory:
    close = False
    if isinstance(source, (str, bytes)):
        handle = open(source, "r", newline="")
        close = True
    else:
        handle = source
    try:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0] != "t":
            raise DataError("trajectory CSV must start with header t,I_1..")
        m = sum(1 for h in header if h.startswith("I_"))
        n_nu = len(header) - 1 - m
        p = int(round(n_nu**0.5)) if n_nu else 0
        states = []
        forecasts = []
        for row in reader:
            if not row:
                continue
            time_index = float(row[0])
            probs = np.array([float(x) for x in row[1 : 1 + m]])
            states.append(FilterState(probs, time_index=time_index))
            tail = row[1 + m :]
            if tail and tail[0] != "":
                forecasts.append(np.array([float(x) for x in tail]).reshape(p, p))
        if not states:
            raise DataError("trajectory CSV holds no states")
        predicted = np.array(forecasts) if forecasts else np.empty((0, p, p))
        return FilterTrajectory(states=tuple(states), predicted_ratios=predicted, loglik=np.nan)
    finally:
        if close:
            handle.close()


def events_to_csv(stream, target: str | io.TextIOBase) -> None:
    """Event CSV: a comment line with the time-zero exposures and horizon,
    then ``time,from_rating,to_rating`` rows (1-based rating labels).

    The format carries no boundary exposure track; streams spread from
    panels with entry or censoring should be kept in memory (or re-spread
    from the panel) rather than round-tripped through this file.
    """
    close = False
    if isinstance(target, (str, bytes)):
        handle = open(target, "w", newline="")
        close = True
    else:
        handle = target
    try:
        y0 = ",".join(str(int(x)) for x in stream.initial_exposures)
        handle.write(f"# exposures0={y0} horizon={stream.horizon!r}\n")
        writer = csv.writer(handle)
        writer.writerow(["time", "from_rating", "to_rating"])
        for i in range(stream.n_events):
            writer.writerow(
                [
                    repr(float(stream.times[i])),
                    int(stream.sources[i]) + 1,
                    int(stream.targets[i]) + 1,
                ]
            )
    finally:
        if close:
            handle.close()


def events_from_csv(source: str | io.TextIOBase):
    from .model import EventStream

    close = False
    if isinstance(source, (str, bytes)):
        handle = open(source, "r", newline="")
        close = True
    else:
        handle = source
    try:
        meta = handle.readline().strip()
        if not meta.startswith("# exposures0="):
            raise DataError("event CSV must start with the exposures comment line")
        try:
            expo_part, horizon_part = meta[len("# exposures0=") :].split(" horizon=")
            initial = np.array([int(x) for x in expo_part.split(",")])
            horizon = float(horizon_part)
        except ValueError as exc:
            raise DataError(f"bad event CSV metadata line: {meta!r}") from exc
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["time", "from_rating", "to_rating"]:
            raise DataError("event CSV needs header time,from_rating,to_rating")
        times, sources, targets = [], [], []
        for line_no, row in enumerate(reader, start=3):
            if not row:
                continue
            try:
                times.append(float(row[0]))
                sources.append(int(row[1]) - 1)
                targets.append(int(row[2]) - 1)
            except (ValueError, IndexError) as exc:
                raise DataError(f"event CSV line {line_no}: {exc}") from exc
        return EventStream(
            times=np.array(times),
            sources=np.array(sources, dtype=np.int64),
            targets=np.array(targets, dtype=np.int64),
            initial_exposures=initial,
            horizon=horizon,
        )
    finally:
        if close:
            handle.close()
