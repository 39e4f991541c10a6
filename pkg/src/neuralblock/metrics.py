"""Error metrics and evaluation reports for sampler runs.

The headline number compares an estimated marginal table against an exact
one: the mean over variables of |Phat(X=1) - P(X=1)| when every variable is
binary, or its multi-state generalization, per-variable total variation
(the two coincide on binary variables). Error-vs-compute curves integrate
that number over epochs or over wall seconds with the trapezoid rule, so a
flat error e across a span of S epochs integrates to e * S.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Iterable, Mapping

import numpy as np

from .neural_sampler import InferenceTrace
from .oracle import MarginalTable


class MetricsError(ValueError):
    """Inputs that cannot be compared or integrated."""


# ---------------------------------------------------------------------------
# Marginal error


def _check_same_support(est: MarginalTable, truth: MarginalTable) -> None:
    if len(est) != len(truth):
        raise MetricsError(
            f"marginal tables cover {len(est)} vs {len(truth)} variables"
        )
    for v, (a, b) in enumerate(zip(est.probs, truth.probs)):
        if len(a) != len(b):
            raise MetricsError(
                f"variable {v} has {len(a)} states in one table, {len(b)} in the other"
            )


def is_all_binary(table: MarginalTable) -> bool:
    return all(len(p) == 2 for p in table.probs)


def error_metric_name(truth: MarginalTable) -> str:
    """Which formula marginal_error applies; recorded in reports."""
    return "mean-abs-p1" if is_all_binary(truth) else "mean-per-variable-tv"


def marginal_error(est: MarginalTable, truth: MarginalTable) -> float:
    """Mean per-variable gap between estimated and exact marginals, in [0, 1].

    All-binary tables score mean_v |phat_v(1) - p_v(1)|; any multi-state
    variable switches the whole table to per-variable total variation
    0.5 * sum_s |phat_v(s) - p_v(s)|, the same number on binary variables.
    """
    _check_same_support(est, truth)
    if len(truth) == 0:
        raise MetricsError("cannot score empty marginal tables")
    if is_all_binary(truth):
        gaps = [abs(float(a[1]) - float(b[1])) for a, b in zip(est.probs, truth.probs)]
    else:
        gaps = [0.5 * float(np.abs(a - b).sum()) for a, b in zip(est.probs, truth.probs)]
    return float(np.mean(gaps))


# ---------------------------------------------------------------------------
# Error-vs-compute curves


@dataclasses.dataclass(frozen=True)
class ErrorPoint:
    """Error of the running estimate at one checkpoint along a chain."""

    epoch: int
    wall_ns: int
    error: float


def checkpoint_marginals(trace: InferenceTrace, index: int) -> MarginalTable:
    """Cumulative per-variable frequencies at checkpoint `index` (no burn-in)."""
    ck = trace.checkpoints[index]
    probs = tuple(
        ck.counts[v, :card] / ck.epoch for v, card in enumerate(trace.model.cards)
    )
    return MarginalTable(probs=probs)


def eval_series(trace: InferenceTrace, truth: MarginalTable) -> tuple[ErrorPoint, ...]:
    """Error of the cumulative estimate at every checkpoint.

    No burn-in is discarded: the curve shows how fast the raw running
    average converges, which is what error-vs-compute comparisons score.
    """
    return tuple(
        ErrorPoint(
            epoch=ck.epoch,
            wall_ns=ck.wall_ns,
            error=marginal_error(checkpoint_marginals(trace, i), truth),
        )
        for i, ck in enumerate(trace.checkpoints)
    )


def error_integral(
    series: Iterable[ErrorPoint], axis: str = "epochs", cap: float | None = None
) -> float:
    """Trapezoid integral of the error curve up to `cap` on the given axis.

    axis "epochs" integrates over epoch count, "time" over wall seconds.
    The curve is interpolated linearly between checkpoints and held constant
    past the last one. `cap` defaults to the last checkpoint and must not
    precede the first one (there is no estimate to integrate yet).
    """
    pts = tuple(series)
    if not pts:
        raise MetricsError("empty error series")
    if axis == "epochs":
        xs = np.array([p.epoch for p in pts], dtype=np.float64)
    elif axis == "time":
        xs = np.array([p.wall_ns for p in pts], dtype=np.float64) / 1e9
    else:
        raise MetricsError(f"unknown integration axis {axis!r}")
    errs = np.array([p.error for p in pts], dtype=np.float64)
    if np.any(np.diff(xs) < 0):
        raise MetricsError(f"series is not sorted along the {axis} axis")
    if cap is None:
        cap = float(xs[-1])
    cap = float(cap)
    if cap < xs[0]:
        raise MetricsError(f"cap {cap:g} precedes the first sample at {xs[0]:g}")
    keep = xs <= cap
    xs_k, errs_k = xs[keep], errs[keep]
    if cap > xs_k[-1]:
        xs_k = np.append(xs_k, cap)
        errs_k = np.append(errs_k, float(np.interp(cap, xs, errs)))
    return float(np.trapezoid(errs_k, xs_k))


# ---------------------------------------------------------------------------
# Run reports


def acceptance_summary(trace: InferenceTrace) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for kind in sorted(trace.move_totals):
        proposed = int(trace.move_totals[kind])
        accepted = int(trace.accept_totals.get(kind, 0))
        out[kind] = {
            "proposed": proposed,
            "accepted": accepted,
            "rate": accepted / proposed if proposed else None,
        }
    return out


@dataclasses.dataclass(frozen=True)
class EvalReport:
    """Everything one scored sampler run reports.

    Timing fields (wall_secs, per-point wall_ns, integral_secs) vary between
    reruns; every other field is a pure function of (config, seed).
    """

    sampler: str
    seed: int
    stream: int
    epochs_run: int
    error_metric: str | None
    series: tuple[ErrorPoint, ...]
    final_error: float | None
    integral_epochs: float | None
    integral_secs: float | None
    acceptance: dict[str, dict]
    flagged: int
    wall_secs: float
    config: dict

    def __post_init__(self) -> None:
        for p in self.series:
            if not 0.0 <= p.error <= 1.0:
                raise MetricsError(
                    f"error {p.error} at epoch {p.epoch} is outside [0, 1]"
                )
        epochs = [p.epoch for p in self.series]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise MetricsError("series epochs are not strictly increasing")


def build_eval_report(
    trace: InferenceTrace,
    truth: MarginalTable | None,
    sampler: str,
    config: Mapping | None = None,
    seed: int = 0,
    stream: int = 0,
) -> EvalReport:
    """Score one finished chain against exact marginals (when available)."""
    series: tuple[ErrorPoint, ...] = ()
    metric = None
    if truth is not None:
        series = eval_series(trace, truth)
        metric = error_metric_name(truth)
    return EvalReport(
        sampler=sampler,
        seed=int(seed),
        stream=int(stream),
        epochs_run=trace.epochs_run,
        error_metric=metric,
        series=series,
        final_error=series[-1].error if series else None,
        integral_epochs=error_integral(series, "epochs") if series else None,
        integral_secs=error_integral(series, "time") if series else None,
        acceptance=acceptance_summary(trace),
        flagged=trace.flagged,
        wall_secs=trace.wall_ns / 1e9,
        config=dict(config or {}),
    )


def report_to_json(report: EvalReport) -> str:
    out = dataclasses.asdict(report)
    out["series"] = [
        {"epoch": p.epoch, "wall_ns": p.wall_ns, "error": p.error}
        for p in report.series
    ]
    return json.dumps(out, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Reproducibility helpers: reruns must agree byte for byte once wall-clock
# derived entries are removed.


_TIMING_KEYS = frozenset({"wall_ns", "wall_secs", "wall_clock_secs", "integral_secs"})


def strip_timing(value):
    """Recursively drop wall-clock entries from a JSON-like object."""
    if isinstance(value, dict):
        return {k: strip_timing(v) for k, v in value.items() if k not in _TIMING_KEYS}
    if isinstance(value, list):
        return [strip_timing(v) for v in value]
    return value


def strip_wall_columns(csv_text: str) -> str:
    """Drop wall-clock columns (by header name) from a CSV text."""
    lines = csv_text.strip("\n").split("\n")
    header = lines[0].split(",")
    keep = [i for i, name in enumerate(header) if name not in _TIMING_KEYS]
    out = []
    for line in lines:
        cells = line.split(",")
        out.append(",".join(cells[i] for i in keep))
    return "\n".join(out) + "\n"
