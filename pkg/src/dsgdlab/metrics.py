"""Per-iteration metrics, ensemble summaries, and transient-time detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import HorizonExceeded, NumericalDivergence, ShapeMismatch

#: Metric columns recorded along every trajectory, in CSV order.
METRIC_NAMES = ("f_avg", "grad_norm_sq", "consensus_sq", "consensus_quart")

#: Normal quantile used for the reported confidence half-widths.
CI_FACTOR = 1.96


@dataclass(frozen=True)
class MetricRecord:
    """One recorded state: objective, gradient, and disagreement at time t."""

    t: int
    step_size: float
    f_avg: float
    grad_norm_sq: float
    consensus_sq: float
    consensus_quart: float


def record_metrics(state, suite, schedule) -> MetricRecord:
    """Evaluate the tracked metrics at the (pre-update) state.

    ``f_avg`` and ``grad_norm_sq`` are exact global-objective quantities at
    the average iterate; ``consensus_sq`` is the squared Frobenius distance of
    the iterate matrix from its row average, and ``consensus_quart`` its
    square.  ``step_size`` is the step about to be applied (NaN past the
    schedule horizon, e.g. at the final state).
    """
    iterates = np.asarray(state.iterates, dtype=float)
    theta_bar = iterates.mean(axis=0)
    dev = iterates - theta_bar
    consensus_sq = float(np.sum(dev * dev))
    f_avg = float(suite.global_value(theta_bar))
    grad = suite.global_grad(theta_bar)
    grad_norm_sq = float(grad @ grad)
    if not (np.isfinite(f_avg) and np.isfinite(grad_norm_sq) and np.isfinite(consensus_sq)):
        raise NumericalDivergence(f"non-finite metric at iteration {state.t}", iteration=state.t)
    try:
        step = schedule.gamma(state.t)
    except HorizonExceeded:
        step = float("nan")
    return MetricRecord(
        t=int(state.t),
        step_size=step,
        f_avg=f_avg,
        grad_norm_sq=grad_norm_sq,
        consensus_sq=consensus_sq,
        consensus_quart=consensus_sq * consensus_sq,
    )


@dataclass
class Trajectory:
    """Recorded metrics of one run; optional raw states for per-step audits."""

    run_id: int
    seed: int
    T: int
    t: np.ndarray
    step_size: np.ndarray
    f_avg: np.ndarray
    grad_norm_sq: np.ndarray
    consensus_sq: np.ndarray
    consensus_quart: np.ndarray
    debug_states: np.ndarray | None = None
    debug_grads: np.ndarray | None = None
    debug_gammas: np.ndarray | None = None

    @classmethod
    def from_records(
        cls,
        run_id: int,
        seed: int,
        T: int,
        records,
        debug_states=None,
        debug_grads=None,
        debug_gammas=None,
    ) -> "Trajectory":
        return cls(
            run_id=run_id,
            seed=seed,
            T=T,
            t=np.array([r.t for r in records], dtype=int),
            step_size=np.array([r.step_size for r in records]),
            f_avg=np.array([r.f_avg for r in records]),
            grad_norm_sq=np.array([r.grad_norm_sq for r in records]),
            consensus_sq=np.array([r.consensus_sq for r in records]),
            consensus_quart=np.array([r.consensus_quart for r in records]),
            debug_states=debug_states,
            debug_grads=debug_grads,
            debug_gammas=debug_gammas,
        )

    def metric(self, name: str) -> np.ndarray:
        if name not in METRIC_NAMES:
            raise KeyError(name)
        return getattr(self, name)


def weighted_grad_sum(trajectory: Trajectory) -> float:
    """Step-size-weighted squared-gradient sum over all T update steps.

    Requires a complete (stride-1) trajectory; the final-state record takes
    no part in the sum.
    """
    expected = np.arange(trajectory.T + 1)
    if trajectory.t.shape != expected.shape or not np.array_equal(trajectory.t, expected):
        raise ValueError("weighted gradient sum needs a complete stride-1 trajectory")
    T = trajectory.T
    return float(trajectory.step_size[:T] @ trajectory.grad_norm_sq[:T])


@dataclass
class EnsembleSummary:
    """Pointwise mean and confidence half-width of an ensemble of runs."""

    t: np.ndarray
    step_size: np.ndarray
    runs: int
    mean: dict
    ci: dict


def ensemble_summary(trajectories) -> EnsembleSummary:
    """Aggregate >= 2 runs on a common grid into mean and 1.96-sigma/sqrt(R) bands."""
    runs = list(trajectories)
    if len(runs) < 2:
        raise ShapeMismatch(f"ensemble summary needs at least 2 runs, got {len(runs)}")
    base = runs[0]
    for other in runs[1:]:
        if other.t.shape != base.t.shape or not np.array_equal(other.t, base.t):
            raise ShapeMismatch("runs do not share a common record grid")
    R = len(runs)
    mean, ci = {}, {}
    for name in METRIC_NAMES:
        stacked = np.stack([r.metric(name) for r in runs])
        mean[name] = stacked.mean(axis=0)
        ci[name] = CI_FACTOR * stacked.std(axis=0, ddof=1) / np.sqrt(R)
    return EnsembleSummary(
        t=base.t.copy(), step_size=base.step_size.copy(), runs=R, mean=mean, ci=ci
    )


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with shrinking windows at the edges."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    x = np.asarray(x, dtype=float)
    if window == 1:
        return x.copy()
    csum = np.concatenate(([0.0], np.cumsum(x)))
    half = window // 2
    idx = np.arange(x.size)
    lo = np.maximum(0, idx - half)
    hi = np.minimum(x.size, idx + half + 1)
    return (csum[hi] - csum[lo]) / (hi - lo)


@dataclass(frozen=True)
class TransientEstimate:
    """First recorded time after which the test curve tracks the reference."""

    t_star: int | None
    delta: float
    window: int


def transient_time(
    test: EnsembleSummary, reference: EnsembleSummary, delta: float = 0.25, window: int = 25
) -> TransientEstimate:
    """Smallest recorded t from which smoothed test <= (1 + delta) * smoothed reference.

    Both mean ``grad_norm_sq`` curves are smoothed by a centered moving
    average of the given window before comparison; the condition must hold at
    every recorded time from t onward.  Returns ``t_star=None`` when the
    curves never merge within the horizon.
    """
    if test.t.shape != reference.t.shape or not np.array_equal(test.t, reference.t):
        raise ShapeMismatch("summaries do not share a common record grid")
    smooth_test = moving_average(test.mean["grad_norm_sq"], window)
    smooth_ref = moving_average(reference.mean["grad_norm_sq"], window)
    ok = smooth_test <= (1.0 + delta) * smooth_ref
    suffix_ok = np.logical_and.accumulate(ok[::-1])[::-1]
    if not suffix_ok.any():
        return TransientEstimate(t_star=None, delta=delta, window=window)
    return TransientEstimate(
        t_star=int(test.t[int(np.argmax(suffix_ok))]), delta=delta, window=window
    )


# ---------------------------------------------------------------------------
# CSV export


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_trajectories_csv(path, trajectories) -> None:
    """Write an ensemble's records: ``run,t,step_size,<metrics>`` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("run,t,step_size," + ",".join(METRIC_NAMES) + "\n")
        for traj in trajectories:
            for k in range(traj.t.size):
                cells = [str(traj.run_id), str(int(traj.t[k])), _fmt(traj.step_size[k])]
                cells += [_fmt(traj.metric(name)[k]) for name in METRIC_NAMES]
                fh.write(",".join(cells) + "\n")


def write_summary_csv(path, summary: EnsembleSummary) -> None:
    """Write a summary: ``t,step_size`` plus ``_mean``/``_ci`` column pairs."""
    header = ["t", "step_size"]
    for name in METRIC_NAMES:
        header += [f"{name}_mean", f"{name}_ci"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(summary.t.size):
            cells = [str(int(summary.t[k])), _fmt(summary.step_size[k])]
            for name in METRIC_NAMES:
                cells += [_fmt(summary.mean[name][k]), _fmt(summary.ci[name][k])]
            fh.write(",".join(cells) + "\n")


def read_summary_csv(path) -> EnsembleSummary:
    """Read a summary written by :func:`write_summary_csv` (run count unknown)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    expected = ["t", "step_size"]
    for name in METRIC_NAMES:
        expected += [f"{name}_mean", f"{name}_ci"]
    if header != expected:
        raise ShapeMismatch(f"{path}: unexpected summary header {header!r}")
    data = np.array([[float(v) for v in row] for row in rows])
    if data.size == 0:
        raise ShapeMismatch(f"{path}: empty summary")
    mean, ci = {}, {}
    for j, name in enumerate(METRIC_NAMES):
        mean[name] = data[:, 2 + 2 * j]
        ci[name] = data[:, 3 + 2 * j]
    return EnsembleSummary(
        t=data[:, 0].astype(int), step_size=data[:, 1], runs=0, mean=mean, ci=ci
    )
