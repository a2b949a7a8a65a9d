"""Convergence-bound evaluation and numerical verification.

Evaluates the two ergodic convergence bounds and their transient-time
predictions, and audits the inequalities they rest on directly against
simulated trajectories: per-realization contraction of the disagreement
matrix, ensemble moment bounds on the disagreement, one-step expected
descent, the geometric-sum auxiliary inequality, and the Hessian
linearization-error bound.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter

from . import rng as rngmod
from .algorithms import StepSchedule, check_step_conditions, ratio_constant
from .errors import Inapplicable, MissingDebugData
from .metrics import CI_FACTOR, EnsembleSummary
from .objectives import SIGMOID_D3_SUP, SmoothnessConstants, _sample_ball
from .topology import MixingMatrix, spectral_gap

#: Relative slack allowed when checking exact per-realization inequalities.
EXACT_REL_SLACK = 1e-9

#: Number of standard errors of slack granted to Monte-Carlo estimates.
MC_SIGMA_SLACK = 2.0


@dataclass(frozen=True)
class BoundReport:
    """One theorem bound: total, termwise split, and optional empirical check."""

    theorem: int
    total: float
    terms: dict
    conditions: object
    warnings: tuple = ()
    statement_literal: float | None = None
    lhs_mean: float | None = None
    lhs_stderr: float | None = None
    passed: bool | None = None
    margin: float | None = None

    def with_lhs(self, lhs_mean: float, lhs_stderr: float) -> "BoundReport":
        slack = self.total + MC_SIGMA_SLACK * lhs_stderr
        return replace(
            self,
            lhs_mean=lhs_mean,
            lhs_stderr=lhs_stderr,
            passed=bool(lhs_mean <= slack),
            margin=slack - lhs_mean,
        )


def thm1_rhs(
    constants: SmoothnessConstants, rho: float, n: int, schedule: StepSchedule, T: int
) -> BoundReport:
    """Order-2 ergodic bound: initial gap, gradient-noise, and network terms."""
    g = schedule.values(T)
    s2 = float(np.sum(g**2))
    s3 = float(np.sum(g**3))
    c = constants
    terms = {
        "initial_gap": 4.0 * c.D,
        "gradient_noise": 2.0 * c.L * c.sigma**2 / n * s2,
        "network": 32.0 * c.L**2 * (c.varsigma**2 + c.sigma**2) / rho**2 * s3,
    }
    report = check_step_conditions(schedule, c, rho, theorem=1)
    warnings = () if report.passed else ("step conditions not satisfied",)
    return BoundReport(
        theorem=1,
        total=sum(terms.values()),
        terms=terms,
        conditions=report,
        warnings=warnings,
    )


def thm2_rhs(
    constants: SmoothnessConstants, rho: float, n: int, schedule: StepSchedule, T: int
) -> BoundReport:
    """Order-4 ergodic bound with Hessian-dispersion network terms.

    The headline value uses the proof-consistent network term (agent factor
    ``n``, fourth power of the gradient dispersion); ``statement_literal``
    evaluates the looser printed variant (no agent factor, squared
    dispersion) for comparison.
    """
    g = schedule.values(T)
    s2 = float(np.sum(g**2))
    s3 = float(np.sum(g**3))
    s5 = float(np.sum(g**5))
    c = constants
    terms = {
        "initial_gap": 4.0 * c.D,
        "gradient_noise": 2.0 * c.L * c.sigma**2 / n * s2,
        "hessian_network": 432.0 * n * c.L_H**2 * (c.sigma**4 + 4.0 * c.varsigma**4) / rho**4 * s5,
        "dispersion_network": 32.0 * c.varsigma_H**2 * (c.sigma**2 + c.varsigma**2) / rho**2 * s3,
    }
    literal = (
        terms["initial_gap"]
        + terms["gradient_noise"]
        + 432.0 * c.L_H**2 * (c.sigma**4 + 4.0 * c.varsigma**2) / rho**4 * s5
        + terms["dispersion_network"]
    )
    report = check_step_conditions(schedule, c, rho, theorem=2)
    warnings = () if report.passed else ("step conditions not satisfied",)
    return BoundReport(
        theorem=2,
        total=sum(terms.values()),
        terms=terms,
        conditions=report,
        warnings=warnings,
        statement_literal=literal,
    )


@dataclass(frozen=True)
class CorollaryRate:
    theorem: int
    T: int
    total: float
    terms: dict


def corollary_rate(
    constants: SmoothnessConstants, rho: float, n: int, T: int, theorem: int
) -> CorollaryRate:
    """Averaged rate under the 1/sqrt(T) schedule: bound divided by the step sum."""
    schedule = StepSchedule.inv_sqrt(T)
    report = thm1_rhs(constants, rho, n, schedule, T) if theorem == 1 else thm2_rhs(
        constants, rho, n, schedule, T
    )
    step_sum = float(np.sum(schedule.values(T)))
    terms = {k: v / step_sum for k, v in report.terms.items()}
    return CorollaryRate(theorem=theorem, T=T, total=report.total / step_sum, terms=terms)


@dataclass(frozen=True)
class TransientPrediction:
    """Predicted iterations-to-merge scalings for the two bounds."""

    thm1_full: float
    thm2_full: float
    thm1_simplified: float
    thm2_simplified: float


def transient_predict(constants: SmoothnessConstants, rho: float, n: int) -> TransientPrediction:
    c = constants
    denom = c.D + c.L * c.sigma**2 / n

    def _guard(num: float, den: float) -> float:
        if den == 0.0:
            return 0.0 if num == 0.0 else np.inf
        return num / den

    thm1_full = _guard(c.L**4 * (c.varsigma**4 + c.sigma**4), rho**4 * denom**2)
    thm2_full = _guard(
        c.L_H ** (4.0 / 3.0) * (c.sigma ** (8.0 / 3.0) + c.varsigma ** (8.0 / 3.0)) * n ** (2.0 / 3.0),
        rho ** (8.0 / 3.0) * denom ** (2.0 / 3.0),
    )
    return TransientPrediction(
        thm1_full=thm1_full,
        thm2_full=thm2_full,
        thm1_simplified=n**2 / rho**4,
        thm2_simplified=n ** (4.0 / 3.0) / rho ** (8.0 / 3.0),
    )


# ---------------------------------------------------------------------------
# per-realization contraction


@dataclass(frozen=True)
class ContractionReport:
    order: int
    steps: int
    violations: int
    worst_rel_excess: float
    passed: bool


def verify_contraction_step(
    trajectory, mixing: MixingMatrix, order: int
) -> ContractionReport:
    """Check the deterministic one-step disagreement contraction on a debug run.

    Order 2: next squared disagreement <= (1 - rho) * current
    + (step^2 / rho) * squared disagreement of the drawn gradients.
    Order 4 uses squared quantities and a rho^3 denominator.
    """
    if trajectory.debug_states is None or trajectory.debug_grads is None:
        raise MissingDebugData("run was recorded without debug states")
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    rho = spectral_gap(mixing).rho
    states = trajectory.debug_states
    grads = trajectory.debug_grads
    gam = trajectory.debug_gammas
    dev = states - states.mean(axis=1, keepdims=True)
    q2 = np.einsum("tij,tij->t", dev, dev)
    gdev = grads - grads.mean(axis=1, keepdims=True)
    g2 = np.einsum("tij,tij->t", gdev, gdev)
    if order == 2:
        lhs = q2[1:]
        rhs = (1.0 - rho) * q2[:-1] + (gam**2 / rho) * g2
    else:
        lhs = q2[1:] ** 2
        rhs = (1.0 - rho) * q2[:-1] ** 2 + (gam**4 / rho**3) * g2**2
    ok = lhs <= rhs * (1.0 + EXACT_REL_SLACK) + 1e-30
    excess = (lhs - rhs) / np.maximum(rhs, 1e-300)
    return ContractionReport(
        order=order,
        steps=int(lhs.size),
        violations=int(np.sum(~ok)),
        worst_rel_excess=float(np.max(excess)),
        passed=bool(ok.all()),
    )


# ---------------------------------------------------------------------------
# ensemble disagreement moments


@dataclass(frozen=True)
class ConsensusBoundReport:
    order: int
    t: np.ndarray
    lhs_mean: np.ndarray
    lhs_stderr: np.ndarray
    rhs: np.ndarray
    violations: int
    min_margin: float
    warnings: tuple
    passed: bool


def verify_consensus_bounds(
    summary: EnsembleSummary,
    constants: SmoothnessConstants,
    rho: float,
    n: int,
    schedule: StepSchedule,
    order: int,
) -> ConsensusBoundReport:
    """Check the steady disagreement-moment bound at every recorded time.

    At each recorded t >= 1 the ensemble mean of the squared (order 2) or
    quartic (order 4) disagreement, plus two standard errors, must not exceed
    the bound evaluated at the step size that produced that state.  Hypothesis
    mismatches (nonzero initial disagreement, step cap exceeded) are reported
    as warnings rather than failures.
    """
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    c = constants
    warnings = []
    at_zero = summary.t == 0
    if at_zero.any() and np.max(summary.mean["consensus_sq"][at_zero]) > 1e-12:
        warnings.append("initial disagreement is not zero; the bound assumes equal starts")
    cap = rho / (4.0 * c.L) if order == 2 else rho / (9.0 * c.L)
    if c.L > 0 and schedule.sup() > cap:
        warnings.append("sup step size exceeds the bound's cap")
    b = ratio_constant(schedule, power=order)
    if b > 0.0:
        ratio_cap = ((rho / (4.0 * b)) / (1.0 - rho / 2.0)) ** (1.0 / order)
        if schedule.sup() > ratio_cap:
            warnings.append("schedule violates the ratio-condition cap")

    keep = summary.t >= 1
    times = summary.t[keep]
    gam = np.array([schedule.gamma(int(u) - 1) for u in times])
    if order == 2:
        lhs = summary.mean["consensus_sq"][keep]
        stderr = summary.ci["consensus_sq"][keep] / CI_FACTOR
        rhs = (8.0 * n / rho**2) * gam**2 * (c.varsigma**2 + c.sigma**2)
    else:
        lhs = summary.mean["consensus_quart"][keep]
        stderr = summary.ci["consensus_quart"][keep] / CI_FACTOR
        rhs = 216.0 * (c.sigma**4 + 4.0 * c.varsigma**4) * n**2 * gam**4 / rho**4
    slacked = lhs + MC_SIGMA_SLACK * stderr
    ok = slacked <= rhs
    return ConsensusBoundReport(
        order=order,
        t=times,
        lhs_mean=lhs,
        lhs_stderr=stderr,
        rhs=rhs,
        violations=int(np.sum(~ok)),
        min_margin=float(np.min(rhs - slacked)),
        warnings=tuple(warnings),
        passed=bool(ok.all()),
    )


def write_consensus_csv(path, report: ConsensusBoundReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,lhs_mean,lhs_stderr,rhs,margin\n")
        for k in range(report.t.size):
            margin = report.rhs[k] - (report.lhs_mean[k] + MC_SIGMA_SLACK * report.lhs_stderr[k])
            fh.write(
                f"{int(report.t[k])},{report.lhs_mean[k]:.17g},{report.lhs_stderr[k]:.17g},"
                f"{report.rhs[k]:.17g},{margin:.17g}\n"
            )


# ---------------------------------------------------------------------------
# one-step expected descent


@dataclass(frozen=True)
class DescentVerdict:
    lemma: int
    gamma: float
    estimate: float
    stderr: float
    rhs: float
    margin: float
    passed: bool


def verify_descent(
    state,
    suite,
    schedule: StepSchedule,
    constants: SmoothnessConstants,
    resamples: int = 4096,
    lemma: int = 1,
    seed: int = 0,
) -> DescentVerdict:
    """Monte-Carlo check of the conditional one-step descent inequality.

    Freezes the supplied state, redraws the next stochastic-gradient batch
    ``resamples`` times, and compares the sample mean of the next average
    objective value (minus two standard errors) against the inequality's
    right-hand side.  Raises :class:`Inapplicable` when the step exceeds the
    basic-descent cap ``1/(4L)``.
    """
    if lemma not in (1, 3):
        raise ValueError(f"lemma must be 1 or 3, got {lemma}")
    c = constants
    gamma = schedule.gamma(state.t)
    if c.L > 0 and gamma > 1.0 / (4.0 * c.L):
        raise Inapplicable(f"step {gamma:.3g} exceeds the 1/(4L) descent cap")
    iterates = np.asarray(state.iterates, dtype=float)
    n = iterates.shape[0]
    theta_bar = iterates.mean(axis=0)
    f_here = suite.global_value(theta_bar)
    grad = suite.global_grad(theta_bar)
    grad_sq = float(grad @ grad)
    dev = iterates - theta_bar
    q2 = float(np.sum(dev * dev))

    streams = [rngmod.substream(seed, rngmod.RESAMPLE, run=0, index=i) for i in range(n)]
    block = suite.sample_gradient_block(iterates, streams, resamples)
    next_thetas = theta_bar - gamma * block.mean(axis=1)
    values = suite.global_value_batch(next_thetas)
    estimate = float(values.mean())
    stderr = float(values.std(ddof=1) / np.sqrt(resamples))

    common = f_here - (gamma / 4.0) * grad_sq + gamma**2 * c.L * c.sigma**2 / (2.0 * n)
    if lemma == 1:
        rhs = common + gamma * (c.L**2 / n) * q2
    else:
        rhs = common + (gamma / (2.0 * n)) * (c.L_H**2 * q2 + 2.0 * c.varsigma_H**2) * q2
    lower = estimate - MC_SIGMA_SLACK * stderr
    return DescentVerdict(
        lemma=lemma,
        gamma=gamma,
        estimate=estimate,
        stderr=stderr,
        rhs=rhs,
        margin=rhs - lower,
        passed=bool(lower <= rhs),
    )


# ---------------------------------------------------------------------------
# geometric-sum auxiliary inequality


@dataclass(frozen=True)
class AuxLemmaReport:
    order: int
    b: float
    cap: float
    sup_gamma: float
    applicable: bool
    worst_ratio: float | None
    passed: bool | None


def verify_aux_lemma(schedule: StepSchedule, rho: float, order: int) -> AuxLemmaReport:
    """Check the decayed power-sum inequality over the whole horizon.

    For p = 2 or 4, verifies that the geometric-decay-weighted running sum of
    ``gamma^p`` never exceeds ``(4/rho) * gamma^p`` at any time, provided the
    schedule meets its ratio-constant cap; reports inapplicability otherwise.
    """
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    p = order
    g = schedule.values()
    b = ratio_constant(schedule, power=p)
    cap = np.inf if b == 0.0 else float(((rho / 4.0) / (b * (1.0 - rho / 2.0))) ** (1.0 / p))
    sup = float(np.max(g))
    if sup > cap:
        return AuxLemmaReport(
            order=order, b=b, cap=cap, sup_gamma=sup, applicable=False, worst_ratio=None, passed=None
        )
    gp = g**p
    running = lfilter([1.0], [1.0, -(1.0 - rho / 2.0)], gp)
    ratios = running * rho / (4.0 * gp)
    worst = float(np.max(ratios))
    return AuxLemmaReport(
        order=order,
        b=b,
        cap=cap,
        sup_gamma=sup,
        applicable=True,
        worst_ratio=worst,
        passed=bool(worst <= 1.0 + 1e-12),
    )


# ---------------------------------------------------------------------------
# Hessian linearization error


@dataclass(frozen=True)
class LinearizationReport:
    pairs: int
    bound_constant: float
    worst_excess: float
    passed: bool


def verify_linearization(
    suite, pairs: int = 200, seed: int = 0, radius: float = 3.0, center=None
) -> LinearizationReport:
    """Check the second-order Taylor remainder bound on random parameter pairs.

    For every sampled pair and every agent, the gradient-prediction residual
    must not exceed half the Hessian-drift constant times the squared
    displacement.
    """
    d = suite.d
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    if suite.family == "classification":
        max_norm = float(np.max(np.linalg.norm(suite._pooled_x, axis=1)))
        L_H = SIGMOID_D3_SUP * max_norm**3
    else:
        L_H = 0.0
    stream = rngmod.substream(seed, rngmod.PROBE, run=1)
    points = _sample_ball(stream, center, radius, 2 * pairs)
    worst = -np.inf
    for k in range(pairs):
        theta, theta_next = points[2 * k], points[2 * k + 1]
        step = theta_next - theta
        bound = 0.5 * L_H * float(step @ step)
        for i in range(suite.n):
            predicted = suite.agent_grad(i, theta) + suite.agent_hess(i, theta) @ step
            residual = float(np.linalg.norm(suite.agent_grad(i, theta_next) - predicted))
            worst = max(worst, residual - bound * (1.0 + EXACT_REL_SLACK))
    return LinearizationReport(
        pairs=pairs,
        bound_constant=L_H,
        worst_excess=float(worst),
        passed=bool(worst <= 1e-12),
    )


# ---------------------------------------------------------------------------
# rendering


def render_bound_report(report: BoundReport) -> str:
    lines = [f"bound[{report.theorem}] total = {report.total:.17g}"]
    for key, value in report.terms.items():
        lines.append(f"  term {key} = {value:.17g}")
    if report.statement_literal is not None:
        lines.append(f"  statement_literal = {report.statement_literal:.17g}")
    if report.lhs_mean is not None:
        lines.append(
            f"  lhs mean = {report.lhs_mean:.17g} (stderr {report.lhs_stderr:.17g})"
        )
        lines.append(f"  passed = {report.passed} margin = {report.margin:.17g}")
    for cond in report.conditions.conditions:
        lines.append(
            f"  condition {cond.name}: value {cond.value:.6g} vs limit {cond.limit:.6g} -> "
            f"{'ok' if cond.passed else 'VIOLATED'}"
        )
    for w in report.warnings:
        lines.append(f"  warning: {w}")
    return "\n".join(lines)
