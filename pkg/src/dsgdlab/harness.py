"""Config-driven orchestration: build, simulate, summarize, verify, report.

Builds mixing matrices and objective suites from an :class:`ExperimentConfig`,
runs seeded ensembles (optionally in parallel; the stream-per-(run, agent)
seeding makes results independent of scheduling), writes the CSV/SVG/manifest
output bundle, and drives the full numerical verification suite.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import ortho_group

from . import bounds as boundsmod
from . import rng as rngmod
from .algorithms import InitSpec, RunConfig, StepSchedule, WorldState, run_csgd, run_dsgd
from .config import ExperimentConfig, config_as_mapping, load_config  # noqa: F401 (re-export)
from .errors import ConfigInvalid, DsgdLabError, NotDoublyStochastic
from .metrics import (
    ensemble_summary,
    transient_time,
    weighted_grad_sum,
    write_summary_csv,
    write_trajectories_csv,
)
from .objectives import (
    SIGMOID_D2_SUP,
    QuadraticSpec,
    estimate_constants,
    gen_hetero_classification,
    gen_homo_from,
    make_classification_suite,
    make_quadratic_suite,
)
from .plotting import emit_plot
from .topology import (
    build_complete,
    build_metropolis_hastings,
    build_ring,
    build_torus_2d,
    read_edge_list,
    spectral_gap,
    write_matrix_csv,
)

#: Caps on the ensemble size used by the per-step verification audits, so that
#: ``verify`` stays fast and debug-state retention stays small even on
#: full-size experiment configs.
VERIFY_MAX_T = 1000
VERIFY_MAX_RUNS = 20


def default_workers() -> int:
    """Worker-process count: CSL_THREADS when set, else the CPU count (capped)."""
    env = os.environ.get("CSL_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return min(os.cpu_count() or 1, 8)


# ---------------------------------------------------------------------------
# config -> objects


def build_mixing(config: ExperimentConfig):
    kind = config.topology_kind
    if kind == "ring":
        return build_ring(config.topology_n, config.topology_self_weight)
    if kind == "torus":
        return build_torus_2d(config.topology_rows, config.topology_cols, config.topology_self_weight)
    if kind == "complete":
        return build_complete(config.topology_n)
    return build_metropolis_hastings(read_edge_list(config.topology_path))


def build_suite(config: ExperimentConfig, n: int, mode: str):
    """Objective suite for one data mode over ``n`` agents."""
    if config.objective_family == "sigmoid":
        dataset = gen_hetero_classification(
            n=n,
            d=config.objective_d,
            per_agent=config.objective_per_agent,
            seed=config.objective_seed,
        )
        if mode == "homogeneous":
            dataset = gen_homo_from(dataset)
        return make_classification_suite(dataset)
    d = config.objective_d
    stream = rngmod.substream(config.objective_seed, rngmod.DATA)
    if d == 1:
        basis = np.ones((1, 1))
    else:
        basis = ortho_group.rvs(dim=d, random_state=stream)
    eigs = np.linspace(1.0, config.objective_condition, d)
    A = basis @ np.diag(eigs) @ basis.T
    A = 0.5 * (A + A.T)
    b = config.objective_b_scale * stream.normal(size=d)
    spec = QuadraticSpec(matrix=A, linear=b, noise_std=config.objective_noise_std)
    return make_quadratic_suite(spec, n)


def analytic_curvature(suite) -> float:
    """Gradient-Lipschitz constant from the family's closed form."""
    if suite.family == "classification":
        max_norm = float(np.max(np.linalg.norm(suite._pooled_x, axis=1)))
        return SIGMOID_D2_SUP * max_norm**2 + suite.beta
    return float(np.max(np.linalg.eigvalsh(suite.spec.matrix)))


def resolve_schedule(config: ExperimentConfig, suite) -> StepSchedule:
    """Schedule from the config; "auto" plugs the ridge weight and analytic L
    into the decaying form a0 = 1/beta, a1 = 8 L^2 / beta^2."""
    horizon = config.horizon
    if config.schedule_kind == "constant":
        return StepSchedule.constant(config.schedule_value, horizon)
    if config.schedule_kind == "inv_sqrt_horizon":
        return StepSchedule.inv_sqrt(horizon)
    a0, a1 = config.schedule_a0, config.schedule_a1
    if a0 == "auto":
        beta = suite.beta
        L = analytic_curvature(suite)
        a0 = 1.0 / beta
        a1 = 8.0 * L**2 / beta**2
    return StepSchedule.sqrt_decay(a0, a1, horizon)


def build_init(config: ExperimentConfig, d: int) -> InitSpec:
    if config.init_kind == "equal":
        return InitSpec.equal(np.full(d, config.init_value))
    return InitSpec.gaussian(config.init_mean, config.init_std)


@dataclass(frozen=True)
class LabelPlan:
    """One algorithm label resolved to a runner, data mode, and sampling mode."""

    label: str
    algorithm: str  # "dsgd" | "csgd"
    mode: str
    pooled: bool


def resolve_labels(config: ExperimentConfig) -> list:
    plans = []
    pooled = config.run_csgd_sampling == "pooled"
    for label in config.run_algorithms:
        if label == "dsgd":
            plans.append(LabelPlan(label, "dsgd", config.objective_mode, False))
        elif label == "hete_dsgd":
            plans.append(LabelPlan(label, "dsgd", "heterogeneous", False))
        elif label == "homo_dsgd":
            plans.append(LabelPlan(label, "dsgd", "homogeneous", False))
        else:
            plans.append(LabelPlan(label, "csgd", config.objective_mode, pooled))
    if config.objective_family == "quadratic":
        for plan in plans:
            if plan.label in ("hete_dsgd", "homo_dsgd"):
                raise ConfigInvalid(
                    "run.algorithms", f"{plan.label} requires the sigmoid family"
                )
    return plans


# ---------------------------------------------------------------------------
# ensembles


def _simulate_one(task):
    algorithm, run_config = task
    runner = run_dsgd if algorithm == "dsgd" else run_csgd
    return run_config.run_index, runner(run_config)


def run_ensemble(algorithm: str, base: RunConfig, runs: int, workers: int | None = None) -> list:
    """Execute ``runs`` independent runs, merged by run index.

    Results are identical whether runs execute serially or across a process
    pool, because every run derives its streams from its own index.
    """
    workers = default_workers() if workers is None else workers
    tasks = [(algorithm, replace(base, run_index=r)) for r in range(runs)]
    if workers <= 1 or runs == 1:
        results = [_simulate_one(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, runs)) as pool:
            results = list(pool.map(_simulate_one, tasks))
    results.sort(key=lambda pair: pair[0])
    return [traj for _, traj in results]


def final_quarter_mean(summary, metric: str = "grad_norm_sq") -> float:
    """Mean of the ensemble-mean metric over the last quarter of recorded times."""
    cutoff = summary.t[-1] * 3 / 4
    keep = summary.t >= cutoff
    return float(np.mean(summary.mean[metric][keep]))


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    master_seed: int
    runs: int
    mixing: object
    spectral: object
    schedule: StepSchedule
    suites: dict
    constants: dict
    trajectories: dict
    summaries: dict
    transients: dict


def run_experiment(
    config: ExperimentConfig,
    out_dir=None,
    master_seed: int | None = None,
    runs: int | None = None,
    workers: int | None = None,
    quiet: bool = False,
    debug: bool = False,
) -> ExperimentResult:
    """Run every configured algorithm ensemble and (optionally) write the bundle.

    The bundle contains per-label trajectory CSVs, ensemble summary CSVs (when
    at least two runs), the transient table, the mixing matrix, a convergence
    SVG, and a manifest with the config text, its hash, the effective seed,
    and the estimated constants — everything needed to re-run the experiment.
    """
    seed = config.run_master_seed if master_seed is None else master_seed
    R = config.run_runs if runs is None else runs
    mixing = build_mixing(config)
    spectral = spectral_gap(mixing)
    plans = resolve_labels(config)
    suites = {mode: build_suite(config, mixing.n, mode) for mode in {p.mode for p in plans}}
    any_suite = next(iter(suites.values()))
    schedule = resolve_schedule(config, any_suite)
    init = build_init(config, any_suite.d)

    trajectories = {}
    for plan in plans:
        base = RunConfig(
            mixing=mixing,
            suite=suites[plan.mode],
            schedule=schedule,
            T=config.run_T,
            init=init,
            master_seed=seed,
            csgd_pooled=plan.pooled,
            record_stride=config.run_record_stride,
            debug=debug,
        )
        start = time.perf_counter()
        trajectories[plan.label] = run_ensemble(plan.algorithm, base, R, workers)
        if not quiet:
            print(
                f"[dsgdlab] {plan.label}: {R} run(s) x {config.run_T} iterations "
                f"({time.perf_counter() - start:.1f} s)"
            )

    summaries = {}
    if R >= 2:
        summaries = {label: ensemble_summary(trajs) for label, trajs in trajectories.items()}
    transients = {}
    if "csgd" in summaries:
        for label, summary in summaries.items():
            if label == "csgd":
                continue
            transients[label] = transient_time(
                summary,
                summaries["csgd"],
                delta=config.transient_delta,
                window=config.transient_window,
            )

    constants = {
        mode: estimate_constants(
            suite,
            probe_count=config.estimate_probe_count,
            draw_count=config.estimate_draw_count,
            radius=config.estimate_radius,
            seed=seed,
            center=init.mean_vector(any_suite.d),
        )
        for mode, suite in suites.items()
    }

    result = ExperimentResult(
        config=config,
        master_seed=seed,
        runs=R,
        mixing=mixing,
        spectral=spectral,
        schedule=schedule,
        suites=suites,
        constants=constants,
        trajectories=trajectories,
        summaries=summaries,
        transients=transients,
    )
    if out_dir is not None:
        write_bundle(result, out_dir, quiet=quiet)
    return result


def write_bundle(result: ExperimentResult, out_dir, quiet: bool = False) -> None:
    os.makedirs(out_dir, exist_ok=True)
    join = lambda name: os.path.join(out_dir, name)  # noqa: E731
    for label, trajs in result.trajectories.items():
        write_trajectories_csv(join(f"trajectories_{label}.csv"), trajs)
    for label, summary in result.summaries.items():
        write_summary_csv(join(f"summary_{label}.csv"), summary)
    write_matrix_csv(join("mixing.csv"), result.mixing)
    with open(join("transients.csv"), "w", encoding="utf-8") as fh:
        fh.write("label,t_star,delta,window\n")
        for label, est in result.transients.items():
            t_star = "" if est.t_star is None else str(est.t_star)
            fh.write(f"{label},{t_star},{est.delta:.17g},{est.window}\n")
    if result.summaries:
        emit_plot(result.summaries, join("convergence.svg"))
    manifest = {
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "master_seed": result.master_seed,
        "runs": result.runs,
        "config_sha256": result.config.sha256,
        "config": config_as_mapping(result.config),
        "config_text": result.config.source_text,
        "spectral": {
            "rho": result.spectral.rho,
            "second_modulus": result.spectral.second_modulus,
            "row_sum_residual": result.spectral.row_sum_residual,
            "col_sum_residual": result.spectral.col_sum_residual,
            "asymmetry": result.spectral.asymmetry,
            "negativity": result.spectral.negativity,
        },
        "schedule": {
            "kind": result.schedule.kind,
            "value": result.schedule.value,
            "a0": result.schedule.a0,
            "a1": result.schedule.a1,
            "horizon": result.schedule.horizon,
            "sup_step": result.schedule.sup(),
        },
        "constants": {
            mode: {
                **c.as_dict(),
                "sigma_sampled": c.sigma_sampled,
                "sigma_cap": c.sigma_cap,
                "varsigma_sampled": c.varsigma_sampled,
                "varsigma_cap": c.varsigma_cap,
                "varsigma_H_sampled": c.varsigma_H_sampled,
                "varsigma_H_cap": c.varsigma_H_cap,
            }
            for mode, c in result.constants.items()
        },
        "labels": list(result.trajectories),
        "transients": {
            label: est.t_star for label, est in result.transients.items()
        },
    }
    with open(join("manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not quiet:
        print(f"[dsgdlab] bundle written to {out_dir}")


def compare_experiment(
    config: ExperimentConfig,
    out_dir=None,
    master_seed: int | None = None,
    runs: int | None = None,
    workers: int | None = None,
    quiet: bool = False,
) -> tuple:
    """Force the three-way comparison and return (result, text table).

    Runs the heterogeneous-data and homogeneous-data decentralized ensembles
    against the centralized benchmark regardless of the configured algorithm
    list, then tabulates transient estimates and late-horizon levels.
    """
    if config.objective_family != "sigmoid":
        raise ConfigInvalid("objective.family", "compare requires the sigmoid family")
    forced = replace(config, run_algorithms=("hete_dsgd", "homo_dsgd", "csgd"))
    result = run_experiment(
        forced, out_dir=out_dir, master_seed=master_seed, runs=runs, workers=workers, quiet=quiet
    )
    csgd_level = final_quarter_mean(result.summaries["csgd"]) if result.summaries else float("nan")
    lines = [f"{'label':<12} {'transient_t':>11} {'final_quarter':>14} {'vs_csgd':>8}"]
    for label in ("hete_dsgd", "homo_dsgd", "csgd"):
        if label not in result.summaries:
            continue
        level = final_quarter_mean(result.summaries[label])
        if label == "csgd":
            t_star = "-"
        else:
            est = result.transients[label].t_star
            t_star = "none" if est is None else str(est)
        ratio = level / csgd_level if csgd_level > 0 else float("nan")
        lines.append(f"{label:<12} {t_star:>11} {level:>14.6g} {ratio:>8.3f}")
    return result, "\n".join(lines)


# ---------------------------------------------------------------------------
# verification suite


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    warnings: tuple = ()


@dataclass
class VerificationResult:
    checks: list

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def render(self) -> str:
        lines = []
        for check in self.checks:
            flag = "PASS" if check.passed else "FAIL"
            lines.append(f"[{flag}] {check.name}: {check.detail}")
            for w in check.warnings:
                lines.append(f"       warning: {w}")
        lines.append(f"verification {'passed' if self.passed else 'FAILED'} "
                     f"({sum(c.passed for c in self.checks)}/{len(self.checks)} checks)")
        return "\n".join(lines)


def _equivalence_check() -> CheckResult:
    """Self-contained coupled-noise equality of the two recursions.

    With a shared additive-noise quadratic objective and equal starts, the
    average decentralized iterate and the centralized iterate follow the same
    linear recursion, so they must agree to rounding at every step.
    """
    d, n, T = 5, 8, 300
    stream = rngmod.substream(0, rngmod.DATA)
    basis = ortho_group.rvs(dim=d, random_state=stream)
    A = basis @ np.diag(np.linspace(1.0, 2.0, d)) @ basis.T
    spec = QuadraticSpec(matrix=0.5 * (A + A.T), linear=stream.normal(size=d), noise_std=0.1)
    suite = make_quadratic_suite(spec, n)
    mixing = build_ring(n, 0.9)
    base = RunConfig(
        mixing=mixing,
        suite=suite,
        schedule=StepSchedule.constant(0.05, T),
        T=T,
        init=InitSpec.equal(np.zeros(d)),
        master_seed=2024,
        shared_noise=True,
        debug=True,
    )
    dsgd = run_dsgd(base)
    csgd = run_csgd(base)
    avg = dsgd.debug_states.mean(axis=1)
    path = csgd.debug_states[:, 0, :]
    scale = np.maximum(np.linalg.norm(path, axis=1), 1.0)
    rel = float(np.max(np.linalg.norm(avg - path, axis=1) / scale))
    return CheckResult(
        name="quadratic_equivalence",
        passed=rel <= 1e-9,
        detail=f"max relative deviation {rel:.3g} over {T} steps (cap 1e-09)",
    )


def verify_config(
    config: ExperimentConfig, quiet: bool = False, workers: int | None = None
) -> VerificationResult:
    """Run the full numerical verification suite for one config.

    Checks, in order: mixing validity and spectral gap; per-step disagreement
    contraction (orders 2 and 4, every step of every audited run); ensemble
    disagreement-moment bounds (orders 2 and 4); one-step expected descent
    (both descent inequalities) at a mid-run state; the decayed power-sum
    inequality on the configured schedule; the Hessian linearization bound;
    and the coupled-noise equality of the two recursions on a quadratic
    objective.  Per-step audits run on an equal-start, constant-step ensemble
    (capped at {T}x{R}) so the inequalities' hypotheses hold exactly.
    """.format(T=VERIFY_MAX_T, R=VERIFY_MAX_RUNS)
    checks = []
    try:
        mixing = build_mixing(config)
        spectral = spectral_gap(mixing)
    except (NotDoublyStochastic, DsgdLabError) as exc:
        checks.append(CheckResult("mixing_spectral", False, f"{type(exc).__name__}: {exc}"))
        return VerificationResult(checks)
    rho = spectral.rho
    checks.append(
        CheckResult(
            "mixing_spectral",
            0.0 < rho <= 1.0,
            f"rho = {rho:.6g}, residuals <= {max(spectral.row_sum_residual, spectral.col_sum_residual, spectral.asymmetry, spectral.negativity):.3g}",
        )
    )

    n = mixing.n
    suite = build_suite(config, n, config.objective_mode)
    d = suite.d
    seed = config.run_master_seed
    center = np.zeros(d)
    constants = estimate_constants(
        suite,
        probe_count=config.estimate_probe_count,
        draw_count=config.estimate_draw_count,
        radius=config.estimate_radius,
        seed=seed,
        center=center,
    )
    L = constants.L

    # equal-start constant-step ensemble for the per-step and moment audits
    T_audit = min(config.run_T, VERIFY_MAX_T)
    R_audit = max(2, min(config.run_runs, VERIFY_MAX_RUNS))
    gamma_audit = rho / (9.0 * L) if L > 0 else 0.01
    audit_schedule = StepSchedule.constant(gamma_audit, T_audit)
    base = RunConfig(
        mixing=mixing,
        suite=suite,
        schedule=audit_schedule,
        T=T_audit,
        init=InitSpec.equal(np.zeros(d)),
        master_seed=seed,
        debug=True,
    )
    audit_runs = run_ensemble("dsgd", base, R_audit, workers)

    for order in (2, 4):
        worst = 0.0
        violations = 0
        steps = 0
        for traj in audit_runs:
            report = boundsmod.verify_contraction_step(traj, mixing, order)
            violations += report.violations
            steps += report.steps
            worst = max(worst, report.worst_rel_excess)
        checks.append(
            CheckResult(
                f"contraction_order{order}",
                violations == 0,
                f"{violations}/{steps} violations, worst relative excess {worst:.3g}",
            )
        )

    summary = ensemble_summary(audit_runs)
    for order in (2, 4):
        report = boundsmod.verify_consensus_bounds(
            summary, constants, rho, n, audit_schedule, order
        )
        checks.append(
            CheckResult(
                f"consensus_bound_order{order}",
                report.passed,
                f"{report.violations}/{report.t.size} times violated, min margin {report.min_margin:.3g}",
                warnings=report.warnings,
            )
        )

    mid = T_audit // 2
    state = WorldState(iterates=audit_runs[0].debug_states[mid], t=mid)
    for lemma in (1, 3):
        verdict = boundsmod.verify_descent(
            state, suite, audit_schedule, constants, resamples=4096, lemma=lemma, seed=seed
        )
        checks.append(
            CheckResult(
                f"descent_lemma{lemma}",
                verdict.passed,
                f"estimate {verdict.estimate:.9g} (stderr {verdict.stderr:.2g}) vs rhs {verdict.rhs:.9g}",
            )
        )

    config_schedule = resolve_schedule(config, suite)
    for order in (2, 4):
        report = boundsmod.verify_aux_lemma(config_schedule, rho, order)
        if not report.applicable:
            checks.append(
                CheckResult(
                    f"aux_lemma_order{order}",
                    True,
                    f"not applicable: sup step {report.sup_gamma:.3g} exceeds cap {report.cap:.3g}",
                    warnings=("schedule outside the inequality's hypotheses; nothing to check",),
                )
            )
        else:
            checks.append(
                CheckResult(
                    f"aux_lemma_order{order}",
                    bool(report.passed),
                    f"worst ratio {report.worst_ratio:.6g} (must be <= 1)",
                )
            )

    lin = boundsmod.verify_linearization(
        suite, pairs=200, seed=seed, radius=config.estimate_radius, center=center
    )
    checks.append(
        CheckResult(
            "linearization",
            lin.passed,
            f"worst excess {lin.worst_excess:.3g} over {lin.pairs} pairs "
            f"(constant {lin.bound_constant:.6g})",
        )
    )

    checks.append(_equivalence_check())

    result = VerificationResult(checks)
    if not quiet:
        print(result.render())
    return result


# ---------------------------------------------------------------------------
# bound audit


def bounds_audit(
    config: ExperimentConfig,
    master_seed: int | None = None,
    runs: int | None = None,
    workers: int | None = None,
    quiet: bool = False,
) -> tuple:
    """Evaluate both ergodic bounds against a fresh decentralized ensemble.

    Returns ``(thm1_report, thm2_report, prediction)`` where the reports carry
    the ensemble mean of the step-weighted squared-gradient sum as their LHS.
    Predictions are order-level only (unit hidden constants); reports compare
    their ratios, never absolute iteration counts.
    """
    seed = config.run_master_seed if master_seed is None else master_seed
    R = max(2, config.run_runs if runs is None else runs)
    mixing = build_mixing(config)
    rho = spectral_gap(mixing).rho
    suite = build_suite(config, mixing.n, config.objective_mode)
    schedule = resolve_schedule(config, suite)
    init = build_init(config, suite.d)
    constants = estimate_constants(
        suite,
        probe_count=config.estimate_probe_count,
        draw_count=config.estimate_draw_count,
        radius=config.estimate_radius,
        seed=seed,
        center=init.mean_vector(suite.d),
    )
    base = RunConfig(
        mixing=mixing,
        suite=suite,
        schedule=schedule,
        T=config.run_T,
        init=init,
        master_seed=seed,
        record_stride=1,
    )
    trajs = run_ensemble("dsgd", base, R, workers)
    sums = np.array([weighted_grad_sum(traj) for traj in trajs])
    lhs_mean = float(sums.mean())
    lhs_stderr = float(sums.std(ddof=1) / np.sqrt(R))

    thm1 = boundsmod.thm1_rhs(constants, rho, mixing.n, schedule, config.run_T).with_lhs(
        lhs_mean, lhs_stderr
    )
    thm2 = boundsmod.thm2_rhs(constants, rho, mixing.n, schedule, config.run_T).with_lhs(
        lhs_mean, lhs_stderr
    )
    prediction = boundsmod.transient_predict(constants, rho, mixing.n)
    if not quiet:
        print(boundsmod.render_bound_report(thm1))
        print(boundsmod.render_bound_report(thm2))
        ratio = (
            prediction.thm2_simplified / prediction.thm1_simplified
            if prediction.thm1_simplified > 0
            else float("nan")
        )
        print("transient predictions (order-level, unit constants):")
        print(f"  order2_full = {prediction.thm1_full:.6g}  simplified = {prediction.thm1_simplified:.6g}")
        print(f"  order4_full = {prediction.thm2_full:.6g}  simplified = {prediction.thm2_simplified:.6g}")
        print(f"  simplified ratio (order4/order2) = {ratio:.6g}")
    return thm1, thm2, prediction
