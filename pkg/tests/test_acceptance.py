"""End-to-end acceptance checks.

Each test covers one promised behavior of the laboratory and prints a single
pass line when it holds; a failing criterion shows up as an ordinary pytest
failure for that test.  The heavyweight fixtures (the 12-agent ensemble and
the three-way comparison) are module-scoped so each is paid for once.
"""

import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import ortho_group

from dsgdlab import cli
from dsgdlab.algorithms import (
    InitSpec,
    RunConfig,
    StepSchedule,
    check_step_conditions,
    run_csgd,
    run_dsgd,
)
from dsgdlab.bounds import (
    thm1_rhs,
    thm2_rhs,
    transient_predict,
    verify_aux_lemma,
    verify_consensus_bounds,
    verify_contraction_step,
    verify_linearization,
)
from dsgdlab.config import load_config
from dsgdlab.harness import analytic_curvature, compare_experiment, final_quarter_mean, run_ensemble
from dsgdlab.metrics import ensemble_summary, weighted_grad_sum
from dsgdlab.objectives import (
    QuadraticSpec,
    estimate_constants,
    gen_hetero_classification,
    gen_homo_from,
    make_classification_suite,
    make_quadratic_suite,
)
from dsgdlab.topology import build_complete, build_ring, spectral_gap


def passline(num: int, detail: str) -> None:
    print(f"[PASS] criterion {num}: {detail}")


def rotated_quadratic(d: int, noise_std: float, seed: int) -> QuadraticSpec:
    rng = np.random.default_rng(seed)
    basis = ortho_group.rvs(dim=d, random_state=rng)
    A = basis @ np.diag(np.linspace(1.0, 2.0, d)) @ basis.T
    return QuadraticSpec(matrix=0.5 * (A + A.T), linear=rng.normal(size=d), noise_std=noise_std)


# ---------------------------------------------------------------------------
# shared heavy fixtures


@pytest.fixture(scope="module")
def fig1_dataset():
    return gen_hetero_classification(n=12, d=5, per_agent=200, seed=0)


@pytest.fixture(scope="module")
def fig1_suite(fig1_dataset):
    return make_classification_suite(fig1_dataset)


@pytest.fixture(scope="module")
def ring12():
    return build_ring(12, 0.9)


@pytest.fixture(scope="module")
def audit_ensemble(fig1_suite, ring12):
    """Equal-start constant-step ensemble whose runs keep full debug state."""
    rho = spectral_gap(ring12).rho
    constants = estimate_constants(fig1_suite, seed=0, center=np.zeros(5))
    gamma = rho / (9.0 * constants.L)
    schedule = StepSchedule.constant(gamma, 2000)
    base = RunConfig(
        mixing=ring12,
        suite=fig1_suite,
        schedule=schedule,
        T=2000,
        init=InitSpec.equal(np.zeros(5)),
        master_seed=1,
        debug=True,
    )
    runs = [run_dsgd(replace(base, run_index=r)) for r in range(50)]
    return {"rho": rho, "constants": constants, "schedule": schedule, "runs": runs}


@pytest.fixture(scope="module")
def comparison():
    return compare_experiment(load_config("configs/fig1.cfg"), quiet=True)


# ---------------------------------------------------------------------------
# criteria


def test_criterion_1_centralized_equivalence_under_shared_noise():
    suite = make_quadratic_suite(rotated_quadratic(5, noise_std=0.1, seed=7), 8)
    base = RunConfig(
        mixing=build_ring(8, 0.9),
        suite=suite,
        schedule=StepSchedule.constant(0.05, 1000),
        T=1000,
        init=InitSpec.equal(np.zeros(5)),
        master_seed=2024,
        shared_noise=True,
        debug=True,
    )
    avg = run_dsgd(base).debug_states.mean(axis=1)
    central = run_csgd(base).debug_states[:, 0, :]
    scale = np.maximum(np.linalg.norm(central, axis=1), 1.0)
    rel = float(np.max(np.linalg.norm(avg - central, axis=1) / scale))
    assert rel <= 1e-9
    passline(1, f"coupled-noise average matches the centralized path (rel {rel:.3g})")


def test_criterion_2_spectral_gaps_match_closed_forms(ring12):
    rho12 = spectral_gap(ring12).rho
    assert_allclose(rho12, 0.1 * (1.0 - math.cos(math.pi / 6.0)), atol=1e-10)
    for n in range(2, 65):
        assert spectral_gap(build_complete(n)).rho == 1.0
    ratios = {}
    for n in (8, 16, 32):
        small = spectral_gap(build_ring(n, 0.9)).rho
        large = spectral_gap(build_ring(2 * n, 0.9)).rho
        ratios[n] = large / small
        assert 0.2 <= ratios[n] <= 0.3
    passline(
        2,
        f"ring-12 gap {rho12:.9g}, complete gaps exactly 1, "
        f"doubling ratios {', '.join(f'{v:.4f}' for v in ratios.values())}",
    )


def test_criterion_3_per_step_disagreement_contraction(audit_ensemble, ring12):
    worst = -np.inf
    for order in (2, 4):
        for traj in audit_ensemble["runs"]:
            report = verify_contraction_step(traj, ring12, order)
            assert report.violations == 0
            assert report.passed
            worst = max(worst, report.worst_rel_excess)
    steps = 2 * len(audit_ensemble["runs"]) * 2000
    assert worst <= 1e-9
    passline(3, f"0/{steps} contraction violations, worst relative excess {worst:.3g}")


def test_criterion_4_ensemble_disagreement_moment_bounds(audit_ensemble):
    summary = ensemble_summary(audit_ensemble["runs"])
    margins = {}
    for order in (2, 4):
        report = verify_consensus_bounds(
            summary,
            audit_ensemble["constants"],
            audit_ensemble["rho"],
            12,
            audit_ensemble["schedule"],
            order,
        )
        assert report.violations == 0
        assert report.passed
        assert report.warnings == ()
        margins[order] = report.min_margin
    passline(
        4,
        "disagreement moments within bounds at every step "
        f"(min margins: order2 {margins[2]:.3g}, order4 {margins[4]:.3g})",
    )


def test_criterion_5_ergodic_bounds_hold_and_order4_is_tighter():
    suite = make_quadratic_suite(rotated_quadratic(5, noise_std=0.5, seed=11), 8)
    mixing = build_ring(8, 0.9)
    rho = spectral_gap(mixing).rho
    constants = estimate_constants(suite, probe_count=16, draw_count=512, seed=0)
    schedule = StepSchedule.constant(0.99 * rho / (9.0 * constants.L), 500)
    for theorem in (1, 2):
        assert check_step_conditions(schedule, constants, rho, theorem).passed
    base = RunConfig(
        mixing=mixing,
        suite=suite,
        schedule=schedule,
        T=500,
        init=InitSpec.equal(np.zeros(5)),
        master_seed=33,
    )
    sums = np.array([weighted_grad_sum(traj) for traj in run_ensemble("dsgd", base, 50, workers=1)])
    lhs_mean = float(sums.mean())
    lhs_stderr = float(sums.std(ddof=1) / np.sqrt(sums.size))
    assert lhs_mean > 0.0
    thm1 = thm1_rhs(constants, rho, 8, schedule, 500).with_lhs(lhs_mean, lhs_stderr)
    thm2 = thm2_rhs(constants, rho, 8, schedule, 500).with_lhs(lhs_mean, lhs_stderr)
    assert thm1.passed
    assert thm2.passed
    assert thm2.total < thm1.total
    passline(
        5,
        f"lhs {lhs_mean:.4g} (stderr {lhs_stderr:.2g}) <= order-4 total {thm2.total:.4g} "
        f"< order-2 total {thm1.total:.4g}",
    )


def test_criterion_6_power_sum_inequality_on_standard_schedules(fig1_suite, ring12):
    rho = spectral_gap(ring12).rho
    L = analytic_curvature(fig1_suite)
    beta = fig1_suite.beta
    horizon = 10_000
    schedules = {
        "constant": StepSchedule.constant(0.05, horizon),
        "inv_sqrt": StepSchedule.inv_sqrt(horizon),
        "sqrt_decay": StepSchedule.sqrt_decay(1.0 / beta, 8.0 * L**2 / beta**2, horizon),
    }
    worst = -np.inf
    for name, schedule in schedules.items():
        for order in (2, 4):
            report = verify_aux_lemma(schedule, rho, order)
            assert report.applicable, (name, order)
            assert report.passed, (name, order)
            worst = max(worst, report.worst_ratio)
    passline(6, f"decayed power sums within cap on all schedules (worst ratio {worst:.4g})")


def test_criterion_7_comparison_transients_and_levels(comparison):
    result, table = comparison
    hete = result.transients["hete_dsgd"].t_star
    homo = result.transients["homo_dsgd"].t_star
    assert homo is not None
    assert homo < (math.inf if hete is None else hete)
    csgd_level = final_quarter_mean(result.summaries["csgd"])
    ratios = {}
    for label in ("hete_dsgd", "homo_dsgd"):
        ratios[label] = final_quarter_mean(result.summaries[label]) / csgd_level
        assert abs(ratios[label] - 1.0) <= 0.25
    print(table)
    passline(
        7,
        f"pooled-data transient {homo} precedes heterogeneous "
        f"{'none' if hete is None else hete}; late levels vs benchmark "
        f"{ratios['hete_dsgd']:.3f} and {ratios['homo_dsgd']:.3f}",
    )


def test_criterion_8_constants_match_derivatives(fig1_dataset, fig1_suite):
    def fd_grad(theta, h=1e-5):
        out = np.empty(theta.size)
        for k in range(theta.size):
            e = np.zeros(theta.size)
            e[k] = h
            out[k] = (fig1_suite.global_value(theta + e) - fig1_suite.global_value(theta - e)) / (
                2.0 * h
            )
        return out

    def fd_hess(theta, h=1e-5):
        out = np.empty((theta.size, theta.size))
        for k in range(theta.size):
            e = np.zeros(theta.size)
            e[k] = h
            out[:, k] = (
                fig1_suite.global_grad(theta + e) - fig1_suite.global_grad(theta - e)
            ) / (2.0 * h)
        return out

    rng = np.random.default_rng(0)
    worst_grad = worst_hess = 0.0
    for _ in range(20):
        theta = rng.normal(size=5)
        exact = fig1_suite.global_grad(theta)
        worst_grad = max(worst_grad, np.linalg.norm(fd_grad(theta) - exact) / np.linalg.norm(exact))
        hess = fig1_suite.global_hess(theta)
        worst_hess = max(
            worst_hess, np.linalg.norm(fd_hess(theta) - hess) / np.linalg.norm(hess)
        )
    assert worst_grad <= 1e-5
    assert worst_hess <= 1e-4

    lin = verify_linearization(fig1_suite, pairs=200, seed=0)
    assert lin.passed

    homo = estimate_constants(
        make_classification_suite(gen_homo_from(fig1_dataset)),
        probe_count=16,
        draw_count=256,
        seed=0,
    )
    assert homo.varsigma <= 1e-12
    assert homo.varsigma_H <= 1e-12
    passline(
        8,
        f"derivatives match finite differences (grad {worst_grad:.2g}, hess {worst_hess:.2g}); "
        "curvature-change bound holds; pooled data has zero dispersion",
    )


def test_criterion_9_transient_ratio_prediction(ring12):
    rho = spectral_gap(ring12).rho
    pred = transient_predict(
        estimate_constants(
            make_classification_suite(gen_hetero_classification(3, 2, 8, 0)),
            probe_count=4,
            draw_count=32,
            seed=0,
        ),
        rho=rho,
        n=12,
    )
    ratio = pred.thm2_simplified / pred.thm1_simplified
    assert_allclose(ratio, rho ** (4.0 / 3.0) / 12.0 ** (2.0 / 3.0), rtol=1e-12)
    # hand evaluation at the 6-digit rounding of the gap
    assert_allclose(ratio, 6.070775744491262e-4, rtol=2e-5)
    assert f"{ratio:.3g}" == "0.000607"
    passline(9, f"order-4/order-2 transient ratio {ratio:.6g} matches the hand value 0.000607")


def test_criterion_10_cli_byte_determinism(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        argv = [
            "run",
            "--config",
            "configs/fig1-small.cfg",
            "--out",
            str(out),
            "--seed",
            "7",
            "--quiet",
        ]
        assert cli.main(argv) == 0
        outs.append(out)
    files = [
        "trajectories_hete_dsgd.csv",
        "trajectories_homo_dsgd.csv",
        "trajectories_csgd.csv",
        "summary_hete_dsgd.csv",
        "summary_homo_dsgd.csv",
        "summary_csgd.csv",
        "transients.csv",
        "mixing.csv",
        "convergence.svg",
    ]
    for name in files:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    passline(10, f"two CLI reruns byte-identical across {len(files)} artifacts")
