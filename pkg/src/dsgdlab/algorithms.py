"""Step-size schedules, step-condition checks, and the two SGD runners.

``run_dsgd`` iterates the gossip recursion: mix iterates with the weight
matrix, then take a local stochastic-gradient step per agent.  ``run_csgd``
iterates the centralized minibatch recursion on a single parameter vector.
Metrics are recorded at the pre-update state for each iteration and once more
at the final state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ConfigInvalid, HorizonExceeded, NumericalDivergence
from .metrics import Trajectory, record_metrics
from .topology import MixingMatrix

SCHEDULE_KINDS = ("constant", "inv_sqrt_horizon", "sqrt_decay")


@dataclass(frozen=True)
class StepSchedule:
    """Step-size sequence ``gamma(t)`` for iterations ``0 <= t < horizon``.

    Kinds: ``constant`` (fixed ``value``), ``inv_sqrt_horizon``
    (``1/sqrt(horizon)`` throughout), and ``sqrt_decay``
    (``sqrt(a0 / (a1 + t))``).
    """

    kind: str
    horizon: int
    value: float = 0.0
    a0: float = 0.0
    a1: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigInvalid("schedule.kind", f"unknown kind {self.kind!r}")
        if self.horizon < 1:
            raise ConfigInvalid("schedule.horizon", f"must be >= 1, got {self.horizon}")
        if self.kind == "constant" and self.value <= 0.0:
            raise ConfigInvalid("schedule.value", f"must be > 0, got {self.value}")
        if self.kind == "sqrt_decay" and (self.a0 <= 0.0 or self.a1 <= 0.0):
            raise ConfigInvalid("schedule.a0", f"need a0, a1 > 0, got ({self.a0}, {self.a1})")

    @classmethod
    def constant(cls, value: float, horizon: int) -> "StepSchedule":
        return cls(kind="constant", horizon=horizon, value=value)

    @classmethod
    def inv_sqrt(cls, horizon: int) -> "StepSchedule":
        return cls(kind="inv_sqrt_horizon", horizon=horizon)

    @classmethod
    def sqrt_decay(cls, a0: float, a1: float, horizon: int) -> "StepSchedule":
        return cls(kind="sqrt_decay", horizon=horizon, a0=a0, a1=a1)

    def gamma(self, t: int) -> float:
        """Step size applied between states ``t`` and ``t + 1``."""
        if not (0 <= t < self.horizon):
            raise HorizonExceeded(f"iteration {t} outside horizon {self.horizon}")
        if self.kind == "constant":
            return self.value
        if self.kind == "inv_sqrt_horizon":
            return 1.0 / np.sqrt(self.horizon)
        return float(np.sqrt(self.a0 / (self.a1 + t)))

    def values(self, T: int | None = None) -> np.ndarray:
        """Vector of the first ``T`` step sizes (default: the whole horizon)."""
        T = self.horizon if T is None else T
        if not (1 <= T <= self.horizon):
            raise HorizonExceeded(f"requested {T} steps from horizon {self.horizon}")
        if self.kind == "constant":
            return np.full(T, self.value)
        if self.kind == "inv_sqrt_horizon":
            return np.full(T, 1.0 / np.sqrt(self.horizon))
        return np.sqrt(self.a0 / (self.a1 + np.arange(T, dtype=float)))

    def sup(self, T: int | None = None) -> float:
        return float(np.max(self.values(T)))


def eval_schedule(schedule: StepSchedule, t: int) -> float:
    """Step size for iteration ``t`` (the step producing state ``t + 1``)."""
    return schedule.gamma(t)


def ratio_constant(schedule: StepSchedule, power: int, denominator: str = "next") -> float:
    """Smallest b with ``(g_t/g_{t+1})^p <= 1 + b * g^p`` across the horizon.

    ``denominator`` picks which step size enters the slack term: "next"
    (``g_{t+1}^p``) or "current" (``g_t^p``).  Non-increasing-slack schedules
    (constant steps) give b = 0.
    """
    g = schedule.values()
    if g.size < 2:
        raise ValueError("ratio constant needs a horizon of at least 2")
    ratio_p = (g[:-1] / g[1:]) ** power
    denom = g[1:] ** power if denominator == "next" else g[:-1] ** power
    return float(max(0.0, np.max((ratio_p - 1.0) / denom)))


def min_ratio_constant(schedule: StepSchedule, order: int) -> float:
    """Smallest ratio constant b for the order-2 or order-4 analysis.

    Order 2 uses the first-power condition ``g_t/g_{t+1} <= 1 + b g_{t+1}``;
    order 4 uses ``g_t^4/g_{t+1}^4 <= 1 + b g_{t+1}^4``.
    """
    if order == 2:
        return ratio_constant(schedule, power=1)
    if order == 4:
        return ratio_constant(schedule, power=4)
    raise ValueError(f"order must be 2 or 4, got {order}")


def _ratio_cap(rho: float, b: float, root: int) -> float:
    """Largest admissible sup step size from the ratio constant b."""
    if b <= 0.0:
        return np.inf
    return float(((rho / (4.0 * b)) / (1.0 - rho / 2.0)) ** (1.0 / root))


@dataclass(frozen=True)
class StepCondition:
    name: str
    limit: float
    value: float
    passed: bool

    @property
    def margin(self) -> float:
        return self.limit - self.value


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of the step-size hypothesis checks for one theorem."""

    theorem: int
    conditions: tuple
    b: float
    b_hypothesis_variant: float | None
    passed: bool


def check_step_conditions(
    schedule: StepSchedule, constants, rho: float, theorem: int
) -> ConditionReport:
    """Check a schedule against the step-size hypotheses of one ergodic bound
    (``theorem=1`` for the order-2 bound, ``theorem=2`` for the order-4 one).

    The order-4 ratio condition is evaluated with the next-step denominator;
    the variant with the current-step denominator (as stated in the
    supporting-lemma hypothesis) is reported alongside for comparison.
    """
    sup = schedule.sup()
    L = constants.L
    conds = []
    if theorem == 1:
        b = min_ratio_constant(schedule, 2)
        curvature_cap = rho / (4.0 * L) if L > 0 else np.inf
        conds.append(
            StepCondition("sup_step_vs_quarter_gap_over_L", curvature_cap, sup, sup <= curvature_cap)
        )
        ratio_cap = _ratio_cap(rho, b, root=2)
        conds.append(StepCondition("sup_step_vs_ratio_cap_sqrt", ratio_cap, sup, sup <= ratio_cap))
        variant = None
    elif theorem == 2:
        b = min_ratio_constant(schedule, 4)
        curvature_cap = rho / (9.0 * L) if L > 0 else np.inf
        conds.append(
            StepCondition("sup_step_vs_ninth_gap_over_L", curvature_cap, sup, sup <= curvature_cap)
        )
        conds.append(
            StepCondition("sup_step_vs_ratio_cap_sqrt", _ratio_cap(rho, b, 2), sup, sup <= _ratio_cap(rho, b, 2))
        )
        conds.append(
            StepCondition("sup_step_vs_ratio_cap_quartic", _ratio_cap(rho, b, 4), sup, sup <= _ratio_cap(rho, b, 4))
        )
        variant = ratio_constant(schedule, power=4, denominator="current")
    else:
        raise ValueError(f"theorem must be 1 or 2, got {theorem}")
    return ConditionReport(
        theorem=theorem,
        conditions=tuple(conds),
        b=b,
        b_hypothesis_variant=variant,
        passed=all(c.passed for c in conds),
    )


# ---------------------------------------------------------------------------
# runners


@dataclass(frozen=True)
class InitSpec:
    """Initial-iterate distribution: every agent equal, or i.i.d. Gaussian."""

    kind: str
    vector: np.ndarray | None = None
    mean: float = 0.0
    std: float = 0.0

    def __post_init__(self):
        if self.kind not in ("equal", "gaussian"):
            raise ConfigInvalid("init.kind", f"unknown kind {self.kind!r}")
        if self.kind == "gaussian" and self.std < 0.0:
            raise ConfigInvalid("init.std", f"must be >= 0, got {self.std}")
        if self.vector is not None:
            object.__setattr__(self, "vector", np.asarray(self.vector, dtype=float))

    @classmethod
    def equal(cls, vector=None) -> "InitSpec":
        return cls(kind="equal", vector=vector)

    @classmethod
    def gaussian(cls, mean: float, std: float) -> "InitSpec":
        return cls(kind="gaussian", mean=mean, std=std)

    def mean_vector(self, d: int) -> np.ndarray:
        if self.kind == "equal":
            return np.zeros(d) if self.vector is None else self.vector.copy()
        return np.full(d, self.mean)


def initial_iterates(init: InitSpec, n: int, d: int, master_seed: int, run: int) -> np.ndarray:
    """Draw the (n, d) initial iterate matrix for one run."""
    if init.kind == "equal":
        base = np.zeros(d) if init.vector is None else init.vector
        if base.shape != (d,):
            raise ConfigInvalid("init.value", f"vector shape {base.shape} does not match d={d}")
        return np.tile(base, (n, 1))
    stream = rngmod.init_stream(master_seed, run)
    return init.mean + init.std * stream.normal(size=(n, d))


@dataclass
class RunConfig:
    """Everything one simulated run needs."""

    mixing: MixingMatrix
    suite: object
    schedule: StepSchedule
    T: int
    init: InitSpec
    master_seed: int
    run_index: int = 0
    shared_noise: bool = False
    csgd_pooled: bool = False
    record_stride: int = 1
    debug: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ConfigInvalid("run.T", f"must be >= 1, got {self.T}")
        if self.schedule.horizon < self.T:
            raise ConfigInvalid(
                "schedule.horizon",
                f"horizon {self.schedule.horizon} shorter than run length {self.T}",
            )
        if self.record_stride < 1:
            raise ConfigInvalid("run.record_stride", f"must be >= 1, got {self.record_stride}")
        if self.mixing.n != self.suite.n:
            raise ConfigInvalid(
                "topology.n", f"mixing has n={self.mixing.n} but suite has n={self.suite.n}"
            )
        if self.shared_noise and self.suite.family != "quadratic":
            raise ConfigInvalid(
                "run.shared_noise", "shared-noise coupling is defined for the quadratic family only"
            )


@dataclass
class WorldState:
    """Iterate matrix (one row per agent) at iteration ``t``."""

    iterates: np.ndarray
    t: int


def run_dsgd(config: RunConfig) -> Trajectory:
    """Simulate the decentralized recursion for one run."""
    suite = config.suite
    n, d = suite.n, suite.d
    W = config.mixing.weights
    purpose = rngmod.AGENT_SHARED if config.shared_noise else rngmod.AGENT_DSGD
    streams = rngmod.agent_streams(config.master_seed, purpose, config.run_index, n)
    theta = initial_iterates(config.init, n, d, config.master_seed, config.run_index)

    records = []
    debug_states = [theta.copy()] if config.debug else None
    debug_grads = [] if config.debug else None
    gammas = np.empty(config.T)
    for t in range(config.T):
        if t % config.record_stride == 0:
            records.append(record_metrics(WorldState(theta, t), suite, config.schedule))
        gamma = config.schedule.gamma(t)
        gammas[t] = gamma
        grads = suite.sample_gradient_rows(theta, streams)
        theta = W @ theta - gamma * grads
        if not np.all(np.isfinite(theta)):
            raise NumericalDivergence(
                f"non-finite iterate at iteration {t + 1}",
                iteration=t + 1,
                run=config.run_index,
            )
        if config.debug:
            debug_states.append(theta.copy())
            debug_grads.append(grads)
    records.append(record_metrics(WorldState(theta, config.T), suite, config.schedule))
    return Trajectory.from_records(
        run_id=config.run_index,
        seed=config.master_seed,
        T=config.T,
        records=records,
        debug_states=None if debug_states is None else np.stack(debug_states),
        debug_grads=None if debug_grads is None else np.stack(debug_grads),
        debug_gammas=gammas if config.debug else None,
    )


def run_csgd(config: RunConfig) -> Trajectory:
    """Simulate the centralized minibatch recursion for one run.

    The single iterate starts at the average of the per-agent initial draws,
    so a run is directly comparable to the decentralized run with the same
    seed.  Each step averages one stochastic gradient per agent stream, drawn
    from the agent's own samples or from the pooled union.
    """
    suite = config.suite
    n, d = suite.n, suite.d
    purpose = rngmod.AGENT_SHARED if config.shared_noise else rngmod.AGENT_CSGD
    streams = rngmod.agent_streams(config.master_seed, purpose, config.run_index, n)
    theta = initial_iterates(config.init, n, d, config.master_seed, config.run_index).mean(axis=0)

    records = []
    debug_states = [theta[None, :].copy()] if config.debug else None
    debug_grads = [] if config.debug else None
    gammas = np.empty(config.T)
    for t in range(config.T):
        if t % config.record_stride == 0:
            records.append(record_metrics(WorldState(theta[None, :], t), suite, config.schedule))
        gamma = config.schedule.gamma(t)
        gammas[t] = gamma
        rows = suite.sample_gradient_rows(
            np.broadcast_to(theta, (n, d)), streams, pooled=config.csgd_pooled
        )
        theta = theta - gamma * rows.mean(axis=0)
        if not np.all(np.isfinite(theta)):
            raise NumericalDivergence(
                f"non-finite iterate at iteration {t + 1}",
                iteration=t + 1,
                run=config.run_index,
            )
        if config.debug:
            debug_states.append(theta[None, :].copy())
            debug_grads.append(rows)
    records.append(record_metrics(WorldState(theta[None, :], config.T), suite, config.schedule))
    return Trajectory.from_records(
        run_id=config.run_index,
        seed=config.master_seed,
        T=config.T,
        records=records,
        debug_states=None if debug_states is None else np.stack(debug_states),
        debug_grads=None if debug_grads is None else np.stack(debug_grads),
        debug_gammas=gammas if config.debug else None,
    )
