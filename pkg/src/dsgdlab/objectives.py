"""Objective families, their oracles, and smoothness-constant estimation.

Two families are provided:

* a synthetic binary-classification loss: inverted logistic ``1/(1+exp(u))``
  of the margin plus an L2 ridge term, with per-agent sample lists that are
  either heterogeneous (each agent labels by its own reference vector) or
  homogeneous (all agents share the pooled sample list);
* a quadratic family with additive Gaussian gradient noise, for which the
  decentralized and centralized recursions coincide exactly under shared
  noise.

All randomness is routed through :mod:`dsgdlab.rng` substreams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import rng as rngmod
from .errors import DimensionError, InvalidSpec, NumericalDivergence

#: sup over u of |second derivative| of u -> 1/(1+exp(u)); attained where
#: exp(u) = 2 + sqrt(3).
SIGMOID_D2_SUP = 1.0 / (6.0 * np.sqrt(3.0))

#: sup over u of |third derivative| of u -> 1/(1+exp(u)); attained at u = 0.
SIGMOID_D3_SUP = 0.125


def _sig(u):
    """Value of u -> 1/(1+exp(u)), overflow-safe."""
    return expit(-u)


def _sig_d1(u):
    """First derivative of u -> 1/(1+exp(u))."""
    return -(expit(u) * expit(-u))


def _sig_d2(u):
    """Second derivative of u -> 1/(1+exp(u))."""
    p = expit(u)
    q = expit(-u)
    return p * q * (p - q)


# ---------------------------------------------------------------------------
# data containers


@dataclass(frozen=True)
class QuadraticSpec:
    """Quadratic objective ``0.5 x'Ax + x'b`` with Gaussian gradient noise."""

    matrix: np.ndarray
    linear: np.ndarray
    noise_std: float

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=float)
        b = np.asarray(self.linear, dtype=float)
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "linear", b)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InvalidSpec(f"matrix must be square, got shape {A.shape}")
        if b.shape != (A.shape[0],):
            raise InvalidSpec(f"linear term shape {b.shape} does not match d={A.shape[0]}")
        if np.max(np.abs(A - A.T)) > 1e-12:
            raise InvalidSpec("matrix must be symmetric")
        if np.min(np.linalg.eigvalsh(A)) <= 0.0:
            raise InvalidSpec("matrix must be positive definite")
        if self.noise_std < 0.0:
            raise InvalidSpec(f"noise_std must be >= 0, got {self.noise_std}")


@dataclass(frozen=True)
class ClassificationDataset:
    """Per-agent feature/label lists for the classification family.

    ``mode`` is "heterogeneous" or "homogeneous"; in the homogeneous case all
    agents hold identical (shared) sample arrays.
    """

    xs: tuple
    ys: tuple
    beta: float
    mode: str

    def __post_init__(self):
        object.__setattr__(self, "xs", tuple(np.asarray(x, dtype=float) for x in self.xs))
        object.__setattr__(self, "ys", tuple(np.asarray(y, dtype=float) for y in self.ys))
        if self.mode not in ("heterogeneous", "homogeneous"):
            raise InvalidSpec(f"unknown dataset mode {self.mode!r}")
        if not self.xs or len(self.xs) != len(self.ys):
            raise InvalidSpec("need matching, non-empty feature and label lists")
        d = self.xs[0].shape[1] if self.xs[0].ndim == 2 else -1
        for x, y in zip(self.xs, self.ys):
            if x.ndim != 2 or x.shape[1] != d or x.shape[0] == 0:
                raise InvalidSpec("every agent needs a non-empty (m_i, d) feature array")
            if y.shape != (x.shape[0],):
                raise InvalidSpec("label array must match the feature rows")
            if not np.all(np.abs(y) == 1.0):
                raise InvalidSpec("labels must be +1 or -1")
        if self.beta < 0.0:
            raise InvalidSpec(f"beta must be >= 0, got {self.beta}")
        if self.mode == "homogeneous":
            for x, y in zip(self.xs, self.ys):
                if not (np.array_equal(x, self.xs[0]) and np.array_equal(y, self.ys[0])):
                    raise InvalidSpec("homogeneous dataset must share one sample list")

    @property
    def n(self) -> int:
        return len(self.xs)

    @property
    def d(self) -> int:
        return self.xs[0].shape[1]

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        """Union of all agents' samples (the shared list when homogeneous)."""
        if self.mode == "homogeneous":
            return self.xs[0], self.ys[0]
        return np.concatenate(self.xs, axis=0), np.concatenate(self.ys, axis=0)


def gen_hetero_classification(
    n: int = 12, d: int = 5, per_agent: int = 200, seed: int = 0
) -> ClassificationDataset:
    """Synthesize a heterogeneous classification dataset.

    Agent ``i`` (1-based) draws its reference vector coordinatewise from the
    uniform interval ``[-1 + 2(i-1)/n, -1 + 2i/n]``, then draws ``per_agent``
    features uniformly from ``[-1, 1]^d`` and labels them by the sign of the
    margin against the reference.  The ridge weight is ``10 / (n*per_agent)``.

    Draw order per agent: reference vector, then the feature block, so the
    dataset is fully determined by ``seed``.
    """
    if n < 1 or d < 1 or per_agent < 1:
        raise InvalidSpec(f"need n, d, per_agent >= 1, got ({n}, {d}, {per_agent})")
    stream = rngmod.substream(seed, rngmod.DATA)
    xs, ys = [], []
    for i in range(1, n + 1):
        low = -1.0 + 2.0 * (i - 1) / n
        high = -1.0 + 2.0 * i / n
        reference = stream.uniform(low, high, size=d)
        x = stream.uniform(-1.0, 1.0, size=(per_agent, d))
        y = np.where(x @ reference >= 0.0, 1.0, -1.0)
        xs.append(x)
        ys.append(y)
    beta = 10.0 / (n * per_agent)
    return ClassificationDataset(xs=tuple(xs), ys=tuple(ys), beta=beta, mode="heterogeneous")


def gen_homo_from(dataset: ClassificationDataset) -> ClassificationDataset:
    """Pool a heterogeneous dataset: every agent references the same union list."""
    if dataset.mode != "heterogeneous":
        raise InvalidSpec("input dataset must be heterogeneous")
    pooled_x, pooled_y = dataset.pooled()
    n = dataset.n
    return ClassificationDataset(
        xs=tuple(pooled_x for _ in range(n)),
        ys=tuple(pooled_y for _ in range(n)),
        beta=dataset.beta,
        mode="homogeneous",
    )


# ---------------------------------------------------------------------------
# suites


def _check_theta(theta, d) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (d,):
        raise DimensionError(f"parameter shape {theta.shape} does not match d={d}")
    return theta


@dataclass
class QuadraticSuite:
    """All agents share ``f(x) = 0.5 x'Ax + x'b``; noise enters the gradient only."""

    spec: QuadraticSpec
    n: int
    family: str = field(default="quadratic", init=False)
    homogeneous: bool = field(default=True, init=False)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidSpec(f"need n >= 1 agents, got {self.n}")

    @property
    def d(self) -> int:
        return self.spec.matrix.shape[0]

    # exact per-agent oracles (identical across agents)
    def agent_value(self, i: int, theta) -> float:
        theta = _check_theta(theta, self.d)
        A, b = self.spec.matrix, self.spec.linear
        return float(0.5 * theta @ A @ theta + theta @ b)

    def agent_grad(self, i: int, theta) -> np.ndarray:
        theta = _check_theta(theta, self.d)
        return self.spec.matrix @ theta + self.spec.linear

    def agent_hess(self, i: int, theta) -> np.ndarray:
        _check_theta(theta, self.d)
        return self.spec.matrix

    def global_value(self, theta) -> float:
        return self.agent_value(0, theta)

    def global_grad(self, theta) -> np.ndarray:
        return self.agent_grad(0, theta)

    def global_hess(self, theta) -> np.ndarray:
        return self.agent_hess(0, theta)

    def global_value_batch(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        A, b = self.spec.matrix, self.spec.linear
        return 0.5 * np.einsum("ij,jk,ik->i", thetas, A, thetas) + thetas @ b

    # noisy oracles
    def sample_gradient(self, i: int, theta, stream) -> np.ndarray:
        base = self.agent_grad(i, theta)
        return base + stream.normal(0.0, self.spec.noise_std, size=self.d)

    def sample_gradient_rows(self, thetas: np.ndarray, streams, pooled: bool = False) -> np.ndarray:
        A, b = self.spec.matrix, self.spec.linear
        base = thetas @ A.T + b
        noise = np.stack([s.normal(0.0, self.spec.noise_std, size=self.d) for s in streams])
        return base + noise

    def sample_gradient_batch(self, i: int, theta, stream, draws: int, pooled: bool = False) -> np.ndarray:
        base = self.agent_grad(i, theta)
        return base + stream.normal(0.0, self.spec.noise_std, size=(draws, self.d))

    def sample_gradient_block(self, thetas: np.ndarray, streams, draws: int, pooled: bool = False) -> np.ndarray:
        out = np.empty((draws, len(streams), self.d))
        for i, s in enumerate(streams):
            out[:, i, :] = self.sample_gradient_batch(i, thetas[i], s, draws)
        return out


def make_quadratic_suite(spec: QuadraticSpec, n: int) -> QuadraticSuite:
    """Replicate one quadratic objective over ``n`` agents."""
    return QuadraticSuite(spec=spec, n=n)


def _sigmoid_value(x, y, beta, theta) -> float:
    u = (x @ theta) * y
    return float(np.mean(_sig(u)) + 0.5 * beta * (theta @ theta))


def _sigmoid_grad(x, y, beta, theta) -> np.ndarray:
    u = (x @ theta) * y
    w = _sig_d1(u) * y
    return x.T @ w / x.shape[0] + beta * theta


def _sigmoid_hess(x, y, beta, theta) -> np.ndarray:
    u = (x @ theta) * y
    w = _sig_d2(u)
    return (x * w[:, None]).T @ x / x.shape[0] + beta * np.eye(x.shape[1])


def sigmoid_oracles(dataset: ClassificationDataset, agent: int, theta) -> tuple:
    """Exact (value, gradient, Hessian) of one agent's classification loss."""
    if not (0 <= agent < dataset.n):
        raise DimensionError(f"agent index {agent} out of range for n={dataset.n}")
    theta = _check_theta(theta, dataset.d)
    x, y = dataset.xs[agent], dataset.ys[agent]
    return (
        _sigmoid_value(x, y, dataset.beta, theta),
        _sigmoid_grad(x, y, dataset.beta, theta),
        _sigmoid_hess(x, y, dataset.beta, theta),
    )


class ClassificationSuite:
    """Per-agent classification losses backed by a :class:`ClassificationDataset`."""

    family = "classification"

    def __init__(self, dataset: ClassificationDataset):
        self.dataset = dataset
        self.n = dataset.n
        self.homogeneous = dataset.mode == "homogeneous"
        self.beta = dataset.beta
        self._pooled_x, self._pooled_y = dataset.pooled()
        if not self.homogeneous:
            counts = np.array([x.shape[0] for x in dataset.xs])
            self._equal_counts = bool(np.all(counts == counts[0]))
            self._starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
            self._counts = counts

    @property
    def d(self) -> int:
        return self.dataset.d

    def agent_value(self, i: int, theta) -> float:
        theta = _check_theta(theta, self.d)
        return _sigmoid_value(self.dataset.xs[i], self.dataset.ys[i], self.beta, theta)

    def agent_grad(self, i: int, theta) -> np.ndarray:
        theta = _check_theta(theta, self.d)
        return _sigmoid_grad(self.dataset.xs[i], self.dataset.ys[i], self.beta, theta)

    def agent_hess(self, i: int, theta) -> np.ndarray:
        theta = _check_theta(theta, self.d)
        return _sigmoid_hess(self.dataset.xs[i], self.dataset.ys[i], self.beta, theta)

    def global_value(self, theta) -> float:
        theta = _check_theta(theta, self.d)
        if self.homogeneous:
            return self.agent_value(0, theta)
        u = (self._pooled_x @ theta) * self._pooled_y
        if self._equal_counts:
            return float(np.mean(_sig(u)) + 0.5 * self.beta * (theta @ theta))
        means = np.add.reduceat(_sig(u), self._starts) / self._counts
        return float(np.mean(means) + 0.5 * self.beta * (theta @ theta))

    def global_grad(self, theta) -> np.ndarray:
        theta = _check_theta(theta, self.d)
        if self.homogeneous:
            return self.agent_grad(0, theta)
        u = (self._pooled_x @ theta) * self._pooled_y
        w = _sig_d1(u) * self._pooled_y
        if self._equal_counts:
            return self._pooled_x.T @ w / self._pooled_x.shape[0] + self.beta * theta
        sums = np.add.reduceat(w[:, None] * self._pooled_x, self._starts, axis=0)
        return (sums / self._counts[:, None]).mean(axis=0) + self.beta * theta

    def global_hess(self, theta) -> np.ndarray:
        theta = _check_theta(theta, self.d)
        if self.homogeneous:
            return self.agent_hess(0, theta)
        parts = [self.agent_hess(i, theta) for i in range(self.n)]
        return np.mean(parts, axis=0)

    def global_value_batch(self, thetas: np.ndarray, chunk: int = 512) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        out = np.empty(thetas.shape[0])
        x, y = (self.dataset.xs[0], self.dataset.ys[0]) if self.homogeneous else (
            self._pooled_x, self._pooled_y,
        )
        for lo in range(0, thetas.shape[0], chunk):
            block = thetas[lo : lo + chunk]
            u = (x @ block.T) * y[:, None]
            vals = _sig(u)
            if self.homogeneous or self._equal_counts:
                mean_loss = vals.mean(axis=0)
            else:
                mean_loss = (
                    np.add.reduceat(vals, self._starts, axis=0) / self._counts[:, None]
                ).mean(axis=0)
            out[lo : lo + chunk] = mean_loss + 0.5 * self.beta * np.einsum(
                "ij,ij->i", block, block
            )
        return out

    def _arrays(self, i: int, pooled: bool):
        if pooled:
            return self._pooled_x, self._pooled_y
        return self.dataset.xs[i], self.dataset.ys[i]

    def sample_gradient(self, i: int, theta, stream, pooled: bool = False) -> np.ndarray:
        theta = _check_theta(theta, self.d)
        x, y = self._arrays(i, pooled)
        j = stream.integers(x.shape[0])
        u = y[j] * (x[j] @ theta)
        return (_sig_d1(u) * y[j]) * x[j] + self.beta * theta

    def sample_gradient_rows(self, thetas: np.ndarray, streams, pooled: bool = False) -> np.ndarray:
        rows = np.empty((len(streams), self.d))
        labels = np.empty(len(streams))
        for i, s in enumerate(streams):
            x, y = self._arrays(i, pooled)
            j = s.integers(x.shape[0])
            rows[i] = x[j]
            labels[i] = y[j]
        u = labels * np.einsum("ij,ij->i", rows, thetas)
        w = _sig_d1(u) * labels
        return w[:, None] * rows + self.beta * thetas

    def sample_gradient_batch(self, i: int, theta, stream, draws: int, pooled: bool = False) -> np.ndarray:
        theta = _check_theta(theta, self.d)
        x, y = self._arrays(i, pooled)
        idx = stream.integers(0, x.shape[0], size=draws)
        xb, yb = x[idx], y[idx]
        u = yb * (xb @ theta)
        w = _sig_d1(u) * yb
        return w[:, None] * xb + self.beta * theta

    def sample_gradient_block(self, thetas: np.ndarray, streams, draws: int, pooled: bool = False) -> np.ndarray:
        out = np.empty((draws, len(streams), self.d))
        for i, s in enumerate(streams):
            out[:, i, :] = self.sample_gradient_batch(i, thetas[i], s, draws, pooled=pooled)
        return out


def make_classification_suite(dataset: ClassificationDataset) -> ClassificationSuite:
    return ClassificationSuite(dataset)


def stochastic_gradient(suite, agent: int, theta, stream) -> np.ndarray:
    """Draw one unbiased stochastic gradient for the given agent."""
    return suite.sample_gradient(agent, theta, stream)


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class SmoothnessConstants:
    """Estimated regularity and noise constants of a suite.

    ``sigma``, ``varsigma`` and ``varsigma_H`` are the values used when
    evaluating bounds: the smaller of the sampled maximum over the probe
    region and the analytic cap.  The raw sampled/cap values are kept
    alongside for safety checks.
    """

    L: float
    L_H: float
    sigma: float
    varsigma: float
    varsigma_H: float
    f_star: float
    D: float
    sigma_sampled: float = 0.0
    sigma_cap: float = np.inf
    varsigma_sampled: float = 0.0
    varsigma_cap: float = np.inf
    varsigma_H_sampled: float = 0.0
    varsigma_H_cap: float = np.inf

    def as_dict(self) -> dict:
        return {
            "L": self.L,
            "L_H": self.L_H,
            "sigma": self.sigma,
            "varsigma": self.varsigma,
            "varsigma_H": self.varsigma_H,
            "f_star": self.f_star,
            "D": self.D,
        }


def estimate_f_star(suite, theta0=None, iters: int = 100_000, tol: float = 1e-8) -> tuple:
    """Estimate the global minimum by backtracking gradient descent.

    Armijo backtracking halves the step until the sufficient-decrease test
    with constant 1e-4 passes; iteration stops when the gradient norm falls
    below ``tol`` or the iteration cap is hit.  Returns ``(f_star, gap)``
    where ``gap`` is the value at ``theta0`` minus the best value found.
    """
    d = suite.d
    theta0 = np.zeros(d) if theta0 is None else _check_theta(theta0, d)
    theta = theta0.copy()
    f_here = suite.global_value(theta)
    f_start = f_here
    best = f_here
    step = 1.0
    for _ in range(iters):
        g = suite.global_grad(theta)
        if not np.all(np.isfinite(g)) or not np.isfinite(f_here):
            raise NumericalDivergence("non-finite value during minimum search")
        gnorm_sq = float(g @ g)
        if np.sqrt(gnorm_sq) <= tol:
            break
        step = min(step * 2.0, 1e6)
        accepted = False
        for _ in range(100):
            candidate = theta - step * g
            f_cand = suite.global_value(candidate)
            if np.isfinite(f_cand) and f_cand <= f_here - 1e-4 * step * gnorm_sq:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        theta = candidate
        f_here = f_cand
        best = min(best, f_here)
    return best, max(0.0, f_start - best)


def _sample_ball(stream, center: np.ndarray, radius: float, count: int) -> np.ndarray:
    d = center.shape[0]
    dirs = stream.normal(size=(count, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = radius * stream.uniform(size=count) ** (1.0 / d)
    return center + radii[:, None] * dirs


def estimate_constants(
    suite,
    probe_count: int = 64,
    draw_count: int = 2048,
    radius: float = 3.0,
    seed: int = 0,
    center=None,
) -> SmoothnessConstants:
    """Estimate smoothness and noise constants over a probe ball.

    Gradient/Hessian dispersion across agents and stochastic-gradient central
    moments are maximized over ``probe_count`` points drawn uniformly from the
    ball of the given radius around ``center`` (default: the origin, i.e. the
    nominal initialization mean).  Curvature constants are analytic per
    family.  The noise level is ``max(sqrt(m2), m4**(1/4))`` of the sampled
    central moments, capped by the analytic worst case.
    """
    n, d = suite.n, suite.d
    center = np.zeros(d) if center is None else _check_theta(center, d)
    stream = rngmod.substream(seed, rngmod.PROBE)
    probes = _sample_ball(stream, center, radius, probe_count)

    vs_sampled = 0.0
    vsh_sampled = 0.0
    sigma_sampled = 0.0
    for theta in probes:
        grads = np.stack([suite.agent_grad(i, theta) for i in range(n)])
        gbar = grads.mean(axis=0)
        vs_sampled = max(vs_sampled, float(np.max(np.linalg.norm(grads - gbar, axis=1))))
        hessians = np.stack([suite.agent_hess(i, theta) for i in range(n)])
        hbar = hessians.mean(axis=0)
        for H in hessians:
            diff = hbar - H
            if np.any(diff):
                vsh_sampled = max(vsh_sampled, float(np.max(np.abs(np.linalg.eigvalsh(diff)))))
        for i in range(n):
            devs = suite.sample_gradient_batch(i, theta, stream, draw_count) - grads[i]
            sq = np.einsum("ij,ij->i", devs, devs)
            m2 = float(sq.mean())
            m4 = float((sq * sq).mean())
            sigma_sampled = max(sigma_sampled, max(np.sqrt(m2), m4**0.25))

    if suite.family == "classification":
        max_norm = float(np.max(np.linalg.norm(suite._pooled_x, axis=1)))
        L = SIGMOID_D2_SUP * max_norm**2 + suite.beta
        L_H = SIGMOID_D3_SUP * max_norm**3
        sigma_cap = 0.5 * max_norm
        if suite.homogeneous:
            vs_cap = 0.0
            vsh_cap = 0.0
        else:
            vs_cap = 0.5 * max_norm
            vsh_cap = 2.0 * SIGMOID_D2_SUP * max_norm**2
    else:
        A = suite.spec.matrix
        L = float(np.max(np.linalg.eigvalsh(A)))
        L_H = 0.0
        sigma_cap = (d * d + 2.0 * d) ** 0.25 * suite.spec.noise_std
        vs_cap = 0.0
        vsh_cap = 0.0

    f_star, gap = estimate_f_star(suite, theta0=center)
    return SmoothnessConstants(
        L=L,
        L_H=L_H,
        sigma=min(sigma_sampled, sigma_cap),
        varsigma=min(vs_sampled, vs_cap),
        varsigma_H=min(vsh_sampled, vsh_cap),
        f_star=f_star,
        D=gap,
        sigma_sampled=sigma_sampled,
        sigma_cap=sigma_cap,
        varsigma_sampled=vs_sampled,
        varsigma_cap=vs_cap,
        varsigma_H_sampled=vsh_sampled,
        varsigma_H_cap=vsh_cap,
    )


# ---------------------------------------------------------------------------
# serialization


def write_dataset_csv(path, dataset: ClassificationDataset) -> None:
    """Write per-agent samples as ``agent,x1,...,xd,y`` rows (agents 1-based)."""
    d = dataset.d
    header = "agent," + ",".join(f"x{k}" for k in range(1, d + 1)) + ",y"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for i, (x, y) in enumerate(zip(dataset.xs, dataset.ys), start=1):
            for row, label in zip(x, y):
                cells = ",".join(f"{v:.17g}" for v in row)
                fh.write(f"{i},{cells},{label:.17g}\n")


def read_dataset_csv(path, beta: float, mode: str = "heterogeneous") -> ClassificationDataset:
    """Read a dataset written by :func:`write_dataset_csv`."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "agent" or header[-1] != "y":
            raise InvalidSpec(f"{path}: unexpected dataset header {header!r}")
        per_agent_x: dict[int, list] = {}
        per_agent_y: dict[int, list] = {}
        for line in fh:
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            agent = int(cells[0])
            per_agent_x.setdefault(agent, []).append([float(v) for v in cells[1:-1]])
            per_agent_y.setdefault(agent, []).append(float(cells[-1]))
    agents = sorted(per_agent_x)
    xs = tuple(np.asarray(per_agent_x[a]) for a in agents)
    ys = tuple(np.asarray(per_agent_y[a]) for a in agents)
    return ClassificationDataset(xs=xs, ys=ys, beta=beta, mode=mode)


def write_constants_report(path, constants: SmoothnessConstants) -> None:
    """Write the seven headline constants as ``key = value`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in constants.as_dict().items():
            fh.write(f"{key} = {value:.17g}\n")
