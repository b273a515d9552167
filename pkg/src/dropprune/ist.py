"""L0-regularized quadratics: gradient step + hard thresholding, with a
stochastic drop-away/drop-back variant of the thresholding operator.

Objective: 0.5 * ||A theta - b||^2 + lam * ||theta||_0.

The iteration applies a gradient step z = theta - step * A^T(A theta - b)
and then thresholds. The threshold value is sqrt(2 * lam * step), the exact
per-coordinate proximal rule for step * lam * ||.||_0: zeroing a coordinate
beats keeping z_i precisely when 0.5 * z_i^2 < lam * step. On identity
instances with step 1 this lands on the closed-form L0 minimizer (keep
coordinate i iff |b_i| >= sqrt(2 * lam)).

Stochastic mode replaces "zero everything below the threshold" with drop
away (a xi1-fraction random subset of the below-threshold set is zeroed; the
rest keep their small values) and drop back (some currently-zero coordinates
re-enter the iteration with the value they held when last zeroed).
"""

import itertools
from dataclasses import dataclass

import numpy as np

from dropprune.sampling import drop_back_count, make_rng, sample_fixed, sample_subset

_DIVERGENCE_LIMIT = 1e12
_EXHAUSTIVE_MAX_N = 16


class IstDiverged(RuntimeError):
    """Iterate norm blew past the divergence guard."""


@dataclass(frozen=True)
class QuadraticProblem:
    a: np.ndarray
    b: np.ndarray
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=np.float64))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64))
        if self.a.ndim != 2 or self.b.shape != (self.a.shape[0],):
            raise ValueError(
                f"need A (m, n) and b (m,), got {self.a.shape} and {self.b.shape}"
            )
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")

    @property
    def n(self):
        return self.a.shape[1]


@dataclass(frozen=True)
class ISTConfig:
    """step_size is 1/alpha; mode is "deterministic" or "stochastic"."""

    step_size: float
    max_iters: int = 200
    mode: str = "deterministic"
    xi1: float = 1.0
    xi2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.mode not in ("deterministic", "stochastic"):
            raise ValueError(f"unknown mode {self.mode!r}")


def hard_threshold(theta, s):
    """Zero every entry with magnitude strictly below s; |x| == s survives."""
    if s <= 0:
        raise ValueError("threshold must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    return np.where(np.abs(theta) >= s, theta, 0.0)


def evaluate_objective(prob, theta):
    theta = np.asarray(theta, dtype=np.float64)
    resid = prob.a @ theta - prob.b
    return 0.5 * float(resid @ resid) + prob.lam * int(np.count_nonzero(theta))


def default_step_size(a, iters=50, seed=0):
    """1 / (1.02 * ||A^T A||_2), the spectral norm estimated by power iteration."""
    a = np.asarray(a, dtype=np.float64)
    rng = make_rng(seed)
    v = rng.normal(size=a.shape[1])
    v /= np.linalg.norm(v)
    est = 1.0
    for _ in range(iters):
        w = a.T @ (a @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 1.0
        est = norm
        v = w / norm
    return 1.0 / (1.02 * est)


def _gradient(prob, theta):
    return prob.a.T @ (prob.a @ theta - prob.b)


def ist_iterate(prob, cfg, theta0):
    """Iterate hard-thresholded gradient descent; returns [theta0, theta1, ...].

    Deterministic mode thresholds every below-threshold entry of the updated
    vector. Stochastic mode with xi1=1, xi2=0 reproduces it bitwise.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.shape != (prob.n,):
        raise ValueError(f"theta0 must have shape ({prob.n},), got {theta0.shape}")
    thresh = np.sqrt(2.0 * prob.lam * cfg.step_size) if prob.lam > 0 else 0.0
    stochastic = cfg.mode == "stochastic"
    rng = make_rng(cfg.seed) if stochastic else None

    x = theta0.copy()
    memory = theta0.copy()  # value each coordinate held before it was zeroed
    trace = [x.copy()]
    for _ in range(cfg.max_iters):
        z = x - cfg.step_size * _gradient(prob, x)
        if thresh == 0.0:
            x = z
        elif not stochastic:
            x = hard_threshold(z, thresh)
        else:
            below = np.flatnonzero(np.abs(z) < thresh)
            pruned = np.flatnonzero(x == 0.0)  # K, snapshotted pre-update
            away = sample_subset(rng, below, cfg.xi1)
            back = sample_fixed(
                rng, pruned, drop_back_count(cfg.xi2, below.size, pruned.size)
            )
            if away.size:
                # record the pre-zero value only on an active -> zero transition
                newly = away[x[away] != 0.0]
                memory[newly] = z[newly]
            x = z.copy()
            x[away] = 0.0
            if back.size:
                x[back] = memory[back]
        if np.max(np.abs(x)) > _DIVERGENCE_LIMIT:
            raise IstDiverged(
                f"|theta| exceeded {_DIVERGENCE_LIMIT:g} after {len(trace)} iterations "
                f"(step_size={cfg.step_size})"
            )
        trace.append(x.copy())
    return trace


def exhaustive_best_subset(prob):
    """Global L0 minimum by trying every support with its least-squares fit.

    Only feasible for small n (enforced); returns (theta, objective).
    """
    n = prob.n
    if n > _EXHAUSTIVE_MAX_N:
        raise ValueError(f"exhaustive search limited to n <= {_EXHAUSTIVE_MAX_N}, got {n}")
    best_theta = np.zeros(n)
    best_obj = evaluate_objective(prob, best_theta)
    for size in range(1, n + 1):
        for support in itertools.combinations(range(n), size):
            cols = prob.a[:, support]
            fit, *_ = np.linalg.lstsq(cols, prob.b, rcond=None)
            theta = np.zeros(n)
            theta[list(support)] = fit
            obj = evaluate_objective(prob, theta)
            if obj < best_obj:
                best_obj = obj
                best_theta = theta
    return best_theta, best_obj


def generate_instance(seed, m, n, k, noise_sigma, lam):
    """Seeded Gaussian design with a k-sparse ground truth.

    Returns (problem, x_true); b = A x_true + noise.
    """
    if not (0 < k <= n):
        raise ValueError("k must be in [1, n]")
    rng = make_rng(seed)
    a = rng.normal(size=(m, n)) / np.sqrt(m)
    x_true = np.zeros(n)
    support = rng.choice(n, size=k, replace=False)
    x_true[support] = rng.normal(loc=0.0, scale=1.0, size=k) + np.sign(
        rng.normal(size=k)
    )
    b = a @ x_true + noise_sigma * rng.normal(size=m)
    return QuadraticProblem(a=a, b=b, lam=lam), x_true


def support_f1(theta, x_true):
    """F1 of the recovered support against the ground-truth support."""
    got = np.flatnonzero(theta)
    want = np.flatnonzero(x_true)
    if got.size == 0 and want.size == 0:
        return 1.0
    tp = np.intersect1d(got, want).size
    if tp == 0:
        return 0.0
    precision = tp / got.size
    recall = tp / want.size
    return 2 * precision * recall / (precision + recall)
