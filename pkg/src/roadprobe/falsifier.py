"""Gaussian-process surrogate and LCB acquisition for counterexample search.

The detector's trial score over the modification space is modeled as a
zero-mean GP with a squared-exponential kernel. Each loop iteration
picks the candidate minimizing the lower confidence bound
mu(u) - sqrt(beta) * sigma(u), trading off exploiting known low-score
regions against exploring uncertain ones, then refits on the new
observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigError, SingularKernel
from .modspace import ModificationPoint
from .samplers import PointSet, PointsLike, _as_array, halton_at

JITTER_CEILING = 1e-5


@dataclass(frozen=True)
class GPConfig:
    """Kernel and acquisition constants.

    length_scale is isotropic in the unit cube. beta is the (constant)
    LCB exploration weight; candidate_count sizes the fixed Halton
    candidate set the acquisition optimizes over.
    """

    signal_variance: float = 1.0
    length_scale: float = 0.2
    noise_variance: float = 1e-4
    jitter: float = 1e-9
    beta: float = 4.0
    candidate_count: int = 4096

    def __post_init__(self):
        if self.length_scale <= 0.0:
            raise ConfigError(f"length_scale must be > 0, got {self.length_scale}")
        if self.signal_variance <= 0.0:
            raise ConfigError(f"signal_variance must be > 0, got {self.signal_variance}")
        if self.noise_variance < 0.0:
            raise ConfigError(f"noise_variance must be >= 0, got {self.noise_variance}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.candidate_count < 16:
            raise ConfigError(f"candidate_count must be >= 16, got {self.candidate_count}")

    def to_dict(self) -> dict:
        return {
            "signal_variance": self.signal_variance,
            "length_scale": self.length_scale,
            "noise_variance": self.noise_variance,
            "jitter": self.jitter,
            "beta": self.beta,
            "candidate_count": self.candidate_count,
        }


def kernel_matrix(config: GPConfig, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared-exponential covariances between the rows of a and b.

    Uses explicit coordinate differences, so k(u, v) == k(v, u) exactly
    and k(u, u) == signal_variance exactly.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    return config.signal_variance * np.exp(-0.5 * d2 / config.length_scale ** 2)


@dataclass(frozen=True)
class GPModel:
    """Fitted posterior state: inputs, observations, Cholesky factor."""

    config: GPConfig
    inputs: np.ndarray
    observations: np.ndarray
    chol: Optional[np.ndarray]
    alpha: Optional[np.ndarray]
    applied_jitter: float

    @property
    def t(self) -> int:
        return self.inputs.shape[0]


def _jitter_schedule(base: float):
    yield 0.0
    j = base
    while 0.0 < j <= JITTER_CEILING:
        yield j
        j *= 10.0


def gp_fit(config: GPConfig, inputs: PointsLike, observations) -> GPModel:
    """Factorize K + noise*I once (O(t^3)); predictions then cost O(t^2).

    Jitter is applied lazily: the plain matrix is tried first, then the
    configured jitter escalated tenfold up to 1e-5. SingularKernel is
    raised when every attempt fails (e.g. duplicate points with zero
    noise and zero jitter).
    """
    X = _as_array(inputs)
    y = np.asarray(observations, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ConfigError(f"{X.shape[0]} inputs vs {y.shape[0]} observations")
    if X.shape[0] == 0:
        return GPModel(config, X.copy(), y.copy(), None, None, 0.0)

    K = kernel_matrix(config, X, X)
    A = K + config.noise_variance * np.eye(X.shape[0])
    chol = None
    applied = 0.0
    for jit in _jitter_schedule(config.jitter):
        try:
            chol = np.linalg.cholesky(A + jit * np.eye(X.shape[0]))
            applied = jit
            break
        except np.linalg.LinAlgError:
            continue
    if chol is None:
        raise SingularKernel(
            f"kernel matrix not positive definite for t={X.shape[0]} even with jitter; "
            "duplicate inputs with zero noise?"
        )
    alpha = solve_triangular(chol, y, lower=True)
    alpha = solve_triangular(chol.T, alpha, lower=False)
    return GPModel(config, X.copy(), y.copy(), chol, alpha, applied)


def gp_predict_batch(model: GPModel, points: PointsLike) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and variances at many points at once."""
    U = _as_array(points)
    prior_var = model.config.signal_variance
    if model.t == 0:
        return np.zeros(U.shape[0]), np.full(U.shape[0], prior_var)
    k_cross = kernel_matrix(model.config, model.inputs, U)
    mean = k_cross.T @ model.alpha
    v = solve_triangular(model.chol, k_cross, lower=True)
    var = prior_var - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)


def gp_predict(model: GPModel, point: Union[ModificationPoint, np.ndarray]) -> tuple[float, float]:
    """Posterior mean and variance at one point (variance floored at 0)."""
    coords = point.coords if isinstance(point, ModificationPoint) else point
    mean, var = gp_predict_batch(model, np.asarray(coords, dtype=np.float64).reshape(1, -1))
    return float(mean[0]), float(var[0])


@dataclass(frozen=True)
class Acquisition:
    """Chosen candidate with its LCB value."""

    index: int
    point: ModificationPoint
    lcb: float


def acquire_lcb(model: GPModel, candidates: PointsLike) -> Acquisition:
    """Candidate minimizing mu - sqrt(beta) * sigma; ties go to the lowest index."""
    U = _as_array(candidates)
    if U.shape[0] == 0:
        raise ConfigError("acquisition needs at least one candidate")
    mean, var = gp_predict_batch(model, U)
    lcb = mean - math.sqrt(model.config.beta) * np.sqrt(var)
    idx = int(np.argmin(lcb))
    return Acquisition(idx, ModificationPoint(tuple(float(c) for c in U[idx])), float(lcb[idx]))


def halton_candidates(n: int, count: int) -> PointSet:
    """Fixed low-discrepancy candidate set for the acquisition argmin."""
    return PointSet(np.array([halton_at(i + 1, n).coords for i in range(count)]))


def falsify_loop(scene, space, endpoint, gp_config: GPConfig, halt, out_dir, *,
                 score=None, raw_config=None, trials_override=None):
    """Active campaign: LCB-chosen samples, GP refit on every observation.

    Each iteration acquires the next point over a fixed Halton candidate
    set, renders and scores it through the shared trial machinery, and
    conditions the surrogate on the result. Errored trials are recorded
    but never fed to the GP. Halting follows the same conditions as
    passive campaigns (counterexample / budget / coverage).
    """
    from . import harness  # deferred: harness never imports this module

    if score is None:
        score = harness.ScoreConfig()
    if trials_override is not None:
        halt = halt.with_max_trials(trials_override)
    candidates = halton_candidates(space.n, gp_config.candidate_count)
    store = harness.ResultStore.create(
        out_dir,
        harness.build_metadata(scene, space, None, endpoint, halt, score,
                               gp=gp_config, raw_config=raw_config, active=True),
    )

    observed_x: list[tuple[float, ...]] = []
    observed_y: list[float] = []
    model = gp_fit(gp_config, np.empty((0, space.n)), [])
    tracker = harness.HaltTracker(halt, space.n)

    with harness.open_session(endpoint, space) as session:
        index = 0
        while True:
            acq = acquire_lcb(model, candidates)
            record = harness.execute_trial(scene, space, acq.point, index, session, store, score)
            tracker.observe(record)
            reason = tracker.reason()
            if record.score is not None:
                observed_x.append(acq.point.coords)
                observed_y.append(record.score)
                model = gp_fit(gp_config, np.array(observed_x), np.array(observed_y))
            index += 1
            if reason is not None:
                store.finalize(reason)
                return store
