"""Binary logistic regression fitted by damped Newton-Raphson.

The weight vector has one entry per BIC. With ``intercept=True`` an extra
always-on virtual feature is appended at index ``m_count``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .samples import FeatureSpace, LabeledSample, SparseBatch

log = logging.getLogger(__name__)

# step-halving gives up below this fraction of the Newton step
MIN_STEP_FRACTION = 2.0**-30
RIDGE_BOOST = 10.0
RIDGE_BOOST_FLOOR = 1e-9


class SolverError(RuntimeError):
    """The Newton system could not be solved even after a ridge boost."""


@dataclass(frozen=True)
class SolverConfig:
    ridge_lambda: float = 1e-6
    max_iterations: int = 50
    tolerance: float = 1e-8
    damping: bool = True
    intercept: bool = False

    def __post_init__(self) -> None:
        if not self.ridge_lambda >= 0:
            raise ValueError("ridge_lambda must be >= 0")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class TrainReport:
    iterations_used: int
    final_nll: float
    converged: bool
    nll_history: tuple[float, ...] = field(default=(), compare=False)


@dataclass(frozen=True, eq=False)
class LogRegModel:
    weights: np.ndarray
    m_count: int
    solver_config: SolverConfig = SolverConfig()

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        expected = self.m_count + (1 if self.solver_config.intercept else 0)
        if w.shape != (expected,):
            raise ValueError(f"weights must have length {expected}, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def intercept(self) -> bool:
        return self.solver_config.intercept

    def decision(self, sample: LabeledSample) -> float:
        # left-to-right, matching the CSR mat-vec in predict_proba_batch
        w = self.weights
        z = 0.0
        for b in sample.bics:
            z += w[b]
        if self.intercept:
            z += w[-1]
        return float(z)

    def predict_proba(self, sample: LabeledSample) -> float:
        return sigmoid(self.decision(sample))

    def classify(self, sample: LabeledSample) -> int:
        return int(self.predict_proba(sample) >= 0.5)

    def score(self, sample: LabeledSample) -> float:
        return self.predict_proba(sample)

    def predict_proba_batch(self, batch: SparseBatch) -> np.ndarray:
        return sigmoid(design_matrix(batch, self.intercept) @ self.weights)

    def classify_batch(self, batch: SparseBatch) -> np.ndarray:
        return (self.predict_proba_batch(batch) >= 0.5).astype(np.int8)


def sigmoid(z):
    """Logistic function, evaluated without overflow for any finite input."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep strictly inside (0, 1)
    np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0), out=out)
    return float(out) if out.ndim == 0 else out


def design_matrix(batch: SparseBatch, intercept: bool = False) -> sp.csr_matrix:
    n = len(batch)
    data = np.ones(batch.indices.size, dtype=np.float64)
    x = sp.csr_matrix((data, batch.indices, batch.indptr), shape=(n, batch.m_count))
    if intercept:
        x = sp.hstack([x, np.ones((n, 1))], format="csr")
    return x


def _as_problem(samples, m_count: int, intercept: bool) -> tuple[sp.csr_matrix, np.ndarray]:
    batch = samples if isinstance(samples, SparseBatch) else SparseBatch.from_samples(samples, m_count)
    if np.any(batch.labels < 0):
        raise ValueError("unlabeled sample in training data")
    return design_matrix(batch, intercept), batch.labels.astype(np.float64)


def _nll(w: np.ndarray, x: sp.csr_matrix, y: np.ndarray, lam: float) -> float:
    z = x @ w
    # log(1 + e^z) - y z, stable for large |z|
    value = float(np.sum(np.logaddexp(0.0, z) - y * z))
    if lam > 0:
        value += 0.5 * lam * float(w @ w)
    return value


def _gradient(w, x, y, lam) -> np.ndarray:
    g = x.T @ (sigmoid(x @ w) - y)
    if lam > 0:
        g = g + lam * w
    return np.asarray(g, dtype=np.float64)


def _hessian(w, x, y, lam) -> np.ndarray:
    s = sigmoid(x @ w)
    d = sp.diags(s * (1.0 - s))
    h = (x.T @ d @ x).toarray()
    h = 0.5 * (h + h.T)
    if lam > 0:
        h[np.diag_indices_from(h)] += lam
    return h


def nll(model: LogRegModel, samples: Sequence[LabeledSample] | SparseBatch) -> float:
    """Negative log-likelihood plus the ridge term (lambda/2)||w||^2."""
    x, y = _as_problem(samples, model.m_count, model.intercept)
    return _nll(model.weights, x, y, model.solver_config.ridge_lambda)


def gradient(model: LogRegModel, samples: Sequence[LabeledSample] | SparseBatch) -> np.ndarray:
    x, y = _as_problem(samples, model.m_count, model.intercept)
    return _gradient(model.weights, x, y, model.solver_config.ridge_lambda)


def hessian(model: LogRegModel, samples: Sequence[LabeledSample] | SparseBatch) -> np.ndarray:
    x, y = _as_problem(samples, model.m_count, model.intercept)
    return _hessian(model.weights, x, y, model.solver_config.ridge_lambda)


def _newton_step(h: np.ndarray, g: np.ndarray, lam: float) -> np.ndarray:
    # Features never triggered in training have an all-zero Hessian row when
    # lam == 0; their gradient is zero too, so they simply do not move.
    active = np.diag(h) > 0
    step = np.zeros_like(g)
    if not active.any():
        return step
    h_a = h[np.ix_(active, active)]
    g_a = g[active]
    try:
        step[active] = scipy.linalg.cho_solve(scipy.linalg.cho_factor(h_a), g_a)
        return step
    except (np.linalg.LinAlgError, ValueError):
        pass
    boost = RIDGE_BOOST * max(lam, RIDGE_BOOST_FLOOR)
    log.debug("Cholesky failed; retrying with ridge boost %g", boost)
    try:
        h_a = h_a + boost * np.eye(h_a.shape[0])
        step[active] = scipy.linalg.cho_solve(scipy.linalg.cho_factor(h_a), g_a)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError("Newton system is singular even after ridge boost") from exc
    if not np.all(np.isfinite(step)):
        raise SolverError("Newton step is not finite")
    return step


def fit(
    samples: Sequence[LabeledSample] | SparseBatch,
    feature_space: FeatureSpace,
    config: SolverConfig = SolverConfig(),
    initial_weights: np.ndarray | None = None,
) -> tuple[LogRegModel, TrainReport]:
    """Minimize the (ridge-penalized) negative log-likelihood by Newton-Raphson.

    With ``config.damping`` the step is halved until the objective does not
    increase. Stops when the sup-norm of the accepted step is below
    ``config.tolerance`` or after ``config.max_iterations`` iterations.
    A stalled line search ends the fit with ``converged=False``.
    """
    m_count = feature_space.m_count
    x, y = _as_problem(samples, m_count, config.intercept)
    lam = config.ridge_lambda
    n_weights = x.shape[1]
    if initial_weights is None:
        w = np.zeros(n_weights)
    else:
        w = np.array(initial_weights, dtype=np.float64)
        if w.shape != (n_weights,):
            raise ValueError(f"initial weights must have length {n_weights}")

    f = _nll(w, x, y, lam)
    history = [f]
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        g = _gradient(w, x, y, lam)
        step = _newton_step(_hessian(w, x, y, lam), g, lam)
        if not config.damping:
            w = w - step
            f = _nll(w, x, y, lam)
            history.append(f)
            if not np.isfinite(f) or not np.all(np.isfinite(w)):
                break
            if np.max(np.abs(step), initial=0.0) < config.tolerance:
                converged = True
                break
            continue

        t = 1.0
        while t >= MIN_STEP_FRACTION:
            w_try = w - t * step
            f_try = _nll(w_try, x, y, lam)
            if f_try <= f:
                break
            t *= 0.5
        else:
            # no decrease at any step size: either already at the optimum
            # (within rounding) or a stall
            converged = bool(np.max(np.abs(step), initial=0.0) < config.tolerance)
            break
        w, f = w_try, f_try
        history.append(f)
        if np.max(np.abs(t * step), initial=0.0) < config.tolerance:
            converged = True
            break

    if not np.all(np.isfinite(w)):
        raise SolverError("weights diverged to non-finite values")
    model = LogRegModel(w, m_count, config)
    report = TrainReport(iterations, float(f), converged, tuple(history))
    if not converged:
        log.info("logistic regression did not converge after %d iterations", iterations)
    return model, report
