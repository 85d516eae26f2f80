"""
Binary kernel SVM trained by sequential minimal optimization (SMO), with
Platt sigmoid calibration.

The dual solved is

    min_a  1/2 a'Qa - e'a   s.t.  y'a = 0,  0 <= a_t <= C,   Q_st = y_s y_t K(x_s, x_t)

using the maximal-violating-pair working set and no shrinking. Calibrated
probabilities follow Platt's convention P(+1 | f) = 1 / (1 + exp(A f + B)),
so a negative A makes the probability increase with the decision value.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import expit

from snap_recovery.exceptions import (
    ConvergenceError,
    DataError,
    DegenerateLabels,
    Misconfigured,
    NotCalibrated,
    ShapeError,
)


logger = logging.getLogger(__name__)

KERNELS = {'rbf', 'linear'}
GAMMA_HEURISTICS = {'scale', 'median'}

DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 100_000

TAU = 1e-12  # curvature floor for non-positive-definite pairs


@dataclass(frozen=True)
class KernelSpec:
    kind: str = 'rbf'
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise Misconfigured(f"Unknown kernel '{self.kind}'. Must be one of {sorted(KERNELS)}")
        if self.kind == 'rbf' and not (self.gamma is not None and self.gamma > 0):
            raise Misconfigured(f"rbf kernel needs a positive gamma, got {self.gamma}")

    def matrix(self, a, b):
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        if self.kind == 'linear':
            return a @ b.T
        return np.exp(-self.gamma * cdist(a, b, 'sqeuclidean'))

    def to_dict(self):
        return {'kind': self.kind, 'gamma': self.gamma}

    @classmethod
    def from_dict(cls, d):
        return cls(d['kind'], d.get('gamma'))


def resolve_gamma(points, gamma):
    """
    Turn a gamma setting (number, 'scale' or 'median') into a number for the given points
    """
    if not isinstance(gamma, str):
        return float(gamma)
    points = np.atleast_2d(points)
    if gamma == 'scale':
        variance = points.var()
        return 1.0 / (points.shape[1] * variance) if variance > 0 else 1.0
    if gamma == 'median':
        distances = pdist(points, 'sqeuclidean')
        distances = distances[distances > 0]
        return 1.0 / np.median(distances) if distances.size else 1.0
    raise Misconfigured(f"Unknown gamma heuristic '{gamma}'. Must be a number or one of {sorted(GAMMA_HEURISTICS)}")


@dataclass(frozen=True, eq=False)
class SvmModel:
    kernel: KernelSpec
    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    regularization_c: float
    platt_a: Optional[float] = None
    platt_b: Optional[float] = None
    feature_mean: Optional[np.ndarray] = None
    feature_scale: Optional[np.ndarray] = None

    @property
    def dimension(self):
        return self.support_vectors.shape[1]

    @property
    def calibrated(self):
        return self.platt_a is not None and self.platt_b is not None

    def standardize(self, points):
        if self.feature_mean is None:
            return points
        return (points - self.feature_mean) / self.feature_scale

    def to_dict(self):
        return {
            'kernel': self.kernel.to_dict(),
            'dimension': self.dimension,
            'support_vectors': self.support_vectors.tolist(),
            'dual_coefs': self.dual_coefs.tolist(),
            'bias': self.bias,
            'regularization_c': self.regularization_c,
            'platt_a': self.platt_a,
            'platt_b': self.platt_b,
            'feature_mean': None if self.feature_mean is None else self.feature_mean.tolist(),
            'feature_scale': None if self.feature_scale is None else self.feature_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        def optional_array(value):
            return None if value is None else np.array(value, dtype=float)
        return cls(
            kernel=KernelSpec.from_dict(d['kernel']),
            support_vectors=np.array(d['support_vectors'], dtype=float).reshape(-1, int(d['dimension'])),
            dual_coefs=np.array(d['dual_coefs'], dtype=float),
            bias=float(d['bias']),
            regularization_c=float(d['regularization_c']),
            platt_a=d['platt_a'],
            platt_b=d['platt_b'],
            feature_mean=optional_array(d['feature_mean']),
            feature_scale=optional_array(d['feature_scale']),
        )


# ------------------------------------ SMO -------------------------------------


def _check_binary(points, labels):
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if points.ndim != 2 or labels.shape != (points.shape[0],):
        raise ShapeError(f"Expected N x p points with N labels, got {points.shape} and {labels.shape}")
    if not (np.all(np.isfinite(points)) and np.all(np.isfinite(labels))):
        raise DataError("Training data holds non-finite values")
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        raise DataError("Labels must be -1 or +1")
    if not (np.any(labels > 0) and np.any(labels < 0)):
        raise DegenerateLabels(f"Both labels must be present, got {int(np.sum(labels > 0))} positive "
                               f"and {int(np.sum(labels < 0))} negative")
    return points, labels


def _working_sets(alpha, y, c):
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y < 0) & (alpha < c)) | ((y > 0) & (alpha > 0))
    return up, low


def kkt_gap(alpha, gradient, y, c):
    """ m(a) - M(a): zero at the optimum, SMO stops once it drops below tol """
    up, low = _working_sets(alpha, y, c)
    yg = -y * gradient
    return float(np.max(yg[up]) - np.min(yg[low]))


def dual_objective(alpha, kernel_matrix, y):
    """ sum(a) - 1/2 a'Qa, the quantity SMO maximizes """
    ay = alpha * y
    return float(np.sum(alpha) - 0.5 * ay @ kernel_matrix @ ay)


def _bias(alpha, gradient, y, c):
    yg = y * gradient
    free = (alpha > 0) & (alpha < c)
    if np.any(free):
        rho = float(np.mean(yg[free]))
    else:
        at_upper = alpha >= c
        ub_mask = (at_upper & (y < 0)) | (~at_upper & (y > 0))
        lb_mask = ~ub_mask
        ub = np.min(yg[ub_mask]) if np.any(ub_mask) else np.inf
        lb = np.max(yg[lb_mask]) if np.any(lb_mask) else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else float(ub if np.isfinite(ub) else lb)
    return -rho


def signed_kernel(kernel_matrix, y):
    """ Q = y y' * K """
    return (y[:, None] * y[None, :]) * kernel_matrix


def smo(kernel_matrix, y, c, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, alpha=None, active=None, Q=None):
    """
    Solve the SVM dual for a precomputed kernel matrix

    Args:
        alpha: optional feasible starting point (warm start)
        active: optional boolean mask; inactive samples keep alpha = 0 and
            take no part in the bias, which solves the dual of the active
            samples alone without slicing the matrices
        Q: optional precomputed signed_kernel(kernel_matrix, y)

    Return:
        (alpha, bias, n_iter)
    """
    n = y.shape[0]
    if Q is None:
        Q = signed_kernel(kernel_matrix, y)
    if active is None:
        active = np.ones(n, dtype=bool)
    if alpha is None:
        alpha = np.zeros(n)
        gradient = -np.ones(n)
    else:
        alpha = np.array(alpha, dtype=float)
        assert not np.any(alpha[~active]), "Inactive samples must start at alpha = 0"
        gradient = Q @ alpha - 1.0
    diagonal = np.diag(kernel_matrix)
    violation = np.inf

    for n_iter in range(max_iter):
        up, low = _working_sets(alpha, y, c)
        up &= active
        low &= active
        yg = -y * gradient
        i = int(np.argmax(np.where(up, yg, -np.inf)))
        j = int(np.argmin(np.where(low, yg, np.inf)))
        violation = yg[i] - yg[j]
        if violation < tol:
            break

        curvature = diagonal[i] + diagonal[j] - 2 * kernel_matrix[i, j]
        if curvature <= 0:
            curvature = TAU
        step = min(
            violation / curvature,
            c - alpha[i] if y[i] > 0 else alpha[i],
            alpha[j] if y[j] > 0 else c - alpha[j],
        )
        old_i, old_j = alpha[i], alpha[j]
        alpha[i] = _snap(old_i + y[i] * step, c)
        alpha[j] = _snap(old_j - y[j] * step, c)
        gradient += Q[:, i] * (alpha[i] - old_i) + Q[:, j] * (alpha[j] - old_j)
    else:
        raise ConvergenceError(f"SMO did not converge within {max_iter} iterations (violation {violation:.3g})")

    return alpha, _bias(alpha[active], gradient[active], y[active], c), n_iter


def _snap(value, c):
    if value <= c * 1e-12:
        return 0.0
    if value >= c * (1 - 1e-12):
        return c
    return value


def standardization(points):
    mean = points.mean(axis=0)
    scale = points.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def train_svm(points, labels, c, kernel, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
              standardize=False, calibrate=True):
    """
    Train a binary SVM and, by default, calibrate it with Platt scaling on its training decision values
    """
    points, labels = _check_binary(points, labels)
    if not c > 0:
        raise Misconfigured(f"Regularization c must be positive, got {c}")
    feature_mean = feature_scale = None
    if standardize:
        feature_mean, feature_scale = standardization(points)
        points = (points - feature_mean) / feature_scale

    kernel_matrix = kernel.matrix(points, points)
    alpha, bias, n_iter = smo(kernel_matrix, labels, c, tol, max_iter)
    logger.debug(f"SMO converged in {n_iter} iterations, {int(np.sum(alpha > 0))}/{len(alpha)} support vectors")

    support = alpha > 0
    platt_a = platt_b = None
    if calibrate:
        values = kernel_matrix @ (alpha * labels) + bias
        platt_a, platt_b = fit_platt(values, labels)

    return SvmModel(
        kernel=kernel,
        support_vectors=points[support],
        dual_coefs=(alpha * labels)[support],
        bias=bias,
        regularization_c=float(c),
        platt_a=platt_a,
        platt_b=platt_b,
        feature_mean=feature_mean,
        feature_scale=feature_scale,
    )


def decision_values(model, points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != model.dimension:
        raise ShapeError(f"Expected points of dimension {model.dimension}, got {points.shape[1]}")
    points = model.standardize(points)
    if model.dual_coefs.size == 0:
        return np.full(points.shape[0], model.bias)
    return model.kernel.matrix(points, model.support_vectors) @ model.dual_coefs + model.bias


def decision_value(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dimension,):
        raise ShapeError(f"Expected a point of dimension {model.dimension}, got shape {x.shape}")
    return float(decision_values(model, x[None, :])[0])


# ----------------------------------- Platt ------------------------------------


def platt_probability(platt_a, platt_b, values):
    return expit(-(platt_a * np.asarray(values, dtype=float) + platt_b))


def _platt_loss(values, targets, a, b):
    z = a * values + b
    return float(np.sum(np.logaddexp(0.0, z) - (1.0 - targets) * z))


def platt_targets(labels):
    labels = np.asarray(labels, dtype=float)
    n_pos = int(np.sum(labels > 0))
    n_neg = labels.shape[0] - n_pos
    return np.where(labels > 0, (n_pos + 1) / (n_pos + 2), 1.0 / (n_neg + 2))


def fit_platt(decision_values, labels, max_iter=100, tol=1e-10, a=None, b=None):
    """
    Fit Platt's sigmoid by Newton iterations with backtracking line search

    Targets are smoothed to (N+ + 1)/(N+ + 2) and 1/(N- + 2). A starting point
    (a, b) may be given to warm-start the fit.

    Return:
        (platt_a, platt_b)
    """
    values = np.asarray(decision_values, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataError("Decision values hold non-finite entries")
    n_pos = int(np.sum(labels > 0))
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("Platt scaling needs both classes")

    targets = platt_targets(labels)
    if a is None or b is None:
        a, b = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    loss = _platt_loss(values, targets, a, b)

    for _ in range(max_iter):
        p = expit(-(a * values + b))
        d = targets - p
        gradient = np.array([values @ d, np.sum(d)])
        if np.max(np.abs(gradient)) < tol:
            break
        w = p * (1.0 - p)
        hessian = np.array([
            [values * values @ w + 1e-12, values @ w],
            [values @ w, np.sum(w) + 1e-12],
        ])
        direction = -np.linalg.solve(hessian, gradient)
        slope = gradient @ direction

        stepsize = 1.0
        while stepsize >= 1e-10:
            new_a, new_b = a + stepsize * direction[0], b + stepsize * direction[1]
            new_loss = _platt_loss(values, targets, new_a, new_b)
            if new_loss < loss + 1e-4 * stepsize * slope:
                a, b, loss = new_a, new_b, new_loss
                break
            stepsize /= 2
        else:
            # No further decrease available in floating point
            break

    return float(a), float(b)


def class_probability(model, x):
    """ Calibrated probability of the positive side of the model's split """
    if not model.calibrated:
        raise NotCalibrated("SVM has no Platt calibration")
    return float(platt_probability(model.platt_a, model.platt_b, decision_value(model, x)))
