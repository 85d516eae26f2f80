import itertools

import numpy as np
from scipy.optimize import brentq

from snap_recovery.svm import (
    KernelSpec,
    decision_value,
    fit_platt,
    platt_probability,
    resolve_gamma,
    standardization,
    train_svm,
)
from snap_recovery.tree import enumerate_bipartitions, node_accuracy
from snap_recovery.profile import Channel


def dense_fpca(curves, p, sample_period):
    """ Eigenpairs of the weighted covariance via numpy's full symmetric solver """
    curves = np.asarray(curves, dtype=float)
    mean = curves.mean(axis=0)
    centered = curves - mean
    covariance = centered.T @ centered / curves.shape[0]
    values, vectors = np.linalg.eigh(covariance * sample_period)
    order = np.argsort(values)[::-1][:p]
    functions = vectors[:, order].T / np.sqrt(sample_period)
    for k in range(p):
        if functions[k, np.argmax(np.abs(functions[k]))] < 0:
            functions[k] = -functions[k]
    scores = centered @ functions.T * sample_period
    return values[order], functions, scores, float(np.trace(covariance * sample_period))


def _project(v, y, c):
    """ Euclidean projection onto {0 <= a <= c, y'a = 0} """
    def balance(mu):
        return y @ np.clip(v - mu * y, 0.0, c)
    bound = np.max(np.abs(v)) + c + 1.0
    mu = brentq(balance, -bound, bound, xtol=1e-14)
    return np.clip(v - mu * y, 0.0, c)


def qp_dual_oracle(kernel_matrix, y, c, iterations=5000):
    """
    Accelerated projected gradient on the SVM dual

    Return:
        (alpha, objective) with objective = sum(a) - 1/2 a'Qa at the solution
    """
    Q = (y[:, None] * y[None, :]) * kernel_matrix
    step = 1.0 / max(np.linalg.eigvalsh(Q)[-1], 1e-12)
    alpha = np.zeros(y.shape[0])
    momentum = alpha.copy()
    t = 1.0
    for _ in range(iterations):
        updated = _project(momentum - step * (Q @ momentum - 1.0), y, c)
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        momentum = updated + (t - 1.0) / t_next * (updated - alpha)
        alpha, t = updated, t_next
    return alpha, float(np.sum(alpha) - 0.5 * alpha @ Q @ alpha)


def platt_grid_loss(values, targets, grid_a, grid_b):
    """ Smallest Platt loss over a grid of (a, b) """
    best = np.inf
    for a in grid_a:
        z = a * values[:, None] + grid_b[None, :]
        losses = np.sum(np.logaddexp(0.0, z) - (1.0 - targets)[:, None] * z, axis=0)
        best = min(best, float(losses.min()))
    return best


def exhaustive_root_split(features, labels, config):
    """
    Evaluate every (channel, bipartition) at the root with a plain leave-one-out loop

    Each fold trains a fresh SVM on the other samples; one Platt sigmoid is
    then fitted on the collected held-out decision values.

    Return:
        (channel, partition, accuracy) of the first candidate with the largest accuracy
    """
    labels = np.array([int(label) for label in labels])
    scores = np.stack([feature.channel_scores for feature in features])
    best = None
    for channel in Channel:
        points = scores[:, channel.index, :]
        mean, scale = standardization(points)
        points = (points - mean) / scale
        kernel = KernelSpec('rbf', resolve_gamma(points, config.gamma))
        for partition in enumerate_bipartitions(set(labels)):
            in_c = np.isin(labels, [int(s) for s in partition])
            targets = np.where(in_c, 1.0, -1.0)
            held_out = np.empty(len(labels))
            for i in range(len(labels)):
                keep = np.arange(len(labels)) != i
                model = train_svm(points[keep], targets[keep], config.regularization_c, kernel,
                                  tol=config.smo_tol, max_iter=config.max_iter, calibrate=False)
                held_out[i] = decision_value(model, points[i])
            probabilities = platt_probability(*fit_platt(held_out, targets), held_out)
            per_sample = [(bool(inside), value > 0, p if value > 0 else 1.0 - p)
                          for inside, value, p in zip(in_c, held_out, probabilities)]
            accuracy = node_accuracy(per_sample, corrected=config.eq1_corrected)
            if best is None or accuracy > best[2]:
                best = (channel, tuple(partition), accuracy)
    return best


def all_subsets(labels):
    labels = sorted(labels)
    return [subset for size in range(1, len(labels)) for subset in itertools.combinations(labels, size)]
