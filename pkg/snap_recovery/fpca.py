"""
Functional principal component analysis of one force/torque channel.

The covariance surface v(s, t) = 1/N sum_i (f_i(s) - f(s))(f_i(t) - f(t)) is
discretized on the common grid and weighted by the rectangle-rule step, so the
symmetric matrix eigenproblem approximates the integral equation
int v(s, t) xi(s) ds = rho xi(t). Eigenfunctions are normalized under the
discrete L2 inner product sum_k xi_a(t_k) xi_b(t_k) dt.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from snap_recovery.exceptions import DataError, GridError, RankError, ShapeError
from snap_recovery.profile import N_CHANNELS, Channel


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FpcaModel:
    grid_T: int
    sample_period: float
    mean_curve: np.ndarray
    eigenfunctions: np.ndarray
    eigenvalues: np.ndarray
    total_variance: float

    @property
    def n_components(self):
        return self.eigenvalues.shape[0]

    def to_dict(self):
        return {
            'grid_T': self.grid_T,
            'sample_period': self.sample_period,
            'mean_curve': self.mean_curve.tolist(),
            'eigenfunctions': self.eigenfunctions.tolist(),
            'eigenvalues': self.eigenvalues.tolist(),
            'total_variance': self.total_variance,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            grid_T=int(d['grid_T']),
            sample_period=float(d['sample_period']),
            mean_curve=np.array(d['mean_curve'], dtype=float),
            eigenfunctions=np.array(d['eigenfunctions'], dtype=float).reshape(-1, int(d['grid_T'])),
            eigenvalues=np.array(d['eigenvalues'], dtype=float),
            total_variance=float(d['total_variance']),
        )


@dataclass(frozen=True, eq=False)
class FeatureVector:
    channel_scores: np.ndarray

    def __post_init__(self):
        scores = np.array(self.channel_scores, dtype=float)
        if scores.ndim != 2 or scores.shape[0] != N_CHANNELS:
            raise ShapeError(f"Expected {N_CHANNELS} score vectors, got array of shape {scores.shape}")
        scores.setflags(write=False)
        object.__setattr__(self, 'channel_scores', scores)

    @property
    def p(self):
        return self.channel_scores.shape[1]

    def channel(self, channel):
        return self.channel_scores[Channel(channel).index]


def fit_fpca(curves, p, sample_period=1.0):
    curves = np.asarray(curves, dtype=float)
    if curves.ndim != 2:
        raise DataError(f"Expected an N x T array of curves, got shape {curves.shape}")
    if not np.all(np.isfinite(curves)):
        raise DataError("Curves hold non-finite values")
    N, T = curves.shape
    if N < 2 or T < 2:
        raise DataError(f"fPCA needs at least 2 curves of 2 samples, got {N} x {T}")
    if not 1 <= p <= min(N - 1, T):
        raise RankError(f"p={p} outside [1, {min(N - 1, T)}] for {N} curves on {T} points")

    mean_curve = curves.mean(axis=0)
    centered = curves - mean_curve
    operator = centered.T @ centered / N * sample_period

    eigenvalues, vectors = scipy.linalg.eigh(operator, subset_by_index=[T - p, T - 1])
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    eigenfunctions = vectors[:, order].T / np.sqrt(sample_period)

    # Largest-magnitude element positive
    peaks = eigenfunctions[np.arange(p), np.argmax(np.abs(eigenfunctions), axis=1)]
    eigenfunctions *= np.where(peaks < 0, -1.0, 1.0)[:, None]

    return FpcaModel(
        grid_T=T,
        sample_period=float(sample_period),
        mean_curve=mean_curve,
        eigenfunctions=eigenfunctions,
        eigenvalues=eigenvalues,
        total_variance=float(np.trace(operator)),
    )


def score(model, curve):
    curve = np.asarray(curve, dtype=float)
    if curve.shape != (model.grid_T,):
        raise GridError(f"Curve of shape {curve.shape} does not match fPCA grid of {model.grid_T} points")
    return model.eigenfunctions @ (curve - model.mean_curve) * model.sample_period


def reconstruct(model, scores):
    return model.mean_curve + np.asarray(scores) @ model.eigenfunctions


def contribution_rate(model, q):
    if not 1 <= q <= model.n_components:
        raise RankError(f"q={q} outside [1, {model.n_components}]")
    if model.total_variance <= 0:
        # Identical curves: nothing is left unexplained
        return 1.0
    return min(1.0, float(np.sum(model.eigenvalues[:q])) / model.total_variance)


def fit_profile_models(profiles, p):
    """
    Fit one FpcaModel per channel over profiles sharing a grid
    """
    profiles = list(profiles)
    if not profiles:
        raise DataError("No profiles to fit")
    lengths = {profile.length for profile in profiles}
    periods = {profile.sample_period for profile in profiles}
    if len(lengths) != 1 or not np.allclose(list(periods), profiles[0].sample_period):
        raise GridError(f"Profiles do not share a grid: lengths {sorted(lengths)}")
    stacked = np.stack([profile.channels for profile in profiles])
    models = []
    for channel in Channel:
        model = fit_fpca(stacked[:, channel.index, :], p, profiles[0].sample_period)
        logger.debug(f"fPCA {channel.name}: eigenvalues {model.eigenvalues}, "
                     f"contribution {contribution_rate(model, model.n_components):.3f}")
        models.append(model)
    return models


def extract_features(models, profile):
    if len(models) != N_CHANNELS:
        raise ShapeError(f"Expected {N_CHANNELS} fPCA models, got {len(models)}")
    return FeatureVector(np.vstack([
        score(model, profile.channels[channel.index]) for channel, model in zip(Channel, models)
    ]))
