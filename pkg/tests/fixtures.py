import numpy as np
from pytest import fixture

from snap_recovery.bundle import train_bundle
from snap_recovery.fpca import FeatureVector
from snap_recovery.profile import ForceTorqueProfile, OffsetPattern, PhaseTag, StateLabel
from snap_recovery.sim import PlantConfig, generate_samples
from snap_recovery.tree import TrainingConfig


QUIET = (0.0,) * 6


@fixture
def plant():
    return PlantConfig()


@fixture
def quiet_plant():
    return PlantConfig(noise_sigma=QUIET)


@fixture
def training_config():
    return TrainingConfig(smo_tol=1e-6, n_jobs=1)


def make_profile(channels, sample_period=0.01, phase_tag=PhaseTag.ASSEMBLY):
    return ForceTorqueProfile(sample_period, np.asarray(channels, dtype=float), phase_tag)


def toy_dataset(seed=7, shift=6.0):
    """
    Twelve samples of S1, S2, S3 with two scores per channel: only the Tx
    scores carry information, and they single out S1.
    """
    rng = np.random.default_rng(seed)
    labels = [StateLabel.SUCCESS] * 4 + [StateLabel.X_POS] * 4 + [StateLabel.X_NEG] * 4
    scores = rng.normal(0.0, 1.0, (12, 6, 2))
    scores[:4, 3, 0] += shift
    return [FeatureVector(s) for s in scores], labels


@fixture
def toy():
    return toy_dataset()


@fixture
def separable_on_fz():
    rng = np.random.default_rng(3)
    scores = rng.normal(0.0, 1.0, (10, 6, 2))
    scores[:5, 2, :] += 10.0
    labels = [StateLabel.SUCCESS] * 5 + [StateLabel.X_POS] * 5
    return [FeatureVector(s) for s in scores], labels


def clustered_dataset(states, per_state=3, seed=0):
    """
    Features clustered per state on Fz (state index) and Tx (state parity) so
    every split can be made cleanly
    """
    rng = np.random.default_rng(seed)
    features, labels = [], []
    for position, state in enumerate(states):
        for _ in range(per_state):
            scores = rng.normal(0.0, 0.05, (6, 2))
            scores[2, 0] += 3.0 * position
            scores[3, 1] += 3.0 * (position % 2)
            features.append(FeatureVector(scores))
            labels.append(state)
    return features, labels


SMALL_GRID = ((0.0, 0.0), (0.5, -0.5), (2.0, 0.0), (-2.0, 0.0))


def small_samples(trials=3, seed=5, with_probes=True):
    """ Twelve plant samples of S1, S2 and S3 with all three phases """
    offsets = [OffsetPattern(dx, dtheta) for dx, dtheta in SMALL_GRID]
    return generate_samples(offsets, PlantConfig(), seed=seed, trials=trials, with_probes=with_probes)


@fixture(scope='module')
def small_bundle():
    return train_bundle(small_samples(), 2.0, TrainingConfig(smo_tol=1e-6, n_jobs=1))
