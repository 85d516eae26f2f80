"""
Synthetic snap-assembly plant.

A closed-form force/torque model stands in for robot, parts and wrist sensor:

    depth(t) = insertion_depth * t / insertion_duration
    ramp(t)  = (max(0, t - contact_time) / (snap_time - contact_time)) ** 2
    excess   = max(0, |dx| - tol_x) + max(0, |dtheta| - tol_theta)

    Fz = contact_stiffness_z * depth + jam_gain * excess * ramp
         - snap_drop * exp(-((t - snap_time) / snap_width) ** 2 / 2)     (success only)
    Fx = lateral_gain * (dx + 0.2 * dtheta) * ramp
    Fy = 0.1 * lateral_gain * dtheta * ramp
    Tx = torque_gain_x * dtheta * ramp
    Ty = torque_gain_y * dx * ramp
    Tz = 0.1 * torque_gain_y * dx * ramp

A probe moves the retracted part probe_distance sideways in direction s = +-1.
The side wall is met after closing the gap clearance - s * dx, after which the
lateral force saturates:

    z(t)  = max(0, probe_speed * t - (clearance - s * dx))
    Fx    = s * probe_saturation * tanh(contact_gain * z / probe_saturation)
    Ty    = probe_moment_arm * Fx
    Fz    = friction * |Fx|
    Tx    = probe_torque_gain_x * dtheta * t / probe_duration
    Fy    = 0.1 * lateral_gain * dtheta * t / probe_duration
    Tz    = 0.1 * probe_torque_gain_x * dtheta * t / probe_duration

Additive Gaussian noise comes from a counter-based Philox generator keyed by
(seed, phase, channel), so a profile is reproducible bit for bit.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from snap_recovery import parsing
from snap_recovery.exceptions import Misconfigured, OffsetOutOfRange
from snap_recovery.probe import IdentificationPolicyConfig, identify, recovery_action
from snap_recovery.profile import (
    N_CHANNELS,
    PROBE_PHASES,
    ForceTorqueProfile,
    LabeledSample,
    OffsetPattern,
    PhaseTag,
    StateLabel,
    label_from_offset,
    truncate,
    write_manifest,
    write_profile_csv,
)


logger = logging.getLogger(__name__)

# Seed namespaces
TRAIN_SPLIT = 0
VALIDATION_SPLIT = 1
EPISODE_SPLIT = 2

_PHASE_KEYS = {PhaseTag.ASSEMBLY: 0, PhaseTag.PROBE_PLUS_X: 1, PhaseTag.PROBE_MINUS_X: 2}

# Offsets of the per-state identification table, success block first
VALIDATION_OFFSETS = (
    (-0.25, -0.25), (-0.5, 0.5), (-0.5, 0.0), (0.25, -0.25), (0.5, 0.5),
    (0.5, 0.0), (0.0, -0.5), (0.0, 0.5), (0.0, 0.0),
    (2.0, 0.0), (-2.0, 0.0), (0.0, 2.0), (0.0, -2.0),
    (1.5, 1.5), (1.5, -1.5), (-1.5, 1.5), (-1.5, -1.5),
)
VALIDATION_TRIALS = 5


@dataclass(frozen=True)
class PlantConfig:
    tol_x: float = 1.0
    tol_theta: float = 1.0
    max_offset_x: float = 2.0
    max_offset_theta: float = 2.0

    sample_rate: float = 100.0
    insertion_depth: float = 6.0
    insertion_duration: float = 3.0
    contact_time: float = 1.77
    snap_time: float = 2.1
    snap_width: float = 0.05

    contact_stiffness_z: float = 2.0
    jam_gain: float = 20.0
    snap_drop: float = 3.0
    lateral_gain: float = 2.0
    torque_gain_x: float = 0.05
    torque_gain_y: float = 0.08

    probe_distance: float = 2.0
    probe_duration: float = 1.0
    clearance: float = 1.0
    contact_gain: float = 4.0
    probe_saturation: float = 6.0
    probe_moment_arm: float = 0.03
    friction: float = 0.3
    probe_torque_gain_x: float = 0.15

    noise_sigma: Optional[tuple] = None
    noise_scale: float = 0.02
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.tol_x > 0 and self.tol_theta > 0):
            raise Misconfigured(f"Tolerances must be positive, got tol_x={self.tol_x}, tol_theta={self.tol_theta}")
        if not (self.max_offset_x >= self.tol_x and self.max_offset_theta >= self.tol_theta):
            raise Misconfigured("Admissible offset range must contain the tolerance box")
        if not self.sample_rate > 0:
            raise Misconfigured(f"sample_rate must be positive, got {self.sample_rate}")
        if not 0 < self.contact_time < self.snap_time < self.insertion_duration:
            raise Misconfigured(f"Expected 0 < contact_time < snap_time < insertion_duration, got "
                                f"{self.contact_time}, {self.snap_time}, {self.insertion_duration}")
        for name in ('insertion_depth', 'snap_width', 'probe_distance', 'probe_duration',
                     'clearance', 'probe_saturation'):
            if not getattr(self, name) > 0:
                raise Misconfigured(f"{name} must be positive, got {getattr(self, name)}")
        for name in ('contact_stiffness_z', 'jam_gain', 'snap_drop', 'lateral_gain', 'torque_gain_x',
                     'torque_gain_y', 'contact_gain', 'probe_moment_arm', 'friction', 'probe_torque_gain_x',
                     'noise_scale'):
            if not getattr(self, name) >= 0:
                raise Misconfigured(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.probe_torque_gain_x < self.torque_gain_x:
            raise Misconfigured("probe_torque_gain_x must not be smaller than torque_gain_x")
        for name in ('insertion_duration', 'probe_duration'):
            samples = getattr(self, name) * self.sample_rate
            if abs(samples - round(samples)) > 1e-9:
                raise Misconfigured(f"{name} must span a whole number of samples at {self.sample_rate} Hz")
        if self.noise_sigma is not None:
            sigma = tuple(float(s) for s in self.noise_sigma)
            if len(sigma) != N_CHANNELS or min(sigma) < 0:
                raise Misconfigured(f"noise_sigma needs {N_CHANNELS} nonnegative values, got {self.noise_sigma}")
            object.__setattr__(self, 'noise_sigma', sigma)
        if not (isinstance(self.rng_seed, int) and self.rng_seed >= 0):
            raise Misconfigured(f"rng_seed must be a nonnegative integer, got {self.rng_seed}")

    @property
    def sample_period(self):
        return 1.0 / self.sample_rate

    @property
    def assembly_samples(self):
        return int(round(self.insertion_duration * self.sample_rate)) + 1

    @property
    def probe_samples(self):
        return int(round(self.probe_duration * self.sample_rate)) + 1

    @property
    def probe_speed(self):
        return self.probe_distance / self.probe_duration

    @classmethod
    def from_dict(cls, config):
        return parsing.parse_dataclass(cls, config)

    def to_dict(self):
        return parsing.dataclass_to_dict(self)


def check_admissible(offset, config):
    if abs(offset.dx) > config.max_offset_x + 1e-9 or abs(offset.dtheta_z) > config.max_offset_theta + 1e-9:
        raise OffsetOutOfRange(f"Offset ({offset.dx}, {offset.dtheta_z}) outside "
                               f"+-{config.max_offset_x} mm x +-{config.max_offset_theta} deg")


def is_admissible(offset, config):
    try:
        check_admissible(offset, config)
    except OffsetOutOfRange:
        return False
    return True


def derive_seed(*keys):
    """ A 32-bit seed derived from a tuple of nonnegative integers """
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# ---------------------------------- Signals -----------------------------------


def _ramp(t, config):
    return (np.maximum(0.0, t - config.contact_time) / (config.snap_time - config.contact_time)) ** 2


def clean_assembly(offset, config):
    """ Noise-free assembly channels (6 x T) and the ground-truth outcome """
    success = label_from_offset(offset, config.tol_x, config.tol_theta) is StateLabel.SUCCESS
    t = np.arange(config.assembly_samples) * config.sample_period
    ramp = _ramp(t, config)
    dx, dtheta = offset.dx, offset.dtheta_z
    excess = max(0.0, abs(dx) - config.tol_x) + max(0.0, abs(dtheta) - config.tol_theta)

    fz = config.contact_stiffness_z * config.insertion_depth * t / config.insertion_duration \
        + config.jam_gain * excess * ramp
    if success:
        fz = fz - config.snap_drop * np.exp(-0.5 * ((t - config.snap_time) / config.snap_width) ** 2)

    channels = np.vstack([
        config.lateral_gain * (dx + 0.2 * dtheta) * ramp,
        0.1 * config.lateral_gain * dtheta * ramp,
        fz,
        config.torque_gain_x * dtheta * ramp,
        config.torque_gain_y * dx * ramp,
        0.1 * config.torque_gain_y * dx * ramp,
    ])
    return channels, success


def _direction_sign(direction):
    direction = PhaseTag(direction)
    if direction not in PROBE_PHASES:
        raise Misconfigured(f"Not a probe direction: {direction.value}")
    return 1.0 if direction is PhaseTag.PROBE_PLUS_X else -1.0


def contact_onset(offset, direction, config):
    """ Time at which the probe meets the side wall; negative when already in contact """
    return (config.clearance - _direction_sign(direction) * offset.dx) / config.probe_speed


def clean_probe(offset, direction, config):
    sign = _direction_sign(direction)
    t = np.arange(config.probe_samples) * config.sample_period
    progress = t / config.probe_duration
    penetration = np.maximum(0.0, config.probe_speed * t - (config.clearance - sign * offset.dx))
    fx = sign * config.probe_saturation * np.tanh(config.contact_gain * penetration / config.probe_saturation)
    dtheta = offset.dtheta_z
    return np.vstack([
        fx,
        0.1 * config.lateral_gain * dtheta * progress,
        config.friction * np.abs(fx),
        config.probe_torque_gain_x * dtheta * progress,
        config.probe_moment_arm * fx,
        0.1 * config.probe_torque_gain_x * dtheta * progress,
    ])


def noise_sigmas(config):
    """
    Per-channel noise sigma: explicit, or noise_scale times the clean value at
    snap_time for the offset on the tolerance corner
    """
    if config.noise_sigma is not None:
        return np.array(config.noise_sigma)
    reference, _ = clean_assembly(OffsetPattern(config.tol_x, config.tol_theta), config)
    snap_index = int(round(config.snap_time * config.sample_rate))
    return config.noise_scale * np.abs(reference[:, snap_index])


def _noise(seed, phase_tag, n_samples, sigmas):
    noise = np.zeros((N_CHANNELS, n_samples))
    for index, sigma in enumerate(sigmas):
        if sigma == 0:
            continue
        key = np.random.SeedSequence([int(seed), _PHASE_KEYS[phase_tag], index]).generate_state(2, dtype=np.uint64)
        generator = np.random.Generator(np.random.Philox(key=key))
        noise[index] = sigma * generator.standard_normal(n_samples)
    return noise


def simulate_assembly(offset, config=None, seed=0):
    config = config or PlantConfig()
    check_admissible(offset, config)
    channels, success = clean_assembly(offset, config)
    channels = channels + _noise(seed, PhaseTag.ASSEMBLY, channels.shape[1], noise_sigmas(config))
    return ForceTorqueProfile(config.sample_period, channels, PhaseTag.ASSEMBLY), success


def simulate_probe(offset, direction, config=None, seed=0):
    config = config or PlantConfig()
    check_admissible(offset, config)
    direction = PhaseTag(direction)
    channels = clean_probe(offset, direction, config)
    channels = channels + _noise(seed, direction, channels.shape[1], noise_sigmas(config))
    return ForceTorqueProfile(config.sample_period, channels, direction)


def apply_recovery(offset, action):
    return OffsetPattern(offset.dx + action.delta_x, offset.dtheta_z + action.delta_theta)


# ---------------------------------- Datasets ----------------------------------


def training_offsets():
    """
    The 131-offset training grid: an 11 x 11 lattice on +-2 mm x +-2 deg plus
    ten points near the tolerance box and on its diagonals
    """
    axis = np.round(np.linspace(-2.0, 2.0, 11), 10)
    offsets = [OffsetPattern(float(dx), float(dtheta)) for dx in axis for dtheta in axis]
    extra = [(0.25, 0.25), (0.25, -0.25), (-0.25, 0.25), (-0.25, -0.25), (0.5, 0.0), (-0.5, 0.0),
             (1.5, 1.5), (1.5, -1.5), (-1.5, 1.5), (-1.5, -1.5)]
    offsets.extend(OffsetPattern(dx, dtheta) for dx, dtheta in extra)
    return offsets


def validation_offsets():
    return [OffsetPattern(dx, dtheta) for dx, dtheta in VALIDATION_OFFSETS]


def _sample_profiles(offset, config, seed, with_probes):
    assembly, success = simulate_assembly(offset, config, seed)
    profile_set = {PhaseTag.ASSEMBLY: assembly}
    if with_probes:
        for direction in PROBE_PHASES:
            profile_set[direction] = simulate_probe(offset, direction, config, seed)
    return profile_set, success


def generate_samples(offsets, config=None, seed=0, split=TRAIN_SPLIT, trials=1, with_probes=True):
    """
    Simulate labeled samples in memory, trial-major within each offset
    """
    config = config or PlantConfig()
    samples = []
    for index, offset in enumerate(offsets):
        label = label_from_offset(offset, config.tol_x, config.tol_theta)
        for trial in range(trials):
            sample_seed = derive_seed(seed, split, index, trial)
            profile_set, success = _sample_profiles(offset, config, sample_seed, with_probes)
            samples.append(LabeledSample(profile_set, offset, label, success))
    return samples


def write_dataset(directory, offsets, config=None, seed=0, split=TRAIN_SPLIT, trials=1, with_probes=True):
    """
    Simulate and write a dataset directory: one CSV per (sample, phase) plus the manifest

    Return:
        The manifest entries
    """
    config = config or PlantConfig()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, offset in enumerate(offsets):
        label = label_from_offset(offset, config.tol_x, config.tol_theta)
        for trial in range(trials):
            sample_seed = derive_seed(seed, split, index, trial)
            profile_set, _ = _sample_profiles(offset, config, sample_seed, with_probes)
            files = {}
            for phase_tag, profile in profile_set.items():
                filename = f"{index:03d}_{trial}_{phase_tag.value}.csv"
                write_profile_csv(directory / filename, profile)
                files[phase_tag.value] = filename
            entries.append({
                'offset': offset.to_dict(),
                'label': int(label),
                'files': files,
                'seed': sample_seed,
                'trial': trial,
            })
    write_manifest(directory, entries)
    logger.info(f"Wrote {len(entries)} samples to {directory}")
    return entries


# ---------------------------------- Episodes ----------------------------------


@dataclass(frozen=True)
class EpisodeStep:
    offset: OffsetPattern
    identification: object
    action: object
    succeeded: bool

    def to_dict(self):
        return {
            'offset': self.offset.to_dict(),
            'identification': self.identification.to_dict(),
            'action': self.action.to_dict(),
            'succeeded': self.succeeded,
        }


@dataclass(frozen=True)
class EpisodeLog:
    steps: list = field(default_factory=list)
    final_success: bool = False
    retries_used: int = 0

    def __post_init__(self):
        assert not self.final_success or self.steps[-1].succeeded, \
            "A successful episode must end with a successful step"

    def to_dict(self):
        return {
            'steps': [step.to_dict() for step in self.steps],
            'final_success': self.final_success,
            'retries_used': self.retries_used,
        }


def run_episode(true_offset, trees, policy_config=None, plant_config=None, seed=0):
    """
    Assemble, identify and recover until the part is predicted to fit or retries run out

    Args:
        trees: mapping PhaseTag -> DecisionTree for the assembly phase and both probes
    """
    policy_config = policy_config or IdentificationPolicyConfig()
    plant_config = plant_config or PlantConfig()
    check_admissible(true_offset, plant_config)
    probe_config = dataclasses.replace(plant_config, probe_distance=policy_config.probe_distance)

    offset = true_offset
    steps = []
    for attempt in range(policy_config.max_retries + 1):
        attempt_seed = derive_seed(seed, EPISODE_SPLIT, attempt)
        profile, success = simulate_assembly(offset, plant_config, attempt_seed)

        def probe_supplier(direction, offset=offset, attempt_seed=attempt_seed):
            return simulate_probe(offset, direction, probe_config, attempt_seed)

        result = identify(truncate(profile, policy_config.t_span), trees, probe_supplier, policy_config)
        action = recovery_action(result.predicted, policy_config)
        steps.append(EpisodeStep(offset, result, action, success))
        logger.debug(f"run_episode: attempt {attempt} at ({offset.dx}, {offset.dtheta_z}) "
                     f"predicted {result.predicted}, actually {'success' if success else 'failure'}")
        if result.predicted is StateLabel.SUCCESS:
            break

        recovered = apply_recovery(offset, action)
        if not is_admissible(recovered, plant_config):
            logger.warning(f"run_episode: recovery to ({recovered.dx}, {recovered.dtheta_z}) leaves the "
                           f"admissible range, giving up")
            break
        offset = recovered

    last = steps[-1]
    final_success = last.identification.predicted is StateLabel.SUCCESS and last.succeeded
    return EpisodeLog(steps, final_success, len(steps) - 1)
