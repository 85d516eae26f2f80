"""
Force/torque recordings, offset patterns and state labels.

A profile holds the six wrist channels (Fx, Fy, Fz, Tx, Ty, Tz) sampled on a
uniform grid starting at t=0. Profiles are immutable: their sample array is
flagged read-only on construction.
"""

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from snap_recovery.exceptions import (
    DataError,
    GridError,
    HorizonOutOfRange,
    Misconfigured,
)


logger = logging.getLogger(__name__)

N_CHANNELS = 6
CSV_HEADER = ('t', 'fx', 'fy', 'fz', 'tx', 'ty', 'tz')
MANIFEST_NAME = 'manifest.json'

# Grid comparisons tolerate float drift of t_span / sample_period
GRID_EPS = 1e-9


class Channel(enum.IntEnum):
    FX = 1
    FY = 2
    FZ = 3
    TX = 4
    TY = 5
    TZ = 6

    @property
    def index(self):
        return self.value - 1


class PhaseTag(str, enum.Enum):
    ASSEMBLY = 'assembly'
    PROBE_PLUS_X = 'probe_plus_x'
    PROBE_MINUS_X = 'probe_minus_x'


PROBE_PHASES = (PhaseTag.PROBE_PLUS_X, PhaseTag.PROBE_MINUS_X)


class StateLabel(enum.IntEnum):
    SUCCESS = 1
    X_POS = 2
    X_NEG = 3
    THETA_POS = 4
    THETA_NEG = 5
    X_POS_THETA_POS = 6
    X_POS_THETA_NEG = 7
    X_NEG_THETA_POS = 8
    X_NEG_THETA_NEG = 9

    def __str__(self):
        return f"S{self.value}"


@dataclass(frozen=True)
class OffsetPattern:
    dx: float
    dtheta_z: float

    def mirror(self):
        """ Reflect the translation, keep the rotation """
        return OffsetPattern(-self.dx, self.dtheta_z)

    def to_dict(self):
        return {'dx': self.dx, 'dtheta_z': self.dtheta_z}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(float(d['dx']), float(d['dtheta_z']))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"Malformed offset {d!r}") from e


@dataclass(frozen=True, eq=False)
class ForceTorqueProfile:
    sample_period: float
    channels: np.ndarray
    phase_tag: PhaseTag = PhaseTag.ASSEMBLY

    def __post_init__(self):
        channels = np.array(self.channels, dtype=float)
        if channels.ndim != 2 or channels.shape[0] != N_CHANNELS:
            raise DataError(f"Expected {N_CHANNELS} channels, got array of shape {channels.shape}")
        if channels.shape[1] < 2:
            raise GridError(f"A profile needs at least 2 samples, got {channels.shape[1]}")
        if not np.all(np.isfinite(channels)):
            raise DataError("Profile holds non-finite samples")
        if not (self.sample_period > 0 and math.isfinite(self.sample_period)):
            raise GridError(f"Sample period must be positive, got {self.sample_period}")
        channels.setflags(write=False)
        object.__setattr__(self, 'channels', channels)
        object.__setattr__(self, 'phase_tag', PhaseTag(self.phase_tag))

    @property
    def length(self):
        return self.channels.shape[1]

    @property
    def duration(self):
        return (self.length - 1) * self.sample_period

    @property
    def times(self):
        return np.arange(self.length) * self.sample_period

    def channel(self, channel):
        return self.channels[Channel(channel).index]


@dataclass(frozen=True, eq=False)
class LabeledSample:
    profile_set: dict
    offset: OffsetPattern
    label: StateLabel
    assembly_succeeded: bool = field(default=None)

    def __post_init__(self):
        label = StateLabel(self.label)
        object.__setattr__(self, 'label', label)
        if self.assembly_succeeded is None:
            object.__setattr__(self, 'assembly_succeeded', label is StateLabel.SUCCESS)
        assert (label is StateLabel.SUCCESS) == self.assembly_succeeded, \
            f"Label {label} disagrees with assembly_succeeded={self.assembly_succeeded}"

    def profile(self, phase_tag):
        return self.profile_set[PhaseTag(phase_tag)]


def samples_within(t_span, sample_period):
    """ Number of grid samples with timestamp <= t_span """
    return int(math.floor(t_span / sample_period + GRID_EPS)) + 1


def truncate(profile, t_span):
    if not t_span > 0 or t_span > profile.duration + GRID_EPS:
        raise HorizonOutOfRange(f"t_span {t_span} outside (0, {profile.duration}]")
    n = samples_within(t_span, profile.sample_period)
    if n == profile.length:
        return profile
    return ForceTorqueProfile(profile.sample_period, profile.channels[:, :n], profile.phase_tag)


def label_from_offset(offset, tol_x, tol_theta):
    """
    Ground-truth state of an offset; an offset on a tolerance boundary counts as success
    """
    if not (tol_x > 0 and tol_theta > 0):
        raise Misconfigured(f"Tolerances must be positive, got tol_x={tol_x}, tol_theta={tol_theta}")
    x_violated = abs(offset.dx) > tol_x
    theta_violated = abs(offset.dtheta_z) > tol_theta

    if not x_violated and not theta_violated:
        return StateLabel.SUCCESS
    if x_violated and not theta_violated:
        return StateLabel.X_POS if offset.dx > 0 else StateLabel.X_NEG
    if theta_violated and not x_violated:
        return StateLabel.THETA_POS if offset.dtheta_z > 0 else StateLabel.THETA_NEG
    if offset.dx > 0:
        return StateLabel.X_POS_THETA_POS if offset.dtheta_z > 0 else StateLabel.X_POS_THETA_NEG
    return StateLabel.X_NEG_THETA_POS if offset.dtheta_z > 0 else StateLabel.X_NEG_THETA_NEG


def resample_to_grid(profile, target_T):
    if target_T < 2:
        raise GridError(f"Target grid needs at least 2 points, got {target_T}")
    if target_T == profile.length:
        return profile
    new_times = np.linspace(0.0, profile.duration, target_T)
    old_times = profile.times
    channels = np.vstack([np.interp(new_times, old_times, ch) for ch in profile.channels])
    return ForceTorqueProfile(profile.duration / (target_T - 1), channels, profile.phase_tag)


# ------------------------------ CSV / manifest --------------------------------


def write_profile_csv(path, profile):
    data = np.column_stack([profile.times, profile.channels.T])
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(','.join(CSV_HEADER) + '\n')
        np.savetxt(f, data, delimiter=',', fmt='%.12g')


def read_profile_csv(path, phase_tag=PhaseTag.ASSEMBLY):
    path = Path(path)
    try:
        with path.open(encoding='utf-8', newline='') as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or tuple(h.strip().lower() for h in header) != CSV_HEADER:
                raise DataError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")
            rows = [[float(v) for v in row] for row in reader if row]
    except UnicodeDecodeError as e:
        raise DataError(f"{path}: not UTF-8 text ({e.reason} at byte {e.start})") from e
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e
    ragged = [number for number, row in enumerate(rows, start=1) if len(row) != len(CSV_HEADER)]
    if ragged:
        raise DataError(f"{path}: data row {ragged[0]} does not have {len(CSV_HEADER)} columns")
    data = np.array(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(CSV_HEADER) or data.shape[0] < 2:
        raise DataError(f"{path}: expected at least 2 rows of {len(CSV_HEADER)} columns")
    steps = np.diff(data[:, 0])
    if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-9):
        raise GridError(f"{path}: timestamps are not uniformly spaced")
    return ForceTorqueProfile(float(steps[0]), data[:, 1:].T, phase_tag)


def write_manifest(directory, entries):
    """
    Write the manifest of a dataset directory

    Args:
        entries: dicts with 'offset', 'label' and 'files' keys, as in the JSON layout
    """
    path = Path(directory) / MANIFEST_NAME
    with path.open('w', encoding='utf-8') as f:
        json.dump(entries, f, indent=1, sort_keys=True)
        f.write('\n')


def read_manifest(directory):
    path = Path(directory) / MANIFEST_NAME
    try:
        with path.open(encoding='utf-8') as f:
            entries = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: {e}") from e
    if not isinstance(entries, list):
        raise DataError(f"{path}: expected a JSON array")
    return entries


def load_dataset(directory):
    """
    Load all labeled samples listed in a directory's manifest

    Phases without a file entry are left out of the sample's profile_set.
    """
    directory = Path(directory)
    samples = []
    for entry in read_manifest(directory):
        try:
            files = dict(entry['files'])
            label = StateLabel(int(entry['label']))
            offset = OffsetPattern.from_dict(entry['offset'])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{directory}: malformed manifest entry {entry!r}") from e
        profile_set = {}
        for phase_tag in PhaseTag:
            filename = files.get(phase_tag.value)
            if filename:
                profile_set[phase_tag] = read_profile_csv(directory / filename, phase_tag)
        samples.append(LabeledSample(profile_set, offset, label))
    logger.debug(f"Loaded {len(samples)} samples from {directory}")
    return samples
