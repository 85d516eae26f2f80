import numpy as np
import pytest

from snap_recovery.exceptions import DataError, GridError, HorizonOutOfRange, Misconfigured
from snap_recovery.profile import (
    Channel,
    LabeledSample,
    OffsetPattern,
    PhaseTag,
    StateLabel,
    label_from_offset,
    load_dataset,
    read_profile_csv,
    resample_to_grid,
    samples_within,
    truncate,
    write_manifest,
    write_profile_csv,
)
from .fixtures import make_profile


def ramp_profile(n=301, sample_period=0.01):
    t = np.arange(n) * sample_period
    return make_profile(np.vstack([t * (k + 1) for k in range(6)]), sample_period)


# ----------------------------------- Labels -----------------------------------


@pytest.mark.parametrize('dx, dtheta, expected', [
    (0.0, 0.0, StateLabel.SUCCESS),
    (1.0, -1.0, StateLabel.SUCCESS),
    (2.0, 0.0, StateLabel.X_POS),
    (-2.0, 0.0, StateLabel.X_NEG),
    (0.0, 2.0, StateLabel.THETA_POS),
    (0.0, -2.0, StateLabel.THETA_NEG),
    (1.5, 1.5, StateLabel.X_POS_THETA_POS),
    (1.5, -1.5, StateLabel.X_POS_THETA_NEG),
    (-1.5, 1.5, StateLabel.X_NEG_THETA_POS),
    (-1.5, -1.5, StateLabel.X_NEG_THETA_NEG),
])
def test_label_from_offset(dx, dtheta, expected):
    assert label_from_offset(OffsetPattern(dx, dtheta), 1.0, 1.0) is expected


def test_label_from_offset_rejects_nonpositive_tolerance():
    with pytest.raises(Misconfigured):
        label_from_offset(OffsetPattern(0.0, 0.0), 0.0, 1.0)


def test_label_sign_symmetry():
    # Flipping dx maps every x-error state to its mirror and leaves the rest alone
    for dx in (-2.0, -1.2, -0.4, 0.0, 0.4, 1.2, 2.0):
        for dtheta in (-2.0, -0.4, 0.0, 1.6):
            label = label_from_offset(OffsetPattern(dx, dtheta), 1.0, 1.0)
            mirrored = label_from_offset(OffsetPattern(dx, dtheta).mirror(), 1.0, 1.0)
            if abs(dx) <= 1.0:
                assert mirrored is label
            else:
                assert mirrored is not label and mirrored is not StateLabel.SUCCESS


def test_state_label_names():
    assert str(StateLabel.SUCCESS) == 'S1'
    assert str(StateLabel.X_NEG_THETA_NEG) == 'S9'


def test_labeled_sample_derives_success():
    sample = LabeledSample({}, OffsetPattern(0.0, 0.0), 1)
    assert sample.label is StateLabel.SUCCESS
    assert sample.assembly_succeeded


# --------------------------------- Truncation ---------------------------------


@pytest.mark.parametrize('t_span, expected', [(2.0, 201), (1.9, 191), (1.8, 181)])
def test_truncate_length(t_span, expected):
    profile = ramp_profile()
    truncated = truncate(profile, t_span)
    assert truncated.length == expected == samples_within(t_span, 0.01)
    assert np.array_equal(truncated.channels, profile.channels[:, :expected])


def test_truncate_to_full_duration_returns_profile():
    profile = ramp_profile()
    assert truncate(profile, profile.duration) is profile


def test_truncate_between_samples_keeps_earlier_samples():
    assert truncate(ramp_profile(), 1.905).length == 191


@pytest.mark.parametrize('t_span', [0.5, 1.9, 2.0, 3.0])
def test_truncate_idempotent(t_span):
    once = truncate(ramp_profile(), t_span)
    twice = truncate(once, t_span)
    assert twice.length == once.length
    assert np.array_equal(twice.channels, once.channels)


@pytest.mark.parametrize('t_span', [0.0, -1.0, 3.5])
def test_truncate_out_of_range(t_span):
    with pytest.raises(HorizonOutOfRange):
        truncate(ramp_profile(), t_span)


def test_profiles_are_read_only():
    profile = ramp_profile()
    with pytest.raises(ValueError):
        profile.channels[0, 0] = 1.0


def test_profile_rejects_bad_shapes():
    with pytest.raises(DataError):
        make_profile(np.zeros((5, 10)))
    with pytest.raises(GridError):
        make_profile(np.zeros((6, 1)))
    with pytest.raises(DataError):
        make_profile(np.full((6, 10), np.nan))


def test_channel_access():
    profile = ramp_profile()
    assert np.array_equal(profile.channel(Channel.TZ), profile.channels[5])
    assert Channel.FX.index == 0


# --------------------------------- Resampling ---------------------------------


def test_resample_keeps_linear_signals():
    profile = ramp_profile(n=201)
    resampled = resample_to_grid(profile, 101)
    assert resampled.length == 101
    assert resampled.duration == pytest.approx(profile.duration)
    assert np.allclose(resampled.channel(Channel.FX), np.linspace(0.0, 2.0, 101))


def test_resample_constant_signal():
    profile = make_profile(np.full((6, 37), 4.25))
    resampled = resample_to_grid(profile, 90)
    assert np.allclose(resampled.channels, 4.25, rtol=0, atol=1e-12)


def piecewise_linear(times, values, at):
    """ Linear interpolation by locating the bracketing samples one point at a time """
    result = []
    for t in at:
        k = min(int(t / (times[1] - times[0])), len(times) - 2)
        weight = (t - times[k]) / (times[k + 1] - times[k])
        result.append((1.0 - weight) * values[k] + weight * values[k + 1])
    return np.array(result)


def test_resample_sine_matches_piecewise_linear_oracle():
    t = np.arange(201) * 0.01
    profile = make_profile(np.vstack([np.sin(2 * np.pi * (k + 1) * t / 2.0) for k in range(6)]))
    resampled = resample_to_grid(profile, 151)
    new_times = np.linspace(0.0, 2.0, 151)
    for channel in Channel:
        expected = piecewise_linear(profile.times, profile.channel(channel), new_times)
        assert np.allclose(resampled.channel(channel), expected, rtol=0, atol=1e-12)
    # Down and back up again stays within the linear interpolation error of a sine
    back = resample_to_grid(resampled, 201)
    assert np.max(np.abs(back.channels - profile.channels)) < 2e-2


def test_resample_same_length_is_identity():
    profile = ramp_profile()
    assert resample_to_grid(profile, profile.length) is profile


def test_resample_needs_two_points():
    with pytest.raises(GridError):
        resample_to_grid(ramp_profile(), 1)


# --------------------------------- CSV files ----------------------------------


def test_csv_round_trip(tmp_path):
    profile = make_profile(np.random.default_rng(0).normal(size=(6, 50)))
    write_profile_csv(tmp_path / 'a.csv', profile)
    loaded = read_profile_csv(tmp_path / 'a.csv')
    assert loaded.sample_period == pytest.approx(0.01)
    assert np.allclose(loaded.channels, profile.channels, rtol=1e-11, atol=1e-12)


def test_csv_header_checked(tmp_path):
    path = tmp_path / 'bad.csv'
    path.write_text('t,a,b,c,d,e,f\n0,0,0,0,0,0,0\n0.01,0,0,0,0,0,0\n')
    with pytest.raises(DataError):
        read_profile_csv(path)


def test_csv_uniform_grid_checked(tmp_path):
    path = tmp_path / 'uneven.csv'
    path.write_text('t,fx,fy,fz,tx,ty,tz\n0,0,0,0,0,0,0\n0.01,0,0,0,0,0,0\n0.03,0,0,0,0,0,0\n')
    with pytest.raises(GridError):
        read_profile_csv(path)


def test_load_dataset(tmp_path):
    profile = ramp_profile(n=20)
    write_profile_csv(tmp_path / 'a.csv', profile)
    write_profile_csv(tmp_path / 'a_plus.csv', make_profile(profile.channels, phase_tag=PhaseTag.PROBE_PLUS_X))
    write_manifest(tmp_path, [{
        'offset': {'dx': 2.0, 'dtheta_z': 0.0},
        'label': 2,
        'files': {'assembly': 'a.csv', 'probe_plus_x': 'a_plus.csv'},
    }])
    [sample] = load_dataset(tmp_path)
    assert sample.label is StateLabel.X_POS
    assert not sample.assembly_succeeded
    assert sample.offset == OffsetPattern(2.0, 0.0)
    assert set(sample.profile_set) == {PhaseTag.ASSEMBLY, PhaseTag.PROBE_PLUS_X}
    assert sample.profile(PhaseTag.PROBE_PLUS_X).phase_tag is PhaseTag.PROBE_PLUS_X


def test_load_dataset_rejects_malformed_manifest(tmp_path):
    write_manifest(tmp_path, [{'offset': {'dx': 0.0, 'dtheta_z': 0.0}, 'label': 12, 'files': {}}])
    with pytest.raises(DataError):
        load_dataset(tmp_path)


def test_load_dataset_entry_without_offset(tmp_path):
    write_profile_csv(tmp_path / 'a.csv', ramp_profile(n=20))
    write_manifest(tmp_path, [{'label': 1, 'files': {'assembly': 'a.csv'}}])
    with pytest.raises(DataError, match='malformed manifest entry'):
        load_dataset(tmp_path)


def test_csv_not_utf8(tmp_path):
    path = tmp_path / 'latin.csv'
    path.write_bytes(b't,fx,fy,fz,tx,ty,tz\n0,0,0,0,0,0,0\n0.01,\xff,0,0,0,0,0\n')
    with pytest.raises(DataError, match='not UTF-8'):
        read_profile_csv(path)


def test_csv_ragged_rows(tmp_path):
    path = tmp_path / 'ragged.csv'
    path.write_text('t,fx,fy,fz,tx,ty,tz\n0,0,0,0,0,0,0\n0.01,0,0,0,0,0\n0.02,0,0,0,0,0,0\n')
    with pytest.raises(DataError, match='data row 2'):
        read_profile_csv(path)
