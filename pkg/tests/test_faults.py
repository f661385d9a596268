from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from pydantic import ValidationError

from flowfront.services.cdekf import ObservationFrame
from flowfront.services.faults import FaultScenario, affected_count, apply_scenario


def frames(n_frames=50, n_sensors=8):
    rng = np.random.default_rng(0)
    return [
        ObservationFrame(t=float(k), z=rng.uniform(0.0, 0.9, n_sensors), mask=np.ones(n_sensors, bool))
        for k in range(n_frames)
    ]


def stack(fs):
    return np.vstack([f.z for f in fs]), np.vstack([f.mask for f in fs])


def test_none_is_identity():
    src = frames()
    out = apply_scenario(src, FaultScenario())
    z0, m0 = stack(src)
    z1, m1 = stack(out)
    assert_allclose(z1, z0)
    assert np.array_equal(m1, m0)


def test_drop_sensor_masks_whole_column():
    out = apply_scenario(frames(), FaultScenario(kind="drop_sensor", sensors=[3]))
    _, mask = stack(out)
    assert not mask[:, 3].any()
    assert mask[:, [0, 1, 2, 4, 5, 6, 7]].all()
    assert all(f.effective_dim == 7 for f in out)


def test_partial_dropout_count():
    out = apply_scenario(frames(), FaultScenario(kind="partial_dropout", sensors=[2, 4, 6], fraction=0.7), seed=1)
    _, mask = stack(out)
    for s in (2, 4, 6):
        assert (~mask[:, s]).sum() == 35
    assert mask[:, [0, 1, 3, 5, 7]].all()


def test_bias_adds_offset_to_chosen_rows():
    src = frames()
    out = apply_scenario(src, FaultScenario(kind="bias", sensors=[3], fraction=0.5, bias=0.2), seed=2)
    z0, _ = stack(src)
    z1, mask = stack(out)
    delta = z1 - z0
    assert np.isclose(delta[:, 3], 0.2).sum() == 25
    assert np.isclose(delta[:, 3], 0.0).sum() == 25
    assert_allclose(np.delete(delta, 3, axis=1), 0.0)
    assert mask.all()


def test_input_frames_are_not_mutated():
    src = frames()
    before = stack(src)
    apply_scenario(src, FaultScenario(kind="partial_dropout", sensors=[1], fraction=1.0), seed=0)
    apply_scenario(src, FaultScenario(kind="bias", sensors=[1], fraction=1.0), seed=0)
    after = stack(src)
    assert_allclose(after[0], before[0])
    assert np.array_equal(after[1], before[1])


def test_same_seed_same_rows_and_scenario_seed_wins():
    sc = FaultScenario(kind="partial_dropout", sensors=[5], fraction=0.3)
    a = stack(apply_scenario(frames(), sc, seed=7))[1]
    b = stack(apply_scenario(frames(), sc, seed=7))[1]
    assert np.array_equal(a, b)
    pinned = sc.model_copy(update={"seed": 7})
    c = stack(apply_scenario(frames(), pinned, seed=99))[1]
    assert np.array_equal(a, c)


def test_sensor_index_out_of_range():
    with pytest.raises(ValueError, match="outside"):
        apply_scenario(frames(n_sensors=5), FaultScenario(kind="drop_sensor", sensors=[5]))


def test_fraction_is_bounded():
    with pytest.raises(ValidationError):
        FaultScenario(kind="bias", sensors=[0], fraction=1.5)


@settings(max_examples=40)
@given(fraction=st.floats(0.0, 1.0), n_frames=st.integers(1, 80), seed=st.integers(0, 1000))
def test_dropout_count_is_floor_of_fraction(fraction, n_frames, seed):
    out = apply_scenario(
        frames(n_frames, 4), FaultScenario(kind="partial_dropout", sensors=[0, 3], fraction=fraction), seed=seed
    )
    _, mask = stack(out)
    expected = affected_count(fraction, n_frames)
    assert expected == math.floor(fraction * n_frames + 1e-9)
    assert (~mask[:, 0]).sum() == expected
    assert (~mask[:, 3]).sum() == expected


def test_labels():
    assert FaultScenario().label == "none"
    assert FaultScenario(kind="drop_sensor", sensors=[3]).label == "drop_sensor[3]"
    assert FaultScenario(kind="partial_dropout", sensors=[1, 2], fraction=0.7).label == "partial_dropout[1+2]@0.7"
    assert FaultScenario(kind="bias", sensors=[3], fraction=0.5, bias=0.2).label == "bias[3]@0.5+0.2"


@pytest.mark.parametrize("kind", ["partial_dropout", "bias"])
def test_sampling_scenario_without_any_seed_is_rejected(kind):
    with pytest.raises(ValueError, match="needs a seed"):
        apply_scenario(frames(), FaultScenario(kind=kind, sensors=[1], fraction=0.5))


def test_drop_sensor_needs_no_seed():
    _, mask = stack(apply_scenario(frames(), FaultScenario(kind="drop_sensor", sensors=[1])))
    assert not mask[:, 1].any()
