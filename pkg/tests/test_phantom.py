import dataclasses

import numpy as np
import pytest

from cadet.errors import GenerationError, InvalidArgumentError
from cadet.phantom import (
    PhantomSpec,
    generate_cohort,
    generate_phantom,
    load_cohort,
    save_cohort,
)

SMALL = PhantomSpec(
    dims=(48, 48, 48),
    lesion_count_range=(2, 4),
    lesion_radius_mm_range=(2.5, 6.0),
    distractor_count_range=(4, 8),
    seed=42,
)


def test_zero_lesion_range_gives_empty_targets():
    spec = dataclasses.replace(SMALL, lesion_count_range=(0, 0))
    _, targets = generate_phantom(spec, "p000")
    assert targets == []


def test_forced_count_gives_exact_targets_inside_bounds():
    spec = dataclasses.replace(SMALL, lesion_count_range=(3, 3))
    vol, targets = generate_phantom(spec, "p000")
    assert len(targets) == 3
    for t in targets:
        assert vol.contains_point(t.center_mm)
        # analytic bounding sphere inside the volume
        c = np.asarray(t.center_mm)
        assert np.all(c - t.radius_mm >= -1e-9)
        assert np.all(c + t.radius_mm <= vol.extent_mm - np.asarray(vol.spacing_mm) + 1e-9)


def test_lesion_cores_are_bright():
    vol, targets = generate_phantom(SMALL, "p007")
    assert targets, "fixture should have lesions"
    idx = np.indices(vol.dims)
    pos = np.stack([idx[a] * vol.spacing_mm[a] for a in range(3)], axis=-1)
    for t in targets:
        d = np.linalg.norm(pos - np.asarray(t.center_mm), axis=-1)
        core_mean = float(vol.voxels[d <= t.radius_mm / 2].mean())
        assert core_mean - SMALL.background_hu >= 0.5 * t.contrast_hu


def test_determinism_same_seed_same_patient():
    vol_a, targets_a = generate_phantom(SMALL, "p003")
    vol_b, targets_b = generate_phantom(SMALL, "p003")
    np.testing.assert_array_equal(vol_a.voxels, vol_b.voxels)
    assert targets_a == targets_b


def test_patients_differ():
    vol_a, _ = generate_phantom(SMALL, "p000")
    vol_b, _ = generate_phantom(SMALL, "p001")
    assert not np.array_equal(vol_a.voxels, vol_b.voxels)


def test_cohort_controls_have_no_targets():
    cases = generate_cohort(SMALL, 4, control_fraction=1.0)
    assert len(cases) == 4
    assert all(case.targets == () for case in cases)


def test_cohort_control_fraction_counts():
    cases = generate_cohort(SMALL, 8, control_fraction=0.25)
    lesion_free = [c for c in cases if not c.targets]
    assert len(lesion_free) >= 2  # the 2 forced controls; extras only if a draw is 0
    assert cases[-1].targets == () and cases[-2].targets == ()


def test_cohort_determinism_is_bitwise():
    a = generate_cohort(SMALL, 3)
    b = generate_cohort(SMALL, 3)
    for ca, cb in zip(a, b):
        np.testing.assert_array_equal(ca.volume.voxels, cb.volume.voxels)
        assert ca.targets == cb.targets


def test_rejects_bad_ranges():
    with pytest.raises(InvalidArgumentError):
        PhantomSpec(lesion_count_range=(3, 1))
    with pytest.raises(InvalidArgumentError):
        PhantomSpec(lesion_radius_mm_range=(2.0, 100.0))


def test_generation_error_when_placement_impossible():
    # lesions legal individually but too many large ones to separate
    spec = dataclasses.replace(
        SMALL,
        dims=(24, 24, 24),
        lesion_count_range=(20, 20),
        lesion_radius_mm_range=(5.0, 5.0),
    )
    with pytest.raises(GenerationError):
        generate_phantom(spec, "p000")


def test_cohort_round_trip_on_disk(tmp_path):
    cases = generate_cohort(SMALL, 2)
    save_cohort(cases, tmp_path)
    back = load_cohort(tmp_path)
    assert [c.patient_id for c in back] == ["p000", "p001"]
    for orig, loaded in zip(cases, back):
        # volumes are quantized to int16 HU on disk
        np.testing.assert_allclose(loaded.volume.voxels, orig.volume.voxels, atol=0.5)
        assert len(loaded.targets) == len(orig.targets)
        for t0, t1 in zip(orig.targets, loaded.targets):
            assert t1.center_mm == pytest.approx(t0.center_mm)
            assert t1.radius_mm == pytest.approx(t0.radius_mm)
