import numpy as np
import pytest

from desco.errors import NoTargetError
from desco.evaluation import dice
from desco.synthetic import (
    PhantomSpec,
    generate_phantom,
    generate_translation_phantom,
    make_orthogonal_annotation,
    select_annotation_slices,
)
from desco.volume import LabelVolume, Plane
from tests.conftest import GOLDEN_SPEC

# frozen once from the generator
GOLDEN_FG_FRACTION = 0.0612
GOLDEN_MN = (28, 28)


def test_same_seed_bit_identical():
    spec = PhantomSpec(seed=11, n_blobs=2)
    v1, l1 = generate_phantom(spec)
    v2, l2 = generate_phantom(spec)
    assert np.array_equal(v1.data, v2.data)
    assert np.array_equal(l1.data, l2.data)


def test_seeds_differ():
    _, l1 = generate_phantom(PhantomSpec(seed=1))
    _, l2 = generate_phantom(PhantomSpec(seed=2))
    assert not np.array_equal(l1.data, l2.data)


def test_zero_drift_slices_identical():
    vol, lab = generate_phantom(PhantomSpec(n_blobs=1, drift=0.0, noise_sigma=0.0, seed=3))
    zs = sorted(set(np.argwhere(lab.data > 0)[:, 2]))
    assert len(zs) > 5
    for z in zs[1:]:
        assert np.array_equal(lab.data[:, :, z], lab.data[:, :, zs[0]])
        assert np.array_equal(vol.data[:, :, z], vol.data[:, :, zs[0]])


def test_golden_foreground_fraction(golden_phantom):
    _, lab = golden_phantom
    frac = float(lab.data.mean())
    assert 0.02 <= frac <= 0.25
    assert frac == pytest.approx(GOLDEN_FG_FRACTION, abs=1e-4)


def test_golden_annotation_slices(golden_phantom):
    _, lab = golden_phantom
    assert select_annotation_slices(lab) == GOLDEN_MN


def test_spec_validation():
    with pytest.raises(ValueError):
        PhantomSpec(dims=(8, 48, 48))
    with pytest.raises(ValueError):
        PhantomSpec(drift=-0.1)
    with pytest.raises(ValueError):
        PhantomSpec(n_blobs=0)


def test_adjacent_slice_similarity():
    # volumetric Dice between the label and its one-slice shift, per plane
    _, lab = generate_phantom(PhantomSpec(n_blobs=2, drift=1.0, noise_sigma=0.05, seed=5))
    for axis in (Plane.A.axis, Plane.B.axis):
        a = np.take(lab.data, range(0, lab.data.shape[axis] - 1), axis=axis)
        b = np.take(lab.data, range(1, lab.data.shape[axis]), axis=axis)
        assert dice(a, b) >= 0.8


def test_select_slices_centered_cube():
    data = np.zeros((48, 48, 48), dtype=np.uint8)
    data[16:33, 16:33, 16:33] = 1  # odd extent, centroid exactly 24
    m, n = select_annotation_slices(LabelVolume(data))
    assert (m, n) == (24, 24)


def test_select_slices_tie_break_lower():
    data = np.zeros((48, 48, 48), dtype=np.uint8)
    data[20:30, 20:30, 10:20] = 1  # centroid along z is 14.5
    m, n = select_annotation_slices(LabelVolume(data))
    assert m == 14
    assert n == 24  # centroid 24.5 rounds down too


def test_select_slices_intersect_foreground():
    # two blobs whose centroid slice is empty: the pick nudges to foreground
    data = np.zeros((48, 48, 48), dtype=np.uint8)
    data[10:20, 10:20, 5:15] = 1
    data[30:44, 30:44, 33:43] = 1
    lab = LabelVolume(data)
    m, n = select_annotation_slices(lab)
    assert lab.data[:, :, m].any()
    assert lab.data[n, :, :].any()


def test_select_slices_empty_foreground():
    with pytest.raises(NoTargetError):
        select_annotation_slices(LabelVolume(np.zeros((16, 16, 16), dtype=np.uint8)))


def test_make_annotation_copies_slices(golden_phantom):
    _, lab = golden_phantom
    m, n = select_annotation_slices(lab)
    ann = make_orthogonal_annotation(lab, m, n)
    assert np.array_equal(ann.label_a, lab.data[:, :, m])
    assert np.array_equal(ann.label_b, lab.data[n, :, :])


def test_annotation_sparsity(golden_phantom):
    _, lab = golden_phantom
    h, w, d = lab.shape
    m, n = select_annotation_slices(lab)
    ann = make_orthogonal_annotation(lab, m, n)
    labeled_voxels = ann.label_a.size + ann.label_b.size
    assert labeled_voxels <= h * w + w * d
    assert labeled_voxels < h * w * d


def test_translation_phantom_shift_is_exact():
    shift = (1.0, 1.0)
    _, lab = generate_translation_phantom(dims=(48, 48, 48), shift_per_slice=shift, seed=0)
    # within the central band (shape clear of the borders) each slice is the
    # previous one translated by exactly (1, 1)
    for z in range(14, 34):
        cur = lab.data[:, :, z]
        nxt = lab.data[:, :, z + 1]
        rolled = np.roll(np.roll(cur, -1, axis=0), -1, axis=1)
        assert np.array_equal(rolled[:-1, :-1], nxt[:-1, :-1])
    # every slice keeps some foreground
    assert all(lab.data[:, :, z].any() for z in range(48))


def test_translation_phantom_rejects_fast_shift():
    with pytest.raises(ValueError):
        generate_translation_phantom(shift_per_slice=(1.5, 0.0))


def test_golden_spec_is_stable():
    # the golden fixtures above assume this exact spec
    assert GOLDEN_SPEC == PhantomSpec(dims=(48, 48, 48), n_blobs=1, drift=0.5,
                                      noise_sigma=0.05, seed=7)
