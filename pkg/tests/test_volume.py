import numpy as np
import pytest

from desco.errors import BoundsError
from desco.volume import (
    LabelVolume,
    OrthogonalAnnotation,
    Plane,
    Volume3D,
    crop_patch,
    extract_slice,
    insert_slice,
)


def test_planes_are_orthogonal():
    assert Plane.A.axis == 2
    assert Plane.B.axis == 0
    assert Plane.A.other is Plane.B
    assert Plane.B.other is Plane.A


def test_extract_constant_volume():
    v = Volume3D(np.full((6, 7, 8), 3.0))
    for plane, index in ((Plane.A, 2), (Plane.B, 5)):
        assert np.all(extract_slice(v, plane, index) == 3.0)


def test_extract_coordinate_field():
    data = np.zeros((8, 8, 8), dtype=np.float32)
    data += np.arange(8)[None, None, :]
    v = Volume3D(data)
    assert np.all(extract_slice(v, Plane.A, 5) == 5.0)


def test_extract_returns_copy():
    v = Volume3D(np.zeros((5, 5, 5)))
    s = extract_slice(v, Plane.A, 0)
    s[0, 0] = 99  # must not touch (or be able to touch) the volume
    assert v.data[0, 0, 0] == 0


def test_extract_insert_round_trip(rng):
    data = rng.normal(size=(6, 7, 8)).astype(np.float32)
    v = Volume3D(data)
    for plane, index in ((Plane.A, 3), (Plane.B, 4)):
        s = extract_slice(v, plane, index)
        rebuilt = insert_slice(np.zeros_like(data), plane, index, s)
        assert np.array_equal(extract_slice(Volume3D(rebuilt), plane, index), s)
        # nonzero voxels lie exactly on the inserted plane
        mask = rebuilt != 0
        idx = np.argwhere(mask)
        if idx.size:
            assert np.all(idx[:, plane.axis] == index)


def test_extract_out_of_range_names_plane_and_extent():
    v = Volume3D(np.zeros((6, 7, 8)))
    with pytest.raises(BoundsError, match=r"plane A.*extent 8"):
        extract_slice(v, Plane.A, 8)
    with pytest.raises(BoundsError, match=r"plane B.*extent 6"):
        extract_slice(v, Plane.B, -1)


def test_crop_full_is_identity(rng):
    v = Volume3D(rng.normal(size=(6, 7, 8)).astype(np.float32), spacing=(1, 2, 3), id="x")
    patch = crop_patch(v, (0, 0, 0), (6, 7, 8))
    assert np.array_equal(patch.data, v.data)
    assert patch.spacing == v.spacing
    assert patch.id == v.id


def test_crop_single_voxel(rng):
    data = rng.normal(size=(6, 7, 8)).astype(np.float32)
    v = Volume3D(data)
    patch = crop_patch(v, (2, 3, 4), (1, 1, 1))
    assert patch.data.shape == (1, 1, 1)
    assert patch.data[0, 0, 0] == data[2, 3, 4]


def test_crop_matches_origin_offset(rng):
    data = rng.normal(size=(10, 10, 10)).astype(np.float32)
    v = Volume3D(data)
    patch = crop_patch(v, (1, 2, 3), (4, 5, 6))
    assert np.array_equal(patch.data, data[1:5, 2:7, 3:9])


def test_crop_out_of_bounds_no_padding():
    v = Volume3D(np.zeros((6, 7, 8)))
    with pytest.raises(BoundsError):
        crop_patch(v, (3, 0, 0), (4, 2, 2))
    with pytest.raises(BoundsError):
        crop_patch(v, (-1, 0, 0), (2, 2, 2))


def test_volume_invariants():
    with pytest.raises(ValueError):
        Volume3D(np.zeros((4, 4)))  # not 3D
    bad = np.zeros((4, 4, 4))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        Volume3D(bad)
    with pytest.raises(ValueError):
        Volume3D(np.zeros((4, 4, 4)), spacing=(1.0, 0.0, 1.0))


def test_volume_data_is_read_only():
    v = Volume3D(np.zeros((4, 4, 4)))
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1


def test_label_values_checked():
    with pytest.raises(ValueError):
        LabelVolume(np.full((4, 4, 4), 2, dtype=np.uint8))
    with pytest.raises(ValueError):
        LabelVolume(np.zeros((4, 4, 4), dtype=np.float32))


def test_annotation_intersection_consistency():
    h, w, d = 6, 7, 8
    vol = np.zeros((h, w, d), dtype=np.uint8)
    vol[2:5, 2:6, 3:7] = 1
    m, n = 4, 3
    good = OrthogonalAnnotation(m, n, vol[:, :, m], vol[n, :, :])
    assert np.array_equal(good.label_a[n, :], good.label_b[:, m])
    assert good.dims == (h, w, d)

    bad_b = vol[n, :, :].copy()
    bad_b[:, m] = 1 - bad_b[:, m]
    with pytest.raises(ValueError, match="intersection"):
        OrthogonalAnnotation(m, n, vol[:, :, m], bad_b)


def test_annotation_index_bounds():
    label_a = np.zeros((6, 7), dtype=np.uint8)
    label_b = np.zeros((7, 8), dtype=np.uint8)
    with pytest.raises(BoundsError):
        OrthogonalAnnotation(8, 0, label_a, label_b)
    with pytest.raises(BoundsError):
        OrthogonalAnnotation(0, 6, label_a, label_b)
