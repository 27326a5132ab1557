import numpy as np
import pytest

from desco.labels import PROV_GT, PROV_PSEUDO, build_weight_map, label_mix
from desco.registration import PseudoLabelVolume
from desco.volume import OrthogonalAnnotation, Plane

DIMS = (8, 8, 8)
M, N = 3, 5


def _annotation(label3d):
    return OrthogonalAnnotation(M, N, label3d[:, :, M], label3d[N, :, :])


@pytest.fixture()
def dense_label(rng):
    lab = (rng.random(DIMS) < 0.3).astype(np.uint8)
    lab[N, 2, M] = 1  # keep the intersection line nontrivial
    return lab


def test_mix_with_perfect_pseudo(dense_label):
    ann = _annotation(dense_label)
    pseudo = PseudoLabelVolume(dense_label.copy(), Plane.A, M)
    mixed = label_mix(pseudo, ann)
    assert np.array_equal(mixed.data, dense_label)


def test_mix_with_empty_pseudo(dense_label):
    ann = _annotation(dense_label)
    pseudo = PseudoLabelVolume(np.zeros(DIMS, dtype=np.uint8), Plane.A, M)
    mixed = label_mix(pseudo, ann)
    k = int(ann.label_a.sum()) + int(ann.label_b.sum()) - int(ann.label_a[N, :].sum())
    assert int(mixed.data.sum()) == k
    assert np.all(mixed.provenance[mixed.data > 0] == PROV_GT)


def test_mix_provenance_marks_slices(dense_label):
    ann = _annotation(dense_label)
    pseudo = PseudoLabelVolume(np.zeros(DIMS, dtype=np.uint8), Plane.A, M)
    mixed = label_mix(pseudo, ann)
    gt = mixed.provenance == PROV_GT
    assert gt[:, :, M].all()
    assert gt[N, :, :].all()
    other = np.ones(DIMS, dtype=bool)
    other[:, :, M] = False
    other[N, :, :] = False
    assert (mixed.provenance[other] == PROV_PSEUDO).all()


def test_mix_shape_mismatch(dense_label):
    ann = _annotation(dense_label)
    pseudo = PseudoLabelVolume(np.zeros((8, 8, 10), dtype=np.uint8), Plane.A, M)
    with pytest.raises(ValueError, match="shape"):
        label_mix(pseudo, ann)


def test_weight_formula_example(dense_label):
    ann = _annotation(dense_label)
    wm = build_weight_map(ann, Plane.A, M, 0.95, DIMS)
    # a voxel two slices from the source, off both annotated slices
    assert wm.data[0, 0, M + 2] == pytest.approx(0.95**2, abs=1e-15)
    assert wm.data[0, 0, M + 2] == pytest.approx(0.9025, abs=1e-12)


def test_weight_is_one_on_both_annotated_slices(dense_label):
    ann = _annotation(dense_label)
    for plane, src in ((Plane.A, M), (Plane.B, N)):
        wm = build_weight_map(ann, plane, src, 0.5, DIMS)
        assert (wm.data[:, :, M] == 1.0).all()
        assert (wm.data[N, :, :] == 1.0).all()


def test_weight_alpha_zero_is_sparse_supervision(dense_label):
    ann = _annotation(dense_label)
    wm = build_weight_map(ann, Plane.A, M, 0.0, DIMS)
    off = np.ones(DIMS, dtype=bool)
    off[:, :, M] = False
    off[N, :, :] = False
    assert (wm.data[off] == 0.0).all()
    assert (wm.data[~off] == 1.0).all()


def test_weight_monotone_in_distance(dense_label):
    ann = _annotation(dense_label)
    wm = build_weight_map(ann, Plane.A, M, 0.7, DIMS)
    profile = wm.data[0, 0, :]  # row away from the plane-B slice
    d = np.abs(np.arange(8) - M)
    order = np.argsort(d)
    assert all(profile[order[i + 1]] <= profile[order[i]] for i in range(7))


def test_weight_ordering_in_alpha(dense_label):
    ann = _annotation(dense_label)
    w1 = build_weight_map(ann, Plane.A, M, 0.3, DIMS)
    w2 = build_weight_map(ann, Plane.A, M, 0.8, DIMS)
    assert (w1.data <= w2.data + 1e-15).all()


def test_weight_constant_per_slice_except_crossing(dense_label):
    ann = _annotation(dense_label)
    wm = build_weight_map(ann, Plane.A, M, 0.6, DIMS)
    for k in range(8):
        if k == M:
            continue
        sl = wm.data[:, :, k]
        off_rows = np.delete(sl, N, axis=0)
        assert len(np.unique(off_rows)) == 1
        assert (sl[N, :] == 1.0).all()


def test_weight_brute_force_equality(dense_label):
    ann = _annotation(dense_label)
    for alpha in (0.0, 0.5, 0.95):
        for plane, src in ((Plane.A, M), (Plane.B, N)):
            wm = build_weight_map(ann, plane, src, alpha, DIMS)
            ref = np.empty(DIMS)
            for i in range(8):
                for j in range(8):
                    for k in range(8):
                        if k == M or i == N:
                            ref[i, j, k] = 1.0
                        else:
                            d = abs((k if plane is Plane.A else i) - src)
                            ref[i, j, k] = alpha ** float(d)
            assert np.array_equal(wm.data, ref)


def test_weight_alpha_out_of_range(dense_label):
    ann = _annotation(dense_label)
    with pytest.raises(ValueError):
        build_weight_map(ann, Plane.A, M, 1.0, DIMS)
    with pytest.raises(ValueError):
        build_weight_map(ann, Plane.A, M, -0.1, DIMS)
