import numpy as np
import pytest
import torch

from desco import objectives
from desco.model import MAX_ENTROPY, ModelConfig, SegmentationModel, uncertainty_mask
from desco.schedules import ScheduleConfig


@pytest.fixture(scope="module")
def model():
    return SegmentationModel(ModelConfig(seed=1))


@pytest.fixture(scope="module")
def patch():
    return np.random.default_rng(0).normal(size=(32, 32, 16)).astype(np.float32)


def test_untrained_predicts_half(model, patch):
    p = model.predict(patch)
    assert np.abs(p - 0.5).max() < 1e-6


def test_deterministic_forward(model, patch):
    assert np.array_equal(model.predict(patch), model.predict(patch))


def test_output_shape_matches_input(model):
    for shape in ((32, 32, 16), (16, 16, 16), (48, 48, 48)):
        p = model.predict(np.zeros(shape, dtype=np.float32))
        assert p.shape == shape
        assert ((p >= 0) & (p <= 1)).all()


def test_incompatible_patch_rejected(model):
    with pytest.raises(ValueError, match="divisible"):
        model.predict(np.zeros((30, 32, 16), dtype=np.float32))
    with pytest.raises(ValueError):
        model.predict(np.zeros((32, 32), dtype=np.float32))


def test_different_seeds_different_parameters():
    m1 = SegmentationModel(ModelConfig(seed=1))
    m2 = SegmentationModel(ModelConfig(seed=2))
    diff = sum(
        float((a - b).detach().abs().sum())
        for a, b in zip(m1.net.parameters(), m2.net.parameters())
    )
    assert diff > 0


def test_same_seed_same_parameters():
    m1 = SegmentationModel(ModelConfig(seed=5))
    m2 = SegmentationModel(ModelConfig(seed=5))
    for a, b in zip(m1.net.parameters(), m2.net.parameters()):
        assert torch.equal(a, b)


def test_stochastic_passes_differ():
    m = SegmentationModel(ModelConfig(seed=3))
    # train one step away from the zero head so dropout can show up
    patch = np.random.default_rng(1).normal(size=(16, 16, 16)).astype(np.float32)
    y = (np.random.default_rng(2).random((16, 16, 16)) < 0.5).astype(np.float64)
    _train_steps(m, patch, y, steps=5)
    a = m.predict(patch, stochastic=True)
    b = m.predict(patch, stochastic=True)
    assert not np.array_equal(a, b)


def test_uncertainty_needs_two_passes(model, patch):
    with pytest.raises(ValueError):
        model.uncertainty(patch, passes=1)


def test_zero_dropout_entropy_equals_single_pass(patch):
    m = SegmentationModel(ModelConfig(dropout=0.0, seed=4))
    mean, entropy = m.uncertainty(patch, passes=4)
    single = m.predict(patch)
    assert np.allclose(mean, single, atol=1e-7)
    pc = np.clip(single, 1e-12, 1 - 1e-12)
    ref = -(pc * np.log(pc) + (1 - pc) * np.log1p(-pc))
    assert np.allclose(entropy, ref, atol=1e-6)


def test_entropy_analytic_values():
    m = SegmentationModel(ModelConfig(seed=1))
    patch = np.zeros((16, 16, 16), dtype=np.float32)
    _, entropy = m.uncertainty(patch, passes=2)
    # untrained model: p = 0.5 everywhere, entropy is exactly ln 2
    assert np.allclose(entropy, MAX_ENTROPY, atol=1e-9)


def test_entropy_near_zero_for_confident():
    p = np.array([1e-12, 1 - 1e-12])
    pc = np.clip(p, 1e-12, 1 - 1e-12)
    ent = -(pc * np.log(pc) + (1 - pc) * np.log1p(-pc))
    assert ent.max() < 1e-9


def test_uncertainty_mask_thresholds():
    cfg = ScheduleConfig(total_iters=6000)
    zeros = np.zeros((4, 4, 4))
    assert uncertainty_mask(zeros, 0, cfg).all()
    maximal = np.full((4, 4, 4), MAX_ENTROPY)
    assert not uncertainty_mask(maximal, 0, cfg).any()
    # ramped threshold admits a mid-entropy voxel late but not early
    mid = np.full((1, 1, 1), 0.80 * MAX_ENTROPY)
    assert not uncertainty_mask(mid, 0, cfg).any()
    assert uncertainty_mask(mid, 6000, cfg).all()


def test_mask_fraction_non_decreasing(rng):
    cfg = ScheduleConfig(total_iters=6000)
    entropy = rng.uniform(0, MAX_ENTROPY, (8, 8, 8))
    fracs = [uncertainty_mask(entropy, it, cfg).mean() for it in range(0, 6001, 500)]
    assert all(b >= a for a, b in zip(fracs, fracs[1:]))


def test_checkpoint_round_trip(tmp_path, model, patch):
    path = tmp_path / "model.pt"
    model.save(path)
    back = SegmentationModel.load(path)
    for a, b in zip(model.net.parameters(), back.net.parameters()):
        assert torch.equal(a, b)
    assert back.config == model.config
    assert np.array_equal(back.predict(patch), model.predict(patch))


def test_checkpoint_version_checked(tmp_path, model):
    path = tmp_path / "model.pt"
    model.save(path)
    blob = torch.load(path, weights_only=False)
    blob["version"] = 99
    torch.save(blob, path)
    with pytest.raises(ValueError, match="version"):
        SegmentationModel.load(path)


def _train_steps(m, patch, y, steps, lr=0.05):
    w = np.ones_like(y)
    opt = torch.optim.SGD(m.parameters(), lr=lr, momentum=0.9, weight_decay=1e-4)
    losses = []
    for _ in range(steps):
        opt.zero_grad(set_to_none=True)
        p_t = m.forward_t(patch, stochastic=False)
        p = p_t.detach().numpy().astype(np.float64)
        losses.append(objectives.supervised_loss(p, y, w))
        g = objectives.loss_gradients(p, y, w, "sup")
        p_t.backward(torch.from_numpy(g.astype(np.float32)))
        opt.step()
    return losses


def test_gradient_flow_descends():
    # a fixed tiny batch: the descent curve is monotone within noise
    m = SegmentationModel(ModelConfig(seed=9))
    rng = np.random.default_rng(3)
    patch = rng.normal(size=(16, 16, 16)).astype(np.float32)
    x, yy, z = np.mgrid[0:16, 0:16, 0:16]
    y = ((((x - 8) / 5) ** 2 + ((yy - 8) / 4) ** 2 + ((z - 8) / 5) ** 2) <= 1).astype(np.float64)
    losses = _train_steps(m, patch, y, steps=51, lr=0.05)
    assert losses[1] < losses[0]  # a single step strictly decreases the loss
    inversions = sum(1 for a, b in zip(losses, losses[1:]) if b > a)
    assert inversions <= 5
    assert losses[-1] < 0.5 * losses[0]
