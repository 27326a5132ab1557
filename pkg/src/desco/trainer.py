"""Dense-to-sparse co-training loop and sliding-window inference.

Two identically structured networks with different seeds are trained
side by side. Each iteration draws one labeled and one unlabeled volume,
crops a patch from each, and gives every model

* a supervised loss on the labeled patch against its own plane's mixed
  label under the current credibility weight map, and
* a cross-supervision loss on the unlabeled patch against the partner's
  uncertainty-masked one-hot prediction (computed from the partner's
  parameters as of the start of the iteration, so updates are symmetric).

The total objective is the scheduled affine combination of the two; one
SGD step (momentum, weight decay) follows per model. Weight maps are
regenerated whenever the decay-rate block changes. Three variants share
the loop: the full schedule, a sparse-only run (credibility zero away from
the annotated slices from the start) and a static-dense run (credibility
frozen, no cross-supervision).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import objectives
from .errors import TrainingDivergedError
from .evaluation import dice as _dice_metric
from .io import ManifestEntry, load_label, load_volume
from .labels import MixedLabel, WeightMap, build_weight_map, label_mix
from .model import ModelConfig, SegmentationModel, uncertainty_mask
from .registration import RegistrationConfig, propagate_orthogonal, PseudoLabelVolume
from .schedules import ScheduleConfig, alpha_at, lambda_at, lr_at
from .synthetic import make_orthogonal_annotation
from .volume import LabelVolume, OrthogonalAnnotation, Plane, Volume3D

__all__ = [
    "VARIANTS",
    "HISTORY_COLUMNS",
    "TrainConfig",
    "TrainState",
    "LabeledVolumeData",
    "prepare_labeled_volume",
    "train_step",
    "train_desco",
    "sliding_window_predict",
    "write_history_csv",
]

logger = logging.getLogger(__name__)

VARIANTS = ("desco", "sparse_only", "static_dense")

HISTORY_COLUMNS = [
    "iter", "alpha", "lambda", "lr",
    "loss_sup_a", "loss_sup_b", "loss_cross_a", "loss_cross_b",
    "mask_frac", "val_dice_a", "val_dice_b", "val_dice_ens",
]


@dataclass(frozen=True)
class TrainConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    patch_size: tuple[int, int, int] = (32, 32, 32)
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    uncertainty_passes: int = 8
    eval_every: int = 100
    variant: str = "desco"
    labeled_patch_bias: float = 0.9  # chance a labeled patch must contain annotated voxels
    channels: tuple[int, int, int] = (8, 16, 32)
    dropout: float = 0.1
    val_strides: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.uncertainty_passes < 2:
            raise ValueError("uncertainty_passes must be >= 2")

    def model_seeds(self) -> tuple[int, int]:
        return 1000 * self.seed + 1, 1000 * self.seed + 2

    def alpha_fn(self, iteration: int) -> float:
        if self.variant == "sparse_only":
            return 0.0
        if self.variant == "static_dense":
            return self.schedule.alpha0
        return alpha_at(iteration, self.schedule)

    def lambda_fn(self, iteration: int) -> float:
        if self.variant == "static_dense":
            return 0.0
        return lambda_at(iteration, self.schedule)


@dataclass
class LabeledVolumeData:
    """One labeled volume, propagated once before training starts."""

    volume: Volume3D
    annotation: OrthogonalAnnotation
    mixed_a: MixedLabel
    mixed_b: MixedLabel
    weight_a: WeightMap | None = None
    weight_b: WeightMap | None = None

    def refresh_weights(self, alpha: float) -> None:
        dims = self.volume.shape
        self.weight_a = build_weight_map(self.annotation, Plane.A, self.annotation.m, alpha, dims)
        self.weight_b = build_weight_map(self.annotation, Plane.B, self.annotation.n, alpha, dims)

    def mixed_for(self, plane: Plane) -> MixedLabel:
        return self.mixed_a if plane is Plane.A else self.mixed_b

    def weight_for(self, plane: Plane) -> WeightMap:
        return self.weight_a if plane is Plane.A else self.weight_b


@dataclass
class TrainState:
    config: TrainConfig
    model_a: SegmentationModel
    model_b: SegmentationModel
    optimizer_a: torch.optim.SGD
    optimizer_b: torch.optim.SGD
    labeled: list[LabeledVolumeData]
    unlabeled: list[Volume3D]
    rng: np.random.Generator
    plane_of_a: Plane = Plane.A
    iteration: int = 0
    alpha: float = 0.0
    lam: float = 0.0
    lr: float = 0.0
    history: list[dict] = field(default_factory=list)


def prepare_labeled_volume(
    volume: Volume3D,
    annotation: OrthogonalAnnotation,
    cfg: TrainConfig,
) -> LabeledVolumeData:
    """Run label propagation once and mix with the sparse ground truth.

    The sparse-only variant never reads pseudo labels (their weights are
    identically zero), so propagation is skipped there.
    """
    if cfg.variant == "sparse_only":
        zeros = np.zeros(volume.shape, dtype=np.uint8)
        pa = PseudoLabelVolume(
            _stamp_slice(zeros, annotation.label_a, Plane.A, annotation.m), Plane.A, annotation.m
        )
        pb = PseudoLabelVolume(
            _stamp_slice(zeros, annotation.label_b, Plane.B, annotation.n), Plane.B, annotation.n
        )
    else:
        pa, pb = propagate_orthogonal(volume, annotation, cfg.registration)
    data = LabeledVolumeData(
        volume=volume,
        annotation=annotation,
        mixed_a=label_mix(pa, annotation),
        mixed_b=label_mix(pb, annotation),
    )
    data.refresh_weights(cfg.alpha_fn(0))
    return data


def _stamp_slice(zeros: np.ndarray, slice2d: np.ndarray, plane: Plane, index: int) -> np.ndarray:
    out = zeros.copy()
    if plane is Plane.A:
        out[:, :, index] = slice2d
    else:
        out[index, :, :] = slice2d
    return out


def _uniform_origin(rng: np.random.Generator, shape, size) -> tuple[int, int, int]:
    return tuple(int(rng.integers(0, shape[ax] - size[ax] + 1)) for ax in range(3))


def _labeled_origin(
    rng: np.random.Generator, shape, size, annotation: OrthogonalAnnotation, bias: float
) -> tuple[int, int, int]:
    """Sample a patch origin, usually constrained to cover an annotated slice."""
    if rng.random() >= bias:
        return _uniform_origin(rng, shape, size)
    plane = Plane.A if rng.random() < 0.5 else Plane.B
    ax = plane.axis
    idx = annotation.index_for(plane)
    lo = max(0, idx - size[ax] + 1)
    hi = min(shape[ax] - size[ax], idx)
    origin = list(_uniform_origin(rng, shape, size))
    origin[ax] = int(rng.integers(lo, hi + 1)) if hi >= lo else origin[ax]
    return tuple(origin)


def _crop(arr: np.ndarray, origin, size) -> np.ndarray:
    sl = tuple(slice(origin[ax], origin[ax] + size[ax]) for ax in range(3))
    return arr[sl]


def _sum_weights(w: np.ndarray) -> float:
    return float(w.sum())


def _model_losses_and_step(
    model: SegmentationModel,
    optimizer: torch.optim.SGD,
    img_l: np.ndarray,
    y_l: np.ndarray,
    w_l: np.ndarray,
    img_u: np.ndarray,
    target_u: np.ndarray,
    mask_u: np.ndarray,
    lam: float,
    lr: float,
) -> tuple[float, float]:
    """Compute both losses, inject analytic gradients, take one SGD step.

    The labeled and unlabeled patches go through one batched forward; the
    per-voxel loss gradients are scaled by the objective's mixing weights
    and fed back through the network in a single backward pass.
    """
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.zero_grad(set_to_none=True)

    p_t = model.forward_batch_t(np.stack([img_l, img_u]), stochastic=True)
    p = p_t.detach().numpy().astype(np.float64)
    grad = np.zeros_like(p)

    if _sum_weights(w_l) > 0:
        loss_sup = objectives.supervised_loss(p[0], y_l, w_l)
        if lam < 1.0:
            grad[0] = objectives.loss_gradients(p[0], y_l, w_l, "sup") * (1.0 - lam)
    else:
        # the sampled patch carries no supervision mass (possible once the
        # credibility decay reaches zero); only the cross term trains
        loss_sup = 0.0
    loss_cross = objectives.cross_supervision_loss(p[1], target_u, mask_u)
    if lam > 0 and mask_u.sum() > 0:
        grad[1] = objectives.loss_gradients(p[1], target_u, mask_u, "cross") * lam

    p_t.backward(torch.from_numpy(grad.astype(np.float32)))
    optimizer.step()
    return loss_sup, loss_cross


def train_step(
    state: TrainState,
    labeled: LabeledVolumeData,
    unlabeled: Volume3D,
) -> dict:
    """One co-training iteration; returns the history row (without val columns)."""
    cfg = state.config
    it = state.iteration
    alpha = cfg.alpha_fn(it)
    lam = cfg.lambda_fn(it)
    lr = lr_at(it, cfg.schedule)
    if alpha != state.alpha or labeled.weight_a is None:
        for lv in state.labeled:
            lv.refresh_weights(alpha)
    state.alpha, state.lam, state.lr = alpha, lam, lr

    size = cfg.patch_size
    origin_l = _labeled_origin(
        state.rng, labeled.volume.shape, size, labeled.annotation, cfg.labeled_patch_bias
    )
    origin_u = _uniform_origin(state.rng, unlabeled.shape, size)
    img_l = _crop(labeled.volume.data, origin_l, size)
    img_u = _crop(unlabeled.data, origin_u, size)

    plane_a, plane_b = state.plane_of_a, state.plane_of_a.other
    y_a = _crop(labeled.mixed_for(plane_a).data, origin_l, size)
    w_a = _crop(labeled.weight_for(plane_a).data, origin_l, size)
    y_b = _crop(labeled.mixed_for(plane_b).data, origin_l, size)
    w_b = _crop(labeled.weight_for(plane_b).data, origin_l, size)

    # cross targets from start-of-iteration parameters, before either update;
    # the one-hot target and the uncertainty mask share the MC-dropout passes
    mask_frac = 0.0
    targets = {}
    for tag, model in (("a", state.model_a), ("b", state.model_b)):
        if lam > 0:
            mean, entropy = model.uncertainty(img_u, cfg.uncertainty_passes)
            onehot = (mean > 0.5).astype(np.float64)
            mask = uncertainty_mask(entropy, it, cfg.schedule).astype(np.float64)
        else:
            onehot = np.zeros(size, dtype=np.float64)
            mask = np.zeros(size, dtype=np.float64)
        targets[tag] = (onehot, mask)
        mask_frac += float(mask.mean()) / 2.0

    sup_a, cross_a = _model_losses_and_step(
        state.model_a, state.optimizer_a, img_l, y_a, w_a,
        img_u, targets["b"][0], targets["b"][1], lam, lr,
    )
    sup_b, cross_b = _model_losses_and_step(
        state.model_b, state.optimizer_b, img_l, y_b, w_b,
        img_u, targets["a"][0], targets["a"][1], lam, lr,
    )

    for name, value in (("loss_sup_a", sup_a), ("loss_sup_b", sup_b),
                        ("loss_cross_a", cross_a), ("loss_cross_b", cross_b)):
        if not np.isfinite(value):
            raise TrainingDivergedError(
                f"{name} is not finite at iteration {it}: alpha={alpha:.6g} "
                f"lambda={lam:.6g} lr={lr:.6g} labeled={labeled.volume.id!r}@{origin_l} "
                f"unlabeled={unlabeled.id!r}@{origin_u}"
            )

    row = {
        "iter": it, "alpha": alpha, "lambda": lam, "lr": lr,
        "loss_sup_a": sup_a, "loss_sup_b": sup_b,
        "loss_cross_a": cross_a, "loss_cross_b": cross_b,
        "mask_frac": mask_frac,
        "val_dice_a": "", "val_dice_b": "", "val_dice_ens": "",
    }
    state.iteration = it + 1
    return row


def _validate(state: TrainState, val_pairs, strides) -> tuple[float, float, float]:
    cfg = state.config
    scores_a, scores_b, scores_e = [], [], []
    for vol, gt in val_pairs:
        prob_a = sliding_window_predict([state.model_a], vol, cfg.patch_size, strides)
        prob_b = sliding_window_predict([state.model_b], vol, cfg.patch_size, strides)
        ens = (prob_a + prob_b) / 2.0
        scores_a.append(_dice_metric(prob_a > 0.5, gt))
        scores_b.append(_dice_metric(prob_b > 0.5, gt))
        scores_e.append(_dice_metric(ens > 0.5, gt))
    return float(np.mean(scores_a)), float(np.mean(scores_b)), float(np.mean(scores_e))


def train_desco(
    labeled_volumes: list[tuple[Volume3D, OrthogonalAnnotation]],
    unlabeled_volumes: list[Volume3D],
    cfg: TrainConfig,
    val_pairs: list[tuple[Volume3D, LabelVolume]] | None = None,
    out_dir: str | Path | None = None,
    prepared: list[LabeledVolumeData] | None = None,
) -> tuple[SegmentationModel, SegmentationModel, list[dict]]:
    """Full training run; returns both models and the per-iteration history."""
    if not labeled_volumes and not prepared:
        raise ValueError("need at least one labeled volume")
    if not unlabeled_volumes:
        raise ValueError("need at least one unlabeled volume")

    if prepared is None:
        prepared = [prepare_labeled_volume(v, ann, cfg) for v, ann in labeled_volumes]
    seed_a, seed_b = cfg.model_seeds()
    model_a = SegmentationModel(ModelConfig(cfg.channels, cfg.dropout, seed_a))
    model_b = SegmentationModel(ModelConfig(cfg.channels, cfg.dropout, seed_b))
    opt_a = torch.optim.SGD(model_a.parameters(), lr=cfg.schedule.lr0,
                            momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    opt_b = torch.optim.SGD(model_b.parameters(), lr=cfg.schedule.lr0,
                            momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    state = TrainState(
        config=cfg, model_a=model_a, model_b=model_b,
        optimizer_a=opt_a, optimizer_b=opt_b,
        labeled=prepared, unlabeled=list(unlabeled_volumes),
        rng=np.random.default_rng(cfg.seed),
        alpha=float("nan"),
    )
    strides = cfg.val_strides or tuple(max(1, s // 2) for s in cfg.patch_size)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for it in range(cfg.schedule.total_iters):
        lv = state.labeled[int(state.rng.integers(len(state.labeled)))]
        uv = state.unlabeled[int(state.rng.integers(len(state.unlabeled)))]
        row = train_step(state, lv, uv)
        if (it + 1) % cfg.eval_every == 0:
            if val_pairs:
                da, db, de = _validate(state, val_pairs, strides)
                row["val_dice_a"], row["val_dice_b"], row["val_dice_ens"] = da, db, de
            if out_dir is not None:
                state.model_a.save(out_dir / "model_a.pt")
                state.model_b.save(out_dir / "model_b.pt")
        state.history.append(row)
    if out_dir is not None:
        state.model_a.save(out_dir / "model_a.pt")
        state.model_b.save(out_dir / "model_b.pt")
        write_history_csv(state.history, out_dir / "history.csv")
    return state.model_a, state.model_b, state.history


def sliding_window_predict(
    models,
    volume: Volume3D,
    patch_size: tuple[int, int, int],
    strides: tuple[int, int, int],
) -> np.ndarray:
    """Average overlapping patch predictions over the full volume.

    With several models their probabilities are averaged (ensemble).
    Windows tile each axis at the given stride, with a final window pinned
    to the end so every voxel is covered.
    """
    if not isinstance(models, (list, tuple)):
        models = [models]
    data = volume.data if hasattr(volume, "data") else np.asarray(volume)
    shape = data.shape
    for ax in range(3):
        if patch_size[ax] > shape[ax]:
            raise ValueError(f"patch {patch_size} exceeds volume shape {shape}")

    def positions(ax):
        stop = shape[ax] - patch_size[ax]
        pos = list(range(0, stop + 1, strides[ax]))
        if pos[-1] != stop:
            pos.append(stop)
        return pos

    windows = [
        (slice(i, i + patch_size[0]), slice(j, j + patch_size[1]), slice(k, k + patch_size[2]))
        for i in positions(0) for j in positions(1) for k in positions(2)
    ]
    acc = np.zeros(shape, dtype=np.float64)
    count = np.zeros(shape, dtype=np.float64)
    chunk = 8
    for start in range(0, len(windows), chunk):
        batch_windows = windows[start : start + chunk]
        patches = np.stack([data[sl] for sl in batch_windows])
        prob = np.zeros(patches.shape, dtype=np.float64)
        for model in models:
            with torch.no_grad():
                prob += model.forward_batch_t(patches).numpy().astype(np.float64)
        prob /= len(models)
        for sl, pr in zip(batch_windows, prob):
            acc[sl] += pr
            count[sl] += 1.0
    return acc / count


def write_history_csv(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: _fmt(row.get(k, "")) for k in HISTORY_COLUMNS})


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def load_training_data(entries: list[ManifestEntry]):
    """Split manifest entries into (labeled volume, annotation) pairs and
    unlabeled volumes; annotated entries read only slices m and n of their
    dense label file."""
    labeled, unlabeled = [], []
    for e in entries:
        vol = load_volume(e.volume_path)
        if e.annotated:
            lab = load_label(e.label_path)
            ann = make_orthogonal_annotation(lab, e.m, e.n)
            labeled.append((vol, ann))
        else:
            unlabeled.append(vol)
    return labeled, unlabeled


def load_eval_pairs(entries: list[ManifestEntry]):
    """(volume, dense label) pairs for validation/test manifests."""
    pairs = []
    for e in entries:
        if e.label_path is None:
            raise ValueError(f"evaluation entry {e.volume_path} has no label_path")
        pairs.append((load_volume(e.volume_path), load_label(e.label_path)))
    return pairs
