"""Reference 3D segmentation network and MC-dropout uncertainty.

A deliberately small 3-level encoder--decoder (3D convolutions, channel
widths (8, 16, 32), trilinear upsampling, elementwise dropout before a
zero-initialized head) that trains in minutes on CPU. It stands in for a
full V-Net-class backbone behind the same contract: a patch of shape
(H, W, D), each side divisible by ``2**levels``, maps to a foreground
probability grid of the same shape.

Each model owns a torch.Generator seeded at construction; all of its
dropout noise is drawn from that stream, so runs are reproducible and two
models never share randomness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .schedules import ScheduleConfig, gauss_rampup

__all__ = ["ModelConfig", "SegmentationModel", "uncertainty_mask", "MAX_ENTROPY"]

MAX_ENTROPY = float(np.log(2.0))

_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[int, int, int] = (8, 16, 32)
    dropout: float = 0.1
    seed: int = 0

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def divisor(self) -> int:
        return 2 ** self.levels


class _DropoutWithGenerator(nn.Module):
    """Elementwise dropout whose noise comes from an explicit generator."""

    def __init__(self, p: float, generator: torch.Generator):
        super().__init__()
        self.p = p
        self.generator = generator
        self.active = False

    def forward(self, x):
        if not self.active or self.p <= 0:
            return x
        keep = 1.0 - self.p
        mask = torch.rand(x.shape, generator=self.generator, device=x.device) < keep
        return x * mask / keep


def _block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(cin, cout, 3, padding=1),
        nn.InstanceNorm3d(cout, affine=True),
        nn.ReLU(inplace=True),
    )


class _Net(nn.Module):
    def __init__(self, cfg: ModelConfig, generator: torch.Generator):
        super().__init__()
        c1, c2, c3 = cfg.channels
        self.enc1 = _block(1, c1)
        self.enc2 = _block(c1, c2)
        self.bottom = _block(c2, c3)
        self.pool = nn.MaxPool3d(2)
        self.up = nn.Upsample(scale_factor=2, mode="trilinear", align_corners=False)
        self.dec2 = _block(c3 + c2, c2)
        self.dec1 = _block(c2 + c1, c1)
        self.dropout = _DropoutWithGenerator(cfg.dropout, generator)
        self.head = nn.Conv3d(c1, 1, 1)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        b = self.bottom(self.pool(e2))
        d2 = self.dec2(torch.cat([self.up(b), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up(d2), e1], dim=1))
        return torch.sigmoid(self.head(self.dropout(d1)))


class SegmentationModel:
    """Contract wrapper: numpy in/out prediction plus grad-capable forward."""

    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig()
        self.generator = torch.Generator()
        self.generator.manual_seed(self.config.seed)
        with torch.random.fork_rng():
            torch.manual_seed(self.config.seed)
            self.net = _Net(self.config, self.generator)
        # zero-initialized head: an untrained model predicts 0.5 everywhere
        nn.init.zeros_(self.net.head.weight)
        nn.init.zeros_(self.net.head.bias)
        self.net.train(False)

    def parameters(self):
        return self.net.parameters()

    def _check_patch(self, patch: np.ndarray) -> None:
        if patch.ndim != 3:
            raise ValueError(f"expected a 3D patch, got shape {patch.shape}")
        div = self.config.divisor
        if any(s % div for s in patch.shape):
            raise ValueError(
                f"patch shape {patch.shape} must be divisible by {div} per side"
            )

    def forward_batch_t(self, patches: np.ndarray, stochastic: bool = False) -> torch.Tensor:
        """Differentiable forward of a (B, H, W, D) batch; returns (B, H, W, D)
        probabilities. Dropout noise is drawn independently per batch element."""
        self._check_patch(patches[0])
        x = torch.from_numpy(np.ascontiguousarray(patches, dtype=np.float32))[:, None]
        self.net.dropout.active = bool(stochastic)
        try:
            out = self.net(x)[:, 0]
        finally:
            self.net.dropout.active = False
        return out

    def forward_t(self, patch: np.ndarray, stochastic: bool = False) -> torch.Tensor:
        """Differentiable forward pass; returns a (H, W, D) probability tensor."""
        return self.forward_batch_t(np.asarray(patch)[None], stochastic)[0]

    def predict(self, patch: np.ndarray, stochastic: bool = False) -> np.ndarray:
        """Probability grid without gradients."""
        with torch.no_grad():
            return self.forward_t(patch, stochastic).numpy().astype(np.float64)

    def uncertainty(self, patch: np.ndarray, passes: int = 8) -> tuple[np.ndarray, np.ndarray]:
        """Mean probability and predictive entropy over MC-dropout passes.

        The passes run as one batched stochastic forward."""
        if passes < 2:
            raise ValueError(f"uncertainty needs at least 2 passes, got {passes}")
        batch = np.broadcast_to(patch, (passes, *patch.shape))
        with torch.no_grad():
            probs = self.forward_batch_t(batch, stochastic=True).numpy()
        mean = probs.mean(axis=0, dtype=np.float64)
        pc = np.clip(mean, 1e-12, 1.0 - 1e-12)
        entropy = -(pc * np.log(pc) + (1.0 - pc) * np.log1p(-pc))
        return mean, entropy

    def save(self, path) -> None:
        torch.save(
            {
                "version": _CHECKPOINT_VERSION,
                "config": json.dumps(
                    {"channels": list(self.config.channels),
                     "dropout": self.config.dropout,
                     "seed": self.config.seed},
                    sort_keys=True,
                ),
                "state_dict": self.net.state_dict(),
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "SegmentationModel":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        if blob.get("version") != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
        raw = json.loads(blob["config"])
        cfg = ModelConfig(tuple(raw["channels"]), raw["dropout"], raw["seed"])
        model = cls(cfg)
        model.net.load_state_dict(blob["state_dict"])
        return model


def uncertainty_mask(entropy: np.ndarray, iteration: int, cfg: ScheduleConfig) -> np.ndarray:
    """Select voxels whose predictive entropy is below a ramping threshold.

    The threshold is ln 2 * (3/4 + 1/4 * rampup(t)) with the same Gaussian
    ramp as the cross-supervision weight, so the mask admits more voxels as
    training progresses.
    """
    t = min(max(iteration / cfg.total_iters, 0.0), 1.0)
    threshold = MAX_ENTROPY * (0.75 + 0.25 * gauss_rampup(t))
    return np.asarray(entropy) < threshold
