"""Mix pseudo labels with ground truth and weight them by credibility.

The mixed label takes ground truth on the two annotated slices and the
propagated pseudo label elsewhere. The weight map is 1 on annotated voxels
and alpha^d elsewhere (d = slice distance to the propagation source), so
the weighted losses trust nearby slices more. As alpha decays to zero the
supervision reduces to the two annotated slices alone.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from desco.labels import build_weight_map, label_mix
from desco.objectives import supervised_loss, weighted_cross_entropy, weighted_dice
from desco.registration import propagate_orthogonal
from desco.synthetic import (
    PhantomSpec,
    generate_phantom,
    make_orthogonal_annotation,
    select_annotation_slices,
)
from desco.volume import Plane

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

volume, label = generate_phantom(PhantomSpec(n_blobs=2, drift=0.6, noise_sigma=0.06, seed=2))
m, n = select_annotation_slices(label)
annotation = make_orthogonal_annotation(label, m, n)
pseudo_a, _ = propagate_orthogonal(volume, annotation)
mixed = label_mix(pseudo_a, annotation)

fig, axes = plt.subplots(1, 4, figsize=(14, 3.6))
for ax, alpha in zip(axes, (0.95, 0.6, 0.3, 0.0)):
    wm = build_weight_map(annotation, Plane.A, m, alpha, volume.shape)
    ax.imshow(wm.data[n - 4, :, :], vmin=0, vmax=1, cmap="magma")
    ax.set_title(f"alpha = {alpha}")
    ax.axis("off")
fig.suptitle("weight map cross-section while alpha decays (bright = trusted)")
fig.tight_layout()
fig.savefig(out / "03_weight_maps.png", dpi=110)
print(f"wrote {out / '03_weight_maps.png'}")

# the same prediction scores differently as credibility shifts
rng = np.random.default_rng(0)
p = np.clip(mixed.data * 0.85 + 0.08 + rng.normal(0, 0.04, mixed.data.shape), 0.01, 0.99)
for alpha in (0.95, 0.5, 0.0):
    w = build_weight_map(annotation, Plane.A, m, alpha, volume.shape)
    print(
        f"alpha={alpha:4.2f}: ce={weighted_cross_entropy(p, mixed.data, w.data):.4f} "
        f"dice={weighted_dice(p, mixed.data, w.data):.4f} "
        f"sup={supervised_loss(p, mixed, w):.4f}"
    )
