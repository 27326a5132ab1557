"""Generate a synthetic phantom and inspect its orthogonal annotation.

Every labeled volume in this framework carries exactly two labeled slices:
one in plane A (slices along the last axis) and one in plane B (slices
along the first axis). This script renders a phantom, picks the two
annotated slices at the target's center of mass, and plots them.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from desco.synthetic import (
    PhantomSpec,
    generate_phantom,
    make_orthogonal_annotation,
    select_annotation_slices,
)

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

spec = PhantomSpec(dims=(48, 48, 48), n_blobs=3, drift=0.7, noise_sigma=0.08, seed=4)
volume, label = generate_phantom(spec)
print(f"volume {volume.id}: shape {volume.shape}, "
      f"foreground fraction {label.data.mean():.3f}")

m, n = select_annotation_slices(label)
annotation = make_orthogonal_annotation(label, m, n)
print(f"annotated slices: plane A index m={m}, plane B index n={n}")
print(f"annotated voxels: {annotation.label_a.size + annotation.label_b.size} "
      f"of {np.prod(volume.shape)} total")

fig, axes = plt.subplots(2, 2, figsize=(8, 8))
axes[0, 0].imshow(volume.data[:, :, m], cmap="gray")
axes[0, 0].set_title(f"plane A image (slice {m})")
axes[0, 1].imshow(annotation.label_a, cmap="viridis")
axes[0, 1].set_title("plane A annotation")
axes[1, 0].imshow(volume.data[n, :, :], cmap="gray")
axes[1, 0].set_title(f"plane B image (slice {n})")
axes[1, 1].imshow(annotation.label_b, cmap="viridis")
axes[1, 1].set_title("plane B annotation")
for ax in axes.ravel():
    ax.axis("off")
fig.tight_layout()
fig.savefig(out / "01_annotation.png", dpi=110)
print(f"wrote {out / '01_annotation.png'}")
