"""A small end-to-end co-training run (a few minutes on CPU).

Two networks train side by side: each learns from its own plane's
propagated labels under the credibility weights, and they cross-supervise
each other on unlabeled volumes through uncertainty-masked one-hot
targets. The run here is deliberately short; scale total_iters up for a
real experiment (see the desco CLI for the file-based pipeline).
"""

from pathlib import Path

import numpy as np

from desco.evaluation import dice
from desco.plots import plot_history
from desco.schedules import ScheduleConfig
from desco.synthetic import (
    PhantomSpec,
    generate_phantom,
    make_orthogonal_annotation,
    select_annotation_slices,
)
from desco.trainer import TrainConfig, sliding_window_predict, train_desco, write_history_csv

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

print("building a small dataset: 8 training volumes (2 annotated), 2 validation")
train = [generate_phantom(PhantomSpec((48, 48, 48), 2, 0.6, 0.06, seed=s)) for s in range(8)]
val = [generate_phantom(PhantomSpec((48, 48, 48), 2, 0.6, 0.06, seed=100 + s)) for s in range(2)]

labeled = []
for vol, lab in train[:2]:
    m, n = select_annotation_slices(lab)
    labeled.append((vol, make_orthogonal_annotation(lab, m, n)))
unlabeled = [vol for vol, _ in train[2:]]

cfg = TrainConfig(
    schedule=ScheduleConfig(total_iters=300, alpha_update_every=50,
                            lr0=0.01, lr_min=0.0001),
    patch_size=(32, 32, 16),
    uncertainty_passes=4,
    eval_every=50,
    seed=0,
)
model_a, model_b, history = train_desco(labeled, unlabeled, cfg, val_pairs=val)

write_history_csv(history, out / "06_history.csv")
plot_history(out / "06_history.csv", out)
print(f"wrote {out / '06_history.csv'} and training plots")

scores = []
for vol, lab in val:
    prob = sliding_window_predict([model_a, model_b], vol, cfg.patch_size, (16, 16, 8))
    scores.append(dice(prob > 0.5, lab))
print(f"final ensemble Dice on validation: {np.mean(scores):.4f}")
