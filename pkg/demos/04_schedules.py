"""Plot the three training schedules over a full run.

The credibility decay alpha steps down a half-cosine every block and ends
at exactly zero (dense -> sparse supervision); the cross-supervision
weight ramps up to its optimum; the learning rate decays polynomially
between its exact endpoints.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from desco.schedules import ScheduleConfig, alpha_at, lambda_at, lr_at

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

cfg = ScheduleConfig(total_iters=6000, alpha_update_every=1000)
iters = range(0, 6001, 10)

fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
axes[0].plot(iters, [alpha_at(i, cfg) for i in iters])
axes[0].set_title("credibility decay alpha(t)")
axes[1].plot(iters, [lambda_at(i, cfg) for i in iters], color="darkorange")
axes[1].set_title("cross-supervision weight lambda(t)")
axes[2].plot(iters, [lr_at(i, cfg) for i in iters], color="seagreen")
axes[2].set_title("learning rate")
for ax in axes:
    ax.set_xlabel("iteration")
    ax.grid(alpha=0.3)
fig.tight_layout()
fig.savefig(out / "04_schedules.png", dpi=110)
print(f"wrote {out / '04_schedules.png'}")

print(f"alpha(0) = {alpha_at(0, cfg)}   alpha(last block) = {alpha_at(5999, cfg)}")
print(f"lambda(0) = {lambda_at(0, cfg):.5f}   lambda(total) = {lambda_at(6000, cfg)}")
print(f"lr(0) = {lr_at(0, cfg)}   lr(total) = {lr_at(6000, cfg)}")
