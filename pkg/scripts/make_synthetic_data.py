"""Regenerate data/synthetic_vertical_speed.csv.

The series is simulated from a 3-state HMM on the log-speed scale (slow /
transit / fast regimes, one of them bimodal), mapped back to signed
displacements with occasional exact zeros.  It is a synthetic stand-in with
the same shape as a per-minute vertical displacement series; it is not
animal data.
"""

from pathlib import Path

import numpy as np

from splinehmm.densities import NormalDensity, NormalMixtureDensity
from splinehmm.hmm import HmmModel, simulate

T_LEN = 2880
SEED = 20260810

gamma = np.array(
    [
        [0.96, 0.015, 0.025],
        [0.03, 0.90, 0.07],
        [0.04, 0.10, 0.86],
    ]
)
emissions = (
    NormalMixtureDensity(0.4, 0.55, 2.1, 0.35, 0.75),  # slow, second mode from shallow dives
    NormalDensity(3.1, 0.55),
    NormalDensity(4.5, 0.40),
)
model = HmmModel(gamma=gamma, emissions=emissions)

rng = np.random.default_rng(SEED)
log_speed, _ = simulate(model, T_LEN, rng)
sign = np.where(rng.random(T_LEN) < 0.5, -1.0, 1.0)
displacement = sign * np.exp(log_speed)
displacement[rng.random(T_LEN) < 0.004] = 0.0  # stationary minutes

out = Path(__file__).resolve().parent.parent / "data" / "synthetic_vertical_speed.csv"
out.parent.mkdir(exist_ok=True)
lines = ["minute,displacement"]
for t, v in enumerate(displacement):
    lines.append(f"{t + 1},{v:.6f}")
out.write_text("\n".join(lines) + "\n")
print(f"wrote {out} ({T_LEN} rows)")
