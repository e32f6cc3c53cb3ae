"""Growth of the truncated L2(t^-beta) norm of M- f, f = 1_[1,2], as t_min
decreases: logarithmic at beta = 1, saturating below it.

    python scripts/sharpness.py --out results/sharpness
"""
from dataclasses import dataclass, field

import numpy as np

from _common import parse, write_csv
from maxreg_lab.maxreg import counterexample_growth
from maxreg_lab.operator_core import make_operator


@dataclass
class Config:
    lam: float = 1.0
    betas: list = field(default_factory=lambda: [0.5, 0.9, 0.99, 1.0])
    t_mins: list = field(default_factory=lambda: [10.0 ** -k for k in range(1, 9)])
    per_decade: int = 64


def main():
    cfg, out = parse(Config, __doc__)
    A = make_operator([[cfg.lam]])
    rows = []
    for beta in cfg.betas:
        r = counterexample_growth(A, [1.0], beta, cfg.t_mins, per_decade=cfg.per_decade)
        target = r.c ** 2 * np.log(10)
        for t0, norm, norm_sq, delta in r.rows:
            rows.append((beta, t0, norm, norm_sq, delta, delta / target, r.verdict))
        print(f"beta={beta}: {r.verdict}")
    write_csv(out / "sharpness.csv",
              ["beta", "t_min", "norm", "norm_sq", "increment_per_decade",
               "increment_over_log_rate", "verdict"], rows)


if __name__ == "__main__":
    main()
