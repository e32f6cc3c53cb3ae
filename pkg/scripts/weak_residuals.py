"""Refinement study of the weak-form residuals of the Duhamel solution over
the tent/bump battery, and of the strong finite-difference residual.

    python scripts/weak_residuals.py --out results/residuals
"""
from dataclasses import dataclass, field

import numpy as np

from _common import parse, unit_family, write_csv
from maxreg_lab.cauchy import duhamel_v, residual_battery, strong_residual, test_battery
from maxreg_lab.timegrid import GridFunction, log_grid


@dataclass
class Config:
    matrix: int = 1
    t_min: float = 1e-2
    t_max: float = 10.0
    sizes: list = field(default_factory=lambda: [100, 200, 400, 800, 1600])
    per_decade: int = 5


def forcing(t):
    return np.exp(-t) * np.array([1.0, np.sin(t), np.cos(2 * t)])


def main():
    cfg, out = parse(Config, __doc__)
    A = unit_family(cfg.matrix + 1)[cfg.matrix]
    rows = []
    for N in cfg.sizes:
        g = log_grid(cfg.t_min, cfg.t_max, N)
        f = GridFunction.from_callable(g, lambda t: forcing(t)[:A.dim])
        v = duhamel_v(A, f)
        bat = test_battery(g, A.dim, cfg.per_decade)
        pc = max(r for _, r in residual_battery(v, f, A, bat))
        ex = max(r for _, r in residual_battery(v, f, A, bat, "exponential"))
        rows.append((N, pc, ex, strong_residual(A, v, f)))
    write_csv(out / "weak_residuals.csv",
              ["N", "battery_max_piecewise_constant", "battery_max_exponential",
               "strong_residual"], rows)


if __name__ == "__main__":
    main()
