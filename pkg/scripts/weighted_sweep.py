"""Weighted norms of M+ over beta and a refinement sequence of log grids.

    python scripts/weighted_sweep.py --out results/sweep
"""
from dataclasses import dataclass, field

from _common import parse, unit_family, write_csv
from maxreg_lab.maxreg import beta_sweep
from maxreg_lab.timegrid import log_grid


@dataclass
class Config:
    matrices: int = 5
    betas: list = field(default_factory=lambda: [-1.0, -0.5, 0.0, 0.5, 0.9])
    # (t_min, t_max, N); each step widens the window a decade per side
    grids: list = field(default_factory=lambda: [[1e-3, 1e3, 256], [1e-4, 1e4, 512],
                                                 [1e-5, 1e5, 1024]])
    which: str = "Mplus"


def main():
    cfg, out = parse(Config, __doc__)
    grids = [log_grid(a, b, int(n)) for a, b, n in cfg.grids]
    rows = []
    for k, A in enumerate(unit_family(cfg.matrices)):
        rep = beta_sweep(A, cfg.betas, grids, cfg.which)
        for beta, t_min, t_max, N, norm, ratio in rep.rows:
            rows.append((k, A.dim, beta, t_min, t_max, N, norm, ratio, rep.verdicts[beta]))
        print(f"matrix {k}: {rep.verdicts}")
    write_csv(out / "weighted_sweep.csv",
              ["matrix", "dim", "beta", "t_min", "t_max", "N", "norm", "refinement_ratio",
               "verdict"], rows)


if __name__ == "__main__":
    main()
