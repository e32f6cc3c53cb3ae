"""Pairwise norms ||T_u T_v*|| and ||T_u* T_v|| against the dyadic ratio
v/u, with fitted decay exponents and the reconstruction error of M+.

    python scripts/cotlar_decay.py --out results/cotlar
"""
from dataclasses import dataclass

from _common import parse, unit_family, write_csv
from maxreg_lab.cotlar import (almost_orthogonality_audit, calderon_u_grid, decay_profile,
                               default_u_grid, pair_norms, reconstruction_error)
from maxreg_lab.timegrid import log_grid


@dataclass
class Config:
    matrices: int = 5
    t_min: float = 1e-3
    t_max: float = 1e3
    N: int = 96
    half_width: int = 10
    max_log2_ratio: int = 8
    alpha: float = 0.25


def main():
    cfg, out = parse(Config, __doc__)
    g = log_grid(cfg.t_min, cfg.t_max, cfg.N)
    profile, summary = [], []
    for k, A in enumerate(unit_family(cfg.matrices)):
        pairs = pair_norms(A, default_u_grid(A, cfg.half_width), g, cfg.max_log2_ratio)
        x, h = decay_profile(pairs)
        _, h1 = decay_profile(pairs, "star_right")
        _, h2 = decay_profile(pairs, "star_left")
        profile += [(k, xi, a, b, c) for xi, a, b, c in zip(x, h, h1, h2)]
        rep = almost_orthogonality_audit(A, cfg.alpha, pairs=pairs)
        err = reconstruction_error(A, g, calderon_u_grid(A))
        summary.append((k, A.dim, rep.fitted_decay, rep.extra["decay_star_right"],
                        rep.extra["decay_star_left"], rep.constant, rep.cotlar_sum, err))
        print(f"matrix {k}: decay {rep.fitted_decay:.3f}, reconstruction {err:.2e}")
    write_csv(out / "cotlar_profile.csv", ["matrix", "ratio", "h_max", "h_star_right",
                                           "h_star_left"], profile)
    write_csv(out / "cotlar_summary.csv",
              ["matrix", "dim", "fitted_decay", "decay_star_right", "decay_star_left",
               "constant", "cotlar_sum", "reconstruction_error"], summary)


if __name__ == "__main__":
    main()
