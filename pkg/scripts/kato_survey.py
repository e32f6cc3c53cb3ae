"""Largest sampled ratio ||A*^a f|| / ||A^a f|| against the bound
tan(pi (1 + 2a) / 4), as the skew part of A grows.

    python scripts/kato_survey.py --out results/kato
"""
from dataclasses import dataclass, field

from _common import parse, write_csv
from maxreg_lab.fractional import kato_audit, kato_bound
from maxreg_lab.operator_core import random_accretive


@dataclass
class Config:
    alphas: list = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.3, 0.4, 0.45])
    skew_scales: list = field(default_factory=lambda: [0.5, 1.0, 4.0, 16.0])
    dims: list = field(default_factory=lambda: [2, 3, 4])
    count: int = 200
    samples: int = 500
    seed: int = 0


def main():
    cfg, out = parse(Config, __doc__)
    rows = []
    for skew in cfg.skew_scales:
        worst = dict.fromkeys(cfg.alphas, 0.0)
        sup = dict.fromkeys(cfg.alphas, 0.0)
        for k in range(cfg.count):
            A = random_accretive(cfg.dims[k % len(cfg.dims)], 0.0, cfg.seed + k, skew_scale=skew)
            for r in kato_audit(A, cfg.alphas, cfg.samples, seed=cfg.seed + k):
                worst[r.alpha] = max(worst[r.alpha], r.worst_ratio)
                sup[r.alpha] = max(sup[r.alpha], r.sup_ratio)
        for a in cfg.alphas:
            b = kato_bound(a)
            rows.append((skew, a, b, worst[a], sup[a], sup[a] / b))
    write_csv(out / "kato_survey.csv",
              ["skew_scale", "alpha", "bound", "worst_sampled", "sup_exact", "sup_over_bound"],
              rows)


if __name__ == "__main__":
    main()
