"""Shared plumbing for the experiment scripts: dataclass configs overridable
from a JSON file, and a CSV writer."""
import argparse
import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from maxreg_lab.operator_core import make_operator, random_accretive


def parse(config_cls, description: str):
    """Return ``(config, out_dir)`` from ``--config`` / ``--out`` arguments."""
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--config", help="JSON object overriding the dataclass defaults")
    ap.add_argument("--out", default="results", help="output directory")
    args = ap.parse_args()
    cfg = config_cls()
    if args.config:
        with open(args.config) as fh:
            cfg = dataclasses.replace(cfg, **json.load(fh))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([f"{x:.12g}" if isinstance(x, float) else x for x in r])
    print(f"wrote {path} ({len(rows)} rows)")


def unit_family(count: int, skew_scale: float = 0.5):
    """Seeded accretive matrices of dims 1-3 scaled to unit norm."""
    out = []
    for s in range(count):
        A = random_accretive(1 + s % 3, 0.1, s, skew_scale=skew_scale)
        out.append(make_operator(A.entries / np.linalg.norm(A.entries, 2), **A.metadata))
    return out
