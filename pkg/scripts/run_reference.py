"""Reference run plus the halved-tolerance repeat used for the residual convergence check.

Usage: python3 scripts/run_reference.py [out_dir]
"""

import json
import sys
from pathlib import Path

from nlchns import experiments as ex

ROOT = Path(__file__).resolve().parents[1]


def main(out="runs/reference"):
    cfg = ex.SimulationConfig.load(ROOT / "configs" / "reference.json")
    half = cfg.replace(**{"integrator.rtol": cfg.integrator.rtol / 2, "integrator.atol": cfg.integrator.atol / 2})
    base = ex.run(cfg, Path(out) / "base")
    fine = ex.run(half, Path(out) / "half_tol")
    r0, r1 = base.summary.get("max_abs_R"), fine.summary.get("max_abs_R")
    print(json.dumps({"status": [base.status, fine.status], "max_abs_R": r0, "max_abs_R_half_tol": r1,
                      "ratio": r0 / r1 if r0 and r1 else None, "wall_seconds": base.wall,
                      "mass_drift": base.summary.get("mass_drift")}, indent=2))
    return max(base.exit_code, fine.exit_code)


if __name__ == "__main__":
    sys.exit(main(*sys.argv[1:]))
