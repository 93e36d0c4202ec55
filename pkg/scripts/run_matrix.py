"""Extra test-matrix members (periodic box, time-periodic forcing, stripe with variable coefficients).

Usage: python3 scripts/run_matrix.py [out_dir]
"""

import json
import sys
from pathlib import Path

from nlchns import experiments as ex

ROOT = Path(__file__).resolve().parents[1]
NAMES = ("matrix_periodic", "matrix_forced", "matrix_stripe")


def main(out="runs/matrix"):
    rows, code = {}, 0
    for name in NAMES:
        rec = ex.run(ex.SimulationConfig.load(ROOT / "configs" / f"{name}.json"), Path(out) / name)
        rows[name] = {"status": rec.status, **{k: rec.summary.get(k) for k in
                                               ("max_abs_R", "mass_drift", "max_energy_increase")}}
        code = max(code, rec.exit_code)
    print(json.dumps(rows, indent=2))
    return code


if __name__ == "__main__":
    sys.exit(main(*sys.argv[1:]))
