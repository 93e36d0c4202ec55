"""Epsilon, delta and mode continuation studies on the reduced 16x16 configs.

Usage: python3 scripts/run_sweeps.py [out_dir] [threads]
"""

import json
import sys
from pathlib import Path

from nlchns import experiments as ex

ROOT = Path(__file__).resolve().parents[1]


def load(name):
    return ex.SimulationConfig.load(ROOT / "configs" / f"{name}.json")


def main(out="runs/sweeps", threads="1"):
    out, threads = Path(out), int(threads)
    eps_cfg = load("sweep_epsilon")
    reports = {
        "epsilon": ex.sweep_epsilon(eps_cfg, [0.2, 0.1, 0.05, 0.025], out / "epsilon", threads),
        "delta": ex.sweep_delta(load("sweep_delta"), [1e-2, 1e-3, 1e-4], out / "delta", threads, epsilon=0.025),
        "modes": ex.sweep_modes(eps_cfg.replace(t_end=0.1), [8, 12, 16], out / "modes", threads),
    }
    matched = ex.run(eps_cfg.replace(epsilon=0.025, **{"density.rho2": eps_cfg.density.rho1}), out / "matched")
    reports["matched_control_art_norm"] = matched.summary.get("time_max_art_norm")
    print(json.dumps({k: (v.get("assertions", v) if isinstance(v, dict) else v) for k, v in reports.items()},
                     indent=2))
    return 0 if all(not r["failures"] for r in reports.values() if isinstance(r, dict)) else ex.EXIT_INTEGRATOR


if __name__ == "__main__":
    sys.exit(main(*sys.argv[1:]))
