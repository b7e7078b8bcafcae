"""Train one flow per integration manifold and tabulate the metrics.

For each of ball, euclid, and ait this runs the full pipeline on the same
config (default: the 4D flux-model mixture) and prints KL, importance ESS,
the normalizer estimate, and the share of samples that escaped the
polytope. The ball chart cannot leak by construction; the euclidean chart
can, which is the comparison this script exists to show. Expect roughly
ten CPU-minutes for the default config.
"""

import argparse
import dataclasses
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from polyflow.cli import load_config, run_experiment

ROOT = Path(__file__).resolve().parents[1]
MANIFOLDS = ("ball", "euclid", "ait")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=ROOT / "configs" / "mog_polytope.json")
    ap.add_argument("--out", default="out/manifolds")
    args = ap.parse_args()

    base = load_config(args.config)
    rows = []
    for manifold in MANIFOLDS:
        config = dataclasses.replace(base, manifold=manifold)
        t0 = time.monotonic()
        out = run_experiment(config, Path(args.out) / manifold)
        rep = out["metrics"]
        rows.append((manifold, rep.kl_nats, rep.ess_pct, rep.z_estimate,
                     rep.outside_pct, time.monotonic() - t0))

    print(f"{'manifold':<8} {'kl_nats':>8} {'ess_pct':>8} {'z_est':>8} "
          f"{'outside%':>8} {'wall_s':>7}")
    for name, kl, ess, z, outside, wall in rows:
        print(f"{name:<8} {kl:>8.3f} {ess:>8.2f} {z:>8.3f} "
              f"{outside:>8.2f} {wall:>7.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
