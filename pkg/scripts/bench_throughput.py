"""Forward + excitation backprop + metrics throughput on seeded MiniRes.

    python scripts/bench_throughput.py --images 1000 --batch 50
"""

import argparse
import time

import numpy as np

from excite_lens.excitation import excitation_backprop_batch
from excite_lens.metrics import map_statistics
from excite_lens.model import forward
from excite_lens.zoo import build_minires


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, default=1000)
    ap.add_argument("--batch", type=int, default=50)
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    model = build_minires(args.classes, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    t_fwd = t_bwd = t_met = 0.0
    worst = 0.0
    done = 0
    while done < args.images:
        n = min(args.batch, args.images - done)
        x = rng.uniform(-2, 2, size=(n, 3, 64, 64)).astype(np.float32)
        t0 = time.perf_counter()
        tr = forward(model, x)
        t1 = time.perf_counter()
        maps = excitation_backprop_batch(model, tr, np.argmax(tr.posterior, axis=1))
        t2 = time.perf_counter()
        for m in maps:
            map_statistics(m)
            worst = max(worst, abs(m.total_mass() + m.discarded_mass - 1))
        t3 = time.perf_counter()
        t_fwd, t_bwd, t_met = t_fwd + t1 - t0, t_bwd + t2 - t1, t_met + t3 - t2
        done += n
    total = t_fwd + t_bwd + t_met
    print(f"{done} images: forward {t_fwd:.2f} s, excitation {t_bwd:.2f} s, "
          f"metrics {t_met:.2f} s, total {total:.2f} s ({done / total:.0f} images/s)")
    print(f"max conservation error {worst:.2e}")


if __name__ == "__main__":
    main()
