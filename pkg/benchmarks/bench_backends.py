"""Time the compiled kernel against the pure-Python engine.

    python3 benchmarks/bench_backends.py [--repeat 3]

Both backends get identical configs; the script also checks that they
return the same consensus times, so a speedup never hides a divergence.
"""

import argparse
import time

from bftperf import SimConfig, run
from bftperf.engine import HAVE_KERNEL

CASES = [
    ("hotstuff clique n=16", SimConfig(protocol="hotstuff", n=16, instances=500)),
    ("ibft clique n=32 n_f=2", SimConfig(protocol="ibft", n=32, n_f=2, tau0=300.0,
                                          instances=200, leader_policy="random")),
    ("hotstuff fc(8,4) n=31", SimConfig(protocol="hotstuff", topology="fc", topo_params=(8, 4),
                                         n=31, instances=200)),
    ("ibft df(4) n=40 rs=1", SimConfig(protocol="ibft", topology="df", topo_params=(4,), n=40,
                                        rs=1.0, instances=40)),
]


def best_of(cfg, backend, repeat):
    best, res = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        res = run(cfg, backend=backend)
        best = min(best, time.perf_counter() - t)
    return best, res


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not HAVE_KERNEL:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'case':28s} {'events':>9s} {'python s':>9s} {'kernel s':>9s} {'speedup':>8s}")
    for name, cfg in CASES:
        tp, rp = best_of(cfg, "python", args.repeat)
        tk, rk = best_of(cfg, "kernel", args.repeat)
        if rp.times != rk.times:
            print(f"{name}: backends disagree")
            return 1
        print(f"{name:28s} {rk.events:9d} {tp:9.3f} {tk:9.4f} {tp / tk:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
