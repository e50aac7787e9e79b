"""Time the hot kernels under both backends (numba and plain numpy).

    python3 benchmarks/bench_backends.py [--episodes 50] [--roads 200]

The backend is fixed at import time by ``DIGSIB_NUMBA``, so each backend runs
in its own interpreter. Numba timings exclude the first (compiling) call.
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
from digital_siblings import _kernels as K
from digital_siblings._jit import backend_name
from digital_siblings.dynamics import SimulatorConfig, run_episode
from digital_siblings.dynamics import DrivingModelConfig, ModelKind
from digital_siblings.road import generate_random_road, interpolate_catmull_rom

n_episodes, n_roads = int(sys.argv[1]), int(sys.argv[2])
roads = [interpolate_catmull_rom(generate_random_road(k)) for k in range(max(n_episodes, n_roads))]
model = DrivingModelConfig(ModelKind.MISTUNED_PID, kp=0.4, kd=3.0)
cfg = SimulatorConfig(sensor_bias=0.3, sensor_noise_sd=0.05)

def timed(fn, reps):
    fn(0)  # warm-up / compile
    t = time.perf_counter()
    for i in range(reps):
        fn(i)
    return (time.perf_counter() - t) / reps

out = {
    "backend": backend_name(),
    "episode_s": timed(lambda i: run_episode(model, cfg, roads[i], seed=i), n_episodes),
    "self_intersection_s": timed(lambda i: K.first_self_intersection(roads[i].center_points), n_roads),
    "circumradii_s": timed(lambda i: K.circumradii(roads[i].center_points), n_roads),
}
print(json.dumps(out))
"""


def run_backend(flag: str, episodes: int, roads: int) -> dict:
    env = dict(os.environ, DIGSIB_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", WORKER, str(episodes), str(roads)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--roads", type=int, default=200)
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    rows = [run_backend(flag, args.episodes, args.roads) for flag in ("1", "0")]
    print(f"{'kernel':<22}" + "".join(f"{r['backend']:>14}" for r in rows) + f"{'speedup':>10}")
    for key in ("episode_s", "self_intersection_s", "circumradii_s"):
        fast, slow = rows[0][key], rows[1][key]
        print(f"{key:<22}" + "".join(f"{r[key] * 1e3:>11.3f} ms" for r in rows) + f"{slow / fast:>9.1f}x")
    print(f"total wall time {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
