"""Time the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each kernel is timed in-process on both backends with identical inputs, and
the outputs are compared.  The end-to-end row times one forward and backward
pass of the simulation network on a 128-window batch.  It runs in a
subprocess per backend, because the network binds its backend at import.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from rcovnet import _backend

END_TO_END = """
import timeit, numpy as np
from rcovnet.nn import LossConfig, init_weights, simulation_spec, value_and_grad
spec = simulation_spec(d=15, lag=20)
w = init_weights(spec, 0)
rng = np.random.default_rng(0)
x, y = rng.normal(size=(128, 20, 15, 15)), rng.normal(size=(128, 15, 15))
cfg = LossConfig("huber")
value_and_grad(spec, w, x, y, cfg)
print(min(timeit.repeat(lambda: value_and_grad(spec, w, x, y, cfg), number=1, repeat={repeat})))
"""


def cases(rng):
    """(name, callable(kernels) -> output) pairs over fixed random inputs."""
    x = rng.normal(size=(128, 24, 15, 15))
    w = rng.normal(size=(32, 24, 3, 3))
    gy = rng.normal(size=(128, 32, 15, 15))
    g = rng.normal(size=(25, 25))
    spd = g @ g.T + 25 * np.eye(25)
    sigma = np.stack([spd[:3, :3] * (1 + 0.01 * t) for t in range(5000)])
    cc, a, b = 0.1 * np.eye(3), np.full((2, 3), 0.3), np.full((2, 3), 0.5)
    s_init = np.stack([spd[:3, :3]] * 2)
    z = rng.normal(size=(128, 32, 225))
    c_prev = rng.normal(size=(128, 8, 225))
    peep = np.zeros((3, 8, 225))
    dh = rng.normal(size=(128, 8, 225))

    def gates_backward(k):
        act, c, tanh_c, _ = k.lstm_gates_forward(z, c_prev, peep, False)
        return k.lstm_gates_backward(dh, c_prev, act, c_prev, tanh_c, peep, np.zeros_like(peep), False)

    return [
        ("conv2d_forward 128x24x15x15 * 32x3x3", lambda k: k.conv2d_forward(x, w)),
        ("conv2d_backward_input", lambda k: k.conv2d_backward_input(gy, w)),
        ("conv2d_backward_weight", lambda k: k.conv2d_backward_weight(x, gy, 3, 3)),
        ("lstm_gates_forward 128x8x225", lambda k: k.lstm_gates_forward(z, c_prev, peep, False)),
        ("lstm_gates_forward+backward", gates_backward),
        ("cholesky 25x25", lambda k: k.cholesky(spd, 1e-12)),
        ("jacobi_eig 25x25", lambda k: k.jacobi_eig(spd, 1e-12, 100)),
        ("dcaw_filter T=5000 r=3 p=q=2", lambda k: k.dcaw_filter(sigma, cc, a, b, s_init)),
    ]


def _flat(out):
    if isinstance(out, tuple):
        return [np.asarray(o, dtype=np.float64).ravel() for o in out if np.ndim(o) > 0]
    return [np.asarray(out, dtype=np.float64).ravel()]


def max_rel_diff(a, b):
    worst = 0.0
    for u, v in zip(_flat(a), _flat(b)):
        scale = max(np.abs(v).max(initial=0.0), 1e-300)
        worst = max(worst, float(np.abs(u - v).max(initial=0.0) / scale))
    return worst


def end_to_end(name, repeat):
    env = dict(os.environ, RCOVNET_BACKEND=name)
    out = subprocess.run([sys.executable, "-c", END_TO_END.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)
    names = _backend.available()
    if "cython" not in names:
        print("compiled backend unavailable; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    rows = []
    for label, fn in cases(rng):
        times, outs = {}, {}
        for n in names:
            k = _backend.get(n)
            outs[n] = fn(k)
            times[n] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
        diff = max_rel_diff(outs[names[0]], outs["python"]) if len(names) > 1 else 0.0
        rows.append({"kernel": label, **{f"{n}_s": times[n] for n in names}, "max_rel_diff": diff})
    rows.append({"kernel": "value_and_grad simulation net, batch 128",
                 **{f"{n}_s": end_to_end(n, max(2, args.repeat // 2)) for n in names}, "max_rel_diff": None})

    width = max(len(r["kernel"]) for r in rows)
    head = f"{'kernel':<{width}}" + "".join(f"{n + ' (ms)':>14}" for n in names)
    head += f"{'speedup':>10}{'max rel diff':>14}" if len(names) > 1 else ""
    print(head)
    for r in rows:
        line = f"{r['kernel']:<{width}}" + "".join(f"{1e3 * r[n + '_s']:>14.3f}" for n in names)
        if len(names) > 1:
            line += f"{r['python_s'] / r['cython_s']:>9.2f}x"
            line += f"{r['max_rel_diff']:>14.2e}" if r["max_rel_diff"] is not None else f"{'-':>14}"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
