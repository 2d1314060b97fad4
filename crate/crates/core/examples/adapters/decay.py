#!/usr/bin/env python3
"""First-order decay x' = -k x driven through the simulator adapter protocol.

Environment: e = [x0, k]. One fidelity knob: 1 integrates with the base step,
0 with a step 8 times coarser. The high-fidelity run uses the base step.
"""
import json
import math
import sys


def euler(x0, k, h, n):
    xs = [x0]
    for _ in range(n):
        xs.append(xs[-1] * (1.0 - k * h))
    return xs


def main():
    req = json.loads(sys.stdin.readline())
    x0, k = req["e"]
    dt, duration = req["dt"], req["duration"]
    steps = round(duration / dt)
    f = req["f"]
    mult = 1.0 if f is None else 8.0 - 7.0 * f[0]
    coarse = max(1, math.ceil(steps / mult - 1e-9))
    h = duration / coarse
    xs = euler(x0, k, h, coarse)
    out = []
    for i in range(steps + 1):
        s = i * dt / h
        j = min(int(s), coarse - 1)
        w = s - j
        out.append(xs[j] * (1.0 - w) + xs[j + 1] * w)
    json.dump({"start_time": 0.0, "dt": dt, "channels": ["x"], "samples": [out]}, sys.stdout)


if __name__ == "__main__":
    main()
