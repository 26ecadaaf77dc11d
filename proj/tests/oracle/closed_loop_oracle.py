#!/usr/bin/env python3
# Copyright 2026 The MDML Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Standalone closed-loop oracle.

Runs the flame relaxation recurrence, the PLIF frame generator, the
stability index and the hill-climbing controller directly, with no
transport, fusion or executor in between. Pure Python floats with
sequential summation so results are bit-comparable with the C++ build.

Writes tests/data/closed_loop_oracle.json.
"""
import json
import math
import os
import sys

MASK = (1 << 64) - 1


def mix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK
    return x ^ (x >> 31)


def fnv1a64(name):
    h = 0xCBF29CE484222325
    for b in name.encode():
        h ^= b
        h = (h * 0x100000001B3) & MASK
    return h


class Stream:
    def __init__(self, seed, name):
        self.key = mix64((seed & MASK) ^ fnv1a64(name))

    def uniform(self, counter):
        bits = mix64(self.key ^ mix64(counter & MASK))
        return ((bits >> 11) + 0.5) * (1.0 / 9007199254740992.0)

    def normal(self, counter):
        u1 = self.uniform(2 * counter)
        u2 = self.uniform(2 * counter + 1)
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def clamp(x, lo, hi):
    return lo if x < lo else hi if x > hi else x


U_OPT, BETA, ALPHA = 0.5, 4.0, 0.2
FRAME = 256


def s_target(u):
    d = u - U_OPT
    return max(0.0, 1.0 - BETA * (d * d))


def stability_index(frame, cv_max):
    n = len(frame)
    total = 0.0
    for x in frame:
        total += x
    mean = total / n
    acc = 0.0
    for x in frame:
        d = x - mean
        acc += d * d
    cv = math.sqrt(acc / n) / mean
    return 1.0 - min(1.0, cv / cv_max)


def controller(history, step, lo, hi):
    u_now, i_now = history[-1]
    if len(history) < 2:
        return clamp(u_now + step, lo, hi)
    u_prev, i_prev = history[-2]
    prod = (i_now - i_prev) * (u_now - u_prev)
    d = 1.0 if prod >= 0.0 else -1.0
    return clamp(u_now + d * step, lo, hi)


def run(seed, sigma, u0, ticks, closed, cv_max=1.0, step=0.05, period=10):
    step_rng = Stream(seed, "step")
    plif_rng = Stream(seed, "plif")
    u = u0
    s = s_target(u0)
    history = []
    u_cmd = None
    out = []
    for k in range(ticks):
        if k > 0:
            if closed and u_cmd is not None:
                u = u_cmd
            xi = step_rng.normal(k)
            s = clamp(s + ALPHA * (s_target(u) - s) + sigma * xi, 0.0, 1.0)
        frame = [100.0 * (1.0 + (1.0 - s) * plif_rng.normal(k * FRAME + i))
                 for i in range(FRAME)]
        idx = stability_index(frame, cv_max)
        out.append({"k": k, "u": u, "s": s, "index": idx})
        # The controller sees the last frame of every `period`-tick batch and
        # its command takes effect on the following tick.
        if closed and (k + 1) % period == 0:
            history.append((u, idx))
            u_cmd = controller(history, step, 0.0, 1.0)
    return out


def tail_mean(traj, n):
    total = 0.0
    for p in traj[-n:]:
        total += p["index"]
    return total / n


def main():
    ticks = 1200          # 60 s at 50 ms
    tail = 400            # final 20 s
    quiet = run(42, 0.0, 0.9, ticks, True)
    noisy_closed = run(42, 0.02, 0.9, ticks, True)
    noisy_open = run(42, 0.02, 0.9, ticks, False)
    margin = tail_mean(noisy_closed, tail) - tail_mean(noisy_open, tail)
    doc = {
        "seed": 42, "u0": 0.9, "ticks": ticks, "tail_ticks": tail,
        "cv_max": 1.0, "step_size": 0.05, "controller_period_ticks": 10,
        "sigma0": {"u": [p["u"] for p in quiet],
                   "s": [p["s"] for p in quiet],
                   "index": [p["index"] for p in quiet]},
        "sigma002": {"closed_tail_mean": tail_mean(noisy_closed, tail),
                     "open_tail_mean": tail_mean(noisy_open, tail),
                     "margin": margin},
    }
    here = os.path.dirname(os.path.abspath(__file__))
    path = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "..", "data", "closed_loop_oracle.json")
    with open(path, "w") as f:
        json.dump(doc, f, separators=(",", ":"))
        f.write("\n")
    us = doc["sigma0"]["u"]
    print("final u", us[-1], "band after 600:", min(us[600:]), max(us[600:]))
    print("noisy closed %.6f open %.6f margin %.6f" % (
        doc["sigma002"]["closed_tail_mean"], doc["sigma002"]["open_tail_mean"], margin))


if __name__ == "__main__":
    main()
