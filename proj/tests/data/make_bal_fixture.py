#!/usr/bin/env python3
# Copyright 2026 The sparsesfm Authors. All Rights Reserved.
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
"""Writes small_problem.bal and prints its initial cost.

The cost is evaluated here with numpy straight from the BAL conventions
(P = R X + T, p = -P / P_z, r = 1 + k1 |p|^2 + k2 |p|^4, pixel = f r p) and
is independent of the C++ code. The printed value is committed in the tests.
"""

import numpy as np

NUM_CAMERAS = 4
NUM_POINTS = 12


def rodrigues(w):
    theta = np.linalg.norm(w)
    if theta < 1e-15:
        return np.eye(3)
    k = w / theta
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * K @ K


def main():
    rng = np.random.default_rng(20260417)
    cams = []
    for i in range(NUM_CAMERAS):
        w = rng.normal(scale=0.1, size=3)
        # Cameras look down -z; points sit around z = -5 in camera frames.
        t = np.array([rng.normal(scale=0.3), rng.normal(scale=0.3), -5.0 + rng.normal(scale=0.2)])
        f = 400.0 + 50.0 * rng.random()
        k1 = 1e-3 * rng.normal()
        k2 = 1e-5 * rng.normal()
        cams.append((w, t, f, k1, k2))
    points = rng.uniform(-1.0, 1.0, size=(NUM_POINTS, 3))

    obs = []
    for i, (w, t, f, k1, k2) in enumerate(cams):
        R = rodrigues(w)
        for j in range(NUM_POINTS):
            P = R @ points[j] + t
            p = -P[:2] / P[2]
            r2 = p @ p
            pix = f * (1.0 + k1 * r2 + k2 * r2 * r2) * p
            obs.append((i, j, pix + rng.normal(scale=2.0, size=2)))

    lines = [f"{NUM_CAMERAS} {NUM_POINTS} {len(obs)}"]
    for i, j, uv in obs:
        lines.append(f"{i} {j} {uv[0]:.17e} {uv[1]:.17e}")
    for w, t, f, k1, k2 in cams:
        for v in (*w, *t, f, k1, k2):
            lines.append(f"{v:.17e}")
    for X in points:
        for v in X:
            lines.append(f"{v:.17e}")
    with open("small_problem.bal", "w") as fh:
        fh.write("\n".join(lines) + "\n")

    # Re-read the text so the cost uses exactly the written decimals.
    vals = open("small_problem.bal").read().split()
    C, Pn, N = int(vals[0]), int(vals[1]), int(vals[2])
    pos = 3
    o = []
    for _ in range(N):
        o.append((int(vals[pos]), int(vals[pos + 1]), float(vals[pos + 2]), float(vals[pos + 3])))
        pos += 4
    cam = np.array([float(v) for v in vals[pos:pos + 9 * C]]).reshape(C, 9)
    pos += 9 * C
    pts = np.array([float(v) for v in vals[pos:pos + 3 * Pn]]).reshape(Pn, 3)
    cost = 0.0
    for i, j, u, v in o:
        R = rodrigues(cam[i, :3])
        P = R @ pts[j] + cam[i, 3:6]
        p = -P[:2] / P[2]
        r2 = p @ p
        pix = cam[i, 6] * (1.0 + cam[i, 7] * r2 + cam[i, 8] * r2 * r2) * p
        cost += 0.5 * float(np.sum((pix - np.array([u, v])) ** 2))
    print(f"initial cost {cost:.17g}")


if __name__ == "__main__":
    main()
