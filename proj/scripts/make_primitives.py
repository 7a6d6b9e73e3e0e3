#!/usr/bin/env python3
"""Writes the reconstructed macaw-cub primitive set.

Seven closed clockwise loops, 72 samples each (100 ms sampling), in the
normalized workspace [-1, 1]^2 with y pointing up. The shapes are redrawn by
hand to match the structure of the original demo set (eye, head, beak, neck,
right wing, belly, left wing); they are not the original recordings.
"""
import math
import os
import sys

STEPS = 72

# label: (cx, cy, rx, ry, tilt_rad, lobe_amp, lobe_phase)
SHAPES = {
    "Eye":   (0.12, 0.54, 0.075, 0.075, 0.0, 0.00, 0.0),
    "Head":  (0.00, 0.50, 0.30, 0.27, 0.0, 0.05, 0.6),
    "Beak":  (0.44, 0.40, 0.12, 0.10, -0.5, 0.18, 0.0),
    "Neck":  (0.00, 0.06, 0.17, 0.10, 0.0, 0.04, 1.2),
    "Rwing": (-0.50, -0.30, 0.13, 0.38, -0.25, 0.08, 0.3),
    "Belly": (0.00, -0.44, 0.28, 0.36, 0.0, 0.05, 2.0),
    "Lwing": (0.50, -0.30, 0.13, 0.38, 0.25, 0.08, 2.8),
}


def loop(cx, cy, rx, ry, tilt, amp, phase):
    pts = []
    for i in range(STEPS):
        # clockwise from the top of the shape
        th = math.pi / 2 - 2 * math.pi * i / STEPS
        r = 1.0 + amp * math.cos(3 * th + phase)
        x0 = rx * r * math.cos(th)
        y0 = ry * r * math.sin(th)
        x = cx + x0 * math.cos(tilt) - y0 * math.sin(tilt)
        y = cy + x0 * math.sin(tilt) + y0 * math.cos(tilt)
        pts.append((x, y))
    return pts


def main(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for label, spec in SHAPES.items():
        with open(os.path.join(out_dir, label + ".csv"), "w", newline="\n") as f:
            f.write("x,y\n")
            for x, y in loop(*spec):
                assert -1.0 <= x <= 1.0 and -1.0 <= y <= 1.0
                f.write(f"{x:.6f},{y:.6f}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data", "primitives"))
