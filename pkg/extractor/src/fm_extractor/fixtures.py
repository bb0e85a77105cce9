"""Generate small labeled OBJ meshes used by the integration tests.

Three household-style shapes with part groups: a mug (body + handle), a box
radio (case + two buttons), and a capsule lamp (pole + shade).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class ObjBuilder:
    def __init__(self):
        self.lines: list[str] = []
        self.vcount = 0

    def group(self, name: str):
        self.lines.append(f"g {name}")

    def quad_ring(self, profile, closed=True):
        """profile: list of (ring of 3d points); connects consecutive rings with quads."""
        start = self.vcount + 1
        n = len(profile[0])
        for ring in profile:
            for p in ring:
                self.lines.append(f"v {p[0]:.6f} {p[1]:.6f} {p[2]:.6f}")
                self.vcount += 1
        for r in range(len(profile) - 1):
            for i in range(n if closed else n - 1):
                a = start + r * n + i
                b = start + r * n + (i + 1) % n
                c = start + (r + 1) * n + (i + 1) % n
                d = start + (r + 1) * n + i
                self.lines.append(f"f {a} {b} {c} {d}")

    def fan_cap(self, ring_start, n, center_point, flip=False):
        self.lines.append(f"v {center_point[0]:.6f} {center_point[1]:.6f} {center_point[2]:.6f}")
        self.vcount += 1
        center = self.vcount
        for i in range(n):
            a = ring_start + i
            b = ring_start + (i + 1) % n
            if flip:
                a, b = b, a
            self.lines.append(f"f {center} {a} {b}")

    def box(self, c, half):
        cx, cy, cz = c
        hx, hy, hz = half
        start = self.vcount + 1
        for dx in (-hx, hx):
            for dy in (-hy, hy):
                for dz in (-hz, hz):
                    self.lines.append(f"v {cx+dx:.6f} {cy+dy:.6f} {cz+dz:.6f}")
                    self.vcount += 1
        # vertex order: (dx,dy,dz) lexicographic over {-,+}
        quads = [
            (0, 1, 3, 2), (4, 6, 7, 5),  # x faces
            (0, 4, 5, 1), (2, 3, 7, 6),  # y faces
            (0, 2, 6, 4), (1, 5, 7, 3),  # z faces
        ]
        for q in quads:
            self.lines.append("f " + " ".join(str(start + i) for i in q))

    def text(self):
        return "\n".join(self.lines) + "\n"


def _circle(radius, y, n=24, center=(0.0, 0.0)):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return [(center[0] + radius * np.cos(a), y, center[1] + radius * np.sin(a)) for a in t]


def mug() -> str:
    b = ObjBuilder()
    b.group("body")
    rings = [_circle(0.5, y) for y in np.linspace(-0.6, 0.6, 7)]
    b.quad_ring(rings)
    first_ring_start = 1
    b.fan_cap(first_ring_start, 24, (0.0, -0.6, 0.0), flip=True)
    b.group("handle")
    t = np.linspace(-np.pi / 2, np.pi / 2, 9)
    path = [(0.5 + 0.28 * np.cos(a), 0.3 * np.sin(a), 0.0) for a in t]
    rings = []
    for px, py, pz in path:
        rings.append([(px + 0.06 * np.cos(q), py, pz + 0.06 * np.sin(q)) for q in np.linspace(0, 2 * np.pi, 8, endpoint=False)])
    b.quad_ring(rings)
    return b.text()


def radio() -> str:
    b = ObjBuilder()
    b.group("case")
    b.box((0.0, 0.0, 0.0), (0.6, 0.4, 0.25))
    b.group("button_a")
    b.box((-0.25, 0.2, 0.27), (0.07, 0.07, 0.035))
    b.group("button_b")
    b.box((0.25, 0.2, 0.27), (0.07, 0.07, 0.035))
    return b.text()


def lamp() -> str:
    b = ObjBuilder()
    b.group("pole")
    rings = [_circle(0.07, y) for y in np.linspace(-0.7, 0.25, 5)]
    b.quad_ring(rings)
    base_start = 1
    b.fan_cap(base_start, 24, (0.0, -0.7, 0.0), flip=True)
    b.group("shade")
    rings = [_circle(r, y) for r, y in [(0.45, 0.2), (0.32, 0.45), (0.18, 0.62)]]
    b.quad_ring(rings)
    return b.text()


FIXTURES = {"mug": mug, "radio": radio, "lamp": lamp}


def write_fixtures(out_dir: Path | str) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, fn in FIXTURES.items():
        path = out_dir / f"{name}.obj"
        path.write_text(fn(), encoding="utf-8")
        paths.append(path)
    return paths


if __name__ == "__main__":
    import sys

    for p in write_fixtures(sys.argv[1] if len(sys.argv) > 1 else "fixtures"):
        print(p)
