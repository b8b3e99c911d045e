"""Synthetic labelled event data: moving filled shapes seen by an ideal event sensor.

Each sample renders 1-3 non-overlapping shapes translating at constant
velocity. Every 1 ms the scene is rasterized at integer-rounded positions and
each pixel whose intensity changed emits one event whose polarity is the sign
of the change. The label map marks shape interiors at the end of the window.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ArgumentError
from .events import EventStream, read_events, read_pgm, write_events, write_pgm

FAMILIES = ("rectangle", "disk", "triangle", "diamond", "pentagon", "hexagon")
STEP_US = 1000


def _polygon_mask(xx, yy, cx, cy, r, sides, phase):
    angles = phase + 2 * np.pi * np.arange(sides) / sides
    vx, vy = cx + r * np.cos(angles), cy + r * np.sin(angles)
    inside = np.ones(xx.shape, dtype=bool)
    for i in range(sides):
        x0, y0, x1, y1 = vx[i], vy[i], vx[(i + 1) % sides], vy[(i + 1) % sides]
        inside &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return inside


def shape_mask(family: str, cx: int, cy: int, r: float, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    if family == "rectangle":
        return (np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= 0.6 * r)
    if family == "disk":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    sides = {"triangle": 3, "diamond": 4, "pentagon": 5, "hexagon": 6}[family]
    return _polygon_mask(xx, yy, cx, cy, r * 1.15, sides, -np.pi / 2)


class _Shape:
    def __init__(self, cls_id, family, start, velocity, radius, sign):
        self.cls_id, self.family = cls_id, family
        self.start, self.velocity = np.asarray(start, float), np.asarray(velocity, float)
        self.radius, self.sign = radius, sign
        self._masks = {}

    def center(self, frac: float) -> tuple[int, int]:
        c = self.start + self.velocity * frac
        return int(np.rint(c[0])), int(np.rint(c[1]))

    def mask(self, frac, h, w):
        key = self.center(frac)
        if key not in self._masks:
            self._masks[key] = shape_mask(self.family, key[0], key[1], self.radius, h, w)
        return self._masks[key]


def _place_shapes(rng, classes, h, w):
    scale = min(h, w) / 64.0
    count = int(rng.integers(1, 4))
    shapes = []
    for _ in range(count):
        for _attempt in range(50):
            cls_id = int(rng.integers(1, classes))
            family = FAMILIES[(cls_id - 1) % len(FAMILIES)]
            r = rng.uniform(7.0, 13.0) * scale
            speed = rng.uniform(4.0, 12.0) * scale
            ang = rng.uniform(0, 2 * np.pi)
            v = np.array([np.cos(ang), np.sin(ang)]) * speed
            margin = r + 2
            lo = np.array([margin, margin]) + np.maximum(-v, 0)
            hi = np.array([w - 1 - margin, h - 1 - margin]) - np.maximum(v, 0)
            if np.any(hi <= lo):
                continue
            start = rng.uniform(lo, hi)
            cand = _Shape(cls_id, family, start, v, r, int(rng.choice([-1, 1])))
            fr = np.linspace(0, 1, 11)
            if all(np.min(np.linalg.norm((cand.start - o.start)[None] + fr[:, None] * (cand.velocity - o.velocity)[None],
                                         axis=1)) > 1.3 * (cand.radius + o.radius) + 2 for o in shapes):
                shapes.append(cand)
                break
    return shapes


def render_sample(rng: np.random.Generator, classes: int, h: int, w: int, dt_us: int, bins: int):
    shapes = _place_shapes(rng, classes, h, w)
    steps = bins * dt_us // STEP_US
    xs, ys, ts, ps = [], [], [], []
    prev = np.zeros((h, w), dtype=np.int8)
    for s in shapes:
        prev[s.mask(0.0, h, w)] = s.sign
    for k in range(1, steps):
        frac = k / (steps - 1)
        cur = np.zeros((h, w), dtype=np.int8)
        for s in shapes:
            cur[s.mask(frac, h, w)] = s.sign
        diff = cur.astype(np.int16) - prev
        yy, xx = np.nonzero(diff)
        if yy.size:
            ys.append(yy)
            xs.append(xx)
            ts.append(np.full(yy.size, k * STEP_US, dtype=np.int64))
            ps.append(np.sign(diff[yy, xx]).astype(np.int8))
        prev = cur
    if xs:
        stream = EventStream(w, h, np.concatenate(xs).astype(np.int64), np.concatenate(ys).astype(np.int64),
                             np.concatenate(ts), np.concatenate(ps))
    else:
        stream = EventStream.empty(w, h)
    labels = np.zeros((h, w), dtype=np.uint8)
    for s in shapes:
        labels[s.mask(1.0, h, w)] = s.cls_id
    return stream, labels, shapes


def synth_dataset(seed: int, n_samples: int, classes: int, height: int, width: int,
                  dt_us: int = 50_000, bins: int = 5):
    """Deterministic list of (EventStream, label map) pairs."""
    if classes < 2:
        raise ArgumentError("need at least 2 classes (background + shapes)")
    if height < 32 or width < 32:
        raise ArgumentError("height and width must be >= 32")
    if n_samples < 0:
        raise ArgumentError("n_samples must be non-negative")
    children = np.random.SeedSequence(seed).spawn(n_samples)
    out = []
    for ss in children:
        stream, labels, _ = render_sample(np.random.default_rng(ss), classes, height, width, dt_us, bins)
        out.append((stream, labels))
    return out


def write_dataset(root, pairs, meta: dict) -> None:
    root = Path(root)
    (root / "events").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for i, (stream, labels) in enumerate(pairs):
        write_events(stream, root / "events" / f"{i:06d}.evs1")
        write_pgm(labels, root / "labels" / f"{i:06d}.pgm")
    manifest = dict(meta, samples=len(pairs))
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(root):
    """Returns (manifest, list of (EventStream, labels)) in index order."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    pairs = []
    for ev in sorted((root / "events").glob("*.evs1")):
        pairs.append((read_events(ev), read_pgm(root / "labels" / (ev.stem + ".pgm"))))
    return manifest, pairs
