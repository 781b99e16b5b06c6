"""Brute-force grid oracle for tiny feature counts.

Evaluates the network on a full lattice over the ranges of up to three
features and reads off ground truth the symbolic pipeline can be checked
against: which lattice points flip the label, the cheapest flip in
weighted L1, and the largest lattice-aligned box that flips everywhere.
Scales as grid^k, which is the point: it is only trustworthy where it is
affordable, so anything past three features is refused.
"""

from __future__ import annotations

import numpy as np

from . import lincons, relunet
from .relunet import Network

Array = np.ndarray

MAX_FEATURES = 3
_CHUNK = 65536


def grid_axes(bounds: tuple[Array, Array], s, grid: int) -> list[Array]:
    """Per-feature lattice coordinates: ``grid`` evenly spaced points
    spanning each selected feature's range (the midpoint when grid=1)."""
    if grid < 1:
        raise ValueError("grid must be >= 1")
    s = tuple(int(i) for i in s)
    if len(s) > MAX_FEATURES:
        raise ValueError(
            "grid oracle refuses %d features: the lattice grows as grid^k "
            "and stops being an affordable ground truth past %d"
            % (len(s), MAX_FEATURES))
    lo, hi = bounds
    axes = []
    for i in s:
        if grid == 1:
            axes.append(np.array([(lo[i] + hi[i]) / 2.0]))
        else:
            axes.append(np.linspace(lo[i], hi[i], grid))
    return axes


def evaluate_grid(net: Network, v: Array, s, axes, desired: int = 1) -> Array:
    """Boolean acceptance mask of shape ``(len(axes[0]), ..., len(axes[k-1]))``.

    Each lattice cell holds whether the input with features ``s`` replaced
    by that lattice point classifies as ``desired``.
    """
    v = np.asarray(v, dtype=float)
    s = tuple(int(i) for i in s)
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)
    offsets = coords - v[list(s)]
    out = np.empty(coords.shape[0], dtype=bool)
    for start in range(0, coords.shape[0], _CHUNK):
        block = offsets[start:start + _CHUNK]
        logits = relunet.forward(net, lincons.embed(v, s, block))
        out[start:start + _CHUNK] = np.argmax(logits, axis=1) == desired
    return out.reshape([len(a) for a in axes])


def min_flip_point(v: Array, s, axes, mask: Array, weights: Array):
    """Cheapest accepted lattice point in weighted L1 from ``v``.

    ``weights`` is full-dimensional; returns ``(distance, coords)`` with
    ``coords`` in absolute feature units, or ``None`` when nothing on the
    lattice is accepted.
    """
    if not mask.any():
        return None
    v = np.asarray(v, dtype=float)
    s = tuple(int(i) for i in s)
    w = np.asarray(weights, dtype=float)[list(s)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)
    cost = np.abs(coords - v[list(s)]) @ w
    cost[~mask.ravel()] = np.inf
    best = int(np.argmin(cost))
    return float(cost[best]), coords[best].copy()


def _longest_run(mask: Array) -> tuple[int, int]:
    """(start, stop) of the longest True run, stop exclusive; (0, 0) if none."""
    best = (0, 0)
    start = None
    for i, val in enumerate(mask):
        if val and start is None:
            start = i
        if (not val or i == len(mask) - 1) and start is not None:
            stop = i + 1 if val else i
            if stop - start > best[1] - best[0]:
                best = (start, stop)
            start = None
    return best


def _largest_rectangle(mask: Array) -> tuple[int, ...]:
    """Largest all-True axis-aligned rectangle in a 2-D mask, by the
    histogram-stack sweep; returns (r0, r1, c0, c1), stops exclusive."""
    rows, cols = mask.shape
    heights = np.zeros(cols, dtype=int)
    best = (0, 0, 0, 0)
    best_area = 0
    for r in range(rows):
        heights = np.where(mask[r], heights + 1, 0)
        stack = []  # (column, height at entry)
        for c in range(cols + 1):
            h = heights[c] if c < cols else 0
            left = c
            while stack and stack[-1][1] >= h:
                col0, h0 = stack.pop()
                area = h0 * (c - col0)
                if area > best_area:
                    best_area = area
                    best = (r - h0 + 1, r + 1, col0, c)
                left = col0
            stack.append((left, h))
    return best


def largest_accepted_box(axes, mask: Array):
    """Largest lattice-aligned box (by real volume, then point count) whose
    every lattice point is accepted.  Supports 1-D to 3-D masks; returns
    ``{"lo", "hi", "points_per_axis", "volume"}`` or ``None``.
    """
    if not mask.any():
        return None
    k = mask.ndim

    def score(slices):
        pts = [sl[1] - sl[0] for sl in slices]
        if any(p == 0 for p in pts):
            return -1.0, 0
        vol = 1.0
        for ax, (a, b) in zip(axes, slices):
            vol *= float(ax[b - 1] - ax[a])
        return vol, int(np.prod(pts))

    if k == 1:
        slices = [_longest_run(mask)]
    elif k == 2:
        r0, r1, c0, c1 = _largest_rectangle(mask)
        slices = [(r0, r1), (c0, c1)]
    elif k == 3:
        best_slices, best_score = None, (-1.0, 0)
        n0 = mask.shape[0]
        for a in range(n0):
            acc = np.ones(mask.shape[1:], dtype=bool)
            for b in range(a, n0):
                acc &= mask[b]
                if not acc.any():
                    break
                r0, r1, c0, c1 = _largest_rectangle(acc)
                cand = [(a, b + 1), (r0, r1), (c0, c1)]
                sc = score(cand)
                if sc > best_score:
                    best_score, best_slices = sc, cand
        slices = best_slices
    else:
        raise ValueError("mask must be 1-D to 3-D")

    if slices is None or any(sl[1] - sl[0] == 0 for sl in slices):
        return None
    vol, pts = score(slices)
    return {
        "lo": [float(ax[sl[0]]) for ax, sl in zip(axes, slices)],
        "hi": [float(ax[sl[1] - 1]) for ax, sl in zip(axes, slices)],
        "points_per_axis": [int(sl[1] - sl[0]) for sl in slices],
        "volume": float(vol),
    }


def run_oracle(net: Network, v: Array, s, bounds, grid: int,
               weights: Array | None = None, desired: int = 1) -> dict:
    """Full report: acceptance fraction, cheapest flip, largest box."""
    v = np.asarray(v, dtype=float)
    s = tuple(int(i) for i in s)
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    if weights is None:
        weights = np.ones(v.size)  # raw L1 unless the caller's config says otherwise
    axes = grid_axes((lo, hi), s, grid)
    mask = evaluate_grid(net, v, s, axes, desired=desired)
    flip = min_flip_point(v, s, axes, mask, weights)
    report = {
        "features": list(s),
        "grid": grid,
        "accepted_fraction": float(mask.mean()),
        "accepted_count": int(mask.sum()),
        "min_flip": None,
        "largest_box": largest_accepted_box(axes, mask),
    }
    if flip is not None:
        report["min_flip"] = {"distance": flip[0], "point": flip[1].tolist()}
    return report
