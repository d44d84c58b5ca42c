"""Designs, information matrices, moment vectors and Loewner comparison."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import ModelError

WEIGHT_TOL = 1e-12
MERGE_TOL = 1e-10
LOEWNER_TOL = 1e-9


@dataclass(frozen=True)
class Design:
    """Discrete probability measure on an interval: sorted support + weights.

    Construction canonicalizes: points are sorted, points closer than
    ``merge_tol`` are merged (weights added), weights must be positive and
    sum to 1 within ``WEIGHT_TOL``, and every point must lie in the interval.
    """

    points: tuple[float, ...]
    weights: tuple[float, ...]
    interval: tuple[float, float]

    def __init__(self, points: Iterable[float], weights: Iterable[float],
                 interval: tuple[float, float], merge_tol: float = MERGE_TOL):
        pts = np.asarray(list(points), dtype=float)
        wts = np.asarray(list(weights), dtype=float)
        lo, hi = float(interval[0]), float(interval[1])
        if not lo < hi:
            raise ModelError(f"empty design interval [{lo}, {hi}]")
        if pts.size == 0 or pts.shape != wts.shape:
            raise ModelError("design needs matching, non-empty points and weights")
        if np.any(wts <= 0):
            raise ModelError("design weights must be positive")
        total = wts.sum()
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ModelError(f"design weights sum to {total!r}, expected 1")
        slack = 1e-12 * (1.0 + abs(lo) + abs(hi))
        if np.any(pts < lo - slack) or np.any(pts > hi + slack):
            raise ModelError("design point outside the interval")
        pts = np.clip(pts, lo, hi)
        order = np.argsort(pts)
        pts, wts = pts[order], wts[order]
        merged_p = [pts[0]]
        merged_w = [wts[0]]
        for p, w in zip(pts[1:], wts[1:]):
            if p - merged_p[-1] < merge_tol:
                merged_w[-1] += w
            else:
                merged_p.append(p)
                merged_w.append(w)
        object.__setattr__(self, "points", tuple(float(p) for p in merged_p))
        object.__setattr__(self, "weights", tuple(float(w) for w in merged_w))
        object.__setattr__(self, "interval", (lo, hi))

    @property
    def size(self) -> int:
        return len(self.points)

    def points_array(self) -> np.ndarray:
        return np.asarray(self.points)

    def weights_array(self) -> np.ndarray:
        return np.asarray(self.weights)

    def contains_point(self, value: float, tol: float | None = None) -> bool:
        lo, hi = self.interval
        tol = 1e-9 * max(1.0, hi - lo) if tol is None else tol
        return any(abs(p - value) <= tol for p in self.points)

    # -- serialization ------------------------------------------------------

    def to_json_obj(self) -> dict:
        return {
            "interval": [self.interval[0], self.interval[1]],
            "points": [{"c": p, "w": w} for p, w in zip(self.points, self.weights)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True)

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Design":
        pts = [entry["c"] for entry in obj["points"]]
        wts = [entry["w"] for entry in obj["points"]]
        return cls(pts, wts, tuple(obj["interval"]))

    @classmethod
    def from_json(cls, text: str) -> "Design":
        return cls.from_json_obj(json.loads(text))

    def to_csv(self, var: str = "c") -> str:
        lines = [f"# interval: {self.interval[0]!r} {self.interval[1]!r}", f"{var},weight"]
        for p, w in zip(self.points, self.weights):
            lines.append(f"{p!r},{w!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "Design":
        interval = None
        pts, wts = [], []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("interval:"):
                    parts = body[len("interval:"):].split()
                    interval = (float(parts[0]), float(parts[1]))
                continue
            first = line.split(",")[0].strip()
            try:
                float(first)
            except ValueError:
                continue  # header row
            a, b = line.split(",")
            pts.append(float(a))
            wts.append(float(b))
        if interval is None:
            if not pts:
                raise ModelError("design CSV has no points")
            interval = (min(pts), max(pts))
        return cls(pts, wts, interval)


@dataclass(frozen=True)
class MomentVector:
    """Weighted moments of the basis functions plus the tail-block moment.

    ``psi[l]`` is the weighted sum of basis function l (l = 0 is the constant
    1, so psi[0] equals the total weight); ``c22`` is the weighted sum of the
    lower principal block.
    """

    psi: np.ndarray
    c22: np.ndarray

    @property
    def k(self) -> int:
        return self.psi.size

    @property
    def p1(self) -> int:
        return self.c22.shape[0]


def assemble_C(model, c: float, theta: Mapping[str, float]) -> np.ndarray:
    """Symmetric p x p matrix of basis-function values at one design point."""
    return model.c_matrix(np.asarray([float(c)]), theta)[0]


def assemble_info(model, design: Design, theta: Mapping[str, float]) -> np.ndarray:
    """Information matrix P (sum of weighted C) P^T; checks P conditioning."""
    P = model.p_matrix(theta)
    cond = np.linalg.cond(P)
    if not np.isfinite(cond) or cond > 1e12:
        raise ModelError(f"scaling matrix P is ill-conditioned (cond ~ {cond:.3g})")
    cs = design.points_array()
    ws = design.weights_array()
    C = model.c_matrix(cs, theta)
    M = np.einsum("i,ijk->jk", ws, C)
    info = P @ M @ P.T
    return 0.5 * (info + info.T)


def moment_vector(model, design: Design, theta: Mapping[str, float]) -> MomentVector:
    cs = design.points_array()
    ws = design.weights_array()
    psi_vals = model.basis_values(cs, theta)  # (k-1, n)
    psi = np.empty(psi_vals.shape[0] + 1)
    psi[0] = ws.sum()
    psi[1:] = psi_vals @ ws
    block = model.c22_values(cs, theta)  # (n, p1, p1)
    c22 = np.einsum("i,ijk->jk", ws, block)
    return MomentVector(psi=psi, c22=0.5 * (c22 + c22.T))


def loewner_gap(info_a: np.ndarray, info_b: np.ndarray, tol: float = LOEWNER_TOL):
    """Smallest eigenvalue of A - B and a tri-state dominance verdict.

    ``STRICT`` when eigmin > tol, ``YES`` when eigmin >= -tol, else ``NO``.
    """
    A = np.asarray(info_a, dtype=float)
    B = np.asarray(info_b, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    eigmin = float(np.linalg.eigvalsh(A - B)[0])
    if eigmin > tol:
        verdict = "STRICT"
    elif eigmin >= -tol:
        verdict = "YES"
    else:
        verdict = "NO"
    return eigmin, verdict
