"""Chebyshev-system certificates: collocation determinants, sampled
verification, null-coefficient alternation, and the bridge from a reduction
table's diagonal signs to Chebyshev systems."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ModelError
from .expressions import Expr
from .jets import eval_values
from .reduction import ReductionTable, definiteness_margins

DET_TOL = 1e-12
CERT_RESIDUAL_TOL = 1e-9
COND_LIMIT = 1e12


class FunctionSystem:
    """Ordered scalar functions on an interval, evaluable on point arrays."""

    def __init__(self, functions: Sequence[Callable], interval: tuple[float, float],
                 labels: Sequence[str] | None = None):
        self.functions = list(functions)
        self.interval = (float(interval[0]), float(interval[1]))
        self.labels = list(labels) if labels is not None else [f"u{i}" for i in range(len(functions))]
        if len(self.labels) != len(self.functions):
            raise ValueError("labels must match functions")

    def __len__(self) -> int:
        return len(self.functions)

    @classmethod
    def from_exprs(cls, exprs: Sequence[Expr], env: Mapping[str, float],
                   interval: tuple[float, float], include_constant: bool = True,
                   flips: Sequence[int] = ()) -> "FunctionSystem":
        """System [1,] f_1, ..., f_m from expressions with parameters bound.

        ``flips`` lists 1-based indices of expressions to negate (the
        relabeling recorded by a reduction table).
        """
        env = dict(env)
        flipset = set(flips)
        funcs: list[Callable] = []
        labels: list[str] = []
        if include_constant:
            funcs.append(lambda pts: np.ones_like(np.asarray(pts, dtype=float)))
            labels.append("1")
        for i, expr in enumerate(exprs, start=1):
            sign = -1.0 if i in flipset else 1.0
            funcs.append(lambda pts, e=expr, s=sign: s * eval_values(e, pts, env))
            labels.append(("-" if i in flipset else "") + f"f{i}")
        return cls(funcs, interval, labels)

    def extended(self, func: Callable, label: str = "probe") -> "FunctionSystem":
        return FunctionSystem(self.functions + [func], self.interval, self.labels + [label])

    def values(self, nodes) -> np.ndarray:
        pts = np.atleast_1d(np.asarray(nodes, dtype=float))
        return np.stack([np.asarray(f(pts), dtype=float) for f in self.functions])


def block_quadratic_form(block: Sequence[Sequence[Expr]], env: Mapping[str, float],
                         q: Sequence[float]) -> Callable:
    """Scalar probe c -> q^T Block(c) q for a matrix of expressions."""
    env = dict(env)
    q = np.asarray(q, dtype=float)
    p1 = q.size
    rows = [[block[i][j] for j in range(p1)] for i in range(p1)]

    def probe(pts):
        pts = np.atleast_1d(np.asarray(pts, dtype=float))
        acc = np.zeros(pts.size)
        for i in range(p1):
            for j in range(p1):
                if q[i] == 0.0 or q[j] == 0.0:
                    continue
                acc += q[i] * q[j] * eval_values(rows[i][j], pts, env)
        return acc

    return probe


def chebyshev_det(system: FunctionSystem, nodes) -> float:
    """Collocation determinant det[u_i(z_j)] at strictly increasing nodes."""
    pts = np.atleast_1d(np.asarray(nodes, dtype=float))
    if pts.size != len(system):
        raise ValueError(f"need {len(system)} nodes, got {pts.size}")
    if np.any(np.diff(pts) <= 0):
        raise ValueError("nodes must be strictly increasing")
    lo, hi = system.interval
    slack = 1e-12 * (1 + abs(lo) + abs(hi))
    if pts[0] < lo - slack or pts[-1] > hi + slack:
        raise ValueError("nodes outside the system interval")
    return float(np.linalg.det(system.values(pts)))


def _det_sign(system: FunctionSystem, pts: np.ndarray) -> tuple[float, bool]:
    """Determinant and whether its sign is numerically trustworthy.

    Smooth collocation matrices sit many orders of magnitude below their
    Hadamard bound even when comfortably nonsingular, so the positivity
    band is tied to the singular values of the row-equilibrated matrix
    instead: the sign is certified when sigma_min > DET_TOL * sigma_max.
    """
    M = system.values(pts)
    row_scale = np.abs(M).max(axis=1, keepdims=True)
    row_scale[row_scale == 0] = 1.0
    Me = M / row_scale
    det = float(np.linalg.det(Me))
    s = np.linalg.svd(Me, compute_uv=False)
    certified = bool(s[-1] > DET_TOL * s[0])
    return det, certified


@dataclass
class SampledVerdict:
    passed: bool
    trials: int
    witness: tuple[float, ...] | None = None
    witness_det: float | None = None

    def __bool__(self) -> bool:
        return self.passed


def _sample_nodes(rng, lo: float, hi: float, size: int, trial: int) -> np.ndarray:
    span = hi - lo
    min_gap = 1e-3 * span / size
    if trial % 4 == 3:
        # grid draw including both endpoints
        grid = np.linspace(lo, hi, max(4 * size, 33))
        idx = np.sort(rng.choice(np.arange(1, grid.size - 1), size=size - 2, replace=False))
        pts = np.concatenate([[grid[0]], grid[idx], [grid[-1]]])
    else:
        # stratified random: one point per equal sub-interval, jittered
        edges = np.linspace(lo, hi, size + 1)
        pts = edges[:-1] + rng.random(size) * (edges[1:] - edges[:-1])
    pts = np.sort(pts)
    for _ in range(8):
        gaps = np.diff(pts)
        if np.all(gaps >= min_gap):
            break
        bad = gaps < min_gap
        pts[1:][bad] = pts[:-1][bad] + min_gap
        pts = np.clip(np.sort(pts), lo, hi)
    return pts


def is_chebyshev_sampled(system: FunctionSystem, trials: int = 500, seed: int = 0) -> SampledVerdict:
    """Corroborate strict determinant positivity on sampled node tuples.

    PASS is sampling-based corroboration; FAIL carries a witness tuple where
    the (row-equilibrated) determinant is negative, or so close to singular
    that its sign cannot be certified.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = system.interval
    size = len(system)
    for trial in range(trials):
        pts = _sample_nodes(rng, lo, hi, size, trial)
        if np.any(np.diff(pts) <= 0):
            continue
        det, certified = _det_sign(system, pts)
        if det <= 0 or not certified:
            return SampledVerdict(False, trial + 1, tuple(float(p) for p in pts), det)
    return SampledVerdict(True, trials)


@dataclass
class AlternationCertificate:
    """Null coefficients of k functions at k+1 nodes, normalized r[-1] = 1.

    The coefficients satisfy the k homogeneous moment equations to
    ``residual`` and their signs alternate strictly.
    """

    nodes: tuple[float, ...]
    coefficients: tuple[float, ...]
    residual: float

    @property
    def alternating(self) -> bool:
        r = np.asarray(self.coefficients)
        return bool(np.all(r[:-1] * r[1:] < 0))


def alternation_certificate(system: FunctionSystem, nodes) -> AlternationCertificate:
    """Solve sum_i r_i u_l(z_i) = 0 (l = 0..k-1) for the 1-d null space."""
    pts = np.atleast_1d(np.asarray(nodes, dtype=float))
    k = len(system)
    if pts.size != k + 1:
        raise ValueError(f"need {k + 1} nodes for a system of {k} functions")
    if np.any(np.diff(pts) <= 0):
        raise ValueError("nodes must be strictly increasing")
    M = system.values(pts)  # (k, k+1)
    scale = np.abs(M).max(axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    U, s, Vh = np.linalg.svd(M / scale)
    if s[0] > COND_LIMIT * s[-1]:
        raise ModelError(f"collocation system numerically rank-deficient (cond {s[0] / s[-1]:.3g})")
    r = Vh[-1]
    if abs(r[-1]) < 1e-12 * np.abs(r).max():
        raise ModelError("null vector has (near-)zero trailing coefficient")
    r = r / r[-1]
    residual = float(np.abs((M / scale) @ r).max() / max(1.0, np.abs(r).max()))
    if residual > CERT_RESIDUAL_TOL:
        raise ModelError(f"alternation residual too large: {residual:.3e}")
    cert = AlternationCertificate(
        nodes=tuple(float(p) for p in pts),
        coefficients=tuple(float(x) for x in r),
        residual=residual,
    )
    if not cert.alternating:
        raise ModelError(f"null coefficients do not alternate: {cert.coefficients}")
    return cert


@dataclass
class TableVerdict:
    """Chebyshev conclusion drawn from a reduction table's diagonal signs.

    ``verdict``: PASS, FAIL, or NOT_APPLICABLE (a scalar diagonal vanishes,
    so the sign approach does not apply).  ``variant`` is "plus" when the
    basis extended by +q^T Block q forms the Chebyshev system after the
    recorded ``flips``, "minus" when the negated probe is needed.
    """

    verdict: str
    variant: str | None = None
    flips: tuple[int, ...] = ()
    witness: tuple[float, float] | None = None  # (c, probe value or eigmin)

    def __bool__(self) -> bool:
        return self.verdict == "PASS"


def chebyshev_from_table(table: ReductionTable, probe=None, tol: float = 1e-9) -> TableVerdict:
    """Decide the Chebyshev property from diagonal signs.

    With a probe direction the bottom row is contracted to the scalar
    q^T f[k,k] q, which must keep one sign over the grid; without a probe
    the bottom matrix must be definite everywhere (covering every probe at
    once).  The sign-flip relabeling of the basis is recorded; its parity
    decides whether the "+probe" or "-probe" extension is Chebyshev.
    """
    if table.violation is not None or table.signs is None:
        return TableVerdict("NOT_APPLICABLE")
    flips = table.flip_pattern()
    toggled = table.bottom_sign_toggled()

    if probe is not None:
        q = np.asarray(probe, dtype=float)
        if q.shape != (table.p1,) or not np.any(q):
            raise ValueError(f"probe must be a nonzero vector of size {table.p1}")
        vals = np.einsum("i,nij,j->n", q, table.bottom, q)
        # pointwise scale: the quadratic form's magnitudes vary by orders of
        # magnitude along the grid, so a single global scale is useless
        scale = np.einsum("i,nij,j->n", np.abs(q), np.abs(table.bottom), np.abs(q))
        scale = np.maximum(scale, 1e-300)
        if np.all(vals > tol * scale):
            probe_sign = 1
        elif np.all(vals < -tol * scale):
            probe_sign = -1
        else:
            worst = int(np.argmin(np.abs(vals) / scale))
            return TableVerdict(
                "FAIL", None, flips, (float(table.grid[worst]), float(vals[worst]))
            )
        effective = -probe_sign if toggled else probe_sign
        return TableVerdict("PASS", "plus" if effective > 0 else "minus", flips)

    pos_margin, neg_margin, _ = definiteness_margins(table.bottom)
    if np.all(pos_margin > tol):
        matrix_sign = 1
    elif np.all(neg_margin > tol):
        matrix_sign = -1
    else:
        worst = int(np.argmin(np.maximum(pos_margin, neg_margin)))
        return TableVerdict(
            "FAIL", None, flips,
            (float(table.grid[worst]), float(min(pos_margin[worst], neg_margin[worst]))),
        )
    effective = -matrix_sign if toggled else matrix_sign
    return TableVerdict("PASS", "plus" if effective > 0 else "minus", flips)
