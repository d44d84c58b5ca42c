"""Locally optimal designs restricted to a complete class, with an
equivalence-theorem sensitivity certificate and an unrestricted grid
reference optimizer for cross-checks.

All criteria are expressed through a value and its matrix gradient G with
respect to the information matrix; the sensitivity function is then
phi(c) = tr(G K(c)) with K(c) = P C(c) P^T, and the equivalence bound is
tr(G I): a design maximizes the criterion over the interval iff
max_c phi(c) equals the bound (within tolerance), with equality attained
on the support.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .complete_class import CompleteClassDescriptor
from .designs import Design, assemble_info
from .errors import ModelError, NumericalFailure
from .jets import eval_series, eval_values
from .models import ModelSpec

SENS_TOL = 1e-3
RIDGE = 1e-12


@dataclass(frozen=True)
class Criterion:
    """Information criterion to maximize.

    kind: D (log det), A (-trace of the inverse), E (smallest eigenvalue),
    PhiP (Kiefer mean of eigenvalue powers, exponent p < 0, p -> -inf gives
    E, p = -1 relates to A), or c (minus the variance of a linear
    combination, direction ``vector``).

    ``transform`` optionally restricts attention to a smooth reparameterization:
    a q x p grid of Jacobian expressions in the parameters; the criterion is
    then applied to the information matrix of the transformed quantities,
    (J I^{-1} J^T)^{-1}.
    """

    kind: str
    p: float | None = None
    vector: tuple[float, ...] | None = None
    transform: tuple[tuple, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("D", "A", "E", "PhiP", "c"):
            raise ModelError(f"unknown criterion kind {self.kind!r}")
        if self.kind == "PhiP":
            if self.p is None or not self.p < 0:
                raise ModelError("PhiP needs an exponent p < 0")
        if self.kind == "c" and (self.vector is None or not any(self.vector)):
            raise ModelError("c-optimality needs a nonzero direction vector")

    @classmethod
    def parse(cls, text: str) -> "Criterion":
        """"D" | "A" | "E" | "PhiP:-1.5" | "c:1,0,0,0"."""
        head, _, rest = text.partition(":")
        head = head.strip()
        if head in ("D", "A", "E"):
            return cls(head)
        if head == "PhiP":
            return cls("PhiP", p=float(rest))
        if head == "c":
            return cls("c", vector=tuple(float(v) for v in rest.split(",")))
        raise ModelError(f"cannot parse criterion {text!r}")

    def label(self) -> str:
        if self.kind == "PhiP":
            return f"PhiP({self.p})"
        if self.kind == "c":
            return f"c{list(self.vector)}"
        return self.kind

    # -- value and gradient with respect to the information matrix ---------

    def _base_value_grad(self, info: np.ndarray):
        p_dim = info.shape[0]
        if self.kind == "D":
            sign, logdet = np.linalg.slogdet(info)
            if sign <= 0:
                return -np.inf, np.zeros_like(info)
            return float(logdet), np.linalg.inv(info)
        if self.kind == "A":
            inv = np.linalg.inv(info)
            return float(-np.trace(inv)), inv @ inv
        if self.kind == "E":
            vals, vecs = np.linalg.eigh(info)
            u = vecs[:, 0]
            return float(vals[0]), np.outer(u, u)
        if self.kind == "PhiP":
            vals, vecs = np.linalg.eigh(info)
            if vals[0] <= 0:
                return -np.inf, np.zeros_like(info)
            p = self.p
            mean_pow = float(np.mean(vals**p))
            value = mean_pow ** (1.0 / p)
            grad_eigs = (value ** (1.0 - p)) * (vals ** (p - 1.0)) / p_dim
            grad = (vecs * grad_eigs) @ vecs.T
            return value, grad
        # c-optimality
        a = np.asarray(self.vector, dtype=float)
        inv = np.linalg.pinv(info, rcond=1e-12)
        proj = info @ inv @ a
        if np.linalg.norm(proj - a) > 1e-8 * max(1.0, np.linalg.norm(a)):
            return -np.inf, np.zeros_like(info)
        ia = inv @ a
        return float(-(a @ ia)), np.outer(ia, ia)

    def value_and_grad(self, info: np.ndarray, model: ModelSpec | None = None,
                       theta: Mapping[str, float] | None = None):
        """Criterion value and symmetric gradient matrix dvalue/dI."""
        if self.transform is None:
            return self._base_value_grad(info)
        J = _transform_jacobian(self.transform, model, theta)
        try:
            inv = np.linalg.inv(info)
        except np.linalg.LinAlgError:
            return -np.inf, np.zeros_like(info)
        M = J @ inv @ J.T
        try:
            N = np.linalg.inv(M)
        except np.linalg.LinAlgError:
            return -np.inf, np.zeros_like(info)
        value, g_n = Criterion(self.kind, self.p, self.vector)._base_value_grad(N)
        if not np.isfinite(value):
            return value, np.zeros_like(info)
        inner = inv @ J.T @ N @ g_n @ N @ J @ inv
        return value, 0.5 * (inner + inner.T)

    def dimension(self, p_dim: int) -> int:
        """Size of the (possibly transformed) information matrix."""
        if self.transform is None:
            return p_dim
        return len(self.transform)


def _transform_jacobian(transform, model: ModelSpec, theta: Mapping[str, float]) -> np.ndarray:
    if model is None or theta is None:
        raise ModelError("transformed criteria need the model and theta")
    env = model.env(theta)
    rows = []
    for row in transform:
        rows.append([float(eval_values(e, np.array([0.0]), env)[0]) for e in row])
    J = np.asarray(rows, dtype=float)
    if J.shape[1] != model.p or not 1 <= J.shape[0] <= model.p:
        raise ModelError(f"transform Jacobian must be q x {model.p} with 1 <= q")
    if np.linalg.matrix_rank(J) < J.shape[0]:
        raise ModelError("transform Jacobian is rank-deficient")
    return J


@dataclass
class OptimizationResult:
    design: Design
    criterion_value: float
    sensitivity_max: float
    sensitivity_bound: float
    iterations: int
    converged: bool
    criterion: str
    notes: tuple[str, ...] = ()

    def to_json_obj(self) -> dict:
        return {
            "design": self.design.to_json_obj(),
            "criterion": self.criterion,
            "criterion_value": self.criterion_value,
            "sensitivity_max": self.sensitivity_max,
            "sensitivity_bound": self.sensitivity_bound,
            "iterations": self.iterations,
            "converged": self.converged,
            "notes": list(self.notes),
        }


def _c_series(model: ModelSpec, cs: np.ndarray, theta, order: int) -> np.ndarray:
    """Symmetric template jets, shape (n, p, p, order+1)."""
    env = model.env(theta)
    out = np.empty((cs.size, model.p, model.p, order + 1))
    for i in range(model.p):
        for j in range(i + 1):
            s = eval_series(model.psi[i][j], cs, order, env)
            out[:, i, j, :] = s
            out[:, j, i, :] = s
    return out


def _info_terms(model: ModelSpec, P: np.ndarray, cs: np.ndarray, theta):
    """K(c) = P C(c) P^T and its c-derivative for each point."""
    series = _c_series(model, cs, theta, 1)
    K = np.einsum("ab,nbct,dc->nadt", P, series, P)
    return K[..., 0], K[..., 1]


def sensitivity(model: ModelSpec, theta: Mapping[str, float], design: Design,
                criterion: Criterion, grid_size: int = 1024):
    """Sensitivity samples over the interval, their max, and the bound.

    Returns (grid, phi, phi_max, bound).
    """
    info = assemble_info(model, design, theta)
    value, G = criterion.value_and_grad(info, model, theta)
    if not np.isfinite(value):
        raise ModelError("criterion undefined at this design (singular information)")
    lo, hi = design.interval
    grid = np.linspace(lo, hi, grid_size)
    P = model.p_matrix(theta)
    K, _ = _info_terms(model, P, grid, theta)
    phi = np.einsum("ab,nba->n", G, K)
    bound = float(np.trace(G @ info))
    return grid, phi, float(phi.max()), bound


def _start_points(lo: float, hi: float, m: int, idx: int, rng) -> np.ndarray:
    span = hi - lo
    if idx % 2 == 0:
        # spread inspired by endpoint-clustered nodes, rotated per start
        base = 0.5 * (1 + np.cos(np.linspace(np.pi, 0, m + 2)[1:-1]))
        shift = (idx // 2) * 0.13
        vals = (base + shift) % 1.0
        return lo + span * np.sort(0.02 + 0.96 * vals)
    return lo + span * np.sort(0.02 + 0.96 * rng.random(m))


def optimize(model: ModelSpec, theta: Mapping[str, float],
             descriptor: CompleteClassDescriptor, criterion: Criterion,
             starts: int = 16, seed: int = 0, maxiter: int = 400,
             sens_grid: int = 1024, workers: int = 1) -> OptimizationResult:
    """Maximize the criterion over the complete class.

    Designs carry at most ``max_support`` points with the forced endpoints
    pinned; free points are unconstrained logistic coordinates in (A, B) and
    weights softmax coordinates on the simplex, so every iterate is
    feasible.  Multistart quasi-Newton; the winner is picked by (value,
    start index) so results do not depend on the worker count.
    """
    lo, hi = descriptor.interval
    span = hi - lo
    forced = sorted(set(descriptor.forced_c_values()))
    m = descriptor.max_support
    n_free = m - len(forced)
    if n_free < 0:
        raise ModelError("descriptor has more forced endpoints than support")
    P = model.p_matrix(theta)
    rng = np.random.default_rng(seed)
    forced_arr = np.asarray(forced)

    def decode(z: np.ndarray):
        v = z[:n_free]
        u = z[n_free:]
        pts_free = lo + span / (1.0 + np.exp(-v))
        pts = np.concatenate([forced_arr, pts_free])
        eu = np.exp(u - u.max())
        w = eu / eu.sum()
        return pts, w

    def objective(z: np.ndarray):
        pts, w = decode(z)
        K, Kd = _info_terms(model, P, pts, theta)
        info = np.einsum("i,iab->ab", w, K)
        info_reg = info + RIDGE * max(np.trace(info), 1.0) / info.shape[0] * np.eye(info.shape[0])
        value, G = criterion.value_and_grad(info_reg, model, theta)
        if not np.isfinite(value):
            return 1e12, np.zeros_like(z)
        dval_dw = np.einsum("ab,iba->i", G, K)
        dval_dc = w * np.einsum("ab,iba->i", G, Kd)
        grad = np.empty_like(z)
        v = z[:n_free]
        sig = 1.0 / (1.0 + np.exp(-v))
        grad[:n_free] = dval_dc[len(forced):] * span * sig * (1 - sig)
        grad[n_free:] = w * (dval_dw - float(dval_dw @ w))
        return -value, -grad

    starts_z0 = []
    for s in range(starts):
        pts0 = _start_points(lo, hi, n_free, s, rng) if n_free else np.empty(0)
        frac = np.clip((pts0 - lo) / span, 1e-6, 1 - 1e-6)
        v0 = np.log(frac / (1 - frac))
        u0 = 0.1 * rng.standard_normal(m)
        starts_z0.append(np.concatenate([v0, u0]))

    def run_start(z0: np.ndarray):
        res = _scipy_minimize(
            objective, z0, jac=True, method="L-BFGS-B",
            options={"maxiter": maxiter, "ftol": 1e-15, "gtol": 1e-12},
        )
        return -float(res.fun), res.x.copy(), int(res.nit)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_start, starts_z0))
    else:
        outcomes = [run_start(z0) for z0 in starts_z0]

    best = None
    total_iters = 0
    for s, (value, x, nit) in enumerate(outcomes):
        total_iters += nit
        if best is None or value > best[0] + 1e-14:
            best = (value, x, s)
    if best is None or not np.isfinite(best[0]):
        raise NumericalFailure("criterion undefined for every start (singular information)")

    pts, w = decode(best[1])
    keep = w > 1e-12
    for idx in range(len(forced)):
        keep[idx] = True  # forced endpoints stay in the support
    design = Design(pts[keep], w[keep] / w[keep].sum(), (lo, hi), merge_tol=1e-8 * max(1.0, span))
    info = assemble_info(model, design, theta)
    value, _ = criterion.value_and_grad(info, model, theta)
    _, _, phi_max, bound = sensitivity(model, theta, design, criterion, sens_grid)
    tol = SENS_TOL * max(1.0, abs(bound))
    converged = bool(np.isfinite(value) and phi_max <= bound + tol)
    notes = []
    if criterion.kind == "E":
        vals = np.linalg.eigvalsh(info)
        if vals.size > 1 and vals[1] - vals[0] < 1e-8 * max(1.0, vals[0]):
            notes.append("smallest eigenvalue nearly multiple; certificate accuracy ~1e-6")
    return OptimizationResult(
        design=design,
        criterion_value=float(value),
        sensitivity_max=phi_max,
        sensitivity_bound=bound,
        iterations=total_iters,
        converged=converged,
        criterion=criterion.label(),
        notes=tuple(notes),
    )


def brute_force_reference(model: ModelSpec, theta: Mapping[str, float],
                          criterion: Criterion, interval: tuple[float, float],
                          grid_size: int = 128, support_cap: int | None = None,
                          max_rounds: int = 5000, tol: float = 1e-9) -> OptimizationResult:
    """Unrestricted optimization over designs supported on a fixed grid.

    D uses the classical multiplicative reweighting (globally convergent);
    other criteria use vertex-direction steps toward the sensitivity
    maximizer.  Serves as the independent reference that restricted optima
    must not be beaten by.
    """
    if grid_size > 200:
        raise ModelError("reference optimizer is meant for desk-scale grids (<= 200)")
    lo, hi = float(interval[0]), float(interval[1])
    grid = np.linspace(lo, hi, grid_size)
    P = model.p_matrix(theta)
    K, _ = _info_terms(model, P, grid, theta)
    w = np.full(grid_size, 1.0 / grid_size)
    iterations = 0
    for _ in range(max_rounds):
        iterations += 1
        info = np.einsum("i,iab->ab", w, K)
        info = info + RIDGE * max(np.trace(info), 1.0) / info.shape[0] * np.eye(info.shape[0])
        value, G = criterion.value_and_grad(info, model, theta)
        if not np.isfinite(value):
            w = np.full(grid_size, 1.0 / grid_size)
            continue
        phi = np.einsum("ab,iba->i", G, K)
        bound = float(np.trace(G @ info))
        if phi.max() <= bound * (1 + tol) + tol * max(1.0, abs(bound)):
            break
        if criterion.kind == "D" and criterion.transform is None:
            w = w * phi / bound
            w = np.maximum(w, 0.0)
            w /= w.sum()
        else:
            j = int(np.argmax(phi))
            step = 2.0 / (iterations + 2.0)
            w = (1 - step) * w
            w[j] += step
    keep = w > 1e-7
    pruned = Design(grid[keep], w[keep] / w[keep].sum(), (lo, hi), merge_tol=1e-12)
    info = assemble_info(model, pruned, theta)
    value, G = criterion.value_and_grad(info, model, theta)
    phi_final = np.einsum("ab,iba->i", G, K)
    bound = float(np.trace(G @ info))
    if support_cap is not None and pruned.size > support_cap:
        pass  # informational: the grid optimum may smear over neighboring nodes
    return OptimizationResult(
        design=pruned,
        criterion_value=float(value),
        sensitivity_max=float(phi_final.max()),
        sensitivity_bound=bound,
        iterations=iterations,
        converged=bool(phi_final.max() <= bound + SENS_TOL * max(1.0, abs(bound))),
        criterion=criterion.label(),
    )


def cluster_supports(design: Design, gap: float) -> list[tuple[float, float]]:
    """Merge grid-design support into (location, weight) clusters separated
    by more than ``gap``; used to compare grid optima with exact supports."""
    pts = design.points_array()
    wts = design.weights_array()
    clusters = []
    start = 0
    for i in range(1, len(pts) + 1):
        if i == len(pts) or pts[i] - pts[i - 1] > gap:
            w = wts[start:i].sum()
            loc = float((pts[start:i] * wts[start:i]).sum() / w)
            clusters.append((loc, float(w)))
            start = i
    return clusters
