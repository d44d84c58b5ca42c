"""Model specifications: built-in families and user-defined configurations.

A model supplies the symmetric basis-function matrix template (lower
triangle), the partition size splitting off the lower principal block, the
ordered moment basis drawn from the first columns, the design-variable
transform, and the parameter-dependent scaling matrix P.  Built-ins are
defined through the same config path as user models so a single validation
surface covers both.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import expressions as ex
from .errors import ModelError
from .jets import eval_series, eval_values

GRAM_TOL = 1e-8
SPAN_TOL = 1e-8


@dataclass(frozen=True)
class ModelSpec:
    name: str
    p: int
    p1: int
    param_names: tuple[str, ...]
    param_bounds: tuple[tuple[str, float | None, float | None], ...]
    constraints: tuple[tuple[ex.Expr, str, float], ...]
    derived: tuple[tuple[str, ex.Expr], ...]
    psi: tuple[tuple[ex.Expr, ...], ...]
    basis: tuple[ex.Expr, ...]
    transform_fwd: ex.Expr
    transform_inv: ex.Expr
    p_exprs: tuple[tuple[ex.Expr, ...], ...]
    check_theta: tuple[tuple[str, float], ...]
    check_interval: tuple[float, float]
    route: str = "table"
    class_basis: tuple[ex.Expr, ...] = ()
    class_c22: tuple[tuple[ex.Expr, ...], ...] = ()

    # -- structure ----------------------------------------------------------

    @property
    def k(self) -> int:
        return len(self.basis) + 1

    def c22_exprs(self) -> tuple[tuple[ex.Expr, ...], ...]:
        """Lower p1 x p1 principal block of the symmetric template."""
        off = self.p - self.p1
        return tuple(
            tuple(self._entry(off + i, off + j) for j in range(self.p1))
            for i in range(self.p1)
        )

    def _entry(self, i: int, j: int) -> ex.Expr:
        return self.psi[i][j] if j <= i else self.psi[j][i]

    def classification_system(self):
        """Basis + block used for complete-class verification, and the route."""
        if self.route == "chebyshev":
            return self.class_basis, self.class_c22, self.route
        return self.basis, self.c22_exprs(), self.route

    # -- theta handling -----------------------------------------------------

    def validate_theta(self, theta: Mapping[str, float]) -> None:
        missing = [n for n in self.param_names if n not in theta]
        if missing:
            raise ModelError(f"{self.name}: missing parameters {missing}")
        for name, lo, hi in self.param_bounds:
            v = float(theta[name])
            if lo is not None and not v > lo:
                raise ModelError(f"{self.name}: require {name} > {lo}, got {v}")
            if hi is not None and not v < hi:
                raise ModelError(f"{self.name}: require {name} < {hi}, got {v}")
        for expr, op, tol in self.constraints:
            v = _scalar(expr, theta)
            text = ex.to_source(expr)
            if op == "gt0" and not v > tol:
                raise ModelError(f"{self.name}: require {text} > 0, got {v}")
            if op == "ne0" and abs(v) <= tol:
                raise ModelError(f"{self.name}: require {text} != 0, got {v}")
            if op == "eq0" and abs(v) > tol:
                raise ModelError(f"{self.name}: require {text} = 0 (tol {tol}), got {v}")

    def env(self, theta: Mapping[str, float]) -> dict[str, float]:
        """Validated parameter environment including derived scalars."""
        self.validate_theta(theta)
        env = {n: float(theta[n]) for n in self.param_names}
        for name, expr in self.derived:
            env[name] = _scalar(expr, env)
        return env

    # -- evaluation ---------------------------------------------------------

    def c_matrix(self, cs, theta: Mapping[str, float]) -> np.ndarray:
        """Stack of symmetric p x p basis matrices, shape (n, p, p)."""
        env = self.env(theta)
        cs = np.atleast_1d(np.asarray(cs, dtype=float))
        out = np.empty((cs.size, self.p, self.p))
        for i in range(self.p):
            for j in range(i + 1):
                vals = eval_values(self.psi[i][j], cs, env)
                out[:, i, j] = vals
                out[:, j, i] = vals
        return out

    def c22_values(self, cs, theta: Mapping[str, float]) -> np.ndarray:
        env = self.env(theta)
        cs = np.atleast_1d(np.asarray(cs, dtype=float))
        block = self.c22_exprs()
        out = np.empty((cs.size, self.p1, self.p1))
        for i in range(self.p1):
            for j in range(i + 1):
                vals = eval_values(block[i][j], cs, env)
                out[:, i, j] = vals
                out[:, j, i] = vals
        return out

    def basis_values(self, cs, theta: Mapping[str, float]) -> np.ndarray:
        """Values of the k-1 moment-basis functions, shape (k-1, n)."""
        env = self.env(theta)
        cs = np.atleast_1d(np.asarray(cs, dtype=float))
        return np.stack([eval_values(b, cs, env) for b in self.basis])

    def basis_series(self, cs, order: int, theta: Mapping[str, float]) -> np.ndarray:
        env = self.env(theta)
        cs = np.atleast_1d(np.asarray(cs, dtype=float))
        return np.stack([eval_series(b, cs, order, env) for b in self.basis])

    def p_matrix(self, theta: Mapping[str, float]) -> np.ndarray:
        env = self.env(theta)
        out = np.empty((self.p, self.p))
        for i in range(self.p):
            for j in range(self.p):
                out[i, j] = _scalar(self.p_exprs[i][j], env)
        return out

    def x_to_c(self, xs, theta: Mapping[str, float]) -> np.ndarray:
        env = self.env(theta)
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        return eval_values(self.transform_fwd, xs, env)

    def c_to_x(self, cs, theta: Mapping[str, float]) -> np.ndarray:
        env = self.env(theta)
        cs = np.atleast_1d(np.asarray(cs, dtype=float))
        return eval_values(self.transform_inv, cs, env)


def _scalar(expr: ex.Expr, env: Mapping[str, float]) -> float:
    return float(eval_values(expr, np.array([0.0]), env)[0])


def map_interval(model: ModelSpec, x_range: tuple[float, float], theta: Mapping[str, float]):
    """Map the x-design range through the model transform.

    Returns ``((A, B), orientation)`` with A < B; orientation is ``"U->A"``
    when x = U maps to the lower endpoint, ``"U->B"`` when it maps to the
    upper one (needed to phrase endpoint statements back in x-space).
    """
    u, v = float(x_range[0]), float(x_range[1])
    if not u < v:
        raise ModelError(f"x-range must satisfy U < V, got [{u}, {v}]")
    env = model.env(theta)
    grid = np.linspace(u, v, 65)
    series = eval_series(model.transform_fwd, grid, 1, env)
    slopes = series[:, 1]
    if np.all(slopes > 0):
        orientation = "U->A"
    elif np.all(slopes < 0):
        orientation = "U->B"
    else:
        raise ModelError(f"{model.name}: transform is not monotone on [{u}, {v}]")
    cu, cv = series[0, 0], series[-1, 0]
    interval = (float(min(cu, cv)), float(max(cu, cv)))
    return interval, orientation


# ---------------------------------------------------------------------------
# Config loading
# ---------------------------------------------------------------------------


def from_config(config, *, validate: bool = True) -> ModelSpec:
    """Build a validated ModelSpec from a config mapping, JSON text or path.

    Schema (JSON object): name, p, p1, params: [{name, lower?, upper?}],
    constraints: [{expr, op: eq0|gt0|ne0, tol?}], derived: {name: expr},
    psi: lower-triangular rows of expressions in c, basis: ordered moment
    basis (entries must match first p - p1 column entries up to sign),
    transform: {expr (in x), inverse (in c)}, P: p x p rows of expressions
    in the parameters, check: {theta, interval} for validation grids.
    """
    if isinstance(config, (str, Path)):
        text = Path(config).read_text() if Path(str(config)).exists() else str(config)
        config = json.loads(text)
    cfg = dict(config)

    name = cfg.get("name", "custom")
    try:
        p = int(cfg["p"])
        p1 = int(cfg["p1"])
    except KeyError as e:
        raise ModelError(f"config missing field {e}") from None
    if not (p >= 2 and 1 <= p1 < p):
        raise ModelError(f"need p >= 2 and 1 <= p1 < p, got p={p}, p1={p1}")

    params = cfg.get("params", [])
    param_names = tuple(entry["name"] for entry in params)
    param_bounds = tuple(
        (entry["name"], entry.get("lower"), entry.get("upper")) for entry in params
    )
    derived_cfg = cfg.get("derived", {})
    derived_names = tuple(derived_cfg)
    all_names = param_names + derived_names

    derived = tuple(
        (dname, ex.parse(src, param_names + derived_names[:i], var="\x00"))
        for i, (dname, src) in enumerate(derived_cfg.items())
    )

    def parse_c(src: str) -> ex.Expr:
        return ex.parse(src, all_names, var="c")

    psi_rows = cfg.get("psi")
    if not psi_rows or len(psi_rows) != p:
        raise ModelError(f"psi must have {p} lower-triangular rows")
    psi = []
    for i, row in enumerate(psi_rows):
        if len(row) != i + 1:
            raise ModelError(f"psi row {i} must have {i + 1} entries, got {len(row)}")
        psi.append(tuple(parse_c(src) for src in row))
    psi = tuple(psi)

    basis_cfg = cfg.get("basis")
    if not basis_cfg:
        raise ModelError("config must list the ordered moment basis")
    basis = tuple(parse_c(src) for src in basis_cfg)

    transform = cfg.get("transform", {"expr": "x", "inverse": "c"})
    fwd = ex.parse(transform["expr"], all_names, var="x")
    inv = ex.parse(transform.get("inverse", transform.get("inverse_expr", "c")), all_names, var="c")

    p_rows = cfg.get("P")
    if not p_rows or len(p_rows) != p or any(len(r) != p for r in p_rows):
        raise ModelError(f"P must be a {p} x {p} grid of expressions")
    p_exprs = tuple(
        tuple(ex.parse(src, all_names, var="\x00") for src in row) for row in p_rows
    )

    constraints = tuple(
        (
            ex.parse(entry["expr"], all_names, var="\x00"),
            entry.get("op", "gt0"),
            float(entry.get("tol", 0.0)),
        )
        for entry in cfg.get("constraints", [])
    )
    for _, op, _ in constraints:
        if op not in ("eq0", "gt0", "ne0"):
            raise ModelError(f"unknown constraint op {op!r}")

    check = cfg.get("check", {})
    check_theta = tuple(sorted((k, float(v)) for k, v in check.get("theta", {}).items()))
    ci = check.get("interval")
    if ci is None:
        raise ModelError("config must provide check.interval for validation grids")
    check_interval = (float(ci[0]), float(ci[1]))

    route = cfg.get("route", "table")
    class_basis = tuple(parse_c(src) for src in cfg.get("class_basis", []))
    class_c22 = tuple(tuple(parse_c(src) for src in row) for row in cfg.get("class_c22", []))

    model = ModelSpec(
        name=name,
        p=p,
        p1=p1,
        param_names=param_names,
        param_bounds=param_bounds,
        constraints=constraints,
        derived=derived,
        psi=psi,
        basis=basis,
        transform_fwd=fwd,
        transform_inv=inv,
        p_exprs=p_exprs,
        check_theta=check_theta,
        check_interval=check_interval,
        route=route,
        class_basis=class_basis,
        class_c22=class_c22,
    )
    if validate:
        _validate_model(model)
    return model


def _validate_model(model: ModelSpec) -> None:
    theta = dict(model.check_theta)
    if not theta:
        raise ModelError("config must provide check.theta reference values")
    env = model.env(theta)
    lo, hi = model.check_interval
    grid = np.linspace(lo, hi, 50)

    for b in model.basis:
        if not ex.uses_var(b):
            raise ModelError(f"basis entry {ex.to_source(b)!r} is constant")

    # basis entries must come from the first p - p1 columns, up to sign
    pool = []
    for j in range(model.p - model.p1):
        for i in range(j, model.p):
            pool.append(model.psi[i][j])
    selected = []
    for b in model.basis:
        inner = b.arg if isinstance(b, ex.Neg) else b
        if b in pool:
            selected.append(b)
        elif inner in pool:
            selected.append(inner)
        else:
            raise ModelError(
                f"basis entry {ex.to_source(b)!r} does not appear in the first "
                f"{model.p - model.p1} columns of psi"
            )

    # pairwise linear independence of the basis on the check grid
    values = np.stack([eval_values(b, grid, env) for b in model.basis])
    scale = np.abs(values).max(axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    scaled = values / scale
    for i in range(len(model.basis)):
        for j in range(i + 1, len(model.basis)):
            sv = np.linalg.svd(scaled[[i, j]], compute_uv=False)
            if sv[1] <= GRAM_TOL * sv[0]:
                raise ModelError(
                    f"basis entries {ex.to_source(model.basis[i])!r} and "
                    f"{ex.to_source(model.basis[j])!r} are numerically dependent "
                    f"(singular-value ratio {sv[1] / sv[0]:.3e})"
                )

    # every unselected nonconstant entry must lie in span{1, basis}
    design_mat = np.vstack([np.ones_like(grid), values]).T
    for entry in pool:
        if entry in selected or not ex.uses_var(entry):
            continue
        y = eval_values(entry, grid, env)
        coef, *_ = np.linalg.lstsq(design_mat, y, rcond=None)
        resid = np.abs(design_mat @ coef - y).max()
        if resid > SPAN_TOL * max(1.0, np.abs(y).max()):
            raise ModelError(
                f"entry {ex.to_source(entry)!r} is outside span{{1, basis}} "
                f"(residual {resid:.3e}); add it to the basis"
            )

    # transform round trip on the induced x-grid
    xs = model.c_to_x(grid, theta)
    back = model.x_to_c(xs, theta)
    err = np.abs(back - grid).max()
    if err > 1e-8 * max(1.0, np.abs(grid).max()):
        raise ModelError(f"transform inverse mismatch (max error {err:.3e})")


# ---------------------------------------------------------------------------
# Built-in families
# ---------------------------------------------------------------------------

_EXP2_PSI = [
    ["c^lam"],
    ["c^(lam + 1)", "c^(lam + 2)"],
    ["log(c)*c^lam", "log(c)*c^(lam + 1)", "log(c)^2*c^lam"],
    [
        "log(c)*c^(lam + 1)",
        "log(c)*c^(lam + 2)",
        "log(c)^2*c^(lam + 1)",
        "log(c)^2*c^(lam + 2)",
    ],
]

_EXP3_PSI = [
    ["c^lam"],
    ["c^(lam + 1)", "c^(lam + 2)"],
    ["c^(lam + 2)", "c^(lam + 3)", "c^(lam + 4)"],
    ["log(c)*c^lam", "log(c)*c^(lam + 1)", "log(c)*c^(lam + 2)", "log(c)^2*c^lam"],
    [
        "log(c)*c^(lam + 1)",
        "log(c)*c^(lam + 2)",
        "log(c)*c^(lam + 3)",
        "log(c)^2*c^(lam + 1)",
        "log(c)^2*c^(lam + 2)",
    ],
    [
        "log(c)*c^(lam + 2)",
        "log(c)*c^(lam + 3)",
        "log(c)*c^(lam + 4)",
        "log(c)^2*c^(lam + 2)",
        "log(c)^2*c^(lam + 3)",
        "log(c)^2*c^(lam + 4)",
    ],
]

_G = "(beta*exp(nu*c) + (1 - beta)*exp(-phi*c))"

BUILTIN_CONFIGS: dict[str, dict] = {
    "exp2": {
        "name": "exp2",
        "p": 4,
        "p1": 2,
        "params": [
            {"name": "a1"},
            {"name": "a2"},
            {"name": "l1", "lower": 0.0},
            {"name": "l2", "lower": 0.0},
        ],
        "constraints": [
            {"expr": "l2 - l1", "op": "gt0"},
            {"expr": "a1", "op": "ne0"},
            {"expr": "a2", "op": "ne0"},
        ],
        "derived": {"lam": "2*l1/(l2 - l1)"},
        "psi": _EXP2_PSI,
        "basis": [
            "c^lam",
            "log(c)*c^lam",
            "c^(lam + 1)",
            "log(c)*c^(lam + 1)",
            "c^(lam + 2)",
            "log(c)*c^(lam + 2)",
        ],
        "transform": {"expr": "exp(-(l2 - l1)*x)", "inverse": "-log(c)/(l2 - l1)"},
        "P": [
            ["1", "0", "0", "0"],
            ["0", "1", "0", "0"],
            ["0", "0", "a1/(l2 - l1)", "0"],
            ["0", "0", "0", "a2/(l2 - l1)"],
        ],
        "check": {
            "theta": {"a1": 1.0, "a2": 1.0, "l1": 1.0, "l2": 2.0},
            "interval": [0.3, 1.0],
        },
    },
    "exp3": {
        "name": "exp3",
        "p": 6,
        "p1": 3,
        "params": [
            {"name": "a1"},
            {"name": "a2"},
            {"name": "a3"},
            {"name": "l1", "lower": 0.0},
            {"name": "l2", "lower": 0.0},
            {"name": "l3", "lower": 0.0},
        ],
        "constraints": [
            {"expr": "l2 - l1", "op": "gt0"},
            {"expr": "l3 - l2", "op": "gt0"},
            {"expr": "2*l2 - l1 - l3", "op": "eq0", "tol": 1e-12},
            {"expr": "a1", "op": "ne0"},
            {"expr": "a2", "op": "ne0"},
            {"expr": "a3", "op": "ne0"},
        ],
        "derived": {"lam": "2*l1/(l2 - l1)"},
        "psi": _EXP3_PSI,
        "basis": [
            "c^lam",
            "log(c)*c^lam",
            "c^(lam + 1)",
            "log(c)*c^(lam + 1)",
            "c^(lam + 2)",
            "log(c)*c^(lam + 2)",
            "c^(lam + 3)",
            "log(c)*c^(lam + 3)",
            "c^(lam + 4)",
            "log(c)*c^(lam + 4)",
        ],
        "transform": {"expr": "exp(-(l2 - l1)*x)", "inverse": "-log(c)/(l2 - l1)"},
        "P": [
            ["1", "0", "0", "0", "0", "0"],
            ["0", "1", "0", "0", "0", "0"],
            ["0", "0", "1", "0", "0", "0"],
            ["0", "0", "0", "a1/(l2 - l1)", "0", "0"],
            ["0", "0", "0", "0", "a2/(l2 - l1)", "0"],
            ["0", "0", "0", "0", "0", "a3/(l2 - l1)"],
        ],
        "check": {
            "theta": {"a1": 1.0, "a2": 1.0, "a3": 1.0, "l1": 1.0, "l2": 2.0, "l3": 3.0},
            "interval": [0.3, 1.0],
        },
    },
    "linexp": {
        "name": "linexp",
        "p": 4,
        "p1": 2,
        "params": [
            {"name": "alpha"},
            {"name": "gamma"},
            {"name": "beta"},
            {"name": "delta", "lower": 0.0},
        ],
        "constraints": [{"expr": "beta", "op": "ne0"}],
        "psi": [
            ["1"],
            ["exp(c)", "exp(2*c)"],
            ["c", "c*exp(c)", "c^2"],
            ["c*exp(c)", "c*exp(2*c)", "c^2*exp(c)", "c^2*exp(2*c)"],
        ],
        "basis": ["c", "exp(c)", "c*exp(c)", "exp(2*c)", "c*exp(2*c)"],
        "transform": {"expr": "-delta*x", "inverse": "-c/delta"},
        "P": [
            ["1", "0", "0", "0"],
            ["0", "0", "-1/delta", "0"],
            ["-1", "1", "0", "0"],
            ["0", "0", "0", "beta/delta"],
        ],
        "check": {
            "theta": {"alpha": 0.0, "gamma": 1.0, "beta": 1.0, "delta": 1.0},
            "interval": [-2.0, 0.0],
        },
    },
    "doubleexp": {
        "name": "doubleexp",
        "p": 4,
        "p1": 2,
        "params": [
            {"name": "alpha"},
            {"name": "beta", "lower": 0.0, "upper": 1.0},
            {"name": "nu"},
            {"name": "phi"},
        ],
        "derived": {"a": "nu + phi"},
        "psi": [
            ["1"],
            [f"exp(nu*c)/{_G}", f"exp(2*nu*c)/{_G}^2"],
            [
                f"c*exp(nu*c)/{_G}",
                f"c*exp(2*nu*c)/{_G}^2",
                f"c^2*exp(2*nu*c)/{_G}^2",
            ],
            [
                f"c*exp(-phi*c)/{_G}",
                f"c*exp((nu - phi)*c)/{_G}^2",
                f"c^2*exp((nu - phi)*c)/{_G}^2",
                f"c^2*exp(-2*phi*c)/{_G}^2",
            ],
        ],
        "basis": [
            f"exp(nu*c)/{_G}",
            f"exp(2*nu*c)/{_G}^2",
            f"c*exp(-phi*c)/{_G}",
            f"-(c*exp(nu*c)/{_G})",
            f"c*exp(2*nu*c)/{_G}^2",
        ],
        "transform": {"expr": "x", "inverse": "c"},
        "P": [
            ["1", "0", "0", "0"],
            ["-1/(1 - beta)", "1/(1 - beta)", "0", "0"],
            ["0", "0", "beta", "0"],
            ["0", "0", "0", "-(1 - beta)"],
        ],
        "route": "chebyshev",
        "class_basis": [
            "exp(a*c)",
            "exp(2*a*c)",
            "c",
            "-(c*exp(a*c))",
            "c*exp(2*a*c)",
        ],
        "class_c22": [
            ["c^2*exp(2*a*c)", "c^2*exp(a*c)"],
            ["c^2*exp(a*c)", "c^2"],
        ],
        "check": {
            "theta": {"alpha": 0.0, "beta": 0.5, "nu": 0.5, "phi": 0.5},
            "interval": [0.0, 3.0],
        },
    },
}

_BUILTIN_CACHE: dict[str, ModelSpec] = {}


def builtin(name: str) -> ModelSpec:
    """One of exp2 | exp3 | linexp | doubleexp."""
    if name not in BUILTIN_CONFIGS:
        raise ModelError(
            f"unknown builtin model {name!r}; available: {sorted(BUILTIN_CONFIGS)}"
        )
    if name not in _BUILTIN_CACHE:
        _BUILTIN_CACHE[name] = from_config(BUILTIN_CONFIGS[name])
    return _BUILTIN_CACHE[name]
