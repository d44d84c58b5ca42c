"""Map definiteness verdicts (or Chebyshev verdicts) to the four
complete-class conclusions: a support-size bound plus forced endpoints."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .chebyshev import chebyshev_from_table
from .errors import ModelError
from .models import ModelSpec, map_interval
from .reduction import DefinitenessReport, build_table, scan_definiteness

# case -> (forced endpoints in c-space, support bound as function of n)
_CASES = {
    "a": ("B",),
    "b": ("A",),
    "c": ("A", "B"),
    "d": (),
}


@dataclass(frozen=True)
class CompleteClassDescriptor:
    """Complete-class conclusion for one model/theta/interval triple.

    ``case``:
      a: odd basis count, positive product  -> at most n points including B
      b: odd basis count, negative product  -> at most n points including A
      c: even basis count, positive product -> at most n+1 points incl. A, B
      d: even basis count, negative product -> at most n points, none forced
    """

    case: str
    k: int
    n: int
    max_support: int
    forced: tuple[str, ...]
    interval: tuple[float, float]
    x_interval: tuple[float, float] | None = None
    orientation: str | None = None  # "U->A" | "U->B"

    def forced_c_values(self) -> tuple[float, ...]:
        lo, hi = self.interval
        return tuple(lo if lab == "A" else hi for lab in self.forced)

    def forced_x_labels(self) -> tuple[str, ...]:
        """Forced endpoints stated in x-space (U/V), via the orientation."""
        if self.orientation is None:
            return ()
        swap = self.orientation == "U->B"
        return tuple(("V" if swap else "U") if lab == "A" else ("U" if swap else "V")
                     for lab in self.forced)

    def forced_x_values(self) -> tuple[float, ...]:
        if self.x_interval is None:
            return ()
        u, v = self.x_interval
        return tuple(u if lab == "U" else v for lab in self.forced_x_labels())

    def to_json_obj(self) -> dict:
        return {
            "case": self.case,
            "k": self.k,
            "n": self.n,
            "max_support": self.max_support,
            "forced_endpoints_c": list(self.forced),
            "forced_endpoints_c_values": list(self.forced_c_values()),
            "forced_endpoints_x": list(self.forced_x_labels()),
            "forced_endpoints_x_values": list(self.forced_x_values()),
            "interval_c": list(self.interval),
            "interval_x": None if self.x_interval is None else list(self.x_interval),
            "orientation": self.orientation,
        }


@dataclass(frozen=True)
class Inconclusive:
    """Classification could not be decided; carries the witness.

    Suggested follow-up: reorder the moment basis or change the partition
    size, which can change the table's definiteness structure.
    """

    reason: str
    k: int
    witness: tuple | None = None

    suggestion = "try reordering the moment basis or changing the partition size p1"

    def to_json_obj(self) -> dict:
        obj = {"inconclusive": True, "reason": self.reason, "k": self.k,
               "suggestion": self.suggestion}
        if self.witness is not None:
            c, q, eig = self.witness
            obj["witness"] = {"c": c, "Q": None if q is None else list(q), "eigmin": eig}
        return obj


def _descriptor(case: str, k: int, interval, x_interval=None, orientation=None) -> CompleteClassDescriptor:
    if case in ("a", "b"):
        n = (k + 1) // 2
        max_support = n
    elif case == "c":
        n = k // 2
        max_support = n + 1
    else:  # d
        n = k // 2
        max_support = n
    return CompleteClassDescriptor(
        case=case,
        k=k,
        n=n,
        max_support=max_support,
        forced=_CASES[case],
        interval=(float(interval[0]), float(interval[1])),
        x_interval=None if x_interval is None else (float(x_interval[0]), float(x_interval[1])),
        orientation=orientation,
    )


def classify(report: DefinitenessReport, k: int, interval,
             x_interval=None, orientation=None):
    """Definiteness verdict + basis count -> descriptor (or Inconclusive)."""
    if k < 2:
        raise ModelError("classification needs k >= 2")
    odd = k % 2 == 1
    if report.verdict == "POS_DEF":
        case = "a" if odd else "c"
    elif report.verdict == "NEG_DEF":
        case = "b" if odd else "d"
    else:
        return Inconclusive(reason=report.verdict, k=k, witness=report.witness)
    return _descriptor(case, k, interval, x_interval, orientation)


def classify_from_chebyshev(base_pass: bool, extended_pass: bool, k: int, variant: str,
                            interval, x_interval=None, orientation=None):
    """Chebyshev-route mapping: variant "plus" behaves like a positive
    product (cases a/c), "minus" like a negative one (cases b/d)."""
    if k < 2:
        raise ModelError("classification needs k >= 2")
    if variant not in ("plus", "minus"):
        raise ModelError(f"variant must be 'plus' or 'minus', got {variant!r}")
    if not (base_pass and extended_pass):
        return Inconclusive(reason="chebyshev verification failed", k=k)
    odd = k % 2 == 1
    if variant == "plus":
        case = "a" if odd else "c"
    else:
        case = "b" if odd else "d"
    return _descriptor(case, k, interval, x_interval, orientation)


def probe_directions(p1: int, count: int = 64, seed: int = 0) -> np.ndarray:
    """Deterministic probe set: coordinate axes plus unit-sphere samples."""
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(count, p1))
    norms = np.linalg.norm(pts, axis=1, keepdims=True)
    pts = pts / np.maximum(norms, 1e-12)
    return np.vstack([np.eye(p1), pts])


@dataclass
class ClassificationResult:
    outcome: CompleteClassDescriptor | Inconclusive
    report: DefinitenessReport | None
    route: str
    variant: str | None = None
    flips: tuple[int, ...] = ()

    @property
    def descriptor(self) -> CompleteClassDescriptor:
        if isinstance(self.outcome, Inconclusive):
            raise ModelError(f"classification inconclusive: {self.outcome.reason}")
        return self.outcome

    def is_conclusive(self) -> bool:
        return isinstance(self.outcome, CompleteClassDescriptor)


def classify_model(model: ModelSpec, theta: Mapping[str, float], x_range: tuple[float, float],
                   grid_size: int = 512, probes: int = 64, seed: int = 0) -> ClassificationResult:
    """Full pipeline: map the interval, build the classification table, scan,
    and map to a descriptor.

    Models routed through "table" use the definiteness scan directly; the
    "chebyshev" route derives the Chebyshev property of the (reduced)
    systems from the table diagonals and checks sampled probe directions of
    the bottom block.
    """
    interval, orientation = map_interval(model, x_range, theta)
    table = build_table(model, theta, interval, grid_size, classification=True)
    _, _, route = model.classification_system()
    k = model.k

    if route == "table":
        report = scan_definiteness(table)
        outcome = classify(report, k, interval, x_range, orientation)
        return ClassificationResult(outcome=outcome, report=report, route="table")

    report = scan_definiteness(table)
    verdict = chebyshev_from_table(table, probe=None)
    if not verdict:
        outcome = Inconclusive(
            reason=f"chebyshev table verdict {verdict.verdict}",
            k=k,
            witness=None if verdict.witness is None else (verdict.witness[0], None, verdict.witness[1]),
        )
        return ClassificationResult(outcome, report, "chebyshev", None, verdict.flips)
    # corroborate the all-Q statement on sampled probe directions
    variant = verdict.variant
    extended_ok = True
    for q in probe_directions(table.p1, probes, seed):
        pv = chebyshev_from_table(table, probe=q)
        if not pv or pv.variant != variant:
            extended_ok = False
            break
    outcome = classify_from_chebyshev(True, extended_ok, k, variant,
                                      interval, x_range, orientation)
    return ClassificationResult(outcome, report, "chebyshev", variant, verdict.flips)
