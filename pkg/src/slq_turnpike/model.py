"""Problem containers: validation, reduction, and JSON round-tripping.

A problem instance collects the constant coefficients of the controlled
linear SDE

    dX = (A X + B u + b) dt + (C X + D u + sigma) dW

together with the quadratic running-cost weights (Q, S, R, q, r).  The
toolkit requires the strong standard condition

    R > 0   and   Q - S^T R^{-1} S > 0      (as symmetric matrices),

under which every instance can be rewritten, by the control substitution
u = v - R^{-1}(S X + r), as an equivalent instance with no state/control
cross weight and no linear control cost.  All downstream solvers operate
on that reduced form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# Relative asymmetry canonicalized on input; anything larger is reported
# as an invariant violation instead of silently symmetrized.
SYM_RTOL = 1e-12

# Strict positive-definiteness threshold, relative to the matrix norm.
PD_RTOL = 1e-10

_MATRIX_KEYS = ("A", "B", "C", "D", "Q", "S", "R")
_VECTOR_KEYS = ("b", "sigma", "q", "r")


class DimensionError(ValueError):
    """Structurally malformed data (shape mismatch), distinct from an
    invariant violation of a well-formed problem."""


class InvalidProblemError(ValueError):
    """Raised when an operation requires a valid problem but validation
    reports violations.  Carries the offending ``report``."""

    def __init__(self, report: "ValidationReport"):
        super().__init__("invalid problem: " + "; ".join(report.violations))
        self.report = report


def _shape_of(key: str, n: int, m: int) -> tuple:
    return {
        "A": (n, n), "B": (n, m), "C": (n, n), "D": (n, m),
        "Q": (n, n), "S": (m, n), "R": (m, m),
        "b": (n,), "sigma": (n,), "q": (n,), "r": (m,),
    }[key]


def _coerce(key: str, value, n: int, m: int) -> np.ndarray:
    shape = _shape_of(key, n, m)
    if value is None:
        return np.zeros(shape)
    arr = np.asarray(value, dtype=float)
    if arr.shape == () and shape != ():
        arr = np.full(shape, float(arr)) if np.prod(shape) == 1 else arr
    if arr.shape != shape:
        raise DimensionError(
            f"{key} has shape {arr.shape}, expected {shape} for (n, m)=({n}, {m})"
        )
    return arr.copy()


def _canonical_symmetrize(M: np.ndarray) -> np.ndarray:
    """Symmetrize sub-tolerance asymmetry (serialization round-off); leave
    larger asymmetry untouched so validate() can report it."""
    scale = np.linalg.norm(M)
    if scale == 0.0 or np.linalg.norm(M - M.T) <= SYM_RTOL * scale:
        return 0.5 * (M + M.T)
    return M


@dataclass
class LQProblem:
    """Full coefficient set of a stochastic LQ instance.

    Matrices are float64 arrays; vectors are 1-d arrays.  Construction
    checks shapes (raising :class:`DimensionError`) and canonicalizes
    round-off asymmetry of Q and R; it does *not* enforce the strong
    standard condition, which is :func:`validate`'s job.
    """

    n: int
    m: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    q: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        if not (isinstance(self.n, int) and self.n > 0):
            raise DimensionError(f"n must be a positive integer, got {self.n!r}")
        if not (isinstance(self.m, int) and self.m > 0):
            raise DimensionError(f"m must be a positive integer, got {self.m!r}")
        for key in _MATRIX_KEYS + _VECTOR_KEYS:
            setattr(self, key, _coerce(key, getattr(self, key), self.n, self.m))
        self.Q = _canonical_symmetrize(self.Q)
        self.R = _canonical_symmetrize(self.R)

    @classmethod
    def from_coeffs(cls, n: int, m: int, **coeffs) -> "LQProblem":
        """Build a problem from any subset of coefficients; omitted ones
        default to zero blocks of the right shape."""
        unknown = set(coeffs) - set(_MATRIX_KEYS + _VECTOR_KEYS)
        if unknown:
            raise DimensionError(f"unknown coefficient keys: {sorted(unknown)}")
        full = {key: coeffs.get(key) for key in _MATRIX_KEYS + _VECTOR_KEYS}
        return cls(n=n, m=m, **full)

    @classmethod
    def from_dict(cls, data: dict) -> "LQProblem":
        if "n" not in data or "m" not in data:
            raise DimensionError("problem dictionary must carry 'n' and 'm'")
        n, m = data["n"], data["m"]
        if not (isinstance(n, int) and isinstance(m, int)):
            raise DimensionError("'n' and 'm' must be integers")
        coeffs = {k: data[k] for k in _MATRIX_KEYS + _VECTOR_KEYS if k in data}
        extra = set(data) - {"n", "m", *_MATRIX_KEYS, *_VECTOR_KEYS}
        if extra:
            raise DimensionError(f"unknown keys in problem file: {sorted(extra)}")
        return cls.from_coeffs(n, m, **coeffs)

    def to_dict(self) -> dict:
        """Plain-python form with row-major nested lists.  Serializing the
        result with ``json.dumps`` uses shortest round-trip floats, so a
        parse/serialize cycle echoes the stored values bit-exactly."""
        out = {"n": self.n, "m": self.m}
        for key in _MATRIX_KEYS:
            out[key] = getattr(self, key).tolist()
        for key in _VECTOR_KEYS:
            out[key] = getattr(self, key).tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def load_problem(path) -> LQProblem:
    with open(path, "r", encoding="utf-8") as fh:
        return LQProblem.from_dict(json.load(fh))


def dump_problem(problem: LQProblem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(problem.to_json())
        fh.write("\n")


@dataclass
class ValidationReport:
    """Outcome of :func:`validate`: the list of violated invariants
    (empty iff the problem is usable) plus the positive-definiteness
    margins of R and of the gap Q - S^T R^{-1} S."""

    violations: list = field(default_factory=list)
    r_margin: float = float("nan")
    gap_margin: float = float("nan")

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": list(self.violations),
            "r_margin": self.r_margin,
            "gap_margin": self.gap_margin,
        }


def _asymmetry(M: np.ndarray) -> float:
    scale = np.linalg.norm(M)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(M - M.T) / scale)


def validate(problem: LQProblem) -> ValidationReport:
    """Check the strong standard condition and symmetry invariants.

    Returns an empty report iff the instance is usable by the solvers.
    Shape errors never reach this function; they are raised at
    construction time as :class:`DimensionError`.
    """
    report = ValidationReport()

    for name in ("Q", "R"):
        if _asymmetry(getattr(problem, name)) > SYM_RTOL:
            report.violations.append(f"{name} is not symmetric within tolerance")

    R = 0.5 * (problem.R + problem.R.T)
    r_eigs = np.linalg.eigvalsh(R)
    report.r_margin = float(r_eigs[0])
    r_ok = r_eigs[0] > PD_RTOL * max(1.0, float(np.linalg.norm(R)))
    if not r_ok:
        report.violations.append("R not positive definite")

    if r_ok:
        gap = 0.5 * (problem.Q + problem.Q.T) - problem.S.T @ np.linalg.solve(R, problem.S)
        gap = 0.5 * (gap + gap.T)
        gap_eigs = np.linalg.eigvalsh(gap)
        report.gap_margin = float(gap_eigs[0])
        if not gap_eigs[0] > PD_RTOL * max(1.0, float(np.linalg.norm(gap))):
            report.violations.append("Q - S^T R^{-1} S not positive definite")
    else:
        report.violations.append("Q - S^T R^{-1} S not evaluable (R not invertible)")

    return report


@dataclass
class ReducedLQProblem:
    """Coefficients after the cross-term substitution u = v - R^{-1}(S X + r).

    The reduced instance has no cross weight and no linear control cost;
    its running cost differs from the original one by the constant phi0,
    so expected costs satisfy  J_original = J_reduced - phi0 * T / 2.
    """

    n: int
    m: int
    Ahat: np.ndarray
    B: np.ndarray
    Chat: np.ndarray
    D: np.ndarray
    bhat: np.ndarray
    sigmahat: np.ndarray
    Qhat: np.ndarray
    R: np.ndarray
    qhat: np.ndarray
    phi0: float

    def as_problem(self) -> LQProblem:
        """View the reduced coefficients as a plain problem (S = 0, r = 0),
        e.g. for re-validation."""
        return LQProblem.from_coeffs(
            self.n, self.m,
            A=self.Ahat, B=self.B, C=self.Chat, D=self.D,
            b=self.bhat, sigma=self.sigmahat,
            Q=self.Qhat, R=self.R, q=self.qhat,
        )


def reduce_problem(problem: LQProblem) -> ReducedLQProblem:
    """Eliminate the cross weight S and the linear control cost r.

    Under u = v - R^{-1}(S X + r) the state equation keeps its form with

        Ahat = A - B R^{-1} S,      bhat     = b     - B R^{-1} r,
        Chat = C - D R^{-1} S,      sigmahat = sigma - D R^{-1} r,

    and the running cost becomes
    <Qhat X, X> + <R v, v> + 2 <qhat, X> - phi0  with
    Qhat = Q - S^T R^{-1} S, qhat = q - S^T R^{-1} r, phi0 = r^T R^{-1} r.

    The input must validate; the reduction is the identity when S = 0 and
    r = 0, and Qhat > 0 holds whenever the input was valid.
    """
    report = validate(problem)
    if not report.ok:
        raise InvalidProblemError(report)

    R = 0.5 * (problem.R + problem.R.T)
    RinvS = np.linalg.solve(R, problem.S)          # R^{-1} S, shape (m, n)
    Rinvr = np.linalg.solve(R, problem.r)          # R^{-1} r, shape (m,)

    Qhat = problem.Q - problem.S.T @ RinvS
    return ReducedLQProblem(
        n=problem.n,
        m=problem.m,
        Ahat=problem.A - problem.B @ RinvS,
        B=problem.B.copy(),
        Chat=problem.C - problem.D @ RinvS,
        D=problem.D.copy(),
        bhat=problem.b - problem.B @ Rinvr,
        sigmahat=problem.sigma - problem.D @ Rinvr,
        Qhat=0.5 * (Qhat + Qhat.T),
        R=R.copy(),
        qhat=problem.q - problem.S.T @ Rinvr,
        phi0=float(problem.r @ Rinvr),
    )


def example_problem(which: int) -> LQProblem:
    """Built-in scalar demo instances used by the CLI ``examples``
    subcommand, the demos, and the test-suite.

    1: no state drift, control enters the drift only, state enters the
       diffusion only; linear state cost present.  The naive stationary
       problem (diffusion zeroed as a constraint) is feasible here but
       picks a different point than the correct one.
    2: every coefficient equal to one plus a constant drift offset; the
       naive stationary problem is infeasible while the correct one is
       well-posed.
    """
    if which == 1:
        return LQProblem.from_coeffs(1, 1, B=[[1.0]], C=[[1.0]],
                                     Q=[[2.0]], R=[[1.0]], q=[2.0])
    if which == 2:
        return LQProblem.from_coeffs(1, 1, A=[[1.0]], B=[[1.0]], C=[[1.0]],
                                     D=[[1.0]], b=[1.0], Q=[[1.0]], R=[[1.0]])
    raise ValueError(f"no example problem numbered {which!r}")
