"""
Standard-form second-order cone programs and an operator-splitting solver.

A program is

    minimize c'x  subject to  A x + s = b,  s in K

where K is an ordered product of zero cones (equalities) and second-order
cones {(t, w) : ||w|| <= t}. A one-dimensional second-order cone is the
nonnegative half-line.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from errors import ConfigError, DataError, SolverError, UnboundedProblemError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 100_000


class ConeKind(Enum):
    ZERO = "zero"
    SOC = "soc"


@dataclass(frozen=True)
class Cone:
    kind: ConeKind
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise DataError(f"{self.kind.value} cone needs dim >= 1, got {self.dim}")

    @classmethod
    def zero(cls, dim: int) -> "Cone":
        return cls(ConeKind.ZERO, int(dim))

    @classmethod
    def soc(cls, dim: int) -> "Cone":
        return cls(ConeKind.SOC, int(dim))


def _project_soc(v: np.ndarray) -> np.ndarray:
    """Project each row (t, w) of a (blocks, dim) array onto ||w|| <= t."""
    t = v[:, 0]
    w = v[:, 1:]
    nw = np.linalg.norm(w, axis=1)
    out = np.zeros_like(v)
    inside = nw <= t
    out[inside] = v[inside]
    mid = ~inside & (nw > -t)
    scale = 0.5 * (t[mid] + nw[mid])
    out[mid, 0] = scale
    out[mid, 1:] = (scale / nw[mid])[:, None] * w[mid]
    return out


class ConeLayout:
    """Row indices of a cone product, grouped so projections vectorize."""

    def __init__(self, cones: Sequence[Cone]):
        zero: List[np.ndarray] = []
        soc: Dict[int, List[np.ndarray]] = {}
        start = 0
        for cone in cones:
            rows = np.arange(start, start + cone.dim)
            if cone.kind is ConeKind.ZERO:
                zero.append(rows)
            else:
                soc.setdefault(cone.dim, []).append(rows)
            start += cone.dim
        self.num_rows = start
        self.zero = np.concatenate(zero) if zero else np.zeros(0, dtype=int)
        self.soc = {dim: np.vstack(blocks) for dim, blocks in sorted(soc.items())}

    def project(self, v: np.ndarray) -> np.ndarray:
        """Euclidean projection onto K."""
        out = v.copy()
        out[self.zero] = 0.0
        for idx in self.soc.values():
            out[idx] = _project_soc(v[idx])
        return out

    def project_dual(self, v: np.ndarray) -> np.ndarray:
        """Euclidean projection onto the dual cone (zero cones dualize to free)."""
        out = v.copy()
        for idx in self.soc.values():
            out[idx] = _project_soc(v[idx])
        return out

    def violation(self, s: np.ndarray) -> float:
        """Largest violation of s in K: |s| on zero rows, ||w|| - t on cones."""
        worst = float(np.abs(s[self.zero]).max()) if len(self.zero) else 0.0
        for idx in self.soc.values():
            block = s[idx]
            gap = np.linalg.norm(block[:, 1:], axis=1) - block[:, 0]
            worst = max(worst, float(gap.max()))
        return max(worst, 0.0)

    def dual_violation(self, y: np.ndarray) -> float:
        worst = 0.0
        for idx in self.soc.values():
            block = y[idx]
            gap = np.linalg.norm(block[:, 1:], axis=1) - block[:, 0]
            worst = max(worst, float(gap.max()))
        return max(worst, 0.0)

    def block_max(self, v: np.ndarray) -> np.ndarray:
        """Replace entries of every second-order block by the block maximum."""
        out = v.copy()
        for idx in self.soc.values():
            out[idx] = v[idx].max(axis=1, keepdims=True)
        return out


@dataclass(frozen=True, eq=False)
class ConicProgram:
    """minimize c'x s.t. A x + s = b, s in the product of `cones` (in row order)."""

    c: np.ndarray
    A: sparse.csr_matrix
    b: np.ndarray
    cones: Tuple[Cone, ...]

    def __post_init__(self):
        c = np.array(self.c, dtype=float).ravel()
        b = np.array(self.b, dtype=float).ravel()
        A = sparse.csr_matrix(self.A, dtype=float, copy=True)
        A.eliminate_zeros()
        A.sort_indices()
        cones = tuple(self.cones)
        m, n = A.shape
        if len(c) != n:
            raise DataError(f"objective has {len(c)} entries, A has {n} columns")
        if len(b) != m:
            raise DataError(f"right-hand side has {len(b)} entries, A has {m} rows")
        total = sum(cone.dim for cone in cones)
        if total != m:
            raise DataError(f"cone dimensions sum to {total}, A has {m} rows")
        empty = np.flatnonzero(np.diff(A.indptr) == 0)
        if len(empty):
            raise DataError(f"constraint row {empty[0]} is all zero ({len(empty)} such rows)")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b)) and np.all(np.isfinite(A.data))):
            raise DataError("program data must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "cones", cones)
        object.__setattr__(self, "layout", ConeLayout(cones))

    @property
    def num_variables(self) -> int:
        return self.A.shape[1]

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x)

    def slack(self, x: np.ndarray) -> np.ndarray:
        return self.b - self.A @ x

    def cone_violation(self, x: np.ndarray) -> float:
        return self.layout.violation(self.slack(x))

    def describe(self) -> str:
        n_zero = sum(1 for cone in self.cones if cone.kind is ConeKind.ZERO)
        return (f"{self.num_variables} variables, {self.num_rows} rows, nnz={self.A.nnz}, "
                f"{n_zero} zero cones, {len(self.cones) - n_zero} second-order cones")

    def to_dict(self) -> dict:
        coo = self.A.tocoo()
        return {
            "c": self.c.tolist(),
            "b": self.b.tolist(),
            "A": {
                "shape": list(self.A.shape),
                "row": coo.row.tolist(),
                "col": coo.col.tolist(),
                "data": coo.data.tolist(),
            },
            "cones": [{"kind": cone.kind.value, "dim": cone.dim} for cone in self.cones],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ConicProgram":
        try:
            a = data["A"]
            A = sparse.coo_matrix((a["data"], (a["row"], a["col"])), shape=tuple(a["shape"]))
            cones = tuple(Cone(ConeKind(cone["kind"]), int(cone["dim"])) for cone in data["cones"])
            return cls(c=np.asarray(data["c"], dtype=float), A=A.tocsr(),
                       b=np.asarray(data["b"], dtype=float), cones=cones)
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed program dump: missing or invalid field {exc}") from exc

    def dump_json(self, path: Union[str, Path]) -> None:
        """Write c and b dense, A as COO triplets and the cone list."""
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load_json(cls, path: Union[str, Path]) -> "ConicProgram":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


# An affine expression const + sum(coef * x[col]) written as ({col: coef}, const)
Affine = Tuple[Mapping[int, float], float]


class ProgramBuilder:
    """
    Accumulates cone blocks written as affine expressions of x.

    Structurally empty rows are compacted away: a second-order tail
    component that is identically zero is dropped (the cone dimension
    shrinks), and an equality 0 == 0 is dropped.
    """

    def __init__(self, num_variables: int):
        self.num_variables = int(num_variables)
        self.c = np.zeros(self.num_variables)
        self.dropped_rows = 0
        self._rows: List[int] = []
        self._cols: List[int] = []
        self._vals: List[float] = []
        self._b: List[float] = []
        self._cones: List[Cone] = []

    @property
    def num_rows(self) -> int:
        return len(self._b)

    def set_objective(self, c: np.ndarray) -> None:
        c = np.asarray(c, dtype=float).ravel()
        if len(c) != self.num_variables:
            raise DataError(f"objective has {len(c)} entries, expected {self.num_variables}")
        self.c = c

    def _push(self, terms: Mapping[int, float], rhs: float, sign: float) -> None:
        row = len(self._b)
        for col, val in terms.items():
            if val != 0.0:
                self._rows.append(row)
                self._cols.append(int(col))
                self._vals.append(sign * float(val))
        self._b.append(float(rhs))

    @staticmethod
    def _is_empty(terms: Mapping[int, float]) -> bool:
        return all(v == 0.0 for v in terms.values())

    def add_equality(self, terms: Mapping[int, float], rhs: float = 0.0) -> None:
        """Constrain sum(coef * x[col]) == rhs."""
        if self._is_empty(terms):
            if rhs != 0.0:
                raise DataError(f"equality 0 == {rhs} cannot hold")
            self.dropped_rows += 1
            return
        self._push(terms, rhs, 1.0)
        self._cones.append(Cone.zero(1))

    def add_soc(self, head: Affine, tails: Sequence[Affine] = ()) -> None:
        """Constrain ||tails|| <= head for affine expressions of x."""
        kept = []
        for terms, const in tails:
            if self._is_empty(terms):
                if const != 0.0:
                    raise DataError("a cone component may not be a nonzero constant")
                self.dropped_rows += 1
                continue
            kept.append((terms, const))

        head_terms, head_const = head
        if self._is_empty(head_terms):
            if head_const != 0.0:
                raise DataError("a cone head may not be a nonzero constant")
            # ||w|| <= 0 pins every component to zero
            self.dropped_rows += 1
            for terms, const in kept:
                self.add_equality(terms, -const)
            return

        self._push(head_terms, head_const, -1.0)
        for terms, const in kept:
            self._push(terms, const, -1.0)
        self._cones.append(Cone.soc(1 + len(kept)))

    def add_nonneg(self, terms: Mapping[int, float], const: float = 0.0) -> None:
        """Constrain const + sum(coef * x[col]) >= 0."""
        self.add_soc((terms, const))

    def build(self) -> ConicProgram:
        A = sparse.coo_matrix((self._vals, (self._rows, self._cols)),
                              shape=(len(self._b), self.num_variables)).tocsr()
        return ConicProgram(c=self.c, A=A, b=np.array(self._b), cones=tuple(self._cones))


class SolverStatus(Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    MAX_ITERATIONS = "max_iterations"


@dataclass
class SolverResult:
    """Outcome of one solve. y is the cone dual (A'y + c = 0, y in K*)."""

    x: np.ndarray
    y: np.ndarray
    status: SolverStatus
    objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    solve_seconds: float
    backend: str = "reference"

    @property
    def optimal(self) -> bool:
        return self.status is SolverStatus.OPTIMAL

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "objective": self.objective,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "gap": self.gap,
            "iterations": self.iterations,
            "solve_seconds": self.solve_seconds,
            "backend": self.backend,
        }


class Residuals(NamedTuple):
    primal: float
    dual: float
    gap: float

    @property
    def worst(self) -> float:
        return max(self.primal, self.dual, self.gap)

    def converged(self, tol: float) -> bool:
        return self.worst <= tol


def _inf(v: np.ndarray) -> float:
    return float(np.abs(v).max()) if v.size else 0.0


def program_residuals(program: ConicProgram, x: np.ndarray, y: np.ndarray,
                      z: Optional[np.ndarray] = None) -> Residuals:
    """
    Relative residuals of a primal-dual pair.

    z is the projected estimate of A x (b - s); the primal residual also
    includes the absolute cone violation of b - A x.
    """
    Ax = program.A @ x
    if z is None:
        z = Ax
    primal = _inf(Ax - z) / (1.0 + max(_inf(Ax), _inf(z)))
    primal = max(primal, program.layout.violation(program.b - Ax))
    ATy = program.A.T @ y
    dual = _inf(program.c + ATy) / (1.0 + max(_inf(program.c), _inf(ATy)))
    dual = max(dual, program.layout.dual_violation(y))
    pobj = float(program.c @ x)
    dobj = -float(program.b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return Residuals(primal, dual, gap)


class AdmmSolver:
    """
    Operator-splitting iteration on the equilibrated program.

    Splits A x = z, z in C = b - K. Each iteration solves one linear system
    with the factored matrix sigma I + A' R A, projects onto C and updates
    the dual. A solver instance owns its workspace and serves one solve.
    """

    sigma = 1e-6
    alpha = 1.6
    rho_init = 0.1
    rho_equality_factor = 1e3
    ruiz_iterations = 15
    check_every = 10
    adapt_every = 50
    infeasibility_tol = 1e-6

    def __init__(self, program: ConicProgram, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
        self.program = program
        self.tol = tol
        self.max_iter = max_iter
        self.refactorizations = 0
        self._equilibrate()
        self._set_rho(self.rho_init)

    def _equilibrate(self) -> None:
        program = self.program
        m, n = program.A.shape
        A = program.A.copy()
        D = np.ones(n)
        E = np.ones(m)
        for _ in range(self.ruiz_iterations):
            col = np.asarray(abs(A).max(axis=0).todense()).ravel()
            row = np.asarray(abs(A).max(axis=1).todense()).ravel()
            # second-order blocks must be scaled uniformly to stay cones
            row = program.layout.block_max(row)
            d = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
            e = 1.0 / np.sqrt(np.clip(row, 1e-4, 1e4))
            A = (sparse.diags(e) @ A @ sparse.diags(d)).tocsr()
            D *= d
            E *= e
        c = D * program.c
        cmax = _inf(c)
        self.cost_scale = 1.0 / float(np.clip(cmax, 1e-4, 1e4)) if cmax > 0 else 1.0
        self.A = A.tocsc()
        self.AT = A.T.tocsr()
        self.b = E * program.b
        self.c = self.cost_scale * c
        self.D = D
        self.E = E

    def _set_rho(self, rho: float) -> None:
        self.rho = rho
        rho_vec = np.full(self.program.num_rows, rho)
        rho_vec[self.program.layout.zero] = rho * self.rho_equality_factor
        self.rho_vec = rho_vec
        n = self.program.num_variables
        M = self.sigma * sparse.identity(n, format="csc") + self.AT @ sparse.diags(rho_vec) @ self.A
        self._lu = splu(sparse.csc_matrix(M))
        self.refactorizations += 1

    def _project_c(self, v: np.ndarray) -> np.ndarray:
        return self.b - self.program.layout.project(self.b - v)

    def _unscale(self, x: np.ndarray, z: np.ndarray, y: np.ndarray):
        return self.D * x, z / self.E, self.E * y / self.cost_scale

    def _adapt_rho(self, x: np.ndarray, z: np.ndarray, y: np.ndarray) -> None:
        Ax = self.A @ x
        ATy = self.AT @ y
        primal = _inf(Ax - z) / max(_inf(Ax), _inf(z), 1e-12)
        dual = _inf(self.c + ATy) / max(_inf(ATy), _inf(self.c), 1e-12)
        if primal == 0.0 or dual == 0.0:
            return
        rho = float(np.clip(self.rho * np.sqrt(primal / dual), 1e-6, 1e6))
        if rho > 5.0 * self.rho or rho < 0.2 * self.rho:
            logger.debug("rho %.3e -> %.3e", self.rho, rho)
            self._set_rho(rho)

    def _certificate(self, dx: np.ndarray, dy: np.ndarray, x: np.ndarray, y: np.ndarray) -> Optional[SolverStatus]:
        program = self.program
        eps = self.infeasibility_tol

        dy = self.E * dy
        size = _inf(dy)
        if size > 1e3 * self.tol * (1.0 + _inf(self.E * y)):
            dy = dy / size
            if (_inf(program.A.T @ dy) < eps and float(program.b @ dy) < -eps
                    and program.layout.dual_violation(dy) < eps):
                return SolverStatus.PRIMAL_INFEASIBLE

        dx = self.D * dx
        size = _inf(dx)
        if size > 1e3 * self.tol * (1.0 + _inf(self.D * x)):
            dx = dx / size
            if float(program.c @ dx) < -eps * max(1.0, _inf(program.c)):
                if program.layout.violation(-(program.A @ dx)) < eps:
                    return SolverStatus.DUAL_INFEASIBLE
        return None

    def solve(self, x0: Optional[np.ndarray] = None, y0: Optional[np.ndarray] = None) -> SolverResult:
        program = self.program
        m, n = program.A.shape
        start = time.perf_counter()

        x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / self.D
        y = np.zeros(m) if y0 is None else self.cost_scale * np.asarray(y0, dtype=float) / self.E
        z = self._project_c(self.A @ x)

        best: Optional[Tuple[Residuals, np.ndarray, np.ndarray, int]] = None
        status = SolverStatus.MAX_ITERATIONS
        iteration = 0
        for iteration in range(1, self.max_iter + 1):
            rhs = self.sigma * x - self.c + self.AT @ (self.rho_vec * z - y)
            x_tilde = self._lu.solve(rhs)
            z_tilde = self.A @ x_tilde
            x_next = self.alpha * x_tilde + (1.0 - self.alpha) * x
            z_relaxed = self.alpha * z_tilde + (1.0 - self.alpha) * z
            z_next = self._project_c(z_relaxed + y / self.rho_vec)
            y_next = y + self.rho_vec * (z_relaxed - z_next)
            dx, dy = x_next - x, y_next - y
            x, z, y = x_next, z_next, y_next

            if iteration % self.check_every and iteration != self.max_iter:
                continue

            xu, zu, yu = self._unscale(x, z, y)
            res = program_residuals(program, xu, yu, zu)
            if best is None or res.worst < best[0].worst:
                best = (res, xu, yu, iteration)
            if res.converged(self.tol):
                status = SolverStatus.OPTIMAL
                best = (res, xu, yu, iteration)
                break
            cert = self._certificate(dx, dy, x, y)
            if cert is not None:
                status = cert
                best = (res, xu, yu, iteration)
                break
            if iteration % self.adapt_every == 0:
                self._adapt_rho(x, z, y)
            if iteration % 1000 == 0:
                logger.debug("iter %d: primal %.2e dual %.2e gap %.2e", iteration, *res)

        res, xu, yu, _ = best
        elapsed = time.perf_counter() - start
        if status is SolverStatus.MAX_ITERATIONS:
            logger.warning("solver stopped after %d iterations (primal %.2e, dual %.2e, gap %.2e); "
                           "returning best iterate", iteration, *res)
        return SolverResult(x=xu, y=yu, status=status, objective=program.objective(xu),
                            primal_residual=res.primal, dual_residual=res.dual, gap=res.gap,
                            iterations=iteration, solve_seconds=elapsed)


def _check_settings(tol: float, max_iter: int) -> None:
    if not tol > 0:
        raise ConfigError(f"solver tolerance must be positive, got {tol}")
    if int(max_iter) < 1:
        raise ConfigError(f"solver max_iter must be at least 1, got {max_iter}")


def solve(program: ConicProgram, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
          x0: Optional[np.ndarray] = None, y0: Optional[np.ndarray] = None) -> SolverResult:
    """
    Solve a conic program with the built-in operator-splitting method.

    Args:
        program: Program to solve
        tol: Bound on the relative primal/dual residuals and gap
        max_iter: Iteration budget
        x0: Optional warm-start primal point
        y0: Optional warm-start dual point

    Returns:
        SolverResult; MAX_ITERATIONS carries the best iterate seen
    """
    _check_settings(tol, max_iter)
    if program.num_rows == 0:
        x = np.zeros(program.num_variables)
        status = SolverStatus.OPTIMAL if not np.any(program.c) else SolverStatus.DUAL_INFEASIBLE
        return SolverResult(x=x, y=np.zeros(0), status=status, objective=0.0, primal_residual=0.0,
                            dual_residual=_inf(program.c), gap=0.0, iterations=0, solve_seconds=0.0)
    logger.debug("solving %s", program.describe())
    return AdmmSolver(program, tol=tol, max_iter=int(max_iter)).solve(x0, y0)


SolverBackend = Callable[..., SolverResult]
_BACKENDS: Dict[str, SolverBackend] = {}


def register_backend(name: str) -> Callable[[SolverBackend], SolverBackend]:
    """Decorator registering `fn(program, tol, max_iter, x0, y0)` under `name`."""

    def decorator(fn: SolverBackend) -> SolverBackend:
        _BACKENDS[name] = fn
        return fn

    return decorator


def available_backends() -> List[str]:
    return sorted(_BACKENDS)


def solve_backend(program: ConicProgram, backend: str = "reference", tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER, x0: Optional[np.ndarray] = None,
                  y0: Optional[np.ndarray] = None) -> SolverResult:
    """Solve with a registered backend; same contract as `solve`."""
    try:
        fn = _BACKENDS[backend]
    except KeyError:
        raise ConfigError(f"unknown solver backend '{backend}' "
                          f"(available: {', '.join(available_backends())})") from None
    _check_settings(tol, max_iter)
    return fn(program, tol=tol, max_iter=int(max_iter), x0=x0, y0=y0)


register_backend("reference")(solve)


def _scs_ordering(program: ConicProgram) -> Tuple[np.ndarray, dict]:
    zero, linear, quad, dims = [], [], [], []
    start = 0
    for cone in program.cones:
        rows = list(range(start, start + cone.dim))
        if cone.kind is ConeKind.ZERO:
            zero.extend(rows)
        elif cone.dim == 1:
            linear.extend(rows)
        else:
            quad.extend(rows)
            dims.append(cone.dim)
        start += cone.dim
    cone = {}
    if zero:
        cone["z"] = len(zero)
    if linear:
        cone["l"] = len(linear)
    if dims:
        cone["q"] = dims
    return np.array(zero + linear + quad, dtype=int), cone


@register_backend("scs")
def solve_scs(program: ConicProgram, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
              x0: Optional[np.ndarray] = None, y0: Optional[np.ndarray] = None) -> SolverResult:
    """Solve with the SCS package (rows reordered to its cone convention)."""
    try:
        import scs
    except ImportError as exc:
        raise ConfigError("solver backend 'scs' needs the optional 'scs' package") from exc

    order, cone = _scs_ordering(program)
    A = program.A[order].tocsc()
    b = program.b[order]
    data = {"A": A, "b": b, "c": program.c}
    start = time.perf_counter()
    solver = scs.SCS(data, cone, eps_abs=0.1 * tol, eps_rel=0.1 * tol, max_iters=max_iter, verbose=False)
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        y_warm = np.zeros(len(b)) if y0 is None else np.asarray(y0, dtype=float)[order]
        sol = solver.solve(warm_start=True, x=x0, y=y_warm, s=b - A @ x0)
    else:
        sol = solver.solve()
    elapsed = time.perf_counter() - start

    m = program.num_rows
    y = np.empty(m)
    y[order] = sol["y"]
    s = np.empty(m)
    s[order] = sol["s"]
    x = np.asarray(sol["x"], dtype=float)
    info = sol["info"]
    res = program_residuals(program, x, y, program.b - s)

    text = str(info.get("status", "")).lower()
    if "infeasible" in text:
        status = SolverStatus.PRIMAL_INFEASIBLE
    elif "unbounded" in text:
        status = SolverStatus.DUAL_INFEASIBLE
    elif res.converged(tol):
        status = SolverStatus.OPTIMAL
    else:
        status = SolverStatus.MAX_ITERATIONS
        logger.warning("scs returned '%s' but residuals (%.2e, %.2e, %.2e) exceed %.1e", text, *res, tol)
    return SolverResult(x=x, y=y, status=status, objective=program.objective(x),
                        primal_residual=res.primal, dual_residual=res.dual, gap=res.gap,
                        iterations=int(info.get("iter", 0)), solve_seconds=elapsed, backend="scs")


def require_optimal(result: SolverResult, what: str) -> SolverResult:
    """Raise unless the result is optimal."""
    if result.status is SolverStatus.OPTIMAL:
        return result
    if result.status is SolverStatus.DUAL_INFEASIBLE:
        raise UnboundedProblemError(f"{what}: program is unbounded")
    raise SolverError(f"{what}: solver status {result.status.value} after {result.iterations} iterations "
                      f"(primal {result.primal_residual:.2e}, dual {result.dual_residual:.2e}, "
                      f"gap {result.gap:.2e})", result=result)
