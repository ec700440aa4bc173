"""Real-valued cone programs with linear equalities, second-order cones and
exponential cones.

A :class:`ConeProgram` is assembled incrementally and solved through the
Clarabel interior-point solver.  Complex decision vectors are embedded as
stacked real and imaginary parts; :class:`ComplexAffine` keeps track of
complex affine expressions of the real variables so that constraints can be
written in complex notation.
"""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_ERROR = "NumericalError"


class BuildError(ValueError):
    """Inconsistent dimensions while assembling a program."""


def _as_sparse_rows(a, n: int | None = None) -> sp.csr_matrix:
    m = a.tocsr() if sp.issparse(a) else sp.csr_matrix(np.atleast_2d(a))
    if n is not None and m.shape[1] < n:
        m = m.copy()
        m.resize((m.shape[0], n))
    return m


@dataclass
class SOCConstraint:
    """``||A x + b|| <= f^T x + d``; ``A`` may have zero rows (then ``f^T x + d >= 0``)."""

    A: sp.csr_matrix
    b: np.ndarray
    f: sp.csr_matrix
    d: float

    @property
    def dim(self) -> int:
        return 1 + self.A.shape[0]


@dataclass
class ExpConstraint:
    """``(r, s, t) = M x + h`` with ``s > 0`` and ``s exp(r/s) <= t``."""

    M: sp.csr_matrix
    h: np.ndarray


@dataclass
class ConeBlock:
    """Several cones stacked in one matrix: ``G x + h`` lies in their product.

    ``cones`` lists ``("nonneg", m)``, ``("soc", dim)`` or ``("exp", 3)`` in
    row order; an SOC's first row is its scalar bound.
    """

    G: sp.csr_matrix
    h: np.ndarray
    cones: tuple

    def __post_init__(self):
        rows = sum(m for _, m in self.cones)
        if rows != self.G.shape[0] or rows != self.h.size:
            raise BuildError("cone block rows and cone dimensions disagree")
        for kind, m in self.cones:
            if kind not in ("nonneg", "soc", "exp") or (kind == "exp" and m != 3) or m < 1:
                raise BuildError(f"bad cone {(kind, m)}")

    def split(self, v: np.ndarray):
        start = 0
        for kind, m in self.cones:
            yield kind, v[start:start + m], start
            start += m


@dataclass
class SolveResult:
    status: Status
    x: np.ndarray
    objective_value: float
    iterations: int
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass
class ConeProgram:
    n_vars: int = 0
    objective: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective_constant: float = 0.0
    eq_A: list = field(default_factory=list)
    eq_b: list = field(default_factory=list)
    soc_constraints: list = field(default_factory=list)
    exp_constraints: list = field(default_factory=list)
    lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    names: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    # -- variables -----------------------------------------------------
    def add_variables(self, size: int, lb=-np.inf, ub=np.inf, name: str = "x") -> slice:
        if size < 1:
            raise BuildError("variable block must have positive size")
        start = self.n_vars
        self.n_vars += size
        self.objective = np.concatenate([self.objective, np.zeros(size)])
        self.lower = np.concatenate([self.lower, np.broadcast_to(np.asarray(lb, float), size)])
        self.upper = np.concatenate([self.upper, np.broadcast_to(np.asarray(ub, float), size)])
        self.names.append((name, start, size))
        return slice(start, start + size)

    def selector(self, sl: slice) -> sp.csr_matrix:
        """Sparse matrix picking the variables of ``sl`` out of x."""
        size = sl.stop - sl.start
        return sp.csr_matrix(
            (np.ones(size), (np.arange(size), np.arange(sl.start, sl.stop))),
            shape=(size, self.n_vars),
        )

    def add_complex_block(self, dim: int, name: str = "w") -> "ComplexAffine":
        """Allocate ``2*dim`` reals (Re parts then Im parts) for a complex vector."""
        sl = self.add_variables(2 * dim, name=name)
        re = self.selector(slice(sl.start, sl.start + dim))
        im = self.selector(slice(sl.start + dim, sl.stop))
        return ComplexAffine(re, im)

    # -- constraints ---------------------------------------------------
    def add_objective(self, coeffs, sl: slice | None = None) -> None:
        coeffs = np.asarray(coeffs, dtype=float)
        if sl is None:
            self.objective[: coeffs.size] += coeffs
        else:
            self.objective[sl] += coeffs

    def add_eq(self, A, b) -> None:
        A = _as_sparse_rows(A)
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if A.shape[0] != b.size:
            raise BuildError("equality rows and right-hand side differ in length")
        self.eq_A.append(A)
        self.eq_b.append(b)

    def add_soc(self, A, b, f, d: float) -> None:
        A = _as_sparse_rows(A) if A is not None else sp.csr_matrix((0, self.n_vars))
        b = np.zeros(A.shape[0]) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        f = _as_sparse_rows(f)
        if f.shape[0] != 1:
            raise BuildError("SOC right-hand side must be a single row")
        if A.shape[0] != b.size:
            raise BuildError("SOC matrix and offset differ in length")
        self.soc_constraints.append(SOCConstraint(A, b, f, float(d)))

    def add_linear_ineq(self, F, d) -> None:
        """Componentwise ``F x + d >= 0`` (stored as one-dimensional cones)."""
        F = _as_sparse_rows(F)
        d = np.atleast_1d(np.asarray(d, dtype=float))
        for r in range(F.shape[0]):
            self.add_soc(None, None, F[r], d[r])

    def add_exp(self, M, h) -> None:
        M = _as_sparse_rows(M)
        h = np.asarray(h, dtype=float)
        if M.shape[0] != 3 or h.size != 3:
            raise BuildError("exponential cone needs exactly three affine rows")
        self.exp_constraints.append(ExpConstraint(M, h))

    def add_block(self, block: "ConeBlock") -> None:
        """Append a pre-stacked group of cones (cheap for repeated solves)."""
        self.blocks.append(block)

    def validate(self) -> None:
        for blk in self.blocks:
            if blk.G.shape[1] != self.n_vars:
                raise BuildError("cone block width differs from the variable count")
        if self.n_vars < 1:
            raise BuildError("program has no variables")
        for A in self.eq_A:
            if A.shape[1] > self.n_vars:
                raise BuildError("equality references unknown variables")
        for c in self.soc_constraints:
            if c.A.shape[1] > self.n_vars or c.f.shape[1] > self.n_vars:
                raise BuildError("SOC references unknown variables")
        for c in self.exp_constraints:
            if c.M.shape[1] > self.n_vars:
                raise BuildError("exponential cone references unknown variables")

    def value(self, x: np.ndarray) -> float:
        return float(self.objective @ x) + self.objective_constant


@dataclass
class ComplexAffine:
    """Complex vector ``re @ x + re0 + 1j * (im @ x + im0)`` of real variables x."""

    re: sp.csr_matrix
    im: sp.csr_matrix
    re0: np.ndarray | None = None
    im0: np.ndarray | None = None

    def __post_init__(self):
        m = self.re.shape[0]
        if self.re0 is None:
            self.re0 = np.zeros(m)
        if self.im0 is None:
            self.im0 = np.zeros(m)

    def __len__(self) -> int:
        return self.re.shape[0]

    def _width(self, n: int):
        re, im = self.re, self.im
        if re.shape[1] < n:
            re = re.copy()
            re.resize((re.shape[0], n))
            im = im.copy()
            im.resize((im.shape[0], n))
        return re, im

    def transform(self, C) -> "ComplexAffine":
        """Left-multiply by a complex constant matrix ``C``."""
        if sp.issparse(C):
            C = C.tocsr()
            Cr, Ci = sp.csr_matrix(C.real), sp.csr_matrix(C.imag)
        else:
            C = np.asarray(C)
            Cr, Ci = sp.csr_matrix(C.real), sp.csr_matrix(C.imag)
        re = (Cr @ self.re - Ci @ self.im).tocsr()
        im = (Cr @ self.im + Ci @ self.re).tocsr()
        re0 = Cr @ self.re0 - Ci @ self.im0
        im0 = Cr @ self.im0 + Ci @ self.re0
        return ComplexAffine(re, im, np.asarray(re0).ravel(), np.asarray(im0).ravel())

    def rows(self, idx) -> "ComplexAffine":
        idx = np.atleast_1d(idx)
        return ComplexAffine(self.re[idx], self.im[idx], self.re0[idx], self.im0[idx])

    def inner_rows(self, a):
        """Real and imaginary parts of ``a^H v`` as (row, constant) pairs."""
        a = np.asarray(a, dtype=complex).ravel()
        ar, ai = a.real, a.imag
        re_row = sp.csr_matrix(ar @ self.re + ai @ self.im)
        im_row = sp.csr_matrix(ar @ self.im - ai @ self.re)
        re_c = float(ar @ self.re0 + ai @ self.im0)
        im_c = float(ar @ self.im0 - ai @ self.re0)
        return (re_row, re_c), (im_row, im_c)

    def stacked(self):
        """Real matrix and offset of ``[Re v; Im v]`` (norm-preserving embedding)."""
        return sp.vstack([self.re, self.im]).tocsr(), np.concatenate([self.re0, self.im0])

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        n = x.size
        re, im = self._width(n)
        return (re @ x + self.re0) + 1j * (im @ x + self.im0)


def complex_from_slice(program: ConeProgram, sl: slice) -> ComplexAffine:
    """View an already allocated ``2*dim`` block as a complex vector."""
    dim = (sl.stop - sl.start) // 2
    re = program.selector(slice(sl.start, sl.start + dim))
    im = program.selector(slice(sl.start + dim, sl.stop))
    return ComplexAffine(re, im)


def add_complex_block(program: ConeProgram, dim: int, name: str = "w") -> ComplexAffine:
    if dim < 1:
        raise BuildError("complex block dimension must be >= 1")
    return program.add_complex_block(dim, name)


def embed_complex(v) -> np.ndarray:
    """Stacked real representation ``[Re v; Im v]``."""
    v = np.asarray(v, dtype=complex).ravel()
    return np.concatenate([v.real, v.imag])


# ---------------------------------------------------------------------------
# standard form and solve


def _standard_form(prog: ConeProgram):
    n = prog.n_vars
    blocks, rhs, cones = [], [], []

    if prog.eq_A:
        A = sp.vstack([_as_sparse_rows(a, n) for a in prog.eq_A]).tocsr()
        b = np.concatenate(prog.eq_b)
        nnz_rows = np.diff(A.indptr) > 0
        empty_bad = (~nnz_rows) & (np.abs(b) > 0)
        if np.any(empty_bad):
            return None
        A, b = A[nnz_rows], b[nnz_rows]
        if A.shape[0]:
            blocks.append(A)
            rhs.append(b)
            cones.append(clarabel.ZeroConeT(A.shape[0]))

    # nonnegative rows: s = b - A x >= 0
    nn_A, nn_b = [], []
    lo = np.flatnonzero(np.isfinite(prog.lower))
    if lo.size:
        nn_A.append(sp.csr_matrix((-np.ones(lo.size), (np.arange(lo.size), lo)), shape=(lo.size, n)))
        nn_b.append(-prog.lower[lo])
    hi = np.flatnonzero(np.isfinite(prog.upper))
    if hi.size:
        nn_A.append(sp.csr_matrix((np.ones(hi.size), (np.arange(hi.size), hi)), shape=(hi.size, n)))
        nn_b.append(prog.upper[hi])
    scalar = [c for c in prog.soc_constraints if c.A.shape[0] == 0]
    if scalar:
        nn_A.append(-sp.vstack([_as_sparse_rows(c.f, n) for c in scalar]))
        nn_b.append(np.array([c.d for c in scalar]))
    if nn_A:
        A = sp.vstack(nn_A).tocsr()
        blocks.append(A)
        rhs.append(np.concatenate(nn_b))
        cones.append(clarabel.NonnegativeConeT(A.shape[0]))

    for c in prog.soc_constraints:
        if c.A.shape[0] == 0:
            continue
        blocks.append(-sp.vstack([_as_sparse_rows(c.f, n), _as_sparse_rows(c.A, n)]))
        rhs.append(np.concatenate([[c.d], c.b]))
        cones.append(clarabel.SecondOrderConeT(c.dim))

    for c in prog.exp_constraints:
        blocks.append(-_as_sparse_rows(c.M, n))
        rhs.append(c.h)
        cones.append(clarabel.ExponentialConeT())

    make = {"nonneg": clarabel.NonnegativeConeT, "soc": clarabel.SecondOrderConeT,
            "exp": lambda m: clarabel.ExponentialConeT()}
    for blk in prog.blocks:
        blocks.append(-blk.G)
        rhs.append(blk.h)
        cones.extend(make[kind](m) for kind, m in blk.cones)

    if not blocks:
        A = sp.csc_matrix((0, n))
        b = np.zeros(0)
    else:
        A = sp.vstack(blocks).tocsc()
        b = np.concatenate(rhs)
    return A, b, cones


_STATUS = {
    "Solved": Status.OPTIMAL,
    "PrimalInfeasible": Status.INFEASIBLE,
    "AlmostPrimalInfeasible": Status.INFEASIBLE,
    "MaxIterations": Status.MAX_ITERATIONS,
    "MaxTime": Status.MAX_ITERATIONS,
}


def solve(prog: ConeProgram, tol_feas: float = 1e-8, tol_gap: float = 1e-8,
          max_iter: int = 200) -> SolveResult:
    """Solve ``prog``; the returned status follows :class:`Status`."""
    prog.validate()
    n = prog.n_vars
    form = _standard_form(prog)
    if form is None:
        return SolveResult(Status.INFEASIBLE, np.full(n, np.nan), math.nan, 0,
                           "empty equality row with nonzero right-hand side")
    A, b, cones = form
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = tol_feas
    settings.tol_gap_abs = tol_gap
    settings.tol_gap_rel = tol_gap
    settings.max_iter = max_iter
    settings.max_threads = 1
    P = sp.csc_matrix((n, n))
    solver = clarabel.DefaultSolver(P, prog.objective.copy(), A, b, cones, settings)
    sol = solver.solve()
    name = str(sol.status)
    name = name.split(".")[-1]
    x = np.asarray(sol.x, dtype=float)
    status = _STATUS.get(name)
    message = name
    if status is None:
        # AlmostSolved / InsufficientProgress / NumericalError: accept only if
        # the point is feasible to a loosened tolerance
        viol = check_feasibility(prog, x, tol_feas) if np.all(np.isfinite(x)) else None
        worst = max(viol.values()) if viol else math.inf
        if name in ("AlmostSolved", "InsufficientProgress") and worst <= 1e3 * tol_feas * (1 + np.abs(x).max()):
            status = Status.OPTIMAL
        elif name in ("DualInfeasible", "AlmostDualInfeasible"):
            status = Status.NUMERICAL_ERROR
            message = f"{name}: program unbounded"
        else:
            status = Status.NUMERICAL_ERROR
            message = f"{name} at iteration {sol.iterations}"
    obj = prog.value(x) if np.all(np.isfinite(x)) else math.nan
    return SolveResult(status, x, obj, int(sol.iterations), message)


def check_feasibility(prog: ConeProgram, x: np.ndarray, tol: float = 0.0) -> dict:
    """Worst violation per constraint family (``<= 0`` means satisfied)."""
    n = prog.n_vars
    out = {"eq": 0.0, "bounds": 0.0, "soc": 0.0, "exp": 0.0}
    if prog.eq_A:
        A = sp.vstack([_as_sparse_rows(a, n) for a in prog.eq_A])
        out["eq"] = float(np.max(np.abs(A @ x - np.concatenate(prog.eq_b)), initial=0.0))
    lo = np.where(np.isfinite(prog.lower), prog.lower - x, 0.0)
    hi = np.where(np.isfinite(prog.upper), x - prog.upper, 0.0)
    out["bounds"] = float(max(np.max(lo, initial=0.0), np.max(hi, initial=0.0), 0.0))
    worst = 0.0
    for c in prog.soc_constraints:
        lhs = np.linalg.norm(_as_sparse_rows(c.A, n) @ x + c.b) if c.A.shape[0] else 0.0
        rhs = float((_as_sparse_rows(c.f, n) @ x)[0] + c.d)
        worst = max(worst, lhs - rhs)
    out["soc"] = float(worst)
    worst = 0.0
    for c in prog.exp_constraints:
        r, s, t = _as_sparse_rows(c.M, n) @ x + c.h
        if s > 1e-300:
            with np.errstate(over="ignore"):
                v = s * math.exp(min(r / s, 700.0)) - t
        else:
            v = max(-s, r, -t, 0.0)
        worst = max(worst, v)
    out["exp"] = float(worst)
    for blk in prog.blocks:
        v = blk.G @ x + blk.h
        for kind, seg, _ in blk.split(v):
            if kind == "nonneg":
                out["soc"] = max(out["soc"], float(-seg.min()))
            elif kind == "soc":
                out["soc"] = max(out["soc"], float(np.linalg.norm(seg[1:]) - seg[0]))
            else:
                r, s_, t = seg
                if s_ > 1e-300:
                    with np.errstate(over="ignore"):
                        viol = s_ * math.exp(min(r / s_, 700.0)) - t
                else:
                    viol = max(-s_, r, -t, 0.0)
                out["exp"] = max(out["exp"], float(viol))
    return out


def dump_program(prog: ConeProgram) -> str:
    """Plain-text dump: a header of dimensions, then one line per row.

    Format::

        n_vars <n> eq <m> soc <k> exp <e>
        c <c_0> ... <c_{n-1}>
        bounds <j> <lower> <upper>
        eq <row-entries> = <b>
        soc <dim> d <d> f <row-entries>
        socrow <row-entries> + <b_i>
        exp <r|s|t> <row-entries> + <h>

    Row entries are ``index:value`` pairs.
    """
    n = prog.n_vars
    buf = io.StringIO()

    def entries(row) -> str:
        row = _as_sparse_rows(row, n).tocoo()
        return " ".join(f"{j}:{v!r}" for j, v in zip(row.col, row.data))

    n_eq = sum(a.shape[0] for a in prog.eq_A)
    n_soc = len(prog.soc_constraints)
    n_exp = len(prog.exp_constraints)
    for blk in prog.blocks:
        for kind, m in blk.cones:
            if kind == "exp":
                n_exp += 1
            else:
                n_soc += m if kind == "nonneg" else 1
    buf.write(f"n_vars {n} eq {n_eq} soc {n_soc} exp {n_exp}\n")
    buf.write("c " + " ".join(repr(float(v)) for v in prog.objective) + "\n")
    for j in range(n):
        if np.isfinite(prog.lower[j]) or np.isfinite(prog.upper[j]):
            buf.write(f"bounds {j} {prog.lower[j]!r} {prog.upper[j]!r}\n")
    for A, b in zip(prog.eq_A, prog.eq_b):
        A = _as_sparse_rows(A, n)
        for r in range(A.shape[0]):
            buf.write(f"eq {entries(A[r])} = {b[r]!r}\n")
    for c in prog.soc_constraints:
        buf.write(f"soc {c.dim} d {c.d!r} f {entries(c.f)}\n")
        for r in range(c.A.shape[0]):
            buf.write(f"socrow {entries(c.A[r])} + {c.b[r]!r}\n")
    for c in prog.exp_constraints:
        for r, tag in enumerate("rst"):
            buf.write(f"exp {tag} {entries(c.M[r])} + {c.h[r]!r}\n")
    for blk in prog.blocks:
        G = blk.G.tocsr()
        for kind, seg, start in blk.split(blk.h):
            if kind == "exp":
                for r, tag in enumerate("rst"):
                    buf.write(f"exp {tag} {entries(G[start + r])} + {seg[r]!r}\n")
            elif kind == "soc":
                buf.write(f"soc {seg.size} d {seg[0]!r} f {entries(G[start])}\n")
                for r in range(1, seg.size):
                    buf.write(f"socrow {entries(G[start + r])} + {seg[r]!r}\n")
            else:
                for r in range(seg.size):
                    buf.write(f"soc 1 d {seg[r]!r} f {entries(G[start + r])}\n")
    return buf.getvalue()
