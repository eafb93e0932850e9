"""GMRES, the capacity solves and conditioning diagnostics."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

RESIDUAL_TOL = 1e-10
MAX_ITER = 500
DENSE_LIMIT = 6000
DIRECT_LIMIT = 2000


class StopReason(str, enum.Enum):
    ESTIMATOR = "estimator_rule"
    RESIDUAL = "residual_tol"
    MAX_ITER = "max_iter"


class ConvergenceError(RuntimeError):
    """GMRES hit the iteration cap without satisfying any stopping rule."""

    def __init__(self, message, x=None, report=None):
        super().__init__(message)
        self.x = x
        self.report = report


@dataclass
class SolveReport:
    iterations: int
    stop_reason: StopReason
    final_residual: float
    energy_increments: list = field(default_factory=list)


def gmres(apply, b, stop=None, max_iter=MAX_ITER, tol=RESIDUAL_TOL, x0=None):
    """Non-restarted GMRES with modified Gram-Schmidt.

    Parameters
    ----------
    apply : callable
        ``v -> A v``.
    b : ndarray
    stop : callable, optional
        ``stop(k, x_k, y_k) -> bool`` after iteration ``k``; ``y_k`` are the
        coefficients of ``x_k - x0`` in the Krylov basis, in the order in
        which ``apply`` saw the basis vectors.
    max_iter : int
    tol : float
        Relative residual at which to stop regardless of ``stop``.

    Returns
    -------
    x : ndarray
    report : SolveReport
        ``energy_increments`` is left empty; callers that measure them fill
        it in.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    r0 = b - apply(x0) if np.any(x0) else b.copy()
    beta = np.linalg.norm(r0)
    bnorm = np.linalg.norm(b)
    if beta == 0.0 or bnorm == 0.0:
        return x0.copy(), SolveReport(1, StopReason.RESIDUAL, 0.0)
    m = min(max_iter, n)
    V = np.zeros((m + 1, n))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = r0 / beta
    x = x0.copy()
    reason = StopReason.MAX_ITER
    k = 0
    res = 1.0
    for j in range(m):
        w = np.asarray(apply(V[j]), dtype=float)
        for i in range(j + 1):
            H[i, j] = np.dot(w, V[i])
            w = w - H[i, j] * V[i]
        H[j + 1, j] = np.linalg.norm(w)
        breakdown = H[j + 1, j] <= 1e-14 * np.abs(H[: j + 1, j]).max()
        if not breakdown:
            V[j + 1] = w / H[j + 1, j]
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        rho = np.hypot(H[j, j], H[j + 1, j])
        cs[j], sn[j] = H[j, j] / rho, H[j + 1, j] / rho
        H[j, j] = rho
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        k = j + 1
        y = sla.solve_triangular(H[:k, :k], g[:k])
        x = x0 + V[:k].T @ y
        res = abs(g[k]) / bnorm
        if stop is not None and stop(k, x, y):
            reason = StopReason.ESTIMATOR
            break
        if res < tol or breakdown:
            reason = StopReason.RESIDUAL
            break
    return x, SolveReport(k, reason, float(res))


def energy_norm(system, x) -> float:
    """``sqrt(x^T V^dual x)`` for a dual P0 coefficient vector."""
    x = np.asarray(x, dtype=float)
    q = float(x @ system.apply_Vdual(x))
    if q < -1e-12 * max(1.0, float(x @ x)):
        raise ArithmeticError(f"negative energy {q}: single-layer matrix is not positive definite")
    return float(np.sqrt(max(q, 0.0)))


class _Tracker:
    """Keeps the dual coefficients of each Krylov direction and their energy Gram matrix."""

    def __init__(self, to_dual, Vdual):
        self.to_dual = to_dual
        self.Vdual = Vdual
        self.W = []
        self.U = []
        self.G = np.zeros((0, 0))

    def record(self, v):
        w = self.to_dual(v)
        u = self.Vdual(w)
        k = len(self.W)
        G = np.zeros((k + 1, k + 1))
        G[:k, :k] = self.G
        col = np.array([wi @ u for wi in self.W] + [w @ u])
        G[:k + 1, k] = col
        G[k, :k + 1] = col
        self.G = G
        self.W.append(w)
        self.U.append(u)
        return w, u

    def dual_iterate(self, y):
        return np.asarray(self.W[: len(y)]).T @ y

    def energy_sq(self, dy):
        k = len(dy)
        return float(dy @ self.G[:k, :k] @ dy)


def solve_capacity(system, precond="operator", lam=1e-3, estimator_eval=None, max_iter=MAX_ITER,
                   tol=RESIDUAL_TOL, raise_on_failure=True):
    """Solve for the dual P0 density with an estimator-based stopping rule.

    Parameters
    ----------
    system : CapacitySystem
    precond : {"operator", "diagonal", "none"}
    lam : float
        Iteration stops once ``|||x_{k-1} - x_k||| <= lam * eta(x_k)``.
    estimator_eval : callable, optional
        ``x -> eta(x)^2`` for a dual coefficient vector. Without it only the
        residual tolerance applies.

    Returns
    -------
    x : ndarray
        Dual P0 coefficients.
    report : SolveReport
    """
    if lam <= 0.0:
        raise ValueError(f"lambda must be positive, got {lam}")
    f = system.f
    if precond == "operator":
        to_dual = lambda v: system.solve_M(system.apply_Dreg(v))
        tracker = _Tracker(to_dual, system.apply_Vdual)

        def apply(v):
            _, u = tracker.record(v)
            return system.solve_MT(u)

        rhs = system.solve_MT(f)
    elif precond in ("diagonal", "none"):
        tracker = _Tracker(lambda v: np.array(v, dtype=float), system.apply_Vdual)
        if precond == "diagonal":
            dinv = 1.0 / np.diag(system.Vdual)
        else:
            dinv = np.ones(system.size)

        def apply(v):
            _, u = tracker.record(v)
            return dinv * u

        rhs = dinv * f
    else:
        raise ValueError(f"unknown preconditioner {precond!r}")

    increments = []
    prev = {"y": np.zeros(0)}

    def stop(k, _x, y):
        dy = y.copy()
        dy[: prev["y"].size] -= prev["y"]
        prev["y"] = y
        inc = np.sqrt(max(tracker.energy_sq(dy), 0.0))
        increments.append(inc)
        if estimator_eval is None:
            return False
        eta_sq = estimator_eval(tracker.dual_iterate(y))
        return inc <= lam * np.sqrt(max(eta_sq, 0.0))

    if not np.any(f):
        return np.zeros(system.size), SolveReport(1, StopReason.RESIDUAL, 0.0, [0.0])
    _, report = gmres(apply, rhs, stop=stop, max_iter=max_iter, tol=tol)
    x = tracker.dual_iterate(prev["y"])
    report.energy_increments = increments
    if report.stop_reason is StopReason.MAX_ITER and raise_on_failure:
        raise ConvergenceError(f"GMRES did not converge in {max_iter} iterations", x, report)
    return x, report


def solve_primal(V, f, precond="diagonal", method="auto", tol=RESIDUAL_TOL, max_iter=MAX_ITER):
    """Primal P0 Galerkin solution of ``V x = f``.

    ``method="auto"`` uses a Cholesky factorisation up to 2000 unknowns and
    GMRES beyond.
    """
    V = np.asarray(V, dtype=float)
    f = np.asarray(f, dtype=float)
    n = f.size
    if not np.any(f):
        return np.zeros(n)
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "iterative"
    if method == "direct":
        return sla.cho_solve(sla.cho_factor(V), f)
    if precond not in ("diagonal", "none"):
        raise ValueError(f"unknown preconditioner {precond!r}")
    dinv = 1.0 / np.diag(V) if precond == "diagonal" else np.ones(n)
    x, report = gmres(lambda v: dinv * (V @ v), dinv * f, max_iter=max_iter, tol=tol)
    if report.stop_reason is StopReason.MAX_ITER:
        raise ConvergenceError(f"GMRES did not converge in {max_iter} iterations", x, report)
    return x


def materialize(apply, n):
    """Dense matrix of a linear map, one unit vector at a time."""
    out = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        out[:, j] = apply(e)
        e[j] = 0.0
    return out


def condition_number(apply, n=None, symmetric=False):
    """Spectral condition number ``sigma_max / sigma_min``.

    ``apply`` is a callable or a dense matrix.
    """
    if callable(apply):
        if n is None:
            raise ValueError("dimension required for a callable map")
        if n > DENSE_LIMIT:
            raise ValueError(f"dimension {n} too large for dense diagnostics (limit {DENSE_LIMIT})")
        A = materialize(apply, n)
    else:
        A = np.asarray(apply, dtype=float)
        if A.shape[0] > DENSE_LIMIT:
            raise ValueError(f"dimension {A.shape[0]} too large for dense diagnostics (limit {DENSE_LIMIT})")
    if symmetric:
        ev = np.abs(np.linalg.eigvalsh(0.5 * (A + A.T)))
        return float(ev.max() / ev.min())
    s = np.linalg.svd(A, compute_uv=False)
    return float(s[0] / s[-1])


def preconditioned_matrix(system):
    """``M^-T V^dual M^-1 D^reg`` as a dense matrix."""
    D = system.Dreg_matrix()
    X = system._lu.solve(D)
    return system._luT.solve(system.Vdual @ X)


def spectral_condition(system):
    """``lambda_max / lambda_min`` of the operator-preconditioned matrix.

    The matrix is similar to ``L^T (M^-T V^dual M^-1) L`` with
    ``D^reg = L L^T``, so its eigenvalues are real and positive. Unlike the
    singular-value ratio this is unaffected by the Euclidean conditioning of
    the mass matrix on graded meshes.
    """
    if system.size > DENSE_LIMIT:
        raise ValueError(f"dimension {system.size} too large for dense diagnostics (limit {DENSE_LIMIT})")
    X = system._luT.solve(system.Vdual)
    Vp = system._luT.solve(X.T)
    L = np.linalg.cholesky(system.Dreg_matrix())
    ev = np.linalg.eigvalsh(L.T @ Vp @ L)
    return float(ev[-1] / ev[0])
