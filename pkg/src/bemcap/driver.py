"""Adaptive loops, the capacity functional and convergence rates."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .estimator import dorfler_mark, residual_indicators, zz_indicators
from .mesh import StarParams, Triangulation, generate_geometry, refine_nvb
from .operators import QuadratureOptions, build_capacity_system, build_primal_system
from .solver import (ConvergenceError, DENSE_LIMIT, condition_number, preconditioned_matrix,
                     solve_capacity, solve_primal, spectral_condition)

log = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi
CUBE_REFERENCE = 0.66067815409957


def capacity_value(x, measures) -> float:
    """``(1/4 pi) <Phi, 1>`` from coefficients and the measures of their supports.

    ``measures`` are dual cell areas for dual P0 densities and triangle areas
    for primal P0 densities.
    """
    x = np.asarray(x, dtype=float)
    measures = np.asarray(measures, dtype=float)
    if x.shape != measures.shape:
        raise ValueError(f"density of length {x.size} does not match {measures.size} supports")
    return float(x @ measures) / FOUR_PI


@dataclass
class AdaptiveRecord:
    level: int
    num_elements: int
    num_dofs: int
    capacity: float
    estimator: float
    iterations: int | None = None
    capacity_error: float | None = None
    cond: float | None = None
    cond_unpreconditioned: float | None = None
    cond_spectral: float | None = None


@dataclass
class RunConfig:
    """Settings of one adaptive run.

    ``geometry`` is ``"cube"``, ``"fichera"``, ``"star"`` or a
    :class:`Triangulation`. ``reference`` is a capacity, ``"self"`` for the
    last computed level, or None.
    """

    geometry: object = "cube"
    theta: float = 0.5
    estimator: str = "zz"
    precond: str = "operator"
    lam: float = 1e-3
    max_elements: int = 1000
    order: int = 4
    reference: object = None
    cond: bool = False
    star: StarParams | None = None
    zz_weight: str = "circumradius"
    refine_edges: str = "reference"
    storage: str = "galerkin"
    quadrature: QuadratureOptions | None = None
    keep_levels: bool = False

    def quadrature_options(self):
        if self.quadrature is not None:
            return self.quadrature
        return QuadratureOptions(order=self.order)

    def initial_mesh(self) -> Triangulation:
        if isinstance(self.geometry, Triangulation):
            return self.geometry
        return generate_geometry(self.geometry, self.star)

    def check(self, mesh: Triangulation):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if self.estimator not in ("zz", "residual"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.precond not in ("operator", "diagonal", "none"):
            raise ValueError(f"unknown preconditioner {self.precond!r}")
        if self.lam <= 0.0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.max_elements < len(mesh):
            raise ValueError(f"max_elements={self.max_elements} is below the {len(mesh)} initial elements")


@dataclass
class Level:
    """Mesh, density and indicators of one completed level."""

    mesh: Triangulation
    density: np.ndarray
    indicators: np.ndarray


@dataclass
class AdaptiveResult:
    records: list
    mesh: Triangulation
    density: np.ndarray
    indicators: np.ndarray
    converged: bool = False
    levels: list = field(default_factory=list)


class AdaptiveError(RuntimeError):
    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def _solve_zz(mesh, cfg: RunConfig):
    system = build_capacity_system(mesh, options=cfg.quadrature_options(), storage=cfg.storage)

    def eta_total(x):
        return float(zz_indicators(x, mesh, system.bary, weight=cfg.zz_weight).sum())

    x, report = solve_capacity(system, cfg.precond, cfg.lam, eta_total)
    eta = zz_indicators(x, mesh, system.bary, weight=cfg.zz_weight)
    cond = cond_v = cond_s = None
    if cfg.cond and system.size <= DENSE_LIMIT:
        cond_v = condition_number(system.Vdual, symmetric=True)
        if cfg.precond == "operator":
            cond = condition_number(preconditioned_matrix(system))
            cond_s = spectral_condition(system)
        elif cfg.precond == "diagonal":
            d = 1.0 / np.sqrt(np.diag(system.Vdual))
            cond = condition_number(d[:, None] * system.Vdual * d[None, :], symmetric=True)
        else:
            cond = cond_v
    rec = AdaptiveRecord(level=0, num_elements=len(mesh), num_dofs=system.size,
                         capacity=capacity_value(x, system.dual.areas), estimator=float(eta.sum()),
                         iterations=report.iterations, cond=cond, cond_unpreconditioned=cond_v,
                         cond_spectral=cond_s)
    return x, eta, rec


def _solve_residual(mesh, cfg: RunConfig):
    prim = build_primal_system(mesh, cfg.quadrature_options())
    x = solve_primal(prim.V, prim.f)
    mu = residual_indicators(x, mesh, prim.V_p1E, prim.f_p1)
    cond = cond_v = None
    if cfg.cond and len(mesh) <= DENSE_LIMIT:
        cond = cond_v = condition_number(prim.V, symmetric=True)
    rec = AdaptiveRecord(level=0, num_elements=len(mesh), num_dofs=len(mesh),
                         capacity=capacity_value(x, prim.f), estimator=float(mu.sum()),
                         cond=cond, cond_unpreconditioned=cond_v)
    return x, mu, rec


def run_adaptive(config: RunConfig, on_level=None) -> AdaptiveResult:
    """Solve, estimate, mark and refine until the element cap is passed.

    The level whose element count first exceeds ``max_elements`` is still
    solved and recorded. ``on_level(record, level)`` is called after every
    level with a :class:`Level`.
    """
    mesh = config.initial_mesh()
    config.check(mesh)
    solve = _solve_zz if config.estimator == "zz" else _solve_residual
    records, levels = [], []
    converged = False
    ell = 0
    while True:
        try:
            x, eta, rec = solve(mesh, config)
        except (ConvergenceError, np.linalg.LinAlgError) as exc:
            raise AdaptiveError(f"level {ell}: {exc}", records) from exc
        rec.level = ell
        if isinstance(config.reference, (int, float)):
            rec.capacity_error = abs(float(config.reference) - rec.capacity)
        records.append(rec)
        lvl = Level(mesh, x, eta)
        if config.keep_levels:
            levels.append(lvl)
        if on_level is not None:
            on_level(rec, lvl)
        log.info("level %d: N=%d cap=%.10f est=%.3e it=%s", ell, rec.num_elements, rec.capacity,
                 rec.estimator, rec.iterations)
        if len(mesh) > config.max_elements:
            break
        marked = dorfler_mark(eta, config.theta)
        if marked.size == 0:
            converged = True
            break
        mesh = refine_nvb(mesh, marked, edges=config.refine_edges)
        ell += 1
    if config.reference == "self":
        last = records[-1].capacity
        for r in records[:-1]:
            r.capacity_error = abs(last - r.capacity)
    return AdaptiveResult(records, mesh, x, eta, converged, levels)


@dataclass
class PythagorasCheck:
    """Capacity increment versus energy of the density update between two nested meshes.

    Both solutions use the fine-mesh matrix; the coarse one solves the
    restricted system ``J^T V J``, which is exactly the coarse Galerkin problem
    for that matrix.
    """

    cap_coarse: float
    cap_fine: float
    increment: float
    energy_gap: float

    @property
    def defect(self) -> float:
        """Relative mismatch ``|increment - energy_gap| / energy_gap``."""
        if self.energy_gap == 0.0:
            return 0.0 if self.increment == 0.0 else math.inf
        return abs(self.increment - self.energy_gap) / self.energy_gap


def _refined_solve(A, b, steps=5):
    """Cholesky solve of a long-double system with residuals in long double."""
    factor = sla.cho_factor(A.astype(float))
    x = sla.cho_solve(factor, b.astype(float)).astype(np.longdouble)
    for _ in range(steps):
        r = b - A @ x
        x += sla.cho_solve(factor, r.astype(float))
    return x


def nested_pythagoras(coarse: Triangulation, fine: Triangulation, options=None) -> PythagorasCheck:
    """Check ``Cap_fine - Cap_coarse = (1/4 pi) |||Phi_fine - Phi_coarse|||^2`` for primal P0.

    Increments on symmetric meshes can sit ten orders of magnitude below the
    capacity, so the restriction, both solves and the two sides are carried
    in long double with iterative refinement.
    """
    prim = build_primal_system(fine, options)
    if fine.parent is None or len(fine.parent) != len(fine):
        raise ValueError("fine mesh carries no parent map")
    parent = np.asarray(fine.parent)
    nc = len(coarse)
    V = prim.V.astype(np.longdouble)
    V = 0.5 * (V + V.T)
    f = prim.f.astype(np.longdouble)
    rows = np.zeros((nc, len(fine)), dtype=np.longdouble)
    np.add.at(rows, parent, V)
    Vc = np.zeros((nc, nc), dtype=np.longdouble)
    np.add.at(Vc.T, parent, rows.T)
    fc = np.zeros(nc, dtype=np.longdouble)
    np.add.at(fc, parent, f)
    x_f = _refined_solve(V, f)
    x_c = _refined_solve(Vc, fc)
    d = x_f - x_c[parent]
    return PythagorasCheck(cap_coarse=float(x_c @ fc) / FOUR_PI, cap_fine=float(x_f @ f) / FOUR_PI,
                           increment=float(f @ d) / FOUR_PI, energy_gap=float(d @ (V @ d)) / FOUR_PI)


def rate_fit(records, field_name: str = "estimator") -> float:
    """Least-squares slope of ``log(field)`` against ``log(num_elements)``.

    Uses the records within the last decade of element counts, or the last
    five records if that decade holds fewer.
    """
    recs = [r for r in records if getattr(r, field_name) is not None]
    if len(recs) < 3:
        raise ValueError(f"need at least 3 records with {field_name!r}, got {len(recs)}")
    n = np.array([r.num_elements for r in recs], dtype=float)
    y = np.array([getattr(r, field_name) for r in recs], dtype=float)
    sel = n >= n[-1] / 10.0
    if sel.sum() < 5:
        sel = np.zeros(n.size, dtype=bool)
        sel[-5:] = True
    slope, _ = np.polyfit(np.log(n[sel]), np.log(y[sel]), 1)
    return float(slope)


def with_changes(config: RunConfig, **kw) -> RunConfig:
    return replace(config, **kw)
