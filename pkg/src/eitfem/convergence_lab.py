"""Synthetic data and h-refinement studies: forward convergence, continuity of the
forward map, convergence of discrete minimizers, and polygon-geometry rates."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .cem_forward import NodalField, forward_map, values_of
from .errors import InvalidArgumentError, InverseCrimeError
from .mesh import (
    ElectrodeConfig,
    TriMesh,
    generate_disk_mesh,
    refine_uniform,
    signed_areas,
    tag_electrodes,
)
from .tikhonov import TikhonovConfig, penalty_value, reconstruct

GROUND_TRUTH_KINDS = ("constant", "inclusion", "smooth-bump")


@dataclass(frozen=True)
class GroundTruth:
    """Conductivity defined on the whole plane.

    ``inclusion`` adds ``amplitude`` inside the disk ``|x - center| < radius``;
    ``smooth-bump`` adds ``amplitude * exp(-|x - center|^2 / width^2)``.
    """

    kind: str = "constant"
    background: float = 1.0
    amplitude: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.3
    width: float = 0.25
    lam: float = 0.1

    def __post_init__(self):
        if self.kind not in GROUND_TRUTH_KINDS:
            raise InvalidArgumentError(f"unknown ground-truth kind {self.kind!r}")
        if not 0 < self.lam < 1:
            raise InvalidArgumentError("lambda must lie in (0, 1)")
        if self.radius <= 0 or self.width <= 0:
            raise InvalidArgumentError("radius and width must be positive")
        lo, hi = self.lam, 1.0 / self.lam
        extremes = [self.background]
        if self.kind != "constant":
            extremes.append(self.background + self.amplitude)
        if not all(lo < v < hi for v in extremes):
            raise InvalidArgumentError(f"ground truth leaves the open interval ({lo:g}, {hi:g})")

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=1)
        out = np.full(len(x), float(self.background))
        if self.kind == "inclusion":
            out[r2 < self.radius**2] += self.amplitude
        elif self.kind == "smooth-bump":
            out += self.amplitude * np.exp(-r2 / self.width**2)
        return out

    def sample(self, mesh: TriMesh) -> NodalField:
        return NodalField.conductivity(self(mesh.nodes), self.lam)


@dataclass(frozen=True, eq=False)
class DataSet:
    voltages: np.ndarray  # (L, P), noisy
    noise_level: float
    seed: int
    level: int
    h: float
    patterns: np.ndarray  # (P, L)
    exact: np.ndarray  # (L, P), noise free


@dataclass
class StudyReport:
    """Per-level errors with rates between consecutive rows.

    ``abscissa`` is the quantity the rates are taken against; it is the mesh
    size unless a study says otherwise. ``extra`` holds additional columns.
    """

    kind: str
    levels: list[tuple[int, float, int]]
    errors: list[float]
    runtimes: list[float | None]
    abscissa: list[float] | None = None
    extra: dict[str, list] = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        n = len(self.levels)
        if len(self.errors) != n or len(self.runtimes) != n:
            raise InvalidArgumentError("levels, errors and runtimes must have equal length")
        if self.abscissa is None:
            self.abscissa = [h for _, h, _ in self.levels]
        if len(self.abscissa) != n or any(len(v) != n for v in self.extra.values()):
            raise InvalidArgumentError("every column needs one entry per level")

    @property
    def rates(self) -> list[float]:
        """Rates between consecutive rows; ``nan`` where an error vanishes."""
        out = []
        for k in range(len(self.errors) - 1):
            e0, e1 = self.errors[k], self.errors[k + 1]
            x0, x1 = self.abscissa[k], self.abscissa[k + 1]
            if e0 > 0 and e1 > 0 and x0 > 0 and x1 > 0 and x0 != x1:
                out.append(math.log(e0 / e1) / math.log(x0 / x1))
            else:
                out.append(float("nan"))
        return out

    def fitted_rate(self, column: str | None = None, rows: slice = slice(None)) -> float:
        values = self.errors if column is None else self.extra[column]
        return estimate_rate(values[rows], self.abscissa[rows])[1]

    def file_name(self) -> str:
        return f"study_{self.kind}" + ("" if self.seed is None else f"_seed{self.seed}") + ".csv"

    def to_csv(self) -> str:
        names = list(self.extra)
        lines = [",".join(["level", "h", "n_nodes", "error", "rate", "runtime_s"] + names)]
        rates = [None] + self.rates
        for k, (level, h, n_nodes) in enumerate(self.levels):
            row = [str(level), _fmt(h), str(n_nodes), _fmt(self.errors[k]), _fmt(rates[k]),
                   _fmt(self.runtimes[k])]
            row += [_fmt(self.extra[c][k]) for c in names]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else format(x, ".17g")


def _clock(timings: bool):
    start = time.perf_counter()
    return lambda: (time.perf_counter() - start) if timings else None


# ---------------------------------------------------------------- rates

def estimate_rate(errors, hs) -> tuple[np.ndarray, float]:
    """Rates between consecutive samples and the least-squares slope of ``log e`` against ``log h``."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(hs, dtype=float)
    if e.ndim != 1 or e.shape != h.shape or len(e) < 2:
        raise InvalidArgumentError("need at least two errors with matching mesh sizes")
    if np.any(~(e > 0)):
        raise InvalidArgumentError("errors must be positive")
    if np.any(~(h > 0)) or np.any(np.diff(h) >= 0):
        raise InvalidArgumentError("mesh sizes must be positive and strictly decreasing")
    le, lh = np.log(e), np.log(h)
    per_gap = (le[:-1] - le[1:]) / (lh[:-1] - lh[1:])
    slope = float(np.polyfit(lh, le, 1)[0])
    return per_gap, slope


# ---------------------------------------------------------------- data

def generate_data(truth: GroundTruth, mesh: TriMesh, electrodes: ElectrodeConfig, patterns,
                  noise_level: float, seed: int) -> DataSet:
    """Voltages for ``truth`` sampled on ``mesh`` plus Frobenius-relative Gaussian noise.

    The noise is ``delta |U|_F G / |G|_F`` for standard normal ``G`` drawn from
    ``seed``; every column of the result is then shifted back to zero mean.
    """
    if not noise_level >= 0:
        raise InvalidArgumentError("noise level must be nonnegative")
    patterns = np.atleast_2d(np.asarray(patterns, dtype=float))
    U = forward_map(mesh, truth.sample(mesh), electrodes, patterns)
    if noise_level == 0:
        noisy = U.copy()
    else:
        G = np.random.default_rng(seed).standard_normal(U.shape)
        noisy = U + noise_level * np.linalg.norm(U) * G / np.linalg.norm(G)
        noisy -= noisy.mean(axis=0, keepdims=True)
    for a in (U, noisy, patterns):
        a.setflags(write=False)
    return DataSet(noisy, float(noise_level), int(seed), mesh.level, mesh.h, patterns, U)


def check_inverse_crime(data: DataSet, meshes) -> None:
    finest = max(m.level for m in meshes)
    if data.level <= finest:
        raise InverseCrimeError(
            f"data generated on level {data.level} cannot feed inversion on level {finest}")


def nested_levels(base: TriMesh, electrodes: ElectrodeConfig, n_levels: int) -> list[TriMesh]:
    """``n_levels`` uniformly refined meshes starting from ``base``, electrodes tagged once."""
    if n_levels < 1:
        raise InvalidArgumentError("need at least one level")
    meshes = [tag_electrodes(base, electrodes)]
    for _ in range(n_levels - 1):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


def _level_row(mesh: TriMesh) -> tuple[int, float, int]:
    return mesh.level, mesh.h, mesh.n_nodes


# ---------------------------------------------------------------- studies

def forward_convergence_study(base: TriMesh, truth: GroundTruth, electrodes: ElectrodeConfig,
                              patterns, n_levels: int = 4, timings: bool = False) -> StudyReport:
    """Voltage errors ``|U_k - U_K|_F`` on nested levels against the finest level ``K``.

    The conductivity is sampled at the nodes of every level's own mesh.
    """
    if n_levels < 3:
        raise InvalidArgumentError("a forward study needs at least three levels")
    meshes = nested_levels(base, electrodes, n_levels)
    voltages, runtimes = [], []
    for m in meshes:
        clock = _clock(timings)
        voltages.append(forward_map(m, truth.sample(m), electrodes, patterns))
        runtimes.append(clock())
    ref = voltages[-1]
    errors = [float(np.linalg.norm(U - ref)) for U in voltages]
    return StudyReport("forward", [_level_row(m) for m in meshes], errors, runtimes)


def continuity_probe(mesh: TriMesh, sigma, perturbation, amplitudes, electrodes: ElectrodeConfig,
                     patterns, lam: float = 0.1, timings: bool = False) -> StudyReport:
    """``|U(sigma + t rho) - U(sigma)|_F`` along the amplitude ladder ``t``.

    Rates in the report are log-log slopes against ``t``.
    """
    s = values_of(sigma)
    rho = values_of(perturbation)
    t = np.asarray(amplitudes, dtype=float)
    if s.shape != (mesh.n_nodes,) or rho.shape != s.shape:
        raise InvalidArgumentError("fields must have one value per mesh node")
    if np.any(t < 0):
        raise InvalidArgumentError("amplitudes must be nonnegative")
    lo, hi = lam, 1.0 / lam
    for tk in np.concatenate([[0.0], t]):
        f = s + tk * rho
        if np.any(f < lo) or np.any(f > hi):
            raise InvalidArgumentError(f"perturbed field with t={tk:g} is not admissible")
    if not mesh.n_electrodes:
        mesh = tag_electrodes(mesh, electrodes)
    base = forward_map(mesh, NodalField.conductivity(s, lam), electrodes, patterns)
    errors, runtimes = [], []
    for tk in t:
        clock = _clock(timings)
        U = base if tk == 0 else forward_map(mesh, NodalField.conductivity(s + tk * rho, lam),
                                              electrodes, patterns)
        errors.append(float(np.linalg.norm(U - base)))
        runtimes.append(clock())
    rows = [(k, mesh.h, mesh.n_nodes) for k in range(len(t))]
    return StudyReport("continuity", rows, errors, runtimes, abscissa=[float(x) for x in t],
                       extra={"amplitude": [float(x) for x in t]})


def _edge_midpoint_rule(mesh: TriMesh):
    """Points and weights of the 3-point edge-midpoint rule (exact for quadratics)."""
    p = mesh.nodes[mesh.triangles]
    mids = 0.5 * (p + np.roll(p, -1, axis=1))
    w = np.repeat(signed_areas(mesh) / 3.0, 3)
    return mids.reshape(-1, 2), w


def cross_mesh_l1(coarse: TriMesh, f_coarse, fine: TriMesh, f_fine) -> float:
    """``|jf_coarse - f_fine|_{L1}`` by the 3-point edge-midpoint rule on ``fine``.

    ``f_coarse`` is evaluated through its P1 interpolant, extended beyond its
    polygon on curved domains.
    """
    pts, w = _edge_midpoint_rule(fine)
    a = geometry.extend_field(coarse, f_coarse, pts)
    b = geometry.extend_field(fine, f_fine, pts) if coarse is not fine else a
    return float(np.sum(w * np.abs(a - b)))


def penalty_gap(mesh: TriMesh, sigma, config: TikhonovConfig) -> float:
    """``Psi(j sigma) - Psi_h(sigma)``: the penalty carried by the crescent of a disk mesh."""
    if not mesh.domain.is_disk:
        return 0.0
    if config.penalty == "h1":
        value, grad = geometry.crescent_integrals(mesh, sigma, 2.0)
        return 0.5 * (value + grad)
    # the extension is constant along chord normals, so only the tangential slope contributes
    return geometry.crescent_integrals(mesh, sigma, 1.0)[1]


def minimizer_convergence_study(base: TriMesh, data: DataSet, electrodes: ElectrodeConfig,
                                config: TikhonovConfig, n_levels: int = 3,
                                timings: bool = False) -> StudyReport:
    """Reconstruct on nested levels from common data and compare with the finest level.

    Errors are ``|j sigma*_k - sigma*_K|_{L1}``. Extra columns: the final
    objective ``J``, the penalty ``Psi_h``, the crescent penalty gap and the
    optimizer's iteration count and stop reason code (1 stationary, 0 otherwise).
    """
    meshes = nested_levels(base, electrodes, n_levels)
    check_inverse_crime(data, meshes)
    results, runtimes = [], []
    for m in meshes:
        clock = _clock(timings)
        results.append(reconstruct(m, electrodes, data.patterns, data.voltages, config))
        runtimes.append(clock())
    fine, s_fine = meshes[-1], results[-1].sigma_star
    errors = [cross_mesh_l1(m, r.sigma_star, fine, s_fine) for m, r in zip(meshes, results)]
    extra = {
        "J": [r.objective_history[-1] for r in results],
        "penalty": [penalty_value(m, r.sigma_star, config) for m, r in zip(meshes, results)],
        "penalty_gap": [penalty_gap(m, r.sigma_star, config) for m, r in zip(meshes, results)],
        "iterations": [r.iterations for r in results],
        "stationary": [int(r.converged) for r in results],
    }
    report = StudyReport("minimizer", [_level_row(m) for m in meshes], errors, runtimes,
                         extra=extra, seed=data.seed)
    report.results = results
    return report


def geometry_rate_study(n_list, timings: bool = False) -> StudyReport:
    """Polygon-versus-circle error functionals for inscribed regular ``n``-gons.

    The error column is the Hausdorff distance; rates are taken against the
    side length ``2 sin(pi/n)``.
    """
    ns = [int(n) for n in n_list]
    if any(n < 8 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
        raise InvalidArgumentError("n_list must be increasing with entries >= 8")
    rows, errors, runtimes = [], [], []
    extra = {"normal_dev": [], "perimeter_gap": [], "eps_h": []}
    for k, n in enumerate(ns):
        clock = _clock(timings)
        rep = geometry.geometry_report(generate_disk_mesh(n))
        runtimes.append(clock())
        rows.append((k, 2.0 * math.sin(math.pi / n), n))
        errors.append(rep.hausdorff)
        extra["normal_dev"].append(rep.normal_dev)
        extra["perimeter_gap"].append(rep.perimeter_gap)
        extra["eps_h"].append(rep.eps_h)
    return StudyReport("geometry", rows, errors, runtimes, extra=extra)
