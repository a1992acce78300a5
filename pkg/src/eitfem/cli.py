"""Command-line front end: ``eitfem --config run.cfg [--output DIR] [--verbose]``.

The configuration is a flat ``key=value`` file, one entry per line, ``#``
starting a comment. Every output is computed in memory first and then
committed with temporary files and renames, so an error leaves no partial
artifacts behind.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import convergence_lab as lab
from . import io
from .cem_forward import NodalField, adjacent_dipoles, forward_map
from .errors import ConfigError, DataIOError, EITError, InvalidArgumentError
from .mesh import (
    TWO_PI,
    ElectrodeConfig,
    TriMesh,
    boundary_parameter,
    generate_disk_mesh,
    generate_square_mesh,
    refine,
    tag_electrodes,
)
from .tikhonov import TikhonovConfig, reconstruct

log = logging.getLogger("eitfem")

COMMANDS = ("mesh", "forward", "invert", "study-forward", "study-minimizer", "study-geometry",
            "study-continuity")


@dataclass(frozen=True)
class RunConfig:
    command: str = "forward"
    domain: tuple = ("disk", 32)  # ("polygon", n) for the unit square, ("disk", n_boundary)
    mesh_file: str | None = None
    refinements: int = 0  # uniform refinements for mesh, forward and invert
    levels: int = 4  # nested levels in refinement studies
    electrodes: int = 8
    coverage: float = 0.5
    arcs: tuple | None = None  # explicit ((start, end), ...) in boundary parameter units
    impedance: tuple = (0.1,)
    patterns: tuple = ("adjacent", None)  # ("adjacent", P or None) or ("file", path)
    truth: tuple = ("constant", 1.0)
    sigma_file: str | None = None
    data_file: str | None = None
    data_refinements: int = 1
    noise: float = 0.0
    seed: int = 0
    alpha: float = 1e-3
    penalty: str = "h1"
    eps_tv: float | None = None
    lambda_bound: float = 0.1
    max_iters: int = 200
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    step_init: float | None = None
    tol_stationarity: float = 1e-8
    metric: str = "l2"
    step_rule: str = "bb"
    n_list: tuple = (16, 32, 64, 128)
    amplitudes: tuple = (1e-1, 1e-2, 1e-3, 1e-4)
    perturbation: tuple = (0.0, 0.0, 0.5)  # Gaussian bump: center x, center y, width
    timings: bool = False
    output: str | None = None

    def tikhonov(self) -> TikhonovConfig:
        return TikhonovConfig(
            alpha=self.alpha, penalty=self.penalty, eps_tv=self.eps_tv,
            lambda_bound=self.lambda_bound, max_iters=self.max_iters, armijo_c=self.armijo_c,
            backtrack=self.backtrack, step_init=self.step_init,
            tol_stationarity=self.tol_stationarity, metric=self.metric, step_rule=self.step_rule)

    def ground_truth(self) -> lab.GroundTruth:
        kind, *args = self.truth
        if kind == "constant":
            return lab.GroundTruth("constant", args[0], lam=self.lambda_bound)
        cx, cy, size, amp, *bg = args
        bg = bg[0] if bg else 1.0
        if kind == "inclusion":
            return lab.GroundTruth(kind, bg, amp, (cx, cy), radius=size, lam=self.lambda_bound)
        return lab.GroundTruth(kind, bg, amp, (cx, cy), width=size, lam=self.lambda_bound)


# ---------------------------------------------------------------- value codecs

def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"{s!r} is not finite")
    return v


def _int(s: str) -> int:
    return int(s)


def _positive(conv):
    def parse(s):
        v = conv(s)
        if not v > 0:
            raise ValueError("must be positive")
        return v
    return parse


def _nonneg(conv):
    def parse(s):
        v = conv(s)
        if v < 0:
            raise ValueError("must be nonnegative")
        return v
    return parse


def _unit_open(s):
    v = _float(s)
    if not 0 < v < 1:
        raise ValueError("must lie in (0, 1)")
    return v


def _choice(*options):
    def parse(s):
        if s not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return s
    return parse


def _optional(conv):
    return lambda s: None if s == "none" else conv(s)


def _bool(s):
    if s in ("true", "yes", "1"):
        return True
    if s in ("false", "no", "0"):
        return False
    raise ValueError("must be true or false")


def _domain(s):
    kind, n = s.split()
    n = int(n)
    if kind == "polygon" and n >= 1 or kind == "disk" and n >= 8:
        return kind, n
    raise ValueError("expected 'polygon n' with n >= 1 or 'disk n' with n >= 8")


def _tuple(conv, minimum=1):
    def parse(s):
        out = tuple(conv(v) for v in s.replace(",", " ").split())
        if len(out) < minimum:
            raise ValueError(f"needs at least {minimum} entries")
        return out
    return parse


def _arcs(s):
    arcs = []
    for part in s.split(";"):
        a, b = (_float(v) for v in part.split())
        if not b > a:
            raise ValueError("each arc needs end > start")
        arcs.append((a, b))
    if len(arcs) < 2:
        raise ValueError("at least two electrodes are needed")
    return tuple(arcs)


def _patterns(s):
    head, *rest = s.split(None, 1)
    if head == "adjacent":
        return ("adjacent", int(rest[0]) if rest else None)
    if head == "file" and rest:
        return ("file", rest[0].strip())
    raise ValueError("expected 'adjacent [P]' or 'file PATH'")


def _truth(s):
    kind, *args = s.split()
    vals = tuple(_float(v) for v in args)
    if kind == "constant" and len(vals) <= 1:
        return ("constant", vals[0] if vals else 1.0)
    if kind in ("inclusion", "smooth-bump") and len(vals) in (4, 5):
        if not vals[2] > 0:
            raise ValueError("radius or width must be positive")
        return (kind,) + vals
    raise ValueError("expected 'constant [bg]', 'inclusion cx cy r amp [bg]' "
                     "or 'smooth-bump cx cy width amp [bg]'")


def _perturbation(s):
    vals = tuple(_float(v) for v in s.split())
    if len(vals) != 3 or not vals[2] > 0:
        raise ValueError("expected 'cx cy width' with width > 0")
    return vals


def _show(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return io.fmt(v)
    return str(v)


def _show_seq(v) -> str:
    return " ".join(_show(x) for x in v)


KEYS = {
    "command": (_choice(*COMMANDS), _show),
    "domain": (_domain, _show_seq),
    "mesh_file": (_optional(str), _show),
    "refinements": (_nonneg(_int), _show),
    "levels": (_positive(_int), _show),
    "electrodes": (_int, _show),
    "coverage": (_unit_open, _show),
    "arcs": (_optional(_arcs), lambda v: "none" if v is None else "; ".join(_show_seq(a) for a in v)),
    "impedance": (_tuple(_positive(_float)), _show_seq),
    "patterns": (_patterns, lambda v: "adjacent" + ("" if v[1] is None else f" {v[1]}")
                 if v[0] == "adjacent" else f"file {v[1]}"),
    "truth": (_truth, _show_seq),
    "sigma_file": (_optional(str), _show),
    "data_file": (_optional(str), _show),
    "data_refinements": (_positive(_int), _show),
    "noise": (_nonneg(_float), _show),
    "seed": (_nonneg(_int), _show),
    "alpha": (_positive(_float), _show),
    "penalty": (_choice("h1", "tv"), _show),
    "eps_tv": (_optional(_positive(_float)), _show),
    "lambda": (_unit_open, _show),
    "max_iters": (_nonneg(_int), _show),
    "armijo_c": (_unit_open, _show),
    "backtrack": (_unit_open, _show),
    "step_init": (_optional(_positive(_float)), _show),
    "tol_stationarity": (_positive(_float), _show),
    "metric": (_choice("h1", "l2"), _show),
    "step_rule": (_choice("bb", "carry"), _show),
    "n_list": (_tuple(_int, 2), _show_seq),
    "amplitudes": (_tuple(_nonneg(_float)), _show_seq),
    "perturbation": (_perturbation, _show_seq),
    "timings": (_bool, _show),
    "output": (_optional(str), _show),
}
FIELD_OF = {"lambda": "lambda_bound"}


def parse_config(text: str) -> RunConfig:
    """Parse and validate ``key=value`` lines; errors name the offending line."""
    values, where = {}, {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}", number)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", number)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", number)
        try:
            values[key] = KEYS[key][0](value)
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}", number) from None
        where[key] = number
    if "command" not in values:
        raise ConfigError("missing required key 'command'")
    cfg = RunConfig(**{FIELD_OF.get(k, k): v for k, v in values.items()})
    _cross_check(cfg, where)
    return cfg


def _cross_check(cfg: RunConfig, where: dict) -> None:
    def fail(msg, *keys):
        lines = [where[k] for k in keys if k in where]
        raise ConfigError(msg, max(lines) if lines else None)

    n_el = len(cfg.arcs) if cfg.arcs is not None else cfg.electrodes
    if n_el < 2:
        fail("at least two electrodes are needed", "electrodes", "arcs")
    if len(cfg.impedance) not in (1, n_el):
        fail(f"impedance needs 1 or {n_el} values", "impedance", "electrodes", "arcs")
    P = cfg.patterns[1]
    if cfg.patterns[0] == "adjacent" and P is not None and not 1 <= P <= n_el:
        fail(f"adjacent patterns need 1 <= P <= {n_el}", "patterns")
    if cfg.command in ("study-forward",) and cfg.levels < 3:
        fail("a forward study needs at least three levels", "levels")
    if cfg.command == "study-minimizer" and cfg.levels < 2:
        fail("a minimizer study needs at least two levels", "levels")
    if cfg.command == "study-geometry":
        ns = cfg.n_list
        if any(n < 8 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
            fail("n_list must be increasing with entries >= 8", "n_list")
    try:
        cfg.tikhonov()
    except InvalidArgumentError as exc:
        fail(str(exc), "alpha", "penalty", "eps_tv", "lambda", "max_iters", "step_rule")
    if cfg.command != "study-geometry":
        try:
            cfg.ground_truth()
        except InvalidArgumentError as exc:
            fail(str(exc), "truth", "lambda")


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text for ``cfg``; ``parse_config`` of the result equals ``cfg``."""
    names = {v: k for k, v in FIELD_OF.items()}
    out = []
    for f in fields(cfg):
        key = names.get(f.name, f.name)
        out.append(f"{key}={KEYS[key][1](getattr(cfg, f.name))}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- workflows

def _base_mesh(cfg: RunConfig) -> TriMesh:
    if cfg.mesh_file is not None:
        return io.read_mesh(cfg.mesh_file)
    kind, n = cfg.domain
    return generate_square_mesh(n) if kind == "polygon" else generate_disk_mesh(n)


def _electrodes(cfg: RunConfig, mesh: TriMesh) -> ElectrodeConfig:
    if cfg.arcs is not None:
        arcs = cfg.arcs
    else:
        period = TWO_PI if mesh.domain.is_disk else boundary_parameter(mesh)[1]
        pitch = period / cfg.electrodes
        arcs = tuple((k * pitch, (k + cfg.coverage) * pitch) for k in range(cfg.electrodes))
    z = cfg.impedance * len(arcs) if len(cfg.impedance) == 1 else cfg.impedance
    return ElectrodeConfig(arcs, z)


def _patterns_of(cfg: RunConfig, L: int) -> np.ndarray:
    kind, arg = cfg.patterns
    if kind == "adjacent":
        return adjacent_dipoles(L, arg)
    P = io.parse_patterns(io.read_text(arg), L)
    if np.any(np.abs(P.sum(axis=1)) > 1e-12 * np.maximum(np.abs(P).sum(axis=1), 1.0)):
        raise DataIOError(f"patterns in {arg} must sum to zero")
    return P


def _nodal_field(cfg: RunConfig, mesh: TriMesh, path: str | None) -> NodalField:
    if path is None:
        return cfg.ground_truth().sample(mesh)
    return NodalField.conductivity(io.parse_field(io.read_text(path), mesh.n_nodes), cfg.lambda_bound)


def _study_csv(report: lab.StudyReport, cfg: RunConfig) -> dict:
    return {f"study_{report.kind}_seed{cfg.seed}.csv": report.to_csv()}


def _run_mesh(cfg):
    base = _base_mesh(cfg)
    mesh = refine(base, cfg.refinements)
    mesh = tag_electrodes(mesh, _electrodes(cfg, mesh))
    return {"mesh.eitmesh": io.format_mesh(mesh)}


def _run_forward(cfg):
    mesh = refine(_base_mesh(cfg), cfg.refinements)
    el = _electrodes(cfg, mesh)
    mesh = tag_electrodes(mesh, el)
    P = _patterns_of(cfg, el.n_electrodes)
    sigma = _nodal_field(cfg, mesh, cfg.sigma_file)
    U = forward_map(mesh, sigma, el, P)
    return {"mesh.eitmesh": io.format_mesh(mesh), "voltages.csv": io.format_voltages(U)}


def _run_invert(cfg):
    mesh = refine(_base_mesh(cfg), cfg.refinements)
    el = _electrodes(cfg, mesh)
    mesh = tag_electrodes(mesh, el)
    P = _patterns_of(cfg, el.n_electrodes)
    out = {"mesh.eitmesh": io.format_mesh(mesh)}
    if cfg.data_file is not None:
        data = io.parse_voltages(io.read_text(cfg.data_file))
        if data.shape != (el.n_electrodes, len(P)):
            raise DataIOError(f"data has shape {data.shape}, expected {(el.n_electrodes, len(P))}")
    else:
        fine = refine(mesh, cfg.data_refinements)
        ds = lab.generate_data(cfg.ground_truth(), fine, el, P, cfg.noise, cfg.seed)
        lab.check_inverse_crime(ds, [mesh])
        data = ds.voltages
        out["data.csv"] = io.format_voltages(data)
    result = reconstruct(mesh, el, P, data, cfg.tikhonov())
    log.info("reconstruction stopped after %d iterations (%s)", result.iterations, result.reason)
    out["sigma_star.txt"] = io.format_field(result.sigma_star.values)
    out["run_summary.csv"] = io.format_run_summary(result)
    return out


def _run_study_forward(cfg):
    base = _base_mesh(cfg)
    el = _electrodes(cfg, base)
    P = _patterns_of(cfg, el.n_electrodes)
    report = lab.forward_convergence_study(base, cfg.ground_truth(), el, P, cfg.levels, cfg.timings)
    return _study_csv(report, cfg)


def _run_study_minimizer(cfg):
    base = _base_mesh(cfg)
    el = _electrodes(cfg, base)
    P = _patterns_of(cfg, el.n_electrodes)
    fine = tag_electrodes(refine(base, cfg.levels - 1 + cfg.data_refinements), el)
    data = lab.generate_data(cfg.ground_truth(), fine, el, P, cfg.noise, cfg.seed)
    report = lab.minimizer_convergence_study(base, data, el, cfg.tikhonov(), cfg.levels, cfg.timings)
    return _study_csv(report, cfg)


def _run_study_geometry(cfg):
    return _study_csv(lab.geometry_rate_study(cfg.n_list, cfg.timings), cfg)


def _run_study_continuity(cfg):
    mesh = refine(_base_mesh(cfg), cfg.refinements)
    el = _electrodes(cfg, mesh)
    mesh = tag_electrodes(mesh, el)
    P = _patterns_of(cfg, el.n_electrodes)
    sigma = _nodal_field(cfg, mesh, cfg.sigma_file)
    cx, cy, w = cfg.perturbation
    rho = np.exp(-np.sum((mesh.nodes - (cx, cy)) ** 2, axis=1) / w**2)
    report = lab.continuity_probe(mesh, sigma, rho, cfg.amplitudes, el, P, cfg.lambda_bound,
                                  cfg.timings)
    return _study_csv(report, cfg)


WORKFLOWS = {
    "mesh": _run_mesh,
    "forward": _run_forward,
    "invert": _run_invert,
    "study-forward": _run_study_forward,
    "study-minimizer": _run_study_minimizer,
    "study-geometry": _run_study_geometry,
    "study-continuity": _run_study_continuity,
}


def commit(outputs: dict, directory) -> list[Path]:
    """Write all ``outputs`` under ``directory`` or none of them."""
    directory = Path(directory)
    staged, placed = [], []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for name, text in outputs.items():
            tmp = directory / f".{name}.partial"
            tmp.write_text(text, encoding="utf-8", newline="\n")
            staged.append((tmp, directory / name))
        for tmp, final in staged:
            os.replace(tmp, final)
            placed.append(final)
    except OSError as exc:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        for final in placed:
            final.unlink(missing_ok=True)
        raise DataIOError(f"cannot write outputs to {directory}: {exc}") from exc
    return placed


def run(cfg: RunConfig, output=None) -> list[Path]:
    """Run the configured workflow and write its artifacts; returns the written paths."""
    outputs = WORKFLOWS[cfg.command](cfg)
    directory = output or cfg.output or "out"
    return commit(outputs, directory)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="eitfem", description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True, help="run configuration (key=value lines)")
    parser.add_argument("--output", default=None, help="output directory (default ./out)")
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(io.read_text(args.config))
        if args.output is not None:
            cfg = replace(cfg, output=args.output)
        written = run(cfg)
    except EITError as exc:
        print(f"eitfem: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    for path in written:
        log.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
