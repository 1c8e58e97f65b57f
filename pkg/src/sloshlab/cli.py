"""Command-line front end.

    sloshlab solve     --domain rect:pi,1,64,64 --kind sn -k 6
    sloshlab derivative --domain disk:16,64 --kind steklov --cluster 2:2 --field '{"kind": "dilation"}'
    sloshlab split     --domain disk:32,128 --kind steklov --eps 0.05 --seed 7
    sloshlab simplify  --domain disk:32,128 --kind steklov -k 7 --eps 0.05 --side S --seed 7
    sloshlab validate  --domain halfdisk:8,32 --kind sn

Each run writes into ``<out>/<command>-<config hash>/``; every file carries
the config hash and the seed. Exit codes: 0 ok, 2 configuration error,
3 numerical failure, 4 no splitting candidate found.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (AmplitudeTooLarge, InvalidArgument, InvalidCase, InvalidSupport,
                     NoCandidateFound, SloshError, UndefinedForSimple, UnsupportedOperation)
from .geometry import (MeshDomain, ProblemKind, build_disk, build_half_disk, build_rectangle,
                       read_mesh, refine_n, validate_mesh)
from .hadamard import cluster_matrix, fd_slopes
from .perturb import field_from_dict, translation, transplant
from .plotting import branch_fan_svg
from .spectral import detect_clusters, make_cluster, minmax_check, solve, spectrum_csv
from .splitting import DEFAULT_T_GRID, find_splitting, simplify_spectrum, verify_split

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NO_CANDIDATE = 0, 2, 3, 4
_CONFIG_ERRORS = (InvalidArgument, InvalidSupport, InvalidCase, UnsupportedOperation,
                  UndefinedForSimple, AmplitudeTooLarge)


class ConfigError(Exception):
    pass


class NumericalFailure(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    domain: str
    kind: str = "sn"
    count: int = 6
    refine: int = 0
    tol_cluster: float = 1e-2
    tol_simple: float = 1e-4
    cluster: str | None = None
    field: str | None = None
    side: str = "S"
    eps: float = 0.05
    n_candidates: int = 16
    t_grid: tuple | None = None
    max_iter: int = 12
    seed: int = 0
    method: str = "auto"
    out: str = "runs"
    vectors: bool = False

    def validate(self):
        if self.tol_cluster <= 0 or self.tol_simple <= 0 or self.eps <= 0:
            raise ConfigError("tolerances and the budget must be positive")
        if self.count < 1 or self.n_candidates < 1 or self.max_iter < 1:
            raise ConfigError("counts must be positive")
        if self.refine < 0:
            raise ConfigError("--refine must be non-negative")
        if self.t_grid is not None and (not self.t_grid or min(self.t_grid) <= 0):
            raise ConfigError("--t-grid values must be positive")
        try:
            ProblemKind.parse(self.kind)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def hash(self) -> str:
        d = asdict(self)
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


# ------------------------------------------------------------------ parsing


def _number(tok: str) -> float:
    tok = tok.strip().lower()
    if tok.endswith("pi"):
        head = tok[:-2].rstrip("*")
        return (float(head) if head else 1.0) * math.pi
    return float(tok)


def parse_domain(spec: str, refine: int = 0) -> MeshDomain:
    """``rect:a,h,nx,ny``, ``disk:rings,sectors``, ``halfdisk:rings,sectors``
    or a path to a mesh file."""
    name, _, args = spec.partition(":")
    try:
        if name in ("rect", "rectangle"):
            a, h, nx, ny = args.split(",")
            mesh = build_rectangle(_number(a), _number(h), int(nx), int(ny))
        elif name == "disk":
            n, s = args.split(",")
            mesh = build_disk(int(n), int(s))
        elif name in ("halfdisk", "half-disk"):
            n, s = args.split(",")
            mesh = build_half_disk(int(n), int(s))
        elif os.path.exists(spec):
            mesh = read_mesh(spec)
        else:
            raise ConfigError(f"unknown domain {spec!r}")
    except ValueError as exc:
        raise ConfigError(f"bad domain {spec!r}: {exc}") from None
    return refine_n(mesh, refine) if refine else mesh


def parse_field(text: str | None, mesh: MeshDomain):
    if text is None:
        return None
    if text.startswith("@"):
        text = Path(text[1:]).read_text()
    try:
        return field_from_dict(json.loads(text), mesh)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad field description: {exc}") from None


def _parse_cluster(text, spectrum, tol):
    if text is None:
        found = detect_clusters(spectrum, tol)
        if not found:
            raise ConfigError("no cluster detected; pass --cluster START:M")
        return found[0]
    start, _, m = text.partition(":")
    return make_cluster(spectrum, int(start) - 1, int(m or 1))


# ------------------------------------------------------------------ output


def _check_finite(obj, where=""):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise NumericalFailure(f"non-finite value in {where or 'output'}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            _check_finite(v, where)
    elif isinstance(obj, np.ndarray):
        if not np.all(np.isfinite(obj)):
            raise NumericalFailure(f"non-finite value in {where or 'output'}")


class Emitter:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.hash = cfg.hash()
        self.dir = Path(cfg.out) / f"{cfg.command}-{self.hash}"
        self.files: list[str] = []

    @property
    def meta(self) -> dict:
        return {"config_hash": self.hash, "seed": self.cfg.seed}

    def _write(self, name, text):
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / name).write_text(text)
        self.files.append(str(self.dir / name))

    def json(self, name, payload):
        payload = {**self.meta, "config": asdict(self.cfg), **payload}
        payload["config"].pop("out")
        _check_finite(payload, name)
        self._write(name, json.dumps(payload, indent=2, sort_keys=True, default=list) + "\n")

    def csv(self, name, body: str):
        header = "".join(f"# {k}={v}\n" for k, v in self.meta.items())
        for line in body.splitlines():
            if line and not line.startswith("#"):
                for tok in line.split(","):
                    try:
                        if not math.isfinite(float(tok)):
                            raise NumericalFailure(f"non-finite value in {name}")
                    except ValueError:
                        pass
        self._write(name, header + body)

    def svg(self, name, text):
        self._write(name, text)


# ----------------------------------------------------------------- commands


def _solve(cfg, mesh, count=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return solve(mesh, cfg.kind, count or cfg.count, method=cfg.method, seed=cfg.seed)


def cmd_solve(cfg, out):
    mesh = parse_domain(cfg.domain, cfg.refine)
    spec = _solve(cfg, mesh)
    out.csv("spectrum.csv", spectrum_csv(spec))
    if cfg.vectors:
        from .spectral import eigenvectors_csv
        out.csv("eigenvectors.csv", eigenvectors_csv(spec))
    return {"lambda": spec.lam.tolist()}


def cmd_derivative(cfg, out):
    mesh = parse_domain(cfg.domain, cfg.refine)
    spec = _solve(cfg, mesh, max(cfg.count, 2))
    cl = _parse_cluster(cfg.cluster, spec, cfg.tol_cluster)
    spec = _solve(cfg, mesh, max(spec.count, cl.stop + 1))
    psi = parse_field(cfg.field, mesh)
    if psi is None:
        psi, cd = find_splitting(mesh, spec, cl, cfg.kind, cfg.side, cfg.eps,
                                 cfg.n_candidates, cfg.seed)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cd = cluster_matrix(mesh, spec, cl, psi)
    fd = fd_slopes(mesh, psi, cl, cfg.kind, cfg.t_grid or (1e-3, 2e-3, 4e-3), method=cfg.method)
    out.json("derivative.json", {"derivative": cd.to_dict()})
    rows = ["branch,predicted,fd,abs_diff,r2"]
    for k, (p, f, r) in enumerate(zip(cd.lam_slopes, fd.lam_slopes, fd.r2), 1):
        rows.append(f"{k},{p:.10g},{f:.10g},{abs(p - f):.3e},{r:.8f}")
    out.csv("slopes.csv", "\n".join(rows) + "\n")
    return {"score": cd.score, "lambda_slopes": cd.lam_slopes.tolist()}


def cmd_split(cfg, out):
    mesh = parse_domain(cfg.domain, cfg.refine)
    spec = _solve(cfg, mesh, max(cfg.count, 3))
    cl = _parse_cluster(cfg.cluster, spec, cfg.tol_cluster)
    psi = parse_field(cfg.field, mesh)
    if psi is None:
        psi, cd = find_splitting(mesh, spec, cl, cfg.kind, cfg.side, cfg.eps,
                                 cfg.n_candidates, cfg.seed)
    else:
        cd = None
    report = verify_split(mesh, psi, cl, cfg.kind, cfg.t_grid or DEFAULT_T_GRID, cd,
                          spectrum=spec)
    if cd is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cd = cluster_matrix(mesh, spec, cl, psi)
    out.json("split.json", {"report": report.to_dict(), "derivative": cd.to_dict()})
    out.svg("branch_fan.svg", branch_fan_svg(report.t, report.lam,
                                             f"cluster at {cl.center:.6g}", out.meta))
    return {"verdict": report.verdict, "score": cd.score}


def cmd_simplify(cfg, out):
    mesh = parse_domain(cfg.domain, cfg.refine)
    try:
        trace = simplify_spectrum(mesh, cfg.kind, cfg.count, cfg.eps, cfg.side, cfg.seed,
                                  cfg.n_candidates, cfg.t_grid or DEFAULT_T_GRID,
                                  cfg.tol_simple, cfg.max_iter, method=cfg.method)
    except NoCandidateFound as exc:
        if exc.trace is not None:
            out.json("trace.json", {"trace": exc.trace.to_dict()})
        raise
    out.json("trace.json", {"trace": trace.to_dict()})
    if trace.initial is not None:
        out.csv("spectrum_before.csv", spectrum_csv(trace.initial))
    out.csv("spectrum_after.csv", spectrum_csv(trace.final))
    for step in trace.steps:
        r = step.report
        out.svg(f"branch_fan_step{step.index}.svg",
                branch_fan_svg(r.t, r.lam, f"step {step.index}: cluster at {step.cluster.center:.6g}",
                               out.meta))
    return {"status": trace.status, "steps": len(trace.steps)}


def cmd_validate(cfg, out):
    mesh = parse_domain(cfg.domain, cfg.refine)
    report = validate_mesh(mesh)
    summary = {"mesh": {"vertices": mesh.n_vertices, "triangles": len(mesh.triangles),
                        "S_edges": len(mesh.edges_with("S")), "W_edges": len(mesh.edges_with("W")),
                        "interface_vertices": len(mesh.interface_vertices),
                        "area": mesh.area, "issues": report.summary()},
               "checks": {}}
    if not report.ok:
        out.json("validate.json", summary)
        raise ConfigError("mesh failed validation")
    spec = _solve(cfg, mesh)
    A = spec.inner(spec.vectors, spec.vectors)
    shifted = transplant(mesh, translation((0.37, -0.21)), 1.0, guard=False).mesh
    spec2 = _solve(cfg, shifted)
    mm = minmax_check(spec, 100, cfg.seed)
    checks = {
        "orthonormality": float(np.abs(A - np.eye(len(A))).max()),
        "max_residual": float(spec.residuals.max()),
        "mu_nonincreasing": bool(np.all(np.diff(spec.mu) <= 1e-12 * spec.mu[:-1])),
        "translation_invariance": float(np.abs(spec2.lam - spec.lam).max()),
        "minmax_violations": mm.violations,
        "minmax_attainment": mm.attainment_error,
    }
    passed = (checks["mu_nonincreasing"] and checks["orthonormality"] <= 1e-10 and checks["max_residual"] <= 1e-8
              and checks["translation_invariance"] <= 1e-9 * max(1.0, spec.lam.max())
              and mm.ok)
    summary["checks"] = checks
    summary["passed"] = bool(passed)
    out.json("validate.json", summary)
    if not passed:
        raise NumericalFailure("invariant suite failed")
    return {"passed": True}


COMMANDS = {"solve": cmd_solve, "derivative": cmd_derivative, "split": cmd_split,
            "simplify": cmd_simplify, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--domain", required=True,
                        help="rect:a,h,nx,ny | disk:rings,sectors | halfdisk:rings,sectors | mesh file")
    common.add_argument("--kind", default="sn", help="sd, sn or steklov")
    common.add_argument("-k", "--count", type=int, default=6)
    common.add_argument("--refine", type=int, default=0)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--method", choices=("auto", "iterate", "dense"), default="auto")
    common.add_argument("--tol-cluster", type=float, default=1e-2)
    common.add_argument("--tol-simple", type=float, default=1e-4)
    common.add_argument("--out", default="runs")
    search = argparse.ArgumentParser(add_help=False)
    search.add_argument("--cluster", help="1-based START:M (default: first detected cluster)")
    search.add_argument("--field", help="field JSON, or @file")
    search.add_argument("--side", choices=("S", "W"), default="S")
    search.add_argument("--eps", type=float, default=0.05)
    search.add_argument("--n-candidates", type=int, default=16)
    search.add_argument("--t-grid", type=lambda s: tuple(float(x) for x in s.split(",")))

    p = argparse.ArgumentParser(prog="sloshlab", description="sloshing eigenvalue laboratory")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="compute the leading spectrum")
    s.add_argument("--vectors", action="store_true", help="also write eigenvectors.csv")
    sub.add_parser("derivative", parents=[common, search], help="cluster derivative matrix")
    sub.add_parser("split", parents=[common, search], help="find and verify a splitting field")
    s = sub.add_parser("simplify", parents=[common, search], help="iterate until simple")
    s.add_argument("--max-iter", type=int, default=12)
    sub.add_parser("validate", parents=[common], help="mesh diagnostics and invariants")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    d = {k: v for k, v in vars(ns).items() if k in RunConfig.__dataclass_fields__}
    return RunConfig(**d)


def run(cfg: RunConfig) -> tuple[int, list[str]]:
    out = Emitter(cfg)
    try:
        cfg.validate()
        result = COMMANDS[cfg.command](cfg, out)
        out.json("result.json", {"status": "ok", "result": result,
                                 "files": sorted(Path(f).name for f in out.files)})
        return EXIT_OK, out.files
    except (ConfigError, *_CONFIG_ERRORS) as exc:
        code, error = EXIT_CONFIG, exc
    except NoCandidateFound as exc:
        code, error = EXIT_NO_CANDIDATE, exc
    except (SloshError, NumericalFailure, np.linalg.LinAlgError, ArithmeticError) as exc:
        code, error = EXIT_NUMERIC, exc
    record = {"error": getattr(error, "code", type(error).__name__), "message": str(error),
              "exit_code": code, "config_hash": out.hash, "seed": cfg.seed}
    if isinstance(error, NoCandidateFound):
        record["best_score"] = error.best_score
    out.dir.mkdir(parents=True, exist_ok=True)
    (out.dir / "error.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    out.files.append(str(out.dir / "error.json"))
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code, out.files


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    code, files = run(config_from_args(ns))
    for f in files:
        print(f)
    return code


if __name__ == "__main__":
    sys.exit(main())
