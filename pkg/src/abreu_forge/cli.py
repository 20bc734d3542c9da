"""Batch driver: one JSON problem document in, reports and a manifest out.

Exit status is 0 on success, 1 when a verification fails and 2 for bad
input.  Flags override the corresponding document fields.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import serialize
from .bundle import BundleData, BundleError, check_position_condition, parse_bundle
from .functionals import AffineDensity, affine_defect, calibrate_affine_A, make_quadratures, mabuchi_F_A
from .operators import curvature
from .polytope import (
    Polytope,
    PolytopeError,
    all_vertex_charts,
    interior_grid,
    parse_polytope,
    validate_delzant,
)
from .potential import ConvexityError, Potential, check_convexity, jets, legendre_check, parse_potential
from .stability import CalibrationError, falsify_stability
from .verify import (
    VerifyConfig,
    identity_study,
    p_inequality_margin,
    pq_constant_search,
    trace_identity_study,
    verify_subharmonicity,
)

COMMANDS = ("validate", "guillemin", "curvature", "functionals", "calibrate-A", "stability", "verify", "legendre")

# numbered aliases are part of the command-line contract
LEMMAS = {
    "subharmonic": "subharmonic",
    "6.1": "subharmonic",
    "p-inequality": "p-inequality",
    "6.2": "p-inequality",
    "pq-search": "pq-search",
    "6.4": "pq-search",
    "consistency": "consistency",
}


class InputError(Exception):
    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


class Problem:
    """Parsed document with flag overrides applied."""

    def __init__(self, doc: dict[str, Any], args: argparse.Namespace):
        self.doc = doc
        try:
            self.P: Polytope = parse_polytope(doc)
        except PolytopeError as exc:
            raise InputError("/facets", str(exc)) from None
        try:
            self.B: BundleData = parse_bundle(doc.get("bundle"))
            self.B.check_dimension(self.P.dimension)
        except BundleError as exc:
            raise InputError("/bundle", str(exc)) from None
        n = self.P.dimension
        for k, t in enumerate((doc.get("potential") or {}).get("polynomial", [])):
            if len(t["exponents"]) != n:
                raise InputError(f"/potential/polynomial/{k}/exponents", f"expected {n} exponents")
        try:
            self.u: Potential = parse_potential(doc.get("potential"), self.P)
        except PolytopeError as exc:
            raise InputError("/potential/normalize_at", str(exc)) from None
        self.resolution = args.resolution if args.resolution is not None else int(doc.get("resolution", 64))
        if self.resolution < 1:
            raise InputError("--resolution", "must be positive")
        self.seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
        p0 = args.p0 if args.p0 is not None else doc.get("p0")
        self.p0 = None if p0 is None else np.asarray(p0, dtype=float)
        if self.p0 is not None and (self.p0.shape != (n,) or not self.P.is_interior(self.p0[None, :])[0]):
            raise InputError("/p0", f"{list(self.p0)} is not an interior point of the polytope")
        self.A: AffineDensity | None = None
        if "A" in doc:
            a = list(doc["A"].get("a", [0.0] * n))
            if len(a) != n:
                raise InputError("/A/a", f"expected {n} coefficients")
            self.A = AffineDensity((float(doc["A"]["a0"]),) + tuple(float(c) for c in a))
        v = doc.get("verify", {})
        self.verify_cfg = VerifyConfig(
            a=float(v.get("a", 1.0 / 3.0)),
            N2=None if v.get("N2") is None else float(v["N2"]),
            N1=float(v.get("N1", 100.0)),
            resolutions=tuple(int(r) for r in v.get("resolutions", (16, 32, 64, 128))),
        )
        self.face = tuple(int(k) for k in v.get("face", ()))
        if any(k >= len(self.P.facets) for k in self.face):
            raise InputError("/verify/face", "facet index out of range")
        self.reference = v.get("reference")
        self.C1 = tuple(float(c) for c in v.get("C1", (0.0, 1.0, 10.0, 100.0, 1000.0)))
        st = doc.get("stability", {})
        self.samples = args.samples if args.samples is not None else int(st.get("samples", 1000))
        self.check_calibration = bool(st.get("check_calibration", True))


def _vertex_doc(P: Polytope) -> list[list[str]]:
    return [[str(c) for c in v] for v in P.vertices]


def cmd_validate(pb: Problem, args) -> tuple[int, dict[str, Any], None]:
    rep = validate_delzant(pb.P)
    try:
        pos = check_position_condition(pb.P, pb.B)
    except BundleError:
        pos = None
    body = {
        "polytope": pb.P.to_document(),
        "vertices": _vertex_doc(pb.P),
        "delzant": {
            "passed": rep.passed,
            "vertices": [
                {"vertex": [str(c) for c in c_.vertex], "facets": list(c_.facets), "determinant": c_.determinant, "ok": c_.ok}
                for c_ in rep.vertices
            ],
            "failures": list(rep.failures),
        },
        "position": {
            "ratios": [] if pos is None else list(pos.ratios),
            "min_D_alpha": [] if pos is None else list(pos.min_D_alpha),
            "total": float("inf") if pos is None else pos.total,
            "threshold": pb.P.dimension / 4,
            "passed": False if pos is None else pos.passed,
            "note": "D_alpha is not positive on the polytope" if pos is None else "",
        },
    }
    return (0 if rep.passed else 1), body, None


def cmd_guillemin(pb: Problem, args):
    G = interior_grid(pb.P, pb.resolution)
    check_convexity(pb.u, G.points)
    j = jets(pb.u, G)
    n = pb.P.dimension
    names = [f"xi{i + 1}" for i in range(n)] + ["u"] + [f"x{i + 1}" for i in range(n)] + ["f", "log_det_hessian"]
    data = np.column_stack([G.points, j.value, j.x, j.f_value, j.logdet])
    eig = float(np.linalg.eigvalsh(j.hess)[:, 0].min())
    summary = {"points": len(G), "h": G.h, "min_hessian_eigenvalue": eig, "potential": pb.u.to_document()}
    return 0, summary, (names, data)


def cmd_curvature(pb: Problem, args):
    G = interior_grid(pb.P, pb.resolution)
    j = jets(pb.u, G)
    cb = curvature(j, pb.B, all_vertex_charts(pb.P))
    names, data = cb.columns()
    return 0, {"columns": names, "data": data.tolist(), "h": G.h}, (names, data)


def _density(pb: Problem) -> tuple[AffineDensity, bool]:
    if pb.A is not None:
        return pb.A, False
    return calibrate_affine_A(pb.P, pb.B, make_quadratures(pb.P, pb.resolution)), True


def cmd_functionals(pb: Problem, args):
    A, calibrated = _density(pb)
    Q = make_quadratures(pb.P, pb.resolution)
    rep = mabuchi_F_A(pb.u, A, pb.P, pb.B, Q)
    body = rep.to_document()
    body["A"] = A.to_document()
    body["A_calibrated"] = calibrated
    return 0, body, None


def cmd_calibrate(pb: Problem, args):
    Q = make_quadratures(pb.P, pb.resolution)
    A = calibrate_affine_A(pb.P, pb.B, Q)
    return 0, {"A": A.to_document(), "defect": affine_defect(A, pb.P, pb.B, Q).tolist(), "resolution": pb.resolution}, None


def cmd_stability(pb: Problem, args):
    A, _ = _density(pb)
    try:
        rep = falsify_stability(
            A, pb.P, pb.B, pb.p0, pb.samples, pb.seed, pb.resolution, check_calibration=pb.check_calibration
        )
    except CalibrationError as exc:
        body = {
            "samples": pb.samples,
            "accepted": 0,
            "lambda_hat": None,
            "negative": False,
            "seed": pb.seed,
            "p_o": list(pb.P.barycenter if pb.p0 is None else pb.p0),
            "error": f"calibration precondition failed: {exc}",
            "A": A.to_document(),
        }
        return 1, body, None
    body = rep.to_document()
    body["A"] = A.to_document()
    return (1 if rep.negative else 0), body, None


def cmd_verify(pb: Problem, args):
    which = LEMMAS[args.lemma]
    cfg = pb.verify_cfg
    if which == "subharmonic":
        reps = [verify_subharmonicity(pb.P, pb.B, pb.u, pb.resolution)]
        code = 0 if reps[0].passed else 1
    elif which == "consistency":
        reps = [identity_study(pb.u, pb.B, resolutions=cfg.resolutions), trace_identity_study(pb.u, pb.B, cfg.resolutions)]
        code = 0 if all(r.passed for r in reps) else 1
    elif which == "p-inequality":
        reps = [p_inequality_margin(pb.P, pb.B, pb.u, pb.face or None, cfg, pb.resolution)]
        code = 1 if reps[0].status == "calibration_failed" else 0
    else:
        if pb.P.dimension != 2:
            raise InputError("/dimension", "the P + Q search needs n = 2")
        ref = parse_potential(pb.reference, pb.P) if pb.reference is not None else Potential(pb.P, True, pb.u.polynomial.scaled(0.0))
        reps = [pq_constant_search(pb.P, pb.B, pb.u, ref, cfg, pb.C1, pb.resolution)]
        code = 1 if reps[0].status == "hypothesis_failed" else 0
    return code, {"lemma": which, "reports": [r.to_document() for r in reps]}, None


def cmd_legendre(pb: Problem, args):
    G = interior_grid(pb.P, pb.resolution)
    rep = legendre_check(pb.u, G)
    body = {
        "points": rep.points,
        "involution_rms": rep.involution_rms,
        "involution_max": rep.involution_max,
        "duality_max": rep.duality_max,
        "f_at_origin": rep.f_at_origin,
    }
    ok = rep.involution_rms < 1e-8 and rep.duality_max <= 1e-10
    return (0 if ok else 1), body, None


HANDLERS = {
    "validate": cmd_validate,
    "guillemin": cmd_guillemin,
    "curvature": cmd_curvature,
    "functionals": cmd_functionals,
    "calibrate-A": cmd_calibrate,
    "stability": cmd_stability,
    "verify": cmd_verify,
    "legendre": cmd_legendre,
}


def _p0(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="abreu-forge", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("document", help="JSON problem document")
        sp.add_argument("--resolution", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--p0", type=_p0, help="normalization point, e.g. 0.5,0.5")
        sp.add_argument("--out", default="abreu_out", help="output directory")
        sp.add_argument("--format", choices=("csv", "json"), default=None)
        if name == "stability":
            sp.add_argument("--samples", type=int)
        else:
            sp.set_defaults(samples=None)
        if name == "verify":
            sp.add_argument("--lemma", choices=sorted(LEMMAS), default="subharmonic")
    return ap


def run(argv: Sequence[str] | None = None) -> tuple[int, dict[str, Any] | None]:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        raw = Path(args.document).read_bytes()
    except OSError as exc:
        print(f"error: cannot read {args.document}: {exc.strerror}", file=sys.stderr)
        return 2, None
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        print(f"error: {args.document}: invalid JSON ({exc.msg} at line {exc.lineno})", file=sys.stderr)
        return 2, None
    bad = serialize.first_schema_error(doc)
    if bad is not None:
        print(f"error: {bad[0]}: {bad[1]}", file=sys.stderr)
        return 2, None
    try:
        pb = Problem(doc, args)
        code, body, table = HANDLERS[args.command](pb, args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2, None
    except ConvexityError as exc:
        print(f"error: /potential: {exc}", file=sys.stderr)
        return 2, None
    except BundleError as exc:
        print(f"error: /bundle: {exc}", file=sys.stderr)
        return 2, None

    fmt = args.format or ("csv" if table is not None else "json")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    stem = args.command + (f"-{LEMMAS[args.lemma]}" if args.command == "verify" else "")
    if fmt == "csv" and table is not None:
        path = out / f"{stem}.csv"
        path.write_text(serialize.csv_text(*table))
        files.append(path.name)
        if args.command != "curvature":
            jpath = out / f"{stem}.json"
            jpath.write_text(serialize.dumps(body))
            files.append(jpath.name)
    else:
        path = out / f"{stem}.json"
        path.write_text(serialize.dumps(body))
        files.append(path.name)
    manifest = {
        "tool": "abreu-forge",
        "version": __version__,
        "command": args.command,
        "input_sha256": hashlib.sha256(raw).hexdigest(),
        "document": doc,
        "resolution": pb.resolution,
        "seed": pb.seed,
        "exit_status": code,
        "wall_time_s": time.perf_counter() - t0,
        "outputs": files,
    }
    (out / "manifest.json").write_text(serialize.dumps(manifest))
    for line in _summary(args.command, body, code):
        print(line)
    return code, manifest


def _summary(command: str, body: dict[str, Any], code: int) -> list[str]:
    if command == "stability" and "error" in body:
        return [body["error"]]
    if command == "verify":
        return [f"{r['name']}: {r['status']}" for r in body["reports"]]
    return [f"{command}: {'ok' if code == 0 else 'failed'}"]


def main(argv: Sequence[str] | None = None) -> int:
    code, _ = run(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
