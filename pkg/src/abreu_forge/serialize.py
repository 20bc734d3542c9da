"""Deterministic JSON/CSV emission and the schemas used to check documents."""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Any, Iterable, Mapping, Sequence

import jsonschema
import numpy as np


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    if x == 0.0:
        return "0.0"
    s = f"{x:.17g}"
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _plain(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write(obj: Any, indent: int, level: int, out: list[str]) -> None:
    obj = _plain(obj)
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, bool):
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(_fmt_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, Mapping):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for k, (key, val) in enumerate(obj.items()):
            out.append(pad + json.dumps(str(key), ensure_ascii=False) + ": ")
            _write(val, indent, level + 1, out)
            out.append(",\n" if k < len(obj) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        if all(isinstance(_plain(v), (int, float)) and not isinstance(v, bool) for v in obj):
            out.append("[")
            for k, v in enumerate(obj):
                _write(v, indent, level + 1, out)
                if k < len(obj) - 1:
                    out.append(", ")
            out.append("]")
            return
        out.append("[\n")
        for k, v in enumerate(obj):
            out.append(pad)
            _write(v, indent, level + 1, out)
            out.append(",\n" if k < len(obj) - 1 else "\n")
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON text with 17 significant digits and the mapping order preserved.

    Non-finite floats become ``null``.
    """
    out: list[str] = []
    _write(obj, indent, 0, out)
    return "".join(out) + "\n"


def csv_text(names: Sequence[str], data: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in np.atleast_2d(data):
        w.writerow([_fmt_float(float(v)) for v in row])
    return buf.getvalue()


# -- schemas ---------------------------------------------------------------------

_number = {"type": "number"}
_offset = {"anyOf": [{"type": "number"}, {"type": "string", "pattern": r"^\s*-?\d+(\s*/\s*\d+)?\s*$"}]}
_int_vec = {"type": "array", "items": {"type": "integer"}}
_num_vec = {"type": "array", "items": _number}

POTENTIAL_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "guillemin": {"type": "boolean"},
        "polynomial": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["exponents", "coeff"],
                "properties": {
                    "exponents": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "coeff": _number,
                },
                "additionalProperties": False,
            },
        },
        "normalize_at": _num_vec,
    },
    "additionalProperties": False,
}

DOCUMENT_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["dimension", "facets"],
    "properties": {
        "dimension": {"type": "integer", "minimum": 1},
        "facets": {
            "type": "array",
            "minItems": 2,
            "items": {
                "type": "object",
                "required": ["normal", "offset"],
                "properties": {"normal": _int_vec, "offset": _offset},
                "additionalProperties": False,
            },
        },
        "bundle": {
            "type": "object",
            "properties": {
                "roots": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["M"],
                        "properties": {
                            "M": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                            "multiplicity": {"type": "integer", "minimum": 1},
                        },
                        "additionalProperties": False,
                    },
                },
                "sigma": _num_vec,
            },
            "additionalProperties": False,
        },
        "potential": POTENTIAL_SCHEMA,
        "resolution": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "p0": _num_vec,
        "A": {
            "type": "object",
            "required": ["a0"],
            "properties": {"a0": _number, "a": _num_vec},
            "additionalProperties": False,
        },
        "stability": {
            "type": "object",
            "properties": {"samples": {"type": "integer", "minimum": 1}, "check_calibration": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "verify": {
            "type": "object",
            "properties": {
                "a": _number,
                "N1": _number,
                "N2": {"type": "number", "exclusiveMinimum": 0},
                "resolutions": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 2},
                "face": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "reference": POTENTIAL_SCHEMA,
                "C1": _num_vec,
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

_nullable_num = {"type": ["number", "null"]}

_INEQUALITY = {
    "type": "object",
    "required": ["name", "status", "passed", "min_margin", "argmin", "convergence", "order", "details"],
    "properties": {
        "name": {"type": "string"},
        "status": {"enum": ["pass", "fail", "hypothesis_failed", "exploratory", "calibration_failed"]},
        "passed": {"type": ["boolean", "null"]},
        "min_margin": _nullable_num,
        "argmin": {"type": ["array", "null"], "items": _number},
        "convergence": {"type": "array", "items": {"type": "object"}},
        "order": _nullable_num,
        "details": {"type": "object"},
    },
}

REPORT_SCHEMAS: dict[str, dict[str, Any]] = {
    "validate": {
        "type": "object",
        "required": ["delzant", "position"],
        "properties": {
            "delzant": {
                "type": "object",
                "required": ["passed", "vertices", "failures"],
                "properties": {"passed": {"type": "boolean"}},
            },
            "position": {
                "type": "object",
                "required": ["ratios", "total", "threshold", "passed"],
                "properties": {"total": _nullable_num, "threshold": _number, "passed": {"type": "boolean"}},
            },
        },
    },
    "functionals": {
        "type": "object",
        "required": ["L_A", "F_A", "entropy", "boundary", "interior", "A"],
        "properties": {k: _nullable_num for k in ("L_A", "F_A", "entropy", "boundary", "interior")},
    },
    "calibrate-A": {
        "type": "object",
        "required": ["A", "defect", "resolution"],
        "properties": {"A": {"type": "object", "required": ["a0", "a"]}, "defect": _num_vec},
    },
    "stability": {
        "type": "object",
        "required": ["samples", "accepted", "lambda_hat", "negative", "seed", "p_o"],
        "properties": {"seed": {"type": "integer"}, "lambda_hat": _nullable_num, "negative": {"type": "boolean"}},
    },
    "verify": {"type": "object", "required": ["reports"], "properties": {"reports": {"type": "array", "items": _INEQUALITY}}},
    "legendre": {
        "type": "object",
        "required": ["points", "involution_rms", "involution_max", "duality_max"],
        "properties": {"involution_rms": _number, "duality_max": _number},
    },
    "guillemin": {"type": "object", "required": ["points", "min_hessian_eigenvalue"]},
    "curvature": {"type": "object", "required": ["columns", "data"]},
    "manifest": {
        "type": "object",
        "required": ["tool", "version", "command", "input_sha256", "wall_time_s", "outputs"],
        "properties": {"outputs": {"type": "array", "items": {"type": "string"}}},
    },
}


def pointer(path: Iterable[Any]) -> str:
    return "/" + "/".join(str(p) for p in path)


def first_schema_error(doc: Any, schema: Mapping[str, Any] = DOCUMENT_SCHEMA) -> tuple[str, str] | None:
    """``(json pointer, message)`` of the first violation by path order."""
    v = jsonschema.Draft202012Validator(schema)
    errs = sorted(v.iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path])
    if not errs:
        return None
    e = errs[0]
    return pointer(e.absolute_path), e.message


def validate_report(kind: str, doc: Any) -> None:
    jsonschema.validate(doc, REPORT_SCHEMAS[kind])
