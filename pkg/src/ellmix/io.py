"""Model files (JSON) and point files (CSV, ASCII PLY)."""
from __future__ import annotations

import json
import math
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import DataFormatError, EllmixError
from .model import EllipsoidParams, MixtureParams, PointCloud

SCHEMA_VERSION = "1.0"
SUPPORTED_SCHEMAS = (SCHEMA_VERSION,)


def timestamp() -> str:
    """UTC ISO-8601 time, pinned by SOURCE_DATE_EPOCH when that is set."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.replace(microsecond=0).isoformat().replace("+00:00", "Z")


def _fmt(v: float) -> str:
    # repr gives the shortest string that round-trips
    return repr(float(v))


def dump_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, allow_nan=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


# --- model files -------------------------------------------------------------

def model_to_dict(mix: MixtureParams, seed=None, command=None, ts=None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "dim": mix.dim,
        "components": [
            {
                "mu": c.mu.tolist(),
                "sigma_mat": c.sigma_mat.tolist(),
                "noise_sigma": c.noise_sigma,
                "weight": float(w),
            }
            for c, w in zip(mix.components, mix.weights)
        ],
        "provenance": {
            "seed": seed,
            "command": command,
            "timestamp": timestamp() if ts is None else ts,
        },
    }


def write_model(path, mix: MixtureParams, seed=None, command=None, ts=None) -> None:
    dump_json(model_to_dict(mix, seed, command, ts), path)


def _field(obj, key, where, path):
    if key not in obj:
        raise DataFormatError(f"missing field {key!r} in {where}", path=path)
    return obj[key]


def model_from_dict(data: dict, path=None) -> tuple[MixtureParams, dict]:
    """Validate a decoded model file; return the mixture and its provenance."""
    if not isinstance(data, dict):
        raise DataFormatError("model file must hold a JSON object", path=path)
    version = _field(data, "schema_version", "model", path)
    if version not in SUPPORTED_SCHEMAS:
        raise DataFormatError(
            f"unsupported schema_version {version!r}; this reader understands {list(SUPPORTED_SCHEMAS)}",
            path=path,
        )
    dim = _field(data, "dim", "model", path)
    comps_raw = _field(data, "components", "model", path)
    if not isinstance(comps_raw, list) or not comps_raw:
        raise DataFormatError("'components' must be a non-empty list", path=path)
    comps, weights = [], []
    for i, c in enumerate(comps_raw):
        where = f"components[{i}]"
        try:
            mu = np.asarray(_field(c, "mu", where, path), dtype=float)
            s = np.asarray(_field(c, "sigma_mat", where, path), dtype=float)
            if s.ndim == 1 and s.size == mu.size ** 2:
                s = s.reshape(mu.size, mu.size)
            sigma = float(_field(c, "noise_sigma", where, path))
            weights.append(float(c.get("weight", 1.0 if len(comps_raw) == 1 else math.nan)))
            comp = EllipsoidParams(mu, s, sigma)
        except DataFormatError:
            raise
        except (EllmixError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{where}: {exc}", path=path) from exc
        if comp.dim != dim:
            raise DataFormatError(f"{where} has dimension {comp.dim}, file declares dim={dim}", path=path)
        comps.append(comp)
    try:
        mix = MixtureParams(tuple(comps), weights)
    except EllmixError as exc:
        raise DataFormatError(str(exc), path=path) from exc
    return mix, dict(data.get("provenance") or {})


def read_model(path) -> tuple[MixtureParams, dict]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON: {exc.msg}", path=path, row=exc.lineno) from exc
    return model_from_dict(data, path)


# --- point files -------------------------------------------------------------

_COORDS = ("x", "y", "z")


def write_points(path, points, labels=None, fmt: str = "csv") -> None:
    """Write points (and optional integer labels) as CSV or ASCII PLY; '-' means stdout."""
    pts = np.asarray(points, dtype=float)
    d = pts.shape[1]
    names = list(_COORDS[:d])
    lines = []
    if fmt == "csv":
        lines.append(",".join(names + (["label"] if labels is not None else [])))
        for i, row in enumerate(pts):
            cells = [_fmt(v) for v in row]
            if labels is not None:
                cells.append(str(int(labels[i])))
            lines.append(",".join(cells))
    elif fmt == "ply":
        lines += ["ply", "format ascii 1.0", "comment written by ellmix",
                  f"element vertex {pts.shape[0]}"]
        lines += [f"property double {n}" for n in names]
        if labels is not None:
            lines.append("property int label")
        lines.append("end_header")
        for i, row in enumerate(pts):
            cells = [_fmt(v) for v in row]
            if labels is not None:
                cells.append(str(int(labels[i])))
            lines.append(" ".join(cells))
    else:
        raise ValueError(f"unknown point format {fmt!r}")
    text = "\n".join(lines) + "\n"
    if str(path) == "-":
        import sys
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _parse_float(tok, path, row, col):
    try:
        v = float(tok)
    except ValueError:
        raise DataFormatError(f"cannot parse {tok!r} as a number", path=path, row=row, column=col) from None
    if not math.isfinite(v):
        raise DataFormatError(f"non-finite value {tok!r}", path=path, row=row, column=col)
    return v


def _read_csv(path, text):
    lines = text.splitlines()
    if not lines:
        raise DataFormatError("empty file", path=path)
    header = [h.strip() for h in lines[0].split(",")]
    d = sum(1 for h in header if h in _COORDS)
    if header[:d] != list(_COORDS[:d]) or d not in (2, 3):
        raise DataFormatError(f"header must start with x,y or x,y,z, got {lines[0]!r}", path=path, row=1)
    has_label = "label" in header
    ncol = len(header)
    pts, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != ncol:
            raise DataFormatError(f"expected {ncol} fields, found {len(cells)}", path=path, row=lineno)
        pts.append([_parse_float(cells[j].strip(), path, lineno, header[j]) for j in range(d)])
        if has_label:
            j = header.index("label")
            try:
                labels.append(int(cells[j]))
            except ValueError:
                raise DataFormatError(f"label {cells[j]!r} is not an integer", path=path,
                                      row=lineno, column="label") from None
    return pts, (labels if has_label else None)


def _read_ply(path, text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DataFormatError("missing 'ply' magic line", path=path, row=1)
    i = 1
    fmt = None
    elements = []  # [name, count, [props]]
    while i < len(lines):
        tok = lines[i].split()
        i += 1
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "element":
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise DataFormatError("property before any element", path=path, row=i)
            elements[-1][2].append(tok[-1] if tok[1] != "list" else None)
        elif tok[0] == "end_header":
            break
    else:
        raise DataFormatError("missing end_header", path=path)
    if fmt != "ascii":
        raise DataFormatError(f"only ASCII PLY is supported (format {fmt!r})", path=path)
    pts, labels = [], []
    for name, count, props in elements:
        if name != "vertex":
            i += count
            continue
        try:
            cols = [props.index(c) for c in _COORDS if c in props]
        except ValueError:
            cols = []
        d = len(cols)
        if d not in (2, 3) or any(c not in props for c in _COORDS[:d]):
            raise DataFormatError("vertex element needs x, y[, z] properties", path=path)
        lab = props.index("label") if "label" in props else None
        for lineno in range(i + 1, i + count + 1):
            if lineno > len(lines):
                raise DataFormatError(f"file ends before {count} vertices", path=path, row=lineno)
            cells = lines[lineno - 1].split()
            if len(cells) < len(props):
                raise DataFormatError(f"expected {len(props)} values, found {len(cells)}",
                                      path=path, row=lineno)
            pts.append([_parse_float(cells[c], path, lineno, props[c]) for c in cols])
            if lab is not None:
                labels.append(int(float(cells[lab])))
        i += count
    if not pts:
        raise DataFormatError("no vertices", path=path)
    return pts, (labels if labels else None)


def read_points(path, fmt: str | None = None) -> PointCloud:
    """Load a point file; the format comes from ``fmt`` or the file extension."""
    path = Path(path)
    fmt = fmt or ("ply" if path.suffix.lower() == ".ply" else "csv")
    text = path.read_text(encoding="utf-8")
    pts, labels = _read_ply(path, text) if fmt == "ply" else _read_csv(path, text)
    if not pts:
        raise DataFormatError("no points", path=path)
    meta = {"path": str(path), "format": fmt}
    if labels is not None:
        meta["labels"] = np.asarray(labels, dtype=np.int64)
    return PointCloud(np.asarray(pts, dtype=float), meta)
