"""CSV and JSON helpers shared by the CLI and the library.

CSV files are comma separated with a header row, LF line endings and
17 significant digits so that doubles round-trip exactly.  JSON output uses
sorted keys; non-finite floats are written as the strings ``"inf"``,
``"-inf"`` and ``"nan"``.
"""

from __future__ import annotations

import io as _io
import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .core import GmnDistribution, gmn_from_json
from .errors import ValidationError
from .families import family_from_json
from .specfun import SpdMatrix

__all__ = [
    "format_csv",
    "write_csv",
    "read_csv",
    "to_jsonable",
    "dumps_json",
    "model_from_json",
    "load_model",
    "packaged_model_path",
    "packaged_models",
]


def format_csv(rows, header) -> str:
    """Render a 2-d array with a header line as CSV text."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    buf = _io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join("%.17g" % v for v in row) + "\n")
    return buf.getvalue()


def write_csv(path, rows, header) -> None:
    text = format_csv(rows, header)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)


def read_csv(path) -> tuple:
    """Read a numeric CSV with a header row; returns ``(header, array)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size and data.shape[1] != len(header):
        raise ValidationError(f"{path}: header has {len(header)} columns, rows have {data.shape[1]}")
    return header, data


def to_jsonable(obj):
    """Recursively convert arrays, numpy scalars and non-finite floats."""
    if hasattr(obj, "to_json"):
        return to_jsonable(obj.to_json())
    if isinstance(obj, SpdMatrix):
        return to_jsonable(obj.matrix)
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def model_from_json(obj: dict):
    """A :class:`GmnDistribution` (``"kind": "gmn"``) or a family record (``"family"``)."""
    if not isinstance(obj, dict):
        raise ValidationError("model JSON must be an object")
    if "family" in obj:
        return family_from_json(obj)
    if obj.get("kind") == "gmn":
        return gmn_from_json(obj)
    raise ValidationError("model JSON needs a 'family' field or 'kind': 'gmn'")


def packaged_models() -> list:
    """Names of the example models shipped with the package."""
    root = resources.files("gmn") / "models"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def packaged_model_path(name: str) -> Path:
    path = Path(str(resources.files("gmn") / "models" / f"{name}.json"))
    if not path.exists():
        raise ValidationError(f"no packaged model named {name!r}")
    return path


def load_model(path):
    """Load a model file; ``pkg:<name>`` refers to a packaged example."""
    path = str(path)
    if path.startswith("pkg:"):
        path = packaged_model_path(path[4:])
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_json(obj)


def as_gmn(model) -> GmnDistribution:
    """The GMN representation of a model (identity for GMN objects)."""
    from .families import to_gmn

    return model if isinstance(model, GmnDistribution) else to_gmn(model)
