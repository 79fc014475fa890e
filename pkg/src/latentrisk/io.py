"""Model files, reports and curve tables."""
from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import Normalization
from .hazard import BaseHazard
from .models import GaussianFrailtyModel, LatentClassModel

FORMAT_VERSION = 1


def _floats(a):
    return np.asarray(a, dtype=float).tolist()


def model_to_dict(model) -> dict:
    hz = [h.to_dict() for h in model.base_hazards]
    norm = None if model.normalization is None else model.normalization.to_dict()
    if isinstance(model, LatentClassModel):
        return {
            "kind": "latent",
            "dims": {"L": model.L, "K": model.K, "R": model.R, "p": model.p},
            "weights": _floats(model.weights),
            "coefficients": _floats(model.coefficients),
            "base_hazards": hz,
            "free_censoring": bool(model.free_censoring),
            "normalization": norm,
        }
    if isinstance(model, GaussianFrailtyModel):
        return {
            "kind": "gaussian",
            "dims": {"L": 1, "K": model.K, "R": model.R, "p": model.p},
            "means": _floats(model.means),
            "covariance": _floats(model.covariance),
            "base_hazards": hz,
            "mc_samples": int(model.mc_samples),
            "use_lower_bound": bool(model.use_lower_bound),
            "normalization": norm,
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(d: dict):
    hz = tuple(BaseHazard.from_dict(h) for h in d["base_hazards"])
    norm = None if d.get("normalization") is None else Normalization.from_dict(d["normalization"])
    kind = d.get("kind")
    if kind == "latent":
        m = LatentClassModel(np.array(d["weights"]), np.array(d["coefficients"]), hz,
                             free_censoring=bool(d.get("free_censoring", False)), normalization=norm)
    elif kind == "gaussian":
        m = GaussianFrailtyModel(np.array(d["means"]), np.array(d["covariance"]), hz,
                                 mc_samples=int(d["mc_samples"]),
                                 use_lower_bound=bool(d["use_lower_bound"]), normalization=norm)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    dims = d.get("dims", {})
    actual = {"K": m.K, "R": m.R, "p": m.p}
    for key, val in actual.items():
        if key in dims and int(dims[key]) != val:
            raise ValueError(f"dims.{key}={dims[key]} disagrees with the stored arrays ({val})")
    return m


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def model_hash(model) -> str:
    """Short content hash of the model parameters."""
    blob = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def model_document(model, metadata=None, error_bars=None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "model": model_to_dict(model),
        "model_hash": model_hash(model),
        "metadata": {"tool_version": __version__, **(metadata or {})},
        "error_bars": error_bars,
    }


def save_model(path, model, metadata=None, error_bars=None):
    Path(path).write_text(dumps(model_document(model, metadata, error_bars)))


def load_model(path):
    """Return ``(model, document)``; the document keeps metadata for re-saving."""
    doc = json.loads(Path(path).read_text())
    if "model" not in doc:
        raise ValueError(f"{path}: not a model file")
    model = model_from_dict(doc["model"])
    if doc.get("model_hash") not in (None, model_hash(model)):
        raise ValueError(f"{path}: model hash mismatch")
    return model, doc


def resave_model(doc, path):
    """Write a loaded document back unchanged (used for round-trip checks)."""
    Path(path).write_text(dumps(doc))


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def write_curve_csv(path, t, values, model_hash_: str, risk: int, band: str | None = None,
                    extra: dict | None = None):
    lines = [f"#model-hash: {model_hash_}", f"#risk: {risk}", f"#band: {band or 'none'}"]
    lines += [f"#{k}: {v}" for k, v in (extra or {}).items()]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
        w = csv.writer(fh)
        w.writerow(["t", "value"])
        for a, b in zip(np.asarray(t, float), np.asarray(values, float)):
            w.writerow([repr(float(a)), repr(float(b))])


def read_curve_csv(path):
    meta, rows = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].partition(":")
                meta[k.strip()] = v.strip()
            else:
                rows.append(line)
    data = list(csv.reader(rows))
    if data[0] != ["t", "value"]:
        raise ValueError(f"{path}: unexpected header {data[0]}")
    arr = np.array(data[1:], dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1], meta


def write_posterior_csv(path, probabilities, ids=None):
    P = np.asarray(probabilities, dtype=float)
    ids = range(1, len(P) + 1) if ids is None else ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"p_{l + 1}" for l in range(P.shape[1])] + ["argmax"])
        for i, row in zip(ids, P):
            w.writerow([i] + [repr(float(v)) for v in row] + [int(np.argmax(row)) + 1])


@contextlib.contextmanager
def atomic_output(out_dir):
    """Yield a scratch directory whose files are moved into ``out_dir`` only on success."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    for f in sorted(tmp.iterdir()):
        os.replace(f, out / f.name)
    tmp.rmdir()
