"""File formats: diagnostics CSV, geometry CSV, checkpoints, run manifests.

Checkpoints are a versioned JSON header next to a raw little-endian
binary payload holding the support-function values; the header records
shape, dtype and byte order, so a round trip is bit-exact.  Manifests are
written atomically (tmp file + rename).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import tempfile

import numpy as np

from .errors import ConfigurationError
from .functionals import DiagnosticsRecord
from .mesh import CapMesh, build_cap_mesh
from .state import SupportField

CHECKPOINT_FORMAT_VERSION = 1

DIAGNOSTIC_COLUMNS = [f.name for f in dataclasses.fields(DiagnosticsRecord)]


def write_diagnostics_csv(history, path) -> None:
    """One CSV row per recorded step; columns are the DiagnosticsRecord
    fields in declared order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DIAGNOSTIC_COLUMNS)
        for rec in history:
            writer.writerow([repr(float(getattr(rec, c))) for c in DIAGNOSTIC_COLUMNS])


def read_diagnostics_csv(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(DiagnosticsRecord(**{k: float(v) for k, v in row.items()}))
    return out


def write_embedding_csv(mesh: CapMesh, points: np.ndarray, curv, path) -> None:
    """Geometry export: node index, (rho, phi), ambient position, curvatures."""
    n = mesh.dim
    cols = ["node", "rho", "phi"]
    cols += [f"X{k+1}" for k in range(n + 1)]
    cols += [f"kappa{k+1}" for k in range(n)]
    cols += ["K"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for a in range(mesh.n_nodes):
            row = [a, repr(float(mesh.rho[a])), repr(float(mesh.phi[a]))]
            row += [repr(float(x)) for x in points[a]]
            row += [repr(float(k)) for k in curv.kappas[a]]
            row += [repr(float(curv.gauss[a]))]
            writer.writerow(row)


def mesh_fingerprint(mesh: CapMesh) -> str:
    """SHA-256 over the node and weight payloads."""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(mesh.nodes).tobytes())
    digest.update(np.ascontiguousarray(mesh.weights).tobytes())
    return digest.hexdigest()


def write_atomic_json(doc: dict, path) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path_base, h: SupportField, meta: dict | None = None,
                    history=None) -> None:
    """Write <base>.json + <base>.bin (+ <base>.diag.csv) for a flow state."""
    values = np.ascontiguousarray(h.values, dtype="<f8")
    bin_path = str(path_base) + ".bin"
    with open(bin_path, "wb") as fh:
        fh.write(values.tobytes())
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "payload": os.path.basename(bin_path),
        "dtype": "<f8",
        "shape": list(values.shape),
        "theta": h.mesh.theta,
        "dim": h.mesh.dim,
        "resolution": list(h.mesh.resolution),
        "even": bool(h.even),
        "meta": meta or {},
    }
    if history is not None:
        diag_path = str(path_base) + ".diag.csv"
        write_diagnostics_csv(history, diag_path)
        header["diagnostics"] = os.path.basename(diag_path)
    write_atomic_json(header, str(path_base) + ".json")


def load_checkpoint(path_base) -> tuple[SupportField, dict, list]:
    with open(str(path_base) + ".json") as fh:
        header = json.load(fh)
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigurationError(
            f"unsupported checkpoint version {header.get('format_version')!r}"
        )
    base_dir = os.path.dirname(os.path.abspath(str(path_base) + ".json"))
    values = np.fromfile(
        os.path.join(base_dir, header["payload"]), dtype=header["dtype"]
    ).reshape(header["shape"])
    mesh = build_cap_mesh(header["theta"], header["dim"], tuple(header["resolution"]))
    history = []
    if "diagnostics" in header:
        history = read_diagnostics_csv(os.path.join(base_dir, header["diagnostics"]))
    return SupportField(values, mesh, even=header["even"]), header.get("meta", {}), history
