import os
import csv
import json
from dataclasses import dataclass

import numpy as np

from config import DEFAULT_RESPONSE, FLOAT_FORMAT, MAP_FORMAT_VERSION
from .base import DatasetError, InvalidArgumentError, ensure_output_dir
from .prior_pce import PceBasis
from .transport_admm import TransportMap


# ============================================================================
#  DATASET
# ============================================================================

@dataclass
class Standardization:
    """Column means and l2 scales removed from the raw design, plus the response mean."""
    means: np.ndarray
    scales: np.ndarray
    response_mean: float

    def to_dict(self):
        return {"means": self.means.tolist(), "scales": self.scales.tolist(),
                "response_mean": self.response_mean}


@dataclass
class Dataset:
    design: np.ndarray
    response: np.ndarray
    column_names: list
    standardization: Standardization

    @property
    def n(self):
        return self.design.shape[0]

    @property
    def d(self):
        return self.design.shape[1]

    def to_original_scale(self, coef):
        """Coefficients on the raw columns: beta_j / scale_j, intercept restored."""
        coef = np.asarray(coef, dtype=float)
        raw = coef / self.standardization.scales
        intercept = self.standardization.response_mean - raw @ self.standardization.means
        return raw, intercept


def _sniff_delimiter(header_line):
    return "\t" if header_line.count("\t") > header_line.count(",") else ","


def load_dataset(path, response_column=DEFAULT_RESPONSE):
    """Read a headed CSV (or tab-separated) file and standardize it.

    Design columns end up with mean 0 and unit l2 norm; the response is centered.
    """
    if not path or not os.path.exists(path):
        raise DatasetError(f"Dataset file not found: {path}")
    with open(path, 'r', encoding='utf-8', newline='') as f:
        first = f.readline()
        f.seek(0)
        rows = list(csv.reader(f, delimiter=_sniff_delimiter(first)))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if len(rows) < 3:
        raise DatasetError(f"{path} needs a header row and at least two data rows")
    header = [h.strip() for h in rows[0]]
    if response_column not in header:
        raise DatasetError(f"response column '{response_column}' not in header {header}")

    body = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetError(f"line {i} has {len(row)} cells, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                body[i - 2, j] = float(cell)
            except ValueError:
                raise DatasetError(f"non-numeric cell '{cell}' at line {i}, column '{header[j]}'") from None
    if not np.all(np.isfinite(body)):
        raise DatasetError(f"{path} contains non-finite values")

    r = header.index(response_column)
    names = [h for k, h in enumerate(header) if k != r]
    X = np.delete(body, r, axis=1)
    y = body[:, r]

    means = X.mean(axis=0)
    centered = X - means
    scales = np.linalg.norm(centered, axis=0)
    constant = [names[j] for j in np.flatnonzero(scales <= 1e-12 * np.maximum(1.0, np.abs(means)))]
    if constant:
        raise DatasetError(f"constant column(s) cannot be standardized: {', '.join(constant)}")
    y_mean = float(y.mean())
    return Dataset(design=centered / scales, response=y - y_mean, column_names=names,
                   standardization=Standardization(means=means, scales=scales, response_mean=y_mean))


# ============================================================================
#  MAP FILES
# ============================================================================

def map_to_envelope(tmap):
    return {
        "version": MAP_FORMAT_VERSION,
        "basis": tmap.basis.to_descriptor(),
        "coeffs": tmap.coeffs.tolist(),
        "lam": tmap.lam,
        "sigma2": tmap.sigma2,
        "converged": tmap.converged,
        "iterations": tmap.iterations,
        "metadata": tmap.metadata,
    }


def map_from_envelope(payload):
    version = payload.get("version")
    if version != MAP_FORMAT_VERSION:
        raise InvalidArgumentError(f"Unsupported map format version: {version}")
    basis = PceBasis.from_descriptor(payload["basis"])
    return TransportMap(coeffs=np.array(payload["coeffs"], dtype=float), basis=basis,
                        lam=float(payload["lam"]), sigma2=float(payload["sigma2"]),
                        converged=bool(payload.get("converged", True)),
                        iterations=int(payload.get("iterations", 0)),
                        metadata=dict(payload.get("metadata", {})))


def save_map_json(tmap, file_path):
    """Write a fitted map; json floats are repr-exact so reloading is lossless."""
    return write_json(file_path, map_to_envelope(tmap))


def load_map_json(file_path):
    if not os.path.exists(file_path):
        raise InvalidArgumentError(f"Map file not found: {file_path}")
    with open(file_path, 'r', encoding='utf-8') as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidArgumentError(f"Map file {file_path} is not valid JSON: {e}") from None
    return map_from_envelope(payload)


# ============================================================================
#  TABLE WRITERS
# ============================================================================

def _format_cell(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    return value


def write_csv(file_path, header, rows):
    """Header row plus data rows; floats at 17 significant digits."""
    try:
        ensure_output_dir(os.path.dirname(file_path) or ".")
        with open(file_path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_format_cell(v) for v in row])
        return {"success": True, "file_path": file_path}
    except OSError as e:
        return {"error": str(e)}


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def write_json(file_path, payload):
    try:
        ensure_output_dir(os.path.dirname(file_path) or ".")
        with open(file_path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2, ensure_ascii=False, sort_keys=True, default=_jsonable)
        return {"success": True, "file_path": file_path}
    except OSError as e:
        return {"error": str(e)}


def write_jsonl(file_path, records):
    """One JSON object per line, e.g. the ADMM residual trace."""
    try:
        ensure_output_dir(os.path.dirname(file_path) or ".")
        with open(file_path, 'w', encoding='utf-8') as f:
            for rec in records:
                f.write(json.dumps(rec, sort_keys=True, default=_jsonable) + "\n")
        return {"success": True, "file_path": file_path}
    except OSError as e:
        return {"error": str(e)}


def write_samples(file_path, samples, column_names, fmt="csv"):
    samples = np.asarray(samples, dtype=float)
    if fmt == "json":
        return write_json(file_path, {"columns": list(column_names), "samples": samples})
    return write_csv(file_path, list(column_names), samples.tolist())


def write_table(file_path, header, rows, fmt="csv"):
    """Rows as CSV, or as a JSON list of objects keyed by the header."""
    if fmt == "json":
        return write_json(file_path, {"rows": [dict(zip(header, row)) for row in rows]})
    return write_csv(file_path, header, rows)
