"""Deterministic CSV output.

Floats are written with ``repr`` (shortest round-trip form), columns in a
fixed order and rows in the order given, so identical inputs give
byte-identical files.  Non-finite numbers are rejected rather than written.
"""

from __future__ import annotations

import csv
import io
import math
import os

import numpy as np

SCHEMA_VERSION = 1

SWEEP_COLUMNS = (
    "schema_version", "config_id", "point", "axis", "value", "l_csi", "p_csi", "bwp", "nrb",
    "drop", "scheme", "user", "rsrp_dbm", "snr_db", "se", "eff_sse", "sum_eff_sse",
    "sinr_p10_db", "sinr_p50_db", "sinr_p90_db", "feedback_bits", "overhead", "n_scheduled",
)
SWEEP_SUMMARY_COLUMNS = ("schema_version", "config_id", "axis", "value", "scheme", "mean_eff_sse", "drops")
CDF_COLUMNS = ("schema_version", "config_id", "kind", "percentile", "rsrp_dbm")
SSB_SUMMARY_COLUMNS = ("schema_version", "config_id", "kind", "mean_rsrp_dbm", "median_rsrp_dbm", "n_users")
TRANSFER_COLUMNS = ("schema_version", "config_id", "bin_lo_db", "bin_hi_db", "agnostic", "fine_tuned")


class RecordError(ValueError):
    """A record cannot be written (missing column or non-finite value)."""


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            raise RecordError(f"non-finite value {value!r}")
        return repr(value)
    return str(value)


def render_csv(rows, columns, config_id=None):
    """CSV text for ``rows`` (dicts); ``schema_version``/``config_id`` are filled in when listed."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for i, row in enumerate(rows):
        row = dict(row)
        if "schema_version" in columns:
            row.setdefault("schema_version", SCHEMA_VERSION)
        if "config_id" in columns and config_id is not None:
            row.setdefault("config_id", config_id)
        missing = [c for c in columns if c not in row]
        if missing:
            raise RecordError(f"row {i} lacks columns {missing}")
        try:
            writer.writerow([format_value(row[c]) for c in columns])
        except RecordError as exc:
            raise RecordError(f"row {i}: {exc}") from None
    return buf.getvalue()


def write_csv(path, rows, columns, config_id=None):
    """Render and write atomically; returns the path."""
    text = render_csv(rows, columns, config_id)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
