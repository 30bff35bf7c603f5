"""Deterministic CSV and manifest output.

Floats are written with ``repr`` (shortest round-trip form), so re-running a
configuration reproduces every output byte for byte.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .. import __version__
from .config import config_to_dict


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    """Write rows (sequences matching ``header``) as a deterministic CSV."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def write_manifest(path, cfg, extras=None):
    """Resolved config + provenance; round-trips through the config parser."""
    payload = {
        "version": __version__,
        "config": config_to_dict(cfg),
    }
    if extras:
        payload.update(extras)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path
