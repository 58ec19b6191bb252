"""Columnar numeric text files shared by every artifact writer.

Layout: ``#``-prefixed metadata lines of the form ``# key: value``, one
``#``-prefixed line with whitespace-separated column names, then the rows.
Floats are written with 17 significant digits so files round-trip exactly
and are byte-identical for identical inputs.
"""

import warnings

import numpy as np

FLOAT_FMT = "%.17g"


def write_columns(path, data, names, meta=None, fmt=FLOAT_FMT):
    data = np.asarray(data)
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[1] != len(names):
        raise ValueError(f"{data.shape[1]} columns but {len(names)} names")
    lines = [f"{key}: {_format_meta(value)}" for key, value in (meta or {}).items()]
    lines.append(" ".join(names))
    with open(path, "w") as fh:
        np.savetxt(fh, data, fmt=fmt, header="\n".join(lines), comments="# ")


def read_columns(path, dtype=float):
    """Return ``(data, names, meta)``; ``meta`` values are raw strings."""
    meta = {}
    header = []
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            header.append(line[1:].strip())
    names = header[-1].split() if header else []
    for line in header[:-1]:
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*input contained no data")
        data = np.loadtxt(path, comments="#", dtype=dtype, ndmin=2)
    if data.size == 0:
        data = np.empty((0, len(names)), dtype=dtype)
    return data, names, meta


def parse_floats(text):
    return np.array([float(v) for v in text.split()], dtype=float)


def _format_meta(value):
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(_format_scalar(v) for v in np.ravel(value))
    return _format_scalar(value)


def _format_scalar(value):
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % value
    return str(value)
