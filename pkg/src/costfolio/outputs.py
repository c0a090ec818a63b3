"""Atomic file output, JSON normalization and run manifests."""

import hashlib
import json
import math
import os
import tempfile
from dataclasses import asdict, is_dataclass

import numpy as np


def jsonable(obj):
    """Recursively convert to JSON-safe builtins; non-finite floats become ``None``."""
    if is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "as_list"):
            return jsonable(obj.as_list())
        return jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj):
    return json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` through a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else bytes(data)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(raw).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def csv_text(header, rows):
    """CSV with ``repr`` floats so values round-trip exactly."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
                              for v in row))
    return "\n".join(lines) + "\n"


class RunWriter:
    """Collects outputs in memory and writes them, plus a manifest, only on success."""

    def __init__(self, out_dir, command, config, inputs=(), seed=None, version="0"):
        self.out_dir = out_dir
        self.command = command
        # the output location is not part of what determines the outputs
        self.config = {k: v for k, v in config.items() if k != "out"}
        self.inputs = {os.fspath(p): sha256_file(p) for p in inputs}
        self.seed = seed
        self.version = version
        self.files = {}

    def add_input(self, path):
        self.inputs[os.fspath(path)] = sha256_file(path)

    def add(self, name, data):
        self.files[name] = data

    def commit(self):
        hashes = {}
        for name in sorted(self.files):
            hashes[name] = atomic_write(os.path.join(self.out_dir, name), self.files[name])
        manifest = {"command": self.command, "version": self.version, "seed": self.seed,
                    "config": self.config, "inputs": self.inputs, "outputs": hashes}
        atomic_write(os.path.join(self.out_dir, "manifest.json"), dumps(manifest))
        return hashes
