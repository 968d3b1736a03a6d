"""On-disk cache for Gram matrices.

Layout: ``<root>/gram/<hash>.bin`` (raw little-endian float64, C order) and a
``<hash>.json`` sidecar with the parameters that produced it.  Writes go to a
temporary file in the same directory and are renamed into place.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

ENV_VAR = "HETHEAT_CACHE_DIR"


def default_cache_dir() -> Path:
    return Path(os.environ.get(ENV_VAR, "cache"))


def content_key(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


class GramCache:
    def __init__(self, root: str | os.PathLike | None = None):
        self.root = Path(root) if root is not None else default_cache_dir()
        self.hits = 0
        self.misses = 0

    @property
    def directory(self) -> Path:
        return self.root / "gram"

    def _paths(self, key: str) -> tuple[Path, Path]:
        return self.directory / f"{key}.bin", self.directory / f"{key}.json"

    def load(self, params: dict) -> np.ndarray | None:
        key = content_key(params)
        bin_path, json_path = self._paths(key)
        if not (bin_path.exists() and json_path.exists()):
            self.misses += 1
            return None
        meta = json.loads(json_path.read_text())
        n = int(meta["shape"][0])
        data = np.fromfile(bin_path, dtype="<f8")
        if data.size != n * n:
            self.misses += 1
            return None
        self.hits += 1
        return data.reshape(n, n)

    def store(self, params: dict, matrix: np.ndarray) -> Path:
        key = content_key(params)
        bin_path, json_path = self._paths(key)
        self.directory.mkdir(parents=True, exist_ok=True)
        _atomic_write(bin_path, np.ascontiguousarray(matrix, dtype="<f8").tobytes())
        meta = dict(params, shape=list(matrix.shape), key=key)
        _atomic_write(json_path, json.dumps(meta, sort_keys=True, indent=1).encode())
        return bin_path


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
