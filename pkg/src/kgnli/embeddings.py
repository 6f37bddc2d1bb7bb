"""Frozen word and concept vector tables in the GloVe text format."""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ParseError

OOV_SCALE = 0.1


class EmbeddingTable:
    """Read-only ``key -> vector`` map with seeded vectors for unknown keys.

    Vectors are plain arrays, never parameters, so no gradient reaches them.
    """

    def __init__(self, dim: int, vectors: dict[str, np.ndarray] | None = None,
                 oov_seed: int = 0):
        self.dim = int(dim)
        self.oov_seed = int(oov_seed)
        self.vectors: dict[str, np.ndarray] = {}
        for key, vec in (vectors or {}).items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise ValueError(f"vector for {key!r} has shape {vec.shape}, expected ({dim},)")
            self.vectors[key] = vec
        self._oov: dict[str, np.ndarray] = {}

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def lookup(self, key: str) -> np.ndarray:
        vec = self.vectors.get(key)
        if vec is not None:
            return vec
        vec = self._oov.get(key)
        if vec is None:
            digest = hashlib.blake2b(f"{self.oov_seed}\x00{key}".encode("utf-8"),
                                     digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.uniform(-OOV_SCALE, OOV_SCALE, size=self.dim)
            self._oov[key] = vec
        return vec

    def matrix(self, keys) -> np.ndarray:
        """Rows of looked-up vectors, shape ``len(keys) x dim``."""
        if not keys:
            return np.zeros((0, self.dim))
        return np.stack([self.lookup(k) for k in keys])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key, vec in self.vectors.items():
                fh.write(key + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def load_embeddings(path, expected_dim: int, oov_seed: int = 0) -> EmbeddingTable:
    """Parse ``key v1 ... vd`` lines. Duplicate keys keep the first vector."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != expected_dim + 1:
                raise ParseError(f"expected {expected_dim + 1} fields, got {len(fields)}",
                                 path, lineno)
            try:
                vec = np.array([float(x) for x in fields[1:]])
            except ValueError:
                raise ParseError("non-numeric vector component", path, lineno) from None
            if not np.all(np.isfinite(vec)):
                raise ParseError("non-finite vector component", path, lineno)
            vectors.setdefault(fields[0], vec)
    return EmbeddingTable(expected_dim, vectors, oov_seed)
