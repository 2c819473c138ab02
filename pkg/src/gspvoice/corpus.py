"""Embedding corpus file formats and the synthetic test corpus.

Binary layout: magic "EMB1", u32 N, u32 D (little-endian), then N*D
float32 values row-major. A whitespace-separated text loader is also
provided for hand-written fixtures.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DimensionMismatchError

MAGIC = b"EMB1"


def write_corpus(path, corpus: np.ndarray) -> None:
    x = np.asarray(corpus, dtype=np.float32)
    if x.ndim != 2:
        raise DimensionMismatchError("corpus must be an N x D matrix")
    n, d = x.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(x.tobytes(order="C"))


def read_corpus(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad corpus magic {magic!r}, expected {MAGIC!r}")
        n, d = struct.unpack("<II", fh.read(8))
        raw = fh.read(n * d * 4)
        if len(raw) != n * d * 4:
            raise ValueError("corpus file truncated")
        data = np.frombuffer(raw, dtype="<f4")
    return data.reshape(n, d).astype(np.float64)


def read_corpus_text(path) -> np.ndarray:
    """Load a plain-text corpus, one whitespace-separated row per line."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split()])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from exc
    if not rows:
        raise ValueError("empty corpus file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DimensionMismatchError("inconsistent row widths in text corpus")
    return np.array(rows, dtype=np.float64)


def load_corpus(path) -> np.ndarray:
    """Dispatch on the magic bytes: binary EMB1 or plain text."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == MAGIC:
        return read_corpus(path)
    return read_corpus_text(path)


def make_synthetic_corpus(
    n: int = 5000, d: int = 256, n_clusters: int = 24, seed: int = 0
) -> np.ndarray:
    """Seeded Gaussian-mixture corpus with rows L2-normalized.

    Cluster centers stand in for distinct speakers; anisotropic per-axis
    scales give the corpus a non-trivial principal-component spectrum.
    """
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_clusters, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    # Decaying axis scales concentrate variance in the leading directions.
    scales = 0.35 * np.exp(-np.arange(d) / (d / 8.0))
    assignment = rng.integers(0, n_clusters, size=n)
    x = centers[assignment] + rng.normal(size=(n, d)) * scales
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x
