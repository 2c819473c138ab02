"""Speaker embedding space, PCA parametrization, and slider-axis geometry.

The control space exposed to participants is a K-dimensional PCA
parametrization of a speaker embedding corpus; every slider moves one
principal-component coordinate over an equally spaced grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateAxisError,
    DegenerateCorpusError,
    DegeneratePointError,
    DimensionMismatchError,
)

NORM_TOL = 1e-6
ZERO_NORM_TOL = 1e-9

BASIS_FORMAT_VERSION = 1


def _as_vector(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatchError(f"expected 1-D vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class SpeakerEmbedding:
    """Unit-norm voice representation of dimension D."""

    values: np.ndarray

    def __post_init__(self):
        v = _as_vector(self.values)
        object.__setattr__(self, "values", v)
        n = float(np.linalg.norm(v))
        if abs(n - 1.0) > NORM_TOL:
            raise ValueError(f"embedding norm {n} deviates from 1 by more than {NORM_TOL}")

    @classmethod
    def from_vector(cls, values) -> "SpeakerEmbedding":
        """Normalize an arbitrary vector onto the unit sphere."""
        v = _as_vector(values)
        n = float(np.linalg.norm(v))
        if n < ZERO_NORM_TOL:
            raise DegeneratePointError("cannot normalize a (near) zero vector")
        return cls(v / n)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class StyleEmbedding:
    """Prosody representation; held at the zero vector during experiments.

    The zero default is passed through un-normalized: a zero vector has no
    direction to normalize onto.
    """

    values: np.ndarray = field(default=None)
    dim: int = 256

    def __post_init__(self):
        if self.values is None:
            v = np.zeros(self.dim, dtype=np.float64)
        else:
            v = _as_vector(self.values)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dim", v.shape[0])

    @classmethod
    def zero(cls, dim: int = 256) -> "StyleEmbedding":
        return cls(np.zeros(dim, dtype=np.float64))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)


@dataclass(frozen=True)
class PcaBasis:
    """Affine orthonormal basis of the K-dimensional control space.

    mean: D-vector corpus mean.
    components: K x D matrix with orthonormal rows, ordered by variance.
    sigma: per-component standard deviation (embedding units), non-increasing.
    explained_variance_ratio: fraction of corpus variance per component.
    """

    mean: np.ndarray
    components: np.ndarray
    sigma: np.ndarray
    explained_variance_ratio: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean)
        comps = np.asarray(self.components, dtype=np.float64)
        sigma = _as_vector(self.sigma)
        evr = _as_vector(self.explained_variance_ratio)
        if comps.ndim != 2:
            raise DimensionMismatchError("components must be a K x D matrix")
        k, d = comps.shape
        if mean.shape[0] != d or sigma.shape[0] != k or evr.shape[0] != k:
            raise DimensionMismatchError("basis field shapes disagree")
        gram = comps @ comps.T
        if not np.allclose(gram, np.eye(k), atol=1e-7):
            raise ValueError("component rows must be orthonormal")
        if np.any(np.diff(sigma) > 1e-12):
            raise ValueError("sigma must be non-increasing")
        if np.any(evr < -1e-12) or evr.sum() > 1.0 + 1e-8:
            raise ValueError("explained_variance_ratio must lie in [0,1] and sum to at most 1")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "explained_variance_ratio", evr)

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.components.shape[1]

    def to_dict(self) -> dict:
        return {
            "format": "pca-basis",
            "version": BASIS_FORMAT_VERSION,
            "k": self.k,
            "dim": self.dim,
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "sigma": self.sigma.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PcaBasis":
        if doc.get("format") != "pca-basis":
            raise ValueError("not a pca-basis document")
        if doc.get("version") != BASIS_FORMAT_VERSION:
            raise ValueError(f"unsupported pca-basis version {doc.get('version')}")
        return cls(
            mean=np.array(doc["mean"], dtype=np.float64),
            components=np.array(doc["components"], dtype=np.float64),
            sigma=np.array(doc["sigma"], dtype=np.float64),
            explained_variance_ratio=np.array(doc["explained_variance_ratio"], dtype=np.float64),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "PcaBasis":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class LatentPoint:
    """K-vector of principal-component coordinates (embedding units)."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _as_vector(self.coords))

    @property
    def k(self) -> int:
        return self.coords.shape[0]

    def with_coord(self, dim: int, value: float) -> "LatentPoint":
        c = self.coords.copy()
        c[dim] = value
        return LatentPoint(c)


@dataclass(frozen=True)
class SliderAxis:
    """One principal component exposed as an equally spaced slider grid."""

    dimension: int
    lo: float
    hi: float
    resolution: int = 31

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("slider axis requires lo < hi")
        if self.resolution < 2:
            raise ValueError("slider resolution must be at least 2")

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.resolution - 1)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.resolution)


def fit_pca(corpus: np.ndarray, k: int) -> PcaBasis:
    """Fit the top-k principal components of an N x D embedding corpus.

    Sign convention: each component's largest-magnitude entry is made
    positive so repeated fits are reproducible.
    """
    x = np.asarray(corpus, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatchError("corpus must be an N x D matrix")
    n, d = x.shape
    if n < 2:
        raise DimensionMismatchError("corpus needs at least two rows")
    if k < 1 or k > min(n - 1, d):
        raise DimensionMismatchError(f"k={k} exceeds min(N-1, D)={min(n - 1, d)}")

    mean = x.mean(axis=0)
    centered = x - mean
    total_var = float(np.sum(centered**2)) / (n - 1)
    if total_var < 1e-18:
        raise DegenerateCorpusError("corpus has zero variance in all directions")

    # Thin SVD of the centered corpus; singular values give component stds.
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    variances = (s**2) / (n - 1)
    components = vt[:k]
    sigma = np.sqrt(variances[:k])
    evr = variances[:k] / total_var

    flip = np.sign(components[np.arange(k), np.argmax(np.abs(components), axis=1)])
    flip[flip == 0] = 1.0
    components = components * flip[:, None]

    return PcaBasis(mean=mean, components=components, sigma=sigma, explained_variance_ratio=evr)


def project(basis: PcaBasis, e: SpeakerEmbedding) -> LatentPoint:
    """Map an embedding to its PC coordinates around the corpus mean."""
    if e.dim != basis.dim:
        raise DimensionMismatchError(f"embedding dim {e.dim} != basis dim {basis.dim}")
    return LatentPoint(basis.components @ (e.values - basis.mean))


def project_vector(basis: PcaBasis, v: np.ndarray) -> LatentPoint:
    """Project a raw (not necessarily unit-norm) D-vector."""
    v = _as_vector(v)
    if v.shape[0] != basis.dim:
        raise DimensionMismatchError(f"vector dim {v.shape[0]} != basis dim {basis.dim}")
    return LatentPoint(basis.components @ (v - basis.mean))


def reconstruct_raw(basis: PcaBasis, p: LatentPoint) -> np.ndarray:
    """Inverse of project, before renormalization."""
    if p.k != basis.k:
        raise DimensionMismatchError(f"point has {p.k} coords, basis expects {basis.k}")
    return basis.mean + p.coords @ basis.components


def reconstruct(basis: PcaBasis, p: LatentPoint) -> SpeakerEmbedding:
    """Map PC coordinates back to a unit-norm embedding."""
    raw = reconstruct_raw(basis, p)
    n = float(np.linalg.norm(raw))
    if n < ZERO_NORM_TOL:
        raise DegeneratePointError("reconstructed embedding has (near) zero norm")
    return SpeakerEmbedding(raw / n)


def slider_axis(
    basis: PcaBasis, dim: int, span_sigma: float = 3.0, resolution: int = 31
) -> SliderAxis:
    """Build the slider grid for one component, spanning +-span_sigma stds."""
    if dim < 0 or dim >= basis.k:
        raise DimensionMismatchError(f"dimension {dim} out of range for k={basis.k}")
    s = float(basis.sigma[dim])
    if s <= 0.0:
        raise DegenerateAxisError(f"component {dim} has zero variance")
    half = span_sigma * s
    return SliderAxis(dimension=dim, lo=-half, hi=half, resolution=resolution)


def discretize(axis: SliderAxis, value: float) -> int:
    """Index of the grid position nearest to value; ties round toward hi."""
    v = min(max(float(value), axis.lo), axis.hi)
    idx = int(np.floor((v - axis.lo) / axis.step + 0.5))
    return min(idx, axis.resolution - 1)


def grid_value(axis: SliderAxis, index: int) -> float:
    """Coordinate of grid position `index`."""
    if index < 0 or index >= axis.resolution:
        raise IndexError(f"grid index {index} out of [0, {axis.resolution})")
    return axis.lo + index * (axis.hi - axis.lo) / (axis.resolution - 1)


def disentanglement_losses(x, x_hat) -> tuple[float, float]:
    """Cosine losses used to keep style embeddings speaker-agnostic.

    Returns (disc_loss, gen_loss) = (1 - cos(x, x_hat), max(0, cos(x, x_hat))).
    """
    xv = np.asarray(getattr(x, "values", x), dtype=np.float64)
    yv = np.asarray(getattr(x_hat, "values", x_hat), dtype=np.float64)
    if xv.shape != yv.shape:
        raise DimensionMismatchError("vectors must share a dimension")
    nx, ny = np.linalg.norm(xv), np.linalg.norm(yv)
    if nx < ZERO_NORM_TOL or ny < ZERO_NORM_TOL:
        raise DegeneratePointError("cosine undefined for zero-norm input")
    c = float(np.dot(xv, yv) / (nx * ny))
    c = min(1.0, max(-1.0, c))
    return 1.0 - c, max(0.0, c)
