"""Eigenface recognition: train a face-space basis, project probes, identify.

Training mean-centers the preprocessed gallery and takes the eigenvectors
of the small MxM Gram matrix instead of the DxD covariance (M images,
D = raster pixels, M << D); each small eigenvector maps to a unit-norm
eigenface. A probe is identified by nearest-neighbor distance between
face-space projections, gated by a similarity threshold.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .imaging import GrayImage, equalize_histogram, resize_bilinear

DEFAULT_RASTER = (64, 64)
DEFAULT_K_MAX = 16
DEFAULT_THETA = 0.6

# fraction of trace below which a Gram eigenvalue is treated as noise
EIGENVALUE_FLOOR = 1e-10

_MODEL_MAGIC = b"DIANEEIG1\n"


class TrainingError(ValueError):
    """Base class for training failures."""


class InsufficientGallery(TrainingError):
    """Fewer than two training images."""


class DegenerateGallery(TrainingError):
    """No variance survives mean-centering (e.g. all images identical)."""


class EmptyGallery(ValueError):
    """Identification attempted against a model with no gallery entries."""


class ModelFormatError(ValueError):
    """Persisted model file is unreadable."""


@dataclass(frozen=True)
class IdentifyResult:
    """Outcome of a threshold-gated nearest-neighbor identification.

    label is None for an unknown probe; distance is the face-space distance
    to the nearest gallery entry either way, and similarity = 1/(1+distance).
    """

    label: str | None
    distance: float
    similarity: float

    @property
    def known(self) -> bool:
        return self.label is not None


class EigenModel:
    """Trained recognizer: mean face, eigenface basis, and gallery projections.

    basis rows are unit-norm, pairwise-orthogonal eigenfaces in descending
    eigenvalue order; every gallery signature has length k = len(basis).
    """

    def __init__(self, mean, basis, eigenvalues, gallery, raster_w, raster_h):
        self.mean = mean                  # (D,) float64
        self.basis = basis                # (k, D) float64
        self.eigenvalues = eigenvalues    # (k,) float64, positive, non-increasing
        self.gallery = gallery            # list of (label, (k,) float64 weights)
        self.raster_w = raster_w
        self.raster_h = raster_h

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.raster_w * self.raster_h


def preprocess(img: GrayImage, raster_w: int, raster_h: int) -> np.ndarray:
    """Resize to the canonical raster, equalize, flatten to [0,1] float64."""
    face = equalize_histogram(resize_bilinear(img, raster_w, raster_h))
    return face.pixels.astype(np.float64).ravel() / 255.0


def train(gallery: list[tuple[GrayImage, str]], k_max: int = DEFAULT_K_MAX,
          raster: tuple[int, int] = DEFAULT_RASTER) -> EigenModel:
    """Build an EigenModel from labelled face images.

    The Gram matrix of mean-centered face vectors is diagonalized; the top
    eigenvectors (eigenvalue above EIGENVALUE_FLOOR * trace, at most M-1,
    at most k_max) are mapped back to pixel space and normalized.
    """
    m = len(gallery)
    if m < 2:
        raise InsufficientGallery(f"need at least 2 training images, got {m}")
    raster_w, raster_h = raster
    vectors = np.stack([preprocess(img, raster_w, raster_h)
                        for img, _ in gallery])       # (M, D)
    labels = [label for _, label in gallery]
    mean = vectors.mean(axis=0)
    centered = vectors - mean                          # rows are the Phi_i
    gram = centered @ centered.T                       # (M, M)
    trace = float(np.trace(gram))
    if trace <= 0.0:
        raise DegenerateGallery("gallery has no variance after mean-centering")
    evals, evecs = np.linalg.eigh(gram)                # ascending
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    floor = EIGENVALUE_FLOOR * trace
    kept = int(np.sum(evals >= floor))
    kept = min(kept, m - 1)                            # Gram rank bound
    if kept < 1:
        raise DegenerateGallery("no eigenvalue above the noise floor")
    k = min(k_max, kept)
    basis = evecs[:, :k].T @ centered                  # (k, D), rows A.v_i
    basis /= np.linalg.norm(basis, axis=1, keepdims=True)
    # per-image products so a stored signature is bit-identical to project()
    entries = [(labels[i], basis @ centered[i]) for i in range(m)]
    return EigenModel(mean, basis, evals[:k].copy(), entries, raster_w, raster_h)


def project(m: EigenModel, img: GrayImage) -> np.ndarray:
    """Face-space signature of an image: basis . (preprocess(img) - mean)."""
    phi = preprocess(img, m.raster_w, m.raster_h) - m.mean
    return m.basis @ phi


def reconstruct(m: EigenModel, signature: np.ndarray) -> GrayImage:
    """Render mean + signature . basis back to the canonical raster."""
    vec = m.mean + np.asarray(signature, dtype=np.float64) @ m.basis
    pixels = np.floor(np.clip(vec, 0.0, 1.0) * 255.0 + 0.5)
    return GrayImage(pixels.reshape(m.raster_h, m.raster_w).astype(np.uint8))


def identify(m: EigenModel, img: GrayImage,
             theta: float = DEFAULT_THETA) -> IdentifyResult:
    """Nearest-gallery decision gated by similarity 1/(1+distance) > theta.

    Exact distance ties resolve to the lexicographically smallest label,
    so repeated calls are fully deterministic.
    """
    if not m.gallery:
        raise EmptyGallery("model has no gallery entries")
    omega = project(m, img)
    best_distance = None
    best_label = None
    for label, signature in m.gallery:
        d = float(np.linalg.norm(omega - signature))
        if best_distance is None or d < best_distance or (
                d == best_distance and label < best_label):
            best_distance, best_label = d, label
    similarity = 1.0 / (1.0 + best_distance)
    if similarity > theta:
        return IdentifyResult(best_label, best_distance, similarity)
    return IdentifyResult(None, best_distance, similarity)


def reconstruction_error(m: EigenModel, img: GrayImage) -> float:
    """Distance from face space: ||phi - basis^T.(basis.phi)||.

    Diagnostic only; it does not gate identification.
    """
    phi = preprocess(img, m.raster_w, m.raster_h) - m.mean
    omega = m.basis @ phi
    return float(np.linalg.norm(phi - omega @ m.basis))


def save_model(m: EigenModel) -> bytes:
    """Serialize to a versioned little-endian binary blob.

    The layout is fixed so save -> load -> save is byte-identical.
    """
    out = bytearray(_MODEL_MAGIC)
    out += struct.pack("<IIII", m.raster_w, m.raster_h, m.k, len(m.gallery))
    out += np.ascontiguousarray(m.mean, dtype="<f8").tobytes()
    out += np.ascontiguousarray(m.eigenvalues, dtype="<f8").tobytes()
    out += np.ascontiguousarray(m.basis, dtype="<f8").tobytes()
    for label, signature in m.gallery:
        encoded = label.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += np.ascontiguousarray(signature, dtype="<f8").tobytes()
    return bytes(out)


def load_model(data: bytes) -> EigenModel:
    """Inverse of save_model."""
    if data[: len(_MODEL_MAGIC)] != _MODEL_MAGIC:
        raise ModelFormatError("bad model magic")
    off = len(_MODEL_MAGIC)
    try:
        raster_w, raster_h, k, gallery_len = struct.unpack_from("<IIII", data, off)
        off += 16
        dim = raster_w * raster_h
        mean = np.frombuffer(data, "<f8", dim, off).copy()
        off += dim * 8
        eigenvalues = np.frombuffer(data, "<f8", k, off).copy()
        off += k * 8
        basis = np.frombuffer(data, "<f8", k * dim, off).reshape(k, dim).copy()
        off += k * dim * 8
        gallery = []
        for _ in range(gallery_len):
            (label_len,) = struct.unpack_from("<H", data, off)
            off += 2
            label = data[off : off + label_len].decode("utf-8")
            off += label_len
            signature = np.frombuffer(data, "<f8", k, off).copy()
            off += k * 8
            gallery.append((label, signature))
    except (struct.error, ValueError) as exc:
        raise ModelFormatError(f"truncated or corrupt model: {exc}") from None
    if off != len(data):
        raise ModelFormatError(f"{len(data) - off} trailing bytes")
    return EigenModel(mean, basis, eigenvalues, gallery, raster_w, raster_h)
