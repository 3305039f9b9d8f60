"""Linear dimensionality reduction over population weight matrices.

Three fitting routes share one model type: exact SVD of the centered data,
single-pass batched (incremental) updates, and the dual/Gram-matrix route
that never holds more than a micro-batch of rows next to the n x n Gram
matrix. Eigenvalues are squared singular values of the centered data matrix
(equal to Gram eigenvalues), not variance-normalized. Accumulation is
float64 throughout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ShapeError
from .rng import make_rng

PCA_MAGIC = b"DWFP"
PCA_VERSION = 1

RSVD_POWER_ITERS = 5
RSVD_OVERSAMPLE = 10


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray         # (d,)
    components: np.ndarray   # (d, k), orthonormal columns
    eigenvalues: np.ndarray  # (k,), descending, >= 0
    n_samples: int

    @property
    def latent_dim(self) -> int:
        return self.components.shape[1]

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    def explained_variance_ratio(self) -> np.ndarray:
        total = self.eigenvalues.sum()
        if total == 0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / total


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Make each component's largest-magnitude entry positive."""
    if components.shape[1] == 0:
        return components
    idx = np.abs(components).argmax(axis=0)
    signs = np.sign(components[idx, np.arange(components.shape[1])])
    signs[signs == 0] = 1.0
    return components * signs


def default_latent_dim(n_samples: int, cap: int = 99) -> int:
    """Rank bound: at most n-1 meaningful directions, capped at 99."""
    return min(n_samples - 1, cap)


def fit_standard(x: np.ndarray, k: int) -> PcaModel:
    """Exact PCA via SVD of the centered sample matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ArgumentError("x must be a 2-D sample matrix")
    n, d = x.shape
    if not 0 <= k <= min(n - 1, d):
        raise ArgumentError(f"k={k} out of range for n={n}, d={d}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = _fix_signs(vt[:k].T)
    return PcaModel(mean=mean, components=comps,
                    eigenvalues=(s[:k] ** 2), n_samples=n)


def fit_incremental(batches, k: int) -> PcaModel:
    """Single-pass PCA over a stream of row blocks.

    Maintains the running mean and a rank-k factorization; each batch update
    stacks the current scaled basis, the centered batch, and a
    mean-correction row, then re-truncates via SVD.
    """
    mean = None
    n_seen = 0
    sv = None   # current singular values
    basis = None  # (r, d) rows = components scaled implicitly via sv
    for batch in batches:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[0] == 0:
            raise ArgumentError("each batch must be a nonempty 2-D block")
        m = batch.shape[0]
        bmean = batch.mean(axis=0)
        if mean is None:
            mean = bmean
            n_seen = m
            stack = batch - bmean
        else:
            new_n = n_seen + m
            corr = np.sqrt(n_seen * m / new_n) * (mean - bmean)
            stack = np.vstack([sv[:, None] * basis, batch - bmean, corr[None, :]])
            mean = (n_seen * mean + m * bmean) / new_n
            n_seen = new_n
        _, s, vt = np.linalg.svd(stack, full_matrices=False)
        r = min(len(s), n_seen - 1) if n_seen > 1 else len(s)
        sv, basis = s[:r], vt[:r]
    if mean is None:
        raise ArgumentError("empty batch stream")
    if n_seen < 2 or not 0 <= k <= n_seen - 1:
        raise ArgumentError(f"k={k} out of range for n={n_seen}")
    comps = _fix_signs(basis[:k].T)
    eig = np.zeros(k)
    eig[:min(k, len(sv))] = sv[:k] ** 2
    return PcaModel(mean=mean, components=comps, eigenvalues=eig, n_samples=n_seen)


def _iter_rows(rows):
    """Normalize a row source (array or callable returning an iterable)."""
    source = rows() if callable(rows) else rows
    for row in source:
        yield np.asarray(row, dtype=np.float64).ravel()


def _randomized_eigh(g: np.ndarray, k: int, seed: int = 0):
    """Top-k eigenpairs of a symmetric PSD matrix via randomized subspace
    iteration (fixed 5 power iterations, oversampling 10, seeded Gaussian)."""
    n = g.shape[0]
    p = min(n, k + RSVD_OVERSAMPLE)
    rng = make_rng(seed, "svd")
    q, _ = np.linalg.qr(g @ rng.standard_normal((n, p)))
    for _ in range(RSVD_POWER_ITERS):
        q, _ = np.linalg.qr(g @ q)
    small = q.T @ g @ q
    small = 0.5 * (small + small.T)
    evals, evecs = np.linalg.eigh(small)
    order = np.argsort(evals)[::-1][:k]
    return evals[order], q @ evecs[:, order]


def fit_dual(rows, k: int, micro_batch: int = 16,
             exact_eigen: bool = False, seed: int = 0) -> PcaModel:
    """Gram-matrix PCA in four passes: mean, streamed Gram blocks,
    eigendecomposition (exact or randomized), unit-norm back-projection.

    `rows` is an (n, d) array or a callable returning a fresh row iterator;
    at most `micro_batch` rows are materialized at once besides the n x n
    Gram matrix.
    """
    if micro_batch < 1:
        raise ArgumentError("micro_batch must be >= 1")

    # pass 1: mean
    n = 0
    mean = None
    for row in _iter_rows(rows):
        mean = row.copy() if mean is None else mean + row
        n += 1
    if n < 2:
        raise ArgumentError("need at least 2 rows")
    if not 0 <= k <= n - 1:
        raise ArgumentError(f"k={k} exceeds the rank bound n-1={n - 1}")
    mean /= n

    def centered_blocks():
        buf = []
        start = 0
        for row in _iter_rows(rows):
            buf.append(row - mean)
            if len(buf) == micro_batch:
                yield start, np.array(buf)
                start += len(buf)
                buf = []
        if buf:
            yield start, np.array(buf)

    # pass 2: Gram matrix, block by block
    gram = np.empty((n, n))
    for i0, bi in centered_blocks():
        for j0, bj in centered_blocks():
            if j0 < i0:
                continue
            block = bi @ bj.T
            gram[i0:i0 + len(bi), j0:j0 + len(bj)] = block
            gram[j0:j0 + len(bj), i0:i0 + len(bi)] = block.T

    # pass 3: eigendecomposition of G
    if exact_eigen:
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1][:k]
        evals, evecs = evals[order], evecs[:, order]
    else:
        evals, evecs = _randomized_eigh(gram, k, seed=seed)
    evals = np.clip(evals, 0.0, None)

    # pass 4: back-projection, normalized to unit length
    comps = np.zeros((mean.shape[0], k))
    for i0, bi in centered_blocks():
        comps += bi.T @ evecs[i0:i0 + len(bi), :]
    norms = np.linalg.norm(comps, axis=0)
    norms[norms == 0] = 1.0
    comps /= norms
    return PcaModel(mean=mean, components=_fix_signs(comps),
                    eigenvalues=evals, n_samples=n)


def transform(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """Project onto the latent space: P^T (x - mean). Accepts 1- or 2-D x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ShapeError(f"x has dim {x.shape[-1]}, model expects {model.input_dim}")
    return (x - model.mean) @ model.components


def inverse_transform(model: PcaModel, z: np.ndarray) -> np.ndarray:
    """Back to input space: P z + mean."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.latent_dim:
        raise ShapeError(f"z has dim {z.shape[-1]}, model expects {model.latent_dim}")
    return z @ model.components.T + model.mean


def save_pca(model: PcaModel, path) -> None:
    """Binary format: magic DWFP, version, n, d, k, then mean, components
    (column-major), eigenvalues as little-endian float64."""
    with open(path, "wb") as f:
        f.write(PCA_MAGIC)
        f.write(struct.pack("<IQQQ", PCA_VERSION, model.n_samples,
                            model.input_dim, model.latent_dim))
        f.write(model.mean.astype("<f8").tobytes())
        f.write(np.asfortranarray(model.components.astype("<f8")).tobytes(order="F"))
        f.write(model.eigenvalues.astype("<f8").tobytes())


def load_pca(path) -> PcaModel:
    with open(path, "rb") as f:
        if f.read(4) != PCA_MAGIC:
            raise ArgumentError(f"{path}: not a DWFP file")
        version, n, d, k = struct.unpack("<IQQQ", f.read(28))
        if version != PCA_VERSION:
            raise ArgumentError(f"{path}: unsupported version {version}")
        mean = np.frombuffer(f.read(8 * d), dtype="<f8")
        comps = np.frombuffer(f.read(8 * d * k), dtype="<f8").reshape(d, k, order="F")
        eig = np.frombuffer(f.read(8 * k), dtype="<f8")
    return PcaModel(mean=mean.copy(), components=comps.copy(),
                    eigenvalues=eig.copy(), n_samples=n)
