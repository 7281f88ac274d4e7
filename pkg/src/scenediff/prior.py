"""Translation model from text-space embeddings to image-space embeddings.

Segment vectors are image embeddings during training but text embeddings at
inference; the prior closes that domain gap. At toy scale the gap is an
orthogonal rotation by construction, so a least-squares linear map recovers
it; the estimator interface leaves room for richer models.

Checkpoint format (little-endian): magic ``EPRI``, u32 version, u32 d,
u8 has_bias, then the d*d weight matrix row-major as float64, then the bias.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

_MAGIC = b"EPRI"
_VERSION = 1


class PriorError(ValueError):
    pass


class EmbeddingPrior(BaseEstimator, TransformerMixin):
    """Least-squares linear map between embedding spaces.

    Parameters
    ----------
    fit_bias:
        Include an intercept term. Off by default: both spaces are unit-norm
        and approximately centered, and a pure linear map is what the toy
        misalignment calls for.
    """

    def __init__(self, fit_bias: bool = False):
        self.fit_bias = fit_bias

    def fit(self, X, Y):
        """Fit on paired embeddings (rows of X map to rows of Y)."""
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if X.ndim != 2 or X.shape != Y.shape:
            raise PriorError(f"need matching n x d pair arrays, got {X.shape} and {Y.shape}")
        n, d = X.shape
        if n < d:
            raise PriorError(f"rank-deficient training set: {n} pairs for d={d}")
        A = np.hstack([X, np.ones((n, 1))]) if self.fit_bias else X
        coef, _, _, _ = np.linalg.lstsq(A, Y, rcond=None)
        if self.fit_bias:
            self.weights_ = coef[:-1].T
            self.bias_ = coef[-1]
        else:
            self.weights_ = coef.T
            self.bias_ = np.zeros(d)
        if not np.isfinite(self.weights_).all():
            raise PriorError("degenerate training set produced non-finite weights")
        self.d_embed_ = d
        resid = X @ self.weights_.T + self.bias_ - Y
        self.training_loss_ = float(np.mean(np.sum(resid**2, axis=1)))
        self.fingerprint_ = hashlib.sha256(
            X.tobytes() + Y.tobytes() + struct.pack("<?", self.fit_bias)
        ).hexdigest()[:16]
        return self

    def transform(self, v: np.ndarray) -> np.ndarray:
        """Map one vector (or an n x d batch) and re-normalize to unit length."""
        self._check_fitted()
        v = np.asarray(v, dtype=np.float64)
        single = v.ndim == 1
        batch = v[None, :] if single else v
        if batch.shape[1] != self.d_embed_:
            raise PriorError(f"dimension mismatch: got {batch.shape[1]}, model is d={self.d_embed_}")
        out = batch @ self.weights_.T + self.bias_
        norms = np.linalg.norm(out, axis=1)
        if (norms == 0.0).any():
            raise PriorError("mapped vector has zero norm; cannot re-normalize")
        out = out / norms[:, None]
        return out[0] if single else out

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise PriorError("prior is not fitted")

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        self._check_fitted()
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<IIB", _VERSION, self.d_embed_, int(self.fit_bias)))
            f.write(self.weights_.astype("<f8").tobytes(order="C"))
            f.write(self.bias_.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "EmbeddingPrior":
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:4] != _MAGIC:
            raise PriorError("not a prior checkpoint")
        version, d, has_bias = struct.unpack_from("<IIB", blob, 4)
        if version != _VERSION:
            raise PriorError(f"unsupported prior checkpoint version {version}")
        off = 4 + 9
        w = np.frombuffer(blob, dtype="<f8", count=d * d, offset=off).reshape(d, d).copy()
        b = np.frombuffer(blob, dtype="<f8", count=d, offset=off + d * d * 8).copy()
        model = cls(fit_bias=bool(has_bias))
        model.weights_ = w
        model.bias_ = b
        model.d_embed_ = d
        model.training_loss_ = float("nan")
        model.fingerprint_ = "loaded"
        return model


def train_prior(pairs, fit_bias: bool = False) -> EmbeddingPrior:
    """Fit a prior from (text_embedding, image_embedding) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise PriorError("no training pairs")
    X = np.stack([p[0] for p in pairs])
    Y = np.stack([p[1] for p in pairs])
    return EmbeddingPrior(fit_bias=fit_bias).fit(X, Y)


def apply_prior(model: EmbeddingPrior, v: np.ndarray) -> np.ndarray:
    return model.transform(v)
