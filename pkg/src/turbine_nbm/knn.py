"""Multi-target K-nearest-neighbours regression (brute-force scan)."""

import numpy as np

from . import kernels
from .model_core import ModelFormatError, ModelMetadata, Regressor, register_family


@register_family
class KnnModel(Regressor):
    """Stores the normalised training set verbatim; prediction is a full scan.

    Distances are Euclidean. When several rows tie at the K-th smallest
    distance, lower training-row indices are taken first.
    """

    family = "knn"

    def __init__(self, X, Y, K, metadata=None):
        X = np.array(X, dtype=np.float64)
        Y = np.array(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        super().__init__(X.shape[1], Y.shape[1], metadata)
        X.flags.writeable = False
        Y.flags.writeable = False
        self.X, self.Y, self.K = X, Y, int(K)

    @property
    def m(self):
        return self.X.shape[0]

    def _predict(self, X):
        return kernels.knn_predict(self.X, self.Y, X, self.K)

    def _write_payload(self, w):
        w.u32(self.m)
        w.u32(self.K)
        w.array(self.X)
        w.array(self.Y)

    @classmethod
    def _read_payload(cls, r, meta, k, n):
        m, K = r.u32(), r.u32()
        if not 1 <= K <= m:
            raise ModelFormatError(f"K={K} invalid for {m} stored rows", r.offset)
        X = r.array(m, k)
        Y = r.array(m, n)
        return cls(X, Y, K, meta)


def fit_knn(X, Y, K: int = 45) -> KnnModel:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError(f"shape mismatch: X {X.shape}, Y {Y.shape}")
    m = X.shape[0]
    if not 1 <= K <= m:
        raise ValueError(f"K must satisfy 1 <= K <= m={m}, got {K}")
    return KnnModel(X, Y, K, ModelMetadata("knn", {"K": int(K)}))


def predict_knn(model: KnnModel, x) -> np.ndarray:
    return model.predict_row(x)
