"""Linear centered kernel alignment between two activation matrices.

The computation is the classic six-step procedure:

1. feed identical inputs to both networks (rows correspond one-to-one),
2. extract an activation matrix ``H`` (``L x d``) from the same layer,
3. build the linear kernel ``K = H H^T``,
4. center it, ``C K C`` with ``C = I - 11^T / L``,
5. take HSIC as the Frobenius inner product of two centered kernels,
6. normalize: ``HSIC(S,T) / sqrt(HSIC(S,S) HSIC(T,T))``.

The ``1/(L-1)^2`` factor of the textbook HSIC estimator is omitted. It
cancels in the CKA ratio, so absolute HSIC values here depend on ``L``
while CKA does not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AlreadyCentered,
    ArchitectureMismatch,
    DegenerateActivations,
    DimensionMismatch,
    NonFiniteInput,
    NotCentered,
    RowCountMismatch,
    ValidationError,
)

DEGENERATE_HSIC = 1e-30
_VARIANCE_FLOOR = 1e-15


@dataclass(frozen=True, eq=False)
class ActivationMatrix:
    """Hidden activations, one row per sample (or token)."""

    data: np.ndarray
    tag: str = ""

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 2:
            raise ValidationError(f"activation matrix must be 2-D, got shape {data.shape}")
        if data.shape[0] < 2 or data.shape[1] < 1:
            raise ValidationError(
                f"activation matrix needs L >= 2 rows and d >= 1 columns, got {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise NonFiniteInput(f"activation matrix {self.tag!r} contains NaN/Inf")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def row_count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ActivationMatrix):
            return NotImplemented
        return self.tag == other.tag and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    data: np.ndarray
    centered: bool = False

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise ValidationError(f"kernel matrix must be square, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteInput("kernel matrix contains NaN/Inf")
        if np.any(np.abs(data - data.T) > 1e-12 * np.maximum(1.0, np.abs(data))):
            raise ValidationError("kernel matrix is not symmetric")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def size(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class AlignmentScore:
    cka: float
    hsic_st: float
    hsic_ss: float
    hsic_tt: float


def as_activation(h, tag: str = "") -> ActivationMatrix:
    if isinstance(h, ActivationMatrix):
        return h
    return ActivationMatrix(np.asarray(h), tag=tag)


def standardize(h) -> ActivationMatrix:
    """Zero-mean, unit-variance columns using the population variance.

    Columns whose variance falls below 1e-15 are centered but not scaled.
    """
    h = as_activation(h)
    x = h.data
    centered = x - x.mean(axis=0)
    var = np.mean(centered * centered, axis=0)
    scale = np.where(var < _VARIANCE_FLOOR, 1.0, np.sqrt(var))
    return ActivationMatrix(centered / scale, tag=h.tag)


def linear_kernel(h) -> KernelMatrix:
    x = as_activation(h).data
    k = x @ x.T
    # BLAS may round the two triangles differently
    return KernelMatrix(0.5 * (k + k.T), centered=False)


def center_kernel(k: KernelMatrix) -> KernelMatrix:
    """Return ``C K C`` for ``C = I - 11^T / L``.

    Raises ``AlreadyCentered`` when handed a kernel flagged as centered:
    the operation would be a no-op, which points at a caller bug.
    """
    if k.centered:
        raise AlreadyCentered("kernel is already centered")
    m = k.data
    row_mean = m.mean(axis=1)
    out = m - row_mean[:, None] - row_mean[None, :] + row_mean.mean()
    return KernelMatrix(0.5 * (out + out.T), centered=True)


def hsic(k1: KernelMatrix, k2: KernelMatrix) -> float:
    """Biased HSIC without the 1/(L-1)^2 factor: ``sum(K1 * K2)``."""
    if not (k1.centered and k2.centered):
        raise NotCentered("hsic expects centered kernels")
    if k1.size != k2.size:
        raise DimensionMismatch(f"kernel sizes differ: {k1.size} vs {k2.size}")
    return float(np.sum(k1.data * k2.data))


def centered_kernel(h, preprocess: bool = False) -> KernelMatrix:
    """Steps 2-4 for one side: optional standardization, ``H H^T``, centering."""
    h = as_activation(h)
    if preprocess:
        h = standardize(h)
    return center_kernel(linear_kernel(h))


def cka_from_kernels(ks: KernelMatrix, kt: KernelMatrix) -> AlignmentScore:
    """Steps 5-6 on two centered kernels. Lets callers reuse a kernel across pairs."""
    if ks.size != kt.size:
        raise RowCountMismatch(f"activation matrices must share L: {ks.size} vs {kt.size}")
    st = hsic(ks, kt)
    ss = hsic(ks, ks)
    tt = hsic(kt, kt)
    if ss < DEGENERATE_HSIC or tt < DEGENERATE_HSIC:
        raise DegenerateActivations(
            f"centered activations are constant (hsic_ss={ss:.3g}, hsic_tt={tt:.3g})"
        )
    value = st / math.sqrt(ss * tt)
    return AlignmentScore(cka=max(value, 0.0), hsic_st=st, hsic_ss=ss, hsic_tt=tt)


def cka(hs, ht, preprocess: bool = False) -> AlignmentScore:
    hs = as_activation(hs, "student")
    ht = as_activation(ht, "teacher")
    if hs.row_count != ht.row_count:
        raise RowCountMismatch(
            f"activation matrices must share L: {hs.row_count} vs {ht.row_count}"
        )
    return cka_from_kernels(centered_kernel(hs, preprocess), centered_kernel(ht, preprocess))


def cka_profile(cp_a, cp_b, probe_inputs, preprocess: bool = False):
    """CKA between two checkpoints at every hidden layer.

    Both networks see the same ``probe_inputs``. Returns ``[(layer, score)]``
    ordered by hidden-layer index (0 is the first hidden layer).
    """
    from .nn import forward

    if cp_a.descriptor != cp_b.descriptor:
        raise ArchitectureMismatch(
            f"architectures differ: {cp_a.descriptor} vs {cp_b.descriptor}"
        )
    probe = np.asarray(probe_inputs, dtype=np.float64)
    if probe.ndim != 2 or probe.shape[0] == 0:
        raise ValidationError("probe_inputs must be a non-empty 2-D array")
    _, hidden_a = forward(cp_a, probe)
    _, hidden_b = forward(cp_b, probe)
    return [
        (layer, cka(ActivationMatrix(ha, f"a/{layer}"), ActivationMatrix(hb, f"b/{layer}"), preprocess))
        for layer, (ha, hb) in enumerate(zip(hidden_a, hidden_b))
    ]


def last_hidden_cka(cp, reference, probe_inputs, preprocess: bool = True) -> AlignmentScore:
    """CKA between ``cp`` and ``reference`` at their final hidden layers.

    Architectures may differ (e.g. a narrow student against a wide teacher);
    only the probe row count has to match, which it does by construction.
    """
    from .nn import forward

    _, hs = forward(cp, probe_inputs)
    _, ht = forward(reference, probe_inputs)
    return cka(ActivationMatrix(hs[-1], "last_hidden"), ActivationMatrix(ht[-1], "last_hidden"), preprocess)
