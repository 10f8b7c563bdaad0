"""Convolution orthogonality: matrix-form penalties and the trainable surrogate.

A 2-D convolution is a single matrix-vector product once the kernel is
scattered into its doubly block-Toeplitz (DBT) matrix. Orthogonality of
that matrix can be penalized directly through its Gram matrix, or - far
cheaper - through the kernel's correlation with its own shifted copies,
which must match an identity-like target. The dense DBT path exists for
analysis and as an oracle; training always uses the self-convolution form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    GeometryError,
    Tensor,
    conv2d,
    conv_output_extent,
    frobenius_sq,
    sub,
    swap_leading_axes,
)


class TooLargeError(ValueError):
    """Dense decomposition refused: the matrix exceeds the size guard."""


@dataclass(frozen=True)
class ConvKernel:
    """A convolution layer's kernel: weights (M,C,kh,kw) plus stride and padding."""

    weights: Tensor
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.data.ndim != 4:
            raise GeometryError(
                f"kernel weights must have 4 axes (M,C,kh,kw), got {self.weights.data.ndim}")
        if min(self.weights.data.shape) < 1:
            raise GeometryError(f"kernel extents must be positive, got {self.weights.data.shape}")
        if self.stride < 1:
            raise GeometryError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise GeometryError(f"padding must be >= 0, got {self.padding}")

    @property
    def out_channels(self) -> int:
        return self.weights.data.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.data.shape[1]

    @property
    def kernel_hw(self) -> tuple[int, int]:
        return self.weights.data.shape[2], self.weights.data.shape[3]


@dataclass(frozen=True)
class DbtMatrix:
    """Dense matrix form of a convolution for one input geometry.

    Row (m, y, x) holds filter m's weights placed at output position (y, x),
    scattered into the C*H*W input columns it reads. In zero mode
    out-of-range taps are dropped; in circular mode they wrap around.
    """

    matrix: np.ndarray
    in_geometry: tuple[int, int, int]          # (C, H, W)
    out_geometry: tuple[int, int, int]         # (M, H', W')
    stride: int
    padding: int
    padding_mode: str = "zero"

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class IdentityTarget:
    """What an orthogonal kernel's self-convolution must equal.

    Shape (M, M, h_s, w_s) with h_s = 2*floor((kh-1)/S)+1 (same for w_s);
    the single 1 per filter sits on the diagonal at the central shift.
    """

    out_channels: int
    height: int
    width: int

    @classmethod
    def for_kernel(cls, kernel: ConvKernel) -> "IdentityTarget":
        kh, kw = kernel.kernel_hw
        s = kernel.stride
        return cls(kernel.out_channels, 2 * ((kh - 1) // s) + 1, 2 * ((kw - 1) // s) + 1)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.out_channels, self.height, self.width)

    @property
    def center(self) -> tuple[int, int]:
        return (self.height - 1) // 2, (self.width - 1) // 2

    def as_array(self) -> np.ndarray:
        target = np.zeros(self.shape)
        a0, b0 = self.center
        for i in range(self.out_channels):
            target[i, i, a0, b0] = 1.0
        return target


def self_conv_padding(kernel: ConvKernel) -> tuple[int, int]:
    """Padding that makes the self-convolution enumerate every aligned shift
    of magnitude at most k-1 per axis, with the zero shift sitting centrally."""
    kh, kw = kernel.kernel_hw
    s = kernel.stride
    return s * ((kh - 1) // s), s * ((kw - 1) // s)


def self_conv(kernel: ConvKernel) -> Tensor:
    """Correlate the kernel with itself across stride-aligned shifts.

    Returns a (M, M, h_s, w_s) tensor whose [i,j,a,b] entry is the inner
    product of filter i with filter j shifted by S*(a-a0, b-b0). Implemented
    as one conv2d call with the kernel playing both roles, so gradients
    accumulate through both; the conv puts the shift on the first index, so
    the leading axes are swapped to place it on the second.
    """
    w = kernel.weights
    z = conv2d(w, w, stride=kernel.stride, padding=self_conv_padding(kernel))
    return swap_leading_axes(z)


def orth_loss(kernel: ConvKernel) -> Tensor:
    """Squared Frobenius distance between the self-convolution and its
    identity target; differentiable w.r.t. the kernel weights."""
    z = self_conv(kernel)
    target = Tensor(IdentityTarget.for_kernel(kernel).as_array())
    return frobenius_sq(sub(z, target))


def build_dbt(kernel: ConvKernel, input_geometry: tuple[int, int, int],
              padding_mode: str = "zero") -> DbtMatrix:
    """Materialize the dense DBT matrix of a kernel over one input geometry."""
    if padding_mode not in ("zero", "circular"):
        raise ValueError(f"unknown padding mode {padding_mode!r}")
    c, h, wid = input_geometry
    if kernel.in_channels != c:
        raise GeometryError(
            f"kernel expects {kernel.in_channels} input channels, geometry has {c}")
    m = kernel.out_channels
    kh, kw = kernel.kernel_hw
    s, p = kernel.stride, kernel.padding
    if padding_mode == "circular":
        # wrap-around boundaries: every stride-aligned cyclic position is valid
        ho = -(-h // s)
        wo = -(-wid // s)
    else:
        ho = conv_output_extent(h, kh, s, p)
        wo = conv_output_extent(wid, kw, s, p)
    if ho < 1 or wo < 1:
        raise GeometryError(
            f"non-positive output extent {(ho, wo)} for geometry {input_geometry}")
    wdat = kernel.weights.data
    mat = np.zeros((m * ho * wo, c * h * wid))
    for f in range(m):
        for y in range(ho):
            for x in range(wo):
                row = (f * ho + y) * wo + x
                for ch in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            hh = y * s + u - p
                            ww = x * s + v - p
                            if padding_mode == "circular":
                                hh %= h
                                ww %= wid
                            elif not (0 <= hh < h and 0 <= ww < wid):
                                continue
                            mat[row, (ch * h + hh) * wid + ww] += wdat[f, ch, u, v]
    return DbtMatrix(mat, (c, h, wid), (m, ho, wo), s, p, padding_mode)


def kernel_orth_loss_row(dbt: DbtMatrix) -> float:
    """Unsquared Frobenius norm of (K K^T - I): row orthogonality residual."""
    gram = dbt.matrix @ dbt.matrix.T
    gram[np.diag_indices_from(gram)] -= 1.0
    return float(np.sqrt((gram * gram).sum()))


def kernel_orth_loss_col(dbt: DbtMatrix) -> float:
    """Unsquared Frobenius norm of (K^T K - I): column orthogonality residual."""
    gram = dbt.matrix.T @ dbt.matrix
    gram[np.diag_indices_from(gram)] -= 1.0
    return float(np.sqrt((gram * gram).sum()))


def choose_orientation(kernel: ConvKernel, input_geometry: tuple[int, int, int]) -> str:
    """Pick the Gram orientation whose identity is the smaller matrix.

    Row orthogonality constrains K K^T (M H' W' square); it is only
    satisfiable when the matrix has at least as many columns as rows, so
    prefer "row" when rows <= cols and "column" otherwise (ties go to row).
    """
    c, h, wid = input_geometry
    kh, kw = kernel.kernel_hw
    ho = conv_output_extent(h, kh, kernel.stride, kernel.padding)
    wo = conv_output_extent(wid, kw, kernel.stride, kernel.padding)
    rows = kernel.out_channels * ho * wo
    cols = c * h * wid
    return "row" if rows <= cols else "column"


_SVD_GUARD = 4096


def spectral_profile(dbt: DbtMatrix) -> np.ndarray:
    """Singular values of the DBT matrix, descending (dense SVD, guarded)."""
    r, c = dbt.matrix.shape
    if r > _SVD_GUARD or c > _SVD_GUARD:
        raise TooLargeError(f"matrix {r}x{c} exceeds the {_SVD_GUARD} dense-SVD guard")
    return np.linalg.svd(dbt.matrix, compute_uv=False)
