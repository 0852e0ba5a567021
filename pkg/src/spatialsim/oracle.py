"""Functional reference semantics for the three convolution types.

Everything the simulator produces is checked against this module: direct
(strided cross-correlation), transposed (zero-padded stride-1 convolution
with the rotated filter), and dilated (inner-padded kernel) convolutions,
plus the closed-form padding arithmetic and the structural-zero product
counting used to quantify how much of a naively padded schedule is wasted.

All functions are pure; inputs are never mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DIRECT = "direct"
TRANSPOSED = "transposed"
DILATED = "dilated"

CONV_TYPES = (DIRECT, TRANSPOSED, DILATED)


class ShapeError(ValueError):
    """Raised when tensor dimensions are inconsistent with an operation."""


@dataclass(frozen=True)
class FeatureMap:
    """Dense (channels, height, width) tensor of 32-bit reals.

    The 16-bit quantization mode rounds values through float16 on
    construction; data is stored as float32 either way so the dataflow
    machinery never has to care about storage width.
    """

    channels: int
    height: int
    width: int
    data: np.ndarray

    def __post_init__(self):
        if self.channels < 1 or self.height < 1 or self.width < 1:
            raise ShapeError(
                f"feature map dims must be >= 1, got "
                f"({self.channels}, {self.height}, {self.width})"
            )
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.size != self.channels * self.height * self.width:
            raise ShapeError(
                f"data length {arr.size} != channels*height*width = "
                f"{self.channels * self.height * self.width}"
            )
        object.__setattr__(
            self, "data", arr.reshape(self.channels, self.height, self.width)
        )

    @classmethod
    def from_array(cls, arr, quantize_16bit: bool = False) -> "FeatureMap":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        if arr.ndim != 3:
            raise ShapeError(f"expected 2D or 3D array, got ndim={arr.ndim}")
        if quantize_16bit:
            arr = arr.astype(np.float16).astype(np.float32)
        return cls(arr.shape[0], arr.shape[1], arr.shape[2], arr)

    def plane(self, c: int) -> np.ndarray:
        return self.data[c]


@dataclass(frozen=True)
class Filter:
    """Square k x k kernels, one per (out_channel, in_channel) pair."""

    in_channels: int
    out_channels: int
    k: int
    data: np.ndarray

    def __post_init__(self):
        if self.k < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("filter dims must be >= 1")
        arr = np.asarray(self.data, dtype=np.float32)
        expected = self.in_channels * self.out_channels * self.k * self.k
        if arr.size != expected:
            raise ShapeError(f"filter data length {arr.size} != {expected}")
        object.__setattr__(
            self,
            "data",
            arr.reshape(self.out_channels, self.in_channels, self.k, self.k),
        )

    @classmethod
    def from_array(cls, arr, quantize_16bit: bool = False) -> "Filter":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None, None, :, :]
        if arr.ndim != 4:
            raise ShapeError(f"expected 2D or 4D filter array, got ndim={arr.ndim}")
        if arr.shape[2] != arr.shape[3]:
            raise ShapeError(f"kernels must be square, got {arr.shape[2:]}")
        if quantize_16bit:
            arr = arr.astype(np.float16).astype(np.float32)
        return cls(arr.shape[1], arr.shape[0], arr.shape[2], arr)

    def plane(self, out_c: int, in_c: int) -> np.ndarray:
        return self.data[out_c, in_c]


@dataclass(frozen=True)
class LayerSpec:
    """Geometry of one convolution workload.

    ``n_h`` x ``n_w`` are the dims of the *primary* input: the ifmap for
    direct and dilated convolutions, the error map for transposed ones.
    ``k`` is the filter side. For dilated convolutions ``err_h`` x ``err_w``
    are the dims of the error map used as the (inner-padded) kernel; by
    default they are derived with floor semantics from the forward pass,
    but layers whose producing convolution used ceil-mode output sizing may
    set them explicitly (out-of-range ifmap reads are then zero).

    The closed-form padding arithmetic in this module assumes square maps;
    non-square maps are handled by applying each formula per axis.
    """

    name: str
    conv_type: str
    n_h: int
    n_w: int
    k: int
    stride: int
    channels: int = 1
    num_filters: int = 1
    batch: int = 1
    err_h: int = 0   # dilated only; 0 = derive from (n, k, stride)
    err_w: int = 0

    def __post_init__(self):
        if self.conv_type not in CONV_TYPES:
            raise ValueError(f"unknown conv_type {self.conv_type!r}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.k < 1:
            raise ValueError(f"filter side must be >= 1, got {self.k}")
        if min(self.n_h, self.n_w, self.channels, self.num_filters, self.batch) < 1:
            raise ValueError("all layer dimensions must be >= 1")
        if self.conv_type == DIRECT:
            if self.out_h < 1 or self.out_w < 1:
                raise ShapeError(
                    f"{self.name}: direct conv output would be "
                    f"{self.out_h}x{self.out_w}"
                )
        if self.conv_type == DILATED:
            eh, ew = self.error_dims
            if eh < 1 or ew < 1:
                raise ShapeError(f"{self.name}: dilated error map {eh}x{ew}")

    @property
    def error_dims(self) -> tuple[int, int]:
        """Error-map dims for dilated layers (floor-derived unless explicit)."""
        if self.conv_type != DILATED:
            raise ValueError("error_dims only defined for dilated layers")
        eh = self.err_h or (self.n_h - self.k) // self.stride + 1
        ew = self.err_w or (self.n_w - self.k) // self.stride + 1
        return eh, ew

    @property
    def out_h(self) -> int:
        if self.conv_type == DIRECT:
            return (self.n_h - self.k) // self.stride + 1
        if self.conv_type == TRANSPOSED:
            return self.stride * (self.n_h - 1) + self.k
        return self.k

    @property
    def out_w(self) -> int:
        if self.conv_type == DIRECT:
            return (self.n_w - self.k) // self.stride + 1
        if self.conv_type == TRANSPOSED:
            return self.stride * (self.n_w - 1) + self.k
        return self.k


@dataclass(frozen=True)
class PaddingReport:
    """Zero-padding accounting for one transposed/dilated plane."""

    inner_count: int
    outer_count: int
    padded_h: int
    padded_w: int
    zero_mult_fraction: float

    def __post_init__(self):
        assert self.inner_count >= 0 and self.outer_count >= 0
        assert 0.0 <= self.zero_mult_fraction <= 1.0


# ---------------------------------------------------------------------------
# single-plane primitives
# ---------------------------------------------------------------------------

def _conv2d_plane(inp: np.ndarray, kern: np.ndarray, stride: int) -> np.ndarray:
    """Strided cross-correlation of one 2D plane with one 2D kernel."""
    ih, iw = inp.shape
    kh, kw = kern.shape
    oh = (ih - kh) // stride + 1
    ow = (iw - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"kernel {kh}x{kw} does not fit input {ih}x{iw} at stride {stride}"
        )
    win = np.lib.stride_tricks.sliding_window_view(inp.astype(np.float64), (kh, kw))
    win = win[:: stride, :: stride][:oh, :ow]
    return np.einsum("rcij,ij->rc", win, kern.astype(np.float64))


def direct_conv(ifmap: FeatureMap, filt: Filter, stride: int) -> FeatureMap:
    """Standard strided cross-correlation, channels reduce-summed per filter."""
    if filt.in_channels != ifmap.channels:
        raise ShapeError(
            f"filter expects {filt.in_channels} input channels, "
            f"ifmap has {ifmap.channels}"
        )
    planes = []
    for f in range(filt.out_channels):
        acc = None
        for c in range(ifmap.channels):
            p = _conv2d_plane(ifmap.plane(c), filt.plane(f, c).astype(np.float64), stride)
            acc = p if acc is None else acc + p
        planes.append(acc)
    out = np.stack(planes).astype(np.float32)
    return FeatureMap(out.shape[0], out.shape[1], out.shape[2], out)


def rotate180(filt: Filter) -> Filter:
    """Reverse every k x k plane in both axes. Involution."""
    return Filter(
        filt.in_channels, filt.out_channels, filt.k, filt.data[:, :, ::-1, ::-1].copy()
    )


def pad_plane_for_transpose(plane: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Insert stride-1 zeros between elements and a k-1 zero border."""
    nh, nw = plane.shape
    ph = stride * (nh - 1) + 1 + 2 * (k - 1)
    pw = stride * (nw - 1) + 1 + 2 * (k - 1)
    out = np.zeros((ph, pw), dtype=plane.dtype)
    out[k - 1 : k - 1 + stride * (nh - 1) + 1 : stride,
        k - 1 : k - 1 + stride * (nw - 1) + 1 : stride] = plane
    return out


def pad_for_transpose(errors: FeatureMap, k: int, stride: int) -> FeatureMap:
    """Zero-pad an error map for computation as a stride-1 direct conv."""
    if k < 1 or stride < 1:
        raise ValueError("k and stride must be >= 1")
    planes = np.stack(
        [pad_plane_for_transpose(errors.plane(c), k, stride) for c in range(errors.channels)]
    )
    return FeatureMap(planes.shape[0], planes.shape[1], planes.shape[2], planes)


def inner_padding_count(n, stride: int) -> int:
    """Zeros inserted between elements: [S(N-1)+1]^2 - N^2 (per-axis for
    non-square maps)."""
    nh, nw = (n, n) if isinstance(n, int) else n
    return (stride * (nh - 1) + 1) * (stride * (nw - 1) + 1) - nh * nw


def outer_padding_count(n, k: int, stride: int) -> int:
    """Zeros in the k-1 border: 4(K-1)[S(N-1)+1] + 4(K-1)^2 in the square
    case; computed per-axis so non-square maps are exact too."""
    nh, nw = (n, n) if isinstance(n, int) else n
    ih = stride * (nh - 1) + 1
    iw = stride * (nw - 1) + 1
    return (ih + 2 * (k - 1)) * (iw + 2 * (k - 1)) - ih * iw


def transposed_conv(errors: FeatureMap, filt: Filter, stride: int) -> FeatureMap:
    """Transposed convolution, defined (and computed) as
    direct_conv(pad_for_transpose(errors), rotate180(filter), stride 1).

    ``errors`` holds one plane per error channel; the filter maps error
    channels (in_channels) to output planes (out_channels), summing over
    error channels.
    """
    if filt.in_channels != errors.channels:
        raise ShapeError(
            f"filter expects {filt.in_channels} error channels, "
            f"errors has {errors.channels}"
        )
    padded = pad_for_transpose(errors, filt.k, stride)
    return direct_conv(padded, rotate180(filt), 1)


def dilate_kernel(plane: np.ndarray, stride: int) -> np.ndarray:
    """Insert stride-1 zero rows/columns between kernel elements."""
    eh, ew = plane.shape
    out = np.zeros((stride * (eh - 1) + 1, stride * (ew - 1) + 1), dtype=plane.dtype)
    out[::stride, ::stride] = plane
    return out


def dilated_conv_plane(
    ifmap: np.ndarray,
    errors: np.ndarray,
    stride: int,
    out_dims: tuple[int, int] | None = None,
) -> np.ndarray:
    """One-plane dilated convolution: slide the inner-padded error kernel
    at stride 1. Output position (u, v) is sum_{i,j} ifmap[u+S*i, v+S*j] *
    errors[i, j]; reads past the ifmap edge contribute zero (they occur
    when the producing convolution sized its output with ceil/padding).
    """
    eh, ew = errors.shape
    if out_dims is None:
        oh = ifmap.shape[0] - stride * (eh - 1)
        ow = ifmap.shape[1] - stride * (ew - 1)
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"dilated kernel {eh}x{ew} at stride {stride} does not fit "
                f"ifmap {ifmap.shape[0]}x{ifmap.shape[1]}"
            )
    else:
        oh, ow = out_dims
    nh, nw = ifmap.shape
    ext_h = max(nh, oh + stride * (eh - 1))
    ext_w = max(nw, ow + stride * (ew - 1))
    ext = np.zeros((ext_h, ext_w), dtype=np.float64)
    ext[:nh, :nw] = ifmap
    out = np.zeros((oh, ow), dtype=np.float64)
    for i in range(eh):
        for j in range(ew):
            out += float(errors[i, j]) * ext[
                stride * i : stride * i + oh, stride * j : stride * j + ow
            ]
    return out


def dilated_conv(
    ifmap: FeatureMap,
    errors_as_kernel: FeatureMap,
    stride: int,
    out_dims: tuple[int, int] | None = None,
) -> FeatureMap:
    """Dilated convolution producing one k x k gradient plane per
    (error channel, ifmap channel) pair, ordered error-major."""
    planes = []
    for f in range(errors_as_kernel.channels):
        for c in range(ifmap.channels):
            planes.append(
                dilated_conv_plane(
                    ifmap.plane(c), errors_as_kernel.plane(f), stride, out_dims
                )
            )
    out = np.stack(planes).astype(np.float32)
    return FeatureMap(out.shape[0], out.shape[1], out.shape[2], out)


# ---------------------------------------------------------------------------
# structural-zero accounting
# ---------------------------------------------------------------------------

def naive_schedule_products(layer: LayerSpec) -> tuple[int, int]:
    """(total, zero) multiplication counts of the naively padded schedule
    for ONE plane of the layer.

    Transposed: every output element consumes a full k x k window of the
    padded error map; a product is zero when its window cell is inner or
    outer padding. Dilated: every output consumes the full padded kernel;
    a product is zero when the kernel cell is inner padding or the ifmap
    read falls outside the map. Direct convolutions have no padding here.
    """
    if layer.conv_type == DIRECT:
        total = layer.out_h * layer.out_w * layer.k * layer.k
        return total, 0

    if layer.conv_type == TRANSPOSED:
        mask = np.zeros((layer.n_h, layer.n_w), dtype=np.float32) + 1.0
        padded = pad_plane_for_transpose(mask, layer.k, layer.stride)
        oh, ow = layer.out_h, layer.out_w
        total = oh * ow * layer.k * layer.k
        # each real element is covered by exactly k^2 sliding windows
        useful = layer.k * layer.k * layer.n_h * layer.n_w
        assert padded.shape == (oh + layer.k - 1, ow + layer.k - 1)
        return total, total - useful

    eh, ew = layer.error_dims
    ph = layer.stride * (eh - 1) + 1
    pw = layer.stride * (ew - 1) + 1
    total = layer.k * layer.k * ph * pw
    # useful products have a real kernel element (a = S*i, b = S*j) and an
    # in-bounds ifmap read; the count factors per axis
    s = layer.stride
    rows = sum(
        max(0, min(eh, (layer.n_h - 1 - u) // s + 1)) for u in range(layer.k)
    )
    cols = sum(
        max(0, min(ew, (layer.n_w - 1 - v) // s + 1)) for v in range(layer.k)
    )
    return total, total - rows * cols


def zero_mult_fraction(layer: LayerSpec) -> float:
    """Fraction of multiplications in the naive padded schedule whose
    padded operand is a structural zero."""
    if layer.conv_type == DIRECT:
        return 0.0
    total, zero = naive_schedule_products(layer)
    return zero / total


def padding_report(layer: LayerSpec) -> PaddingReport:
    """Inner/outer padding counts and zero-mult fraction for one plane."""
    if layer.conv_type == TRANSPOSED:
        inner = inner_padding_count((layer.n_h, layer.n_w), layer.stride)
        outer = outer_padding_count((layer.n_h, layer.n_w), layer.k, layer.stride)
        ph = layer.stride * (layer.n_h - 1) + 1 + 2 * (layer.k - 1)
        pw = layer.stride * (layer.n_w - 1) + 1 + 2 * (layer.k - 1)
    elif layer.conv_type == DILATED:
        eh, ew = layer.error_dims
        inner = inner_padding_count((eh, ew), layer.stride)
        outer = 0
        ph = layer.stride * (eh - 1) + 1
        pw = layer.stride * (ew - 1) + 1
    else:
        raise ValueError("padding_report applies to transposed/dilated layers")
    return PaddingReport(inner, outer, ph, pw, zero_mult_fraction(layer))


# ---------------------------------------------------------------------------
# whole-layer reference computation
# ---------------------------------------------------------------------------

def make_layer_data(
    layer: LayerSpec, seed: int = 0, quantize_16bit: bool = False
) -> tuple[FeatureMap, Filter]:
    """Deterministic nonzero integer-valued test data for a layer.

    Integer values keep float accumulation exact regardless of summation
    order, so simulator-vs-reference comparisons are not confounded by
    rounding.
    """
    rng = np.random.default_rng(seed)

    def draw(shape):
        mag = rng.integers(1, 10, size=shape).astype(np.float32)
        sign = rng.integers(0, 2, size=shape).astype(np.float32) * 2.0 - 1.0
        return mag * sign

    if layer.conv_type == TRANSPOSED:
        inp = draw((layer.channels, layer.n_h, layer.n_w))
        kern = draw((layer.num_filters, layer.channels, layer.k, layer.k))
    elif layer.conv_type == DILATED:
        eh, ew = layer.error_dims
        inp = draw((layer.channels, layer.n_h, layer.n_w))
        kern = draw((layer.num_filters, eh, ew))  # error planes, one per filter
    else:
        inp = draw((layer.channels, layer.n_h, layer.n_w))
        kern = draw((layer.num_filters, layer.channels, layer.k, layer.k))

    if layer.conv_type == DILATED:
        fm = FeatureMap.from_array(inp, quantize_16bit)
        errs = FeatureMap.from_array(kern, quantize_16bit)
        return fm, errs
    return (
        FeatureMap.from_array(inp, quantize_16bit),
        Filter.from_array(kern, quantize_16bit),
    )


def reference_output(layer: LayerSpec, inp, kern) -> FeatureMap:
    """Reference output tensor for a whole layer (batch folded by caller)."""
    if layer.conv_type == DIRECT:
        return direct_conv(inp, kern, layer.stride)
    if layer.conv_type == TRANSPOSED:
        return transposed_conv(inp, kern, layer.stride)
    return dilated_conv(inp, kern, layer.stride, (layer.out_h, layer.out_w))
