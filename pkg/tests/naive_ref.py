"""Independent brute-force references used to check the package's oracle.

These are deliberately written as plain loop nests over the mathematical
definitions, sharing no code with the package, so they stay independent of
the implementations they check.
"""

import numpy as np


def naive_direct_conv(ifmap, filt, stride):
    """ifmap (C,H,W), filt (F,C,k,k) -> (F,oh,ow) by sliding-window sum."""
    C, H, W = ifmap.shape
    F, C2, k, _ = filt.shape
    assert C == C2
    oh = (H - k) // stride + 1
    ow = (W - k) // stride + 1
    out = np.zeros((F, oh, ow), dtype=np.float64)
    for f in range(F):
        for r in range(oh):
            for c in range(ow):
                s = 0.0
                for ch in range(C):
                    for i in range(k):
                        for j in range(k):
                            s += float(ifmap[ch, r * stride + i, c * stride + j]) * float(
                                filt[f, ch, i, j]
                            )
                out[f, r, c] = s
    return out


def naive_input_gradient(errors, filt, stride, in_h, in_w):
    """Gradient of a forward conv w.r.t. its input, by looping over the
    forward pass MACs and scattering: errors (F,eh,ew), filt (F,C,k,k)."""
    F, eh, ew = errors.shape
    F2, C, k, _ = filt.shape
    assert F == F2
    din = np.zeros((C, in_h, in_w), dtype=np.float64)
    for f in range(F):
        for r in range(eh):
            for c in range(ew):
                for ch in range(C):
                    for i in range(k):
                        for j in range(k):
                            din[ch, r * stride + i, c * stride + j] += float(
                                errors[f, r, c]
                            ) * float(filt[f, ch, i, j])
    return din


def naive_filter_gradient(ifmap, errors, stride, k):
    """Gradient of a forward conv w.r.t. its filter: ifmap (C,H,W),
    errors (F,eh,ew) -> (F,C,k,k). Out-of-range ifmap reads are zero."""
    C, H, W = ifmap.shape
    F, eh, ew = errors.shape
    dw = np.zeros((F, C, k, k), dtype=np.float64)
    for f in range(F):
        for ch in range(C):
            for u in range(k):
                for v in range(k):
                    s = 0.0
                    for i in range(eh):
                        for j in range(ew):
                            a, b = u + stride * i, v + stride * j
                            if a < H and b < W:
                                s += float(ifmap[ch, a, b]) * float(errors[f, i, j])
                    dw[f, ch, u, v] = s
    return dw


def count_zeros_in_padded(plane_h, plane_w, k, stride):
    """Construct the padded matrix of a transposed conv input and count its
    zeros directly (cross-check for the closed forms)."""
    nh, nw = plane_h, plane_w
    ph = stride * (nh - 1) + 1 + 2 * (k - 1)
    pw = stride * (nw - 1) + 1 + 2 * (k - 1)
    mat = np.zeros((ph, pw))
    for i in range(nh):
        for j in range(nw):
            mat[k - 1 + stride * i, k - 1 + stride * j] = 1.0
    inner = 0
    lo_h, hi_h = k - 1, k - 1 + stride * (nh - 1)
    lo_w, hi_w = k - 1, k - 1 + stride * (nw - 1)
    for a in range(ph):
        for b in range(pw):
            if mat[a, b] == 0.0 and lo_h <= a <= hi_h and lo_w <= b <= hi_w:
                inner += 1
    total_zeros = int((mat == 0.0).sum())
    return inner, total_zeros - inner, (ph, pw)


def naive_zero_mult_fraction_transposed(nh, nw, k, stride):
    """Count zero-operand products of the naive padded schedule by
    enumerating every sliding window cell."""
    ph = stride * (nh - 1) + 1 + 2 * (k - 1)
    pw = stride * (nw - 1) + 1 + 2 * (k - 1)
    mat = np.zeros((ph, pw))
    for i in range(nh):
        for j in range(nw):
            mat[k - 1 + stride * i, k - 1 + stride * j] = 1.0
    total = zero = 0
    for r in range(ph - k + 1):
        for c in range(pw - k + 1):
            for i in range(k):
                for j in range(k):
                    total += 1
                    if mat[r + i, c + j] == 0.0:
                        zero += 1
    return total, zero
