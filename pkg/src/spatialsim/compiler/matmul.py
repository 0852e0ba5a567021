"""Matrix-multiply lowering onto an output-stationary systolic array.

The (padded, for transposed/dilated) convolution is lowered im2col-style:
A holds one sliding window per output position, B one flattened kernel per
output plane. Partial sums accumulate locally in each PE while A values
forward east and B values forward south; the operand matrices enter from
the left and top edges. Tiles larger than the array execute back to back
on the same programs.
"""

from __future__ import annotations

from ..oracle import LayerSpec
from ..program import (
    OP_MAC,
    OP_WRITE_OUT,
    SRC_ZERO,
    CompiledPlane,
    PEProgram,
    Send,
)
from .rowstat import padded_problem
from .schedule import CompileError


def compile_matmul_lowered(
    layer: LayerSpec,
    array_rows: int = 13,
    array_cols: int = 15,
    reps: int = 1,
) -> CompiledPlane:
    """Compile one plane as A (out-positions x window) times B (window x
    served planes); ``reps`` is the number of B columns."""
    in_h, in_w, src_in, kh, kw, src_kern, stride, oh, ow = padded_problem(layer)
    m_total = oh * ow
    depth = kh * kw
    n_total = reps

    plane = CompiledPlane(
        dataflow="matmul",
        set_rows=min(m_total, array_rows),
        set_cols=min(n_total, array_cols),
        out_h=oh,
        out_w=ow,
        in_shape=(in_h, in_w),
        kern_shape=(kh, kw),
        reps=reps,
        meta={"depth": depth, "m": m_total},
    )

    out_len = oh * ow
    tiles_m = -(-m_total // array_rows)
    tiles_n = -(-n_total // array_cols)
    west: dict = {}
    north: dict = {}
    ops_of: dict = {}
    zero_products = 0

    # zero flags of the lowered operands (kernel flags shared by planes)
    kern_zero = [src_kern(*divmod(d, kw))[0] == SRC_ZERO for d in range(depth)]

    def a_zero_row(m):
        r, c = divmod(m, ow)
        return [
            src_in(r * stride + d // kw, c * stride + d % kw)[0] == SRC_ZERO
            for d in range(depth)
        ]

    for tm in range(tiles_m):
        m0 = tm * array_rows
        m1 = min(m0 + array_rows, m_total)
        rows_here = m1 - m0
        az = {i: a_zero_row(m0 + i) for i in range(rows_here)}
        for tn in range(tiles_n):
            n0 = tn * array_cols
            n1 = min(n0 + array_cols, n_total)
            cols_here = n1 - n0
            for i in range(rows_here):
                m = m0 + i
                r, c = divmod(m, ow)
                sends = west.setdefault(i, [])
                for d in range(depth):
                    da, db = divmod(d, kw)
                    kind, idx = src_in(r * stride + da, c * stride + db)
                    sends.append(Send(kind, idx, -1))
            for j in range(cols_here):
                n = n0 + j
                sends = north.setdefault(j, [])
                for d in range(depth):
                    da, db = divmod(d, kw)
                    kind, idx = src_kern(da, db)
                    sends.append(Send(kind, idx, -1, n))
            for i in range(rows_here):
                zrow = az[i]
                n_zero = sum(
                    1 for d in range(depth) if zrow[d] or kern_zero[d]
                )
                for j in range(cols_here):
                    fwd = (1 if j + 1 < cols_here else 0) | (
                        2 if i + 1 < rows_here else 0
                    )
                    ops = ops_of.setdefault((i, j), [])
                    for d in range(depth):
                        ops.append((OP_MAC, 0, -1, -1, fwd))
                    m = m0 + i
                    n = n0 + j
                    ops.append((OP_WRITE_OUT, 0, 0, -1, n * out_len + m))
                    zero_products += n_zero

    for (i, j), ops in ops_of.items():
        plane.programs[(i, j)] = PEProgram(
            ops=ops, n_acc_slots=1, n_in_slots=0, n_w_slots=0
        )
    plane.west_sends = west
    plane.north_sends = north
    plane.meta["zero_products"] = zero_products
    if not plane.programs:
        raise CompileError(f"{layer.name}: empty matmul lowering")
    return plane
