"""Row-stationary baseline: each PE runs a 1D convolution of one kernel
row against one input row; the partial sums of a column of PEs accumulate
upward to form one output row.

Transposed and dilated convolutions are compiled as the explicitly padded
problem (this is precisely the inefficiency being measured): the padded
operand streams through the array and padding zeros trigger the PEs'
zero-operand clock gating at runtime without shortening the schedule.

Kernel rows beyond the physical array height split into sequential
segment passes whose partial outputs accumulate in the buffer; output
rows beyond the array width fold onto physical columns.
"""

from __future__ import annotations

from ..oracle import DILATED, DIRECT, TRANSPOSED, LayerSpec
from ..program import (
    OP_LOAD_IN,
    OP_LOAD_W,
    OP_MAC,
    OP_PASS_UP,
    OP_WRITE_OUT,
    SRC_IN,
    SRC_KERN,
    SRC_ZERO,
    CompiledPlane,
    PEProgram,
    Send,
)
from .padfree import _VidSpace
from .schedule import CompileError


def padded_problem(layer: LayerSpec):
    """(in_h, in_w, src_in, kh, kw, src_kern, stride, oh, ow) of the
    explicitly padded stride-1 problem equivalent to the layer.

    ``src_in(a, b)`` / ``src_kern(a, b)`` give (kind, source index) for
    each padded-layout element; zero elements carry their padded address
    so buffer banking stays well defined.
    """
    k, s = layer.k, layer.stride
    if layer.conv_type == DIRECT:
        nh, nw = layer.n_h, layer.n_w

        def src_in(a, b):
            return (SRC_IN, a * nw + b)

        def src_kern(a, b):
            return (SRC_KERN, a * k + b)

        return nh, nw, src_in, k, k, src_kern, s, layer.out_h, layer.out_w

    if layer.conv_type == TRANSPOSED:
        eh, ew = layer.n_h, layer.n_w
        ph = s * (eh - 1) + 1 + 2 * (k - 1)
        pw = s * (ew - 1) + 1 + 2 * (k - 1)

        def src_in(a, b):
            ai, bi = a - (k - 1), b - (k - 1)
            if ai >= 0 and bi >= 0 and ai % s == 0 and bi % s == 0:
                i, j = ai // s, bi // s
                if i < eh and j < ew:
                    return (SRC_IN, i * ew + j)
            return (SRC_ZERO, a * pw + b)

        def src_kern(a, b):
            # rotated forward filter
            return (SRC_KERN, (k - 1 - a) * k + (k - 1 - b))

        return ph, pw, src_in, k, k, src_kern, 1, layer.out_h, layer.out_w

    # dilated: kernel is the inner-padded error map; ifmap reads past the
    # edge (ceil-mode producers) are structural zeros
    eh, ew = layer.error_dims
    kh = s * (eh - 1) + 1
    kw = s * (ew - 1) + 1
    ih = layer.out_h + kh - 1
    iw = layer.out_w + kw - 1

    def src_in(a, b):
        if a < layer.n_h and b < layer.n_w:
            return (SRC_IN, a * layer.n_w + b)
        return (SRC_ZERO, a * iw + b)

    def src_kern(a, b):
        if a % s == 0 and b % s == 0:
            return (SRC_KERN, (a // s) * ew + (b // s))
        return (SRC_ZERO, a * kw + b)

    return ih, iw, src_in, kh, kw, src_kern, 1, layer.out_h, layer.out_w


def compile_row_stationary(
    layer: LayerSpec,
    array_rows: int = 13,
    array_cols: int = 15,
    psum_slots: int = 24,
    in_slots: int = 75,
    w_slots: int = 224,
    reps: int = 1,
) -> list[CompiledPlane]:
    """Compile one plane into segment x strip passes.

    Kernel rows beyond the array height become vertical segments; output
    rows wider than the ifmap register file become column strips (each PE
    holds its whole input-row slice before computing, which keeps the
    input stream free of head-of-line blocking behind partial-sum waits).
    """
    in_h, in_w, src_in, kh, kw, src_kern, stride, oh, ow = padded_problem(layer)
    if kw > in_slots:
        raise CompileError(
            f"{layer.name}: padded kernel width {kw} exceeds the ifmap "
            f"register file ({in_slots} words); row cannot be held"
        )
    if kw * reps > w_slots:
        raise CompileError(
            f"{layer.name}: {reps} kernel rows of width {kw} exceed the "
            f"filter register file ({w_slots} words)"
        )
    chunk = min(ow, psum_slots // reps)
    if chunk < 1:
        raise CompileError(
            f"{layer.name}: psum register file too small for {reps} planes"
        )
    strip_w = min(ow, (in_slots - kw) // stride + 1)
    seg_size = min(kh, array_rows)
    n_seg = -(-kh // seg_size)
    cols_used = min(oh, array_cols)

    planes = []
    for seg in range(n_seg):
        base = seg * seg_size
        rows_here = min(seg_size, kh - base)
        for x0 in range(0, ow, strip_w):
            x1 = min(x0 + strip_w, ow)
            plane = _compile_segment(
                layer, base, rows_here, in_h, in_w, src_in, kw, src_kern,
                stride, oh, ow, cols_used, min(chunk, x1 - x0), reps, x0, x1,
            )
            plane.meta["segment"] = seg
            plane.meta["n_segments"] = n_seg
            plane.meta["strip"] = (x0, x1)
            planes.append(plane)
    return planes


def _compile_segment(layer, kr_base, seg_rows, in_h, in_w, src_in, kw,
                     src_kern, stride, oh, ow, cols_used, chunk, reps, x0, x1):
    vids = _VidSpace()
    out_len = oh * ow
    ow_local = x1 - x0
    b_lo = x0 * stride                      # input-column slice of this strip
    b_hi = (x1 - 1) * stride + kw
    slice_w = b_hi - b_lo
    plane = CompiledPlane(
        dataflow="rowstationary",
        set_rows=seg_rows,
        set_cols=cols_used,
        out_h=oh,
        out_w=ow,
        in_shape=(in_h, in_w),
        kern_shape=(0, 0),
        group_factor=-(-oh // cols_used),
        reps=reps,
        meta={},
    )
    table = plane.group_table

    # kernel rows: one multicast group per physical row
    row_gid = {}
    for kr_local in range(seg_rows):
        members = [(kr_local, c) for c in range(cols_used)]
        row_gid[kr_local] = table.add(members)
    for rep in range(reps):
        for kr_local in range(seg_rows):
            a = kr_base + kr_local
            for b in range(kw):
                kind, idx = src_kern(a, b)
                plane.b_sends.append(Send(kind, idx, row_gid[kr_local], rep))

    # input rows this segment touches; a row slice feeds the diagonal of
    # PEs (kr_local, orow % cols_used) with orow * stride + kr == m
    need_rows: dict = {}
    for orow in range(oh):
        for kr_local in range(seg_rows):
            m = orow * stride + kr_base + kr_local
            need_rows.setdefault(m, []).append((kr_local, orow % cols_used))
    in_gid = {}
    for m in sorted(need_rows):
        in_gid[m] = table.add(sorted(set(need_rows[m])))
        for b in range(b_lo, b_hi):
            kind, idx = src_in(m, b)
            plane.a_sends.append(Send(kind, idx, in_gid[m]))

    zero_products = 0
    kern_zero = {
        (kr_local, t): src_kern(kr_base + kr_local, t)[0] == SRC_ZERO
        for kr_local in range(seg_rows)
        for t in range(kw)
    }
    for kr_local in range(seg_rows):
        for pc in range(cols_used):
            orows = [o for o in range(oh) if o % cols_used == pc]
            if not orows:
                continue
            ops = []
            subs = set()
            for rep in range(reps):
                for t in range(kw):
                    ops.append((OP_LOAD_W, rep * kw + t))
            for orow in orows:
                m = orow * stride + kr_base + kr_local
                subs.add(in_gid[m])
                # whole input-row slice first: the stream never waits on
                # this PE's partial-sum dependencies
                for b in range(slice_w):
                    ops.append((OP_LOAD_IN, b))
                for c0 in range(x0, x1, chunk):
                    c1 = min(c0 + chunk, x1)
                    compute = []
                    for x in range(c0, c1):
                        slot_base = (x - c0) * reps
                        for rep in range(reps):
                            for t in range(kw):
                                compute.append(
                                    ("mac", slot_base + rep,
                                     rep * kw + t, x * stride + t - b_lo)
                                )
                                if (
                                    kern_zero[(kr_local, t)]
                                    or src_in(m, x * stride + t)[0] == SRC_ZERO
                                ):
                                    zero_products += 1
                            compute.append(("closemark", x, rep, slot_base + rep))
                    # closes trail their last MAC by the pipeline depth
                    stream = []
                    due = []
                    for item in compute:
                        if item[0] == "closemark":
                            due.append((len(stream) + 3, item))
                            continue
                        while due and due[0][0] <= len(stream):
                            stream.append(due.pop(0)[1])
                        stream.append(item)
                    while due:
                        stream.append(due.pop(0)[1])
                    for item in stream:
                        if item[0] == "mac":
                            _, slot, wslot, inslot = item
                            ops.append((OP_MAC, slot, wslot, inslot, 0))
                        else:
                            _, x, rep, slot = item
                            key = (rep, orow, x)
                            wait = 1 if kr_local < seg_rows - 1 else 0
                            vid = vids.get((kr_local, pc), key) if wait else -1
                            if kr_local == 0:
                                ops.append(
                                    (OP_WRITE_OUT, slot, wait, vid,
                                     rep * out_len + orow * ow + x)
                                )
                            else:
                                ops.append(
                                    (OP_PASS_UP, slot, wait, vid,
                                     vids.get((kr_local - 1, pc), key))
                                )
            plane.programs[(kr_local, pc)] = PEProgram(
                ops=ops,
                subscriptions=tuple(sorted(subs)),
                w_subscriptions=(row_gid[kr_local],),
                n_acc_slots=chunk * reps,
                n_in_slots=slice_w,
                n_w_slots=kw * reps,
            )
    plane.meta["zero_products"] = zero_products
    return plane
