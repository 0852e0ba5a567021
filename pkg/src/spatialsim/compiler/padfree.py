"""Lowering of the zero-padding-free schedules to PE programs.

Transpose: weights are broadcast sequentially (one kernel element per
step), error elements are multicast once and held in PE registers, partial
sums accumulate per output label and flow upward through the vertical
links; the top PE of each label's run writes the finished value out.

Dilated: one PE per output gradient element; error elements stream in
broadcast order while the matching ifmap operands are multicast ahead of
use, everything accumulating locally (expansion splits the error range
over vertically adjacent PEs, merged upward at the end).

Partial-sum hand-offs are matched by compile-time virtual tags, so chains
tolerate arbitrary cross-PE timing skew. When the accumulator register
file cannot hold a PE's concurrent label set, whole labels are demoted to
buffer-side accumulation (each product written out individually); the
demotion set is grown deterministically until the schedule fits.
"""

from __future__ import annotations

from ..noc import id_bits_required, row_ids_required
from ..oracle import DILATED, TRANSPOSED, LayerSpec
from ..program import (
    OP_LOAD_IN,
    OP_LOAD_W,
    OP_MAC,
    OP_PASS_UP,
    OP_WRITE_OUT,
    SRC_IN,
    SRC_KERN,
    CompiledPlane,
    PEProgram,
    Send,
)
from .schedule import (
    CompileError,
    ScheduleMatrix,
    SymbolicProduct,
    apply_expansion,
    apply_grouping,
    assign_columns,
    check_verticality,
    circular_shift,
    label_products,
    symbolic_outer_product,
)

_PIPE_GAP = 3   # compute ops between a label's last MAC and its close


def build_transpose_schedule(
    layer: LayerSpec, array_rows: int, array_cols: int, expansion: int = 1
) -> ScheduleMatrix:
    """Compile-time steps for one plane: outer product, labelling,
    circular shift, then expansion/placement/grouping."""
    sched = symbolic_outer_product(layer.k, (layer.n_h, layer.n_w))
    sched = label_products(sched, layer.stride)
    sched = circular_shift(sched, layer.k, layer.stride)
    assert check_verticality(sched)
    if expansion > 1:
        sched = apply_expansion(sched, expansion, array_rows)
    sched = apply_grouping(sched, array_rows, array_cols)
    return sched


class _VidSpace:
    """Per-PE virtual merge-tag allocator."""

    def __init__(self):
        self.by_key = {}
        self.next_at = {}

    def get(self, phys, label):
        key = (phys, label)
        if key not in self.by_key:
            n = self.next_at.get(phys, 0)
            self.by_key[key] = n
            self.next_at[phys] = n + 1
        return self.by_key[key]


def _linear_scan(intervals):
    """Greedy slot assignment over [start, end] intervals (inclusive).

    Returns (tag -> slot, slots used). Deterministic: intervals processed
    in (start, end, tag) order, lowest free slot first.
    """
    import heapq

    slot_of = {}
    active = []   # (end, slot)
    free = []
    next_slot = 0
    for start, end, tag in sorted(intervals, key=lambda x: (x[0], x[1], str(x[2]))):
        while active and active[0][0] < start:
            _, s = heapq.heappop(active)
            heapq.heappush(free, s)
        if free:
            slot = heapq.heappop(free)
        else:
            slot = next_slot
            next_slot += 1
        slot_of[tag] = slot
        heapq.heappush(active, (end, slot))
    return slot_of, next_slot


def compile_transpose(
    layer: LayerSpec,
    array_rows: int = 13,
    array_cols: int = 15,
    psum_slots: int = 24,
    expansion: int = 1,
    reps: int = 1,
) -> CompiledPlane:
    """Compile one transposed-convolution plane to PE programs.

    ``reps`` > 1 reuses one multicast error stream for several filter
    planes: errors stay resident in the PE registers while the weight
    broadcast and output phases repeat per plane.
    """
    if layer.conv_type != TRANSPOSED:
        raise CompileError(f"layer {layer.name} is not a transposed conv")
    k = layer.k
    eh, ew = layer.n_h, layer.n_w
    sched = build_transpose_schedule(layer, array_rows, array_cols, expansion)

    # execution sequence per physical PE: weight steps outer, folded
    # logical columns round-robin inner (one broadcast serves every fold)
    per_pe: dict = {}
    for pos in sorted(sched.columns):
        per_pe.setdefault(sched.phys_map[pos], []).append(pos)
    pe_products: dict = {}
    for phys, logicals in sorted(per_pe.items()):
        by_order = {pos: {p.order: p for p in sched.columns[pos]} for pos in logicals}
        top = max((max(c) + 1 if c else 0) for c in by_order.values())
        seq = []
        for w in range(top):
            for pos in logicals:
                p = by_order[pos].get(w)
                if p is not None:
                    seq.append(p)
        pe_products[phys] = seq

    inst: dict = {}   # (phys, label) -> [product sequence positions]
    for phys, seq in pe_products.items():
        for n, p in enumerate(seq):
            inst.setdefault((phys, p.label), []).append(n)

    # vertical chains, bottom -> top; interior row gaps (possible after
    # expansion) are bridged by relay PEs that just forward the partial
    chains: dict = {}
    for label in sorted({lab for (_, lab) in inst}):
        pes = sorted({phys for (phys, lab2) in inst if lab2 == label})
        cols = {c for _, c in pes}
        if len(cols) != 1:
            raise CompileError(f"label {label} spans PE columns {sorted(cols)}")
        c = cols.pop()
        rows = [r for r, _ in pes]
        chains[label] = [(r, c) for r in range(min(rows), max(rows) + 1)]

    demoted: set = set()
    while True:
        built = _layout_transpose(
            layer, pe_products, inst, chains, demoted, psum_slots, reps
        )
        if built is not None:
            break
        victim = _pick_demotion(inst, demoted)
        if victim is None:
            raise CompileError(
                f"psum register pressure irreducible on {layer.name}: more "
                f"than {psum_slots} accumulator words required"
            )
        demoted.add(victim)
    programs, needed_errors = built

    plane = CompiledPlane(
        dataflow="padfree",
        set_rows=sched.phys_rows,
        set_cols=sched.phys_cols,
        out_h=layer.out_h,
        out_w=layer.out_w,
        in_shape=(eh, ew),
        kern_shape=(k, k),
        group_factor=sched.group_factor,
        expansion_factor=sched.expansion_factor,
        reps=reps,
        meta={"demoted_labels": len(demoted), "zero_products": 0},
    )
    table = plane.group_table
    table.formula_row_ids = row_ids_required(k, layer.stride)
    table.formula_id_bits = id_bits_required(k, layer.stride)

    err_gid: dict = {}
    all_needed = sorted({e for errs in needed_errors.values() for e in errs})
    for e in all_needed:
        members = sorted(p for p, errs in needed_errors.items() if e in errs)
        err_gid[e] = table.add(members)
        plane.a_sends.append(Send(SRC_IN, e[0] * ew + e[1], err_gid[e]))

    # weight broadcast, one kernel element per step, repeated per served
    # filter plane; with expansion a PE only consumes the steps of its
    # band, so groups are sized per step
    step_pes: dict = {}
    for phys, seq in pe_products.items():
        for p in seq:
            step_pes.setdefault(p.w_index, set()).add(phys)
    w_gid_of: dict = {}
    for w in sorted(step_pes):
        w_gid_of[w] = table.add(sorted(step_pes[w]))
    for rep in range(reps):
        for w in sorted(step_pes):
            u, v = w % k, w // k
            plane.b_sends.append(Send(SRC_KERN, u * k + v, w_gid_of[w], rep))

    for phys, prog in programs.items():
        prog.subscriptions = tuple(sorted({err_gid[e] for e in needed_errors[phys]}))
        prog.w_subscriptions = tuple(sorted(
            {w_gid_of[p.w_index] for p in pe_products.get(phys, [])}
        ))
        plane.programs[phys] = prog
    return plane


def _pick_demotion(inst, demoted):
    """Longest-lived accumulator first; deterministic tie-breaking."""
    best, best_key = None, None
    for (phys, label), positions in sorted(inst.items()):
        if label in demoted:
            continue
        key = (positions[-1] - positions[0], len(positions), phys, label)
        if best_key is None or key > best_key:
            best_key, best = key, label
    return best


def _step_key(w_index, k, stride):
    """Execution order of weight steps: filter columns grouped by their
    residue mod stride, so that the products of any output label run back
    to back and the live accumulator set stays near k instead of
    k * min(stride, k). A pure function of (k, stride)."""
    v, u = divmod(w_index, k)
    return (v % stride, v, u)


def _layout_transpose(layer, pe_products, inst, chains, demoted, psum_slots, reps=1):
    """Emit per-PE op streams; None when psum pressure exceeds capacity.

    Weight steps execute in residue-grouped order; folded logical columns
    run in rounds sized to the accumulator file (the weight stream repeats
    per round). The compute/close phase repeats ``reps`` times, once per
    served filter plane, with error operands loaded once up front; output
    indices are offset by the plane's output size per repetition.
    """
    out_w = layer.out_w
    out_len = layer.out_h * layer.out_w
    ew = layer.n_w
    k, stride = layer.k, layer.stride
    vids = _VidSpace()
    round_size = max(1, psum_slots // (k + 4))

    relay_of: dict = {}
    for label, chain in chains.items():
        if label in demoted:
            continue
        for phys in chain:
            if (phys, label) not in inst:
                relay_of.setdefault(phys, []).append(label)

    programs: dict = {}
    needed_errors: dict = {}
    for phys in sorted(set(pe_products) | set(relay_of)):
        seq = pe_products.get(phys, [])
        errs = sorted({divmod(p.e_index, ew) for p in seq})
        err_slot = {e: n for n, e in enumerate(errs)}
        needed_errors[phys] = errs

        # compute item list: optional LOAD_W per weight step when this PE
        # executes more than one product per step (grouping), else MACs
        # pop the broadcast queue directly
        steps = {}
        for p in seq:
            steps.setdefault(p.w_index, []).append(p)
        use_rf_w = any(len(v) > 1 for v in steps.values())
        compute = []
        for w in sorted(steps):
            if use_rf_w:
                compute.append(("loadw", w))
            for p in steps[w]:
                compute.append(("mac", p))
        mac_pos = [n for n, c in enumerate(compute) if c[0] == "mac"]

        closes = []   # (due, seqno, payload)
        seqno = 0
        for (ph, label), positions in sorted(inst.items()):
            if ph != phys:
                continue
            if label in demoted:
                for pn in positions:
                    closes.append(
                        (mac_pos[pn] + _PIPE_GAP, seqno, ("demote", label, pn))
                    )
                    seqno += 1
            else:
                chain = chains[label]
                idx = chain.index(phys)
                wait = 1 if idx < len(chain) - 1 else 0
                kind = "write" if idx == 0 else "pass"
                up = chain[idx - 1] if idx > 0 else None
                closes.append(
                    (mac_pos[positions[-1]] + _PIPE_GAP, seqno,
                     (kind, label, wait, up))
                )
                seqno += 1
        closes.sort(key=lambda x: (x[0], x[1]))

        base = []
        ci = 0
        for n, c in enumerate(compute):
            while ci < len(closes) and closes[ci][0] <= n:
                base.append(("close", closes[ci][2]))
                ci += 1
            base.append(c)
        while ci < len(closes):
            base.append(("close", closes[ci][2]))
            ci += 1
        for label in relay_of.get(phys, []):
            base.append(("relay", label))

        stream = [(rep, item) for rep in range(reps) for item in base]

        # accumulator liveness over the final stream; demoted labels get a
        # fresh short-lived tag per product
        first: dict = {}
        last: dict = {}
        dm_tags = []
        for n, (rep, item) in enumerate(stream):
            if item[0] == "mac":
                p = item[1]
                if p.label in demoted:
                    tag = ("D", len(dm_tags))
                    dm_tags.append(tag)
                else:
                    tag = ("L", rep, p.label)
                first.setdefault(tag, n)
                last[tag] = n
        dm_i = 0
        for n, (rep, item) in enumerate(stream):
            if item[0] == "close":
                if item[1][0] == "demote":
                    last[dm_tags[dm_i]] = n
                    dm_i += 1
                else:
                    last[("L", rep, item[1][1])] = n
            elif item[0] == "relay":
                tag = ("R", rep, item[1], n)
                first[tag] = n
                last[tag] = n
        slot_of, used = _linear_scan([(first[t], last[t], t) for t in first])
        if used > psum_slots:
            return None

        ops = [(OP_LOAD_IN, err_slot[e]) for e in errs]
        dm_i = 0
        dm_close_i = 0
        for n, (rep, item) in enumerate(stream):
            if item[0] == "loadw":
                ops.append((OP_LOAD_W, 0))
            elif item[0] == "mac":
                p = item[1]
                if p.label in demoted:
                    slot = slot_of[dm_tags[dm_i]]
                    dm_i += 1
                else:
                    slot = slot_of[("L", rep, p.label)]
                ops.append(
                    (OP_MAC, slot, 0 if use_rf_w else -1,
                     err_slot[divmod(p.e_index, ew)], 0)
                )
            elif item[0] == "close":
                payload = item[1]
                if payload[0] == "demote":
                    _, label, pn = payload
                    slot = slot_of[dm_tags[dm_close_i]]
                    dm_close_i += 1
                    r, c = label
                    ops.append(
                        (OP_WRITE_OUT, slot, 0, -1,
                         rep * out_len + r * out_w + c)
                    )
                else:
                    kind, label, wait, up = payload
                    slot = slot_of[("L", rep, label)]
                    vid = vids.get(phys, (rep, label)) if wait else -1
                    if kind == "write":
                        r, c = label
                        ops.append(
                            (OP_WRITE_OUT, slot, wait, vid,
                             rep * out_len + r * out_w + c)
                        )
                    else:
                        ops.append(
                            (OP_PASS_UP, slot, wait, vid,
                             vids.get(up, (rep, label)))
                        )
            else:  # relay
                label = item[1]
                chain = chains[label]
                idx = chain.index(phys)
                relay_n = [
                    m for m, (rp, it) in enumerate(stream)
                    if rp == rep and it[0] == "relay" and it[1] == label
                ][0]
                slot = slot_of[("R", rep, label, relay_n)]
                ops.append(
                    (OP_PASS_UP, slot, 1, vids.get(phys, (rep, label)),
                     vids.get(chain[idx - 1], (rep, label)))
                )

        programs[phys] = PEProgram(
            ops=ops,
            n_acc_slots=used,
            n_in_slots=len(errs),
            n_w_slots=1 if use_rf_w else 0,
        )
    return programs, needed_errors


# ---------------------------------------------------------------------------
# dilated convolution
# ---------------------------------------------------------------------------

def build_dilated_schedule(layer: LayerSpec) -> ScheduleMatrix:
    """Symbolic convolution between the ifmap and the (conceptually padded)
    error matrix: one column per output gradient element, holding only the
    in-bounds products; gradient groups need no labelling beyond the owning
    column since each column accumulates a single output."""
    k, s = layer.k, layer.stride
    eh, ew = layer.error_dims
    sched = ScheduleMatrix("dilated", k, s, eh, ew)
    for u in range(k):
        for v in range(k):
            col = []
            order = 0
            for i in range(eh):
                a = u + s * i
                if a >= layer.n_h:
                    continue
                for j in range(ew):
                    b = v + s * j
                    if b >= layer.n_w:
                        continue
                    col.append(
                        SymbolicProduct(i * ew + j, a * layer.n_w + b, (u, v), order)
                    )
                    order += 1
            sched.columns[(u, v)] = col
    sched.pe_rows, sched.pe_cols = k, k
    return sched


def compile_dilated(
    layer: LayerSpec,
    array_rows: int = 13,
    array_cols: int = 15,
    in_slots: int = 75,
    psum_slots: int = 24,
    expansion: int = 1,
    reps: int = 1,
) -> CompiledPlane:
    """Compile one dilated-convolution plane (filter-gradient computation).

    ``reps`` > 1 reuses each multicast ifmap chunk for several error
    planes: the chunk is loaded once and the error broadcast phase repeats
    per plane.
    """
    if layer.conv_type != DILATED:
        raise CompileError(f"layer {layer.name} is not a dilated conv")
    k, s = layer.k, layer.stride
    eh, ew = layer.error_dims
    sched = build_dilated_schedule(layer)
    if expansion > 1:
        if k * expansion > array_rows:
            raise CompileError(
                f"expansion x{expansion} needs {k * expansion} rows, "
                f"array has {array_rows}"
            )
        if k > array_cols:
            raise CompileError(f"kernel side {k} exceeds array cols {array_cols}")
        row_of = lambda u, stratum: u * expansion + stratum
        fold_map = None
    else:
        rows_used = min(k, array_rows)
        cols_used = min(k, array_cols)
        row_block = -(-k // rows_used)
        fold_map = lambda u, v: (u // row_block, v % cols_used)
        row_of = None

    # error-row strata for expansion: stratum s handles rows [lo, hi)
    if expansion > 1:
        band = -(-eh // expansion)
        strata = [(min(s0 * band, eh), min((s0 + 1) * band, eh)) for s0 in range(expansion)]
    else:
        strata = [(0, eh)]

    vids = _VidSpace()
    programs: dict = {}
    pe_errors: dict = {}    # phys -> error (i, j) set consumed
    pe_inputs: dict = {}    # phys -> list of chunks, chunk = [(a, b) ...]
    pe_logical: dict = {}   # phys -> [(u, v, stratum)]

    for (u, v) in sorted(sched.columns):
        for st, (lo, hi) in enumerate(strata):
            if expansion > 1:
                phys = (row_of(u, st), v)
            else:
                phys = fold_map(u, v)
            pe_logical.setdefault(phys, []).append((u, v, st, lo, hi))

    for phys, logs in sorted(pe_logical.items()):
        chunks = []      # per error row: loads + macs for every folded logical
        errors_used = set()
        all_rows = sorted({i for (u, v, st, lo, hi) in logs for i in range(lo, hi)})
        for i in all_rows:
            loads = []
            macs = []
            for (u, v, st, lo, hi) in logs:
                if not (lo <= i < hi):
                    continue
                a = u + s * i
                if a >= layer.n_h:
                    continue
                for j in range(ew):
                    b = v + s * j
                    if b >= layer.n_w:
                        continue
                    loads.append((a, b))
                    macs.append(((u, v), (a, b), (i, j)))
                    errors_used.add((i, j))
            if loads:
                chunks.append((i, loads, macs))
        pe_errors[phys] = errors_used
        pe_inputs[phys] = chunks

    plane = CompiledPlane(
        dataflow="padfree",
        set_rows=(k * expansion) if expansion > 1 else min(k, array_rows),
        set_cols=min(k, array_cols),
        out_h=layer.out_h,
        out_w=layer.out_w,
        in_shape=(layer.n_h, layer.n_w),
        kern_shape=(eh, ew),
        group_factor=sched.group_factor if expansion == 1 else 1,
        expansion_factor=expansion,
        reps=reps,
        meta={"zero_products": 0},
    )
    table = plane.group_table
    table.formula_row_ids = row_ids_required(k, s)
    table.formula_id_bits = id_bits_required(k, s)

    # error broadcast: row-major within each chunk, repeated per served
    # error plane; each element goes to the PEs whose ifmap read for it is
    # in bounds (all of them, for interior geometry)
    err_gid = {}
    chunk_rows = sorted({i for chunks in pe_inputs.values() for (i, _, _) in chunks})
    b_stream = []
    for i in chunk_rows:
        row_errs = sorted({ij for es in pe_errors.values() for ij in es if ij[0] == i})
        for ij in row_errs:
            members = sorted(p for p, es in pe_errors.items() if ij in es)
            err_gid[ij] = table.add(members)
        for rep in range(reps):
            for ij in row_errs:
                b_stream.append(Send(SRC_KERN, ij[0] * ew + ij[1], err_gid[ij], rep))
    plane.b_sends = b_stream

    # ifmap multicast, chunked by error row; elements go out column-major
    # within a chunk so every kernel row's PEs receive their operands in
    # lockstep with the error broadcast (queues are only 8 deep)
    a_stream = []
    in_gid: dict = {}
    for i in chunk_rows:
        elems = sorted(
            {ab for phys, chunks in pe_inputs.items()
             for (ci, loads, _) in chunks if ci == i for ab in loads},
            key=lambda ab: (ab[1], ab[0]),
        )
        for ab in elems:
            members = sorted(
                phys for phys, chunks in pe_inputs.items()
                for (ci, loads, _) in chunks if ci == i and ab in loads
            )
            gid = table.add(members)
            in_gid[(i, ab)] = gid
            a_stream.append(Send(SRC_IN, ab[0] * layer.n_w + ab[1], gid))
    plane.a_sends = a_stream

    for phys, logs in sorted(pe_logical.items()):
        chunks = pe_inputs[phys]
        rf_need = max((len(set(loads)) for (_, loads, _) in chunks), default=0)
        if len(logs) == 1 and reps == 1:
            rf_need = 0   # operands stream off the queue, no staging
        if rf_need > in_slots:
            raise CompileError(
                f"dilated chunk needs {rf_need} ifmap RF words on PE {phys}, "
                f"capacity {in_slots}"
            )
        if len(logs) * reps > psum_slots:
            raise CompileError(
                f"dilated mapping needs {len(logs) * reps} psum words on PE "
                f"{phys}, capacity {psum_slots}"
            )
        acc_slot = {}
        for n, (u, v, st, lo, hi) in enumerate(logs):
            for rep in range(reps):
                acc_slot[(rep, (u, v))] = rep * len(logs) + n
        ops = []
        subs = set()
        wsubs = set()
        # single-use operands stream straight off the multicast queue; a
        # register stage is only needed when folds or served planes reuse
        # the chunk, and is interleaved with computation where the arrival
        # order allows so the queue keeps draining
        fold = len(logs)
        for (ci, loads, macs) in chunks:
            slot_map = {}
            by_err: dict = {}
            for (uv, ab, ij) in macs:
                by_err.setdefault(ij, []).append((uv, ab))
            for ab in sorted(set(loads)):
                subs.add(in_gid[(ci, ab)])
                if fold > 1 or reps > 1:
                    slot_map[ab] = len(slot_map)
            for ij in sorted(by_err):
                wsubs.add(err_gid[ij])
            if fold > 1:
                # folded gradients share arrivals: stage the whole chunk
                # in arrival (column-major) order
                for ab in sorted(slot_map, key=lambda ab: (ab[1], ab[0])):
                    ops.append((OP_LOAD_IN, slot_map[ab]))
                rep_range = range(reps)
            elif reps > 1:
                # one arrival per step: stage and compute in lockstep
                for ij in sorted(by_err):
                    (uv, ab), = by_err[ij]
                    ops.append((OP_LOAD_IN, slot_map[ab]))
                    ops.append((OP_MAC, acc_slot[(0, uv)], -1, slot_map[ab], 0))
                rep_range = range(1, reps)
            else:
                for ij in sorted(by_err):
                    (uv, ab), = by_err[ij]
                    ops.append((OP_MAC, acc_slot[(0, uv)], -1, -1, 0))
                rep_range = range(0)
            for rep in rep_range:
                for ij in sorted(by_err):
                    pairs = by_err[ij]
                    use_rf_w = len(pairs) > 1
                    if use_rf_w:
                        ops.append((OP_LOAD_W, 0))
                    for (uv, ab) in pairs:
                        ops.append(
                            (OP_MAC, acc_slot[(rep, uv)],
                             0 if use_rf_w else -1, slot_map[ab], 0)
                        )
        # closes: one per served plane per gradient element
        n_w_slots = 1 if any(op[0] == OP_LOAD_W for op in ops) else 0
        out_len = layer.out_h * layer.out_w
        for rep in range(reps):
            for (u, v, st, lo, hi) in logs:
                slot = acc_slot[(rep, (u, v))]
                out_idx = rep * out_len + u * layer.out_w + v
                if expansion > 1:
                    label = (rep, (u, v))
                    if st == 0:
                        ops.append(
                            (OP_WRITE_OUT, slot, 1, vids.get(phys, label), out_idx)
                        )
                    else:
                        up = (row_of(u, st - 1), v)
                        ops.append(
                            (OP_PASS_UP, slot,
                             1 if st < expansion - 1 else 0,
                             vids.get(phys, label) if st < expansion - 1 else -1,
                             vids.get(up, label))
                        )
                else:
                    ops.append((OP_WRITE_OUT, slot, 0, -1, out_idx))
        programs[phys] = PEProgram(
            ops=ops,
            subscriptions=tuple(sorted(subs)),
            w_subscriptions=tuple(sorted(wsubs)),
            n_acc_slots=len(logs) * reps,
            n_in_slots=rf_need,
            n_w_slots=n_w_slots,
        )
    plane.programs = programs
    plane.set_rows = max(r for (r, _) in programs) + 1
    plane.set_cols = max(c for (_, c) in programs) + 1
    return plane
