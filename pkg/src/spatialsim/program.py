"""Compiled per-PE programs and feeder schedules.

A compiled plane is the unit the simulator executes: a set of PE programs
(flat micro-op arrays driven by an index register, no branching), the
multicast group table used for operand delivery, and symbolic feeder
schedules that the pass runner binds to concrete tensor data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .noc import MulticastGroupTable

PROGRAM_FORMAT_VERSION = 1

# micro-op opcodes; psum hand-offs are matched by compile-time virtual merge
# tags so a physical accumulator slot can be reused across output elements
OP_LOAD_W = 0     # (dst_slot,)                     pop weight queue -> filter RF
OP_LOAD_IN = 1    # (dst_slot,)                     pop input queue -> ifmap RF
OP_MAC = 2        # (acc_slot, w_src, in_src, forward) src >= 0: RF slot, -1: queue
OP_PASS_UP = 3    # (acc_slot, wait_n, self_vid, up_vid)    send psum north
OP_WRITE_OUT = 4  # (acc_slot, wait_n, self_vid, out_index) emit to output net
OP_IDLE = 5       # ()

OP_NAMES = {
    OP_LOAD_W: "LOAD_W",
    OP_LOAD_IN: "LOAD_IN",
    OP_MAC: "MAC",
    OP_PASS_UP: "PASS_UP",
    OP_WRITE_OUT: "WRITE_OUT",
    OP_IDLE: "IDLE",
}

# feeder source kinds
SRC_IN = 0      # element of the plane input (flat index)
SRC_KERN = 1    # element of the plane kernel (flat index)
SRC_ZERO = 2    # structural zero (padding); src_idx = padded-layout address


@dataclass(frozen=True)
class Send:
    """One feeder emission: a value routed to a multicast group (group_id
    >= 0) or to a fixed edge port (group_id == -1, edge feeders).

    ``plane`` selects among the kernel/output planes a pass serves when a
    single input stream is reused across several of them."""

    kind: int
    src_idx: int
    group_id: int
    plane: int = 0


@dataclass
class PEProgram:
    """Flat micro-op stream for one PE plus its operand subscriptions."""

    ops: list = field(default_factory=list)
    subscriptions: tuple = ()        # group ids whose sends land in the input queue
    w_subscriptions: tuple = ()      # group ids landing in the weight queue
    n_acc_slots: int = 0
    n_in_slots: int = 0
    n_w_slots: int = 0

    def counts(self) -> dict:
        out = {name: 0 for name in OP_NAMES.values()}
        for op in self.ops:
            out[OP_NAMES[op[0]]] += 1
        return out


@dataclass
class CompiledPlane:
    """One 2D plane's schedule mapped onto a PE set.

    ``programs`` maps set-local (row, col) -> PEProgram. ``a_sends`` feed
    the multicast input stream, ``b_sends`` the broadcast weight stream;
    ``west_sends``/``north_sends`` (per edge row/column) are used by the
    systolic matmul dataflow instead. ``out_len`` is the flat size of the
    plane output indexed by WRITE_OUT ops.
    """

    dataflow: str
    set_rows: int
    set_cols: int
    programs: dict = field(default_factory=dict)
    group_table: MulticastGroupTable = field(default_factory=MulticastGroupTable)
    a_sends: list = field(default_factory=list)
    b_sends: list = field(default_factory=list)
    west_sends: dict = field(default_factory=dict)   # row -> [Send]
    north_sends: dict = field(default_factory=dict)  # col -> [Send]
    out_h: int = 0
    out_w: int = 0
    in_shape: tuple = (0, 0)
    kern_shape: tuple = (0, 0)
    group_factor: int = 1
    expansion_factor: int = 1
    reps: int = 1    # kernel/output planes served per input-stream pass
    meta: dict = field(default_factory=dict)

    @property
    def out_len(self) -> int:
        return self.reps * self.out_h * self.out_w

    def total_products(self) -> int:
        return sum(
            1 for p in self.programs.values() for op in p.ops if op[0] == OP_MAC
        )

    def zero_product_count(self) -> int:
        """Products whose schedule references a structural-zero operand.

        Compilers record the exact count in ``meta`` while enumerating
        their schedules; the symbolic walk below (tracing SRC_ZERO sends
        into RF slots and queues) covers group-addressed planes and is
        used as an independent cross-check in tests.
        """
        if "zero_products" in self.meta:
            return self.meta["zero_products"]
        total = 0
        for (r, c), prog in sorted(self.programs.items()):
            in_q = [
                s.kind == SRC_ZERO
                for s in self.a_sends
                if s.group_id in prog.subscriptions
            ]
            w_q = [
                s.kind == SRC_ZERO
                for s in self.b_sends
                if s.group_id in prog.w_subscriptions
            ]
            if self.west_sends or self.north_sends:
                in_q, w_q = _edge_streams_for(self, r, c)
            in_rf = {}
            w_rf = {}
            ii = wi = 0
            for op in prog.ops:
                if op[0] == OP_LOAD_IN:
                    in_rf[op[1]] = in_q[ii]
                    ii += 1
                elif op[0] == OP_LOAD_W:
                    w_rf[op[1]] = w_q[wi]
                    wi += 1
                elif op[0] == OP_MAC:
                    _, _, w_src, in_src, fwd = op[:5]
                    wz = w_q[wi] if w_src < 0 else w_rf[w_src]
                    iz = in_q[ii] if in_src < 0 else in_rf[in_src]
                    if w_src < 0:
                        wi += 1
                    if in_src < 0:
                        ii += 1
                    if wz or iz:
                        total += 1
        return total


def _edge_streams_for(plane: CompiledPlane, r: int, c: int):
    """Zero-flag streams reaching PE (r, c) through systolic forwarding:
    west stream of its row, north stream of its column."""
    in_q = [s.kind == SRC_ZERO for s in plane.west_sends.get(r, [])]
    w_q = [s.kind == SRC_ZERO for s in plane.north_sends.get(c, [])]
    return in_q, w_q


# ---------------------------------------------------------------------------
# serialization (versioned program files)
# ---------------------------------------------------------------------------

def plane_to_dict(plane: CompiledPlane) -> dict:
    return {
        "format_version": PROGRAM_FORMAT_VERSION,
        "dataflow": plane.dataflow,
        "set_rows": plane.set_rows,
        "set_cols": plane.set_cols,
        "out_h": plane.out_h,
        "out_w": plane.out_w,
        "in_shape": list(plane.in_shape),
        "kern_shape": list(plane.kern_shape),
        "group_factor": plane.group_factor,
        "expansion_factor": plane.expansion_factor,
        "reps": plane.reps,
        "groups": {str(g): list(map(list, m)) for g, m in plane.group_table.groups.items()},
        "formula_row_ids": plane.group_table.formula_row_ids,
        "formula_id_bits": plane.group_table.formula_id_bits,
        "programs": {
            f"{r},{c}": {
                "ops": [list(op) for op in p.ops],
                "subscriptions": list(p.subscriptions),
                "w_subscriptions": list(p.w_subscriptions),
                "n_acc_slots": p.n_acc_slots,
                "n_in_slots": p.n_in_slots,
                "n_w_slots": p.n_w_slots,
            }
            for (r, c), p in sorted(plane.programs.items())
        },
        "a_sends": [[s.kind, s.src_idx, s.group_id, s.plane] for s in plane.a_sends],
        "b_sends": [[s.kind, s.src_idx, s.group_id, s.plane] for s in plane.b_sends],
        "west_sends": {
            str(r): [[s.kind, s.src_idx, s.group_id, s.plane] for s in sends]
            for r, sends in plane.west_sends.items()
        },
        "north_sends": {
            str(c): [[s.kind, s.src_idx, s.group_id, s.plane] for s in sends]
            for c, sends in plane.north_sends.items()
        },
        "meta": plane.meta,
    }


def plane_from_dict(d: dict) -> CompiledPlane:
    if d.get("format_version") != PROGRAM_FORMAT_VERSION:
        raise ValueError(
            f"unsupported program format version {d.get('format_version')!r}"
        )
    table = MulticastGroupTable(
        groups={int(g): tuple(tuple(x) for x in m) for g, m in d["groups"].items()},
        formula_row_ids=d.get("formula_row_ids", 0),
        formula_id_bits=d.get("formula_id_bits", 0),
    )
    plane = CompiledPlane(
        dataflow=d["dataflow"],
        set_rows=d["set_rows"],
        set_cols=d["set_cols"],
        group_table=table,
        out_h=d["out_h"],
        out_w=d["out_w"],
        in_shape=tuple(d["in_shape"]),
        kern_shape=tuple(d["kern_shape"]),
        group_factor=d.get("group_factor", 1),
        expansion_factor=d.get("expansion_factor", 1),
        reps=d.get("reps", 1),
        meta=d.get("meta", {}),
    )
    for key, pd in d["programs"].items():
        r, c = map(int, key.split(","))
        plane.programs[(r, c)] = PEProgram(
            ops=[tuple(op) for op in pd["ops"]],
            subscriptions=tuple(pd["subscriptions"]),
            w_subscriptions=tuple(pd["w_subscriptions"]),
            n_acc_slots=pd["n_acc_slots"],
            n_in_slots=pd["n_in_slots"],
            n_w_slots=pd["n_w_slots"],
        )
    plane.a_sends = [Send(*s) for s in d["a_sends"]]
    plane.b_sends = [Send(*s) for s in d["b_sends"]]
    plane.west_sends = {
        int(r): [Send(*s) for s in sends] for r, sends in d.get("west_sends", {}).items()
    }
    plane.north_sends = {
        int(c): [Send(*s) for s in sends] for c, sends in d.get("north_sends", {}).items()
    }
    return plane


def save_plane(plane: CompiledPlane, path: str):
    with open(path, "w") as fh:
        json.dump(plane_to_dict(plane), fh, indent=1, sort_keys=True)


def load_plane(path: str) -> CompiledPlane:
    with open(path) as fh:
        return plane_from_dict(json.load(fh))
