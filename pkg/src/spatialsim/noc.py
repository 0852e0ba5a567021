"""On-chip network model: bus widths, multicast-group ID configuration,
and bus-width-limited transfer timing.

The array is served by four networks: a broadcast/filter stream and an
input multicast stream (the two sub-buses of the global input network),
a global output network draining results, and vertical point-to-point
links between neighbouring PEs. Multicast delivery is addressed by a
(row tag, column tag) pair: each X-bus stores a small set of row IDs and
each PE a small set of column IDs, reconfigured per layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class NocConfigError(ValueError):
    """Raised when a group table cannot be realized within ID capacity."""


@dataclass
class NocConfig:
    """Bus widths and multicast ID capacity.

    Defaults are the extended-network configuration; ``eyeriss_baseline``
    gives the stock widths. The extended network widens only the global
    input network (112 vs 80 total bits, +40%); output and local links are
    unchanged.
    """

    gin_main_bits: int = 80   # multicast input stream
    gin_sub_bits: int = 32    # broadcast filter/weight stream
    gon_bits: int = 64
    local_bits: int = 64
    hop_latency: int = 1
    row_id_slots: int = 32
    col_id_slots: int = 32
    id_bits: int = 8
    value_bits: int = 16

    def __post_init__(self):
        for name in ("gin_main_bits", "gin_sub_bits", "gon_bits", "local_bits"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.hop_latency < 1:
            raise ValueError("hop_latency must be >= 1")

    @classmethod
    def eyeriss_baseline(cls) -> "NocConfig":
        return cls(gin_main_bits=64, gin_sub_bits=16)

    def lanes(self, bus_bits: int) -> int:
        """Values of ``value_bits`` width that fit in one bus beat."""
        return max(1, bus_bits // self.value_bits)


def row_ids_required(k: int, stride: int) -> int:
    """Row (or column) IDs each X-bus must store for a k x k filter at the
    given stride: ceil(k / stride)."""
    if k < 1 or stride < 1:
        raise ValueError("k and stride must be >= 1")
    return -(-k // stride)


def id_bits_required(k: int, stride: int) -> int:
    """Bits per ID: ceil(log2(2k - stride)); 2k - s counts the distinct
    multicast group shapes along one axis."""
    groups = 2 * k - stride
    if groups < 1:
        raise ValueError("requires 2k - stride >= 1")
    return math.ceil(math.log2(groups)) if groups > 1 else 0


def transfer_cycles(payload_bits: int, bus_width_bits: int, hop_latency: int = 1) -> int:
    """Cycles to move a payload over a finite-width bus."""
    if bus_width_bits <= 0:
        raise ValueError("bus width must be > 0")
    return -(-payload_bits // bus_width_bits) * hop_latency


@dataclass
class MulticastGroupTable:
    """Compile-time multicast groups over physical PE coordinates.

    ``groups`` maps group id -> ordered tuple of (row, col) members.
    ``formula_row_ids`` / ``formula_id_bits`` record the per-layer sizing
    formulas for validation and reporting.
    """

    groups: dict[int, tuple[tuple[int, int], ...]] = field(default_factory=dict)
    formula_row_ids: int = 0
    formula_id_bits: int = 0

    def add(self, members) -> int:
        """Register a group (deduplicated); returns its id."""
        key = tuple(sorted(set(members)))
        if not key:
            raise ValueError("multicast group cannot be empty")
        for gid, existing in self.groups.items():
            if existing == key:
                return gid
        gid = len(self.groups)
        self.groups[gid] = key
        return gid


@dataclass
class IdAssignment:
    """Realization of a group table on the ID-addressed multicast network.

    Each group gets a (row_tag, col_tag). An X-bus forwards a message when
    the row tag is in its list; a PE accepts when the column tag is in its
    list. Column tags come in two flavours: pattern tags shared by groups
    whose membership is a full row-set x column-set product (acceptance is
    then a per-column property), and exclusive tags for irregular groups
    (diagonals), unique among groups sharing an X-bus.
    """

    row_tags: dict[int, int]                     # group id -> row tag
    col_tags: dict[int, int]                     # group id -> col tag
    bus_row_ids: dict[int, tuple[int, ...]]      # PE row -> stored row tags
    pe_col_ids: dict[tuple[int, int], tuple[int, ...]]  # PE -> stored col tags

    def delivery_set(self, gid: int) -> tuple[tuple[int, int], ...]:
        """PEs that would accept group ``gid``'s message (for verification)."""
        r, c = self.row_tags[gid], self.col_tags[gid]
        out = []
        for (row, col), tags in self.pe_col_ids.items():
            if r in self.bus_row_ids.get(row, ()) and c in tags:
                out.append((row, col))
        return tuple(sorted(out))


def _is_product(members) -> tuple[bool, tuple, tuple]:
    rows = tuple(sorted({r for r, _ in members}))
    cols = tuple(sorted({c for _, c in members}))
    return (len(members) == len(rows) * len(cols), rows, cols)


def configure(table: MulticastGroupTable, noc: NocConfig) -> IdAssignment:
    """Assign (row tag, col tag) pairs so every group is reachable exactly.

    Raises :class:`NocConfigError` naming the offending capacity when the
    configured slot counts or ID width are insufficient. The assignment is
    verified exhaustively before being returned.
    """
    row_patterns: dict[tuple, int] = {}
    col_patterns: dict[tuple, int] = {}
    row_tags: dict[int, int] = {}
    col_tags: dict[int, int] = {}
    bus_rows: dict[int, set] = {}
    pe_cols: dict[tuple[int, int], set] = {}
    # exclusive tags are drawn downward from the top of the id space so
    # they stay clear of pattern tags, and may be reused by groups that
    # share no X-bus
    max_id = 2 ** noc.id_bits
    exclusive_tags: list[int] = []
    bus_groups: dict[int, list[int]] = {}

    for gid in sorted(table.groups):
        members = table.groups[gid]
        is_prod, rows, cols = _is_product(members)
        if rows not in row_patterns:
            row_patterns[rows] = len(row_patterns)
        rtag = row_patterns[rows]
        if rtag >= max_id:
            raise NocConfigError(
                f"row tag space exhausted: need >= {len(row_patterns)} ids, "
                f"id_bits={noc.id_bits} allows {max_id}"
            )
        row_tags[gid] = rtag
        for r in rows:
            bus_rows.setdefault(r, set()).add(rtag)
            bus_groups.setdefault(r, []).append(gid)

        if is_prod:
            if cols not in col_patterns:
                col_patterns[cols] = len(col_patterns)
            ctag = col_patterns[cols]
            if ctag >= max_id:
                raise NocConfigError(
                    f"column tag space exhausted at {len(col_patterns)} patterns"
                )
        else:
            # unique tag among groups sharing any X-bus
            used = set()
            for r in rows:
                for other in bus_groups.get(r, []):
                    if other != gid and other in col_tags:
                        used.add(col_tags[other])
            ctag = max_id - 1
            while ctag >= 0 and ctag in used:
                ctag -= 1
            if ctag < 0:
                raise NocConfigError(
                    f"id space exhausted assigning exclusive column tag "
                    f"(id_bits={noc.id_bits})"
                )
            exclusive_tags.append(ctag)
        col_tags[gid] = ctag
        for (r, c) in members:
            pe_cols.setdefault((r, c), set()).add(ctag)

    if exclusive_tags and min(exclusive_tags) < len(col_patterns):
        raise NocConfigError(
            f"id space too small: {len(col_patterns)} column patterns overlap "
            f"exclusive tags down to {min(exclusive_tags)} (id_bits={noc.id_bits})"
        )

    for r, tags in bus_rows.items():
        if len(tags) > noc.row_id_slots:
            raise NocConfigError(
                f"X-bus {r} needs {len(tags)} row IDs, "
                f"configured slots = {noc.row_id_slots}"
            )
    for pe, tags in pe_cols.items():
        if len(tags) > noc.col_id_slots:
            raise NocConfigError(
                f"PE {pe} needs {len(tags)} column IDs, "
                f"configured slots = {noc.col_id_slots}"
            )

    assign = IdAssignment(
        row_tags,
        col_tags,
        {r: tuple(sorted(t)) for r, t in bus_rows.items()},
        {p: tuple(sorted(t)) for p, t in pe_cols.items()},
    )
    for gid, members in table.groups.items():
        got = assign.delivery_set(gid)
        if got != members:
            raise NocConfigError(
                f"group {gid} not exactly addressable: members {members}, "
                f"delivery {got}"
            )
    return assign
