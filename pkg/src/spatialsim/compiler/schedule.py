"""Symbolic schedule construction for the zero-padding-free dataflows.

The transpose-convolution schedule is built in the compile-time steps:
symbolic vectors and their outer product (which by construction contains
no padding-induced zero multiplication), output labelling via a placeholder
transposed convolution, column-to-PE assignment, and circular shifting of
computation blocks so that every label's partial sums line up vertically.
Grouping folds a large logical grid onto a small physical array; expansion
spreads a small schedule over more PEs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace


class CompileError(RuntimeError):
    """Schedule cannot be realized on the given array; message names the
    limiting resource."""


@dataclass
class SymbolicProduct:
    """One multiplication: weight execution index x input element.

    ``w_index`` orders execution (weights are broadcast in this order, one
    per step: index t maps to kernel element (row t % k, col t // k)).
    ``e_index`` is the flat input-element index. ``label`` is the output
    coordinate the product accumulates into; ``order`` its execution
    position within the owning PE column.
    """

    w_index: int
    e_index: int
    label: tuple | None = None
    order: int = 0


@dataclass
class ScheduleMatrix:
    """Products arranged in columns, one column per logical PE.

    For transpose schedules the logical grid equals the error-matrix dims
    and ``columns[(i, j)]`` holds one product per weight step. Dilated
    schedules use one column per output gradient element.
    """

    kind: str                      # "transpose" | "dilated"
    k: int
    stride: int
    err_h: int
    err_w: int
    columns: dict = field(default_factory=dict)
    pe_rows: int = 0
    pe_cols: int = 0
    group_factor: int = 1
    expansion_factor: int = 1
    shifted: bool = False
    # logical -> physical placement (filled by assign/grouping)
    phys_map: dict = field(default_factory=dict)
    phys_rows: int = 0
    phys_cols: int = 0

    def total_products(self) -> int:
        return sum(len(c) for c in self.columns.values())

    def labels(self) -> dict:
        """label -> list of (logical_pe, product)."""
        out: dict = {}
        for pos in sorted(self.columns):
            for p in self.columns[pos]:
                if p.label is not None:
                    out.setdefault(p.label, []).append((pos, p))
        return out


def _w_uv(w_index: int, k: int) -> tuple[int, int]:
    v, u = divmod(w_index, k)
    return u, v


def symbolic_outer_product(k: int, error_dims: tuple[int, int]) -> ScheduleMatrix:
    """All products of every kernel element with every error element:
    a k^2 x (error count) matrix with no padding zeros in it."""
    if k < 1:
        raise CompileError("kernel side must be >= 1")
    eh, ew = error_dims
    if eh < 1 or ew < 1:
        raise CompileError("error dims must be >= 1")
    sched = ScheduleMatrix("transpose", k, 1, eh, ew)
    for i in range(eh):
        for j in range(ew):
            sched.columns[(i, j)] = [
                SymbolicProduct(w, i * ew + j, None, w) for w in range(k * k)
            ]
    sched.pe_rows, sched.pe_cols = eh, ew
    return sched


def label_products(sched: ScheduleMatrix, stride: int) -> ScheduleMatrix:
    """Tag every product with the output coordinate it accumulates into.

    With the error element at padded position (k-1+S*i, k-1+S*j) and the
    kernel element (u, v), the product lands in output (S*i + u, S*j + v);
    this is the placeholder transposed convolution evaluated symbolically.
    """
    k = sched.k
    sched = replace(sched, stride=stride, columns=dict(sched.columns))
    for (i, j), col in sched.columns.items():
        new_col = []
        for p in col:
            u, v = _w_uv(p.w_index, k)
            new_col.append(
                SymbolicProduct(p.w_index, p.e_index, (stride * i + u, stride * j + v), p.order)
            )
        sched.columns[(i, j)] = new_col
    return sched


def label_multiplicity(sched: ScheduleMatrix) -> dict:
    out: dict = {}
    for col in sched.columns.values():
        for p in col:
            if p.label is not None:
                out[p.label] = out.get(p.label, 0) + 1
    return out


def assign_columns(sched: ScheduleMatrix, array_rows: int, array_cols: int) -> ScheduleMatrix:
    """Place the logical grid at the array origin. Raises when the grid
    exceeds the physical array; callers then apply grouping (the schedule
    is never silently truncated)."""
    if sched.pe_rows > array_rows or sched.pe_cols > array_cols:
        raise CompileError(
            f"logical PE grid {sched.pe_rows}x{sched.pe_cols} exceeds array "
            f"{array_rows}x{array_cols}; apply grouping"
        )
    sched = replace(sched, phys_map={pos: pos for pos in sched.columns})
    sched.phys_rows, sched.phys_cols = sched.pe_rows, sched.pe_cols
    return sched


def circular_shift(sched: ScheduleMatrix, w_x: int, stride: int) -> ScheduleMatrix:
    """Rotate computation blocks horizontally: the block at weight step t
    moves floor(t / (w_x * stride)) PEs to the right, wrapping within its
    PE row, after which all same-label products sit in a single column."""
    if sched.kind != "transpose":
        raise CompileError("circular shift applies to transpose schedules")
    ew = sched.err_w
    out_cols: dict = {pos: [] for pos in sched.columns}
    for (i, j), col in sched.columns.items():
        for p in col:
            shift = p.w_index // (w_x * stride)
            dest = (i, (j + shift) % ew)
            out_cols[dest].append(p)
    for pos, col in out_cols.items():
        col.sort(key=lambda p: p.w_index)
        out_cols[pos] = [replace(p, order=n) for n, p in enumerate(col)]
    sched = replace(sched, columns=out_cols, shifted=True)
    return sched


def apply_grouping(sched: ScheduleMatrix, array_rows: int, array_cols: int) -> ScheduleMatrix:
    """Fold the logical grid onto the physical array: contiguous row blocks
    (preserving the vertical accumulation adjacency) and strided column
    folding. The folded micro-op streams are interleaved round-robin per
    weight step by the lowering pass, so one weight broadcast serves every
    folded column."""
    rows_used = min(sched.pe_rows, array_rows)
    cols_used = min(sched.pe_cols, array_cols)
    row_block = -(-sched.pe_rows // rows_used)
    col_fold = -(-sched.pe_cols // cols_used)
    phys_map = {}
    for (i, j) in sched.columns:
        phys_map[(i, j)] = (i // row_block, j % cols_used)
    g = row_block * col_fold
    sched = replace(sched, phys_map=phys_map, group_factor=g)
    sched.phys_rows = -(-sched.pe_rows // row_block)
    sched.phys_cols = cols_used
    return sched


def apply_expansion(sched: ScheduleMatrix, v: int, array_rows: int) -> ScheduleMatrix:
    """Split every logical column's product list over ``v`` vertically
    adjacent PEs; the partial accumulations are merged upward. Identity at
    v = 1."""
    if v == 1:
        return sched
    if v < 1:
        raise CompileError("expansion factor must be >= 1")
    if sched.group_factor > 1:
        raise CompileError("expansion cannot follow grouping")
    if sched.pe_rows * v > array_rows:
        raise CompileError(
            f"expansion x{v} needs {sched.pe_rows * v} rows, array has {array_rows}"
        )
    new_cols: dict = {}
    for (i, j), col in sorted(sched.columns.items()):
        n = len(col)
        band = -(-n // v)
        for s in range(v):
            part = col[s * band : (s + 1) * band]
            new_cols[(i * v + s, j)] = [replace(p, order=m) for m, p in enumerate(part)]
    sched = replace(
        sched,
        columns=new_cols,
        pe_rows=sched.pe_rows * v,
        expansion_factor=v,
        phys_map={},
    )
    return sched


def check_verticality(sched: ScheduleMatrix) -> bool:
    """Post-shift invariant: every label's products occupy one column, on
    a contiguous run of rows."""
    by_label: dict = {}
    for (i, j), col in sched.columns.items():
        for p in col:
            by_label.setdefault(p.label, set()).add((i, j))
    for label, pes in by_label.items():
        cols = {j for _, j in pes}
        if len(cols) != 1:
            return False
        rows = sorted(i for i, _ in pes)
        if rows != list(range(rows[0], rows[-1] + 1)):
            return False
    return True
