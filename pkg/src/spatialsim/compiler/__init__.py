from .schedule import (
    CompileError,
    ScheduleMatrix,
    SymbolicProduct,
    apply_expansion,
    apply_grouping,
    assign_columns,
    circular_shift,
    label_products,
    symbolic_outer_product,
)
from .padfree import compile_dilated, compile_transpose
from .rowstat import compile_row_stationary
from .matmul import compile_matmul_lowered

__all__ = [
    "CompileError",
    "ScheduleMatrix",
    "SymbolicProduct",
    "apply_expansion",
    "apply_grouping",
    "assign_columns",
    "circular_shift",
    "label_products",
    "symbolic_outer_product",
    "compile_transpose",
    "compile_dilated",
    "compile_row_stationary",
    "compile_matmul_lowered",
]
