"""Schedule-construction tests: outer product, labelling, column
assignment, circular shift, grouping, expansion."""

import numpy as np
import pytest

from spatialsim.compiler.schedule import (
    CompileError,
    apply_expansion,
    apply_grouping,
    assign_columns,
    check_verticality,
    circular_shift,
    label_multiplicity,
    label_products,
    symbolic_outer_product,
)
from spatialsim.oracle import LayerSpec


def build(k, eh, ew, stride):
    s = symbolic_outer_product(k, (eh, ew))
    s = label_products(s, stride)
    return circular_shift(s, k, stride)


def test_outer_product_dims():
    s = symbolic_outer_product(3, (2, 2))
    assert len(s.columns) == 4
    assert all(len(col) == 9 for col in s.columns.values())
    assert s.total_products() == 36


def test_outer_product_single():
    s = symbolic_outer_product(1, (1, 1))
    assert s.total_products() == 1


def test_outer_product_count_2x2_filter_3x3_error():
    s = symbolic_outer_product(2, (3, 3))
    assert len(s.columns) == 9
    assert s.total_products() == 4 * 9


def test_label_accumulation_groups_match_oracle_terms():
    # per-label contributor multiset equals the reference accumulation terms
    k, stride, eh, ew = 3, 2, 2, 2
    s = label_products(symbolic_outer_product(k, (eh, ew)), stride)
    got = {}
    for (i, j), col in s.columns.items():
        for p in col:
            got.setdefault(p.label, set()).add((p.w_index, p.e_index))
    # enumerate terms from the padded-convolution definition
    want = {}
    for i in range(eh):
        for j in range(ew):
            for u in range(k):
                for v in range(k):
                    lab = (stride * i + u, stride * j + v)
                    want.setdefault(lab, set()).add((v * k + u, i * ew + j))
    assert got == want


def test_singleton_labels_when_stride_ge_k():
    s = label_products(symbolic_outer_product(2, (3, 3)), 3)
    assert all(m == 1 for m in label_multiplicity(s).values())


def test_fig5_shift_boundaries():
    # k=3, stride 2: steps 0..5 stay, steps 6..8 move one PE right
    s = build(3, 2, 2, 2)
    for (i, j), col in s.columns.items():
        for p in col:
            shift = p.w_index // 6
            assert shift in (0, 1)
    # the shifted-in products of column (i, j) came from (i, j-1 mod 2)
    col = s.columns[(0, 0)]
    high = [p for p in col if p.w_index >= 6]
    assert all(p.e_index % 2 == 1 for p in high)  # from column j=1


def test_no_shift_when_k2_below_window():
    s = build(2, 2, 2, 3)   # k^2 = 4 <= w_x * stride = 6
    for (i, j), col in s.columns.items():
        assert all(p.e_index == i * 2 + j for p in col)


def test_verticality_on_random_geometries():
    rng = np.random.default_rng(0)
    for _ in range(50):
        k = int(rng.integers(1, 6))
        stride = int(rng.integers(1, 5))
        eh = int(rng.integers(1, 7))
        ew = int(rng.integers(1, 7))
        s = build(k, eh, ew, stride)
        assert check_verticality(s), (k, stride, eh, ew)


def test_assign_columns_placement():
    s = build(3, 3, 2, 2)
    s = assign_columns(s, 13, 15)
    assert s.phys_map[(0, 0)] == (0, 0)
    assert s.phys_map[(2, 1)] == (2, 1)
    assert (s.phys_rows, s.phys_cols) == (3, 2)


def test_assign_columns_capacity():
    s = build(3, 4, 4, 2)
    with pytest.raises(CompileError):
        assign_columns(s, 2, 2)


def test_grouping_identity_when_fits():
    s = apply_grouping(build(3, 2, 2, 2), 13, 15)
    assert s.group_factor == 1
    assert s.phys_map[(1, 1)] == (1, 1)


def test_grouping_folds_4x4_onto_2x2():
    s = apply_grouping(build(2, 4, 4, 1), 2, 2)
    assert s.group_factor == 4
    # row blocks of 2, column stride of 2
    assert s.phys_map[(0, 0)] == (0, 0)
    assert s.phys_map[(1, 0)] == (0, 0)
    assert s.phys_map[(2, 3)] == (1, 1)
    assert (s.phys_rows, s.phys_cols) == (2, 2)


def test_expansion_splits_products():
    s = build(3, 2, 2, 2)
    e = apply_expansion(s, 3, 13)
    assert e.pe_rows == 6
    assert e.total_products() == s.total_products()
    n0 = len(e.columns[(0, 0)])
    assert n0 == 3  # ceil(9 / 3)


def test_expansion_identity_and_errors():
    s = build(3, 2, 2, 2)
    assert apply_expansion(s, 1, 13) is s
    with pytest.raises(CompileError):
        apply_expansion(s, 10, 13)
