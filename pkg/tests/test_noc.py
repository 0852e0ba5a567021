"""NoC model tests: ID sizing formulas, group configuration, bus timing."""

import pytest

from spatialsim.noc import (
    IdAssignment,
    MulticastGroupTable,
    NocConfig,
    NocConfigError,
    configure,
    id_bits_required,
    row_ids_required,
    transfer_cycles,
)


def test_row_ids_required_known_values():
    assert row_ids_required(7, 2) == 4    # 7x7 filter, stride 2
    assert row_ids_required(5, 1) == 5    # 5x5 filter, stride 1
    assert row_ids_required(1, 1) == 1
    assert row_ids_required(11, 4) == 3


def test_id_bits_required_known_values():
    assert id_bits_required(7, 2) == 4    # ceil(log2(12))
    assert id_bits_required(11, 4) == 5   # ceil(log2(18))
    assert id_bits_required(1, 1) == 0    # single group
    assert id_bits_required(5, 1) == 4    # ceil(log2(9))


def test_id_sizing_rejects_bad_args():
    with pytest.raises(ValueError):
        row_ids_required(0, 1)
    with pytest.raises(ValueError):
        id_bits_required(1, 3)


def test_transfer_cycles():
    assert transfer_cycles(64, 64) == 1
    assert transfer_cycles(80, 80) == 1
    assert transfer_cycles(128, 64) == 2
    assert transfer_cycles(1, 64) == 1
    assert transfer_cycles(64, 64, hop_latency=2) == 2
    with pytest.raises(ValueError):
        transfer_cycles(8, 0)


def test_default_widths_vs_baseline():
    ext = NocConfig()
    base = NocConfig.eyeriss_baseline()
    assert ext.gon_bits == base.gon_bits == 64
    assert ext.local_bits == base.local_bits == 64
    assert base.gin_main_bits + base.gin_sub_bits == 80
    assert ext.gin_main_bits + ext.gin_sub_bits == 112
    # +40% input-network bandwidth
    assert (112 - 80) / 80 == pytest.approx(0.40)


def test_lanes():
    assert NocConfig().lanes(80) == 5
    assert NocConfig().lanes(16) == 1
    assert NocConfig(value_bits=16).lanes(64) == 4


def test_configure_single_broadcast_group():
    table = MulticastGroupTable()
    all_pes = [(r, c) for r in range(3) for c in range(4)]
    gid = table.add(all_pes)
    assign = configure(table, NocConfig())
    assert assign.delivery_set(gid) == tuple(sorted(all_pes))


def test_configure_product_groups():
    # two-row x two-column products sharing column patterns
    table = MulticastGroupTable()
    g1 = table.add([(0, 0), (0, 2), (2, 0), (2, 2)])
    g2 = table.add([(1, 0), (1, 2)])
    g3 = table.add([(0, 1), (2, 1)])
    assign = configure(table, NocConfig())
    for g in (g1, g2, g3):
        assert assign.delivery_set(g) == table.groups[g]
    # shared column set {0, 2} -> shared column tag
    assert assign.col_tags[g1] == assign.col_tags[g2]


def test_configure_diagonal_groups():
    # diagonals: per-row distinct columns (row-stationary delivery shape)
    table = MulticastGroupTable()
    gids = [table.add([(k, m - k) for k in range(3) if 0 <= m - k < 5]) for m in range(7)]
    assign = configure(table, NocConfig())
    for g in gids:
        assert assign.delivery_set(g) == table.groups[g]


def test_configure_dedupes_identical_groups():
    table = MulticastGroupTable()
    a = table.add([(0, 0), (0, 1)])
    b = table.add([(0, 1), (0, 0)])
    assert a == b
    assert len(table.groups) == 1


def test_configure_capacity_errors():
    # 1-bit id space cannot hold 3 distinct row patterns
    table = MulticastGroupTable()
    table.add([(0, 0)])
    table.add([(1, 0)])
    table.add([(2, 0)])
    with pytest.raises(NocConfigError):
        configure(table, NocConfig(id_bits=1))
    # col slot capacity: one PE in many irregular groups
    table2 = MulticastGroupTable()
    for m in range(4):
        table2.add([(0, 0), (1, m + 1)])
    with pytest.raises(NocConfigError) as err:
        configure(table2, NocConfig(col_id_slots=2))
    assert "column IDs" in str(err.value)


def test_configure_mixed_product_and_diagonal():
    table = MulticastGroupTable()
    prod = table.add([(0, 0), (0, 3), (1, 0), (1, 3)])
    diag = table.add([(0, 1), (1, 2)])
    other = table.add([(0, 2), (1, 1)])
    assign = configure(table, NocConfig())
    for g in (prod, diag, other):
        assert assign.delivery_set(g) == table.groups[g]
