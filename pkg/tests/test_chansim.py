import numpy as np
import pytest

from rrmgnn import chansim
from rrmgnn.chansim import (GenerationError, GeometryConfig, build_coop_instance,
                            build_ibc_instance, build_ic_instance, channel,
                            dbm_to_watts, path_loss_db, sample_geometry,
                            watts_to_dbm, zero_forcing)
from rrmgnn.hetgraph import merge_complex


def test_dbm_conversions():
    assert abs(dbm_to_watts(33.0) - 1.9952623149688795) < 1e-12
    assert abs(dbm_to_watts(-99.0) - 10 ** (-12.9)) < 1e-25
    for dbm in (-99.0, 0.0, 21.0, 33.0):
        assert abs(watts_to_dbm(dbm_to_watts(dbm)) - dbm) < 1e-12 * max(1, abs(dbm))


def test_path_loss_reference_points():
    assert abs(path_loss_db(1.0) - 30.5) < 1e-12
    assert abs(path_loss_db(10.0) - 67.2) < 1e-12


def test_channel_amplitude_at_one_meter():
    rng = np.random.default_rng(0)
    h = channel(1.0, 4, rng)
    assert h.shape == (4,)
    # scale applied per entry: 10^(-30.5/20) ~ 0.029854
    assert abs(10 ** (-30.5 / 20) - 0.029853826189179603) < 1e-15


def test_channel_rejects_nonpositive_distance():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        channel(0.0, 2, rng)


def test_channel_mean_power_monte_carlo():
    rng = np.random.default_rng(1)
    d, n, draws = 100.0, 4, 100_000
    acc = 0.0
    for _ in range(draws):
        h = channel(d, n, rng)
        acc += np.sum(np.abs(h) ** 2)
    mean_per_antenna = acc / (draws * n)
    expected = 10 ** (-path_loss_db(d) / 10)
    assert abs(mean_per_antenna / expected - 1.0) < 0.02


def test_geometry_single_bs_uniform():
    cfg = GeometryConfig(n_tx=1, n_rx=1)
    pts = np.array([sample_geometry(cfg, np.random.default_rng(s), 1, 1, [0])[0][0]
                    for s in range(200)])
    assert pts.min() >= 0 and pts.max() <= cfg.field_size
    assert 500 < pts.mean() < 1500  # crude uniformity check on the mean


def test_geometry_respects_spacing():
    cfg = GeometryConfig(n_tx=5, n_rx=5)
    for s in range(10_000):
        bs, _ = sample_geometry(cfg, np.random.default_rng(s), 5, 5, np.arange(5))
        d = np.linalg.norm(bs[:, None] - bs[None, :], axis=2)
        np.fill_diagonal(d, np.inf)
        assert d.min() >= cfg.min_bs_spacing


def test_geometry_serving_distance_annulus():
    cfg = GeometryConfig(n_tx=3, n_rx=3)
    for s in range(100):
        bs, ue = sample_geometry(cfg, np.random.default_rng(s), 3, 3, np.arange(3))
        d = np.linalg.norm(bs - ue, axis=1)
        assert np.all(d >= cfg.serve_dist[0] - 1e-9)
        assert np.all(d <= cfg.serve_dist[1] + 1e-9)
        assert ue.min() >= 0 and ue.max() <= cfg.field_size


def test_geometry_infeasible_spacing_raises():
    cfg = GeometryConfig(n_tx=4, n_rx=4, field_size=600.0, min_bs_spacing=500.0)
    with pytest.raises(GenerationError):
        sample_geometry(cfg, np.random.default_rng(0), 4, 4, np.arange(4))


def test_ic_instance_structure():
    cfg = GeometryConfig(n_tx=3, n_rx=3, n_antennas=2, seed=5)
    inst, g = build_ic_instance(cfg)
    n = cfg.n_antennas
    assert g.e.shape == (3, 3, 4 * n)  # 2N complex one-hot -> 4N reals
    # direct-edge fibers nonzero exactly on the serving bijection
    for m in range(3):
        for k in range(3):
            fiber = merge_complex(g.e[m, k])
            direct, cross = fiber[:n], fiber[n:]
            if inst.serving[k] == m:
                assert np.all(cross == 0) and np.any(direct != 0)
                np.testing.assert_array_equal(direct, inst.channels[m, k])
            else:
                assert np.all(direct == 0) and np.any(cross != 0)
    np.testing.assert_array_equal(g.f_tx[:, 0], inst.budgets)
    np.testing.assert_array_equal(g.f_rx[:, 0], np.sqrt(inst.noise))


def test_ic_single_pair_one_hot():
    cfg = GeometryConfig(n_tx=1, n_rx=1, n_antennas=3, seed=1)
    inst, g = build_ic_instance(cfg)
    fiber = merge_complex(g.e[0, 0])
    assert np.all(fiber[3:] == 0)
    assert np.any(fiber[:3] != 0)


def test_ic_requires_square():
    with pytest.raises(ValueError):
        build_ic_instance(GeometryConfig(n_tx=2, n_rx=3))


def test_ic_reproducible_bit_exact():
    cfg = GeometryConfig(n_tx=4, n_rx=4, seed=9)
    a_inst, a_graph = build_ic_instance(cfg)
    b_inst, b_graph = build_ic_instance(cfg)
    assert a_graph.e.tobytes() == b_graph.e.tobytes()
    assert a_inst.channels.tobytes() == b_inst.channels.tobytes()


def test_zero_forcing_single_ue_is_matched_filter():
    rng = np.random.default_rng(3)
    h = rng.normal(size=(4, 1)) + 1j * rng.normal(size=(4, 1))
    w = zero_forcing(h)
    np.testing.assert_allclose(w[:, 0], (h / np.linalg.norm(h))[:, 0], atol=1e-12)


def test_zero_forcing_orthogonal_columns_pass_through():
    h = np.eye(4, dtype=complex)[:, :2] * np.array([2.0, 3.0])
    w = zero_forcing(h)
    np.testing.assert_allclose(np.abs(w), np.abs(np.eye(4)[:, :2]), atol=1e-12)


def test_zero_forcing_nulls_cross_terms():
    rng = np.random.default_rng(4)
    h = rng.normal(size=(16, 2)) + 1j * rng.normal(size=(16, 2))
    w = zero_forcing(h)
    cross = h.conj().T @ w
    off = cross - np.diag(np.diag(cross))
    assert np.max(np.abs(off)) < 1e-10
    np.testing.assert_allclose(np.linalg.norm(w, axis=0), 1.0, atol=1e-12)


def test_zero_forcing_rank_deficient_raises():
    h = np.ones((4, 2), dtype=complex)
    with pytest.raises(chansim.NumericalError):
        zero_forcing(h)


def test_ibc_instance_structure_and_zf_property():
    cfg = GeometryConfig(n_tx=2, n_rx=2, n_antennas=16, seed=6)
    inst, g = build_ibc_instance(cfg)
    k = 4
    assert inst.gains.shape == (k, k)
    assert g.e.shape == (k, k, 3)
    # intra-cell interference gains vanish under zero-forcing
    for m in range(k):
        for j in range(k):
            if m != j and inst.tx_cell[m] == inst.rx_cell[j]:
                assert inst.gains[m, j] < 1e-8
    # one-hot slots populated correctly
    for m in range(k):
        for j in range(k):
            fiber = g.e[m, j]
            hot = np.flatnonzero(fiber)
            if m == j:
                assert list(hot) == [0]
            elif inst.tx_cell[m] == inst.rx_cell[j]:
                assert np.all(fiber[[0, 2]] == 0)  # slot 1 may be ~0 after ZF
            else:
                assert list(hot) == [2]


def test_ibc_single_ue_per_cell_has_no_intra_slot():
    cfg = GeometryConfig(n_tx=3, n_rx=1, n_antennas=2, seed=7)
    inst, g = build_ibc_instance(cfg)
    assert np.all(g.e[:, :, 1] == 0)
    assert inst.n_tx_entities == 3 and inst.n_ue == 3


def test_ibc_counts_equivalent_entities():
    cfg = GeometryConfig(n_tx=2, n_rx=3, n_antennas=4, seed=8)
    inst, g = build_ibc_instance(cfg)
    assert g.m == 6 and g.k == 6  # K = B*Q equivalent TX-nodes and K RX-nodes


def test_ibc_requires_enough_antennas():
    with pytest.raises(ValueError):
        build_ibc_instance(GeometryConfig(n_tx=2, n_rx=3, n_antennas=2))


def test_coop_instance_structure():
    cfg = GeometryConfig(n_tx=3, n_rx=2, n_antennas=2, seed=10)
    inst, g = build_coop_instance(cfg)
    assert g.e.shape == (3, 2, 4)  # raw split channel, width 2N, no one-hot
    assert g.edge_mask.all()
    for m in range(3):
        for k in range(2):
            np.testing.assert_array_equal(merge_complex(g.e[m, k]), inst.channels[m, k])


def test_dataset_roundtrip(tmp_path):
    cfg = GeometryConfig(n_tx=2, n_rx=2, n_antennas=2, seed=11)
    path = tmp_path / "data.bin"
    chansim.write_dataset(path, "ic", cfg, 3)
    meta, graphs = chansim.read_dataset(path)
    assert meta["scenario"] == "ic" and len(graphs) == 3
    _, expect = build_ic_instance(cfg, chansim.sample_seed(cfg.seed, 1))
    np.testing.assert_array_equal(graphs[1].e, expect.e)
