import numpy as np
import pytest

import etatest as et
from etatest.dataset import ConflictingDataError, Dataset, DatasetError, TimeKind


def brute_scan(points, q, delta):
    return np.nonzero(np.sum((points - q) ** 2, axis=1) <= delta * delta)[0]


def test_collect_empty(osc_stable):
    ds = et.collect(osc_stable.system, osc_stable.policy, 0,
                    osc_stable.bounds, 0.01, seed=1)
    assert len(ds) == 0
    assert ds.n == 2 and ds.m == 1
    assert ds.time_kind is TimeKind.CONTINUOUS


def test_collect_oscillator_paper_config(osc_stable):
    ds = et.collect(osc_stable.system, osc_stable.policy, 10000,
                    osc_stable.bounds, 0.01, seed=7)
    assert len(ds) == 10000
    assert np.all(ds.xs >= -1.0) and np.all(ds.xs <= 1.0)
    clean = osc_stable.policy(ds.xs)
    assert np.max(np.abs(ds.us - clean)) <= 0.01


def test_collect_deterministic(osc_stable):
    a = et.collect(osc_stable.system, osc_stable.policy, 500,
                   osc_stable.bounds, 0.01, seed=7)
    b = et.collect(osc_stable.system, osc_stable.policy, 500,
                   osc_stable.bounds, 0.01, seed=7)
    assert a == b
    assert a.xs.tobytes() == b.xs.tobytes()
    assert a.us.tobytes() == b.us.tobytes()
    assert a.ys.tobytes() == b.ys.tobytes()


def test_collect_outputs_match_dynamics(osc_stable):
    ds = et.collect(osc_stable.system, osc_stable.policy, 200,
                    osc_stable.bounds, 0.01, seed=3)
    np.testing.assert_array_equal(ds.ys, osc_stable.system(ds.xs, ds.us))


def test_collect_dimension_mismatch(osc_stable):
    with pytest.raises(DatasetError):
        et.collect(osc_stable.system, osc_stable.policy, 10,
                   [(-1, 1)], 0.01, seed=0)
    with pytest.raises(DatasetError):
        et.collect(osc_stable.system, et.zero_policy(3),
                   10, osc_stable.bounds, 0.01, seed=0)


def test_neighbors_zero_radius(osc_small):
    ds, index, _ = osc_small
    got = index.query(ds.xs[5], ds.us[5], 0.0)
    assert 5 in got
    pts = ds.points()
    assert np.array_equal(got, brute_scan(pts, pts[5], 0.0))


def test_neighbors_match_brute_force():
    rng = np.random.default_rng(42)
    ds = Dataset(rng.normal(size=(500, 2)), rng.normal(size=(500, 1)),
                 rng.normal(size=(500, 2)))
    index = et.NeighborIndex(ds, cell_edge=0.3)
    pts = ds.points()
    for _ in range(100):
        q = rng.normal(size=3) * 1.5
        delta = float(rng.uniform(0.0, 1.0))
        got = index.query(q[:2], q[2:], delta)
        want = brute_scan(pts, q, delta)
        assert np.array_equal(got, want)


def test_neighbors_isolation(osc_small):
    ds, index, _ = osc_small
    got = index.query(np.array([50.0, 50.0]), np.array([0.0]), 0.5)
    assert got.size == 0


def test_neighbor_symmetry_and_monotonicity(osc_small):
    ds, index, _ = osc_small
    rng = np.random.default_rng(0)
    for i in rng.integers(0, len(ds), 20):
        small = set(index.query(ds.xs[i], ds.us[i], 0.05).tolist())
        big = set(index.query(ds.xs[i], ds.us[i], 0.15).tolist())
        assert small <= big
        for j in list(small)[:5]:
            back = index.query(ds.xs[j], ds.us[j], 0.05)
            assert i in back


def test_grid_and_brute_paths_agree():
    # concatenated dimension above the grid limit exercises the brute path
    rng = np.random.default_rng(9)
    ds_high = Dataset(rng.normal(size=(300, 5)), rng.normal(size=(300, 3)),
                      rng.normal(size=(300, 5)))
    index = et.NeighborIndex(ds_high, cell_edge=0.5)
    pts = ds_high.points()
    for _ in range(20):
        q = rng.normal(size=8)
        got = index.query(q[:5], q[5:], 1.2)
        assert np.array_equal(got, brute_scan(pts, q, 1.2))


def test_save_load_round_trip(tmp_path, osc_stable):
    ds = et.collect(osc_stable.system, osc_stable.policy, 300,
                    osc_stable.bounds, 0.01, seed=11)
    path = tmp_path / "osc.csv"
    et.save(ds, path)
    back = et.load(path)
    assert back == ds
    assert back.meta.seed == 11
    assert back.meta.system == "oscillator"


def test_load_header_manifest_mismatch(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x0,x1,x2,u0,y0,y1,y2\n0,0,0,0,0,0,0\n")
    (tmp_path / "bad.manifest.json").write_text(
        '{"n": 2, "m": 1, "time_kind": "continuous"}\n')
    with pytest.raises(DatasetError, match="manifest"):
        et.load(path)


def test_load_non_finite_names_row(tmp_path):
    path = tmp_path / "nan.csv"
    path.write_text("x0,u0,y0\n0,0,0\n1,nan,0.5\n")
    with pytest.raises(DatasetError, match="row 3"):
        et.load(path)


def test_load_malformed_header(tmp_path):
    path = tmp_path / "weird.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(DatasetError, match="header"):
        et.load(path)


def test_conflicting_duplicates_rejected():
    xs = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    us = np.array([[0.5], [0.5], [0.2]])
    ys = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(ConflictingDataError):
        Dataset(xs, us, ys)
    # identical outputs are fine
    ys[1] = ys[0]
    Dataset(xs, us, ys)


def test_non_finite_rejected():
    with pytest.raises(DatasetError, match="non-finite"):
        Dataset(np.array([[np.inf, 0.0]]), np.array([[0.0]]),
                np.array([[0.0, 0.0]]))
