import gzip

import numpy as np
import pytest

from dfkd import data


def test_two_moons_noise_free_points_on_arcs():
    b = data.make_two_moons(200, noise_sd=0.0, seed=3, rescale=False)
    x, y = b.inputs.data.astype(np.float64), b.labels
    upper, lower = x[y == 0], x[y == 1]
    np.testing.assert_allclose(np.hypot(upper[:, 0], upper[:, 1]), 1.0, atol=1e-6)
    assert np.all(upper[:, 1] >= -1e-6)
    np.testing.assert_allclose(np.hypot(lower[:, 0] - 1.0, lower[:, 1] - 0.5), 1.0, atol=1e-6)
    assert np.all(lower[:, 1] <= 0.5 + 1e-6)


def test_two_moons_deterministic_and_balanced():
    a = data.make_two_moons(1000, 0.1, seed=42)
    b = data.make_two_moons(1000, 0.1, seed=42)
    assert a.inputs.data.tobytes() == b.inputs.data.tobytes()
    assert np.array_equal(a.labels, b.labels)
    assert np.sum(a.labels == 0) == np.sum(a.labels == 1) == 500


def test_two_moons_in_unit_box():
    b = data.make_two_moons(2000, 0.1, seed=0)
    assert np.all(np.abs(b.inputs.data) <= 1.0)


def test_two_moons_rejects_odd_n():
    with pytest.raises(ValueError):
        data.make_two_moons(7)


def test_two_moons_not_linearly_separable():
    # least-squares linear classifier as a cheap separability probe
    b = data.make_two_moons(1000, 0.1, seed=0)
    X = np.column_stack([b.inputs.data, np.ones(len(b))])
    w, *_ = np.linalg.lstsq(X, 2.0 * b.labels - 1, rcond=None)
    assert np.mean((X @ w > 0) == b.labels) < 0.95


def _write_pair(tmp_path, images, labels, gz=False):
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    data.write_idx(ip, images)
    data.write_idx(lp, labels)
    if gz:
        for p in (ip, lp):
            p.with_suffix(".gz").write_bytes(gzip.compress(p.read_bytes()))
        return ip.with_suffix(".gz"), lp.with_suffix(".gz")
    return ip, lp


@pytest.mark.parametrize("gz", [False, True])
def test_load_idx_zero_images_scale_to_minus_one(tmp_path, gz):
    ip, lp = _write_pair(tmp_path, np.zeros((2, 28, 28)), np.array([3, 7]), gz)
    b = data.load_idx(ip, lp)
    assert b.inputs.shape == (2, 1, 28, 28)
    np.testing.assert_array_equal(b.inputs.data, -1.0)
    np.testing.assert_array_equal(b.labels, [3, 7])


def test_load_idx_full_scale(tmp_path):
    ip, lp = _write_pair(tmp_path, np.full((1, 2, 2), 255), np.array([0]))
    np.testing.assert_array_equal(data.load_idx(ip, lp).inputs.data, 1.0)


def test_load_idx_count_mismatch(tmp_path):
    ip, lp = _write_pair(tmp_path, np.zeros((3, 4, 4)), np.array([1, 2]))
    with pytest.raises(data.IdxCountMismatchError):
        data.load_idx(ip, lp)


def test_load_idx_bad_magic(tmp_path):
    ip, lp = _write_pair(tmp_path, np.zeros((2, 4, 4)), np.array([1, 2]))
    with pytest.raises(data.IdxMagicError):
        data.load_idx(lp, ip)


def test_load_idx_truncated(tmp_path):
    ip, lp = _write_pair(tmp_path, np.zeros((2, 4, 4)), np.array([1, 2]))
    ip.write_bytes(ip.read_bytes()[:-5])
    with pytest.raises(data.IdxTruncatedError):
        data.load_idx(ip, lp)


def test_error_kinds_are_distinct():
    kinds = {data.IdxMagicError, data.IdxTruncatedError, data.IdxCountMismatchError}
    assert len(kinds) == 3 and all(issubclass(k, data.IdxError) for k in kinds)


def test_csv_fixture(tmp_path):
    p = tmp_path / "tiny.csv"
    p.write_text("x0,x1,label\n0.1,0.2,0\n-0.5,0.5,1\n")
    b = data.load_csv_batch(p)
    assert b.inputs.shape == (2, 2) and list(b.labels) == [0, 1]
    p.write_text("a,b,c\n1,2,0\n")
    with pytest.raises(ValueError):
        data.load_csv_batch(p)


def test_latent_shape_and_determinism():
    a = data.sample_latent(7, 16, np.random.default_rng(9))
    b = data.sample_latent(7, 16, np.random.default_rng(9))
    assert a.z.shape == (7, 16)
    assert a.z.data.tobytes() == b.z.data.tobytes()


def test_latent_moments():
    z = data.sample_latent(10**5, 4, np.random.default_rng(0)).z.data
    assert np.all(np.abs(z.mean(axis=0)) < 0.02)
    assert np.all(np.abs(z.std(axis=0) - 1) < 0.02)


def test_latent_rejects_empty():
    with pytest.raises(ValueError):
        data.sample_latent(0, 3, np.random.default_rng(0))


def test_grid_corners_and_spacing():
    g = data.make_grid((-1, 1), (-1, 1), 2)
    np.testing.assert_array_equal(g.points.data, [[-1, -1], [1, -1], [-1, 1], [1, 1]])
    g = data.make_grid((-1, 1), (-2, 2), 100)
    assert g.points.shape == (10000, 2)
    pts = g.points.data.astype(np.float64)
    np.testing.assert_allclose(pts[1, 0] - pts[0, 0], 2 / 99, rtol=1e-5)
    np.testing.assert_allclose(pts[100, 1] - pts[0, 1], 4 / 99, rtol=1e-5)
    assert pts[0].tolist() == [-1, -2] and pts[-1].tolist() == [1, 2]


def test_grid_rejects_degenerate():
    with pytest.raises(ValueError):
        data.make_grid((0, 0), (-1, 1), 10)
    with pytest.raises(ValueError):
        data.make_grid((-1, 1), (-1, 1), 1)
