import math

import numpy as np
import pytest

import mbf


def test_fixture_and_distance_transform():
    g = mbf.fixture("ball", scale=6)
    occ = g.occupancy
    assert occ.shape == tuple(g.dims)
    assert occ.sum() == g.occupied_count()
    dt = mbf.distance_transform(g)
    assert dt.shape == occ.shape
    assert np.all(dt[occ == 0] == 0)
    ndimage = pytest.importorskip("scipy.ndimage")
    padded = np.pad(occ, 1)
    assert np.array_equal(dt, ndimage.distance_transform_edt(padded)[1:-1, 1:-1, 1:-1])


def test_grid_round_trip(tmp_path):
    occ = np.zeros((4, 5, 6), dtype=np.uint8)
    occ[1:3, 2:4, 1:5] = 1
    g = mbf.VoxelGrid(occ, voxel_size=0.5)
    assert np.array_equal(g.occupancy, occ)
    mbf.save_grid(g, tmp_path / "g.vgrid")
    assert mbf.load_grid(tmp_path / "g.vgrid") == g


def test_evaluate_and_mesh():
    model = np.array([[4.0, 0.0, 0.0, 0.0]])
    assert mbf.evaluate(model, [2.0, 0.0, 0.0]) == 1.0
    v, f = mbf.mesh(model, resolution=48)
    assert v.shape[1] == 3 and f.shape[1] == 3
    assert np.abs(np.linalg.norm(v, axis=1) - 2.0).max() < 0.05
    with pytest.raises(mbf.MbfError):
        mbf.evaluate(model, [0.0, 0.0, 0.0])


def test_sphere_metrics():
    m = mbf.shape_metrics(np.array([[1.0, 0.0, 0.0, 0.0]]), resolution=64)
    assert m["V"] == pytest.approx(4 * math.pi / 3, rel=0.02)
    for key in ("phi", "C", "CSF", "Dns"):
        assert m[key] == pytest.approx(1.0, abs=0.02)


def test_fit_ball():
    g = mbf.fixture("ball", scale=24)
    r = mbf.fit(g, 1, generations=500)
    assert r["model"].shape == (1, 4)
    assert r["final_loss"] <= r["initial_loss"]
    assert r["iou"] >= 0.9


def test_train_generate_and_edit(tmp_path):
    data = mbf.blob_dataset(8, balls=5, seed=1)
    gen, log = mbf.train(data, max_steps=20, warmup=10, batch_size=8, rotations=1, shuffles=2,
                         latent=4, encoder_hidden=[16], decoder_hidden=[16], seed=2)
    assert len(log["reconstruction"]) == 20
    assert gen.latent_dim == 4 and gen.points == 5
    clones = gen.sample(3, seed=5)
    assert len(clones) == 3 and all(c.shape == (5, 4) for c in clones)
    z1, z2 = gen.encode(data[0]), gen.encode(data[1])
    assert np.array_equal(mbf.interpolate(z1, z2, 0.0), z1)
    assert np.array_equal(mbf.interpolate(z1, z2, 1.0), z2)
    assert not np.any(mbf.latent_add([z1], [z1]))
    assert gen.decode(mbf.perturb(z1, 0.1, seed=3)).shape == (5, 4)
    gen.save(tmp_path / "g.mbvae")
    again = mbf.Generator.load(tmp_path / "g.mbvae")
    assert np.array_equal(again.decode(z1), gen.decode(z1))
