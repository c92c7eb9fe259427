import numpy as np
import pytest

from sfcgan import engine as E
from sfcgan.connectome import Connectome, Domain, ValidationError
from sfcgan.model import (CheckpointError, ModelCheckpoint, init_models, load_checkpoint, save_checkpoint)

from conftest import random_fc, random_sc


@pytest.fixture(scope="module")
def models16():
    return init_models(16, seed=1)


def test_init_is_deterministic():
    a, b = init_models(116, seed=7), init_models(116, seed=7)
    pa, pb = a.all_params(), b.all_params()
    assert pa.keys() == pb.keys()
    assert all(np.array_equal(pa[k].data, pb[k].data) for k in pa)
    c = init_models(116, seed=8).all_params()
    assert not all(np.array_equal(pa[k].data, c[k].data) for k in pa)


def test_init_rejects_small_n():
    with pytest.raises(ValidationError):
        init_models(7)


@pytest.mark.parametrize("n", [8, 9, 16, 33, 116])
def test_generator_shapes(n):
    m = init_models(n, seed=0)
    x = random_sc(n, np.random.default_rng(0))
    y = m.g_fc.translate(x)
    assert y.values.shape == (n, n) and y.domain is Domain.FC
    assert m.g_sc.translate(random_fc(n, np.random.default_rng(1))).values.shape == (n, n)


def test_translate_output_contract(models16):
    rng = np.random.default_rng(3)
    for _ in range(100):
        fc = models16.g_fc.translate(random_sc(16, rng)).values
        sc = models16.g_sc.translate(random_fc(16, rng)).values
        assert np.max(np.abs(fc - fc.T)) == 0 and np.max(np.abs(sc - sc.T)) == 0
        assert np.all(np.diag(fc) == 1) and np.all(np.diag(sc) == 0)
        assert fc.min() >= -1 and fc.max() <= 1 and sc.min() >= 0 and sc.max() <= 1


def test_translate_domain_and_size_errors(models16):
    with pytest.raises(ValidationError):
        models16.g_fc.translate(random_fc(16, np.random.default_rng(0)))
    with pytest.raises(ValidationError):
        models16.g_fc.translate(random_sc(12, np.random.default_rng(0)))


def test_discriminator_outputs(models16):
    rng = np.random.default_rng(4)
    for _ in range(20):
        p = models16.d_fc.discriminate(random_fc(16, rng))
        assert 0 < p < 1 and np.isfinite(p)
    with pytest.raises(ValidationError):
        models16.d_fc.discriminate(random_sc(16, rng))


def test_discriminator_input_gradient():
    m = init_models(16, seed=2, dtype=np.float64)
    x = E.Tensor(random_fc(16, np.random.default_rng(5)).values[None], requires_grad=True)
    assert E.grad_check(lambda: E.tsum(m.d_fc(x)), {"x": x}, coords=40) <= 1e-4


def test_checkpoint_roundtrip(tmp_path, models16):
    ck = ModelCheckpoint.fresh(models16, {"note": "x"})
    ck.epoch = 3
    ck.history = [{"epoch": 1, "cyc": 0.5}]
    ck.buffers = {"FC": np.zeros((2, 16, 16), np.float32), "SC": np.ones((1, 16, 16), np.float32)}
    path = tmp_path / "c.sfcg"
    save_checkpoint(ck, path)
    back = load_checkpoint(path)
    pa, pb = models16.all_params(), back.models.all_params()
    assert all(np.array_equal(pa[k].data, pb[k].data) and pa[k].dtype == pb[k].dtype for k in pa)
    assert back.epoch == 3 and back.history == ck.history and back.config == {"note": "x"}
    assert np.array_equal(back.buffers["SC"], ck.buffers["SC"])
    x = random_sc(16, np.random.default_rng(6))
    assert np.array_equal(models16.g_fc.translate(x).values, back.models.g_fc.translate(x).values)
    save_checkpoint(back, tmp_path / "d.sfcg")
    assert path.read_bytes() == (tmp_path / "d.sfcg").read_bytes()


def test_checkpoint_errors(tmp_path, models16):
    path = tmp_path / "c.sfcg"
    save_checkpoint(ModelCheckpoint.fresh(models16, {}), path)
    raw = path.read_bytes()
    (tmp_path / "magic.sfcg").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "magic.sfcg")
    (tmp_path / "short.sfcg").write_bytes(raw[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.sfcg")
    (tmp_path / "ver.sfcg").write_bytes(raw[:4] + b"\x63\x00" + raw[6:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "ver.sfcg")
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_n=116)
