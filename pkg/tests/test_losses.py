import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfcgan import engine as E
from sfcgan import losses as L


def ident(x):
    return x


def rand_batch(b, n, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, (b, n, n))
    return (x + x.transpose(0, 2, 1)) / 2


def pearson_ref(a, b):
    a, b = np.ravel(a), np.ravel(b)
    a, b = a - a.mean(), b - b.mean()
    den = math.sqrt((a @ a) * (b @ b))
    return 0.0 if den == 0 else (a @ b) / den


def pcc_loss_ref(x, y):
    n = x.shape[0]
    return 2 - pearson_ref(x, y) - sum(pearson_ref(x[i], y[i]) for i in range(n)) / n


def test_gan_discriminator_values():
    assert float(L.gan_loss_discriminator(np.full(3, 0.5), np.full(3, 0.5)).data) == pytest.approx(2 * math.log(2))
    assert float(L.gan_loss_discriminator(np.ones(2), np.zeros(2)).data) < 1e-6
    dr, df = np.array([0.9, 0.6, 0.3, 0.55]), np.array([0.1, 0.5, 0.45, 0.8])
    ref = -sum(math.log(p) for p in dr) / 4 - sum(math.log(1 - p) for p in df) / 4
    assert float(L.gan_loss_discriminator(dr, df).data) == pytest.approx(ref, abs=1e-12)
    with pytest.raises(ValueError):
        L.gan_loss_discriminator(np.zeros(0), np.zeros(0))


def test_gan_generator_values():
    assert float(L.gan_loss_generator(np.full(2, 0.5)).data) == pytest.approx(math.log(2))
    assert float(L.gan_loss_generator(np.ones(2)).data) < 1e-6
    vals = [float(L.gan_loss_generator(np.array([p])).data) for p in (0.2, 0.4, 0.6, 0.8)]
    assert vals == sorted(vals, reverse=True)
    with pytest.raises(ValueError):
        L.gan_loss_generator(np.zeros(0))


def test_cycle_and_identity_vanish_for_identity_generators():
    x_fc, x_sc = rand_batch(2, 6, 0), np.abs(rand_batch(2, 6, 1))
    assert float(L.cycle_loss(ident, ident, x_fc, x_sc).data) == 0
    assert float(L.identity_loss(ident, ident, x_fc, x_sc).data) == 0


def test_cycle_constant_offset():
    x_fc, x_sc = rand_batch(2, 5, 0), rand_batch(2, 5, 1)
    shift = lambda x: E.add(x, 0.05)   # two passes -> reconstruction off by 0.1
    assert float(L.cycle_loss(shift, shift, x_fc, x_sc).data) == pytest.approx(0.2, abs=1e-12)


def test_cycle_and_identity_loop_oracle():
    x_fc, x_sc = rand_batch(3, 6, 2), rand_batch(3, 6, 3)
    g_fc = lambda x: E.tanh(E.mul(x, 1.3))
    g_sc = lambda x: E.mul(x, 0.7)
    cyc = identity = 0.0
    for b in range(3):
        r_sc = np.tanh(1.3 * x_sc[b]) * 0.7
        r_fc = np.tanh(1.3 * 0.7 * x_fc[b])
        cyc += sum(abs(r_sc[i, j] - x_sc[b, i, j]) + abs(r_fc[i, j] - x_fc[b, i, j])
                   for i in range(6) for j in range(6)) / 36
        identity += sum(abs(np.tanh(1.3 * x_fc[b, i, j]) - x_fc[b, i, j]) + abs(0.7 * x_sc[b, i, j] - x_sc[b, i, j])
                        for i in range(6) for j in range(6)) / 36
    assert float(L.cycle_loss(g_fc, g_sc, x_fc, x_sc).data) == pytest.approx(cyc / 3, abs=1e-10)
    assert float(L.identity_loss(g_fc, g_sc, x_fc, x_sc).data) == pytest.approx(identity / 3, abs=1e-10)


def test_identity_zero_output_gives_mean_abs():
    x_fc = rand_batch(1, 4, 5)
    np.fill_diagonal(x_fc[0], 1)
    zero = lambda x: E.mul(x, 0.0)
    loss = L.identity_loss(zero, ident, x_fc, np.zeros_like(x_fc))
    assert float(loss.data) == pytest.approx(np.abs(x_fc).mean())


def test_size_mismatch_errors():
    with pytest.raises(ValueError):
        L.cycle_loss(ident, ident, rand_batch(1, 4, 0), rand_batch(1, 5, 0))
    with pytest.raises(ValueError):
        L.pcc_loss(np.ones((3, 3)), np.ones((4, 4)))
    with pytest.raises(ValueError):
        L.sp_loss(*(rand_batch(1, 4, i) for i in range(3)), rand_batch(1, 5, 0))


def test_pcc_loss_closed_forms():
    x = rand_batch(1, 7, 4)[0]
    assert float(L.pcc_loss(x, x).data) == pytest.approx(0, abs=1e-12)
    assert float(L.pcc_loss(x, 2 * x).data) == pytest.approx(0, abs=1e-10)
    assert float(L.pcc_loss(x, -x).data) == pytest.approx(4, abs=1e-10)


def test_pcc_loss_loop_oracle_and_sum_mode():
    x, y = rand_batch(1, 6, 5)[0], rand_batch(1, 6, 6)[0]
    assert float(L.pcc_loss(x, y).data) == pytest.approx(pcc_loss_ref(x, y), abs=1e-10)
    rows = [pearson_ref(x[i], y[i]) for i in range(6)]
    ref_sum = (1 - pearson_ref(x, y)) + sum(1 - r for r in rows)
    assert float(L.pcc_loss(x, y, rows="sum").data) == pytest.approx(ref_sum, abs=1e-10)


def test_pcc_constant_row_is_neutral():
    x, y = rand_batch(1, 5, 7)[0], rand_batch(1, 5, 8)[0]
    y[2] = 0.3
    assert float(L.pcc_loss(x, y).data) == pytest.approx(pcc_loss_ref(x, y), abs=1e-10)


@given(st.floats(0.1, 10), st.floats(-5, 5), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_pcc_affine_invariance(a, b, seed):
    x, y = rand_batch(1, 6, seed)[0], rand_batch(1, 6, seed + 1)[0]
    base = float(L.pcc_loss(x, y).data)
    assert float(L.pcc_loss(x, a * y + b).data) == pytest.approx(base, abs=1e-9)
    assert 0 <= base <= 4


def test_sp_loss_modes():
    x_fc, x_sc = rand_batch(2, 6, 9), np.abs(rand_batch(2, 6, 10))
    mse_, pcc = L.sp_loss(x_fc, x_sc, x_fc, x_sc, "paired")
    assert float(mse_.data) == 0 and float(pcc.data) == pytest.approx(0, abs=1e-12)
    # literal pairs each source with its own translation
    f_fc, f_sc = rand_batch(2, 6, 11), rand_batch(2, 6, 12)
    m_lit, p_lit = L.sp_loss(x_fc, x_sc, f_fc, f_sc, "literal")
    ref = sum(pcc_loss_ref(x_fc[b], f_sc[b]) + pcc_loss_ref(x_sc[b], f_fc[b]) for b in range(2)) / 2
    assert float(p_lit.data) == pytest.approx(ref, abs=1e-10)
    ref_mse = np.mean((x_fc - f_fc) ** 2) + np.mean((x_sc - f_sc) ** 2)
    assert float(m_lit.data) == pytest.approx(ref_mse, abs=1e-12)
    # literal and paired coincide when the two domains carry the same matrices
    m1, p1 = L.sp_loss(x_fc, x_fc, f_fc, f_sc, "literal")
    m2, p2 = L.sp_loss(x_fc, x_fc, f_fc, f_sc, "paired")
    assert float(m1.data) == float(m2.data) and float(p1.data) == pytest.approx(float(p2.data), abs=1e-12)
    with pytest.raises(ValueError):
        L.sp_loss(x_fc, x_sc, f_fc, f_sc, "sideways")


def test_sp_mse_constant_prediction():
    x = rand_batch(1, 5, 13)
    c = np.full_like(x, 0.25)
    m, _ = L.sp_loss(x, np.zeros_like(x), c, np.zeros_like(x), "paired")
    assert float(m.data) == pytest.approx(np.mean((x - 0.25) ** 2))


def test_total_objective_arithmetic():
    ones = dict.fromkeys(("gan_g_fc", "gan_g_sc", "gan_d_fc", "gan_d_sc", "cyc", "id", "sp_mse", "sp_pcc"), 1.0)
    g, d = L.total_objective(ones, L.LossWeights())
    assert g == 6.0 and d == 2.0
    g, _ = L.total_objective(ones, L.LossWeights(sp_enabled=False))
    assert g == 4.0
    g, d = L.total_objective(ones, L.LossWeights(0, 0, 0, 0))
    assert g == 0 and d == 0
    with pytest.raises(ValueError):
        L.LossWeights(cyc=-1)
    w = L.LossWeights()
    w.sp = -1.0
    with pytest.raises(ValueError):
        L.total_objective(ones, w)
