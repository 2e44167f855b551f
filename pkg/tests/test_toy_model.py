import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvforge.dv_loss import NONE, RESPONSE, VISUAL, LossConfig
from dvforge.errors import ValidationError
from dvforge.patch_grid import PatchGrid
from dvforge.toy import (
    TaskConfig, ToyConfig, embed_image, evaluate, forward, greedy_decode, init_params, load_params, make_dataset,
    probe_table, probe_visual_logits, regrid, save_params, train,
)
from dvforge.toy.data import batch_inputs, sequence_targets, text_ids
from dvforge.toy.model import BOS, EOS, Inputs, backward, patchify
from dvforge.toy.train import loss_and_grads

MICRO = ToyConfig(d_model=8, n_layers=1, n_heads=2, vocab_size=16, mixer_layers=1, cell=2,
                  max_rows=3, max_cols=3, max_seq=16, init_scale=0.5)


def micro_inputs(rng, tc=MICRO, B=2, L=5):
    grid = PatchGrid(2, 3, 2)
    return Inputs(rng.random((B, grid.token_count, tc.patch_dim)), rng.integers(0, tc.vocab_size, (B, L)), grid)


def test_patchify_row_major():
    grid = PatchGrid(2, 3, 2)
    img = np.zeros((4, 6, 3), dtype=np.uint8)
    img[2:4, 4:6] = 255  # bottom-right cell
    cells = patchify(img, grid)
    assert cells.shape == (6, 12)
    assert cells[5].min() == 1.0 and not cells[:5].any()
    with pytest.raises(ValidationError):
        patchify(img[:2], grid)


def test_embed_matches_forward_visual_input():
    rng = np.random.default_rng(0)
    tc = ToyConfig(d_model=8, n_heads=2, cell=2, max_rows=3, max_cols=3, vocab_size=16)
    p = init_params(tc)
    grid = PatchGrid(2, 3, 2)
    img = rng.integers(0, 256, (4, 6, 3), dtype=np.uint8)
    e = embed_image(img, grid, p, tc)
    r, c = np.divmod(np.arange(6), 3)
    np.testing.assert_allclose(e, patchify(img, grid) @ p["patch_w"] + p["patch_b"] + p["row_emb"][r] + p["col_emb"][c])
    with pytest.raises(ValidationError):
        embed_image(np.zeros((8, 8, 3), np.uint8), PatchGrid(4, 4, 2), p, tc)


def test_text_is_causal():
    rng = np.random.default_rng(1)
    p = init_params(MICRO)
    inp = micro_inputs(rng)
    a = forward(p, MICRO, inp)
    inp.tokens[:, -1] = (inp.tokens[:, -1] + 1) % MICRO.vocab_size
    b = forward(p, MICRO, inp)
    np.testing.assert_array_equal(a[:, :-1], b[:, :-1])
    assert np.abs(a[:, -1] - b[:, -1]).max() > 0


@pytest.mark.parametrize("mixers", [0, 1, 2])
def test_last_patch_reaches_first_visual_position_only_through_mixing(mixers):
    rng = np.random.default_rng(2)
    tc = ToyConfig(**{**MICRO.__dict__, "mixer_layers": mixers})
    p = init_params(tc)
    inp = micro_inputs(rng, tc)
    a = forward(p, tc, inp)
    inp.patches[:, -1] += 0.5
    b = forward(p, tc, inp)
    delta = np.abs(a[:, 0] - b[:, 0]).max()
    assert (delta > 1e-6) if mixers else (delta < 1e-10)


def test_gradient_directional_derivative():
    rng = np.random.default_rng(3)
    p = {k: v + rng.normal(0, 0.1, v.shape) for k, v in init_params(MICRO).items()}
    inp = micro_inputs(rng)
    logits, cache = forward(p, MICRO, inp, keep_cache=True)
    w = rng.normal(size=logits.shape)
    grads = backward(p, MICRO, inp, cache, w)
    d = {k: rng.normal(size=v.shape) for k, v in p.items()}
    h = 1e-6

    def f(s):
        return float(np.sum(w * forward({k: p[k] + s * d[k] for k in p}, MICRO, inp)))

    num = (f(h) - f(-h)) / (2 * h)
    ana = sum(float(np.sum(grads[k] * d[k])) for k in p)
    assert abs(num - ana) / abs(ana) < 1e-7


def test_sequence_limits():
    p = init_params(MICRO)
    rng = np.random.default_rng(0)
    with pytest.raises(ValidationError):
        forward(p, MICRO, micro_inputs(rng, L=11))
    with pytest.raises(ValidationError):
        ToyConfig(d_model=10, n_heads=4)
    with pytest.raises(ValidationError):
        MICRO.check_trainable()


def test_init_is_seeded():
    a, b = init_params(MICRO), init_params(MICRO)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = init_params(ToyConfig(**{**MICRO.__dict__, "seed": 1}))
    assert not np.array_equal(a["patch_w"], c["patch_w"])


def test_params_roundtrip(tmp_path):
    p = init_params(MICRO)
    save_params(tmp_path / "p.bin", p, MICRO)
    cfg, q = load_params(tmp_path / "p.bin")
    assert cfg == MICRO and list(q) == list(p)
    assert all(np.array_equal(p[k], q[k]) for k in p)
    (tmp_path / "bad.bin").write_bytes(b"nope" * 10)
    with pytest.raises(ValidationError):
        load_params(tmp_path / "bad.bin")


def test_sequence_targets_layout():
    ex = make_dataset(1, seed=0)[0]
    m = ex.sample.grid.token_count
    kinds, targets, V = sequence_targets(ex.sample, m)
    ids = text_ids(ex.sample.prompt, ex.sample.response)
    assert ids[0] == BOS
    assert len(kinds) == m + len(ids)  # inputs shifted by one, EOS appended
    resp = kinds == RESPONSE
    assert list(targets[resp]) == list(ex.sample.response.encode()) + [EOS]
    labeled = (kinds == VISUAL) & (targets != NONE)
    assert np.flatnonzero(labeled).tolist() == [lab.token_index for lab in ex.sample.vision_labels]
    assert set(V) == {ord(w[0]) for w in ex.words}


def test_dataset_is_seeded_and_labeled():
    a, b = make_dataset(20, seed=4), make_dataset(20, seed=4)
    assert [e.sample for e in a] == [e.sample for e in b]
    assert all(np.array_equal(x.image, y.image) for x, y in zip(a, b))
    task = TaskConfig()
    for e in a:
        assert e.sample.grid == PatchGrid(task.rows, task.cols, task.cell)
        assert len(e.sample.vision_labels) == len(e.words)
        assert task.min_words <= len(e.words) <= task.max_words


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_probe_prefix_property(seed):
    tc = ToyConfig(seed=seed % 7)
    p = init_params(tc)
    ex = make_dataset(1, seed=seed)[0]
    top5 = probe_visual_logits(p, tc, ex, k=5)
    top2 = probe_visual_logits(p, tc, ex, k=2)
    np.testing.assert_array_equal(top5[:, :2], top2)
    assert top5.shape == (ex.sample.grid.token_count, 5)


def test_probe_table_format():
    out = probe_table(np.array([[97, 256], [32, 98]]), cols=2)
    assert out.splitlines() == ["( 0, 0) a <256>", "( 0, 1) <32> b"]


def test_greedy_decode_stops_and_regrid():
    tc = ToyConfig()
    p = init_params(tc)
    ex = make_dataset(2, seed=0)
    preds = greedy_decode(p, tc, ex, max_new=3)
    assert len(preds) == 2 and all(len(x.encode("utf-8", "replace")) <= 9 for x in preds)
    g = PatchGrid(1, 8, 16)
    small = regrid(ex[0], g, ex[0].image[:16])
    assert small.sample.grid == g and small.sample.vision_labels == []
    greedy_decode(p, tc, [small], max_new=2)


def test_training_reduces_loss_and_is_reproducible():
    tc = ToyConfig(steps=40, eval_every=20, batch_size=8)
    data = make_dataset(64, seed=1)
    val = make_dataset(8, seed=2, prefix="val")
    lc = LossConfig(lam=1.0)
    before = evaluate(init_params(tc), tc, val, lc)
    p1, r1 = train(tc, data, val, lc)
    p2, r2 = train(tc, data, val, lc)
    assert r1.records() == r2.records()
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)
    assert [c.step for c in r1.checkpoints] == [20, 40]
    assert r1.final().text_loss < before["text_loss"]
    assert r1.final().vision_loss < before["vision_loss"]


def test_loss_and_grads_lambda_zero_ignores_vision():
    tc = ToyConfig()
    p = init_params(tc)
    ex = make_dataset(2, seed=3)
    (total, lt, lv), g0 = loss_and_grads(p, tc, ex, LossConfig(lam=0.0))
    assert total == lt and lv > 0
    inp, _ = batch_inputs(ex)
    assert inp.tokens.shape[0] == 2
