import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvforge import font
from dvforge.doc_render import (
    RenderSpec, auto_grid, derive_seed, labels_from_layout, layout, pick_colors, read_ppm, render,
    render_corpus, render_document, write_ppm,
)
from dvforge.errors import ValidationError
from dvforge.label_align import align_words
from dvforge.patch_grid import GridConfig, PatchGrid, WordBox
from dvforge.tokenizer import byte_vocab

from oracles import ink_outside_spans

V = byte_vocab()
SPEC = RenderSpec(cell=32, cols=8, glyph_scale=2)


@pytest.mark.parametrize("seed", [0, 1, 2, 12345])
def test_colors_bounds_and_determinism(seed):
    for pol in ("dark_bg", "random"):
        bg, fg = pick_colors(seed, pol)
        dark, light = (bg, fg) if max(bg) < 96 else (fg, bg)
        assert max(dark) < 96 and min(light) > 160
        assert min(light) > max(dark) + 64
        assert pick_colors(seed, pol) == (bg, fg)


def test_default_polarity_is_dark_background():
    assert all(max(pick_colors(s)[0]) < 96 for s in range(50))


def test_random_polarity_flips_both_ways():
    dark_bg = [max(pick_colors(s, "random")[0]) < 96 for s in range(200)]
    assert 60 < sum(dark_bg) < 140


def test_color_overrides():
    spec = RenderSpec(cell=32, cols=2, bg_color=(200, 200, 200))
    img = render(layout(["a"], spec), spec, 1, 2)
    assert tuple(img[0, 0]) == (200, 200, 200)
    assert max(img[img[..., 0] != 200].reshape(-1)) < 96
    with pytest.raises(ValidationError):
        RenderSpec(bg_color=(10, 10, 10), fg_color=(20, 20, 20))
    with pytest.raises(ValidationError):
        RenderSpec(bg_color=(128, 10, 10))


def test_layout_separator_cell():
    ps = layout(["a", "b"], SPEC)
    assert [p.start_cell for p in ps] == [(0, 0), (0, 2)]
    assert [p.span_cells for p in ps] == [1, 1]


def test_layout_wraps():
    # each 5-letter word is 80px -> 3 cells; 3 + 1 + 3 = 7, then 3 more won't fit in 8
    ps = layout(["abcde", "fghij", "klmno"], SPEC)
    assert [p.start_cell for p in ps] == [(0, 0), (0, 4), (1, 0)]


def test_layout_margin():
    spec = RenderSpec(cell=32, cols=8, margin_cells=1)
    ps = layout(["abc", "def", "g"], spec)
    assert [p.start_cell for p in ps] == [(1, 1), (1, 4), (2, 1)]


def test_layout_errors():
    with pytest.raises(ValidationError, match="toolongword"):
        layout(["toolongword" * 3], SPEC)
    with pytest.raises(ValidationError):
        layout(["a"] * 10, RenderSpec(cell=32, cols=2, rows=2))
    assert layout([], SPEC) == []


def test_glyph_must_fit_cell():
    with pytest.raises(ValidationError):
        RenderSpec(cell=16, glyph_scale=2)


def test_span_is_ceil_of_width():
    assert SPEC.word_span("ab") == 1
    assert SPEC.word_span("abc") == 2
    assert RenderSpec(cell=16, glyph_scale=1).word_span("abc") == 2


def test_labels_last_cell():
    grid = PatchGrid(4, 8, 32)
    ps = layout(["a", "b"], SPEC)
    assert [lab.token_index for lab in labels_from_layout(ps, grid, V)] == [0, 2]
    from dvforge.doc_render import Placement

    p = Placement("word", (1, 2), 3, (64, 40, 150, 72))
    assert labels_from_layout([p], grid, V)[0].token_index == 12


def test_blank_render():
    img = render([], SPEC, 2, 8)
    assert img.shape == (64, 256, 3)
    assert len(np.unique(img.reshape(-1, 3), axis=0)) == 1


def test_one_word_ink_matches_font():
    spec = RenderSpec(cell=32, cols=4, glyph_scale=2, seed=3)
    ps = layout(["Hi"], spec)
    img = render(ps, spec, 1, 4)
    bg, _ = pick_colors(3)
    ink = np.any(img != np.array(bg, dtype=np.uint8), axis=2)
    x0, y0, x1, y1 = ps[0].pixel_box
    assert not ink[:y0].any() and not ink[y1:].any() and not ink[:, x1:].any()
    np.testing.assert_array_equal(ink[y0:y1, x0:x1], font.text_mask("Hi", 2))


def test_font_glyphs_differ():
    masks = {font.glyph(chr(c)).tobytes() for c in range(33, 127)}
    assert len(masks) == 94
    assert not font.glyph(" ").any()
    assert font.glyph("☃").any()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789.,", min_size=1, max_size=7), max_size=12),
       st.integers(0, 1000))
def test_ink_containment(words, seed):
    spec = RenderSpec(cell=32, glyph_scale=2, seed=seed, polarity="random")
    rows, cols = auto_grid(words, spec, GridConfig())
    ps = layout(words, spec, cols=cols, rows=rows)
    img = render(ps, spec, rows, cols)
    assert ink_outside_spans(img, ps, 32, pick_colors(seed, "random")[0]) == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["a", "an", "the", "to", "ok", "xyz"]), min_size=1, max_size=20))
def test_labels_agree_with_alignment(words):
    spec = RenderSpec(cell=32, glyph_scale=2)
    rows, cols = auto_grid(words, spec, GridConfig())
    ps = layout(words, spec, cols=cols, rows=rows)
    grid = PatchGrid(rows, cols, 32)
    boxes = [WordBox(p.word, *p.pixel_box) for p in ps]
    labels, _ = align_words(boxes, grid, (grid.height, grid.width), V)
    assert labels == sorted(labels_from_layout(ps, grid, V), key=lambda lab: lab.token_index)


def test_auto_grid_respects_budget():
    cfg = GridConfig()
    rows, cols = auto_grid(["a"], SPEC.__class__(cell=32), cfg)
    assert rows * cols * 1024 >= cfg.min_pixels
    assert (rows, cols) == (8, 8)
    with pytest.raises(ValidationError):
        auto_grid(["ab"] * 5000, RenderSpec(cell=32), cfg)


def test_auto_grid_fixed_cols():
    spec = RenderSpec(cell=16, cols=8, glyph_scale=1)
    assert auto_grid(["ab"] * 5, spec, GridConfig(cell=16, min_pixels=256, max_pixels=256 * 64)) == (2, 8)


def test_ppm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    img[0, 0] = (10, 32, 9)  # whitespace byte values at the raster start
    write_ppm(img, tmp_path / "x.ppm")
    np.testing.assert_array_equal(read_ppm(tmp_path / "x.ppm"), img)


def test_render_document_writes_pair(tmp_path):
    r = render_document(["hello", "world"], ("q", "world"), RenderSpec(cell=32), V, doc_id="d1", out_dir=tmp_path, png=True)
    assert (tmp_path / "d1.ppm").is_file() and (tmp_path / "d1.png").is_file()
    np.testing.assert_array_equal(read_ppm(tmp_path / "d1.ppm"), r.image)
    assert r.sample.source == "label_to_image"
    assert [lab.word for lab in r.sample.vision_labels] == ["hello", "world"]


def test_render_is_deterministic():
    a = render_document(["x", "yz"], ("q", "a"), RenderSpec(seed=5), V).image
    b = render_document(["x", "yz"], ("q", "a"), RenderSpec(seed=5), V).image
    assert a.tobytes() == b.tobytes()


def test_render_corpus_seeds_and_filter(tmp_path):
    docs = [{"doc_id": f"d{i}", "text": "one two", "question": "q", "answer": "one"} for i in range(4)]
    samples = render_corpus(docs, RenderSpec(seed=1), V, GridConfig(), tmp_path, qa_filter=lambda r: r["doc_id"] != "d2")
    assert [s.sample_id for s in samples] == ["d0", "d1", "d3"]
    assert read_ppm(tmp_path / "d0.ppm").tobytes() != read_ppm(tmp_path / "d1.ppm").tobytes()
    again = tmp_path / "again"
    again.mkdir()
    assert render_corpus(docs, RenderSpec(seed=1), V, GridConfig(), again, workers=2) == render_corpus(
        docs, RenderSpec(seed=1), V, GridConfig(), again)
    assert derive_seed(1, "d0") != derive_seed(1, "d1")
