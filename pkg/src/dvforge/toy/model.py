"""Desk-scale multimodal decoder in plain numpy with hand-written backprop.

Image cells are embedded by a linear patch projection plus row/column
embeddings, mixed by bidirectional transformer blocks, then prepended to the
text embeddings and run through causal blocks. Everything is float64 so
finite-difference checks have headroom.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ValidationError
from ..patch_grid import PatchGrid

BOS = 256
EOS = 257
NEWLINE = 10


@dataclass(frozen=True)
class ToyConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    vocab_size: int = 258
    mixer_layers: int = 1
    cell: int = 16
    channels: int = 3
    max_rows: int = 8
    max_cols: int = 16
    max_seq: int = 128
    d_ff: int = 128
    init_scale: float = 0.02
    seed: int = 0
    learning_rate: float = 1.0
    steps: int = 2000
    batch_size: int = 16
    eval_every: int = 50
    grad_clip: float = 1.0
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValidationError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if min(self.d_model, self.n_heads, self.cell, self.max_seq, self.vocab_size) <= 0:
            raise ValidationError("toy model sizes must be positive")
        if self.n_layers < 0 or self.mixer_layers < 0:
            raise ValidationError("layer counts must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def check_trainable(self) -> None:
        if self.vocab_size < 258:
            raise ValidationError(f"vocab_size must be >= 258 (bytes + BOS/EOS), got {self.vocab_size}")

    @property
    def ff(self) -> int:
        return self.d_ff or 4 * self.d_model

    @property
    def patch_dim(self) -> int:
        return self.cell * self.cell * self.channels

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def init_params(cfg: ToyConfig) -> dict[str, np.ndarray]:
    """Deterministic initialisation from ``cfg.seed``; insertion order is stable."""
    rng = np.random.default_rng(cfg.seed)
    d, s = cfg.d_model, cfg.init_scale
    p: dict[str, np.ndarray] = {}
    p["patch_w"] = rng.normal(0, 1 / np.sqrt(cfg.patch_dim), (cfg.patch_dim, d))
    p["patch_b"] = np.zeros(d)
    p["row_emb"] = rng.normal(0, s, (cfg.max_rows, d))
    p["col_emb"] = rng.normal(0, s, (cfg.max_cols, d))
    p["tok_emb"] = rng.normal(0, s, (cfg.vocab_size, d))
    p["pos_emb"] = rng.normal(0, s, (cfg.max_seq, d))
    blocks = [f"mix{i}" for i in range(cfg.mixer_layers)] + [f"dec{i}" for i in range(cfg.n_layers)]
    for b in blocks:
        p[f"{b}.ln1_g"] = np.ones(d)
        p[f"{b}.ln1_b"] = np.zeros(d)
        p[f"{b}.w_qkv"] = rng.normal(0, 1 / np.sqrt(d), (d, 3 * d))
        p[f"{b}.b_qkv"] = np.zeros(3 * d)
        p[f"{b}.w_o"] = rng.normal(0, 1 / np.sqrt(d), (d, d))
        p[f"{b}.b_o"] = np.zeros(d)
        p[f"{b}.ln2_g"] = np.ones(d)
        p[f"{b}.ln2_b"] = np.zeros(d)
        p[f"{b}.w_1"] = rng.normal(0, 1 / np.sqrt(d), (d, cfg.ff))
        p[f"{b}.b_1"] = np.zeros(cfg.ff)
        p[f"{b}.w_2"] = rng.normal(0, 1 / np.sqrt(cfg.ff), (cfg.ff, d))
        p[f"{b}.b_2"] = np.zeros(d)
    p["lnf_g"] = np.ones(d)
    p["lnf_b"] = np.zeros(d)
    p["w_out"] = rng.normal(0, 1 / np.sqrt(d), (d, cfg.vocab_size))
    p["b_out"] = np.zeros(cfg.vocab_size)
    return {k: v.astype(cfg.dtype) for k, v in p.items()}


# --- primitives ---------------------------------------------------------

_GELU_C = np.sqrt(2.0 / np.pi)


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu_back(dy, x, t):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * (x * x))
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _ln(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc**2).mean(-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _ln_back(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).reshape(-1, dy.shape[-1]).sum(0)
    db = dy.reshape(-1, dy.shape[-1]).sum(0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _softmax(s):
    s = s - s.max(-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(-1, keepdims=True)


def _block_forward(p, name, x, n_heads, causal):
    B, T, d = x.shape
    dh = d // n_heads
    h1, ln1 = _ln(x, p[f"{name}.ln1_g"], p[f"{name}.ln1_b"])
    qkv = h1 @ p[f"{name}.w_qkv"] + p[f"{name}.b_qkv"]
    q, k, v = (qkv[..., i * d : (i + 1) * d].reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3) for i in range(3))
    scale = 1.0 / np.sqrt(dh)
    s = (q @ k.transpose(0, 1, 3, 2)) * scale
    if causal:
        s = s + np.triu(np.full((T, T), -np.inf), 1)
    a = _softmax(s)
    o = (a @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
    x2 = x + o @ p[f"{name}.w_o"] + p[f"{name}.b_o"]
    h2, ln2 = _ln(x2, p[f"{name}.ln2_g"], p[f"{name}.ln2_b"])
    z = h2 @ p[f"{name}.w_1"] + p[f"{name}.b_1"]
    f, t = _gelu(z)
    out = x2 + f @ p[f"{name}.w_2"] + p[f"{name}.b_2"]
    return out, (h1, ln1, q, k, v, a, o, h2, ln2, z, f, t, scale)


def _block_backward(p, g, name, dout, cache, n_heads):
    h1, ln1, q, k, v, a, o, h2, ln2, z, f, t, scale = cache
    B, T, d = dout.shape
    dh = d // n_heads
    flat = lambda u: u.reshape(-1, u.shape[-1])  # noqa: E731

    g[f"{name}.w_2"] += flat(f).T @ flat(dout)
    g[f"{name}.b_2"] += flat(dout).sum(0)
    dz = _gelu_back(dout @ p[f"{name}.w_2"].T, z, t)
    g[f"{name}.w_1"] += flat(h2).T @ flat(dz)
    g[f"{name}.b_1"] += flat(dz).sum(0)
    dx2_ln, dg2, db2 = _ln_back(dz @ p[f"{name}.w_1"].T, p[f"{name}.ln2_g"], ln2)
    g[f"{name}.ln2_g"] += dg2
    g[f"{name}.ln2_b"] += db2
    dx2 = dout + dx2_ln

    g[f"{name}.w_o"] += flat(o).T @ flat(dx2)
    g[f"{name}.b_o"] += flat(dx2).sum(0)
    do = (dx2 @ p[f"{name}.w_o"].T).reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
    da = do @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ do
    ds = a * (da - (da * a).sum(-1, keepdims=True))
    dq = (ds @ k) * scale
    dk = (ds.transpose(0, 1, 3, 2) @ q) * scale
    dqkv = np.concatenate([u.transpose(0, 2, 1, 3).reshape(B, T, d) for u in (dq, dk, dv)], axis=-1)
    g[f"{name}.w_qkv"] += flat(h1).T @ flat(dqkv)
    g[f"{name}.b_qkv"] += flat(dqkv).sum(0)
    dx_ln, dg1, db1 = _ln_back(dqkv @ p[f"{name}.w_qkv"].T, p[f"{name}.ln1_g"], ln1)
    g[f"{name}.ln1_g"] += dg1
    g[f"{name}.ln1_b"] += db1
    return dx2 + dx_ln


# --- model --------------------------------------------------------------


def patchify(image: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Split an ``(H, W, C)`` uint8 image into row-major cell vectors in [0, 1]."""
    H, W, C = image.shape
    if (H, W) != (grid.height, grid.width):
        raise ValidationError(f"image {H}x{W} does not match grid {grid.height}x{grid.width}")
    c = grid.cell
    cells = image.reshape(grid.rows, c, grid.cols, c, C).transpose(0, 2, 1, 3, 4)
    return cells.reshape(grid.token_count, c * c * C).astype(np.float64) / 255.0


def embed_image(image: np.ndarray, grid: PatchGrid, params: dict, cfg: ToyConfig) -> np.ndarray:
    """Per-cell visual embeddings before mixing, in token_index order."""
    if grid.rows > cfg.max_rows or grid.cols > cfg.max_cols:
        raise ValidationError(f"grid {grid.rows}x{grid.cols} exceeds model limit {cfg.max_rows}x{cfg.max_cols}")
    x = patchify(image, grid).astype(params["patch_w"].dtype) @ params["patch_w"] + params["patch_b"]
    r, c = np.divmod(np.arange(grid.token_count), grid.cols)
    return x + params["row_emb"][r] + params["col_emb"][c]


@dataclass
class Inputs:
    """A batch sharing one grid: patches ``(B, m, P)``, text ids ``(B, L)``."""

    patches: np.ndarray
    tokens: np.ndarray
    grid: PatchGrid


def forward(params: dict, cfg: ToyConfig, inp: Inputs, keep_cache: bool = False):
    """Return logits ``(B, m + L, vocab)`` (and the backward cache)."""
    B, m, _ = inp.patches.shape
    L = inp.tokens.shape[1]
    if m + L > cfg.max_seq:
        raise ValidationError(f"sequence length {m + L} exceeds max_seq={cfg.max_seq}")
    g = inp.grid
    if g.rows > cfg.max_rows or g.cols > cfg.max_cols:
        raise ValidationError(f"grid {g.rows}x{g.cols} exceeds model limit {cfg.max_rows}x{cfg.max_cols}")
    r, c = np.divmod(np.arange(m), g.cols)
    xv = inp.patches.astype(params["patch_w"].dtype) @ params["patch_w"] + params["patch_b"] + params["row_emb"][r] + params["col_emb"][c]
    caches = []
    for i in range(cfg.mixer_layers):
        xv, cache = _block_forward(params, f"mix{i}", xv, cfg.n_heads, causal=False)
        caches.append(cache)
    xt = params["tok_emb"][inp.tokens] + params["pos_emb"][:L]
    x = np.concatenate([xv, xt], axis=1)
    for i in range(cfg.n_layers):
        x, cache = _block_forward(params, f"dec{i}", x, cfg.n_heads, causal=True)
        caches.append(cache)
    h, lnf = _ln(x, params["lnf_g"], params["lnf_b"])
    logits = h @ params["w_out"] + params["b_out"]
    if not keep_cache:
        return logits
    return logits, (caches, h, lnf, r, c)


def backward(params: dict, cfg: ToyConfig, inp: Inputs, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    caches, h, lnf, r, c = cache
    g = {k: np.zeros_like(v) for k, v in params.items()}
    dlogits = dlogits.astype(params["w_out"].dtype)
    m = inp.patches.shape[1]
    L = inp.tokens.shape[1]
    flat = lambda u: u.reshape(-1, u.shape[-1])  # noqa: E731
    g["w_out"] += flat(h).T @ flat(dlogits)
    g["b_out"] += flat(dlogits).sum(0)
    dx, dg, db = _ln_back(dlogits @ params["w_out"].T, params["lnf_g"], lnf)
    g["lnf_g"] += dg
    g["lnf_b"] += db
    for i in reversed(range(cfg.n_layers)):
        dx = _block_backward(params, g, f"dec{i}", dx, caches[cfg.mixer_layers + i], cfg.n_heads)
    dxv, dxt = dx[:, :m], dx[:, m:]
    np.add.at(g["tok_emb"], inp.tokens.reshape(-1), flat(dxt))
    g["pos_emb"][:L] += dxt.sum(0)
    for i in reversed(range(cfg.mixer_layers)):
        dxv = _block_backward(params, g, f"mix{i}", dxv, caches[i], cfg.n_heads)
    g["patch_w"] += flat(inp.patches.astype(dxv.dtype)).T @ flat(dxv)
    g["patch_b"] += flat(dxv).sum(0)
    dpos = dxv.sum(0)
    np.add.at(g["row_emb"], r, dpos)
    np.add.at(g["col_emb"], c, dpos)
    return g
