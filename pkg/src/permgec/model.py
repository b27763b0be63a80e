"""Trainable scorer: shared encoder, pointer head, and infill decoder.

Everything is plain float64 numpy with hand-written reverse-mode gradients.
The encoder runs once per sentence; its hidden states feed both the pointer
head (which produces the permutation score matrix) and the decoder's
cross-attention.  Pre-norm residual blocks, GELU feed-forwards, and learned
positional embeddings throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erf

from .infill import SundaeConfig, sample_tokens
from .search import PointerMatrix, allowed_positions
from .vocab import TrainingExample, Vocab, dec_source_positions

LN_EPS = 1e-6


class LengthExceeded(ValueError):
    """Sequence longer than the positional table."""


class NumericalDivergence(RuntimeError):
    """Non-finite loss; carries the offending example index."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 32
    n_heads: int = 2
    enc_layers: int = 2
    dec_layers: int = 2
    d_ff: int = 0  # 0 means 4 * d_model
    max_seq_len: int = 96
    dropout: float = 0.1
    tie_output: bool = True

    @property
    def ff_dim(self) -> int:
        return self.d_ff if self.d_ff else 4 * self.d_model

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "enc_layers": self.enc_layers,
            "dec_layers": self.dec_layers,
            "d_ff": self.d_ff,
            "max_seq_len": self.max_seq_len,
            "dropout": self.dropout,
            "tie_output": self.tie_output,
        }


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fresh parameters in declaration order (the checkpoint tensor order)."""
    d, ff, v = cfg.d_model, cfg.ff_dim, cfg.vocab_size
    if d % cfg.n_heads:
        raise ValueError("d_model must be divisible by n_heads")
    params: dict[str, np.ndarray] = {}

    def w(name, shape):
        params[name] = rng.normal(0.0, 0.02, size=shape)

    def zeros(name, shape):
        params[name] = np.zeros(shape)

    def ones(name, shape):
        params[name] = np.ones(shape)

    def linear(name, din, dout):
        w(f"{name}.w", (din, dout))
        zeros(f"{name}.b", (dout,))

    def ln(name):
        ones(f"{name}.g", (d,))
        zeros(f"{name}.b", (d,))

    def attn(name):
        for part in ("q", "k", "v", "o"):
            linear(f"{name}.{part}", d, d)

    def block(name):
        ln(f"{name}.ln1")
        attn(f"{name}.attn")
        ln(f"{name}.ln2")
        linear(f"{name}.ff1", d, ff)
        linear(f"{name}.ff2", ff, d)

    w("tok_emb", (v, d))
    w("dec_tok_emb", (v, d))
    w("pos_emb", (cfg.max_seq_len, d))
    w("dec_pos_emb", (cfg.max_seq_len, d))
    for i in range(cfg.enc_layers):
        block(f"enc{i}")
    ln("enc.lnf")
    linear("ptr.key", d, d)
    block("ptr.qry")
    for i in range(cfg.dec_layers):
        ln(f"dec{i}.ln1")
        attn(f"dec{i}.self")
        ln(f"dec{i}.ln2")
        attn(f"dec{i}.cross")
        ln(f"dec{i}.ln3")
        linear(f"dec{i}.ff1", d, ff)
        linear(f"dec{i}.ff2", ff, d)
    ln("dec.lnf")
    if cfg.tie_output:
        zeros("out.b", (v,))
    else:
        linear("out", d, v)
    return params


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# primitive layers (forward + backward pairs sharing a cache)
# ---------------------------------------------------------------------------


def _linear(params, name, x):
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def _linear_bwd(params, grads, name, x, dy):
    grads[f"{name}.w"] += x.T @ dy
    grads[f"{name}.b"] += dy.sum(axis=0)
    return dy @ params[f"{name}.w"].T


def _ln(params, name, x):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * params[f"{name}.g"] + params[f"{name}.b"], (xhat, inv)


def _ln_bwd(params, grads, name, cache, dy):
    xhat, inv = cache
    grads[f"{name}.g"] += (dy * xhat).sum(axis=0)
    grads[f"{name}.b"] += dy.sum(axis=0)
    dxhat = dy * params[f"{name}.g"]
    return inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )


def _gelu(x):
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    return x * cdf, (x, cdf)


def _gelu_bwd(cache, dy):
    x, cdf = cache
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return dy * (cdf + x * pdf)


def _softmax(z):
    zs = z - z.max(axis=-1, keepdims=True)
    e = np.exp(zs)
    return e / e.sum(axis=-1, keepdims=True)


def _dropout(x, p, rng, training):
    if not training or p <= 0.0 or rng is None:
        return x, None
    keep = 1.0 - p
    mask = (rng.random(x.shape) < keep).astype(float) / keep
    return x * mask, mask


def _split_heads(x, n_heads):
    t, d = x.shape
    return x.reshape(t, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x):
    nh, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, nh * dh)


def _mha_fwd(params, name, xq, xkv, n_heads):
    q = _split_heads(_linear(params, f"{name}.q", xq), n_heads)
    k = _split_heads(_linear(params, f"{name}.k", xkv), n_heads)
    v = _split_heads(_linear(params, f"{name}.v", xkv), n_heads)
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(q.shape[-1])
    attn = _softmax(scores)
    merged = _merge_heads(attn @ v)
    out = _linear(params, f"{name}.o", merged)
    return out, (xq, xkv, q, k, v, attn, merged)


def _mha_bwd(params, grads, name, cache, dout, n_heads):
    xq, xkv, q, k, v, attn, merged = cache
    dmerged = _linear_bwd(params, grads, f"{name}.o", merged, dout)
    dctx = _split_heads(dmerged, n_heads)
    dattn = dctx @ v.transpose(0, 2, 1)
    dv = attn.transpose(0, 2, 1) @ dctx
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    scale = 1.0 / math.sqrt(q.shape[-1])
    dq = _merge_heads(scale * (dscores @ k))
    dk = _merge_heads(scale * (dscores.transpose(0, 2, 1) @ q))
    dxq = _linear_bwd(params, grads, f"{name}.q", xq, dq)
    dxkv = _linear_bwd(params, grads, f"{name}.k", xkv, dk)
    dxkv = dxkv + _linear_bwd(params, grads, f"{name}.v", xkv, _merge_heads(dv))
    return dxq, dxkv


def _block_fwd(params, name, x, n_heads, p_drop, rng, training):
    a, ln1c = _ln(params, f"{name}.ln1", x)
    sa, mhac = _mha_fwd(params, f"{name}.attn", a, a, n_heads)
    sa, m1 = _dropout(sa, p_drop, rng, training)
    x1 = x + sa
    f, ln2c = _ln(params, f"{name}.ln2", x1)
    h = _linear(params, f"{name}.ff1", f)
    g, gc = _gelu(h)
    ff = _linear(params, f"{name}.ff2", g)
    ff, m2 = _dropout(ff, p_drop, rng, training)
    return x1 + ff, (a, ln1c, mhac, m1, f, ln2c, g, gc, m2)


def _block_bwd(params, grads, name, cache, dx2, n_heads):
    a, ln1c, mhac, m1, f, ln2c, g, gc, m2 = cache
    dff = dx2 if m2 is None else dx2 * m2
    dg = _linear_bwd(params, grads, f"{name}.ff2", g, dff)
    dh = _gelu_bwd(gc, dg)
    df = _linear_bwd(params, grads, f"{name}.ff1", f, dh)
    dx1 = dx2 + _ln_bwd(params, grads, f"{name}.ln2", ln2c, df)
    dsa = dx1 if m1 is None else dx1 * m1
    dxq, dxkv = _mha_bwd(params, grads, f"{name}.attn", mhac, dsa, n_heads)
    return dx1 + _ln_bwd(params, grads, f"{name}.ln1", ln1c, dxq + dxkv)


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------


def encode(params, cfg: ModelConfig, ids: Sequence[int], rng=None, training=False):
    """Hidden states for the extended source sentence, with backward cache."""
    t = len(ids)
    if t > cfg.max_seq_len:
        raise LengthExceeded(f"sequence length {t} exceeds {cfg.max_seq_len}")
    ids = np.asarray(ids, dtype=int)
    x = params["tok_emb"][ids] + params["pos_emb"][:t]
    x, m_emb = _dropout(x, cfg.dropout, rng, training)
    blocks = []
    for i in range(cfg.enc_layers):
        x, c = _block_fwd(params, f"enc{i}", x, cfg.n_heads, cfg.dropout, rng, training)
        blocks.append(c)
    h, lnfc = _ln(params, "enc.lnf", x)
    return h, (ids, m_emb, blocks, lnfc)


def encode_bwd(params, grads, cfg: ModelConfig, cache, dh):
    ids, m_emb, blocks, lnfc = cache
    dx = _ln_bwd(params, grads, "enc.lnf", lnfc, dh)
    for i in reversed(range(cfg.enc_layers)):
        dx = _block_bwd(params, grads, f"enc{i}", blocks[i], dx, cfg.n_heads)
    if m_emb is not None:
        dx = dx * m_emb
    np.add.at(grads["tok_emb"], ids, dx)
    grads["pos_emb"][: len(ids)] += dx


# ---------------------------------------------------------------------------
# pointer head
# ---------------------------------------------------------------------------


def pointer_matrix(params, cfg: ModelConfig, h, rng=None, training=False):
    """Pairwise query/key dot products over the encoder states."""
    k = _linear(params, "ptr.key", h)
    q, qc = _block_fwd(params, "ptr.qry", h, cfg.n_heads, cfg.dropout, rng, training)
    a = q @ k.T / math.sqrt(cfg.d_model)
    return a, (h, k, q, qc)


def pointer_matrix_bwd(params, grads, cfg: ModelConfig, cache, da):
    h, k, q, qc = cache
    scale = 1.0 / math.sqrt(cfg.d_model)
    dq = scale * (da @ k)
    dk = scale * (da.T @ q)
    dh = _block_bwd(params, grads, "ptr.qry", qc, dq, cfg.n_heads)
    return dh + _linear_bwd(params, grads, "ptr.key", h, dk)


def permutation_nll(a: np.ndarray, pi: Sequence[int], n: int, s: int):
    """Teacher-forced negative log-likelihood of a permutation, plus d/dA.

    Each step log-softmaxes the masked row of the last visited position; the
    gradient is the usual softmax-minus-one-hot per visited row.
    """
    da = np.zeros_like(a)
    nll = 0.0
    for i in range(1, len(pi)):
        prefix = pi[:i]
        allowed = allowed_positions(n, s, prefix)
        row = np.where(allowed, a[prefix[-1]], -np.inf)
        m = row.max()
        logz = m + np.log(np.exp(row - m).sum())
        nll += logz - a[prefix[-1], pi[i]]
        p = np.exp(row - logz)
        da[prefix[-1]] += p
        da[prefix[-1], pi[i]] -= 1.0
    return nll, da


def _lse(a, axis):
    m = a.max(axis=axis, keepdims=True)
    return m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))


def sinkhorn_fwd(a: np.ndarray, steps: int):
    """Log-domain column/row normalization with softmax caches for backward."""
    caches = []
    for _ in range(steps):
        lse_col = _lse(a, axis=0)
        col = np.exp(a - lse_col)
        a = a - lse_col
        lse_row = _lse(a, axis=1)
        row = np.exp(a - lse_row)
        a = a - lse_row
        caches.append((col, row))
    return a, caches


def sinkhorn_bwd(caches, da):
    for col, row in reversed(caches):
        da = da - row * da.sum(axis=1, keepdims=True)
        da = da - col * da.sum(axis=0, keepdims=True)
    return da


# ---------------------------------------------------------------------------
# decoder
# ---------------------------------------------------------------------------


def decode_probs(
    params, cfg: ModelConfig, ids: Sequence[int], src_pos: Sequence[int],
    src_ids: Sequence[int], h, rng=None, training=False,
):
    """Per-position token distributions for a permuted-and-masked sequence.

    Bidirectional self-attention over the decoder input plus cross-attention
    to the encoder states; rows are softmax-normalized.  Each slot's
    embedding sums the token, its slot order, the source position it is
    anchored to (``src_pos``, sharing the encoder's positional table), and
    the source token found there, so mask slots carry the identity of the
    source token their gap replaces.  The decoder keeps its own token table
    (``dec_tok_emb``): the pointer objective shapes the encoder-side table
    toward positional structure and would otherwise collapse the lexical
    distinctions infilling depends on.
    """
    t = len(ids)
    if t > cfg.max_seq_len:
        raise LengthExceeded(f"decoder length {t} exceeds {cfg.max_seq_len}")
    ids = np.asarray(ids, dtype=int)
    src_pos = np.asarray(src_pos, dtype=int)
    if src_pos.shape != ids.shape:
        raise ValueError("src_pos must align with the decoder input")
    anchor_ids = np.asarray(src_ids, dtype=int)[src_pos]
    x = (
        params["dec_tok_emb"][ids]
        + params["dec_tok_emb"][anchor_ids]
        + params["dec_pos_emb"][:t]
        + params["pos_emb"][src_pos]
    )
    x, m_emb = _dropout(x, cfg.dropout, rng, training)
    blocks = []
    for i in range(cfg.dec_layers):
        name = f"dec{i}"
        a, ln1c = _ln(params, f"{name}.ln1", x)
        sa, selfc = _mha_fwd(params, f"{name}.self", a, a, cfg.n_heads)
        sa, m1 = _dropout(sa, cfg.dropout, rng, training)
        x1 = x + sa
        cq, ln2c = _ln(params, f"{name}.ln2", x1)
        ca, crossc = _mha_fwd(params, f"{name}.cross", cq, h, cfg.n_heads)
        ca, m2 = _dropout(ca, cfg.dropout, rng, training)
        x2 = x1 + ca
        f, ln3c = _ln(params, f"{name}.ln3", x2)
        hh = _linear(params, f"{name}.ff1", f)
        g, gc = _gelu(hh)
        ff = _linear(params, f"{name}.ff2", g)
        ff, m3 = _dropout(ff, cfg.dropout, rng, training)
        x = x2 + ff
        blocks.append((ln1c, selfc, m1, ln2c, crossc, m2, ln3c, g, gc, m3, a, cq, f))
    xf, lnfc = _ln(params, "dec.lnf", x)
    if cfg.tie_output:
        logits = xf @ params["dec_tok_emb"].T + params["out.b"]
    else:
        logits = _linear(params, "out", xf)
    probs = _softmax(logits)
    return probs, (ids, src_pos, anchor_ids, m_emb, blocks, xf, lnfc, probs)


def decode_bwd(params, grads, cfg: ModelConfig, cache, dlogits):
    """Backward from d(loss)/d(logits); returns the encoder-state gradient."""
    ids, src_pos, anchor_ids, m_emb, blocks, xf, lnfc, _ = cache
    if cfg.tie_output:
        grads["dec_tok_emb"] += dlogits.T @ xf
        grads["out.b"] += dlogits.sum(axis=0)
        dxf = dlogits @ params["dec_tok_emb"]
    else:
        dxf = _linear_bwd(params, grads, "out", xf, dlogits)
    dx = _ln_bwd(params, grads, "dec.lnf", lnfc, dxf)
    dh = None
    for i in reversed(range(cfg.dec_layers)):
        name = f"dec{i}"
        ln1c, selfc, m1, ln2c, crossc, m2, ln3c, g, gc, m3, a, cq, f = blocks[i]
        dff = dx if m3 is None else dx * m3
        dg = _linear_bwd(params, grads, f"{name}.ff2", g, dff)
        dhh = _gelu_bwd(gc, dg)
        df = _linear_bwd(params, grads, f"{name}.ff1", f, dhh)
        dx2 = dx + _ln_bwd(params, grads, f"{name}.ln3", ln3c, df)
        dca = dx2 if m2 is None else dx2 * m2
        dcq, dh_block = _mha_bwd(params, grads, f"{name}.cross", crossc, dca, cfg.n_heads)
        dh = dh_block if dh is None else dh + dh_block
        dx1 = dx2 + _ln_bwd(params, grads, f"{name}.ln2", ln2c, dcq)
        dsa = dx1 if m1 is None else dx1 * m1
        dxq, dxkv = _mha_bwd(params, grads, f"{name}.self", selfc, dsa, cfg.n_heads)
        dx = dx1 + _ln_bwd(params, grads, f"{name}.ln1", ln1c, dxq + dxkv)
    if m_emb is not None:
        dx = dx * m_emb
    np.add.at(grads["dec_tok_emb"], ids, dx)
    np.add.at(grads["dec_tok_emb"], anchor_ids, dx)
    grads["dec_pos_emb"][: len(ids)] += dx
    np.add.at(grads["pos_emb"], src_pos, dx)
    return dh if dh is not None else 0.0


def masked_ce_grad(probs, target, msk_positions, weight):
    """Summed masked cross-entropy and the matching d(loss)/d(logits)."""
    ce = 0.0
    dlogits = np.zeros_like(probs)
    for pos in msk_positions:
        ce -= float(np.log(max(probs[pos, target[pos]], 1e-300)))
        dlogits[pos] = probs[pos] * weight
        dlogits[pos, target[pos]] -= weight
    return ce, dlogits


# ---------------------------------------------------------------------------
# full training objective
# ---------------------------------------------------------------------------


@dataclass
class LossInfo:
    loss: float
    perm_nll: float
    dec_loss: float
    n_msk: int = 0


def total_loss(
    params,
    cfg: ModelConfig,
    batch: Sequence[TrainingExample],
    vocab: Vocab,
    lambda_per: float = 5.0,
    sundae: SundaeConfig | None = None,
    rng: np.random.Generator | None = None,
    training: bool = True,
    dropout_rng: np.random.Generator | None = None,
    sinkhorn_steps: int = 0,
):
    """Mean combined loss over a batch, with gradients for every parameter.

    Per example: the pointer term is the teacher-forced permutation
    negative log-likelihood weighted by ``lambda_per``; the decoder term is
    the (optionally unrolled) masked cross-entropy.  The second decoder pass
    consumes tokens sampled from the first, drawn from ``rng``; no gradient
    flows through the sampling.
    """
    if sundae is None:
        sundae = SundaeConfig()
    grads = zero_grads(params)
    wb = 1.0 / len(batch)
    total = perm_total = dec_total = 0.0
    n_msk = 0

    for idx, ex in enumerate(batch):
        h, ecache = encode(params, cfg, ex.source.ids, dropout_rng, training)
        a_raw, pcache = pointer_matrix(params, cfg, h, dropout_rng, training)
        if sinkhorn_steps:
            a, skcache = sinkhorn_fwd(a_raw, sinkhorn_steps)
        else:
            a, skcache = a_raw, None
        nll, da = permutation_nll(a, ex.pi, ex.source.n, ex.source.s)
        if skcache is not None:
            da = sinkhorn_bwd(skcache, da)
        dh = pointer_matrix_bwd(params, grads, cfg, pcache, da * (lambda_per * wb))

        dec_loss = 0.0
        msk = ex.msk_positions(vocab)
        if msk:
            n_msk += len(msk)
            lam = sundae.lambda0
            src_pos = dec_source_positions(ex.pi, ex.source.n)
            probs1, dcache1 = decode_probs(
                params, cfg, ex.dec_input, src_pos, ex.source.ids, h, dropout_rng, training
            )
            ce1, dlogits1 = masked_ce_grad(probs1, ex.dec_output, msk, lam * wb)
            dec_loss = lam * ce1
            if lam > 0.0:
                dh = dh + decode_bwd(params, grads, cfg, dcache1, dlogits1)
            if lam < 1.0:
                if rng is None:
                    raise ValueError("rng required for the unrolled second pass")
                sampled = sample_tokens(probs1, msk, rng, sundae.sample_temperature)
                ids2 = list(ex.dec_input)
                for pos, tok in zip(msk, sampled):
                    ids2[pos] = tok
                probs2, dcache2 = decode_probs(
                    params, cfg, ids2, src_pos, ex.source.ids, h, dropout_rng, training
                )
                ce2, dlogits2 = masked_ce_grad(probs2, ex.dec_output, msk, (1.0 - lam) * wb)
                dec_loss += (1.0 - lam) * ce2
                dh = dh + decode_bwd(params, grads, cfg, dcache2, dlogits2)

        encode_bwd(params, grads, cfg, ecache, dh)
        example_loss = lambda_per * nll + dec_loss
        if not np.isfinite(example_loss):
            raise NumericalDivergence(f"non-finite loss at batch index {idx}")
        total += wb * example_loss
        perm_total += wb * nll
        dec_total += wb * dec_loss

    return total, grads, LossInfo(loss=total, perm_nll=perm_total, dec_loss=dec_total, n_msk=n_msk)


# ---------------------------------------------------------------------------
# bundled model handle
# ---------------------------------------------------------------------------


@dataclass
class Model:
    """Config plus parameters, with inference-mode convenience methods."""

    cfg: ModelConfig
    params: dict[str, np.ndarray] = field(repr=False)

    @classmethod
    def fresh(cls, cfg: ModelConfig, seed: int = 0) -> "Model":
        return cls(cfg=cfg, params=init_params(cfg, np.random.default_rng(seed)))

    def encode(self, ids: Sequence[int]) -> np.ndarray:
        h, _ = encode(self.params, self.cfg, ids)
        return h

    def pointer(self, h: np.ndarray, n: int, s: int, sinkhorn_steps: int = 0) -> PointerMatrix:
        a, _ = pointer_matrix(self.params, self.cfg, h)
        if sinkhorn_steps:
            a, _ = sinkhorn_fwd(a, sinkhorn_steps)
        return PointerMatrix(a=a, n=n, s=s)

    def decode(
        self, ids: Sequence[int], src_pos: Sequence[int], src_ids: Sequence[int], h: np.ndarray
    ) -> np.ndarray:
        probs, _ = decode_probs(self.params, self.cfg, ids, src_pos, src_ids, h)
        return probs
