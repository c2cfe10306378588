"""Desk-scale transformer bi-encoder stored in a :class:`TensorArchive`.

Architecture (Mistral-shaped, tiny): token embedding, ``n_layers`` pre-norm
blocks of causal multi-head self-attention with rotary positions and a SwiGLU
feed-forward, RMS normalisation, final norm, last-token (eos) pooling and L2
normalisation. All arithmetic is float32.

Tensor names::

    embed_tokens.weight            [vocab_size, d_model]
    layers.<i>.attn_norm.weight    [d_model]
    layers.<i>.attn.wq|wk|wv|wo    [d_model, d_model]
    layers.<i>.mlp_norm.weight     [d_model]
    layers.<i>.mlp.w1|w3           [d_model, d_ff]
    layers.<i>.mlp.w2              [d_ff, d_model]
    final_norm.weight              [d_model]

Initial weights come from numpy's PCG64 generator seeded with
``EncoderConfig.seed``, drawn in lexicographic tensor-name order: token
embeddings N(0, 1) with the pad and eos rows zeroed, projections
N(0, 1/fan_in), norm gains 1.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .tensor_store import TensorArchive

PAD_ID, BOS_ID, EOS_ID = 0, 1, 2
N_RESERVED = 3

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_ALNUM_RUN = re.compile(r"[^\W_]+")
_RMS_EPS = np.float32(1e-6)
_ROPE_BASE = 10000.0


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 4096
    d_model: int = 32
    n_layers: int = 8
    n_heads: int = 2
    d_ff: int = 64
    max_seq: int = 64
    seed: int = 0
    query_prefix: str = ""

    def __post_init__(self) -> None:
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq"):
            if getattr(self, name) <= 0:
                raise EncoderError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise EncoderError("d_model must be divisible by n_heads")
        if (self.d_model // self.n_heads) % 2:
            raise EncoderError("head dimension must be even for rotary positions")
        if self.vocab_size <= N_RESERVED:
            raise EncoderError(f"vocab_size must exceed {N_RESERVED}")
        if self.max_seq < 2:
            raise EncoderError("max_seq must leave room for bos and eos")
        if not 0 <= self.seed <= _MASK64:
            raise EncoderError("seed must be a u64")

    @classmethod
    def from_dict(cls, d: dict) -> EncoderConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise EncoderError(f"unknown encoder config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> EncoderConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


@dataclass(frozen=True)
class TokenizerSpec:
    """Hash tokenizer settings shared by both merge inputs.

    ``word`` hashes lower-cased alphanumeric runs. ``char_bigram`` hashes
    overlapping character pairs inside each run (a one-character run is
    hashed as is), which suits unsegmented CJK text.
    """

    mode: str = "word"
    vocab_size: int = 4096
    max_seq: int = 64

    def __post_init__(self) -> None:
        if self.mode not in ("word", "char_bigram"):
            raise EncoderError(f"unknown tokenizer mode {self.mode!r}")


def tokenizer_for(archive: TensorArchive, config: EncoderConfig) -> TokenizerSpec:
    """Tokenizer recorded in the archive metadata (``tokenizer.mode``)."""
    mode = archive.metadata.get("tokenizer.mode", "word")
    return TokenizerSpec(mode, config.vocab_size, config.max_seq)


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def terms(text: str, mode: str = "word") -> list[str]:
    runs = _ALNUM_RUN.findall(text.lower())
    if mode == "word":
        return runs
    out = []
    for run in runs:
        if len(run) == 1:
            out.append(run)
        else:
            out.extend(run[i : i + 2] for i in range(len(run) - 1))
    return out


def term_id(term: str, vocab_size: int) -> int:
    return N_RESERVED + fnv1a_64(term.encode("utf-8")) % (vocab_size - N_RESERVED)


def tokenize(text: str, spec: TokenizerSpec) -> list[int]:
    ids = [term_id(t, spec.vocab_size) for t in terms(text, spec.mode)]
    ids = ids[: spec.max_seq - 2]
    return [BOS_ID, *ids, EOS_ID]


def expected_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, f = config.d_model, config.d_ff
    shapes = {"embed_tokens.weight": (config.vocab_size, d), "final_norm.weight": (d,)}
    for i in range(config.n_layers):
        p = f"layers.{i}."
        shapes[p + "attn_norm.weight"] = (d,)
        shapes[p + "mlp_norm.weight"] = (d,)
        for w in ("wq", "wk", "wv", "wo"):
            shapes[p + "attn." + w] = (d, d)
        shapes[p + "mlp.w1"] = (d, f)
        shapes[p + "mlp.w3"] = (d, f)
        shapes[p + "mlp.w2"] = (f, d)
    return shapes


def init_encoder(config: EncoderConfig, tokenizer_mode: str = "word") -> TensorArchive:
    TokenizerSpec(tokenizer_mode)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    arrays = {}
    for name, shape in sorted(expected_shapes(config).items()):
        if name.endswith("norm.weight"):
            arrays[name] = np.ones(shape, dtype=np.float32)
        elif name == "embed_tokens.weight":
            emb = rng.standard_normal(shape).astype(np.float32)
            # zero pad and eos rows: eos then attends uniformly in layer 0
            emb[[PAD_ID, EOS_ID]] = 0.0
            arrays[name] = emb
        else:
            scale = 1.0 / np.sqrt(shape[0])
            arrays[name] = (rng.standard_normal(shape) * scale).astype(np.float32)
    meta = {"source": f"toy-encoder/seed={config.seed}", "tokenizer.mode": tokenizer_mode}
    return TensorArchive.from_arrays(arrays, meta)


def make_domain_variant(
    base: TensorArchive, config: EncoderConfig, domain_seed: int, strength: float
) -> TensorArchive:
    """Seeded stand-in for continued pre-training of ``base``.

    Each tensor W receives ``strength * rms(W) * P`` where P has unit RMS and is
    an equal mix of a rank-one pattern and dense Gaussian noise (vectors get
    noise only). ``strength == 0`` returns ``base`` itself.
    """
    if strength < 0:
        raise EncoderError("strength must be non-negative")
    check_archive(base, config)
    meta = dict(base.metadata)
    meta["source"] = f"{base.metadata.get('source', 'unknown')}+domain/seed={domain_seed}"
    if strength == 0:
        return base
    rng = np.random.Generator(np.random.PCG64(domain_seed))
    out = {}
    for name in base:
        w = base[name].data.astype(np.float64)
        noise = rng.standard_normal(w.shape)
        if w.ndim == 2:
            u = rng.standard_normal(w.shape[0])
            v = rng.standard_normal(w.shape[1])
            rank_one = np.outer(u, v)
            rank_one /= np.sqrt(np.mean(rank_one**2))
            pattern = rank_one + noise
        else:
            pattern = noise
        pattern /= np.sqrt(np.mean(pattern**2))
        rms = np.sqrt(np.mean(w**2))
        out[name] = (w + strength * rms * pattern).astype(np.float32)
    return TensorArchive.from_arrays(out, meta)


def check_archive(archive: TensorArchive, config: EncoderConfig) -> None:
    shapes = expected_shapes(config)
    missing = sorted(set(shapes) - set(archive))
    if missing:
        raise EncoderError(f"archive is missing tensors: {missing[:5]}{'...' if len(missing) > 5 else ''}")
    extra = sorted(set(archive) - set(shapes))
    if extra:
        raise EncoderError(f"archive has unexpected tensors: {extra[:5]}")
    for name, shape in shapes.items():
        if archive[name].shape != shape:
            raise EncoderError(
                f"tensor {name!r} has shape {archive[name].shape}, config expects {shape}"
            )


def _rms_norm(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    ms = np.mean(x * x, axis=-1, keepdims=True, dtype=np.float32)
    return (x / np.sqrt(ms + _RMS_EPS)) * g


def _rope_tables(max_seq: int, head_dim: int) -> tuple[np.ndarray, np.ndarray]:
    inv = 1.0 / (_ROPE_BASE ** (np.arange(0, head_dim, 2) / head_dim))
    ang = np.outer(np.arange(max_seq), inv)
    return np.cos(ang).astype(np.float32), np.sin(ang).astype(np.float32)


class ToyEncoder:
    """Validated, ready-to-run view of an encoder archive."""

    def __init__(self, archive: TensorArchive, config: EncoderConfig, spec: TokenizerSpec | None = None):
        check_archive(archive, config)
        self.config = config
        self.spec = spec or tokenizer_for(archive, config)
        self._embed = archive["embed_tokens.weight"].data
        self._final = archive["final_norm.weight"].data
        self._layers = []
        for i in range(config.n_layers):
            p = f"layers.{i}."
            self._layers.append(
                tuple(
                    archive[p + n].data
                    for n in (
                        "attn_norm.weight", "attn.wq", "attn.wk", "attn.wv", "attn.wo",
                        "mlp_norm.weight", "mlp.w1", "mlp.w3", "mlp.w2",
                    )
                )
            )
        self._head_dim = config.d_model // config.n_heads
        self._cos, self._sin = _rope_tables(config.max_seq, self._head_dim)

    def _rope(self, x: np.ndarray) -> np.ndarray:
        # x: [heads, T, head_dim]; rotate consecutive pairs
        t = x.shape[1]
        cos, sin = self._cos[:t], self._sin[:t]
        even, odd = x[..., 0::2], x[..., 1::2]
        out = np.empty_like(x)
        out[..., 0::2] = even * cos - odd * sin
        out[..., 1::2] = even * sin + odd * cos
        return out

    def encode_ids(self, ids: list[int]) -> np.ndarray:
        cfg = self.config
        if len(ids) > cfg.max_seq:
            raise EncoderError(f"sequence length {len(ids)} exceeds max_seq {cfg.max_seq}")
        t, h, hd = len(ids), cfg.n_heads, self._head_dim
        x = self._embed[np.asarray(ids)]
        scale = np.float32(1.0 / np.sqrt(hd))
        causal = np.triu(np.ones((t, t), dtype=bool), k=1)
        for i, (g_attn, wq, wk, wv, wo, g_mlp, w1, w3, w2) in enumerate(self._layers):
            a = _rms_norm(x, g_attn)
            q = self._rope((a @ wq).reshape(t, h, hd).transpose(1, 0, 2))
            k = self._rope((a @ wk).reshape(t, h, hd).transpose(1, 0, 2))
            v = (a @ wv).reshape(t, h, hd).transpose(1, 0, 2)
            s = (q @ k.transpose(0, 2, 1)) * scale
            s[:, causal] = -np.inf
            s = np.exp(s - s.max(axis=-1, keepdims=True))
            s /= s.sum(axis=-1, keepdims=True)
            x = x + (s @ v).transpose(1, 0, 2).reshape(t, cfg.d_model) @ wo
            m = _rms_norm(x, g_mlp)
            gate = m @ w1
            x = x + ((gate / (np.float32(1.0) + np.exp(-gate))) * (m @ w3)) @ w2
            if not np.all(np.isfinite(x)):
                raise EncoderError(f"non-finite activation in layer {i}")
        pooled = _rms_norm(x[-1], self._final).astype(np.float64)
        norm = np.linalg.norm(pooled)
        if not np.isfinite(norm) or norm == 0.0:
            raise EncoderError("degenerate pooled vector")
        return (pooled / norm).astype(np.float32)

    def encode(self, text: str) -> np.ndarray:
        return self.encode_ids(tokenize(text, self.spec))

    def encode_many(self, texts) -> np.ndarray:
        out = np.empty((len(texts), self.config.d_model), dtype=np.float32)
        for row, text in enumerate(texts):
            out[row] = self.encode(text)
        return out


def encode(archive: TensorArchive, config: EncoderConfig, spec: TokenizerSpec, text: str) -> np.ndarray:
    """L2-normalised embedding of ``text`` (float32, length ``d_model``)."""
    return ToyEncoder(archive, config, spec).encode(text)

