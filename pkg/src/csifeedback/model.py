"""CQI-conditioned transformer autoencoder with probabilistic modulation.

Encoder: per-subcarrier tokens (stacked real/imag) are projected to the
embedding dimension, combined additively with a CQI embedding and a
learnable positional encoding, run through pre-norm transformer blocks,
and a head emits either per-channel-use constellation logits (jcm mode)
or power-normalized reals (analog mode). The feedback link is AWGN on
unit-power symbols; the decoder mirrors the encoder and outputs a point
estimate of the channel matrix.
"""

import io
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cqi import N_LEVELS

CKPT_MAGIC = b"SMCK"
CKPT_VERSION = 1


class ModelConfigError(ValueError):
    pass


class CheckpointFormatError(ValueError):
    pass


def make_constellation(n_points):
    """Unit-average-power constellation: BPSK/QPSK/8PSK/16QAM."""
    if n_points == 2:
        pts = np.array([1.0, -1.0], dtype=np.complex128)
    elif n_points == 4:
        pts = (np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0))
    elif n_points == 8:
        pts = np.exp(2j * np.pi * np.arange(8) / 8.0)
    elif n_points == 16:
        re, im = np.meshgrid([-3, -1, 1, 3], [-3, -1, 1, 3])
        pts = (re + 1j * im).ravel() / np.sqrt(10.0)
    else:
        raise ModelConfigError(f"unsupported constellation size {n_points}")
    avg = np.mean(np.abs(pts) ** 2)
    if abs(avg - 1.0) > 1e-12:
        raise ModelConfigError("constellation not unit power")
    return pts


@dataclass
class ModelConfig:
    n_tx: int = 32
    n_subcarriers: int = 52
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    channel_uses: int = 104
    constellation_points: int = 4
    cqi_mode: str = "none"              # none | wideband | subband
    mod_mode: str = "jcm"               # jcm | analog
    subcarriers_per_subband: int = 4
    tau_start: float = 1.0
    tau_end: float = 0.1
    tau_anneal_steps: int = 4000
    hard_sampling: str = "sample"       # sample | argmax
    straight_through: bool = False

    def validate(self):
        if self.channel_uses < 1:
            raise ModelConfigError("channel_uses must be >= 1")
        if self.embed_dim % self.heads != 0:
            raise ModelConfigError("embed_dim must divide evenly into heads")
        if self.cqi_mode not in ("none", "wideband", "subband"):
            raise ModelConfigError(f"unknown cqi_mode {self.cqi_mode!r}")
        if self.mod_mode not in ("jcm", "analog"):
            raise ModelConfigError(f"unknown mod_mode {self.mod_mode!r}")
        if self.cqi_mode == "subband" and \
                self.n_subcarriers % self.subcarriers_per_subband != 0:
            raise ModelConfigError("subband size must divide n_subcarriers")
        make_constellation(self.constellation_points)
        return self

    @property
    def tokens(self):
        return self.n_subcarriers

    @property
    def n_subbands(self):
        return self.n_subcarriers // self.subcarriers_per_subband

    @property
    def compression_ratio(self):
        return self.channel_uses / (self.n_tx * self.n_subcarriers)

    def tau_at(self, step):
        if self.tau_anneal_steps <= 0:
            return self.tau_end
        frac = min(max(step / self.tau_anneal_steps, 0.0), 1.0)
        if frac >= 1.0:
            return self.tau_end
        return self.tau_start + frac * (self.tau_end - self.tau_start)


@dataclass
class SymbolSequence:
    """M channel uses: soft rows over the constellation and/or symbols.

    `symbols` holds the realified (.., M, 2) complex values actually put on
    the channel; `probs` the per-use distributions (soft mode only).
    """
    symbols: object                     # Tensor or ndarray, (..., M, 2)
    probs: object = None                # Tensor or ndarray, (..., M, K)
    hard: bool = False


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _affine_init(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = np.zeros(fan_out)
    return w, b


def init_params(cfg: ModelConfig, seed=0):
    """Named parameter dict for encoder + decoder."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    d, L, M, K = cfg.embed_dim, cfg.tokens, cfg.channel_uses, cfg.constellation_points
    p = {}

    def affine(name, fan_in, fan_out):
        w, b = _affine_init(rng, fan_in, fan_out)
        p[name + ".w"] = w
        p[name + ".b"] = b

    def blocks(prefix):
        for i in range(cfg.depth):
            base = f"{prefix}.block{i}"
            p[f"{base}.ln1.g"] = np.ones(d)
            p[f"{base}.ln1.b"] = np.zeros(d)
            for proj in ("wq", "wk", "wv", "wo"):
                affine(f"{base}.attn.{proj}", d, d)
            p[f"{base}.ln2.g"] = np.ones(d)
            p[f"{base}.ln2.b"] = np.zeros(d)
            affine(f"{base}.mlp.fc1", d, cfg.mlp_ratio * d)
            affine(f"{base}.mlp.fc2", cfg.mlp_ratio * d, d)
        p[f"{prefix}.lnf.g"] = np.ones(d)
        p[f"{prefix}.lnf.b"] = np.zeros(d)

    affine("enc.in_proj", 2 * cfg.n_tx, d)
    affine("enc.cqi", N_LEVELS, d)
    p["enc.pos"] = 0.02 * rng.standard_normal((L, d))
    blocks("enc")
    head_out = M * K if cfg.mod_mode == "jcm" else 2 * M
    affine("enc.head", L * d, head_out)

    affine("dec.in_proj", 2 * M, L * d)
    affine("dec.cqi", N_LEVELS, d)
    p["dec.pos"] = 0.02 * rng.standard_normal((L, d))
    blocks("dec")
    affine("dec.head", d, 2 * cfg.n_tx)

    return {name: Tensor(v, requires_grad=True) for name, v in p.items()}


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def realify_csi(h):
    """(B, N_t, N_c) complex -> (B, N_c, 2*N_t) real token array."""
    h = np.asarray(h)
    if h.ndim == 2:
        h = h[None]
    re = np.swapaxes(h.real, -1, -2)
    im = np.swapaxes(h.imag, -1, -2)
    return np.concatenate([re, im], axis=-1)


def complexify_tokens(tokens, n_tx):
    """(B, N_c, 2*N_t) real -> (B, N_t, N_c) complex."""
    tokens = np.asarray(tokens)
    re = np.swapaxes(tokens[..., :n_tx], -1, -2)
    im = np.swapaxes(tokens[..., n_tx:], -1, -2)
    return re + 1j * im


def tokenize_csi(h, params, cfg: ModelConfig):
    x = realify_csi(h)
    if x.shape[-2:] != (cfg.tokens, 2 * cfg.n_tx):
        raise ModelConfigError(
            f"channel dims {x.shape[-2:]} do not match config "
            f"({cfg.tokens}, {2 * cfg.n_tx})")
    return ad.matmul(Tensor(x), params["enc.in_proj.w"]) + params["enc.in_proj.b"]


def _one_hot(indices):
    indices = np.asarray(indices, dtype=np.int64)
    if np.any(indices < 0) or np.any(indices >= N_LEVELS):
        raise ModelConfigError("CQI index outside 0..15")
    eye = np.eye(N_LEVELS)
    return eye[indices]


def embed_cqi(indices, params, cfg: ModelConfig, side, batch):
    """CQI embedding tokens of shape (B, L, D); zeros when mode is none.

    Wideband: (B,) indices, one shared vector broadcast over tokens.
    Subband: (B, N_b) indices, each subband vector repeated over its
    subcarriers' tokens.
    """
    w, b = params[f"{side}.cqi.w"], params[f"{side}.cqi.b"]
    d = cfg.embed_dim
    if cfg.cqi_mode == "none":
        return Tensor(np.zeros((batch, cfg.tokens, d)))
    if cfg.cqi_mode == "wideband":
        onehot = _one_hot(indices).reshape(batch, 1, N_LEVELS)
        vec = ad.matmul(Tensor(onehot), w) + b          # (B, 1, D)
        return vec
    # subband
    idx = np.asarray(indices)
    if idx.shape != (batch, cfg.n_subbands):
        raise ModelConfigError(
            f"subband CQI shape {idx.shape} != ({batch}, {cfg.n_subbands})")
    onehot = _one_hot(idx)                              # (B, N_b, 16)
    vec = ad.matmul(Tensor(onehot), w) + b              # (B, N_b, D)
    expand = np.repeat(np.eye(cfg.n_subbands), cfg.subcarriers_per_subband,
                       axis=0)                          # (L, N_b)
    return ad.matmul(Tensor(expand), vec)               # (B, L, D)


def _attention(z, params, base, cfg: ModelConfig):
    b, L, d = z.shape
    nh, dh = cfg.heads, d // cfg.heads

    def proj(name):
        out = ad.matmul(z, params[f"{base}.{name}.w"]) + params[f"{base}.{name}.b"]
        return ad.transpose(ad.reshape(out, (b, L, nh, dh)), (0, 2, 1, 3))

    q, k, v = proj("wq"), proj("wk"), proj("wv")
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    attn = ad.softmax(scores)
    ctx = ad.matmul(attn, v)                            # (B, nh, L, dh)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, L, d))
    return ad.matmul(ctx, params[f"{base}.wo.w"]) + params[f"{base}.wo.b"]


def _transformer(z, params, prefix, cfg: ModelConfig):
    for i in range(cfg.depth):
        base = f"{prefix}.block{i}"
        h = ad.layernorm(z, params[f"{base}.ln1.g"], params[f"{base}.ln1.b"])
        z = z + _attention(h, params, f"{base}.attn", cfg)
        h = ad.layernorm(z, params[f"{base}.ln2.g"], params[f"{base}.ln2.b"])
        h = ad.gelu(ad.matmul(h, params[f"{base}.mlp.fc1.w"]) + params[f"{base}.mlp.fc1.b"])
        h = ad.matmul(h, params[f"{base}.mlp.fc2.w"]) + params[f"{base}.mlp.fc2.b"]
        z = z + h
    return ad.layernorm(z, params[f"{prefix}.lnf.g"], params[f"{prefix}.lnf.b"])


def encode(h, cqi_indices, params, cfg: ModelConfig):
    """Returns (B, M, K) logits in jcm mode or (B, M, 2) symbols in analog.

    Analog output is power-normalized so the batch mean square is 1.
    """
    tokens = tokenize_csi(h, params, cfg)
    batch = tokens.shape[0]
    z0 = tokens + embed_cqi(cqi_indices, params, cfg, "enc", batch) + params["enc.pos"]
    zf = _transformer(z0, params, "enc", cfg)
    flat = ad.reshape(zf, (batch, cfg.tokens * cfg.embed_dim))
    out = ad.matmul(flat, params["enc.head.w"]) + params["enc.head.b"]
    if cfg.mod_mode == "jcm":
        return ad.reshape(out, (batch, cfg.channel_uses, cfg.constellation_points))
    sym = ad.power_normalize(out)
    return ad.reshape(sym, (batch, cfg.channel_uses, 2))


def constellation_real(cfg: ModelConfig):
    pts = make_constellation(cfg.constellation_points)
    return np.stack([pts.real, pts.imag], axis=1)       # (K, 2)


def modulate_jcm(logits, cfg: ModelConfig, mode, tau=1.0, rng=None,
                 gumbel_noise=None):
    """Soft: Gumbel-softmax relaxation with expected-symbol output.
    Hard: exact constellation points, sampled or argmax per channel use.
    """
    cst = constellation_real(cfg)
    if mode == "soft":
        if tau <= 0:
            raise ModelConfigError("soft modulation needs tau > 0")
        if gumbel_noise is None:
            u = rng.uniform(size=logits.shape)
            gumbel_noise = -np.log(-np.log(u + 1e-20) + 1e-20)
        y = ad.softmax((logits + Tensor(gumbel_noise)) * (1.0 / tau))
        if cfg.straight_through:
            hard = np.eye(cfg.constellation_points)[np.argmax(y.data, axis=-1)]
            y = ad.straight_through(y, hard)
        symbols = ad.matmul(y, Tensor(cst))
        return SymbolSequence(symbols=symbols, probs=y, hard=False)
    if mode == "hard":
        data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
        shifted = data - data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=-1, keepdims=True)
        if cfg.hard_sampling == "argmax" or rng is None:
            idx = np.argmax(probs, axis=-1)
        else:
            u = rng.uniform(size=probs.shape[:-1] + (1,))
            idx = (probs.cumsum(axis=-1) > u).argmax(axis=-1)
        return SymbolSequence(symbols=cst[idx], probs=probs, hard=True)
    raise ModelConfigError(f"unknown modulation mode {mode!r}")


def awgn(symbols, snr_db, rng=None, noise=None):
    """Add circularly-symmetric complex Gaussian noise to realified symbols.

    Per-element complex variance sigma^2 = 10^(-snr_db/10) splits evenly
    between the two real components. snr_db=None means a noiseless link.
    """
    if snr_db is None:
        return symbols
    shape = symbols.shape if isinstance(symbols, Tensor) else np.asarray(symbols).shape
    if noise is None:
        sigma2 = 10.0 ** (-snr_db / 10.0)
        noise = rng.normal(0.0, np.sqrt(sigma2 / 2.0), size=shape)
    if isinstance(symbols, Tensor):
        return symbols + Tensor(noise)
    return np.asarray(symbols) + noise


def decode(received, cqi_indices, params, cfg: ModelConfig):
    """(B, M, 2) received symbols -> (B, N_c, 2*N_t) reconstructed tokens."""
    if not isinstance(received, Tensor):
        received = Tensor(np.asarray(received, dtype=np.float64))
    batch = received.shape[0]
    if received.shape[1:] != (cfg.channel_uses, 2):
        raise ModelConfigError(
            f"received shape {received.shape[1:]} != ({cfg.channel_uses}, 2)")
    flat = ad.reshape(received, (batch, 2 * cfg.channel_uses))
    tokens = ad.matmul(flat, params["dec.in_proj.w"]) + params["dec.in_proj.b"]
    z0 = ad.reshape(tokens, (batch, cfg.tokens, cfg.embed_dim))
    z0 = z0 + embed_cqi(cqi_indices, params, cfg, "dec", batch) + params["dec.pos"]
    zf = _transformer(z0, params, "dec", cfg)
    return ad.matmul(zf, params["dec.head.w"]) + params["dec.head.b"]


def feedback_forward(h, cqi_indices, params, cfg: ModelConfig, mode="soft",
                     tau=1.0, snr_db=None, rng=None, gumbel_noise=None,
                     channel_noise=None):
    """Full encode -> modulate -> AWGN -> decode pass.

    Returns (reconstructed tokens, SymbolSequence). In analog mode the
    modulation step is a no-op on the power-normalized encoder output.
    """
    enc_out = encode(h, cqi_indices, params, cfg)
    if cfg.mod_mode == "analog":
        seq = SymbolSequence(symbols=enc_out, hard=False)
    else:
        seq = modulate_jcm(enc_out, cfg, mode, tau=tau, rng=rng,
                           gumbel_noise=gumbel_noise)
    received = awgn(seq.symbols, snr_db, rng=rng, noise=channel_noise)
    tokens = decode(received, cqi_indices, params, cfg)
    return tokens, seq


def reconstruct(tokens, cfg: ModelConfig):
    data = tokens.data if isinstance(tokens, Tensor) else np.asarray(tokens)
    return complexify_tokens(data, cfg.n_tx)


# ---------------------------------------------------------------------------
# checkpoint format (SMCK)
# ---------------------------------------------------------------------------

def write_checkpoint(path, cfg: ModelConfig, params, extra=None):
    """magic, version, length-prefixed JSON config, named f64 records."""
    meta = {"model": asdict(cfg)}
    if extra:
        meta.update(extra)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for name in sorted(params):
        arr = params[name].data if isinstance(params[name], Tensor) else params[name]
        arr = np.asarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def read_checkpoint(path, requires_grad=True):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12:
        raise CheckpointFormatError("header: file too short")
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointFormatError(f"magic: expected {CKPT_MAGIC!r}, found {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CKPT_VERSION:
        raise CheckpointFormatError(f"version: expected {CKPT_VERSION}, found {version}")
    (blob_len,) = struct.unpack_from("<I", raw, 8)
    offset = 12
    if len(raw) < offset + blob_len:
        raise CheckpointFormatError("config: truncated JSON block")
    try:
        meta = json.loads(raw[offset:offset + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"config: invalid JSON ({exc})") from exc
    offset += blob_len

    params = {}
    while offset < len(raw):
        if len(raw) < offset + 2:
            raise CheckpointFormatError("record: truncated name length")
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        dims = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        end = offset + 8 * count
        if len(raw) < end:
            raise CheckpointFormatError(f"record {name}: truncated payload")
        arr = np.frombuffer(raw, dtype="<f8", count=count,
                            offset=offset).reshape(dims).copy()
        params[name] = Tensor(arr, requires_grad=requires_grad)
        offset = end

    cfg = ModelConfig(**meta["model"]).validate()
    return cfg, params, meta
