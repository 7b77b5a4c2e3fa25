"""Synthetic spatial-frequency CSI generation and the dataset file format.

Channels follow a clustered multipath model over a half-wavelength uniform
planar array: each draw superposes a handful of paths with Gaussian angle
offsets around a per-user mean direction, exponentially decaying power over
delay, and a log-uniform large-scale gain. The large-scale gain spread is
what gives downstream CQI a nondegenerate distribution.
"""

import io
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

MAGIC = b"SMC1"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """Raised when a dataset file violates the SMC1 layout."""


@dataclass
class ScenarioConfig:
    n_tx: int = 32
    n_vertical: int = 4
    n_horizontal: int = 8
    n_subcarriers: int = 52
    carrier_ghz: float = 3.5
    subcarrier_spacing_khz: float = 30.0
    rb_subcarriers: int = 12          # one sampled subcarrier per RB
    paths_min: int = 1
    paths_max: int = 4
    elevation_deg_min: float = 60.0   # per-user mean direction sector
    elevation_deg_max: float = 120.0
    azimuth_deg_min: float = -60.0
    azimuth_deg_max: float = 60.0
    angle_spread_deg: float = 5.0
    delay_spread_ns: float = 300.0
    gain_db_min: float = -122.0
    gain_db_max: float = -92.0
    seed: int = 0

    def validate(self):
        if self.n_vertical * self.n_horizontal != self.n_tx:
            raise ValueError(
                f"array factors {self.n_vertical}x{self.n_horizontal} != n_tx={self.n_tx}")
        if self.n_subcarriers < 1:
            raise ValueError("n_subcarriers must be >= 1")
        if self.paths_min < 0 or self.paths_max < max(1, self.paths_min):
            raise ValueError("path count range must allow at least one path")
        if not (np.isfinite(self.gain_db_min) and np.isfinite(self.gain_db_max)):
            raise ValueError("gain range must be finite")
        if (self.elevation_deg_min > self.elevation_deg_max
                or self.azimuth_deg_min > self.azimuth_deg_max):
            raise ValueError("direction sector range inverted")
        return self

    @property
    def sampled_spacing_hz(self):
        return self.subcarrier_spacing_khz * 1e3 * self.rb_subcarriers


@dataclass
class Dataset:
    samples: np.ndarray               # complex, shape (T, N_t, N_c)
    metadata: dict = field(default_factory=dict)

    @property
    def count(self):
        return self.samples.shape[0]

    @property
    def n_tx(self):
        return self.samples.shape[1]

    @property
    def n_subcarriers(self):
        return self.samples.shape[2]


def steering_vector(theta, phi, n_vertical, n_horizontal):
    """Half-wavelength UPA response, kron(vertical, horizontal).

    theta is elevation measured from the array normal's vertical axis,
    phi azimuth; both radians. Entries have unit magnitude.
    """
    mv = np.arange(n_vertical)
    mh = np.arange(n_horizontal)
    a_v = np.exp(1j * np.pi * mv * np.cos(theta))
    a_h = np.exp(1j * np.pi * mh * np.sin(theta) * np.sin(phi))
    return np.kron(a_v, a_h)


def generate_sample(cfg: ScenarioConfig, rng: np.random.Generator):
    """Draw one clustered-multipath channel matrix of shape (N_t, N_c).

    h_n = g * sum_p alpha_p a(theta_p, phi_p) exp(-j 2 pi f_n tau_p)
    with per-path powers decaying exponentially in delay (normalized to
    sum 1) and g log-uniform over the configured dB range. Pathless draws
    (possible when paths_min == 0) are rejected and redrawn.
    """
    while True:
        n_paths = int(rng.integers(cfg.paths_min, cfg.paths_max + 1))
        if n_paths > 0:
            break

    mean_theta = np.deg2rad(rng.uniform(cfg.elevation_deg_min,
                                        cfg.elevation_deg_max))
    mean_phi = np.deg2rad(rng.uniform(cfg.azimuth_deg_min,
                                      cfg.azimuth_deg_max))
    spread = np.deg2rad(cfg.angle_spread_deg)
    thetas = mean_theta + spread * rng.standard_normal(n_paths)
    phis = mean_phi + spread * rng.standard_normal(n_paths)

    delay_spread = cfg.delay_spread_ns * 1e-9
    taus = rng.uniform(0.0, delay_spread, size=n_paths)
    if delay_spread > 0:
        powers = np.exp(-taus / (delay_spread / 3.0))
    else:
        powers = np.ones(n_paths)
    powers /= powers.sum()
    alphas = np.sqrt(powers / 2.0) * (rng.standard_normal(n_paths)
                                      + 1j * rng.standard_normal(n_paths))

    gain_db = rng.uniform(cfg.gain_db_min, cfg.gain_db_max)
    g = 10.0 ** (gain_db / 20.0)

    freqs = np.arange(cfg.n_subcarriers) * cfg.sampled_spacing_hz
    # (P, N_c) per-path phase ramps across the sampled subcarriers
    ramps = np.exp(-2j * np.pi * np.outer(taus, freqs))
    steer = np.stack([steering_vector(t, p, cfg.n_vertical, cfg.n_horizontal)
                      for t, p in zip(thetas, phis)])   # (P, N_t)
    h = g * (steer.T * alphas) @ ramps                  # (N_t, N_c)
    return h


def sample_rng(master_seed: int, index: int):
    """Independent per-sample substream, reproducible by sample index."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


def generate_dataset(cfg: ScenarioConfig, count: int, seed=None):
    cfg.validate()
    master = cfg.seed if seed is None else seed
    samples = np.empty((count, cfg.n_tx, cfg.n_subcarriers), dtype=np.complex128)
    for i in range(count):
        samples[i] = generate_sample(cfg, sample_rng(master, i))
    # round to storage precision so write/read round trips are bit-exact
    samples = samples.astype(np.complex64).astype(np.complex128)
    meta = {"scenario": asdict(cfg), "seed": int(master), "count": int(count)}
    return Dataset(samples=samples, metadata=meta)


# ---------------------------------------------------------------------------
# SMC1 file format
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIHHI")   # magic, version, T, N_t, N_c, reserved


def write_dataset(ds: Dataset, path):
    """Little-endian SMC1 layout; complex entries stored as (re f32, im f32)."""
    t, n_t, n_c = ds.samples.shape
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, FORMAT_VERSION, t, n_t, n_c, 0))
    interleaved = np.empty((t, n_t, n_c, 2), dtype="<f4")
    interleaved[..., 0] = ds.samples.real
    interleaved[..., 1] = ds.samples.imag
    buf.write(interleaved.tobytes())
    if ds.metadata:
        blob = json.dumps(ds.metadata, sort_keys=True).encode("utf-8")
        buf.write(struct.pack("<I", len(blob)))
        buf.write(blob)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError("header: file shorter than the fixed header")
    magic, version, t, n_t, n_c, reserved = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"magic: expected {MAGIC!r}, found {magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"version: expected {FORMAT_VERSION}, found {version}")
    if reserved != 0:
        raise DatasetFormatError(f"reserved: expected 0, found {reserved}")
    payload_len = t * n_t * n_c * 8
    offset = _HEADER.size
    if len(raw) < offset + payload_len:
        raise DatasetFormatError(
            f"payload: expected {payload_len} bytes, found {len(raw) - offset}")
    flat = np.frombuffer(raw, dtype="<f4", count=t * n_t * n_c * 2, offset=offset)
    pairs = flat.reshape(t, n_t, n_c, 2).astype(np.float64)
    samples = pairs[..., 0] + 1j * pairs[..., 1]
    offset += payload_len

    metadata = {}
    if len(raw) > offset:
        if len(raw) < offset + 4:
            raise DatasetFormatError("metadata: truncated length prefix")
        (blob_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if len(raw) < offset + blob_len:
            raise DatasetFormatError(
                f"metadata: expected {blob_len} bytes, found {len(raw) - offset}")
        try:
            metadata = json.loads(raw[offset:offset + blob_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DatasetFormatError(f"metadata: invalid JSON ({exc})") from exc
    return Dataset(samples=samples, metadata=metadata)
