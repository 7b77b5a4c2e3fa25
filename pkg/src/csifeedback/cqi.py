"""Per-subcarrier SNR and wideband/subband CQI index computation.

The per-subcarrier SNR uses the matched-filter (MRT) beamforming gain
rho_n = (P_tx / sigma^2) * ||h_n||^2 for a single-antenna user served by
an N_t-antenna array. Indices come from a 16-level threshold table;
averaging across subcarriers happens in the linear domain.
"""

from dataclasses import dataclass, field

import numpy as np

N_LEVELS = 16


class CqiConfigError(ValueError):
    pass


@dataclass
class LinkBudget:
    tx_power_dbm: float = 30.0
    noise_power_dbm: float = -70.0

    @property
    def gain_linear(self):
        return 10.0 ** ((self.tx_power_dbm - self.noise_power_dbm) / 10.0)


def default_thresholds_db():
    """15 thresholds uniformly spaced from -6 dB to +22 dB."""
    return np.linspace(-6.0, 22.0, N_LEVELS - 1)


@dataclass
class CqiTable:
    thresholds_db: np.ndarray = field(default_factory=default_thresholds_db)

    def __post_init__(self):
        self.thresholds_db = np.asarray(self.thresholds_db, dtype=np.float64)
        if self.thresholds_db.shape != (N_LEVELS - 1,):
            raise CqiConfigError(f"need {N_LEVELS - 1} thresholds, "
                                 f"got {self.thresholds_db.shape}")
        if not np.all(np.diff(self.thresholds_db) > 0):
            raise CqiConfigError("thresholds must be strictly increasing")

    def lookup(self, snr_linear):
        """Map linear SNR value(s) to indices in 0..15; snr 0 maps to 0."""
        snr_linear = np.asarray(snr_linear, dtype=np.float64)
        with np.errstate(divide="ignore"):
            snr_db = 10.0 * np.log10(snr_linear, where=snr_linear > 0,
                                     out=np.full(snr_linear.shape, -np.inf))
        return np.searchsorted(self.thresholds_db, snr_db, side="right").astype(np.int64)


@dataclass
class CqiReport:
    mode: str                      # "wideband" or "subband"
    indices: np.ndarray            # () for wideband, (N_b,) for subband

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if np.any(self.indices < 0) or np.any(self.indices >= N_LEVELS):
            raise CqiConfigError("CQI index outside 0..15")


def subcarrier_snr(h, lb: LinkBudget):
    """Linear SNR per subcarrier: (P/sigma^2) * ||h_n||^2.

    Accepts (N_t, N_c) or batched (T, N_t, N_c); reduces the antenna axis.
    """
    h = np.asarray(h)
    return lb.gain_linear * np.sum(np.abs(h) ** 2, axis=-2)


def wideband_cqi(rho, tbl: CqiTable):
    rho = np.asarray(rho, dtype=np.float64)
    idx = tbl.lookup(rho.mean(axis=-1))
    return int(idx) if idx.ndim == 0 else idx


def subband_cqi(rho, tbl: CqiTable, per_subband: int):
    rho = np.asarray(rho, dtype=np.float64)
    n_c = rho.shape[-1]
    if per_subband < 1 or n_c % per_subband != 0:
        raise CqiConfigError(
            f"subcarrier count {n_c} not divisible by subband size {per_subband}")
    n_b = n_c // per_subband
    means = rho.reshape(rho.shape[:-1] + (n_b, per_subband)).mean(axis=-1)
    return tbl.lookup(means)


def report(h, lb: LinkBudget, tbl: CqiTable, mode: str, per_subband: int = 4):
    rho = subcarrier_snr(h, lb)
    if mode == "wideband":
        return CqiReport("wideband", wideband_cqi(rho, tbl))
    if mode == "subband":
        return CqiReport("subband", subband_cqi(rho, tbl, per_subband))
    raise CqiConfigError(f"unknown CQI mode {mode!r}")
