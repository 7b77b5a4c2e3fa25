"""Reconstruction metrics and nonparametric information estimators.

NMSE and SGCS follow the usual per-sample definitions (NMSE averaged over
samples, SGCS averaged over subcarriers then samples). Differential
entropy uses the Kozachenko-Leonenko k-NN estimator; mutual information
uses the KSG (type 1) estimator with max-norm neighborhoods.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln


@dataclass
class MetricResult:
    nmse_linear: float
    nmse_db: float
    sgcs: float
    skipped: int = 0


@dataclass
class InfoEstimate:
    quantity: str            # "entropy" or "mutual_information"
    nats: float
    k: int
    n_samples: int

    @property
    def bits(self):
        return self.nats / np.log(2.0)


def _as_batch(h):
    h = np.asarray(h)
    return h[None] if h.ndim == 2 else h


def nmse(h_true, h_est):
    """Mean over samples of ||H - Hhat||_F^2 / ||H||_F^2; also in dB.

    Zero-norm truth samples are excluded and counted in `skipped`.
    """
    ht, he = _as_batch(h_true), _as_batch(h_est)
    if ht.shape != he.shape:
        raise ValueError(f"shape mismatch {ht.shape} vs {he.shape}")
    err = np.sum(np.abs(ht - he) ** 2, axis=(-2, -1))
    ref = np.sum(np.abs(ht) ** 2, axis=(-2, -1))
    valid = ref > 0
    skipped = int(np.sum(~valid))
    if not np.any(valid):
        raise ValueError("all samples have zero norm")
    linear = float(np.mean(err[valid] / ref[valid]))
    db = 10.0 * np.log10(linear) if linear > 0 else -np.inf
    return linear, db, skipped


def sgcs(h_true, h_est):
    """Mean squared per-subcarrier cosine similarity, in [0, 1].

    Subcarriers where either column has zero norm are excluded per sample.
    """
    ht, he = _as_batch(h_true), _as_batch(h_est)
    if ht.shape != he.shape:
        raise ValueError(f"shape mismatch {ht.shape} vs {he.shape}")
    # computed via the projection residual, cos^2 = 1 - ||e - mu*h||^2/||e||^2
    # with mu the least-squares complex scale: proportional columns leave a
    # residual at rounding level, so sin^2 ~ 1e-32 underflows against 1 and
    # scale/phase invariance holds exactly in float64
    nt2 = np.sum(ht.real ** 2 + ht.imag ** 2, axis=-2)
    ne2 = np.sum(he.real ** 2 + he.imag ** 2, axis=-2)
    valid = (nt2 > 0) & (ne2 > 0)
    skipped = int(np.sum(~valid))
    inner = np.sum(np.conj(ht) * he, axis=-2)
    mu = np.zeros_like(inner)
    np.divide(inner, nt2, out=mu, where=valid)
    resid = he - mu[..., None, :] * ht
    r2 = np.sum(resid.real ** 2 + resid.imag ** 2, axis=-2)
    sin2 = np.zeros_like(r2)
    np.divide(r2, ne2, out=sin2, where=valid)
    cos2 = np.clip(1.0 - sin2, 0.0, 1.0)
    cos2 = np.where(valid, cos2, 0.0)
    per_sample = np.sum(cos2, axis=-1) / np.maximum(valid.sum(axis=-1), 1)
    return float(np.mean(per_sample)), skipped


def evaluate_pair(h_true, h_est) -> MetricResult:
    linear, db, skip_n = nmse(h_true, h_est)
    s, skip_s = sgcs(h_true, h_est)
    return MetricResult(nmse_linear=linear, nmse_db=db, sgcs=s,
                        skipped=skip_n + skip_s)


# ---------------------------------------------------------------------------
# k-NN information estimators
# ---------------------------------------------------------------------------

def _prepare(x, jitter_rel, rng):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    spread = x.max(axis=0) - x.min(axis=0)
    scale = float(np.max(spread))
    if scale == 0.0:
        raise ValueError("degenerate input: all points identical; "
                         "increase the jitter scale or vary the data")
    if jitter_rel > 0:
        x = x + jitter_rel * scale * rng.standard_normal(x.shape)
    return x


def knn_entropy(x, k=3, jitter_rel=1e-10, seed=0) -> InfoEstimate:
    """Kozachenko-Leonenko differential entropy in nats.

    H = psi(N) - psi(k) + log(V_d) + (d/N) sum_i log(eps_i), eps_i twice
    the Euclidean distance to the i-th point's k-th neighbor. Discrete or
    duplicated data is broken up with tiny relative jitter first.
    """
    rng = np.random.default_rng(seed)
    x = _prepare(x, jitter_rel, rng)
    n, d = x.shape
    if n <= k:
        raise ValueError(f"need more than k={k} samples, got {n}")
    tree = cKDTree(x)
    dist, _ = tree.query(x, k=k + 1)
    eps = 2.0 * dist[:, k]
    if np.any(eps == 0):
        raise ValueError("zero k-NN distance: duplicated points survive the "
                         "jitter; increase jitter_rel")
    # eps is a diameter, so the matching ball volume is the unit-diameter
    # one: V_d / 2^d with V_d the unit-radius Euclidean ball volume
    log_cd = ((d / 2.0) * np.log(np.pi) - gammaln(d / 2.0 + 1.0)
              - d * np.log(2.0))
    nats = (digamma(n) - digamma(k) + log_cd + d * np.mean(np.log(eps)))
    return InfoEstimate("entropy", float(nats), k, n)


def knn_mutual_information(x, y, k=3, jitter_rel=1e-10, seed=0) -> InfoEstimate:
    """KSG type-1 mutual information in nats, max-norm neighborhoods.

    I = psi(k) + psi(N) - < psi(n_x + 1) + psi(n_y + 1) >, where n_x/n_y
    count the points strictly within the joint k-NN max-norm radius in
    each marginal space.
    """
    rng = np.random.default_rng(seed)
    x = _prepare(x, jitter_rel, rng)
    y = _prepare(y, jitter_rel, rng)
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y must be paired samples")
    n = x.shape[0]
    if n <= k:
        raise ValueError(f"need more than k={k} samples, got {n}")
    joint = np.hstack([x, y])
    tree_joint = cKDTree(joint)
    dist, _ = tree_joint.query(joint, k=k + 1, p=np.inf)
    radius = dist[:, k]

    tree_x = cKDTree(x)
    tree_y = cKDTree(y)
    shrunk = radius * (1.0 - 1e-12)
    n_x = np.array([len(tree_x.query_ball_point(x[i], shrunk[i], p=np.inf)) - 1
                    for i in range(n)])
    n_y = np.array([len(tree_y.query_ball_point(y[i], shrunk[i], p=np.inf)) - 1
                    for i in range(n)])
    nats = (digamma(k) + digamma(n)
            - np.mean(digamma(n_x + 1) + digamma(n_y + 1)))
    return InfoEstimate("mutual_information", float(nats), k, n)


# ---------------------------------------------------------------------------
# embedding export
# ---------------------------------------------------------------------------

def normalized_features(h_samples):
    """Flatten each H / ||H||_F into a real row [Re..., Im...]."""
    h = _as_batch(h_samples)
    norms = np.linalg.norm(h, axis=(-2, -1), keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero-norm sample cannot be normalized")
    hn = h / norms
    flat = hn.reshape(hn.shape[0], -1)
    return np.hstack([flat.real, flat.imag])


def export_embeddings(h_samples, cqi_labels, path):
    """CSV of flattened normalized channels plus a wideband CQI column."""
    feats = normalized_features(h_samples)
    labels = np.asarray(cqi_labels)
    if labels.shape[0] != feats.shape[0]:
        raise ValueError("label count does not match sample count")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"f{i:04d}" for i in range(feats.shape[1])] + ["cqi"])
        for row, label in zip(feats, labels):
            w.writerow([f"{v:.9g}" for v in row] + [int(label)])


def write_analysis_csv(path, estimates):
    """analysis.csv rows: (quantity, variable, k, N, nats, bits)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["quantity", "variable", "k", "N", "nats", "bits"])
        for variable, est in estimates:
            w.writerow([est.quantity, variable, est.k, est.n_samples,
                        f"{est.nats:.6f}", f"{est.bits:.6f}"])
