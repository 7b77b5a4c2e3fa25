"""End-to-end training of the feedback autoencoder under the MSE objective.

One writer owns the TrainState; every run is reproducible from (config,
seed) and resumable bit-exactly from a checkpoint that carries parameters,
Adam moments, and the rng state.
"""

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import cqi as cqi_mod
from . import metrics as met
from . import model as mdl
from .autodiff import Tensor


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    steps: int = 5000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    snr_db_min: float = -10.0       # fixed-SNR training: set min == max
    snr_db_max: float = 0.0
    seed: int = 0
    checkpoint_every: int = 1000
    val_fraction: float = 0.1

    def validate(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.snr_db_max < self.snr_db_min:
            raise ValueError("snr range inverted")
        return self


@dataclass
class TrainState:
    step: int
    params: dict
    m: dict
    v: dict
    rng: np.random.Generator
    norm_scale: float
    loss_history: list = field(default_factory=list)


def mse_loss(pred_tokens, target_tokens):
    """(1/B) sum over batch of squared Frobenius error on realified values."""
    target = target_tokens if isinstance(target_tokens, Tensor) else Tensor(target_tokens)
    if pred_tokens.shape != target.shape:
        raise ad.ShapeError(
            f"loss shapes differ: {pred_tokens.shape} vs {target.shape}")
    diff = pred_tokens - target
    batch = pred_tokens.shape[0]
    return ad.tensor_sum(diff * diff) * (1.0 / batch)


def adam_step(params, m, v, t, cfg: TrainConfig):
    """Standard Adam update from tensor.grad buffers."""
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        m[name] = b1 * m[name] + (1.0 - b1) * g
        v[name] = b2 * v[name] + (1.0 - b2) * g * g
        mhat = m[name] / bc1
        vhat = v[name] / bc2
        p.data = p.data - cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)


def dataset_norm_scale(h_train):
    """Scale c with mean ||c*H||_F^2 == N_t * N_c over the training split."""
    h = np.asarray(h_train)
    power = np.mean(np.sum(np.abs(h) ** 2, axis=(-2, -1)))
    if power == 0:
        raise TrainError("training split has zero mean power")
    return float(np.sqrt(h.shape[-2] * h.shape[-1] / power))


def cqi_indices_for(h_samples, model_cfg, link_budget, table):
    """Per-sample CQI per the model's conditioning mode; None when unused."""
    if model_cfg.cqi_mode == "none":
        return None
    rho = cqi_mod.subcarrier_snr(h_samples, link_budget)
    if model_cfg.cqi_mode == "wideband":
        return table.lookup(rho.mean(axis=-1))
    return cqi_mod.subband_cqi(rho, table, model_cfg.subcarriers_per_subband)


def _batch_cqi(indices, batch_idx):
    return None if indices is None else indices[batch_idx]


def init_state(model_cfg, train_cfg: TrainConfig, h_train, param_seed=None):
    seed = train_cfg.seed if param_seed is None else param_seed
    params = mdl.init_params(model_cfg, seed=seed)
    return TrainState(
        step=0,
        params=params,
        m={n: np.zeros_like(p.data) for n, p in params.items()},
        v={n: np.zeros_like(p.data) for n, p in params.items()},
        rng=np.random.default_rng(train_cfg.seed),
        norm_scale=dataset_norm_scale(h_train),
    )


def train_step(state: TrainState, h_batch, cqi_batch, model_cfg,
               train_cfg: TrainConfig):
    """One forward/backward/Adam update; returns (loss, tau, snr_db)."""
    rng = state.rng
    tau = model_cfg.tau_at(state.step)
    if train_cfg.snr_db_min == train_cfg.snr_db_max:
        snr_db = train_cfg.snr_db_min
    else:
        snr_db = float(rng.uniform(train_cfg.snr_db_min, train_cfg.snr_db_max))

    h_in = np.asarray(h_batch) * state.norm_scale
    target = mdl.realify_csi(h_in)
    try:
        with ad.Tape() as tape:
            tokens, _ = mdl.feedback_forward(
                h_in, cqi_batch, state.params, model_cfg,
                mode="soft", tau=tau, snr_db=snr_db, rng=rng)
            loss = mse_loss(tokens, target)
        ad.backward(tape, loss, params=state.params.values())
    except ad.NonFiniteError as exc:
        raise TrainError(
            f"non-finite value at step {state.step} (tau={tau:.4f}, "
            f"snr_db={snr_db:.2f}): {exc}") from exc

    state.step += 1
    if train_cfg.lr > 0:
        adam_step(state.params, state.m, state.v, state.step, train_cfg)
    value = loss.item()
    state.loss_history.append(value)
    return value, tau, snr_db


def train(state: TrainState, h_train, cqi_train, model_cfg,
          train_cfg: TrainConfig, steps=None, metrics_writer=None,
          checkpoint_fn=None):
    """Run `steps` updates with batches drawn from the training split."""
    n = h_train.shape[0]
    total = train_cfg.steps if steps is None else steps
    for _ in range(total):
        idx = state.rng.integers(0, n, size=train_cfg.batch_size)
        loss, tau, snr_db = train_step(
            state, h_train[idx], _batch_cqi(cqi_train, idx), model_cfg, train_cfg)
        if metrics_writer is not None:
            metrics_writer.writerow(
                [state.step, f"{loss:.8e}", f"{tau:.4f}", f"{snr_db:.2f}"])
        if (checkpoint_fn is not None and train_cfg.checkpoint_every > 0
                and state.step % train_cfg.checkpoint_every == 0):
            checkpoint_fn(state)
    return state


def evaluate(params, model_cfg, h_samples, cqi_indices, snr_db_list,
             mode="hard", norm_scale=1.0, seed=0, batch_size=256):
    """Per-SNR NMSE/SGCS rows over a dataset.

    Hard mode transmits discrete constellation points (deployment
    condition for jcm); analog checkpoints ignore `mode`.
    """
    h = np.asarray(h_samples)
    rows = []
    for snr_db in snr_db_list:
        rng = np.random.default_rng(seed)
        recon = np.empty_like(h)
        for lo in range(0, h.shape[0], batch_size):
            hi = min(lo + batch_size, h.shape[0])
            cqi_b = None if cqi_indices is None else cqi_indices[lo:hi]
            tokens, _ = mdl.feedback_forward(
                h[lo:hi] * norm_scale, cqi_b, params, model_cfg,
                mode=mode, tau=model_cfg.tau_end,
                snr_db=None if snr_db == np.inf else snr_db, rng=rng)
            recon[lo:hi] = mdl.reconstruct(tokens, model_cfg) / norm_scale
        result = met.evaluate_pair(h, recon)
        rows.append({
            "snr_db": snr_db,
            "cr": model_cfg.compression_ratio,
            "cqi_mode": model_cfg.cqi_mode,
            "mod_mode": model_cfg.mod_mode,
            "nmse_linear": result.nmse_linear,
            "nmse_db": result.nmse_db,
            "sgcs": result.sgcs,
        })
    return rows


def write_eval_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["snr_db", "cr", "cqi_mode", "mod_mode", "nmse_db", "sgcs"])
        for r in rows:
            w.writerow([r["snr_db"], f"{r['cr']:.6f}", r["cqi_mode"],
                        r["mod_mode"], f"{r['nmse_db']:.4f}", f"{r['sgcs']:.6f}"])


# ---------------------------------------------------------------------------
# checkpoint round trip (parameters + optimizer + rng)
# ---------------------------------------------------------------------------

def save_state(path, state: TrainState, model_cfg, train_cfg: TrainConfig):
    tensors = dict(state.params)
    for name, arr in state.m.items():
        tensors["opt.m." + name] = arr
    for name, arr in state.v.items():
        tensors["opt.v." + name] = arr
    extra = {
        "train": asdict(train_cfg),
        "step": state.step,
        "norm_scale": state.norm_scale,
        "rng_state": state.rng.bit_generator.state,
    }
    mdl.write_checkpoint(path, model_cfg, tensors, extra=extra)


def load_state(path):
    model_cfg, tensors, meta = mdl.read_checkpoint(path)
    params, m, v = {}, {}, {}
    for name, t in tensors.items():
        if name.startswith("opt.m."):
            m[name[len("opt.m."):]] = t.data
        elif name.startswith("opt.v."):
            v[name[len("opt.v."):]] = t.data
        else:
            params[name] = t
    train_cfg = TrainConfig(**meta["train"]).validate()
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    state = TrainState(step=meta["step"], params=params, m=m, v=v, rng=rng,
                       norm_scale=meta["norm_scale"])
    return state, model_cfg, train_cfg
