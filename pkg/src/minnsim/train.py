"""Stochastic training over random channel realizations, plus evaluation.

Each stage of the SNR schedule recalibrates the noise floor against the
current transmit statistics, decays the learning rate, and runs plain
SGD-with-momentum epochs. In static-fading mode one pinned realization is
reused for every sample; otherwise every sample sees a fresh draw.
"""

import math
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Tuple

import numpy as np

from . import tensor as tc
from .tensor import Tensor, backward
from .channel import sigma2_from_snr
from .minn import HARD_NORM, SOFT_PENALTY, minn_forward, power_normalize


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-2
    momentum: float = 0.9
    gamma: float = 0.0
    snr_schedule: Optional[List[Tuple[float, int]]] = None
    static_fading: bool = False
    seed: int = 0
    lr_stage_decay: float = 0.5
    loss_kind: str = "cross_entropy"
    eval_each_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            # lr = 0 is allowed for the no-update determinism contract
            if self.learning_rate < 0:
                raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")

    def to_dict(self):
        d = asdict(self)
        if d["snr_schedule"] is not None:
            d["snr_schedule"] = [list(s) for s in d["snr_schedule"]]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("snr_schedule"):
            d["snr_schedule"] = [tuple(s) for s in d["snr_schedule"]]
        return cls(**d)


@dataclass
class Metrics:
    """Per-epoch training curves; one row per epoch."""

    rows: List[dict] = field(default_factory=list)

    def append(self, **kw):
        if not (0.0 <= kw.get("accuracy", 0.0) <= 1.0):
            raise ValueError(f"accuracy outside [0, 1]: {kw['accuracy']}")
        if kw.get("tx_power", 0.0) < 0:
            raise ValueError(f"tx_power must be >= 0: {kw['tx_power']}")
        self.rows.append(kw)

    def last(self, key):
        return self.rows[-1][key]

    def column(self, key):
        return [r[key] for r in self.rows]


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def task_loss(logits, target, kind="cross_entropy"):
    """Mean cross-entropy (integer class targets) or mean squared error."""
    if kind == "cross_entropy":
        picked = tc.take_rows(tc.log_softmax(logits), np.asarray(target))
        return tc.mul(tc.tmean(picked), -1.0)
    if kind == "mse":
        target = tc.as_tensor(target)
        diff = tc.sub(logits, target)
        return tc.tmean(tc.abs2(diff)) if diff.is_complex else tc.tmean(tc.mul(diff, diff))
    raise ValueError(f"unknown loss kind {kind!r}")


def signal_power(s):
    """Per-sample transmit energies ||s_b||^2 as a real tensor (B,)."""
    return tc.tsum(tc.abs2(s), axis=(-2, -1))


def power_penalty(s, gamma):
    """gamma * mean over the batch of transmit energy; zero when gamma is 0."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if gamma == 0:
        return Tensor(0.0)
    return tc.mul(tc.tmean(signal_power(s)), gamma)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class SGD:
    """Plain momentum SGD: v <- mu v - lr g; p <- p + v."""

    def __init__(self, params, learning_rate, momentum=0.9):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v -= self.learning_rate * p.grad
            if self.learning_rate != 0.0:
                p.data += v

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

def calibrate_noise(model, features, rng, n_cal=256):
    """Point the sampler's noise power at the configured SNR.

    The reference power is the empirical mean of ||H_eff s||^2 / n_rx over a
    calibration batch. In soft-penalty mode the reference signals are scaled
    to p_max first, so the noise floor is an absolute level that does not
    chase the transmitter's shrinking power.
    """
    snr_db = model.channel_cfg.snr_db
    if snr_db is None:
        model.sampler.noise_sigma2 = 0.0
        return 0.0
    take = min(n_cal, features.shape[0])
    x = Tensor(features[:take])
    with tc.no_grad():
        s = model.transmit(x)
        if model.power_mode == SOFT_PENALTY:
            s = power_normalize(s, model.p_max)
        realization = model.sampler.sample_batch(take, rng)
        H = model.transfer(realization)
        from .channel import end_to_end_response, reference_power
        h_eff = end_to_end_response(realization, H)
        ref = reference_power(h_eff.data, s.data)
    if ref <= 0:
        ref = model.p_max
    model.sampler.noise_sigma2 = sigma2_from_snr(ref, snr_db)
    return ref


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def train_epoch(model, dataset, cfg, rng, noise_rng, epoch=0, optimizer=None):
    """One mini-batch SGD pass; returns (mean train loss, mean tx power)."""
    if dataset.features.shape[0] == 0:
        raise ValueError("dataset is empty")
    optimizer = optimizer or SGD(model.params(), cfg.learning_rate, cfg.momentum)
    n = dataset.features.shape[0]
    order = rng.permutation(n)
    losses, powers = [], []
    for start in range(0, n, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        xb = Tensor(dataset.features[idx])
        yb = dataset.labels[idx]
        realization = model.sampler.sample_batch(len(idx), rng)
        logits, s = minn_forward(xb, model, realization, rng=noise_rng, return_signal=True)
        loss = task_loss(logits, yb, cfg.loss_kind)
        if model.power_mode == SOFT_PENALTY and cfg.gamma > 0:
            loss = tc.add(loss, power_penalty(s, cfg.gamma))
        loss_val = float(loss.data)
        if not math.isfinite(loss_val):
            raise DivergenceError(
                f"loss became non-finite at epoch {epoch}, step {start // cfg.batch_size}")
        optimizer.zero_grad()
        backward(loss)
        optimizer.step()
        losses.append(loss_val)
        powers.append(float(np.mean(signal_power(s).data)))
    return float(np.mean(losses)), float(np.mean(powers))


def evaluate(model, dataset, snr_db=None, n_realizations=1, rng=None, batch_size=256):
    """Mean accuracy over dataset x realizations with live noise, plus TX power.

    ``snr_db`` overrides the sampler's current noise floor for the duration
    of the call (recalibrated against the current transmit statistics).
    """
    if n_realizations < 1:
        raise ValueError(f"n_realizations must be >= 1, got {n_realizations}")
    rng = rng or np.random.default_rng(0)
    saved_sigma2 = model.sampler.noise_sigma2
    if snr_db is not None:
        saved_cfg_snr = model.channel_cfg.snr_db
        model.channel_cfg.snr_db = snr_db
        calibrate_noise(model, dataset.features, rng)
        model.channel_cfg.snr_db = saved_cfg_snr
    n = dataset.features.shape[0]
    correct, power_sum, total = 0, 0.0, 0
    with tc.no_grad():
        for _ in range(n_realizations):
            for start in range(0, n, batch_size):
                xb = Tensor(dataset.features[start:start + batch_size])
                yb = dataset.labels[start:start + batch_size]
                realization = model.sampler.sample_batch(len(yb), rng)
                logits, s = minn_forward(xb, model, realization, rng=rng, return_signal=True)
                correct += int(np.sum(np.argmax(logits.data, axis=1) == yb))
                power_sum += float(np.sum(signal_power(s).data))
                total += len(yb)
    model.sampler.noise_sigma2 = saved_sigma2
    return correct / total, power_sum / total


def fit(model, train_ds, test_ds, cfg, on_epoch=None):
    """Run the full SNR schedule; returns Metrics with one row per epoch.

    A single-stage schedule is plain training at that SNR. Parameters carry
    over between stages, the learning rate decays by ``lr_stage_decay`` per
    stage, and the noise floor is recalibrated at each stage entry (and at
    every epoch under hard power normalization, where transmit statistics
    drift as the encoder trains).
    """
    schedule = cfg.snr_schedule or [(model.channel_cfg.snr_db, cfg.epochs)]
    if not schedule:
        raise ValueError("snr_schedule is empty")
    master = np.random.SeedSequence(cfg.seed)
    data_rng, noise_rng, eval_rng = (np.random.default_rng(s) for s in master.spawn(3))
    if cfg.static_fading:
        model.sampler.pin()
    optimizer = SGD(model.params(), cfg.learning_rate, cfg.momentum)
    metrics = Metrics()
    epoch = 0
    for stage, (snr_db, stage_epochs) in enumerate(schedule):
        model.channel_cfg.snr_db = None if snr_db is not None and math.isinf(snr_db) else snr_db
        optimizer.learning_rate = cfg.learning_rate * (cfg.lr_stage_decay ** stage)
        calibrate_noise(model, train_ds.features, noise_rng)
        for _ in range(stage_epochs):
            if model.power_mode == HARD_NORM and epoch > 0:
                calibrate_noise(model, train_ds.features, noise_rng)
            loss, tx_power = train_epoch(model, train_ds, cfg, data_rng, noise_rng,
                                         epoch=epoch, optimizer=optimizer)
            if cfg.eval_each_epoch:
                accuracy, eval_power = evaluate(model, test_ds, rng=eval_rng)
            else:
                accuracy, eval_power = 0.0, tx_power
            metrics.append(epoch=epoch, loss=loss, accuracy=accuracy,
                           tx_power=eval_power, snr_db=_snr_value(model.channel_cfg.snr_db),
                           seed=cfg.seed)
            if on_epoch is not None:
                on_epoch(metrics.rows[-1])
            epoch += 1
    return metrics


def transfer_finetune(model, train_ds, test_ds, cfg):
    """Train sequentially through cfg.snr_schedule, carrying parameters forward."""
    if not cfg.snr_schedule:
        raise ValueError("transfer_finetune needs a non-empty snr_schedule")
    return fit(model, train_ds, test_ds, cfg)


def _snr_value(snr_db):
    return float("inf") if snr_db is None else float(snr_db)
