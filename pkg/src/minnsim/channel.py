"""Fading realizations, end-to-end programmable channel response, and noise.

The link is split into a TX-side segment (TX antennas to the first
metasurface layer), an RX-side segment (last layer to RX antennas), and an
optional direct TX-RX path. Segment statistics follow the configured fading
model; under the geometric model the metasurface-adjacent segment is a
Rician mixture dominated by the line-of-sight coupling computed from the
actual element geometry, since the surface sits at a small fraction of the
link distance.
"""

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from . import tensor as tc
from .tensor import Tensor
from .wave import ElementGrid, propagation_matrix

CHANNEL_MODELS = ("geometric", "rayleigh", "identity")


class ConfigError(ValueError):
    """Invalid channel configuration."""


@dataclass
class ChannelConfig:
    """Link-level fading and noise settings.

    sim_placement is the TX-to-surface distance as a fraction of the total
    TX-RX distance. snr_db may be None to disable noise entirely.
    """

    model: str = "geometric"
    n_tx: int = 4
    n_rx: int = 4
    n_scatterers: int = 10
    sim_placement: float = 0.075
    include_direct_path: bool = False
    snr_db: Optional[float] = 10.0
    seed: int = 0
    link_distance: float = 3.0
    rician_k_db: float = 13.0

    def __post_init__(self):
        if self.model not in CHANNEL_MODELS:
            raise ConfigError(f"unknown channel model {self.model!r}, expected one of {CHANNEL_MODELS}")
        if self.n_tx < 1 or self.n_rx < 1:
            raise ConfigError(f"antenna counts must be >= 1, got n_tx={self.n_tx}, n_rx={self.n_rx}")
        if self.model == "geometric" and self.n_scatterers < 1:
            raise ConfigError("geometric model needs at least one scatterer")
        if not (0.0 < self.sim_placement < 1.0):
            raise ConfigError(f"sim_placement must lie in (0, 1), got {self.sim_placement}")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            self.snr_db = None  # +inf sentinel: noise disabled
        if self.link_distance <= 0:
            raise ConfigError(f"link_distance must be positive, got {self.link_distance}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ChannelRealization:
    """Sampled fading matrices for one coherence block (or a batch of them).

    Matrices may carry a leading batch dimension. Segments are None when the
    link has no surface in it (direct-only baseline).
    """

    H_tx_sim: Optional[np.ndarray]
    H_sim_rx: Optional[np.ndarray]
    H_direct: Optional[np.ndarray]
    noise_sigma2: float = 0.0

    def __post_init__(self):
        for name in ("H_tx_sim", "H_sim_rx", "H_direct"):
            mat = getattr(self, name)
            if mat is not None and not np.all(np.isfinite(mat.view(float))):
                raise ConfigError(f"{name} contains non-finite entries")
        if self.noise_sigma2 < 0:
            raise ConfigError(f"noise_sigma2 must be >= 0, got {self.noise_sigma2}")


# ---------------------------------------------------------------------------
# fading primitives
# ---------------------------------------------------------------------------

def steering_vector(n, angles):
    """Unit-norm half-wavelength ULA steering vectors, shape (..., n)."""
    angles = np.asarray(angles, dtype=float)
    k = np.arange(n)
    return np.exp(1j * np.pi * np.sin(angles)[..., None] * k) / np.sqrt(n)


def geometric_from_params(n_rx, n_tx, gains, aoa, aod):
    """Scatterer-sum channel from explicit path gains and angles.

    H = sqrt(n_rx n_tx / L) * sum_l gains[l] a_rx(aoa[l]) a_tx(aod[l])^H,
    broadcast over any leading batch dimensions of the parameter arrays.
    """
    gains = np.asarray(gains, dtype=complex)
    L = gains.shape[-1]
    a_rx = steering_vector(n_rx, aoa)                       # (..., L, n_rx)
    a_tx = steering_vector(n_tx, aod)                       # (..., L, n_tx)
    H = np.einsum("...l,...lr,...lt->...rt", gains, a_rx, np.conj(a_tx))
    return np.sqrt(n_rx * n_tx / L) * H


def geometric_channel(n_rx, n_tx, n_scatterers, rng, batch=None):
    """Random scatterer-sum channel with E[||H||_F^2] = n_rx * n_tx."""
    if n_scatterers < 1:
        raise ConfigError("geometric channel needs at least one scatterer")
    shape = (n_scatterers,) if batch is None else (batch, n_scatterers)
    gains = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    aoa = rng.uniform(-np.pi / 2, np.pi / 2, shape)
    aod = rng.uniform(-np.pi / 2, np.pi / 2, shape)
    return geometric_from_params(n_rx, n_tx, gains, aoa, aod)


def rayleigh_channel(n_rx, n_tx, rng, batch=None):
    """I.i.d. CN(0, 1) entries."""
    shape = (n_rx, n_tx) if batch is None else (batch, n_rx, n_tx)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


# ---------------------------------------------------------------------------
# channel sampling
# ---------------------------------------------------------------------------

class ChannelSampler:
    """Draws ChannelRealization streams for a link, optionally through a stack.

    Owns a private random stream derived from the config seed; realizations
    are immutable once returned. ``pin`` freezes one realization for static
    fading.
    """

    def __init__(self, cfg, stack=None, tx_grid=None):
        self.cfg = cfg
        self.stack = stack
        self.noise_sigma2 = 0.0
        self.rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        self._pinned = None
        self._H_los = None
        if stack is not None and cfg.model == "geometric":
            wavelength = stack.wavelength
            if tx_grid is None:
                tx_grid = ElementGrid(1, cfg.n_tx, pitch=wavelength / 2)
            P = propagation_matrix(tx_grid, stack.layers[0], wavelength)
            e, n = P.shape
            self._H_los = P * np.sqrt(e * n) / np.linalg.norm(P)

    @property
    def has_sim_path(self):
        return self.stack is not None

    def pin(self, rng=None):
        """Sample one realization and reuse it until unpinned (static fading)."""
        self._pinned = None
        self._pinned = self.sample(rng)
        return self._pinned

    def unpin(self):
        self._pinned = None

    def sample(self, rng=None):
        if self._pinned is not None:
            return self._pinned
        return self._draw(rng or self.rng, batch=None)

    def sample_batch(self, batch, rng=None):
        """Independent realization per sample; pinned mode returns the single pin."""
        if self._pinned is not None:
            return self._pinned
        return self._draw(rng or self.rng, batch=batch)

    def _draw(self, rng, batch):
        cfg = self.cfg
        H_tx_sim = H_sim_rx = H_direct = None
        if self.stack is not None:
            e_first = self.stack.layers[0].n_elements
            e_last = self.stack.layers[-1].n_elements
            if cfg.model == "identity":
                H_tx_sim = np.eye(e_first, cfg.n_tx, dtype=complex)
                H_sim_rx = np.eye(cfg.n_rx, e_last, dtype=complex)
            elif cfg.model == "rayleigh":
                H_tx_sim = rayleigh_channel(e_first, cfg.n_tx, rng, batch)
                H_sim_rx = rayleigh_channel(cfg.n_rx, e_last, rng, batch)
            else:
                scatter = geometric_channel(e_first, cfg.n_tx, cfg.n_scatterers, rng, batch)
                k_lin = 10.0 ** (cfg.rician_k_db / 10.0)
                H_tx_sim = (np.sqrt(k_lin / (k_lin + 1.0)) * self._H_los
                            + np.sqrt(1.0 / (k_lin + 1.0)) * scatter)
                H_sim_rx = geometric_channel(cfg.n_rx, e_last, cfg.n_scatterers, rng, batch)
        if cfg.include_direct_path or self.stack is None:
            if cfg.model == "identity":
                H_direct = np.eye(cfg.n_rx, cfg.n_tx, dtype=complex)
            elif cfg.model == "rayleigh":
                H_direct = rayleigh_channel(cfg.n_rx, cfg.n_tx, rng, batch)
            else:
                H_direct = geometric_channel(cfg.n_rx, cfg.n_tx, cfg.n_scatterers, rng, batch)
        return ChannelRealization(H_tx_sim, H_sim_rx, H_direct, self.noise_sigma2)


class FixedSampler:
    """Sampler stand-in that always returns one given direct-path matrix.

    Useful for evaluating a digitally applied linear map through the same
    forward machinery as a sampled channel.
    """

    def __init__(self, H_direct, noise_sigma2=0.0):
        self.H_direct = np.asarray(H_direct, dtype=complex)
        self.noise_sigma2 = float(noise_sigma2)
        self.rng = np.random.default_rng(0)

    def sample(self, rng=None):
        return ChannelRealization(None, None, self.H_direct, self.noise_sigma2)

    def sample_batch(self, batch, rng=None):
        return self.sample()

    def pin(self, rng=None):
        return self.sample()

    def unpin(self):
        pass


def end_to_end_response(realization, T_sim=None):
    """Effective n_rx x n_tx response H_sim_rx . T_sim . H_tx_sim (+ direct).

    ``T_sim`` may be a Tensor (differentiable phases) or a plain matrix;
    the result is a Tensor whenever any input is. Leading batch dimensions
    broadcast.
    """
    if realization.H_tx_sim is None:
        if realization.H_direct is None:
            raise ConfigError("realization has neither a surface path nor a direct path")
        return Tensor(realization.H_direct)
    if T_sim is None:
        raise ConfigError("realization includes a surface path but no transfer matrix was given")
    T_sim = tc.as_tensor(T_sim)
    rx = Tensor(realization.H_sim_rx)
    txs = Tensor(realization.H_tx_sim)
    if rx.shape[-1] != T_sim.shape[-2] or T_sim.shape[-1] != txs.shape[-2]:
        raise tc.ShapeError(
            f"segment/transfer shapes disagree: {rx.shape} x {T_sim.shape} x {txs.shape}")
    H = tc.matmul(tc.matmul(rx, T_sim), txs)
    if realization.H_direct is not None:
        H = tc.add(H, Tensor(realization.H_direct))
    return H


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

def sigma2_from_snr(ref_power, snr_db):
    """Noise power for a target SNR against a reference received signal power."""
    if snr_db is None or math.isinf(snr_db):
        return 0.0
    if ref_power <= 0:
        raise ConfigError(f"ref_power must be positive, got {ref_power}")
    return ref_power * 10.0 ** (-snr_db / 10.0)


def add_noise(y, sigma2, rng):
    """Add CN(0, sigma2) noise per entry; the draw is a constant for gradients."""
    if sigma2 == 0.0:
        return tc.as_tensor(y)
    y = tc.as_tensor(y)
    noise = np.sqrt(sigma2 / 2.0) * (rng.standard_normal(y.shape)
                                     + 1j * rng.standard_normal(y.shape))
    return tc.add(y, Tensor(noise))


def awgn(y, snr_db, ref_power, rng):
    """Additive white Gaussian noise at a target SNR relative to ref_power."""
    return add_noise(y, sigma2_from_snr(ref_power, snr_db), rng)


def reference_power(h_eff, signals):
    """Mean per-antenna received power ||H s||^2 / n_rx over a calibration batch."""
    H = h_eff.data if isinstance(h_eff, Tensor) else np.asarray(h_eff)
    s = signals.data if isinstance(signals, Tensor) else np.asarray(signals)
    y = H @ s
    n_rx = y.shape[-2]
    per_sample = np.sum(np.abs(y) ** 2, axis=(-2, -1)) / n_rx
    return float(np.mean(per_sample))
