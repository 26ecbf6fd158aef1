"""End-to-end model: digital encoder at TX, programmable channel, digital decoder at RX.

The forward pass composes decoder(noise(H_eff @ encoder(x))) where H_eff is
assembled per realization from the sampled fading segments and the stack's
transfer matrix. An optional controller network maps the observed channel
state to fresh phase vectors every coherence block.
"""

import numpy as np

from . import tensor as tc
from .tensor import Tensor
from .channel import ChannelSampler, add_noise, end_to_end_response
from .layers import MLP, Conv2d, Dense, stack_real_imag
from .wave import sim_transfer

HARD_NORM = "hard_norm"
SOFT_PENALTY = "soft_penalty"


class ConvEncoder:
    """Image features -> complex TX signal (B, n_tx, T).

    Two convolution/pool stages followed by a linear readout whose 2*n_tx*T
    real outputs become the real/imaginary parts of the transmitted signal.
    """

    def __init__(self, rng, input_hw=(28, 28), n_tx=4, n_slots=1,
                 conv_channels=(8, 16), kernel=5):
        self.input_hw = tuple(input_hw)
        self.n_tx = n_tx
        self.n_slots = n_slots
        c_prev, hw = 1, self.input_hw
        self.convs = []
        for c_out in conv_channels:
            self.convs.append(Conv2d(c_prev, c_out, kernel, rng))
            hw = ((hw[0] - kernel + 1) // 2, (hw[1] - kernel + 1) // 2)
            c_prev = c_out
        self.flat_dim = c_prev * hw[0] * hw[1]
        self.head = Dense(self.flat_dim, 2 * n_tx * n_slots, rng)

    def __call__(self, x):
        b = x.shape[0]
        h, w = self.input_hw
        if x.shape[1:] not in ((h, w), (h * w,)):
            raise tc.ShapeError(f"encoder expects {self.input_hw} images, got {x.shape[1:]}")
        z = tc.reshape(x, (b, 1, h, w))
        for conv in self.convs:
            z = tc.avg_pool2(tc.relu(conv(z)))
        out = self.head(tc.reshape(z, (b, self.flat_dim)))
        re_part = tc.reshape(tc.getitem(out, (slice(None), slice(0, self.n_tx * self.n_slots))),
                             (b, self.n_tx, self.n_slots))
        im_part = tc.reshape(tc.getitem(out, (slice(None), slice(self.n_tx * self.n_slots, None))),
                             (b, self.n_tx, self.n_slots))
        return tc.to_complex(re_part, im_part)

    def params(self):
        return [p for c in self.convs for p in c.params()] + self.head.params()


class DenseEncoder:
    """Flat features -> complex TX signal (B, n_tx, T) through an MLP trunk."""

    def __init__(self, rng, n_features, n_tx, n_slots=1, hidden=(64,)):
        self.n_features = n_features
        self.n_tx = n_tx
        self.n_slots = n_slots
        self.net = MLP(n_features, hidden, 2 * n_tx * n_slots, rng)

    def __call__(self, x):
        b = x.shape[0]
        if x.shape[1:] != (self.n_features,):
            raise tc.ShapeError(f"encoder expects {self.n_features} features, got {x.shape[1:]}")
        out = self.net(x)
        n = self.n_tx * self.n_slots
        re_part = tc.reshape(tc.getitem(out, (slice(None), slice(0, n))), (b, self.n_tx, self.n_slots))
        im_part = tc.reshape(tc.getitem(out, (slice(None), slice(n, None))), (b, self.n_tx, self.n_slots))
        return tc.to_complex(re_part, im_part)

    def params(self):
        return self.net.params()


class Decoder:
    """Received complex signal (B, n_rx, T) -> class logits via stacked re/im parts."""

    def __init__(self, rng, n_rx, n_classes, n_slots=1, hidden=(128, 64)):
        self.n_rx = n_rx
        self.n_slots = n_slots
        self.net = MLP(2 * n_rx * n_slots, hidden, n_classes, rng)

    def __call__(self, y):
        return self.net(stack_real_imag(y))

    def params(self):
        return self.net.params()


class PhaseController:
    """Maps the observed channel state to all stack phase vectors."""

    def __init__(self, rng, obs_dim, stack, hidden=(128,)):
        self.obs_dim = obs_dim
        self.layer_sizes = [g.n_elements for g in stack.layers]
        self.net = MLP(obs_dim, hidden, sum(self.layer_sizes), rng)

    def __call__(self, obs):
        if obs.shape[-1] != self.obs_dim:
            raise tc.ShapeError(f"controller expects {self.obs_dim} observations, got {obs.shape[-1]}")
        flat = self.net(obs)
        out, off = [], 0
        for n in self.layer_sizes:
            sl = (slice(None), slice(off, off + n)) if flat.ndim == 2 else slice(off, off + n)
            out.append(tc.getitem(flat, sl))
            off += n
        return out

    def params(self):
        return self.net.params()


def controller_observation(realization):
    """Flattened re/im of the uncontrolled end-to-end response (transfer = identity)."""
    if realization.H_tx_sim is None:
        H = realization.H_direct
    else:
        H = realization.H_sim_rx @ realization.H_tx_sim
        if realization.H_direct is not None:
            H = H + realization.H_direct
    flat = H.reshape(H.shape[0], -1) if H.ndim == 3 else H.reshape(-1)
    return Tensor(np.concatenate([flat.real, flat.imag], axis=-1))


def power_normalize(s, p_max):
    """Scale each sample of (B, n_tx, T) to exactly p_max energy; zeros pass through."""
    if p_max <= 0:
        raise ValueError(f"p_max must be positive, got {p_max}")
    energy = tc.tsum(tc.abs2(s), axis=(-2, -1), keepdims=True)
    zero = (energy.data == 0).astype(float)
    factor = tc.sqrt(tc.div(Tensor(p_max * (1.0 - zero)), tc.add(energy, Tensor(zero))))
    return tc.mul(s, tc.add(factor, Tensor(zero)))


class MinnModel:
    """Encoder / programmable channel / decoder composite.

    Args:
        encoder, decoder: digital modules.
        stack: SimStack carrying the trainable phases, or None for a
            direct-only link.
        channel_cfg: ChannelConfig; a sampler is built from it.
        power_mode: "hard_norm" (signals scaled to p_max exactly) or
            "soft_penalty" (signals sent as-is; power is regularized in the
            training loss).
        controller: optional PhaseController for dynamic responses.
    """

    def __init__(self, encoder, stack, channel_cfg, decoder,
                 power_mode=HARD_NORM, p_max=1.0, controller=None, sampler=None):
        if power_mode not in (HARD_NORM, SOFT_PENALTY):
            raise ValueError(f"unknown power mode {power_mode!r}")
        self.encoder = encoder
        self.stack = stack
        self.channel_cfg = channel_cfg
        self.decoder = decoder
        self.power_mode = power_mode
        self.p_max = float(p_max)
        self.controller = controller
        self.sampler = sampler or ChannelSampler(channel_cfg, stack)
        if stack is not None and channel_cfg.model != "identity":
            first, last = stack.layers[0].n_elements, stack.layers[-1].n_elements
            probe = self.sampler.sample_batch(1)
            if probe.H_tx_sim.shape[-2] != first or probe.H_sim_rx.shape[-1] != last:
                raise tc.ShapeError("stack layer sizes disagree with channel segments")
            self.sampler.rng = np.random.default_rng(np.random.SeedSequence(channel_cfg.seed))

    def transmit(self, x):
        s = self.encoder(x)
        if self.power_mode == HARD_NORM:
            s = power_normalize(s, self.p_max)
        return s

    def transfer(self, realization):
        if self.stack is None:
            return None
        if self.controller is not None:
            return sim_transfer(self.stack, self.controller(controller_observation(realization)))
        return sim_transfer(self.stack)

    def params(self):
        out = self.encoder.params() + self.decoder.params()
        if self.stack is not None and self.controller is None:
            out += self.stack.phases
        if self.controller is not None:
            out += self.controller.params()
        return out

    def named_params(self):
        names = {}
        for i, p in enumerate(self.encoder.params()):
            names[f"encoder.{i}"] = p
        for i, p in enumerate(self.decoder.params()):
            names[f"decoder.{i}"] = p
        if self.stack is not None:
            for i, p in enumerate(self.stack.phases):
                names[f"phases.{i}"] = p
        if self.controller is not None:
            for i, p in enumerate(self.controller.params()):
                names[f"controller.{i}"] = p
        return names


def minn_forward(x, model, realization, rng=None, return_signal=False):
    """Logits of the full encoder -> channel -> decoder composition.

    Noise is drawn from ``rng`` at the realization's noise power; pass
    rng=None to run noise-free. With a controller present the stack phases
    are produced from the realization before the transfer matrix is formed.
    """
    x = tc.as_tensor(x)
    s = model.transmit(x)
    H = end_to_end_response(realization, model.transfer(realization))
    y = tc.matmul(H, s)
    if rng is not None and realization.noise_sigma2 > 0:
        y = add_noise(y, realization.noise_sigma2, rng)
    logits = model.decoder(y)
    if return_signal:
        return logits, s
    return logits
