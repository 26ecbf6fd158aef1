"""Stack-response optimization toward arbitrary target matrices.

Used for over-the-air alignment of independently trained encoder/decoder
pairs: a linear map between the two encoding spaces is fitted digitally,
then the stack phases are optimized so that, up to one complex scale, the
masked transfer matrix approximates that map. Accuracy evaluations run the
standard forward machinery, with the scale applied as a digital scalar
equalizer at the receiver.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .tensor import Tensor, backward
from .channel import FixedSampler
from .minn import MinnModel
from .wave import sim_transfer


class AlignmentError(RuntimeError):
    """Alignment fitting failed (rank deficiency or divergence)."""


def fit_linear_map(Z_A, Z_B, ridge=None):
    """Least-squares map M with M Z_A ~= Z_B, via the pseudo-inverse.

    Columns are paired samples. Z_A must have full row rank unless a ridge
    value is supplied as fallback regularization.
    """
    Z_A = np.asarray(Z_A)
    Z_B = np.asarray(Z_B)
    if Z_A.shape[1] != Z_B.shape[1]:
        raise AlignmentError(f"paired encodings disagree: {Z_A.shape[1]} vs {Z_B.shape[1]} columns")
    d_A, n = Z_A.shape
    if n < d_A:
        raise AlignmentError(f"need at least {d_A} paired samples, got {n}")
    if ridge is None:
        rank = np.linalg.matrix_rank(Z_A)
        if rank < d_A:
            raise AlignmentError(
                f"encoding matrix is rank deficient ({rank} < {d_A}); pass ridge= for a fallback")
        return Z_B @ np.linalg.pinv(Z_A)
    gram = Z_A @ Z_A.conj().T + ridge * np.eye(d_A)
    return Z_B @ Z_A.conj().T @ np.linalg.inv(gram)


def optimal_scale(T, M):
    """Closed-form complex beta minimizing ||beta T - M||_F."""
    denom = np.sum(np.abs(T) ** 2)
    if denom == 0:
        return 0.0 + 0.0j
    return complex(np.sum(np.conj(T) * M) / denom)


@dataclass
class ApproxResult:
    phases: list                  # one real vector per layer
    scale: complex                # beta applied on top of the transfer matrix
    rel_error: float              # ||beta T - M||_F / ||M||_F
    history: list                 # rel_error per iteration (non-increasing)


def sim_approximate(M, stack, iters=300, lr=0.05, rng=None):
    """Fit stack phases so beta * T(theta) approximates M on its leading block.

    Gradient descent with a backtracking step, so the error never increases
    between accepted iterates; beta is re-solved in closed form each step
    (treating it as constant in the gradient is exact at the inner optimum).
    The target occupies the leading rows/columns of the transfer matrix; any
    excess stack elements keep propagating unread.
    """
    M = np.asarray(M, dtype=complex)
    d_out, d_in = M.shape
    if stack.layers[0].n_elements < d_in or stack.layers[-1].n_elements < d_out:
        raise AlignmentError(
            f"stack edges {stack.layers[-1].n_elements}x{stack.layers[0].n_elements} "
            f"cannot host a {d_out}x{d_in} target")
    m_norm = np.linalg.norm(M)
    if m_norm == 0:
        # degenerate target: beta = 0 reproduces it exactly
        return ApproxResult([p.data.copy() for p in stack.phases], 0.0 + 0.0j, 0.0, [0.0])
    if rng is not None:
        for p in stack.phases:
            p.data[...] = rng.uniform(0.0, 2.0 * np.pi, p.shape)

    target = Tensor(M)

    def masked_transfer():
        T = sim_transfer(stack)
        if T.shape != M.shape:
            T = tc.getitem(T, (slice(0, d_out), slice(0, d_in)))
        return T

    def eval_only():
        with tc.no_grad():
            T = masked_transfer().data
        beta = optimal_scale(T, M)
        return float(np.sum(np.abs(beta * T - M) ** 2) / m_norm ** 2), beta

    best, beta = eval_only()
    if not np.isfinite(best):
        raise AlignmentError("approximation loss is non-finite at the starting point")
    history = [np.sqrt(best)]
    step = lr
    for _ in range(iters):
        tc.clear_tape()
        T = masked_transfer()
        beta_const = Tensor(optimal_scale(T.data, M))
        # squared relative error: gradient scale is independent of ||M||
        loss = tc.mul(tc.tsum(tc.abs2(tc.sub(tc.mul(T, beta_const), target))), 1.0 / m_norm ** 2)
        for p in stack.phases:
            p.grad = None
        backward(loss)
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in stack.phases]
        saved = [p.data.copy() for p in stack.phases]
        while True:
            for p, g, s0 in zip(stack.phases, grads, saved):
                p.data[...] = s0 - step * g
            trial, beta_try = eval_only()
            if not np.isfinite(trial):
                raise AlignmentError("approximation loss diverged to a non-finite value")
            if trial <= best:
                best, beta = trial, beta_try
                step = min(step * 1.2, 10.0 * lr)
                break
            if step < 1e-12:
                for p, s0 in zip(stack.phases, saved):
                    p.data[...] = s0
                break
            step *= 0.5
        history.append(float(np.sqrt(best)))
    tc.clear_tape()
    return ApproxResult([p.data.copy() for p in stack.phases], beta, history[-1], history)


class ScaledDecoder:
    """Decoder wrapper applying a complex scalar gain at the receiver input."""

    def __init__(self, decoder, scale):
        self.decoder = decoder
        self.scale = complex(scale)

    def __call__(self, y):
        return self.decoder(tc.mul(y, Tensor(self.scale)))

    def params(self):
        return self.decoder.params()


def aligned_accuracy(encoder_a, stack, scale, decoder_b, dataset, channel_cfg,
                     p_max=1.0, rng=None):
    """Accuracy of encoder A through the fitted stack into decoder B.

    Under the identity channel the eye-padded segments read exactly the
    leading block of the transfer matrix, matching the approximation mask.
    """
    model = MinnModel(encoder_a, stack, channel_cfg, ScaledDecoder(decoder_b, scale),
                      power_mode="hard_norm", p_max=p_max)
    from .train import calibrate_noise, evaluate
    rng = rng or np.random.default_rng(0)
    if channel_cfg.snr_db is not None:
        calibrate_noise(model, dataset.features, rng)
    acc, _ = evaluate(model, dataset, rng=rng)
    return acc


def digital_map_accuracy(encoder_a, M, decoder_b, dataset, snr_db=None,
                         p_max=1.0, rng=None):
    """Reference accuracy with the target map applied digitally (no stack)."""
    from .channel import ChannelConfig
    from .train import calibrate_noise, evaluate
    M = np.asarray(M, dtype=complex)
    cfg = ChannelConfig(model="identity", n_tx=M.shape[1], n_rx=M.shape[0], snr_db=snr_db)
    model = MinnModel(encoder_a, None, cfg, decoder_b, power_mode="hard_norm",
                      p_max=p_max, sampler=FixedSampler(M))
    rng = rng or np.random.default_rng(0)
    if snr_db is not None:
        calibrate_noise(model, dataset.features, rng)
    acc, _ = evaluate(model, dataset, rng=rng)
    return acc


def collect_encodings(encoder, features, p_max=1.0, batch_size=512):
    """Stacked normalized transmit encodings as columns, (d, n) complex."""
    from .minn import power_normalize
    cols = []
    with tc.no_grad():
        for start in range(0, features.shape[0], batch_size):
            x = Tensor(features[start:start + batch_size])
            s = power_normalize(encoder(x), p_max)
            cols.append(s.data.reshape(s.shape[0], -1).T)
    return np.concatenate(cols, axis=1)
