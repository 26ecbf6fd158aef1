import numpy as np
import pytest

from minnsim.align import (
    AlignmentError, aligned_accuracy, collect_encodings, digital_map_accuracy,
    fit_linear_map, optimal_scale, sim_approximate,
)
from minnsim.channel import ChannelConfig
from minnsim.datasets import Dataset
from minnsim.minn import Decoder, DenseEncoder, MinnModel
from minnsim.train import TrainConfig, evaluate, fit
from minnsim.wave import SimStack, sim_transfer


def rand_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def small_stack(side, n_layers, rng=None):
    return SimStack.uniform(n_layers, side, side, first_layer_origin=(0, 0, 0.2), rng=rng)


# ---------------------------------------------------------------------------
# fit_linear_map
# ---------------------------------------------------------------------------

def test_identity_map_recovered():
    rng = np.random.default_rng(0)
    Z = rand_complex(rng, 4, 20)
    M = fit_linear_map(Z, Z)
    assert np.max(np.abs(M - np.eye(4))) < 1e-10


def test_scaling_map_recovered():
    rng = np.random.default_rng(1)
    Z = rand_complex(rng, 4, 20)
    M = fit_linear_map(Z, 2.0 * Z)
    assert np.max(np.abs(M - 2.0 * np.eye(4))) < 1e-10


def test_residual_matches_normal_equations_solve():
    rng = np.random.default_rng(2)
    Z_A = rand_complex(rng, 5, 40)
    Z_B = rand_complex(rng, 3, 40)
    M = fit_linear_map(Z_A, Z_B)
    # independent normal-equations solution
    M_ne = Z_B @ Z_A.conj().T @ np.linalg.inv(Z_A @ Z_A.conj().T)
    r1 = np.linalg.norm(M @ Z_A - Z_B)
    r2 = np.linalg.norm(M_ne @ Z_A - Z_B)
    assert abs(r1 - r2) < 1e-8
    assert np.max(np.abs(M - M_ne)) < 1e-8


def test_residual_orthogonal_to_row_space():
    rng = np.random.default_rng(3)
    Z_A = rand_complex(rng, 4, 30)
    Z_B = rand_complex(rng, 4, 30)
    M = fit_linear_map(Z_A, Z_B)
    residual = M @ Z_A - Z_B
    assert np.max(np.abs(residual @ Z_A.conj().T)) < 1e-8


def test_rank_deficient_needs_ridge():
    rng = np.random.default_rng(4)
    Z_A = np.zeros((4, 20), dtype=complex)
    Z_A[:2] = rand_complex(rng, 2, 20)
    Z_B = rand_complex(rng, 4, 20)
    with pytest.raises(AlignmentError):
        fit_linear_map(Z_A, Z_B)
    M = fit_linear_map(Z_A, Z_B, ridge=1e-6)
    assert np.all(np.isfinite(M.view(float)))


def test_too_few_samples_rejected():
    rng = np.random.default_rng(5)
    with pytest.raises(AlignmentError):
        fit_linear_map(rand_complex(rng, 6, 4), rand_complex(rng, 6, 4))


# ---------------------------------------------------------------------------
# sim_approximate
# ---------------------------------------------------------------------------

def test_realizable_target_reaches_near_zero_error():
    rng = np.random.default_rng(6)
    stack = small_stack(2, 2, rng=rng)
    theta0 = [p.data.copy() for p in stack.phases]
    M = np.exp(0.9j) * sim_transfer(stack).data
    res = sim_approximate(M, stack, iters=250, lr=0.1, rng=np.random.default_rng(7))
    assert res.rel_error < 1e-3


def test_zero_target_degenerate_convention():
    stack = small_stack(2, 1)
    res = sim_approximate(np.zeros((4, 4)), stack)
    assert res.scale == 0
    assert res.rel_error == 0.0


def test_error_history_non_increasing():
    rng = np.random.default_rng(8)
    stack = small_stack(3, 2, rng=rng)
    M = np.linalg.qr(rand_complex(rng, 9, 9))[0]
    res = sim_approximate(M, stack, iters=120, lr=0.05)
    hist = np.array(res.history)
    assert np.all(np.diff(hist) <= 1e-12)


def test_error_invariant_to_global_phase_of_target():
    rng = np.random.default_rng(9)
    M = np.linalg.qr(rand_complex(rng, 4, 4))[0]
    errs = []
    for phase in (0.0, 1.1):
        stack = small_stack(2, 2)
        res = sim_approximate(np.exp(1j * phase) * M, stack, iters=100, lr=0.08,
                              rng=np.random.default_rng(10))
        errs.append(res.rel_error)
    assert errs[0] == pytest.approx(errs[1], abs=1e-9)


def test_deeper_stack_approximates_no_worse():
    rng = np.random.default_rng(11)
    M = np.linalg.qr(rand_complex(rng, 4, 4))[0]
    errors = {2: [], 4: []}
    for seed in range(3):
        for depth in (2, 4):
            stack = small_stack(3, depth)
            res = sim_approximate(M, stack, iters=150, lr=0.08,
                                  rng=np.random.default_rng(100 + seed))
            errors[depth].append(res.rel_error)
    assert np.mean(errors[4]) <= np.mean(errors[2]) + 1e-6


def test_masking_requires_large_enough_stack():
    stack = small_stack(2, 2)
    with pytest.raises(AlignmentError):
        sim_approximate(np.eye(5), stack)


# ---------------------------------------------------------------------------
# cross-pair alignment end to end
# ---------------------------------------------------------------------------

ENC_DIM = 4


def toy_dataset(seed, n=240, d=8, classes=4):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, n)
    centers = rng.standard_normal((classes, d)) * 2.5
    feats = centers[labels] + 0.4 * rng.standard_normal((n, d))
    return Dataset(feats, labels)


def train_pair(seed, train_ds, test_ds):
    rng = np.random.default_rng(seed)
    enc = DenseEncoder(rng, n_features=8, n_tx=ENC_DIM, hidden=(16,))
    dec = Decoder(rng, n_rx=ENC_DIM, n_classes=4, hidden=(16,))
    cfg = ChannelConfig(model="identity", n_tx=ENC_DIM, n_rx=ENC_DIM, snr_db=None, seed=seed)
    model = MinnModel(enc, None, cfg, dec)
    fit(model, train_ds, test_ds,
        TrainConfig(epochs=20, batch_size=32, learning_rate=2e-2, seed=seed,
                    eval_each_epoch=False))
    acc, _ = evaluate(model, test_ds, rng=np.random.default_rng(0))
    return enc, dec, acc


@pytest.fixture(scope="module")
def trained_pairs():
    train_ds = toy_dataset(50)
    test_ds = toy_dataset(51)
    pair_a = train_pair(201, train_ds, test_ds)
    pair_b = train_pair(202, train_ds, test_ds)
    return train_ds, test_ds, pair_a, pair_b


def test_self_alignment_recovers_native_accuracy(trained_pairs):
    _, test_ds, (enc_a, dec_a, native_a), _ = trained_pairs
    acc = digital_map_accuracy(enc_a, np.eye(ENC_DIM), dec_a, test_ds)
    assert acc == pytest.approx(native_a, abs=1e-12)


def test_cross_pair_alignment_pipeline(trained_pairs):
    train_ds, test_ds, (enc_a, dec_a, native_a), (enc_b, dec_b, native_b) = trained_pairs
    Z_A = collect_encodings(enc_a, train_ds.features)
    Z_B = collect_encodings(enc_b, train_ds.features)
    M = fit_linear_map(Z_A, Z_B)

    unaligned = digital_map_accuracy(enc_a, np.eye(ENC_DIM), dec_b, test_ds)
    digital = digital_map_accuracy(enc_a, M, dec_b, test_ds)
    assert digital >= unaligned

    stack = small_stack(3, 2)
    res = sim_approximate(M, stack, iters=200, lr=0.08, rng=np.random.default_rng(33))
    cfg = ChannelConfig(model="identity", n_tx=ENC_DIM, n_rx=ENC_DIM, snr_db=None)
    ota = aligned_accuracy(enc_a, stack, res.scale, dec_b, test_ds, cfg)
    assert ota >= unaligned
    assert ota >= 0.8 * digital
