import numpy as np
import pytest
import torch

from talkinghead.audio2coef import (RecurrentMapper, SequenceSample, TrainConfig, continuity, corpus_loss,
                                    finetune, load_mapper, loss, save_mapper, train_general)
from talkinghead.audiofeat import compute_mfcc
from talkinghead.errors import PreconditionError, TrainingDiverged, ValidationError
from talkinghead.pipeline.corpus import CorpusSpec, speech_sequence


def toy_sample(rng, t=20, d=12, d_exp=3):
    return SequenceSample(rng.normal(size=(t, d)), rng.normal(size=(t, d_exp)) * 0.1,
                          rng.normal(size=(t, 6)) * 0.05)


def speech_corpus(n_identities, n_chunks, length=100, seed=0):
    spec = CorpusSpec(seed=seed)
    out = []
    for i in range(n_identities):
        clip, beta, pose = speech_sequence(spec, i, n_chunks * length)
        feats = compute_mfcc(clip).features
        for k in range(n_chunks):
            sl = slice(k * length, (k + 1) * length)
            out.append(SequenceSample(feats[sl], beta[sl], pose[sl]))
    return out


def test_zero_heads_give_zero_output(rng):
    m = RecurrentMapper(12, 3, hidden=8, enc_hidden=16)
    m.zero_heads()
    beta, pose = m.predict(rng.normal(size=(10, 12)))
    assert np.all(beta == 0) and np.all(pose == 0)


def test_predict_deterministic(rng):
    torch.manual_seed(0)
    m = RecurrentMapper(12, 3, hidden=8, enc_hidden=16)
    x = rng.normal(size=(15, 12))
    a, b = m.predict(x), m.predict(x)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert a[0].shape == (15, 3) and a[1].shape == (15, 6)


def test_loss_by_hand_two_frames():
    bp = torch.tensor([[0.0, 1.0], [1.0, 1.0]])
    bg = torch.tensor([[1.0, 1.0], [1.0, 3.0]])
    pp = torch.zeros(2, 6)
    pp[1, 0] = 2.0
    pg = torch.zeros(2, 6)
    # exp MSE (1 + 0 + 0 + 4) / 4; pose MSE 4 / 12; pose continuity 4; exp continuity 1
    expected = 5 / 4 + 0.2 * (4 / 12) + 0.01 * 4 + 0.0001 * 1
    assert loss(bp, pp, bg, pg).item() == pytest.approx(expected, rel=1e-6)


def test_loss_zero_for_equal_constant_sequences():
    b = torch.full((7, 3), 0.3)
    p = torch.full((7, 6), -0.1)
    assert loss(b, p, b.clone(), p.clone()).item() == 0.0
    assert continuity(b).item() == 0.0


def test_loss_shape_mismatch():
    with pytest.raises(ValidationError):
        loss(torch.zeros(3, 2), torch.zeros(3, 6), torch.zeros(3, 3), torch.zeros(3, 6))


def test_causal_in_time(rng):
    torch.manual_seed(1)
    m = RecurrentMapper(12, 3, hidden=8, enc_hidden=16)
    x = rng.normal(size=(20, 12))
    y = x.copy()
    y[12:] += rng.normal(size=(8, 12))
    a, b = m.predict(x), m.predict(y)
    np.testing.assert_array_equal(a[0][:12], b[0][:12])
    np.testing.assert_array_equal(a[1][:12], b[1][:12])
    assert not np.allclose(a[0][12:], b[0][12:])


def test_gradient_matches_finite_differences():
    torch.manual_seed(2)
    m = RecurrentMapper(5, 2, hidden=8, enc_hidden=6).double()
    gen = torch.Generator().manual_seed(3)
    x = torch.randn(3, 5, generator=gen, dtype=torch.float64)
    bg = torch.randn(3, 2, generator=gen, dtype=torch.float64)
    pg = torch.randn(3, 6, generator=gen, dtype=torch.float64)

    def objective():
        bp, pp = m(x)
        return loss(bp, pp, bg, pg)

    m.zero_grad()
    objective().backward()
    eps = 1e-5
    for name, p in m.named_parameters():
        flat, grad = p.data.view(-1), p.grad.view(-1)
        for i in range(0, flat.numel(), max(1, flat.numel() // 7)):
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + eps
                up = objective().item()
                flat[i] = old - eps
                down = objective().item()
                flat[i] = old
            fd = (up - down) / (2 * eps)
            err = abs(fd - grad[i].item()) / max(abs(fd), abs(grad[i].item()), 1e-6)
            assert err < 1e-4, (name, i, fd, grad[i].item())


def test_empty_corpus_rejected():
    with pytest.raises(PreconditionError):
        train_general(RecurrentMapper(12, 3), [])


def test_sample_length_mismatch_rejected(rng):
    with pytest.raises(ValidationError):
        SequenceSample(rng.normal(size=(5, 4)), rng.normal(size=(4, 2)), rng.normal(size=(5, 6)))


def test_nan_features_rejected():
    m = RecurrentMapper(4, 2, hidden=4, enc_hidden=4)
    with pytest.raises(ValidationError):
        m.predict(np.full((3, 4), np.nan))


def test_divergence_restores_last_good_state(rng):
    corpus = [toy_sample(rng)]
    m = RecurrentMapper(12, 3, hidden=8, enc_hidden=16)
    with pytest.raises(TrainingDiverged):
        train_general(m, corpus, TrainConfig(epochs=3, lr=1e30))
    assert all(torch.isfinite(p).all() for p in m.parameters())


def test_training_reduces_loss_on_toy_corpus(rng):
    corpus = [toy_sample(rng) for _ in range(4)]
    m = RecurrentMapper(12, 3, hidden=8, enc_hidden=16)
    m, curve = train_general(m, corpus, TrainConfig(epochs=30, lr=1e-3))
    assert len(curve) == 31 and curve[-1] < curve[0]
    assert curve[-1] == pytest.approx(corpus_loss(m, corpus))


def test_finetune_lowers_pose_error_and_leaves_original():
    corpus = speech_corpus(2, 2)
    torch.manual_seed(0)
    general, _ = train_general(RecurrentMapper(364, 6, hidden=16), corpus, TrainConfig(epochs=5, lr=1e-3))
    target = speech_corpus(3, 1)[-1]
    before = {k: v.clone() for k, v in general.state_dict().items()}

    def pose_err(model):
        return float(np.mean((model.predict(target.audio)[1] - target.pose) ** 2))

    tuned, curve = finetune(general, target, TrainConfig(epochs=40, lr=1e-3))
    assert pose_err(tuned) < pose_err(general)
    assert curve[-1] < curve[0]
    assert all(torch.equal(before[k], v) for k, v in general.state_dict().items())


def test_save_load_round_trip(tmp_path, rng):
    torch.manual_seed(4)
    m = RecurrentMapper(12, 3, hidden=8, enc_hidden=16)
    m.fit_statistics([toy_sample(rng)])
    save_mapper(tmp_path / "m.thc", m)
    back = load_mapper(tmp_path / "m.thc")
    x = rng.normal(size=(9, 12))
    np.testing.assert_allclose(back.predict(x)[0], m.predict(x)[0], rtol=1e-6)
    np.testing.assert_allclose(back.predict(x)[1], m.predict(x)[1], rtol=1e-6)


@pytest.mark.slow
def test_general_training_drops_loss_ninety_percent():
    corpus = speech_corpus(5, 10)
    torch.manual_seed(0)
    _, curve = train_general(RecurrentMapper(364, 6, hidden=32), corpus, TrainConfig(epochs=200, lr=1e-4))
    assert curve[-1] <= 0.1 * curve[0]


@pytest.mark.slow
def test_overfits_single_sequence():
    sample = speech_corpus(1, 1, length=300)[0]
    torch.manual_seed(0)
    m, _ = train_general(RecurrentMapper(364, 6, hidden=32), [sample], TrainConfig(epochs=1000, lr=1e-3))
    beta, _ = m.predict(sample.audio)
    assert np.mean((beta - sample.beta) ** 2) < 1e-3
