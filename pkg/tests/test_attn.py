import numpy as np
import pytest

from vocalm.ulm import AttnLM, ContextPolicy, attn_forward, attn_train
from vocalm.ulm.attn import _make_batch
from vocalm.ulm.nn import log_softmax, softmax


def tiny_model(seed=3):
    return AttnLM(vocab_size=5, layers=2, heads=2, embed=8, ffn=12, max_ctx=16, seed=seed)


def generic_point(model, seed=11, scale=0.4):
    """Re-draw parameters at a healthy scale: at the tiny symmetric init the
    attention gradients are degenerate (near machine zero), which makes
    relative FD comparisons meaningless. Norm gains stay near 1 so the
    residual stream keeps its magnitude."""
    rng = np.random.default_rng(seed)
    for k, v in model.params.items():
        if k.endswith(".g"):
            model.params[k] = rng.uniform(0.9, 1.1, size=v.shape)
        else:
            model.params[k] = rng.uniform(-scale, scale, size=v.shape)
    return model


def check_batch(model, rng):
    corpus = [rng.integers(0, model.vocab_size, size=6) for _ in range(3)]
    return _make_batch(corpus, [0, 1, 2], model.bos, model.eos)


class TestGradients:
    def test_directional_fd_per_tensor(self):
        model = generic_point(tiny_model())
        rng = np.random.default_rng(0)
        tokens, targets, valid = check_batch(model, rng)
        cp = ContextPolicy(window=3, keep_first=1)
        _, grads = model.loss_and_grads(tokens, targets, valid, cp)
        h = 1e-6
        for key, g in grads.items():
            p = model.params[key]
            u = rng.normal(size=p.shape)
            u /= np.linalg.norm(u)
            analytic = float((g * u).sum())
            orig = p.copy()
            p += h * u
            lp, _ = model.loss_and_grads(tokens, targets, valid, cp)
            p[...] = orig - h * u
            lm, _ = model.loss_and_grads(tokens, targets, valid, cp)
            p[...] = orig
            fd = (lp - lm) / (2 * h)
            if max(abs(fd), abs(analytic)) < 1e-8:
                continue  # structurally null gradient: both zero
            rel = abs(fd - analytic) / max(abs(fd), abs(analytic))
            assert rel < 1e-4, f"{key}: analytic {analytic} vs FD {fd}"

    def test_elementwise_fd_norm_per_tensor(self):
        model = generic_point(tiny_model())
        rng = np.random.default_rng(1)
        tokens, targets, valid = check_batch(model, rng)
        _, grads = model.loss_and_grads(tokens, targets, valid)
        h = 1e-6
        for key, g in grads.items():
            p = model.params[key]
            flat, gflat = p.reshape(-1), g.reshape(-1)
            idxs = rng.choice(flat.shape[0], size=min(8, flat.shape[0]), replace=False)
            fd = np.empty(idxs.shape[0])
            an = gflat[idxs]
            for pos, i in enumerate(idxs):
                orig = flat[i]
                flat[i] = orig + h
                lp, _ = model.loss_and_grads(tokens, targets, valid)
                flat[i] = orig - h
                lm, _ = model.loss_and_grads(tokens, targets, valid)
                flat[i] = orig
                fd[pos] = (lp - lm) / (2 * h)
            scale_norm = max(np.linalg.norm(fd), np.linalg.norm(an))
            if scale_norm < 1e-8:
                continue  # structurally null gradient (e.g. key bias): both zero
            rel = np.linalg.norm(fd - an) / scale_norm
            assert rel < 1e-4, f"{key}: ||fd-an||/||.|| = {rel}"


class TestCausality:
    def test_future_perturbation_leaves_past_bits_unchanged(self):
        model = generic_point(tiny_model(), seed=5)
        seq = np.array([0, 1, 2, 3, 4, 0, 1])
        base = model.forward_logits(seq)
        for t in range(2, 7):
            perturbed = seq.copy()
            perturbed[t] = (perturbed[t] + 2) % 5
            out = model.forward_logits(perturbed)
            # input position t+1 holds token t (BOS shift); rows before that
            # depend only on earlier tokens and must be bit-identical
            assert np.array_equal(out[: t + 1], base[: t + 1])

    def test_unlimited_policy_equals_window_covering_length(self):
        model = generic_point(tiny_model(), seed=7)
        seq = np.array([3, 1, 4, 1, 0])
        full = model.forward_logits(seq, None)
        wide = model.forward_logits(seq, ContextPolicy(window=len(seq) + 1))
        assert np.max(np.abs(full - wide)) < 1e-6
        assert model.score(seq, ContextPolicy(window=10)) == pytest.approx(model.score(seq), abs=1e-6)

    def test_window_mask_changes_output(self):
        model = generic_point(tiny_model(), seed=9)
        seq = np.array([3, 1, 4, 1, 0, 2, 2, 3])
        full = model.forward_logits(seq)
        narrow = model.forward_logits(seq, ContextPolicy(window=1))
        assert np.max(np.abs(full - narrow)) > 1e-6

    def test_keep_first_reexposes_early_positions(self):
        model = generic_point(tiny_model(), seed=13)
        seq = np.array([3, 1, 4, 1, 0, 2, 2, 3])
        narrow = model.forward_logits(seq, ContextPolicy(window=1))
        kept = model.forward_logits(seq, ContextPolicy(window=1, keep_first=1))
        assert np.max(np.abs(kept - narrow)) > 1e-6


class TestForward:
    def test_fresh_model_near_uniform(self):
        model = tiny_model(seed=21)
        logits = attn_forward(model, np.array([0, 1, 2, 3]))
        probs = softmax(logits)
        uniform = 1.0 / model.n_symbols
        kl = (probs * (np.log(probs) - np.log(uniform))).sum(axis=-1)
        assert np.all(kl < 0.1)

    def test_distributions_sum_to_one(self):
        model = generic_point(tiny_model(), seed=23)
        logits = attn_forward(model, np.array([0, 1, 2]))
        sums = softmax(logits).sum(axis=-1)
        assert np.max(np.abs(sums - 1.0)) < 1e-6

    def test_too_long_rejected(self):
        model = tiny_model()
        with pytest.raises(ValueError, match="max context"):
            attn_forward(model, np.zeros(16, dtype=int))

    def test_out_of_vocab_rejected(self):
        with pytest.raises(ValueError, match="vocab"):
            tiny_model().score([0, 7])


class TestTraining:
    def test_lr_zero_constant_trace(self):
        model = tiny_model(seed=2)
        corpus = [np.array([0, 1, 0, 1])]
        trace = attn_train(model, corpus, steps=5, lr=0.0, batch=1, seed=0)
        assert np.all(trace == trace[0])

    def test_alternating_corpus_converges(self):
        model = AttnLM(vocab_size=2, layers=2, heads=2, embed=32, ffn=64, max_ctx=64, seed=1)
        corpus = [np.array([0, 1] * 16)]
        trace = attn_train(model, corpus, steps=400, lr=3e-3, batch=2, seed=0)
        assert trace[-1] < 0.05

    def test_deterministic(self):
        corpus = [np.array([0, 1, 2, 0, 1, 2])]
        t1 = attn_train(tiny_model(seed=4), corpus, steps=10, lr=1e-3, batch=1, seed=6)
        t2 = attn_train(tiny_model(seed=4), corpus, steps=10, lr=1e-3, batch=1, seed=6)
        assert np.array_equal(t1, t2)

    def test_score_consistent_with_forward(self):
        model = generic_point(tiny_model(), seed=31)
        seq = np.array([1, 4, 2])
        logits = model.forward_logits(seq)
        logp = log_softmax(logits)
        expected = logp[0, 1] + logp[1, 4] + logp[2, 2] + logp[3, model.eos]
        assert model.score(seq) == pytest.approx(float(expected), rel=1e-12)


class TestIO:
    def test_roundtrip(self, tmp_path):
        model = generic_point(tiny_model(), seed=17)
        path = tmp_path / "attn.npz"
        model.save(path)
        back = AttnLM.load(path)
        seq = np.array([0, 2, 4])
        assert back.score(seq) == pytest.approx(model.score(seq), rel=1e-12)
