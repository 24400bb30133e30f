import math
from collections import Counter

import pytest
import torch

from conftest import tiny_config, tiny_model
from pginflect.data import (
    BOS_ID,
    EOS_ID,
    UNK_ID,
    InflectionExample,
    Vocabulary,
    encode_source,
)
from pginflect.decoding import (
    UNK_REPLACEMENT,
    Prediction,
    beam_decode,
    ensemble_predict,
    greedy_decode,
    greedy_decode_batch,
    majority_vote,
)
from pginflect.errors import DataError
from pginflect.model import InflectionTransformer, loss_on_examples
from pginflect.training import TrainConfig, train


def pred(form):
    return Prediction(form, "m", 0.0)


class TestMajorityVote:
    def test_unique_majority(self):
        assert majority_vote([pred("a"), pred("b"), pred("a")]) == "a"

    def test_single_prediction(self):
        assert majority_vote([pred("x")]) == "x"

    def test_result_always_in_inputs(self):
        forms = ["aa", "bb", "cc", "aa", "bb"]
        for seed in range(50):
            assert majority_vote([pred(f) for f in forms], seed=seed) in {"aa", "bb"}

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            majority_vote([])

    def test_seed_deterministic(self):
        votes = [pred("a"), pred("b")]
        assert majority_vote(votes, seed=4) == majority_vote(votes, seed=4)

    def test_two_way_tie_near_uniform(self):
        votes = [pred("a"), pred("b")]
        counts = Counter(majority_vote(votes, seed=s) for s in range(10_000))
        assert abs(counts["a"] / 10_000 - 0.5) < 0.02
        assert abs(counts["b"] / 10_000 - 0.5) < 0.02

    def test_three_way_tie_near_uniform(self):
        votes = [pred("a"), pred("b"), pred("c")]
        counts = Counter(majority_vote(votes, seed=s) for s in range(10_000))
        for form in "abc":
            assert abs(counts[form] / 10_000 - 1 / 3) < 0.02


@pytest.fixture(scope="module")
def overfit_model():
    """A tiny model trained to memorize two toy inflections."""
    examples = [
        InflectionExample("hug", "hugged", ("V", "PST")),
        InflectionExample("walk", "walked", ("V", "PST")),
    ]
    cfg = TrainConfig(
        max_epochs=250, batch_size=2, patience=250, learning_rate=3e-3,
        warmup_steps=20, use_multitask=False, use_hallucination=False,
    )
    model_cfg = tiny_config(vocab_size=1, embedding_dim=32, feed_forward_dim=64)
    checkpoints = train(None, examples, examples, model_cfg, cfg)
    best = max(checkpoints, key=lambda c: c.dev_accuracy)
    assert best.dev_accuracy == 1.0, "fixture failed to memorize"
    import tempfile, os

    from pginflect.model import load_model

    with tempfile.NamedTemporaryFile(delete=False) as f:
        f.write(best.payload)
        name = f.name
    try:
        model = load_model(name)
    finally:
        os.unlink(name)
    return model, examples


class TestGreedy:
    def test_memorized_forms(self, overfit_model):
        model, examples = overfit_model
        for ex in examples:
            assert greedy_decode(model, ex).form == ex.form

    def test_batch_matches_single(self, overfit_model):
        model, examples = overfit_model
        batch = greedy_decode_batch(model, examples)
        singles = [greedy_decode(model, ex) for ex in examples]
        assert [p.form for p in batch] == [p.form for p in singles]
        for b, s in zip(batch, singles):
            assert b.score == pytest.approx(s.score, abs=1e-5)

    def test_empty_batch(self, overfit_model):
        model, _ = overfit_model
        assert greedy_decode_batch(model, []) == []

    def test_eos_at_first_step_gives_empty_form(self, overfit_model):
        model, examples = overfit_model

        def eos_first(batch, target_in, p_gen_override=None):
            n, t = target_in.shape
            k = model.config.vocab_size + batch.n_extension
            p = torch.zeros(n, t, k)
            p[..., EOS_ID] = 1.0
            return p, None, None, None

        model = load_copy(model)
        model.distributions = eos_first
        out = greedy_decode(model, examples[0])
        assert out.form == ""
        assert out.score == pytest.approx(0.0)

    def test_length_cap_terminates(self, overfit_model):
        # A model that never emits EOS must still stop at 2*len+10.
        model, examples = overfit_model
        model = load_copy(model)
        never_eos_id = model.vocab.index["g"]

        def no_eos(batch, target_in, p_gen_override=None):
            n, t = target_in.shape
            k = model.config.vocab_size + batch.n_extension
            p = torch.zeros(n, t, k)
            p[..., never_eos_id] = 1.0
            return p, None, None, None

        model.distributions = no_eos
        src_len = len(encode_source(examples[0], model.vocab))
        out = greedy_decode(model, examples[0])
        assert len(out.form) == 2 * src_len + 10

    def test_unk_argmax_renders_placeholder(self, overfit_model):
        model, examples = overfit_model
        model = load_copy(model)

        def unk_then_eos(batch, target_in, p_gen_override=None):
            n, t = target_in.shape
            k = model.config.vocab_size + batch.n_extension
            p = torch.zeros(n, t, k)
            p[..., UNK_ID if t == 1 else EOS_ID] = 1.0
            return p, None, None, None

        model.distributions = unk_then_eos
        out = greedy_decode(model, examples[0])
        assert out.form == UNK_REPLACEMENT == "□"
        assert out.unk_emissions == 1


def load_copy(model):
    """Fresh model instance with the same weights, safe to monkeypatch."""
    clone = InflectionTransformer(model.config, model.vocab)
    clone.load_state_dict(model.state_dict())
    clone.eval()
    return clone


class TestBeam:
    def test_width_zero_rejected(self, overfit_model):
        model, examples = overfit_model
        with pytest.raises(DataError):
            beam_decode(model, examples[0], width=0)

    def test_width_one_equals_greedy(self, overfit_model):
        model, examples = overfit_model
        for ex in examples:
            assert beam_decode(model, ex, width=1).form == greedy_decode(model, ex).form

    def test_wider_beam_never_scores_worse(self, overfit_model):
        model, examples = overfit_model
        for ex in examples:
            assert (
                beam_decode(model, ex, width=5).score
                >= beam_decode(model, ex, width=1).score - 1e-9
            )

    def test_beam_recovers_better_sequence_than_greedy(self, overfit_model):
        # Hand-built distribution where the greedy first step is a trap:
        # "g" has probability 0.6 but every continuation in that branch
        # splits 0.5/0.5, while "h" (0.4) ends with certainty.
        model, examples = overfit_model
        model = load_copy(model)
        g, h = model.vocab.index["g"], model.vocab.index["h"]

        def trap(batch, target_in, p_gen_override=None):
            n, t = target_in.shape
            k = model.config.vocab_size + batch.n_extension
            p = torch.zeros(n, t, k)
            p[:, :-1, EOS_ID] = 1.0  # earlier steps irrelevant here
            last = target_in[0, -1].item()
            if t == 1:  # first step, after BOS
                p[:, -1, g] = 0.6
                p[:, -1, h] = 0.4
            elif last == g:
                p[:, -1, EOS_ID] = 0.5
                p[:, -1, g] = 0.5
            else:
                p[:, -1, EOS_ID] = 1.0
            return p, None, None, None

        model.distributions = trap
        greedy = greedy_decode(model, examples[0])
        beam = beam_decode(model, examples[0], width=3)
        # Greedy takes g, then EOS wins the 0.5/0.5 argmax tie by index.
        assert greedy.form == "g"
        assert greedy.score == pytest.approx(math.log(0.6) + math.log(0.5), abs=1e-6)
        # Normalized scores: "h" = log(0.4)/2 beats "g" = log(0.3)/2 and
        # every longer g-branch sequence.
        assert beam.form == "h"
        assert beam.score == pytest.approx(math.log(0.4) / 2, abs=1e-6)


class TestEnsemble:
    def test_identical_models_match_single(self, overfit_model):
        model, examples = overfit_model
        out = ensemble_predict([model, model, model], examples)
        assert out == [ex.form for ex in examples]

    def test_no_models_rejected(self, overfit_model):
        _, examples = overfit_model
        with pytest.raises(DataError):
            ensemble_predict([], examples)

    def test_deterministic(self, overfit_model):
        model, examples = overfit_model
        a = ensemble_predict([model], examples, seed=1)
        b = ensemble_predict([model], examples, seed=1)
        assert a == b
