import json
import math

import numpy as np
import pytest
import torch

from cmvfuse.config import TrainConfig
from cmvfuse.contrastive import ContrastiveConfig
from cmvfuse.data import load_dataset, synthetic_corpus, write_dataset
from cmvfuse.embeddings import EmbeddingSource, KgSource, stub_matrix, stub_value
from cmvfuse.exceptions import ConfigurationError, DatasetError, NumericError
from cmvfuse.metrics import EvalReport
from cmvfuse.model import CMVFuseModel, ce_loss, classify_aspect, total_loss
from cmvfuse.training import (
    evaluate,
    load_checkpoint,
    save_checkpoint,
    shuffle_order,
    train,
)

from oracles import oracle_metrics


def T(a):
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


def _record(**over):
    rec = {"tokens": ["a", "b", "c"], "aspect_span": [0, 1], "label": "positive",
           "dep_edges": [[0, 1, "amod"]], "amr_edges": [], "constituents": []}
    rec.update(over)
    return json.dumps(rec)


class TestLoadDataset:
    def test_valid_file_in_order(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text("\n".join(_record(label=l) for l in ("positive", "neutral", "negative")) + "\n")
        assert [e.label for e in load_dataset(p)] == ["positive", "neutral", "negative"]

    def test_empty_span_rejected(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text(_record() + "\n" + _record(aspect_span=[2, 2]) + "\n")
        with pytest.raises(DatasetError) as info:
            load_dataset(p)
        assert [e.line for e in info.value.errors] == [2]

    def test_out_of_range_dep_edge_names_line_and_field(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text(_record() + "\n" + _record() + "\n" + _record(dep_edges=[[0, 3, "x"]]) + "\n")
        with pytest.raises(DatasetError) as info:
            load_dataset(p)
        err = info.value.errors[0]
        assert err.line == 3 and err.field == "dep_edges"
        assert "line 3" in str(info.value)

    def test_malformed_json_and_length_limit(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text("{not json\n" + _record(tokens=["w"] * 6) + "\n")
        with pytest.raises(DatasetError) as info:
            load_dataset(p, max_length=5)
        assert [e.line for e in info.value.errors] == [1, 2]

    def test_round_trip(self, tmp_path, corpus):
        write_dataset(tmp_path / "c.jsonl", corpus)
        assert load_dataset(tmp_path / "c.jsonl") == corpus


class TestHeadAndLosses:
    def test_single_token_aspect(self, rng):
        h, w, b = T(rng.normal(size=(4, 3))), T(rng.normal(size=(3, 3))), T(rng.normal(size=3))
        torch.testing.assert_close(classify_aspect(h, (2, 3), w, b), torch.softmax(h[2] @ w + b, -1))

    def test_mean_and_first_pooling(self, rng):
        h, w, b = T(rng.normal(size=(4, 3))), T(rng.normal(size=(3, 3))), T(np.zeros(3))
        torch.testing.assert_close(classify_aspect(h, (1, 3), w, b),
                                   torch.softmax(h[1:3].mean(0) @ w, -1))
        torch.testing.assert_close(classify_aspect(h, (1, 3), w, b, "first"),
                                   torch.softmax(h[1] @ w, -1))

    def test_zero_weights_uniform(self, rng):
        p = classify_aspect(T(rng.normal(size=(3, 5))), (0, 2), T(np.zeros((5, 3))), T(np.zeros(3)))
        np.testing.assert_allclose(p.numpy(), 1 / 3)

    def test_probabilities_sum_to_one(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 8))
            start = int(rng.integers(n))
            p = classify_aspect(T(rng.normal(size=(n, 6)) * 5), (start, n),
                                T(rng.normal(size=(6, 3))), T(rng.normal(size=3)))
            assert abs(float(p.sum()) - 1) < 1e-6

    def test_ce_uniform_perfect_and_mean(self):
        assert float(ce_loss(T(np.full((4, 3), 1 / 3)), [0, 1, 2, 0])) == pytest.approx(math.log(3))
        assert float(ce_loss(T(np.eye(3)), [0, 1, 2])) <= 1e-10
        probs = T([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]])
        a, b = -math.log(0.7), -math.log(0.8)
        assert float(ce_loss(probs, [0, 2])) == pytest.approx((a + b) / 2)

    def test_ce_floor(self):
        assert float(ce_loss(T([[1.0, 0.0, 0.0]]), [1])) == pytest.approx(-math.log(1e-12))

    def test_total_loss(self):
        assert float(total_loss(T(1.0986), 0.55)) == pytest.approx(1.6486)

    def test_disabled_scl_total_equals_ce(self, gc_setup):
        model, prepared = gc_setup
        model.config = model.config.replace(losses=())
        parts = model.batch_loss(prepared)
        assert float(parts.total) == float(parts.ce)


class TestMetrics:
    def test_hand_confusion(self):
        r = EvalReport.from_confusion([[5, 0, 0], [0, 0, 5], [0, 0, 5]])
        assert r.accuracy == pytest.approx(10 / 15)
        np.testing.assert_allclose(r.f1, [1.0, 0.0, 2 / 3])
        assert r.macro_f1 == pytest.approx(0.5556, abs=1e-4)

    def test_perfect(self):
        r = EvalReport.from_predictions([0, 1, 2, 2], [0, 1, 2, 2])
        assert r.accuracy == 1.0 and r.macro_f1 == 1.0

    def test_against_scalar_oracle(self, rng):
        for _ in range(100):
            cm = rng.integers(0, 6, size=(3, 3))
            cm[rng.random((3, 3)) < 0.3] = 0
            acc, f1s, macro = oracle_metrics(cm.tolist())
            r = EvalReport.from_confusion(cm)
            assert r.accuracy == pytest.approx(acc, abs=1e-12)
            np.testing.assert_allclose(r.f1, f1s, atol=1e-12)
            assert r.macro_f1 == pytest.approx(macro, abs=1e-12)

    def test_text_and_json(self):
        r = EvalReport.from_confusion([[1, 0, 0], [0, 1, 0], [1, 0, 1]], loss=0.5)
        json.dumps(r.to_dict())
        assert "macro_f1" in r.to_text() and "negative" in r.to_text()


class TestEmbeddings:
    def test_stub_is_seeded_and_bounded(self):
        m = stub_matrix(0, "ex", 5, 7)
        assert m.shape == (5, 7) and np.abs(m).max() <= 0.1
        np.testing.assert_array_equal(m, stub_matrix(0, "ex", 5, 7))
        assert not np.array_equal(m, stub_matrix(1, "ex", 5, 7))
        assert m[3, 4] == stub_value(0, "ex", 3, 4)

    def test_stub_hash_definition(self):
        import hashlib
        digest = hashlib.blake2b(b"0|ex|3|4", digest_size=8).digest()
        expected = -0.1 + 0.2 * int.from_bytes(digest, "little") / (2 ** 64 - 1)
        assert stub_value(0, "ex", 3, 4) == pytest.approx(expected, abs=1e-15)

    def test_missing_kg_rows_zero(self, corpus, caplog):
        kg = KgSource(4, {})
        assert not kg(corpus[0], 0).any()

    def test_dimension_guard(self, corpus):
        model = CMVFuseModel(TrainConfig(hidden_dim=8, head_count=2, kg_dim=6))
        with pytest.raises(ConfigurationError):
            model.prepare(corpus[:1], EmbeddingSource(16), KgSource(6))


class TestTraining:
    def test_shuffle_is_pure(self):
        np.testing.assert_array_equal(shuffle_order(30, 5, 3), shuffle_order(30, 5, 3))
        assert sorted(shuffle_order(30, 5, 3)) == list(range(30))
        assert not np.array_equal(shuffle_order(30, 5, 3), shuffle_order(30, 5, 4))

    def test_zero_learning_rate_is_no_op(self, corpus, tiny_config):
        config = tiny_config.replace(learning_rate=0.0, epochs=3)
        before = CMVFuseModel(config).store.state_dict()
        result = train(config, corpus[:8], corpus[8:12])
        after = result.store.state_dict()
        assert all(np.array_equal(before[k], after[k]) for k in before)
        ces = [r.train_ce for r in result.log]
        assert max(ces) - min(ces) < 1e-6

    def test_same_seed_same_log(self, corpus, tiny_config):
        a = train(tiny_config, corpus[:12], corpus[12:18])
        b = train(tiny_config, corpus[:12], corpus[12:18])
        assert [r.to_dict() for r in a.log] == [r.to_dict() for r in b.log]

    def test_zero_lambdas_match_no_contrastive(self, corpus, tiny_config):
        zero = tiny_config.replace(contrastive=ContrastiveConfig(0.2, 10, 0.0, 0.0, 0.0))
        off = tiny_config.replace(losses=())
        a = train(zero, corpus[:12], corpus[12:18])
        b = train(off, corpus[:12], corpus[12:18])
        for x, y in zip(a.log, b.log):
            assert abs(x.train_loss - y.train_loss) <= 1e-9

    def test_best_epoch_restored(self, corpus, tiny_config):
        seen = []
        result = train(tiny_config.replace(epochs=4), corpus[:12], corpus[12:18],
                       on_epoch=lambda r: seen.append(r))
        best = max(seen, key=lambda r: (r.dev.accuracy, -r.dev.loss))
        assert result.best_epoch == best.epoch
        assert evaluate(result.model, corpus[12:18]).accuracy == best.dev.accuracy

    def test_non_finite_loss_aborts(self, corpus, tiny_config, monkeypatch):
        import cmvfuse.model as model_mod
        monkeypatch.setattr(model_mod, "total_loss", lambda ce, s: ce * float("nan"))
        with pytest.raises(NumericError) as info:
            train(tiny_config, corpus[:4], corpus[4:6])
        assert "components" in info.value.diagnostics

    def test_empty_sets_rejected(self, corpus, tiny_config):
        with pytest.raises(ConfigurationError):
            train(tiny_config, [], corpus[:2])


class TestEvaluate:
    def test_order_invariance(self, corpus, tiny_config):
        model = CMVFuseModel(tiny_config)
        a = evaluate(model, corpus[:10])
        b = evaluate(model, corpus[:10][::-1])
        assert a.confusion == b.confusion and a.accuracy == b.accuracy

    def test_checkpoint_round_trip(self, corpus, tiny_config, tmp_path):
        result = train(tiny_config, corpus[:8], corpus[8:12])
        path = tmp_path / "m.npz"
        save_checkpoint(path, result.model)
        restored = load_checkpoint(path)
        assert evaluate(restored, corpus[:12]).to_dict() == evaluate(result.model, corpus[:12]).to_dict()
        with np.load(path) as data:
            assert "param/classifier.W" in data.files

    def test_checkpoint_shape_mismatch(self, tiny_config, tmp_path):
        path = tmp_path / "m.npz"
        save_checkpoint(path, CMVFuseModel(tiny_config))
        with pytest.raises(ConfigurationError, match="shape"):
            load_checkpoint(path, tiny_config.replace(hidden_dim=16))


def test_synthetic_corpus_planted_rule():
    from cmvfuse.data import OPINIONS
    corpus = synthetic_corpus(30, 0)
    assert len(corpus) == 30 and corpus == synthetic_corpus(30, 0)
    polarity = {w: lab for lab, words in OPINIONS.items() for w in words}
    crossed = 0
    for ex in corpus:
        aspect = ex.aspect_span[0]
        linked = [s if t == aspect else t for s, rel, t in ex.amr_edges
                  if rel.startswith(":ARG1") and aspect in (s, t)]
        assert len(linked) == 1
        assert polarity[ex.tokens[linked[0]]] == ex.label
        # the dependency parse pairs the aspect with the opinion in its own clause
        dep_opinion = 3 if aspect == 1 else 8
        crossed += linked[0] != dep_opinion
    assert 0 < crossed < 30
