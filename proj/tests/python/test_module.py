import math

import numpy as np
import pytest

import sentence_lm as slm


def small_corpus(stories=200, dim=8, seed=0):
    cfg = slm.SyntheticConfig()
    cfg.num_stories = stories
    cfg.dim = dim
    cfg.seed = seed
    return slm.make_linear_map_corpus(cfg)


def test_embeddings_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((7, 5)).astype(np.float32)
    m = slm.EmbeddingMatrix(a)
    assert (m.count, m.dim) == (7, 5)
    path = str(tmp_path / "e.slmb")
    slm.write_embeddings(m, path)
    back = slm.read_embeddings(path)
    np.testing.assert_array_equal(back.to_numpy(), a)
    assert (tmp_path / "e.slmb").stat().st_size == 20 + 7 * 5 * 4


def test_bad_files_raise_value_errors(tmp_path):
    p = tmp_path / "junk.slmb"
    p.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(slm.ValidationError):
        slm.read_embeddings(str(p))
    a = np.ones((2, 2), dtype=np.float32)
    a[1, 0] = np.nan
    with pytest.raises(ValueError, match="row 1"):
        slm.EmbeddingMatrix(a).validate()


def test_scores_match_numpy():
    rng = np.random.default_rng(1)
    pool = slm.EmbeddingMatrix(rng.standard_normal((30, 6)).astype(np.float32))
    h = rng.standard_normal(6).astype(np.float32)
    ids = list(range(0, 30, 3))
    r = slm.score_candidates(h, pool, ids)
    logits = pool.to_numpy()[ids].astype(np.float64) @ h.astype(np.float64)
    np.testing.assert_allclose(r["logits"], logits, rtol=1e-12)
    lse = np.log(np.exp(logits - logits.max()).sum()) + logits.max()
    assert math.isclose(r["log_partition"], lse, rel_tol=1e-12)
    assert math.isclose(slm.nll_loss(h, pool, ids[0], ids[1:]), lse - logits[0], rel_tol=1e-9)

    top = slm.topk_scores(h, pool, 5, num_shards=3)
    expected = sorted(range(30), key=lambda i: (-float(pool.to_numpy()[i].astype(np.float64) @ h), i))[:5]
    assert [i for i, _ in top] == expected


def test_model_predict_and_checkpoint(tmp_path):
    emb, index = small_corpus()
    cfg = slm.ModelConfig.resmlp(4, 8)
    cfg.hidden_dim = 16
    model = slm.Model(cfg, seed=3)
    assert model.parameter_count == slm.parameter_count(cfg)
    h = model.predict(emb, [s[:4] for s in index.stories[:3]])
    assert h.shape == (3, 8)
    path = str(tmp_path / "m.slmp")
    model.save(path)
    again = slm.load_model(path)
    assert again.config == cfg
    assert again.serialize() == model.serialize()


def test_train_and_evaluate():
    emb, index = small_corpus(stories=400, dim=8)
    train_idx, held = slm.split_corpus(index, 100)
    mc = slm.ModelConfig.resmlp(4, 8)
    mc.hidden_dim = 32
    mc.dropout_rate = 0.1
    tc = slm.TrainConfig()
    tc.num_distractors = 16
    tc.batch_size = 16
    tc.max_steps = 150
    tc.learning_rate = 1e-3
    tc.eval_every = 50
    tc.seed = 4
    first = slm.train(emb, train_idx, mc, tc)
    second = slm.train(emb, train_idx, mc, tc)
    assert first["steps_run"] == 150
    assert first["model"].serialize() == second["model"].serialize()
    losses = first["step_losses"]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])

    pool = slm.candidate_pool(index, 4)
    report = slm.eval_ranking(first["model"], emb, held, pool, ks=[1, 10, len(pool)])
    assert report.pool_size == len(pool)
    assert report.precision_at(len(pool)) == 1.0
    assert 1.0 / len(pool) <= report.mrr <= 1.0
    assert len(report.ranks) == 100


def test_training_errors_surface():
    emb, index = small_corpus(stories=20, dim=4)
    mc = slm.ModelConfig.mlp(4, 4)
    mc.hidden_dim = 8
    tc = slm.TrainConfig()
    tc.num_distractors = 500
    tc.max_steps = 5
    with pytest.raises(ValueError):
        slm.train(emb, index, mc, tc)
