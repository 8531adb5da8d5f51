import math

import numpy as np
import pytest

import citerec


@pytest.fixture(scope="module")
def toy():
    syn = citerec.make_synthetic(documents=60, clusters=4, queries=120, dim=8,
                                 words_per_cluster=20, general_words=30, abstract_words=10)
    corpus = syn.corpus()
    vocab = syn.vocabulary()
    queries = {name: corpus.make_queries(syn.split(name)) for name in ("train", "val", "test")}
    return syn, corpus, vocab, queries


HATTEN = {"d": 8, "n_head": 2, "ff_dim": 16, "max_paragraph_tokens": 32, "embedding_dim": 8}
RERANK = {"d": 8, "n_head": 2, "ff_dim": 16, "layers": 1, "max_rerank_tokens": 64, "embedding_dim": 8}


def test_tokenize():
    assert citerec.tokenize("Deep nets, CIT.")[:2] == ["deep", "nets"]


def test_corpus_shapes(toy):
    syn, corpus, vocab, queries = toy
    assert len(corpus) == 60
    assert vocab.dim == 8
    assert sum(len(q) for q in queries.values()) > 0
    q = queries["train"][0]
    assert corpus.paper(q.cited_id).paper_id == q.cited_id


def test_embeddings_are_unit_norm(toy):
    _, corpus, vocab, _ = toy
    model = citerec.HAttenModel(HATTEN, vocab, seed=3)
    rows = model.encode_corpus(corpus)
    assert rows.shape == (60, 8)
    np.testing.assert_allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(rows[0], model.embed_paper(corpus.papers[0]), atol=1e-12)


def test_top_k_matches_numpy(toy, tmp_path):
    _, corpus, vocab, queries = toy
    model = citerec.HAttenModel(HATTEN, vocab, seed=3)
    index = citerec.EmbeddingIndex.build(corpus, model, "seed3")
    q = model.embed_query(queries["test"][0])
    got = index.top_k(q, 5)
    rows = model.encode_corpus(corpus).astype(np.float32).astype(np.float64)
    order = np.argsort(-(rows @ q), kind="stable")[:5]
    assert got.ids() == [index.ids[i] for i in order]

    path = tmp_path / "index.bin"
    index.save(path)
    again = citerec.EmbeddingIndex.load(path)
    assert again.top_k(q, 5).ids() == got.ids()
    assert again.checkpoint_tag == "seed3"


def test_bm25_single_term():
    corpus = citerec.Corpus([citerec.Paper("p1", "alpha beta"), citerec.Paper("p2", "gamma")])
    bm25 = citerec.BM25Index.build(corpus)
    assert bm25.idf("alpha") == pytest.approx(math.log((2 - 1 + 0.5) / (1 + 0.5) + 1), abs=1e-12)
    assert bm25.top_k("alpha", 2).ids() == ["p1", "p2"]


def test_metrics():
    corpus = citerec.Corpus([citerec.Paper(f"p{i}", f"title {i}") for i in range(3)])
    bm25 = citerec.BM25Index.build(corpus)
    ranked = bm25.top_k("title 2", 3)
    assert ranked.rank_of("p2") == 1
    assert citerec.reciprocal_rank(ranked, "p2") == 1.0
    assert citerec.recall_at_k(ranked, "p9", 3) == 0
    assert citerec.triplet_loss(0.3, 0.5, 0.1) == 0.0
    assert citerec.triplet_loss(0.5, 0.3, 0.1) == pytest.approx(0.3, abs=1e-15)


def test_train_and_evaluate(toy, tmp_path):
    _, corpus, vocab, queries = toy
    model = citerec.HAttenModel(HATTEN, vocab, seed=1)
    history = citerec.train_prefetcher(
        model, corpus, queries["train"], queries["val"],
        {"iterations": 20, "N_iter": 10, "K_n": 20, "lr": 1e-3, "batch_size": 8},
        output_dir=tmp_path)
    assert [h["iteration"] for h in history] == [0, 10, 20]
    assert (tmp_path / "metrics.csv").exists()

    index = citerec.EmbeddingIndex.build(corpus, model)
    prefetcher = citerec.HAttenPrefetcher(model, index)
    result = citerec.evaluate_prefetcher(prefetcher, queries["test"], ks=[10], mrr_cutoff=60)
    assert result["query_count"] == len(queries["test"])
    assert 0.0 <= result["recall"][10] <= 1.0

    rows = citerec.evaluate_pipeline(prefetcher, citerec.OracleScorer(), corpus, [10, 20], queries["test"])
    for row in rows:
        assert row["final_recall"] == row["prefetch_recall"]


def test_rerank_and_reranker_training(toy, tmp_path):
    _, corpus, vocab, queries = toy
    bm25 = citerec.BM25Prefetcher(citerec.BM25Index.build(corpus))
    q = queries["test"][0]
    candidates = bm25.prefetch(q, 20)
    top = citerec.rerank(q, candidates, citerec.OracleScorer(), corpus, 5)
    if candidates.rank_of(q.cited_id):
        assert top[0].paper_id == q.cited_id

    ce = citerec.CrossEncoder(RERANK, vocab, seed=2)
    losses = citerec.train_reranker(ce, corpus, queries["train"], bm25,
                                    {"steps": 3, "K_r": 20, "negatives": 4})
    assert len(losses) == 3
    path = tmp_path / "ce.ckpt"
    ce.save(path)
    again = citerec.CrossEncoder.from_checkpoint(path, vocab)
    assert again.score(q, corpus.papers[0]) == ce.score(q, corpus.papers[0])
    scorer = citerec.CrossEncoderScorer(again)
    assert 0.0 <= scorer.score(q, corpus.papers[0]) <= 1.0


def test_errors(toy):
    _, _, vocab, _ = toy
    with pytest.raises(ValueError):
        citerec.Corpus([citerec.Paper("p1", "a"), citerec.Paper("p1", "b")])
    with pytest.raises(Exception):
        citerec.HAttenModel({"d": 7, "n_head": 2, "embedding_dim": 8}, vocab)
