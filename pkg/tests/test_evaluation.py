import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uzbert.evaluation import (
    ALL_WORDS,
    AdversarialPredictor,
    CheckpointPredictor,
    EvalConfig,
    EvalSequence,
    EvaluationError,
    OraclePredictor,
    SkipSequence,
    UniformPredictor,
    aggregate_runs,
    format_cell,
    is_table_cell,
    make_eval_sequences,
    predict_topk_wordpiece,
    run_evaluation,
    score_run,
    window_count,
)
from uzbert.model import ModelConfig, init_model
from uzbert.tokenizer import encode_word


def words(n):
    return " ".join(f"w{i}" for i in range(n))


def test_single_full_window():
    for stride in (1, 64, 128):
        seqs = make_eval_sequences(words(128), EvalConfig(stride_words=stride))
        assert len(seqs) == 1 and len(seqs[0].words) == 128


@settings(max_examples=200, deadline=None)
@given(st.integers(128, 1000), st.integers(1, 128), st.integers(0, 4))
def test_window_count_formula(n, stride, run):
    seqs = make_eval_sequences(words(n), EvalConfig(stride_words=stride), run)
    assert len(seqs) == (n - 128) // stride + 1 == window_count(n, 128, stride)
    for s in seqs:
        assert len(s.words) == 128 and 0 <= s.masked_index < 128
        assert s.words[0] == f"w{s.offset}"


def test_short_text_and_bad_config():
    with pytest.raises(EvaluationError):
        make_eval_sequences(words(127), EvalConfig())
    for bad in (dict(stride_words=0), dict(stride_words=129), dict(top_ks=(3, 1)), dict(num_runs=0),
                dict(maskable_policy="some")):
        with pytest.raises(EvaluationError):
            EvalConfig(**bad)


def test_mask_positions_are_keyed_per_window():
    cfg = EvalConfig(stride_words=64)
    short = make_eval_sequences(words(256), cfg, run=2)
    long = make_eval_sequences(words(600), cfg, run=2)
    assert [s.masked_index for s in short] == [s.masked_index for s in long[: len(short)]]
    other_run = make_eval_sequences(words(600), cfg, run=3)
    assert [s.masked_index for s in long] != [s.masked_index for s in other_run]


def test_maskable_filter_restricts_positions():
    seqs = make_eval_sequences(words(300), EvalConfig(stride_words=8), is_maskable=lambda w: w.endswith("7"))
    assert all(s.gold_word.endswith("7") for s in seqs)


def test_fixture_predictors():
    seqs = make_eval_sequences(words(400), EvalConfig(stride_words=3))
    assert score_run(seqs, OraclePredictor(), (1, 3, 5)).accuracy == {1: 100.0, 3: 100.0, 5: 100.0}
    assert score_run(seqs, AdversarialPredictor(), (1, 3, 5)).accuracy == {1: 0.0, 3: 0.0, 5: 0.0}


def test_uniform_predictor_hits_binomial_expectation():
    V = 50
    vocab_words = [f"w{i}" for i in range(V)]
    rng = np.random.default_rng(0)
    seqs = []
    for i in range(10_000):
        window = tuple(rng.choice(vocab_words, size=8))
        seqs.append(EvalSequence(window, int(rng.integers(8)), i))
    acc = score_run(seqs, UniformPredictor(vocab_words, seed=1), (1, 3, 5)).accuracy
    for k in (1, 3, 5):
        p = k / V
        sigma = 100 * np.sqrt(p * (1 - p) / len(seqs))
        assert abs(acc[k] - 100 * p) <= 3 * sigma
    assert acc[1] <= acc[3] <= acc[5]


def test_skips_are_excluded_and_zero_scored_is_an_error():
    class Picky:
        name = "picky"

        def predict(self, w, i, k):
            if w[i].endswith("1"):
                raise SkipSequence
            return [w[i]]

    seqs = [EvalSequence(("w1", "w2"), 0), EvalSequence(("w1", "w2"), 1)]
    score = score_run(seqs, Picky(), (1,))
    assert (score.scored, score.skipped, score.accuracy[1]) == (1, 1, 100.0)
    with pytest.raises(EvaluationError):
        score_run(seqs[:1], Picky(), (1,))


def test_aggregation_by_hand():
    mean, std = aggregate_runs([{1: 64.0}, {1: 65.0}, {1: 63.0}, {1: 64.0}, {1: 64.3}])[1]
    assert mean == pytest.approx(64.06)
    # deviations -0.06, 0.94, -1.06, -0.06, 0.24 -> sum of squares 2.072, /5 = 0.4144
    assert std == pytest.approx(0.4144 ** 0.5)
    assert aggregate_runs([{1: 42.0}])[1] == (42.0, 0.0)
    assert format_cell(64.06, 1.08) == "64.06 (1.08%)"
    assert is_table_cell(format_cell(mean, std)) and is_table_cell("100.00 (0.00%)")
    assert not is_table_cell("64.1 (1.08%)")


def test_report_layout_and_determinism():
    datasets = [("News", words(300)), ("Encyclopedia", words(260))]
    cfg = EvalConfig(stride_words=16, num_runs=3, rng_seed=4)
    preds = [OraclePredictor(), UniformPredictor([f"w{i}" for i in range(20)])]
    report = run_evaluation(datasets, preds, cfg)
    rows = [(c.dataset, c.predictor) for c in report.cells]
    assert rows == [("News", "oracle"), ("News", "uniform"), ("Encyclopedia", "oracle"),
                    ("Encyclopedia", "uniform")]
    for cell in report.cells:
        means = [cell.mean_std[k][0] for k in (1, 3, 5)]
        assert means == sorted(means)
        for run in cell.per_run:
            assert run[1] <= run[3] <= run[5]
    assert report.to_json() == run_evaluation(datasets, preds, cfg).to_json()
    lines = report.to_table().splitlines()
    assert lines[0].split("  ")[0] == "Model" and "Top 5 Match" in lines[0]
    assert lines[2].startswith("oracle") and "100.00 (0.00%)" in lines[2]

    single = run_evaluation(datasets[:1], preds[:1], cfg)
    assert len(single.cells) == 1 and len(single.cells[0].mean_std) == 3


@pytest.fixture(scope="module")
def random_predictor(desk_vocab):
    cfg = ModelConfig(num_layers=1, hidden_size=16, num_heads=2, vocab_size=len(desk_vocab), max_positions=64)
    return CheckpointPredictor(init_model(cfg, 0), desk_vocab)


def _maskable_sequence(pred, desk_docs):
    text = " ".join(d.text for d in desk_docs).split()[:40]
    idx = next(i for i, w in enumerate(text) if pred.is_maskable(w))
    return EvalSequence(tuple(text), idx)


def test_checkpoint_predictor_exhaustive_k(random_predictor, desk_docs, desk_vocab):
    seq = _maskable_sequence(random_predictor, desk_docs)
    everything = random_predictor.predict(seq.words, seq.masked_index, len(desk_vocab))
    assert seq.gold_word in everything
    assert len(everything) == len(set(everything))
    assert not any(w.startswith("##") or w.startswith("[") for w in everything)
    again = predict_topk_wordpiece(random_predictor.state, desk_vocab, seq, 5)
    assert again == random_predictor.predict(seq.words, seq.masked_index, 5) == everything[:5]


def test_checkpoint_predictor_truncates_long_windows(random_predictor, desk_docs):
    text = (" ".join(d.text for d in desk_docs)).split()
    idx = next(i for i in range(60, len(text)) if random_predictor.is_maskable(text[i]))
    ids, _, pos = random_predictor._input_ids(text, idx, 1)
    assert len(ids) == 64 and ids[pos] == 4


def test_pair_layout_input(random_predictor, desk_vocab):
    words_ = ("уй", "боғ", "уй")
    ids, segments, pos = random_predictor._input_ids(words_, 2, 1, pair_break=2)
    n0, n1 = len(encode_word("уй", desk_vocab)), len(encode_word("боғ", desk_vocab))
    assert ids[0] == 2 and ids[-1] == 3 and ids[1 + n0 + n1] == 3
    assert segments == [0] * (n0 + n1 + 2) + [1, 1]
    assert ids[pos] == 4 and pos == n0 + n1 + 2


def test_single_token_policy_skips_multi_piece_gold(random_predictor, desk_docs, desk_vocab):
    lexicon = " ".join(d.text for d in desk_docs).split()
    multi = next(w for w in lexicon if len(encode_word(w, desk_vocab)) > 1)
    with pytest.raises(SkipSequence):
        random_predictor.predict(("бу", multi), 1, 3)
    with pytest.raises(SkipSequence):
        random_predictor.predict(("бу", "ъъъщщщ"), 1, 3)  # [UNK]
    all_words = CheckpointPredictor(random_predictor.state, desk_vocab, maskable_policy=ALL_WORDS)
    guess = all_words.predict(("бу", multi), 1, 3)
    assert len(guess) == 1 and len(encode_word(guess[0], desk_vocab)) >= 1
