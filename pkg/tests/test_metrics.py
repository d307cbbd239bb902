import json
import math
import random

import pytest

from ragcap.errors import IngestError, RagcapError
from ragcap.metrics import (
    bleu,
    cider_d,
    evaluate_run,
    load_references,
    ngram_counts,
    rouge_l,
    rouge_l_corpus,
    tokenize,
)

from cider_oracle import cider_d_reference
from conftest import write_jsonl

VOCAB = ["a", "the", "dog", "cat", "red", "boat", "runs", "park", "on", "mat", "two"]


def random_corpus(rng, max_instances=10, max_refs=5, max_tokens=15):
    instances = rng.randint(1, max_instances)
    hyps = []
    refs = []
    for _ in range(instances):
        hyps.append(rng.choices(VOCAB, k=rng.randint(1, max_tokens)))
        refs.append(
            [rng.choices(VOCAB, k=rng.randint(1, max_tokens))
             for _ in range(rng.randint(1, max_refs))]
        )
    return hyps, refs


class TestTokenize:
    def test_period_split(self):
        assert tokenize("A dog.") == ["a", "dog", "."]

    def test_empty(self):
        assert tokenize("") == []

    def test_whitespace_split(self):
        assert tokenize("hello hello") == ["hello", "hello"]

    def test_punctuation_variants(self):
        assert tokenize('He said: "go!"') == ["he", "said", ":", '"', "go", "!", '"']

    def test_cjk_per_codepoint(self):
        assert tokenize("一只猫") == ["一", "只", "猫"]
        assert tokenize("ねこ cat") == ["ね", "こ", "cat"]

    def test_apostrophes_kept(self):
        assert tokenize("don't stop") == ["don't", "stop"]

    def test_idempotent_on_joined_output(self):
        rng = random.Random(3)
        samples = [
            "A dog. Runs, fast!",
            "一只猫 on the mat?",
            'quote "inside" [brackets] (parens)',
            "MiXeD CaSe; and:colons",
        ]
        samples += [" ".join(rng.choices(VOCAB + [".", ",", "猫"], k=8)) for _ in range(20)]
        for text in samples:
            tokens = tokenize(text)
            assert tokenize(" ".join(tokens)) == tokens

    def test_no_empty_tokens(self):
        for text in ["  .  ", "..!!", "a  b", "　wide　space"]:
            for token in tokenize(text):
                assert token
                assert not any(ch.isspace() for ch in token)


class TestNgrams:
    def test_counts_and_totals(self):
        tokens = ["a", "b", "a", "b"]
        counts = ngram_counts(tokens, 2)
        assert counts[("a", "b")] == 2
        assert counts[("b", "a")] == 1
        assert sum(counts.values()) == len(tokens) - 2 + 1

    def test_n_longer_than_sequence(self):
        assert ngram_counts(["a"], 3) == {}


class TestBleu:
    def test_identical_is_one(self):
        hyp = tokenize("a dog runs in the park")
        assert bleu([hyp], [[hyp]], max_n=4) == pytest.approx(1.0, abs=1e-12)

    def test_no_unigram_overlap_is_zero(self):
        assert bleu([["dog"]], [[["cat"]]], max_n=1) == 0.0

    def test_two_instance_hand_computed_fixture(self):
        # Instance 1: hyp "the cat sat on a mat" (6 tokens)
        #   ref A "the cat sat on the mat" (6), ref B "a cat is on a mat" (6)
        # Instance 2: hyp "dogs run very quick" (4)
        #   ref "the dogs run very fast" (5)
        hyps = [
            ["the", "cat", "sat", "on", "a", "mat"],
            ["dogs", "run", "very", "quick"],
        ]
        refs = [
            [
                ["the", "cat", "sat", "on", "the", "mat"],
                ["a", "cat", "is", "on", "a", "mat"],
            ],
            [["the", "dogs", "run", "very", "fast"]],
        ]
        # Hand-derived clipped counts:
        #   1-grams: (6 + 3) / (6 + 4); 2-grams: (5 + 2) / (5 + 3)
        #   3-grams: (3 + 1) / (4 + 2); 4-grams: (1 + 0) / (3 + 1)
        # Hypothesis length 10, closest reference lengths 6 + 5 = 11.
        p1, p2, p3, p4 = 9 / 10, 7 / 8, 4 / 6, 1 / 4
        brevity = math.exp(1 - 11 / 10)
        assert bleu(hyps, refs, max_n=1) == pytest.approx(brevity * p1, abs=1e-9)
        expected4 = brevity * (p1 * p2 * p3 * p4) ** 0.25
        assert bleu(hyps, refs, max_n=4) == pytest.approx(expected4, abs=1e-9)

    def test_brevity_penalty_only_when_shorter(self):
        hyp = ["a", "dog", "runs", "far", "today"]
        ref = ["a", "dog", "runs"]
        assert bleu([hyp], [[ref]], max_n=1) == pytest.approx(3 / 5, abs=1e-12)

    def test_reference_duplication_invariant(self):
        hyps = [["a", "dog", "runs"]]
        refs = [[["a", "dog", "sits"], ["the", "dog", "runs"]]]
        duplicated = [[refs[0][0], refs[0][0], refs[0][1]]]
        for n in (1, 4):
            assert bleu(hyps, refs, max_n=n) == bleu(hyps, duplicated, max_n=n)

    def test_instance_permutation_invariant(self):
        rng = random.Random(5)
        hyps, refs = random_corpus(rng)
        order = list(range(len(hyps)))
        rng.shuffle(order)
        shuffled_h = [hyps[i] for i in order]
        shuffled_r = [refs[i] for i in order]
        for n in (1, 4):
            assert bleu(hyps, refs, max_n=n) == pytest.approx(
                bleu(shuffled_h, shuffled_r, max_n=n), abs=1e-12
            )
        assert rouge_l_corpus(hyps, refs) == pytest.approx(
            rouge_l_corpus(shuffled_h, shuffled_r), abs=1e-12
        )
        _, cider_mean = cider_d(hyps, refs)
        _, cider_shuffled = cider_d(shuffled_h, shuffled_r)
        assert cider_mean == pytest.approx(cider_shuffled, abs=1e-9)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            bleu([["a"]], [], max_n=1)

    def test_missing_reference_rejected(self):
        with pytest.raises(ValueError):
            bleu([["a"]], [[]], max_n=1)


class TestRougeL:
    def test_identical_is_one(self):
        tokens = tokenize("the cat sat on the mat")
        assert rouge_l(tokens, [tokens]) == pytest.approx(1.0, abs=1e-12)

    def test_spec_fixture_value(self):
        hyp = ["the", "cat", "sat"]
        ref = ["the", "cat", "on", "the", "mat"]
        precision, recall, beta = 2 / 3, 2 / 5, 1.2
        expected = (1 + beta**2) * precision * recall / (recall + beta**2 * precision)
        score = rouge_l(hyp, [ref])
        assert score == pytest.approx(expected, abs=1e-12)
        assert score == pytest.approx(0.4784, abs=1e-4)

    def test_disjoint_is_zero(self):
        assert rouge_l(["a", "b"], [["c", "d"]]) == 0.0

    def test_empty_hypothesis_is_zero(self):
        assert rouge_l([], [["a"]]) == 0.0

    def test_max_over_references(self):
        hyp = ["a", "dog"]
        weak = ["a", "cat"]
        strong = ["a", "dog"]
        assert rouge_l(hyp, [weak, strong]) == pytest.approx(1.0, abs=1e-12)

    def test_reference_duplication_invariant(self):
        hyp = ["a", "dog", "runs"]
        refs = [["a", "dog", "sits"], ["the", "dog", "runs"]]
        assert rouge_l(hyp, refs) == rouge_l(hyp, refs + [refs[0]])

    def test_corpus_mean(self):
        hyps = [["a"], ["b"]]
        refs = [[["a"]], [["c"]]]
        assert rouge_l_corpus(hyps, refs) == pytest.approx(0.5, abs=1e-12)


class TestCiderD:
    def test_single_document_corpus_is_zero(self):
        # df equals the corpus size for every gram, so idf annihilates
        tokens = tokenize("a dog runs in the park")
        _, mean = cider_d([tokens], [[tokens]])
        assert mean == 0.0

    def test_zero_overlap_is_zero(self):
        hyps = [["a", "b"], ["x", "y"]]
        refs = [[["c", "d"]], [["e", "f"]]]
        per_instance, mean = cider_d(hyps, refs)
        assert per_instance == [0.0, 0.0]
        assert mean == 0.0

    def test_three_instance_fixture_matches_oracle(self):
        hyps = [
            tokenize("a dog runs across the field"),
            tokenize("two boats on the lake"),
            tokenize("a cat sleeps on a mat"),
        ]
        refs = [
            [tokenize("a dog runs in a grassy field"), tokenize("the dog runs outside")],
            [tokenize("two red boats float on a lake"), tokenize("boats on calm water")],
            [tokenize("a cat sleeps on the mat"), tokenize("a sleeping cat")],
        ]
        per_instance, mean = cider_d(hyps, refs)
        oracle_scores, oracle_mean = cider_d_reference(hyps, refs)
        for got, want in zip(per_instance, oracle_scores):
            assert got == pytest.approx(want, abs=1e-6)
        assert mean == pytest.approx(oracle_mean, abs=1e-6)
        assert mean > 0.0

    def test_randomized_corpora_match_oracle(self):
        rng = random.Random(11)
        for _ in range(30):
            hyps, refs = random_corpus(rng)
            per_instance, mean = cider_d(hyps, refs)
            oracle_scores, oracle_mean = cider_d_reference(hyps, refs)
            for got, want in zip(per_instance, oracle_scores):
                assert got == pytest.approx(want, abs=1e-6)
            assert mean == pytest.approx(oracle_mean, abs=1e-6)

    def test_reference_duplication_changes_score(self):
        hyps = [["a", "dog", "runs"], ["two", "boats"]]
        refs = [[["a", "dog", "runs"], ["the", "cat", "sits"]], [["two", "boats"]]]
        duplicated = [[refs[0][0], refs[0][0], refs[0][1]], refs[1]]
        _, base = cider_d(hyps, refs)
        _, dup = cider_d(hyps, duplicated)
        assert base != pytest.approx(dup, abs=1e-9)

    def test_appended_instance_changes_scores_only_via_df(self):
        rng = random.Random(13)
        hyps, refs = random_corpus(rng, max_instances=5)
        extra_hyp = ["zzz"]
        extra_refs = [["zzz", "qqq"]]
        grown_scores, _ = cider_d(hyps + [extra_hyp], refs + [extra_refs])
        oracle_scores, _ = cider_d_reference(hyps + [extra_hyp], refs + [extra_refs])
        for got, want in zip(grown_scores, oracle_scores):
            assert got == pytest.approx(want, abs=1e-6)

    def test_scores_bounded_by_ten(self):
        rng = random.Random(17)
        for _ in range(10):
            hyps, refs = random_corpus(rng)
            per_instance, mean = cider_d(hyps, refs)
            assert all(0.0 <= s <= 10.0 + 1e-9 for s in per_instance)
            assert 0.0 <= mean <= 10.0 + 1e-9

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            cider_d([], [], corpus=[])

    def test_explicit_corpus_for_df(self):
        hyps = [["a", "dog"]]
        refs = [[["a", "dog"]]]
        bigger_corpus = refs + [[["the", "cat"]]]
        _, self_df = cider_d(hyps, refs)
        _, wider_df = cider_d(hyps, refs, corpus=bigger_corpus)
        assert self_df == 0.0
        assert wider_df > 0.0


class TestEvaluateRun:
    def make_run(self, tmp_path, predictions, references):
        pred_path = write_jsonl(tmp_path / "preds.jsonl", predictions)
        ref_path = tmp_path / "refs.json"
        ref_path.write_text(json.dumps(references), encoding="utf-8")
        return pred_path, ref_path

    def test_predictions_equal_first_references(self, tmp_path):
        references = {
            "img1": ["a dog runs across the field", "a dog outside in the grass"],
            "img2": ["two boats float on the lake", "boats on calm water"],
            "img3": ["a red kite in the sky", "kite flying above the beach"],
        }
        predictions = [{"id": k, "chosen": v[0]} for k, v in references.items()]
        pred_path, ref_path = self.make_run(tmp_path, predictions, references)
        report = evaluate_run(pred_path, ref_path, "en")
        assert report.bleu1 == pytest.approx(1.0, abs=1e-12)
        assert report.bleu4 == pytest.approx(1.0, abs=1e-12)
        assert report.rougeL == pytest.approx(1.0, abs=1e-12)
        assert report.count == 3
        assert len(report.per_instance_ciderD) == 3

    def test_manifest_line_skipped(self, tmp_path):
        references = {"img1": ["a dog"]}
        records = [{"manifest": {"tool_version": "x"}}, {"id": "img1", "chosen": "a dog"}]
        pred_path, ref_path = self.make_run(tmp_path, records, references)
        report = evaluate_run(pred_path, ref_path, "en")
        assert report.count == 1

    def test_missing_reference_names_id(self, tmp_path):
        predictions = [{"id": "ghost", "chosen": "a dog"}]
        pred_path, ref_path = self.make_run(tmp_path, predictions, {"img1": ["a dog"]})
        with pytest.raises(RagcapError, match="ghost"):
            evaluate_run(pred_path, ref_path, "en")

    def test_empty_predictions_rejected(self, tmp_path):
        pred_path = tmp_path / "empty.jsonl"
        pred_path.write_text("", encoding="utf-8")
        ref_path = tmp_path / "refs.json"
        ref_path.write_text("{}", encoding="utf-8")
        with pytest.raises(IngestError, match="no predictions"):
            evaluate_run(pred_path, ref_path, "en")

    def test_report_bounds_and_shape(self, tmp_path):
        references = {
            "a": ["a dog runs across the field", "the dog is outside"],
            "b": ["two boats on a lake"],
        }
        predictions = [
            {"id": "a", "chosen": "a dog runs outside"},
            {"id": "b", "chosen": "boats on the lake"},
        ]
        pred_path, ref_path = self.make_run(tmp_path, predictions, references)
        report = evaluate_run(pred_path, ref_path, "en")
        data = report.to_json_dict()
        assert list(data.keys()) == [
            "language", "count", "bleu1", "bleu4", "rougeL", "ciderD",
            "per_instance_ciderD",
        ]
        assert 0.0 <= report.bleu1 <= 1.0
        assert 0.0 <= report.bleu4 <= 1.0
        assert 0.0 <= report.rougeL <= 1.0
        assert 0.0 <= report.ciderD <= 10.0

    def test_coco_reference_conversion(self, tmp_path):
        coco = {
            "annotations": [
                {"image_id": 7, "caption": "a dog"},
                {"image_id": 7, "caption": "a brown dog"},
                {"image_id": 8, "caption": "a cat"},
            ]
        }
        path = tmp_path / "coco.json"
        path.write_text(json.dumps(coco), encoding="utf-8")
        refs = load_references(path)
        assert refs == {"7": ["a dog", "a brown dog"], "8": ["a cat"]}
