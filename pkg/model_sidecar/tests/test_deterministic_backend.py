from __future__ import annotations

import numpy as np
import pytest

from model_sidecar.deterministic import DeterministicBackend
from model_sidecar.errors import InputError
from model_sidecar.textfeat import embed_sentence, fnv1a64, word_tokens


def _cosine(u, v) -> float:
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


@pytest.fixture(scope="module")
def backend():
    return DeterministicBackend()


class TestTextFeaturizer:
    def test_known_fnv1a_vectors(self):
        # reference values of the 64-bit FNV-1a algorithm
        assert fnv1a64(b"") == 0xCBF29CE484222325
        assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C

    def test_word_tokens_lowercase_and_strip_punctuation(self):
        assert word_tokens("Cut the fins, twice!") == ["cut", "the", "fins", "twice"]

    def test_blank_sentence_is_an_input_error(self):
        with pytest.raises(InputError, match="blank"):
            embed_sentence("  !!  ", 64, "text:test")

    def test_vectors_are_unit_norm(self):
        vector = embed_sentence("Slice the bread.", 768, "text:test")
        assert vector.dtype == np.float32
        assert abs(float(np.linalg.norm(vector.astype(np.float64))) - 1.0) < 1e-6


class TestEmbedText:
    def test_identical_texts_embed_identically(self, backend):
        vectors = backend.embed_text(["Cook Ham", "Cook Ham"], "joint")
        assert np.array_equal(vectors[0], vectors[1])

    def test_noun_swap_task_pair_lands_at_reference_similarity(self, backend):
        ham, lamb = backend.embed_text(["Cook Ham", "Cook Lamb"], "sentence")
        assert 0.81 <= _cosine(ham, lamb) <= 0.91

    def test_spaces_are_not_comparable(self, backend):
        joint = backend.embed_text(["Cook Ham"], "joint")[0]
        sentence = backend.embed_text(["Cook Ham"], "sentence")[0]
        assert not np.array_equal(joint, sentence)

    def test_qa_question_and_answer_share_a_space(self, backend):
        question = backend.embed_text(["Fix a Toilet"], "qa_question")[0]
        answer = backend.embed_text(["Fix a Toilet"], "qa_answer")[0]
        assert np.array_equal(question, answer)

    def test_unknown_space_is_an_input_error(self, backend):
        with pytest.raises(InputError, match="unknown space"):
            backend.embed_text(["x"], "video")

    def test_dimensions_match_advertisement(self, backend):
        vectors = backend.embed_text(["a b"], "joint")
        assert vectors.shape == (1, backend.dims["joint_embed_text"])


class TestMlmFill:
    CRAB = "How to Prepare Crabs? Cut the [MASK] from the crabs using kitchen shears."

    def test_crab_fixture_ranks_shells_in_top_five(self, backend):
        _, candidates = backend.mlm_fill(self.CRAB, 6, 5)
        assert "shells" in [word for word, _ in candidates]

    def test_bare_mask_reports_floor_below_all_candidates(self, backend):
        original_log_prob, candidates = backend.mlm_fill(self.CRAB, 6, 50)
        assert all(original_log_prob < lp for _, lp in candidates)
        assert np.isfinite(original_log_prob)

    def test_real_original_word_scores_within_distribution(self, backend):
        text = "Cut the fins from the crabs using kitchen shears."
        original_log_prob, candidates = backend.mlm_fill(text, 2, 100)
        lookup = dict(candidates)
        assert lookup["fins"] == original_log_prob

    def test_candidates_sorted_and_truncated(self, backend):
        _, candidates = backend.mlm_fill("Put the thing in the oven.", 2, 3)
        assert len(candidates) == 3
        log_probs = [lp for _, lp in candidates]
        assert log_probs == sorted(log_probs, reverse=True)

    def test_contextless_prompt_still_yields_candidates(self, backend):
        _, candidates = backend.mlm_fill("zzz qqq xxx", 1, 10)
        assert len(candidates) == 10

    def test_out_of_range_index_is_an_input_error(self, backend):
        with pytest.raises(InputError, match="out of range"):
            backend.mlm_fill("Cut the fins.", 7, 5)

    def test_nonpositive_top_k_is_an_input_error(self, backend):
        with pytest.raises(InputError, match="top_k"):
            backend.mlm_fill("Cut the fins.", 1, 0)


class TestPosTagger:
    def test_imperative_verb_then_noun(self, backend):
        assert backend.pos_tag(["Bake Chicken"])[0] == [
            ("Bake", "VB"),
            ("Chicken", "NN"),
        ]

    def test_determiner_forces_nominal_reading(self, backend):
        tags = backend.pos_tag(["Use a polish for the guitar."])[0]
        assert tags[1] == ("a", "DT")
        assert tags[2] == ("polish", "NN")

    def test_plural_and_adverb_suffixes(self, backend):
        tags = dict(backend.pos_tag(["Slice donuts carefully"])[0])
        assert tags["donuts"] == "NNS"
        assert tags["carefully"] == "RB"

    def test_one_tag_per_whitespace_word(self, backend):
        text = "Put the ham in the oven."
        assert len(backend.pos_tag([text])[0]) == len(text.split())

    def test_empty_sentence_is_an_input_error(self, backend):
        with pytest.raises(InputError, match="empty"):
            backend.pos_tag([""])


class TestEmbedImage:
    def test_same_identifier_same_vector(self, backend):
        vectors = backend.embed_image(["img/a.jpg", "img/a.jpg"])
        assert np.array_equal(vectors[0], vectors[1])

    def test_local_file_embeds_by_content(self, backend, tmp_path):
        first = tmp_path / "one.png"
        second = tmp_path / "two.png"
        first.write_bytes(b"pixels")
        second.write_bytes(b"pixels")
        vectors = backend.embed_image([str(first), str(second)])
        assert np.array_equal(vectors[0], vectors[1])

    def test_different_content_different_vector(self, backend, tmp_path):
        first = tmp_path / "one.png"
        second = tmp_path / "two.png"
        first.write_bytes(b"pixels")
        second.write_bytes(b"other pixels")
        vectors = backend.embed_image([str(first), str(second)])
        assert not np.array_equal(vectors[0], vectors[1])

    def test_dimension_matches_advertisement(self, backend):
        vectors = backend.embed_image(["img/a.jpg"])
        assert vectors.shape == (1, backend.dims["image_embed"])

    def test_empty_batch_is_an_input_error(self, backend):
        with pytest.raises(InputError, match="non-empty"):
            backend.embed_image([])
