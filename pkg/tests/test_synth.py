import numpy as np
import pytest

from convact.output import TAGS
from convact.synth import FORUM_TAG_DISTRIBUTION, ProfileError, SynthProfile, pseudo_word, synth_generate


def token_set(convs):
    return {t for c in convs for s in c.sentences for t in s.tokens}


def test_seeded_generation_is_reproducible():
    prof = SynthProfile(substitution_rate=0.3)
    assert synth_generate(prof, 10, 4) == synth_generate(prof, 10, 4)
    assert synth_generate(prof, 10, 4) != synth_generate(prof, 10, 5)


def test_zero_substitution_shares_vocabulary():
    src, tgt = synth_generate(SynthProfile(substitution_rate=0.0), 60, 1)
    assert token_set(tgt) <= token_set(src) | token_set(tgt)
    assert not any(t.startswith("q") for t in token_set(tgt))
    assert {c.domain for c in src} == {"source"} and {c.domain for c in tgt} == {"target"}


def test_full_substitution_disjoint_vocabulary():
    src, tgt = synth_generate(SynthProfile(substitution_rate=1.0), 20, 1)
    assert not token_set(src) & token_set(tgt)


def test_tag_frequencies_match_profile():
    prof = SynthProfile()
    src, _ = synth_generate(prof, 1000, 0)
    tags = [s.act for c in src for s in c.sentences]
    freq = np.array([tags.count(t) for t in TAGS]) / len(tags)
    target = np.asarray(FORUM_TAG_DISTRIBUTION) / sum(FORUM_TAG_DISTRIBUTION)
    assert np.abs(freq - target).max() < 0.02


def test_shapes_follow_profile_ranges():
    prof = SynthProfile(sentence_length=(2, 2), conversation_length=(5, 5), comment_length=(2, 2))
    src, _ = synth_generate(prof, 5, 2)
    for c in src:
        assert len(c) == 5 and [len(k.sentences) for k in c.comments] == [2, 2, 1]
        assert all(len(s.tokens) == 2 and s.act in TAGS for s in c.sentences)


def test_transition_matrix_is_stochastic_with_right_stationary():
    prof = SynthProfile(persistence=0.4)
    P = prof.transition_matrix()
    np.testing.assert_allclose(P.sum(1), 1.0, atol=1e-15)
    np.testing.assert_allclose(prof.stationary @ P, prof.stationary, atol=1e-15)


@pytest.mark.parametrize("kwargs", [
    dict(tag_distribution=[1, 1]),
    dict(tag_distribution=[-1, 1, 1, 1, 1]),
    dict(substitution_rate=1.5),
    dict(transitions=[[0.5] * 5] * 5),
    dict(sentence_length=(3, 2)),
    dict(vocab_per_tag=0),
])
def test_invalid_profiles(kwargs):
    with pytest.raises(ProfileError):
        SynthProfile(**kwargs)


def test_profile_json_round_trip(tmp_path):
    prof = SynthProfile(substitution_rate=0.25, persistence=0.1)
    path = tmp_path / "p.json"
    path.write_text(prof.to_json())
    assert SynthProfile.load(path) == prof
    with pytest.raises(ProfileError, match="bogus"):
        SynthProfile.from_dict({"bogus": 1})


def test_pseudo_words_unique_and_letter_only():
    words = [pseudo_word(i) for i in range(2000)]
    assert len(set(words)) == len(words)
    assert all(w.isalpha() and "q" not in w for w in words)
