import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phgpo.embedding import cosine, encode, fnv1a_64, simhash_bucket, task_context

words = st.text(alphabet="abcdefghij", min_size=1, max_size=6)
texts = st.lists(words, min_size=1, max_size=8).map(" ".join)


def test_fnv1a_reference_vectors():
    # published FNV-1a 64-bit test vectors
    assert fnv1a_64("") == 0xCBF29CE484222325
    assert fnv1a_64("a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64("foobar") == 0x85944171F73967E8


def test_encode_is_deterministic_and_unit():
    a, b = encode("Search the web for flights"), encode("Search the web for flights")
    assert a.tobytes() == b.tobytes()
    assert abs(np.linalg.norm(a) - 1.0) < 1e-9
    assert a.shape == (64,)
    assert np.array_equal(encode("SEARCH web"), encode("search   WEB"))


def test_encode_errors():
    with pytest.raises(ValueError, match="empty task text"):
        encode("   ")
    with pytest.raises(ValueError):
        encode("x", dim=0)


def test_cancelling_tokens_map_to_first_basis_vector():
    # find two tokens sharing a bucket with opposite signs
    dim = 4
    seen = {}
    pair = None
    for n in range(1000):
        tok = f"w{n}"
        h = fnv1a_64(tok)
        key = (h % dim, h >> 63)
        other = (h % dim, 1 - (h >> 63))
        if other in seen:
            pair = (seen[other], tok)
            break
        seen.setdefault(key, tok)
    e = encode(" ".join(pair), dim)
    assert np.array_equal(e, np.eye(dim)[0])


def test_cosine_basics():
    e = encode("a b c")
    assert cosine(e, e) == pytest.approx(1.0)
    assert cosine(np.eye(3)[0], np.eye(3)[1]) == 0.0
    with pytest.raises(ValueError):
        cosine(np.ones(3), np.ones(4))


@settings(max_examples=200, deadline=None)
@given(texts, texts)
def test_cosine_symmetric_bounded(x, y):
    a, b = encode(x), encode(y)
    assert cosine(a, b) == cosine(b, a)
    assert -1.0 <= cosine(a, b) <= 1.0
    assert np.array_equal(encode(x), a)


def jaccard(x, y):
    a, b = set(x.split()), set(y.split())
    return len(a & b) / len(a | b)


def test_overlap_ordering_against_jaccard_oracle():
    rng = np.random.default_rng(0)
    vocab = [f"tok{i}" for i in range(200)]
    base = [" ".join(rng.choice(vocab, 8, replace=False)) for _ in range(20)]
    agree = 0
    for t in base:
        toks = t.split()
        near = " ".join(toks[:6] + list(rng.choice(vocab, 2)))
        far = " ".join(rng.choice([v for v in vocab if v not in toks], 8, replace=False))
        assert jaccard(t, near) > jaccard(t, far)
        agree += cosine(encode(t), encode(near)) > cosine(encode(t), encode(far))
    assert agree == 20


def test_simhash_bucket_range_and_stability():
    for n in (1, 7, 32):
        for s in ("a b", "c d e", "web search"):
            b = simhash_bucket(encode(s), n)
            assert 0 <= b < n
            assert b == simhash_bucket(encode(s), n)
    e, b = task_context("read file then send mail")
    assert b == simhash_bucket(e, 32)
