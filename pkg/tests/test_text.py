"""Tokenizer and hashed embedding table."""

from lexjudge.text import HashedEmbedding, fnv1a64, normalize_whitespace, tokenize


class TestTokenize:
    def test_latin_splits_on_whitespace_and_punct(self):
        assert tokenize("The thief; stole 3 phones!") == \
            ["the", "thief", "stole", "3", "phones"]

    def test_cjk_chars_stand_alone(self):
        assert tokenize("被告人盗窃") == ["被", "告", "人", "盗", "窃"]

    def test_mixed_script(self):
        assert tokenize("case 被告 stole") == ["case", "被", "告", "stole"]

    def test_empty_and_punct_only(self):
        assert tokenize("") == []
        assert tokenize("!!! ...") == []


def test_fnv1a64_is_stable():
    # published FNV-1a offset-basis constant
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == fnv1a64(b"a")
    assert fnv1a64(b"a") != fnv1a64(b"b")


def test_normalize_whitespace():
    assert normalize_whitespace("  a\t b\n\nc  ") == "a b c"
    assert normalize_whitespace(" \n ") == ""


class TestHashedEmbedding:
    def test_deterministic_per_seed(self):
        a = HashedEmbedding(64, 8, seed=3)
        b = HashedEmbedding(64, 8, seed=3)
        c = HashedEmbedding(64, 8, seed=4)
        assert a.table == b.table
        assert a.table != c.table

    def test_sparse_init_rows_have_limited_support(self):
        emb = HashedEmbedding(32, 64, seed=0, scale=1.0, init="sparse")
        for r in range(32):
            row = emb.table[r * 64:(r + 1) * 64]
            nonzero = [v for v in row if v != 0.0]
            assert len(nonzero) == 4  # dim // 16
            assert all(0.5 <= v <= 1.0 for v in nonzero)

    def test_ids_for_text_uses_buckets(self):
        emb = HashedEmbedding(16, 4, seed=0)
        ids = emb.ids_for_text("a b a")
        assert len(ids) == 3
        assert ids[0] == ids[2]
        assert all(0 <= i < 16 for i in ids)
