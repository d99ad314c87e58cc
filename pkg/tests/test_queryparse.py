import pytest

from slp.errors import QueryParseError
from slp.queryparse import (
    And,
    Not,
    Or,
    Phrase,
    Term,
    format_query,
    parse_query,
    positive_terms,
)
from slp.tokenize import tokenize


class TestTokenize:
    def test_lowercase_and_split(self):
        assert tokenize("Hello, World!") == ["hello", "world"]

    def test_punctuation_splits(self):
        assert tokenize("credit-card refund.") == ["credit", "card", "refund"]

    def test_underscore_splits(self):
        assert tokenize("foo_bar") == ["foo", "bar"]

    def test_digits_kept(self):
        assert tokenize("error 404 page") == ["error", "404", "page"]

    def test_empty(self):
        assert tokenize("...") == []


class TestBagOfWords:
    def test_two_bare_words_are_implicit_or(self):
        assert parse_query("upgrade promo") == Or((Term("upgrade"), Term("promo")))

    def test_single_term(self):
        assert parse_query("refund") == Term("refund")

    def test_terms_lowercased(self):
        assert parse_query("Refund") == Term("refund")

    def test_any_operator_switches_to_and_semantics(self):
        # With an operator anywhere, juxtaposition means AND.
        ast = parse_query("upgrade promo OR deal")
        assert ast == Or((And((Term("upgrade"), Term("promo"))), Term("deal")))

    def test_phrase_alone_is_still_bag_mode(self):
        ast = parse_query('"credit card" refund')
        assert ast == Or((Phrase(("credit", "card")), Term("refund")))


class TestOperators:
    def test_and_with_phrase(self):
        ast = parse_query('refund AND "credit card"')
        assert ast == And((Term("refund"), Phrase(("credit", "card"))))

    def test_not_excludes(self):
        ast = parse_query("refund NOT gift")
        assert ast == And((Term("refund"), Not(Term("gift"))))

    def test_or_chain(self):
        ast = parse_query("a OR b OR c")
        assert ast == Or((Term("a"), Term("b"), Term("c")))

    def test_parens_group(self):
        ast = parse_query("(a OR b) AND c")
        assert ast == And((Or((Term("a"), Term("b"))), Term("c")))

    def test_and_binds_tighter_than_or(self):
        ast = parse_query("a AND b OR c")
        assert ast == Or((And((Term("a"), Term("b"))), Term("c")))

    def test_lowercase_keywords_are_terms(self):
        assert parse_query("fish and chips") == Or(
            (Term("fish"), Term("and"), Term("chips"))
        )


class TestErrors:
    def test_leading_operator_reports_position(self):
        with pytest.raises(QueryParseError) as err:
            parse_query("AND refund")
        assert err.value.position == 0

    def test_dangling_operator(self):
        with pytest.raises(QueryParseError):
            parse_query("refund AND")

    def test_unbalanced_quote(self):
        with pytest.raises(QueryParseError, match="quote"):
            parse_query('refund "credit card')

    def test_unbalanced_paren(self):
        with pytest.raises(QueryParseError, match="paren"):
            parse_query("(refund OR card")

    def test_stray_closing_paren(self):
        with pytest.raises(QueryParseError):
            parse_query("refund )")

    def test_empty_query(self):
        with pytest.raises(QueryParseError, match="empty query"):
            parse_query("   ")

    def test_empty_phrase(self):
        with pytest.raises(QueryParseError, match="empty phrase"):
            parse_query('"..."')

    def test_pure_negation_rejected(self):
        with pytest.raises(QueryParseError, match="positive"):
            parse_query("NOT refund")

    def test_negation_of_group_rejected(self):
        with pytest.raises(QueryParseError, match="positive"):
            parse_query("NOT (refund OR card)")

    def test_double_not_rejected(self):
        with pytest.raises(QueryParseError):
            parse_query("NOT NOT refund")


class TestPositiveTerms:
    def test_phrase_tokens_count_as_terms(self):
        ast = parse_query('refund AND "credit card"')
        assert positive_terms(ast) == ["refund", "credit", "card"]

    def test_negated_terms_excluded(self):
        ast = parse_query("refund NOT gift")
        assert positive_terms(ast) == ["refund"]

    def test_multiset_keeps_repeats(self):
        ast = parse_query("refund refund")
        assert positive_terms(ast) == ["refund", "refund"]


class TestFormat:
    def test_roundtrip_through_format(self):
        for raw in [
            "refund",
            "upgrade promo",
            'refund AND "credit card"',
            "(a OR b) AND c NOT d",
        ]:
            ast = parse_query(raw)
            assert parse_query(format_query(ast)) == ast
