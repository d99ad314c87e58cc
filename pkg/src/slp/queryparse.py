"""Boolean keyword-query parser.

Grammar (operators are the uppercase keywords AND, OR, NOT):

    expr  := or
    or    := and ('OR' and)*
    and   := unary (('AND')? unary)*
    unary := 'NOT'? atom
    atom  := PHRASE | TERM | '(' expr ')'

Quoted strings become phrases (strict consecutive match); bare words are
fuzzy terms.  When a query contains no boolean operator at all it is treated
as a bag of words: top-level juxtaposition means OR, so `upgrade promo`
matches either word.  As soon as any operator appears, juxtaposition means
AND.  Every query must keep at least one positive (non-negated) leaf.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import QueryParseError
from .tokenize import tokenize


class QueryNode:
    """Base class for parsed query AST nodes."""

    __slots__ = ()


@dataclass(frozen=True)
class Term(QueryNode):
    token: str


@dataclass(frozen=True)
class Phrase(QueryNode):
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class And(QueryNode):
    children: tuple[QueryNode, ...]


@dataclass(frozen=True)
class Or(QueryNode):
    children: tuple[QueryNode, ...]


@dataclass(frozen=True)
class Not(QueryNode):
    child: QueryNode


_KEYWORDS = {"AND", "OR", "NOT"}


@dataclass(frozen=True)
class _Lexeme:
    kind: str  # TERM | PHRASE | AND | OR | NOT | LPAREN | RPAREN
    value: str
    position: int


def _lex(raw: str) -> list[_Lexeme]:
    out: list[_Lexeme] = []
    i, n = 0, len(raw)
    while i < n:
        ch = raw[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "(":
            out.append(_Lexeme("LPAREN", ch, i))
            i += 1
        elif ch == ")":
            out.append(_Lexeme("RPAREN", ch, i))
            i += 1
        elif ch == '"':
            close = raw.find('"', i + 1)
            if close < 0:
                raise QueryParseError("unbalanced quote", i)
            inner = raw[i + 1 : close]
            if not tokenize(inner):
                raise QueryParseError("empty phrase", i)
            out.append(_Lexeme("PHRASE", inner, i))
            i = close + 1
        else:
            j = i
            while j < n and not raw[j].isspace() and raw[j] not in '()"':
                j += 1
            word = raw[i:j]
            if word in _KEYWORDS:
                out.append(_Lexeme(word, word, i))
            else:
                # Punctuation inside a bare word splits it into several terms
                # via the shared tokenizer ("credit-card" -> credit, card).
                for tok in tokenize(word):
                    out.append(_Lexeme("TERM", tok, i))
            i = j
    return out


class _Parser:
    def __init__(self, lexemes: list[_Lexeme], raw_len: int, bag_of_words: bool):
        self.lexemes = lexemes
        self.pos = 0
        self.raw_len = raw_len
        self.bag_of_words = bag_of_words

    def peek(self) -> _Lexeme | None:
        return self.lexemes[self.pos] if self.pos < len(self.lexemes) else None

    def take(self) -> _Lexeme:
        lex = self.lexemes[self.pos]
        self.pos += 1
        return lex

    def expr(self, depth: int) -> QueryNode:
        return self.parse_or(depth)

    def parse_or(self, depth: int) -> QueryNode:
        children = [self.parse_and(depth)]
        while (lex := self.peek()) is not None and lex.kind == "OR":
            self.take()
            children.append(self.parse_and(depth))
        return children[0] if len(children) == 1 else Or(tuple(children))

    def parse_and(self, depth: int) -> QueryNode:
        children = [self.parse_unary(depth)]
        while (lex := self.peek()) is not None:
            if lex.kind == "AND":
                self.take()
                children.append(self.parse_unary(depth))
            elif lex.kind in {"TERM", "PHRASE", "LPAREN", "NOT"}:
                children.append(self.parse_unary(depth))
            else:
                break
        if len(children) == 1:
            return children[0]
        # Bag-of-words mode: adjacency at the top level reads as OR.
        if self.bag_of_words and depth == 0:
            return Or(tuple(children))
        return And(tuple(children))

    def parse_unary(self, depth: int) -> QueryNode:
        lex = self.peek()
        if lex is not None and lex.kind == "NOT":
            self.take()
            return Not(self.parse_atom(depth))
        return self.parse_atom(depth)

    def parse_atom(self, depth: int) -> QueryNode:
        lex = self.peek()
        if lex is None:
            raise QueryParseError("unexpected end of query", self.raw_len)
        if lex.kind == "TERM":
            self.take()
            return Term(lex.value)
        if lex.kind == "PHRASE":
            self.take()
            return Phrase(tuple(tokenize(lex.value)))
        if lex.kind == "LPAREN":
            self.take()
            node = self.expr(depth + 1)
            closing = self.peek()
            if closing is None or closing.kind != "RPAREN":
                raise QueryParseError("unbalanced parenthesis", lex.position)
            self.take()
            return node
        raise QueryParseError(f"unexpected {lex.value!r}", lex.position)


def has_positive_leaf(node: QueryNode) -> bool:
    """True when some Term/Phrase is reachable without crossing a Not."""
    if isinstance(node, (Term, Phrase)):
        return True
    if isinstance(node, Not):
        return False
    if isinstance(node, (And, Or)):
        return any(has_positive_leaf(c) for c in node.children)
    raise TypeError(f"unknown node {node!r}")


def positive_terms(node: QueryNode) -> list[str]:
    """Scorable tokens: every Term/Phrase token not under a Not, as a multiset."""
    if isinstance(node, Term):
        return [node.token]
    if isinstance(node, Phrase):
        return list(node.tokens)
    if isinstance(node, Not):
        return []
    out: list[str] = []
    for child in node.children:
        out.extend(positive_terms(child))
    return out


def parse_query(raw: str) -> QueryNode:
    """Parse raw query text into an AST, or raise QueryParseError."""
    lexemes = _lex(raw)
    if not lexemes:
        raise QueryParseError("empty query", 0)
    bag_of_words = not any(lex.kind in _KEYWORDS for lex in lexemes)
    parser = _Parser(lexemes, len(raw), bag_of_words)
    node = parser.expr(0)
    trailing = parser.peek()
    if trailing is not None:
        raise QueryParseError(f"unexpected {trailing.value!r}", trailing.position)
    if not has_positive_leaf(node):
        raise QueryParseError("query needs at least one positive term", 0)
    return node


def format_query(node: QueryNode) -> str:
    """Render an AST back to canonical query text (for logs and UIs)."""
    if isinstance(node, Term):
        return node.token
    if isinstance(node, Phrase):
        return '"' + " ".join(node.tokens) + '"'
    if isinstance(node, Not):
        return "NOT " + format_query(node.child)
    joiner = " AND " if isinstance(node, And) else " OR "
    parts = []
    for child in node.children:
        text = format_query(child)
        if isinstance(child, (And, Or)):
            text = f"({text})"
        parts.append(text)
    return joiner.join(parts)
