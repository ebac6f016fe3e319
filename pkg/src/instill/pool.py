"""Snippet pool construction: tokenization, MinHash/LSH near-dedup,
function validity checks, and benchmark decontamination.

The tokenizer is total: any UTF-8 text tokenizes deterministically. It is a
lexical scanner, not a parser; syntax checking is a heuristic layered on top
(see :func:`validate_function`) and can be swapped via ``syntax_hook``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .records import content_digest, read_jsonl, write_jsonl

# token kinds
ID = "id"
NUM = "num"
STR = "str"
OP = "op"
DELIM = "delim"
INDENT = "indent"
DEDENT = "dedent"


class Token(NamedTuple):
    kind: str
    text: str


class TooShort(ValueError):
    """Token sequence shorter than the shingle width."""


class IncompatibleSignatures(ValueError):
    """Signatures built under different seeds or shingle widths."""


_OPEN = {"(": ")", "[": "]", "{": "}"}
_CLOSE = set(_OPEN.values())
_DELIMS = set("()[]{},:;")
_STRING_PREFIX = set("rbufRBUF")
# longest-match operator table
_OPERATORS = (
    "**=", "//=", "<<=", ">>=", "...",
    "->", ":=", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=",
    "&=", "|=", "^=", "@=", "**", "//", "<<", ">>",
    "+", "-", "*", "/", "%", "@", "&", "|", "^", "~", "<", ">", "=", "!", ".",
)
_TAB_WIDTH = 4


@dataclass
class TokenizeDiagnostics:
    """Facts the scanner observed that the validator needs."""

    indent_consistent: bool = True


def _string_prefix_end(text: str, i: int) -> int | None:
    """If ``text[i:]`` starts a prefixed string literal, index of its quote."""
    j = i
    while j < len(text) and j - i < 2 and text[j] in _STRING_PREFIX:
        j += 1
    if j > i and j < len(text) and text[j] in "\"'":
        return j
    return None


def _scan_string(text: str, i: int) -> int:
    """Return the end index (exclusive) of the string literal starting at i.

    ``text[i]`` must be a quote. Unterminated literals are closed at end of
    input (triple-quoted) or end of line (single-quoted) so scanning is total.
    """
    q = text[i]
    n = len(text)
    if text[i:i + 3] == q * 3:
        j = i + 3
        while j < n:
            if text[j] == "\\":
                j += 2
                continue
            if text[j:j + 3] == q * 3:
                return j + 3
            j += 1
        return n
    j = i + 1
    while j < n:
        c = text[j]
        if c == "\\":
            j += 2
            continue
        if c == q:
            return j + 1
        if c == "\n":
            return j
        j += 1
    return n


def _scan_number(text: str, i: int) -> int:
    n = len(text)
    j = i
    while j < n and (text[j].isalnum() or text[j] in "._"):
        if text[j] in "eE" and j + 1 < n and text[j + 1] in "+-" and j > i:
            j += 2
            continue
        j += 1
    return j


def tokenize_code(text: str) -> list[Token]:
    """Tokenize source text into a deterministic flat token sequence.

    Identifiers, numbers, strings, operators, and structural delimiters are
    distinct kinds; whitespace is dropped but indentation changes emit
    indent/dedent markers. Comments are not tokens.
    """
    tokens, _ = tokenize_with_diagnostics(text)
    return tokens


def tokenize_with_diagnostics(text: str) -> tuple[list[Token], TokenizeDiagnostics]:
    tokens: list[Token] = []
    diag = TokenizeDiagnostics()
    indents = [0]
    depth = 0  # open-bracket depth; newlines inside brackets do not end the line
    i = 0
    n = len(text)
    at_line_start = True
    while i < n:
        if at_line_start and depth == 0:
            j = i
            width = 0
            while j < n and text[j] in " \t":
                width += _TAB_WIDTH if text[j] == "\t" else 1
                j += 1
            if j >= n:
                break
            if text[j] == "\n":
                i = j + 1
                continue
            if text[j] == "#":
                while j < n and text[j] != "\n":
                    j += 1
                i = j + 1 if j < n else j
                continue
            if width > indents[-1]:
                indents.append(width)
                tokens.append(Token(INDENT, ""))
            else:
                while width < indents[-1]:
                    indents.pop()
                    tokens.append(Token(DEDENT, ""))
                if width != indents[-1]:
                    # dedent to a level that was never opened
                    diag.indent_consistent = False
                    indents.append(width)
            i = j
            at_line_start = False
            continue

        ch = text[i]
        if ch == "\n":
            i += 1
            if depth == 0:
                at_line_start = True
            continue
        if ch in " \t\r":
            i += 1
            continue
        if ch == "\\" and i + 1 < n and text[i + 1] == "\n":
            i += 2
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch in "\"'":
            end = _scan_string(text, i)
            tokens.append(Token(STR, text[i:end]))
            i = end
            continue
        prefix_quote = _string_prefix_end(text, i) if ch.isalpha() else None
        if prefix_quote is not None:
            end = _scan_string(text, prefix_quote)
            tokens.append(Token(STR, text[i:end]))
            i = end
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            end = _scan_number(text, i)
            tokens.append(Token(NUM, text[i:end]))
            i = end
            continue
        if ch.isalpha() or ch == "_":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(Token(ID, text[i:j]))
            i = j
            continue
        if ch in _DELIMS:
            if ch in _OPEN:
                depth += 1
            elif ch in _CLOSE:
                depth = max(0, depth - 1)
            tokens.append(Token(DELIM, ch))
            i += 1
            continue
        for op in _OPERATORS:
            if text.startswith(op, i):
                tokens.append(Token(OP, op))
                i += len(op)
                break
        else:
            tokens.append(Token(OP, ch))
            i += 1
    while len(indents) > 1:
        indents.pop()
        tokens.append(Token(DEDENT, ""))
    return tokens, diag


# ---------------------------------------------------------------------------
# snippets
# ---------------------------------------------------------------------------

@dataclass
class CodeSnippet:
    """A candidate seed fragment. ``id`` and ``tokens`` are pure functions
    of ``source_text``; always build via :meth:`from_text`."""

    id: str
    source_text: str
    tokens: list[Token]
    language_tag: str = "python"
    category: int | None = None
    signature: "MinHashSignature | None" = None

    @classmethod
    def from_text(cls, text: str, language_tag: str = "python",
                  category: int | None = None) -> "CodeSnippet":
        return cls(
            id=content_digest(text),
            source_text=text,
            tokens=tokenize_code(text),
            language_tag=language_tag,
            category=category,
        )


def read_snippets(path: str | Path) -> list[CodeSnippet]:
    """Read newline-delimited snippet records {id?, text, language, category?}.

    Ids are always recomputed from the text so the content-hash invariant
    holds regardless of what the file claims.
    """
    out = []
    for rec in read_jsonl(path):
        out.append(CodeSnippet.from_text(
            rec["text"],
            language_tag=rec.get("language", "python"),
            category=rec.get("category"),
        ))
    return out


def write_snippets(path: str | Path, snippets: Iterable[CodeSnippet]) -> None:
    def recs():
        for s in snippets:
            rec = {"id": s.id, "text": s.source_text, "language": s.language_tag}
            if s.category is not None:
                rec["category"] = s.category
            yield rec
    write_jsonl(path, recs())


# ---------------------------------------------------------------------------
# MinHash / LSH
# ---------------------------------------------------------------------------

_MERSENNE_31 = (1 << 31) - 1
_PERM_STREAM = 0x5EED
_SECOND_SEED_SALT = 0x9E3779B97F4A7C15  # dedup's second independent LSH pass


@dataclass(frozen=True)
class MinHashSignature:
    values: tuple[int, ...]
    perm_seed: int
    shingle_size: int


@dataclass(frozen=True)
class DedupConfig:
    perms: int = 128
    bands: int = 32
    rows: int = 4
    jaccard_threshold: float = 0.5
    shingle_size: int = 5
    perm_seed: int = 0

    def __post_init__(self) -> None:
        if self.perms <= 0 or self.bands <= 0 or self.rows <= 0:
            raise ValueError("perms, bands, rows must be positive")
        if self.bands * self.rows != self.perms:
            raise ValueError("bands * rows must equal perms")
        if not 0 < self.jaccard_threshold <= 1:
            raise ValueError("jaccard_threshold must be in (0, 1]")
        if self.shingle_size <= 0:
            raise ValueError("shingle_size must be positive")


def token_shingles(tokens: Sequence[Token], size: int) -> set[tuple[Token, ...]]:
    """The set of token n-grams of the given width."""
    return {tuple(tokens[i:i + size]) for i in range(len(tokens) - size + 1)}


def _shingle_hash(shingle: tuple[Token, ...]) -> int:
    h = hashlib.blake2b(digest_size=8)
    for t in shingle:
        h.update(t.kind.encode())
        h.update(b"\x1f")
        h.update(t.text.encode())
        h.update(b"\x1e")
    return int.from_bytes(h.digest(), "little") % _MERSENNE_31


def _perm_params(seed: int, perms: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.Philox(key=[seed, _PERM_STREAM]))
    a = rng.integers(1, _MERSENNE_31, size=perms, dtype=np.uint64)
    b = rng.integers(0, _MERSENNE_31, size=perms, dtype=np.uint64)
    return a, b


def shingle_signature(tokens: Sequence[Token], cfg: DedupConfig) -> MinHashSignature:
    """MinHash signature over the token n-gram set.

    Each of the ``perms`` hash slots is a Carter-Wegman permutation
    ``(a*x + b) mod (2^31 - 1)`` over 31-bit shingle hashes; the slot value
    is the minimum over all shingles.
    """
    if len(tokens) < cfg.shingle_size:
        raise TooShort(
            f"{len(tokens)} tokens < shingle_size {cfg.shingle_size}")
    hashes = sorted({_shingle_hash(s) for s in token_shingles(tokens, cfg.shingle_size)})
    x = np.asarray(hashes, dtype=np.uint64)
    a, b = _perm_params(cfg.perm_seed, cfg.perms)
    m = (a[:, None] * x[None, :] + b[:, None]) % _MERSENNE_31
    values = tuple(int(v) for v in m.min(axis=1))
    return MinHashSignature(values, cfg.perm_seed, cfg.shingle_size)


def _check_compatible(a: MinHashSignature, b: MinHashSignature) -> None:
    if a.perm_seed != b.perm_seed or a.shingle_size != b.shingle_size:
        raise IncompatibleSignatures(
            f"seed/shingle mismatch: ({a.perm_seed},{a.shingle_size}) vs "
            f"({b.perm_seed},{b.shingle_size})")
    if len(a.values) != len(b.values):
        raise IncompatibleSignatures("permutation counts differ")


def estimate_jaccard(a: MinHashSignature, b: MinHashSignature) -> float:
    """Fraction of matching signature slots; unbiased Jaccard estimate."""
    _check_compatible(a, b)
    eq = sum(1 for x, y in zip(a.values, b.values) if x == y)
    return eq / len(a.values)


def lsh_candidates(signatures: Sequence[MinHashSignature],
                   cfg: DedupConfig) -> set[tuple[int, int]]:
    """Index pairs (i, j), i < j, sharing at least one identical band of
    ``rows`` consecutive signature values."""
    for sig in signatures:
        if sig.perm_seed != cfg.perm_seed or sig.shingle_size != cfg.shingle_size:
            raise IncompatibleSignatures("signature does not match config")
        if len(sig.values) != cfg.perms:
            raise IncompatibleSignatures("signature length does not match config")
    pairs: set[tuple[int, int]] = set()
    for band in range(cfg.bands):
        lo = band * cfg.rows
        buckets: dict[tuple[int, ...], list[int]] = {}
        for idx, sig in enumerate(signatures):
            buckets.setdefault(sig.values[lo:lo + cfg.rows], []).append(idx)
        for members in buckets.values():
            if len(members) > 1:
                for i in range(len(members)):
                    for j in range(i + 1, len(members)):
                        pairs.add((members[i], members[j]))
    return pairs


class RemovalRecord(NamedTuple):
    removed_id: str
    kept_id: str
    estimated_jaccard: float


@dataclass
class DedupResult:
    kept: list[CodeSnippet]
    removed: list[RemovalRecord]


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def dedup_pool(snippets: Sequence[CodeSnippet], cfg: DedupConfig) -> DedupResult:
    """Collapse near-duplicate clusters to one representative each.

    Candidate pairs come from two independent LSH passes (the second under a
    salted permutation seed, lifting recall at the 0.5 threshold); a pair
    counts as duplicate only if the mean of both passes' Jaccard estimates
    reaches the threshold. The cluster representative is the member with the
    lexicographically smallest id.
    """
    if not snippets:
        raise ValueError("snippets must be non-empty")
    cfg2 = replace(cfg, perm_seed=cfg.perm_seed ^ _SECOND_SEED_SALT)
    sigs1 = [shingle_signature(s.tokens, cfg) for s in snippets]
    sigs2 = [shingle_signature(s.tokens, cfg2) for s in snippets]
    candidates = lsh_candidates(sigs1, cfg) | lsh_candidates(sigs2, cfg2)

    edges: dict[tuple[int, int], float] = {}
    uf = _UnionFind(len(snippets))
    for i, j in sorted(candidates):
        est = 0.5 * (estimate_jaccard(sigs1[i], sigs1[j])
                     + estimate_jaccard(sigs2[i], sigs2[j]))
        if est >= cfg.jaccard_threshold:
            edges[(i, j)] = est
            uf.union(i, j)

    clusters: dict[int, list[int]] = {}
    for idx in range(len(snippets)):
        clusters.setdefault(uf.find(idx), []).append(idx)

    removed: list[RemovalRecord] = []
    removed_idx: set[int] = set()
    for members in clusters.values():
        if len(members) == 1:
            continue
        rep = min(members, key=lambda m: (snippets[m].id, m))
        for m in members:
            if m == rep:
                continue
            # report the strongest verified edge that justified the removal
            incident = [(e, pair) for pair, e in edges.items() if m in pair]
            est, _ = max(incident, key=lambda t: (t[0], -min(t[1])))
            removed.append(RemovalRecord(snippets[m].id, snippets[rep].id, est))
            removed_idx.add(m)
    kept = [s for idx, s in enumerate(snippets) if idx not in removed_idx]
    return DedupResult(kept=kept, removed=removed)


# ---------------------------------------------------------------------------
# validity
# ---------------------------------------------------------------------------

@dataclass
class ValidityReport:
    has_return: bool
    syntax_ok: bool
    has_docstring: bool
    blocked_imports: list[str] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return (self.has_return and self.syntax_ok and self.has_docstring
                and not self.blocked_imports)


def _balanced_delimiters(tokens: Sequence[Token]) -> bool:
    stack: list[str] = []
    for t in tokens:
        if t.kind != DELIM:
            continue
        if t.text in _OPEN:
            stack.append(_OPEN[t.text])
        elif t.text in _CLOSE:
            if not stack or stack.pop() != t.text:
                return False
    return not stack


def _function_body_span(tokens: Sequence[Token]) -> tuple[int, int] | None:
    """Token index range of the first def's body, or None."""
    try:
        d = next(i for i, t in enumerate(tokens) if t == Token(ID, "def"))
    except StopIteration:
        return None
    depth = 0
    header_colon = None
    for i in range(d + 1, len(tokens)):
        t = tokens[i]
        if t.kind == DELIM and t.text in _OPEN:
            depth += 1
        elif t.kind == DELIM and t.text in _CLOSE:
            depth -= 1
        elif t.kind == DELIM and t.text == ":" and depth == 0:
            header_colon = i
            break
    if header_colon is None:
        return None
    nxt = header_colon + 1
    if nxt < len(tokens) and tokens[nxt].kind == INDENT:
        level = 0
        for i in range(nxt, len(tokens)):
            if tokens[i].kind == INDENT:
                level += 1
            elif tokens[i].kind == DEDENT:
                level -= 1
                if level == 0:
                    return (nxt + 1, i)
        return (nxt + 1, len(tokens))
    # single-line def: body is the remainder of the stream
    return (nxt, len(tokens))


def _import_roots(tokens: Sequence[Token]) -> list[str]:
    """Root module names appearing in import statements, in order."""
    roots: list[str] = []
    i = 0
    n = len(tokens)
    while i < n:
        t = tokens[i]
        if t == Token(ID, "from"):
            j = i + 1
            while j < n and tokens[j] == Token(OP, "."):
                j += 1
            if j < n and tokens[j].kind == ID and tokens[j].text != "import":
                roots.append(tokens[j].text)
            i = j + 1
            continue
        if t == Token(ID, "import"):
            j = i + 1
            while j < n and tokens[j].kind == ID:
                roots.append(tokens[j].text)
                j += 1
                # skip dotted tail and aliases
                while j < n and (tokens[j] == Token(OP, ".")
                                 or tokens[j].kind in (ID, NUM)):
                    if tokens[j] == Token(ID, "as") and j + 1 < n:
                        j += 2
                        break
                    j += 1
                if j < n and tokens[j] == Token(DELIM, ","):
                    j += 1
                else:
                    break
            i = j
            continue
        i += 1
    return roots


SyntaxHook = Callable[[str], bool]


def validate_function(s: CodeSnippet, blocklist: set[str],
                      syntax_hook: SyntaxHook | None = None) -> ValidityReport:
    """Heuristic validity report for one snippet.

    ``syntax_hook``, when given, replaces the built-in delimiter/indentation
    heuristic with a full checker of the caller's choosing.
    """
    tokens, diag = tokenize_with_diagnostics(s.source_text)
    if syntax_hook is not None:
        syntax_ok = bool(syntax_hook(s.source_text))
    else:
        syntax_ok = diag.indent_consistent and _balanced_delimiters(tokens)

    span = _function_body_span(tokens)
    has_return = False
    has_docstring = False
    if span is not None:
        lo, hi = span
        body = tokens[lo:hi]
        has_return = any(t == Token(ID, "return") for t in body)
        has_docstring = bool(body) and body[0].kind == STR

    seen: list[str] = []
    for root in _import_roots(tokens):
        if root in blocklist and root not in seen:
            seen.append(root)
    return ValidityReport(
        has_return=has_return,
        syntax_ok=syntax_ok,
        has_docstring=has_docstring,
        blocked_imports=seen,
    )


# ---------------------------------------------------------------------------
# decontamination
# ---------------------------------------------------------------------------

def decontaminate(snippets: Sequence[CodeSnippet],
                  benchmark_corpus: Sequence[str],
                  n: int) -> tuple[list[CodeSnippet], list[str]]:
    """Drop snippets sharing any token n-gram with the benchmark corpus."""
    if n < 1:
        raise ValueError("n must be >= 1")
    bench: set[tuple[Token, ...]] = set()
    for text in benchmark_corpus:
        bench |= token_shingles(tokenize_code(text), n)
    kept: list[CodeSnippet] = []
    removed_ids: list[str] = []
    for s in snippets:
        grams = token_shingles(s.tokens, n)
        if grams & bench:
            removed_ids.append(s.id)
        else:
            kept.append(s)
    return kept, removed_ids
