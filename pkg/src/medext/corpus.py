"""Corpus data model and tooling.

Covers the BIO tag algebra, two-column tag-file I/O with a JSON-lines
annotation sidecar, greedy-longest-match subword tokenization, a seeded
synthetic corpus generator, and the two augmentation transforms (synonym
substitution and entity masking).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import ContractError, ParseError, ValidationError

DEFAULT_CLASSES = ("Specific", "Composite", "Modifier", "Undetermined")
RELATION_LABELS = ("no-relation", "treats", "causes")
NO_RELATION = "no-relation"

PAD, UNK, MASK, ENT_MASK = 0, 1, 2, 3
RESERVED_ENTRIES = ("[PAD]", "[UNK]", "[MASK]", "[ENT-MASK]")

SPLITS = ("train", "val", "test")
# train/val/test fractions, mirroring a 5064/787/1030 style partition
SPLIT_FRACTIONS = (0.72, 0.11, 0.17)


@dataclass
class Token:
    surface: str
    subword_ids: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class EntitySpan:
    start: int  # token index, inclusive
    end: int  # token index, inclusive
    cls: str


@dataclass(frozen=True)
class RelationInstance:
    head: int  # index into the sentence's span list
    tail: int
    label: str


@dataclass
class Sentence:
    tokens: list[Token]
    tags: list[int]
    spans: list[EntitySpan] = field(default_factory=list)
    relations: list[RelationInstance] = field(default_factory=list)

    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)


class TagScheme:
    """BIO tag inventory over an ordered list of entity classes.

    Tag indices: O = 0, then B-c = 1 + 2i and I-c = 2 + 2i for class i, so
    K = 2 * len(classes) + 1.
    """

    def __init__(self, classes: Sequence[str] = DEFAULT_CLASSES):
        if len(set(classes)) != len(classes) or not classes:
            raise ContractError(f"classes must be nonempty and unique, got {classes!r}")
        self.classes = list(classes)
        self.tags = ["O"]
        for cls in self.classes:
            self.tags.append(f"B-{cls}")
            self.tags.append(f"I-{cls}")
        self._index = {name: i for i, name in enumerate(self.tags)}

    @property
    def num_tags(self) -> int:
        return len(self.tags)

    def tag_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ParseError(f"unknown tag {name!r}") from None

    def tag_name(self, index: int) -> str:
        return self.tags[index]

    def begin_index(self, cls: str) -> int:
        return self.tag_index(f"B-{cls}")

    def inside_index(self, cls: str) -> int:
        return self.tag_index(f"I-{cls}")

    def kind(self, index: int) -> tuple[str, str | None]:
        """Split a tag index into ("O"|"B"|"I", class name or None)."""
        if index == 0:
            return "O", None
        cls = self.classes[(index - 1) // 2]
        return ("B" if index % 2 == 1 else "I"), cls

    def __eq__(self, other) -> bool:
        return isinstance(other, TagScheme) and self.classes == other.classes


@dataclass
class Corpus:
    sentences: list[Sentence]
    scheme: TagScheme
    splits: list[str] = field(default_factory=list)  # one of SPLITS per sentence

    def __post_init__(self):
        if not self.splits:
            self.splits = assign_splits(len(self.sentences))
        if len(self.splits) != len(self.sentences):
            raise ContractError("split assignment length does not match sentence count")

    def split_indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    def subset(self, split: str) -> "Corpus":
        """A corpus holding only one split's sentences, all marked train."""
        picked = [self.sentences[i] for i in self.split_indices(split)]
        return Corpus(picked, self.scheme, ["train"] * len(picked))

    def select(self, indices: Sequence[int]) -> "Corpus":
        picked = [self.sentences[i] for i in indices]
        return Corpus(picked, self.scheme, ["train"] * len(picked))

    def __len__(self) -> int:
        return len(self.sentences)


def assign_splits(n: int) -> list[str]:
    """Deterministic contiguous train/val/test partition by index."""
    n_train = int(n * SPLIT_FRACTIONS[0])
    n_val = int(n * SPLIT_FRACTIONS[1])
    return ["train"] * n_train + ["val"] * n_val + ["test"] * (n - n_train - n_val)


# ---------------------------------------------------------------------------
# BIO tag algebra


def tags_to_spans(
    tags: Sequence[int],
    scheme: TagScheme,
    mode: Literal["strict", "repair"] = "strict",
) -> list[EntitySpan]:
    """Decode a BIO tag sequence into entity spans.

    B-c opens a span, a following I-c extends it, anything else closes it.
    In strict mode an I-c without a preceding B-c/I-c of the same class is
    an error; repair mode promotes it to B-c.
    """
    if mode not in ("strict", "repair"):
        raise ContractError(f"unknown mode {mode!r}")
    spans: list[EntitySpan] = []
    open_start: int | None = None
    open_cls: str | None = None

    def close():
        nonlocal open_start, open_cls
        if open_start is not None:
            spans.append(EntitySpan(open_start, i - 1, open_cls))
            open_start = open_cls = None

    i = 0
    for i, tag in enumerate(tags):
        kind, cls = scheme.kind(tag)
        if kind == "B":
            close()
            open_start, open_cls = i, cls
        elif kind == "I":
            if open_cls == cls:
                continue
            if mode == "strict":
                raise ValidationError(
                    f"invalid BIO: {scheme.tag_name(tag)} at index {i} does not continue a span"
                )
            close()
            open_start, open_cls = i, cls
        else:
            close()
    i = len(tags)
    close()
    return spans


def spans_to_tags(spans: Sequence[EntitySpan], n: int, scheme: TagScheme) -> list[int]:
    """Encode non-overlapping spans as a BIO tag sequence of length n."""
    tags = [0] * n
    occupied = [False] * n
    for span in spans:
        if not 0 <= span.start <= span.end < n:
            raise ContractError(f"span {span} out of range for length {n}")
        if any(occupied[span.start : span.end + 1]):
            raise ContractError(f"span {span} overlaps another span")
        for i in range(span.start, span.end + 1):
            occupied[i] = True
        tags[span.start] = scheme.begin_index(span.cls)
        for i in range(span.start + 1, span.end + 1):
            tags[i] = scheme.inside_index(span.cls)
    return tags


def validate_sentence(sentence: Sentence, scheme: TagScheme) -> None:
    if len(sentence.tags) != len(sentence.tokens):
        raise ValidationError(
            f"{len(sentence.tags)} tags for {len(sentence.tokens)} tokens"
        )
    derived = tags_to_spans(sentence.tags, scheme, mode="strict")
    if sorted(derived, key=_span_key) != sorted(sentence.spans, key=_span_key):
        raise ValidationError(f"spans {sentence.spans} disagree with tags {sentence.tags}")
    for rel in sentence.relations:
        if rel.head == rel.tail:
            raise ValidationError(f"relation {rel} links a span to itself")
        for idx in (rel.head, rel.tail):
            if not 0 <= idx < len(sentence.spans):
                raise ValidationError(f"relation {rel} references missing span {idx}")


def _span_key(span: EntitySpan) -> tuple:
    return (span.start, span.end, span.cls)


# ---------------------------------------------------------------------------
# tag-file and annotation I/O


def load_conll(path: str | Path, scheme: TagScheme) -> Corpus:
    """Load a two-column "token<TAB>tag" file, one sentence per blank-line block."""
    text = Path(path).read_text(encoding="utf-8")
    sentences: list[Sentence] = []
    tokens: list[Token] = []
    tags: list[int] = []

    def flush(line_no: int):
        if not tokens:
            return
        try:
            spans = tags_to_spans(tags, scheme, mode="strict")
        except ValidationError as exc:
            raise ValidationError(f"sentence ending at line {line_no}: {exc}") from None
        sentences.append(Sentence(list(tokens), list(tags), spans))
        tokens.clear()
        tags.clear()

    for line_no, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            flush(line_no)
            continue
        fields = line.split("\t")
        if len(fields) != 2 or not fields[0]:
            raise ParseError(f"line {line_no}: expected 'token<TAB>tag', got {line!r}")
        surface, tag_name = fields
        try:
            tag = scheme.tag_index(tag_name)
        except ParseError:
            raise ParseError(f"line {line_no}: unknown tag {tag_name!r}") from None
        tokens.append(Token(surface))
        tags.append(tag)
    flush(len(text.split("\n")))
    return Corpus(sentences, scheme)


def save_conll(corpus: Corpus, path: str | Path) -> None:
    blocks = []
    for sentence in corpus.sentences:
        lines = [
            f"{token.surface}\t{corpus.scheme.tag_name(tag)}"
            for token, tag in zip(sentence.tokens, sentence.tags)
        ]
        blocks.append("\n".join(lines))
    Path(path).write_text("\n\n".join(blocks) + ("\n" if blocks else ""), encoding="utf-8")


def load_annotations(corpus: Corpus, path: str | Path) -> Corpus:
    """Attach spans/relations from a JSON-lines sidecar (order matches the tag file)."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").split("\n") if ln.strip()]
    if len(lines) != len(corpus.sentences):
        raise ParseError(
            f"annotation file has {len(lines)} records for {len(corpus.sentences)} sentences"
        )
    sentences = []
    for i, (line, sentence) in enumerate(zip(lines, corpus.sentences)):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"annotation line {i + 1}: {exc}") from None
        spans = [EntitySpan(s["start"], s["end"], s["cls"]) for s in record.get("spans", [])]
        relations = [
            RelationInstance(r["head"], r["tail"], r["label"])
            for r in record.get("relations", [])
        ]
        updated = replace(sentence, spans=spans, relations=relations)
        try:
            validate_sentence(updated, corpus.scheme)
        except ValidationError as exc:
            raise ParseError(f"annotation line {i + 1}: {exc}") from None
        sentences.append(updated)
    return Corpus(sentences, corpus.scheme, list(corpus.splits))


def save_annotations(corpus: Corpus, path: str | Path) -> None:
    lines = []
    for sentence in corpus.sentences:
        record = {
            "spans": [{"start": s.start, "end": s.end, "cls": s.cls} for s in sentence.spans],
            "relations": [
                {"head": r.head, "tail": r.tail, "label": r.label}
                for r in sentence.relations
            ],
        }
        lines.append(json.dumps(record, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_lexicon(path: str | Path) -> dict[str, list[str]]:
    """Load a synonym lexicon: surface form -> nonempty list of alternates."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ParseError("lexicon must be a JSON object")
    for key, alternates in data.items():
        if not isinstance(alternates, list) or not alternates:
            raise ParseError(f"lexicon entry {key!r} has no alternates")
    return {key: [str(a) for a in alts] for key, alts in data.items()}


# ---------------------------------------------------------------------------
# subword vocabulary


class Vocab:
    """Ordered subword inventory with fixed reserved entries."""

    def __init__(self, entries: Sequence[str], min_freq: int = 1):
        if tuple(entries[:4]) != RESERVED_ENTRIES:
            raise ContractError("vocab must start with the reserved entries")
        if len(set(entries)) != len(entries):
            raise ContractError("vocab has duplicate entries")
        self.entries = list(entries)
        self.min_freq = min_freq
        self._index = {entry: i for i, entry in enumerate(self.entries)}
        self._max_piece = max((len(e) for e in self.entries[4:]), default=0)

    @property
    def size(self) -> int:
        return len(self.entries)

    def index(self, entry: str) -> int | None:
        return self._index.get(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.entries == other.entries


def build_vocab(corpus: Corpus | Iterable[Sentence], min_freq: int = 1) -> Vocab:
    """Reserved entries, then whole tokens with freq >= min_freq, then characters.

    Each section is ordered by (-frequency, lexicographic) so builds are
    deterministic.
    """
    if min_freq < 1:
        raise ContractError(f"min_freq must be >= 1, got {min_freq}")
    sentences = corpus.sentences if isinstance(corpus, Corpus) else list(corpus)
    word_freq: Counter[str] = Counter()
    char_freq: Counter[str] = Counter()
    for sentence in sentences:
        for token in sentence.tokens:
            word_freq[token.surface] += 1
            char_freq.update(token.surface)
    entries = list(RESERVED_ENTRIES)
    seen = set(entries)
    for word, _ in sorted(word_freq.items(), key=lambda kv: (-kv[1], kv[0])):
        if word_freq[word] >= min_freq and word not in seen:
            entries.append(word)
            seen.add(word)
    for char, _ in sorted(char_freq.items(), key=lambda kv: (-kv[1], kv[0])):
        if char not in seen:
            entries.append(char)
            seen.add(char)
    return Vocab(entries, min_freq)


def tokenize_subword(surface: str, vocab: Vocab) -> list[int]:
    """Greedy longest-match segmentation; unknown characters map to [UNK]."""
    reserved = vocab.index(surface)
    if surface in RESERVED_ENTRIES and reserved is not None:
        return [reserved]
    ids: list[int] = []
    pos = 0
    while pos < len(surface):
        match = None
        limit = min(vocab._max_piece, len(surface) - pos)
        for length in range(limit, 0, -1):
            candidate = vocab.index(surface[pos : pos + length])
            if candidate is not None and candidate >= 4:
                match = (candidate, length)
                break
        if match is None:
            ids.append(UNK)
            pos += 1
        else:
            ids.append(match[0])
            pos += match[1]
    return ids or [UNK]


def tokenize_corpus(corpus: Corpus, vocab: Vocab) -> Corpus:
    """Fill every token's subword_ids; returns a new corpus."""
    sentences = []
    for sentence in corpus.sentences:
        tokens = [
            Token(t.surface, tokenize_subword(t.surface, vocab)) for t in sentence.tokens
        ]
        sentences.append(replace(sentence, tokens=tokens))
    return Corpus(sentences, corpus.scheme, list(corpus.splits))


# ---------------------------------------------------------------------------
# synthetic corpus generation

_ENTITY_LEXICON: dict[str, tuple[tuple[str, ...], ...]] = {
    "Specific": (
        ("influenza",),
        ("asthma",),
        ("migraine",),
        ("tuberculosis",),
        ("malaria",),
        ("measles",),
        ("pneumonia",),
        ("epilepsy",),
        ("lung", "cancer"),
        ("skin", "melanoma"),
    ),
    "Composite": (
        ("cardiovascular", "disease"),
        ("metabolic", "syndrome"),
        ("polycystic", "kidney", "disease"),
        ("irritable", "bowel", "syndrome"),
        ("congestive", "heart", "failure"),
    ),
    "Modifier": (
        ("acute", "inflammation"),
        ("chronic", "fatigue"),
        ("recurrent", "infection"),
        ("severe", "anemia"),
        ("persistent", "cough"),
    ),
    "Undetermined": (
        ("unspecified", "disorder"),
        ("unknown", "syndrome"),
        ("idiopathic", "condition"),
        ("atypical", "presentation"),
        ("undiagnosed", "illness"),
    ),
}

_SLOT = None  # sentinel inside templates

_SINGLE_TEMPLATES: tuple[tuple, ...] = (
    ("the", "patient", "presented", "with", _SLOT, "during", "admission"),
    ("records", "indicate", "a", "history", "of", _SLOT, "since", "childhood"),
    ("follow", "up", "confirmed", _SLOT, "without", "complications"),
    ("the", "clinic", "documented", _SLOT, "in", "the", "discharge", "note"),
)

_PAIR_TEMPLATES: tuple[tuple[tuple, str], ...] = (
    (("untreated", _SLOT, "often", "causes", _SLOT, "in", "elderly", "patients"), "causes"),
    (("specialists", "report", "that", _SLOT, "causes", _SLOT, "over", "time"), "causes"),
    (("early", "therapy", "for", _SLOT, "also", "treats", _SLOT, "in", "most", "cases"), "treats"),
    (("supervised", "care", "for", _SLOT, "treats", _SLOT, "during", "recovery"), "treats"),
    ((_SLOT, "and", _SLOT, "were", "both", "documented", "at", "admission"), NO_RELATION),
    (("the", "registry", "lists", _SLOT, "alongside", _SLOT, "for", "completeness"), NO_RELATION),
)


def default_synonym_lexicon() -> dict[str, list[str]]:
    return {
        "lung cancer": ["pulmonary carcinoma"],
        "influenza": ["seasonal flu"],
        "cardiovascular disease": ["heart vessel disease"],
        "chronic fatigue": ["lasting exhaustion"],
        "unknown syndrome": ["unclassified syndrome"],
    }


def generate_synthetic_corpus(size: int, seed: int) -> Corpus:
    """Deterministic pseudo-clinical corpus with all four entity classes.

    A pure function of (size, seed): template and entity choices come from a
    single seeded generator, and splits are assigned by index.
    """
    if size < 0:
        raise ContractError(f"size must be >= 0, got {size}")
    rng = np.random.default_rng(np.random.SeedSequence([size, seed]))
    scheme = TagScheme(DEFAULT_CLASSES)
    templates = [(t, None) for t in _SINGLE_TEMPLATES] + list(_PAIR_TEMPLATES)
    sentences: list[Sentence] = []
    for _ in range(size):
        template, label = templates[rng.integers(len(templates))]
        tokens: list[Token] = []
        spans: list[EntitySpan] = []
        for item in template:
            if item is not _SLOT:
                tokens.append(Token(item))
                continue
            cls = scheme.classes[rng.integers(len(scheme.classes))]
            surfaces = _ENTITY_LEXICON[cls]
            surface = surfaces[rng.integers(len(surfaces))]
            start = len(tokens)
            tokens.extend(Token(word) for word in surface)
            spans.append(EntitySpan(start, len(tokens) - 1, cls))
        relations = []
        if label is not None and label != NO_RELATION:
            relations.append(RelationInstance(0, 1, label))
        tags = spans_to_tags(spans, len(tokens), scheme)
        sentences.append(Sentence(tokens, tags, spans, relations))
    return Corpus(sentences, scheme)


# ---------------------------------------------------------------------------
# augmentation


def augment(
    sentence: Sentence,
    scheme: TagScheme,
    mode: Literal["synonym", "entity_mask"],
    lexicon: dict[str, list[str]] | None = None,
    seed: int = 0,
) -> Sentence:
    """Synonym substitution or entity masking; non-entity tokens never change."""
    if mode == "entity_mask":
        tokens = list(sentence.tokens)
        for span in sentence.spans:
            for i in range(span.start, span.end + 1):
                tokens[i] = Token(RESERVED_ENTRIES[ENT_MASK])
        return replace(sentence, tokens=tokens)
    if mode != "synonym":
        raise ContractError(f"unknown augmentation mode {mode!r}")

    lexicon = lexicon or {}
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    surfaces = sentence.surfaces()
    tokens: list[Token] = []
    # relations index into the span list, so rebuilt spans keep their positions
    spans: list[EntitySpan | None] = [None] * len(sentence.spans)
    cursor = 0
    order = sorted(range(len(sentence.spans)), key=lambda i: sentence.spans[i].start)
    for span_idx in order:
        span = sentence.spans[span_idx]
        tokens.extend(Token(s) for s in surfaces[cursor : span.start])
        key = " ".join(surfaces[span.start : span.end + 1])
        alternates = lexicon.get(key)
        if alternates:
            replacement = alternates[int(rng.integers(len(alternates)))].split(" ")
        else:
            replacement = surfaces[span.start : span.end + 1]
        new_start = len(tokens)
        tokens.extend(Token(word) for word in replacement)
        spans[span_idx] = EntitySpan(new_start, len(tokens) - 1, span.cls)
        cursor = span.end + 1
    tokens.extend(Token(s) for s in surfaces[cursor:])
    tags = spans_to_tags(spans, len(tokens), scheme)
    return Sentence(tokens, tags, spans, list(sentence.relations))
