"""Closed-vocabulary attribute-phrase chunker for garment captions.

A caption such as ``"Navy blue jacket with red collar."`` is split into
attribute phrases (APs): a maximal run of attribute adjectives followed by a
part or category noun.  Conjunctions and other function words between
phrases are dropped.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import EmptyPrompt, NoCategory, StructureMismatch, UnknownPartNoun

BODY = "body"

_WORD_RE = re.compile(r"[A-Za-z]+(?:-[A-Za-z]+)*")


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class Attribute:
    """Feature carried by an attribute adjective.

    ``kind`` is one of ``color``, ``length``, ``pattern`` or ``style``.  Colors
    carry an RGB triple, lengths a coverage fraction, the others a label.
    """

    kind: str
    value: object


@dataclass(frozen=True)
class Lexicon:
    colors: tuple[tuple[str, tuple[float, float, float]], ...]
    lengths: Mapping[str, float]
    patterns: tuple[str, ...]
    styles: tuple[str, ...]
    part_nouns: Mapping[str, str]
    category_nouns: Mapping[str, str]
    conjunctions: frozenset[str]
    attribute_adjectives: Mapping[str, Attribute] = field(init=False, repr=False)

    def __post_init__(self):
        adjectives: dict[str, Attribute] = {}
        for name, rgb in self.colors:
            if len(rgb) != 3 or not all(0.0 <= c <= 1.0 for c in rgb):
                raise ValueError(f"color {name!r} is not an RGB triple in [0, 1]")
            adjectives[name] = Attribute("color", tuple(float(c) for c in rgb))
        for name, frac in self.lengths.items():
            adjectives[name] = Attribute("length", float(frac))
        for name in self.patterns:
            adjectives[name] = Attribute("pattern", name)
        for name in self.styles:
            adjectives[name] = Attribute("style", name)
        object.__setattr__(self, "attribute_adjectives", adjectives)

        sets = {
            "attribute_adjectives": set(adjectives),
            "part_nouns": set(self.part_nouns),
            "category_nouns": set(self.category_nouns),
            "conjunctions": set(self.conjunctions),
        }
        names = list(sets)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                common = sets[a] & sets[b]
                if common:
                    raise ValueError(f"{a} and {b} overlap: {sorted(common)}")

    @property
    def color_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.colors)

    def color_rgb(self, name: str) -> tuple[float, float, float]:
        return dict(self.colors)[name]

    def is_noun(self, word: str) -> bool:
        return word in self.part_nouns or word in self.category_nouns

    def part_of(self, noun: str) -> str:
        """Part id referenced by a noun; category head nouns name the body."""
        if noun in self.part_nouns:
            return self.part_nouns[noun]
        if noun in self.category_nouns:
            return BODY
        raise KeyError(noun)

    def to_dict(self) -> dict:
        return {
            "colors": {name: list(rgb) for name, rgb in self.colors},
            "lengths": dict(self.lengths),
            "patterns": list(self.patterns),
            "styles": list(self.styles),
            "part_nouns": dict(self.part_nouns),
            "category_nouns": dict(self.category_nouns),
            "conjunctions": sorted(self.conjunctions),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Lexicon":
        return cls(
            colors=tuple((k, tuple(v)) for k, v in d["colors"].items()),
            lengths=dict(d.get("lengths", {})),
            patterns=tuple(d.get("patterns", ())),
            styles=tuple(d.get("styles", ())),
            part_nouns=dict(d["part_nouns"]),
            category_nouns=dict(d["category_nouns"]),
            conjunctions=frozenset(d.get("conjunctions", ())),
        )


def load_lexicon(path) -> Lexicon:
    return Lexicon.from_dict(json.loads(Path(path).read_text()))


# Colors are listed in tie-break order: the earlier entry wins equidistant snaps.
DEFAULT_COLORS = (
    ("red", (1.0, 0.0, 0.0)),
    ("yellow", (1.0, 0.9, 0.0)),
    ("green", (0.0, 0.6, 0.0)),
    ("navy", (0.0, 0.0, 0.4)),
    ("blue", (0.0, 0.35, 1.0)),
    ("purple", (0.6, 0.0, 0.9)),
    ("pink", (1.0, 0.55, 0.85)),
    ("gray", (0.5, 0.5, 0.5)),
)

_PARTS = {
    "sleeve": "sleeves", "sleeves": "sleeves",
    "collar": "collar", "collars": "collar",
    "hood": "hood", "hoods": "hood",
    "pocket": "pockets", "pockets": "pockets",
    "button": "buttons", "buttons": "buttons",
    "belt": "belt", "belts": "belt",
}

_CATEGORIES = {c: c for c in ("jacket", "sweater", "shirt", "coat", "dress", "hoodie")}

_CONJUNCTIONS = ("and", "with", "a", "an", "the", "of", "featuring", "plus", "has", "in", "on")


def default_lexicon() -> Lexicon:
    return Lexicon(
        colors=DEFAULT_COLORS,
        lengths={"long": 1.0, "short": 0.5},
        patterns=("striped", "plain"),
        styles=("classic", "casual", "elegant", "simple", "loose", "slim"),
        part_nouns=_PARTS,
        category_nouns=_CATEGORIES,
        conjunctions=frozenset(_CONJUNCTIONS),
    )


@dataclass(frozen=True)
class AttributePhrase:
    adjectives: tuple[Token, ...]
    noun: Token

    @property
    def tokens(self) -> tuple[Token, ...]:
        return self.adjectives + (self.noun,)

    @property
    def span(self) -> tuple[int, int]:
        return (self.tokens[0].start, self.noun.end)

    def words(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.tokens)

    def text(self) -> str:
        return " ".join(self.words())


@dataclass(frozen=True)
class APTree:
    full_prompt: str
    aps: tuple[AttributePhrase, ...]
    category: str

    @property
    def m(self) -> int:
        return len(self.aps)

    @property
    def tokens(self) -> tuple[Token, ...]:
        return tuple(t for ap in self.aps for t in ap.tokens)

    def structure(self) -> tuple:
        """Span-free view of the tree, used for structural comparisons."""
        return (self.category, tuple(ap.words() for ap in self.aps))

    def to_dict(self) -> dict:
        return {
            "full_prompt": self.full_prompt,
            "category": self.category,
            "aps": [
                {
                    "adjectives": [t.text for t in ap.adjectives],
                    "noun": ap.noun.text,
                    "span": list(ap.span),
                }
                for ap in self.aps
            ],
        }


def tokenize(text: str) -> list[Token]:
    """Lowercased word tokens with their character spans."""
    tokens = [Token(m.group().lower(), m.start(), m.end()) for m in _WORD_RE.finditer(text)]
    if not tokens:
        raise EmptyPrompt(f"no tokens in prompt {text!r}")
    return tokens


def parse_aps(tokens: Iterable[Token], lexicon: Lexicon, full_prompt: str | None = None) -> APTree:
    tokens = list(tokens)
    if not tokens:
        raise EmptyPrompt("empty token list")
    if full_prompt is None:
        full_prompt = " ".join(t.text for t in tokens)

    aps: list[AttributePhrase] = []
    run: list[Token] = []
    category = None
    for tok in tokens:
        word = tok.text
        if word in lexicon.attribute_adjectives:
            run.append(tok)
        elif lexicon.is_noun(word):
            aps.append(AttributePhrase(tuple(run), tok))
            run = []
            if category is None and word in lexicon.category_nouns:
                category = lexicon.category_nouns[word]
        elif run:
            raise UnknownPartNoun(
                f"adjectives {[t.text for t in run]} are followed by {word!r}, not a known noun"
            )
        # conjunctions and unknown function words between phrases are dropped
    if run:
        raise UnknownPartNoun(f"adjectives {[t.text for t in run]} end the prompt without a noun")
    if category is None:
        raise NoCategory(f"no garment category noun in {full_prompt!r}")
    return APTree(full_prompt, tuple(aps), category)


def parse(prompt: str, lexicon: Lexicon | None = None) -> APTree:
    lexicon = lexicon or default_lexicon()
    return parse_aps(tokenize(prompt), lexicon, full_prompt=prompt)


def diff_aps(w: APTree, w_star: APTree) -> set[int]:
    """Indices of the APs whose words differ between two same-shaped trees."""
    if w.category != w_star.category or w.m != w_star.m:
        raise StructureMismatch(
            f"cannot diff {w.category}/{w.m} APs against {w_star.category}/{w_star.m} APs"
        )
    return {i for i, (a, b) in enumerate(zip(w.aps, w_star.aps)) if a.words() != b.words()}


def render_prompt(structure: tuple, joiner: str = " with ") -> str:
    """Text for a span-free structure ``(category, ((word, ...), ...))``."""
    _, aps = structure
    return joiner.join(" ".join(words) for words in aps)
