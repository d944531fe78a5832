"""Product ingestion, tokenization, and distant-supervision labeling.

Profiles arrive as JSONL, one product per line:

    {"id": ..., "title": ..., "bullets": [...], "description": ...,
     "attributes": {attr_id: [value, ...]}}

Catalog values are projected onto the text by exact token-sequence
matching (case-insensitive), which yields BIOE tag sequences without any
manual annotation.  Descriptions are parsed but never labeled.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field

from .errors import DataError
from .tagging import OUTSIDE, Span, tags_to_spans

SETTINGS = ("title", "title_plus_bullets")
FIELD_SEPARATOR = "."

_PUNCT = frozenset(string.punctuation)
_CHUNK = re.compile(r"\S+")
_CAMEL_1 = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_CAMEL_2 = re.compile(r"(?<=[A-Z])(?=[A-Z][a-z])")


@dataclass(frozen=True)
class Token:
    """Surface form plus half-open character offsets into the source text."""

    text: str
    start: int
    end: int


@dataclass
class Product:
    id: str
    title: str
    bullets: list[str] = field(default_factory=list)
    description: str | None = None
    gold_values: dict[str, list[str]] = field(default_factory=dict)


@dataclass(frozen=True)
class LabeledExample:
    """One (sentence, attribute) training instance."""

    product_id: str
    attribute: str
    tokens: tuple[Token, ...]
    tags: tuple[str, ...]
    source_field: str

    def token_texts(self) -> list[str]:
        return [t.text for t in self.tokens]


class AttributeVocab:
    """Ordered attribute inventory; ids map to display phrases."""

    def __init__(self, entries):
        self._entries = []
        seen = set()
        for attr_id, phrase in entries:
            if attr_id in seen:
                raise DataError(f"duplicate attribute id {attr_id!r}")
            seen.add(attr_id)
            self._entries.append((attr_id, phrase or attribute_phrase(attr_id)))

    def ids(self) -> list[str]:
        return [a for a, _ in self._entries]

    def phrase(self, attr_id: str) -> str:
        for a, p in self._entries:
            if a == attr_id:
                return p
        raise DataError(f"unknown attribute id {attr_id!r}")

    def __contains__(self, attr_id):
        return any(a == attr_id for a, _ in self._entries)

    def __len__(self):
        return len(self._entries)

    def subset(self, keep) -> "AttributeVocab":
        keep = set(keep)
        unknown = keep - set(self.ids())
        if unknown:
            raise DataError(f"unknown attribute id(s): {sorted(unknown)}")
        return AttributeVocab([e for e in self._entries if e[0] in keep])

    @classmethod
    def load(cls, path) -> "AttributeVocab":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read attribute vocabulary {path}: {e}")
        if not isinstance(raw, list):
            raise DataError(f"attribute vocabulary {path} must be a JSON list")
        entries = []
        for i, row in enumerate(raw):
            if not isinstance(row, dict) or "id" not in row:
                raise DataError(f"attribute vocabulary entry {i} lacks an 'id'")
            entries.append((str(row["id"]), row.get("phrase")))
        return cls(entries)

    def save(self, path):
        rows = [{"id": a, "phrase": p} for a, p in self._entries]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")


def attribute_phrase(attr_id: str) -> str:
    """Split a camel-case attribute id into a readable phrase."""
    s = _CAMEL_2.sub(" ", _CAMEL_1.sub(" ", attr_id))
    return " ".join(s.split())


def tokenize(text: str) -> list[Token]:
    """Whitespace split, then detach leading/trailing ASCII punctuation.

    Offsets index the original string, so source[start:end] == token.
    """
    tokens = []
    for m in _CHUNK.finditer(text):
        chunk, base = m.group(), m.start()
        s, e = 0, len(chunk)
        left = []
        while s < e and chunk[s] in _PUNCT:
            left.append((chunk[s], s))
            s += 1
        right = []
        while e > s and chunk[e - 1] in _PUNCT:
            right.append((chunk[e - 1], e - 1))
            e -= 1
        pieces = left + ([(chunk[s:e], s)] if e > s else []) + right[::-1]
        for text_piece, off in pieces:
            tokens.append(Token(text_piece, base + off, base + off + len(text_piece)))
    return tokens


def _value_token_texts(value: str) -> list[str]:
    return [t.text.lower() for t in tokenize(value)]


def distant_label(tokens, values) -> list[str]:
    """Project catalog values onto a token sequence as BIOE tags.

    Matching is case-insensitive and token-boundary aligned; longer
    matches win, ties go left to right, and accepted matches never
    overlap.
    """
    n = len(tokens)
    lowered = [t.text.lower() for t in tokens]
    candidates = []
    for value in sorted(set(values)):
        vtoks = _value_token_texts(value)
        width = len(vtoks)
        if width == 0:
            continue
        for s in range(n - width + 1):
            if lowered[s : s + width] == vtoks:
                candidates.append((width, s, value))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

    tags = [OUTSIDE] * n
    taken = [False] * n
    for width, s, _value in candidates:
        if any(taken[i] for i in range(s, s + width)):
            continue
        for i in range(s, s + width):
            taken[i] = True
        tags[s] = "B"
        if width > 1:
            tags[s + width - 1] = "E"
            for i in range(s + 1, s + width - 1):
                tags[i] = "I"
    return tags


def span_text(tokens, span: Span) -> str:
    """Canonical value string: token texts joined by single spaces."""
    return " ".join(tokens[i].text for i in range(span.start, span.end + 1))


def matched_values(tokens, tags, values) -> set[str]:
    """Which catalog values are realized by the labeled spans."""
    realized = {span_text(tokens, s).lower() for s in tags_to_spans(tags)}
    out = set()
    for value in values:
        norm = " ".join(_value_token_texts(value))
        if norm in realized:
            out.add(value)
    return out


@dataclass
class CoverageReport:
    """What distant supervision managed to label."""

    products: int = 0
    malformed_lines: list = field(default_factory=list)
    examples: int = 0
    negatives: int = 0
    dropped_pairs: int = 0
    values_seen: int = 0
    values_matched: int = 0
    unknown_attributes: int = 0
    per_attribute_examples: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "products": self.products,
            "malformed_lines": [list(m) for m in self.malformed_lines],
            "examples": self.examples,
            "negatives": self.negatives,
            "dropped_pairs": self.dropped_pairs,
            "values_seen": self.values_seen,
            "values_matched": self.values_matched,
            "unknown_attributes": self.unknown_attributes,
            "per_attribute_examples": dict(sorted(self.per_attribute_examples.items())),
        }


def source_text(product: Product, setting: str) -> str:
    if setting == "title":
        return product.title
    if setting == "title_plus_bullets":
        parts = [product.title] + list(product.bullets)
        return f" {FIELD_SEPARATOR} ".join(p for p in parts if p)
    raise DataError(f"unknown setting {setting!r}; expected one of {SETTINGS}")


def build_corpus(products, vocab: AttributeVocab, setting: str = "title",
                 include_negatives: bool = False):
    """Label a product stream against an attribute vocabulary.

    Emits one LabeledExample per (product, attribute) pair with at least
    one matched value; zero-match pairs become all-O negatives only when
    requested.  Returns (examples sorted by (product id, attribute id),
    CoverageReport).
    """
    if setting not in SETTINGS:
        raise DataError(f"unknown setting {setting!r}; expected one of {SETTINGS}")
    report = CoverageReport()
    examples = []
    for product in products:
        report.products += 1
        tokens = tuple(tokenize(source_text(product, setting)))
        for attr_id in sorted(product.gold_values):
            if attr_id not in vocab:
                report.unknown_attributes += 1
                continue
            values = [v for v in product.gold_values[attr_id] if v and v.strip()]
            if not values:
                continue
            report.values_seen += len(set(values))
            tags = distant_label(tokens, values)
            hit = matched_values(tokens, tags, set(values))
            report.values_matched += len(hit)
            if hit:
                examples.append(LabeledExample(
                    product.id, attr_id, tokens, tuple(tags), setting))
            elif include_negatives:
                examples.append(LabeledExample(
                    product.id, attr_id, tokens, tuple([OUTSIDE] * len(tokens)), setting))
                report.negatives += 1
            else:
                report.dropped_pairs += 1
    examples.sort(key=lambda ex: (ex.product_id, ex.attribute))
    report.examples = len(examples)
    for ex in examples:
        report.per_attribute_examples[ex.attribute] = (
            report.per_attribute_examples.get(ex.attribute, 0) + 1)
    return examples, report


def parse_product(obj) -> Product:
    if not isinstance(obj, dict):
        raise DataError("product row is not a JSON object")
    for key in ("id", "title"):
        if key not in obj:
            raise DataError(f"product row lacks {key!r}")
    bullets = obj.get("bullets", [])
    if not isinstance(bullets, list) or not all(isinstance(b, str) for b in bullets):
        raise DataError("'bullets' must be a list of strings")
    attrs = obj.get("attributes", {})
    if not isinstance(attrs, dict):
        raise DataError("'attributes' must be an object")
    gold = {}
    for a, vals in attrs.items():
        if not isinstance(vals, list) or not all(isinstance(v, str) for v in vals):
            raise DataError(f"values for attribute {a!r} must be a list of strings")
        gold[str(a)] = list(vals)
    description = obj.get("description")
    if description is not None and not isinstance(description, str):
        raise DataError("'description' must be a string")
    return Product(str(obj["id"]), str(obj["title"]), list(bullets), description, gold)


def load_products(path):
    """Read a product JSONL file, skipping and reporting malformed lines."""
    products = []
    malformed = []
    seen_ids = set()
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read corpus {path}: {e}")
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                product = parse_product(json.loads(line))
            except (json.JSONDecodeError, DataError) as e:
                malformed.append((lineno, str(e)))
                continue
            if product.id in seen_ids:
                malformed.append((lineno, f"duplicate product id {product.id!r}"))
                continue
            seen_ids.add(product.id)
            products.append(product)
    return products, malformed


def build_corpus_from_file(path, vocab, setting="title", include_negatives=False):
    products, malformed = load_products(path)
    examples, report = build_corpus(products, vocab, setting, include_negatives)
    report.malformed_lines = malformed
    return examples, report


# -- split manifests ---------------------------------------------------------

SPLITS = ("train", "dev", "test")


def load_split_manifest(path) -> dict[str, list[str]]:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read split manifest {path}: {e}")
    if not isinstance(raw, dict) or not all(k in raw for k in SPLITS):
        raise DataError(f"split manifest {path} must map train/dev/test to id lists")
    manifest = {k: [str(i) for i in raw[k]] for k in SPLITS}
    all_ids = manifest["train"] + manifest["dev"] + manifest["test"]
    if len(set(all_ids)) != len(all_ids):
        raise DataError(f"split manifest {path} assigns some id to multiple splits")
    return manifest


def split_examples(examples, manifest) -> dict[str, list[LabeledExample]]:
    """Partition labeled examples by their product id's split."""
    where = {}
    for split in SPLITS:
        for pid in manifest[split]:
            where[pid] = split
    out = {split: [] for split in SPLITS}
    for ex in examples:
        split = where.get(ex.product_id)
        if split is not None:
            out[split].append(ex)
    return out


# -- labeled-example files ---------------------------------------------------


def save_labeled(path, examples):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            row = {
                "id": ex.product_id,
                "attribute": ex.attribute,
                "source_field": ex.source_field,
                "tokens": [[t.text, t.start, t.end] for t in ex.tokens],
                "tags": list(ex.tags),
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_labeled(path) -> list[LabeledExample]:
    examples = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read labeled file {path}: {e}")
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                tokens = tuple(Token(t, int(s), int(e)) for t, s, e in row["tokens"])
                tags = tuple(row["tags"])
                if len(tokens) != len(tags):
                    raise DataError("token/tag length mismatch")
                ex = LabeledExample(str(row["id"]), str(row["attribute"]),
                                    tokens, tags, row.get("source_field", "title"))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError, DataError) as e:
                raise DataError(f"{path}:{lineno}: bad labeled example: {e}")
            examples.append(ex)
    return examples
