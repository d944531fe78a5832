"""Template-driven synthetic corpora for end-to-end exercises.

Titles come from templates with ``<value>`` slots ("<value> scented
body wash"); the filled values double as the product's catalog values,
so distant supervision recovers them exactly.  The generator also emits
a matching split manifest and a random static-vector file covering the
generated vocabulary, which makes the full pipeline runnable offline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import AttributeVocab, Product, attribute_phrase, tokenize
from .errors import DataError

VALUE_SLOT = "<value>"


@dataclass
class SynthAttribute:
    """Recipe for one attribute's synthetic examples.

    ``train_value_limit`` restricts training examples to a prefix of the
    value list, which leaves the remaining values unseen at train time
    (useful for probing generalization from other attributes).
    """

    id: str
    values: tuple[str, ...]
    templates: tuple[str, ...]
    train: int = 0
    dev: int = 0
    test: int = 0
    train_value_limit: int | None = None

    def validate(self):
        if not self.values:
            raise DataError(f"attribute {self.id!r} has no values")
        if not self.templates:
            raise DataError(f"attribute {self.id!r} has no templates")
        for tpl in self.templates:
            if VALUE_SLOT not in tpl:
                raise DataError(
                    f"template {tpl!r} for {self.id!r} lacks a {VALUE_SLOT} slot")
        if self.train_value_limit is not None and not (
                1 <= self.train_value_limit <= len(self.values)):
            raise DataError(
                f"train_value_limit for {self.id!r} must be in 1..{len(self.values)}")
        return self


@dataclass
class SynthSpec:
    seed: int
    attributes: list[SynthAttribute]
    vector_dim: int = 50

    @classmethod
    def from_json(cls, obj) -> "SynthSpec":
        try:
            attrs = [SynthAttribute(
                id=str(a["id"]),
                values=tuple(a["values"]),
                templates=tuple(a["templates"]),
                train=int(a.get("train", 0)),
                dev=int(a.get("dev", 0)),
                test=int(a.get("test", 0)),
                train_value_limit=a.get("train_value_limit"),
            ) for a in obj["attributes"]]
            return cls(int(obj.get("seed", 0)), attrs, int(obj.get("vector_dim", 50)))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"bad synth spec: {e}")

    @classmethod
    def load(cls, path) -> "SynthSpec":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_json(json.load(fh))
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read synth spec {path}: {e}")


@dataclass
class SynthCorpus:
    products: list[Product]
    vocab: AttributeVocab
    manifest: dict[str, list[str]]
    vectors: dict[str, np.ndarray]
    spec: SynthSpec = field(repr=False, default=None)


def generate(spec: SynthSpec) -> SynthCorpus:
    """Deterministic corpus for a spec: same seed, same corpus."""
    rng = np.random.default_rng(spec.seed)
    products = []
    manifest = {"train": [], "dev": [], "test": []}
    words = set()
    for attr in spec.attributes:
        attr.validate()
        for split in ("train", "dev", "test"):
            count = getattr(attr, split)
            pool = list(attr.values)
            if split == "train" and attr.train_value_limit is not None:
                pool = pool[: attr.train_value_limit]
            for i in range(count):
                template = attr.templates[int(rng.integers(len(attr.templates)))]
                slots = template.count(VALUE_SLOT)
                if slots > len(pool):
                    raise DataError(
                        f"template {template!r} needs {slots} values but "
                        f"{attr.id!r} offers only {len(pool)}")
                chosen = [pool[j] for j in
                          rng.choice(len(pool), size=slots, replace=False)]
                title = template
                for value in chosen:
                    title = title.replace(VALUE_SLOT, value, 1)
                pid = f"{attr.id}-{split}-{i:04d}"
                products.append(Product(pid, title, [], None, {attr.id: chosen}))
                manifest[split].append(pid)
                words.update(t.text for t in tokenize(title))
    vocab = AttributeVocab([(a.id, None) for a in spec.attributes])
    for a in spec.attributes:
        words.update(t.text for t in tokenize(attribute_phrase(a.id)))
    # Scale chosen so vector norms land near those of published 50-d word
    # vectors; small-magnitude inputs make the encoder learn noticeably slower.
    vectors = {
        w.lower(): rng.uniform(-1.5, 1.5, size=spec.vector_dim)
        for w in sorted(words)
    }
    return SynthCorpus(products, vocab, manifest, vectors, spec)


def write_corpus(corpus: SynthCorpus, out_dir) -> dict[str, Path]:
    """Write corpus.jsonl, vocab.json, splits.json, and vectors.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": out / "corpus.jsonl",
        "vocab": out / "vocab.json",
        "splits": out / "splits.json",
        "vectors": out / "vectors.txt",
    }
    with open(paths["corpus"], "w", encoding="utf-8") as fh:
        for p in corpus.products:
            fh.write(json.dumps({
                "id": p.id,
                "title": p.title,
                "bullets": p.bullets,
                "attributes": {a: list(vs) for a, vs in p.gold_values.items()},
            }, ensure_ascii=False) + "\n")
    corpus.vocab.save(paths["vocab"])
    with open(paths["splits"], "w", encoding="utf-8") as fh:
        json.dump(corpus.manifest, fh, indent=2)
        fh.write("\n")
    with open(paths["vectors"], "w", encoding="utf-8") as fh:
        for word, vec in corpus.vectors.items():
            fh.write(word + " " + " ".join(f"{x:.6f}" for x in vec) + "\n")
    return paths
