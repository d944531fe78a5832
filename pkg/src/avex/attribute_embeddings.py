"""Frozen attribute embeddings and how they are produced.

Each attribute gets one vector r that conditions the decoder generators.
Three provenances are supported: "uncontextualized" pools static word
vectors of the attribute's name phrase and of its labeled values;
"contextualized" ingests externally computed per-instance name/value
vectors and mean-pools them; "random" draws a trainable table.  Tables
are frozen by default; only the random table trains.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .corpus import span_text, tokenize
from .errors import DataError
from .tagging import tags_to_spans

log = logging.getLogger(__name__)

PROVENANCES = ("uncontextualized", "contextualized", "random")


@dataclass(frozen=True)
class AttributeInstance:
    """One labeled value occurrence: attribute phrase, value string, context."""

    phrase: str
    value: str
    token_texts: tuple[str, ...]


class AttributeEmbeddingTable:
    """Embedding vector per attribute id, with uniform dimension."""

    def __init__(self, vectors: dict[str, np.ndarray], provenance: str,
                 frozen: bool = True):
        if provenance not in PROVENANCES:
            raise DataError(
                f"unknown provenance {provenance!r}; expected one of {PROVENANCES}")
        if not vectors:
            raise DataError("attribute embedding table is empty")
        dims = {v.shape for v in vectors.values()}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise DataError(f"inconsistent embedding dimensions: {sorted(dims)}")
        self.vectors = {a: np.asarray(v, dtype=np.float64) for a, v in vectors.items()}
        self.provenance = provenance
        self.frozen = frozen

    @property
    def d_r(self) -> int:
        return next(iter(self.vectors.values())).shape[0]

    def ids(self) -> list[str]:
        return sorted(self.vectors)

    def get(self, attr_id: str) -> np.ndarray:
        try:
            return self.vectors[attr_id]
        except KeyError:
            raise DataError(f"no embedding for attribute {attr_id!r}")

    def __contains__(self, attr_id):
        return attr_id in self.vectors

    def as_matrix(self, attr_ids) -> np.ndarray:
        return np.stack([self.get(a) for a in attr_ids])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for a in self.ids():
                row = {"attribute": a, "vec": self.vectors[a].tolist(),
                       "provenance": self.provenance}
                fh.write(json.dumps(row) + "\n")

    @classmethod
    def load(cls, path) -> "AttributeEmbeddingTable":
        """Read a pooled-table JSONL file: {"attribute", "vec"} per line."""
        vectors = {}
        provenances = set()
        try:
            fh = open(path, encoding="utf-8")
        except OSError as e:
            raise DataError(f"cannot read embedding table {path}: {e}")
        with fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    attr, vec = str(row["attribute"]), row["vec"]
                except (json.JSONDecodeError, KeyError, TypeError) as e:
                    raise DataError(f"{path}:{lineno}: bad table row: {e}")
                if attr in vectors:
                    raise DataError(f"{path}:{lineno}: duplicate attribute {attr!r}")
                vectors[attr] = np.asarray(vec, dtype=np.float64)
                if vectors[attr].ndim != 1:
                    raise DataError(f"{path}:{lineno}: vector must be flat")
                if "provenance" in row:
                    provenances.add(row["provenance"])
        if len(provenances) > 1:
            raise DataError(
                f"{path} mixes provenances {sorted(provenances)} in one table")
        provenance = provenances.pop() if provenances else "contextualized"
        return cls(vectors, provenance)


def collect_instances(examples, attr_id: str, phrase: str) -> list[AttributeInstance]:
    """One instance per labeled value span of the attribute."""
    instances = []
    for ex in examples:
        if ex.attribute != attr_id:
            continue
        for span in sorted(tags_to_spans(ex.tags)):
            instances.append(AttributeInstance(
                phrase, span_text(ex.tokens, span),
                tuple(t.text for t in ex.tokens)))
    return instances


def static_phrase_embedding(phrase: str, vectors: dict, dim: int) -> np.ndarray:
    """Mean of the static vectors of a phrase's tokens; OOV tokens skipped."""
    hits = []
    for token in tokenize(phrase):
        vec = vectors.get(token.text)
        if vec is None:
            vec = vectors.get(token.text.lower())
        if vec is not None:
            hits.append(vec)
    if not hits:
        return np.zeros(dim)
    return np.mean(hits, axis=0)


def uncontextualized_embedding(attr_id: str, phrase: str, examples,
                               vectors: dict, dim: int):
    """Static name/value pooling for one attribute.

    The name half embeds the attribute phrase; the value half averages
    the phrase embeddings of every labeled value occurrence.  With no
    occurrences the value half is zero and the attribute is flagged.
    Returns (embedding of size 2*dim, flagged).
    """
    instances = collect_instances(examples, attr_id, phrase)
    name_part = static_phrase_embedding(phrase, vectors, dim)
    if instances:
        value_part = np.mean(
            [static_phrase_embedding(inst.value, vectors, dim) for inst in instances],
            axis=0)
        flagged = False
    else:
        value_part = np.zeros(dim)
        flagged = True
    return np.concatenate([name_part, value_part]), flagged


def uncontextualized_table(vocab, examples, vectors) -> AttributeEmbeddingTable:
    """Pool a full table from static word vectors and labeled data."""
    if not vectors:
        raise DataError("uncontextualized embeddings require static word vectors")
    dim = next(iter(vectors.values())).shape[0]
    table = {}
    for attr_id in vocab.ids():
        emb, flagged = uncontextualized_embedding(
            attr_id, vocab.phrase(attr_id), examples, vectors, dim)
        if flagged:
            log.warning("attribute %s has no labeled values; value half is zero",
                        attr_id)
        table[attr_id] = emb
    return AttributeEmbeddingTable(table, "uncontextualized")


def ingest_contextualized(path) -> AttributeEmbeddingTable:
    """Pool per-instance contextual name/value vectors into a table.

    Input rows: {"attribute": id, "name_vec": [...], "value_vec": [...]}.
    Per attribute, both sides are mean-pooled and concatenated.
    """
    name_sums: dict[str, np.ndarray] = {}
    value_sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    dim = None
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read instance file {path}: {e}")
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                attr = str(row["attribute"])
                name_vec = np.asarray(row["name_vec"], dtype=np.float64)
                value_vec = np.asarray(row["value_vec"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path}:{lineno}: bad instance row: {e}")
            if name_vec.ndim != 1 or value_vec.ndim != 1 \
                    or name_vec.shape != value_vec.shape:
                raise DataError(
                    f"{path}:{lineno}: name/value vectors must be flat and equal-sized")
            if dim is None:
                dim = name_vec.shape[0]
            elif name_vec.shape[0] != dim:
                raise DataError(
                    f"{path}:{lineno}: vector dim {name_vec.shape[0]} differs "
                    f"from earlier rows ({dim})")
            if attr not in counts:
                name_sums[attr] = np.zeros(dim)
                value_sums[attr] = np.zeros(dim)
                counts[attr] = 0
            name_sums[attr] += name_vec
            value_sums[attr] += value_vec
            counts[attr] += 1
    if not counts:
        raise DataError(f"instance file {path} is empty")
    table = {
        a: np.concatenate([name_sums[a] / counts[a], value_sums[a] / counts[a]])
        for a in counts
    }
    return AttributeEmbeddingTable(table, "contextualized")


def random_table(attr_ids, d_r: int, seed: int) -> AttributeEmbeddingTable:
    """Trainable random table, uniform in (-0.1, 0.1)."""
    if d_r < 1:
        raise DataError(f"d_r must be positive, got {d_r}")
    rng = np.random.default_rng(seed)
    vectors = {a: rng.uniform(-0.1, 0.1, size=d_r) for a in attr_ids}
    return AttributeEmbeddingTable(vectors, "random", frozen=False)
