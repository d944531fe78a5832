"""Model variants sharing one training and evaluation interface.

Every model exposes:
  - ``loss(example)``: scalar NLL tensor for one training example,
  - ``predict_tags(token_texts, attribute)``: decoded BIOE tags,
  - ``params``: a ModelParams registry used by the optimizer and the
    checkpoint writer,
  - ``prepare_examples(examples)``: the variant's view of the training
    set (identity except for the joint-tagset variant, which merges all
    attributes of a product into one sequence).

The "adatag" variant generates each attribute's CRF decoder from its
frozen embedding; "adatag_random_emb" swaps in a trainable random
embedding table.  The baselines replace generation with explicitly
parameterized decoders in different sharing regimes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adaptive_decoder import (
    DecoderInstance,
    HyperNetwork,
    TransitionMoe,
    build_decoder,
    chain_nll,
    emissions,
    viterbi,
)
from .attribute_embeddings import AttributeEmbeddingTable, random_table
from .autodiff import Tensor, no_grad, row
from .corpus import AttributeVocab, Token
from .encoder import PAD, UNK, LstmCell, WordEmbeddingTable, encode_matrix
from .errors import DataError
from .tagging import (
    NUM_TAGS,
    ExpandedTagset,
    expand_tagset,
    tag_indices,
    tags_from_indices,
    tags_to_spans,
)

VARIANTS = (
    "adatag",
    "adatag_random_emb",
    "bilstm_multicrf",
    "n_tag_sets",
    "per_attribute",
    "bilstm_crf_shared_emb",
)

SHARED_SCOPE = "shared"


class ModelParams:
    """Named parameter registry with group labels and trainability flags."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}

    def add(self, name: str, value, group: str, trainable: bool = True) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value, requires_grad=trainable)
        t.requires_grad = trainable
        self._tensors[name] = t
        self._groups[name] = group
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def items(self):
        return list(self._tensors.items())

    def names(self):
        return list(self._tensors)

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def groups(self) -> list[str]:
        seen = []
        for name in self._tensors:
            g = self._groups[name]
            if g not in seen:
                seen.append(g)
        return seen

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self._tensors.items() if t.requires_grad}

    def in_group(self, group: str) -> dict[str, Tensor]:
        return {n: t for n, t in self._tensors.items() if self._groups[n] == group}


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


def _make_cell(params: ModelParams, prefix: str, group: str,
               input_size: int, hidden: int, rng) -> LstmCell:
    fan = input_size + hidden
    def w(name):
        return params.add(f"{prefix}/{name}", _uniform(rng, (hidden, fan), fan), group)
    def b(name):
        return params.add(f"{prefix}/{name}", _uniform(rng, (hidden,), fan), group)
    return LstmCell(w("w_i"), w("w_f"), w("w_o"), w("w_g"),
                    b("b_i"), b("b_f"), b("b_o"), b("b_g"))


def _make_encoder(params, prefix, group, itos, vectors, d_word, d_h, rng):
    if d_h % 2:
        raise DataError(f"d_h must be even to split across directions, got {d_h}")
    table = WordEmbeddingTable.from_itos(itos, vectors, d_word, rng)
    params.add(f"{prefix}/W_word", table.matrix, group)
    half = d_h // 2
    fwd = _make_cell(params, f"{prefix}/lstm_fwd", group, d_word, half, rng)
    bwd = _make_cell(params, f"{prefix}/lstm_bwd", group, d_word, half, rng)
    return table, fwd, bwd


def _make_direct_decoder(params, prefix, group, num_tags, d_h, rng):
    W = params.add(f"{prefix}/W", _uniform(rng, (num_tags, d_h), d_h), group)
    b = params.add(f"{prefix}/b", _uniform(rng, (num_tags,), d_h), group)
    T = params.add(f"{prefix}/T", _uniform(rng, (num_tags, num_tags), num_tags), group)
    return DecoderInstance(W, b, T)


def _predict(P, T) -> list[str]:
    path, _ = viterbi(P, T)
    return tags_from_indices(path)


class AdaptiveModel:
    """Shared encoder; per-attribute decoders generated from embeddings."""

    def __init__(self, config, vocab: AttributeVocab, word_itos, attr_table,
                 vectors, rng):
        self.config = config
        self.attr_vocab = vocab
        self.params = ModelParams()
        self.table, self.fwd, self.bwd = _make_encoder(
            self.params, "encoder", "encoder", word_itos[SHARED_SCOPE], vectors,
            config.d_word, config.d_h, rng)
        d_r = attr_table.d_r
        self.d_r = d_r
        self.provenance = attr_table.provenance
        self.frozen_embeddings = attr_table.frozen
        self._attr_index = {a: i for i, a in enumerate(vocab.ids())}
        self.w_att = self.params.add(
            "att_emb/W_att", attr_table.as_matrix(vocab.ids()), "att_emb",
            trainable=not attr_table.frozen)
        flat = NUM_TAGS * config.d_h
        self.hyper = HyperNetwork(
            self.params.add("hyper/W_hyper_w", _uniform(rng, (flat, d_r), d_r), "hyper"),
            self.params.add("hyper/b_hyper_w", _uniform(rng, (flat,), d_r), "hyper"),
            self.params.add("hyper/W_hyper_b", _uniform(rng, (NUM_TAGS, d_r), d_r), "hyper"),
            self.params.add("hyper/b_hyper_b", _uniform(rng, (NUM_TAGS,), d_r), "hyper"),
        )
        experts = tuple(
            self.params.add(f"moe/expert_{i}",
                            _uniform(rng, (NUM_TAGS, NUM_TAGS), NUM_TAGS), "moe")
            for i in range(config.k))
        self.moe = TransitionMoe(
            self.params.add("moe/W_moe", _uniform(rng, (config.k, d_r), d_r), "moe"),
            self.params.add("moe/b_moe", _uniform(rng, (config.k,), d_r), "moe"),
            experts,
        )

    def word_vocabs(self):
        return {SHARED_SCOPE: list(self.table.itos)}

    def attribute_info(self):
        return {"ids": self.attr_vocab.ids(), "d_r": self.d_r,
                "provenance": self.provenance, "frozen": self.frozen_embeddings}

    def prepare_examples(self, examples):
        return list(examples)

    def attribute_vector(self, attribute: str) -> Tensor:
        try:
            idx = self._attr_index[attribute]
        except KeyError:
            raise DataError(f"unknown attribute {attribute!r}")
        return row(self.w_att, idx)

    def decoder_for(self, attribute: str) -> DecoderInstance:
        return build_decoder(self.hyper, self.moe, self.attribute_vector(attribute))

    def loss(self, example) -> Tensor:
        dec = self.decoder_for(example.attribute)
        H = encode_matrix(example.token_texts(), self.table, self.fwd, self.bwd)
        P = emissions(H, dec.W, dec.b)
        return chain_nll(P, dec.T, tag_indices(example.tags))

    def predict_tags(self, token_texts, attribute) -> list[str]:
        with no_grad():
            dec = self.decoder_for(attribute)
            H = encode_matrix(token_texts, self.table, self.fwd, self.bwd)
            P = emissions(H, dec.W, dec.b)
            return _predict(P, dec.T)


class MultiCrfModel:
    """Shared encoder; one explicitly parameterized CRF per attribute."""

    def __init__(self, config, vocab, word_itos, vectors, rng):
        self.config = config
        self.attr_vocab = vocab
        self.params = ModelParams()
        self.table, self.fwd, self.bwd = _make_encoder(
            self.params, "encoder", "encoder", word_itos[SHARED_SCOPE], vectors,
            config.d_word, config.d_h, rng)
        self.decoders = {
            a: _make_direct_decoder(self.params, f"decoder/{a}", "decoder",
                                    NUM_TAGS, config.d_h, rng)
            for a in vocab.ids()
        }

    def word_vocabs(self):
        return {SHARED_SCOPE: list(self.table.itos)}

    def attribute_info(self):
        return None

    def prepare_examples(self, examples):
        return list(examples)

    def _decoder(self, attribute):
        try:
            return self.decoders[attribute]
        except KeyError:
            raise DataError(f"unknown attribute {attribute!r}")

    def loss(self, example) -> Tensor:
        dec = self._decoder(example.attribute)
        H = encode_matrix(example.token_texts(), self.table, self.fwd, self.bwd)
        P = emissions(H, dec.W, dec.b)
        return chain_nll(P, dec.T, tag_indices(example.tags))

    def predict_tags(self, token_texts, attribute) -> list[str]:
        with no_grad():
            dec = self._decoder(attribute)
            H = encode_matrix(token_texts, self.table, self.fwd, self.bwd)
            P = emissions(H, dec.W, dec.b)
            return _predict(P, dec.T)


@dataclass(frozen=True)
class MergedExample:
    """All attributes of one product as a single joint-tagset sequence."""

    product_id: str
    tokens: tuple[Token, ...]
    tag_ids: tuple[int, ...]

    def token_texts(self):
        return [t.text for t in self.tokens]


class ExpandedTagsetModel:
    """Shared encoder; a single CRF over the joint 3N+1 tagset."""

    def __init__(self, config, vocab, word_itos, vectors, rng):
        self.config = config
        self.attr_vocab = vocab
        self.tagset: ExpandedTagset = expand_tagset(vocab)
        self.params = ModelParams()
        self.table, self.fwd, self.bwd = _make_encoder(
            self.params, "encoder", "encoder", word_itos[SHARED_SCOPE], vectors,
            config.d_word, config.d_h, rng)
        self.decoder = _make_direct_decoder(
            self.params, "decoder", "decoder", len(self.tagset), config.d_h, rng)

    def word_vocabs(self):
        return {SHARED_SCOPE: list(self.table.itos)}

    def attribute_info(self):
        return None

    def prepare_examples(self, examples) -> list[MergedExample]:
        """Merge per-attribute examples of each product into one sequence.

        Cross-attribute span conflicts are resolved in attribute-vocabulary
        order (earlier attribute keeps the tokens).
        """
        by_product: dict[str, dict] = {}
        for ex in examples:
            slot = by_product.setdefault(ex.product_id, {"tokens": ex.tokens, "spans": {}})
            if [t.text for t in slot["tokens"]] != list(ex.token_texts()):
                raise DataError(
                    f"product {ex.product_id!r} has inconsistent token sequences")
            spans = slot["spans"].setdefault(ex.attribute, set())
            spans.update(tags_to_spans(ex.tags))
        merged = []
        for pid in sorted(by_product):
            slot = by_product[pid]
            tags, _dropped = self.tagset.merge(slot["spans"], len(slot["tokens"]))
            merged.append(MergedExample(
                pid, slot["tokens"], tuple(self.tagset.index(t) for t in tags)))
        return merged

    def loss(self, example: MergedExample) -> Tensor:
        H = encode_matrix(example.token_texts(), self.table, self.fwd, self.bwd)
        P = emissions(H, self.decoder.W, self.decoder.b)
        return chain_nll(P, self.decoder.T, list(example.tag_ids))

    def predict_tags(self, token_texts, attribute) -> list[str]:
        if attribute not in self.tagset.attributes:
            raise DataError(f"unknown attribute {attribute!r}")
        with no_grad():
            H = encode_matrix(token_texts, self.table, self.fwd, self.bwd)
            P = emissions(H, self.decoder.W, self.decoder.b)
            path, _ = viterbi(P, self.decoder.T)
        expanded = [self.tagset.tags[i] for i in path]
        return self.tagset.project(expanded, attribute)


class SharedEmbModel:
    """Shared word embeddings; per-attribute BiLSTM + CRF stacks."""

    def __init__(self, config, vocab, word_itos, vectors, rng):
        self.config = config
        self.attr_vocab = vocab
        self.params = ModelParams()
        self.table = WordEmbeddingTable.from_itos(
            word_itos[SHARED_SCOPE], vectors, config.d_word, rng)
        self.params.add("embedding/W_word", self.table.matrix, "embedding")
        if config.d_h % 2:
            raise DataError(f"d_h must be even to split across directions, got {config.d_h}")
        half = config.d_h // 2
        self.cells = {}
        self.decoders = {}
        for a in vocab.ids():
            fwd = _make_cell(self.params, f"encoder/{a}/lstm_fwd", "encoder",
                             config.d_word, half, rng)
            bwd = _make_cell(self.params, f"encoder/{a}/lstm_bwd", "encoder",
                             config.d_word, half, rng)
            self.cells[a] = (fwd, bwd)
            self.decoders[a] = _make_direct_decoder(
                self.params, f"decoder/{a}", "decoder", NUM_TAGS, config.d_h, rng)

    def word_vocabs(self):
        return {SHARED_SCOPE: list(self.table.itos)}

    def attribute_info(self):
        return None

    def prepare_examples(self, examples):
        return list(examples)

    def _stack(self, attribute):
        if attribute not in self.decoders:
            raise DataError(f"unknown attribute {attribute!r}")
        return self.cells[attribute], self.decoders[attribute]

    def loss(self, example) -> Tensor:
        (fwd, bwd), dec = self._stack(example.attribute)
        H = encode_matrix(example.token_texts(), self.table, fwd, bwd)
        P = emissions(H, dec.W, dec.b)
        return chain_nll(P, dec.T, tag_indices(example.tags))

    def predict_tags(self, token_texts, attribute) -> list[str]:
        with no_grad():
            (fwd, bwd), dec = self._stack(attribute)
            H = encode_matrix(token_texts, self.table, fwd, bwd)
            P = emissions(H, dec.W, dec.b)
            return _predict(P, dec.T)


class PerAttributeModel:
    """Fully disjoint parameter sets: one independent model per attribute."""

    def __init__(self, config, vocab, word_itos, vectors, rng):
        self.config = config
        self.attr_vocab = vocab
        self.params = ModelParams()
        self._word_itos = {}
        self.stacks = {}
        for a in vocab.ids():
            itos = word_itos.get(a)
            if itos is None:
                raise DataError(f"no word vocabulary for attribute {a!r}")
            self._word_itos[a] = list(itos)
            table, fwd, bwd = _make_encoder(
                self.params, f"per_attr/{a}/encoder", a, itos, vectors,
                config.d_word, config.d_h, rng)
            dec = _make_direct_decoder(
                self.params, f"per_attr/{a}/decoder", a, NUM_TAGS, config.d_h, rng)
            self.stacks[a] = (table, fwd, bwd, dec)

    def word_vocabs(self):
        return dict(self._word_itos)

    def attribute_info(self):
        return None

    def prepare_examples(self, examples):
        return list(examples)

    def _stack(self, attribute):
        try:
            return self.stacks[attribute]
        except KeyError:
            raise DataError(f"unknown attribute {attribute!r}")

    def loss(self, example) -> Tensor:
        table, fwd, bwd, dec = self._stack(example.attribute)
        H = encode_matrix(example.token_texts(), table, fwd, bwd)
        P = emissions(H, dec.W, dec.b)
        return chain_nll(P, dec.T, tag_indices(example.tags))

    def predict_tags(self, token_texts, attribute) -> list[str]:
        with no_grad():
            table, fwd, bwd, dec = self._stack(attribute)
            H = encode_matrix(token_texts, table, fwd, bwd)
            P = emissions(H, dec.W, dec.b)
            return _predict(P, dec.T)


def derive_word_itos(variant: str, examples) -> dict[str, list[str]]:
    """Deterministic word vocabularies from the training split."""
    if variant == "per_attribute":
        per_attr: dict[str, set] = {}
        for ex in examples:
            per_attr.setdefault(ex.attribute, set()).update(ex.token_texts())
        return {a: [PAD, UNK] + sorted(toks) for a, toks in per_attr.items()}
    tokens = set()
    for ex in examples:
        tokens.update(ex.token_texts())
    return {SHARED_SCOPE: [PAD, UNK] + sorted(tokens)}


def build_variant(config, vocab: AttributeVocab, word_itos: dict,
                  attr_table: AttributeEmbeddingTable | None = None,
                  vectors: dict | None = None,
                  rng: np.random.Generator | None = None):
    """Instantiate a model variant with freshly initialized parameters."""
    if config.variant not in VARIANTS:
        raise DataError(
            f"unsupported variant {config.variant!r}; choose one of {VARIANTS}")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if config.variant == "adatag":
        if attr_table is None:
            raise DataError("variant 'adatag' requires an attribute embedding table")
        return AdaptiveModel(config, vocab, word_itos, attr_table, vectors, rng)
    if config.variant == "adatag_random_emb":
        table = random_table(vocab.ids(), config.d_r, config.seed)
        return AdaptiveModel(config, vocab, word_itos, table, vectors, rng)
    if config.variant == "bilstm_multicrf":
        return MultiCrfModel(config, vocab, word_itos, vectors, rng)
    if config.variant == "n_tag_sets":
        return ExpandedTagsetModel(config, vocab, word_itos, vectors, rng)
    if config.variant == "bilstm_crf_shared_emb":
        return SharedEmbModel(config, vocab, word_itos, vectors, rng)
    return PerAttributeModel(config, vocab, word_itos, vectors, rng)
