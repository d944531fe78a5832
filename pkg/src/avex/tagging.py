"""BIOE tag scheme: span/tag conversions and the expanded joint tagset.

Values are marked with B (begin), I (inside), E (end); everything else
is O.  A single-token value is a lone B.  Spans are inclusive token
index ranges.
"""

from __future__ import annotations

from dataclasses import dataclass

TAGS = ("B", "I", "O", "E")
TAG_TO_INDEX = {t: i for i, t in enumerate(TAGS)}
NUM_TAGS = len(TAGS)
OUTSIDE = "O"


@dataclass(frozen=True, order=True)
class Span:
    """Inclusive token index range [start, end]."""

    start: int
    end: int


def tag_indices(tags) -> list[int]:
    """Map tag strings to indices into TAGS."""
    try:
        return [TAG_TO_INDEX[t] for t in tags]
    except KeyError as e:
        raise ValueError(f"unknown tag {e.args[0]!r}; expected one of {TAGS}")


def tags_from_indices(indices) -> list[str]:
    out = []
    for z in indices:
        if not 0 <= z < NUM_TAGS:
            raise ValueError(f"tag index {z} out of range 0..{NUM_TAGS - 1}")
        out.append(TAGS[z])
    return out


def spans_to_tags(spans, length: int) -> list[str]:
    """Encode disjoint spans over a sequence of ``length`` tokens.

    Spans must lie inside the sequence and must not overlap.
    """
    tags = [OUTSIDE] * length
    for span in sorted(spans):
        if not (0 <= span.start <= span.end < length):
            raise ValueError(f"span {span} out of range for length {length}")
        if any(tags[i] != OUTSIDE for i in range(span.start, span.end + 1)):
            raise ValueError(f"span {span} overlaps a previous span")
        if span.start == span.end:
            tags[span.start] = "B"
        else:
            tags[span.start] = "B"
            tags[span.end] = "E"
            for i in range(span.start + 1, span.end):
                tags[i] = "I"
    return tags


def tags_to_spans(tags) -> set[Span]:
    """Decode spans leniently, repairing ill-formed sequences.

    A span opens at each B, extends through consecutive I's and absorbs
    an immediately following E; a dangling I run closes at its last I.
    I or E without an open span is ignored.
    """
    spans = set()
    i = 0
    n = len(tags)
    while i < n:
        if tags[i] != "B":
            i += 1
            continue
        j = i
        while j + 1 < n and tags[j + 1] == "I":
            j += 1
        if j + 1 < n and tags[j + 1] == "E":
            j += 1
        spans.add(Span(i, j))
        i = j + 1
    return spans


def is_valid(tags) -> bool:
    """Strict well-formedness: every value is a lone B or B I* E."""
    state = "out"
    for t in tags:
        if t == "B":
            if state == "in_i":
                return False
            state = "after_b"
        elif t == "I":
            if state == "out":
                return False
            state = "in_i"
        elif t == "E":
            if state == "out":
                return False
            state = "out"
        elif t == "O":
            if state == "in_i":
                return False
            state = "out"
        else:
            return False
    return state != "in_i"


class ExpandedTagset:
    """Joint tagset with one B/I/E triple per attribute plus a shared O.

    Tag order is [B-a, I-a, E-a for each attribute in order] + [O], so a
    single chain model can label all attributes of a sentence at once.
    """

    def __init__(self, attribute_ids):
        self.attributes = tuple(attribute_ids)
        if len(set(self.attributes)) != len(self.attributes):
            raise ValueError("duplicate attribute ids in expanded tagset")
        tags = []
        for a in self.attributes:
            tags.extend([f"B-{a}", f"I-{a}", f"E-{a}"])
        tags.append(OUTSIDE)
        self.tags = tuple(tags)
        self._index = {t: i for i, t in enumerate(self.tags)}

    def __len__(self):
        return len(self.tags)

    def index(self, tag: str) -> int:
        try:
            return self._index[tag]
        except KeyError:
            raise ValueError(f"tag {tag!r} not in expanded tagset")

    def to_expanded(self, attribute: str, tags) -> list[str]:
        """Suffix one attribute's BIOE sequence into joint tags."""
        if attribute not in self.attributes:
            raise ValueError(f"unknown attribute {attribute!r}")
        return [OUTSIDE if t == OUTSIDE else f"{t}-{attribute}" for t in tags]

    def project(self, expanded_tags, attribute: str) -> list[str]:
        """Keep one attribute's tags, mapping everything else to O."""
        if attribute not in self.attributes:
            raise ValueError(f"unknown attribute {attribute!r}")
        suffix = f"-{attribute}"
        out = []
        for t in expanded_tags:
            if t != OUTSIDE and t.endswith(suffix):
                out.append(t[: t.index("-")])
            else:
                out.append(OUTSIDE)
        return out

    def merge(self, spans_by_attribute, length: int):
        """Combine per-attribute spans into one joint sequence.

        Attributes are laid down in tagset order; a span that overlaps
        positions already claimed by an earlier attribute is dropped.
        Returns (tags, number of dropped spans).
        """
        tags = [OUTSIDE] * length
        dropped = 0
        for a in self.attributes:
            for span in sorted(spans_by_attribute.get(a, ())):
                if not (0 <= span.start <= span.end < length):
                    raise ValueError(f"span {span} out of range for length {length}")
                if any(tags[i] != OUTSIDE for i in range(span.start, span.end + 1)):
                    dropped += 1
                    continue
                base = spans_to_tags([span], length)
                for i in range(span.start, span.end + 1):
                    tags[i] = f"{base[i]}-{a}"
        return tags, dropped

    def spans_by_attribute(self, expanded_tags) -> dict[str, set[Span]]:
        """Decode a joint sequence into per-attribute span sets."""
        return {
            a: tags_to_spans(self.project(expanded_tags, a))
            for a in self.attributes
        }


def expand_tagset(attribute_ids) -> ExpandedTagset:
    """Build the joint tagset for an ordered attribute vocabulary."""
    ids = list(attribute_ids.ids() if hasattr(attribute_ids, "ids") else attribute_ids)
    return ExpandedTagset(ids)
