"""Label scheme for BIO2 sequence labeling.

All internal code assumes BIO2: every entity starts with B-X and continues
with I-X; O marks non-entity tokens. Ingested labels are normalized to BIO2
at the parsing boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field


OUTSIDE = "O"


class LabelError(ValueError):
    """Raised for unknown label strings or invalid BIO sequences."""


@dataclass(frozen=True)
class LabelScheme:
    """Ordered entity types plus the derived B/I/O label space.

    Label indices are deterministic given the type order: O is index 0,
    then (B-T, I-T) pairs in type order. L = 2 * len(entity_types) + 1.
    """

    entity_types: tuple[str, ...]
    labels: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        if not self.entity_types:
            raise LabelError("scheme needs at least one entity type")
        if len(set(self.entity_types)) != len(self.entity_types):
            raise LabelError("duplicate entity types: %r" % (self.entity_types,))
        names = [OUTSIDE]
        for t in self.entity_types:
            names.append(f"B-{t}")
            names.append(f"I-{t}")
        object.__setattr__(self, "entity_types", tuple(self.entity_types))
        object.__setattr__(self, "labels", tuple(names))

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    @property
    def outside_index(self) -> int:
        return 0

    @property
    def begin_indices(self) -> tuple[int, ...]:
        return tuple(1 + 2 * i for i in range(len(self.entity_types)))

    @property
    def inside_indices(self) -> tuple[int, ...]:
        return tuple(2 + 2 * i for i in range(len(self.entity_types)))

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LabelError(f"unknown label {label!r}") from None

    def name(self, index: int) -> str:
        return self.labels[index]

    def begin_index(self, entity_type: str) -> int:
        return 1 + 2 * self.entity_types.index(entity_type)

    def inside_index(self, entity_type: str) -> int:
        return 2 + 2 * self.entity_types.index(entity_type)

    def type_of(self, index: int) -> str | None:
        """Entity type of a label index, None for O."""
        if index == 0:
            return None
        return self.entity_types[(index - 1) // 2]

    def is_begin(self, index: int) -> bool:
        return index != 0 and (index - 1) % 2 == 0

    def is_inside(self, index: int) -> bool:
        return index != 0 and (index - 1) % 2 == 1


def normalize_to_bio2(names: list[str], scheme: LabelScheme) -> list[int]:
    """Convert IOB1 or BIO2 label names to BIO2 indices.

    The single deterministic rule: an I-X that does not continue a running
    X entity becomes B-X. Valid BIO2 input is a fixed point; valid IOB1
    input converts to its canonical BIO2 form.
    """
    out: list[int] = []
    prev_type: str | None = None
    for name in names:
        idx = scheme.index(name)
        if scheme.is_inside(idx):
            cur_type = scheme.type_of(idx)
            if prev_type != cur_type:
                idx = scheme.begin_index(cur_type)
        prev_type = scheme.type_of(idx)
        out.append(idx)
    return out


def validate_bio2(indices: list[int], scheme: LabelScheme) -> None:
    """Raise LabelError unless every I-X is preceded by B-X or I-X of type X."""
    prev_type: str | None = None
    for pos, idx in enumerate(indices):
        if idx < 0 or idx >= scheme.num_labels:
            raise LabelError(f"label index {idx} out of range at position {pos}")
        if scheme.is_inside(idx) and prev_type != scheme.type_of(idx):
            raise LabelError(
                f"invalid BIO2: {scheme.name(idx)} at position {pos} "
                f"does not continue an entity of its type"
            )
        prev_type = scheme.type_of(idx)


def entity_spans(indices: list[int], scheme: LabelScheme) -> list[tuple[str, int, int]]:
    """Extract (type, start, end) entity spans, end exclusive.

    Tolerant of invalid transitions in predicted sequences: an I-X that does
    not continue an X entity opens a new one (the conlleval convention), so
    unmasked model outputs still evaluate sensibly.
    """
    spans: list[tuple[str, int, int]] = []
    open_type: str | None = None
    start = 0
    for pos, idx in enumerate(indices):
        t = scheme.type_of(idx)
        if open_type is not None and (t != open_type or scheme.is_begin(idx)):
            spans.append((open_type, start, pos))
            open_type = None
        if t is not None and open_type is None:
            open_type = t
            start = pos
    if open_type is not None:
        spans.append((open_type, start, len(indices)))
    return spans
