"""Vocabulary layouts shared by the procedural generators and the tasks."""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class VocabSpec:
    """Token-id layout.

    Elements occupy ``[0, n_elements)``. Role ids (separator, pad and any
    task-specific markers) follow. ``sep`` and ``pad`` may be ``None`` for
    fixed-length language-model sources such as Dyck.
    """

    size: int
    n_elements: int
    sep: int | None = None
    pad: int | None = None
    extra: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        ids = [i for i in (self.sep, self.pad, *self.extra.values()) if i is not None]
        if len(set(ids)) != len(ids):
            raise ValueError(f"role ids are not distinct: {ids}")
        if any(i < self.n_elements or i >= self.size for i in ids):
            raise ValueError(f"role ids {ids} must lie in [{self.n_elements}, {self.size})")
        if self.n_elements > self.size:
            raise ValueError("n_elements exceeds vocabulary size")

    def __getitem__(self, role: str) -> int:
        return self.extra[role]

    def to_dict(self) -> dict:
        return {"size": self.size, "n_elements": self.n_elements, "sep": self.sep,
                "pad": self.pad, "extra": dict(self.extra)}

    @classmethod
    def from_dict(cls, d: dict) -> "VocabSpec":
        return cls(d["size"], d["n_elements"], d.get("sep"), d.get("pad"), dict(d.get("extra", {})))

    def with_prefixes(self, n: int) -> "VocabSpec":
        """Append ``n`` source-prefix ids after the current vocabulary."""
        extra = dict(self.extra)
        for i in range(n):
            extra[f"prefix_{i}"] = self.size + i
        return VocabSpec(self.size + n, self.n_elements, self.sep, self.pad, extra)


def sequence_vocab(n_elements: int = 100, marker: str | None = None) -> VocabSpec:
    """Elements, one separator, one pad and optionally one marker.

    With the default 100 elements this gives the 102-token layout of the
    plain transforms and the 103-token layout of union/delete/stack.
    """
    extra = {marker: n_elements + 2} if marker else {}
    return VocabSpec(n_elements + 2 + len(extra), n_elements, n_elements, n_elements + 1, extra)


def dyck_vocab(k: int) -> VocabSpec:
    """Openers are ``0..k-1``, the matching closer of ``i`` is ``k + i``."""
    return VocabSpec(2 * k, 2 * k)


MARKER_FOR_KIND = {"union": "delim", "delete": "delim", "stack": "pop"}


def vocab_for(kind: str, n_elements: int = 100, k: int = 4) -> VocabSpec:
    if kind in ("dyck", "dyck_shuffle"):
        return dyck_vocab(k)
    if kind == "eca110":
        return VocabSpec(2, 2)
    return sequence_vocab(n_elements, MARKER_FOR_KIND.get(kind))
