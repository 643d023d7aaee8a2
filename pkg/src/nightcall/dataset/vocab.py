"""Species vocabulary: contiguous ids, Latin names, and 4-letter short codes."""

from __future__ import annotations

from dataclasses import dataclass, field

from nightcall.errors import UnknownSpeciesError, ValidationError


def short_code(latin_name: str) -> str:
    """Derive the 4-letter code from a Latin binomial.

    First two letters of the genus plus first two of the species epithet,
    each pair capitalized as an initial-upper bigram, e.g.
    "Grus grus" -> "GrGr".
    """
    parts = latin_name.split()
    if len(parts) < 2:
        raise ValidationError(f"not a Latin binomial: {latin_name!r}")
    genus, epithet = parts[0], parts[1]
    if len(genus) < 2 or len(epithet) < 2:
        raise ValidationError(f"name parts too short: {latin_name!r}")
    return genus[:2].capitalize() + epithet[:2].capitalize()


@dataclass(frozen=True)
class SpeciesVocab:
    """Ordered species list with contiguous ids 0..N-1.

    Latin names and short codes must both be unique; ids follow entry
    order. Lookups are O(1) via lazily built maps.
    """

    entries: tuple[tuple[int, str, str], ...]
    _by_code: dict = field(default_factory=dict, repr=False, compare=False)
    _by_name: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        codes, names = set(), set()
        for i, (sid, name, code) in enumerate(self.entries):
            if sid != i:
                raise ValidationError(
                    f"species ids must be contiguous 0..N-1, got {sid} at position {i}"
                )
            if len(code) != 4:
                raise ValidationError(f"short code must be 4 chars: {code!r}")
            if name in names:
                raise ValidationError(f"duplicate latin name: {name!r}")
            if code in codes:
                raise ValidationError(f"duplicate short code: {code!r}")
            names.add(name)
            codes.add(code)
            self._by_code[code] = sid
            self._by_name[name] = sid

    @classmethod
    def from_names(cls, latin_names: list[str]) -> "SpeciesVocab":
        """Build a vocab from Latin names, deriving codes automatically."""
        entries = tuple(
            (i, name, short_code(name)) for i, name in enumerate(latin_names)
        )
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def id_of(self, code_or_name: str) -> int:
        if code_or_name in self._by_code:
            return self._by_code[code_or_name]
        if code_or_name in self._by_name:
            return self._by_name[code_or_name]
        raise UnknownSpeciesError(code_or_name)

    def contains_code(self, code: str) -> bool:
        return code in self._by_code

    def code_of(self, species_id: int) -> str:
        self._check_id(species_id)
        return self.entries[species_id][2]

    def name_of(self, species_id: int) -> str:
        self._check_id(species_id)
        return self.entries[species_id][1]

    def _check_id(self, species_id: int):
        if not 0 <= species_id < len(self.entries):
            raise UnknownSpeciesError(str(species_id))

    def restrict(self, species_ids: list[int]) -> "SpeciesVocab":
        """New vocab containing only the given ids, renumbered but order-preserving."""
        keep = sorted(set(species_ids))
        for sid in keep:
            self._check_id(sid)
        entries = tuple(
            (new_id, self.entries[sid][1], self.entries[sid][2])
            for new_id, sid in enumerate(keep)
        )
        return SpeciesVocab(entries)

    def to_json(self) -> list[dict]:
        return [
            {"id": sid, "latin_name": name, "code": code}
            for sid, name, code in self.entries
        ]

    @classmethod
    def from_json(cls, data: list[dict]) -> "SpeciesVocab":
        return cls(
            tuple((d["id"], d["latin_name"], d["code"]) for d in data)
        )
