"""Interned object symbols and integer multisets.

Membrane systems shuffle enormous numbers of identical objects around, so
the representation here is deliberately plain: a symbol is an interned
(base, params) pair and a region's contents is a dict mapping symbol to
count.  Interning makes symbol equality a pointer comparison, which is
where a naive implementation spends most of its time.
"""

from __future__ import annotations

from typing import Dict, Iterable, Iterator, Mapping, Tuple


class Sym:
    """An object species: a base name plus a tuple of integer/str parameters.

    Instances are interned; use :func:`sym` to obtain one.  Equality and
    hashing are identity-based.
    """

    __slots__ = ("base", "params", "_hash", "_text")

    def __init__(self, base: str, params: Tuple) -> None:
        self.base = base
        self.params = params
        self._hash = hash((base, params))
        if params:
            self._text = base + "{" + ",".join(str(p) for p in params) + "}"
        else:
            self._text = base

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return self._text

    @property
    def text(self) -> str:
        return self._text


_INTERN: Dict[Tuple[str, Tuple], Sym] = {}


def sym(base: str, *params) -> Sym:
    """Return the unique Sym for this base and parameter tuple."""
    key = (base, params)
    s = _INTERN.get(key)
    if s is None:
        s = Sym(base, params)
        _INTERN[key] = s
    return s


def parse_sym(text: str) -> Sym:
    """Parse ``base`` or ``base{p1,p2,...}`` back into a Sym.

    Numeric-looking parameters become ints so that parse(render(s)) is s.
    """
    text = text.strip()
    if text.endswith("}"):
        brace = text.index("{")
        base = text[:brace]
        inner = text[brace + 1 : -1]
        params = []
        for piece in inner.split(","):
            piece = piece.strip()
            if piece.lstrip("-").isdigit():
                params.append(int(piece))
            else:
                params.append(piece)
        return sym(base, *params)
    return sym(text)


class Multiset:
    """A finite multiset of Syms with non-negative integer counts.

    Zero-count entries are never stored, so two multisets with equal
    contents have equal dicts.
    """

    __slots__ = ("counts",)

    def __init__(self, counts: Mapping[Sym, int] | None = None) -> None:
        self.counts: Dict[Sym, int] = {}
        if counts:
            for s, n in counts.items():
                if n < 0:
                    raise ValueError(f"negative multiplicity for {s}: {n}")
                if n:
                    self.counts[s] = n

    @classmethod
    def of(cls, *items: Sym | Tuple[Sym, int]) -> "Multiset":
        m = cls()
        for it in items:
            if isinstance(it, tuple):
                m.add(it[0], it[1])
            else:
                m.add(it)
        return m

    def add(self, s: Sym, n: int = 1) -> None:
        if n == 0:
            return
        c = self.counts.get(s, 0) + n
        if c < 0:
            raise ValueError(f"multiplicity of {s} went negative")
        if c:
            self.counts[s] = c
        else:
            del self.counts[s]

    def remove(self, s: Sym, n: int = 1) -> None:
        self.add(s, -n)

    def update(self, other: "Multiset | Mapping[Sym, int]", scale: int = 1) -> None:
        items = other.counts.items() if isinstance(other, Multiset) else other.items()
        for s, n in items:
            self.add(s, n * scale)

    def get(self, s: Sym) -> int:
        return self.counts.get(s, 0)

    def __getitem__(self, s: Sym) -> int:
        return self.counts.get(s, 0)

    def __contains__(self, s: Sym) -> bool:
        return s in self.counts

    def __iter__(self) -> Iterator[Sym]:
        return iter(self.counts)

    def items(self) -> Iterable[Tuple[Sym, int]]:
        return self.counts.items()

    def total(self) -> int:
        return sum(self.counts.values())

    def contains(self, other: "Multiset | Mapping[Sym, int]") -> bool:
        items = other.counts.items() if isinstance(other, Multiset) else other.items()
        return all(self.counts.get(s, 0) >= n for s, n in items)

    def max_fit(self, other: "Multiset | Mapping[Sym, int]") -> int:
        """Largest k such that k copies of `other` fit inside self.

        An empty `other` fits arbitrarily often; callers must handle that.
        """
        items = other.counts.items() if isinstance(other, Multiset) else other.items()
        k = None
        for s, n in items:
            have = self.counts.get(s, 0)
            fit = have // n
            if k is None or fit < k:
                k = fit
                if k == 0:
                    return 0
        if k is None:
            raise ValueError("max_fit of empty pattern is unbounded")
        return k

    def copy(self) -> "Multiset":
        m = Multiset()
        m.counts = dict(self.counts)
        return m

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Multiset):
            return self.counts == other.counts
        return NotImplemented

    def __len__(self) -> int:
        return len(self.counts)

    def __repr__(self) -> str:
        if not self.counts:
            return "~"
        parts = []
        for s in sorted(self.counts, key=lambda t: t.text):
            n = self.counts[s]
            parts.append(s.text if n == 1 else f"{s.text}^{n}")
        return " ".join(parts)
