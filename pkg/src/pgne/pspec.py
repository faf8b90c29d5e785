"""Textual exchange format for membrane systems.

A system file is a token stream with four sections:

    system 'name                      # optional
    alphabet:                         # optional, validated when present
      cyc1 mcand ...
    membranes:
      [ '0 ^0 { mplier^4 }
        [ '1 ^0 { cyc1 mcand^3 } ]
        [ '2 ^0 ] ]
    rules:
      rule 'RS01 at '1 ^0 -> ^0 in( mcand -> mcand1 )
      rule 'RS31 at '1 ^+ -> ^- in( cyc4 -> cyc6 ) out( none -> waste )
      rule 'RS05 at '0 ^0 -> ^0 child( '1 ^0 -> ^+ : round0 -> none )
    priority:
      'RS07 > 'RS08

`#` comments run to end of line.  Symbol atoms reuse the multiset
notation `base{p1,p2}^count`; `none` denotes the empty multiset.
Serialization is canonical: declaration order for rules, tree order for
membranes, sorted symbol text inside every multiset, sorted priority
pairs, two-space indent per tree depth.  parse(serialize(s)) is
structurally equal to s.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

from .engine import (MINUS, NEUTRAL, PLUS, ChildPattern, MembraneNode,
                     PSystem, RuleSpec)
from .symbols import Multiset, Sym, sym

_IDENT = re.compile(r"[A-Za-z0-9_@.]+")
_CHARGE_TEXT = {NEUTRAL: "^0", PLUS: "^+", MINUS: "^-"}
_CHARGE_VAL = {"0": NEUTRAL, "+": PLUS, "-": MINUS}
_SECTIONS = ("alphabet", "membranes", "rules", "priority")


class PSpecError(Exception):
    """Malformed system text; carries the offending position."""

    def __init__(self, message: str, line: int = 0, col: int = 0) -> None:
        where = f" (line {line}, col {col})" if line else ""
        super().__init__(message + where)
        self.line = line
        self.col = col


# ============================================================
# Lexer
# ============================================================


@dataclass
class Token:
    kind: str  # word label charge symbol punct section eof
    text: str
    line: int
    col: int
    # symbol extras
    symbol: Optional[Sym] = None
    count: int = 1
    charge: int = NEUTRAL


def _lex(text: str) -> Iterator[Token]:
    line, col = 1, 1
    i, n = 0, len(text)

    def err(msg: str) -> PSpecError:
        return PSpecError(msg, line, col)

    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        tline, tcol = line, col
        if c in "[](){}>:":
            yield Token("punct", c, tline, tcol)
            i += 1
            col += 1
            continue
        if c == "-":
            if text[i:i + 2] != "->":
                raise err("stray '-'; expected '->'")
            yield Token("punct", "->", tline, tcol)
            i += 2
            col += 2
            continue
        if c == "'":
            m = _IDENT.match(text, i + 1)
            if not m:
                raise err("empty label after quote")
            yield Token("label", m.group(), tline, tcol)
            col += m.end() - i
            i = m.end()
            continue
        if c == "^":
            if i + 1 < n and text[i + 1] in _CHARGE_VAL:
                yield Token("charge", text[i:i + 2], tline, tcol,
                            charge=_CHARGE_VAL[text[i + 1]])
                i += 2
                col += 2
                continue
            raise err("bad charge; expected ^0, ^+ or ^-")
        m = _IDENT.match(text, i)
        if not m:
            raise err(f"unexpected character {c!r}")
        atom = m.group()
        j = m.end()
        params: List[object] = []
        has_params = False
        if j < n and text[j] == "{":
            has_params = True
            k = text.find("}", j)
            if k < 0:
                raise err("unterminated parameter list")
            inner = text[j + 1:k]
            if inner.strip():
                for piece in inner.split(","):
                    piece = piece.strip()
                    if not piece:
                        raise err("empty parameter")
                    if piece.lstrip("-").isdigit():
                        params.append(int(piece))
                    elif _IDENT.fullmatch(piece):
                        params.append(piece)
                    else:
                        raise err(f"bad parameter {piece!r}")
            j = k + 1
        count = 1
        has_count = False
        if j < n and text[j] == "^" and j + 1 < n and text[j + 1].isdigit():
            has_count = True
            k = j + 1
            while k < n and text[k].isdigit():
                k += 1
            count = int(text[j + 1:k])
            j = k
        if has_params or has_count:
            yield Token("symbol", text[i:j], tline, tcol,
                        symbol=sym(atom, *params), count=count)
        else:
            # Bare word: keyword or plain symbol, parser decides.
            yield Token("word", atom, tline, tcol, symbol=sym(atom))
        col += j - i
        i = j
    yield Token("eof", "", line, col)


# ============================================================
# Parser
# ============================================================


class _Parser:
    def __init__(self, text: str) -> None:
        self.tokens = list(_lex(text))
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def fail(self, msg: str, t: Optional[Token] = None) -> PSpecError:
        t = t or self.peek()
        return PSpecError(msg, t.line, t.col)

    def expect_punct(self, text: str) -> Token:
        t = self.next()
        if t.kind != "punct" or t.text != text:
            raise self.fail(f"expected {text!r}, found {t.text!r}", t)
        return t

    def expect_label(self, what: str) -> str:
        t = self.next()
        if t.kind != "label":
            raise self.fail(f"expected {what} label, found {t.text!r}", t)
        return t.text

    def expect_charge(self) -> int:
        t = self.next()
        if t.kind != "charge":
            raise self.fail(f"expected charge, found {t.text!r}", t)
        return t.charge

    def at_word(self, *words: str) -> bool:
        t = self.peek()
        return t.kind == "word" and t.text in words

    def at_section(self) -> bool:
        if not self.at_word(*_SECTIONS):
            return False
        nxt = self.tokens[self.pos + 1]
        return nxt.kind == "punct" and nxt.text == ":"

    # ---- multisets ----

    def multiset(self, stop: Tuple[str, ...]) -> Dict[Sym, int]:
        out: Dict[Sym, int] = {}
        if self.at_word("none"):
            self.next()
            return out
        while True:
            t = self.peek()
            if t.kind == "punct" and t.text in stop:
                break
            if t.kind not in ("word", "symbol"):
                break
            self.next()
            if t.count < 1:
                raise self.fail("zero count is not allowed", t)
            out[t.symbol] = out.get(t.symbol, 0) + t.count
        if not out:
            raise self.fail("expected a multiset or 'none'")
        return out

    # ---- membranes ----

    def membrane(self, seen: Dict[str, Token]) -> MembraneNode:
        self.expect_punct("[")
        me = self.peek()
        label = self.expect_label("membrane")
        if label in seen:
            raise self.fail(f"duplicate membrane label '{label}", me)
        seen[label] = me
        charge = self.expect_charge()
        contents: Dict[Sym, int] = {}
        if self.peek().kind == "punct" and self.peek().text == "{":
            self.next()
            contents = self.multiset(stop=("}",))
            self.expect_punct("}")
        children: List[MembraneNode] = []
        while self.peek().kind == "punct" and self.peek().text == "[":
            children.append(self.membrane(seen))
        self.expect_punct("]")
        return MembraneNode(label, children=children,
                            contents=Multiset(contents), charge=charge)

    # ---- rules ----

    def charge_pair(self) -> Tuple[int, int]:
        pre = self.expect_charge()
        self.expect_punct("->")
        post = self.expect_charge()
        return pre, post

    def mset_pair(self) -> Tuple[Dict[Sym, int], Dict[Sym, int]]:
        self.expect_punct("(")
        consume = self.multiset(stop=("->",))
        self.expect_punct("->")
        produce = self.multiset(stop=(")",))
        self.expect_punct(")")
        return consume, produce

    def rule(self) -> RuleSpec:
        t = self.next()
        if not (t.kind == "word" and t.text == "rule"):
            raise self.fail(f"expected 'rule', found {t.text!r}", t)
        rid = self.expect_label("rule")
        t = self.next()
        if not (t.kind == "word" and t.text == "at"):
            raise self.fail(f"expected 'at', found {t.text!r}", t)
        target = self.expect_label("target")
        pre, post = self.charge_pair()
        clauses: Dict[str, object] = {}
        while self.at_word("in", "out", "child"):
            t = self.next()
            if t.text in clauses:
                raise self.fail(f"duplicate clause {t.text!r}", t)
            if t.text == "child":
                self.expect_punct("(")
                clabel = self.expect_label("child")
                cpre, cpost = self.charge_pair()
                self.expect_punct(":")
                consume = self.multiset(stop=("->",))
                self.expect_punct("->")
                produce = self.multiset(stop=(")",))
                self.expect_punct(")")
                clauses["child"] = ChildPattern(clabel, cpre, cpost,
                                                consume, produce)
            else:
                clauses[t.text] = self.mset_pair()
        cin = clauses.get("in", ({}, {}))
        cout = clauses.get("out", ({}, {}))
        return RuleSpec(id=rid, target=target, pre=pre, post=post,
                        consume_out=cout[0], produce_out=cout[1],
                        consume_in=cin[0], produce_in=cin[1],
                        child=clauses.get("child"))

    # ---- whole file ----

    def system(self) -> PSystem:
        name = ""
        if self.at_word("system"):
            self.next()
            name = self.expect_label("system name")
        seen_sections: List[str] = []
        alphabet: Optional[List[str]] = None
        tree: Optional[MembraneNode] = None
        rules: List[RuleSpec] = []
        rule_ids: Dict[str, Token] = {}
        priority: List[Tuple[str, str]] = []
        while self.peek().kind != "eof":
            if not self.at_section():
                raise self.fail("expected a section header")
            head = self.next().text
            self.expect_punct(":")
            if head in seen_sections:
                raise self.fail(f"duplicate section {head!r}")
            seen_sections.append(head)
            if head == "alphabet":
                alphabet = []
                while self.peek().kind == "word" and not self.at_section():
                    alphabet.append(self.next().text)
            elif head == "membranes":
                tree = self.membrane({})
            elif head == "rules":
                while self.at_word("rule") and not self.at_section():
                    t = self.peek()
                    r = self.rule()
                    if r.id in rule_ids:
                        raise self.fail(f"duplicate rule id '{r.id}", t)
                    rule_ids[r.id] = t
                    rules.append(r)
            else:
                while self.peek().kind == "label":
                    a = self.expect_label("rule")
                    self.expect_punct(">")
                    b = self.expect_label("rule")
                    priority.append((a, b))
        if tree is None:
            raise self.fail("missing membranes section")
        sysd = PSystem(tree, rules, priority, name)
        _check_refs(sysd, rule_ids, alphabet)
        return sysd


def _rule_syms(r: RuleSpec) -> Iterator[Sym]:
    for ms in (r.consume_out, r.produce_out, r.consume_in, r.produce_in):
        yield from ms
    if r.child:
        yield from r.child.consume
        yield from r.child.produce


def _check_refs(sysd: PSystem, rule_ids: Dict[str, Token],
                alphabet: Optional[List[str]]) -> None:
    labels = {}

    def walk(node: MembraneNode) -> None:
        labels[node.label] = node
        for ch in node.children:
            walk(ch)

    walk(sysd.tree)
    for r in sysd.rules:
        t = rule_ids[r.id]
        if r.target not in labels:
            raise PSpecError(f"rule '{r.id} targets unknown membrane "
                             f"'{r.target}", t.line, t.col)
        if r.child:
            kids = [c.label for c in labels[r.target].children]
            if r.child.label not in kids:
                raise PSpecError(f"rule '{r.id}: '{r.child.label} is not a "
                                 f"child of '{r.target}", t.line, t.col)
    for a, b in sysd.priority:
        for rid in (a, b):
            if rid not in rule_ids:
                raise PSpecError(f"priority names unknown rule '{rid}")
    if alphabet is not None:
        allowed = set(alphabet)
        used = set()
        for node in labels.values():
            used.update(s.base for s in node.contents.counts)
        for r in sysd.rules:
            used.update(s.base for s in _rule_syms(r))
        missing = sorted(used - allowed)
        if missing:
            raise PSpecError(f"symbols missing from alphabet: "
                             f"{', '.join(missing)}")


def parse_system(text: str) -> PSystem:
    """Parse system text; raises PSpecError with position on bad input."""
    return _Parser(text).system()


# ============================================================
# Serializer
# ============================================================


def _check_ident(kind: str, text: str) -> str:
    if not _IDENT.fullmatch(text):
        raise PSpecError(f"{kind} {text!r} is not serializable")
    return text


def _mset_text(ms: Dict[Sym, int]) -> str:
    if not ms:
        return "none"
    parts = []
    for s in sorted(ms, key=lambda s: s.text):
        cnt = ms[s]
        _check_ident("symbol base", s.base)
        parts.append(s.text if cnt == 1 else f"{s.text}^{cnt}")
    return " ".join(parts)


def _membrane_lines(node: MembraneNode, depth: int, out: List[str]) -> None:
    pad = "  " * depth
    head = (f"{pad}[ '{_check_ident('label', node.label)} "
            f"{_CHARGE_TEXT[node.charge]}")
    if node.contents.counts:
        head += " { " + _mset_text(node.contents.counts) + " }"
    if not node.children:
        out.append(head + " ]")
        return
    out.append(head)
    for ch in node.children:
        _membrane_lines(ch, depth + 1, out)
    out.append(pad + "]")


def _rule_text(r: RuleSpec) -> str:
    parts = [f"rule '{_check_ident('rule id', r.id)} "
             f"at '{_check_ident('label', r.target)} "
             f"{_CHARGE_TEXT[r.pre]} -> {_CHARGE_TEXT[r.post]}"]
    if r.consume_in or r.produce_in:
        parts.append(f"in( {_mset_text(r.consume_in)} -> "
                     f"{_mset_text(r.produce_in)} )")
    if r.consume_out or r.produce_out:
        parts.append(f"out( {_mset_text(r.consume_out)} -> "
                     f"{_mset_text(r.produce_out)} )")
    if r.child:
        c = r.child
        parts.append(f"child( '{_check_ident('label', c.label)} "
                     f"{_CHARGE_TEXT[c.pre]} -> {_CHARGE_TEXT[c.post]} : "
                     f"{_mset_text(c.consume)} -> {_mset_text(c.produce)} )")
    return "  " + " ".join(parts)


def serialize_system(sysd: PSystem) -> str:
    """Canonical text for a system; stable under parse/serialize."""
    lines: List[str] = []
    if sysd.name:
        lines.append(f"system '{_check_ident('system name', sysd.name)}")
        lines.append("")
    bases = set()
    nodes = [sysd.tree]
    while nodes:
        node = nodes.pop()
        bases.update(s.base for s in node.contents.counts)
        nodes.extend(node.children)
    for r in sysd.rules:
        bases.update(s.base for s in _rule_syms(r))
    if bases:
        lines.append("alphabet:")
        row = sorted(bases)
        for i in range(0, len(row), 8):
            lines.append("  " + " ".join(row[i:i + 8]))
        lines.append("")
    lines.append("membranes:")
    _membrane_lines(sysd.tree, 1, lines)
    lines.append("")
    lines.append("rules:")
    for r in sysd.rules:
        lines.append(_rule_text(r))
    if sysd.priority:
        lines.append("")
        lines.append("priority:")
        for a, b in sorted(sysd.priority):
            lines.append(f"  '{_check_ident('rule id', a)} > "
                         f"'{_check_ident('rule id', b)}")
    return "\n".join(lines) + "\n"


# ============================================================
# Structural equality
# ============================================================


def systems_equal(a: PSystem, b: PSystem) -> bool:
    """Same tree, same rules in the same order, same priority relation."""
    return (a.name == b.name and a.tree == b.tree and a.rules == b.rules
            and sorted(a.priority) == sorted(b.priority))


def load_system(path: str) -> PSystem:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_system(fh.read())


def save_system(sysd: PSystem, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_system(sysd))
