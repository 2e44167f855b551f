"""Greedy longest-match subword tokenizer with total byte fallback.

Vocabulary files are UTF-8, one ``token<TAB>id`` per line. Single-byte
tokens are written ``<0xNN>``; when a file lists none of them they are
appended after the largest id.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import VocabError

_BYTE_RE = re.compile(r"^<0x([0-9A-Fa-f]{2})>$")


@dataclass(frozen=True)
class Vocabulary:
    entries: tuple[tuple[str, int], ...]
    byte_fallback_base: int
    _table: dict = field(init=False, repr=False, compare=False)
    _decode: dict = field(init=False, repr=False, compare=False)
    _max_len: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.entries:
            raise VocabError("vocabulary is empty")
        table: dict[bytes, int] = {}
        decode: dict[int, bytes] = {}
        for tok, i in self.entries:
            m = _BYTE_RE.match(tok)
            raw = bytes([int(m.group(1), 16)]) if m else tok.encode("utf-8")
            if i in decode:
                raise VocabError(f"duplicate id {i}")
            decode[i] = raw
            if not m and raw:
                table.setdefault(raw, i)
        for b in range(256):
            bid = self.byte_fallback_base + b
            if decode.get(bid, bytes([b])) != bytes([b]):
                raise VocabError(f"id {bid} is reserved for byte 0x{b:02X}")
            decode[bid] = bytes([b])
        object.__setattr__(self, "_table", table)
        object.__setattr__(self, "_decode", decode)
        object.__setattr__(self, "_max_len", max((len(k) for k in table), default=1))

    def __len__(self) -> int:
        return len(self._decode)

    @property
    def size(self) -> int:
        """One past the largest id."""
        return max(self._decode) + 1

    def lookup(self, token: str) -> int | None:
        return self._table.get(token.encode("utf-8"))

    def byte_id(self, b: int) -> int:
        return self.byte_fallback_base + b

    def token_bytes(self, i: int) -> bytes:
        return self._decode[i]


def byte_vocab(base: int = 0) -> Vocabulary:
    return Vocabulary(tuple((f"<0x{b:02X}>", base + b) for b in range(256)), base)


def load_vocab(path) -> Vocabulary:
    entries: list[tuple[str, int]] = []
    seen: dict[int, int] = {}
    byte_ids: dict[int, int] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.split("\n"), 1):
        if line == "":
            continue
        tok, sep, raw_id = line.rpartition("\t")
        if not sep or tok == "":
            raise VocabError("expected 'token<TAB>id'", lineno)
        try:
            i = int(raw_id)
        except ValueError:
            raise VocabError(f"id {raw_id!r} is not an integer", lineno) from None
        if i < 0:
            raise VocabError(f"negative id {i}", lineno)
        if i in seen:
            raise VocabError(f"duplicate id {i} (first on line {seen[i]})", lineno)
        seen[i] = lineno
        m = _BYTE_RE.match(tok)
        if m:
            byte_ids[int(m.group(1), 16)] = i
        entries.append((tok, i))
    if not entries:
        raise VocabError(f"{path}: vocabulary file is empty")
    if byte_ids:
        if len(byte_ids) != 256:
            raise VocabError(f"{path}: byte tokens present but only {len(byte_ids)} of 256")
        base = byte_ids[0]
        if any(byte_ids[b] != base + b for b in range(256)):
            raise VocabError(f"{path}: byte token ids must be contiguous from <0x00>")
    else:
        base = max(seen) + 1
        entries.extend((f"<0x{b:02X}>", base + b) for b in range(256))
    return Vocabulary(tuple(entries), base)


def encode(v: Vocabulary, word: str) -> list[int]:
    """Left-to-right greedy longest match over the UTF-8 bytes of ``word``."""
    data = word.encode("utf-8")
    out: list[int] = []
    i, n = 0, len(data)
    table = v._table
    while i < n:
        for k in range(min(v._max_len, n - i), 0, -1):
            tid = table.get(data[i : i + k])
            if tid is not None:
                out.append(tid)
                i += k
                break
        else:
            out.append(v.byte_fallback_base + data[i])
            i += 1
    return out


def decode_bytes(v: Vocabulary, ids) -> bytes:
    return b"".join(v.token_bytes(i) for i in ids)


def token_len(v: Vocabulary, word: str, prefix: str = "") -> int:
    return len(encode(v, prefix + word))


def first_token(v: Vocabulary, word: str, prefix: str = "") -> int:
    if not word:
        raise ValueError("first_token of empty word")
    return encode(v, prefix + word)[0]
