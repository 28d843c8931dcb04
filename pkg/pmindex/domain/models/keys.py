from __future__ import annotations

from enum import Enum
from typing import Union

from pmindex.lib.errors import InvalidKeyError

Key = Union[int, bytes]

MAX_WORD = (1 << 64) - 1
STRING_KEY_BYTES = 24


class KeyType(str, Enum):
    RANDINT = "randint"
    STRING = "string"


def string_key(n: int) -> bytes:
    """YCSB-style fixed 24-byte key: ``user`` + 20 zero-padded digits."""
    return f"user{n % 10**20:020d}".encode("ascii")


def validate_value(value: int) -> int:
    if not isinstance(value, int) or value <= 0 or value > MAX_WORD:
        raise InvalidKeyError(f"value must be a word in [1, 2^64), got {value!r}")
    return value


class KeyCodec:
    """Binary-comparable encodings of one key type.

    Integers are big-endian so that byte order, word-tuple order and numeric
    order all agree.
    """

    def __init__(self, key_type: KeyType | str = KeyType.RANDINT) -> None:
        self.key_type = KeyType(key_type)
        self.width = 8 if self.key_type is KeyType.RANDINT else STRING_KEY_BYTES
        self.words = self.width // 8
        self.min_key: Key = 1 if self.key_type is KeyType.RANDINT else b"\x00" * (self.width - 1) + b"\x01"
        self.max_key: Key = MAX_WORD if self.key_type is KeyType.RANDINT else b"\xff" * self.width

    def validate(self, key: Key) -> Key:
        if self.key_type is KeyType.RANDINT:
            if not isinstance(key, int) or isinstance(key, bool) or key <= 0 or key > MAX_WORD:
                raise InvalidKeyError(f"randint key must be in [1, 2^64), got {key!r}")
            return key
        if not isinstance(key, (bytes, bytearray)):
            raise InvalidKeyError(f"string key must be bytes, got {type(key).__name__}")
        if len(key) > self.width:
            raise InvalidKeyError(f"string key longer than {self.width} bytes")
        key = bytes(key).ljust(self.width, b"\x00")
        if not any(key):
            raise InvalidKeyError("the all-zero key is reserved")
        return key

    def to_bytes(self, key: Key) -> bytes:
        if self.key_type is KeyType.RANDINT:
            return int(key).to_bytes(8, "big")  # type: ignore[arg-type]
        return bytes(key)  # type: ignore[arg-type]

    def from_bytes(self, raw: bytes) -> Key:
        if self.key_type is KeyType.RANDINT:
            return int.from_bytes(raw, "big")
        return bytes(raw)

    def to_words(self, key: Key) -> tuple[int, ...]:
        raw = self.to_bytes(key)
        return tuple(int.from_bytes(raw[i : i + 8], "big") for i in range(0, self.width, 8))

    def from_words(self, words: tuple[int, ...] | list[int]) -> Key:
        return self.from_bytes(b"".join(int(w).to_bytes(8, "big") for w in words))
