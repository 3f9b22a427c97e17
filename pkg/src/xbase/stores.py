"""Local store implementations parameterized by a key-generation policy.

Three layouts share one put/get engine:

* MemoryStore    - transient, bindings held solely in memory
* AppendLogStore - one append-only log file; each record carries a CRC so a
                   torn final record is dropped on recovery while corruption
                   elsewhere is detected
* FilePerKeyStore - one value file per binding, named by the key's hex form,
                    written to a temporary name and renamed into place

Key policies: random (CSPRNG bytes), sequence (8-byte big-endian counter),
content-hash (SHA-256 of the value, which deduplicates and lets independent
stores issue identical keys for identical values).

Append-log record format, after a 22-byte header (magic "XLG1", format
version 0x01, 16-byte store id, 1-byte policy tag):

    [key_len u32 BE][key][val_len u32 BE][value][crc32 u32 BE]

crc32 covers key + value bytes (polynomial 0xEDB88320 reflected, init and
final xor 0xFFFFFFFF, i.e. plain zlib.crc32).
"""
from __future__ import annotations

import hashlib
import os
import secrets
import struct
import threading
import zlib
from pathlib import Path
from typing import Any, Iterator

from .core import (
    MAX_KEY_LEN,
    BitString,
    CorruptionError,
    Key,
    KeyConflictError,
    KeyGenerationError,
    KeyMismatchError,
    PolicyMismatchError,
    Store,
    StoreID,
    UnknownKeyError,
    check_key,
    check_value,
)

LOG_MAGIC = b"XLG1"
FORMAT_VERSION = 0x01
META_FILENAME = "store.meta"
HEADER_LEN = 4 + 1 + 16 + 1

POLICY_TAG_RANDOM = 0x01
POLICY_TAG_SEQUENCE = 0x02
POLICY_TAG_CONTENT_HASH = 0x03

MAX_RANDOM_RETRIES = 8
_U64_MAX = 2**64 - 1


class KeyPolicy:
    """How a store mints keys on put. Subclasses set tag and kind."""

    tag: int
    kind: str


class RandomKeys(KeyPolicy):
    """Keys drawn from a cryptographically secure source.

    A draw that collides with an existing binding for a different value is
    regenerated, up to MAX_RANDOM_RETRIES attempts.
    """

    tag = POLICY_TAG_RANDOM
    kind = "random"

    def __init__(self, key_len: int = 16):
        if not 1 <= key_len <= MAX_KEY_LEN:
            raise ValueError(f"key_len must be in 1..{MAX_KEY_LEN}")
        self.key_len = key_len


class SequenceKeys(KeyPolicy):
    """Keys are the 8-byte big-endian encoding of a counter starting at 1.

    The counter strictly increases per put; keys issued never repeat.
    """

    tag = POLICY_TAG_SEQUENCE
    kind = "sequence"

    def __init__(self, next_seq: int = 1):
        if not 1 <= next_seq <= _U64_MAX:
            raise ValueError("next_seq must be an unsigned 64-bit value >= 1")
        self.next_seq = next_seq


class ContentHashKeys(KeyPolicy):
    """Keys are the SHA-256 digest of the stored value (32 bytes exactly).

    Putting an already-present value returns the existing key and writes
    nothing, and any two stores with this policy issue identical keys for
    identical values.
    """

    tag = POLICY_TAG_CONTENT_HASH
    kind = "content-hash"

    @staticmethod
    def digest(value: bytes) -> bytes:
        return hashlib.sha256(value).digest()


_POLICY_TYPES: dict[int, type[KeyPolicy]] = {
    POLICY_TAG_RANDOM: RandomKeys,
    POLICY_TAG_SEQUENCE: SequenceKeys,
    POLICY_TAG_CONTENT_HASH: ContentHashKeys,
}

_POLICY_KINDS = {cls.kind: cls for cls in _POLICY_TYPES.values()}


def make_policy(policy: KeyPolicy | str | None, default: str = "random") -> KeyPolicy:
    """Coerce a policy argument: an instance, a kind string, or None (default)."""
    if policy is None:
        policy = default
    if isinstance(policy, KeyPolicy):
        return policy
    if isinstance(policy, str):
        cls = _POLICY_KINDS.get(policy)
        if cls is None:
            raise ValueError(
                f"unknown key policy {policy!r}; expected one of {sorted(_POLICY_KINDS)}"
            )
        return cls()
    raise TypeError(f"policy must be KeyPolicy or str, got {type(policy).__name__}")


class LocalStore(Store):
    """Shared engine over an insertion-ordered key index; subclasses persist.

    Subclasses implement _write(key_bytes, value) -> locator and
    _read(key_bytes, locator) -> value. All operations are linearizable:
    a single lock serializes writes and index updates.
    """

    def __init__(self, store_id: StoreID, policy: KeyPolicy):
        self._id = store_id
        self._policy = policy
        self._index: dict[bytes, Any] = {}
        self._lock = threading.RLock()
        self._closed = False

    # subclass hooks
    def _write(self, key_bytes: bytes, value: bytes) -> Any:
        raise NotImplementedError

    def _read(self, key_bytes: bytes, locator: Any) -> bytes:
        raise NotImplementedError

    def put(self, value: BitString) -> Key:
        check_value(value)
        with self._lock:
            self._check_open()
            key_bytes = self._generate_key(value)
            if key_bytes not in self._index:
                self._index[key_bytes] = self._write(key_bytes, value)
            return Key(key_bytes)

    def get(self, key: Key) -> BitString:
        check_key(key)
        with self._lock:
            self._check_open()
            if key.raw not in self._index:
                raise UnknownKeyError(key.hex)
            locator = self._index[key.raw]
        return self._read(key.raw, locator)

    def put_with_key(self, value: BitString, key: Key) -> None:
        check_value(value)
        check_key(key)
        with self._lock:
            self._check_open()
            if isinstance(self._policy, ContentHashKeys):
                expected = ContentHashKeys.digest(value)
                if key.raw != expected:
                    raise KeyMismatchError(
                        f"key {key.hex} is not the content digest {expected.hex()}"
                    )
            if key.raw in self._index:
                if self._read(key.raw, self._index[key.raw]) == value:
                    return  # identical binding already present
                raise KeyConflictError(f"key {key.hex} is bound to a different value")
            self._index[key.raw] = self._write(key.raw, value)

    def get_store_id(self) -> StoreID:
        with self._lock:
            self._check_open()
        return self._id

    @property
    def policy(self) -> KeyPolicy:
        return self._policy

    @property
    def closed(self) -> bool:
        return self._closed

    def __len__(self) -> int:
        with self._lock:
            return len(self._index)

    def __contains__(self, key: Key) -> bool:
        check_key(key)
        with self._lock:
            return key.raw in self._index

    def keys(self) -> list[Key]:
        """Snapshot of all bound keys in iteration order."""
        with self._lock:
            return [Key(kb) for kb in self._index]

    def bindings(self) -> Iterator[tuple[Key, bytes]]:
        """Snapshot of every (key, value) binding in iteration order.

        The key list is captured atomically; values are stable once bound,
        so the result is a consistent view as of the snapshot point.
        """
        with self._lock:
            self._check_open()
            entries = list(self._index.items())
        for key_bytes, locator in entries:
            yield Key(key_bytes), self._read(key_bytes, locator)

    def _check_open(self) -> None:
        if self._closed:
            raise ValueError("store is closed")

    def _generate_key(self, value: bytes) -> bytes:
        policy = self._policy
        if isinstance(policy, ContentHashKeys):
            return ContentHashKeys.digest(value)
        if isinstance(policy, SequenceKeys):
            # skip slots occupied via put_with_key; issued keys never repeat
            while True:
                if policy.next_seq > _U64_MAX:
                    raise KeyGenerationError("sequence key space exhausted")
                key_bytes = struct.pack(">Q", policy.next_seq)
                policy.next_seq += 1
                if key_bytes not in self._index:
                    return key_bytes
        if isinstance(policy, RandomKeys):
            for _ in range(MAX_RANDOM_RETRIES):
                key_bytes = secrets.token_bytes(policy.key_len)
                if key_bytes not in self._index:
                    return key_bytes
                if self._read(key_bytes, self._index[key_bytes]) == value:
                    return key_bytes  # collided with an identical binding
            raise KeyGenerationError(
                f"no unused random key after {MAX_RANDOM_RETRIES} attempts"
            )
        raise TypeError(f"unsupported key policy {type(policy).__name__}")


class MemoryStore(LocalStore):
    """Transient store; the locator is the value itself."""

    def __init__(self, policy: KeyPolicy | str | None = None, store_id: StoreID | None = None):
        super().__init__(store_id or StoreID.generate(), make_policy(policy))

    def _write(self, key_bytes: bytes, value: bytes) -> bytes:
        return value

    def _read(self, key_bytes: bytes, locator: bytes) -> bytes:
        return locator


def _pack_header(store_id: StoreID, policy: KeyPolicy) -> bytes:
    return LOG_MAGIC + bytes([FORMAT_VERSION]) + store_id.raw + bytes([policy.tag])


def _parse_header(data: bytes, source: str) -> tuple[StoreID, int]:
    if len(data) < HEADER_LEN:
        raise CorruptionError(f"{source}: short header ({len(data)} bytes)")
    if data[:4] != LOG_MAGIC:
        raise CorruptionError(f"{source}: bad magic {data[:4]!r}")
    if data[4] != FORMAT_VERSION:
        raise CorruptionError(f"{source}: unsupported format version {data[4]}")
    tag = data[21]
    if tag not in _POLICY_TYPES:
        raise CorruptionError(f"{source}: unknown policy tag {tag:#04x}")
    return StoreID(data[5:21]), tag


def _resolve_policy(requested: KeyPolicy | str | None, tag: int, source: str) -> KeyPolicy:
    """Reconcile a caller-requested policy with the header tag."""
    if requested is None:
        return _POLICY_TYPES[tag]()
    policy = make_policy(requested)
    if policy.tag != tag:
        raise PolicyMismatchError(
            f"{source}: header records {_POLICY_TYPES[tag].kind!r} "
            f"but {policy.kind!r} was requested"
        )
    return policy


def _resume_sequence(policy: KeyPolicy, index: dict[bytes, Any]) -> None:
    """Resume a sequence counter past every 8-byte key already bound."""
    if not isinstance(policy, SequenceKeys):
        return
    highest = 0
    for key_bytes in index:
        if len(key_bytes) == 8:
            highest = max(highest, struct.unpack(">Q", key_bytes)[0])
    policy.next_seq = max(policy.next_seq, highest + 1)


class AppendLogStore(LocalStore):
    """Persistent store appending every binding to a single log file.

    A record is committed once its CRC is on disk. On open, a torn final
    record (short read or CRC mismatch at the tail) is dropped; a CRC
    mismatch anywhere earlier raises CorruptionError.
    """

    def __init__(self, *args, **kwargs):
        raise TypeError("use AppendLogStore.open(path, policy)")

    @classmethod
    def open(
        cls,
        path: str | os.PathLike,
        policy: KeyPolicy | str | None = None,
        store_id: StoreID | None = None,
    ) -> AppendLogStore:
        """Open an existing log or create a fresh one.

        store_id is honored only when creating; an existing header wins.
        """
        path = Path(path)
        self = object.__new__(cls)
        if path.exists() and path.stat().st_size > 0:
            sid, tag, index, good_end = _replay_log(path)
            resolved = _resolve_policy(policy, tag, str(path))
            LocalStore.__init__(self, sid, resolved)
            self._index = index
            _resume_sequence(resolved, index)
            if good_end < path.stat().st_size:
                # drop torn tail bytes so new appends land on a record boundary
                with open(path, "r+b") as fh:
                    fh.truncate(good_end)
            self._end_offset = good_end
        else:
            resolved = make_policy(policy)
            sid = store_id or StoreID.generate()
            LocalStore.__init__(self, sid, resolved)
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as fh:
                fh.write(_pack_header(sid, resolved))
            self._end_offset = HEADER_LEN
        self._path = path
        self._fh = open(path, "ab")
        self._read_fd = os.open(path, os.O_RDONLY)
        return self

    def _write(self, key_bytes: bytes, value: bytes) -> tuple[int, int]:
        crc = zlib.crc32(value, zlib.crc32(key_bytes))
        record = b"".join(
            (
                struct.pack(">I", len(key_bytes)),
                key_bytes,
                struct.pack(">I", len(value)),
                value,
                struct.pack(">I", crc),
            )
        )
        start = self._end_offset
        self._fh.write(record)
        self._fh.flush()
        self._end_offset = start + len(record)
        return (start + 8 + len(key_bytes), len(value))

    def _read(self, key_bytes: bytes, locator: tuple[int, int]) -> bytes:
        offset, length = locator
        data = os.pread(self._read_fd, length, offset)
        if len(data) != length:
            raise CorruptionError(f"{self._path}: short read at offset {offset}")
        return data

    @property
    def path(self) -> Path:
        return self._path

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()
            os.close(self._read_fd)

    def __enter__(self) -> AppendLogStore:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def _replay_log(path: Path) -> tuple[StoreID, int, dict[bytes, tuple[int, int]], int]:
    """Scan a log file; return (store_id, policy_tag, index, end of last good record)."""
    size = path.stat().st_size
    with open(path, "rb") as fh:
        sid, tag = _parse_header(fh.read(HEADER_LEN), str(path))
        index: dict[bytes, tuple[int, int]] = {}
        good_end = HEADER_LEN
        offset = HEADER_LEN
        while offset < size:
            record_start = offset
            head = fh.read(4)
            if len(head) < 4:
                break  # torn tail
            (key_len,) = struct.unpack(">I", head)
            if key_len == 0 or key_len > MAX_KEY_LEN:
                # a complete length field is authentic, so this cannot be a torn write
                raise CorruptionError(
                    f"{path}: invalid key length {key_len} at offset {record_start}"
                )
            key_bytes = fh.read(key_len)
            if len(key_bytes) < key_len:
                break
            head = fh.read(4)
            if len(head) < 4:
                break
            (val_len,) = struct.unpack(">I", head)
            value = fh.read(val_len)
            if len(value) < val_len:
                break
            tail = fh.read(4)
            if len(tail) < 4:
                break
            (stored_crc,) = struct.unpack(">I", tail)
            offset = record_start + 12 + key_len + val_len
            if stored_crc != zlib.crc32(value, zlib.crc32(key_bytes)):
                if offset == size:
                    break  # torn tail: CRC of the final record never hit the disk
                raise CorruptionError(f"{path}: CRC mismatch at offset {record_start}")
            existing = index.get(key_bytes)
            if existing is not None:
                # a well-formed log never repeats a key; tolerate an exact
                # duplicate record but reject a rebinding
                here = fh.tell()
                fh.seek(existing[0])
                prior = fh.read(existing[1])
                fh.seek(here)
                if prior != value:
                    raise CorruptionError(
                        f"{path}: key rebound at offset {record_start}"
                    )
            index[key_bytes] = (record_start + 8 + key_len, val_len)
            good_end = offset
    return sid, tag, index, good_end


def _file_per_key_path(directory: Path, key_bytes: bytes) -> Path:
    return directory / f"{key_bytes.hex()}.bin"


class FilePerKeyStore(LocalStore):
    """Persistent store keeping one value file per binding.

    The file name is exactly the key's canonical hex plus ".bin"; values are
    written to a temporary name and renamed into place so a half-written
    file is never visible under its final name. Header bytes live in
    store.meta. After reopen, iteration order is sorted by key hex (the
    original insertion order is not recorded on disk).
    """

    def __init__(self, *args, **kwargs):
        raise TypeError("use FilePerKeyStore.open(path, policy)")

    @classmethod
    def open(
        cls,
        path: str | os.PathLike,
        policy: KeyPolicy | str | None = None,
        store_id: StoreID | None = None,
    ) -> FilePerKeyStore:
        directory = Path(path)
        meta_path = directory / META_FILENAME
        self = object.__new__(cls)
        if meta_path.exists():
            sid, tag = _parse_header(meta_path.read_bytes(), str(meta_path))
            resolved = _resolve_policy(policy, tag, str(directory))
            LocalStore.__init__(self, sid, resolved)
            self._index = _scan_value_files(directory)
            _resume_sequence(resolved, self._index)
        else:
            if directory.exists() and any(directory.iterdir()):
                raise CorruptionError(f"{directory}: not empty and no {META_FILENAME}")
            resolved = make_policy(policy)
            sid = store_id or StoreID.generate()
            LocalStore.__init__(self, sid, resolved)
            directory.mkdir(parents=True, exist_ok=True)
            _atomic_write(meta_path, _pack_header(sid, resolved))
        self._dir = directory
        return self

    def _write(self, key_bytes: bytes, value: bytes) -> Path:
        target = _file_per_key_path(self._dir, key_bytes)
        _atomic_write(target, value)
        return target

    def _read(self, key_bytes: bytes, locator: Path) -> bytes:
        try:
            return locator.read_bytes()
        except FileNotFoundError:
            raise CorruptionError(f"{locator}: value file disappeared") from None

    @property
    def path(self) -> Path:
        return self._dir

    def close(self) -> None:
        with self._lock:
            self._closed = True

    def __enter__(self) -> FilePerKeyStore:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def _scan_value_files(directory: Path) -> dict[bytes, Path]:
    entries: dict[bytes, Path] = {}
    for child in sorted(directory.iterdir()):
        if child.name == META_FILENAME or child.name.startswith("."):
            continue
        if child.suffix != ".bin":
            raise CorruptionError(f"{child}: unexpected file in store directory")
        try:
            key_bytes = bytes.fromhex(child.stem)
        except ValueError:
            raise CorruptionError(f"{child}: file name is not a hex key") from None
        if not key_bytes or len(key_bytes) > MAX_KEY_LEN:
            raise CorruptionError(f"{child}: file name is not a valid key")
        entries[key_bytes] = child
    return entries


def _atomic_write(target: Path, data: bytes) -> None:
    tmp = target.parent / f".{target.name}.{secrets.token_hex(4)}.tmp"
    try:
        tmp.write_bytes(data)
        os.replace(tmp, target)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


LAYOUT_APPEND_LOG = "append-log"
LAYOUT_FILE_PER_KEY = "file-per-key"


def open_store(
    path: str | os.PathLike,
    layout: str | None = None,
    policy: KeyPolicy | str | None = None,
    store_id: StoreID | None = None,
) -> LocalStore:
    """Open or create a persistent store.

    layout is "append-log" or "file-per-key"; when None it is sniffed from
    an existing path (file vs directory) and defaults to append-log for a
    fresh one.
    """
    p = Path(path)
    if layout is None:
        if p.is_dir():
            layout = LAYOUT_FILE_PER_KEY
        else:
            layout = LAYOUT_APPEND_LOG
    if layout == LAYOUT_APPEND_LOG:
        return AppendLogStore.open(p, policy, store_id)
    if layout == LAYOUT_FILE_PER_KEY:
        return FilePerKeyStore.open(p, policy, store_id)
    raise ValueError(
        f"unknown layout {layout!r}; expected {LAYOUT_APPEND_LOG!r} or {LAYOUT_FILE_PER_KEY!r}"
    )
