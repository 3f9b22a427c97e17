"""Local store layouts and key policies, including the on-disk formats."""
import hashlib
import os
import struct
import threading
import zlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import crc32_reference
from xbase.core import (
    CorruptionError,
    Key,
    KeyConflictError,
    KeyGenerationError,
    KeyMismatchError,
    PolicyMismatchError,
    StoreID,
    UnknownKeyError,
)
from xbase.stores import (
    AppendLogStore,
    ContentHashKeys,
    FilePerKeyStore,
    HEADER_LEN,
    LOG_MAGIC,
    MemoryStore,
    META_FILENAME,
    POLICY_TAG_CONTENT_HASH,
    POLICY_TAG_RANDOM,
    POLICY_TAG_SEQUENCE,
    RandomKeys,
    SequenceKeys,
    open_store,
)
import xbase.stores as stores_module

SHA256_EMPTY = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def make_store(kind: str, tmp_path, policy, name="s"):
    if kind == "memory":
        return MemoryStore(policy=policy)
    if kind == "append-log":
        return AppendLogStore.open(tmp_path / f"{name}.store", policy=policy)
    return FilePerKeyStore.open(tmp_path / f"{name}.dir", policy=policy)


def reopen(store):
    path = store.path
    store.close()
    if isinstance(store, AppendLogStore):
        return AppendLogStore.open(path)
    return FilePerKeyStore.open(path)


LAYOUTS = ("memory", "append-log", "file-per-key")
POLICIES = ("random", "sequence", "content-hash")


def test_crc_reference_matches_check_value_and_zlib():
    # classic check value for this CRC-32 parameterization
    assert crc32_reference(b"123456789") == 0xCBF43926
    for sample in (b"", b"\x00", b"abc", bytes(range(256))):
        assert crc32_reference(sample) == zlib.crc32(sample)


@pytest.mark.parametrize("layout", LAYOUTS)
@pytest.mark.parametrize("policy", POLICIES)
def test_round_trip_all_layouts_and_policies(layout, policy, tmp_path):
    store = make_store(layout, tmp_path, policy)
    values = [b"", b"\x00", b"hello", bytes(range(256)) * 3]
    keys = [store.put(v) for v in values]
    for key, value in zip(keys, values):
        assert store.get(key) == value


def test_golden_append_log_bytes(tmp_path):
    """The exact on-disk bytes of a small log, built from the format
    description with an independent CRC implementation."""
    sid = StoreID(bytes(range(16)))
    path = tmp_path / "golden.store"
    store = AppendLogStore.open(path, policy="sequence", store_id=sid)
    store.put(b"hi")
    store.put(b"")
    store.close()

    key1 = (1).to_bytes(8, "big")
    key2 = (2).to_bytes(8, "big")
    expected = b"XLG1" + b"\x01" + bytes(range(16)) + b"\x02"
    for key, value in ((key1, b"hi"), (key2, b"")):
        expected += struct.pack(">I", len(key)) + key
        expected += struct.pack(">I", len(value)) + value
        expected += struct.pack(">I", crc32_reference(key + value))
    assert path.read_bytes() == expected


def test_header_constants():
    assert LOG_MAGIC == b"XLG1"
    assert HEADER_LEN == 22
    assert (POLICY_TAG_RANDOM, POLICY_TAG_SEQUENCE, POLICY_TAG_CONTENT_HASH) == (1, 2, 3)


class TestSequencePolicy:
    def test_first_key_is_one(self, tmp_path):
        store = make_store("append-log", tmp_path, "sequence")
        assert store.put(b"\xde\xad\xbe\xef").hex == "0000000000000001"

    def test_keys_strictly_increase(self):
        store = MemoryStore(policy="sequence")
        issued = [int.from_bytes(store.put(os.urandom(4)).raw, "big") for _ in range(50)]
        assert issued == sorted(issued)
        assert len(set(issued)) == 50

    def test_counter_resumes_after_reopen(self, tmp_path):
        store = make_store("append-log", tmp_path, "sequence")
        store.put(b"a")
        store.put(b"b")
        store = reopen(store)
        assert store.put(b"c").hex == "0000000000000003"
        store.close()

    def test_counter_skips_keys_planted_by_put_with_key(self, tmp_path):
        store = make_store("append-log", tmp_path, "sequence")
        store.put_with_key(b"planted", Key((7).to_bytes(8, "big")))
        store = reopen(store)
        # resumes past the largest 8-byte key, so issued keys never repeat
        assert store.put(b"x").hex == "0000000000000008"
        store.close()

    def test_put_skips_occupied_slot_without_reopen(self):
        store = MemoryStore(policy="sequence")
        store.put_with_key(b"planted", Key((1).to_bytes(8, "big")))
        key = store.put(b"x")
        assert key.hex == "0000000000000002"
        assert store.get(Key((1).to_bytes(8, "big"))) == b"planted"


class TestContentHashPolicy:
    def test_empty_value_matches_published_vector(self):
        store = MemoryStore(policy="content-hash")
        assert store.put(b"").hex == SHA256_EMPTY

    def test_two_stores_agree(self, tmp_path):
        a = make_store("append-log", tmp_path, "content-hash", "a")
        b = make_store("file-per-key", tmp_path, "content-hash", "b")
        for value in (b"", b"x", os.urandom(100)):
            assert a.put(value) == b.put(value)

    def test_dedup_appends_nothing(self, tmp_path):
        store = make_store("append-log", tmp_path, "content-hash")
        key1 = store.put(b"same")
        size = store.path.stat().st_size
        key2 = store.put(b"same")
        assert key1 == key2
        assert store.path.stat().st_size == size
        assert len(store) == 1

    def test_put_with_key_requires_digest(self):
        store = MemoryStore(policy="content-hash")
        good = hashlib.sha256(b"v").digest()
        store.put_with_key(b"v", Key(good))
        wrong = bytes(32)
        assert wrong != good
        with pytest.raises(KeyMismatchError):
            store.put_with_key(b"v", Key(wrong))

    def test_shared_key_retrievable_from_second_store(self):
        a = MemoryStore(policy="content-hash")
        b = MemoryStore(policy="content-hash")
        key = a.put(b"shared")
        with pytest.raises(UnknownKeyError):
            b.get(key)
        assert b.put(b"shared") == key
        assert b.get(key) == b"shared"


class TestRandomPolicy:
    def test_key_length_default(self):
        store = MemoryStore(policy="random")
        assert len(store.put(b"v").raw) == 16

    def test_retry_on_collision_with_different_value(self, monkeypatch):
        store = MemoryStore(policy="random")
        first = store.put(b"one")
        draws = [first.raw, b"\xaa" * 16]

        def fake_token_bytes(n):
            return draws.pop(0)

        monkeypatch.setattr(stores_module.secrets, "token_bytes", fake_token_bytes)
        key = store.put(b"two")
        assert key.raw == b"\xaa" * 16
        assert store.get(first) == b"one"

    def test_collision_with_identical_value_reuses_key(self, monkeypatch):
        store = MemoryStore(policy="random")
        first = store.put(b"same")
        monkeypatch.setattr(
            stores_module.secrets, "token_bytes", lambda n: first.raw
        )
        assert store.put(b"same") == first
        assert len(store) == 1

    def test_exhaustion_after_eight_retries(self, monkeypatch):
        store = MemoryStore(policy="random")
        first = store.put(b"one")
        calls = []

        def always_collide(n):
            calls.append(n)
            return first.raw

        monkeypatch.setattr(stores_module.secrets, "token_bytes", always_collide)
        with pytest.raises(KeyGenerationError):
            store.put(b"different")
        assert len(calls) == 8

    def test_custom_key_len(self):
        store = MemoryStore(policy=RandomKeys(key_len=4))
        assert len(store.put(b"v").raw) == 4


@pytest.mark.parametrize("layout", LAYOUTS)
def test_get_unknown_key_fails(layout, tmp_path):
    store = make_store(layout, tmp_path, "random")
    with pytest.raises(UnknownKeyError):
        store.get(Key(b"\x01" * 16))


def test_monotonicity_under_many_puts():
    store = MemoryStore(policy="sequence")
    key = store.put(b"first")
    for i in range(1000):
        store.put(i.to_bytes(4, "big"))
    assert store.get(key) == b"first"


@pytest.mark.parametrize("layout", LAYOUTS)
def test_put_with_key_semantics(layout, tmp_path):
    store = make_store(layout, tmp_path, "random")
    key = Key(b"\x42" * 3)
    store.put_with_key(b"v1", key)
    assert store.get(key) == b"v1"
    store.put_with_key(b"v1", key)  # identical binding: no-op
    with pytest.raises(KeyConflictError):
        store.put_with_key(b"v2", key)
    assert store.get(key) == b"v1"


@pytest.mark.parametrize("layout", ("append-log", "file-per-key"))
def test_store_id_survives_reopen(layout, tmp_path):
    store = make_store(layout, tmp_path, "random")
    sid = store.get_store_id()
    assert len(sid.raw) == 16
    store = reopen(store)
    assert store.get_store_id() == sid
    store.close()


def test_fresh_store_ids_differ():
    assert MemoryStore().get_store_id() != MemoryStore().get_store_id()


def test_persistence_across_reopen(tmp_path):
    store = make_store("append-log", tmp_path, "sequence")
    keys = [store.put(v) for v in (b"a", b"b", b"c")]
    store = reopen(store)
    assert [store.get(k) for k in keys] == [b"a", b"b", b"c"]
    store.close()


class TestTornTail:
    def build(self, tmp_path, n=5):
        path = tmp_path / "log.store"
        store = AppendLogStore.open(path, policy="sequence")
        ends = []
        entries = []
        for i in range(n):
            value = bytes([i]) * (i * 3 + 1)
            key = store.put(value)
            entries.append((key, value))
            store._fh.flush()
            ends.append(path.stat().st_size)
        store.close()
        return path, ends, entries

    def test_truncation_keeps_committed_prefix(self, tmp_path):
        path, ends, entries = self.build(tmp_path)
        full = path.read_bytes()
        # cut in the middle of the last record
        path.write_bytes(full[: ends[-2] + 3])
        store = AppendLogStore.open(path)
        assert len(store) == len(entries) - 1
        for key, value in entries[:-1]:
            assert store.get(key) == value
        # recovery physically drops the torn bytes and appending continues
        assert path.stat().st_size == ends[-2]
        key = store.put(b"after recovery")
        assert store.get(key) == b"after recovery"
        store.close()

    def test_tail_crc_mismatch_is_torn_not_corrupt(self, tmp_path):
        path, ends, entries = self.build(tmp_path)
        data = bytearray(path.read_bytes())
        data[-1] ^= 0xFF  # last CRC byte
        path.write_bytes(bytes(data))
        store = AppendLogStore.open(path)
        assert len(store) == len(entries) - 1
        store.close()

    def test_mid_file_corruption_is_detected(self, tmp_path):
        path, ends, entries = self.build(tmp_path)
        data = bytearray(path.read_bytes())
        data[ends[0] - 5] ^= 0xFF  # record 0's value byte, nowhere near the tail
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptionError):
            AppendLogStore.open(path)

    def test_mid_file_crc_field_corruption_is_detected(self, tmp_path):
        path, ends, entries = self.build(tmp_path)
        data = bytearray(path.read_bytes())
        data[ends[1] - 1] ^= 0xFF  # record 1's stored CRC
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptionError):
            AppendLogStore.open(path)

    def test_invalid_key_length_field_is_corruption(self, tmp_path):
        path, ends, entries = self.build(tmp_path)
        data = bytearray(path.read_bytes())
        struct.pack_into(">I", data, HEADER_LEN, 5000)  # > max key length
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptionError):
            AppendLogStore.open(path)

    def test_bad_magic_and_version(self, tmp_path):
        path, _, _ = self.build(tmp_path, n=1)
        data = bytearray(path.read_bytes())
        bad_version = bytes(data[:4]) + b"\x09" + bytes(data[5:])
        path.write_bytes(b"YYYY" + bytes(data[4:]))
        with pytest.raises(CorruptionError):
            AppendLogStore.open(path)
        path.write_bytes(bad_version)
        with pytest.raises(CorruptionError):
            AppendLogStore.open(path)

    def test_policy_mismatch_on_open(self, tmp_path):
        path, _, _ = self.build(tmp_path, n=1)  # header says sequence
        with pytest.raises(PolicyMismatchError):
            AppendLogStore.open(path, policy="content-hash")

    def test_duplicate_key_with_different_value_in_log(self, tmp_path):
        path, _, _ = self.build(tmp_path, n=1)
        key = (1).to_bytes(8, "big")
        record = struct.pack(">I", 8) + key + struct.pack(">I", 3) + b"zzz"
        record += struct.pack(">I", zlib.crc32(key + b"zzz"))
        with open(path, "ab") as fh:
            fh.write(record)
        with pytest.raises(CorruptionError):
            AppendLogStore.open(path)


class TestFilePerKey:
    def test_layout_on_disk(self, tmp_path):
        store = FilePerKeyStore.open(tmp_path / "d", policy="sequence")
        key = store.put(b"payload")
        meta = (tmp_path / "d" / META_FILENAME).read_bytes()
        assert meta[:4] == LOG_MAGIC and meta[4] == 1 and meta[21] == POLICY_TAG_SEQUENCE
        value_file = tmp_path / "d" / f"{key.hex}.bin"
        assert value_file.read_bytes() == b"payload"
        # writes go through a temp name; nothing half-written is left over
        assert not list((tmp_path / "d").glob("*.tmp"))
        store.close()

    def test_reopen_reads_existing_files(self, tmp_path):
        store = FilePerKeyStore.open(tmp_path / "d", policy="random")
        pairs = [(store.put(os.urandom(9)), i) for i in range(5)]
        store = reopen(store)
        assert len(store) == 5
        for key, _ in pairs:
            store.get(key)
        store.close()

    def test_foreign_file_is_corruption(self, tmp_path):
        store = FilePerKeyStore.open(tmp_path / "d", policy="random")
        store.close()
        (tmp_path / "d" / "notes.txt").write_text("hello")
        with pytest.raises(CorruptionError):
            FilePerKeyStore.open(tmp_path / "d")

    def test_empty_dir_initializes_fresh(self, tmp_path):
        (tmp_path / "d").mkdir()
        store = FilePerKeyStore.open(tmp_path / "d")
        assert (tmp_path / "d" / META_FILENAME).exists()
        store.close()

    def test_populated_dir_without_meta_is_corruption(self, tmp_path):
        (tmp_path / "d").mkdir()
        (tmp_path / "d" / "aa.bin").write_bytes(b"v")
        with pytest.raises(CorruptionError):
            FilePerKeyStore.open(tmp_path / "d")


def test_open_store_sniffs_layout(tmp_path):
    log = AppendLogStore.open(tmp_path / "a.store", policy="sequence")
    key_a = log.put(b"a")
    log.close()
    fpk = FilePerKeyStore.open(tmp_path / "b", policy="sequence")
    key_b = fpk.put(b"b")
    fpk.close()

    opened = open_store(tmp_path / "a.store")
    assert isinstance(opened, AppendLogStore) and opened.get(key_a) == b"a"
    opened.close()
    opened = open_store(tmp_path / "b")
    assert isinstance(opened, FilePerKeyStore) and opened.get(key_b) == b"b"
    opened.close()
    # fresh paths default to the append-log layout
    fresh = open_store(tmp_path / "new.store", policy="sequence")
    assert isinstance(fresh, AppendLogStore)
    fresh.close()
    fresh = open_store(tmp_path / "newdir", layout="file-per-key")
    assert isinstance(fresh, FilePerKeyStore)
    fresh.close()


def test_closed_store_rejects_operations(tmp_path):
    store = AppendLogStore.open(tmp_path / "c.store")
    key = store.put(b"v")
    store.close()
    with pytest.raises(ValueError):
        store.put(b"w")
    with pytest.raises(ValueError):
        store.get(key)


def test_concurrent_puts_are_linearizable(tmp_path):
    store = AppendLogStore.open(tmp_path / "conc.store", policy="sequence")
    results = [None] * 8
    errors = []

    def worker(i):
        try:
            mine = [(store.put(bytes([i]) * (j + 1)), bytes([i]) * (j + 1)) for j in range(100)]
            results[i] = mine
        except Exception as exc:  # surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    all_keys = [k.raw for r in results for k, _ in r]
    assert len(set(all_keys)) == 800
    for r in results:
        for key, value in r:
            assert store.get(key) == value
    store = reopen(store)
    assert len(store) == 800
    store.close()


@settings(max_examples=60, deadline=None)
@given(st.binary(max_size=2048))
def test_memory_round_trip_property(value):
    store = MemoryStore()
    assert store.get(store.put(value)) == value
