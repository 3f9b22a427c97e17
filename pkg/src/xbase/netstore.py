"""Store access over a socket: wire codec, server, remote client, proxy.

Every message starts with the magic "XBS1" and a one-byte opcode, followed
by an opcode-specific payload using u32 big-endian length prefixes:

    0x01 PUT           [val_len][value]            -> 0x81 KEY
    0x02 GET           [key_len][key]              -> 0x82 DATA
    0x03 STORE_ID      (empty)                     -> 0x83 ID [16 bytes]
    0x04 PUT_WITH_KEY  [key_len][key][val_len][value] -> 0x81 KEY (echo)
    0xFF ERR           [code][msg_len][UTF-8 message]

ERR codes: 0x01 UnknownKey, 0x02 KeyConflict, 0x03 KeyMismatch,
0x04 Malformed, 0x05 Internal. One request yields exactly one response;
requests on a connection are handled in order. Declared lengths above
64 MiB are rejected before any allocation.

The ProxyStore holds no data of its own unless given a local backing
store: gets probe local first, then each target in insertion order,
skipping unreachable ones; puts go to one store chosen by the put policy.
"""
from __future__ import annotations

import os
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable

from .core import (
    BitString,
    Key,
    KeyConflictError,
    KeyMismatchError,
    Store,
    StoreID,
    UnknownKeyError,
    XbaseError,
)
from .home import ROOT_STORE_FILENAME, xbase_home
from .stores import AppendLogStore

WIRE_MAGIC = b"XBS1"
MAX_WIRE_LEN = 1 << 26  # 64 MiB cap on any declared length

OP_PUT = 0x01
OP_GET = 0x02
OP_STORE_ID = 0x03
OP_PUT_WITH_KEY = 0x04
OP_KEY = 0x81
OP_DATA = 0x82
OP_ID = 0x83
OP_ERR = 0xFF

ERR_UNKNOWN_KEY = 0x01
ERR_KEY_CONFLICT = 0x02
ERR_KEY_MISMATCH = 0x03
ERR_MALFORMED = 0x04
ERR_INTERNAL = 0x05


class MalformedMessageError(XbaseError):
    """Bad magic, unknown opcode, oversize length, or truncated frame."""


class TruncatedStreamError(MalformedMessageError):
    """The stream ended inside a message; also covers transport loss."""


class UnreachableError(XbaseError):
    """The remote endpoint cannot be contacted."""


class RemoteError(XbaseError):
    """The remote side reported an internal or unrecognized error."""


class DuplicateTargetError(XbaseError):
    pass


class UnknownTargetError(XbaseError):
    pass


class NoWritableTargetError(XbaseError):
    pass


class AllTargetsUnreachableError(XbaseError):
    """No get candidate could even be queried."""


@dataclass(frozen=True)
class PutRequest:
    value: bytes


@dataclass(frozen=True)
class GetRequest:
    key: bytes


@dataclass(frozen=True)
class StoreIdRequest:
    pass


@dataclass(frozen=True)
class PutWithKeyRequest:
    key: bytes
    value: bytes


@dataclass(frozen=True)
class KeyResponse:
    key: bytes


@dataclass(frozen=True)
class DataResponse:
    value: bytes


@dataclass(frozen=True)
class IdResponse:
    store_id: bytes


@dataclass(frozen=True)
class ErrResponse:
    code: int
    message: str


WireMessage = (
    PutRequest
    | GetRequest
    | StoreIdRequest
    | PutWithKeyRequest
    | KeyResponse
    | DataResponse
    | IdResponse
    | ErrResponse
)


def _lp(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def encode_message(msg: WireMessage) -> bytes:
    if isinstance(msg, PutRequest):
        return WIRE_MAGIC + bytes([OP_PUT]) + _lp(msg.value)
    if isinstance(msg, GetRequest):
        return WIRE_MAGIC + bytes([OP_GET]) + _lp(msg.key)
    if isinstance(msg, StoreIdRequest):
        return WIRE_MAGIC + bytes([OP_STORE_ID])
    if isinstance(msg, PutWithKeyRequest):
        return WIRE_MAGIC + bytes([OP_PUT_WITH_KEY]) + _lp(msg.key) + _lp(msg.value)
    if isinstance(msg, KeyResponse):
        return WIRE_MAGIC + bytes([OP_KEY]) + _lp(msg.key)
    if isinstance(msg, DataResponse):
        return WIRE_MAGIC + bytes([OP_DATA]) + _lp(msg.value)
    if isinstance(msg, IdResponse):
        if len(msg.store_id) != 16:
            raise ValueError("store id must be 16 bytes")
        return WIRE_MAGIC + bytes([OP_ID]) + msg.store_id
    if isinstance(msg, ErrResponse):
        if not 0 <= msg.code <= 0xFF:
            raise ValueError("error code must fit one byte")
        return WIRE_MAGIC + bytes([OP_ERR, msg.code]) + _lp(msg.message.encode("utf-8"))
    raise TypeError(f"not a wire message: {type(msg).__name__}")


def read_message(read: Callable[[int], bytes], allow_eof: bool = False) -> WireMessage | None:
    """Read exactly one message from a blocking byte source.

    read(n) must return up to n bytes, empty only at end of stream. With
    allow_eof, a stream that ends cleanly between messages yields None.
    """

    def need(n: int, what: str) -> bytes:
        chunks = []
        remaining = n
        while remaining:
            chunk = read(remaining)
            if not chunk:
                raise TruncatedStreamError(f"stream ended inside {what}")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    first = read(1)
    if not first:
        if allow_eof:
            return None
        raise TruncatedStreamError("stream ended before a message")
    magic = first + need(3, "magic")
    if magic != WIRE_MAGIC:
        raise MalformedMessageError(f"bad magic {magic!r}")
    opcode = need(1, "opcode")[0]

    def length(what: str) -> int:
        (n,) = struct.unpack(">I", need(4, what + " length"))
        if n > MAX_WIRE_LEN:
            raise MalformedMessageError(f"{what} length {n} exceeds {MAX_WIRE_LEN}")
        return n

    if opcode == OP_PUT:
        return PutRequest(need(length("value"), "value"))
    if opcode == OP_GET:
        return GetRequest(need(length("key"), "key"))
    if opcode == OP_STORE_ID:
        return StoreIdRequest()
    if opcode == OP_PUT_WITH_KEY:
        key = need(length("key"), "key")
        return PutWithKeyRequest(key, need(length("value"), "value"))
    if opcode == OP_KEY:
        return KeyResponse(need(length("key"), "key"))
    if opcode == OP_DATA:
        return DataResponse(need(length("value"), "value"))
    if opcode == OP_ID:
        return IdResponse(need(16, "store id"))
    if opcode == OP_ERR:
        code = need(1, "error code")[0]
        raw = need(length("message"), "message")
        try:
            return ErrResponse(code, raw.decode("utf-8"))
        except UnicodeDecodeError:
            raise MalformedMessageError("error message is not UTF-8") from None
    raise MalformedMessageError(f"unknown opcode {opcode:#04x}")


def decode_message(data: bytes) -> tuple[WireMessage, int]:
    """Decode one message from the front of data; returns (message, bytes consumed)."""
    view = memoryview(data)
    pos = 0

    def read(n: int) -> bytes:
        nonlocal pos
        chunk = bytes(view[pos : pos + n])
        pos += len(chunk)
        return chunk

    msg = read_message(read)
    return msg, pos


def _error_response(exc: Exception) -> ErrResponse:
    if isinstance(exc, UnknownKeyError):
        code = ERR_UNKNOWN_KEY
    elif isinstance(exc, KeyConflictError):
        code = ERR_KEY_CONFLICT
    elif isinstance(exc, KeyMismatchError):
        code = ERR_KEY_MISMATCH
    elif isinstance(exc, (MalformedMessageError, ValueError)):
        code = ERR_MALFORMED
    else:
        code = ERR_INTERNAL
    return ErrResponse(code, str(exc) or type(exc).__name__)


def _raise_remote(err: ErrResponse) -> None:
    if err.code == ERR_UNKNOWN_KEY:
        raise UnknownKeyError(err.message)
    if err.code == ERR_KEY_CONFLICT:
        raise KeyConflictError(err.message)
    if err.code == ERR_KEY_MISMATCH:
        raise KeyMismatchError(err.message)
    if err.code == ERR_MALFORMED:
        raise MalformedMessageError(err.message)
    raise RemoteError(f"code {err.code:#04x}: {err.message}")


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not host:
        raise ValueError(f"address must be host:port, got {address!r}")
    try:
        return host, int(port)
    except ValueError:
        raise ValueError(f"bad port in {address!r}") from None


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        store: Store = self.server.store  # type: ignore[attr-defined]
        rfile = self.request.makefile("rb")
        wfile = self.request.makefile("wb")
        try:
            while True:
                try:
                    msg = read_message(rfile.read, allow_eof=True)
                except MalformedMessageError as exc:
                    self._respond(wfile, _error_response(exc))
                    return  # framing is lost, drop the connection
                if msg is None:
                    return
                try:
                    response = self._dispatch(store, msg)
                except Exception as exc:  # never kill the server on a request
                    response = _error_response(exc)
                self._respond(wfile, response)
        except (OSError, ValueError):
            return  # client went away mid-write
        finally:
            for f in (wfile, rfile):
                try:
                    f.close()
                except OSError:
                    pass

    @staticmethod
    def _dispatch(store: Store, msg: WireMessage) -> WireMessage:
        if isinstance(msg, PutRequest):
            return KeyResponse(store.put(msg.value).raw)
        if isinstance(msg, GetRequest):
            return DataResponse(store.get(Key(msg.key)))
        if isinstance(msg, StoreIdRequest):
            return IdResponse(store.get_store_id().raw)
        if isinstance(msg, PutWithKeyRequest):
            store.put_with_key(msg.value, Key(msg.key))
            return KeyResponse(msg.key)
        raise MalformedMessageError(f"{type(msg).__name__} is not a request")

    @staticmethod
    def _respond(wfile, response: WireMessage) -> None:
        wfile.write(encode_message(response))
        wfile.flush()


class StoreServer:
    """Serves one store over TCP, one thread per connection."""

    def __init__(self, store: Store, address: str | tuple[str, int]):
        if isinstance(address, str):
            address = parse_address(address)

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = _Server(address, _Handler)
        self._server.store = store  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> "StoreServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "StoreServer":
        return self

    def __exit__(self, *exc_info) -> None:
        self.stop()


def serve(store: Store, bind_address: str | tuple[str, int]) -> StoreServer:
    """Start serving store on bind_address in a background thread."""
    return StoreServer(store, bind_address).start()


class RemoteStore(Store):
    """Store client over the wire protocol; connects lazily and retries a
    broken connection once per call before reporting Unreachable."""

    def __init__(self, address: str | tuple[str, int], timeout: float | None = 10.0):
        self._address = parse_address(address) if isinstance(address, str) else address
        self._timeout = timeout
        self._lock = threading.Lock()
        self._sock: socket.socket | None = None
        self._store_id: StoreID | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._address

    def _connect(self) -> socket.socket:
        try:
            return socket.create_connection(self._address, timeout=self._timeout)
        except OSError as exc:
            raise UnreachableError(f"{self._address[0]}:{self._address[1]}: {exc}") from None

    def _drop(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def _exchange_once(self, payload: bytes) -> WireMessage:
        assert self._sock is not None
        self._sock.sendall(payload)
        return read_message(lambda n: self._sock.recv(n))

    def _request(self, msg: WireMessage) -> WireMessage:
        payload = encode_message(msg)
        with self._lock:
            if self._sock is None:
                self._sock = self._connect()
            try:
                response = self._exchange_once(payload)
            except (OSError, TruncatedStreamError):
                # the connection may simply have gone stale; reconnect once
                self._drop()
                self._sock = self._connect()
                try:
                    response = self._exchange_once(payload)
                except (OSError, TruncatedStreamError) as exc:
                    self._drop()
                    raise UnreachableError(
                        f"{self._address[0]}:{self._address[1]}: {exc}"
                    ) from None
        if isinstance(response, ErrResponse):
            _raise_remote(response)
        return response

    def put(self, value: BitString) -> Key:
        response = self._request(PutRequest(bytes(value)))
        if not isinstance(response, KeyResponse):
            raise RemoteError(f"unexpected response {type(response).__name__}")
        return Key(response.key)

    def get(self, key: Key) -> BitString:
        response = self._request(GetRequest(key.raw))
        if not isinstance(response, DataResponse):
            raise RemoteError(f"unexpected response {type(response).__name__}")
        return response.value

    def put_with_key(self, value: BitString, key: Key) -> None:
        response = self._request(PutWithKeyRequest(key.raw, bytes(value)))
        if not isinstance(response, KeyResponse):
            raise RemoteError(f"unexpected response {type(response).__name__}")

    def get_store_id(self) -> StoreID:
        if self._store_id is None:
            response = self._request(StoreIdRequest())
            if not isinstance(response, IdResponse):
                raise RemoteError(f"unexpected response {type(response).__name__}")
            self._store_id = StoreID(response.store_id)
        return self._store_id

    def close(self) -> None:
        with self._lock:
            self._drop()

    def __enter__(self) -> "RemoteStore":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


@dataclass
class TargetRef:
    """One proxy target: an in-process store or a remote address."""

    address: str | None = None
    store: Store | None = None
    store_id: StoreID | None = None  # cached once known

    def __post_init__(self):
        if (self.address is None) == (self.store is None):
            raise ValueError("a target is either an address or a store, not both")

    @classmethod
    def remote(cls, address: str) -> "TargetRef":
        parse_address(address)  # validate early
        return cls(address=address)

    @classmethod
    def in_process(cls, store: Store) -> "TargetRef":
        return cls(store=store)

    @property
    def label(self) -> str:
        return self.address if self.address is not None else f"store:{id(self.store):#x}"

    def connect(self) -> Store:
        if self.store is None:
            self.store = RemoteStore(self.address)
        return self.store

    def matches(self, other: "TargetRef") -> bool:
        if self.address is not None:
            return self.address == other.address
        return other.store is not None and self.store is other.store


@dataclass(frozen=True)
class ProbeRecord:
    """One step of a proxy get: where we looked and how it went."""

    target: str
    outcome: str  # "hit" | "miss" | "unreachable"


def _coerce_target(target) -> TargetRef:
    if isinstance(target, TargetRef):
        return target
    if isinstance(target, str):
        return TargetRef.remote(target)
    if isinstance(target, Store):
        return TargetRef.in_process(target)
    raise TypeError("target must be a TargetRef, address string, or Store")


class ProxyStore(Store):
    """Store that forwards to a managed target set.

    Gets are local-first, then insertion order over targets; puts go to
    exactly one store picked by put_policy ("local-first" or an integer
    target index).
    """

    def __init__(
        self,
        local: Store | None = None,
        put_policy: str | int = "local-first",
        store_id: StoreID | None = None,
    ):
        if not (put_policy == "local-first" or isinstance(put_policy, int)):
            raise ValueError("put_policy must be 'local-first' or a target index")
        self._local = local
        self._put_policy = put_policy
        self._id = store_id or StoreID.generate()
        self._targets: list[TargetRef] = []
        self._lock = threading.RLock()

    @property
    def put_policy(self) -> str | int:
        return self._put_policy

    @put_policy.setter
    def put_policy(self, value: str | int) -> None:
        if not (value == "local-first" or isinstance(value, int)):
            raise ValueError("put_policy must be 'local-first' or a target index")
        self._put_policy = value

    @property
    def local(self) -> Store | None:
        return self._local

    def targets(self) -> list[TargetRef]:
        with self._lock:
            return list(self._targets)

    def add_target(self, target) -> TargetRef:
        ref = _coerce_target(target)
        with self._lock:
            for existing in self._targets:
                if existing.matches(ref):
                    raise DuplicateTargetError(f"target {ref.label} already present")
            self._targets.append(ref)
        return ref

    def remove_target(self, target) -> None:
        ref = _coerce_target(target)
        with self._lock:
            for i, existing in enumerate(self._targets):
                if existing.matches(ref):
                    del self._targets[i]
                    return
        raise UnknownTargetError(f"target {ref.label} is not registered")

    def get_store_id(self) -> StoreID:
        return self._id  # the proxy is a store instance in its own right

    def get_with_trace(self, key: Key) -> tuple[BitString, list[ProbeRecord]]:
        """Like get, but also returns the probe trace. On failure the raised
        error carries the trace as a .trace attribute."""
        candidates: list[tuple[str, Store | TargetRef]] = []
        if self._local is not None:
            candidates.append(("local", self._local))
        for ref in self.targets():  # snapshot taken at call start
            candidates.append((ref.label, ref))
        trace: list[ProbeRecord] = []
        queried = 0
        for label, backend in candidates:
            try:
                store = backend.connect() if isinstance(backend, TargetRef) else backend
                value = store.get(key)
            except UnknownKeyError:
                trace.append(ProbeRecord(label, "miss"))
                queried += 1
                continue
            except (UnreachableError, OSError):
                trace.append(ProbeRecord(label, "unreachable"))
                continue
            trace.append(ProbeRecord(label, "hit"))
            return value, trace
        if candidates and queried == 0:
            exc: XbaseError = AllTargetsUnreachableError(
                f"all {len(candidates)} candidates unreachable for key {key.hex}"
            )
        else:
            exc = UnknownKeyError(key.hex)
        exc.trace = trace
        raise exc

    def get(self, key: Key) -> BitString:
        value, _ = self.get_with_trace(key)
        return value

    def _put_target(self) -> Store:
        with self._lock:
            targets = list(self._targets)
            policy = self._put_policy
        if policy == "local-first":
            if self._local is not None:
                return self._local
            if targets:
                return targets[0].connect()
            raise NoWritableTargetError("no local store and no targets")
        if not 0 <= policy < len(targets):
            raise NoWritableTargetError(
                f"target index {policy} out of range, have {len(targets)}"
            )
        return targets[policy].connect()

    def put(self, value: BitString) -> Key:
        return self._put_target().put(value)

    def put_with_key(self, value: BitString, key: Key) -> None:
        self._put_target().put_with_key(value, key)

    def store_for_id(self, store_id: StoreID) -> Store | None:
        """Resolve a StoreID against this proxy's registry: its own id, the
        local store, then each target (ids cached once learned)."""
        if store_id.raw == self._id.raw:
            return self
        if self._local is not None and self._local.get_store_id().raw == store_id.raw:
            return self._local
        for ref in self.targets():
            try:
                if ref.store_id is None:
                    ref.store_id = ref.connect().get_store_id()
            except (UnreachableError, OSError):
                continue
            if ref.store_id.raw == store_id.raw:
                return ref.connect()
        return None


_root_stores: dict = {}
_root_lock = threading.Lock()


def get_root_store(home: str | os.PathLike | None = None) -> AppendLogStore:
    """The per-actor bootstrap store at <home>/root.store: an append-log
    store with content-hash keys, created on first use. Repeated calls in
    one process return the same instance for the same resolved home."""
    path = xbase_home(home) / ROOT_STORE_FILENAME
    with _root_lock:
        store = _root_stores.get(path)
        if store is None or store.closed:
            store = AppendLogStore.open(path, policy="content-hash")
            _root_stores[path] = store
        return store
