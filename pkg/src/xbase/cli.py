"""Command-line surface for stores, namers, serving, proxying, and
fragmentation.

Conventions: stdout carries only payloads and answers (key hex, values,
documents); every diagnostic goes to stderr. Exit codes: 0 success, 1 user
error (bad arguments, unknown keys or names), 2 corruption or I/O trouble.

Store selection (--store): a filesystem path, the literal "root" for the
per-user bootstrap store, "host:port" for a served store, or "proxy" for
the proxy configured under the home directory. Values come from --hex,
--file, or stdin.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .casters import store_reflect, store_reify
from .core import (
    CorruptionError,
    Key,
    Name,
    XbaseError,
)
from .home import xbase_home
from .namer import LogNamer, get_root_namer, open_namer
from .netstore import (
    AllTargetsUnreachableError,
    MalformedMessageError,
    ProxyStore,
    RemoteError,
    RemoteStore,
    StoreServer,
    UnreachableError,
    get_root_store,
    parse_address,
)
from .stores import AppendLogStore, SequenceKeys, open_store
from .xmldoc import xml_parse, xml_serialize
from .xmlfrag import FragSchema, MODE_NAME, defragment, fragment

PROXY_CONFIG_FILENAME = "proxy.xml"

_IO_ERRORS = (
    CorruptionError,
    UnreachableError,
    AllTargetsUnreachableError,
    RemoteError,
    MalformedMessageError,
    OSError,
)


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="xbase", description=__doc__.splitlines()[0])
    parser.add_argument("--home", help="override the data directory (else XBASE_HOME)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, store: bool = False, namer: bool = False,
            value: bool = False) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        if store:
            p.add_argument("--store", default="root",
                           help="path | root | host:port | proxy (default root)")
            p.add_argument("--layout", choices=["append-log", "file-per-key"],
                           help="layout when creating a path store")
            p.add_argument("--policy", choices=["random", "sequence", "content-hash"],
                           help="key policy when creating a path store")
        if namer:
            p.add_argument("--namer", default="root", help="path | root (default root)")
        if value:
            p.add_argument("--hex", dest="value_hex", help="value as hex")
            p.add_argument("--file", dest="value_file", help="read value from a file")
        return p

    add("put", "store a value, print its key", store=True, value=True)
    p = add("get", "print a stored value", store=True)
    p.add_argument("key", help="key as hex")
    p.add_argument("--out", help="write the value to a file instead of stdout")
    p = add("put-with-key", "store a value under a caller-chosen key",
            store=True, value=True)
    p.add_argument("key", help="key as hex")
    add("store-id", "print the store's id", store=True)

    p = add("bind", "bind a name to a key", namer=True)
    p.add_argument("name")
    p.add_argument("key", help="key as hex")
    p = add("unbind", "remove one name-to-key binding", namer=True)
    p.add_argument("name")
    p.add_argument("key", help="key as hex")
    p = add("lookup", "print the keys bound to a name, one per line", namer=True)
    p.add_argument("name")
    p = add("lookup-as-of", "lookup against a historical log position", namer=True)
    p.add_argument("name")
    p.add_argument("seq", type=int)

    p = add("serve", "serve a store over TCP until interrupted")
    p.add_argument("path")
    p.add_argument("address", help="host:port to bind")

    p = sub.add_parser("proxy", help="manage the proxy target list")
    proxy_sub = p.add_subparsers(dest="proxy_command", required=True)
    pp = proxy_sub.add_parser("add-target", help="register a target address")
    pp.add_argument("address", help="host:port")
    pp = proxy_sub.add_parser("remove-target", help="drop a target address")
    pp.add_argument("address", help="host:port")
    proxy_sub.add_parser("list", help="print target addresses, one per line")

    p = add("frag", "fragment an XML document into a store", store=True, namer=True)
    p.add_argument("doc", help="XML document file")
    p.add_argument("--schema", required=True, help="fragmentation schema file")
    p.add_argument("--mode", choices=["key", "name", "self"], default="key")
    p.add_argument("--prefix", help="name prefix (name mode)")
    p = add("defrag", "reassemble a fragmented document", store=True, namer=True)
    p.add_argument("ref", help="root fragment key (hex) or bound name")

    p = add("export-store", "print a store's XML image")
    p.add_argument("path")
    p = add("import-store", "rebuild a store from an XML image")
    p.add_argument("image", help="XML image file")
    p.add_argument("path", help="destination store path (must not exist)")

    return parser


def _read_value(args) -> bytes:
    sources = [s for s in (args.value_hex, args.value_file) if s is not None]
    if len(sources) > 1:
        raise ValueError("give a value as --hex or --file, not both")
    if args.value_hex is not None:
        return bytes.fromhex(args.value_hex)
    if args.value_file is not None:
        return Path(args.value_file).read_bytes()
    return sys.stdin.buffer.read()


def _is_address(text: str) -> bool:
    try:
        parse_address(text)
        return True
    except ValueError:
        return False


def _open_selected_store(args):
    """Returns (store, close_callable). Bootstrap instances stay open."""
    selection = args.store
    if selection == "root":
        return get_root_store(args.home), lambda: None
    if selection == "proxy":
        return _load_proxy(args.home), lambda: None
    if _is_address(selection):
        store = RemoteStore(selection)
        return store, store.close
    store = open_store(selection, layout=getattr(args, "layout", None),
                       policy=getattr(args, "policy", None))
    return store, getattr(store, "close", lambda: None)


def _open_selected_namer(args) -> tuple[LogNamer, object]:
    if args.namer == "root":
        return get_root_namer(args.home), lambda: None
    namer = open_namer(args.namer)
    return namer, namer.close


def _proxy_config_path(home) -> Path:
    return xbase_home(home) / PROXY_CONFIG_FILENAME


def _load_proxy_config(home) -> tuple[str | int, list[str]]:
    path = _proxy_config_path(home)
    if not path.exists():
        return "local-first", []
    root = xml_parse(path.read_bytes())
    if root.name != "proxy":
        raise ValueError(f"{path}: expected a <proxy> document")
    policy_text = root.attr("put-policy", "local-first")
    policy: str | int = policy_text
    if policy_text != "local-first":
        if not policy_text.isdigit():
            raise ValueError(f"{path}: bad put-policy {policy_text!r}")
        policy = int(policy_text)
    addresses = []
    for child in root.child_elements():
        if child.name != "target" or child.attr("address") is None:
            raise ValueError(f"{path}: expected <target address=...> entries")
        addresses.append(child.attr("address"))
    return policy, addresses


def _save_proxy_config(home, policy: str | int, addresses: list[str]) -> None:
    from .xmldoc import Element

    children = tuple(Element("target", (("address", a),)) for a in addresses)
    doc = Element("proxy", (("put-policy", str(policy)),), children)
    _proxy_config_path(home).write_bytes(xml_serialize(doc))


def _load_proxy(home) -> ProxyStore:
    policy, addresses = _load_proxy_config(home)
    proxy = ProxyStore(put_policy=policy)
    for address in addresses:
        proxy.add_target(address)
    return proxy


def _cmd_put(args) -> int:
    value = _read_value(args)
    store, close = _open_selected_store(args)
    try:
        print(store.put(value).hex)
    finally:
        close()
    return 0


def _cmd_get(args) -> int:
    store, close = _open_selected_store(args)
    try:
        value = store.get(Key.from_hex(args.key))
    finally:
        close()
    if args.out:
        Path(args.out).write_bytes(value)
    else:
        sys.stdout.buffer.write(value)
        sys.stdout.buffer.flush()
    return 0


def _cmd_put_with_key(args) -> int:
    value = _read_value(args)
    store, close = _open_selected_store(args)
    try:
        store.put_with_key(value, Key.from_hex(args.key))
    finally:
        close()
    return 0


def _cmd_store_id(args) -> int:
    store, close = _open_selected_store(args)
    try:
        print(store.get_store_id().hex)
    finally:
        close()
    return 0


def _cmd_bind(args) -> int:
    namer, close = _open_selected_namer(args)
    try:
        namer.bind(Name(args.name), Key.from_hex(args.key))
    finally:
        close()
    return 0


def _cmd_unbind(args) -> int:
    namer, close = _open_selected_namer(args)
    try:
        namer.unbind(Name(args.name), Key.from_hex(args.key))
    finally:
        close()
    return 0


def _cmd_lookup(args) -> int:
    namer, close = _open_selected_namer(args)
    try:
        keys = namer.lookup(Name(args.name))
    finally:
        close()
    for key_hex in sorted(k.hex for k in keys):
        print(key_hex)
    return 0


def _cmd_lookup_as_of(args) -> int:
    namer, close = _open_selected_namer(args)
    try:
        keys = namer.lookup_as_of(Name(args.name), args.seq)
    finally:
        close()
    for key_hex in sorted(k.hex for k in keys):
        print(key_hex)
    return 0


def _cmd_serve(args) -> int:
    store = open_store(args.path)
    server = StoreServer(store, args.address)
    host, port = server.address
    print(f"serving {args.path} on {host}:{port}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        store.close()
    return 0


def _cmd_proxy(args) -> int:
    policy, addresses = _load_proxy_config(args.home)
    if args.proxy_command == "list":
        for address in addresses:
            print(address)
        return 0
    parse_address(args.address)  # validate before touching the config
    if args.proxy_command == "add-target":
        if args.address in addresses:
            raise ValueError(f"target {args.address} already present")
        addresses.append(args.address)
    else:
        if args.address not in addresses:
            raise ValueError(f"target {args.address} is not registered")
        addresses.remove(args.address)
    _save_proxy_config(args.home, policy, addresses)
    return 0


def _cmd_frag(args) -> int:
    doc = xml_parse(Path(args.doc).read_bytes())
    schema = FragSchema.from_xml(Path(args.schema).read_bytes())
    store, close_store = _open_selected_store(args)
    namer, close_namer = (None, lambda: None)
    try:
        if args.mode == MODE_NAME:
            if not args.prefix:
                raise ValueError("--prefix is required for name mode")
            namer, close_namer = _open_selected_namer(args)
        ref = fragment(doc, schema, store, mode=args.mode, namer=namer,
                       name_prefix=args.prefix)
        print(ref.text if isinstance(ref, Name) else ref.hex)
    finally:
        close_namer()
        close_store()
    return 0


def _parse_ref(text: str) -> Key | Name:
    try:
        return Key.from_hex(text)
    except ValueError:
        return Name(text)


def _cmd_defrag(args) -> int:
    store, close_store = _open_selected_store(args)
    namer, close_namer = _open_selected_namer(args)
    try:
        doc = defragment(_parse_ref(args.ref), store, namer=namer)
    finally:
        close_namer()
        close_store()
    sys.stdout.buffer.write(xml_serialize(doc))
    sys.stdout.buffer.flush()
    return 0


def _cmd_export_store(args) -> int:
    store = open_store(args.path)
    try:
        image = store_reify(store)
    finally:
        store.close()
    sys.stdout.buffer.write(image)
    sys.stdout.buffer.flush()
    return 0


def _cmd_import_store(args) -> int:
    if Path(args.path).exists():
        raise ValueError(f"{args.path} already exists")
    reflected = store_reflect(Path(args.image).read_bytes())
    store = AppendLogStore.open(args.path, policy=reflected.policy.kind,
                                store_id=reflected.get_store_id())
    try:
        for key, value in reflected.bindings():
            store.put_with_key(value, key)
        if isinstance(reflected.policy, SequenceKeys):
            store.policy.next_seq = max(store.policy.next_seq,
                                        reflected.policy.next_seq)
    finally:
        store.close()
    return 0


_COMMANDS = {
    "put": _cmd_put,
    "get": _cmd_get,
    "put-with-key": _cmd_put_with_key,
    "store-id": _cmd_store_id,
    "bind": _cmd_bind,
    "unbind": _cmd_unbind,
    "lookup": _cmd_lookup,
    "lookup-as-of": _cmd_lookup_as_of,
    "serve": _cmd_serve,
    "proxy": _cmd_proxy,
    "frag": _cmd_frag,
    "defrag": _cmd_defrag,
    "export-store": _cmd_export_store,
    "import-store": _cmd_import_store,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return _COMMANDS[args.command](args)
    except _IO_ERRORS as exc:
        print(f"xbase: {exc}", file=sys.stderr)
        return 2
    except (XbaseError, ValueError) as exc:
        print(f"xbase: {exc}", file=sys.stderr)
        return 1


def entry_point() -> None:
    sys.exit(main())
