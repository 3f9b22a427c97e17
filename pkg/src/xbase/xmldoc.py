"""Small XML document model with a matching parser and canonical serializer.

Supported subset: UTF-8 input, one root element, attributes in single or
double quotes, character data, self-closing tags, the five predefined
entities plus numeric character references, comments, and an XML
declaration (both discarded). DTDs, processing instructions, and CDATA
sections are rejected.

The serializer emits one canonical form: attributes in stored order with
double quotes, minimal escaping (& < > in text; & < > " in attribute
values), self-closing tags for childless elements, and no inserted
whitespace. parse(serialize(node)) reproduces node exactly, which is why
the model refuses empty and adjacent text nodes: they could not survive
the trip.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .core import XbaseError

NAME_RE = re.compile(r"[A-Za-z_:][A-Za-z0-9_.:\-]*\Z")

_ENTITIES = {"amp": "&", "lt": "<", "gt": ">", "quot": '"', "apos": "'"}


class ParseError(XbaseError):
    """Malformed document; offset is a byte position into the input."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"offset {offset}: {message}")
        self.offset = offset


def _check_char_data(text: str, what: str) -> None:
    if not isinstance(text, str):
        raise TypeError(f"{what} must be str, got {type(text).__name__}")
    try:
        text.encode("utf-8")
    except UnicodeEncodeError:
        raise ValueError(f"{what} contains unpaired surrogates") from None


@dataclass(frozen=True)
class Text:
    """Character data; never empty so documents have one canonical shape."""

    content: str

    def __post_init__(self):
        _check_char_data(self.content, "text content")
        if not self.content:
            raise ValueError("text node must be nonempty")


@dataclass(frozen=True)
class Element:
    name: str
    attributes: tuple[tuple[str, str], ...] = ()
    children: tuple["Element | Text", ...] = ()

    def __post_init__(self):
        if not isinstance(self.name, str) or not NAME_RE.match(self.name):
            raise ValueError(f"invalid element name {self.name!r}")
        object.__setattr__(self, "attributes", tuple(tuple(a) for a in self.attributes))
        object.__setattr__(self, "children", tuple(self.children))
        seen = set()
        for pair in self.attributes:
            if len(pair) != 2:
                raise ValueError("attributes must be (name, value) pairs")
            attr_name, attr_value = pair
            if not isinstance(attr_name, str) or not NAME_RE.match(attr_name):
                raise ValueError(f"invalid attribute name {attr_name!r}")
            if attr_name in seen:
                raise ValueError(f"duplicate attribute {attr_name!r}")
            seen.add(attr_name)
            _check_char_data(attr_value, f"attribute {attr_name!r}")
        previous_was_text = False
        for child in self.children:
            if isinstance(child, Text):
                if previous_was_text:
                    raise ValueError("adjacent text nodes are not allowed")
                previous_was_text = True
            elif isinstance(child, Element):
                previous_was_text = False
            else:
                raise TypeError(f"bad child {type(child).__name__}")

    def attr(self, name: str, default: str | None = None) -> str | None:
        for attr_name, value in self.attributes:
            if attr_name == name:
                return value
        return default

    def has_attr(self, name: str) -> bool:
        return any(attr_name == name for attr_name, _ in self.attributes)

    def child_elements(self) -> list["Element"]:
        return [c for c in self.children if isinstance(c, Element)]

    def text(self) -> str:
        """Concatenated direct text content."""
        return "".join(c.content for c in self.children if isinstance(c, Text))


XmlNode = Element | Text


class _Parser:
    """Recursive-descent parser over the decoded text.

    Positions are tracked in characters; errors translate back to byte
    offsets so they point into the original input.
    """

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, message: str, pos: int | None = None):
        at = self.pos if pos is None else pos
        raise ParseError(message, len(self.text[:at].encode("utf-8")))

    def at_end(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self, n: int = 1) -> str:
        return self.text[self.pos : self.pos + n]

    def skip_whitespace(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\n":
            self.pos += 1

    def skip_misc(self, allow_decl: bool) -> None:
        # whitespace, comments, and (at the very start) the XML declaration
        while True:
            self.skip_whitespace()
            if self.peek(4) == "<!--":
                self.skip_comment()
            elif allow_decl and self.peek(5) == "<?xml":
                self.skip_declaration()
                allow_decl = False
            else:
                return

    def skip_comment(self) -> None:
        start = self.pos
        end = self.text.find("-->", self.pos + 4)
        if end < 0:
            self.fail("unterminated comment", start)
        self.pos = end + 3

    def skip_declaration(self) -> None:
        start = self.pos
        end = self.text.find("?>", self.pos + 5)
        if end < 0:
            self.fail("unterminated XML declaration", start)
        self.pos = end + 2

    def parse_name(self) -> str:
        match = re.compile(r"[A-Za-z_:][A-Za-z0-9_.:\-]*").match(self.text, self.pos)
        if match is None:
            self.fail("expected a name")
        self.pos = match.end()
        return match.group()

    def parse_reference(self) -> str:
        # self.pos is on '&'
        start = self.pos
        end = self.text.find(";", self.pos + 1)
        if end < 0 or end - self.pos > 12:
            self.fail("unterminated entity reference", start)
        body = self.text[self.pos + 1 : end]
        self.pos = end + 1
        if body.startswith("#"):
            try:
                code = int(body[2:], 16) if body[1:2] in ("x", "X") else int(body[1:], 10)
            except ValueError:
                self.fail(f"bad character reference &{body};", start)
            if code > 0x10FFFF or 0xD800 <= code <= 0xDFFF:
                self.fail(f"character reference out of range &{body};", start)
            return chr(code)
        if body in _ENTITIES:
            return _ENTITIES[body]
        self.fail(f"undefined entity &{body};", start)

    def parse_attr_value(self) -> str:
        quote = self.peek()
        if quote not in ("'", '"'):
            self.fail("expected quoted attribute value")
        self.pos += 1
        parts: list[str] = []
        while True:
            if self.at_end():
                self.fail("unterminated attribute value")
            ch = self.text[self.pos]
            if ch == quote:
                self.pos += 1
                return "".join(parts)
            if ch == "<":
                self.fail("'<' in attribute value")
            if ch == "&":
                parts.append(self.parse_reference())
            else:
                parts.append(ch)
                self.pos += 1

    def parse_element(self) -> Element:
        # self.pos is on '<'
        self.pos += 1
        name = self.parse_name()
        attributes: list[tuple[str, str]] = []
        seen: set[str] = set()
        while True:
            had_space = self.pos < len(self.text) and self.text[self.pos] in " \t\r\n"
            self.skip_whitespace()
            if self.peek(2) == "/>":
                self.pos += 2
                return Element(name, tuple(attributes), ())
            if self.peek() == ">":
                self.pos += 1
                break
            if not had_space:
                self.fail("expected whitespace before attribute")
            attr_start = self.pos
            attr_name = self.parse_name()
            if attr_name in seen:
                self.fail(f"duplicate attribute {attr_name!r}", attr_start)
            seen.add(attr_name)
            self.skip_whitespace()
            if self.peek() != "=":
                self.fail("expected '=' after attribute name")
            self.pos += 1
            self.skip_whitespace()
            attributes.append((attr_name, self.parse_attr_value()))

        children: list[XmlNode] = []
        text_parts: list[str] = []

        def flush_text() -> None:
            if text_parts:
                children.append(Text("".join(text_parts)))
                text_parts.clear()

        while True:
            if self.at_end():
                self.fail(f"unclosed element <{name}>")
            ch = self.text[self.pos]
            if ch == "<":
                if self.peek(4) == "<!--":
                    self.skip_comment()  # does not split surrounding text
                    continue
                if self.peek(2) == "</":
                    close_start = self.pos
                    self.pos += 2
                    close_name = self.parse_name()
                    if close_name != name:
                        self.fail(
                            f"mismatched tag: expected </{name}>, got </{close_name}>",
                            close_start,
                        )
                    self.skip_whitespace()
                    if self.peek() != ">":
                        self.fail("expected '>' in closing tag")
                    self.pos += 1
                    flush_text()
                    return Element(name, tuple(attributes), tuple(children))
                if self.peek(9) == "<![CDATA[":
                    self.fail("CDATA sections are not supported")
                if self.peek(2) == "<!":
                    self.fail("DTD constructs are not supported")
                if self.peek(2) == "<?":
                    self.fail("processing instructions are not supported")
                flush_text()
                children.append(self.parse_element())
            elif ch == "&":
                text_parts.append(self.parse_reference())
            else:
                text_parts.append(ch)
                self.pos += 1

    def parse_document(self) -> Element:
        if self.peek() == "﻿":
            self.pos += 1
        self.skip_misc(allow_decl=True)
        if self.at_end():
            self.fail("expected a root element")
        if self.peek() != "<":
            self.fail("content outside the root element")
        if self.peek(2) in ("<!", "<?"):
            if self.peek(9) == "<![CDATA[":
                self.fail("CDATA sections are not supported")
            if self.peek(2) == "<?":
                self.fail("processing instructions are not supported")
            self.fail("DTD constructs are not supported")
        root = self.parse_element()
        self.skip_misc(allow_decl=False)
        if not self.at_end():
            self.fail("content after the root element")
        return root


def xml_parse(data: bytes | str) -> Element:
    """Parse one document and return its root element."""
    if isinstance(data, (bytes, bytearray, memoryview)):
        raw = bytes(data)
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"invalid UTF-8: {exc.reason}", exc.start) from None
    else:
        text = data
    return _Parser(text).parse_document()


def escape_text(value: str) -> str:
    return value.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def escape_attr(value: str) -> str:
    return escape_text(value).replace('"', "&quot;")


def _serialize_into(node: XmlNode, parts: list[str]) -> None:
    if isinstance(node, Text):
        parts.append(escape_text(node.content))
        return
    parts.append(f"<{node.name}")
    for attr_name, value in node.attributes:
        parts.append(f' {attr_name}="{escape_attr(value)}"')
    if not node.children:
        parts.append("/>")
        return
    parts.append(">")
    for child in node.children:
        _serialize_into(child, parts)
    parts.append(f"</{node.name}>")


def xml_serialize(node: XmlNode) -> bytes:
    """Canonical UTF-8 serialization; inverse of xml_parse on its image."""
    parts: list[str] = []
    _serialize_into(node, parts)
    return "".join(parts).encode("utf-8")


def iter_elements(root: Element):
    """Yield root and every descendant element, document order."""
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.child_elements()))
