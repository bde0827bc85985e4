"""Tokenizer shared by the fact-document, rule-document and query parsers."""
from __future__ import annotations

import re
from dataclasses import dataclass


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"{line}:{column}: {message}" if line else message)


@dataclass(frozen=True)
class Token:
    kind: str  # IRIREF PNAME VAR BNODE STRING INTEGER DECIMAL WORD PUNCT EOF
    text: str
    line: int
    column: int
    value: object = None

    def __repr__(self):
        return f"Token({self.kind}, {self.text!r}, {self.line}:{self.column})"


_IRIREF = re.compile(r'<([^<>"{}|^`\\\s]*)>')
_PN_PREFIX = r"(?:[A-Za-z][A-Za-z0-9_\-]*)?"
_PN_LOCAL = r"(?:[A-Za-z0-9_](?:[A-Za-z0-9_\-.]*[A-Za-z0-9_\-])?)?"
_PNAME = re.compile(_PN_PREFIX + ":" + _PN_LOCAL)
_VAR = re.compile(r"[?$]([A-Za-z_][A-Za-z0-9_]*)")
_BNODE = re.compile(r"_:([A-Za-z0-9_][A-Za-z0-9_\-]*)")
_DECIMAL = re.compile(r"[0-9]+\.[0-9]+")
_INTEGER = re.compile(r"[0-9]+")
_WORD = re.compile(r"[A-Za-z][A-Za-z0-9_]*")
_PUNCT = ["<<", ">>", "&&", "||", "<=", ">=", "!=", "{", "}", "[", "]", "(", ")",
          ".", ";", ",", "@", "<", ">", "=", "+", "-", "*", "/", "!"]
_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", "'": "'", '"': '"'}


def _unescape(body: str, line: int, col: int) -> str:
    out = []
    i = 0
    while i < len(body):
        c = body[i]
        if c == "\\":
            if i + 1 >= len(body) or body[i + 1] not in _ESCAPES:
                raise ParseError("bad escape in string", line, col)
            out.append(_ESCAPES[body[i + 1]])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def tokenize(text: str, line_offset: int = 0) -> list[Token]:
    """Split ``text`` into tokens.

    ``<`` is read as an IRI reference only when a well-formed ``<...>`` follows;
    otherwise it is the comparison operator. Inside a quoted triple, an IRI
    reference that is immediately followed by a single ``>`` shares its closing
    bracket with the quoted-triple terminator (``<ssr:FoV>>``).
    """
    tokens: list[Token] = []
    i = 0
    line = 1 + line_offset
    line_start = 0
    depth = 0
    n = len(text)

    def pos():
        return line, i - line_start + 1

    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            i += 1
            line_start = i
            continue
        if c.isspace():
            i += 1
            continue
        if c == "#" or text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        ln, col = pos()
        if c in "'\"":
            if text.startswith(c * 3, i):
                end = text.find(c * 3, i + 3)
                if end < 0:
                    raise ParseError("unterminated long string", ln, col)
                body = text[i + 3:end]
                tokens.append(Token("STRING", text[i:end + 3], ln, col, body))
                newlines = body.count("\n")
                if newlines:
                    line += newlines
                    line_start = i + 3 + body.rfind("\n") + 1
                i = end + 3
                continue
            j = i + 1
            while j < n and text[j] != c:
                if text[j] == "\\":
                    j += 1
                if j < n and text[j] == "\n":
                    raise ParseError("newline in string", ln, col)
                j += 1
            if j >= n:
                raise ParseError("unterminated string", ln, col)
            tokens.append(Token("STRING", text[i:j + 1], ln, col, _unescape(text[i + 1:j], ln, col)))
            i = j + 1
            continue
        if c == "<" and not text.startswith("<<", i):
            m = _IRIREF.match(text, i)
            if m:
                tokens.append(Token("IRIREF", m.group(0), ln, col, m.group(1)))
                i = m.end()
                if depth > 0 and text.startswith(">", i) and not text.startswith(">>", i):
                    tokens.append(Token("PUNCT", ">>", *pos()))
                    depth -= 1
                    i += 1
                continue
        if c == "<" and text.startswith("<<", i):
            tokens.append(Token("PUNCT", "<<", ln, col))
            depth += 1
            i += 2
            continue
        if c == ">" and text.startswith(">>", i) and depth > 0:
            tokens.append(Token("PUNCT", ">>", ln, col))
            depth -= 1
            i += 2
            continue
        m = _VAR.match(text, i)
        if m:
            tokens.append(Token("VAR", m.group(0), ln, col, m.group(1)))
            i = m.end()
            continue
        m = _BNODE.match(text, i)
        if m:
            tokens.append(Token("BNODE", m.group(0), ln, col, m.group(1)))
            i = m.end()
            continue
        m = _DECIMAL.match(text, i)
        if m:
            tokens.append(Token("DECIMAL", m.group(0), ln, col, m.group(0)))
            i = m.end()
            continue
        m = _INTEGER.match(text, i)
        if m:
            tokens.append(Token("INTEGER", m.group(0), ln, col, m.group(0)))
            i = m.end()
            continue
        m = _PNAME.match(text, i)
        if m and m.group(0):
            tokens.append(Token("PNAME", m.group(0), ln, col, m.group(0)))
            i = m.end()
            continue
        m = _WORD.match(text, i)
        if m:
            tokens.append(Token("WORD", m.group(0), ln, col, m.group(0)))
            i = m.end()
            continue
        for p in _PUNCT:
            if text.startswith(p, i):
                if p == ">>":
                    # outside a quoted triple this is two comparison signs
                    continue
                tokens.append(Token("PUNCT", p, ln, col))
                i += len(p)
                break
        else:
            raise ParseError(f"unexpected character {c!r}", ln, col)
    tokens.append(Token("EOF", "", line, i - line_start + 1))
    return tokens


class TokenStream:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self, k: int = 0) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "EOF":
            self.i += 1
        return tok

    def at(self, kind: str, text: str | None = None, k: int = 0) -> bool:
        tok = self.peek(k)
        if tok.kind != kind:
            return False
        if text is None:
            return True
        if kind == "WORD":
            return tok.text.upper() == text.upper()
        return tok.text == text

    def accept(self, kind: str, text: str | None = None):
        if self.at(kind, text):
            return self.next()
        return None

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if not self.at(kind, text):
            want = text or kind
            got = tok.text or tok.kind
            raise ParseError(f"expected {want!r}, found {got!r}", tok.line, tok.column)
        return self.next()

    def error(self, message: str):
        tok = self.peek()
        raise ParseError(message, tok.line, tok.column)
