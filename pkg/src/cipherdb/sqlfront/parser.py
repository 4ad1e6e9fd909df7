"""Tokenizer and recursive-descent parser for the supported SQL subset.

Grammar (EBNF, keywords case-insensitive)::

    script      = statement [ "WITH" "KEYS" "(" keyspec { "," keyspec } ")" ] [ ";" ]
    keyspec     = ( "*" | ident [ "." ident ] ) "=" hexlit
    statement   = select | insert | update | create
    select      = "SELECT" [ "INTO" dotted ] item { "," item } [ "INTO" dotted ]
                  "FROM" tableref { "," tableref }
                  [ "WHERE" pred { "AND" pred } ] [ "GROUP" "BY" colref ]
    item        = "*" | expr [ [ "AS" ] ident ]
    tableref    = ident [ [ "AS" ] ident ]
    pred        = expr ( "=" | "<>" | "!=" ) expr
    insert      = "INSERT" "INTO" ident [ "(" ident { "," ident } ")" ]
                  "VALUES" row { "," row }
    row         = "(" expr { "," expr } ")"
    update      = "UPDATE" tableref "SET" ident "=" expr { "," ident "=" expr }
                  [ "WHERE" pred { "AND" pred } ]
    create      = "CREATE" "TABLE" ident "(" coldef { "," coldef } ")"
                  [ "GROUPED" "BY" "ROW" ] [ "KEY" "SCOPE" ( "DATABASE" | "TABLE" | "COLUMN" ) ]
    coldef      = ident type [ "DETERMINISTIC" | "PROBABILISTIC" ] [ "INDEXED" ] [ "PRIMARY" "KEY" ]
    expr        = term { ( "+" | "-" ) term }
    term        = factor { ( "*" | "/" ) factor }
    factor      = unary [ "^" factor ]
    unary       = "-" unary | primary
    primary     = number | string | hexlit | "(" expr ")" | call | colref
    call        = name "(" [ "*" | expr { "," expr } ] ")"
    colref      = ident [ "." ident ]
    hexlit      = ( "x" | "X" ) "'" hexdigits "'"
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal
from typing import List, Optional

from ..errors import SQLSyntaxError, UnsupportedFeature
from .ast import (
    AGGREGATES,
    CIPHERTEXT,
    CRYPTO_FUNCS,
    PLAINTEXT,
    SCALARS,
    BinOp,
    ColumnDef,
    ColumnRef,
    CreateTable,
    FuncCall,
    HexLiteral,
    Insert,
    KeySpec,
    Literal,
    Predicate,
    Query,
    Select,
    SelectItem,
    Star,
    TableRef,
    Update,
    uses_crypto_functions,
)

KEYWORDS = {
    "SELECT", "FROM", "WHERE", "AND", "INTO", "AS", "GROUP", "BY", "WITH", "KEYS",
    "INSERT", "VALUES", "UPDATE", "SET", "CREATE", "TABLE",
}
UNSUPPORTED = {
    "OR", "NOT", "ORDER", "TOP", "LIMIT", "JOIN", "LEFT", "RIGHT", "OUTER", "INNER", "UNION",
    "DELETE", "DROP", "ALTER", "NULL", "IS", "LIKE", "IN", "BETWEEN", "HAVING", "DISTINCT",
    "EXISTS", "BEGIN", "COMMIT", "ROLLBACK", "VIEW", "INDEX",
}
FUNCTIONS = set(AGGREGATES) | set(CRYPTO_FUNCS) | set(SCALARS)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|--[^\n]*)
  | (?P<hex>[xX]'[0-9a-fA-F]*')
  | (?P<number>\d+(?:\.\d+)?|\.\d+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*|"[^"]+")
  | (?P<op><>|!=|<=|>=|[(),.;*=+\-/^<>])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str  # hex number string ident op eof
    text: str
    line: int
    col: int

    @property
    def upper(self) -> str:
        return self.text.upper()

    @property
    def shown(self) -> str:
        # hex literals may be keys; never echo them in error messages
        if self.kind == "hex":
            return "x'...'"
        return self.text or "end of input"


def tokenize(text: str) -> List[Token]:
    tokens = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise SQLSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0

    # -- token helpers ------------------------------------------------------

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def error(self, message: str, tok: Optional[Token] = None):
        tok = tok or self.peek()
        return SQLSyntaxError(message, tok.line, tok.col)

    def is_kw(self, *words: str, offset: int = 0) -> bool:
        tok = self.peek(offset)
        return tok.kind == "ident" and tok.upper in words

    def accept_kw(self, *words: str) -> bool:
        if self.is_kw(*words):
            self.advance()
            return True
        return False

    def expect_kw(self, word: str) -> Token:
        if not self.is_kw(word):
            self._reject_unsupported()
            raise self.error(f"expected {word}, found {self.peek().shown!r}")
        return self.advance()

    def is_op(self, *ops: str) -> bool:
        tok = self.peek()
        return tok.kind == "op" and tok.text in ops

    def accept_op(self, *ops: str) -> Optional[str]:
        if self.is_op(*ops):
            return self.advance().text
        return None

    def expect_op(self, op: str) -> Token:
        if not self.is_op(op):
            self._reject_unsupported()
            raise self.error(f"expected {op!r}, found {self.peek().shown!r}")
        return self.advance()

    def _reject_unsupported(self):
        tok = self.peek()
        if tok.kind == "ident" and tok.upper in UNSUPPORTED:
            raise UnsupportedFeature(f"{tok.upper} is not supported (line {tok.line}, column {tok.col})")
        if tok.kind == "op" and tok.text in ("<", ">", "<=", ">="):
            raise UnsupportedFeature(f"comparison {tok.text} is not supported (line {tok.line}, column {tok.col})")

    def ident(self, what: str = "identifier") -> str:
        tok = self.peek()
        if tok.kind != "ident" or tok.upper in KEYWORDS:
            self._reject_unsupported()
            raise self.error(f"expected {what}, found {tok.shown!r}")
        self.advance()
        return tok.text[1:-1] if tok.text.startswith('"') else tok.text

    def dotted(self) -> str:
        parts = [self.ident("name")]
        while self.accept_op("."):
            parts.append(self.ident("name"))
        return ".".join(parts)

    # -- entry point ----------------------------------------------------------

    def parse(self) -> Query:
        stmt = self.statement()
        keys = ()
        if self.accept_kw("WITH"):
            self.expect_kw("KEYS")
            keys = self.key_clause()
        self.accept_op(";")
        if self.peek().kind != "eof":
            self._reject_unsupported()
            raise self.error(f"unexpected {self.peek().shown!r} after statement")
        kind = PLAINTEXT
        if uses_crypto_functions(stmt) or (isinstance(stmt, Select) and stmt.into):
            kind = CIPHERTEXT
        return Query(stmt, kind, keys)

    def key_clause(self):
        self.expect_op("(")
        specs = []
        while True:
            if self.accept_op("*"):
                scope = "*"
            else:
                scope = self.dotted()
                if scope.count(".") > 1:
                    raise self.error("key scope must be *, a table or table.column")
            self.expect_op("=")
            tok = self.peek()
            lit = self.primary()
            if not isinstance(lit, HexLiteral):
                raise self.error("key must be a hex literal x'...'", tok)
            specs.append(KeySpec(scope, lit))
            if not self.accept_op(","):
                break
        self.expect_op(")")
        return tuple(specs)

    def statement(self):
        tok = self.peek()
        if self.accept_kw("SELECT"):
            return self.select()
        if self.accept_kw("INSERT"):
            return self.insert()
        if self.accept_kw("UPDATE"):
            return self.update()
        if self.accept_kw("CREATE"):
            return self.create()
        self._reject_unsupported()
        raise self.error(f"expected a statement, found {tok.shown!r}")

    # -- SELECT -----------------------------------------------------------------

    def select(self) -> Select:
        into = None
        if self.accept_kw("INTO"):
            into = self.dotted()
        items = [self.select_item()]
        while self.accept_op(","):
            items.append(self.select_item())
        if self.accept_kw("INTO"):
            if into is not None:
                raise self.error("INTO given twice")
            into = self.dotted()
        self.expect_kw("FROM")
        tables = [self.table_ref()]
        while self.accept_op(","):
            tables.append(self.table_ref())
        where = self.where_clause()
        group_by = None
        if self.accept_kw("GROUP"):
            self.expect_kw("BY")
            expr = self.expr()
            if not isinstance(expr, ColumnRef):
                raise UnsupportedFeature("GROUP BY takes a single column")
            group_by = expr
            if self.is_op(","):
                raise UnsupportedFeature("GROUP BY takes a single column")
        return Select(tuple(items), tuple(tables), where, group_by, into)

    def select_item(self) -> SelectItem:
        if self.accept_op("*"):
            return SelectItem(Star())
        expr = self.expr()
        alias = None
        if self.accept_kw("AS"):
            alias = self.ident("alias")
        elif self.peek().kind == "ident" and self.peek().upper not in KEYWORDS | UNSUPPORTED:
            alias = self.ident("alias")
        return SelectItem(expr, alias)

    def table_ref(self) -> TableRef:
        name = self.ident("table name")
        if self.is_op("."):
            raise UnsupportedFeature("qualified table names are not supported")
        alias = None
        if self.accept_kw("AS"):
            alias = self.ident("alias")
        elif self.peek().kind == "ident" and self.peek().upper not in KEYWORDS | UNSUPPORTED:
            alias = self.ident("alias")
        return TableRef(name, alias)

    def where_clause(self):
        if not self.accept_kw("WHERE"):
            return ()
        preds = [self.predicate()]
        while self.accept_kw("AND"):
            preds.append(self.predicate())
        self._reject_unsupported()
        return tuple(preds)

    def predicate(self) -> Predicate:
        if self.is_op("("):
            raise UnsupportedFeature("parenthesised conditions are not supported")
        lhs = self.expr()
        op = self.accept_op("=", "<>", "!=")
        if op is None:
            self._reject_unsupported()
            raise self.error("expected = or <>")
        rhs = self.expr()
        return Predicate(lhs, "<>" if op == "!=" else op, rhs)

    # -- INSERT / UPDATE / CREATE -------------------------------------------------

    def insert(self) -> Insert:
        self.expect_kw("INTO")
        table = self.ident("table name")
        columns = ()
        if self.accept_op("("):
            cols = [self.ident("column name")]
            while self.accept_op(","):
                cols.append(self.ident("column name"))
            self.expect_op(")")
            columns = tuple(cols)
        self.expect_kw("VALUES")
        rows = [self.value_row()]
        while self.accept_op(","):
            rows.append(self.value_row())
        return Insert(table, columns, tuple(rows))

    def value_row(self):
        self.expect_op("(")
        vals = [self.expr()]
        while self.accept_op(","):
            vals.append(self.expr())
        self.expect_op(")")
        return tuple(vals)

    def update(self) -> Update:
        table = self.table_ref()
        self.expect_kw("SET")
        assigns = []
        while True:
            col = self.ident("column name")
            if self.accept_op("."):
                col = self.ident("column name")
            self.expect_op("=")
            assigns.append((col, self.expr()))
            if not self.accept_op(","):
                break
        return Update(table, tuple(assigns), self.where_clause())

    def create(self) -> CreateTable:
        self.expect_kw("TABLE")
        name = self.ident("table name")
        self.expect_op("(")
        cols = [self.column_def()]
        while self.accept_op(","):
            cols.append(self.column_def())
        self.expect_op(")")
        grouping = "individual"
        key_scope = "database"
        while self.peek().kind == "ident":
            if self.accept_kw("GROUPED"):
                self.expect_kw("BY")
                self.expect_kw("ROW")
                grouping = "row-grouped"
            elif self.accept_kw("KEY"):
                self.expect_kw("SCOPE")
                word = self.advance().upper
                if word not in ("DATABASE", "TABLE", "COLUMN"):
                    raise self.error("key scope must be DATABASE, TABLE or COLUMN")
                key_scope = {"DATABASE": "database", "TABLE": "table", "COLUMN": "per-column"}[word]
            else:
                raise self.error(f"unexpected {self.peek().shown!r} in CREATE TABLE")
        return CreateTable(name, tuple(cols), grouping, key_scope)

    def column_def(self) -> ColumnDef:
        name = self.ident("column name")
        type_name = self.ident("type name").lower()
        if self.accept_op("("):
            arg = self.advance()
            if arg.kind != "number":
                raise self.error("expected a number", arg)
            self.expect_op(")")
            if type_name == "decimal":
                type_name = f"decimal({arg.text})"
        mode, indexed, pk = "deterministic", False, False
        while True:
            if self.accept_kw("DETERMINISTIC", "DET"):
                mode = "deterministic"
            elif self.accept_kw("PROBABILISTIC", "PROB"):
                mode = "probabilistic"
            elif self.accept_kw("INDEXED"):
                indexed = True
            elif self.accept_kw("PRIMARY"):
                self.expect_kw("KEY")
                pk = True
            else:
                break
        return ColumnDef(name, type_name, mode, indexed, pk)

    # -- expressions ------------------------------------------------------------

    def expr(self):
        node = self.term()
        while True:
            op = self.accept_op("+", "-")
            if op is None:
                return node
            node = BinOp(op, node, self.term())

    def term(self):
        node = self.factor()
        while True:
            op = self.accept_op("*", "/")
            if op is None:
                return node
            node = BinOp(op, node, self.factor())

    def factor(self):
        node = self.unary()
        if self.accept_op("^"):
            return BinOp("^", node, self.factor())
        return node

    def unary(self):
        if self.accept_op("-"):
            inner = self.unary()
            if isinstance(inner, Literal) and not isinstance(inner.value, str):
                return Literal(-inner.value)
            return BinOp("-", Literal(0), inner)
        return self.primary()

    def primary(self):
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return Literal(Decimal(tok.text) if "." in tok.text else int(tok.text))
        if tok.kind == "string":
            self.advance()
            return Literal(tok.text[1:-1].replace("''", "'"))
        if tok.kind == "hex":
            self.advance()
            digits = tok.text[2:-1]
            if len(digits) % 2:
                raise self.error("hex literal needs an even number of digits", tok)
            return HexLiteral(bytearray.fromhex(digits))
        if self.accept_op("("):
            if self.is_kw("SELECT"):
                raise UnsupportedFeature("subqueries are not supported")
            node = self.expr()
            self.expect_op(")")
            return node
        if tok.kind == "ident":
            if tok.upper in UNSUPPORTED:
                self._reject_unsupported()
            if self.peek(1).kind == "op" and self.peek(1).text == "(":
                return self.call()
            return self.column_ref()
        self._reject_unsupported()
        raise self.error(f"unexpected {tok.shown!r}")

    def call(self):
        tok = self.advance()
        name = tok.upper
        if name not in FUNCTIONS:
            raise UnsupportedFeature(f"function {tok.text} is not supported (line {tok.line}, column {tok.col})")
        self.expect_op("(")
        args = []
        if self.accept_op("*"):
            if name != "COUNT":
                raise self.error(f"{name}(*) is not valid", tok)
            args.append(Star())
        elif not self.is_op(")"):
            args.append(self.expr())
            while self.accept_op(","):
                args.append(self.expr())
        self.expect_op(")")
        if name in CRYPTO_FUNCS:
            if not 1 <= len(args) <= 2:
                raise self.error(f"{name} takes a value and an optional key", tok)
            if len(args) == 2 and not isinstance(args[1], HexLiteral):
                raise self.error(f"{name} key argument must be a hex literal", tok)
        elif len(args) != 1:
            raise self.error(f"{name} takes exactly one argument", tok)
        return FuncCall(name, tuple(args))

    def column_ref(self) -> ColumnRef:
        first = self.ident("column name")
        if self.accept_op("."):
            return ColumnRef(first, self.ident("column name"))
        return ColumnRef(None, first)


def parse(text: str) -> Query:
    """Parse one statement (with optional ``WITH KEYS`` trailer)."""
    if not isinstance(text, str):
        raise SQLSyntaxError("query text must be a string")
    return Parser(text).parse()
