"""Textual kernel mini-language: parser and pretty printer.

The grammar is documented in README.md (appendix "Kernel language").
Printing a kernel and parsing the result yields an identical kernel.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from perfseer.affine import AffineExpr
from perfseer.errors import IRError, ParseError
from perfseer.ir import (
    ArgDecl, BinOp, Const, Expr, InameTag, Kernel, LoopDomain, Neg, Reduce, Statement, Var,
    arrays_accessed, expr_dtype, free_inames, iter_vars, join_dtypes, parse_assumptions,
    validate_kernel,
)

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<float>(?:\d+\.\d*|\.\d+)(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|<=|>=|[-+*/()\[\]{},:;=<>$])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(Token("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def error(self, message: str, expected: str | None = None, tok: Token | None = None):
        tok = tok or self.tok
        return ParseError(message, self.text, tok.pos, expected)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "ident")

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"found {found!r}", repr(text))
        tok = self.tok
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def ident(self) -> str:
        if self.tok.kind != "ident":
            raise self.error(f"found {self.tok.text or 'end of input'!r}", "identifier")
        tok = self.tok
        self.i += 1
        return tok.text

    def done(self):
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}", "end of input")

    # {{{ affine expressions

    def affine(self) -> AffineExpr:
        result = self.affine_term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            op = self.tok.text
            self.i += 1
            rhs = self.affine_term()
            result = result + rhs if op == "+" else result - rhs
        return result

    def affine_term(self) -> AffineExpr:
        start = self.tok
        result = self.affine_unary()
        while self.tok.text in ("*", "/") and self.tok.kind == "op":
            op = self.tok.text
            self.i += 1
            rhs = self.affine_unary()
            if op == "*":
                if not (result.is_constant or rhs.is_constant):
                    raise self.error("non-affine product", tok=start)
                result = result * rhs
            else:
                if not rhs.is_constant or rhs.constant == 0:
                    raise self.error("affine division needs a nonzero constant divisor", tok=start)
                result = result * (1 / rhs.constant)
        return result

    def affine_unary(self) -> AffineExpr:
        if self.accept("-"):
            return -self.affine_unary()
        if self.accept("("):
            inner = self.affine()
            self.expect(")")
            return inner
        if self.tok.kind == "int":
            value = int(self.tok.text)
            self.i += 1
            return AffineExpr.const(value)
        if self.tok.kind == "ident":
            return AffineExpr.var(self.ident())
        if self.tok.kind == "float":
            raise self.error("float literal in affine expression")
        raise self.error(f"found {self.tok.text or 'end of input'!r}", "affine term")

    # }}}

    # {{{ rhs expressions

    def expr(self) -> Expr:
        result = self.term()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            op = self.tok.text
            self.i += 1
            result = BinOp(op, result, self.term())
        return result

    def term(self) -> Expr:
        result = self.unary()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.tok.text
            tok = self.tok
            self.i += 1
            rhs = self.unary()
            if op == "/" and not (isinstance(rhs, Const) and rhs.value != 0):
                raise self.error("division is only allowed by nonzero literals", tok=tok)
            result = BinOp(op, result, rhs)
        return result

    def unary(self) -> Expr:
        if self.accept("-"):
            operand = self.unary()
            if isinstance(operand, Const):
                return Const(-operand.value)
            return Neg(operand)
        return self.primary()

    def primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "int":
            self.i += 1
            return Const(int(tok.text))
        if tok.kind == "float":
            self.i += 1
            return Const(float(tok.text))
        if self.accept("("):
            inner = self.expr()
            self.expect(")")
            return inner
        if tok.kind == "ident" and tok.text == "sum" and self.peek().text == "(":
            return self.reduction()
        if tok.kind == "ident":
            return self.var()
        raise self.error(f"found {tok.text or 'end of input'!r}", "expression")

    def reduction(self) -> Expr:
        self.expect("sum")
        self.expect("(")
        if self.accept("("):
            inames = [self.ident()]
            while self.accept(","):
                inames.append(self.ident())
            self.expect(")")
        else:
            if self.tok.kind != "ident":
                raise self.error("malformed reduction", "reduction iname")
            inames = [self.ident()]
        if len(set(inames)) != len(inames):
            raise self.error("malformed reduction: repeated iname")
        self.expect(",")
        body = self.expr()
        self.expect(")")
        return Reduce(tuple(inames), body)

    def var(self) -> Var:
        name = self.ident()
        tag = None
        if self.accept("$"):
            tag = self.ident()
        indices: list[AffineExpr] = []
        if self.accept("["):
            indices.append(self.affine())
            while self.accept(","):
                indices.append(self.affine())
            self.expect("]")
        return Var(name, tuple(indices), tag)

    # }}}


def parse_affine(text: str) -> AffineExpr:
    p = _Parser(text)
    result = p.affine()
    p.done()
    return result


def parse_expr(text: str) -> Expr:
    p = _Parser(text)
    result = p.expr()
    p.done()
    return result


def parse_var(text: str) -> Var:
    p = _Parser(text)
    result = p.var()
    p.done()
    return result


# {{{ domains

def parse_domain(src: str) -> LoopDomain:
    """Parse ``{[i,j,...]: <constraints>}`` into a nested :class:`LoopDomain`."""
    p = _Parser(src)
    p.expect("{")
    p.expect("[")
    inames = [p.ident()]
    while p.accept(","):
        inames.append(p.ident())
    p.expect("]")
    if len(set(inames)) != len(inames):
        raise ParseError("repeated iname in domain", src, 0)
    constraints: list[tuple[AffineExpr, Token, str | None]] = []
    if p.accept(":"):
        while True:
            constraints.extend(_chain(p, inames))
            if not p.accept("and"):
                break
    p.expect("}")
    p.done()

    order = {name: k for k, name in enumerate(inames)}
    lower: dict[str, AffineExpr] = {}
    upper: dict[str, AffineExpr] = {}
    for expr, tok, subject in constraints:
        # expr >= 0
        present = [s for s in expr.symbols if s in order]
        if subject is None:
            if not present:
                raise ParseError("constraint involves no iname", src, tok.pos)
            subject = max(present, key=order.__getitem__)
        coeff = expr.coeff(subject)
        if abs(coeff) != 1:
            raise ParseError(f"iname '{subject}' must appear with coefficient +-1", src, tok.pos)
        rest = expr - AffineExpr.var(subject, coeff)
        for sym in rest.symbols:
            if sym in order and order[sym] >= order[subject]:
                raise ParseError(f"bound on '{subject}' references inner iname '{sym}' "
                                 "(violates nesting)", src, tok.pos)
        if coeff == 1:
            bound, table, kind = -rest, lower, "lower"
        else:
            bound, table, kind = rest, upper, "upper"
        if subject in table and table[subject] != bound:
            raise ParseError(f"iname '{subject}' has conflicting {kind} bounds "
                             f"{table[subject]} and {bound}", src, tok.pos)
        table[subject] = bound
    bounds = []
    for name in inames:
        if name not in lower or name not in upper:
            missing = "lower" if name not in lower else "upper"
            raise ParseError(f"iname '{name}' has no {missing} bound", src, 0)
        bounds.append((lower[name], upper[name]))
    return LoopDomain(tuple(inames), tuple(bounds))


def _chain(p: _Parser, inames: Sequence[str]):
    """Parse ``a <= b, c < d ...`` returning ``(expr >= 0, token, subject)``."""
    sides = [_side(p)]
    ops: list[Token] = []
    while p.tok.kind == "op" and p.tok.text in ("<", "<=", ">", ">=", "=="):
        ops.append(p.tok)
        p.i += 1
        sides.append(_side(p))
    if not ops:
        raise p.error("found " + repr(p.tok.text or "end of input"), "comparison operator")
    out = []
    for k, op in enumerate(ops):
        left, right = sides[k], sides[k + 1]
        for a in left:
            for b in right:
                subject = _subject(a, b, k, len(sides), inames)
                if op.text in ("<", "<="):
                    diff = b - a - (1 if op.text == "<" else 0)
                    out.append((diff, op, subject))
                elif op.text in (">", ">="):
                    diff = a - b - (1 if op.text == ">" else 0)
                    out.append((diff, op, subject))
                else:
                    out.append((b - a, op, subject))
                    out.append((a - b, op, subject))
    for k, side in enumerate(sides):
        if len(side) > 1 and not all(_bare(e, inames) for e in side):
            raise p.error("comma-separated chain members must be inames")
    return out


def _side(p: _Parser) -> list[AffineExpr]:
    items = [p.affine()]
    while p.tok.text == ",":
        p.i += 1
        items.append(p.affine())
    return items


def _bare(e: AffineExpr, inames) -> str | None:
    if len(e.terms) == 1 and e.constant == 0 and e.terms[0][1] == 1 and e.terms[0][0] in inames:
        return e.terms[0][0]
    return None


def _subject(a: AffineExpr, b: AffineExpr, k: int, nsides: int, inames) -> str | None:
    # interior members of a chain are the bounded inames
    if nsides > 2:
        if k + 1 <= nsides - 2 and _bare(b, inames):
            return _bare(b, inames)
        if k >= 1 and _bare(a, inames):
            return _bare(a, inames)
    ba, bb = _bare(a, inames), _bare(b, inames)
    if ba and bb:
        return max((ba, bb), key=list(inames).index)
    if ba and ba not in b.symbols:
        return ba
    if bb and bb not in a.symbols:
        return bb
    return None


def print_domain(d: LoopDomain) -> str:
    parts = [f"{lo} <= {name} <= {hi}" for name, (lo, hi) in zip(d.inames, d.bounds)]
    body = " and ".join(parts)
    return "{[" + ", ".join(d.inames) + "]" + (": " + body if parts else "") + "}"

# }}}


# {{{ statements

_ANNOTATION_KEYS = ("id", "dep", "within", "if", "nocount")


def parse_instruction(src: str, domain: LoopDomain | None = None, default_id: str = "s0"
                      ) -> Statement:
    """Parse ``lhs[subs] = rhs {annotations}`` or ``barrier {annotations}``."""
    return _parse_instruction(src, domain, default_id)[0]


def _parse_instruction(src: str, domain: LoopDomain | None, default_id: str
                       ) -> tuple[Statement, bool]:
    """Return the statement and whether its dependencies are left to infer."""
    p = _Parser(src)
    notes: dict[str, str] = {}
    if p.tok.text == "barrier" and p.peek().text in ("{", "") and p.peek().kind in ("op", "eof"):
        p.i += 1
        if p.at("{"):
            notes = _annotations(p, src)
        p.done()
        if "within" not in notes:
            raise ParseError("barrier needs an explicit within= annotation", src, 0)
        return Statement(id=notes.get("id", default_id), lhs=None, rhs=None,
                         within=frozenset(_names(notes["within"])),
                         depends_on=frozenset(_names(notes.get("dep", ""))),
                         is_barrier=True), False
    lhs = p.var()
    p.expect("=")
    rhs = p.expr()
    if p.at("{"):
        notes = _annotations(p, src)
    p.done()

    inames = domain.inames if domain is not None else ()
    if "within" in notes:
        within = frozenset(_names(notes["within"]))
    else:
        within = set(free_inames(rhs, inames))
        for idx in lhs.indices:
            within |= idx.symbols & set(inames)
        if domain is not None:
            within = domain.closure(within)
        within = frozenset(within)
    if domain is not None:
        unknown = within - set(inames)
        bound_names = set()
        for var, bound in iter_vars(rhs):
            bound_names |= set(bound)
        unknown |= bound_names - set(inames)
        if unknown:
            raise ParseError(f"unknown iname(s) {sorted(unknown)}", src, 0)
    predicates = ()
    if "if" in notes:
        predicates = tuple(_predicates(notes["if"]))
    stmt = Statement(id=notes.get("id", default_id), lhs=lhs, rhs=rhs, within=within,
                     depends_on=frozenset(_names(notes.get("dep", ""))),
                     predicates=predicates, counted="nocount" not in notes)
    return stmt, "dep" not in notes


def _annotations(p: _Parser, src: str) -> dict[str, str]:
    start = p.tok.pos
    depth = 0
    end = None
    for k in range(start, len(src)):
        if src[k] == "{":
            depth += 1
        elif src[k] == "}":
            depth -= 1
            if depth == 0:
                end = k
                break
    if end is None:
        raise ParseError("unterminated annotation block", src, start, "'}'")
    body = src[start + 1:end]
    notes: dict[str, str] = {}
    for item in body.split(","):
        item = item.strip()
        if not item:
            continue
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in _ANNOTATION_KEYS:
            raise ParseError(f"unknown annotation '{key}'", src, start,
                             ", ".join(_ANNOTATION_KEYS))
        notes[key] = value.strip()
    # skip tokens consumed by the block
    while p.tok.kind != "eof" and p.tok.pos <= end:
        p.i += 1
    return notes


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(":") if t.strip()]


def _predicates(text: str) -> list[AffineExpr]:
    out = []
    for part in text.split(" and "):
        p = _Parser(part)
        left = p.affine()
        op = p.tok.text
        if op not in ("<", "<=", ">", ">="):
            raise p.error(f"found {op!r}", "comparison")
        p.i += 1
        right = p.affine()
        p.done()
        if op == "<=":
            out.append(right - left)
        elif op == "<":
            out.append(right - left - 1)
        elif op == ">=":
            out.append(left - right)
        else:
            out.append(left - right - 1)
    return out


def print_var(v: Var) -> str:
    text = v.name + (f"${v.tag}" if v.tag else "")
    if v.indices:
        text += "[" + ", ".join(str(i) for i in v.indices) + "]"
    return text


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def print_expr(e: Expr) -> str:
    return _print(e)


def _print(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(e.value) if isinstance(e.value, float) else str(e.value)
    if isinstance(e, Var):
        return print_var(e)
    if isinstance(e, Neg):
        inner = _print(e.operand)
        if isinstance(e.operand, (BinOp, Neg)) or (isinstance(e.operand, Const)):
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Reduce):
        names = e.inames[0] if len(e.inames) == 1 else "(" + ", ".join(e.inames) + ")"
        return f"sum({names}, {_print(e.body)})"
    prec = _PREC[e.op]
    left = _print(e.left)
    right = _print(e.right)
    if isinstance(e.left, BinOp) and _PREC[e.left.op] < prec:
        left = f"({left})"
    if isinstance(e.right, BinOp) and _PREC[e.right.op] <= prec:
        right = f"({right})"
    elif isinstance(e.right, Neg) or (isinstance(e.right, Const) and _negative(e.right)):
        right = f"({right})"
    return f"{left} {e.op} {right}" if prec == 1 else f"{left}*{right}" if e.op == "*" \
        else f"{left}/{right}"


def _negative(c: Const) -> bool:
    return c.value < 0


def print_statement(s: Statement, domain: LoopDomain) -> str:
    notes = [f"id={s.id}", "dep=" + ":".join(sorted(s.depends_on)),
             "within=" + ":".join(domain.ordered(s.within))]
    if s.predicates:
        notes.append("if=" + " and ".join(f"{p} >= 0" for p in s.predicates))
    if not s.counted:
        notes.append("nocount")
    block = "{" + ", ".join(notes) + "}"
    if s.is_barrier:
        return f"barrier {block}"
    return f"{print_var(s.lhs)} = {print_expr(s.rhs)} {block}"

# }}}


# {{{ kernels

def _coerce_arg(decl) -> ArgDecl:
    if isinstance(decl, ArgDecl):
        return decl
    name, dtype, *rest = decl
    shape = rest[0] if rest else ()
    space = rest[1] if len(rest) > 1 else "global"
    if isinstance(shape, str):
        shape = [s for s in shape.strip("[]").split(",") if s.strip()]
    extents = []
    for e in shape:
        if isinstance(e, AffineExpr):
            extents.append(e)
        elif isinstance(e, int):
            extents.append(AffineExpr.const(e))
        else:
            extents.append(parse_affine(str(e)))
    return ArgDecl(name, dtype, tuple(extents), space)


def make_kernel(domain, instructions: Iterable, arg_decls: Iterable = (), name: str = "kernel",
                assumptions: Iterable = (), tags=None, single_work_item: bool = False) -> Kernel:
    """Build and validate a kernel from source strings.

    ``instructions`` may mix source strings and :class:`Statement` objects.
    Undeclared assigned scalars become private temporaries whose dtypes are
    inferred from their assignments. Unless given explicitly, statement ids
    are ``s0, s1, ...`` and a statement depends on every earlier statement
    writing a variable it reads.
    """
    if isinstance(domain, str):
        domain = parse_domain(domain)
    errors: list[str] = []
    stmts: list[Statement] = []
    infer: list[bool] = []
    for k, src in enumerate(instructions):
        if isinstance(src, Statement):
            stmts.append(src)
            infer.append(False)
            continue
        try:
            s, want = _parse_instruction(src, domain, f"s{k}")
        except ParseError as exc:
            errors.append(f"instruction {k}: {exc}")
            continue
        infer.append(want)
        stmts.append(s)
    if errors:
        raise ParseError("; ".join(errors))

    args = [_coerce_arg(d) for d in arg_decls]
    declared = {a.name for a in args}
    temps: dict[str, str | None] = {}
    for s in stmts:
        if s.lhs is not None and s.lhs.name not in declared and s.lhs.name not in temps:
            if s.lhs.indices:
                raise IRError(f"array '{s.lhs.name}' is assigned but not declared")
            temps[s.lhs.name] = None
    dtypes = {a.name: a.dtype for a in args}
    for _ in range(len(temps) + 1):
        changed = False
        for s in stmts:
            if s.lhs is None or s.lhs.name not in temps:
                continue
            value = expr_dtype(s.rhs, {**dtypes, **{t: d for t, d in temps.items() if d}})
            new = join_dtypes(temps[s.lhs.name], value)
            if new != temps[s.lhs.name]:
                temps[s.lhs.name] = new
                changed = True
        if not changed:
            break
    for t, d in temps.items():
        args.append(ArgDecl(t, d or "float32", (), "private"))
        dtypes[t] = d or "float32"
    for s in stmts:
        if s.rhs is None:
            continue
        try:
            result = expr_dtype(s.rhs, dtypes)
            join_dtypes(dtypes.get(s.lhs.name), result)
        except IRError as exc:
            raise IRError(f"statement '{s.id}': {exc}") from None

    writers: list[tuple[str, str]] = []
    final = []
    for s, want in zip(stmts, infer):
        if want:
            reads = {v.name for v, d, _ in arrays_accessed(s) if d == "load"}
            deps = frozenset(sid for sid, var in writers if var in reads)
            s = replace(s, depends_on=deps)
        if s.lhs is not None:
            writers.append((s.id, s.lhs.name))
        final.append(s)

    k = Kernel(domain, tuple(final), tuple(args), (), (), name, single_work_item)
    k = validate_kernel(k)
    from perfseer.ir import assume, tag_inames
    for a in assumptions:
        k = assume(k, a)
    if tags:
        k = tag_inames(k, tags)
    return k


_DIRECTIVES = ("arg", "assume", "tag", "name", "single_work_item")


def _is_directive(line: str) -> bool:
    words = line.split()
    if not words or words[0] not in _DIRECTIVES:
        return False
    if words[0] == "single_work_item":
        return len(words) == 1
    return len(words) >= 2 and re.match(r"[A-Za-z_]", words[1]) is not None and \
        not line[len(words[0]):].lstrip().startswith(("=", "[", "$"))


def parse_kernel_file(text: str) -> Kernel:
    """Parse a kernel source file: one domain line, instruction lines, then
    ``arg``/``assume``/``tag``/``name``/``single_work_item`` directives."""
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if not lines:
        raise ParseError("empty kernel file")
    domain = parse_domain(lines[0])
    instructions, args, assumptions, tags = [], [], [], {}
    name, single = "kernel", False
    for line in lines[1:]:
        if not _is_directive(line):
            instructions.append(line)
            continue
        words = line.split(None, 1)
        key, rest = words[0], (words[1] if len(words) > 1 else "")
        if key == "arg":
            m = re.match(r"([A-Za-z_]\w*)\s+(\w+)\s*(\[[^\]]*\])?\s*(\w+)?\s*$", rest)
            if not m:
                raise ParseError("malformed arg declaration", line, 0,
                                 "arg <name> <dtype> [<shape>] [global|local|private]")
            shape = m.group(3)[1:-1] if m.group(3) else ""
            extents = [parse_affine(e) for e in shape.split(",") if e.strip()]
            args.append(ArgDecl(m.group(1), m.group(2), tuple(extents), m.group(4) or "global"))
        elif key == "assume":
            assumptions.extend(parse_assumptions(rest))
        elif key == "tag":
            for item in rest.split(","):
                iname, _, tag = item.strip().partition(" ")
                if ":" in iname and not tag:
                    iname, _, tag = iname.partition(":")
                tags[iname.strip()] = InameTag.parse(tag)
        elif key == "name":
            name = rest.strip()
        else:
            single = True
    return make_kernel(domain, instructions, args, name=name, assumptions=assumptions,
                       tags=tags, single_work_item=single)


def print_kernel(k: Kernel) -> str:
    lines = [print_domain(k.domain)]
    lines.extend(print_statement(s, k.domain) for s in k.statements)
    for a in k.args:
        shape = " [" + ", ".join(str(e) for e in a.shape) + "]" if a.shape else ""
        lines.append(f"arg {a.name} {a.dtype}{shape} {a.address_space}")
    lines.extend(f"assume {a}" for a in k.assumptions)
    if k.iname_tags:
        lines.append("tag " + ", ".join(f"{i}:{t}" for i, t in k.iname_tags))
    lines.append(f"name {k.name}")
    if k.single_work_item:
        lines.append("single_work_item")
    return "\n".join(lines) + "\n"

# }}}
