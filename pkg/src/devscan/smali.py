"""Parser for smali disassembly, covering the supported instruction subset.

One ``.smali`` file holds one class. Instructions outside the subset that
still look like valid smali are lowered to ``nop`` and counted per method;
debug and annotation directives are skipped. Anything unparseable raises
:class:`SmaliSyntaxError` with the offending line and column.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .ir import (
    ClassDef,
    FieldRef,
    Instruction,
    IRError,
    MethodIR,
    MethodRef,
    Opcode,
    Program,
    parse_method_descriptor,
    type_words,
)


class SmaliSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, col {column}: {message}")
        self.line = line
        self.column = column


class ProgramLoadError(ValueError):
    pass


# Mnemonics mapped into the subset. Width/range suffixed forms collapse to
# their base semantics; the register list already tells the rest.
_MNEMONIC_ALIASES = {
    "const-string": Opcode.CONST_STRING,
    "const-string/jumbo": Opcode.CONST_STRING,
    "move": Opcode.MOVE,
    "move/from16": Opcode.MOVE,
    "move/16": Opcode.MOVE,
    "move-object": Opcode.MOVE,
    "move-object/from16": Opcode.MOVE,
    "move-object/16": Opcode.MOVE,
    "move-wide": Opcode.MOVE,
    "move-wide/from16": Opcode.MOVE,
    "move-wide/16": Opcode.MOVE,
    "invoke-virtual": Opcode.INVOKE_VIRTUAL,
    "invoke-virtual/range": Opcode.INVOKE_VIRTUAL,
    "invoke-static": Opcode.INVOKE_STATIC,
    "invoke-static/range": Opcode.INVOKE_STATIC,
    "invoke-direct": Opcode.INVOKE_DIRECT,
    "invoke-direct/range": Opcode.INVOKE_DIRECT,
    "invoke-interface": Opcode.INVOKE_INTERFACE,
    "invoke-interface/range": Opcode.INVOKE_INTERFACE,
    "move-result": Opcode.MOVE_RESULT,
    "move-result-object": Opcode.MOVE_RESULT,
    "move-result-wide": Opcode.MOVE_RESULT,
    "return-void": Opcode.RETURN_VOID,
    "return-object": Opcode.RETURN_OBJECT,
    "return": Opcode.RETURN_VALUE,
    "return-wide": Opcode.RETURN_VALUE,
    "if-eqz": Opcode.IF_EQZ,
    "if-nez": Opcode.IF_NEZ,
    "if-eq": Opcode.IF_EQ,
    "if-ne": Opcode.IF_NE,
    "goto": Opcode.GOTO,
    "goto/16": Opcode.GOTO,
    "goto/32": Opcode.GOTO,
    "sget-object": Opcode.SGET_OBJECT,
    "iget-object": Opcode.IGET_OBJECT,
    "new-instance": Opcode.NEW_INSTANCE,
    "nop": Opcode.NOP,
}

# Data/annotation block directives that are safe to skip wholesale.
_SKIPPABLE_BLOCKS = {
    ".annotation": ".end annotation",
    ".subannotation": ".end subannotation",
    ".packed-switch": ".end packed-switch",
    ".sparse-switch": ".end sparse-switch",
    ".array-data": ".end array-data",
}

# Debug/metadata directives that carry no IR content. `.param` annotation
# blocks need no special casing: the inner `.annotation` is block-skipped
# and the stray `.end param` is skipped here.
_SKIPPABLE_LINES = (
    ".line",
    ".prologue",
    ".epilogue",
    ".source",
    ".local",
    ".end local",
    ".restart local",
    ".catch",
    ".catchall",
    ".param",
    ".end param",
    ".end field",
)


def _is_skippable_line(line: str) -> bool:
    return any(line == d or line.startswith(d + " ") for d in _SKIPPABLE_LINES)

_LABEL_RE = re.compile(r"^:[A-Za-z_][A-Za-z0-9_]*$")
_REGISTER_RE = re.compile(r"^[vp]\d+$")
_TYPE_RE = re.compile(r"^\[*(?:L[^;]+;|[ZBSCIJFD])$")
_CLASS_RE = re.compile(r"^L[^;]+;$")
_MNEMONIC_RE = re.compile(r"^[a-z][a-z0-9/.-]*$")
_METHOD_REF_RE = re.compile(
    r"^(?P<owner>\[*L[^;]+;)->(?P<name><?[A-Za-z0-9_$]+>?):?(?P<desc>\([^)]*\).+)$"
)
_FIELD_REF_RE = re.compile(
    r"^(?P<owner>\[*L[^;]+;)->(?P<name>[A-Za-z0-9_$]+):(?P<desc>\[*(?:L[^;]+;|[ZBSCIJFD]))$"
)

_ESCAPES = {
    "n": "\n",
    "r": "\r",
    "t": "\t",
    "b": "\b",
    "f": "\f",
    "0": "\0",
    "'": "'",
    '"': '"',
    "\\": "\\",
}


def _unescape(raw: str, line_no: int) -> str:
    out: list[str] = []
    i = 0
    while i < len(raw):
        c = raw[i]
        if c != "\\":
            out.append(c)
            i += 1
            continue
        if i + 1 >= len(raw):
            raise SmaliSyntaxError("dangling escape in string literal", line_no)
        nxt = raw[i + 1]
        if nxt == "u":
            if i + 6 > len(raw):
                raise SmaliSyntaxError("bad \\u escape in string literal", line_no)
            try:
                out.append(chr(int(raw[i + 2 : i + 6], 16)))
            except ValueError:
                raise SmaliSyntaxError("bad \\u escape in string literal", line_no)
            i += 6
        elif nxt in _ESCAPES:
            out.append(_ESCAPES[nxt])
            i += 2
        else:
            raise SmaliSyntaxError(f"unknown escape \\{nxt}", line_no)
    return "".join(out)


def _escape(text: str) -> str:
    out: list[str] = []
    for c in text:
        if c == "\\":
            out.append("\\\\")
        elif c == '"':
            out.append('\\"')
        elif c == "\n":
            out.append("\\n")
        elif c == "\r":
            out.append("\\r")
        elif c == "\t":
            out.append("\\t")
        elif ord(c) < 0x20:
            out.append(f"\\u{ord(c):04x}")
        else:
            out.append(c)
    return "".join(out)


def _strip_comment(line: str) -> str:
    # '#' starts a comment unless inside a quoted string
    in_string = False
    i = 0
    while i < len(line):
        c = line[i]
        if c == '"' and (i == 0 or line[i - 1] != "\\"):
            # even a backslash-quoted quote flips correctly because escapes
            # are resolved later; here we only need string boundaries
            in_string = not in_string
        elif c == "\\" and in_string:
            i += 1
        elif c == "#" and not in_string:
            return line[:i]
        i += 1
    return line


@dataclass
class _RawInstruction:
    line_no: int
    mnemonic: str
    rest: str
    labels: tuple[str, ...]


class _MethodParser:
    """Parses one `.method` body into a MethodIR."""

    def __init__(self, owner: str, header: str, line_no: int):
        self.owner = owner
        self.line_no = line_no
        flags, name, descriptor = _split_method_header(header, line_no)
        self.name = name
        self.descriptor = descriptor
        self.flags = flags
        self.is_static = "static" in flags
        self.is_abstract_or_native = bool({"abstract", "native"} & set(flags))
        self.registers: int | None = None
        self.locals: int | None = None
        self.raw: list[_RawInstruction] = []
        self.pending_labels: list[str] = []
        self.lowered = 0

    def param_words(self) -> int:
        params, _ = parse_method_descriptor(self.descriptor)
        return (0 if self.is_static else 1) + sum(type_words(p) for p in params)

    def feed(self, line: str, line_no: int) -> None:
        if line.startswith(".registers"):
            self.registers = _parse_count(line, ".registers", line_no)
            return
        if line.startswith(".locals"):
            self.locals = _parse_count(line, ".locals", line_no)
            return
        if _LABEL_RE.match(line):
            self.pending_labels.append(line)
            return
        first = line.split(None, 1)
        mnemonic = first[0]
        rest = first[1] if len(first) > 1 else ""
        self.raw.append(
            _RawInstruction(line_no, mnemonic, rest, tuple(self.pending_labels))
        )
        self.pending_labels.clear()

    def finish(self, end_line: int) -> MethodIR:
        if self.is_abstract_or_native:
            if self.raw:
                raise SmaliSyntaxError(
                    f"abstract/native method {self.name} has instructions",
                    self.raw[0].line_no,
                )
            return MethodIR(
                owner=self.owner,
                name=self.name,
                descriptor=self.descriptor,
                registers=self.param_words(),
                instructions=(),
                is_abstract_or_native=True,
                is_static=self.is_static,
            )
        if self.pending_labels:
            raise SmaliSyntaxError(
                f"label {self.pending_labels[-1]} has no following instruction",
                end_line,
            )
        param_words = self.param_words()
        if self.registers is not None:
            registers = self.registers
        elif self.locals is not None:
            registers = self.locals + param_words
        else:
            registers = param_words
        if registers < param_words:
            raise SmaliSyntaxError(
                f".registers {registers} below parameter count {param_words}",
                self.line_no,
            )

        label_to_index: dict[str, int] = {}
        for idx, raw in enumerate(self.raw):
            for label in raw.labels:
                if label in label_to_index:
                    raise SmaliSyntaxError(f"duplicate label {label}", raw.line_no)
                label_to_index[label] = idx

        instructions: list[Instruction] = []
        for idx, raw in enumerate(self.raw):
            instructions.append(
                self._build(idx, raw, registers, param_words, label_to_index)
            )
        method = MethodIR(
            owner=self.owner,
            name=self.name,
            descriptor=self.descriptor,
            registers=registers,
            instructions=tuple(instructions),
            is_abstract_or_native=False,
            is_static=self.is_static,
            lowered_count=self.lowered,
        )
        try:
            method.validate()
        except IRError as exc:
            raise SmaliSyntaxError(str(exc), self.line_no)
        return method

    def _reg(self, token: str, registers: int, param_words: int, line_no: int) -> int:
        if not _REGISTER_RE.match(token):
            raise SmaliSyntaxError(f"bad register {token!r}", line_no)
        n = int(token[1:])
        if token[0] == "p":
            n = registers - param_words + n
        if not 0 <= n < registers:
            raise SmaliSyntaxError(f"register {token} out of range", line_no)
        return n

    def _build(
        self,
        idx: int,
        raw: _RawInstruction,
        registers: int,
        param_words: int,
        labels: dict[str, int],
    ) -> Instruction:
        opcode = _MNEMONIC_ALIASES.get(raw.mnemonic)
        if opcode is None:
            if _MNEMONIC_RE.match(raw.mnemonic):
                # recognized smali shape, outside the subset
                self.lowered += 1
                return Instruction(index=idx, opcode=Opcode.NOP)
            raise SmaliSyntaxError(f"unrecognized opcode {raw.mnemonic!r}", raw.line_no)

        def reg(tok: str) -> int:
            return self._reg(tok, registers, param_words, raw.line_no)

        rest = raw.rest.strip()
        if opcode is Opcode.CONST_STRING:
            m = re.match(r'^([vp]\d+)\s*,\s*"(.*)"$', rest, re.DOTALL)
            if not m:
                raise SmaliSyntaxError("malformed const-string", raw.line_no)
            return Instruction(
                index=idx,
                opcode=opcode,
                operands=(reg(m.group(1)),),
                literal=_unescape(m.group(2), raw.line_no),
            )
        if opcode is Opcode.MOVE:
            parts = _split_args(rest, 2, raw.line_no)
            return Instruction(idx, opcode, (reg(parts[0]), reg(parts[1])))
        if opcode in (
            Opcode.INVOKE_VIRTUAL,
            Opcode.INVOKE_STATIC,
            Opcode.INVOKE_DIRECT,
            Opcode.INVOKE_INTERFACE,
        ):
            m = re.match(r"^\{(.*)\}\s*,\s*(\S+)$", rest)
            if not m:
                raise SmaliSyntaxError("malformed invoke", raw.line_no)
            regs = self._invoke_regs(m.group(1), registers, param_words, raw.line_no)
            ref = _METHOD_REF_RE.match(m.group(2))
            if not ref:
                raise SmaliSyntaxError(
                    f"malformed method reference {m.group(2)!r}", raw.line_no
                )
            return Instruction(
                idx,
                opcode,
                tuple(regs),
                method_ref=MethodRef(ref["owner"], ref["name"], ref["desc"]),
            )
        if opcode is Opcode.MOVE_RESULT:
            return Instruction(idx, opcode, (reg(rest),))
        if opcode is Opcode.RETURN_VOID:
            if rest:
                raise SmaliSyntaxError("return-void takes no operands", raw.line_no)
            return Instruction(idx, opcode)
        if opcode in (Opcode.RETURN_OBJECT, Opcode.RETURN_VALUE):
            return Instruction(idx, opcode, (reg(rest),))
        if opcode in (Opcode.IF_EQZ, Opcode.IF_NEZ):
            parts = _split_args(rest, 2, raw.line_no)
            target = self._label(parts[1], labels, raw.line_no)
            return Instruction(idx, opcode, (reg(parts[0]),), branch_target=target)
        if opcode in (Opcode.IF_EQ, Opcode.IF_NE):
            parts = _split_args(rest, 3, raw.line_no)
            target = self._label(parts[2], labels, raw.line_no)
            return Instruction(
                idx, opcode, (reg(parts[0]), reg(parts[1])), branch_target=target
            )
        if opcode is Opcode.GOTO:
            target = self._label(rest, labels, raw.line_no)
            return Instruction(idx, opcode, branch_target=target)
        if opcode is Opcode.SGET_OBJECT:
            parts = _split_args(rest, 2, raw.line_no)
            ref = _FIELD_REF_RE.match(parts[1])
            if not ref:
                raise SmaliSyntaxError(
                    f"malformed field reference {parts[1]!r}", raw.line_no
                )
            return Instruction(
                idx,
                opcode,
                (reg(parts[0]),),
                field_ref=FieldRef(ref["owner"], ref["name"], ref["desc"]),
            )
        if opcode is Opcode.IGET_OBJECT:
            parts = _split_args(rest, 3, raw.line_no)
            ref = _FIELD_REF_RE.match(parts[2])
            if not ref:
                raise SmaliSyntaxError(
                    f"malformed field reference {parts[2]!r}", raw.line_no
                )
            return Instruction(
                idx,
                opcode,
                (reg(parts[0]), reg(parts[1])),
                field_ref=FieldRef(ref["owner"], ref["name"], ref["desc"]),
            )
        if opcode is Opcode.NEW_INSTANCE:
            parts = _split_args(rest, 2, raw.line_no)
            if not _CLASS_RE.match(parts[1]):
                raise SmaliSyntaxError(f"bad type {parts[1]!r}", raw.line_no)
            return Instruction(idx, opcode, (reg(parts[0]),), type_ref=parts[1])
        if opcode is Opcode.NOP:
            return Instruction(idx, opcode)
        raise SmaliSyntaxError(f"unhandled opcode {raw.mnemonic}", raw.line_no)

    def _invoke_regs(
        self, inner: str, registers: int, param_words: int, line_no: int
    ) -> list[int]:
        inner = inner.strip()
        if not inner:
            return []
        if ".." in inner:
            lo, hi = (t.strip() for t in inner.split("..", 1))
            lo_n = self._reg(lo, registers, param_words, line_no)
            hi_n = self._reg(hi, registers, param_words, line_no)
            if hi_n < lo_n:
                raise SmaliSyntaxError("bad register range", line_no)
            return list(range(lo_n, hi_n + 1))
        return [
            self._reg(tok.strip(), registers, param_words, line_no)
            for tok in inner.split(",")
        ]

    def _label(self, token: str, labels: dict[str, int], line_no: int) -> int:
        token = token.strip()
        if token not in labels:
            raise SmaliSyntaxError(f"unknown label {token}", line_no)
        return labels[token]


def _split_args(rest: str, n: int, line_no: int) -> list[str]:
    parts = [p.strip() for p in rest.split(",")]
    if len(parts) != n or any(not p for p in parts):
        raise SmaliSyntaxError(f"expected {n} operands, got {rest!r}", line_no)
    return parts


def _parse_count(line: str, directive: str, line_no: int) -> int:
    rest = line[len(directive) :].strip()
    if not rest.isdigit():
        raise SmaliSyntaxError(f"bad {directive} count {rest!r}", line_no)
    return int(rest)


def _split_method_header(header: str, line_no: int) -> tuple[tuple[str, ...], str, str]:
    tokens = header.split()
    if not tokens:
        raise SmaliSyntaxError("empty .method header", line_no)
    proto = tokens[-1]
    flags = tuple(tokens[:-1])
    m = re.match(r"^(<?[A-Za-z0-9_$\-]+>?)(\(.*\).+)$", proto)
    if not m:
        raise SmaliSyntaxError(f"malformed method prototype {proto!r}", line_no)
    name, descriptor = m.group(1), m.group(2)
    parse_method_descriptor(descriptor)  # validates eagerly
    return flags, name, descriptor


def parse_smali_class(text: str) -> ClassDef:
    """Parse the smali source of a single class."""
    class_name: str | None = None
    super_name: str | None = None
    fields: list[tuple[str, str]] = []
    methods: list[MethodIR] = []
    method: _MethodParser | None = None
    skip_until: str | None = None

    lines = text.split("\n")
    for line_no, rawline in enumerate(lines, start=1):
        line = _strip_comment(rawline).strip()
        if not line:
            continue
        if skip_until is not None:
            if line == skip_until or line.startswith(skip_until + " "):
                skip_until = None
            continue
        if line.startswith(".class"):
            tokens = line.split()
            if len(tokens) < 2 or not _CLASS_RE.match(tokens[-1]):
                raise SmaliSyntaxError("malformed .class directive", line_no)
            class_name = tokens[-1]
            continue
        if line.startswith(".super"):
            tokens = line.split()
            if len(tokens) != 2 or not _CLASS_RE.match(tokens[1]):
                raise SmaliSyntaxError("malformed .super directive", line_no)
            super_name = tokens[1]
            continue
        if line.startswith(".implements"):
            continue
        if line.startswith(".field"):
            m = re.match(r"^\.field\s+(?:[a-z]+\s+)*([A-Za-z0-9_$]+):(\S+)", line)
            if not m or not _TYPE_RE.match(m.group(2)):
                raise SmaliSyntaxError("malformed .field directive", line_no)
            fields.append((m.group(1), m.group(2)))
            continue
        if line.startswith(".method"):
            if method is not None:
                raise SmaliSyntaxError("nested .method", line_no)
            if class_name is None:
                raise SmaliSyntaxError(".method before .class", line_no)
            method = _MethodParser(class_name, line[len(".method") :].strip(), line_no)
            continue
        if line == ".end method":
            if method is None:
                raise SmaliSyntaxError(".end method without .method", line_no)
            methods.append(method.finish(line_no))
            method = None
            continue
        if method is not None and (
            line.startswith(".registers") or line.startswith(".locals")
        ):
            method.feed(line, line_no)
            continue
        if _is_skippable_line(line):
            continue
        block_start = line.split(None, 1)[0]
        if block_start in _SKIPPABLE_BLOCKS:
            skip_until = _SKIPPABLE_BLOCKS[block_start]
            continue
        if line.startswith(".end"):
            raise SmaliSyntaxError(f"unmatched {line!r}", line_no)
        if line.startswith("."):
            # unknown single-line directive: safe to ignore
            continue
        if method is None:
            raise SmaliSyntaxError(f"instruction outside method: {line!r}", line_no)
        method.feed(line, line_no)

    if method is not None:
        raise SmaliSyntaxError("missing .end method", len(lines))
    if skip_until is not None:
        raise SmaliSyntaxError(f"unterminated block (expected {skip_until})", len(lines))
    if class_name is None:
        raise SmaliSyntaxError("missing .class directive", 1)
    cls = ClassDef(
        class_name=class_name,
        super_name=super_name or "Ljava/lang/Object;",
        methods=tuple(methods),
        fields=tuple(fields),
    )
    try:
        cls.validate()
    except IRError as exc:
        raise SmaliSyntaxError(str(exc), 1)
    return cls


def print_smali_class(cls: ClassDef) -> str:
    """Emit canonical smali for a ClassDef; reparsing yields an equal class."""
    out: list[str] = [f".class public {cls.class_name}", f".super {cls.super_name}", ""]
    for name, type_desc in cls.fields:
        out.append(f".field public {name}:{type_desc}")
    if cls.fields:
        out.append("")
    for method in cls.methods:
        flags = []
        if method.is_static:
            flags.append("static")
        if method.is_abstract_or_native:
            flags.append("abstract")
        flag_str = (" ".join(flags) + " ") if flags else ""
        out.append(f".method public {flag_str}{method.name}{method.descriptor}")
        if not method.is_abstract_or_native:
            out.append(f"    .registers {method.registers}")
            targets = {
                ins.branch_target
                for ins in method.instructions
                if ins.branch_target is not None
            }
            for ins in method.instructions:
                if ins.index in targets:
                    out.append(f"    :L{ins.index}")
                out.append(f"    {_format_instruction(ins)}")
        out.append(".end method")
        out.append("")
    return "\n".join(out)


def _format_instruction(ins: Instruction) -> str:
    op = ins.opcode
    regs = [f"v{r}" for r in ins.operands]
    if op is Opcode.CONST_STRING:
        return f'const-string {regs[0]}, "{_escape(ins.literal or "")}"'
    if op is Opcode.MOVE:
        return f"move-object {regs[0]}, {regs[1]}"
    if op in (
        Opcode.INVOKE_VIRTUAL,
        Opcode.INVOKE_STATIC,
        Opcode.INVOKE_DIRECT,
        Opcode.INVOKE_INTERFACE,
    ):
        ref = ins.method_ref
        assert ref is not None
        return f"{op.value} {{{', '.join(regs)}}}, {ref.owner}->{ref.name}{ref.descriptor}"
    if op is Opcode.MOVE_RESULT:
        return f"move-result-object {regs[0]}"
    if op is Opcode.RETURN_VOID:
        return "return-void"
    if op is Opcode.RETURN_OBJECT:
        return f"return-object {regs[0]}"
    if op is Opcode.RETURN_VALUE:
        return f"return {regs[0]}"
    if op in (Opcode.IF_EQZ, Opcode.IF_NEZ):
        return f"{op.value} {regs[0]}, :L{ins.branch_target}"
    if op in (Opcode.IF_EQ, Opcode.IF_NE):
        return f"{op.value} {regs[0]}, {regs[1]}, :L{ins.branch_target}"
    if op is Opcode.GOTO:
        return f"goto :L{ins.branch_target}"
    if op is Opcode.SGET_OBJECT:
        ref = ins.field_ref
        assert ref is not None
        return f"sget-object {regs[0]}, {ref}"
    if op is Opcode.IGET_OBJECT:
        ref = ins.field_ref
        assert ref is not None
        return f"iget-object {regs[0]}, {regs[1]}, {ref}"
    if op is Opcode.NEW_INSTANCE:
        return f"new-instance {regs[0]}, {ins.type_ref}"
    if op is Opcode.NOP:
        return "nop"
    raise IRError(f"unprintable opcode {op}")


@dataclass(frozen=True)
class Diagnostic:
    path: str
    message: str

    def to_json_dict(self) -> dict:
        return {"path": self.path, "message": self.message}


def load_program(root: str | Path) -> tuple[Program, list[Diagnostic]]:
    """Load every ``.smali`` file under ``root`` into a Program.

    Per-file parse failures and duplicate class names become diagnostics
    instead of aborting the load; an empty result is an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise ProgramLoadError(f"smali root {root} does not exist")
    classes: list[ClassDef] = []
    seen: dict[str, Path] = {}
    diagnostics: list[Diagnostic] = []
    for path in sorted(root.rglob("*.smali")):
        try:
            text = path.read_text(encoding="utf-8")
            cls = parse_smali_class(text)
        except (SmaliSyntaxError, UnicodeDecodeError) as exc:
            diagnostics.append(Diagnostic(str(path), str(exc)))
            continue
        if cls.class_name in seen:
            diagnostics.append(
                Diagnostic(
                    str(path),
                    f"duplicate class {cls.class_name} (first seen in {seen[cls.class_name]})",
                )
            )
            continue
        seen[cls.class_name] = path
        classes.append(cls)
    if not classes:
        raise ProgramLoadError(f"no classes loaded from {root}")
    return Program(tuple(classes)), diagnostics
