"""Typed instruction-level IR for disassembled Android classes.

The instruction set is a deliberate subset of Dalvik: string constants,
register moves, invokes, move-result, returns, equality branches, goto,
object field reads, new-instance and nop. Everything else is lowered to
``nop`` by the frontend.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Opcode(Enum):
    CONST_STRING = "const-string"
    MOVE = "move"
    INVOKE_VIRTUAL = "invoke-virtual"
    INVOKE_STATIC = "invoke-static"
    INVOKE_DIRECT = "invoke-direct"
    INVOKE_INTERFACE = "invoke-interface"
    MOVE_RESULT = "move-result"
    RETURN_VOID = "return-void"
    RETURN_OBJECT = "return-object"
    RETURN_VALUE = "return"
    IF_EQZ = "if-eqz"
    IF_NEZ = "if-nez"
    IF_EQ = "if-eq"
    IF_NE = "if-ne"
    GOTO = "goto"
    SGET_OBJECT = "sget-object"
    IGET_OBJECT = "iget-object"
    NEW_INSTANCE = "new-instance"
    NOP = "nop"


INVOKE_OPCODES = frozenset({
    Opcode.INVOKE_VIRTUAL,
    Opcode.INVOKE_STATIC,
    Opcode.INVOKE_DIRECT,
    Opcode.INVOKE_INTERFACE,
})
IF_OPCODES = frozenset({Opcode.IF_EQZ, Opcode.IF_NEZ, Opcode.IF_EQ, Opcode.IF_NE})
RETURN_OPCODES = frozenset({Opcode.RETURN_VOID, Opcode.RETURN_OBJECT, Opcode.RETURN_VALUE})
BRANCH_OPCODES = IF_OPCODES | {Opcode.GOTO}

# opcode -> (register slot count or None for variadic, required attachment)
# attachment is exactly one of literal / field_ref / method_ref / type_ref /
# branch_target, or None.
_OPERAND_SPECS: dict[Opcode, tuple[int | None, str | None]] = {
    Opcode.CONST_STRING: (1, "literal"),
    Opcode.MOVE: (2, None),
    Opcode.INVOKE_VIRTUAL: (None, "method_ref"),
    Opcode.INVOKE_STATIC: (None, "method_ref"),
    Opcode.INVOKE_DIRECT: (None, "method_ref"),
    Opcode.INVOKE_INTERFACE: (None, "method_ref"),
    Opcode.MOVE_RESULT: (1, None),
    Opcode.RETURN_VOID: (0, None),
    Opcode.RETURN_OBJECT: (1, None),
    Opcode.RETURN_VALUE: (1, None),
    Opcode.IF_EQZ: (1, "branch_target"),
    Opcode.IF_NEZ: (1, "branch_target"),
    Opcode.IF_EQ: (2, "branch_target"),
    Opcode.IF_NE: (2, "branch_target"),
    Opcode.GOTO: (0, "branch_target"),
    Opcode.SGET_OBJECT: (1, "field_ref"),
    Opcode.IGET_OBJECT: (2, "field_ref"),
    Opcode.NEW_INSTANCE: (1, "type_ref"),
    Opcode.NOP: (0, None),
}


class IRError(ValueError):
    """Structurally invalid IR."""


@dataclass(frozen=True)
class FieldRef:
    owner: str
    name: str
    type_desc: str

    def __str__(self) -> str:
        return f"{self.owner}->{self.name}:{self.type_desc}"


@dataclass(frozen=True)
class MethodRef:
    owner: str
    name: str
    descriptor: str

    @property
    def signature(self) -> str:
        return f"{self.owner}->{self.name}{self.descriptor}"

    def __str__(self) -> str:
        return self.signature


@dataclass(frozen=True)
class Instruction:
    index: int
    opcode: Opcode
    operands: tuple[int, ...] = ()
    literal: str | None = None
    field_ref: FieldRef | None = None
    method_ref: MethodRef | None = None
    type_ref: str | None = None
    branch_target: int | None = None

    def is_invoke(self) -> bool:
        return self.opcode in INVOKE_OPCODES

    def is_branch(self) -> bool:
        return self.opcode in BRANCH_OPCODES

    def is_return(self) -> bool:
        return self.opcode in RETURN_OPCODES


def validate_instruction(ins: Instruction) -> None:
    """Check that exactly the operand slots required by the opcode are set."""
    regs, needed = _OPERAND_SPECS[ins.opcode]
    if regs is not None and len(ins.operands) != regs:
        raise IRError(
            f"{ins.opcode.value} at {ins.index}: expected {regs} register "
            f"operands, got {len(ins.operands)}"
        )
    for slot in ("literal", "field_ref", "method_ref", "type_ref", "branch_target"):
        value = getattr(ins, slot)
        if slot == needed:
            if value is None:
                raise IRError(f"{ins.opcode.value} at {ins.index}: missing {slot}")
        elif value is not None:
            raise IRError(f"{ins.opcode.value} at {ins.index}: unexpected {slot}")


def written_register(ins: Instruction) -> int | None:
    """Register defined by the instruction, if any."""
    if ins.opcode in (
        Opcode.CONST_STRING,
        Opcode.MOVE,
        Opcode.MOVE_RESULT,
        Opcode.SGET_OBJECT,
        Opcode.IGET_OBJECT,
        Opcode.NEW_INSTANCE,
    ):
        return ins.operands[0]
    return None


def read_registers(ins: Instruction) -> tuple[int, ...]:
    """Registers whose value the instruction consumes."""
    if ins.opcode is Opcode.MOVE:
        return (ins.operands[1],)
    if ins.opcode is Opcode.IGET_OBJECT:
        return (ins.operands[1],)
    if ins.opcode in (Opcode.RETURN_OBJECT, Opcode.RETURN_VALUE):
        return ins.operands
    if ins.opcode in IF_OPCODES:
        return ins.operands
    if ins.opcode in INVOKE_OPCODES:
        return ins.operands
    return ()


def parse_method_descriptor(descriptor: str) -> tuple[tuple[str, ...], str]:
    """Split ``(ILjava/lang/String;)V`` into parameter types and return type."""
    if not descriptor.startswith("("):
        raise IRError(f"bad method descriptor: {descriptor!r}")
    close = descriptor.find(")")
    if close < 0:
        raise IRError(f"bad method descriptor: {descriptor!r}")
    params: list[str] = []
    i = 1
    while i < close:
        start = i
        while descriptor[i] == "[":
            i += 1
        c = descriptor[i]
        if c == "L":
            end = descriptor.find(";", i)
            if end < 0 or end >= close:
                raise IRError(f"bad method descriptor: {descriptor!r}")
            i = end + 1
        elif c in "ZBSCIJFD":
            i += 1
        else:
            raise IRError(f"bad method descriptor: {descriptor!r}")
        params.append(descriptor[start:i])
    return tuple(params), descriptor[close + 1 :]


def type_words(type_desc: str) -> int:
    """Register words a value of this type occupies (wide types take 2)."""
    return 2 if type_desc in ("J", "D") else 1


def descriptor_to_dotted(desc: str) -> str:
    """``Lcom/app/Foo;`` -> ``com.app.Foo``; other descriptors unchanged."""
    if desc.startswith("L") and desc.endswith(";"):
        return desc[1:-1].replace("/", ".")
    return desc


def is_class_descriptor(desc: str) -> bool:
    return len(desc) >= 3 and desc.startswith("L") and desc.endswith(";")


@dataclass
class MethodIR:
    owner: str
    name: str
    descriptor: str
    registers: int
    instructions: tuple[Instruction, ...]
    is_abstract_or_native: bool = False
    is_static: bool = False
    lowered_count: int = 0

    @property
    def signature(self) -> str:
        return f"{self.owner}->{self.name}{self.descriptor}"

    @property
    def has_body(self) -> bool:
        return not self.is_abstract_or_native and bool(self.instructions)

    def param_word_count(self) -> int:
        params, _ = parse_method_descriptor(self.descriptor)
        words = 0 if self.is_static else 1
        return words + sum(type_words(p) for p in params)

    def param_registers(self) -> tuple[int, ...]:
        """Registers holding parameters on entry (p0..pN mapped to vN)."""
        words = self.param_word_count()
        return tuple(range(self.registers - words, self.registers))

    def validate(self) -> None:
        if self.is_abstract_or_native and self.instructions:
            raise IRError(f"{self.signature}: abstract/native method with a body")
        for i, ins in enumerate(self.instructions):
            if ins.index != i:
                raise IRError(f"{self.signature}: instruction indices not dense")
            validate_instruction(ins)
            for reg in ins.operands:
                if not 0 <= reg < self.registers:
                    raise IRError(
                        f"{self.signature}: register v{reg} out of range at {i}"
                    )
            if ins.branch_target is not None and not (
                0 <= ins.branch_target < len(self.instructions)
            ):
                raise IRError(f"{self.signature}: branch target out of range at {i}")


@dataclass
class ClassDef:
    class_name: str
    super_name: str
    methods: tuple[MethodIR, ...]
    fields: tuple[tuple[str, str], ...] = ()

    @property
    def source_package(self) -> str:
        dotted = descriptor_to_dotted(self.class_name)
        if "." not in dotted:
            return ""
        return dotted.rsplit(".", 1)[0]

    def validate(self) -> None:
        if not is_class_descriptor(self.class_name):
            raise IRError(f"bad class descriptor: {self.class_name!r}")
        seen: set[str] = set()
        for m in self.methods:
            sig = f"{m.name}{m.descriptor}"
            if sig in seen:
                raise IRError(f"{self.class_name}: duplicate method {sig}")
            seen.add(sig)
            m.validate()


@dataclass
class Program:
    classes: tuple[ClassDef, ...]
    index: dict[str, ClassDef] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.index:
            self.index = {c.class_name: c for c in self.classes}
        self._methods = {
            m.signature: m for c in self.classes for m in c.methods
        }

    def methods(self):
        for cls in self.classes:
            yield from cls.methods

    def find_method(self, signature: str) -> MethodIR | None:
        return self._methods.get(signature)

    def instruction_count(self) -> int:
        return sum(len(m.instructions) for m in self.methods())
