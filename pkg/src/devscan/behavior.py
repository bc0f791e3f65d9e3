"""Confirmation of device-conditioned branches and extraction of the code
regions they control."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .devicedb import DeviceInfoDB, IdentifierMatch, match_identifier
from .graphs import CFG, CallGraph, immediate_postdominators
from .ir import (
    IF_OPCODES,
    INVOKE_OPCODES,
    Instruction,
    MethodIR,
    Opcode,
    Program,
    descriptor_to_dotted,
)
from .taint import (
    ENTRY_DEF,
    TaintResult,
    def_closure,
    reaching_definitions,
)


class ComparisonKind(str, Enum):
    STRING_EQUALS = "string_equals"
    EQUALS_IGNORE_CASE = "equals_ignore_case"
    STARTS_WITH = "starts_with"
    ENDS_WITH = "ends_with"
    CONTAINS = "contains"
    COMPARE_TO = "compare_to"
    REFERENCE_EQ = "reference_eq"


class OperandSide(str, Enum):
    RECEIVER = "receiver"
    ARGUMENT = "argument"
    BOTH = "both"


class Arm(str, Enum):
    TAKEN = "taken"
    FALLTHROUGH = "fallthrough"
    UNKNOWN = "unknown"


_COMPARISON_NAMES = {
    "equals": ComparisonKind.STRING_EQUALS,
    "equalsIgnoreCase": ComparisonKind.EQUALS_IGNORE_CASE,
    "startsWith": ComparisonKind.STARTS_WITH,
    "endsWith": ComparisonKind.ENDS_WITH,
    "contains": ComparisonKind.CONTAINS,
    "compareTo": ComparisonKind.COMPARE_TO,
}
_STRINGY_OWNERS = {"Ljava/lang/String;", "Ljava/lang/CharSequence;"}


@dataclass(frozen=True)
class GuardSite:
    method: str
    branch_instruction: int
    comparison: ComparisonKind
    tainted_operand_side: OperandSide
    condition_register: int
    comparison_call: int | None = None  # invoke index for call-based sites

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "index": self.branch_instruction,
            "comparison": self.comparison.value,
            "tainted_operand_side": self.tainted_operand_side.value,
            "condition_register": self.condition_register,
        }


@dataclass(frozen=True)
class DeviceGuard:
    site: GuardSite
    identifiers: tuple[IdentifierMatch, ...]
    guard_strings: tuple[str, ...]


@dataclass(frozen=True)
class BehaviorSnippet:
    guard: DeviceGuard
    region: dict[str, tuple[tuple[int, int], ...]]  # arm -> block index ranges
    reachable_methods: frozenset[str]
    invoked_system_methods: frozenset[str]
    package_names: frozenset[str]
    matched_arm: Arm = Arm.UNKNOWN
    truncated: bool = False
    # flattened text of the region used by keyword classification
    region_literals: tuple[str, ...] = ()
    invoked_names: tuple[str, ...] = ()
    referenced_types: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "guard": self.site_json(),
            "identifiers": [
                {
                    "matched_text": m.matched_text,
                    "kind": m.kind,
                    "db_entry": m.db_entry,
                    "match_mode": m.match_mode,
                }
                for m in self.guard.identifiers
            ],
            "guard_strings": list(self.guard.guard_strings),
            "region": {
                "method": self.guard.site.method,
                **{arm: [list(r) for r in ranges] for arm, ranges in self.region.items()},
            },
            "matched_arm": self.matched_arm.value,
            "reachable_methods": sorted(self.reachable_methods),
            "invoked_system_methods": sorted(self.invoked_system_methods),
            "package_names": sorted(self.package_names),
            "truncated": self.truncated,
        }

    def site_json(self) -> dict:
        return self.guard.site.to_json_dict()


def _comparison_invoke(method: MethodIR, index: int) -> tuple[ComparisonKind, Instruction] | None:
    ins = method.instructions[index]
    if ins.opcode not in INVOKE_OPCODES or ins.method_ref is None:
        return None
    ref = ins.method_ref
    kind = _COMPARISON_NAMES.get(ref.name)
    if kind is None or ref.owner not in _STRINGY_OWNERS:
        return None
    return kind, ins


def _tainted_side(
    taint: TaintResult, sig: str, invoke: Instruction
) -> OperandSide | None:
    tainted = taint.tainted_registers(sig, invoke.index)
    if not invoke.operands:
        return None
    receiver_tainted = invoke.operands[0] in tainted
    argument_tainted = any(r in tainted for r in invoke.operands[1:])
    if receiver_tainted and argument_tainted:
        return OperandSide.BOTH
    if receiver_tainted:
        return OperandSide.RECEIVER
    if argument_tainted:
        return OperandSide.ARGUMENT
    return None


def find_guard_sites(taint: TaintResult, cfgs: dict[str, CFG]) -> list[GuardSite]:
    """Branches whose condition depends on device information.

    A site is either an if on a register holding the boolean of a string
    comparison with a tainted operand, or an if directly on a tainted
    register (reference_eq). The comparison form wins when both apply.
    """
    sites: list[GuardSite] = []
    for sig in sorted(cfgs):
        cfg = cfgs[sig]
        method = cfg.method
        rd = None
        for ins in method.instructions:
            if ins.opcode not in IF_OPCODES:
                continue
            if rd is None:
                rd = reaching_definitions(method, cfg)
            site = None
            tainted_here = taint.tainted_registers(sig, ins.index)
            for reg in ins.operands:
                defs = def_closure(method, rd, ins.index, reg)
                for d in sorted(x for x in defs if x >= 0):
                    if method.instructions[d].opcode is not Opcode.MOVE_RESULT:
                        continue
                    invoke_index = _feeding_invoke_index(method, d)
                    if invoke_index is None:
                        continue
                    cmp = _comparison_invoke(method, invoke_index)
                    if cmp is None:
                        continue
                    kind, invoke = cmp
                    side = _tainted_side(taint, sig, invoke)
                    if side is None:
                        continue
                    site = GuardSite(
                        method=sig,
                        branch_instruction=ins.index,
                        comparison=kind,
                        tainted_operand_side=side,
                        condition_register=reg,
                        comparison_call=invoke_index,
                    )
                    break
                if site:
                    break
            if site is None:
                for pos, reg in enumerate(ins.operands):
                    if reg in tainted_here:
                        side = OperandSide.RECEIVER if pos == 0 else OperandSide.ARGUMENT
                        site = GuardSite(
                            method=sig,
                            branch_instruction=ins.index,
                            comparison=ComparisonKind.REFERENCE_EQ,
                            tainted_operand_side=side,
                            condition_register=reg,
                        )
                        break
            if site is not None:
                sites.append(site)
    return sites


def _feeding_invoke_index(method: MethodIR, mr_index: int) -> int | None:
    i = mr_index - 1
    while i >= 0:
        ins = method.instructions[i]
        if ins.opcode is Opcode.NOP:
            i -= 1
            continue
        return ins.index if ins.opcode in INVOKE_OPCODES else None
    return None


def collect_guard_strings(site: GuardSite, method: MethodIR, cfg: CFG) -> list[str]:
    """Const-strings semantically tied to the guard's condition.

    Collects literals flowing into the comparison call's operands, plus
    every literal defined in the site's basic block or in any block holding
    a definition on the chain feeding the condition register.
    """
    rd = reaching_definitions(method, cfg)
    out: list[str] = []
    seen: set[str] = set()

    def add(lit: str) -> None:
        if lit not in seen:
            seen.add(lit)
            out.append(lit)

    chain_defs: set[int] = set()

    def follow(index: int, reg: int) -> None:
        work = [(index, reg)]
        visited: set[tuple[int, int]] = set()
        while work:
            i, r = work.pop()
            if (i, r) in visited:
                continue
            visited.add((i, r))
            for d in rd[i].get(r, frozenset()):
                if d == ENTRY_DEF or d in chain_defs:
                    continue
                chain_defs.add(d)
                ins = method.instructions[d]
                if ins.opcode is Opcode.MOVE:
                    work.append((d, ins.operands[1]))
                elif ins.opcode is Opcode.MOVE_RESULT:
                    inv = _feeding_invoke_index(method, d)
                    if inv is not None:
                        chain_defs.add(inv)
                        for arg in method.instructions[inv].operands:
                            work.append((inv, arg))

    if site.comparison_call is not None:
        invoke = method.instructions[site.comparison_call]
        for arg in invoke.operands:
            for d in sorted(def_closure(method, rd, invoke.index, arg)):
                if d >= 0 and method.instructions[d].opcode is Opcode.CONST_STRING:
                    add(method.instructions[d].literal or "")
            follow(invoke.index, arg)
    follow(site.branch_instruction, site.condition_register)

    blocks = {cfg.block_of(site.branch_instruction)}
    blocks |= {cfg.block_of(d) for d in chain_defs}
    for bid in sorted(blocks):
        for ins in cfg.instructions_of(bid):
            if ins.opcode is Opcode.CONST_STRING:
                add(ins.literal or "")
    return out


def confirm_device_guard(
    site: GuardSite, strings: list[str], db: DeviceInfoDB
) -> DeviceGuard | None:
    """Promote a site to a DeviceGuard when a guard string names a device."""
    matches: list[IdentifierMatch] = []
    seen: set[IdentifierMatch] = set()
    for s in strings:
        if not s:
            continue
        for m in match_identifier(s, db):
            if m not in seen:
                seen.add(m)
                matches.append(m)
    if not matches:
        return None
    return DeviceGuard(site=site, identifiers=tuple(matches), guard_strings=tuple(strings))


def _matched_arm(site: GuardSite, method: MethodIR) -> Arm:
    branch = method.instructions[site.branch_instruction]
    if branch.opcode not in (Opcode.IF_EQZ, Opcode.IF_NEZ):
        return Arm.UNKNOWN
    if site.comparison is ComparisonKind.REFERENCE_EQ:
        return Arm.UNKNOWN
    # boolean comparisons: nonzero means the relation holds;
    # compareTo: zero means equal
    if site.comparison is ComparisonKind.COMPARE_TO:
        holds_when_nonzero = False
    else:
        holds_when_nonzero = True
    taken_on_nonzero = branch.opcode is Opcode.IF_NEZ
    return Arm.TAKEN if taken_on_nonzero == holds_when_nonzero else Arm.FALLTHROUGH


def _arm_blocks(cfg: CFG, cond_block: int, entry: int, stop: int) -> set[int]:
    if entry == stop:
        return set()
    seen = {entry}
    work = [entry]
    while work:
        cur = work.pop()
        for succ in cfg.successors(cur):
            if succ == stop or succ == cond_block or succ in seen:
                continue
            seen.add(succ)
            work.append(succ)
    return seen


def extract_region(
    guard: DeviceGuard,
    cfgs: dict[str, CFG],
    call_graph: CallGraph,
    program: Program,
    max_methods: int | None = None,
) -> BehaviorSnippet:
    """Extract both branch arms plus transitively reachable callees.

    An arm is the set of blocks reachable from its branch edge without
    passing the condition block's immediate postdominator; blocks shared by
    both arms are treated as common continuation and dropped from each.
    Called methods with bodies are followed to a fixpoint; unresolved
    callees accumulate as system methods.
    """
    site = guard.site
    cfg = cfgs[site.method]
    method = cfg.method
    branch = method.instructions[site.branch_instruction]
    cond_block = cfg.block_of(site.branch_instruction)
    ipdom = immediate_postdominators(cfg)[cond_block]

    taken_entry = cfg.block_of(branch.branch_target)
    taken = _arm_blocks(cfg, cond_block, taken_entry, ipdom)
    fall_index = site.branch_instruction + 1
    if fall_index < len(method.instructions):
        fall_entry = cfg.block_of(fall_index)
        fallthrough = _arm_blocks(cfg, cond_block, fall_entry, ipdom)
    else:
        fallthrough = set()
    shared = taken & fallthrough
    taken -= shared
    fallthrough -= shared

    region = {
        Arm.TAKEN.value: tuple(
            (cfg.block(b).start, cfg.block(b).end) for b in sorted(taken)
        ),
        Arm.FALLTHROUGH.value: tuple(
            (cfg.block(b).start, cfg.block(b).end) for b in sorted(fallthrough)
        ),
    }

    region_instructions: list[Instruction] = []
    for b in sorted(taken | fallthrough):
        region_instructions.extend(cfg.instructions_of(b))

    budget = max_methods if max_methods is not None else len(list(program.methods()))
    truncated = False
    reachable: set[str] = set()
    system: set[str] = set()
    literals: list[str] = []
    invoked_names: list[str] = []
    types: list[str] = []

    def scan(instructions, owner_sig: str) -> list[str]:
        new_callees = []
        for ins in instructions:
            if ins.opcode is Opcode.CONST_STRING:
                literals.append(ins.literal or "")
            elif ins.opcode is Opcode.NEW_INSTANCE and ins.type_ref:
                types.append(descriptor_to_dotted(ins.type_ref))
            elif ins.opcode is Opcode.SGET_OBJECT or ins.opcode is Opcode.IGET_OBJECT:
                if ins.field_ref:
                    types.append(descriptor_to_dotted(ins.field_ref.owner))
            elif ins.opcode in INVOKE_OPCODES and ins.method_ref:
                edge = _edge_at(call_graph, owner_sig, ins.index)
                ref = ins.method_ref
                invoked_names.append(f"{descriptor_to_dotted(ref.owner)}.{ref.name}")
                if edge is not None and edge.resolved:
                    new_callees.append(edge.callee)
                else:
                    system.add(ref.signature)
        return new_callees

    work = scan(region_instructions, site.method)
    while work:
        callee = work.pop(0)
        if callee in reachable:
            continue
        if len(reachable) >= budget:
            truncated = True
            break
        reachable.add(callee)
        target = program.find_method(callee)
        if target is None or not target.has_body:
            continue
        work.extend(scan(target.instructions, callee))

    packages = {descriptor_to_dotted(method.owner).rsplit(".", 1)[0] if "." in descriptor_to_dotted(method.owner) else ""}
    for sig in reachable:
        owner = sig.split("->", 1)[0]
        dotted = descriptor_to_dotted(owner)
        packages.add(dotted.rsplit(".", 1)[0] if "." in dotted else "")
    packages.discard("")

    return BehaviorSnippet(
        guard=guard,
        region=region,
        reachable_methods=frozenset(reachable),
        invoked_system_methods=frozenset(system),
        package_names=frozenset(packages),
        matched_arm=_matched_arm(site, method),
        truncated=truncated,
        region_literals=tuple(literals),
        invoked_names=tuple(invoked_names),
        referenced_types=tuple(types),
    )


def _edge_at(call_graph: CallGraph, caller: str, index: int):
    for edge in call_graph.edges_from(caller):
        if edge.call_index == index:
            return edge
    return None


def find_device_guards(
    taint: TaintResult,
    cfgs: dict[str, CFG],
    db: DeviceInfoDB,
) -> list[DeviceGuard]:
    """find_guard_sites + collect_guard_strings + confirm_device_guard."""
    guards: list[DeviceGuard] = []
    for site in find_guard_sites(taint, cfgs):
        cfg = cfgs[site.method]
        strings = collect_guard_strings(site, cfg.method, cfg)
        guard = confirm_device_guard(site, strings, db)
        if guard is not None:
            guards.append(guard)
    return guards
