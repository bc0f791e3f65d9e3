"""Control-flow graphs, the whole-program call graph and postdominators."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .ir import IF_OPCODES, INVOKE_OPCODES, MethodIR, Opcode, Program

# synthetic exit node joining all return blocks
EXIT = -1


class EdgeKind(str, Enum):
    FALLTHROUGH = "fallthrough"
    BRANCH_TAKEN = "branch_taken"
    GOTO = "goto"


@dataclass(frozen=True)
class BasicBlock:
    bid: int
    start: int
    end: int  # inclusive

    def indices(self) -> range:
        return range(self.start, self.end + 1)


@dataclass
class CFG:
    method: MethodIR
    blocks: tuple[BasicBlock, ...]
    edges: tuple[tuple[int, int, EdgeKind], ...]
    _succ: dict[int, list[int]] = field(default_factory=dict, repr=False)
    _pred: dict[int, list[int]] = field(default_factory=dict, repr=False)
    _block_of: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._succ = {b.bid: [] for b in self.blocks}
        self._pred = {b.bid: [] for b in self.blocks}
        for src, dst, _ in self.edges:
            self._succ[src].append(dst)
            self._pred[dst].append(src)
        for b in self.blocks:
            for i in b.indices():
                self._block_of[i] = b.bid

    def successors(self, bid: int) -> list[int]:
        return self._succ[bid]

    def predecessors(self, bid: int) -> list[int]:
        return self._pred[bid]

    def block_of(self, index: int) -> int:
        return self._block_of[index]

    def block(self, bid: int) -> BasicBlock:
        return self.blocks[bid]

    def return_blocks(self) -> list[int]:
        out = []
        for b in self.blocks:
            if self.method.instructions[b.end].is_return():
                out.append(b.bid)
        return out

    def instructions_of(self, bid: int):
        b = self.blocks[bid]
        return self.method.instructions[b.start : b.end + 1]


def build_cfg(method: MethodIR) -> CFG:
    """Split a method body into basic blocks with typed edges.

    Leaders are index 0, every branch target, and every successor of a
    branch or goto.
    """
    if not method.has_body:
        raise ValueError(f"{method.signature}: no body to build a CFG from")
    instructions = method.instructions
    n = len(instructions)
    leaders = {0}
    for ins in instructions:
        if ins.branch_target is not None:
            leaders.add(ins.branch_target)
            if ins.index + 1 < n:
                leaders.add(ins.index + 1)
        elif ins.is_return() and ins.index + 1 < n:
            leaders.add(ins.index + 1)
    for ins in instructions:
        if ins.branch_target is not None and not 0 <= ins.branch_target < n:
            raise RuntimeError(
                f"internal: {method.signature} branch target {ins.branch_target} "
                f"outside body (frontend should have rejected this)"
            )
    ordered = sorted(leaders)
    blocks = []
    for bid, start in enumerate(ordered):
        end = (ordered[bid + 1] - 1) if bid + 1 < len(ordered) else n - 1
        blocks.append(BasicBlock(bid=bid, start=start, end=end))
    start_to_bid = {b.start: b.bid for b in blocks}

    edges: list[tuple[int, int, EdgeKind]] = []
    for b in blocks:
        last = instructions[b.end]
        if last.opcode is Opcode.GOTO:
            edges.append((b.bid, start_to_bid[last.branch_target], EdgeKind.GOTO))
        elif last.opcode in IF_OPCODES:
            edges.append((b.bid, start_to_bid[last.branch_target], EdgeKind.BRANCH_TAKEN))
            if b.end + 1 < n:
                edges.append((b.bid, start_to_bid[b.end + 1], EdgeKind.FALLTHROUGH))
        elif last.is_return():
            pass
        elif b.end + 1 < n:
            edges.append((b.bid, start_to_bid[b.end + 1], EdgeKind.FALLTHROUGH))
    return CFG(method=method, blocks=tuple(blocks), edges=tuple(edges))


def immediate_postdominators(cfg: CFG) -> dict[int, int]:
    """ipdom for every block over the CFG augmented with a synthetic exit.

    Blocks that cannot reach any return are assigned EXIT.
    """
    succs = {b.bid: list(cfg.successors(b.bid)) for b in cfg.blocks}
    exits = cfg.return_blocks()
    return _ipdoms_from_edges(len(cfg.blocks), succs, exits)


def immediate_postdominator(cfg: CFG, bid: int) -> int:
    """ipdom of one block; EXIT names the synthetic exit node."""
    return immediate_postdominators(cfg)[bid]


def _ipdoms_from_edges(
    nblocks: int, succs: dict[int, list[int]], exits: list[int]
) -> dict[int, int]:
    nodes = list(range(nblocks))
    aug = {bid: list(dict.fromkeys(s)) for bid, s in succs.items()}
    for e in exits:
        aug[e] = aug.get(e, []) + [EXIT]
    preds: dict[int, list[int]] = {bid: [] for bid in nodes + [EXIT]}
    for bid, ss in aug.items():
        for s in ss:
            preds[s].append(bid)

    # restrict to blocks that reach the exit at all
    reaching = {EXIT}
    work = [EXIT]
    while work:
        cur = work.pop()
        for p in preds[cur]:
            if p not in reaching:
                reaching.add(p)
                work.append(p)

    universe = frozenset([b for b in nodes if b in reaching] + [EXIT])
    pdom: dict[int, set] = {bid: set(universe) for bid in nodes}
    pdom[EXIT] = {EXIT}
    changed = True
    while changed:
        changed = False
        for bid in nodes:
            if bid not in reaching:
                continue
            # successors that never reach the exit contribute no exit paths;
            # their pdom set stays the full universe, a no-op under intersection
            succ_sets = [pdom[s] if s != EXIT else {EXIT} for s in aug[bid]]
            new = {bid} | set.intersection(*succ_sets)
            if new != pdom[bid]:
                pdom[bid] = new
                changed = True

    result: dict[int, int] = {}
    for bid in nodes:
        if bid not in reaching:
            result[bid] = EXIT
            continue
        strict = pdom[bid] - {bid}
        # the immediate postdominator is the strict postdominator that every
        # other strict postdominator also postdominates
        ipdom = EXIT
        for cand in sorted(strict - {EXIT}):
            others = strict - {cand}
            if all(o == EXIT or o in pdom[cand] for o in others):
                ipdom = cand
                break
        result[bid] = ipdom
    return result


@dataclass(frozen=True)
class CallEdge:
    caller: str
    call_index: int
    callee: str
    resolved: bool


@dataclass
class CallGraph:
    nodes: frozenset[str]
    edges: tuple[CallEdge, ...]

    def __post_init__(self) -> None:
        self._out: dict[str, list[CallEdge]] = {}
        self._in: dict[str, list[CallEdge]] = {}
        for e in self.edges:
            self._out.setdefault(e.caller, []).append(e)
            self._in.setdefault(e.callee, []).append(e)

    def edges_from(self, signature: str) -> list[CallEdge]:
        return self._out.get(signature, [])

    def callers_of(self, signature: str) -> list[CallEdge]:
        return self._in.get(signature, [])


def resolve_call(program: Program, owner: str, name: str, descriptor: str) -> MethodIR | None:
    """Resolve by exact match, then along the loaded superclass chain.

    Returns the declaring method only when it has a body; dispatch fans
    out to a single target (the static receiver type), never to subclasses.
    """
    seen: set[str] = set()
    current: str | None = owner
    while current and current not in seen:
        seen.add(current)
        cls = program.index.get(current)
        if cls is None:
            return None
        for m in cls.methods:
            if m.name == name and m.descriptor == descriptor:
                return m if m.has_body else None
        current = cls.super_name
    return None


def build_call_graph(program: Program) -> CallGraph:
    """One edge per invoke instruction; unresolved callees are data."""
    edges: list[CallEdge] = []
    nodes = {m.signature for m in program.methods()}
    for cls in program.classes:
        for method in cls.methods:
            for ins in method.instructions:
                if ins.opcode not in INVOKE_OPCODES:
                    continue
                ref = ins.method_ref
                assert ref is not None
                target = resolve_call(program, ref.owner, ref.name, ref.descriptor)
                if target is not None:
                    edges.append(
                        CallEdge(method.signature, ins.index, target.signature, True)
                    )
                else:
                    edges.append(
                        CallEdge(method.signature, ins.index, ref.signature, False)
                    )
    return CallGraph(nodes=frozenset(nodes), edges=tuple(edges))


def build_cfgs(program: Program) -> dict[str, CFG]:
    """CFGs for every method with a body, keyed by signature."""
    return {m.signature: build_cfg(m) for m in program.methods() if m.has_body}


def cfg_to_dot(cfg: CFG) -> str:
    lines = ["digraph cfg {", '  node [shape=box, fontname="monospace"];']
    for b in cfg.blocks:
        body = "\\l".join(
            f"{i.index}: {i.opcode.value}" for i in cfg.instructions_of(b.bid)
        )
        lines.append(f'  b{b.bid} [label="B{b.bid}\\l{body}\\l"];')
    for src, dst, kind in cfg.edges:
        lines.append(f'  b{src} -> b{dst} [label="{kind.value}"];')
    lines.append("}")
    return "\n".join(lines)


def call_graph_to_dot(graph: CallGraph) -> str:
    lines = ["digraph calls {", "  node [shape=box];"]
    names: dict[str, str] = {}

    def nid(sig: str) -> str:
        if sig not in names:
            names[sig] = f"n{len(names)}"
            lines.append(f'  {names[sig]} [label="{sig}"];')
        return names[sig]

    for e in graph.edges:
        style = "solid" if e.resolved else "dashed"
        lines.append(f"  {nid(e.caller)} -> {nid(e.callee)} [style={style}];")
    lines.append("}")
    return "\n".join(lines)
