import networkx as nx
from hypothesis import given, settings, strategies as st

from devscan.graphs import (
    EXIT,
    _ipdoms_from_edges,
    build_call_graph,
    build_cfg,
    call_graph_to_dot,
    cfg_to_dot,
    immediate_postdominator,
    immediate_postdominators,
)
from devscan.smali import parse_smali_class
from devscan.ir import Program
from tests.conftest import corpus_run


def method_of(src: str):
    return parse_smali_class(src).methods[0]


def test_straight_line_single_block():
    method = method_of(
        """
.class public Lt/A;
.super Ljava/lang/Object;
.method public static f()V
    .registers 2
    const-string v0, "a"
    const-string v1, "b"
    move-object v0, v1
    return-void
.end method
"""
    )
    cfg = build_cfg(method)
    assert len(cfg.blocks) == 1
    assert cfg.edges == ()


def test_if_produces_three_blocks():
    run = corpus_run("oppo_perm")
    sig = "Lcom/fixtures/oppo/PermissionPage;->startSettingPage(Landroid/content/Context;)V"
    cfg = run.cfgs[sig]
    assert len(cfg.blocks) == 3
    kinds = sorted(k.value for _, _, k in cfg.edges)
    assert kinds == ["branch_taken", "fallthrough", "fallthrough"]
    # join block after both arms postdominates the condition
    assert immediate_postdominator(cfg, 0) == 2


def test_goto_back_makes_cycle():
    method = method_of(
        """
.class public Lt/Loop;
.super Ljava/lang/Object;
.method public static f()V
    .registers 1
    :top
    nop
    goto :top
.end method
"""
    )
    cfg = build_cfg(method)
    assert any(dst <= src for src, dst, _ in cfg.edges)


def test_blocks_partition_instructions(all_fixture_ids):
    for fid in all_fixture_ids:
        if fid == "budget_bomb":
            continue
        for sig, cfg in corpus_run(fid).cfgs.items():
            seen = []
            for b in cfg.blocks:
                seen.extend(b.indices())
            assert seen == list(range(len(cfg.method.instructions)))


def test_edge_count_bound(all_fixture_ids):
    for fid in all_fixture_ids:
        if fid == "budget_bomb":
            continue
        for cfg in corpus_run(fid).cfgs.values():
            assert len(cfg.edges) <= 2 * len(cfg.blocks)


def test_conditional_blocks_have_two_successors(all_fixture_ids):
    from devscan.ir import IF_OPCODES

    for fid in all_fixture_ids:
        if fid == "budget_bomb":
            continue
        for cfg in corpus_run(fid).cfgs.values():
            for b in cfg.blocks:
                last = cfg.method.instructions[b.end]
                if last.opcode in IF_OPCODES:
                    assert len(cfg.successors(b.bid)) == 2
                elif last.is_return():
                    assert cfg.successors(b.bid) == []


# -- call graph ---------------------------------------------------------------

def test_fig2_call_edges_resolved():
    run = corpus_run("oppo_perm")
    caller = "Lcom/fixtures/oppo/PermissionPage;->startSettingPage(Landroid/content/Context;)V"
    resolved = {
        e.callee for e in run.call_graph.edges_from(caller) if e.resolved
    }
    assert resolved == {
        "Lcom/fixtures/oppo/PermissionPage;->getManufacturer()Ljava/lang/String;",
        "Lcom/fixtures/oppo/PermissionPage;->oppoApi(Landroid/content/Context;)V",
    }


def test_library_callee_unresolved():
    run = corpus_run("oppo_perm")
    caller = "Lcom/fixtures/oppo/PermissionPage;->startSettingPage(Landroid/content/Context;)V"
    unresolved = {
        e.callee for e in run.call_graph.edges_from(caller) if not e.resolved
    }
    assert "Ljava/lang/String;->toLowerCase()Ljava/lang/String;" in unresolved


def test_every_invoke_has_exactly_one_edge(all_fixture_ids):
    from devscan.ir import INVOKE_OPCODES

    for fid in all_fixture_ids:
        if fid == "budget_bomb":
            continue
        run = corpus_run(fid)
        invokes = sum(
            1
            for m in run.program.methods()
            for i in m.instructions
            if i.opcode in INVOKE_OPCODES
        )
        assert len(run.call_graph.edges) == invokes


def test_no_invokes_empty_edges():
    cls = parse_smali_class(
        """
.class public Lt/NoCalls;
.super Ljava/lang/Object;
.method public static f()V
    .registers 1
    return-void
.end method
"""
    )
    assert build_call_graph(Program((cls,))).edges == ()


def test_superclass_chain_resolution():
    base = parse_smali_class(
        """
.class public Lt/Base;
.super Ljava/lang/Object;
.method public greet()V
    .registers 1
    return-void
.end method
"""
    )
    derived = parse_smali_class(
        """
.class public Lt/Derived;
.super Lt/Base;
.method public static f(Lt/Derived;)V
    .registers 1
    invoke-virtual {p0}, Lt/Derived;->greet()V
    return-void
.end method
"""
    )
    graph = build_call_graph(Program((base, derived)))
    (edge,) = graph.edges
    assert edge.resolved
    assert edge.callee == "Lt/Base;->greet()V"


def test_abstract_target_stays_unresolved():
    abstract = parse_smali_class(
        """
.class public Lt/Abs;
.super Ljava/lang/Object;
.method public abstract greet()V
.end method
"""
    )
    caller = parse_smali_class(
        """
.class public Lt/Caller;
.super Ljava/lang/Object;
.method public static f(Lt/Abs;)V
    .registers 1
    invoke-virtual {p0}, Lt/Abs;->greet()V
    return-void
.end method
"""
    )
    graph = build_call_graph(Program((abstract, caller)))
    (edge,) = graph.edges
    assert not edge.resolved


def test_call_graph_deterministic():
    run = corpus_run("deep_chain")
    again = build_call_graph(run.program)
    assert again.edges == run.call_graph.edges


# -- postdominators -----------------------------------------------------------

def test_diamond_ipdom_is_join():
    # 0 -> 1|2 -> 3(return)
    succs = {0: [1, 2], 1: [3], 2: [3], 3: []}
    ipdoms = _ipdoms_from_edges(4, succs, exits=[3])
    assert ipdoms[0] == 3


def test_branch_returning_directly_goes_to_exit():
    # 0 -> 1(return) | 2 -> 3(return): nothing but the exit joins them
    succs = {0: [1, 2], 1: [], 2: [3], 3: []}
    ipdoms = _ipdoms_from_edges(4, succs, exits=[1, 3])
    assert ipdoms[0] == EXIT


def test_oppo_perm_cond_ipdom():
    run = corpus_run("oppo_perm")
    sig = "Lcom/fixtures/oppo/PermissionPage;->startSettingPage(Landroid/content/Context;)V"
    ipdoms = immediate_postdominators(run.cfgs[sig])
    assert ipdoms[0] == 2 and ipdoms[1] == 2 and ipdoms[2] == EXIT


def _oracle_ipdoms(n, succs, exits):
    """Brute force: postdominators = intersection of all simple exit paths."""
    g = nx.DiGraph()
    g.add_nodes_from(range(n))
    g.add_node(EXIT)
    for src, dsts in succs.items():
        for dst in dsts:
            g.add_edge(src, dst)
    for e in exits:
        g.add_edge(e, EXIT)

    pdom_cache: dict[int, set] = {}

    def pdoms(node):
        if node not in pdom_cache:
            acc = None
            for path in nx.all_simple_paths(g, node, EXIT):
                acc = set(path) if acc is None else acc & set(path)
            pdom_cache[node] = acc if acc is not None else set()
        return pdom_cache[node]

    out = {}
    for node in range(n):
        if not nx.has_path(g, node, EXIT):
            out[node] = EXIT
            continue
        strict = pdoms(node) - {node}
        # the immediate postdominator is the strict postdominator that every
        # other strict postdominator also postdominates
        best = EXIT
        for cand in sorted(strict - {EXIT}):
            others = strict - {cand, EXIT}
            if all(other in pdoms(cand) for other in others):
                best = cand
                break
        out[node] = best
    return out


@st.composite
def _random_cfgs(draw):
    n = draw(st.integers(min_value=2, max_value=12))
    succs = {}
    exits = []
    for node in range(n):
        kind = draw(st.sampled_from(["return", "goto", "branch", "fall"]))
        if node == n - 1 or kind == "return":
            succs[node] = []
            exits.append(node)
        elif kind == "goto":
            succs[node] = [draw(st.integers(min_value=0, max_value=n - 1))]
        elif kind == "branch":
            a = draw(st.integers(min_value=0, max_value=n - 1))
            b = draw(st.integers(min_value=0, max_value=n - 1))
            succs[node] = [a, b] if a != b else [a]
        else:
            succs[node] = [min(node + 1, n - 1)]
    return n, succs, exits


@given(_random_cfgs())
@settings(max_examples=200, deadline=None)
def test_ipdom_matches_simple_path_oracle(case):
    n, succs, exits = case
    assert _ipdoms_from_edges(n, succs, exits) == _oracle_ipdoms(n, succs, exits)


# -- DOT dumps ---------------------------------------------------------------

def test_dot_outputs_contain_nodes():
    run = corpus_run("oppo_perm")
    sig = "Lcom/fixtures/oppo/PermissionPage;->oppoApi(Landroid/content/Context;)V"
    dot = cfg_to_dot(run.cfgs[sig])
    assert dot.startswith("digraph") and "b0" in dot
    cg_dot = call_graph_to_dot(run.call_graph)
    assert "digraph" in cg_dot and "oppoApi" in cg_dot
