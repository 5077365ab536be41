//! Throughput bound due to precedence constraints across loop iterations.
//!
//! Read-after-write dependencies between instructions of successive
//! iterations form cycles in a doubly weighted dependence graph (edge
//! weights: latency in cycles, iteration distance 0 or 1). The block cannot
//! run faster than the maximum over all cycles of total latency divided by
//! total iteration distance. The maximum cycle ratio is computed with
//! Howard's value iteration; an exhaustive cycle-enumeration oracle is
//! provided for validation at small sizes.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{
    BasicBlock, Component, ComponentResult, Detail, GraphNodeRef, ValueId, ValueRole,
};
use crate::rational::{rat, Rat};

pub type NodeId = usize;

/// A value instance: one value consumed or produced by one instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub instruction: usize,
    pub role: ValueRole,
    pub value: ValueId,
}

impl Node {
    pub fn to_ref(&self) -> GraphNodeRef {
        GraphNodeRef {
            instruction: self.instruction,
            role: self.role,
            value: self.value.clone(),
        }
    }
}

/// A weighted edge. Latency edges (consumed -> produced within one
/// instruction) carry the instruction latency and iteration count 0.
/// Dependency edges (produced -> consumed) carry latency 0 and iteration
/// count 0 (same iteration) or 1 (next iteration).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub latency: u64,
    pub iterations: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DependenceGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Data-quality notes for latency entries that were not present in the
    /// instruction data and fell back to a default.
    pub defaulted_latencies: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("dependence graph has a cycle with zero iteration count")]
    MalformedGraph,
    #[error("cycle-ratio iteration did not converge within the iteration cap")]
    DidNotConverge,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("cycle oracle limit exceeded: {nodes} nodes (max {max})")]
    TooLarge { nodes: usize, max: usize },
    #[error("dependence graph has a cycle with zero iteration count")]
    MalformedGraph,
}

const ORACLE_NODE_LIMIT: usize = 14;

/// Builds the cross-iteration dependence graph of a block.
///
/// For every value an instruction reads there is a 0-latency dependency edge
/// from the most recent prior writer in the block, or, if none exists, from
/// the last writer in the block with iteration count 1 (the value produced
/// by the previous iteration). Values never written in the block are
/// loop-invariant and produce no edge. Within an instruction, every
/// (consumed, produced) pair is connected by a latency edge; pairs missing
/// from the instruction's latency map fall back to the instruction's maximum
/// known latency (or 1 if it has none), and the fallback is recorded.
/// Instructions that may be eliminated forward their inputs with latency 0.
pub fn build_graph(block: &BasicBlock) -> DependenceGraph {
    let mut graph = DependenceGraph::default();
    let mut consumed_ids: Vec<BTreeMap<ValueId, NodeId>> = Vec::new();
    let mut produced_ids: Vec<BTreeMap<ValueId, NodeId>> = Vec::new();

    for (j, instr) in block.instructions().iter().enumerate() {
        let mut consumed = BTreeMap::new();
        for v in &instr.reads {
            consumed.entry(v.clone()).or_insert_with(|| {
                graph.nodes.push(Node {
                    instruction: j,
                    role: ValueRole::Consumed,
                    value: v.clone(),
                });
                graph.nodes.len() - 1
            });
        }
        let mut produced = BTreeMap::new();
        for v in &instr.writes {
            produced.entry(v.clone()).or_insert_with(|| {
                graph.nodes.push(Node {
                    instruction: j,
                    role: ValueRole::Produced,
                    value: v.clone(),
                });
                graph.nodes.len() - 1
            });
        }

        let default_latency = instr.latencies.values().copied().max().unwrap_or(1);
        for (src, &src_node) in &consumed {
            for (dst, &dst_node) in &produced {
                let latency = if instr.may_be_eliminated {
                    0
                } else {
                    match instr.latencies.get(&(src.clone(), dst.clone())) {
                        Some(&l) => u64::from(l),
                        None => {
                            graph.defaulted_latencies.push(format!(
                                "instr#{}: no latency for {}->{}, using {}",
                                j, src, dst, default_latency
                            ));
                            u64::from(default_latency)
                        }
                    }
                };
                graph.edges.push(Edge {
                    src: src_node,
                    dst: dst_node,
                    latency,
                    iterations: 0,
                });
            }
        }

        consumed_ids.push(consumed);
        produced_ids.push(produced);
    }

    // Dependency edges: most recent prior writer, else last writer in the
    // block (previous iteration). Register renaming removes all other
    // write-write interactions.
    let n = block.instructions().len();
    for (j, consumed) in consumed_ids.iter().enumerate() {
        for (v, &reader) in consumed {
            let prior = (0..j).rev().find(|&k| produced_ids[k].contains_key(v));
            if let Some(k) = prior {
                graph.edges.push(Edge {
                    src: produced_ids[k][v],
                    dst: reader,
                    latency: 0,
                    iterations: 0,
                });
            } else if let Some(k) = (0..n).rev().find(|&k| produced_ids[k].contains_key(v)) {
                graph.edges.push(Edge {
                    src: produced_ids[k][v],
                    dst: reader,
                    latency: 0,
                    iterations: 1,
                });
            }
        }
    }

    graph
}

/// Renders the graph in DOT format for debugging.
pub fn to_dot(graph: &DependenceGraph) -> String {
    let mut out = String::from("digraph dependence {\n");
    for (i, node) in graph.nodes.iter().enumerate() {
        out.push_str(&format!("  n{} [label=\"{}\"];\n", i, node.to_ref()));
    }
    for edge in &graph.edges {
        out.push_str(&format!(
            "  n{} -> n{} [label=\"{}/{}\"];\n",
            edge.src, edge.dst, edge.latency, edge.iterations
        ));
    }
    out.push_str("}\n");
    out
}

/// True if the subgraph of iteration-count-0 edges is acyclic.
fn iteration_zero_acyclic(graph: &DependenceGraph) -> bool {
    let n = graph.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut m = 0usize;
    for e in graph.edges.iter().filter(|e| e.iterations == 0) {
        indegree[e.dst] += 1;
        out[e.src].push(e.dst);
        m += 1;
    }
    if m == 0 {
        return true;
    }
    let mut queue: Vec<usize> = (0..n).filter(|&u| indegree[u] == 0).collect();
    let mut processed = 0;
    while let Some(u) = queue.pop() {
        processed += 1;
        for &x in &out[u] {
            indegree[x] -= 1;
            if indegree[x] == 0 {
                queue.push(x);
            }
        }
    }
    processed == n
}

/// Maximum cycle ratio of the graph: the precedence throughput bound.
///
/// Returns 0 for acyclic graphs. The detail payload carries one cycle
/// achieving the bound. Falls back to the enumeration oracle if the value
/// iteration hits its iteration cap on a small graph.
pub fn max_cycle_ratio(graph: &DependenceGraph) -> Result<ComponentResult, GraphError> {
    let (bound, cycle) = match howard_max_cycle_ratio(graph)? {
        Some(result) => result,
        None => {
            // Iteration cap hit; never observed on well-formed graphs.
            if graph.nodes.len() <= ORACLE_NODE_LIMIT {
                let bound = cycle_ratio_oracle(graph).map_err(|_| GraphError::MalformedGraph)?;
                (bound, Vec::new())
            } else {
                return Err(GraphError::DidNotConverge);
            }
        }
    };
    Ok(ComponentResult {
        component: Component::Precedence,
        bound,
        detail: Detail::Precedence {
            cycle: cycle.iter().map(|&id| graph.nodes[id].to_ref()).collect(),
            defaulted_latencies: graph.defaulted_latencies.clone(),
        },
    })
}

/// Howard's value iteration for the maximum cycle ratio, run per strongly
/// connected component. Returns `None` if the iteration cap was reached.
pub fn howard_max_cycle_ratio(
    graph: &DependenceGraph,
) -> Result<Option<(Rat, Vec<NodeId>)>, GraphError> {
    if !iteration_zero_acyclic(graph) {
        return Err(GraphError::MalformedGraph);
    }

    let mut best: Option<(Rat, Vec<NodeId>)> = None;
    for scc in strongly_connected_components(graph) {
        // A single node only matters if it carries a self-loop.
        if scc.len() < 2
            && !graph
                .edges
                .iter()
                .any(|e| e.src == scc[0] && e.dst == scc[0])
        {
            continue;
        }
        match howard_scc(graph, &scc) {
            Some((ratio, cycle)) => {
                if best.as_ref().is_none_or(|(b, _)| ratio > *b) {
                    best = Some((ratio, cycle));
                }
            }
            None => return Ok(None),
        }
    }
    Ok(Some(best.unwrap_or((rat(0, 1), Vec::new()))))
}

fn strongly_connected_components(graph: &DependenceGraph) -> Vec<Vec<NodeId>> {
    // Iterative Tarjan.
    let n = graph.nodes.len();
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &graph.edges {
        out[e.src].push(e.dst);
    }

    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0usize;
    let mut sccs: Vec<Vec<usize>> = Vec::new();
    let mut call: Vec<(usize, usize)> = Vec::new();

    for start in 0..n {
        if index[start] != usize::MAX {
            continue;
        }
        call.push((start, 0));
        index[start] = next_index;
        low[start] = next_index;
        next_index += 1;
        stack.push(start);
        on_stack[start] = true;

        while let Some(&mut (u, ref mut ei)) = call.last_mut() {
            if *ei < out[u].len() {
                let x = out[u][*ei];
                *ei += 1;
                if index[x] == usize::MAX {
                    index[x] = next_index;
                    low[x] = next_index;
                    next_index += 1;
                    stack.push(x);
                    on_stack[x] = true;
                    call.push((x, 0));
                } else if on_stack[x] {
                    low[u] = low[u].min(index[x]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[u]);
                }
                if low[u] == index[u] {
                    let mut component = Vec::new();
                    while let Some(w) = stack.pop() {
                        on_stack[w] = false;
                        component.push(w);
                        if w == u {
                            break;
                        }
                    }
                    component.sort_unstable();
                    sccs.push(component);
                }
            }
        }
    }
    sccs
}

struct SccEdge {
    dst: usize,
    weight: i128,
    ticks: i128,
}

/// Policy iteration on one strongly connected component, maximizing
/// (sum of latencies) / (sum of iteration counts) over cycles.
fn howard_scc(graph: &DependenceGraph, scc: &[NodeId]) -> Option<(Rat, Vec<NodeId>)> {
    let n = scc.len();
    let mut local = BTreeMap::new();
    for (i, &g) in scc.iter().enumerate() {
        local.insert(g, i);
    }
    let mut edges: Vec<SccEdge> = Vec::new();
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &graph.edges {
        if let (Some(&u), Some(&x)) = (local.get(&e.src), local.get(&e.dst)) {
            out[u].push(edges.len());
            edges.push(SccEdge {
                dst: x,
                weight: e.latency as i128,
                ticks: e.iterations as i128,
            });
        }
    }
    // Every node of a non-trivial SCC has an outgoing edge within it.
    debug_assert!(out.iter().all(|o| !o.is_empty()));

    let mut policy: Vec<usize> = out.iter().map(|o| o[0]).collect();
    let mut lambda: Vec<Rat> = vec![rat(0, 1); n];
    let mut value: Vec<Rat> = vec![rat(0, 1); n];

    let cap = n * edges.len() + 2;
    evaluate_policy(&edges, &policy, &mut lambda, &mut value);
    let mut iterations = 0;
    while improve_policy(&edges, &out, &mut policy, &lambda, &value) {
        iterations += 1;
        if iterations > cap {
            return None;
        }
        evaluate_policy(&edges, &policy, &mut lambda, &mut value);
    }

    let best = lambda.iter().max().cloned()?;
    // Extract one policy cycle achieving the best ratio.
    let cycle = policy_cycles(&edges, &policy)
        .into_iter()
        .find(|cycle| cycle_ratio(&edges, &policy, cycle) == best)
        .unwrap_or_default();
    let mut global: Vec<NodeId> = cycle.iter().map(|&u| scc[u]).collect();
    rotate_to_min(&mut global);
    Some((best, global))
}

fn cycle_ratio(edges: &[SccEdge], policy: &[usize], cycle: &[usize]) -> Rat {
    let mut w = 0i128;
    let mut t = 0i128;
    for &u in cycle {
        let e = &edges[policy[u]];
        w += e.weight;
        t += e.ticks;
    }
    rat(w, t)
}

fn rotate_to_min(cycle: &mut [NodeId]) {
    if let Some(pos) = cycle
        .iter()
        .enumerate()
        .min_by_key(|(_, &id)| id)
        .map(|(pos, _)| pos)
    {
        cycle.rotate_left(pos);
    }
}

/// Nodes of each cycle of the policy's functional graph, in traversal order.
fn policy_cycles(edges: &[SccEdge], policy: &[usize]) -> Vec<Vec<usize>> {
    let n = policy.len();
    let mut color = vec![0u8; n];
    let mut cycles = Vec::new();
    for start in 0..n {
        if color[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = start;
        while color[cur] == 0 {
            color[cur] = 1;
            path.push(cur);
            cur = edges[policy[cur]].dst;
        }
        if color[cur] == 1 {
            let pos = path.iter().position(|&u| u == cur).unwrap();
            cycles.push(path[pos..].to_vec());
        }
        for u in path {
            color[u] = 2;
        }
    }
    cycles
}

/// Computes the cycle ratio and relative values induced by the policy. To
/// keep successive evaluations comparable, the minimum-index node of each
/// policy cycle keeps its previous value.
fn evaluate_policy(edges: &[SccEdge], policy: &[usize], lambda: &mut [Rat], value: &mut [Rat]) {
    let n = policy.len();
    let mut color = vec![0u8; n];
    let mut new_lambda = vec![rat(0, 1); n];
    let mut new_value = vec![rat(0, 1); n];

    for start in 0..n {
        if color[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = start;
        while color[cur] == 0 {
            color[cur] = 1;
            path.push(cur);
            cur = edges[policy[cur]].dst;
        }
        if color[cur] == 1 {
            // New cycle: path[pos..] closes at `cur`.
            let pos = path.iter().position(|&u| u == cur).unwrap();
            let cycle = &path[pos..];
            let mut w = 0i128;
            let mut t = 0i128;
            for &u in cycle {
                let e = &edges[policy[u]];
                w += e.weight;
                t += e.ticks;
            }
            debug_assert!(t > 0, "policy cycle must span at least one iteration");
            let ratio = rat(w, t);
            let anchor_pos = cycle
                .iter()
                .enumerate()
                .min_by_key(|(_, &u)| u)
                .map(|(p, _)| p)
                .unwrap();
            let anchor = cycle[anchor_pos];
            new_value[anchor] = value[anchor];
            new_lambda[anchor] = ratio;
            color[anchor] = 2;
            // Walk the cycle backwards from the anchor:
            // value(u) = w(e) - ratio * t(e) + value(succ(u)).
            let len = cycle.len();
            for back in 1..len {
                let u = cycle[(anchor_pos + len - back) % len];
                let succ = cycle[(anchor_pos + len - back + 1) % len];
                let e = &edges[policy[u]];
                new_value[u] = rat(e.weight, 1) - ratio * rat(e.ticks, 1) + new_value[succ];
                new_lambda[u] = ratio;
                color[u] = 2;
            }
        }
        // Unwind tree nodes (the prefix of `path` not on the cycle, or the
        // whole path if it ran into an already-finalized node).
        for &u in path.iter().rev() {
            if color[u] == 2 {
                continue;
            }
            let e = &edges[policy[u]];
            let succ = e.dst;
            debug_assert_eq!(color[succ], 2);
            new_lambda[u] = new_lambda[succ];
            new_value[u] = rat(e.weight, 1) - new_lambda[u] * rat(e.ticks, 1) + new_value[succ];
            color[u] = 2;
        }
    }

    lambda.clone_from_slice(&new_lambda);
    value.clone_from_slice(&new_value);
}

/// One improvement pass. Prefers edges leading to a higher cycle ratio;
/// when ratios are equal, switches on a strict value improvement.
fn improve_policy(
    edges: &[SccEdge],
    out: &[Vec<usize>],
    policy: &mut [usize],
    lambda: &[Rat],
    value: &[Rat],
) -> bool {
    let n = policy.len();
    let mut improved = false;
    let mut current_lambda: Vec<Rat> = lambda.to_vec();

    for u in 0..n {
        for &ei in &out[u] {
            let x = edges[ei].dst;
            if current_lambda[x] > current_lambda[u] {
                policy[u] = ei;
                current_lambda[u] = current_lambda[x];
                improved = true;
            }
        }
    }
    if improved {
        return true;
    }

    for u in 0..n {
        let mut best_edge = policy[u];
        let mut best_value = {
            let e = &edges[policy[u]];
            rat(e.weight, 1) - lambda[u] * rat(e.ticks, 1) + value[e.dst]
        };
        for &ei in &out[u] {
            let e = &edges[ei];
            if lambda[e.dst] != lambda[u] {
                continue;
            }
            let candidate = rat(e.weight, 1) - lambda[u] * rat(e.ticks, 1) + value[e.dst];
            if candidate > best_value {
                best_value = candidate;
                best_edge = ei;
            }
        }
        if best_edge != policy[u] && best_value > value[u] {
            policy[u] = best_edge;
            improved = true;
        }
    }
    improved
}

/// Exact maximum cycle ratio by enumerating all simple cycles.
///
/// Independent of the value-iteration path; intended for validation on
/// graphs of at most 14 nodes.
pub fn cycle_ratio_oracle(graph: &DependenceGraph) -> Result<Rat, OracleError> {
    let n = graph.nodes.len();
    if n > ORACLE_NODE_LIMIT {
        return Err(OracleError::TooLarge {
            nodes: n,
            max: ORACLE_NODE_LIMIT,
        });
    }
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, e) in graph.edges.iter().enumerate() {
        out[e.src].push(i);
    }

    let mut best = rat(0, 1);
    let mut on_path = vec![false; n];
    // Enumerate each simple cycle exactly once, rooted at its minimum node.
    for root in 0..n {
        let mut stack: Vec<(usize, usize, i128, i128)> = vec![(root, 0, 0, 0)];
        on_path[root] = true;
        while let Some((node, edge_pos, w, t)) = stack.pop() {
            if edge_pos < out[node].len() {
                stack.push((node, edge_pos + 1, w, t));
                let e = &graph.edges[out[node][edge_pos]];
                let nw = w + e.latency as i128;
                let nt = t + e.iterations as i128;
                if e.dst == root {
                    if nt == 0 {
                        return Err(OracleError::MalformedGraph);
                    }
                    let ratio = rat(nw, nt);
                    if ratio > best {
                        best = ratio;
                    }
                } else if e.dst > root && !on_path[e.dst] {
                    on_path[e.dst] = true;
                    stack.push((e.dst, 0, nw, nt));
                }
            } else {
                on_path[node] = false;
            }
        }
    }
    Ok(best)
}
