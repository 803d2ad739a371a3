//! Compilation of a SNAP program into a block DAG.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{validate, SnapError, SnapSequence, SnapSymbol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Input0,
    Input1,
    BnReluConv1,
    BnReluConv3,
    BnReluDwconv3,
    BnReluDwsconv3,
    Maxpool3,
    ConcatProj,
    Add,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Input0 => "input0",
            NodeKind::Input1 => "input1",
            NodeKind::BnReluConv1 => "bn_relu_conv1",
            NodeKind::BnReluConv3 => "bn_relu_conv3",
            NodeKind::BnReluDwconv3 => "bn_relu_dwconv3",
            NodeKind::BnReluDwsconv3 => "bn_relu_dwsconv3",
            NodeKind::Maxpool3 => "maxpool3",
            NodeKind::ConcatProj => "concat_proj",
            NodeKind::Add => "add",
        }
    }

    fn for_layer(sym: SnapSymbol) -> Option<Self> {
        Some(match sym {
            SnapSymbol::Conv1 => NodeKind::BnReluConv1,
            SnapSymbol::Conv3 => NodeKind::BnReluConv3,
            SnapSymbol::DwConv3 => NodeKind::BnReluDwconv3,
            SnapSymbol::DwsConv3 => NodeKind::BnReluDwsconv3,
            SnapSymbol::MaxPool3 => NodeKind::Maxpool3,
            _ => return None,
        })
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockNode {
    pub id: usize,
    pub kind: NodeKind,
    pub predecessors: Vec<usize>,
}

/// Nodes are stored in id order, which is also a topological order:
/// every predecessor id is smaller than the node's own id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGraph {
    pub nodes: Vec<BlockNode>,
    pub output_id: usize,
}

impl BlockGraph {
    pub fn node(&self, id: usize) -> &BlockNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of successors of each node.
    pub fn fan_out(&self) -> Vec<usize> {
        let mut out = vec![0; self.nodes.len()];
        for n in &self.nodes {
            for p in &n.predecessors {
                out[*p] += 1;
            }
        }
        out
    }

    fn push(&mut self, kind: NodeKind, predecessors: Vec<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(BlockNode { id, kind, predecessors });
        id
    }

    /// Drops non-input nodes that cannot reach the output and renumbers the rest.
    fn prune(&mut self) {
        let mut live = vec![false; self.nodes.len()];
        live[0] = true;
        live[1] = true;
        live[self.output_id] = true;
        for id in (0..self.nodes.len()).rev() {
            if live[id] {
                for p in self.nodes[id].predecessors.clone() {
                    live[p] = true;
                }
            }
        }
        if live.iter().all(|l| *l) {
            return;
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut kept = Vec::new();
        for n in self.nodes.drain(..) {
            if live[n.id] {
                remap[n.id] = kept.len();
                kept.push(BlockNode {
                    id: kept.len(),
                    kind: n.kind,
                    predecessors: n.predecessors.iter().map(|p| remap[*p]).collect(),
                });
            }
        }
        self.output_id = remap[self.output_id];
        self.nodes = kept;
    }
}

/// Runs the stack machine over node ids. The stack starts as
/// `[input0, input1]` (input1 on top). Whatever remains at the end is summed
/// by a chain of binary add nodes, topmost entry first.
pub fn build_block_graph(seq: &SnapSequence) -> Result<BlockGraph, SnapError> {
    let v = validate(seq);
    if !v.valid {
        return Err(SnapError::InvalidSequence(v));
    }
    let mut g = BlockGraph {
        nodes: Vec::new(),
        output_id: 0,
    };
    let in0 = g.push(NodeKind::Input0, vec![]);
    let in1 = g.push(NodeKind::Input1, vec![]);
    let mut stack = vec![in0, in1];
    for sym in seq.symbols() {
        match sym {
            SnapSymbol::Branch => stack.push(*stack.last().expect("validated")),
            SnapSymbol::Switch => {
                let n = stack.len();
                stack.swap(n - 1, n - 2);
            }
            SnapSymbol::Merge => {
                let top = stack.pop().expect("validated");
                let second = stack.pop().expect("validated");
                stack.push(g.push(NodeKind::ConcatProj, vec![top, second]));
            }
            layer => {
                let kind = NodeKind::for_layer(*layer).expect("layer symbol");
                let top = stack.pop().expect("validated");
                stack.push(g.push(kind, vec![top]));
            }
        }
    }
    let mut acc = stack.pop().expect("validated");
    while let Some(below) = stack.pop() {
        acc = g.push(NodeKind::Add, vec![acc, below]);
    }
    g.output_id = acc;
    g.prune();
    Ok(g)
}

/// Graphviz text; nodes and edges are emitted in id order.
pub fn export_dot(graph: &BlockGraph) -> String {
    let mut s = String::from("digraph block {\n  rankdir=BT;\n");
    for n in &graph.nodes {
        let extra = if n.id == graph.output_id { ", peripheries=2" } else { "" };
        let _ = writeln!(s, "  n{} [label=\"{}\"{}];", n.id, n.kind, extra);
    }
    for n in &graph.nodes {
        for p in &n.predecessors {
            let _ = writeln!(s, "  n{} -> n{};", p, n.id);
        }
    }
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use NodeKind::*;

    fn graph(text: &str) -> BlockGraph {
        build_block_graph(&SnapSequence::parse(text).unwrap()).unwrap()
    }

    #[test]
    fn single_conv3_block() {
        let g = graph("C3");
        let kinds: Vec<NodeKind> = g.nodes.iter().map(|n| n.kind).collect();
        assert_eq!(kinds, vec![Input0, Input1, BnReluConv3, Add]);
        assert_eq!(g.node(2).predecessors, vec![1]);
        assert_eq!(g.node(3).predecessors, vec![2, 0]);
        assert_eq!(g.output_id, 3);
    }

    #[test]
    fn branch_conv_merge_block() {
        let g = graph("B C1 M");
        let kinds: Vec<NodeKind> = g.nodes.iter().map(|n| n.kind).collect();
        assert_eq!(kinds, vec![Input0, Input1, BnReluConv1, ConcatProj, Add]);
        assert_eq!(g.node(2).predecessors, vec![1]);
        assert_eq!(g.node(3).predecessors, vec![2, 1]);
        assert_eq!(g.node(4).predecessors, vec![3, 0]);
    }

    #[test]
    fn invalid_sequences_are_rejected() {
        let err = build_block_graph(&SnapSequence::parse("M M").unwrap()).unwrap_err();
        assert!(matches!(err, SnapError::InvalidSequence(r) if r.failure_index == Some(1)));
    }

    #[test]
    fn fully_merged_block_has_no_add() {
        let g = graph("M");
        assert_eq!(g.len(), 3);
        assert_eq!(g.node(2).kind, ConcatProj);
        assert_eq!(g.node(2).predecessors, vec![1, 0]);
    }

    #[test]
    fn dot_export_is_deterministic() {
        let d = export_dot(&graph("C3"));
        assert_eq!(d, export_dot(&graph("C3")));
        assert_eq!(d.matches("[label=").count(), 4);
        assert_eq!(d.matches("->").count(), 3);
        assert!(d.contains("n1 -> n2;"));
    }
}
