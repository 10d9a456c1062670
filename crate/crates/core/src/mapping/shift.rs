//! Delay chains: constant-distance reads become shift register taps, with
//! long gaps re-materialized as delay memories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::extraction::{Port, UnifiedBuffer};

/// A point of the delay chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "index")]
pub enum Node {
    /// The buffer's input stream itself.
    Source,
    /// Output of shift register `i`.
    Sr(usize),
    /// Output of delay memory `i`.
    Delay(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftRegister {
    pub id: String,
    pub input: Node,
    pub depth: i64,
    /// Total delay from the source stream.
    pub delay: i64,
}

/// A delay memory from `from` cycles behind the source to `to`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayLine {
    pub input: Node,
    pub from: i64,
    pub to: i64,
}

#[derive(Debug, Clone, Default)]
pub struct ShiftPlan {
    pub registers: Vec<ShiftRegister>,
    pub delays: Vec<DelayLine>,
    /// Port id to the chain node carrying its values.
    pub taps: BTreeMap<String, Node>,
    /// Ports that need addressed storage.
    pub residual: Vec<Port>,
}

/// Builds the delay chain for all non-negative constant-distance ports.
/// Gaps up to `threshold` become shift registers from the previous tap;
/// longer gaps become a delay memory from the head of the current cluster.
pub fn introduce_shift_registers(ub: &UnifiedBuffer, threshold: i64) -> ShiftPlan {
    let mut plan = ShiftPlan::default();
    let mut dists: Vec<i64> = Vec::new();
    for p in &ub.outputs {
        match p.distance {
            Some(d) if d >= 0 && ub.write_port().is_some() => dists.push(d),
            _ => plan.residual.push(p.clone()),
        }
    }
    dists.sort_unstable();
    dists.dedup();
    let mut at: BTreeMap<i64, Node> = BTreeMap::from([(0, Node::Source)]);
    let (mut cur, mut cur_node) = (0i64, Node::Source);
    let (mut head, mut head_node) = (0i64, Node::Source);
    for d in dists.into_iter().filter(|&d| d > 0) {
        if d - cur <= threshold {
            plan.registers.push(ShiftRegister {
                id: format!("{}.sr{}", ub.name, plan.registers.len()),
                input: cur_node,
                depth: d - cur,
                delay: d,
            });
            cur_node = Node::Sr(plan.registers.len() - 1);
        } else {
            plan.delays.push(DelayLine { input: head_node, from: head, to: d });
            cur_node = Node::Delay(plan.delays.len() - 1);
            head = d;
            head_node = cur_node;
        }
        cur = d;
        at.insert(d, cur_node);
    }
    for p in &ub.outputs {
        if let Some(d) = p.distance.filter(|&d| d >= 0 && ub.write_port().is_some()) {
            plan.taps.insert(p.spec.id.clone(), at[&d]);
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::extract_buffers;
    use crate::frontend::parse_program;
    use crate::scheduler::schedule_stencil;

    #[test]
    fn brighten_chain() {
        let p = parse_program(crate::scheduler::tests::BB).unwrap();
        let s = schedule_stencil(&p).unwrap();
        let ubs = extract_buffers(&p, &s).unwrap();
        let br = ubs.iter().find(|u| u.name == "brighten").unwrap();
        let plan = introduce_shift_registers(br, 32);
        assert_eq!(plan.registers.len(), 2);
        assert_eq!(plan.delays, vec![DelayLine { input: Node::Source, from: 0, to: 64 }]);
        assert!(plan.residual.is_empty());
        assert_eq!(plan.registers[1].input, Node::Delay(0));
        let mut taps: Vec<Node> = plan.taps.values().copied().collect();
        taps.sort();
        assert_eq!(taps, vec![Node::Source, Node::Sr(0), Node::Sr(1), Node::Delay(0)]);
    }
}
