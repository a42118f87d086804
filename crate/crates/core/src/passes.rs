//! Tree passes after construction: node numbering, stack annotation and
//! flattening into per-compartment rule tables.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::trace::{AbstractStack, CompartmentId, Event, ProcedureId, TraceSet, WellFormednessError};
use crate::tree::{build_level1, LevelProgram, Tree};

/// A node identifier; becomes the value of a compartment's `loc` slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Level-3 node payload: the node id and the stack expected on reaching it.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Located {
    pub id: NodeId,
    pub stack: AbstractStack,
}

/// Payloads that carry a node id.
pub trait HasNodeId {
    fn node_id(&self) -> NodeId;
}

impl HasNodeId for NodeId {
    fn node_id(&self) -> NodeId {
        *self
    }
}

impl HasNodeId for Located {
    fn node_id(&self) -> NodeId {
        self.id
    }
}

/// pre-order depth-first numbering, root 0.
pub fn number_nodes<A>(t: &Tree<A>) -> Tree<NodeId> {
    let mut next = 0;
    // `Tree::map` visits nodes in pre-order.
    t.map(&mut |_| {
        let id = NodeId(next);
        next += 1;
        id
    })
}

pub fn unique_ids<A: HasNodeId>(t: &Tree<A>) -> bool {
    let mut seen = HashSet::new();
    t.preorder().into_iter().all(|a| seen.insert(a.node_id()))
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("return {event} into node {node} of compartment {compartment} does not match the stack {stack}")]
pub struct BracketingError {
    pub compartment: CompartmentId,
    pub node: NodeId,
    pub event: Event,
    pub stack: AbstractStack,
}

/// attach to every node the stack snapshot obtained by pushing calls
/// and popping returns along its root path.
pub fn annotate_stacks(t: &Tree<NodeId>, c: CompartmentId) -> Result<Tree<Located>, BracketingError> {
    fn go(
        t: &Tree<NodeId>,
        stack: AbstractStack,
        c: CompartmentId,
    ) -> Result<Tree<Located>, BracketingError> {
        let mut children = Vec::with_capacity(t.children.len());
        for (e, sub) in &t.children {
            let mut next = stack.clone();
            if !next.apply(e) {
                return Err(BracketingError {
                    compartment: c,
                    node: sub.payload,
                    event: *e,
                    stack,
                });
            }
            children.push((*e, go(sub, next, c)?));
        }
        Ok(Tree {
            payload: Located {
                id: t.payload,
                stack,
            },
            children,
        })
    }
    go(t, AbstractStack::new(), c)
}

/// A transition `from --event--> to` of one compartment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FlatRule {
    pub from: NodeId,
    pub event: Event,
    pub to: NodeId,
}

/// one rule per tree edge, in pre-order edge order.
pub fn flatten<A: HasNodeId>(t: &Tree<A>) -> Vec<FlatRule> {
    let mut out = Vec::new();
    fn go<A: HasNodeId>(t: &Tree<A>, out: &mut Vec<FlatRule>) {
        for (e, sub) in &t.children {
            out.push(FlatRule {
                from: t.payload.node_id(),
                event: *e,
                to: sub.payload.node_id(),
            });
            go(sub, out);
        }
    }
    go(t, &mut out);
    out
}

/// Per-compartment rule lists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlatRuleTable {
    pub rules: BTreeMap<CompartmentId, Vec<FlatRule>>,
}

impl FlatRuleTable {
    pub fn rules_of(&self, c: CompartmentId) -> &[FlatRule] {
        self.rules.get(&c).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Rules where `c` gives up control.
    pub fn outgoing(&self, c: CompartmentId) -> impl Iterator<Item = &FlatRule> {
        self.rules_of(c).iter().filter(move |r| r.event.src() == c)
    }

    pub fn incoming_calls(&self, c: CompartmentId) -> impl Iterator<Item = &FlatRule> {
        self.rules_of(c)
            .iter()
            .filter(move |r| r.event.dst() == c && r.event.is_call())
    }

    pub fn incoming_returns(&self, c: CompartmentId) -> impl Iterator<Item = &FlatRule> {
        self.rules_of(c)
            .iter()
            .filter(move |r| r.event.dst() == c && !r.event.is_call())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RuleKey {
    /// (i) location, procedure and argument of an incoming call.
    IncomingCall(NodeId, ProcedureId, i64),
    /// (ii) location and value of an incoming return.
    IncomingReturn(NodeId, i64),
    /// (iii) location alone for the compartment's own next event.
    Outgoing(NodeId),
}

impl fmt::Display for RuleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleKey::IncomingCall(n, p, z) => write!(f, "incoming call (loc {n}, proc {p}, arg {z})"),
            RuleKey::IncomingReturn(n, v) => write!(f, "incoming return (loc {n}, value {v})"),
            RuleKey::Outgoing(n) => write!(f, "outgoing (loc {n})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("compartment {compartment}: two rules share the key {key}")]
pub struct UniquenessError {
    pub compartment: CompartmentId,
    pub key: RuleKey,
}

fn rule_key(c: CompartmentId, r: &FlatRule) -> RuleKey {
    match r.event {
        _ if r.event.src() == c => RuleKey::Outgoing(r.from),
        Event::Call { proc, arg, .. } => RuleKey::IncomingCall(r.from, proc, arg),
        Event::Return { value, .. } => RuleKey::IncomingReturn(r.from, value),
    }
}

/// Each key of each partition maps to at most one rule.
pub fn check_flat_uniqueness(tbl: &FlatRuleTable) -> Result<(), UniquenessError> {
    for (&c, rules) in &tbl.rules {
        let mut seen: HashMap<RuleKey, &FlatRule> = HashMap::new();
        for r in rules {
            let key = rule_key(c, r);
            match seen.get(&key) {
                Some(prev) if *prev != r => {
                    return Err(UniquenessError { compartment: c, key });
                }
                _ => {
                    seen.insert(key, r);
                }
            }
        }
    }
    Ok(())
}

/// Level 4: shared context tables plus one table per trace index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatProgram {
    pub context: FlatRuleTable,
    pub programs: Vec<FlatRuleTable>,
}

impl FlatProgram {
    /// The rules replayed for trace `i`.
    pub fn table_for(&self, i: usize) -> FlatRuleTable {
        let mut rules = self.context.rules.clone();
        if let Some(p) = self.programs.get(i) {
            rules.extend(p.rules.iter().map(|(c, r)| (*c, r.clone())));
        }
        FlatRuleTable { rules }
    }

    pub fn tables(&self) -> impl Iterator<Item = &FlatRuleTable> {
        std::iter::once(&self.context).chain(self.programs.iter())
    }
}

pub fn flatten_program<A: HasNodeId>(p: &LevelProgram<A>) -> FlatProgram {
    let table = |m: &BTreeMap<CompartmentId, Tree<A>>| FlatRuleTable {
        rules: m.iter().map(|(c, t)| (*c, flatten(t))).collect(),
    };
    FlatProgram {
        context: table(&p.context_trees),
        programs: p.program_trees.iter().map(table).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    WellFormedness(#[from] WellFormednessError),
    #[error(transparent)]
    Bracketing(#[from] BracketingError),
    #[error(transparent)]
    Uniqueness(#[from] UniquenessError),
}

/// All four intermediate levels of one trace set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pipeline {
    pub level1: LevelProgram<()>,
    pub level2: LevelProgram<NodeId>,
    pub level3: LevelProgram<Located>,
    pub level4: FlatProgram,
}

impl Pipeline {
    /// Runs all passes in order. Stack annotation and flat uniqueness
    /// cannot fail on a well-formed set; their errors signal a pass bug.
    pub fn build(s: &TraceSet) -> Result<Pipeline, PipelineError> {
        let level1 = build_level1(s)?;
        let level2 = level1
            .try_map(|_, t| Ok::<_, PipelineError>(number_nodes(t)))?;
        let level3 = level2.try_map(|c, t| annotate_stacks(t, c))?;
        let level4 = flatten_program(&level3);
        for tbl in level4.tables() {
            check_flat_uniqueness(tbl)?;
        }
        Ok(Pipeline {
            level1,
            level2,
            level3,
            level4,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{three_prefix_set, C_C, C_P, P};
    use crate::trace::StackFrame;

    fn three_prefix() -> Pipeline {
        Pipeline::build(&three_prefix_set()).unwrap()
    }

    fn call(a: CompartmentId, b: CompartmentId, z: i64) -> Event {
        Event::call(a, b, P, z)
    }

    #[test]
    fn numbering_matches_example() {
        let p = three_prefix();
        let t = &p.level2.context_trees[&C_C];
        assert_eq!(t.payload, NodeId(0));
        let n1 = &t.children[0].1;
        assert_eq!(n1.payload, NodeId(1));
        let ids: Vec<_> = n1.children.iter().map(|(_, c)| c.payload.0).collect();
        assert_eq!(ids, vec![2, 5, 6]);
        let n2 = &n1.children[0].1;
        assert_eq!(n2.children[0].1.payload, NodeId(3));
        assert_eq!(n2.children[0].1.children[0].1.payload, NodeId(4));
        assert!(unique_ids(t));
    }

    #[test]
    fn numbering_of_leaf_and_path() {
        assert_eq!(number_nodes(&Tree::leaf(())), Tree::leaf(NodeId(0)));
        let p = three_prefix();
        let path: Vec<_> = p.level2.program_trees[0][&C_P]
            .preorder()
            .into_iter()
            .map(|n| n.0)
            .collect();
        assert_eq!(path, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn duplicate_ids_detected() {
        let t = Tree {
            payload: NodeId(0),
            children: vec![
                (call(C_C, C_P, 1), Tree::leaf(NodeId(1))),
                (call(C_C, C_P, 2), Tree::leaf(NodeId(1))),
            ],
        };
        assert!(!unique_ids(&t));
    }

    #[test]
    fn stack_snapshots_of_example() {
        let p = three_prefix();
        let t = &p.level3.context_trees[&C_C];
        let f = |a, b| StackFrame {
            caller: a,
            proc: P,
            callee: b,
        };
        let snapshots: BTreeMap<usize, AbstractStack> = t
            .preorder()
            .into_iter()
            .map(|l| (l.id.0, l.stack.clone()))
            .collect();
        let empty = AbstractStack::new();
        let one = AbstractStack::from_top_first([f(C_C, C_P)]);
        let two = AbstractStack::from_top_first([f(C_P, C_C), f(C_C, C_P)]);
        assert_eq!(snapshots[&0], empty);
        assert_eq!(snapshots[&1], one);
        assert_eq!(snapshots[&2], two);
        assert_eq!(snapshots[&3], one);
        assert_eq!(snapshots[&4], empty);
        assert_eq!(snapshots[&5], empty);
        assert_eq!(snapshots[&6], empty);
    }

    #[test]
    fn annotate_leaf_and_bad_return() {
        let leaf = annotate_stacks(&Tree::leaf(NodeId(0)), C_C).unwrap();
        assert_eq!(leaf.payload.stack, AbstractStack::new());
        let bad = Tree {
            payload: NodeId(0),
            children: vec![(Event::ret(C_P, C_C, 1), Tree::leaf(NodeId(1)))],
        };
        let err = annotate_stacks(&bad, C_C).unwrap_err();
        assert_eq!(err.node, NodeId(1));
    }

    #[test]
    fn flatten_matches_example() {
        let p = three_prefix();
        let rules = p.level4.context.rules_of(C_C);
        let r = |from, event, to| FlatRule {
            from: NodeId(from),
            event,
            to: NodeId(to),
        };
        assert_eq!(
            rules,
            &[
                r(0, call(C_C, C_P, 40), 1),
                r(1, call(C_P, C_C, 41), 2),
                r(2, Event::ret(C_C, C_P, 42), 3),
                r(3, Event::ret(C_P, C_C, 43), 4),
                r(1, Event::ret(C_P, C_C, 43), 5),
                r(1, Event::ret(C_P, C_C, 44), 6),
            ]
        );
        assert!(flatten(&Tree::leaf(NodeId(0))).is_empty());
        let prog = p.level4.programs[0].rules_of(C_P);
        assert_eq!(prog.iter().map(|r| r.from.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn partitions_of_example_table() {
        let p = three_prefix();
        let t = &p.level4.context;
        assert_eq!(t.outgoing(C_C).count(), 2);
        assert_eq!(t.incoming_calls(C_C).count(), 1);
        assert_eq!(t.incoming_returns(C_C).count(), 3);
        assert_eq!(check_flat_uniqueness(t), Ok(()));
    }

    #[test]
    fn uniqueness_violations() {
        let r = |from, event, to| FlatRule {
            from: NodeId(from),
            event,
            to: NodeId(to),
        };
        let mut tbl = FlatRuleTable::default();
        tbl.rules.insert(
            C_C,
            vec![r(0, call(C_C, C_P, 1), 1), r(0, call(C_C, C_P, 2), 2)],
        );
        assert_eq!(
            check_flat_uniqueness(&tbl).unwrap_err().key,
            RuleKey::Outgoing(NodeId(0))
        );

        let a = CompartmentId(0);
        let c = CompartmentId(2);
        let mut tbl = FlatRuleTable::default();
        tbl.rules
            .insert(c, vec![r(1, call(a, c, 7), 2), r(1, call(a, c, 7), 3)]);
        assert_eq!(
            check_flat_uniqueness(&tbl).unwrap_err().key,
            RuleKey::IncomingCall(NodeId(1), P, 7)
        );
    }
}
