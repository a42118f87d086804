//! Small-step replay of a trace against the intermediate representations.
//!
//! Each level adds side conditions to the previous one. Level 1 only follows
//! tree branches. Level 2 also requires the ghost location of both endpoint
//! compartments to agree with the node ids. Level 3 also maintains the
//! abstract cross-compartment stack and only admits returns that match its
//! top frame. Level 4 replaces the trees by the flat rule tables, which are
//! never consumed.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::passes::{FlatRuleTable, Located, NodeId, Pipeline};
use crate::trace::{AbstractStack, CompartmentId, Event};
use crate::tree::Tree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Trees = 1,
    Numbered = 2,
    StackAware = 3,
    Flat = 4,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Trees, Level::Numbered, Level::StackAware, Level::Flat];

    pub fn from_number(n: u8) -> Option<Level> {
        Level::ALL.into_iter().find(|l| *l as u8 == n)
    }

    pub fn number(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.number())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GhostState {
    pub loc: BTreeMap<CompartmentId, NodeId>,
    pub stack: AbstractStack,
}

impl GhostState {
    fn at_roots(compartments: impl IntoIterator<Item = CompartmentId>) -> Self {
        GhostState {
            loc: compartments.into_iter().map(|c| (c, NodeId(0))).collect(),
            stack: AbstractStack::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("no remaining event")]
    Exhausted,
    #[error("compartment {compartment} has no branch for {event}")]
    NoBranch {
        compartment: CompartmentId,
        event: Event,
    },
    #[error("{event} does not match the abstract stack {stack}")]
    StackMismatch { event: Event, stack: AbstractStack },
    #[error("ghost location {ghost} of compartment {compartment} disagrees with node {node}")]
    LocMismatch {
        compartment: CompartmentId,
        ghost: NodeId,
        node: NodeId,
    },
}

/// What a tree level knows about its nodes.
pub trait NodeAnnotation {
    const LEVEL: Level;
    fn loc(&self) -> Option<NodeId>;
}

impl NodeAnnotation for () {
    const LEVEL: Level = Level::Trees;
    fn loc(&self) -> Option<NodeId> {
        None
    }
}

impl NodeAnnotation for NodeId {
    const LEVEL: Level = Level::Numbered;
    fn loc(&self) -> Option<NodeId> {
        Some(*self)
    }
}

impl NodeAnnotation for Located {
    const LEVEL: Level = Level::StackAware;
    fn loc(&self) -> Option<NodeId> {
        Some(self.id)
    }
}

/// A replay state that can take one step.
pub trait ReplayState: Sized {
    fn remaining(&self) -> &[Event];
    fn ghost(&self) -> &GhostState;
    fn step(&self) -> Result<Self, StepError>;
}

/// State at levels 1 to 3: the unconsumed trace and, per compartment, the
/// subtree still to be executed.
#[derive(Clone, Debug)]
pub struct TreeState<'a, A> {
    pub remaining: &'a [Event],
    pub trees: BTreeMap<CompartmentId, &'a Tree<A>>,
    pub ghost: GhostState,
}

impl<'a, A: NodeAnnotation> TreeState<'a, A> {
    pub fn initial(trees: BTreeMap<CompartmentId, &'a Tree<A>>, m: &'a [Event]) -> Self {
        let ghost = if A::LEVEL >= Level::Numbered {
            GhostState::at_roots(trees.keys().copied())
        } else {
            GhostState::default()
        };
        TreeState {
            remaining: m,
            trees,
            ghost,
        }
    }

    fn advance(&self, c: CompartmentId, e: &Event) -> Result<(&'a Tree<A>, Option<NodeId>), StepError> {
        let no_branch = || StepError::NoBranch {
            compartment: c,
            event: *e,
        };
        let t: &'a Tree<A> = self.trees.get(&c).copied().ok_or_else(no_branch)?;
        let next = t.child(e).ok_or_else(no_branch)?;
        if A::LEVEL >= Level::Numbered {
            let node = t.payload.loc().expect("numbered levels carry ids");
            let ghost = self.ghost.loc.get(&c).copied().unwrap_or(NodeId(0));
            if ghost != node {
                return Err(StepError::LocMismatch {
                    compartment: c,
                    ghost,
                    node,
                });
            }
        }
        Ok((next, next.payload.loc()))
    }
}

impl<A: NodeAnnotation> ReplayState for TreeState<'_, A> {
    fn remaining(&self) -> &[Event] {
        self.remaining
    }

    fn ghost(&self) -> &GhostState {
        &self.ghost
    }

    fn step(&self) -> Result<Self, StepError> {
        let (e, rest) = self.remaining.split_first().ok_or(StepError::Exhausted)?;
        let (ci, cj) = (e.src(), e.dst());
        let (ti, li) = self.advance(ci, e)?;
        let (tj, lj) = self.advance(cj, e)?;
        let mut ghost = self.ghost.clone();
        if A::LEVEL >= Level::StackAware && !ghost.stack.apply(e) {
            return Err(StepError::StackMismatch {
                event: *e,
                stack: ghost.stack,
            });
        }
        if let (Some(li), Some(lj)) = (li, lj) {
            ghost.loc.insert(ci, li);
            ghost.loc.insert(cj, lj);
        }
        let mut trees = self.trees.clone();
        trees.insert(ci, ti);
        trees.insert(cj, tj);
        Ok(TreeState {
            remaining: rest,
            trees,
            ghost,
        })
    }
}

/// State at level 4: rule tables stay whole; only the ghost state moves.
#[derive(Clone, Debug)]
pub struct FlatState<'a> {
    pub remaining: &'a [Event],
    pub table: &'a FlatRuleTable,
    pub ghost: GhostState,
}

impl<'a> FlatState<'a> {
    pub fn initial(table: &'a FlatRuleTable, m: &'a [Event]) -> Self {
        FlatState {
            remaining: m,
            table,
            ghost: GhostState::at_roots(table.rules.keys().copied()),
        }
    }

    fn target(&self, c: CompartmentId, e: &Event) -> Result<NodeId, StepError> {
        let at = self.ghost.loc.get(&c).copied().ok_or(StepError::NoBranch {
            compartment: c,
            event: *e,
        })?;
        self.table
            .rules_of(c)
            .iter()
            .find(|r| r.from == at && r.event == *e)
            .map(|r| r.to)
            .ok_or(StepError::NoBranch {
                compartment: c,
                event: *e,
            })
    }
}

impl ReplayState for FlatState<'_> {
    fn remaining(&self) -> &[Event] {
        self.remaining
    }

    fn ghost(&self) -> &GhostState {
        &self.ghost
    }

    fn step(&self) -> Result<Self, StepError> {
        let (e, rest) = self.remaining.split_first().ok_or(StepError::Exhausted)?;
        let (ci, cj) = (e.src(), e.dst());
        let ni = self.target(ci, e)?;
        let nj = self.target(cj, e)?;
        let mut ghost = self.ghost.clone();
        if !ghost.stack.apply(e) {
            return Err(StepError::StackMismatch {
                event: *e,
                stack: ghost.stack,
            });
        }
        ghost.loc.insert(ci, ni);
        ghost.loc.insert(cj, nj);
        Ok(FlatState {
            remaining: rest,
            table: self.table,
            ghost,
        })
    }
}

/// Failure of a replay, with the ghost state reached before the failing step.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{level} replay of trace {trace} failed at position {position}: {error}")]
pub struct ReplayReport {
    pub level: Level,
    pub trace: usize,
    pub position: usize,
    pub error: StepError,
    pub ghost: GhostState,
}

/// Steps `s` until the trace is consumed, calling `visit` on every state
/// including the initial and final ones. On failure returns the position of
/// the failing event, the error and the last good ghost state.
pub fn drive<S: ReplayState>(
    mut s: S,
    mut visit: impl FnMut(&S),
) -> Result<S, (usize, StepError, GhostState)> {
    let mut position = 0;
    visit(&s);
    while !s.remaining().is_empty() {
        s = s
            .step()
            .map_err(|e| (position, e, s.ghost().clone()))?;
        position += 1;
        visit(&s);
    }
    Ok(s)
}

/// Replays `m` (the `i`-th trace) at `level` against the matching
/// representation in `p`.
pub fn replay(level: Level, p: &Pipeline, i: usize, m: &[Event]) -> Result<(), ReplayReport> {
    let report = |(position, error, ghost)| ReplayReport {
        level,
        trace: i,
        position,
        error,
        ghost,
    };
    match level {
        Level::Trees => drive(TreeState::initial(p.level1.trees_for(i), m), |_| {})
            .map(drop)
            .map_err(report),
        Level::Numbered => drive(TreeState::initial(p.level2.trees_for(i), m), |_| {})
            .map(drop)
            .map_err(report),
        Level::StackAware => drive(TreeState::initial(p.level3.trees_for(i), m), |_| {})
            .map(drop)
            .map_err(report),
        Level::Flat => {
            let table = p.level4.table_for(i);
            drive(FlatState::initial(&table, m), |_| {})
                .map(drop)
                .map_err(report)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{three_prefix_set, C_C, C_P, P};
    use crate::trace::{StackFrame, Trace};

    #[test]
    fn first_step_of_level1() {
        let s = three_prefix_set();
        let p = Pipeline::build(&s).unwrap();
        let st = TreeState::initial(p.level1.trees_for(0), &s.traces[0]);
        let next = st.step().unwrap();
        assert_eq!(next.remaining.len(), 3);
        let n1 = &p.level1.context_trees[&C_C].children[0].1;
        assert!(std::ptr::eq(next.trees[&C_C], n1));
        assert_eq!(next.trees[&C_P].edge_count(), 3);
    }

    #[test]
    fn all_levels_replay_example() {
        let s = three_prefix_set();
        let p = Pipeline::build(&s).unwrap();
        for (i, m) in s.traces.iter().enumerate() {
            for level in Level::ALL {
                assert_eq!(replay(level, &p, i, m), Ok(()), "{level} trace {i}");
            }
        }
    }

    #[test]
    fn empty_trace_replays_everywhere() {
        let s = three_prefix_set();
        let p = Pipeline::build(&s).unwrap();
        for level in Level::ALL {
            assert_eq!(replay(level, &p, 0, &[]), Ok(()));
        }
    }

    #[test]
    fn level3_return_pops_matching_frame() {
        let s = three_prefix_set();
        let p = Pipeline::build(&s).unwrap();
        // State after `call C_C -> C_P.p (40)` in the second trace.
        let m = &s.traces[1];
        let st = TreeState::initial(p.level3.trees_for(1), m).step().unwrap();
        assert_eq!(
            st.ghost.stack,
            AbstractStack::from_top_first([StackFrame {
                caller: C_C,
                proc: P,
                callee: C_P
            }])
        );
        let done = st.step().unwrap();
        assert!(done.ghost.stack.is_empty());
    }

    #[test]
    fn level3_return_on_empty_stack() {
        let s = three_prefix_set();
        let p = Pipeline::build(&s).unwrap();
        // Start directly at node 1 of both trees but with an empty ghost stack.
        let m = [Event::ret(C_P, C_C, 43)];
        let mut trees = p.level3.trees_for(1);
        let cc = &p.level3.context_trees[&C_C].children[0].1;
        let cp = &p.level3.program_trees[1][&C_P].children[0].1;
        trees.insert(C_C, cc);
        trees.insert(C_P, cp);
        let mut st = TreeState::initial(trees, &m);
        st.ghost.loc.insert(C_C, NodeId(1));
        st.ghost.loc.insert(C_P, NodeId(1));
        assert!(matches!(st.step(), Err(StepError::StackMismatch { .. })));
    }

    #[test]
    fn level4_rejects_unknown_argument() {
        let s = three_prefix_set();
        let p = Pipeline::build(&s).unwrap();
        let m = Trace(vec![Event::call(C_C, C_P, P, 99)]);
        let err = replay(Level::Flat, &p, 0, &m).unwrap_err();
        assert_eq!(err.position, 0);
        assert!(matches!(err.error, StepError::NoBranch { .. }));
    }

    #[test]
    fn level2_detects_stale_ghost_location() {
        let s = three_prefix_set();
        let p = Pipeline::build(&s).unwrap();
        let mut st = TreeState::initial(p.level2.trees_for(0), &s.traces[0]);
        st.ghost.loc.insert(C_C, NodeId(3));
        assert_eq!(
            st.step().unwrap_err(),
            StepError::LocMismatch {
                compartment: C_C,
                ghost: NodeId(3),
                node: NodeId(0)
            }
        );
    }
}
