//! Event-labelled call-return trees and their construction from traces.

use std::collections::BTreeMap;

use crate::trace::{
    check_well_formed, filter_for_compartment, CompartmentId, Event, TraceSet,
    WellFormednessError,
};

/// A node carrying `payload`, with children in insertion order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Tree<A> {
    pub payload: A,
    pub children: Branches<A>,
}

/// Ordered `(label, subtree)` pairs.
pub type Branches<A> = Vec<(Event, Tree<A>)>;

impl<A> Tree<A> {
    pub fn leaf(payload: A) -> Self {
        Tree {
            payload,
            children: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// The first child reached through a branch labelled `e`.
    pub fn child(&self, e: &Event) -> Option<&Tree<A>> {
        self.children.iter().find(|(l, _)| l == e).map(|(_, t)| t)
    }

    pub fn map<B>(&self, f: &mut impl FnMut(&A) -> B) -> Tree<B> {
        Tree {
            payload: f(&self.payload),
            children: self
                .children
                .iter()
                .map(|(e, t)| (*e, t.map(f)))
                .collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(|(_, t)| t.node_count()).sum::<usize>()
    }

    pub fn edge_count(&self) -> usize {
        self.node_count() - 1
    }

    /// Every node has at most one child.
    pub fn is_linear(&self) -> bool {
        let mut t = self;
        loop {
            match t.children.as_slice() {
                [] => return true,
                [(_, next)] => t = next,
                _ => return false,
            }
        }
    }

    /// Length of the longest prefix of `m` that labels a root path.
    pub fn matched_prefix_len(&self, m: &[Event]) -> usize {
        let mut t = self;
        for (k, e) in m.iter().enumerate() {
            match t.child(e) {
                Some(next) => t = next,
                None => return k,
            }
        }
        m.len()
    }

    /// The subtree at the end of the root path labelled `m`, if there is one.
    pub fn follow(&self, m: &[Event]) -> Option<&Tree<A>> {
        m.iter().try_fold(self, |t, e| t.child(e))
    }

    /// Payloads in pre-order.
    pub fn preorder(&self) -> Vec<&A> {
        let mut out = Vec::new();
        let mut todo = vec![self];
        while let Some(t) = todo.pop() {
            out.push(&t.payload);
            todo.extend(t.children.iter().rev().map(|(_, c)| c));
        }
        out
    }

    /// Label sequences of all maximal root paths, left to right.
    pub fn maximal_paths(&self) -> Vec<Vec<Event>> {
        if self.is_leaf() {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for (e, t) in &self.children {
            for mut rest in t.maximal_paths() {
                rest.insert(0, *e);
                out.push(rest);
            }
        }
        out
    }
}

/// The linear tree whose only maximal path is labelled by `m`.
pub fn branch_of_trace(m: &[Event]) -> Tree<()> {
    m.iter()
        .rev()
        .fold(Tree::leaf(()), |t, e| Tree {
            payload: (),
            children: vec![(*e, t)],
        })
}

/// Merges `m` into `t`, following existing branches and grafting the
/// unmatched remainder as a new last sibling.
pub fn add_trace_to_tree(m: &[Event], mut t: Tree<()>) -> Tree<()> {
    add_trace_in_place(m, &mut t);
    t
}

pub(crate) fn add_trace_in_place(m: &[Event], t: &mut Tree<()>) {
    let mut node = t;
    for (k, e) in m.iter().enumerate() {
        match node.children.iter().position(|(l, _)| l == e) {
            Some(i) => node = &mut node.children[i].1,
            None => {
                node.children.push((*e, branch_of_trace(&m[k + 1..])));
                return;
            }
        }
    }
}

/// Folds [`add_trace_to_tree`] over `ms`, starting from a single leaf.
pub fn tree_of_trace_list<'a, I>(ms: I) -> Tree<()>
where
    I: IntoIterator<Item = &'a [Event]>,
{
    ms.into_iter()
        .fold(Tree::leaf(()), |t, m| add_trace_to_tree(m, t))
}

/// Wherever a branch is emitted by `c`, it is the last sibling: a compartment
/// in control has a single next event.
pub fn unique_current_tree<A>(c: CompartmentId, t: &Tree<A>) -> bool {
    let last = t.children.len().saturating_sub(1);
    t.children.iter().enumerate().all(|(k, (e, sub))| {
        unique_current_tree(c, sub) && (e.src() != c || k == last)
    })
}

/// No two siblings carry the same label, recursively.
pub fn deterministic_tree<A>(t: &Tree<A>) -> bool {
    t.children.iter().enumerate().all(|(k, (e, sub))| {
        deterministic_tree(sub) && t.children[k + 1..].iter().all(|(l, _)| l != e)
    })
}

/// Sibling calls into `c` with the same procedure and argument come from the
/// same caller. Generated code cannot observe who called it, so two such
/// siblings could not be told apart.
pub fn distinguishable_callers<A>(c: CompartmentId, t: &Tree<A>) -> bool {
    let incoming: Vec<_> = t
        .children
        .iter()
        .filter_map(|(e, _)| match *e {
            Event::Call {
                caller,
                callee,
                proc,
                arg,
            } if callee == c => Some((caller, proc, arg)),
            _ => None,
        })
        .collect();
    let clash = incoming.iter().enumerate().any(|(k, a)| {
        incoming[k + 1..]
            .iter()
            .any(|b| a.1 == b.1 && a.2 == b.2 && a.0 != b.0)
    });
    !clash && t.children.iter().all(|(_, sub)| distinguishable_callers(c, sub))
}

/// A program at one of the tree levels: one shared tree per context
/// compartment, and per trace index one linear tree per program compartment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelProgram<A> {
    pub context_trees: BTreeMap<CompartmentId, Tree<A>>,
    pub program_trees: Vec<BTreeMap<CompartmentId, Tree<A>>>,
}

impl<A> LevelProgram<A> {
    /// The trees replayed for trace `i`: shared context trees plus the program
    /// trees of index `i`.
    pub fn trees_for(&self, i: usize) -> BTreeMap<CompartmentId, &Tree<A>> {
        let mut out: BTreeMap<_, _> = self.context_trees.iter().map(|(c, t)| (*c, t)).collect();
        if let Some(progs) = self.program_trees.get(i) {
            out.extend(progs.iter().map(|(c, t)| (*c, t)));
        }
        out
    }

    /// Every tree with its trace index (`None` for context trees).
    pub fn all_trees(&self) -> impl Iterator<Item = (Option<usize>, CompartmentId, &Tree<A>)> {
        self.context_trees
            .iter()
            .map(|(c, t)| (None, *c, t))
            .chain(self.program_trees.iter().enumerate().flat_map(|(i, m)| {
                m.iter().map(move |(c, t)| (Some(i), *c, t))
            }))
    }

    pub fn try_map<B, E>(
        &self,
        mut f: impl FnMut(CompartmentId, &Tree<A>) -> Result<Tree<B>, E>,
    ) -> Result<LevelProgram<B>, E> {
        let mut map_all = |m: &BTreeMap<CompartmentId, Tree<A>>| {
            m.iter()
                .map(|(c, t)| f(*c, t).map(|t| (*c, t)))
                .collect::<Result<BTreeMap<_, _>, E>>()
        };
        Ok(LevelProgram {
            context_trees: map_all(&self.context_trees)?,
            program_trees: self
                .program_trees
                .iter()
                .map(&mut map_all)
                .collect::<Result<_, _>>()?,
        })
    }
}

/// merge each context compartment's filtered traces into one tree;
/// embed each program compartment's filtered trace as a linear tree.
pub fn build_level1(s: &TraceSet) -> Result<LevelProgram<()>, WellFormednessError> {
    check_well_formed(s)?;
    let context_trees = s
        .context()
        .into_iter()
        .map(|c| {
            let filtered: Vec<_> = s.traces.iter().map(|m| filter_for_compartment(m, c)).collect();
            (c, tree_of_trace_list(filtered.iter().map(|f| f.events())))
        })
        .collect();
    let programs = s.programs();
    let program_trees = s
        .traces
        .iter()
        .map(|m| {
            programs
                .iter()
                .map(|&c| (c, branch_of_trace(&filter_for_compartment(m, c))))
                .collect()
        })
        .collect();
    Ok(LevelProgram {
        context_trees,
        program_trees,
    })
}
