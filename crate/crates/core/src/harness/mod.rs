//! Verification of trace sets: replay at every intermediate level, and
//! execution of the back-translated programs.

mod generate;

pub use generate::{generate_trace_set, random_program, GenParams};

use std::fmt;

use crate::codegen::{back_translate_with, lint, BackTranslation, LintError};
use crate::passes::{
    check_flat_uniqueness, unique_ids, FlatRuleTable, HasNodeId, Pipeline, PipelineError,
};
use crate::replay::{drive, replay, FlatState, GhostState, Level, ReplayReport};
use crate::source::{exec_local, run_source_with, Memory, Outcome, Slot, Stmt};
use crate::trace::{filter_for_compartment, AbstractStack, CompartmentId, Event, Trace, TraceSet};
use crate::tree::{deterministic_tree, unique_current_tree, Tree};

/// Outcome of one named invariant check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckResult {
    pub name: &'static str,
    pub failures: Vec<String>,
}

impl CheckResult {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct LevelsReport {
    pub error: Option<PipelineError>,
    /// `cells[i][l]` is the replay of trace `i` at level `l + 1`.
    pub cells: Vec<Vec<Result<(), ReplayReport>>>,
    pub invariants: Vec<CheckResult>,
}

impl LevelsReport {
    pub fn all_ok(&self) -> bool {
        self.error.is_none()
            && self.cells.iter().flatten().all(Result::is_ok)
            && self.invariants.iter().all(CheckResult::ok)
    }
}

/// Builds all levels of `s`, replays every trace at every level and checks
/// the structural invariants of the intermediate programs.
pub fn verify_all_levels(s: &TraceSet) -> LevelsReport {
    match Pipeline::build(s) {
        Err(e) => LevelsReport {
            error: Some(e),
            cells: Vec::new(),
            invariants: Vec::new(),
        },
        Ok(p) => verify_levels_with(s, &p),
    }
}

pub fn verify_levels_with(s: &TraceSet, p: &Pipeline) -> LevelsReport {
    let cells = s
        .traces
        .iter()
        .enumerate()
        .map(|(i, m)| Level::ALL.iter().map(|&l| replay(l, p, i, m)).collect())
        .collect();
    LevelsReport {
        error: None,
        cells,
        invariants: check_invariants(s, p),
    }
}

fn where_(i: Option<usize>, c: CompartmentId) -> String {
    match i {
        None => format!("context tree of {c}"),
        Some(i) => format!("tree of {c} for trace {i}"),
    }
}

pub fn check_invariants(s: &TraceSet, p: &Pipeline) -> Vec<CheckResult> {
    let mut deterministic = Vec::new();
    let mut unique_current = Vec::new();
    for (i, c, t) in p.level1.all_trees() {
        if !deterministic_tree(t) {
            deterministic.push(where_(i, c));
        }
        if !unique_current_tree(c, t) {
            unique_current.push(where_(i, c));
        }
    }
    let mut ids = Vec::new();
    for (i, c, t) in p.level2.all_trees() {
        if !unique_ids(t) || !numbered_in_preorder(t) {
            ids.push(format!("level 2 {}", where_(i, c)));
        }
    }
    for (i, c, t) in p.level3.all_trees() {
        if !unique_ids(t) || !numbered_in_preorder(t) {
            ids.push(format!("level 3 {}", where_(i, c)));
        }
    }
    let mut uniqueness = Vec::new();
    for t in p.level4.tables() {
        if let Err(e) = check_flat_uniqueness(t) {
            uniqueness.push(e.to_string());
        }
    }
    vec![
        CheckResult {
            name: "deterministic_tree",
            failures: deterministic,
        },
        CheckResult {
            name: "unique_current_tree",
            failures: unique_current,
        },
        CheckResult {
            name: "unique_ids",
            failures: ids,
        },
        CheckResult {
            name: "stack_snapshots",
            failures: check_stack_snapshots(s, p),
        },
        CheckResult {
            name: "flat_uniqueness",
            failures: uniqueness,
        },
    ]
}

fn numbered_in_preorder<A: HasNodeId>(t: &Tree<A>) -> bool {
    t.preorder()
        .iter()
        .enumerate()
        .all(|(k, a)| a.node_id().0 == k)
}

/// Replays every whole trace on the abstract stack and compares, after each
/// event involving `c`, the stack restricted to `c` with the snapshot stored
/// at the node reached in `c`'s tree.
fn check_stack_snapshots(s: &TraceSet, p: &Pipeline) -> Vec<String> {
    let mut failures = Vec::new();
    for (i, m) in s.traces.iter().enumerate() {
        let trees = p.level3.trees_for(i);
        for (&c, &root) in &trees {
            let mut node = root;
            let mut stack = AbstractStack::new();
            if !node.payload.stack.is_empty() {
                failures.push(format!("root of {} is not empty", where_(Some(i), c)));
            }
            for (k, e) in m.iter().enumerate() {
                stack.apply(e);
                if !e.involves(c) {
                    continue;
                }
                let Some(next) = node.child(e) else {
                    failures.push(format!("trace {i} position {k} leaves the tree of {c}"));
                    break;
                };
                node = next;
                if node.payload.stack != stack.restrict(c) {
                    failures.push(format!(
                        "trace {i} position {k}: node {} of {c} holds {}, expected {}",
                        node.payload.id,
                        node.payload.stack,
                        stack.restrict(c)
                    ));
                }
            }
        }
    }
    failures
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunFailure {
    /// The emission differs from the trace at `position`.
    Divergence {
        position: usize,
        expected: Option<Event>,
        emitted: Option<Event>,
    },
    NotHalted(Outcome),
    /// Memory or machine stack disagreed with the level-4 ghost state.
    LockStep { position: usize, detail: String },
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ev = |e: &Option<Event>| e.map_or("nothing".to_string(), |e| e.to_string());
        match self {
            RunFailure::Divergence {
                position,
                expected,
                emitted,
            } => write!(
                f,
                "diverged at position {position}: expected {}, emitted {}",
                ev(expected),
                ev(emitted)
            ),
            RunFailure::NotHalted(o) => write!(f, "did not halt: {o:?}"),
            RunFailure::LockStep { position, detail } => {
                write!(f, "ghost state mismatch at position {position}: {detail}")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ending {
    /// The compartment in control at the end of the trace has nothing left
    /// to do, so the program can emit exactly the trace.
    Closed,
    /// The compartment in control at the end is a context compartment that
    /// continues in another trace; only a prefix match is possible.
    Open,
}

#[derive(Clone, Debug)]
pub struct TraceRun {
    pub trace: usize,
    pub ending: Ending,
    pub emitted: Trace,
    pub outcome: Outcome,
    pub steps: usize,
    pub failure: Option<RunFailure>,
}

impl TraceRun {
    pub fn exact(&self) -> bool {
        self.failure.is_none() && self.ending == Ending::Closed
    }
}

#[derive(Clone, Debug)]
pub struct EndToEndReport {
    pub error: Option<PipelineError>,
    pub runs: Vec<TraceRun>,
    pub lint: Vec<LintError>,
    pub switch_totality: CheckResult,
}

impl EndToEndReport {
    /// No failures; open endings count as passing with a prefix match.
    pub fn all_ok(&self) -> bool {
        self.error.is_none()
            && self.runs.iter().all(|r| r.failure.is_none())
            && self.lint.is_empty()
            && self.switch_totality.ok()
    }

    /// Every trace emitted exactly and halted.
    pub fn all_exact(&self) -> bool {
        self.all_ok() && self.runs.iter().all(TraceRun::exact)
    }
}

/// Default step bound for running the programs of `s`.
pub fn step_bound(s: &TraceSet) -> usize {
    40 * (1 + s.total_events())
}

/// Classifies the end of trace `i`.
pub fn ending(s: &TraceSet, p: &Pipeline, i: usize) -> Ending {
    let m = &s.traces[i];
    let cur = m.last().map_or(s.main, |e| e.dst());
    if !s.is_context(cur) {
        return Ending::Closed;
    }
    let filtered = filter_for_compartment(m, cur);
    let node = p.level1.context_trees[&cur]
        .follow(&filtered)
        .expect("the trace is in the merged tree");
    if node.children.iter().any(|(e, _)| e.src() == cur) {
        Ending::Open
    } else {
        Ending::Closed
    }
}

pub fn verify_end_to_end(s: &TraceSet) -> EndToEndReport {
    match Pipeline::build(s) {
        Err(e) => EndToEndReport {
            error: Some(e),
            runs: Vec::new(),
            lint: Vec::new(),
            switch_totality: CheckResult {
                name: "switch_totality",
                failures: Vec::new(),
            },
        },
        Ok(p) => verify_end_to_end_with(s, &p),
    }
}

pub fn verify_end_to_end_with(s: &TraceSet, p: &Pipeline) -> EndToEndReport {
    let bt = back_translate_with(s, p);
    let bound = step_bound(s);
    let runs = s
        .traces
        .iter()
        .enumerate()
        .map(|(i, m)| run_trace(s, p, &bt, i, m, bound))
        .collect();
    let lint = bt
        .context
        .values()
        .chain(bt.programs.iter().flat_map(|f| f.values()))
        .filter_map(|code| lint(code).err())
        .collect();
    EndToEndReport {
        error: None,
        runs,
        lint,
        switch_totality: check_switch_totality(s, p, &bt),
    }
}

fn ghost_states(table: &FlatRuleTable, m: &[Event]) -> Result<Vec<GhostState>, String> {
    let mut ghosts = Vec::new();
    drive(FlatState::initial(table, m), |st| ghosts.push(st.ghost.clone()))
        .map_err(|(k, e, _)| format!("level-4 replay failed at position {k}: {e}"))?;
    Ok(ghosts)
}

fn run_trace(
    s: &TraceSet,
    p: &Pipeline,
    bt: &BackTranslation,
    i: usize,
    m: &Trace,
    bound: usize,
) -> TraceRun {
    let ending = ending(s, p, i);
    let table = p.level4.table_for(i);
    let prog = bt.link(i);
    let ghosts = ghost_states(&table, m);
    let mut lockstep: Option<RunFailure> = None;
    let mut k = 0;
    let run = run_source_with(&prog, bound, |st, e| {
        if lockstep.is_none() && k < m.len() && *e == m[k] {
            if let Ok(g) = &ghosts {
                let (before, after) = (&g[k], &g[k + 1]);
                for (&c, &want) in &after.loc {
                    let want = if c == e.dst() { before.loc[&c] } else { want };
                    let have = st.slot(c, Slot::Loc);
                    if have != want.0 as i64 {
                        lockstep = Some(RunFailure::LockStep {
                            position: k,
                            detail: format!("loc of {c} is {have}, ghost says {want}"),
                        });
                        break;
                    }
                }
                if lockstep.is_none() && st.external_frames() != after.stack {
                    lockstep = Some(RunFailure::LockStep {
                        position: k,
                        detail: format!(
                            "machine frames {} differ from ghost stack {}",
                            st.external_frames(),
                            after.stack
                        ),
                    });
                }
            }
        }
        k += 1;
    });
    let emitted = &run.emitted;
    let common = m.iter().zip(emitted.iter()).take_while(|(a, b)| a == b).count();
    let failure = match &ghosts {
        Err(detail) => Some(RunFailure::LockStep {
            position: 0,
            detail: detail.clone(),
        }),
        Ok(_) if common < m.len() || (ending == Ending::Closed && emitted.len() > m.len()) => {
            Some(RunFailure::Divergence {
                position: common,
                expected: m.get(common).copied(),
                emitted: emitted.get(common).copied(),
            })
        }
        Ok(_) if lockstep.is_some() => lockstep,
        Ok(_) if ending == Ending::Open => None,
        Ok(_) if run.outcome != Outcome::Halted => Some(RunFailure::NotHalted(run.outcome)),
        Ok(g) => final_loc_mismatch(&run.mem, g.last().expect("initial state"), m.len()),
    };
    TraceRun {
        trace: i,
        ending,
        emitted: run.emitted,
        outcome: run.outcome,
        steps: run.steps,
        failure,
    }
}

fn final_loc_mismatch(mem: &Memory, ghost: &GhostState, len: usize) -> Option<RunFailure> {
    ghost.loc.iter().find_map(|(&c, &want)| {
        let have = mem[c.0][Slot::Loc.offset()];
        (have != want.0 as i64).then(|| RunFailure::LockStep {
            position: len,
            detail: format!("final loc of {c} is {have}, ghost says {want}"),
        })
    })
}

/// Executes every incoming switch of the generated code on the location and
/// payload of each incoming rule, and checks that it moves to the rule's
/// target.
pub fn check_switch_totality(s: &TraceSet, p: &Pipeline, bt: &BackTranslation) -> CheckResult {
    let mut failures = Vec::new();
    let fragments = std::iter::once((&p.level4.context, &bt.context))
        .chain(p.level4.programs.iter().zip(bt.programs.iter()));
    for (table, fragment) in fragments {
        for (&c, code) in fragment {
            let switches = |k: usize| -> Option<(&Stmt, &Stmt)> {
                let Stmt::Seq(head, _) = &code.procedures.get(k)?.body else {
                    return None;
                };
                let Stmt::If(_, calls, returns) = &**head else {
                    return None;
                };
                Some((calls, returns))
            };
            for r in table.rules_of(c).iter().filter(|r| r.event.dst() == c) {
                let (k, arg, res, is_call) = match r.event {
                    Event::Call { proc, arg, .. } => (proc.0, arg, 0, 1),
                    Event::Return { value, .. } => (0, 0, value, 0),
                };
                let Some((calls, returns)) = switches(k) else {
                    failures.push(format!("{}: unexpected procedure shape", s.compartments[c.0].name));
                    continue;
                };
                let sw = if is_call == 1 { calls } else { returns };
                let mut slots = [r.from.0 as i64, is_call, res];
                match exec_local(sw, &mut slots, arg) {
                    Ok(()) if slots[Slot::Loc.offset()] == r.to.0 as i64 => {}
                    Ok(()) => failures.push(format!(
                        "{}: rule {} --{}--> {} ends at loc {}",
                        s.compartments[c.0].name,
                        r.from,
                        r.event.display(s),
                        r.to,
                        slots[Slot::Loc.offset()]
                    )),
                    Err(e) => failures.push(format!("{}: {e}", s.compartments[c.0].name)),
                }
            }
        }
    }
    CheckResult {
        name: "switch_totality",
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{three_prefix_set, single_trace_set, C_C, C_P, P};
    use crate::trace::WellFormednessError;

    #[test]
    fn example_all_levels() {
        let r = verify_all_levels(&three_prefix_set());
        assert!(r.all_ok(), "{r:?}");
        assert_eq!(r.cells.len(), 3);
        assert!(r.cells.iter().all(|row| row.len() == 4));
        assert_eq!(r.invariants.len(), 5);
    }

    #[test]
    fn example_end_to_end() {
        let s = three_prefix_set();
        let r = verify_end_to_end(&s);
        assert!(r.all_exact(), "{r:?}");
        for (run, m) in r.runs.iter().zip(&s.traces) {
            assert_eq!(&run.emitted, m);
            assert_eq!(run.outcome, Outcome::Halted);
            assert!(run.steps <= step_bound(&s));
        }
    }

    #[test]
    fn single_trace_end_to_end() {
        let s = single_trace_set();
        let r = verify_end_to_end(&s);
        assert!(r.all_exact());
        assert_eq!(r.runs[0].emitted, s.traces[0]);
    }

    #[test]
    fn empty_and_missing_traces() {
        let mut s = three_prefix_set();
        s.traces = vec![Trace::default()];
        let r = verify_end_to_end(&s);
        assert!(r.all_exact());
        assert!(r.runs[0].emitted.is_empty());

        s.traces.clear();
        assert!(verify_all_levels(&s).all_ok());
        assert!(verify_end_to_end(&s).all_exact());
    }

    #[test]
    fn ill_formed_pair_runs_nothing() {
        let mut s = three_prefix_set();
        s.traces = vec![
            Trace(vec![Event::call(C_C, C_P, P, 40)]),
            Trace(vec![Event::call(C_C, C_P, P, 41)]),
        ];
        let r = verify_all_levels(&s);
        assert!(matches!(
            r.error,
            Some(PipelineError::WellFormedness(WellFormednessError::Determinacy {
                trace: 1,
                position: 0,
                ..
            }))
        ));
        assert!(r.cells.is_empty());
        assert!(!verify_end_to_end(&s).all_ok());
    }

    #[test]
    fn open_ending_is_a_prefix_match() {
        // The first trace stops while the context still has control at a
        // node where the second trace continues.
        let mut s = three_prefix_set();
        s.traces = vec![
            Trace(vec![Event::call(C_C, C_P, P, 40), Event::ret(C_P, C_C, 1)]),
            Trace(vec![
                Event::call(C_C, C_P, P, 40),
                Event::ret(C_P, C_C, 1),
                Event::call(C_C, C_P, P, 2),
            ]),
        ];
        let p = Pipeline::build(&s).unwrap();
        assert_eq!(ending(&s, &p, 0), Ending::Open);
        assert_eq!(ending(&s, &p, 1), Ending::Closed);
        let r = verify_end_to_end_with(&s, &p);
        assert!(r.all_ok(), "{r:?}");
        assert!(!r.all_exact());
        assert!(r.runs[0].emitted.len() > 2);
    }

    #[test]
    fn generated_sets_pass_everything() {
        let max = GenParams {
            traces: 8,
            max_len: 32,
            compartments: 6,
            procs: 3,
        };
        for seed in 0..150 {
            let s = generate_trace_set(seed, GenParams::sample(seed, max));
            let p = Pipeline::build(&s).unwrap();
            let l = verify_levels_with(&s, &p);
            assert!(l.all_ok(), "seed {seed}: {l:?}");
            let e = verify_end_to_end_with(&s, &p);
            assert!(e.all_exact(), "seed {seed}: {:?}\n{s}", e.runs.iter().find(|r| !r.exact()));
        }
    }
}
