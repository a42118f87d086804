//! Cross-compartment events, traces and trace sets.
//!
//! A [`TraceSet`] is the input of the whole pipeline. [`check_well_formed`]
//! gates everything downstream: a set that passes it can always be turned into
//! call-return trees, numbered, annotated, flattened and compiled.

use std::fmt;
use std::ops::Deref;

use thiserror::Error;

use crate::tree::{self, Tree};

mod text;

pub use text::parse_trace_set;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CompartmentId(pub usize);

/// Procedure index, scoped to the callee compartment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcedureId(pub usize);

impl fmt::Display for CompartmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl fmt::Display for ProcedureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Event {
    Call {
        caller: CompartmentId,
        callee: CompartmentId,
        proc: ProcedureId,
        arg: i64,
    },
    Return {
        from: CompartmentId,
        to: CompartmentId,
        value: i64,
    },
}

impl Event {
    pub fn call(caller: CompartmentId, callee: CompartmentId, proc: ProcedureId, arg: i64) -> Self {
        Event::Call {
            caller,
            callee,
            proc,
            arg,
        }
    }

    pub fn ret(from: CompartmentId, to: CompartmentId, value: i64) -> Self {
        Event::Return { from, to, value }
    }

    /// The compartment giving up control.
    pub fn src(&self) -> CompartmentId {
        match *self {
            Event::Call { caller, .. } => caller,
            Event::Return { from, .. } => from,
        }
    }

    /// The compartment receiving control.
    pub fn dst(&self) -> CompartmentId {
        match *self {
            Event::Call { callee, .. } => callee,
            Event::Return { to, .. } => to,
        }
    }

    pub fn payload(&self) -> i64 {
        match *self {
            Event::Call { arg, .. } => arg,
            Event::Return { value, .. } => value,
        }
    }

    pub fn is_call(&self) -> bool {
        matches!(self, Event::Call { .. })
    }

    pub fn involves(&self, c: CompartmentId) -> bool {
        self.src() == c || self.dst() == c
    }

    pub fn with_payload(self, payload: i64) -> Self {
        match self {
            Event::Call {
                caller,
                callee,
                proc,
                ..
            } => Event::call(caller, callee, proc, payload),
            Event::Return { from, to, .. } => Event::ret(from, to, payload),
        }
    }

    /// Renders the event in the trace-file grammar using `names`.
    pub fn display<'a, N: Names + ?Sized>(&'a self, names: &'a N) -> EventDisplay<'a, N> {
        EventDisplay { event: self, names }
    }
}

/// Name lookup for pretty-printing ids.
pub trait Names {
    fn compartment_name(&self, c: CompartmentId) -> Option<&str>;
    fn procedure_name(&self, c: CompartmentId, p: ProcedureId) -> Option<&str>;
}

/// Prints raw ids; used where no name table is at hand.
pub struct NoNames;

impl Names for NoNames {
    fn compartment_name(&self, _: CompartmentId) -> Option<&str> {
        None
    }
    fn procedure_name(&self, _: CompartmentId, _: ProcedureId) -> Option<&str> {
        None
    }
}

pub struct EventDisplay<'a, N: ?Sized> {
    event: &'a Event,
    names: &'a N,
}

impl<N: Names + ?Sized> fmt::Display for EventDisplay<'_, N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let comp = |c: CompartmentId| -> String {
            self.names
                .compartment_name(c)
                .map(str::to_string)
                .unwrap_or_else(|| c.to_string())
        };
        match *self.event {
            Event::Call {
                caller,
                callee,
                proc,
                arg,
            } => {
                let p = self
                    .names
                    .procedure_name(callee, proc)
                    .map(str::to_string)
                    .unwrap_or_else(|| proc.to_string());
                write!(f, "call {} -> {}.{} ({})", comp(caller), comp(callee), p, arg)
            }
            Event::Return { from, to, value } => {
                write!(f, "ret {} -> {} ({})", comp(from), comp(to), value)
            }
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.display(&NoNames).fmt(f)
    }
}

/// A finite trace prefix.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Trace(pub Vec<Event>);

impl Trace {
    pub fn new(events: Vec<Event>) -> Self {
        Trace(events)
    }

    pub fn events(&self) -> &[Event] {
        &self.0
    }
}

impl Deref for Trace {
    type Target = [Event];
    fn deref(&self) -> &[Event] {
        &self.0
    }
}

impl From<Vec<Event>> for Trace {
    fn from(v: Vec<Event>) -> Self {
        Trace(v)
    }
}

impl FromIterator<Event> for Trace {
    fn from_iter<I: IntoIterator<Item = Event>>(iter: I) -> Self {
        Trace(iter.into_iter().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Context,
    Program,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Compartment {
    pub name: String,
    pub role: Role,
    /// Declared procedure names; `ProcedureId(k)` is `procedures[k]`.
    pub procedures: Vec<String>,
}

/// The back-translation input: `K` trace prefixes over a fixed set of
/// compartments partitioned into context and program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceSet {
    /// `CompartmentId(k)` is `compartments[k]`.
    pub compartments: Vec<Compartment>,
    pub main: CompartmentId,
    pub traces: Vec<Trace>,
}

impl TraceSet {
    pub fn compartment(&self, c: CompartmentId) -> Option<&Compartment> {
        self.compartments.get(c.0)
    }

    pub fn compartment_ids(&self) -> impl Iterator<Item = CompartmentId> + '_ {
        (0..self.compartments.len()).map(CompartmentId)
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = CompartmentId> + '_ {
        self.compartment_ids()
            .filter(move |c| self.compartments[c.0].role == role)
    }

    pub fn context(&self) -> Vec<CompartmentId> {
        self.with_role(Role::Context).collect()
    }

    pub fn programs(&self) -> Vec<CompartmentId> {
        self.with_role(Role::Program).collect()
    }

    pub fn is_context(&self, c: CompartmentId) -> bool {
        self.compartment(c).is_some_and(|d| d.role == Role::Context)
    }

    pub fn lookup(&self, name: &str) -> Option<CompartmentId> {
        self.compartments
            .iter()
            .position(|c| c.name == name)
            .map(CompartmentId)
    }

    pub fn total_events(&self) -> usize {
        self.traces.iter().map(|t| t.len()).sum()
    }
}

impl Names for TraceSet {
    fn compartment_name(&self, c: CompartmentId) -> Option<&str> {
        self.compartment(c).map(|d| d.name.as_str())
    }

    fn procedure_name(&self, c: CompartmentId, p: ProcedureId) -> Option<&str> {
        self.compartment(c)
            .and_then(|d| d.procedures.get(p.0))
            .map(String::as_str)
    }
}

impl fmt::Display for TraceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        text::write_trace_set(self, f)
    }
}

/// One outstanding cross-compartment call.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StackFrame {
    pub caller: CompartmentId,
    pub proc: ProcedureId,
    pub callee: CompartmentId,
}

/// Abstract cross-compartment call stack.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct AbstractStack {
    // bottom first; the top frame is the last element
    frames: Vec<StackFrame>,
}

impl AbstractStack {
    pub fn new() -> Self {
        AbstractStack::default()
    }

    /// Builds a stack from frames listed top first.
    pub fn from_top_first(frames: impl IntoIterator<Item = StackFrame>) -> Self {
        let mut frames: Vec<_> = frames.into_iter().collect();
        frames.reverse();
        AbstractStack { frames }
    }

    pub fn push(&mut self, frame: StackFrame) {
        self.frames.push(frame);
    }

    pub fn pop(&mut self) -> Option<StackFrame> {
        self.frames.pop()
    }

    pub fn top(&self) -> Option<&StackFrame> {
        self.frames.last()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn top_first(&self) -> impl Iterator<Item = &StackFrame> {
        self.frames.iter().rev()
    }

    /// The frames involving `c`, in the same order.
    pub fn restrict(&self, c: CompartmentId) -> AbstractStack {
        AbstractStack {
            frames: self
                .frames
                .iter()
                .filter(|f| f.caller == c || f.callee == c)
                .copied()
                .collect(),
        }
    }

    /// Applies one event: a call pushes, a return must match the top frame
    /// and pops it. Returns false (leaving the stack unchanged) on mismatch.
    pub fn apply(&mut self, e: &Event) -> bool {
        match *e {
            Event::Call {
                caller,
                callee,
                proc,
                ..
            } => {
                self.push(StackFrame {
                    caller,
                    proc,
                    callee,
                });
                true
            }
            Event::Return { from, to, .. } => match self.top() {
                Some(top) if top.callee == from && top.caller == to => {
                    self.pop();
                    true
                }
                _ => false,
            },
        }
    }
}

impl fmt::Display for AbstractStack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (k, fr) in self.top_first().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "({}, {}, {})", fr.caller, fr.proc, fr.callee)?;
        }
        write!(f, "]")
    }
}

/// True iff the trace starts with `main` and each event is emitted by the
/// compartment the previous event handed control to.
pub fn control_flow_ok(m: &[Event], main: CompartmentId) -> bool {
    control_flow_violation(m, main).is_none()
}

fn control_flow_violation(m: &[Event], main: CompartmentId) -> Option<usize> {
    let mut in_control = main;
    for (k, e) in m.iter().enumerate() {
        if e.src() != in_control {
            return Some(k);
        }
        in_control = e.dst();
    }
    None
}

/// Well-bracketedness of `m` starting from stack `st`.
pub fn wf_stack_trace(m: &[Event], st: &AbstractStack) -> bool {
    let mut st = st.clone();
    bracketing_violation(m, &mut st).is_none()
}

fn bracketing_violation(m: &[Event], st: &mut AbstractStack) -> Option<usize> {
    m.iter().position(|e| !st.apply(e))
}

/// The subsequence of events that involve `c`.
pub fn filter_for_compartment(m: &[Event], c: CompartmentId) -> Trace {
    m.iter().filter(|e| e.involves(c)).copied().collect()
}

/// Like [`filter_for_compartment`], also returning each kept event's index in `m`.
pub(crate) fn filter_with_positions(m: &[Event], c: CompartmentId) -> (Vec<Event>, Vec<usize>) {
    m.iter()
        .enumerate()
        .filter(|(_, e)| e.involves(c))
        .map(|(k, e)| (*e, k))
        .unzip()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Clause {
    /// Declarations: main and every event endpoint are declared, no self events.
    Structure,
    /// (i) control alternation.
    ControlFlow,
    /// (ii) well-bracketed calls and returns.
    Bracketing,
    /// (iii) the context answers identical histories identically.
    Determinacy,
    /// (iv) calls target declared procedures.
    Interface,
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Clause::Structure => "structure",
            Clause::ControlFlow => "control flow",
            Clause::Bracketing => "bracketing",
            Clause::Determinacy => "determinacy",
            Clause::Interface => "interface",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum WellFormednessError {
    #[error("main compartment {0} is not declared")]
    UndeclaredMain(CompartmentId),
    #[error("undeclared compartment at trace {trace}, position {position}")]
    UndeclaredCompartment { trace: usize, position: usize },
    #[error("event from a compartment to itself at trace {trace}, position {position}")]
    SelfEvent { trace: usize, position: usize },
    #[error("control flow broken at trace {trace}, position {position}")]
    ControlFlow { trace: usize, position: usize },
    #[error("unmatched return at trace {trace}, position {position}")]
    Bracketing { trace: usize, position: usize },
    #[error("determinacy violated at trace {trace}, position {position}")]
    Determinacy {
        compartment: CompartmentId,
        trace: usize,
        position: usize,
    },
    #[error("determinacy violated at trace {trace}, position {position}: callers indistinguishable")]
    IndistinguishableCallers {
        compartment: CompartmentId,
        trace: usize,
        position: usize,
    },
    #[error("undeclared procedure at trace {trace}, position {position}")]
    UndeclaredProcedure { trace: usize, position: usize },
}

impl WellFormednessError {
    pub fn clause(&self) -> Clause {
        use WellFormednessError::*;
        match self {
            UndeclaredMain(_) | UndeclaredCompartment { .. } | SelfEvent { .. } => {
                Clause::Structure
            }
            ControlFlow { .. } => Clause::ControlFlow,
            Bracketing { .. } => Clause::Bracketing,
            Determinacy { .. } | IndistinguishableCallers { .. } => Clause::Determinacy,
            UndeclaredProcedure { .. } => Clause::Interface,
        }
    }

    /// `(trace, position)` of the offending event, when there is one.
    pub fn location(&self) -> Option<(usize, usize)> {
        use WellFormednessError::*;
        match *self {
            UndeclaredMain(_) => None,
            UndeclaredCompartment { trace, position }
            | SelfEvent { trace, position }
            | ControlFlow { trace, position }
            | Bracketing { trace, position }
            | Determinacy {
                trace, position, ..
            }
            | IndistinguishableCallers {
                trace, position, ..
            }
            | UndeclaredProcedure { trace, position } => Some((trace, position)),
        }
    }
}

/// Checks clauses in order: structure, (i) control flow, (ii) bracketing,
/// (iii) determinacy, (iv) interface. The first violation found is returned.
pub fn check_well_formed(s: &TraceSet) -> Result<(), WellFormednessError> {
    use WellFormednessError as E;

    let n = s.compartments.len();
    if s.main.0 >= n {
        return Err(E::UndeclaredMain(s.main));
    }
    for (trace, m) in s.traces.iter().enumerate() {
        for (position, e) in m.iter().enumerate() {
            if e.src().0 >= n || e.dst().0 >= n {
                return Err(E::UndeclaredCompartment { trace, position });
            }
            if e.src() == e.dst() {
                return Err(E::SelfEvent { trace, position });
            }
        }
    }
    for (trace, m) in s.traces.iter().enumerate() {
        if let Some(position) = control_flow_violation(m, s.main) {
            return Err(E::ControlFlow { trace, position });
        }
    }
    for (trace, m) in s.traces.iter().enumerate() {
        if let Some(position) = bracketing_violation(m, &mut AbstractStack::new()) {
            return Err(E::Bracketing { trace, position });
        }
    }
    check_determinacy(s)?;
    for (trace, m) in s.traces.iter().enumerate() {
        for (position, e) in m.iter().enumerate() {
            if let Event::Call { callee, proc, .. } = *e {
                if proc.0 >= s.compartments[callee.0].procedures.len() {
                    return Err(E::UndeclaredProcedure { trace, position });
                }
            }
        }
    }
    Ok(())
}

/// Merges each context compartment's filtered traces into its tree, one trace
/// at a time, and stops at the first insertion that breaks
/// `unique_current_tree` or makes two callers of the same procedure with the
/// same argument indistinguishable.
fn check_determinacy(s: &TraceSet) -> Result<(), WellFormednessError> {
    let contexts = s.context();
    let mut trees: Vec<Tree<()>> = contexts.iter().map(|_| Tree::leaf(())).collect();
    for (trace, m) in s.traces.iter().enumerate() {
        for (&c, t) in contexts.iter().zip(trees.iter_mut()) {
            let (filtered, positions) = filter_with_positions(m, c);
            let matched = t.matched_prefix_len(&filtered);
            if matched == filtered.len() {
                continue;
            }
            tree::add_trace_in_place(&filtered, t);
            let position = positions[matched];
            if !tree::unique_current_tree(c, t) {
                return Err(WellFormednessError::Determinacy {
                    compartment: c,
                    trace,
                    position,
                });
            }
            if !tree::distinguishable_callers(c, t) {
                return Err(WellFormednessError::IndistinguishableCallers {
                    compartment: c,
                    trace,
                    position,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{three_prefix_set, C_C, C_P, P};

    fn cc(a: usize, b: usize, z: i64) -> Event {
        Event::call(CompartmentId(a), CompartmentId(b), P, z)
    }
    fn rr(a: usize, b: usize, z: i64) -> Event {
        Event::ret(CompartmentId(a), CompartmentId(b), z)
    }

    #[test]
    fn control_flow_examples() {
        let s = three_prefix_set();
        assert!(control_flow_ok(&s.traces[0], C_C));
        assert!(control_flow_ok(&[], C_C));
        let bad = [Event::call(C_C, C_P, P, 40), Event::call(C_C, C_P, P, 41)];
        assert!(!control_flow_ok(&bad, C_C));
    }

    #[test]
    fn wf_stack_examples() {
        let s = three_prefix_set();
        assert!(wf_stack_trace(&s.traces[0], &AbstractStack::new()));
        let st = AbstractStack::from_top_first([StackFrame {
            caller: C_C,
            proc: P,
            callee: C_P,
        }]);
        assert!(wf_stack_trace(&[], &st));
        assert!(!wf_stack_trace(&[Event::ret(C_P, C_C, 43)], &AbstractStack::new()));
    }

    #[test]
    fn return_must_match_both_ends_of_top_frame() {
        // A calls B, then B returns to C instead of A.
        let m = [cc(0, 1, 1), rr(1, 2, 2)];
        assert!(!wf_stack_trace(&m, &AbstractStack::new()));
    }

    #[test]
    fn filter_examples() {
        let s = three_prefix_set();
        assert_eq!(filter_for_compartment(&s.traces[0], C_C), s.traces[0]);
        assert!(filter_for_compartment(&[], C_C).is_empty());
        let m = [cc(0, 1, 1), cc(1, 2, 2), rr(2, 1, 3), rr(1, 0, 4)];
        assert_eq!(
            filter_for_compartment(&m, CompartmentId(0)).0,
            vec![cc(0, 1, 1), rr(1, 0, 4)]
        );
    }

    #[test]
    fn three_prefix_set_is_well_formed() {
        assert_eq!(check_well_formed(&three_prefix_set()), Ok(()));
    }

    #[test]
    fn empty_set_is_well_formed() {
        let mut s = three_prefix_set();
        s.traces.clear();
        assert_eq!(check_well_formed(&s), Ok(()));
    }

    #[test]
    fn diverging_context_is_rejected_at_second_trace() {
        let mut s = three_prefix_set();
        s.traces = vec![
            Trace(vec![Event::call(C_C, C_P, P, 40)]),
            Trace(vec![Event::call(C_C, C_P, P, 41)]),
        ];
        let err = check_well_formed(&s).unwrap_err();
        assert_eq!(
            err,
            WellFormednessError::Determinacy {
                compartment: C_C,
                trace: 1,
                position: 0
            }
        );
        assert_eq!(err.to_string(), "determinacy violated at trace 1, position 0");
    }

    #[test]
    fn undeclared_procedure() {
        let mut s = three_prefix_set();
        s.traces = vec![Trace(vec![Event::call(C_C, C_P, ProcedureId(3), 40)])];
        assert_eq!(
            check_well_formed(&s).unwrap_err().clause(),
            Clause::Interface
        );
    }

    #[test]
    fn stack_restriction_keeps_order() {
        let f = |a, b| StackFrame {
            caller: CompartmentId(a),
            proc: P,
            callee: CompartmentId(b),
        };
        let st = AbstractStack::from_top_first([f(1, 2), f(0, 1), f(2, 3)]);
        let r = st.restrict(CompartmentId(1));
        assert_eq!(r.top_first().copied().collect::<Vec<_>>(), vec![f(1, 2), f(0, 1)]);
    }
}
