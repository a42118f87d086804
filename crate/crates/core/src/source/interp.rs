use thiserror::Error;

use super::{Expr, Slot, SourceProgram, Stmt};
use crate::trace::{AbstractStack, CompartmentId, Event, ProcedureId, StackFrame, Trace};

static SKIP: Stmt = Stmt::Skip;

/// Per-compartment slots, indexed by [`Slot::offset`].
pub type Memory = Vec<[i64; 3]>;

pub const INITIAL_SLOTS: [i64; 3] = [0, 1, 0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("call to missing procedure {proc} of compartment {compartment}")]
    CallToMissingProcedure {
        compartment: CompartmentId,
        proc: ProcedureId,
    },
}

/// A suspended caller. `caller == callee` for internal calls.
#[derive(Clone, Debug)]
pub struct Frame<'p> {
    pub caller: CompartmentId,
    pub callee: CompartmentId,
    pub proc: ProcedureId,
    pub saved_arg: i64,
    pub kont: Vec<&'p Stmt>,
}

#[derive(Clone, Debug)]
pub struct MachineState<'p> {
    pub program: &'p SourceProgram,
    pub cur: CompartmentId,
    pub stmt: &'p Stmt,
    /// Statements left in the current frame; the next one is last.
    pub kont: Vec<&'p Stmt>,
    pub arg: i64,
    pub stack: Vec<Frame<'p>>,
    pub mem: Memory,
    pub halted: bool,
}

fn eval(e: &Expr, slots: &[i64; 3], arg: i64) -> i64 {
    match e {
        Expr::Int(z) => *z,
        Expr::Var(s) => slots[s.offset()],
        Expr::Arg => arg,
        Expr::Eq(a, b) => (eval(a, slots, arg) == eval(b, slots, arg)) as i64,
        Expr::And(a, b) => (eval(a, slots, arg) != 0 && eval(b, slots, arg) != 0) as i64,
    }
}

impl<'p> MachineState<'p> {
    pub fn initial(program: &'p SourceProgram) -> Result<Self, RuntimeError> {
        let (c, p) = program.main;
        let stmt = program
            .body(c, p)
            .ok_or(RuntimeError::CallToMissingProcedure {
                compartment: c,
                proc: p,
            })?;
        Ok(MachineState {
            program,
            cur: c,
            stmt,
            kont: Vec::new(),
            arg: 0,
            stack: Vec::new(),
            mem: vec![INITIAL_SLOTS; program.compartments.len()],
            halted: false,
        })
    }

    pub fn eval(&self, e: &Expr) -> i64 {
        eval(e, &self.mem[self.cur.0], self.arg)
    }

    pub fn slot(&self, c: CompartmentId, s: Slot) -> i64 {
        self.mem[c.0][s.offset()]
    }

    /// The cross-compartment frames of the machine stack as an abstract
    /// stack.
    pub fn external_frames(&self) -> AbstractStack {
        let mut st = AbstractStack::new();
        for f in &self.stack {
            if f.caller != f.callee {
                st.push(StackFrame {
                    caller: f.caller,
                    proc: f.proc,
                    callee: f.callee,
                });
            }
        }
        st
    }

    /// One small step. Emits an event exactly when control crosses a
    /// compartment boundary. Stepping a halted state is a no-op.
    pub fn step(&mut self) -> Result<Option<Event>, RuntimeError> {
        if self.halted {
            return Ok(None);
        }
        match self.stmt {
            Stmt::Skip => match self.kont.pop() {
                Some(next) => {
                    self.stmt = next;
                    Ok(None)
                }
                None => Ok(self.return_value(0)),
            },
            Stmt::Assign(slot, e) => {
                let v = self.eval(e);
                self.mem[self.cur.0][slot.offset()] = v;
                self.stmt = &SKIP;
                Ok(None)
            }
            Stmt::Seq(a, b) => {
                self.kont.push(b);
                self.stmt = a;
                Ok(None)
            }
            Stmt::If(c, t, e) => {
                self.stmt = if self.eval(c) != 0 { t } else { e };
                Ok(None)
            }
            Stmt::CallStore { dst, proc, arg } => {
                let v = self.eval(arg);
                let body = self.program.body(*dst, *proc).ok_or(
                    RuntimeError::CallToMissingProcedure {
                        compartment: *dst,
                        proc: *proc,
                    },
                )?;
                let caller = self.cur;
                self.stack.push(Frame {
                    caller,
                    callee: *dst,
                    proc: *proc,
                    saved_arg: self.arg,
                    kont: std::mem::take(&mut self.kont),
                });
                self.cur = *dst;
                self.arg = v;
                self.stmt = body;
                Ok((caller != *dst).then(|| Event::call(caller, *dst, *proc, v)))
            }
            Stmt::Return(e) => {
                let v = self.eval(e);
                Ok(self.return_value(v))
            }
            Stmt::Exit => {
                self.halted = true;
                Ok(None)
            }
        }
    }

    fn return_value(&mut self, v: i64) -> Option<Event> {
        let Some(frame) = self.stack.pop() else {
            self.halted = true;
            return None;
        };
        let from = self.cur;
        self.cur = frame.caller;
        self.arg = frame.saved_arg;
        self.kont = frame.kont;
        self.mem[self.cur.0][Slot::Res.offset()] = v;
        self.stmt = &SKIP;
        (from != self.cur).then(|| Event::ret(from, self.cur, v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Halted,
    Stuck(RuntimeError),
    BoundExceeded,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Run {
    pub emitted: Trace,
    pub outcome: Outcome,
    pub steps: usize,
    /// Memory when the run ended.
    pub mem: Memory,
}

/// Runs `p` from its initial state for at most `bound` steps.
pub fn run_source(p: &SourceProgram, bound: usize) -> Run {
    run_source_with(p, bound, |_, _| {})
}

/// Like [`run_source`], calling `on_event` with the state reached right
/// after each emitted event.
pub fn run_source_with(
    p: &SourceProgram,
    bound: usize,
    mut on_event: impl FnMut(&MachineState<'_>, &Event),
) -> Run {
    let mut emitted = Vec::new();
    let mut s = match MachineState::initial(p) {
        Ok(s) => s,
        Err(e) => {
            return Run {
                emitted: Trace::default(),
                outcome: Outcome::Stuck(e),
                steps: 0,
                mem: Memory::new(),
            }
        }
    };
    let mut steps = 0;
    while !s.halted {
        if steps == bound {
            return Run {
                emitted: Trace(emitted),
                outcome: Outcome::BoundExceeded,
                steps,
                mem: s.mem,
            };
        }
        steps += 1;
        match s.step() {
            Ok(Some(e)) => {
                on_event(&s, &e);
                emitted.push(e);
            }
            Ok(None) => {}
            Err(err) => {
                return Run {
                    emitted: Trace(emitted),
                    outcome: Outcome::Stuck(err),
                    steps,
                    mem: s.mem,
                }
            }
        }
    }
    Run {
        emitted: Trace(emitted),
        outcome: Outcome::Halted,
        steps,
        mem: s.mem,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("statement leaves the current procedure")]
pub struct LocalExecError;

/// Executes a statement made only of assignments, conditionals, sequences
/// and `skip` against one compartment's slots.
pub fn exec_local(s: &Stmt, slots: &mut [i64; 3], arg: i64) -> Result<(), LocalExecError> {
    match s {
        Stmt::Skip => Ok(()),
        Stmt::Assign(slot, e) => {
            slots[slot.offset()] = eval(e, slots, arg);
            Ok(())
        }
        Stmt::Seq(a, b) => {
            exec_local(a, slots, arg)?;
            exec_local(b, slots, arg)
        }
        Stmt::If(c, t, e) => {
            if eval(c, slots, arg) != 0 {
                exec_local(t, slots, arg)
            } else {
                exec_local(e, slots, arg)
            }
        }
        Stmt::CallStore { .. } | Stmt::Return(_) | Stmt::Exit => Err(LocalExecError),
    }
}
