//! Code generation from flat rule tables.
//!
//! Every procedure of a compartment `C` has the body
//!
//! ```text
//! if (is_call) { <incoming calls of this procedure> } else { <incoming returns> }
//! <outgoing events, default exit>
//! ```
//!
//! An outgoing call re-enters `C` through the internal procedure
//! [`REENTER`] once the callee returns, so that the location is branched on
//! again after any callbacks.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::passes::{FlatRule, FlatRuleTable, Pipeline, PipelineError};
use crate::source::{CompartmentCode, Expr, Procedure, Slot, SourceProgram, Stmt};
use crate::trace::{CompartmentId, Event, ProcedureId, TraceSet};

pub const REENTER: &str = "__reenter";

/// Id of the internal procedure of a compartment declaring `n_procs`
/// procedures.
pub fn reenter_id(n_procs: usize) -> ProcedureId {
    ProcedureId(n_procs)
}

fn loc_is(n: usize) -> Expr {
    Expr::eq(Expr::Var(Slot::Loc), Expr::Int(n as i64))
}

fn set(slot: Slot, v: i64) -> Stmt {
    Stmt::Assign(slot, Expr::Int(v))
}

// if (c1) s1 else if (c2) s2 ... else default
fn cascade(arms: Vec<(Expr, Stmt)>, default: Stmt) -> Stmt {
    arms.into_iter()
        .rev()
        .fold(default, |rest, (c, s)| Stmt::if_(c, s, rest))
}

/// Guarded location updates for the incoming calls of procedure `proc`.
pub fn gen_incoming_call_switch<'a>(
    c: CompartmentId,
    proc: ProcedureId,
    rules: impl IntoIterator<Item = &'a FlatRule>,
) -> Stmt {
    let arms = rules
        .into_iter()
        .filter_map(|r| match r.event {
            Event::Call {
                callee,
                proc: q,
                arg,
                ..
            } if callee == c && q == proc => Some((
                Expr::and(loc_is(r.from.0), Expr::eq(Expr::Arg, Expr::Int(arg))),
                set(Slot::Loc, r.to.0 as i64),
            )),
            _ => None,
        })
        .collect();
    cascade(arms, Stmt::Skip)
}

/// Guarded location updates for the incoming returns of `c`.
pub fn gen_incoming_return_switch<'a>(
    c: CompartmentId,
    rules: impl IntoIterator<Item = &'a FlatRule>,
) -> Stmt {
    let arms = rules
        .into_iter()
        .filter_map(|r| match r.event {
            Event::Return { to, value, .. } if to == c => Some((
                Expr::and(
                    loc_is(r.from.0),
                    Expr::eq(Expr::Var(Slot::Res), Expr::Int(value)),
                ),
                set(Slot::Loc, r.to.0 as i64),
            )),
            _ => None,
        })
        .collect();
    cascade(arms, Stmt::Skip)
}

/// Emits the outgoing event of the current location, or runs `default`.
pub fn switch_outgoing<'a>(
    c: CompartmentId,
    rules: impl IntoIterator<Item = &'a FlatRule>,
    n_procs: usize,
    default: Stmt,
) -> Stmt {
    let arms = rules
        .into_iter()
        .filter(|r| r.event.src() == c)
        .map(|r| {
            let then = match r.event {
                Event::Call {
                    callee, proc, arg, ..
                } => Stmt::block([
                    set(Slot::IsCall, 1),
                    set(Slot::Loc, r.to.0 as i64),
                    Stmt::CallStore {
                        dst: callee,
                        proc,
                        arg: Expr::Int(arg),
                    },
                    set(Slot::IsCall, 0),
                    Stmt::CallStore {
                        dst: c,
                        proc: reenter_id(n_procs),
                        arg: Expr::Int(0),
                    },
                    Stmt::Return(Expr::Var(Slot::Res)),
                ]),
                Event::Return { value, .. } => Stmt::block([
                    set(Slot::IsCall, 1),
                    set(Slot::Loc, r.to.0 as i64),
                    Stmt::Return(Expr::Int(value)),
                ]),
            };
            (loc_is(r.from.0), then)
        })
        .collect();
    cascade(arms, default)
}

/// Bodies of the declared procedures of `c` followed by its internal
/// re-entry procedure.
pub fn gen_compartment(c: CompartmentId, rules: &[FlatRule], procs: &[String]) -> CompartmentCode {
    let n = procs.len();
    let returns = gen_incoming_return_switch(c, rules);
    let outgoing = switch_outgoing(c, rules, n, Stmt::Exit);
    let body = |calls: Stmt| {
        Stmt::seq(
            Stmt::if_(Expr::Var(Slot::IsCall), calls, returns.clone()),
            outgoing.clone(),
        )
    };
    let mut procedures: Vec<Procedure> = procs
        .iter()
        .enumerate()
        .map(|(k, name)| Procedure {
            name: name.clone(),
            body: body(gen_incoming_call_switch(c, ProcedureId(k), rules)),
        })
        .collect();
    procedures.push(Procedure {
        name: REENTER.to_string(),
        body: body(Stmt::Skip),
    });
    CompartmentCode {
        name: String::new(),
        procedures,
    }
}

/// Generated code for some compartments, by id.
pub type Fragment = BTreeMap<CompartmentId, CompartmentCode>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackTranslation {
    pub context: Fragment,
    pub programs: Vec<Fragment>,
    pub main: (CompartmentId, ProcedureId),
}

fn gen_fragment(s: &TraceSet, comps: &[CompartmentId], table: &FlatRuleTable) -> Fragment {
    comps
        .iter()
        .map(|&c| {
            let decl = &s.compartments[c.0];
            let mut code = gen_compartment(c, table.rules_of(c), &decl.procedures);
            code.name = decl.name.clone();
            (c, code)
        })
        .collect()
}

pub fn back_translate(s: &TraceSet) -> Result<BackTranslation, PipelineError> {
    Ok(back_translate_with(s, &Pipeline::build(s)?))
}

/// Code generation from an already built pipeline of `s`.
pub fn back_translate_with(s: &TraceSet, p: &Pipeline) -> BackTranslation {
    let context = gen_fragment(s, &s.context(), &p.level4.context);
    let programs = p
        .level4
        .programs
        .iter()
        .map(|t| gen_fragment(s, &s.programs(), t))
        .collect();
    let main_procs = s.compartments[s.main.0].procedures.len();
    BackTranslation {
        context,
        programs,
        main: (s.main, reenter_id(main_procs)),
    }
}

impl BackTranslation {
    /// The whole program made of the context code and the code of
    /// program `i`.
    pub fn link(&self, i: usize) -> SourceProgram {
        link(&self.context, &self.programs[i], self.main)
    }
}

pub fn link(context: &Fragment, program: &Fragment, main: (CompartmentId, ProcedureId)) -> SourceProgram {
    let mut all: BTreeMap<CompartmentId, CompartmentCode> = context.clone();
    all.extend(program.iter().map(|(c, code)| (*c, code.clone())));
    debug_assert!(all.keys().enumerate().all(|(k, c)| c.0 == k));
    SourceProgram {
        compartments: all.into_values().collect(),
        main,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LintError {
    #[error("{compartment}.{proc} does not have the generated shape")]
    UnexpectedShape { compartment: String, proc: String },
    #[error("{compartment}.{proc} reads res outside an incoming-return switch")]
    ResRead { compartment: String, proc: String },
    #[error("{compartment}.{proc} reads arg outside an incoming-call switch")]
    ArgRead { compartment: String, proc: String },
}

/// Checks that generated code reads `arg` only in incoming-call switches
/// and `res` only in incoming-return switches, apart from forwarding the
/// result of the re-entry call.
pub fn lint(code: &CompartmentCode) -> Result<(), LintError> {
    for q in &code.procedures {
        let ids = || (code.name.clone(), q.name.clone());
        let Stmt::Seq(head, outgoing) = &q.body else {
            let (compartment, proc) = ids();
            return Err(LintError::UnexpectedShape { compartment, proc });
        };
        let Stmt::If(Expr::Var(Slot::IsCall), calls, returns) = &**head else {
            let (compartment, proc) = ids();
            return Err(LintError::UnexpectedShape { compartment, proc });
        };
        let mut res_outside = stmt_reads(calls, |e| e.reads(Slot::Res));
        res_outside |= stmt_reads_where(outgoing, |s| match s {
            Stmt::Return(Expr::Var(Slot::Res)) => false,
            s => own_exprs(s).any(|e| e.reads(Slot::Res)),
        });
        if res_outside {
            let (compartment, proc) = ids();
            return Err(LintError::ResRead { compartment, proc });
        }
        if stmt_reads(returns, Expr::reads_arg) || stmt_reads(outgoing, Expr::reads_arg) {
            let (compartment, proc) = ids();
            return Err(LintError::ArgRead { compartment, proc });
        }
    }
    Ok(())
}

fn own_exprs(s: &Stmt) -> impl Iterator<Item = &Expr> {
    let e = match s {
        Stmt::Assign(_, e) | Stmt::If(e, ..) | Stmt::Return(e) => Some(e),
        Stmt::CallStore { arg, .. } => Some(arg),
        _ => None,
    };
    e.into_iter()
}

fn stmt_reads(s: &Stmt, pred: impl Fn(&Expr) -> bool) -> bool {
    stmt_reads_where(s, |s| own_exprs(s).any(&pred))
}

fn stmt_reads_where(s: &Stmt, pred: impl Fn(&Stmt) -> bool) -> bool {
    let mut found = false;
    s.walk(&mut |s| found |= pred(s));
    found
}
