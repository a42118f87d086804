//! The target language of back-translation: compartments of procedures over
//! three integer slots per compartment.

mod interp;
mod syntax;

pub use interp::{
    exec_local, run_source, run_source_with, Frame, LocalExecError, MachineState, Memory, Outcome,
    Run, RuntimeError,
};
pub use syntax::{parse_program, pretty, pretty_fragment};

use crate::trace::{CompartmentId, Names, ProcedureId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Loc = 0,
    IsCall = 1,
    Res = 2,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Loc, Slot::IsCall, Slot::Res];

    pub fn offset(self) -> usize {
        self as usize
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Slot::Loc => "loc",
            Slot::IsCall => "is_call",
            Slot::Res => "res",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Int(i64),
    Var(Slot),
    Arg,
    Eq(Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn eq(a: Expr, b: Expr) -> Expr {
        Expr::Eq(Box::new(a), Box::new(b))
    }

    pub fn and(a: Expr, b: Expr) -> Expr {
        Expr::And(Box::new(a), Box::new(b))
    }

    pub fn reads(&self, slot: Slot) -> bool {
        match self {
            Expr::Var(s) => *s == slot,
            Expr::Int(_) | Expr::Arg => false,
            Expr::Eq(a, b) | Expr::And(a, b) => a.reads(slot) || b.reads(slot),
        }
    }

    pub fn reads_arg(&self) -> bool {
        match self {
            Expr::Arg => true,
            Expr::Int(_) | Expr::Var(_) => false,
            Expr::Eq(a, b) | Expr::And(a, b) => a.reads_arg() || b.reads_arg(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Stmt {
    Assign(Slot, Expr),
    Seq(Box<Stmt>, Box<Stmt>),
    If(Expr, Box<Stmt>, Box<Stmt>),
    /// `res = call dst.proc(arg);`
    CallStore {
        dst: CompartmentId,
        proc: ProcedureId,
        arg: Expr,
    },
    Return(Expr),
    Exit,
    Skip,
}

impl Stmt {
    /// Sequential composition kept right-nested, which is the shape the
    /// parser produces.
    pub fn seq(a: Stmt, b: Stmt) -> Stmt {
        match a {
            Stmt::Seq(a1, a2) => Stmt::Seq(a1, Box::new(Stmt::seq(*a2, b))),
            a => Stmt::Seq(Box::new(a), Box::new(b)),
        }
    }

    /// Folds a list of statements with [`Stmt::seq`]; empty gives `Skip`.
    pub fn block(stmts: impl IntoIterator<Item = Stmt>) -> Stmt {
        let mut v: Vec<Stmt> = stmts.into_iter().collect();
        let Some(mut acc) = v.pop() else {
            return Stmt::Skip;
        };
        while let Some(s) = v.pop() {
            acc = Stmt::seq(s, acc);
        }
        acc
    }

    pub fn if_(c: Expr, t: Stmt, e: Stmt) -> Stmt {
        Stmt::If(c, Box::new(t), Box::new(e))
    }

    /// Visits every statement node, parents before children.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Stmt)) {
        f(self);
        match self {
            Stmt::Seq(a, b) | Stmt::If(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            _ => {}
        }
    }

    /// Whether every `Seq` in the statement has a non-`Seq` left operand.
    pub fn is_right_nested(&self) -> bool {
        let mut ok = true;
        self.walk(&mut |s| {
            if let Stmt::Seq(a, _) = s {
                ok &= !matches!(**a, Stmt::Seq(..));
            }
        });
        ok
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Procedure {
    pub name: String,
    pub body: Stmt,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompartmentCode {
    pub name: String,
    pub procedures: Vec<Procedure>,
}

impl CompartmentCode {
    pub fn procedure(&self, p: ProcedureId) -> Option<&Procedure> {
        self.procedures.get(p.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceProgram {
    pub compartments: Vec<CompartmentCode>,
    pub main: (CompartmentId, ProcedureId),
}

impl SourceProgram {
    pub fn body(&self, c: CompartmentId, p: ProcedureId) -> Option<&Stmt> {
        self.compartments.get(c.0)?.procedure(p).map(|q| &q.body)
    }

    /// Checks that `main` exists and that every call names an existing
    /// procedure.
    pub fn check_closed(&self) -> Result<(), RuntimeError> {
        let (mc, mp) = self.main;
        if self.body(mc, mp).is_none() {
            return Err(RuntimeError::CallToMissingProcedure {
                compartment: mc,
                proc: mp,
            });
        }
        for c in &self.compartments {
            for q in &c.procedures {
                let mut missing = None;
                q.body.walk(&mut |s| {
                    if let Stmt::CallStore { dst, proc, .. } = s {
                        if missing.is_none() && self.body(*dst, *proc).is_none() {
                            missing = Some((*dst, *proc));
                        }
                    }
                });
                if let Some((compartment, proc)) = missing {
                    return Err(RuntimeError::CallToMissingProcedure { compartment, proc });
                }
            }
        }
        Ok(())
    }
}

impl Names for SourceProgram {
    fn compartment_name(&self, c: CompartmentId) -> Option<&str> {
        self.compartments.get(c.0).map(|x| x.name.as_str())
    }

    fn procedure_name(&self, c: CompartmentId, p: ProcedureId) -> Option<&str> {
        self.compartments
            .get(c.0)?
            .procedure(p)
            .map(|q| q.name.as_str())
    }
}
