//! Text format for trace sets.
//!
//! ```text
//! context C_C: p
//! program C_P: p
//! main C_C
//!
//! trace
//! call C_C -> C_P.p (40)
//! ret C_P -> C_C (43)
//! ```
//!
//! Declarations come first, one per line. Each `trace` line opens a new
//! (possibly empty) trace; the events that follow belong to it.

use std::collections::HashMap;
use std::fmt;

use super::{Compartment, CompartmentId, Event, ProcedureId, Role, Trace, TraceSet};
use crate::lex::{ident_text, tokenize, Cursor, ParseError, Token};

/// Procedure names with this prefix are reserved for generated code.
pub const RESERVED_PREFIX: &str = "__";

pub fn parse_trace_set(text: &str) -> Result<TraceSet, ParseError> {
    let toks = tokenize(text)?;
    let eof = (text.lines().count().max(1), 1);

    let mut lines: Vec<&[Token]> = Vec::new();
    let mut start = 0;
    for k in 1..=toks.len() {
        if k == toks.len() || toks[k].line != toks[start].line {
            lines.push(&toks[start..k]);
            start = k;
        }
    }

    let mut compartments: Vec<Compartment> = Vec::new();
    let mut index: HashMap<String, CompartmentId> = HashMap::new();
    let mut main: Option<CompartmentId> = None;
    let mut traces: Vec<Trace> = Vec::new();
    let mut in_traces = false;

    for line in lines {
        let mut cur = Cursor::new(line, eof);
        let first = cur.peek().expect("lines are nonempty");
        let keyword = ident_text(first);
        match keyword {
            "context" | "program" if !in_traces => {
                cur.bump();
                let role = if keyword == "context" {
                    Role::Context
                } else {
                    Role::Program
                };
                let name_tok = cur.expect_ident()?;
                let name = ident_text(name_tok).to_string();
                if index.contains_key(&name) {
                    return Err(ParseError::new(
                        name_tok.line,
                        name_tok.col,
                        format!("compartment `{name}` declared twice"),
                    ));
                }
                let mut procedures: Vec<String> = Vec::new();
                if cur.eat_sym(":") && !cur.at_end() {
                    loop {
                        let p = cur.expect_ident()?;
                        let pname = ident_text(p).to_string();
                        if pname.starts_with(RESERVED_PREFIX) {
                            return Err(ParseError::new(
                                p.line,
                                p.col,
                                format!("procedure names starting with `{RESERVED_PREFIX}` are reserved"),
                            ));
                        }
                        if procedures.contains(&pname) {
                            return Err(ParseError::new(
                                p.line,
                                p.col,
                                format!("procedure `{pname}` declared twice"),
                            ));
                        }
                        procedures.push(pname);
                        if !cur.eat_sym(",") {
                            break;
                        }
                    }
                }
                end_of_line(&cur)?;
                index.insert(name.clone(), CompartmentId(compartments.len()));
                compartments.push(Compartment {
                    name,
                    role,
                    procedures,
                });
            }
            "main" if !in_traces => {
                cur.bump();
                if main.is_some() {
                    return Err(ParseError::new(first.line, first.col, "`main` declared twice"));
                }
                let c = resolve(&index, cur.expect_ident()?)?;
                end_of_line(&cur)?;
                main = Some(c);
            }
            "trace" => {
                cur.bump();
                end_of_line(&cur)?;
                if main.is_none() {
                    return Err(ParseError::new(
                        first.line,
                        first.col,
                        "`main` must be declared before the first trace",
                    ));
                }
                in_traces = true;
                traces.push(Trace::default());
            }
            "call" | "ret" => {
                let Some(trace) = traces.last_mut() else {
                    return Err(ParseError::new(
                        first.line,
                        first.col,
                        "event outside of a `trace` block",
                    ));
                };
                let event = parse_event(&mut cur, &index, &compartments)?;
                end_of_line(&cur)?;
                trace.0.push(event);
            }
            _ => return Err(cur.unexpected("a declaration, `trace` or an event")),
        }
    }

    let main = match main {
        Some(m) => m,
        None => return Err(ParseError::new(eof.0, eof.1, "missing `main` declaration")),
    };
    Ok(TraceSet {
        compartments,
        main,
        traces,
    })
}

fn end_of_line(cur: &Cursor<'_>) -> Result<(), ParseError> {
    if cur.at_end() {
        Ok(())
    } else {
        Err(cur.unexpected("end of line"))
    }
}

fn resolve(index: &HashMap<String, CompartmentId>, t: &Token) -> Result<CompartmentId, ParseError> {
    let name = ident_text(t);
    index.get(name).copied().ok_or_else(|| {
        ParseError::new(t.line, t.col, format!("undeclared compartment `{name}`"))
    })
}

fn parse_event(
    cur: &mut Cursor<'_>,
    index: &HashMap<String, CompartmentId>,
    compartments: &[Compartment],
) -> Result<Event, ParseError> {
    let is_call = cur.is_keyword("call");
    cur.bump();
    let src = resolve(index, cur.expect_ident()?)?;
    cur.expect_sym("->")?;
    let dst = resolve(index, cur.expect_ident()?)?;
    let proc = if is_call {
        cur.expect_sym(".")?;
        let p = cur.expect_ident()?;
        let pname = ident_text(p);
        let k = compartments[dst.0]
            .procedures
            .iter()
            .position(|q| q == pname)
            .ok_or_else(|| {
                ParseError::new(
                    p.line,
                    p.col,
                    format!(
                        "procedure `{pname}` is not declared by `{}`",
                        compartments[dst.0].name
                    ),
                )
            })?;
        Some(ProcedureId(k))
    } else {
        None
    };
    cur.expect_sym("(")?;
    let payload = cur.expect_int()?;
    cur.expect_sym(")")?;
    Ok(match proc {
        Some(proc) => Event::call(src, dst, proc, payload),
        None => Event::ret(src, dst, payload),
    })
}

pub(super) fn write_trace_set(s: &TraceSet, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    for c in &s.compartments {
        let role = match c.role {
            Role::Context => "context",
            Role::Program => "program",
        };
        write!(f, "{role} {}", c.name)?;
        if !c.procedures.is_empty() {
            write!(f, ": {}", c.procedures.join(", "))?;
        }
        writeln!(f)?;
    }
    let main = s
        .compartments
        .get(s.main.0)
        .map(|c| c.name.clone())
        .unwrap_or_else(|| s.main.to_string());
    writeln!(f, "main {main}")?;
    for t in &s.traces {
        writeln!(f)?;
        writeln!(f, "trace")?;
        for e in t.iter() {
            writeln!(f, "{}", e.display(s))?;
        }
    }
    Ok(())
}
