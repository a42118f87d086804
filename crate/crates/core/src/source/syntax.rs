//! Surface syntax.
//!
//! ```text
//! main C.p;
//!
//! comp C {
//!     proc p(arg) {
//!         if (loc = 1 && arg = 41) {
//!             loc = 2;
//!         }
//!         res = call D.q(40);
//!         return res;
//!     }
//! }
//! ```
//!
//! Compartment and procedure ids follow textual order, so printing and
//! reparsing a program gives back the same program.

use std::collections::HashMap;
use std::fmt::Write;

use super::{CompartmentCode, Expr, Procedure, Slot, SourceProgram, Stmt};
use crate::lex::{ident_text, tokenize, Cursor, ParseError, Tok, Token};
use crate::trace::{CompartmentId, Names, ProcedureId};

const INDENT: &str = "    ";

pub fn pretty(p: &SourceProgram) -> String {
    let all: Vec<CompartmentId> = (0..p.compartments.len()).map(CompartmentId).collect();
    pretty_fragment(p, &all, true)
}

/// Prints the given compartments of `p`, preceded by the `main` line if
/// `with_main` is set.
pub fn pretty_fragment(p: &SourceProgram, comps: &[CompartmentId], with_main: bool) -> String {
    let mut out = String::new();
    if with_main {
        let (c, q) = p.main;
        writeln!(out, "main {}.{};", comp_name(p, c), proc_name(p, c, q)).unwrap();
    }
    for &c in comps {
        if !out.is_empty() {
            out.push('\n');
        }
        let code = &p.compartments[c.0];
        writeln!(out, "comp {} {{", code.name).unwrap();
        for (k, q) in code.procedures.iter().enumerate() {
            if k > 0 {
                out.push('\n');
            }
            writeln!(out, "{INDENT}proc {}(arg) {{", q.name).unwrap();
            write_block(p, &q.body, 2, &mut out);
            writeln!(out, "{INDENT}}}").unwrap();
        }
        writeln!(out, "}}").unwrap();
    }
    out
}

fn comp_name(p: &SourceProgram, c: CompartmentId) -> String {
    p.compartment_name(c)
        .map(str::to_string)
        .unwrap_or_else(|| c.to_string())
}

fn proc_name(p: &SourceProgram, c: CompartmentId, q: ProcedureId) -> String {
    p.procedure_name(c, q)
        .map(str::to_string)
        .unwrap_or_else(|| q.to_string())
}

fn write_block(p: &SourceProgram, s: &Stmt, depth: usize, out: &mut String) {
    let mut cur = s;
    loop {
        match cur {
            Stmt::Seq(a, b) => {
                write_stmt(p, a, depth, out);
                cur = b;
            }
            last => {
                write_stmt(p, last, depth, out);
                break;
            }
        }
    }
}

fn write_stmt(p: &SourceProgram, s: &Stmt, depth: usize, out: &mut String) {
    let pad = INDENT.repeat(depth);
    match s {
        Stmt::Seq(..) => write_block(p, s, depth, out),
        Stmt::Assign(slot, e) => writeln!(out, "{pad}{} = {};", slot.keyword(), expr(e)).unwrap(),
        Stmt::CallStore { dst, proc, arg } => writeln!(
            out,
            "{pad}res = call {}.{}({});",
            comp_name(p, *dst),
            proc_name(p, *dst, *proc),
            expr(arg)
        )
        .unwrap(),
        Stmt::Return(e) => writeln!(out, "{pad}return {};", expr(e)).unwrap(),
        Stmt::Exit => writeln!(out, "{pad}exit;").unwrap(),
        Stmt::Skip => writeln!(out, "{pad}skip;").unwrap(),
        Stmt::If(..) => {
            out.push_str(&pad);
            write_if(p, s, depth, out);
        }
    }
}

// Writes an `if` starting at the current column.
fn write_if(p: &SourceProgram, s: &Stmt, depth: usize, out: &mut String) {
    let Stmt::If(c, t, e) = s else { unreachable!() };
    let pad = INDENT.repeat(depth);
    writeln!(out, "if ({}) {{", expr(c)).unwrap();
    write_block(p, t, depth + 1, out);
    match &**e {
        Stmt::Skip => writeln!(out, "{pad}}}").unwrap(),
        e @ Stmt::If(..) => {
            write!(out, "{pad}}} else ").unwrap();
            write_if(p, e, depth, out);
        }
        e => {
            writeln!(out, "{pad}}} else {{").unwrap();
            write_block(p, e, depth + 1, out);
            writeln!(out, "{pad}}}").unwrap();
        }
    }
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::And(..) => 1,
        Expr::Eq(..) => 2,
        _ => 3,
    }
}

pub(crate) fn expr(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(e, 0, &mut out);
    out
}

fn write_expr(e: &Expr, min: u8, out: &mut String) {
    let p = prec(e);
    if p < min {
        out.push('(');
    }
    match e {
        Expr::Int(z) => write!(out, "{z}").unwrap(),
        Expr::Var(s) => out.push_str(s.keyword()),
        Expr::Arg => out.push_str("arg"),
        Expr::Eq(a, b) | Expr::And(a, b) => {
            write_expr(a, p, out);
            out.push_str(if p == 1 { " && " } else { " = " });
            write_expr(b, p + 1, out);
        }
    }
    if p < min {
        out.push(')');
    }
}

struct Tables {
    comps: HashMap<String, (CompartmentId, HashMap<String, ProcedureId>)>,
}

// Collects compartment and procedure names ahead of the real parse so that
// calls may refer to compartments declared later.
fn scan_names(toks: &[Token]) -> Tables {
    let mut comps = HashMap::new();
    let mut depth = 0usize;
    let mut current: Option<String> = None;
    let mut k = 0;
    while k < toks.len() {
        match &toks[k].tok {
            Tok::Sym("{") => depth += 1,
            Tok::Sym("}") => depth = depth.saturating_sub(1),
            Tok::Ident(kw) if kw == "comp" && depth == 0 => {
                if let Some(Tok::Ident(name)) = toks.get(k + 1).map(|t| &t.tok) {
                    let id = CompartmentId(comps.len());
                    comps.entry(name.clone()).or_insert((id, HashMap::new()));
                    current = Some(name.clone());
                }
            }
            Tok::Ident(kw) if kw == "proc" && depth == 1 => {
                if let (Some(c), Some(Tok::Ident(name))) =
                    (&current, toks.get(k + 1).map(|t| &t.tok))
                {
                    let procs: &mut HashMap<String, ProcedureId> =
                        &mut comps.get_mut(c).expect("scanned").1;
                    let id = ProcedureId(procs.len());
                    procs.entry(name.clone()).or_insert(id);
                }
            }
            _ => {}
        }
        k += 1;
    }
    Tables { comps }
}

pub fn parse_program(text: &str) -> Result<SourceProgram, ParseError> {
    let toks = tokenize(text)?;
    let eof = (text.lines().count().max(1), text.lines().last().map_or(1, |l| l.len() + 1));
    let tables = scan_names(&toks);
    let mut cur = Cursor::new(&toks, eof);
    let mut compartments: Vec<CompartmentCode> = Vec::new();
    let mut main = None;
    while !cur.at_end() {
        if cur.is_keyword("main") {
            let kw = cur.bump().expect("peeked");
            if main.is_some() {
                return Err(ParseError::new(kw.line, kw.col, "`main` declared twice"));
            }
            main = Some(parse_target(&mut cur, &tables)?);
            cur.expect_sym(";")?;
        } else if cur.eat_keyword("comp") {
            let name_tok = cur.expect_ident()?;
            let name = ident_text(name_tok).to_string();
            if compartments.iter().any(|c| c.name == name) {
                return Err(ParseError::new(
                    name_tok.line,
                    name_tok.col,
                    format!("compartment `{name}` declared twice"),
                ));
            }
            cur.expect_sym("{")?;
            let mut procedures: Vec<Procedure> = Vec::new();
            while !cur.eat_sym("}") {
                cur.expect_keyword("proc")?;
                let p = cur.expect_ident()?;
                let pname = ident_text(p).to_string();
                if procedures.iter().any(|q| q.name == pname) {
                    return Err(ParseError::new(
                        p.line,
                        p.col,
                        format!("procedure `{pname}` declared twice"),
                    ));
                }
                cur.expect_sym("(")?;
                cur.expect_keyword("arg")?;
                cur.expect_sym(")")?;
                let body = parse_block(&mut cur, &tables)?;
                procedures.push(Procedure { name: pname, body });
            }
            compartments.push(CompartmentCode { name, procedures });
        } else {
            return Err(cur.unexpected("`main` or `comp`"));
        }
    }
    let Some(main) = main else {
        return Err(ParseError::new(eof.0, eof.1, "missing `main` declaration"));
    };
    Ok(SourceProgram { compartments, main })
}

fn parse_target(
    cur: &mut Cursor<'_>,
    tables: &Tables,
) -> Result<(CompartmentId, ProcedureId), ParseError> {
    let c = cur.expect_ident()?;
    let cname = ident_text(c);
    let (cid, procs) = tables.comps.get(cname).ok_or_else(|| {
        ParseError::new(c.line, c.col, format!("undeclared compartment `{cname}`"))
    })?;
    cur.expect_sym(".")?;
    let p = cur.expect_ident()?;
    let pname = ident_text(p);
    let pid = procs.get(pname).ok_or_else(|| {
        ParseError::new(
            p.line,
            p.col,
            format!("compartment `{cname}` has no procedure `{pname}`"),
        )
    })?;
    Ok((*cid, *pid))
}

fn parse_block(cur: &mut Cursor<'_>, tables: &Tables) -> Result<Stmt, ParseError> {
    cur.expect_sym("{")?;
    let mut stmts = Vec::new();
    while !cur.eat_sym("}") {
        if cur.at_end() {
            return Err(cur.unexpected("`}`"));
        }
        stmts.push(parse_stmt(cur, tables)?);
    }
    Ok(Stmt::block(stmts))
}

fn parse_stmt(cur: &mut Cursor<'_>, tables: &Tables) -> Result<Stmt, ParseError> {
    if cur.eat_keyword("if") {
        return parse_if_rest(cur, tables);
    }
    let s = if cur.eat_keyword("return") {
        Stmt::Return(parse_expr(cur)?)
    } else if cur.eat_keyword("exit") {
        Stmt::Exit
    } else if cur.eat_keyword("skip") {
        Stmt::Skip
    } else if cur.eat_keyword("res") {
        cur.expect_sym("=")?;
        if cur.eat_keyword("call") {
            let (dst, proc) = parse_target(cur, tables)?;
            cur.expect_sym("(")?;
            let arg = parse_expr(cur)?;
            cur.expect_sym(")")?;
            Stmt::CallStore { dst, proc, arg }
        } else {
            Stmt::Assign(Slot::Res, parse_expr(cur)?)
        }
    } else if cur.eat_keyword("loc") {
        cur.expect_sym("=")?;
        Stmt::Assign(Slot::Loc, parse_expr(cur)?)
    } else if cur.eat_keyword("is_call") {
        cur.expect_sym("=")?;
        Stmt::Assign(Slot::IsCall, parse_expr(cur)?)
    } else {
        return Err(cur.unexpected("a statement"));
    };
    cur.expect_sym(";")?;
    Ok(s)
}

fn parse_if_rest(cur: &mut Cursor<'_>, tables: &Tables) -> Result<Stmt, ParseError> {
    cur.expect_sym("(")?;
    let c = parse_expr(cur)?;
    cur.expect_sym(")")?;
    let t = parse_block(cur, tables)?;
    let e = if cur.eat_keyword("else") {
        if cur.eat_keyword("if") {
            parse_if_rest(cur, tables)?
        } else {
            parse_block(cur, tables)?
        }
    } else {
        Stmt::Skip
    };
    Ok(Stmt::if_(c, t, e))
}

fn parse_expr(cur: &mut Cursor<'_>) -> Result<Expr, ParseError> {
    let mut e = parse_eq(cur)?;
    while cur.eat_sym("&&") {
        e = Expr::and(e, parse_eq(cur)?);
    }
    Ok(e)
}

fn parse_eq(cur: &mut Cursor<'_>) -> Result<Expr, ParseError> {
    let mut e = parse_atom(cur)?;
    while cur.eat_sym("=") {
        e = Expr::eq(e, parse_atom(cur)?);
    }
    Ok(e)
}

fn parse_atom(cur: &mut Cursor<'_>) -> Result<Expr, ParseError> {
    if cur.eat_sym("(") {
        let e = parse_expr(cur)?;
        cur.expect_sym(")")?;
        return Ok(e);
    }
    let e = match cur.peek_tok() {
        Some(Tok::Int(z)) => Expr::Int(*z),
        Some(Tok::Ident(w)) if w == "arg" => Expr::Arg,
        Some(Tok::Ident(w)) if w == "loc" => Expr::Var(Slot::Loc),
        Some(Tok::Ident(w)) if w == "is_call" => Expr::Var(Slot::IsCall),
        Some(Tok::Ident(w)) if w == "res" => Expr::Var(Slot::Res),
        _ => return Err(cur.unexpected("an expression")),
    };
    cur.bump();
    Ok(e)
}
