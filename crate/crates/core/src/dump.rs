//! Text dumps of the intermediate levels.

use std::fmt::Write;

use crate::passes::{FlatRuleTable, Located, NodeId, Pipeline};
use crate::replay::Level;
use crate::trace::{AbstractStack, CompartmentId, StackFrame, TraceSet};
use crate::tree::{LevelProgram, Tree};

fn frame(s: &TraceSet, f: &StackFrame) -> String {
    let c = |x: CompartmentId| s.compartments[x.0].name.clone();
    let p = s.compartments[f.callee.0]
        .procedures
        .get(f.proc.0)
        .cloned()
        .unwrap_or_else(|| f.proc.to_string());
    format!("({}, {}, {})", c(f.caller), p, c(f.callee))
}

fn stack(s: &TraceSet, st: &AbstractStack) -> String {
    let frames: Vec<String> = st.top_first().map(|f| frame(s, f)).collect();
    format!("[{}]", frames.join(", "))
}

fn write_tree<A>(s: &TraceSet, t: &Tree<A>, label: &impl Fn(&A) -> String, depth: usize, out: &mut String) {
    for (e, sub) in &t.children {
        let tail = label(&sub.payload);
        let sep = if tail.is_empty() { "" } else { " => " };
        writeln!(out, "{}{}{sep}{tail}", "  ".repeat(depth + 1), e.display(s)).unwrap();
        write_tree(s, sub, label, depth + 1, out);
    }
}

fn write_level<A>(s: &TraceSet, p: &LevelProgram<A>, label: impl Fn(&A) -> String, out: &mut String) {
    let one = |c: CompartmentId, t: &Tree<A>, out: &mut String| {
        let root = label(&t.payload);
        let sep = if root.is_empty() { "" } else { " " };
        writeln!(out, "{}{sep}{root}", s.compartments[c.0].name).unwrap();
        write_tree(s, t, &label, 0, out);
    };
    writeln!(out, "# context").unwrap();
    for (&c, t) in &p.context_trees {
        one(c, t, out);
    }
    for (i, m) in p.program_trees.iter().enumerate() {
        writeln!(out, "# trace {i}").unwrap();
        for (&c, t) in m {
            one(c, t, out);
        }
    }
}

fn write_table(s: &TraceSet, t: &FlatRuleTable, out: &mut String) {
    for (&c, rules) in &t.rules {
        writeln!(out, "{}", s.compartments[c.0].name).unwrap();
        for r in rules {
            writeln!(out, "  {} --{}--> {}", r.from.0, r.event.display(s), r.to.0).unwrap();
        }
    }
}

/// Renders one level of `p`. Trees are printed as indented outlines with
/// one edge per line; level 4 lists the rules of every compartment.
pub fn dump_level(s: &TraceSet, p: &Pipeline, level: Level) -> String {
    let mut out = String::new();
    match level {
        Level::Trees => write_level(s, &p.level1, |_: &()| String::new(), &mut out),
        Level::Numbered => write_level(s, &p.level2, |n: &NodeId| n.0.to_string(), &mut out),
        Level::StackAware => write_level(
            s,
            &p.level3,
            |l: &Located| format!("{} {}", l.id.0, stack(s, &l.stack)),
            &mut out,
        ),
        Level::Flat => {
            writeln!(out, "# context").unwrap();
            write_table(s, &p.level4.context, &mut out);
            for (i, t) in p.level4.programs.iter().enumerate() {
                writeln!(out, "# trace {i}").unwrap();
                write_table(s, t, &mut out);
            }
        }
    }
    out
}
