//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nanobt::codegen::back_translate;
use nanobt::fixtures::{three_prefix_set, single_trace_set, C_C, C_P, P};
use nanobt::harness::{
    ending, generate_trace_set, random_program, verify_end_to_end, verify_end_to_end_with,
    verify_levels_with, Ending, GenParams,
};
use nanobt::passes::{FlatRule, NodeId, Pipeline, PipelineError};
use nanobt::source::{parse_program, pretty, Outcome};
use nanobt::trace::{
    check_well_formed, parse_trace_set, Clause, CompartmentId, Event, ProcedureId, Trace, TraceSet,
};
use nanobt::tree::Tree;

const EXAMPLE_LIMIT: Duration = Duration::from_secs(1);
const SINGLE_LIMIT: Duration = Duration::from_secs(1);
const REPLAY_LIMIT: Duration = Duration::from_secs(60);
const END_TO_END_LIMIT: Duration = Duration::from_secs(120);

const CORPUS: u64 = 1000;
const MAX: GenParams = GenParams {
    traces: 8,
    max_len: 32,
    compartments: 6,
    procs: 3,
};

fn corpus() -> Vec<(u64, GenParams, TraceSet)> {
    (0..CORPUS)
        .map(|seed| {
            let p = GenParams::sample(seed, MAX);
            (seed, p, generate_trace_set(seed, p))
        })
        .collect()
}

struct Verdict {
    ok: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Verdict {
    Verdict {
        ok: true,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Verdict {
    Verdict {
        ok: false,
        detail: detail.into(),
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let mut r = f();
    let took = start.elapsed();
    match limit {
        Some(limit) if took >= limit => {
            r.ok = false;
            r.detail = format!("{}; took {took:.2?}, limit {limit:?}", r.detail);
        }
        Some(limit) => r.detail = format!("{}; {took:.2?} (limit {limit:?})", r.detail),
        None => r.detail = format!("{}; {took:.2?}", r.detail),
    }
    r
}

// The tree of C_C in the three-prefix example, written out by hand.
fn expected_context_tree() -> Tree<NodeId> {
    let n = |k: usize, children: Vec<(Event, Tree<NodeId>)>| Tree {
        payload: NodeId(k),
        children,
    };
    let call = |a, b, z| Event::call(a, b, P, z);
    let ret = Event::ret;
    n(
        0,
        vec![(
            call(C_C, C_P, 40),
            n(
                1,
                vec![
                    (
                        call(C_P, C_C, 41),
                        n(
                            2,
                            vec![(
                                ret(C_C, C_P, 42),
                                n(3, vec![(ret(C_P, C_C, 43), n(4, vec![]))]),
                            )],
                        ),
                    ),
                    (ret(C_P, C_C, 43), n(5, vec![])),
                    (ret(C_P, C_C, 44), n(6, vec![])),
                ],
            ),
        )],
    )
}

fn example_golden() -> Verdict {
    let s = three_prefix_set();
    let p = match Pipeline::build(&s) {
        Ok(p) => p,
        Err(e) => return fail(format!("pipeline failed: {e}")),
    };
    if p.level2.context_trees[&C_C] != expected_context_tree() {
        return fail("numbered tree of C_C differs from the example");
    }
    let r = |from, event, to| FlatRule {
        from: NodeId(from),
        event,
        to: NodeId(to),
    };
    let expected_rules = vec![
        r(0, Event::call(C_C, C_P, P, 40), 1),
        r(1, Event::call(C_P, C_C, P, 41), 2),
        r(2, Event::ret(C_C, C_P, 42), 3),
        r(3, Event::ret(C_P, C_C, 43), 4),
        r(1, Event::ret(C_P, C_C, 43), 5),
        r(1, Event::ret(C_P, C_C, 44), 6),
    ];
    if p.level4.context.rules_of(C_C) != expected_rules.as_slice() {
        return fail("rules of C_C differ from the example");
    }
    let e2e = verify_end_to_end_with(&s, &p);
    for (i, run) in e2e.runs.iter().enumerate() {
        if run.emitted != s.traces[i] || run.outcome != Outcome::Halted || run.failure.is_some() {
            return fail(format!("m{} not emitted exactly: {:?}", i + 1, run.failure));
        }
    }
    if !e2e.all_exact() {
        return fail("end-to-end report not all-ok");
    }
    pass("ids 0-6, six rules, m1..m3 emitted exactly and halted")
}

fn single_trace() -> Verdict {
    let s = single_trace_set();
    let expected = parse_trace_set(
        "context C1: p\nprogram C2: p\nmain C1\ntrace\n\
         call C1 -> C2.p (40)\ncall C2 -> C1.p (41)\nret C1 -> C2 (42)\nret C2 -> C1 (42)\n",
    )
    .expect("literal parses");
    if s != expected {
        return fail("fixture differs from the literal trace");
    }
    let r = verify_end_to_end(&s);
    match r.runs.first() {
        Some(run) if r.all_exact() && run.emitted == expected.traces[0] => {
            pass("m1 ending with 42 emitted exactly")
        }
        other => fail(format!("{:?}", other.map(|r| &r.failure))),
    }
}

fn check_corpus_bounds(sets: &[(u64, GenParams, TraceSet)]) -> Option<String> {
    sets.iter().find_map(|(seed, _, s)| {
        let ok = s.traces.len() <= MAX.traces
            && s.traces.iter().all(|m| m.len() <= MAX.max_len)
            && s.compartments.len() <= MAX.compartments
            && s.compartments.iter().all(|c| c.procedures.len() <= MAX.procs);
        (!ok).then(|| format!("seed {seed} exceeds the parameter bounds"))
    })
}

fn corpus_replay(sets: &[(u64, GenParams, TraceSet)], pipelines: &[Pipeline]) -> Verdict {
    if let Some(e) = check_corpus_bounds(sets) {
        return fail(e);
    }
    let mut cells = 0;
    for ((seed, _, s), p) in sets.iter().zip(pipelines) {
        let r = verify_levels_with(s, p);
        for (i, row) in r.cells.iter().enumerate() {
            for cell in row {
                if let Err(e) = cell {
                    return fail(format!("seed {seed}, trace {i}: {e}"));
                }
                cells += 1;
            }
        }
    }
    pass(format!("{} sets, {cells} replays at levels 1-4", sets.len()))
}

fn corpus_end_to_end(sets: &[(u64, GenParams, TraceSet)], pipelines: &[Pipeline]) -> Verdict {
    let mut runs = 0;
    let mut events = 0;
    for ((seed, _, s), p) in sets.iter().zip(pipelines) {
        for i in 0..s.traces.len() {
            if ending(s, p, i) == Ending::Open {
                return fail(format!("seed {seed}, trace {i} ends open"));
            }
        }
        let r = verify_end_to_end(s);
        if !r.all_exact() {
            let bad = r.runs.iter().find(|r| !r.exact());
            return fail(format!(
                "seed {seed}: {:?} lint {:?} switches {:?}",
                bad.map(|r| (r.trace, &r.failure)),
                r.lint,
                r.switch_totality.failures
            ));
        }
        runs += r.runs.len();
        events += s.total_events();
    }
    pass(format!("{runs} programs, {events} events, exact emission, halted, loc/stack lock-step"))
}

fn corpus_invariants(sets: &[(u64, GenParams, TraceSet)], pipelines: &[Pipeline]) -> Verdict {
    let example = three_prefix_set();
    let example_pipeline = Pipeline::build(&example).expect("example builds");
    let all = sets
        .iter()
        .map(|(seed, _, s)| (Some(*seed), s))
        .zip(pipelines)
        .chain(std::iter::once(((None, &example), &example_pipeline)));
    let mut checks = 0;
    for ((seed, s), p) in all {
        for c in verify_levels_with(s, p).invariants {
            if !c.ok() {
                return fail(format!("seed {seed:?}: {} failed: {:?}", c.name, c.failures));
            }
            checks += 1;
        }
    }
    pass(format!("{checks} invariant checks, zero failures"))
}

fn cid(k: usize) -> CompartmentId {
    CompartmentId(k)
}

fn ill_formed_sets() -> Vec<(&'static str, TraceSet, Clause, (usize, usize))> {
    let text = |t: &str| parse_trace_set(t).expect("negative examples parse");
    let two = "context C_C: p\nprogram C_P: p\nmain C_C\n";
    let three = "context A: p\nprogram B: p\nprogram D: p\nmain A\n";
    let mut v = vec![
        (
            "caller keeps control after a call",
            text(&format!("{two}trace\ncall C_C -> C_P.p (40)\ncall C_C -> C_P.p (41)\n")),
            Clause::ControlFlow,
            (0, 1),
        ),
        (
            "first event not emitted by main",
            text(&format!("{two}trace\ncall C_P -> C_C.p (1)\n")),
            Clause::ControlFlow,
            (0, 0),
        ),
        (
            "return emitted by the caller",
            text(&format!("{two}trace\ncall C_C -> C_P.p (40)\nret C_C -> C_P (1)\n")),
            Clause::ControlFlow,
            (0, 1),
        ),
        (
            "return on an empty stack",
            text(&format!("{two}trace\nret C_C -> C_P (1)\n")),
            Clause::Bracketing,
            (0, 0),
        ),
        (
            "second return after the only call returned",
            text(&format!(
                "{three}trace\ncall A -> B.p (0)\nret B -> A (1)\nret A -> B (2)\n"
            )),
            Clause::Bracketing,
            (0, 2),
        ),
        (
            "return skipping a frame",
            text(&format!(
                "{three}trace\ncall A -> B.p (0)\ncall B -> D.p (1)\nret D -> A (2)\n"
            )),
            Clause::Bracketing,
            (0, 2),
        ),
        (
            "context answers one history two ways",
            text(&format!("{two}trace\ncall C_C -> C_P.p (40)\ntrace\ncall C_C -> C_P.p (41)\n")),
            Clause::Determinacy,
            (1, 0),
        ),
        (
            "context diverges after a shared return",
            text(&format!(
                "{two}trace\ncall C_C -> C_P.p (40)\nret C_P -> C_C (1)\ncall C_C -> C_P.p (5)\n\
                 trace\ncall C_C -> C_P.p (40)\nret C_P -> C_C (1)\ncall C_C -> C_P.p (6)\n"
            )),
            Clause::Determinacy,
            (1, 2),
        ),
        (
            "context diverges on equal filtered histories",
            text(&format!(
                "{three}trace\ncall A -> B.p (0)\ncall B -> D.p (1)\nret D -> B (2)\nret B -> A (1)\ncall A -> B.p (5)\n\
                 trace\ncall A -> B.p (0)\nret B -> A (1)\ncall A -> B.p (6)\n"
            )),
            Clause::Determinacy,
            (1, 2),
        ),
        (
            "two callers indistinguishable to the context",
            text(&format!(
                "{three}trace\ncall A -> B.p (0)\ncall B -> A.p (7)\n\
                 trace\ncall A -> B.p (0)\ncall B -> D.p (1)\ncall D -> A.p (7)\n"
            )),
            Clause::Determinacy,
            (1, 2),
        ),
        (
            "self call",
            text(&format!("{two}trace\ncall C_C -> C_C.p (1)\n")),
            Clause::Structure,
            (0, 0),
        ),
    ];
    // Undeclared procedures cannot be written in the text format, which
    // resolves names; they are built directly.
    let mut undeclared = three_prefix_set();
    undeclared.traces = vec![Trace(vec![Event::call(C_C, C_P, ProcedureId(3), 40)])];
    v.push(("call to an undeclared procedure", undeclared, Clause::Interface, (0, 0)));
    let mut internal = three_prefix_set();
    internal.traces = vec![
        Trace(vec![Event::call(C_C, C_P, P, 40), Event::ret(C_P, C_C, 1)]),
        Trace(vec![Event::call(C_C, C_P, P, 40), Event::call(C_P, C_C, ProcedureId(1), 0)]),
    ];
    v.push(("call to the slot of the internal procedure", internal, Clause::Interface, (1, 1)));
    let mut unknown = three_prefix_set();
    unknown.traces = vec![Trace(vec![Event::call(C_C, cid(7), P, 40)])];
    v.push(("event naming an undeclared compartment", unknown, Clause::Structure, (0, 0)));
    v
}

fn rejects_ill_formed() -> Verdict {
    let sets = ill_formed_sets();
    for (name, s, clause, at) in &sets {
        let err = match check_well_formed(s) {
            Ok(()) => return fail(format!("accepted: {name}")),
            Err(e) => e,
        };
        if err.clause() != *clause || err.location() != Some(*at) {
            return fail(format!(
                "{name}: expected {clause} at {at:?}, got {} at {:?} ({err})",
                err.clause(),
                err.location()
            ));
        }
        match back_translate(s) {
            Err(PipelineError::WellFormedness(e)) if e == err => {}
            Err(other) => return fail(format!("{name}: unexpected pipeline error {other}")),
            Ok(_) => return fail(format!("{name}: reached code generation")),
        }
        let r = verify_end_to_end(s);
        if r.error.is_none() || !r.runs.is_empty() {
            return fail(format!("{name}: end-to-end ran programs"));
        }
    }
    pass(format!("{} ill-formed sets rejected with the expected clause", sets.len()))
}

fn source_round_trip(sets: &[(u64, GenParams, TraceSet)]) -> Verdict {
    let mut n = 0;
    for seed in 0..CORPUS {
        let p = random_program(seed);
        match parse_program(&pretty(&p)) {
            Ok(q) if q == p => n += 1,
            Ok(_) => return fail(format!("program {seed} changed after a round trip")),
            Err(e) => return fail(format!("program {seed} does not reparse: {e}")),
        }
    }
    let mut generated = 0;
    for (seed, _, s) in sets.iter().take(100) {
        let bt = back_translate(s).expect("corpus is well-formed");
        for i in 0..s.traces.len() {
            let p = bt.link(i);
            if parse_program(&pretty(&p)).as_ref() != Ok(&p) {
                return fail(format!("generated program {seed}/{i} changed after a round trip"));
            }
            generated += 1;
        }
    }
    pass(format!("{n} random and {generated} generated programs round-trip"))
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    results.push(("1 three-prefix golden", timed(Some(EXAMPLE_LIMIT), example_golden)));
    results.push(("2 single trace", timed(Some(SINGLE_LIMIT), single_trace)));

    let mut sets = Vec::new();
    let mut pipelines: Vec<Pipeline> = Vec::new();
    results.push((
        "3 corpus replay",
        timed(Some(REPLAY_LIMIT), || {
            sets = corpus();
            for (seed, _, s) in &sets {
                match Pipeline::build(s) {
                    Ok(p) => pipelines.push(p),
                    Err(e) => return fail(format!("seed {seed} is ill-formed: {e}")),
                }
            }
            corpus_replay(&sets, &pipelines)
        }),
    ));
    results.push((
        "4 corpus end-to-end",
        timed(Some(END_TO_END_LIMIT), || corpus_end_to_end(&sets, &pipelines)),
    ));
    results.push((
        "5 invariants",
        timed(None, || corpus_invariants(&sets, &pipelines)),
    ));
    results.push(("6 ill-formed rejected", timed(None, rejects_ill_formed)));
    results.push(("7 source round trip", timed(None, || source_round_trip(&sets))));

    let mut failed = 0;
    for (name, r) in &results {
        println!("{} [{name}] {}", if r.ok { "PASS" } else { "FAIL" }, r.detail);
        failed += !r.ok as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
