//! Reference trace sets used by tests, golden files and the CLI examples.

use crate::trace::{
    Compartment, CompartmentId, Event, ProcedureId, Role, Trace, TraceSet,
};

pub const C_C: CompartmentId = CompartmentId(0);
pub const C_P: CompartmentId = CompartmentId(1);
pub const P: ProcedureId = ProcedureId(0);

/// Three prefixes sharing `call C_C -> C_P.p (40)` and diverging while the
/// program has control. The first prefix ends with return value 43.
pub const THREE_PREFIX_TEXT: &str = "\
# three prefixes against one context
context C_C: p
program C_P: p
main C_C

trace
call C_C -> C_P.p (40)
call C_P -> C_C.p (41)
ret C_C -> C_P (42)
ret C_P -> C_C (43)

trace
call C_C -> C_P.p (40)
ret C_P -> C_C (43)

trace
call C_C -> C_P.p (40)
ret C_P -> C_C (44)
";

/// The single prefix of the counter-based scheme, ending with value 42.
pub const SINGLE_TRACE_TEXT: &str = "\
context C1: p
program C2: p
main C1

trace
call C1 -> C2.p (40)
call C2 -> C1.p (41)
ret C1 -> C2 (42)
ret C2 -> C1 (42)
";

fn two_compartments(context: &str, program: &str) -> Vec<Compartment> {
    vec![
        Compartment {
            name: context.to_string(),
            role: Role::Context,
            procedures: vec!["p".to_string()],
        },
        Compartment {
            name: program.to_string(),
            role: Role::Program,
            procedures: vec!["p".to_string()],
        },
    ]
}

pub fn three_prefix_set() -> TraceSet {
    let call = |a, b, z| Event::call(a, b, P, z);
    let ret = Event::ret;
    TraceSet {
        compartments: two_compartments("C_C", "C_P"),
        main: C_C,
        traces: vec![
            Trace(vec![
                call(C_C, C_P, 40),
                call(C_P, C_C, 41),
                ret(C_C, C_P, 42),
                ret(C_P, C_C, 43),
            ]),
            Trace(vec![call(C_C, C_P, 40), ret(C_P, C_C, 43)]),
            Trace(vec![call(C_C, C_P, 40), ret(C_P, C_C, 44)]),
        ],
    }
}

pub fn single_trace_set() -> TraceSet {
    let (c1, c2) = (CompartmentId(0), CompartmentId(1));
    TraceSet {
        compartments: two_compartments("C1", "C2"),
        main: c1,
        traces: vec![Trace(vec![
            Event::call(c1, c2, P, 40),
            Event::call(c2, c1, P, 41),
            Event::ret(c1, c2, 42),
            Event::ret(c2, c1, 42),
        ])],
    }
}
