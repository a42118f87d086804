//! Random well-formed trace sets and random source programs.
//!
//! Trace sets are produced by simulating compartments. Each context
//! compartment follows one strategy for the whole set: its next event is a
//! memoized function of its own filtered history. Program compartments
//! choose freely, independently in every trace. Determinacy therefore holds
//! by construction.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::source::{CompartmentCode, Expr, Procedure, Slot, SourceProgram, Stmt};
use crate::trace::{
    filter_for_compartment, AbstractStack, Compartment, CompartmentId, Event, ProcedureId, Role,
    Trace, TraceSet,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenParams {
    /// Number of traces.
    pub traces: usize,
    /// Length bound of every trace.
    pub max_len: usize,
    /// Number of compartments, at least 2.
    pub compartments: usize,
    /// Maximum number of procedures per compartment, at least 1.
    pub procs: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            traces: 3,
            max_len: 16,
            compartments: 3,
            procs: 2,
        }
    }
}

impl GenParams {
    /// Parameters drawn uniformly up to the given maxima.
    pub fn sample(seed: u64, max: GenParams) -> GenParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
        GenParams {
            traces: rng.random_range(1..=max.traces.max(1)),
            max_len: rng.random_range(0..=max.max_len),
            compartments: rng.random_range(2..=max.compartments.max(2)),
            procs: rng.random_range(1..=max.procs.max(1)),
        }
    }
}

// Chance that a compartment in control stops the trace.
const STOP: f64 = 0.03;
// Chance of returning rather than calling when a return is possible.
const RETURN: f64 = 0.45;
// Arguments are `caller * ARG_STRIDE + r` with `r < ARG_SPREAD`, so that
// calls from different callers never carry the same argument.
const ARG_STRIDE: i64 = 10;
const ARG_SPREAD: i64 = 3;
const RET_SPREAD: i64 = 3;

struct Sim<'a> {
    comps: &'a [Compartment],
    rng: ChaCha8Rng,
}

impl Sim<'_> {
    fn choose(&mut self, cur: CompartmentId, stack: &AbstractStack) -> Option<Event> {
        if self.rng.random_bool(STOP) {
            return None;
        }
        if let Some(top) = stack.top() {
            if self.rng.random_bool(RETURN) {
                debug_assert_eq!(top.callee, cur);
                return Some(Event::ret(cur, top.caller, self.rng.random_range(0..RET_SPREAD)));
            }
        }
        let mut dst = self.rng.random_range(0..self.comps.len() - 1);
        if dst >= cur.0 {
            dst += 1;
        }
        let proc = self.rng.random_range(0..self.comps[dst].procedures.len());
        let arg = cur.0 as i64 * ARG_STRIDE + self.rng.random_range(0..ARG_SPREAD);
        Some(Event::call(cur, CompartmentId(dst), ProcedureId(proc), arg))
    }
}

/// A well-formed trace set in which every trace that ends with a context
/// compartment in control ends where that compartment's strategy stops.
pub fn generate_trace_set(seed: u64, params: GenParams) -> TraceSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.compartments.max(2);
    let mut roles: Vec<Role> = (0..n)
        .map(|_| {
            if rng.random_bool(0.5) {
                Role::Context
            } else {
                Role::Program
            }
        })
        .collect();
    if !roles.contains(&Role::Context) {
        roles[rng.random_range(0..n)] = Role::Context;
    }
    if !roles.contains(&Role::Program) {
        let k = (0..n).find(|&k| roles[k] == Role::Context).unwrap();
        roles[(k + 1 + rng.random_range(0..n - 1)) % n] = Role::Program;
    }
    let compartments: Vec<Compartment> = roles
        .into_iter()
        .enumerate()
        .map(|(k, role)| Compartment {
            name: format!("C{k}"),
            role,
            procedures: (0..rng.random_range(1..=params.procs.max(1)))
                .map(|j| format!("p{j}"))
                .collect(),
        })
        .collect();
    let main = CompartmentId(rng.random_range(0..n));

    let mut memo: HashMap<(CompartmentId, Trace), Option<Event>> = HashMap::new();
    let mut sim = Sim {
        comps: &compartments,
        rng,
    };
    let mut traces = Vec::new();
    for _ in 0..params.traces {
        let bound = sim.rng.random_range(0..=params.max_len);
        let mut m: Vec<Event> = Vec::new();
        let mut stack = AbstractStack::new();
        let mut cur = main;
        loop {
            let is_context = compartments[cur.0].role == Role::Context;
            if m.len() == bound {
                if is_context {
                    let key = (cur, filter_for_compartment(&m, cur));
                    if let Some(Some(_)) = memo.get(&key) {
                        // Another trace continues from here; cut back to a
                        // point where a program compartment had control.
                        let in_control =
                            |k: usize| if k == 0 { main } else { m[k - 1].dst() };
                        match (0..m.len())
                            .rev()
                            .find(|&k| compartments[in_control(k).0].role == Role::Program)
                        {
                            Some(k) => m.truncate(k),
                            None => m.clear(),
                        }
                    } else {
                        memo.insert(key, None);
                    }
                }
                break;
            }
            let next = if is_context {
                let key = (cur, filter_for_compartment(&m, cur));
                match memo.get(&key) {
                    Some(choice) => *choice,
                    None => {
                        let choice = sim.choose(cur, &stack);
                        memo.insert(key, choice);
                        choice
                    }
                }
            } else {
                sim.choose(cur, &stack)
            };
            let Some(e) = next else { break };
            let ok = stack.apply(&e);
            debug_assert!(ok);
            m.push(e);
            cur = e.dst();
        }
        traces.push(Trace(m));
    }
    let mut s = TraceSet {
        compartments,
        main,
        traces,
    };
    drop_open_endings(&mut s, &memo);
    s
}

// A trace emptied by the cut above may still end open when the main
// compartment is a context one that moves first; such traces are removed.
fn drop_open_endings(s: &mut TraceSet, memo: &HashMap<(CompartmentId, Trace), Option<Event>>) {
    let main = s.main;
    let roles: Vec<Role> = s.compartments.iter().map(|c| c.role).collect();
    s.traces.retain(|m| {
        let cur = m.last().map_or(main, |e| e.dst());
        roles[cur.0] == Role::Program
            || !matches!(memo.get(&(cur, filter_for_compartment(m, cur))), Some(Some(_)))
    });
}

/// A random closed source program with right-nested sequences.
pub fn random_program(seed: u64) -> SourceProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let shape: Vec<usize> = (0..n).map(|_| rng.random_range(1..=3)).collect();
    let compartments = shape
        .iter()
        .enumerate()
        .map(|(k, &np)| CompartmentCode {
            name: format!("K{k}"),
            procedures: (0..np)
                .map(|j| Procedure {
                    name: format!("f{j}"),
                    body: random_stmt(&mut rng, &shape, 3),
                })
                .collect(),
        })
        .collect();
    let mc = rng.random_range(0..n);
    let mp = rng.random_range(0..shape[mc]);
    SourceProgram {
        compartments,
        main: (CompartmentId(mc), ProcedureId(mp)),
    }
}

fn random_slot(rng: &mut ChaCha8Rng) -> Slot {
    Slot::ALL[rng.random_range(0..3)]
}

fn random_expr(rng: &mut ChaCha8Rng, depth: u32) -> Expr {
    let pick = if depth == 0 {
        rng.random_range(0..3)
    } else {
        rng.random_range(0..5)
    };
    match pick {
        0 => Expr::Int(rng.random_range(-5..50)),
        1 => Expr::Var(random_slot(rng)),
        2 => Expr::Arg,
        3 => Expr::eq(random_expr(rng, depth - 1), random_expr(rng, depth - 1)),
        _ => Expr::and(random_expr(rng, depth - 1), random_expr(rng, depth - 1)),
    }
}

fn random_stmt(rng: &mut ChaCha8Rng, shape: &[usize], depth: u32) -> Stmt {
    let len = rng.random_range(1..=4);
    Stmt::block((0..len).map(|_| random_simple(rng, shape, depth)).collect::<Vec<_>>())
}

fn random_simple(rng: &mut ChaCha8Rng, shape: &[usize], depth: u32) -> Stmt {
    let pick = if depth == 0 {
        rng.random_range(0..5)
    } else {
        rng.random_range(0..7)
    };
    match pick {
        0 => Stmt::Assign(random_slot(rng), random_expr(rng, 2)),
        1 => {
            let dst = rng.random_range(0..shape.len());
            Stmt::CallStore {
                dst: CompartmentId(dst),
                proc: ProcedureId(rng.random_range(0..shape[dst])),
                arg: random_expr(rng, 1),
            }
        }
        2 => Stmt::Return(random_expr(rng, 2)),
        3 => Stmt::Exit,
        4 => Stmt::Skip,
        5 => Stmt::if_(
            random_expr(rng, 2),
            random_stmt(rng, shape, depth - 1),
            Stmt::Skip,
        ),
        _ => Stmt::if_(
            random_expr(rng, 2),
            random_stmt(rng, shape, depth - 1),
            if rng.random_bool(0.5) {
                random_simple(rng, shape, depth - 1)
            } else {
                random_stmt(rng, shape, depth - 1)
            },
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::check_well_formed;

    #[test]
    fn deterministic_generation() {
        let p = GenParams::default();
        assert_eq!(generate_trace_set(7, p), generate_trace_set(7, p));
        assert_eq!(random_program(7), random_program(7));
    }

    #[test]
    fn generated_sets_are_well_formed() {
        for seed in 0..200 {
            let p = GenParams::sample(seed, GenParams {
                traces: 8,
                max_len: 32,
                compartments: 6,
                procs: 3,
            });
            let s = generate_trace_set(seed, p);
            assert_eq!(check_well_formed(&s), Ok(()), "seed {seed}\n{s}");
            assert!(s.traces.iter().all(|m| m.len() <= p.max_len));
            assert!(s.compartments.iter().any(|c| c.role == Role::Context));
            assert!(s.compartments.iter().any(|c| c.role == Role::Program));
        }
    }

    #[test]
    fn single_trace_regime() {
        let s = generate_trace_set(3, GenParams { traces: 1, ..GenParams::default() });
        assert!(s.traces.len() <= 1);
    }

    #[test]
    fn random_programs_are_closed_and_right_nested() {
        for seed in 0..100 {
            let p = random_program(seed);
            assert!(p.check_closed().is_ok());
            assert!(p
                .compartments
                .iter()
                .flat_map(|c| &c.procedures)
                .all(|q| q.body.is_right_nested()));
        }
    }
}
