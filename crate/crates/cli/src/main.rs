use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use nanobt::codegen::back_translate_with;
use nanobt::dump::dump_level;
use nanobt::harness::{
    generate_trace_set, verify_end_to_end_with, verify_levels_with, Ending,
    EndToEndReport, GenParams, LevelsReport,
};
use nanobt::lex::tokenize;
use nanobt::passes::Pipeline;
use nanobt::replay::Level;
use nanobt::source::{parse_program, pretty_fragment, run_source, Outcome};
use nanobt::trace::{check_well_formed, parse_trace_set, TraceSet};

#[derive(Parser)]
#[command(name = "nanobt", version, about = "Back-translate finite trace sets into source programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that a trace set is well formed.
    Check { traces: PathBuf },
    /// Back-translate a trace set into source files.
    Build {
        traces: PathBuf,
        /// Output directory; without it everything goes to stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write the dump of one intermediate level.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        dump_level: Option<u8>,
        /// Also write the dumps of all four levels.
        #[arg(long)]
        dump: bool,
    },
    /// Run a source program; several files are concatenated.
    Run {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        bound: usize,
    },
    /// Replay a trace set at every level and run its back-translation.
    Verify {
        traces: PathBuf,
        #[arg(long)]
        levels: bool,
        #[arg(long)]
        end_to_end: bool,
    },
    /// Verify randomly generated trace sets.
    Fuzz {
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// First seed.
        #[arg(long, default_value_t = 0)]
        start: u64,
        /// Maximum number of traces per set.
        #[arg(long = "K", default_value_t = 8)]
        k: usize,
        /// Maximum trace length.
        #[arg(long, default_value_t = 32)]
        len: usize,
        /// Maximum number of compartments.
        #[arg(long, default_value_t = 6)]
        comps: usize,
        /// Maximum number of procedures per compartment.
        #[arg(long, default_value_t = 3)]
        procs: usize,
        /// One JSON record per check on stdout.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check { traces } => check(&traces),
        Command::Build {
            traces,
            output,
            dump_level,
            dump,
        } => build(&traces, output.as_deref(), dump_level, dump),
        Command::Run { files, bound } => run(&files, bound),
        Command::Verify {
            traces,
            levels,
            end_to_end,
        } => verify(&traces, levels || !end_to_end, end_to_end || !levels),
        Command::Fuzz {
            seeds,
            start,
            k,
            len,
            comps,
            procs,
            json,
        } => fuzz(
            start..start + seeds,
            GenParams {
                traces: k,
                max_len: len,
                compartments: comps,
                procs,
            },
            json,
        ),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load(path: &Path) -> Result<TraceSet> {
    parse_trace_set(&read(path)?).with_context(|| format!("{}", path.display()))
}

fn check(path: &Path) -> Result<bool> {
    let s = load(path)?;
    match check_well_formed(&s) {
        Ok(()) => {
            println!("ok: {} traces, {} events", s.traces.len(), s.total_events());
            Ok(true)
        }
        Err(e) => {
            println!("{e}");
            Ok(false)
        }
    }
}

fn build(path: &Path, out: Option<&Path>, level: Option<u8>, all: bool) -> Result<bool> {
    let s = load(path)?;
    let p = match Pipeline::build(&s) {
        Ok(p) => p,
        Err(e) => {
            println!("{e}");
            return Ok(false);
        }
    };
    let bt = back_translate_with(&s, &p);
    let mut files: Vec<(String, String)> = Vec::new();
    let context = s.context();
    let programs = s.programs();
    for i in 0..s.traces.len() {
        let linked = bt.link(i);
        if i == 0 {
            files.push(("context.src".into(), pretty_fragment(&linked, &context, true)));
        }
        files.push((format!("program_{i}.src"), pretty_fragment(&linked, &programs, false)));
    }
    let levels: Vec<Level> = if all {
        Level::ALL.to_vec()
    } else {
        level.map(|n| Level::from_number(n).expect("range checked")).into_iter().collect()
    };
    for l in levels {
        files.push((format!("level{}.dump", l.number()), dump_level(&s, &p, l)));
    }
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            for (name, text) in &files {
                let f = dir.join(name);
                fs::write(&f, text).with_context(|| format!("cannot write {}", f.display()))?;
            }
        }
        None => {
            for (k, (name, text)) in files.iter().enumerate() {
                if k > 0 {
                    println!();
                }
                println!("// {name}");
                print!("{text}");
            }
        }
    }
    Ok(true)
}

fn run(files: &[PathBuf], bound: usize) -> Result<bool> {
    let mut text = String::new();
    for f in files {
        text.push_str(&read(f)?);
        text.push('\n');
    }
    let empty = tokenize(&text).map(|t| t.is_empty()).unwrap_or(false);
    if empty {
        return Ok(true);
    }
    let prog = parse_program(&text).context("cannot parse program")?;
    let r = run_source(&prog, bound);
    for e in r.emitted.iter() {
        println!("{}", e.display(&prog));
    }
    match r.outcome {
        Outcome::Halted => Ok(true),
        Outcome::Stuck(e) => {
            eprintln!("stuck after {} steps: {e}", r.steps);
            Ok(false)
        }
        Outcome::BoundExceeded => {
            eprintln!("step bound {bound} exceeded");
            Ok(false)
        }
    }
}

fn levels_text(r: &LevelsReport) -> String {
    let mut out = String::new();
    for (i, row) in r.cells.iter().enumerate() {
        write!(out, "trace {i}:").unwrap();
        for (l, cell) in Level::ALL.iter().zip(row) {
            write!(out, " {l} {}", if cell.is_ok() { "ok" } else { "FAIL" }).unwrap();
        }
        out.push('\n');
        for e in row.iter().filter_map(|c| c.as_ref().err()) {
            writeln!(out, "  {e}").unwrap();
        }
    }
    for c in &r.invariants {
        writeln!(out, "{}: {}", c.name, if c.ok() { "ok" } else { "FAIL" }).unwrap();
        for f in &c.failures {
            writeln!(out, "  {f}").unwrap();
        }
    }
    out
}

fn end_to_end_text(s: &TraceSet, r: &EndToEndReport) -> String {
    let mut out = String::new();
    for run in &r.runs {
        let status = match (&run.failure, run.ending) {
            (Some(f), _) => format!("FAIL {f}"),
            (None, Ending::Closed) => "exact".to_string(),
            (None, Ending::Open) => "prefix (open ending)".to_string(),
        };
        writeln!(
            out,
            "run {}: {status}, {} of {} events, {} steps",
            run.trace,
            run.emitted.len(),
            s.traces[run.trace].len(),
            run.steps
        )
        .unwrap();
    }
    for l in &r.lint {
        writeln!(out, "lint: {l}").unwrap();
    }
    let t = &r.switch_totality;
    writeln!(out, "{}: {}", t.name, if t.ok() { "ok" } else { "FAIL" }).unwrap();
    for f in &t.failures {
        writeln!(out, "  {f}").unwrap();
    }
    out
}

fn verify(path: &Path, levels: bool, end_to_end: bool) -> Result<bool> {
    let s = load(path)?;
    let p = match Pipeline::build(&s) {
        Ok(p) => p,
        Err(e) => {
            println!("{e}");
            return Ok(false);
        }
    };
    let mut ok = true;
    if levels {
        let r = verify_levels_with(&s, &p);
        print!("{}", levels_text(&r));
        ok &= r.all_ok();
    }
    if end_to_end {
        let r = verify_end_to_end_with(&s, &p);
        print!("{}", end_to_end_text(&s, &r));
        ok &= r.all_ok();
    }
    println!("{}", if ok { "all ok" } else { "FAILED" });
    Ok(ok)
}

#[derive(Serialize)]
struct Record {
    seed: u64,
    check: String,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<String>,
}

impl Record {
    fn new(seed: u64, check: impl Into<String>, ok: bool, detail: Option<String>) -> Self {
        Record {
            seed,
            check: check.into(),
            ok,
            detail,
        }
    }
}

fn fuzz_one(seed: u64, max: GenParams) -> Vec<Record> {
    let s = generate_trace_set(seed, GenParams::sample(seed, max));
    let wf = check_well_formed(&s);
    let mut out = vec![Record::new(seed, "well_formed", wf.is_ok(), wf.err().map(|e| e.to_string()))];
    let p = match Pipeline::build(&s) {
        Ok(p) => p,
        Err(e) => {
            out.push(Record::new(seed, "pipeline", false, Some(e.to_string())));
            return out;
        }
    };
    let levels = verify_levels_with(&s, &p);
    for (l, level) in Level::ALL.iter().enumerate() {
        let failed: Vec<String> = levels
            .cells
            .iter()
            .filter_map(|row| row[l].as_ref().err().map(|e| e.to_string()))
            .collect();
        let detail = failed.first().cloned();
        out.push(Record::new(seed, format!("replay_{level}"), failed.is_empty(), detail));
    }
    for c in &levels.invariants {
        out.push(Record::new(seed, c.name, c.ok(), c.failures.first().cloned()));
    }
    let e2e = verify_end_to_end_with(&s, &p);
    let failure = e2e
        .runs
        .iter()
        .find_map(|r| r.failure.as_ref().map(|f| format!("run {}: {f}", r.trace)))
        .or_else(|| e2e.lint.first().map(|l| format!("lint: {l}")))
        .or_else(|| e2e.switch_totality.failures.first().cloned());
    out.push(Record::new(seed, "end_to_end", e2e.all_ok(), failure));
    let open = e2e.runs.iter().filter(|r| r.ending == Ending::Open).count();
    out.push(Record::new(
        seed,
        "exact_emission",
        e2e.all_exact(),
        (open > 0).then(|| format!("{open} open endings")),
    ));
    out
}

fn fuzz(seeds: std::ops::Range<u64>, max: GenParams, json: bool) -> Result<bool> {
    if max.compartments < 2 {
        bail!("--comps must be at least 2");
    }
    if max.traces == 0 || max.procs == 0 {
        bail!("--K and --procs must be at least 1");
    }
    let n = seeds.end - seeds.start;
    let records: Vec<Record> = seeds
        .into_par_iter()
        .flat_map_iter(|seed| fuzz_one(seed, max))
        .collect();
    let failures: Vec<&Record> = records.iter().filter(|r| !r.ok).collect();
    if json {
        let mut stdout = io::stdout().lock();
        for r in &records {
            if writeln!(stdout, "{}", serde_json::to_string(r)?).is_err() {
                break;
            }
        }
    } else {
        for r in &failures {
            println!(
                "seed {} {}: FAIL {}",
                r.seed,
                r.check,
                r.detail.as_deref().unwrap_or("")
            );
        }
        println!("{n} seeds, {} checks, {} failures", records.len(), failures.len());
    }
    Ok(failures.is_empty())
}
