//! `evmsem`: run fixtures, check security properties, assemble and
//! disassemble bytecode, and translate state tests into fixtures.
//!
//! Exit codes: 0 on success, a match, or a property that holds; 1 on a
//! mismatch or a violated property; 2 on usage and parse errors.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use evmsem::bytecode::{assemble_text, format_disasm};
use evmsem::checkers::{check, replay, IntegrityMode, Property};
use evmsem::fixtures::{ingest_official_tests, load_variants, ExpectedResult, Fixture, LoadedFixture};
use evmsem::semantics::RunError;
use evmsem::state::{EnvComponent, GlobalState};
use evmsem::traces::write_jsonl;
use evmsem::words::{from_hex, to_hex, Address, Word256};

#[derive(Parser)]
#[command(name = "evmsem", version, about = "Executable EVM semantics and security checkers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a fixture's transactions and print the receipt.
    Run(RunArgs),
    /// Check a security property of a contract in a fixture's scenario.
    Check(CheckArgs),
    /// Assemble a program (use `-` for stdin) and print the bytecode as hex.
    Asm { input: PathBuf },
    /// Disassemble hex bytecode given inline (`0x…`) or in a file.
    Disasm { input: String },
    /// Translate a directory of state tests into fixtures.
    Ingest {
        dir: PathBuf,
        /// Write one fixture file per case into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    fixture: PathBuf,
    /// Dump the trace as JSON lines, to stdout or to the given file.
    #[arg(long, num_args = 0..=1, default_missing_value = "-")]
    trace: Option<PathBuf>,
    /// Compare the outcome with the fixture's expectations.
    #[arg(long)]
    expect: bool,
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Direct,
    Theorem1,
}

#[derive(Args)]
struct CheckArgs {
    property: String,
    fixture: PathBuf,
    /// The analysed contract; defaults to the fixture's, then to the transaction target.
    #[arg(long)]
    contract: Option<Address>,
    #[arg(long, value_delimiter = ',')]
    untrusted: Option<Vec<Address>>,
    #[arg(long, value_delimiter = ',')]
    allowed: Option<Vec<Address>>,
    #[arg(long, value_delimiter = ',')]
    gas_values: Option<Vec<Word256>>,
    /// Environment components to vary; values come from the fixture.
    #[arg(long, value_delimiter = ',')]
    component: Vec<String>,
    /// Directory of code variants named `0x<address>[_suffix].{asm,hex}`.
    #[arg(long)]
    variants: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Ignore the gas operand of calls when comparing traces.
    #[arg(long)]
    relaxed_gas: bool,
    /// Compare the verdict with the fixture's expectation.
    #[arg(long)]
    expect: bool,
}

/// A failure reported with exit code 2.
struct UsageError(anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for UsageError {
    fn from(e: E) -> Self {
        UsageError(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Asm { input } => cmd_asm(&input),
        Cmd::Disasm { input } => cmd_disasm(&input),
        Cmd::Ingest { dir, out } => cmd_ingest(&dir, out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(UsageError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path, max_steps: Option<u64>) -> Result<LoadedFixture> {
    let mut f = Fixture::load(path)?;
    if let Some(n) = max_steps {
        f.fixture.checker_params.max_steps = Some(n);
    }
    Ok(f)
}

fn print_json(v: &Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn accounts_json(sigma: &GlobalState) -> Value {
    let mut m = serde_json::Map::new();
    for (a, acc) in sigma.iter() {
        let storage: BTreeMap<String, String> =
            acc.storage.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        m.insert(a.to_string(), json!({ "balance": acc.balance, "nonce": acc.nonce, "storage": storage }));
    }
    Value::Object(m)
}

fn cmd_run(a: RunArgs) -> Result<ExitCode, UsageError> {
    let f = load(&a.fixture, a.max_steps)?;
    let out = match f.execute() {
        Ok(out) => out,
        Err(RunError::BudgetExhausted(run)) => {
            print_json(&json!({ "fixture": f.fixture.name, "interrupted": true, "steps": run.steps }))?;
            return Err(anyhow!("step budget of {} exhausted", f.budget().max_steps).into());
        }
        Err(e) => return Err(e.into()),
    };
    let mismatches = if a.expect { f.mismatches(&out)? } else { Vec::new() };
    let mut report = json!({
        "fixture": f.fixture.name,
        "receipt": out.receipt,
        "steps": out.steps,
        "post": accounts_json(&out.post),
    });
    if a.expect {
        report["mismatches"] = json!(mismatches);
    }
    print_json(&report)?;
    match a.trace.as_deref() {
        Some(p) if p == Path::new("-") => write_jsonl(&out.trace, io::stdout().lock())?,
        Some(p) => {
            let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write_jsonl(&out.trace, BufWriter::new(file))?;
        }
        None => {}
    }
    Ok(if mismatches.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_check(a: CheckArgs) -> Result<ExitCode, UsageError> {
    let property = Property::parse(&a.property).ok_or_else(|| {
        let names: Vec<_> = Property::ALL.iter().map(|p| p.name()).collect();
        anyhow!("unknown property `{}` (expected one of {})", a.property, names.join(", "))
    })?;
    let f = load(&a.fixture, a.max_steps)?;
    let c = a
        .contract
        .or_else(|| f.contract())
        .ok_or_else(|| anyhow!("no contract given and the transaction has no target"))?;
    let mut space = f.space();
    let mut params = f.params();
    if let Some(u) = a.untrusted {
        params.untrusted = u.into_iter().collect();
    }
    if let Some(al) = a.allowed {
        params.allowed = al.into_iter().collect();
    }
    if let Some(g) = a.gas_values {
        space.gas_values = g;
    }
    if !a.component.is_empty() {
        params.components = a
            .component
            .iter()
            .map(|s| EnvComponent::parse(s).ok_or_else(|| anyhow!("unknown environment component `{s}`")))
            .collect::<Result<_>>()?;
        for comp in &params.components {
            if !space.env_values.contains_key(comp) {
                return Err(anyhow!("the fixture gives no values for `{}`", comp.name()).into());
            }
        }
    }
    if let Some(dir) = &a.variants {
        for (addr, codes) in load_variants(dir)? {
            space.variants.entry(addr).or_default().extend(codes);
        }
    }
    if let Some(m) = a.mode {
        params.mode = match m {
            ModeArg::Direct => IntegrityMode::Direct,
            ModeArg::Theorem1 => IntegrityMode::Theorem1,
        };
    }
    space.relaxed_gas |= a.relaxed_gas;

    let verdict = check(&space, property, c, &params)?;
    let replayed = match verdict.witness() {
        Some(w) => Some(replay(&space, property, c, &params, w)?),
        None => None,
    };
    let mut report = serde_json::to_value(&verdict).context("serializing verdict")?;
    if let Some(r) = replayed {
        report["replayed"] = json!(r);
    }
    let code = if a.expect {
        let expected = f
            .expected_verdicts()?
            .into_iter()
            .find(|(p, m, _)| *p == property && (property != Property::CallIntegrity || *m == params.mode))
            .map(|(_, _, r)| r)
            .ok_or_else(|| anyhow!("the fixture has no expectation for {property}"))?;
        let matched = (expected == ExpectedResult::Holds) == verdict.holds();
        report["expected"] = json!(expected);
        report["matches"] = json!(matched);
        matched
    } else {
        verdict.holds()
    };
    print_json(&report)?;
    Ok(if code { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_asm(input: &Path) -> Result<ExitCode, UsageError> {
    let (name, text) = if input == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        ("<stdin>".to_string(), s)
    } else {
        let s = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
        (input.display().to_string(), s)
    };
    let code = assemble_text(&text).map_err(|e| anyhow!("{name}:{e}"))?;
    println!("{}", to_hex(&code));
    Ok(ExitCode::SUCCESS)
}

fn cmd_disasm(input: &str) -> Result<ExitCode, UsageError> {
    let text = if Path::new(input).is_file() {
        fs::read_to_string(input).with_context(|| format!("reading {input}"))?
    } else {
        input.to_string()
    };
    let code = from_hex(text.trim()).map_err(|e| anyhow!("invalid hex: {e}"))?;
    print!("{}", format_disasm(&code));
    Ok(ExitCode::SUCCESS)
}

fn cmd_ingest(dir: &Path, out: Option<&Path>) -> Result<ExitCode, UsageError> {
    if !dir.is_dir() {
        return Err(anyhow!("{} is not a directory", dir.display()).into());
    }
    let report = ingest_official_tests(dir);
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        for f in &report.fixtures {
            let file: String =
                f.name.chars().map(|ch| if ch.is_ascii_alphanumeric() || ch == '_' { ch } else { '_' }).collect();
            fs::write(out.join(format!("{}.json", file.trim_end_matches('_'))), f.to_json() + "\n")?;
        }
    }
    let mut results = Vec::new();
    let mut failed = 0usize;
    for f in &report.fixtures {
        let status = match f.clone().resolve(&dir.join("ingested.json")) {
            Ok(loaded) => match loaded.execute() {
                Ok(o) => serde_json::to_value(o.receipt.status)?,
                Err(e) => {
                    failed += 1;
                    json!(format!("error: {e}"))
                }
            },
            Err(e) => {
                failed += 1;
                json!(format!("error: {e}"))
            }
        };
        results.push(json!({ "name": f.name, "status": status }));
    }
    let skipped: Vec<Value> = report.skipped.iter().map(|(n, r)| json!({ "name": n, "reason": r })).collect();
    print_json(&json!({ "translated": results, "skipped": skipped }))?;
    if failed > 0 {
        eprintln!("{failed} translated case(s) failed to execute");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}
