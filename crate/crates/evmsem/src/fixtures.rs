//! Fixture files: a pre-state, transactions, a block, expectations and
//! checker parameters, in JSON.
//!
//! Code may be given as a hex string, as a path to an assembly file
//! (`{"asm": "asm/bob.asm"}`, relative to the fixture), as inline assembly
//! (`{"source": "PUSH1 1\nSTOP"}`), or as a constructor/runtime pair that is
//! turned into deployment code (`{"deploy": {"constructor": .., "runtime": ..}}`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bytecode::{assemble_text, deploy_code, disassemble, Code, Opcode};
use crate::checkers::{
    AddressSet, CheckParams, FinPotParams, IntegrityMode, Perturbation, Property, Scenario, ScenarioSpace,
};
use crate::semantics::{RunError, StepBudget};
use crate::state::{Account, Ancestor, BlockHeader, EnvComponent, GlobalState};
use crate::transaction::{execute_transaction, Block, Transaction, TxKind, TxOutcome, TxStatus};
use crate::words::{from_hex, to_hex, Address, Word256};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CodeSource {
    Hex(String),
    Asm { asm: String },
    Source { source: String },
    Deploy { deploy: DeploySource },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploySource {
    pub constructor: Box<CodeSource>,
    pub runtime: Box<CodeSource>,
}

impl CodeSource {
    pub fn resolve(&self, base: &Path) -> Result<Vec<u8>, FixtureError> {
        match self {
            CodeSource::Hex(h) => from_hex(h).map_err(|e| FixtureError::Invalid(format!("bad hex code: {e}"))),
            CodeSource::Asm { asm } => {
                let path = base.join(asm);
                let text = fs::read_to_string(&path).map_err(|e| FixtureError::Io(path.clone(), e.to_string()))?;
                assemble_text(&text).map_err(|e| FixtureError::Asm { file: path, line: e.line, col: e.col, msg: e.msg })
            }
            CodeSource::Source { source } => assemble_text(source).map_err(|e| FixtureError::Asm {
                file: PathBuf::from("<inline>"),
                line: e.line,
                col: e.col,
                msg: e.msg,
            }),
            CodeSource::Deploy { deploy } => {
                let ctor = deploy.constructor.resolve(base)?;
                let runtime = deploy.runtime.resolve(base)?;
                Ok(deploy_code(&ctor, &runtime))
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureAccount {
    #[serde(default)]
    pub balance: Word256,
    #[serde(default)]
    pub nonce: Word256,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<CodeSource>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub storage: BTreeMap<Word256, Word256>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureTx {
    #[serde(default)]
    pub nonce: Word256,
    #[serde(default)]
    pub prize: Word256,
    pub gaslimit: Word256,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<Address>,
    #[serde(default)]
    pub value: Word256,
    pub sender: Address,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<CodeSource>,
    #[serde(rename = "type")]
    pub kind: TxKind,
}

/// Expected account contents; absent fields are not compared.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectAccount {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance: Option<Word256>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonce: Option<Word256>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage: Option<BTreeMap<Word256, Word256>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<CodeSource>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpectedResult {
    Holds,
    Violated,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<TxStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gas_used: Option<Word256>,
    /// Expected accounts after the transaction; `null` means the account must not exist.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub post: BTreeMap<Address, Option<ExpectAccount>>,
    /// Keyed by property name; call integrity uses `call-integrity:direct`
    /// and `call-integrity:theorem1`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub verdicts: BTreeMap<String, ExpectedResult>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckerParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contract: Option<Address>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub untrusted: Vec<Address>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub allowed: Vec<Address>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub variants: BTreeMap<Address, Vec<CodeSource>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gas_values: Vec<Word256>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<EnvComponent>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env_values: BTreeMap<EnvComponent, Vec<Word256>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub perturbations: Vec<Perturbation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fin_pot: Option<FinPotParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_entries: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub relaxed_gas: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub pre: BTreeMap<Address, FixtureAccount>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub setup: Vec<FixtureTx>,
    pub tx: FixtureTx,
    #[serde(default)]
    pub header: BlockHeader,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ancestors: Vec<Ancestor>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub expect: Expectations,
    #[serde(default, skip_serializing_if = "is_default")]
    pub checker_params: CheckerParams,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{0}: {1}")]
    Io(PathBuf, String),
    #[error("{file}:{line}:{col}: {msg}")]
    Json { file: PathBuf, line: usize, col: usize, msg: String },
    #[error("{file}:{line}:{col}: {msg}")]
    Asm { file: PathBuf, line: usize, col: usize, msg: String },
    #[error("invalid fixture: {0}")]
    Invalid(String),
}

/// Default step budget for fixture runs.
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

/// A fixture with all code resolved.
#[derive(Clone, Debug)]
pub struct LoadedFixture {
    pub fixture: Fixture,
    pub path: PathBuf,
    pub pre: GlobalState,
    pub setup: Vec<Transaction>,
    pub tx: Transaction,
    pub block: Block,
    pub variants: BTreeMap<Address, Vec<Code>>,
}

impl Fixture {
    pub fn parse(text: &str, file: &Path) -> Result<Fixture, FixtureError> {
        serde_json::from_str(text).map_err(|e| FixtureError::Json {
            file: file.to_path_buf(),
            line: e.line(),
            col: e.column(),
            msg: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fixtures serialize")
    }

    pub fn load(path: &Path) -> Result<LoadedFixture, FixtureError> {
        let text = fs::read_to_string(path).map_err(|e| FixtureError::Io(path.to_path_buf(), e.to_string()))?;
        Fixture::parse(&text, path)?.resolve(path)
    }

    pub fn resolve(self, path: &Path) -> Result<LoadedFixture, FixtureError> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut pre = GlobalState::new();
        for (a, acc) in &self.pre {
            let code = match &acc.code {
                Some(src) => Code::new(src.resolve(base)?),
                None => Code::empty(),
            };
            let mut account = Account { nonce: acc.nonce, balance: acc.balance, code, ..Default::default() };
            for (k, v) in &acc.storage {
                account.storage.set(*k, *v);
            }
            pre.set(*a, account);
        }
        let setup = self.setup.iter().map(|t| resolve_tx(t, base)).collect::<Result<_, _>>()?;
        let tx = resolve_tx(&self.tx, base)?;
        let mut variants = BTreeMap::new();
        for (a, srcs) in &self.checker_params.variants {
            let codes = srcs.iter().map(|s| s.resolve(base).map(Code::new)).collect::<Result<_, _>>()?;
            variants.insert(*a, codes);
        }
        let block = Block { header: self.header.clone(), ancestors: self.ancestors.clone() };
        Ok(LoadedFixture { fixture: self, path: path.to_path_buf(), pre, setup, tx, block, variants })
    }
}

fn resolve_tx(t: &FixtureTx, base: &Path) -> Result<Transaction, FixtureError> {
    let input = match &t.input {
        Some(src) => src.resolve(base)?,
        None => Vec::new(),
    };
    let tx = Transaction {
        nonce: t.nonce,
        prize: t.prize,
        gaslimit: t.gaslimit,
        to: t.to,
        value: t.value,
        sender: t.sender,
        input,
        kind: t.kind,
    };
    tx.check_shape().map_err(|e| FixtureError::Invalid(e.to_string()))?;
    Ok(tx)
}

impl LoadedFixture {
    pub fn base_dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn budget(&self) -> StepBudget {
        StepBudget { max_steps: self.fixture.checker_params.max_steps.unwrap_or(DEFAULT_MAX_STEPS) }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario { pre: self.pre.clone(), setup: self.setup.clone(), tx: self.tx.clone(), block: self.block.clone() }
    }

    /// The analysed contract: the declared one, else the transaction target.
    pub fn contract(&self) -> Option<Address> {
        self.fixture.checker_params.contract.or(self.tx.to)
    }

    pub fn space(&self) -> ScenarioSpace {
        let p = &self.fixture.checker_params;
        let mut space = ScenarioSpace::new(self.scenario());
        space.variants = self.variants.clone();
        space.gas_values = p.gas_values.clone();
        space.env_values = p.env_values.clone();
        space.perturbations = p.perturbations.clone();
        space.fin_pot = p.fin_pot.unwrap_or_default();
        space.budget = self.budget();
        space.relaxed_gas = p.relaxed_gas;
        if let Some(m) = p.max_entries {
            space.max_entries = m;
        }
        space
    }

    pub fn params(&self) -> CheckParams {
        let p = &self.fixture.checker_params;
        let components =
            if p.components.is_empty() { p.env_values.keys().copied().collect() } else { p.components.clone() };
        CheckParams {
            untrusted: p.untrusted.iter().copied().collect::<AddressSet>(),
            allowed: p.allowed.iter().copied().collect(),
            components,
            mode: IntegrityMode::Direct,
        }
    }

    /// The expected verdicts as (property, mode, result).
    pub fn expected_verdicts(&self) -> Result<Vec<(Property, IntegrityMode, ExpectedResult)>, FixtureError> {
        self.fixture
            .expect
            .verdicts
            .iter()
            .map(|(k, r)| {
                let (name, mode) = match k.split_once(':') {
                    Some((n, "direct")) => (n, IntegrityMode::Direct),
                    Some((n, "theorem1")) => (n, IntegrityMode::Theorem1),
                    Some(_) => return Err(FixtureError::Invalid(format!("unknown verdict key {k}"))),
                    None => (k.as_str(), IntegrityMode::Direct),
                };
                let p =
                    Property::parse(name).ok_or_else(|| FixtureError::Invalid(format!("unknown property {name}")))?;
                Ok((p, mode, *r))
            })
            .collect()
    }

    /// Runs the setup transactions, committing each post-state, then the
    /// transaction under analysis.
    pub fn execute(&self) -> Result<TxOutcome, RunError> {
        let mut sigma = self.pre.clone();
        for t in &self.setup {
            sigma = execute_transaction(t, &self.block, &sigma, self.budget())?.post;
        }
        execute_transaction(&self.tx, &self.block, &sigma, self.budget())
    }

    /// Differences between the outcome and the fixture's expectations.
    pub fn mismatches(&self, out: &TxOutcome) -> Result<Vec<String>, FixtureError> {
        let e = &self.fixture.expect;
        let mut m = Vec::new();
        if let Some(s) = e.status {
            if s != out.receipt.status {
                m.push(format!("status: expected {s:?}, got {:?}", out.receipt.status));
            }
        }
        if let Some(g) = e.gas_used {
            if g != out.receipt.gas_used {
                m.push(format!("gas_used: expected {g}, got {}", out.receipt.gas_used));
            }
        }
        for (a, want) in &e.post {
            let got = out.post.get(a);
            match (want, got) {
                (None, None) => {}
                (None, Some(_)) => m.push(format!("{a}: expected no account")),
                (Some(_), None) => m.push(format!("{a}: account missing")),
                (Some(w), Some(g)) => {
                    if let Some(b) = w.balance {
                        if b != g.balance {
                            m.push(format!("{a}: balance expected {b}, got {}", g.balance));
                        }
                    }
                    if let Some(n) = w.nonce {
                        if n != g.nonce {
                            m.push(format!("{a}: nonce expected {n}, got {}", g.nonce));
                        }
                    }
                    if let Some(st) = &w.storage {
                        for (k, v) in st {
                            if g.storage.get(k) != *v {
                                m.push(format!("{a}: storage[{k}] expected {v}, got {}", g.storage.get(k)));
                            }
                        }
                    }
                    if let Some(src) = &w.code {
                        let code = src.resolve(self.base_dir())?;
                        if code != g.code.as_bytes() {
                            m.push(format!("{a}: code differs"));
                        }
                    }
                }
            }
        }
        Ok(m)
    }
}

/// Loads every `*.json` fixture in `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<LoadedFixture>, FixtureError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| FixtureError::Io(dir.to_path_buf(), e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Fixture::load(p)).collect()
}

/// Reads code variants from a directory. File names start with the address
/// (`0x…`), optionally followed by `_suffix`; `.asm` files are assembled and
/// `.hex` files decoded. Variants of one address are ordered by file name.
pub fn load_variants(dir: &Path) -> Result<BTreeMap<Address, Vec<Code>>, FixtureError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| FixtureError::Io(dir.to_path_buf(), e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    paths.sort();
    let mut out: BTreeMap<Address, Vec<Code>> = BTreeMap::new();
    for p in paths {
        let Some(stem) = p.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let addr_part = stem.split('_').next().unwrap_or(stem);
        let Ok(addr) = addr_part.parse::<Address>() else {
            continue;
        };
        let text = fs::read_to_string(&p).map_err(|e| FixtureError::Io(p.clone(), e.to_string()))?;
        let bytes = match p.extension().and_then(|x| x.to_str()) {
            Some("asm") => assemble_text(&text).map_err(|e| FixtureError::Asm {
                file: p.clone(),
                line: e.line,
                col: e.col,
                msg: e.msg,
            })?,
            Some("hex") => from_hex(text.trim()).map_err(|e| FixtureError::Invalid(format!("{}: {e}", p.display())))?,
            _ => continue,
        };
        out.entry(addr).or_default().push(Code::new(bytes));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// State tests

/// Result of translating a directory of state tests.
#[derive(Debug, Default)]
pub struct IngestReport {
    pub fixtures: Vec<Fixture>,
    /// (test or file, reason) for every case that could not be translated.
    pub skipped: Vec<(String, String)>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct StateTest {
    env: StEnv,
    pre: BTreeMap<String, StAccount>,
    transaction: StTx,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct StEnv {
    current_coinbase: String,
    current_difficulty: String,
    current_gas_limit: String,
    current_number: String,
    current_timestamp: String,
    #[serde(default)]
    previous_hash: Option<String>,
}

#[derive(Deserialize)]
struct StAccount {
    balance: String,
    code: String,
    nonce: String,
    #[serde(default)]
    storage: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct StTx {
    data: Vec<String>,
    gas_limit: Vec<String>,
    gas_price: String,
    nonce: String,
    #[serde(default)]
    secret_key: Option<String>,
    #[serde(default)]
    sender: Option<String>,
    to: String,
    value: Vec<String>,
}

/// The key used throughout the public test suite and its address.
const WELL_KNOWN_KEY: &str = "45a915e4d060149eb4365960e6a7a45f334393093061116b197e3240065ff2d8";
const WELL_KNOWN_SENDER: &str = "0xa94f5374fce5edbc8e2a8697c15331677e6ebf0b";

fn word(s: &str) -> Result<Word256, String> {
    let s = s.trim();
    let w = if let Some(h) = s.strip_prefix("0x") {
        if h.is_empty() {
            "0x0".to_string()
        } else {
            s.to_string()
        }
    } else {
        s.to_string()
    };
    Word256::parse_literal(&w).map_err(|e| format!("bad number {s:?}: {e}"))
}

fn addr(s: &str) -> Result<Address, String> {
    let s = s.trim();
    let s = if s.starts_with("0x") { s.to_string() } else { format!("0x{s}") };
    s.parse::<Address>().map_err(|e| format!("bad address {s:?}: {e}"))
}

fn unsupported_opcode(code: &[u8]) -> Option<u8> {
    disassemble(code).into_iter().find(|l| l.instruction.op == Opcode::Invalid && l.byte != 0xfe).map(|l| l.byte)
}

fn translate(name: &str, t: &StateTest) -> Result<Vec<Fixture>, String> {
    let sender = match (&t.transaction.sender, &t.transaction.secret_key) {
        (Some(s), _) => addr(s)?,
        (None, Some(k)) if k.trim_start_matches("0x").eq_ignore_ascii_case(WELL_KNOWN_KEY) => addr(WELL_KNOWN_SENDER)?,
        _ => return Err("cannot derive the sender without a known key".into()),
    };
    let mut pre = BTreeMap::new();
    for (a, acc) in &t.pre {
        let code = from_hex(&acc.code).map_err(|e| format!("bad code for {a}: {e}"))?;
        if let Some(b) = unsupported_opcode(&code) {
            return Err(format!("unsupported opcode 0x{b:02x} in {a}"));
        }
        let mut storage = BTreeMap::new();
        for (k, v) in &acc.storage {
            storage.insert(word(k)?, word(v)?);
        }
        pre.insert(
            addr(a)?,
            FixtureAccount {
                balance: word(&acc.balance)?,
                nonce: word(&acc.nonce)?,
                code: (!code.is_empty()).then(|| CodeSource::Hex(to_hex(&code))),
                storage,
            },
        );
    }
    let header = BlockHeader {
        parent: t.env.previous_hash.as_deref().map(word).transpose()?.unwrap_or_default(),
        beneficiary: addr(&t.env.current_coinbase)?,
        difficulty: word(&t.env.current_difficulty)?,
        number: word(&t.env.current_number)?,
        gaslimit: word(&t.env.current_gas_limit)?,
        timestamp: word(&t.env.current_timestamp)?,
    };
    let to = t.transaction.to.trim();
    let (kind, to) = if to.is_empty() || to == "0x" { (TxKind::Create, None) } else { (TxKind::Call, Some(addr(to)?)) };
    let mut out = Vec::new();
    for (d, data) in t.transaction.data.iter().enumerate() {
        let input = from_hex(data).map_err(|e| format!("bad data: {e}"))?;
        for (g, gas) in t.transaction.gas_limit.iter().enumerate() {
            for (v, value) in t.transaction.value.iter().enumerate() {
                out.push(Fixture {
                    name: format!("{name}[d{d},g{g},v{v}]"),
                    description: String::new(),
                    pre: pre.clone(),
                    setup: Vec::new(),
                    tx: FixtureTx {
                        nonce: word(&t.transaction.nonce)?,
                        prize: word(&t.transaction.gas_price)?,
                        gaslimit: word(gas)?,
                        to,
                        value: word(value)?,
                        sender,
                        input: (!input.is_empty()).then(|| CodeSource::Hex(to_hex(&input))),
                        kind,
                    },
                    header: header.clone(),
                    ancestors: Vec::new(),
                    expect: Expectations::default(),
                    checker_params: CheckerParams::default(),
                });
            }
        }
    }
    Ok(out)
}

/// Translates every state test in `dir` (files ending in `.json`). Files and
/// cases that cannot be translated are reported and skipped.
pub fn ingest_official_tests(dir: &Path) -> IngestReport {
    let mut report = IngestReport::default();
    let mut paths: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
        Err(e) => {
            report.skipped.push((dir.display().to_string(), e.to_string()));
            return report;
        }
    };
    paths.retain(|p| p.extension().is_some_and(|x| x == "json"));
    paths.sort();
    for p in paths {
        let file = p.display().to_string();
        let text = match fs::read_to_string(&p) {
            Ok(t) => t,
            Err(e) => {
                report.skipped.push((file, e.to_string()));
                continue;
            }
        };
        let tests: BTreeMap<String, serde_json::Value> = match serde_json::from_str(&text) {
            Ok(t) => t,
            Err(e) => {
                report.skipped.push((file, format!("{}:{}: {e}", e.line(), e.column())));
                continue;
            }
        };
        for (name, value) in tests {
            let parsed: Result<StateTest, _> = serde_json::from_value(value);
            match parsed.map_err(|e| e.to_string()).and_then(|t| translate(&name, &t)) {
                Ok(fx) => report.fixtures.extend(fx),
                Err(reason) => report.skipped.push((name, reason)),
            }
        }
    }
    report
}
