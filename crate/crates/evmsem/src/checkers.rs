//! Security checkers.
//!
//! Safety properties (single-entrancy, call restriction, fuelled calls,
//! call-stack-limit compliance) are monitors over one run of a scenario.
//! Hyperproperties (atomicity, the independence properties and call
//! integrity) are falsifiers: they fork a scenario along a finite set of
//! variants and compare the resulting runs. A `Holds` verdict only speaks for
//! the explored variants.
//!
//! A contract is identified by its address. Its calls are the call-family and
//! `CREATE` actions taken by frames annotated with that address.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bytecode::{Code, Opcode};
use crate::semantics::{self, CodeOverride, RunError, RunOutput, StepBudget, StepError, StepOutcome, Until};
use crate::state::{
    Account, CallStack, EnvComponent, ExecutionState, Frame, GlobalState, HaltState, TransactionEnvironment,
};
use crate::traces::{first_divergence, Action, Event, ReturnKind, Trace};
use crate::transaction::{self, Block, Initialized, Transaction};
use crate::words::{Address, Word256};

pub type AddressSet = BTreeSet<Address>;

/// Length of the trace excerpt kept in witnesses.
const EXCERPT: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Property {
    SingleEntrancy,
    CallRestriction,
    FuelledCalls,
    StackLimit,
    Atomicity,
    EnvIndependence,
    AccountStateIndependence,
    CodeIndependence,
    EffectIndependence,
    CallIntegrity,
}

impl Property {
    pub const ALL: [Property; 10] = [
        Property::SingleEntrancy,
        Property::CallRestriction,
        Property::FuelledCalls,
        Property::StackLimit,
        Property::Atomicity,
        Property::EnvIndependence,
        Property::AccountStateIndependence,
        Property::CodeIndependence,
        Property::EffectIndependence,
        Property::CallIntegrity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::SingleEntrancy => "single-entrancy",
            Property::CallRestriction => "call-restriction",
            Property::FuelledCalls => "fuelled-calls",
            Property::StackLimit => "stack-limit",
            Property::Atomicity => "atomicity",
            Property::EnvIndependence => "env-independence",
            Property::AccountStateIndependence => "account-state-independence",
            Property::CodeIndependence => "code-independence",
            Property::EffectIndependence => "effect-independence",
            Property::CallIntegrity => "call-integrity",
        }
    }

    pub fn parse(s: &str) -> Option<Property> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegrityMode {
    #[default]
    Direct,
    Theorem1,
}

/// The transactions a check runs: setup transactions are executed in order
/// and committed, then `tx` is the transaction under analysis.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub pre: GlobalState,
    pub setup: Vec<Transaction>,
    pub tx: Transaction,
    pub block: Block,
}

/// Overwrites parts of an account. Absent fields are left alone.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonce: Option<Word256>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance: Option<Word256>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub storage: Vec<(Word256, Word256)>,
}

impl Perturbation {
    pub fn apply(&self, sigma: &mut GlobalState, a: &Address) {
        let mut acc = sigma.get(a).cloned().unwrap_or_default();
        if let Some(n) = self.nonce {
            acc.nonce = n;
        }
        if let Some(b) = self.balance {
            acc.balance = b;
        }
        for (k, v) in &self.storage {
            acc.storage.set(*k, *v);
        }
        sigma.set(*a, acc);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinPotParams {
    /// Number of random samples added to the systematic ones.
    pub samples: usize,
    pub seed: u64,
}

impl Default for FinPotParams {
    fn default() -> Self {
        FinPotParams { samples: 8, seed: 0 }
    }
}

/// A scenario together with the finite variant sets explored by the checkers.
#[derive(Clone, Debug)]
pub struct ScenarioSpace {
    pub scenario: Scenario,
    /// Alternative codes per untrusted address. The actual code is always
    /// explored as well, as variant 0.
    pub variants: BTreeMap<Address, Vec<Code>>,
    pub gas_values: Vec<Word256>,
    pub env_values: BTreeMap<EnvComponent, Vec<Word256>>,
    /// Account perturbations of the analysed contract. When empty, defaults
    /// are derived from the contract's balance and the storage cells it touches.
    pub perturbations: Vec<Perturbation>,
    pub fin_pot: FinPotParams,
    pub budget: StepBudget,
    /// Ignore the gas operand of calls when comparing traces.
    pub relaxed_gas: bool,
    /// Maximum number of entry configurations or call points explored.
    pub max_entries: usize,
}

impl ScenarioSpace {
    pub fn new(scenario: Scenario) -> Self {
        ScenarioSpace {
            scenario,
            variants: BTreeMap::new(),
            gas_values: Vec::new(),
            env_values: BTreeMap::new(),
            perturbations: Vec::new(),
            fin_pot: FinPotParams::default(),
            budget: StepBudget::default(),
            relaxed_gas: false,
            max_entries: 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("the transaction under analysis is invalid in the scenario state")]
    InvalidTransaction,
    #[error("precondition not met: {0}")]
    Precondition(String),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// How to re-derive a violation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Replay {
    /// The monitor fired at this step of the scenario run.
    Monitor {
        step: u64,
    },
    Env {
        component: EnvComponent,
        a: Word256,
        b: Word256,
    },
    /// Indices into the perturbation list; 0 is the unperturbed state.
    AccountState {
        a: usize,
        b: usize,
    },
    /// Entry configuration index and code-variant indices.
    Code {
        entry: usize,
        a: usize,
        b: usize,
    },
    /// Call-point index and Fin_pot sample indices.
    Effect {
        call: usize,
        a: usize,
        b: usize,
    },
    Gas {
        entry: usize,
        a: Word256,
        b: Word256,
    },
    /// Entry configuration index and code-variant indices applied to its state.
    Direct {
        entry: usize,
        a: usize,
        b: usize,
    },
    /// A conjunct of the call-integrity proof technique failed.
    Conjunct {
        property: Property,
        inner: Box<Replay>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StorageChange {
    pub key: Word256,
    pub before: Word256,
    pub after: Word256,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AccountChange {
    pub address: Address,
    pub balance_before: Word256,
    pub balance_after: Word256,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub storage: Vec<StorageChange>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WitnessRun {
    pub label: String,
    /// `halt` or `exc` for the frame or transaction that was run.
    pub status: String,
    /// The projected calls of the analysed contract.
    pub calls: Trace,
    /// The last actions of the run.
    pub excerpt: Trace,
    /// Global-state changes relative to the fork point, for state-based properties.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub changes: Vec<AccountChange>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub reason: String,
    pub replay: Replay,
    pub runs: Vec<WitnessRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "lowercase")]
pub enum Outcome {
    Holds,
    Violated { witness: Box<Witness> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub property: Property,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<IntegrityMode>,
    pub contract: Address,
    #[serde(flatten)]
    pub outcome: Outcome,
    /// Number of runs or variant pairs examined.
    pub explored: usize,
    /// Some run exhausted the step budget and was left out.
    pub incomplete: bool,
}

impl Verdict {
    pub fn holds(&self) -> bool {
        matches!(self.outcome, Outcome::Holds)
    }

    pub fn violated(&self) -> bool {
        !self.holds()
    }

    pub fn witness(&self) -> Option<&Witness> {
        match &self.outcome {
            Outcome::Violated { witness } => Some(witness),
            Outcome::Holds => None,
        }
    }
}

/// Whether `a` is a call or creation performed by the contract at `c`.
pub fn is_call_of(a: &Action, c: &Address) -> bool {
    a.op.is_call_family() && matches!(a.event, Event::Exec(_)) && a.contract.as_ref().is_some_and(|k| k.address == *c)
}

pub fn calls_of(trace: &[Action], c: &Address) -> Trace {
    trace.iter().filter(|a| is_call_of(a, c)).cloned().collect()
}

fn annotated(f: &Frame, c: &Address) -> bool {
    f.annotation.as_ref().is_some_and(|k| k.address == *c)
}

fn has_frame_of(s: &CallStack, c: &Address) -> bool {
    s.iter().any(|f| annotated(f, c))
}

fn excerpt(trace: &[Action]) -> Trace {
    trace[trace.len().saturating_sub(EXCERPT)..].to_vec()
}

fn status_of(s: Option<&ExecutionState>) -> String {
    match s {
        Some(ExecutionState::Halt(_)) => "halt".into(),
        Some(ExecutionState::Exc) => "exc".into(),
        _ => "running".into(),
    }
}

fn account_changes(before: &GlobalState, after: &GlobalState) -> Vec<AccountChange> {
    let addrs: BTreeSet<Address> = before.addresses().chain(after.addresses()).copied().collect();
    let empty = Account::default();
    let mut out = Vec::new();
    for a in addrs {
        let x = before.get(&a).unwrap_or(&empty);
        let y = after.get(&a).unwrap_or(&empty);
        if x == y {
            continue;
        }
        let keys: BTreeSet<Word256> = x.storage.iter().chain(y.storage.iter()).map(|(k, _)| *k).collect();
        let storage = keys
            .into_iter()
            .filter_map(|key| {
                let (b, c) = (x.storage.get(&key), y.storage.get(&key));
                (b != c).then_some(StorageChange { key, before: b, after: c })
            })
            .collect();
        out.push(AccountChange { address: a, balance_before: x.balance, balance_after: y.balance, storage });
    }
    out
}

// ---------------------------------------------------------------------------
// Running scenarios

/// Changes applied when a scenario is forked at its start.
#[derive(Clone, Debug, Default)]
struct Fork {
    env: Option<(EnvComponent, Word256)>,
    perturb: Option<(Address, Perturbation)>,
}

struct Started {
    init: Initialized,
    /// State after the setup transactions and fork changes.
    sigma: GlobalState,
    /// Traces of the setup transactions.
    setup_trace: Trace,
}

fn init_patched(tx: &Transaction, block: &Block, sigma: &GlobalState, fork: &Fork) -> Option<Initialized> {
    let mut init = transaction::t_init(tx, block, sigma)?;
    if let Some((comp, v)) = fork.env {
        comp.set(&mut init.env, v);
    }
    Some(init)
}

fn start(sc: &Scenario, fork: &Fork, budget: StepBudget) -> Result<Option<Started>, RunError> {
    let mut sigma = sc.pre.clone();
    let mut setup_trace = Vec::new();
    for tx in &sc.setup {
        if let Some(init) = init_patched(tx, &sc.block, &sigma, fork) {
            let run = semantics::run(&init.env, &CallStack::singleton(init.frame.clone()), budget, None)?;
            let out = transaction::finish(tx, &init, run);
            setup_trace.extend(out.trace);
            sigma = out.post;
        }
    }
    if let Some((a, p)) = &fork.perturb {
        p.apply(&mut sigma, a);
    }
    Ok(init_patched(&sc.tx, &sc.block, &sigma, fork).map(|init| Started { init, sigma, setup_trace }))
}

/// Result of running a scenario or a frame to completion.
#[derive(Clone, Debug)]
struct Ran {
    out: RunOutput,
    /// Trace including setup transactions, when forked at the scenario start.
    full_trace: Trace,
}

enum RunResult {
    Done(Box<Ran>),
    /// The step budget ran out.
    Exhausted,
}

fn settle(r: Result<RunOutput, RunError>, prefix: Trace) -> Result<RunResult, CheckError> {
    match r {
        Ok(out) => {
            let mut full_trace = prefix;
            full_trace.extend(out.trace.iter().cloned());
            Ok(RunResult::Done(Box::new(Ran { out, full_trace })))
        }
        Err(RunError::BudgetExhausted(_)) => Ok(RunResult::Exhausted),
        Err(RunError::Step(e)) => Err(e.into()),
    }
}

fn run_scenario(
    space: &ScenarioSpace,
    fork: &Fork,
    observer: impl FnMut(&CallStack, &StepOutcome) -> ControlFlow<()>,
) -> Result<RunResult, CheckError> {
    let started = match start(&space.scenario, fork, space.budget) {
        Ok(Some(s)) => s,
        Ok(None) => return Err(CheckError::InvalidTransaction),
        Err(RunError::BudgetExhausted(_)) => return Ok(RunResult::Exhausted),
        Err(RunError::Step(e)) => return Err(e.into()),
    };
    let st = CallStack::singleton(started.init.frame);
    let r = semantics::run_with(&started.init.env, &st, space.budget, None, Until::Final, observer);
    settle(r, started.setup_trace)
}

/// Stacks observed in the unforked scenario run.
#[derive(Clone, Debug, Default)]
struct Observed {
    env: TransactionEnvironment,
    /// Configurations whose top frame is a freshly entered frame of `c`.
    entries: Vec<CallStack>,
    /// Configurations right after `c` pushed a frame for an untrusted address.
    untrusted_calls: Vec<CallStack>,
    incomplete: bool,
}

fn observe(space: &ScenarioSpace, c: &Address, untrusted: &AddressSet) -> Result<Observed, CheckError> {
    let started = match start(&space.scenario, &Fork::default(), space.budget) {
        Ok(Some(s)) => s,
        Ok(None) => return Err(CheckError::InvalidTransaction),
        Err(RunError::BudgetExhausted(_)) => return Ok(Observed { incomplete: true, ..Default::default() }),
        Err(RunError::Step(e)) => return Err(e.into()),
    };
    let mut obs = Observed { env: started.init.env.clone(), ..Default::default() };
    let st = CallStack::singleton(started.init.frame);
    if st.top().is_some_and(|f| annotated(f, c)) {
        obs.entries.push(st.clone());
    }
    let max = space.max_entries;
    let r = semantics::run_with(&obs.env.clone(), &st, space.budget, None, Until::Final, |prev, out| {
        if out.next.len() == prev.len() + 1 {
            let top = out.next.top().expect("non-empty");
            if top.state.as_regular().is_some() {
                if annotated(top, c) && obs.entries.len() < max {
                    obs.entries.push(out.next.clone());
                }
                let callee = top.annotation.as_ref().map(|k| k.address);
                let by_c = prev.top().is_some_and(|f| annotated(f, c));
                if by_c && callee.is_some_and(|a| untrusted.contains(&a)) && obs.untrusted_calls.len() < max {
                    obs.untrusted_calls.push(out.next.clone());
                }
            }
        }
        ControlFlow::Continue(())
    });
    match r {
        Ok(_) => {}
        Err(RunError::BudgetExhausted(_)) => obs.incomplete = true,
        Err(RunError::Step(e)) => return Err(e.into()),
    }
    Ok(obs)
}

fn verdict(property: Property, c: Address, outcome: Outcome, explored: usize, incomplete: bool) -> Verdict {
    Verdict { property, mode: None, contract: c, outcome, explored, incomplete }
}

fn violated(reason: String, replay: Replay, runs: Vec<WitnessRun>, divergence: Option<usize>) -> Outcome {
    Outcome::Violated { witness: Box::new(Witness { reason, replay, runs, divergence }) }
}

// ---------------------------------------------------------------------------
// Monitors

/// A monitor inspects each step and reports a violation message.
type Monitor<'a> = dyn Fn(&CallStack, &StepOutcome) -> Option<String> + Sync + 'a;

fn single_entrancy_monitor(c: Address) -> impl Fn(&CallStack, &StepOutcome) -> Option<String> + Sync {
    move |prev, out| {
        let top = prev.top()?;
        if out.next.len() == prev.len() + 1 && annotated(top, &c) && has_frame_of(&prev.rest(), &c) {
            Some(format!("reentered {c} pushed a frame at call depth {}", prev.len()))
        } else {
            None
        }
    }
}

fn call_restriction_monitor(
    c: Address,
    allowed: AddressSet,
) -> impl Fn(&CallStack, &StepOutcome) -> Option<String> + Sync {
    move |prev, out| {
        if out.next.len() != prev.len() + 1 || !has_frame_of(prev, &c) {
            return None;
        }
        let top = out.next.top()?;
        let r = top.state.as_regular()?;
        let addr = top.annotation.as_ref().map_or(r.iota.actor, |k| k.address);
        (!allowed.contains(&addr)).then(|| format!("frame for {addr} entered below {c}"))
    }
}

fn fuelled_monitor(c: Address) -> impl Fn(&CallStack, &StepOutcome) -> Option<String> + Sync {
    move |prev, out| {
        if out.next.len() != prev.len() + 1 || !has_frame_of(prev, &c) {
            return None;
        }
        let r = out.next.top()?.state.as_regular()?;
        r.mu.gas.is_zero().then(|| format!("callee {} started without gas", r.iota.actor))
    }
}

fn stack_limit_monitor(c: Address) -> impl Fn(&CallStack, &StepOutcome) -> Option<String> + Sync {
    move |_, out| {
        let top = out.next.top()?;
        if !matches!(top.state, ExecutionState::Exc) || top.annotation.is_some() {
            return None;
        }
        let below = out.next.len() - 1;
        (below >= 1024 && has_frame_of(&out.next.rest(), &c)).then(|| format!("exception pushed above {below} frames"))
    }
}

fn run_monitor(
    space: &ScenarioSpace,
    property: Property,
    c: Address,
    monitor: &Monitor<'_>,
) -> Result<Verdict, CheckError> {
    let mut hit: Option<(u64, String)> = None;
    let mut step = 0u64;
    let r = run_scenario(space, &Fork::default(), |prev, out| {
        step += 1;
        match monitor(prev, out) {
            Some(msg) => {
                hit = Some((step, msg));
                ControlFlow::Break(())
            }
            None => ControlFlow::Continue(()),
        }
    })?;
    let (ran, incomplete) = match r {
        RunResult::Done(ran) => (Some(ran), false),
        RunResult::Exhausted => (None, true),
    };
    let outcome = match (hit, ran) {
        (Some((step, msg)), Some(ran)) => {
            let run = WitnessRun {
                label: "scenario".into(),
                status: status_of(ran.out.final_state()),
                calls: calls_of(&ran.out.trace, &c),
                excerpt: excerpt(&ran.out.trace),
                changes: Vec::new(),
            };
            violated(msg, Replay::Monitor { step }, vec![run], None)
        }
        _ => Outcome::Holds,
    };
    Ok(verdict(property, c, outcome, 1, incomplete))
}

fn monitor_for(property: Property, c: Address, params: &CheckParams) -> Option<Box<Monitor<'static>>> {
    Some(match property {
        Property::SingleEntrancy => Box::new(single_entrancy_monitor(c)),
        Property::CallRestriction => Box::new(call_restriction_monitor(c, params.allowed.clone())),
        Property::FuelledCalls => Box::new(fuelled_monitor(c)),
        Property::StackLimit => Box::new(stack_limit_monitor(c)),
        _ => return None,
    })
}

/// Runs the scenario to the end with the monitor of `property` attached and
/// returns the trace of the analysed transaction with the steps (counted
/// from 1, setup transactions excluded) at which the monitor fired. `None`
/// for properties that are not monitors or when the step budget ran out.
pub fn monitored_run(
    space: &ScenarioSpace,
    property: Property,
    c: Address,
    params: &CheckParams,
) -> Result<Option<(Trace, Vec<u64>)>, CheckError> {
    let Some(monitor) = monitor_for(property, c, params) else {
        return Ok(None);
    };
    let mut hits = Vec::new();
    let mut step = 0u64;
    let r = run_scenario(space, &Fork::default(), |prev, out| {
        step += 1;
        if monitor(prev, out).is_some() {
            hits.push(step);
        }
        ControlFlow::Continue(())
    })?;
    Ok(match r {
        RunResult::Done(ran) => Some((ran.out.trace, hits)),
        RunResult::Exhausted => None,
    })
}

pub fn check_single_entrancy(space: &ScenarioSpace, c: Address) -> Result<Verdict, CheckError> {
    run_monitor(space, Property::SingleEntrancy, c, &single_entrancy_monitor(c))
}

pub fn check_call_restriction(space: &ScenarioSpace, c: Address, allowed: &AddressSet) -> Result<Verdict, CheckError> {
    run_monitor(space, Property::CallRestriction, c, &call_restriction_monitor(c, allowed.clone()))
}

pub fn check_fuelled_calls(space: &ScenarioSpace, c: Address) -> Result<Verdict, CheckError> {
    run_monitor(space, Property::FuelledCalls, c, &fuelled_monitor(c))
}

pub fn check_stack_limit_compliance(space: &ScenarioSpace, c: Address) -> Result<Verdict, CheckError> {
    run_monitor(space, Property::StackLimit, c, &stack_limit_monitor(c))
}

// ---------------------------------------------------------------------------
// Paired runs

/// One element of a family of runs that must agree on the projected calls.
struct Member {
    label: String,
    result: RunResult,
    /// State the changes in the witness are measured from.
    base_sigma: Option<GlobalState>,
}

fn witness_run(m: &Member, ran: &Ran, c: &Address) -> WitnessRun {
    let changes = match (&m.base_sigma, ran.out.final_state()) {
        (Some(b), Some(ExecutionState::Halt(h))) => account_changes(b, &h.sigma),
        _ => Vec::new(),
    };
    WitnessRun {
        label: m.label.clone(),
        status: status_of(ran.out.final_state()),
        calls: calls_of(&ran.full_trace, c),
        excerpt: excerpt(&ran.full_trace),
        changes,
    }
}

/// Indices of two family members, their witness runs and the divergence index.
type Disagreement = (usize, usize, Vec<WitnessRun>, Option<usize>);

/// Compares every member with the first completed one. Returns the indices of
/// the first disagreeing pair, their witness runs and the divergence index.
fn compare_family(members: &[Member], c: &Address, relaxed: bool) -> (Option<Disagreement>, bool) {
    let mut incomplete = false;
    let mut base: Option<(usize, &Ran, Trace)> = None;
    for (i, m) in members.iter().enumerate() {
        let RunResult::Done(ran) = &m.result else {
            incomplete = true;
            continue;
        };
        let calls = calls_of(&ran.full_trace, c);
        match &base {
            None => base = Some((i, ran, calls)),
            Some((j, bran, bcalls)) => {
                if let Some(d) = first_divergence(bcalls, &calls, relaxed) {
                    let runs = vec![witness_run(&members[*j], bran, c), witness_run(m, ran, c)];
                    return (Some((*j, i, runs, Some(d))), incomplete);
                }
            }
        }
    }
    (None, incomplete)
}

fn frame_run(
    env: &TransactionEnvironment,
    st: &CallStack,
    budget: StepBudget,
    over: Option<&CodeOverride>,
    until: Until,
) -> Result<RunResult, CheckError> {
    settle(semantics::run_with(env, st, budget, over, until, |_, _| ControlFlow::Continue(())), Vec::new())
}

fn top_sigma(st: &CallStack) -> Option<GlobalState> {
    st.top().and_then(|f| f.state.as_regular()).map(|r| r.sigma.clone())
}

// Environment independence

fn env_member(space: &ScenarioSpace, comp: EnvComponent, v: Word256) -> Result<Member, CheckError> {
    let fork = Fork { env: Some((comp, v)), ..Default::default() };
    let result = run_scenario(space, &fork, |_, _| ControlFlow::Continue(()))?;
    Ok(Member { label: format!("{}={v}", comp.name()), result, base_sigma: None })
}

pub fn check_env_independence(
    space: &ScenarioSpace,
    c: Address,
    components: &[EnvComponent],
) -> Result<Verdict, CheckError> {
    let mut explored = 0;
    let mut incomplete = false;
    for &comp in components {
        let values = space.env_values.get(&comp).cloned().unwrap_or_default();
        if values.is_empty() {
            return Err(CheckError::Precondition(format!("no values for component {}", comp.name())));
        }
        let members: Vec<Member> = values.par_iter().map(|v| env_member(space, comp, *v)).collect::<Result<_, _>>()?;
        explored += members.len();
        let (hit, inc) = compare_family(&members, &c, space.relaxed_gas);
        incomplete |= inc;
        if let Some((a, b, runs, d)) = hit {
            let replay = Replay::Env { component: comp, a: values[a], b: values[b] };
            let reason = format!("calls differ between {} and {}", runs[0].label, runs[1].label);
            return Ok(verdict(Property::EnvIndependence, c, violated(reason, replay, runs, d), explored, incomplete));
        }
    }
    Ok(verdict(Property::EnvIndependence, c, Outcome::Holds, explored, incomplete))
}

// Account-state independence

fn flip(v: Word256) -> Word256 {
    if v.is_zero() {
        Word256::one()
    } else {
        Word256::ZERO
    }
}

/// Storage keys of `c` read or written in `trace`.
fn touched_keys(trace: &[Action], c: &Address) -> BTreeSet<Word256> {
    trace
        .iter()
        .filter(|a| matches!(a.op, Opcode::SLoad | Opcode::SStore))
        .filter(|a| a.contract.as_ref().is_some_and(|k| k.address == *c))
        .filter_map(|a| a.args().first().copied())
        .collect()
}

fn default_perturbations(sigma: &GlobalState, c: &Address, touched: &BTreeSet<Word256>) -> Vec<Perturbation> {
    let acc = sigma.get(c).cloned().unwrap_or_default();
    let bal = acc.balance;
    let mut out = vec![
        Perturbation { balance: Some(Word256::ZERO), ..Default::default() },
        Perturbation { balance: Some(bal.wrapping_add(Word256::one())), ..Default::default() },
        Perturbation { balance: Some(bal.wrapping_add(bal)), ..Default::default() },
        Perturbation { nonce: Some(acc.nonce.wrapping_add(Word256::one())), ..Default::default() },
    ];
    if !bal.is_zero() {
        out.push(Perturbation { balance: Some(bal.wrapping_sub(Word256::one())), ..Default::default() });
    }
    for k in touched {
        out.push(Perturbation { storage: vec![(*k, flip(acc.storage.get(k)))], ..Default::default() });
    }
    out
}

/// The perturbation list: index 0 leaves the state alone.
fn account_perturbations(space: &ScenarioSpace, c: &Address) -> Result<Vec<Perturbation>, CheckError> {
    let mut list = vec![Perturbation::default()];
    if !space.perturbations.is_empty() {
        list.extend(space.perturbations.iter().cloned());
        return Ok(list);
    }
    let sigma = match start(&space.scenario, &Fork::default(), space.budget) {
        Ok(Some(s)) => s.sigma,
        Ok(None) => return Err(CheckError::InvalidTransaction),
        Err(RunError::BudgetExhausted(_)) => return Ok(list),
        Err(RunError::Step(e)) => return Err(e.into()),
    };
    let touched = match run_scenario(space, &Fork::default(), |_, _| ControlFlow::Continue(()))? {
        RunResult::Done(ran) => touched_keys(&ran.out.trace, c),
        RunResult::Exhausted => BTreeSet::new(),
    };
    list.extend(default_perturbations(&sigma, c, &touched));
    Ok(list)
}

fn state_member(space: &ScenarioSpace, c: &Address, i: usize, p: &Perturbation) -> Result<Member, CheckError> {
    let fork = Fork { perturb: (i > 0).then(|| (*c, p.clone())), ..Default::default() };
    let result = run_scenario(space, &fork, |_, _| ControlFlow::Continue(()))?;
    let label = if i == 0 { "unperturbed".to_string() } else { format!("perturbation {i}: {}", describe(p)) };
    Ok(Member { label, result, base_sigma: None })
}

fn describe(p: &Perturbation) -> String {
    let mut parts = Vec::new();
    if let Some(n) = p.nonce {
        parts.push(format!("nonce={n}"));
    }
    if let Some(b) = p.balance {
        parts.push(format!("balance={b}"));
    }
    for (k, v) in &p.storage {
        parts.push(format!("storage[{k}]={v}"));
    }
    parts.join(", ")
}

pub fn check_account_state_independence(space: &ScenarioSpace, c: Address) -> Result<Verdict, CheckError> {
    let list = account_perturbations(space, &c)?;
    let members: Vec<Member> =
        list.par_iter().enumerate().map(|(i, p)| state_member(space, &c, i, p)).collect::<Result<_, _>>()?;
    let (hit, incomplete) = compare_family(&members, &c, space.relaxed_gas);
    let outcome = match hit {
        Some((a, b, runs, d)) => {
            let reason = format!("calls differ between {} and {}", runs[0].label, runs[1].label);
            violated(reason, Replay::AccountState { a, b }, runs, d)
        }
        None => Outcome::Holds,
    };
    Ok(verdict(Property::AccountStateIndependence, c, outcome, members.len(), incomplete))
}

// Code variants

/// Code assignments for the untrusted addresses. Entry 0 keeps the actual codes.
fn code_assignments(
    space: &ScenarioSpace,
    untrusted: &AddressSet,
    sigma: &GlobalState,
) -> Vec<BTreeMap<Address, Code>> {
    let lists: BTreeMap<Address, Vec<Code>> = untrusted
        .iter()
        .map(|a| {
            let mut l = vec![sigma.code(a).cloned().unwrap_or_default()];
            l.extend(space.variants.get(a).into_iter().flatten().cloned());
            (*a, l)
        })
        .collect();
    let n = lists.values().map(Vec::len).max().unwrap_or(1);
    (0..n).map(|k| lists.iter().map(|(a, l)| (*a, l[k % l.len()].clone())).collect()).collect()
}

// Code independence

fn code_member(
    space: &ScenarioSpace,
    env: &TransactionEnvironment,
    entry: &CallStack,
    k: usize,
    codes: &BTreeMap<Address, Code>,
) -> Result<Member, CheckError> {
    let over: CodeOverride = codes.iter().map(|(a, c)| (*a, c.clone())).collect();
    let result = frame_run(env, entry, space.budget, Some(&over), Until::FrameFinished)?;
    Ok(Member { label: format!("code variant {k}"), result, base_sigma: None })
}

pub fn check_code_independence(
    space: &ScenarioSpace,
    c: Address,
    untrusted: &AddressSet,
) -> Result<Verdict, CheckError> {
    let obs = observe(space, &c, untrusted)?;
    let mut explored = 0;
    let mut incomplete = obs.incomplete;
    for (e, entry) in obs.entries.iter().enumerate() {
        let sigma = top_sigma(entry).unwrap_or_default();
        let assigns = code_assignments(space, untrusted, &sigma);
        let members: Vec<Member> = assigns
            .par_iter()
            .enumerate()
            .map(|(k, codes)| code_member(space, &obs.env, entry, k, codes))
            .collect::<Result<_, _>>()?;
        explored += members.len();
        let (hit, inc) = compare_family(&members, &c, space.relaxed_gas);
        incomplete |= inc;
        if let Some((a, b, runs, d)) = hit {
            let reason = format!("entry {e}: calls differ between {} and {}", runs[0].label, runs[1].label);
            let replay = Replay::Code { entry: e, a, b };
            return Ok(verdict(Property::CodeIndependence, c, violated(reason, replay, runs, d), explored, incomplete));
        }
    }
    Ok(verdict(Property::CodeIndependence, c, Outcome::Holds, explored, incomplete))
}

// Effect independence

/// A potential final state of an untrusted callee.
#[derive(Clone, Debug)]
enum FinPot {
    /// The callee's actual outcome.
    Actual,
    Final(ExecutionState),
}

fn word_bytes(v: u64) -> Vec<u8> {
    Word256::from_u64(v).to_be_bytes().to_vec()
}

/// Systematic and random elements of Fin_pot for the call at the top of `st`.
fn fin_pot_samples(
    space: &ScenarioSpace,
    st: &CallStack,
    c: &Address,
    call: usize,
    actual: Option<&Ran>,
) -> Vec<(String, FinPot)> {
    let callee = st.top().and_then(|f| f.state.as_regular()).expect("callee frame");
    let caller = st.rest();
    let caller_r = caller.top().and_then(|f| f.state.as_regular()).expect("caller frame");
    let callee_addr = callee.iota.actor;
    let sigma_b = caller_r.sigma.clone();
    let eta = caller_r.eta.clone();
    let g0 = callee.mu.gas;
    let halt = |sigma: GlobalState, gas: Word256, data: Vec<u8>| {
        FinPot::Final(ExecutionState::Halt(Box::new(HaltState { sigma, gas, data, eta: eta.clone() })))
    };
    let with = |f: &dyn Fn(&mut GlobalState)| {
        let mut s = sigma_b.clone();
        f(&mut s);
        s
    };
    let set_balance = |a: Address, v: Word256| {
        with(&|s: &mut GlobalState| {
            if !s.update(&a, |acc| acc.balance = v) {
                s.set(a, Account::with_balance(v));
            }
        })
    };
    let bal = sigma_b.balance(c);
    let mut out: Vec<(String, FinPot)> = vec![
        ("actual outcome".into(), FinPot::Actual),
        ("exception".into(), FinPot::Final(ExecutionState::Exc)),
        ("halt, all gas returned".into(), halt(sigma_b.clone(), g0, Vec::new())),
        ("halt, no gas returned".into(), halt(sigma_b.clone(), Word256::ZERO, Vec::new())),
        ("halt returning 1".into(), halt(sigma_b.clone(), g0, word_bytes(1))),
        ("halt returning 0".into(), halt(sigma_b.clone(), g0, word_bytes(0))),
        ("balance of c + 1".into(), halt(set_balance(*c, bal.wrapping_add(Word256::one())), g0, Vec::new())),
        ("balance of c doubled".into(), halt(set_balance(*c, bal.wrapping_add(bal)), g0, Vec::new())),
        ("balance of c zero".into(), halt(set_balance(*c, Word256::ZERO), g0, Vec::new())),
    ];
    if !bal.is_zero() {
        out.push(("balance of c - 1".into(), halt(set_balance(*c, bal.wrapping_sub(Word256::one())), g0, Vec::new())));
    }
    let cb = sigma_b.balance(&callee_addr);
    out.push((
        "callee balance + 1".into(),
        halt(set_balance(callee_addr, cb.wrapping_add(Word256::one())), g0, Vec::new()),
    ));
    if callee_addr != *c {
        let s = with(&|s: &mut GlobalState| {
            let mut acc = s.get(&callee_addr).cloned().unwrap_or_default();
            acc.nonce = acc.nonce.wrapping_add(Word256::one());
            s.set(callee_addr, acc);
        });
        out.push(("callee nonce + 1".into(), halt(s, g0, Vec::new())));
    }
    // storage cells of other accounts read after the call returns
    let mut cells: BTreeSet<(Address, Word256)> = BTreeSet::new();
    if let Some(ran) = actual {
        for a in &ran.out.trace {
            if a.op == Opcode::SLoad {
                if let (Some(k), Some(key)) = (&a.contract, a.args().first()) {
                    if k.address != *c {
                        cells.insert((k.address, *key));
                    }
                }
            }
        }
    }
    for (a, key) in &cells {
        let s = with(&|s: &mut GlobalState| {
            let mut acc = s.get(a).cloned().unwrap_or_default();
            let v = acc.storage.get(key);
            acc.storage.set(*key, flip(v));
            s.set(*a, acc);
        });
        out.push((format!("storage[{key}] of {a} flipped"), halt(s, g0, Vec::new())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(space.fin_pot.seed ^ (call as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let others: Vec<Address> = sigma_b.addresses().filter(|a| *a != c).copied().collect();
    for i in 0..space.fin_pot.samples {
        let gas = Word256::from_u64(rng.gen_range(0..=g0.to_u64().unwrap_or(u64::MAX)));
        let mut data = vec![0u8; rng.gen_range(0..=64)];
        rng.fill(&mut data[..]);
        let mut s = sigma_b.clone();
        if !others.is_empty() && rng.gen_bool(0.5) {
            let a = others[rng.gen_range(0..others.len())];
            let mut acc = s.get(&a).cloned().unwrap_or_default();
            acc.balance = Word256::from_u64(rng.gen());
            acc.storage.set(Word256::from_u64(rng.gen_range(0..4)), Word256::from_u64(rng.gen()));
            s.set(a, acc);
        }
        if rng.gen_bool(0.5) {
            let v = Word256::from_u64(rng.gen());
            if !s.update(c, |acc| acc.balance = v) {
                s.set(*c, Account::with_balance(v));
            }
        }
        let fin = if rng.gen_bool(0.2) { FinPot::Final(ExecutionState::Exc) } else { halt(s, gas, data) };
        out.push((format!("random sample {i}"), fin));
    }
    out
}

fn effect_member(
    space: &ScenarioSpace,
    env: &TransactionEnvironment,
    st: &CallStack,
    label: String,
    fin: &FinPot,
) -> Result<Member, CheckError> {
    let depth = st.len() - 1;
    let start = match fin {
        // run the callee to its final state; only the continuation is compared
        FinPot::Actual => match frame_run(env, st, space.budget, None, Until::FrameFinished)? {
            RunResult::Done(r) => r.out.final_stack,
            RunResult::Exhausted => return Ok(Member { label, result: RunResult::Exhausted, base_sigma: None }),
        },
        FinPot::Final(s) => st.replace_top(Frame::new(s.clone(), st.top().expect("callee").annotation.clone())),
    };
    let result = frame_run(env, &start, space.budget, None, Until::Depth(depth))?;
    Ok(Member { label, result, base_sigma: None })
}

fn effect_family(
    space: &ScenarioSpace,
    env: &TransactionEnvironment,
    st: &CallStack,
    c: &Address,
    call: usize,
) -> Result<(Vec<String>, Vec<Member>), CheckError> {
    let actual = effect_member(space, env, st, "actual outcome".into(), &FinPot::Actual)?;
    let actual_ran = match &actual.result {
        RunResult::Done(r) => Some(r.as_ref().clone()),
        RunResult::Exhausted => None,
    };
    let samples = fin_pot_samples(space, st, c, call, actual_ran.as_ref());
    let labels = samples.iter().map(|(l, _)| l.clone()).collect();
    let mut members = vec![actual];
    let rest: Vec<Member> = samples[1..]
        .par_iter()
        .map(|(label, fin)| effect_member(space, env, st, label.clone(), fin))
        .collect::<Result<_, _>>()?;
    members.extend(rest);
    Ok((labels, members))
}

pub fn check_effect_independence(
    space: &ScenarioSpace,
    c: Address,
    untrusted: &AddressSet,
) -> Result<Verdict, CheckError> {
    let obs = observe(space, &c, untrusted)?;
    let mut explored = 0;
    let mut incomplete = obs.incomplete;
    for (i, st) in obs.untrusted_calls.iter().enumerate() {
        let (_, members) = effect_family(space, &obs.env, st, &c, i)?;
        explored += members.len();
        let (hit, inc) = compare_family(&members, &c, space.relaxed_gas);
        incomplete |= inc;
        if let Some((a, b, runs, d)) = hit {
            let reason = format!("call {i}: continuations differ between {} and {}", runs[0].label, runs[1].label);
            let replay = Replay::Effect { call: i, a, b };
            return Ok(verdict(
                Property::EffectIndependence,
                c,
                violated(reason, replay, runs, d),
                explored,
                incomplete,
            ));
        }
    }
    Ok(verdict(Property::EffectIndependence, c, Outcome::Holds, explored, incomplete))
}

// Atomicity

fn final_sigma(ran: &Ran, entry_sigma: &GlobalState) -> GlobalState {
    match ran.out.final_state() {
        Some(ExecutionState::Halt(h)) => h.sigma.clone(),
        // an exception leaves the state of the entry configuration
        _ => entry_sigma.clone(),
    }
}

fn gas_member(
    space: &ScenarioSpace,
    env: &TransactionEnvironment,
    entry: &CallStack,
    g: Word256,
) -> Result<Member, CheckError> {
    let top = entry.top().expect("entry frame");
    let mut r = top.state.as_regular().expect("regular entry").clone();
    r.mu.gas = g;
    let st = entry.replace_top(Frame::new(ExecutionState::Regular(Box::new(r.clone())), top.annotation.clone()));
    let result = frame_run(env, &st, space.budget, None, Until::FrameFinished)?;
    Ok(Member { label: format!("gas {g}"), result, base_sigma: Some(r.sigma) })
}

pub fn check_atomicity(space: &ScenarioSpace, c: Address) -> Result<Verdict, CheckError> {
    if space.gas_values.len() < 2 {
        return Err(CheckError::Precondition("atomicity needs at least two gas values".into()));
    }
    let obs = observe(space, &c, &AddressSet::new())?;
    let mut explored = 0;
    let mut incomplete = obs.incomplete;
    for (e, entry) in obs.entries.iter().enumerate() {
        let entry_sigma = top_sigma(entry).expect("regular entry");
        let members: Vec<Member> =
            space.gas_values.par_iter().map(|g| gas_member(space, &obs.env, entry, *g)).collect::<Result<_, _>>()?;
        explored += members.len();
        let finals: Vec<Option<GlobalState>> = members
            .iter()
            .map(|m| match &m.result {
                RunResult::Done(r) => Some(final_sigma(r, &entry_sigma)),
                RunResult::Exhausted => None,
            })
            .collect();
        incomplete |= finals.iter().any(Option::is_none);
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                let (Some(si), Some(sj)) = (&finals[i], &finals[j]) else {
                    continue;
                };
                if si == sj || *si == entry_sigma || *sj == entry_sigma {
                    continue;
                }
                let runs = [i, j]
                    .iter()
                    .map(|&k| match &members[k].result {
                        RunResult::Done(r) => witness_run(&members[k], r, &c),
                        RunResult::Exhausted => unreachable!(),
                    })
                    .collect();
                let reason = format!(
                    "entry {e}: gas {} and {} end in different states, both changed",
                    space.gas_values[i], space.gas_values[j]
                );
                let replay = Replay::Gas { entry: e, a: space.gas_values[i], b: space.gas_values[j] };
                return Ok(verdict(Property::Atomicity, c, violated(reason, replay, runs, None), explored, incomplete));
            }
        }
    }
    Ok(verdict(Property::Atomicity, c, Outcome::Holds, explored, incomplete))
}

// Call integrity

/// Runs the entry configuration with the untrusted codes replaced in the
/// global state of its top frame.
fn direct_member(
    space: &ScenarioSpace,
    env: &TransactionEnvironment,
    entry: &CallStack,
    k: usize,
    codes: &BTreeMap<Address, Code>,
) -> Result<Member, CheckError> {
    let top = entry.top().expect("entry frame");
    let mut r = top.state.as_regular().expect("regular entry").clone();
    if k > 0 {
        for (a, code) in codes {
            if !r.sigma.update(a, |acc| acc.code = code.clone()) && !code.is_empty() {
                r.sigma.set(*a, Account::with_code(code.clone()));
            }
        }
    }
    let st = entry.replace_top(Frame::new(ExecutionState::Regular(Box::new(r)), top.annotation.clone()));
    let result = frame_run(env, &st, space.budget, None, Until::FrameFinished)?;
    Ok(Member { label: format!("code variant {k}"), result, base_sigma: None })
}

pub fn check_call_integrity(
    space: &ScenarioSpace,
    c: Address,
    untrusted: &AddressSet,
    mode: IntegrityMode,
) -> Result<Verdict, CheckError> {
    let mut v = match mode {
        IntegrityMode::Direct => call_integrity_direct(space, c, untrusted)?,
        IntegrityMode::Theorem1 => call_integrity_theorem1(space, c, untrusted)?,
    };
    v.mode = Some(mode);
    Ok(v)
}

fn call_integrity_direct(space: &ScenarioSpace, c: Address, untrusted: &AddressSet) -> Result<Verdict, CheckError> {
    let obs = observe(space, &c, untrusted)?;
    let mut explored = 0;
    let mut incomplete = obs.incomplete;
    for (e, entry) in obs.entries.iter().enumerate() {
        let sigma = top_sigma(entry).unwrap_or_default();
        let assigns = code_assignments(space, untrusted, &sigma);
        let members: Vec<Member> = assigns
            .par_iter()
            .enumerate()
            .map(|(k, codes)| direct_member(space, &obs.env, entry, k, codes))
            .collect::<Result<_, _>>()?;
        explored += members.len();
        let (hit, inc) = compare_family(&members, &c, space.relaxed_gas);
        incomplete |= inc;
        if let Some((a, b, runs, d)) = hit {
            let reason = format!("entry {e}: calls differ between {} and {}", runs[0].label, runs[1].label);
            let replay = Replay::Direct { entry: e, a, b };
            return Ok(verdict(Property::CallIntegrity, c, violated(reason, replay, runs, d), explored, incomplete));
        }
    }
    Ok(verdict(Property::CallIntegrity, c, Outcome::Holds, explored, incomplete))
}

fn call_integrity_theorem1(space: &ScenarioSpace, c: Address, untrusted: &AddressSet) -> Result<Verdict, CheckError> {
    let parts = [
        check_code_independence(space, c, untrusted)?,
        check_effect_independence(space, c, untrusted)?,
        check_single_entrancy(space, c)?,
    ];
    let explored = parts.iter().map(|p| p.explored).sum();
    let incomplete = parts.iter().any(|p| p.incomplete);
    for p in &parts {
        if let Some(w) = p.witness() {
            let witness = Witness {
                reason: format!("{} fails: {}", p.property, w.reason),
                replay: Replay::Conjunct { property: p.property, inner: Box::new(w.replay.clone()) },
                runs: w.runs.clone(),
                divergence: w.divergence,
            };
            let outcome = Outcome::Violated { witness: Box::new(witness) };
            return Ok(verdict(Property::CallIntegrity, c, outcome, explored, incomplete));
        }
    }
    Ok(verdict(Property::CallIntegrity, c, Outcome::Holds, explored, incomplete))
}

/// The conjunct of the proof technique that failed, for a theorem1-mode verdict.
pub fn failed_conjunct(v: &Verdict) -> Option<Property> {
    match v.witness().map(|w| &w.replay) {
        Some(Replay::Conjunct { property, .. }) => Some(*property),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Replay

/// Parameters a property needs beyond the scenario space.
#[derive(Clone, Debug, Default)]
pub struct CheckParams {
    pub untrusted: AddressSet,
    pub allowed: AddressSet,
    pub components: Vec<EnvComponent>,
    pub mode: IntegrityMode,
}

/// Runs the checker for `property`.
pub fn check(
    space: &ScenarioSpace,
    property: Property,
    c: Address,
    params: &CheckParams,
) -> Result<Verdict, CheckError> {
    match property {
        Property::SingleEntrancy => check_single_entrancy(space, c),
        Property::CallRestriction => check_call_restriction(space, c, &params.allowed),
        Property::FuelledCalls => check_fuelled_calls(space, c),
        Property::StackLimit => check_stack_limit_compliance(space, c),
        Property::Atomicity => check_atomicity(space, c),
        Property::EnvIndependence => check_env_independence(space, c, &params.components),
        Property::AccountStateIndependence => check_account_state_independence(space, c),
        Property::CodeIndependence => check_code_independence(space, c, &params.untrusted),
        Property::EffectIndependence => check_effect_independence(space, c, &params.untrusted),
        Property::CallIntegrity => check_call_integrity(space, c, &params.untrusted, params.mode),
    }
}

fn pair_differs(x: &Member, y: &Member, c: &Address, relaxed: bool) -> bool {
    match (&x.result, &y.result) {
        (RunResult::Done(a), RunResult::Done(b)) => {
            first_divergence(&calls_of(&a.full_trace, c), &calls_of(&b.full_trace, c), relaxed).is_some()
        }
        _ => false,
    }
}

/// Re-executes the runs recorded in a witness and reports whether they still
/// demonstrate the violation.
pub fn replay(
    space: &ScenarioSpace,
    property: Property,
    c: Address,
    params: &CheckParams,
    witness: &Witness,
) -> Result<bool, CheckError> {
    replay_inner(space, property, c, params, &witness.replay)
}

fn replay_inner(
    space: &ScenarioSpace,
    property: Property,
    c: Address,
    params: &CheckParams,
    r: &Replay,
) -> Result<bool, CheckError> {
    let relaxed = space.relaxed_gas;
    match r {
        Replay::Monitor { step } => {
            let Some(monitor) = monitor_for(property, c, params) else {
                return Ok(false);
            };
            let mut n = 0u64;
            let mut fired = false;
            run_scenario(space, &Fork::default(), |prev, out| {
                n += 1;
                if n == *step {
                    fired = monitor(prev, out).is_some();
                    return ControlFlow::Break(());
                }
                ControlFlow::Continue(())
            })?;
            Ok(fired)
        }
        Replay::Env { component, a, b } => {
            let x = env_member(space, *component, *a)?;
            let y = env_member(space, *component, *b)?;
            Ok(pair_differs(&x, &y, &c, relaxed))
        }
        Replay::AccountState { a, b } => {
            let list = account_perturbations(space, &c)?;
            let (Some(pa), Some(pb)) = (list.get(*a), list.get(*b)) else {
                return Ok(false);
            };
            let x = state_member(space, &c, *a, pa)?;
            let y = state_member(space, &c, *b, pb)?;
            Ok(pair_differs(&x, &y, &c, relaxed))
        }
        Replay::Code { entry, a, b } => {
            let obs = observe(space, &c, &params.untrusted)?;
            let Some(st) = obs.entries.get(*entry) else {
                return Ok(false);
            };
            let assigns = code_assignments(space, &params.untrusted, &top_sigma(st).unwrap_or_default());
            let x = code_member(space, &obs.env, st, *a, &assigns[*a])?;
            let y = code_member(space, &obs.env, st, *b, &assigns[*b])?;
            Ok(pair_differs(&x, &y, &c, relaxed))
        }
        Replay::Effect { call, a, b } => {
            let obs = observe(space, &c, &params.untrusted)?;
            let Some(st) = obs.untrusted_calls.get(*call) else {
                return Ok(false);
            };
            let (_, members) = effect_family(space, &obs.env, st, &c, *call)?;
            let (Some(x), Some(y)) = (members.get(*a), members.get(*b)) else {
                return Ok(false);
            };
            Ok(pair_differs(x, y, &c, relaxed))
        }
        Replay::Gas { entry, a, b } => {
            let obs = observe(space, &c, &AddressSet::new())?;
            let Some(st) = obs.entries.get(*entry) else {
                return Ok(false);
            };
            let entry_sigma = top_sigma(st).expect("regular entry");
            let x = gas_member(space, &obs.env, st, *a)?;
            let y = gas_member(space, &obs.env, st, *b)?;
            match (&x.result, &y.result) {
                (RunResult::Done(p), RunResult::Done(q)) => {
                    let (sp, sq) = (final_sigma(p, &entry_sigma), final_sigma(q, &entry_sigma));
                    Ok(sp != sq && sp != entry_sigma && sq != entry_sigma)
                }
                _ => Ok(false),
            }
        }
        Replay::Direct { entry, a, b } => {
            let obs = observe(space, &c, &params.untrusted)?;
            let Some(st) = obs.entries.get(*entry) else {
                return Ok(false);
            };
            let assigns = code_assignments(space, &params.untrusted, &top_sigma(st).unwrap_or_default());
            let (Some(ca), Some(cb)) = (assigns.get(*a), assigns.get(*b)) else {
                return Ok(false);
            };
            let x = direct_member(space, &obs.env, st, *a, ca)?;
            let y = direct_member(space, &obs.env, st, *b, cb)?;
            Ok(pair_differs(&x, &y, &c, relaxed))
        }
        Replay::Conjunct { property, inner } => replay_inner(space, *property, c, params, inner),
    }
}

/// Whether a trace contains an exceptional return observed by `c`.
pub fn saw_callee_exception(trace: &[Action], c: &Address) -> bool {
    trace
        .iter()
        .any(|a| a.event == Event::Return(ReturnKind::Exc) && a.contract.as_ref().is_some_and(|k| k.address == *c))
}
