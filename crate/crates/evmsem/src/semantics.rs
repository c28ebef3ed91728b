//! The small-step relation over annotated call stacks and the runners built on it.
//!
//! [`step`] rewrites the top of a call stack by exactly one rule and reports
//! the action taken. [`run`] iterates it to a final configuration;
//! [`run_frame`] stops as soon as the frame on top of the initial stack has
//! finished, and applies an optional code override to that frame only.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::sync::Arc;

use thiserror::Error;

use crate::bytecode::{current_opcode, next_pc, Code, Opcode};
use crate::gas::{self, wide, Gas, SCHEDULE};
use crate::state::{
    Account, Annotation, CallStack, Contract, ExecutionEnvironment, ExecutionState, Frame, GlobalState, HaltState,
    LogEvent, MachineState, RegularState, ResourceError, TransactionEnvironment, MEMORY_LIMIT,
};
use crate::traces::{Action, Event, ReturnKind, Trace};
use crate::words::{addmod, binop, fresh_address, keccak256, mulmod, Address, BinOp, Word256};

/// Call-stack depth at which calls and creations stop pushing frames.
pub const CALL_DEPTH_LIMIT: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StepError {
    #[error("malformed configuration: {0}")]
    MalformedConfiguration(String),
    #[error(transparent)]
    Resource(#[from] ResourceError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Progressed,
    Final,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub next: CallStack,
    pub action: Action,
    pub status: Status,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepBudget {
    pub max_steps: u64,
}

impl Default for StepBudget {
    fn default() -> Self {
        StepBudget { max_steps: 1_000_000 }
    }
}

/// Replacement code consulted by `EXTCODESIZE` and `EXTCODECOPY` of the frame
/// being analysed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CodeOverride(BTreeMap<Address, Code>);

impl CodeOverride {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, a: &Address) -> Option<&Code> {
        self.0.get(a)
    }

    pub fn insert(&mut self, a: Address, code: Code) {
        self.0.insert(a, code);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Address, &Code)> {
        self.0.iter()
    }
}

impl FromIterator<(Address, Code)> for CodeOverride {
    fn from_iter<I: IntoIterator<Item = (Address, Code)>>(iter: I) -> Self {
        CodeOverride(iter.into_iter().collect())
    }
}

/// Adds accounts created during a call to the override without touching
/// entries that are already present.
pub fn extend_override_after_create(
    over: &CodeOverride,
    created: impl IntoIterator<Item = (Address, Code)>,
) -> CodeOverride {
    let mut out = over.clone();
    for (a, code) in created {
        out.0.entry(a).or_insert(code);
    }
    out
}

enum Next {
    Replace(ExecutionState),
    Push(Frame),
    PushExc,
}

struct Outcome {
    next: Next,
    event: Event,
}

impl Outcome {
    fn exc(args: Vec<Word256>) -> Self {
        Outcome { next: Next::Replace(ExecutionState::Exc), event: Event::Exec(args) }
    }

    fn underflow() -> Self {
        Outcome { next: Next::Replace(ExecutionState::Exc), event: Event::StackUnderflow }
    }

    fn cont(r: RegularState, args: Vec<Word256>) -> Self {
        Outcome { next: Next::Replace(ExecutionState::Regular(Box::new(r))), event: Event::Exec(args) }
    }
}

/// Operands of the current instruction, top of stack first.
fn operands(mu: &MachineState, n: usize) -> Option<Vec<Word256>> {
    let len = mu.stack.len();
    (len >= n).then(|| mu.stack[len - n..].iter().rev().copied().collect())
}

/// The successor state with `pops` operands replaced by `push` (listed top
/// first), `cost` deducted and the program counter advanced.
fn advance(r: &RegularState, op: Opcode, pops: usize, push: &[Word256], cost: &Gas) -> RegularState {
    let mut n = r.clone();
    let len = n.mu.stack.len();
    n.mu.stack.truncate(len - pops);
    n.mu.stack.extend(push.iter().rev());
    n.mu.gas = n.mu.gas.wrapping_sub(cost.resize());
    n.mu.pc = next_pc(&r.mu.pc, op);
    n
}

fn to_len(w: &Word256) -> Result<usize, StepError> {
    match w.to_usize() {
        Some(n) if n <= MEMORY_LIMIT => Ok(n),
        _ => Err(ResourceError::Memory.into()),
    }
}

/// `len` bytes of `src` starting at `offset`, zero-padded past the end.
fn slice_padded(src: &[u8], offset: &Word256, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    if let Some(off) = offset.to_usize() {
        if off < src.len() {
            let end = off.saturating_add(len).min(src.len());
            out[..end - off].copy_from_slice(&src[off..end]);
        }
    }
    out
}

fn block_hash(env: &TransactionEnvironment, n: &Word256) -> Word256 {
    let mut h = env.header.parent;
    for _ in 0..256 {
        if h.is_zero() {
            return Word256::ZERO;
        }
        let Some(hdr) = env.ancestor(&h) else {
            return Word256::ZERO;
        };
        if *n > hdr.number {
            return Word256::ZERO;
        }
        if *n == hdr.number {
            return h;
        }
        h = hdr.parent;
    }
    Word256::ZERO
}

fn binop_of(op: Opcode) -> Option<(BinOp, u64)> {
    let v = SCHEDULE.very_low;
    let l = SCHEDULE.low;
    Some(match op {
        Opcode::Add => (BinOp::Add, v),
        Opcode::Sub => (BinOp::Sub, v),
        Opcode::Lt => (BinOp::Lt, v),
        Opcode::Gt => (BinOp::Gt, v),
        Opcode::Slt => (BinOp::Slt, v),
        Opcode::Sgt => (BinOp::Sgt, v),
        Opcode::Eq => (BinOp::Eq, v),
        Opcode::And => (BinOp::And, v),
        Opcode::Or => (BinOp::Or, v),
        Opcode::Xor => (BinOp::Xor, v),
        Opcode::Byte => (BinOp::Byte, v),
        Opcode::Mul => (BinOp::Mul, l),
        Opcode::Div => (BinOp::Div, l),
        Opcode::Sdiv => (BinOp::Sdiv, l),
        Opcode::Mod => (BinOp::Mod, l),
        Opcode::Smod => (BinOp::Smod, l),
        Opcode::SignExtend => (BinOp::SignExtend, l),
        _ => return None,
    })
}

/// Parameters of a call-family instruction shared by the call and return rules.
struct CallParams {
    args: Vec<Word256>,
    to: Address,
    value: Word256,
    in_off: Word256,
    in_size: Word256,
    out_off: Word256,
    out_size: Word256,
    aw: Gas,
    /// Gas handed to the callee.
    callee_gas: Gas,
    /// Total charged to the caller when the callee does not return gas.
    cost: Gas,
}

fn call_params(op: Opcode, r: &RegularState) -> Option<CallParams> {
    let mu = &r.mu;
    let n = if op == Opcode::DelegateCall { 6 } else { 7 };
    let args = operands(mu, n)?;
    let (g, to) = (args[0], Address::from_word(&args[1]));
    let (value, rest) = match op {
        Opcode::DelegateCall => (Word256::ZERO, &args[2..]),
        _ => (args[2], &args[3..]),
    };
    let (in_off, in_size, out_off, out_size) = (rest[0], rest[1], rest[2], rest[3]);
    let flag = match op {
        Opcode::Call => r.sigma.contains(&to),
        _ => true,
    };
    let aw_in = gas::mem_ext(&mu.active_words, &in_off, &in_size);
    let aw = aw_in.max(mem_ext_wide(&aw_in, &out_off, &out_size));
    let callee_gas = gas::c_gascap(&value, flag, &g, &mu.gas);
    let cost =
        gas::c_base(&value, flag).wrapping_add(gas::c_mem(&wide(&mu.active_words), &aw)).wrapping_add(callee_gas);
    Some(CallParams { args, to, value, in_off, in_size, out_off, out_size, aw, callee_gas, cost })
}

fn mem_ext_wide(i: &Gas, offset: &Word256, size: &Word256) -> Gas {
    if size.is_zero() {
        return *i;
    }
    let end = wide(offset).wrapping_add(wide(size));
    (*i).max(end.div_ceil_u64(32))
}

struct CreateParams {
    args: Vec<Word256>,
    value: Word256,
    in_off: Word256,
    in_size: Word256,
    aw: Gas,
    cost: Gas,
}

fn create_params(r: &RegularState) -> Option<CreateParams> {
    let args = operands(&r.mu, 3)?;
    let aw = gas::mem_ext(&r.mu.active_words, &args[1], &args[2]);
    let cost = gas::c_mem(&wide(&r.mu.active_words), &aw).wrapping_add(gas::gas(SCHEDULE.create));
    Some(CreateParams { value: args[0], in_off: args[1], in_size: args[2], aw, cost, args })
}

/// Gas the caller forwards to creation code.
fn create_forward(r: &RegularState, cost: &Gas) -> Word256 {
    let rem = wide(&r.mu.gas).wrapping_sub(*cost).resize::<4>();
    gas::all_but_one_64th(&rem)
}

fn creation_address(r: &RegularState) -> Address {
    let actor = r.iota.actor;
    let nonce = r.sigma.get(&actor).map_or(Word256::ZERO, |a| a.nonce);
    fresh_address(&actor, &nonce.wrapping_add(Word256::one()))
}

fn exec_regular(
    env: &TransactionEnvironment,
    r: &RegularState,
    depth: usize,
    over: Option<&CodeOverride>,
) -> Result<(Opcode, Outcome), StepError> {
    let op = current_opcode(&r.iota.code, &r.mu.pc);
    let out = exec_op(env, r, op, depth, over)?;
    Ok((op, out))
}

fn exec_op(
    env: &TransactionEnvironment,
    r: &RegularState,
    op: Opcode,
    depth: usize,
    over: Option<&CodeOverride>,
) -> Result<Outcome, StepError> {
    let mu = &r.mu;
    let len = mu.stack.len();
    let g = gas::gas;

    // Plain stack transformer: pops `n`, pushes `f(args)`, costs `c`.
    let simple = |n: usize, c: Gas, f: &dyn Fn(&[Word256]) -> Vec<Word256>| -> Outcome {
        let Some(args) = operands(mu, n) else {
            return Outcome::underflow();
        };
        let push = f(&args);
        if !gas::valid(&mu.gas, &c, len - n + push.len()) {
            return Outcome::exc(args);
        }
        Outcome::cont(advance(r, op, n, &push, &c), args)
    };

    if let Some((b, cost)) = binop_of(op) {
        return Ok(simple(2, g(cost), &|a| vec![binop(b, a[0], a[1])]));
    }

    let out = match op {
        Opcode::Stop => Outcome {
            next: Next::Replace(ExecutionState::Halt(Box::new(HaltState {
                sigma: r.sigma.clone(),
                gas: mu.gas,
                data: Vec::new(),
                eta: r.eta.clone(),
            }))),
            event: Event::Exec(vec![]),
        },
        Opcode::Exp => {
            let Some(args) = operands(mu, 2) else {
                return Ok(Outcome::underflow());
            };
            simple(2, gas::exp_cost(&args[1]), &|a| vec![binop(BinOp::Exp, a[0], a[1])])
        }
        Opcode::AddMod => simple(3, g(SCHEDULE.addmod), &|a| vec![addmod(a[0], a[1], a[2])]),
        Opcode::MulMod => simple(3, g(SCHEDULE.addmod), &|a| vec![mulmod(a[0], a[1], a[2])]),
        Opcode::IsZero => simple(1, g(SCHEDULE.very_low), &|a| vec![Word256::from_bool(a[0].is_zero())]),
        Opcode::Not => simple(1, g(SCHEDULE.very_low), &|a| vec![!a[0]]),
        Opcode::Sha3 => {
            let Some(args) = operands(mu, 2) else {
                return Ok(Outcome::underflow());
            };
            let aw = gas::mem_ext(&mu.active_words, &args[0], &args[1]);
            let c = gas::c_mem(&wide(&mu.active_words), &aw)
                .wrapping_add(g(SCHEDULE.sha3))
                .wrapping_add(gas::word_cost(SCHEDULE.sha3_word, &args[1]));
            if !gas::valid(&mu.gas, &c, len - 1) {
                return Ok(Outcome::exc(args));
            }
            let data = mu.memory.read(&args[0], to_len(&args[1])?);
            let mut n = advance(r, op, 2, &[keccak256(&data)], &c);
            n.mu.active_words = aw.resize();
            Outcome::cont(n, args)
        }
        Opcode::Address => simple(0, g(SCHEDULE.base), &|_| vec![r.iota.actor.to_word()]),
        Opcode::Origin => simple(0, g(SCHEDULE.base), &|_| vec![env.origin.to_word()]),
        Opcode::Caller => simple(0, g(SCHEDULE.base), &|_| vec![r.iota.sender.to_word()]),
        Opcode::CallValue => simple(0, g(SCHEDULE.base), &|_| vec![r.iota.value]),
        Opcode::CallDataSize => simple(0, g(SCHEDULE.base), &|_| vec![Word256::from_u64(r.iota.input.len() as u64)]),
        Opcode::CodeSize => simple(0, g(SCHEDULE.base), &|_| vec![Word256::from_u64(r.iota.code.len() as u64)]),
        Opcode::GasPrice => simple(0, g(SCHEDULE.base), &|_| vec![env.prize]),
        Opcode::Coinbase => simple(0, g(SCHEDULE.base), &|_| vec![env.header.beneficiary.to_word()]),
        Opcode::Timestamp => simple(0, g(SCHEDULE.base), &|_| vec![env.header.timestamp]),
        Opcode::Number => simple(0, g(SCHEDULE.base), &|_| vec![env.header.number]),
        Opcode::Difficulty => simple(0, g(SCHEDULE.base), &|_| vec![env.header.difficulty]),
        Opcode::GasLimit => simple(0, g(SCHEDULE.base), &|_| vec![env.header.gaslimit]),
        Opcode::Pc => simple(0, g(SCHEDULE.base), &|_| vec![mu.pc]),
        Opcode::MSize => simple(0, g(SCHEDULE.base), &|_| vec![mu.active_words.wrapping_mul(Word256::from_u64(32))]),
        Opcode::Gas => simple(0, g(SCHEDULE.base), &|_| vec![mu.gas]),
        Opcode::Balance => simple(1, g(SCHEDULE.balance), &|a| vec![r.sigma.balance(&Address::from_word(&a[0]))]),
        Opcode::CallDataLoad => {
            simple(1, g(SCHEDULE.very_low), &|a| vec![Word256::from_be_slice(&slice_padded(&r.iota.input, &a[0], 32))])
        }
        Opcode::ExtCodeSize => simple(1, g(SCHEDULE.ext_code), &|a| {
            let addr = Address::from_word(&a[0]);
            let code = over.and_then(|o| o.get(&addr)).or_else(|| r.sigma.code(&addr));
            vec![Word256::from_u64(code.map_or(0, |c| c.len() as u64))]
        }),
        Opcode::BlockHash => simple(1, g(SCHEDULE.blockhash), &|a| vec![block_hash(env, &a[0])]),
        Opcode::Pop => simple(1, g(SCHEDULE.base), &|_| vec![]),
        Opcode::Push(n) => {
            let start = mu.pc.wrapping_add(Word256::one());
            let imm = slice_padded(r.iota.code.as_bytes(), &start, n as usize);
            let v = Word256::from_be_slice(&imm);
            let c = g(SCHEDULE.very_low);
            if !gas::valid(&mu.gas, &c, len + 1) {
                return Ok(Outcome::exc(vec![v]));
            }
            Outcome::cont(advance(r, op, 0, &[v], &c), vec![v])
        }
        Opcode::Dup(n) => {
            let n = n as usize;
            let Some(args) = operands(mu, n) else {
                return Ok(Outcome::underflow());
            };
            let c = g(SCHEDULE.very_low);
            if !gas::valid(&mu.gas, &c, len + 1) {
                return Ok(Outcome::exc(args));
            }
            let mut next = advance(r, op, 0, &[], &c);
            next.mu.stack.push(args[n - 1]);
            Outcome::cont(next, args)
        }
        Opcode::Swap(n) => {
            let n = n as usize;
            let Some(args) = operands(mu, n + 1) else {
                return Ok(Outcome::underflow());
            };
            let c = g(SCHEDULE.very_low);
            if !gas::valid(&mu.gas, &c, len) {
                return Ok(Outcome::exc(args));
            }
            let mut next = advance(r, op, 0, &[], &c);
            next.mu.stack.swap(len - 1, len - 1 - n);
            Outcome::cont(next, args)
        }
        Opcode::CallDataCopy | Opcode::CodeCopy => {
            let Some(args) = operands(mu, 3) else {
                return Ok(Outcome::underflow());
            };
            let (m_off, d_off, size) = (args[0], args[1], args[2]);
            let aw = gas::mem_ext(&mu.active_words, &m_off, &size);
            let c = gas::c_mem(&wide(&mu.active_words), &aw)
                .wrapping_add(g(SCHEDULE.very_low))
                .wrapping_add(gas::word_cost(SCHEDULE.copy_word, &size));
            if !gas::valid(&mu.gas, &c, len - 3) {
                return Ok(Outcome::exc(args));
            }
            let src: &[u8] = if op == Opcode::CodeCopy { r.iota.code.as_bytes() } else { &r.iota.input };
            let data = slice_padded(src, &d_off, to_len(&size)?);
            let mut n = advance(r, op, 3, &[], &c);
            n.mu.memory.write(&m_off, &data)?;
            n.mu.active_words = aw.resize();
            Outcome::cont(n, args)
        }
        Opcode::ExtCodeCopy => {
            let Some(args) = operands(mu, 4) else {
                return Ok(Outcome::underflow());
            };
            let (addr, m_off, c_off, size) = (Address::from_word(&args[0]), args[1], args[2], args[3]);
            let aw = gas::mem_ext(&mu.active_words, &m_off, &size);
            let c = gas::c_mem(&wide(&mu.active_words), &aw)
                .wrapping_add(g(SCHEDULE.ext_code))
                .wrapping_add(gas::word_cost(SCHEDULE.copy_word, &size));
            if !gas::valid(&mu.gas, &c, len - 4) {
                return Ok(Outcome::exc(args));
            }
            let code = over.and_then(|o| o.get(&addr)).or_else(|| r.sigma.code(&addr));
            let src = code.map_or(&[][..], |c| c.as_bytes());
            let data = slice_padded(src, &c_off, to_len(&size)?);
            let mut n = advance(r, op, 4, &[], &c);
            n.mu.memory.write(&m_off, &data)?;
            n.mu.active_words = aw.resize();
            Outcome::cont(n, args)
        }
        Opcode::MLoad => {
            let Some(args) = operands(mu, 1) else {
                return Ok(Outcome::underflow());
            };
            let aw = gas::mem_ext(&mu.active_words, &args[0], &Word256::from_u64(32));
            let c = gas::c_mem(&wide(&mu.active_words), &aw).wrapping_add(g(SCHEDULE.very_low));
            if !gas::valid(&mu.gas, &c, len) {
                return Ok(Outcome::exc(args));
            }
            let v = mu.memory.read_word(&args[0]);
            let mut n = advance(r, op, 1, &[v], &c);
            n.mu.active_words = aw.resize();
            Outcome::cont(n, args)
        }
        Opcode::MStore | Opcode::MStore8 => {
            let Some(args) = operands(mu, 2) else {
                return Ok(Outcome::underflow());
            };
            let width = if op == Opcode::MStore { 32 } else { 1 };
            let aw = gas::mem_ext(&mu.active_words, &args[0], &Word256::from_u64(width));
            let c = gas::c_mem(&wide(&mu.active_words), &aw).wrapping_add(g(SCHEDULE.very_low));
            if !gas::valid(&mu.gas, &c, len - 2) {
                return Ok(Outcome::exc(args));
            }
            let bytes = args[1].to_be_bytes();
            let mut n = advance(r, op, 2, &[], &c);
            n.mu.memory.write(&args[0], &bytes[32 - width as usize..])?;
            n.mu.active_words = aw.resize();
            Outcome::cont(n, args)
        }
        Opcode::SLoad => simple(1, g(SCHEDULE.sload), &|a| {
            vec![r.sigma.get(&r.iota.actor).map_or(Word256::ZERO, |acc| acc.storage.get(&a[0]))]
        }),
        Opcode::SStore => {
            let Some(args) = operands(mu, 2) else {
                return Ok(Outcome::underflow());
            };
            let (key, val) = (args[0], args[1]);
            let current = r.sigma.get(&r.iota.actor).map_or(Word256::ZERO, |acc| acc.storage.get(&key));
            let c = if !val.is_zero() && current.is_zero() { g(SCHEDULE.sstore_set) } else { g(SCHEDULE.sstore_reset) };
            if !gas::valid(&mu.gas, &c, len - 2) {
                return Ok(Outcome::exc(args));
            }
            let mut n = advance(r, op, 2, &[], &c);
            let actor = r.iota.actor;
            if !n.sigma.update(&actor, |acc| acc.storage.set(key, val)) {
                let mut acc = Account::default();
                acc.storage.set(key, val);
                n.sigma.set(actor, acc);
            }
            if val.is_zero() && !current.is_zero() {
                n.eta.refund = n.eta.refund.wrapping_add(Word256::from_u64(SCHEDULE.sstore_refund));
            }
            Outcome::cont(n, args)
        }
        Opcode::Jump => {
            let Some(args) = operands(mu, 1) else {
                return Ok(Outcome::underflow());
            };
            let c = g(SCHEDULE.jump);
            if !gas::valid(&mu.gas, &c, len - 1) || !r.iota.code.jump_dests().contains(&args[0]) {
                return Ok(Outcome::exc(args));
            }
            let mut n = advance(r, op, 1, &[], &c);
            n.mu.pc = args[0];
            Outcome::cont(n, args)
        }
        Opcode::JumpI => {
            let Some(args) = operands(mu, 2) else {
                return Ok(Outcome::underflow());
            };
            let c = g(SCHEDULE.jumpi);
            if !gas::valid(&mu.gas, &c, len - 2) || !r.iota.code.jump_dests().contains(&args[0]) {
                return Ok(Outcome::exc(args));
            }
            let mut n = advance(r, op, 2, &[], &c);
            if !args[1].is_zero() {
                n.mu.pc = args[0];
            }
            Outcome::cont(n, args)
        }
        Opcode::JumpDest => simple(0, g(SCHEDULE.jumpdest), &|_| vec![]),
        Opcode::Log(k) => {
            let k = k as usize;
            let Some(args) = operands(mu, 2 + k) else {
                return Ok(Outcome::underflow());
            };
            let aw = gas::mem_ext(&mu.active_words, &args[0], &args[1]);
            let c = gas::c_mem(&wide(&mu.active_words), &aw)
                .wrapping_add(g(SCHEDULE.log + SCHEDULE.log_topic * k as u64))
                .wrapping_add(wide(&args[1]).wrapping_mul(g(SCHEDULE.log_data)));
            if !gas::valid(&mu.gas, &c, len - 2 - k) {
                return Ok(Outcome::exc(args));
            }
            let data = mu.memory.read(&args[0], to_len(&args[1])?);
            let mut n = advance(r, op, 2 + k, &[], &c);
            n.mu.active_words = aw.resize();
            n.eta.logs.push_back(LogEvent { address: r.iota.actor, topics: args[2..].to_vec(), data });
            Outcome::cont(n, args)
        }
        Opcode::Return => {
            let Some(args) = operands(mu, 2) else {
                return Ok(Outcome::underflow());
            };
            let aw = gas::mem_ext(&mu.active_words, &args[0], &args[1]);
            let c = gas::c_mem(&wide(&mu.active_words), &aw);
            if !gas::valid(&mu.gas, &c, len - 2) {
                return Ok(Outcome::exc(args));
            }
            let data = mu.memory.read(&args[0], to_len(&args[1])?);
            Outcome {
                next: Next::Replace(ExecutionState::Halt(Box::new(HaltState {
                    sigma: r.sigma.clone(),
                    gas: mu.gas.wrapping_sub(c.resize()),
                    data,
                    eta: r.eta.clone(),
                }))),
                event: Event::Exec(args),
            }
        }
        Opcode::SelfDestruct => {
            let Some(args) = operands(mu, 1) else {
                return Ok(Outcome::underflow());
            };
            let ben = Address::from_word(&args[0]);
            let c =
                if r.sigma.contains(&ben) { g(SCHEDULE.selfdestruct) } else { g(SCHEDULE.selfdestruct_new_account) };
            if !gas::valid(&mu.gas, &c, len - 1) {
                return Ok(Outcome::exc(args));
            }
            let actor = r.iota.actor;
            let mut sigma = r.sigma.clone();
            let bal = sigma.balance(&actor);
            sigma.update(&actor, |a| a.balance = Word256::ZERO);
            if !sigma.update(&ben, |a| a.balance = a.balance.wrapping_add(bal)) {
                sigma.set(ben, Account::with_balance(bal));
            }
            let mut eta = r.eta.clone();
            if !eta.suicides.contains(&actor) {
                eta.refund = eta.refund.wrapping_add(Word256::from_u64(SCHEDULE.selfdestruct_refund));
                eta.suicides.insert(actor);
            }
            Outcome {
                next: Next::Replace(ExecutionState::Halt(Box::new(HaltState {
                    sigma,
                    gas: mu.gas.wrapping_sub(c.resize()),
                    data: Vec::new(),
                    eta,
                }))),
                event: Event::Exec(args),
            }
        }
        Opcode::Invalid => Outcome::exc(vec![]),
        Opcode::Call | Opcode::CallCode | Opcode::DelegateCall => call_op(r, op, depth)?,
        Opcode::Create => create_op(r, depth)?,
        _ => unreachable!("binary operations are handled above"),
    };
    Ok(out)
}

fn call_op(r: &RegularState, op: Opcode, depth: usize) -> Result<Outcome, StepError> {
    let Some(p) = call_params(op, r) else {
        return Ok(Outcome::underflow());
    };
    let mu = &r.mu;
    let pops = p.args.len();
    if !gas::valid(&mu.gas, &p.cost, mu.stack.len() - pops + 1) {
        return Ok(Outcome::exc(p.args));
    }
    let actor = r.iota.actor;
    let short_of_funds = op != Opcode::DelegateCall && p.value > r.sigma.balance(&actor);
    if short_of_funds || depth + 1 > CALL_DEPTH_LIMIT {
        return Ok(Outcome { next: Next::PushExc, event: Event::Exec(p.args) });
    }
    let input: Arc<[u8]> = mu.memory.read(&p.in_off, to_len(&p.in_size)?).into();
    let target_code = r.sigma.code(&p.to).cloned().unwrap_or_default();
    let mut sigma = r.sigma.clone();
    let iota = match op {
        Opcode::Call => {
            sigma.update(&actor, |a| a.balance = a.balance.wrapping_sub(p.value));
            if !sigma.update(&p.to, |a| a.balance = a.balance.wrapping_add(p.value)) {
                sigma.set(p.to, Account::with_balance(p.value));
            }
            ExecutionEnvironment { actor: p.to, input, sender: actor, value: p.value, code: target_code.clone() }
        }
        Opcode::CallCode => {
            ExecutionEnvironment { actor, input, sender: actor, value: p.value, code: target_code.clone() }
        }
        _ => ExecutionEnvironment { input, code: target_code.clone(), ..(*r.iota).clone() },
    };
    let callee = RegularState {
        mu: MachineState::with_gas(p.callee_gas.resize()),
        iota: Arc::new(iota),
        sigma,
        eta: r.eta.clone(),
    };
    let annotation = Some(Contract { address: p.to, code: target_code });
    Ok(Outcome {
        next: Next::Push(Frame::new(ExecutionState::Regular(Box::new(callee)), annotation)),
        event: Event::Exec(p.args),
    })
}

fn create_op(r: &RegularState, depth: usize) -> Result<Outcome, StepError> {
    let Some(p) = create_params(r) else {
        return Ok(Outcome::underflow());
    };
    let mu = &r.mu;
    if !gas::valid(&mu.gas, &p.cost, mu.stack.len() - 3 + 1) {
        return Ok(Outcome::exc(p.args));
    }
    let actor = r.iota.actor;
    if p.value > r.sigma.balance(&actor) || depth + 1 > CALL_DEPTH_LIMIT {
        return Ok(Outcome { next: Next::PushExc, event: Event::Exec(p.args) });
    }
    let init = mu.memory.read(&p.in_off, to_len(&p.in_size)?);
    let rho = creation_address(r);
    let mut sigma = r.sigma.clone();
    let carried = sigma.balance(&rho);
    sigma.set(rho, Account::with_balance(carried.wrapping_add(p.value)));
    sigma.update(&actor, |a| {
        a.balance = a.balance.wrapping_sub(p.value);
        a.nonce = a.nonce.wrapping_add(Word256::one());
    });
    let callee = RegularState {
        mu: MachineState::with_gas(create_forward(r, &p.cost)),
        iota: Arc::new(ExecutionEnvironment {
            actor: rho,
            input: Arc::from(Vec::new()),
            sender: actor,
            value: p.value,
            code: Code::new(init),
        }),
        sigma,
        eta: r.eta.clone(),
    };
    Ok(Outcome {
        next: Next::Push(Frame::new(ExecutionState::Regular(Box::new(callee)), None)),
        event: Event::Exec(p.args),
    })
}

/// Resumes `caller` after its callee ended in `callee`.
fn return_to(caller: &Frame, callee: &ExecutionState) -> Result<(Opcode, ExecutionState), StepError> {
    let malformed = |m: &str| StepError::MalformedConfiguration(m.to_string());
    let r = caller.state.as_regular().ok_or_else(|| malformed("final frame below the top"))?;
    let op = current_opcode(&r.iota.code, &r.mu.pc);
    let kind = match callee {
        ExecutionState::Halt(h) => Some(h),
        ExecutionState::Exc => None,
        ExecutionState::Regular(_) => return Err(malformed("regular callee cannot return")),
    };
    let next = match op {
        Opcode::Call | Opcode::CallCode | Opcode::DelegateCall => {
            let p = call_params(op, r).ok_or_else(|| malformed("caller stack does not match its call"))?;
            let pops = p.args.len();
            let mut n = r.clone();
            n.mu.stack.truncate(n.mu.stack.len() - pops);
            n.mu.pc = next_pc(&r.mu.pc, op);
            n.mu.active_words = p.aw.resize();
            match kind {
                Some(h) => {
                    let g = wide(&r.mu.gas).wrapping_add(wide(&h.gas)).wrapping_sub(p.cost);
                    n.mu.gas = g.resize();
                    n.mu.stack.push(Word256::one());
                    let out_len = to_len(&p.out_size)?.min(h.data.len());
                    n.mu.memory.write(&p.out_off, &h.data[..out_len])?;
                    n.sigma = h.sigma.clone();
                    n.eta = h.eta.clone();
                }
                None => {
                    n.mu.gas = wide(&r.mu.gas).wrapping_sub(p.cost).resize();
                    n.mu.stack.push(Word256::ZERO);
                }
            }
            ExecutionState::Regular(Box::new(n))
        }
        Opcode::Create => {
            let p = create_params(r).ok_or_else(|| malformed("caller stack does not match its create"))?;
            let forwarded = create_forward(r, &p.cost);
            let spent = p.cost.wrapping_add(wide(&forwarded));
            let mut n = r.clone();
            n.mu.stack.truncate(n.mu.stack.len() - 3);
            n.mu.pc = next_pc(&r.mu.pc, op);
            n.mu.active_words = p.aw.resize();
            match kind {
                Some(h) => {
                    let deposit = gas::gas(SCHEDULE.code_deposit).wrapping_mul(gas::gas(h.data.len() as u64));
                    if wide(&h.gas) < deposit {
                        return Ok((op, ExecutionState::Exc));
                    }
                    let rho = creation_address(r);
                    let g = wide(&r.mu.gas).wrapping_sub(spent).wrapping_add(wide(&h.gas)).wrapping_sub(deposit);
                    n.mu.gas = g.resize();
                    n.mu.stack.push(rho.to_word());
                    let mut sigma = h.sigma.clone();
                    let code = Code::new(h.data.clone());
                    if !sigma.update(&rho, |a| a.code = code.clone()) {
                        sigma.set(rho, Account::with_code(code));
                    }
                    n.sigma = sigma;
                    n.eta = h.eta.clone();
                }
                None => {
                    n.mu.gas = wide(&r.mu.gas).wrapping_sub(spent).resize();
                    n.mu.stack.push(Word256::ZERO);
                }
            }
            ExecutionState::Regular(Box::new(n))
        }
        _ => return Err(malformed("caller is not at a call or create instruction")),
    };
    Ok((op, next))
}

/// Performs one step of the small-step relation.
pub fn step(
    env: &TransactionEnvironment,
    stack: &CallStack,
    over: Option<&CodeOverride>,
) -> Result<StepOutcome, StepError> {
    let top = stack.top().ok_or_else(|| StepError::MalformedConfiguration("empty call stack".into()))?;
    let (next, action) = match &top.state {
        ExecutionState::Regular(r) => {
            let (op, out) = exec_regular(env, r, stack.len(), over)?;
            let action = Action { contract: top.annotation.clone(), op, event: out.event };
            let next = match out.next {
                Next::Replace(s) => stack.replace_top(Frame::new(s, top.annotation.clone())),
                Next::Push(f) => stack.push_unchecked(f),
                Next::PushExc => stack.push_unchecked(Frame::new(ExecutionState::Exc, None)),
            };
            (next, action)
        }
        final_state => {
            let rest = stack.rest();
            let caller = rest
                .top()
                .ok_or_else(|| StepError::MalformedConfiguration("final configuration has no successor".into()))?;
            let (op, resumed) = return_to(caller, final_state)?;
            let kind = if matches!(final_state, ExecutionState::Exc) { ReturnKind::Exc } else { ReturnKind::Halt };
            let action = Action { contract: caller.annotation.clone(), op, event: Event::Return(kind) };
            (rest.replace_top(Frame::new(resumed, caller.annotation.clone())), action)
        }
    };
    let status = if next.is_final() { Status::Final } else { Status::Progressed };
    Ok(StepOutcome { next, action, status })
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub final_stack: CallStack,
    pub trace: Trace,
    pub steps: u64,
    /// True when an observer asked to stop before the run ended.
    pub interrupted: bool,
}

impl RunOutput {
    pub fn final_state(&self) -> Option<&ExecutionState> {
        self.final_stack.top().map(|f| &f.state)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("step budget of {} exhausted", .0.steps)]
    BudgetExhausted(Box<RunOutput>),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// When a runner stops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Until {
    /// The whole stack is a single final frame.
    Final,
    /// The frame on top of the initial stack has finished.
    FrameFinished,
    /// The frame at the given stack length has finished.
    Depth(usize),
}

/// Runs to a final configuration.
pub fn run(
    env: &TransactionEnvironment,
    stack: &CallStack,
    budget: StepBudget,
    over: Option<&CodeOverride>,
) -> Result<RunOutput, RunError> {
    run_with(env, stack, budget, over, Until::Final, |_, _| ControlFlow::Continue(()))
}

/// Runs until the top frame of `stack` has finished.
pub fn run_frame(
    env: &TransactionEnvironment,
    stack: &CallStack,
    budget: StepBudget,
    over: Option<&CodeOverride>,
) -> Result<RunOutput, RunError> {
    run_with(env, stack, budget, over, Until::FrameFinished, |_, _| ControlFlow::Continue(()))
}

/// General runner. `observer` sees each step (the stack before it and the
/// outcome) and may stop the run early.
///
/// The override applies only to steps of the frame at the initial depth;
/// when that frame resumes from a call, accounts created during the call are
/// added to it with their real code.
pub fn run_with(
    env: &TransactionEnvironment,
    stack: &CallStack,
    budget: StepBudget,
    over: Option<&CodeOverride>,
    until: Until,
    mut observer: impl FnMut(&CallStack, &StepOutcome) -> ControlFlow<()>,
) -> Result<RunOutput, RunError> {
    let base = stack.len();
    let mut cur = stack.clone();
    let mut trace = Vec::new();
    let mut over = over.cloned();
    let mut steps = 0u64;
    let done = |s: &CallStack| match until {
        Until::Final => s.is_final(),
        Until::FrameFinished => s.len() <= base && s.top().is_some_and(|f| f.state.is_final()),
        Until::Depth(d) => s.len() <= d && s.top().is_some_and(|f| f.state.is_final()),
    };
    while !done(&cur) {
        if steps >= budget.max_steps {
            return Err(RunError::BudgetExhausted(Box::new(RunOutput {
                final_stack: cur,
                trace,
                steps,
                interrupted: false,
            })));
        }
        let local = if cur.len() == base { over.as_ref() } else { None };
        let out = step(env, &cur, local)?;
        steps += 1;
        if let Some(o) = &over {
            if cur.len() == base + 1 && out.next.len() == base {
                over = Some(extend_override_after_create(o, created_accounts(&cur, &out.next)));
            }
        }
        let flow = observer(&cur, &out);
        trace.push(out.action);
        cur = out.next;
        if flow.is_break() {
            return Ok(RunOutput { final_stack: cur, trace, steps, interrupted: true });
        }
    }
    Ok(RunOutput { final_stack: cur, trace, steps, interrupted: false })
}

/// Accounts present after a return step that the caller's state did not have.
fn created_accounts(before: &CallStack, after: &CallStack) -> Vec<(Address, Code)> {
    let rest = before.rest();
    let old = rest.top().and_then(|f| f.state.as_regular()).map(|r| &r.sigma);
    let new = after.top().and_then(|f| f.state.as_regular()).map(|r| &r.sigma);
    match (old, new) {
        (Some(old), Some(new)) if !old.ptr_eq(new) => {
            new.iter().filter(|(a, _)| !old.contains(a)).map(|(a, acc)| (*a, acc.code.clone())).collect()
        }
        _ => Vec::new(),
    }
}

/// A fresh top-level frame running `code` for `actor` with the given gas.
pub fn initial_frame(sigma: GlobalState, iota: ExecutionEnvironment, gas: Word256, annotation: Annotation) -> Frame {
    Frame::new(
        ExecutionState::Regular(Box::new(RegularState {
            mu: MachineState::with_gas(gas),
            iota: Arc::new(iota),
            sigma,
            eta: Default::default(),
        })),
        annotation,
    )
}
