//! Single-step cases for every instruction family. Each case builds one
//! configuration, takes one step and compares the successor with values
//! worked out by hand from the gas schedule and the instruction rules.

use std::collections::BTreeSet;
use std::sync::Arc;

use evmsem::bytecode::{assemble_text, current_opcode, Code, Opcode};
use evmsem::semantics::step;
use evmsem::state::{
    Account, Ancestor, BlockHeader, CallStack, Contract, ExecutionEnvironment, ExecutionState, Frame, GlobalState,
    HaltState, MachineState, Memory, RegularState, TransactionEnvironment,
};
use evmsem::traces::{Event, ReturnKind};
use evmsem::words::{from_hex, keccak256, Address, Word256};

pub const ACTOR: u64 = 0xaa;
pub const OTHER: u64 = 0xbb;
pub const MISSING: u64 = 0xdd;
pub const SENDER: u64 = 0x5e;
pub const ORIGIN: u64 = 0x0e;
pub const COINBASE: u64 = 0xc0;
/// Code of `OTHER`: `PUSH1 1 STOP`.
pub const OTHER_CODE: [u8; 3] = [0x60, 0x01, 0x00];

pub fn w(v: u64) -> Word256 {
    Word256::from_u64(v)
}

pub fn a(v: u64) -> Word256 {
    Address::from_low_u64(v).to_word()
}

/// `-v` in two's complement.
pub fn neg(v: u64) -> Word256 {
    w(v).wrapping_neg()
}

pub fn hash_of(tag: &str) -> Word256 {
    keccak256(tag.as_bytes())
}

/// Address of the account created by `creator` with account nonce `nonce`,
/// computed with independent Keccak and RLP implementations.
pub fn created_by(creator: u64, nonce: u64) -> Address {
    use tiny_keccak::{Hasher, Keccak};
    let mut s = rlp::RlpStream::new_list(2);
    s.append(&Address::from_low_u64(creator).to_word().to_be_bytes()[12..].to_vec());
    s.append(&nonce);
    let mut out = [0u8; 32];
    let mut k = Keccak::v256();
    k.update(&s.out());
    k.finalize(&mut out);
    Address::from_word(&Word256::from_be_bytes(out))
}

/// How the callee on top of the caller ended, for return cases.
#[derive(Clone)]
pub enum Callee {
    /// Halted with this gas and output; its state stores 1 at slot 0 of `OTHER`.
    Halt {
        gas: u64,
        data: Vec<u8>,
    },
    Exc,
}

#[derive(Clone)]
pub enum Expect {
    /// The same frame continues: gas drops by `cost` (negative when a callee
    /// returns more than the caller spent), the stack becomes `stack` (top
    /// first) and the program counter moves to `pc`, or to the next instruction.
    Next { cost: i64, stack: Vec<Word256>, pc: Option<u64> },
    /// The frame halts, having spent `cost`, with this output.
    Halt { cost: u64, data: Vec<u8> },
    /// The frame becomes exceptional after running out of gas, overflowing
    /// the stack, or failing an instruction check.
    Exc,
    /// The frame becomes exceptional because the stack holds too few operands.
    Underflow,
    /// A callee frame with this much gas is pushed over the unchanged caller.
    Push { callee_gas: u64 },
    /// An exceptional frame is pushed over the unchanged caller.
    PushExc,
}

impl Expect {
    fn is_exception(&self) -> bool {
        matches!(self, Expect::Exc | Expect::Underflow | Expect::PushExc)
    }
}

/// Extra checks on the configuration before and after the step.
pub type Check = fn(&RegularState, &CallStack) -> Result<(), String>;

#[derive(Clone)]
pub struct Case {
    pub family: &'static str,
    pub name: String,
    code: Vec<u8>,
    pc: u64,
    stack: Vec<Word256>,
    gas: u64,
    memory: Vec<u8>,
    active_words: u64,
    input: Vec<u8>,
    value: u64,
    below: usize,
    callee: Option<Callee>,
    pub expect: Expect,
    check: Option<Check>,
}

impl Case {
    /// A case running the instruction at `pc` (default 0) of `code`, given as
    /// assembly or as `0x` hex.
    pub fn new(family: &'static str, name: impl Into<String>, code: &str) -> Self {
        let code = if let Some(hex) = code.strip_prefix("0x") {
            from_hex(hex).expect("bad hex in case")
        } else {
            assemble_text(code).unwrap_or_else(|e| panic!("bad case program {code:?}: {e}"))
        };
        Case {
            family,
            name: name.into(),
            code,
            pc: 0,
            stack: Vec::new(),
            gas: 100_000,
            memory: Vec::new(),
            active_words: 0,
            input: Vec::new(),
            value: 0,
            below: 0,
            callee: None,
            expect: Expect::Exc,
            check: None,
        }
    }

    pub fn stack(mut self, top_first: &[Word256]) -> Self {
        self.stack = top_first.to_vec();
        self
    }

    pub fn nums(self, top_first: &[u64]) -> Self {
        let s: Vec<Word256> = top_first.iter().map(|&v| w(v)).collect();
        self.stack(&s)
    }

    pub fn gas(mut self, g: u64) -> Self {
        self.gas = g;
        self
    }

    pub fn memory(mut self, bytes: &[u8], active_words: u64) -> Self {
        self.memory = bytes.to_vec();
        self.active_words = active_words;
        self
    }

    pub fn input(mut self, bytes: &[u8]) -> Self {
        self.input = bytes.to_vec();
        self
    }

    pub fn value(mut self, v: u64) -> Self {
        self.value = v;
        self
    }

    pub fn pc(mut self, pc: u64) -> Self {
        self.pc = pc;
        self
    }

    /// Number of frames below the one under test.
    pub fn below(mut self, n: usize) -> Self {
        self.below = n;
        self
    }

    pub fn returning(mut self, callee: Callee) -> Self {
        self.callee = Some(callee);
        self
    }

    pub fn check(mut self, f: Check) -> Self {
        self.check = Some(f);
        self
    }

    pub fn next(mut self, cost: i64, stack: &[Word256]) -> Self {
        self.expect = Expect::Next { cost, stack: stack.to_vec(), pc: None };
        self
    }

    pub fn next_nums(self, cost: i64, stack: &[u64]) -> Self {
        let s: Vec<Word256> = stack.iter().map(|&v| w(v)).collect();
        self.next(cost, &s)
    }

    pub fn jumps(mut self, cost: i64, stack: &[u64], pc: u64) -> Self {
        let s = stack.iter().map(|&v| w(v)).collect();
        self.expect = Expect::Next { cost, stack: s, pc: Some(pc) };
        self
    }

    pub fn halts(mut self, cost: u64, data: &[u8]) -> Self {
        self.expect = Expect::Halt { cost, data: data.to_vec() };
        self
    }

    pub fn exc(mut self) -> Self {
        self.expect = Expect::Exc;
        self
    }

    pub fn underflow(mut self) -> Self {
        self.expect = Expect::Underflow;
        self
    }

    pub fn pushes(mut self, callee_gas: u64) -> Self {
        self.expect = Expect::Push { callee_gas };
        self
    }

    pub fn push_exc(mut self) -> Self {
        self.expect = Expect::PushExc;
        self
    }

    pub fn is_exception(&self) -> bool {
        self.expect.is_exception()
    }

    /// The instruction the case exercises.
    pub fn opcode(&self) -> Opcode {
        current_opcode(&Code::new(self.code.clone()), &w(self.pc))
    }
}

pub fn world(code: &Code) -> (GlobalState, TransactionEnvironment) {
    let mut sigma = GlobalState::new();
    let mut actor = Account { balance: w(1000), code: code.clone(), ..Default::default() };
    actor.storage.set(w(1), w(9));
    sigma.set(Address::from_low_u64(ACTOR), actor);
    sigma.set(
        Address::from_low_u64(OTHER),
        Account { balance: w(77), nonce: w(3), code: Code::new(OTHER_CODE.to_vec()), ..Default::default() },
    );
    let (h1, h0) = (hash_of("block 9"), hash_of("block 8"));
    let env = TransactionEnvironment {
        origin: Address::from_low_u64(ORIGIN),
        prize: w(5),
        header: BlockHeader {
            parent: h1,
            beneficiary: Address::from_low_u64(COINBASE),
            difficulty: w(17),
            number: w(10),
            gaslimit: w(1_000_000),
            timestamp: w(1234),
        },
        ancestors: Arc::new(vec![
            Ancestor { hash: h1, header: BlockHeader { parent: h0, number: w(9), ..Default::default() } },
            Ancestor { hash: h0, header: BlockHeader { number: w(8), ..Default::default() } },
        ]),
    };
    (sigma, env)
}

fn regular(r: RegularState, annotation: Option<Contract>) -> Frame {
    Frame::new(ExecutionState::Regular(Box::new(r)), annotation)
}

/// Builds the configuration of a case: the frame under test (with the callee
/// on top for return cases) above `below` copies of itself.
pub fn configuration(c: &Case) -> (TransactionEnvironment, RegularState, CallStack) {
    let code = Code::new(c.code.clone());
    let (sigma, env) = world(&code);
    let mut memory = Memory::new();
    memory.write(&Word256::ZERO, &c.memory).expect("case memory fits");
    let mu = MachineState {
        gas: w(c.gas),
        pc: w(c.pc),
        memory,
        active_words: w(c.active_words),
        stack: c.stack.iter().rev().copied().collect(),
    };
    let iota = ExecutionEnvironment {
        actor: Address::from_low_u64(ACTOR),
        input: Arc::from(c.input.clone()),
        sender: Address::from_low_u64(SENDER),
        value: w(c.value),
        code: code.clone(),
    };
    let r = RegularState { mu, iota: Arc::new(iota), sigma, eta: Default::default() };
    let annotation = Some(Contract { address: Address::from_low_u64(ACTOR), code });
    let mut frames = Vec::new();
    if let Some(callee) = &c.callee {
        let state = match callee {
            Callee::Halt { gas, data } => {
                let mut sigma = r.sigma.clone();
                sigma.update(&Address::from_low_u64(OTHER), |acc| acc.storage.set(w(0), w(1)));
                ExecutionState::Halt(Box::new(HaltState {
                    sigma,
                    gas: w(*gas),
                    data: data.clone(),
                    eta: Default::default(),
                }))
            }
            Callee::Exc => ExecutionState::Exc,
        };
        frames.push(Frame::new(state, None));
    }
    frames.push(regular(r.clone(), annotation.clone()));
    for _ in 0..c.below {
        frames.push(regular(r.clone(), annotation.clone()));
    }
    let stack = CallStack::from_frames(frames).expect("case stack is well formed");
    (env, r, stack)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn top_regular(s: &CallStack) -> Result<&RegularState, String> {
    s.top()
        .and_then(|f| f.state.as_regular())
        .ok_or_else(|| format!("expected a regular frame on top, found {:?}", s.top().map(|f| &f.state)))
}

fn top_first(r: &RegularState) -> Vec<Word256> {
    r.mu.stack.iter().rev().copied().collect()
}

fn apply_cost(gas: u64, cost: i64) -> Word256 {
    w((gas as i64 - cost) as u64)
}

/// Runs one case and reports the first discrepancy.
pub fn run_case(c: &Case) -> Result<(), String> {
    let (env, before, stack) = configuration(c);
    let out = step(&env, &stack, None).map_err(|e| format!("step failed: {e}"))?;
    let next = &out.next;
    let op = c.opcode();
    ensure(out.action.op == op, || format!("action records {:?}, expected {op:?}", out.action.op))?;

    let returning = c.callee.is_some();
    let base_len = stack.len() - usize::from(returning);
    let below_unchanged = |n: &CallStack, keep: usize| -> Result<(), String> {
        let want: Vec<Frame> = stack.suffix(c.below).to_frames();
        let got: Vec<Frame> = n.suffix(c.below).to_frames();
        ensure(n.len() == keep && got == want, || "frames below the caller changed".into())
    };

    // the recorded event
    match (&c.expect, &c.callee) {
        (_, Some(callee)) => {
            let kind = if matches!(callee, Callee::Exc) { ReturnKind::Exc } else { ReturnKind::Halt };
            ensure(out.action.event == Event::Return(kind), || format!("event {:?}", out.action.event))?;
        }
        (Expect::Underflow, None) => {
            ensure(out.action.event == Event::StackUnderflow, || format!("event {:?}", out.action.event))?;
        }
        (_, None) => {
            let Event::Exec(args) = &out.action.event else {
                return Err(format!("event {:?}", out.action.event));
            };
            if let Opcode::Push(_) = op {
                ensure(args.len() == 1, || "a push records its immediate".into())?;
            } else {
                ensure(c.stack.starts_with(args), || format!("operands {args:?} are not the top of the stack"))?;
            }
        }
    }

    match &c.expect {
        Expect::Next { cost, stack: want, pc } => {
            below_unchanged(next, base_len)?;
            let r = top_regular(next)?;
            let want_gas = apply_cost(c.gas, *cost);
            ensure(r.mu.gas == want_gas, || format!("gas {} , expected {want_gas}", r.mu.gas))?;
            ensure(top_first(r) == *want, || format!("stack {:?}, expected {want:?}", top_first(r)))?;
            let want_pc = match pc {
                Some(p) => w(*p),
                None => evmsem::bytecode::next_pc(&w(c.pc), op),
            };
            ensure(r.mu.pc == want_pc, || format!("pc {}, expected {want_pc}", r.mu.pc))?;
            ensure(next.top().unwrap().annotation == stack.suffix(base_len).top().unwrap().annotation, || {
                "annotation changed".into()
            })?;
            ensure(Arc::ptr_eq(&r.iota, &before.iota) || *r.iota == *before.iota, || "environment changed".into())?;
        }
        Expect::Halt { cost, data } => {
            below_unchanged(next, base_len)?;
            let Some(ExecutionState::Halt(h)) = next.top().map(|f| &f.state) else {
                return Err(format!("expected a halt, found {:?}", next.top().map(|f| &f.state)));
            };
            let want_gas = apply_cost(c.gas, *cost as i64);
            ensure(h.gas == want_gas, || format!("gas {}, expected {want_gas}", h.gas))?;
            ensure(h.data == *data, || format!("output {:?}, expected {data:?}", h.data))?;
        }
        Expect::Exc | Expect::Underflow => {
            below_unchanged(next, base_len)?;
            ensure(matches!(next.top().map(|f| &f.state), Some(ExecutionState::Exc)), || {
                format!("expected an exception, found {:?}", next.top().map(|f| &f.state))
            })?;
        }
        Expect::Push { callee_gas } => {
            ensure(next.len() == stack.len() + 1, || format!("stack length {}", next.len()))?;
            ensure(next.rest().to_frames() == stack.to_frames(), || "the caller changed when pushing".into())?;
            let r = top_regular(next)?;
            ensure(r.mu.gas == w(*callee_gas), || format!("callee gas {}, expected {callee_gas}", r.mu.gas))?;
            ensure(r.mu.pc.is_zero() && r.mu.stack.is_empty() && r.mu.active_words.is_zero(), || {
                "callee machine state is not fresh".into()
            })?;
        }
        Expect::PushExc => {
            ensure(next.len() == stack.len() + 1, || format!("stack length {}", next.len()))?;
            ensure(next.rest().to_frames() == stack.to_frames(), || "the caller changed".into())?;
            let top = next.top().unwrap();
            ensure(top.state == ExecutionState::Exc && top.annotation.is_none(), || {
                "expected an unannotated exception frame".into()
            })?;
        }
    }
    if let Some(f) = c.check {
        f(&before, next)?;
    }
    Ok(())
}

fn top_sigma(s: &CallStack) -> Result<&GlobalState, String> {
    match s.top().map(|f| &f.state) {
        Some(ExecutionState::Regular(r)) => Ok(&r.sigma),
        Some(ExecutionState::Halt(h)) => Ok(&h.sigma),
        _ => Err("no global state on top".into()),
    }
}

fn balance(s: &GlobalState, v: u64) -> Word256 {
    s.balance(&Address::from_low_u64(v))
}

fn mem_of(s: &CallStack) -> Result<Vec<u8>, String> {
    Ok(top_regular(s)?.mu.memory.read(&Word256::ZERO, 64))
}

fn aw_of(s: &CallStack) -> Result<u64, String> {
    Ok(top_regular(s)?.mu.active_words.low_u64())
}

fn arith() -> Vec<Case> {
    let f = "arithmetic";
    let max = Word256::MAX;
    let min = w(1) << 255;
    vec![
        Case::new(f, "ADD", "ADD").nums(&[1, 2]).next_nums(3, &[3]),
        Case::new(f, "ADD wraps", "ADD").stack(&[max, w(1)]).next_nums(3, &[0]),
        Case::new(f, "MUL", "MUL").nums(&[3, 4]).next_nums(5, &[12]),
        Case::new(f, "MUL wraps", "MUL").stack(&[max, max]).next_nums(5, &[1]),
        Case::new(f, "SUB", "SUB").nums(&[5, 3]).next_nums(3, &[2]),
        Case::new(f, "SUB wraps", "SUB").nums(&[3, 5]).next(3, &[neg(2)]),
        Case::new(f, "DIV", "DIV").nums(&[7, 2]).next_nums(5, &[3]),
        Case::new(f, "DIV by zero", "DIV").nums(&[7, 0]).next_nums(5, &[0]),
        Case::new(f, "SDIV truncates", "SDIV").stack(&[neg(7), w(2)]).next(5, &[neg(3)]),
        Case::new(f, "SDIV min by -1", "SDIV").stack(&[min, neg(1)]).next(5, &[min]),
        Case::new(f, "SDIV by zero", "SDIV").stack(&[neg(7), w(0)]).next_nums(5, &[0]),
        Case::new(f, "MOD", "MOD").nums(&[7, 3]).next_nums(5, &[1]),
        Case::new(f, "MOD by zero", "MOD").nums(&[7, 0]).next_nums(5, &[0]),
        Case::new(f, "SMOD takes the dividend's sign", "SMOD").stack(&[neg(7), w(3)]).next(5, &[neg(1)]),
        Case::new(f, "SMOD by zero", "SMOD").stack(&[neg(7), w(0)]).next_nums(5, &[0]),
        Case::new(f, "ADDMOD wide sum", "ADDMOD").stack(&[max, w(2), w(7)]).next_nums(8, &[3]),
        Case::new(f, "ADDMOD by zero", "ADDMOD").nums(&[1, 2, 0]).next_nums(8, &[0]),
        Case::new(f, "MULMOD wide product", "MULMOD").stack(&[max, max, w(12)]).next_nums(8, &[9]),
        Case::new(f, "MULMOD by zero", "MULMOD").nums(&[3, 4, 0]).next_nums(8, &[0]),
        Case::new(f, "SIGNEXTEND negative byte", "SIGNEXTEND").nums(&[0, 0xff]).next(5, &[max]),
        Case::new(f, "SIGNEXTEND positive byte", "SIGNEXTEND").nums(&[0, 0x17f]).next_nums(5, &[0x7f]),
        Case::new(f, "SIGNEXTEND past the word", "SIGNEXTEND").nums(&[31, 0x80]).next_nums(5, &[0x80]),
        Case::new(f, "ADD underflow", "ADD").nums(&[1]).underflow(),
        Case::new(f, "ADD out of gas", "ADD").nums(&[1, 2]).gas(2).exc(),
        Case::new(f, "MUL out of gas", "MUL").nums(&[1, 2]).gas(4).exc(),
        Case::new(f, "ADDMOD underflow", "ADDMOD").nums(&[1, 2]).underflow(),
        Case::new(f, "MULMOD out of gas", "MULMOD").nums(&[1, 2, 3]).gas(7).exc(),
        Case::new(f, "ADD exact gas", "ADD").nums(&[1, 2]).gas(3).next_nums(3, &[3]),
    ]
}

fn exp() -> Vec<Case> {
    let f = "exp";
    // 3^256 mod 2^256
    let big = (0..256).fold(w(1), |acc, _| acc.wrapping_mul(w(3)));
    vec![
        Case::new(f, "EXP one-byte exponent", "EXP").nums(&[2, 10]).next_nums(20, &[1024]),
        Case::new(f, "EXP zero exponent", "EXP").nums(&[2, 0]).next_nums(10, &[1]),
        Case::new(f, "EXP two-byte exponent", "EXP").nums(&[3, 256]).next(30, &[big]),
        Case::new(f, "EXP wraps to zero", "EXP").nums(&[2, 256]).next_nums(30, &[0]),
        Case::new(f, "EXP out of gas", "EXP").nums(&[2, 10]).gas(19).exc(),
        Case::new(f, "EXP underflow", "EXP").nums(&[2]).underflow(),
    ]
}

fn compare_bitwise() -> Vec<Case> {
    let f = "comparison and bitwise";
    vec![
        Case::new(f, "LT", "LT").nums(&[1, 2]).next_nums(3, &[1]),
        Case::new(f, "GT", "GT").nums(&[1, 2]).next_nums(3, &[0]),
        Case::new(f, "SLT", "SLT").stack(&[neg(1), w(0)]).next_nums(3, &[1]),
        Case::new(f, "SGT", "SGT").stack(&[neg(1), w(0)]).next_nums(3, &[0]),
        Case::new(f, "EQ", "EQ").nums(&[5, 5]).next_nums(3, &[1]),
        Case::new(f, "ISZERO", "ISZERO").nums(&[0]).next_nums(3, &[1]),
        Case::new(f, "AND", "AND").nums(&[0xf0, 0x3c]).next_nums(3, &[0x30]),
        Case::new(f, "OR", "OR").nums(&[0xf0, 0x3c]).next_nums(3, &[0xfc]),
        Case::new(f, "XOR", "XOR").nums(&[0xf0, 0x3c]).next_nums(3, &[0xcc]),
        Case::new(f, "NOT", "NOT").nums(&[0]).next(3, &[Word256::MAX]),
        Case::new(f, "BYTE last", "BYTE").nums(&[31, 0x1234]).next_nums(3, &[0x34]),
        Case::new(f, "BYTE first", "BYTE").stack(&[w(0), (w(0xab) << 248)]).next_nums(3, &[0xab]),
        Case::new(f, "BYTE out of range", "BYTE").nums(&[32, 0x1234]).next_nums(3, &[0]),
        Case::new(f, "LT underflow", "LT").nums(&[1]).underflow(),
        Case::new(f, "NOT underflow", "NOT").underflow(),
        Case::new(f, "ISZERO out of gas", "ISZERO").nums(&[0]).gas(2).exc(),
    ]
}

fn sha3() -> Vec<Case> {
    let f = "sha3";
    let empty = Word256::parse_literal("0xc5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470").unwrap();
    let zeros = Word256::parse_literal("0x290decd9548b62a8d60345a988386fc84ba6bc95484008f6362f93160ef3e563").unwrap();
    vec![
        Case::new(f, "SHA3 of nothing", "SHA3").nums(&[0, 0]).next(30, &[empty]),
        Case::new(f, "SHA3 of a fresh word", "SHA3")
            .nums(&[0, 32])
            .next(39, &[zeros])
            .check(|_, n| ensure(aw_of(n)? == 1, || "memory not extended".into())),
        Case::new(f, "SHA3 of active memory", "SHA3").nums(&[0, 3]).memory(b"abc", 1).next(36, &[keccak256(b"abc")]),
        Case::new(f, "SHA3 out of gas", "SHA3").nums(&[0, 32]).gas(38).exc(),
        Case::new(f, "SHA3 underflow", "SHA3").nums(&[0]).underflow(),
    ]
}

fn environment() -> Vec<Case> {
    let f = "environment";
    vec![
        Case::new(f, "ADDRESS", "ADDRESS").next(2, &[a(ACTOR)]),
        Case::new(f, "ORIGIN", "ORIGIN").next(2, &[a(ORIGIN)]),
        Case::new(f, "CALLER", "CALLER").next(2, &[a(SENDER)]),
        Case::new(f, "CALLVALUE", "CALLVALUE").value(42).next_nums(2, &[42]),
        Case::new(f, "CALLDATASIZE", "CALLDATASIZE").input(&[1, 2, 3]).next_nums(2, &[3]),
        Case::new(f, "CODESIZE", "CODESIZE STOP STOP").next_nums(2, &[3]),
        Case::new(f, "GASPRICE", "GASPRICE").next_nums(2, &[5]),
        Case::new(f, "CALLDATALOAD pads", "CALLDATALOAD")
            .nums(&[0])
            .input(&[0x11, 0x22])
            .next(3, &[(w(0x1122) << 240)]),
        Case::new(f, "CALLDATALOAD past the end", "CALLDATALOAD").nums(&[5]).input(&[1]).next_nums(3, &[0]),
        Case::new(f, "CALLDATACOPY", "CALLDATACOPY")
            .nums(&[0, 1, 3])
            .input(&[0x11, 0x22, 0x33])
            .next_nums(9, &[])
            .check(|_, n| {
                let m = mem_of(n)?;
                ensure(m[..3] == [0x22, 0x33, 0] && aw_of(n)? == 1, || format!("memory {:?}", &m[..3]))
            }),
        Case::new(f, "CODECOPY", "CODECOPY").nums(&[0, 0, 4]).next_nums(9, &[]).check(|_, n| {
            let m = mem_of(n)?;
            ensure(m[..4] == [0x39, 0, 0, 0], || format!("memory {:?}", &m[..4]))
        }),
        Case::new(f, "CODECOPY of nothing", "CODECOPY").nums(&[0, 0, 0]).next_nums(3, &[]),
        Case::new(f, "CALLDATACOPY underflow", "CALLDATACOPY").nums(&[0, 0]).underflow(),
        Case::new(f, "CODECOPY out of gas", "CODECOPY").nums(&[0, 0, 4]).gas(8).exc(),
        Case::new(f, "ADDRESS out of gas", "ADDRESS").gas(1).exc(),
        Case::new(f, "CALLDATALOAD underflow", "CALLDATALOAD").underflow(),
    ]
}

fn block() -> Vec<Case> {
    let f = "block";
    vec![
        Case::new(f, "COINBASE", "COINBASE").next(2, &[a(COINBASE)]),
        Case::new(f, "TIMESTAMP", "TIMESTAMP").next_nums(2, &[1234]),
        Case::new(f, "NUMBER", "NUMBER").next_nums(2, &[10]),
        Case::new(f, "DIFFICULTY", "DIFFICULTY").next_nums(2, &[17]),
        Case::new(f, "GASLIMIT", "GASLIMIT").next_nums(2, &[1_000_000]),
        Case::new(f, "BLOCKHASH of the parent", "BLOCKHASH").nums(&[9]).next(20, &[hash_of("block 9")]),
        Case::new(f, "BLOCKHASH of the grandparent", "BLOCKHASH").nums(&[8]).next(20, &[hash_of("block 8")]),
        Case::new(f, "BLOCKHASH of the current block", "BLOCKHASH").nums(&[10]).next_nums(20, &[0]),
        Case::new(f, "BLOCKHASH past the known chain", "BLOCKHASH").nums(&[7]).next_nums(20, &[0]),
        Case::new(f, "BLOCKHASH underflow", "BLOCKHASH").underflow(),
        Case::new(f, "BLOCKHASH out of gas", "BLOCKHASH").nums(&[9]).gas(19).exc(),
        Case::new(f, "TIMESTAMP out of gas", "TIMESTAMP").gas(1).exc(),
    ]
}

fn accounts() -> Vec<Case> {
    let f = "account queries";
    vec![
        Case::new(f, "BALANCE", "BALANCE").stack(&[a(OTHER)]).next_nums(400, &[77]),
        Case::new(f, "BALANCE of a missing account", "BALANCE").stack(&[a(MISSING)]).next_nums(400, &[0]),
        Case::new(f, "BALANCE uses the low 160 bits", "BALANCE")
            .stack(&[a(OTHER) | (w(1) << 200)])
            .next_nums(400, &[77]),
        Case::new(f, "EXTCODESIZE", "EXTCODESIZE").stack(&[a(OTHER)]).next_nums(700, &[3]),
        Case::new(f, "EXTCODESIZE of a missing account", "EXTCODESIZE").stack(&[a(MISSING)]).next_nums(700, &[0]),
        Case::new(f, "EXTCODECOPY", "EXTCODECOPY").stack(&[a(OTHER), w(0), w(0), w(5)]).next_nums(706, &[]).check(
            |_, n| {
                let m = mem_of(n)?;
                ensure(m[..5] == [0x60, 1, 0, 0, 0] && aw_of(n)? == 1, || format!("memory {:?}", &m[..5]))
            },
        ),
        Case::new(f, "BALANCE underflow", "BALANCE").underflow(),
        Case::new(f, "EXTCODESIZE out of gas", "EXTCODESIZE").stack(&[a(OTHER)]).gas(699).exc(),
        Case::new(f, "EXTCODECOPY underflow", "EXTCODECOPY").nums(&[0, 0, 0]).underflow(),
    ]
}

fn stack_ops() -> Vec<Case> {
    let f = "stack";
    let mut v = vec![
        Case::new(f, "POP", "POP").nums(&[1]).next_nums(2, &[]),
        Case::new(f, "PUSH2 at the end of code pads", "0x61ab").next_nums(3, &[0xab00]),
        Case::new(f, "POP underflow", "POP").underflow(),
        Case::new(f, "PUSH1 out of gas", "PUSH1 1").gas(2).exc(),
        Case::new(f, "PUSH1 overflows a full stack", "PUSH1 1").stack(&vec![w(0); 1023]).exc(),
        Case::new(f, "DUP1 overflows a full stack", "DUP1").stack(&vec![w(0); 1023]).exc(),
        Case::new(f, "DUP2 underflow", "DUP2").nums(&[1]).underflow(),
        Case::new(f, "SWAP1 underflow", "SWAP1").nums(&[1]).underflow(),
        Case::new(f, "SWAP16 underflow", "SWAP16").stack(&vec![w(0); 16]).underflow(),
        Case::new(f, "SWAP1 out of gas", "SWAP1").nums(&[1, 2]).gas(2).exc(),
    ];
    let mut near_full = vec![w(0); 1022];
    near_full[0] = w(7);
    let mut grown = near_full.clone();
    grown.insert(0, w(1));
    v.push(Case::new(f, "PUSH1 fills the stack to 1023", "PUSH1 1").stack(&near_full).next(3, &grown));
    for n in 1..=32u64 {
        let imm: Vec<String> = (1..=n).map(|i| format!("{:02x}", i)).collect();
        let want = Word256::from_be_slice(&(1..=n as u8).collect::<Vec<u8>>());
        v.push(
            Case::new(f, format!("PUSH{n}"), &format!("PUSH{n} 0x{}", imm.concat())).nums(&[9]).next(3, &[want, w(9)]),
        );
    }
    for n in 1..=16u64 {
        let s: Vec<u64> = (1..=n).collect();
        let mut want = vec![n];
        want.extend(&s);
        v.push(Case::new(f, format!("DUP{n}"), &format!("DUP{n}")).nums(&s).next_nums(3, &want));
    }
    for n in 1..=16u64 {
        let s: Vec<u64> = (0..=n).collect();
        let mut want = s.clone();
        want.swap(0, n as usize);
        v.push(Case::new(f, format!("SWAP{n}"), &format!("SWAP{n}")).nums(&s).next_nums(3, &want));
    }
    v
}

fn jumps() -> Vec<Case> {
    let f = "control flow";
    let code = "JUMP STOP STOP JUMPDEST";
    let cond = "JUMPI STOP STOP JUMPDEST";
    vec![
        Case::new(f, "JUMP to a destination", code).nums(&[3]).jumps(8, &[], 3),
        Case::new(f, "JUMP to a non-destination", code).nums(&[1]).exc(),
        Case::new(f, "JUMP into push data", "JUMP PUSH1 0x5b").nums(&[2]).exc(),
        Case::new(f, "JUMP past the code", code).nums(&[100]).exc(),
        Case::new(f, "JUMP out of gas", code).nums(&[3]).gas(7).exc(),
        Case::new(f, "JUMP underflow", code).underflow(),
        Case::new(f, "JUMPI taken", cond).nums(&[3, 1]).jumps(10, &[], 3),
        Case::new(f, "JUMPI not taken", cond).nums(&[3, 0]).jumps(10, &[], 1),
        Case::new(f, "JUMPI not taken to a non-destination", cond).nums(&[1, 0]).exc(),
        Case::new(f, "JUMPI out of gas", cond).nums(&[3, 1]).gas(9).exc(),
        Case::new(f, "JUMPI underflow", cond).nums(&[3]).underflow(),
        Case::new(f, "JUMPDEST", "JUMPDEST").next_nums(1, &[]),
        Case::new(f, "JUMPDEST out of gas", "JUMPDEST").gas(0).exc(),
        Case::new(f, "PC", "STOP STOP PC").pc(2).next_nums(2, &[2]),
        Case::new(f, "GAS pushes the gas before the step", "GAS").gas(5000).next_nums(2, &[5000]),
        Case::new(f, "GAS out of gas", "GAS").gas(1).exc(),
        Case::new(f, "undefined opcode", "0x0c").exc(),
        Case::new(f, "INVALID", "INVALID").exc(),
    ]
}

fn memory_ops() -> Vec<Case> {
    let f = "memory";
    let mut word = [0u8; 32];
    word[31] = 0x42;
    vec![
        Case::new(f, "MLOAD expands", "MLOAD").nums(&[0]).next_nums(6, &[0]),
        Case::new(f, "MLOAD active memory", "MLOAD").nums(&[0]).memory(&word, 1).next_nums(3, &[0x42]),
        Case::new(f, "MLOAD straddling", "MLOAD")
            .nums(&[1])
            .memory(&word, 1)
            .next(6, &[(w(0x42) << 8)])
            .check(|_, n| ensure(aw_of(n)? == 2, || "expected two active words".into())),
        Case::new(f, "MSTORE", "MSTORE").nums(&[0, 0x42]).next_nums(6, &[]).check(|_, n| {
            ensure(
                mem_of(n)?[..32] == {
                    let mut x = [0u8; 32];
                    x[31] = 0x42;
                    x
                } && aw_of(n)? == 1,
                || "memory not written".into(),
            )
        }),
        Case::new(f, "MSTORE second word", "MSTORE").nums(&[32, 1]).next_nums(9, &[]),
        Case::new(f, "MSTORE to 32 words", "MSTORE").nums(&[992, 1]).next_nums(101, &[]),
        Case::new(f, "MSTORE8", "MSTORE8")
            .nums(&[31, 0x1234])
            .next_nums(6, &[])
            .check(|_, n| ensure(mem_of(n)?[31] == 0x34, || "byte not written".into())),
        Case::new(f, "MSIZE", "MSIZE").memory(&[0; 64], 2).next_nums(2, &[64]),
        Case::new(f, "MSTORE far away", "MSTORE").stack(&[(w(1) << 64), w(1)]).exc(),
        Case::new(f, "MSTORE at the top of the address space", "MSTORE").stack(&[Word256::MAX, w(1)]).exc(),
        Case::new(f, "MLOAD out of gas", "MLOAD").nums(&[0]).gas(5).exc(),
        Case::new(f, "MSTORE underflow", "MSTORE").nums(&[0]).underflow(),
        Case::new(f, "MSTORE8 underflow", "MSTORE8").underflow(),
    ]
}

fn storage() -> Vec<Case> {
    let f = "storage";
    fn slot_of(n: &CallStack, k: u64) -> Result<Word256, String> {
        Ok(top_sigma(n)?.get(&Address::from_low_u64(ACTOR)).unwrap().storage.get(&w(k)))
    }
    fn refund(n: &CallStack) -> Result<Word256, String> {
        Ok(top_regular(n)?.eta.refund)
    }
    vec![
        Case::new(f, "SLOAD", "SLOAD").nums(&[1]).next_nums(200, &[9]),
        Case::new(f, "SLOAD unset", "SLOAD").nums(&[2]).next_nums(200, &[0]),
        Case::new(f, "SSTORE set", "SSTORE")
            .nums(&[2, 5])
            .next_nums(20000, &[])
            .check(|_, n| ensure(slot_of(n, 2)? == w(5) && refund(n)?.is_zero(), || "slot 2 not set".into())),
        Case::new(f, "SSTORE reset", "SSTORE")
            .nums(&[1, 7])
            .next_nums(5000, &[])
            .check(|_, n| ensure(slot_of(n, 1)? == w(7) && refund(n)?.is_zero(), || "slot 1 not reset".into())),
        Case::new(f, "SSTORE clear refunds", "SSTORE")
            .nums(&[1, 0])
            .next_nums(5000, &[])
            .check(|_, n| ensure(slot_of(n, 1)?.is_zero() && refund(n)? == w(15000), || "no refund".into())),
        Case::new(f, "SSTORE zero to zero", "SSTORE")
            .nums(&[2, 0])
            .next_nums(5000, &[])
            .check(|_, n| ensure(refund(n)?.is_zero(), || "unexpected refund".into())),
        Case::new(f, "SSTORE set out of gas", "SSTORE").nums(&[2, 5]).gas(19999).exc(),
        Case::new(f, "SSTORE reset out of gas", "SSTORE").nums(&[1, 7]).gas(4999).exc(),
        Case::new(f, "SSTORE underflow", "SSTORE").nums(&[1]).underflow(),
        Case::new(f, "SLOAD out of gas", "SLOAD").nums(&[1]).gas(199).exc(),
    ]
}

fn logs() -> Vec<Case> {
    let f = "logging";
    let mut v = vec![
        Case::new(f, "LOG2 with data", "LOG2")
            .nums(&[0, 4, 0x71, 0x72])
            .memory(&[1, 2, 3, 4], 1)
            .next_nums(375 + 750 + 32, &[])
            .check(|_, n| {
                let logs = &top_regular(n)?.eta.logs;
                let ok = logs.len() == 1
                    && logs[0].address == Address::from_low_u64(ACTOR)
                    && logs[0].topics == vec![w(0x71), w(0x72)]
                    && logs[0].data == vec![1, 2, 3, 4];
                ensure(ok, || format!("logs {logs:?}"))
            }),
        Case::new(f, "LOG0 expands memory", "LOG0").nums(&[0, 1]).next_nums(375 + 8 + 3, &[]),
        Case::new(f, "LOG1 underflow", "LOG1").nums(&[0, 0]).underflow(),
        Case::new(f, "LOG4 out of gas", "LOG4").nums(&[0, 0, 1, 2, 3, 4]).gas(375 * 5 - 1).exc(),
    ];
    for k in 0..=4u64 {
        let mut s = vec![0, 0];
        s.extend((0..k).map(|t| t + 1));
        v.push(Case::new(f, format!("LOG{k}"), &format!("LOG{k}")).nums(&s).next_nums(375 * (1 + k as i64), &[]));
    }
    v
}

fn halting() -> Vec<Case> {
    let f = "halting";
    vec![
        Case::new(f, "STOP", "STOP").halts(0, &[]),
        Case::new(f, "RETURN active memory", "RETURN").nums(&[0, 2]).memory(&[0xaa, 0xbb], 1).halts(0, &[0xaa, 0xbb]),
        Case::new(f, "RETURN expands", "RETURN").nums(&[31, 2]).memory(&[0; 32], 1).halts(3, &[0, 0]),
        Case::new(f, "RETURN nothing", "RETURN").nums(&[1000, 0]).halts(0, &[]),
        Case::new(f, "RETURN underflow", "RETURN").nums(&[0]).underflow(),
        Case::new(f, "RETURN out of gas", "RETURN").nums(&[0, 64]).gas(5).exc(),
        Case::new(f, "SELFDESTRUCT to an account", "SELFDESTRUCT").stack(&[a(OTHER)]).halts(5000, &[]).check(|_, n| {
            let Some(ExecutionState::Halt(h)) = n.top().map(|f| &f.state) else {
                return Err("no halt".into());
            };
            let ok = balance(&h.sigma, OTHER) == w(1077)
                && balance(&h.sigma, ACTOR).is_zero()
                && h.eta.refund == w(24000)
                && h.eta.suicides.contains(&Address::from_low_u64(ACTOR));
            ensure(ok, || format!("halt state {h:?}"))
        }),
        Case::new(f, "SELFDESTRUCT to a new account", "SELFDESTRUCT").stack(&[a(MISSING)]).halts(37000, &[]).check(
            |_, n| {
                let s = top_sigma(n)?;
                ensure(balance(s, MISSING) == w(1000), || "beneficiary not credited".into())
            },
        ),
        Case::new(f, "SELFDESTRUCT to itself", "SELFDESTRUCT")
            .stack(&[a(ACTOR)])
            .halts(5000, &[])
            .check(|_, n| ensure(balance(top_sigma(n)?, ACTOR) == w(1000), || "balance lost".into())),
        Case::new(f, "SELFDESTRUCT out of gas", "SELFDESTRUCT").stack(&[a(MISSING)]).gas(36999).exc(),
        Case::new(f, "SELFDESTRUCT underflow", "SELFDESTRUCT").underflow(),
    ]
}

/// Operands of `CALL g to va io is oo os`, top first.
fn call_args(g: u64, to: u64, va: u64, io: u64, is: u64, oo: u64, os: u64) -> Vec<Word256> {
    vec![w(g), a(to), w(va), w(io), w(is), w(oo), w(os)]
}

fn callee_of(n: &CallStack) -> Result<(&RegularState, &Frame), String> {
    let r = top_regular(n)?;
    Ok((r, n.top().unwrap()))
}

fn calls() -> Vec<Case> {
    let f = "calls";
    vec![
        Case::new(f, "CALL pushes the callee", "CALL")
            .stack(&call_args(1000, OTHER, 0, 0, 2, 0, 0))
            .memory(&[0xca, 0xfe], 1)
            .gas(10_000)
            .pushes(1000)
            .check(|_, n| {
                let (r, fr) = callee_of(n)?;
                let ok = r.iota.actor == Address::from_low_u64(OTHER)
                    && r.iota.sender == Address::from_low_u64(ACTOR)
                    && *r.iota.input == [0xca, 0xfe]
                    && r.iota.code.as_bytes() == OTHER_CODE
                    && fr.annotation.as_ref().map(|c| c.address) == Some(Address::from_low_u64(OTHER));
                ensure(ok, || format!("callee environment {:?}", r.iota))
            }),
        Case::new(f, "CALL caps the forwarded gas", "CALL")
            .stack(&call_args(1_000_000, OTHER, 0, 0, 0, 0, 0))
            .gas(10_000)
            .pushes(9155),
        Case::new(f, "CALL with value adds the stipend", "CALL")
            .stack(&call_args(1000, OTHER, 10, 0, 0, 0, 0))
            .pushes(3300)
            .check(|_, n| {
                let s = &top_regular(n)?.sigma;
                ensure(balance(s, OTHER) == w(87) && balance(s, ACTOR) == w(990), || "value not moved".into())
            }),
        Case::new(f, "CALL to a new account", "CALL")
            .stack(&call_args(1000, MISSING, 10, 0, 0, 0, 0))
            .pushes(3300)
            .check(|_, n| {
                let (r, _) = callee_of(n)?;
                ensure(balance(&r.sigma, MISSING) == w(10) && r.iota.code.is_empty(), || "account not created".into())
            }),
        Case::new(f, "CALL short of funds", "CALL").stack(&call_args(1000, OTHER, 2000, 0, 0, 0, 0)).push_exc(),
        Case::new(f, "CALL at the depth limit", "CALL")
            .stack(&call_args(1000, OTHER, 0, 0, 0, 0, 0))
            .below(1023)
            .push_exc(),
        Case::new(f, "CALL below the depth limit", "CALL")
            .stack(&call_args(1000, OTHER, 0, 0, 0, 0, 0))
            .below(1022)
            .pushes(1000),
        Case::new(f, "CALL out of gas", "CALL").stack(&call_args(1000, OTHER, 0, 0, 0, 0, 0)).gas(699).exc(),
        Case::new(f, "CALL new account out of gas", "CALL")
            .stack(&call_args(0, MISSING, 0, 0, 0, 0, 0))
            .gas(25699)
            .exc(),
        Case::new(f, "CALL underflow", "CALL").stack(&call_args(1000, OTHER, 0, 0, 0, 0, 0)[..6]).underflow(),
        Case::new(f, "CALLCODE runs foreign code in place", "CALLCODE")
            .stack(&call_args(1000, OTHER, 10, 0, 0, 0, 0))
            .pushes(3300)
            .check(|b, n| {
                let (r, fr) = callee_of(n)?;
                let ok = r.iota.actor == Address::from_low_u64(ACTOR)
                    && r.iota.sender == Address::from_low_u64(ACTOR)
                    && r.iota.value == w(10)
                    && r.iota.code.as_bytes() == OTHER_CODE
                    && r.sigma == b.sigma
                    && fr.annotation.as_ref().map(|c| c.address) == Some(Address::from_low_u64(OTHER));
                ensure(ok, || format!("callee {:?}", r.iota))
            }),
        Case::new(f, "CALLCODE short of funds", "CALLCODE").stack(&call_args(1000, OTHER, 2000, 0, 0, 0, 0)).push_exc(),
        Case::new(f, "DELEGATECALL keeps sender and value", "DELEGATECALL")
            .stack(&[w(1000), a(OTHER), w(0), w(1), w(0), w(0)])
            .memory(&[0x77], 1)
            .value(33)
            .pushes(1000)
            .check(|b, n| {
                let (r, _) = callee_of(n)?;
                let ok = r.iota.actor == b.iota.actor
                    && r.iota.sender == b.iota.sender
                    && r.iota.value == w(33)
                    && *r.iota.input == [0x77]
                    && r.iota.code.as_bytes() == OTHER_CODE;
                ensure(ok, || format!("callee {:?}", r.iota))
            }),
        Case::new(f, "DELEGATECALL underflow", "DELEGATECALL").nums(&[1000, OTHER, 0, 0, 0]).underflow(),
        Case::new(f, "DELEGATECALL at the depth limit", "DELEGATECALL")
            .stack(&[w(1000), a(OTHER), w(0), w(0), w(0), w(0)])
            .below(1023)
            .push_exc(),
        Case::new(f, "CALL returns after a halt", "CALL")
            .stack(&call_args(1000, OTHER, 0, 0, 0, 0, 2))
            .gas(10_000)
            .returning(Callee::Halt { gas: 400, data: vec![1, 2, 3] })
            .next_nums(1303, &[1])
            .check(|_, n| {
                let r = top_regular(n)?;
                let stored = r.sigma.get(&Address::from_low_u64(OTHER)).unwrap().storage.get(&w(0));
                let m = r.mu.memory.read(&Word256::ZERO, 3);
                ensure(m[..3] == [1, 2, 0] && stored == w(1) && r.mu.active_words == w(1), || {
                    format!("memory {:?}, stored {stored}", &m[..3])
                })
            }),
        Case::new(f, "CALL returns after an exception", "CALL")
            .stack(&call_args(1000, OTHER, 0, 0, 0, 0, 2))
            .gas(10_000)
            .returning(Callee::Exc)
            .next_nums(1703, &[0])
            .check(|b, n| {
                let r = top_regular(n)?;
                ensure(r.sigma == b.sigma && r.mu.active_words == w(1), || "state not rolled back".into())
            }),
        Case::new(f, "CALL return writes at most the output size", "CALL")
            .stack(&call_args(1000, OTHER, 0, 0, 0, 0, 1))
            .memory(&[9, 9], 1)
            .gas(10_000)
            .returning(Callee::Halt { gas: 0, data: vec![5, 6] })
            .next_nums(1700, &[1])
            .check(|_, n| ensure(mem_of(n)?[..2] == [5, 9], || "output overran".into())),
        Case::new(f, "DELEGATECALL returns", "DELEGATECALL")
            .stack(&[w(1000), a(OTHER), w(0), w(0), w(0), w(0)])
            .gas(10_000)
            .returning(Callee::Halt { gas: 1000, data: vec![] })
            .next_nums(700, &[1]),
        Case::new(f, "CALLCODE returns after an exception", "CALLCODE")
            .stack(&call_args(1000, OTHER, 10, 0, 0, 0, 0))
            .returning(Callee::Exc)
            .next_nums(7200 + 3300, &[0]),
    ]
}

fn creates() -> Vec<Case> {
    let f = "creation";
    vec![
        Case::new(f, "CREATE pushes the initialization code", "CREATE")
            .nums(&[5, 0, 3])
            .memory(&[0x60, 0x00, 0x00], 1)
            .pushes(66_938)
            .check(|_, n| {
                let (r, fr) = callee_of(n)?;
                let rho = created_by(ACTOR, 0);
                let ok = r.iota.actor == rho
                    && r.iota.sender == Address::from_low_u64(ACTOR)
                    && r.iota.value == w(5)
                    && r.iota.code.as_bytes() == [0x60, 0, 0]
                    && r.iota.input.is_empty()
                    && fr.annotation.is_none()
                    && balance(&r.sigma, ACTOR) == w(995)
                    && r.sigma.get(&Address::from_low_u64(ACTOR)).unwrap().nonce == w(1)
                    && r.sigma.get(&rho).map(|acc| (acc.balance, acc.nonce)) == Some((w(5), w(0)));
                ensure(ok, || format!("creation frame {:?} at {rho}", r.iota))
            }),
        Case::new(f, "CREATE short of funds", "CREATE").nums(&[2000, 0, 0]).push_exc(),
        Case::new(f, "CREATE at the depth limit", "CREATE").nums(&[0, 0, 0]).below(1023).push_exc(),
        Case::new(f, "CREATE out of gas", "CREATE").nums(&[0, 0, 0]).gas(31_999).exc(),
        Case::new(f, "CREATE underflow", "CREATE").nums(&[0, 0]).underflow(),
        Case::new(f, "CREATE returns after a halt", "CREATE")
            .nums(&[5, 0, 1])
            .memory(&[0x00], 1)
            .returning(Callee::Halt { gas: 1000, data: vec![0xab] })
            .next(98_138, &[created_by(ACTOR, 0).to_word()])
            .check(|_, n| {
                let r = top_regular(n)?;
                let code = r.sigma.code(&created_by(ACTOR, 0)).map(|c| c.as_bytes().to_vec());
                ensure(code == Some(vec![0xab]), || format!("deposited code {code:?}"))
            }),
        Case::new(f, "CREATE returns after an exception", "CREATE")
            .nums(&[5, 0, 1])
            .memory(&[0x00], 1)
            .returning(Callee::Exc)
            .next_nums(98_938, &[0])
            .check(|b, n| ensure(top_regular(n)?.sigma == b.sigma, || "state not rolled back".into())),
        Case::new(f, "CREATE cannot pay the code deposit", "CREATE")
            .nums(&[5, 0, 1])
            .memory(&[0x00], 1)
            .returning(Callee::Halt { gas: 199, data: vec![0xab] })
            .exc(),
        Case::new(f, "CREATE pays the code deposit exactly", "CREATE")
            .nums(&[5, 0, 1])
            .memory(&[0x00], 1)
            .returning(Callee::Halt { gas: 200, data: vec![0xab] })
            .next(98_938, &[created_by(ACTOR, 0).to_word()]),
    ]
}

/// Every case of the table.
pub fn cases() -> Vec<Case> {
    let mut v = Vec::new();
    for part in [
        arith(),
        exp(),
        compare_bitwise(),
        sha3(),
        environment(),
        block(),
        accounts(),
        stack_ops(),
        jumps(),
        memory_ops(),
        storage(),
        logs(),
        halting(),
        calls(),
        creates(),
    ] {
        v.extend(part);
    }
    v
}

/// Defined opcodes that no case executes.
pub fn uncovered_opcodes(cases: &[Case]) -> Vec<Opcode> {
    let seen: BTreeSet<Opcode> = cases.iter().map(Case::opcode).collect();
    (0..=255u8).filter(|b| Opcode::is_defined(*b)).map(Opcode::decode).filter(|op| !seen.contains(op)).collect()
}

/// Families lacking a normal case or an exceptional case.
pub fn lopsided_families(cases: &[Case]) -> Vec<&'static str> {
    let families: BTreeSet<&'static str> = cases.iter().map(|c| c.family).collect();
    families
        .into_iter()
        .filter(|f| {
            let mine: Vec<&Case> = cases.iter().filter(|c| c.family == *f).collect();
            !(mine.iter().any(|c| !c.is_exception()) && mine.iter().any(|c| c.is_exception()))
        })
        .collect()
}

/// Runs every case; returns the failures as `family/name: reason`.
pub fn failures(cases: &[Case]) -> Vec<String> {
    cases.iter().filter_map(|c| run_case(c).err().map(|e| format!("{}/{}: {e}", c.family, c.name))).collect()
}
