//! Opcode decoding, jump-destination analysis and a small text assembler.

use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::words::{from_hex, keccak256, to_hex, Word256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Stop,
    Add,
    Mul,
    Sub,
    Div,
    Sdiv,
    Mod,
    Smod,
    AddMod,
    MulMod,
    Exp,
    SignExtend,
    Lt,
    Gt,
    Slt,
    Sgt,
    Eq,
    IsZero,
    And,
    Or,
    Xor,
    Not,
    Byte,
    Sha3,
    Address,
    Balance,
    Origin,
    Caller,
    CallValue,
    CallDataLoad,
    CallDataSize,
    CallDataCopy,
    CodeSize,
    CodeCopy,
    GasPrice,
    ExtCodeSize,
    ExtCodeCopy,
    BlockHash,
    Coinbase,
    Timestamp,
    Number,
    Difficulty,
    GasLimit,
    Pop,
    MLoad,
    MStore,
    MStore8,
    SLoad,
    SStore,
    Jump,
    JumpI,
    Pc,
    MSize,
    Gas,
    JumpDest,
    /// `PUSH1`..`PUSH32`.
    Push(u8),
    /// `DUP1`..`DUP16`.
    Dup(u8),
    /// `SWAP1`..`SWAP16`.
    Swap(u8),
    /// `LOG0`..`LOG4`.
    Log(u8),
    Create,
    Call,
    CallCode,
    Return,
    DelegateCall,
    Invalid,
    SelfDestruct,
}

const SIMPLE: &[(u8, Opcode, &str)] = &[
    (0x00, Opcode::Stop, "STOP"),
    (0x01, Opcode::Add, "ADD"),
    (0x02, Opcode::Mul, "MUL"),
    (0x03, Opcode::Sub, "SUB"),
    (0x04, Opcode::Div, "DIV"),
    (0x05, Opcode::Sdiv, "SDIV"),
    (0x06, Opcode::Mod, "MOD"),
    (0x07, Opcode::Smod, "SMOD"),
    (0x08, Opcode::AddMod, "ADDMOD"),
    (0x09, Opcode::MulMod, "MULMOD"),
    (0x0a, Opcode::Exp, "EXP"),
    (0x0b, Opcode::SignExtend, "SIGNEXTEND"),
    (0x10, Opcode::Lt, "LT"),
    (0x11, Opcode::Gt, "GT"),
    (0x12, Opcode::Slt, "SLT"),
    (0x13, Opcode::Sgt, "SGT"),
    (0x14, Opcode::Eq, "EQ"),
    (0x15, Opcode::IsZero, "ISZERO"),
    (0x16, Opcode::And, "AND"),
    (0x17, Opcode::Or, "OR"),
    (0x18, Opcode::Xor, "XOR"),
    (0x19, Opcode::Not, "NOT"),
    (0x1a, Opcode::Byte, "BYTE"),
    (0x20, Opcode::Sha3, "SHA3"),
    (0x30, Opcode::Address, "ADDRESS"),
    (0x31, Opcode::Balance, "BALANCE"),
    (0x32, Opcode::Origin, "ORIGIN"),
    (0x33, Opcode::Caller, "CALLER"),
    (0x34, Opcode::CallValue, "CALLVALUE"),
    (0x35, Opcode::CallDataLoad, "CALLDATALOAD"),
    (0x36, Opcode::CallDataSize, "CALLDATASIZE"),
    (0x37, Opcode::CallDataCopy, "CALLDATACOPY"),
    (0x38, Opcode::CodeSize, "CODESIZE"),
    (0x39, Opcode::CodeCopy, "CODECOPY"),
    (0x3a, Opcode::GasPrice, "GASPRICE"),
    (0x3b, Opcode::ExtCodeSize, "EXTCODESIZE"),
    (0x3c, Opcode::ExtCodeCopy, "EXTCODECOPY"),
    (0x40, Opcode::BlockHash, "BLOCKHASH"),
    (0x41, Opcode::Coinbase, "COINBASE"),
    (0x42, Opcode::Timestamp, "TIMESTAMP"),
    (0x43, Opcode::Number, "NUMBER"),
    (0x44, Opcode::Difficulty, "DIFFICULTY"),
    (0x45, Opcode::GasLimit, "GASLIMIT"),
    (0x50, Opcode::Pop, "POP"),
    (0x51, Opcode::MLoad, "MLOAD"),
    (0x52, Opcode::MStore, "MSTORE"),
    (0x53, Opcode::MStore8, "MSTORE8"),
    (0x54, Opcode::SLoad, "SLOAD"),
    (0x55, Opcode::SStore, "SSTORE"),
    (0x56, Opcode::Jump, "JUMP"),
    (0x57, Opcode::JumpI, "JUMPI"),
    (0x58, Opcode::Pc, "PC"),
    (0x59, Opcode::MSize, "MSIZE"),
    (0x5a, Opcode::Gas, "GAS"),
    (0x5b, Opcode::JumpDest, "JUMPDEST"),
    (0xf0, Opcode::Create, "CREATE"),
    (0xf1, Opcode::Call, "CALL"),
    (0xf2, Opcode::CallCode, "CALLCODE"),
    (0xf3, Opcode::Return, "RETURN"),
    (0xf4, Opcode::DelegateCall, "DELEGATECALL"),
    (0xfe, Opcode::Invalid, "INVALID"),
    (0xff, Opcode::SelfDestruct, "SELFDESTRUCT"),
];

fn decode_table() -> &'static [Opcode; 256] {
    static TABLE: OnceLock<[Opcode; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [Opcode::Invalid; 256];
        for &(b, op, _) in SIMPLE {
            t[b as usize] = op;
        }
        for n in 1..=32u8 {
            t[0x5f + n as usize] = Opcode::Push(n);
        }
        for n in 1..=16u8 {
            t[0x7f + n as usize] = Opcode::Dup(n);
            t[0x8f + n as usize] = Opcode::Swap(n);
        }
        for n in 0..=4u8 {
            t[0xa0 + n as usize] = Opcode::Log(n);
        }
        t
    })
}

impl Opcode {
    /// Decodes a byte; bytes outside the supported instruction set map to `Invalid`.
    pub fn decode(byte: u8) -> Opcode {
        decode_table()[byte as usize]
    }

    /// Whether `byte` names a supported instruction (0xfe counts as one).
    pub fn is_defined(byte: u8) -> bool {
        byte == 0xfe || Opcode::decode(byte) != Opcode::Invalid
    }

    pub fn encode(self) -> u8 {
        match self {
            Opcode::Push(n) => 0x5f + n,
            Opcode::Dup(n) => 0x7f + n,
            Opcode::Swap(n) => 0x8f + n,
            Opcode::Log(n) => 0xa0 + n,
            op => SIMPLE
                .iter()
                .find(|(_, o, _)| *o == op)
                .map(|(b, _, _)| *b)
                .expect("every simple opcode is in the table"),
        }
    }

    pub fn mnemonic(self) -> String {
        match self {
            Opcode::Push(n) => format!("PUSH{n}"),
            Opcode::Dup(n) => format!("DUP{n}"),
            Opcode::Swap(n) => format!("SWAP{n}"),
            Opcode::Log(n) => format!("LOG{n}"),
            op => SIMPLE
                .iter()
                .find(|(_, o, _)| *o == op)
                .map(|(_, _, m)| m.to_string())
                .expect("every simple opcode is in the table"),
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        let upper = s.to_ascii_uppercase();
        if upper == "SHA3" || upper == "KECCAK256" {
            return Some(Opcode::Sha3);
        }
        if upper == "SUICIDE" {
            return Some(Opcode::SelfDestruct);
        }
        if let Some(&(_, op, _)) = SIMPLE.iter().find(|(_, _, m)| *m == upper) {
            return Some(op);
        }
        let family = |prefix: &str, lo: u8, hi: u8| -> Option<u8> {
            let n: u8 = upper.strip_prefix(prefix)?.parse().ok()?;
            (lo..=hi).contains(&n).then_some(n)
        };
        family("PUSH", 1, 32)
            .map(Opcode::Push)
            .or_else(|| family("DUP", 1, 16).map(Opcode::Dup))
            .or_else(|| family("SWAP", 1, 16).map(Opcode::Swap))
            .or_else(|| family("LOG", 0, 4).map(Opcode::Log))
    }

    /// Size of the inline immediate following this opcode.
    pub fn immediate_len(self) -> usize {
        match self {
            Opcode::Push(n) => n as usize,
            _ => 0,
        }
    }

    pub fn is_call_family(self) -> bool {
        matches!(self, Opcode::Call | Opcode::CallCode | Opcode::DelegateCall | Opcode::Create)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.mnemonic())
    }
}

impl Serialize for Opcode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.mnemonic())
    }
}

impl<'de> Deserialize<'de> for Opcode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Opcode::from_mnemonic(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown opcode {s}")))
    }
}

/// Positions of `JUMPDEST` bytes that are not inside a push immediate.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct JumpDests {
    bits: Vec<u64>,
}

impl JumpDests {
    pub fn analyze(code: &[u8]) -> Self {
        let mut bits = vec![0u64; code.len().div_ceil(64)];
        let mut pc = 0;
        while pc < code.len() {
            let op = Opcode::decode(code[pc]);
            if op == Opcode::JumpDest {
                bits[pc / 64] |= 1 << (pc % 64);
            }
            pc += 1 + op.immediate_len();
        }
        JumpDests { bits }
    }

    pub fn contains(&self, target: &Word256) -> bool {
        match target.to_usize() {
            Some(i) if i / 64 < self.bits.len() => self.bits[i / 64] >> (i % 64) & 1 == 1,
            _ => false,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.bits.len() * 64).filter(|&i| self.bits[i / 64] >> (i % 64) & 1 == 1)
    }
}

/// Immutable contract code with a lazily computed jump-destination set.
///
/// Clones share both the bytes and the analysis, so the scan runs once per
/// distinct code object.
#[derive(Clone)]
pub struct Code {
    bytes: Arc<[u8]>,
    dests: Arc<OnceLock<JumpDests>>,
}

impl Code {
    pub fn new(bytes: impl Into<Arc<[u8]>>) -> Self {
        Code { bytes: bytes.into(), dests: Arc::new(OnceLock::new()) }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// The byte at `i`, or 0 (`STOP`) past the end.
    pub fn byte_at(&self, i: &Word256) -> u8 {
        i.to_usize().and_then(|i| self.bytes.get(i).copied()).unwrap_or(0)
    }

    pub fn jump_dests(&self) -> &JumpDests {
        self.dests.get_or_init(|| JumpDests::analyze(&self.bytes))
    }

    pub fn hash(&self) -> Word256 {
        keccak256(&self.bytes)
    }

    pub fn ptr_eq(&self, other: &Code) -> bool {
        Arc::ptr_eq(&self.bytes, &other.bytes)
    }
}

impl Default for Code {
    fn default() -> Self {
        Self::empty()
    }
}

impl PartialEq for Code {
    fn eq(&self, other: &Self) -> bool {
        self.ptr_eq(other) || self.bytes == other.bytes
    }
}

impl Eq for Code {}

impl Hash for Code {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.bytes.hash(state)
    }
}

impl PartialOrd for Code {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Code {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bytes.cmp(&other.bytes)
    }
}

impl fmt::Debug for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&to_hex(&self.bytes))
    }
}

impl From<Vec<u8>> for Code {
    fn from(v: Vec<u8>) -> Self {
        Code::new(v)
    }
}

impl Serialize for Code {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_hex(&self.bytes))
    }
}

impl<'de> Deserialize<'de> for Code {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        from_hex(&s).map(Code::new).map_err(serde::de::Error::custom)
    }
}

/// The opcode at `pc`, or `STOP` past the end of the code.
pub fn current_opcode(code: &Code, pc: &Word256) -> Opcode {
    Opcode::decode(code.byte_at(pc))
}

/// Position of the next instruction: skips the immediate of a push.
pub fn next_pc(pc: &Word256, op: Opcode) -> Word256 {
    pc.wrapping_add(Word256::from_u64(1 + op.immediate_len() as u64))
}

/// One assembled instruction. `imm` is present exactly for pushes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instruction {
    pub op: Opcode,
    pub imm: Option<Vec<u8>>,
}

impl Instruction {
    pub fn op(op: Opcode) -> Self {
        Instruction { op, imm: None }
    }

    pub fn push(bytes: Vec<u8>) -> Self {
        assert!((1..=32).contains(&bytes.len()), "push width out of range");
        Instruction { op: Opcode::Push(bytes.len() as u8), imm: Some(bytes) }
    }
}

/// A disassembled line; `truncated` marks a push whose immediate runs past the code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisasmLine {
    pub offset: usize,
    pub byte: u8,
    pub instruction: Instruction,
    pub truncated: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{line}:{col}: {msg}")]
pub struct AsmError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

pub fn assemble(program: &[Instruction]) -> Vec<u8> {
    let mut out = Vec::new();
    for ins in program {
        out.push(ins.op.encode());
        if let Some(imm) = &ins.imm {
            out.extend_from_slice(imm);
        }
    }
    out
}

pub fn disassemble(code: &[u8]) -> Vec<DisasmLine> {
    let mut lines = Vec::new();
    let mut pc = 0;
    while pc < code.len() {
        let byte = code[pc];
        let op = Opcode::decode(byte);
        let n = op.immediate_len();
        let (imm, truncated) = if n > 0 {
            let end = (pc + 1 + n).min(code.len());
            let mut imm = code[pc + 1..end].to_vec();
            let truncated = imm.len() < n;
            imm.resize(n, 0);
            (Some(imm), truncated)
        } else {
            (None, false)
        };
        lines.push(DisasmLine { offset: pc, byte, instruction: Instruction { op, imm }, truncated });
        pc += 1 + n;
    }
    lines
}

/// Renders instructions one per line in the syntax accepted by [`parse_asm`].
pub fn format_asm(program: &[Instruction]) -> String {
    let mut out = String::new();
    for ins in program {
        out.push_str(&ins.op.mnemonic());
        if let Some(imm) = &ins.imm {
            out.push(' ');
            out.push_str(&to_hex(imm));
        }
        out.push('\n');
    }
    out
}

/// Renders a disassembly listing with offsets; unknown bytes and truncated
/// pushes are annotated in trailing comments.
pub fn format_disasm(code: &[u8]) -> String {
    let mut out = String::new();
    for line in disassemble(code) {
        let mut text = line.instruction.op.mnemonic();
        if let Some(imm) = &line.instruction.imm {
            text.push(' ');
            text.push_str(&to_hex(imm));
        }
        let mut notes = Vec::new();
        if !Opcode::is_defined(line.byte) {
            notes.push(format!("unknown byte 0x{:02x}", line.byte));
        }
        if line.truncated {
            notes.push("truncated immediate, zero padded".to_string());
        }
        if notes.is_empty() {
            out.push_str(&format!("{text}\n"));
        } else {
            out.push_str(&format!("{text:<24} # {:04x}: {}\n", line.offset, notes.join("; ")));
        }
    }
    out
}

enum Operand {
    Literal(Vec<u8>),
    Label { name: String, minus: Option<String>, col: usize },
}

/// Parses assembly text.
///
/// One instruction per line; `#` and `;` start comments. `name:` defines a
/// label at the current offset. A push operand is a hex or decimal literal
/// (left-padded to the push width), `:name` for a label offset, or
/// `:end-:start` for a label difference. Bare `PUSH` picks the smallest
/// width for literals and two bytes for labels.
pub fn parse_asm(text: &str) -> Result<Vec<Instruction>, AsmError> {
    let mut pending: Vec<(Opcode, Option<Operand>, usize)> = Vec::new();
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut offset = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let code = raw.split(['#', ';']).next().unwrap_or("");
        let tokens = tokenize(code);
        let mut k = 0;
        while k < tokens.len() {
            let (col, tok) = tokens[k];
            k += 1;
            if let Some(name) = tok.strip_suffix(':') {
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(AsmError { line, col, msg: format!("invalid label {tok:?}") });
                }
                if labels.insert(name.to_string(), offset).is_some() {
                    return Err(AsmError { line, col, msg: format!("duplicate label {name}") });
                }
                continue;
            }
            let op = if tok.eq_ignore_ascii_case("PUSH") {
                Opcode::Push(0)
            } else {
                Opcode::from_mnemonic(tok).ok_or_else(|| AsmError {
                    line,
                    col,
                    msg: format!("unknown mnemonic {tok}"),
                })?
            };
            let Opcode::Push(n) = op else {
                pending.push((op, None, line));
                offset += 1;
                continue;
            };
            let &(arg_col, arg) = tokens.get(k).ok_or_else(|| AsmError {
                line,
                col: col + tok.len(),
                msg: "missing push operand".into(),
            })?;
            k += 1;
            let operand = parse_operand(arg, line, arg_col)?;
            let width = match &operand {
                _ if n > 0 => n as usize,
                Operand::Literal(bytes) => bytes.len(),
                Operand::Label { .. } => 2,
            };
            if let Operand::Literal(bytes) = &operand {
                if bytes.len() > width {
                    return Err(AsmError {
                        line,
                        col: arg_col,
                        msg: format!("operand needs {} bytes but PUSH{width} carries {width}", bytes.len()),
                    });
                }
            }
            pending.push((Opcode::Push(width as u8), Some(operand), line));
            offset += 1 + width;
        }
    }
    let mut program = Vec::with_capacity(pending.len());
    for (op, operand, line) in pending {
        let ins = match operand {
            None => Instruction::op(op),
            Some(operand) => {
                let width = op.immediate_len();
                let bytes = match operand {
                    Operand::Literal(bytes) => bytes,
                    Operand::Label { name, minus, col } => {
                        let lookup = |n: &str| {
                            labels.get(n).copied().ok_or_else(|| AsmError {
                                line,
                                col,
                                msg: format!("undefined label {n}"),
                            })
                        };
                        let mut v = lookup(&name)?;
                        if let Some(m) = minus {
                            v = v.checked_sub(lookup(&m)?).ok_or_else(|| AsmError {
                                line,
                                col,
                                msg: "negative label difference".into(),
                            })?;
                        }
                        let bytes = Word256::from_u64(v as u64).to_be_minimal();
                        if bytes.len() > width {
                            return Err(AsmError { line, col, msg: format!("label value does not fit PUSH{width}") });
                        }
                        bytes
                    }
                };
                let mut imm = vec![0u8; width - bytes.len()];
                imm.extend_from_slice(&bytes);
                Instruction { op, imm: Some(imm) }
            }
        };
        program.push(ins);
    }
    Ok(program)
}

/// Whitespace-separated tokens with their 1-based columns.
fn tokenize(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s + 1, &line[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

fn parse_operand(tok: &str, line: usize, col: usize) -> Result<Operand, AsmError> {
    if let Some(label) = tok.strip_prefix(':') {
        let (name, minus) = match label.split_once("-:") {
            Some((a, b)) => (a.to_string(), Some(b.to_string())),
            None => (label.to_string(), None),
        };
        return Ok(Operand::Label { name, minus, col });
    }
    if let Some(hex) = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        let padded = if hex.len() % 2 == 1 { format!("0{hex}") } else { hex.to_string() };
        let bytes = from_hex(&padded).map_err(|e| AsmError { line, col, msg: e.to_string() })?;
        if bytes.len() > 32 {
            return Err(AsmError { line, col, msg: "push operand wider than 32 bytes".into() });
        }
        // keep explicit leading zeros so `PUSH 0x0001` stays two bytes wide
        return Ok(Operand::Literal(if bytes.is_empty() { vec![0] } else { bytes }));
    }
    let w = Word256::parse_literal(tok).map_err(|e| AsmError { line, col, msg: e.to_string() })?;
    let bytes = w.to_be_minimal();
    Ok(Operand::Literal(if bytes.is_empty() { vec![0] } else { bytes }))
}

/// Assembles source text straight to bytes.
pub fn assemble_text(text: &str) -> Result<Vec<u8>, AsmError> {
    parse_asm(text).map(|p| assemble(&p))
}

/// Builds creation code that runs `constructor` and then returns `runtime`
/// as the new contract's code. The constructor must fall through.
pub fn deploy_code(constructor: &[u8], runtime: &[u8]) -> Vec<u8> {
    const COPIER_LEN: usize = 13;
    let len = runtime.len() as u16;
    let start = (constructor.len() + COPIER_LEN) as u16;
    let mut out = constructor.to_vec();
    out.push(Opcode::Push(2).encode());
    out.extend_from_slice(&len.to_be_bytes());
    out.push(Opcode::Dup(1).encode());
    out.push(Opcode::Push(2).encode());
    out.extend_from_slice(&start.to_be_bytes());
    out.extend_from_slice(&[Opcode::Push(1).encode(), 0, Opcode::CodeCopy.encode()]);
    out.extend_from_slice(&[Opcode::Push(1).encode(), 0, Opcode::Return.encode()]);
    debug_assert_eq!(out.len(), constructor.len() + COPIER_LEN);
    out.extend_from_slice(runtime);
    out
}
