//! Accounts, global state, machine state, environments and annotated call stacks.
//!
//! Global state and storage are persistent maps, so copying a frame for a
//! callee or a paired run is cheap. The call stack is a persistent cons list
//! of annotated frames.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bytecode::Code;
use crate::words::{Address, Word256};

/// Account storage. Absent keys read as zero; storing zero removes the key.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Storage(im::OrdMap<Word256, Word256>);

impl Storage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &Word256) -> Word256 {
        self.0.get(key).copied().unwrap_or(Word256::ZERO)
    }

    pub fn set(&mut self, key: Word256, value: Word256) {
        if value.is_zero() {
            self.0.remove(&key);
        } else {
            self.0.insert(key, value);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Word256, &Word256)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(Word256, Word256)> for Storage {
    fn from_iter<I: IntoIterator<Item = (Word256, Word256)>>(iter: I) -> Self {
        let mut s = Storage::new();
        for (k, v) in iter {
            s.set(k, v);
        }
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Account {
    pub nonce: Word256,
    pub balance: Word256,
    pub storage: Storage,
    pub code: Code,
}

impl Account {
    pub fn with_balance(balance: Word256) -> Self {
        Account { balance, ..Default::default() }
    }

    pub fn with_code(code: Code) -> Self {
        Account { code, ..Default::default() }
    }
}

/// Account components that equality-up-to-component may ignore.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccountComponent {
    Nonce,
    Balance,
    Storage,
    Code,
}

/// Partial map from addresses to accounts; `None` from [`GlobalState::get`] is ⊥.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct GlobalState(im::OrdMap<Address, Account>);

impl GlobalState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, a: &Address) -> Option<&Account> {
        self.0.get(a)
    }

    pub fn contains(&self, a: &Address) -> bool {
        self.0.contains_key(a)
    }

    pub fn set(&mut self, a: Address, acc: Account) {
        self.0.insert(a, acc);
    }

    pub fn remove(&mut self, a: &Address) -> Option<Account> {
        self.0.remove(a)
    }

    /// Applies `f` to an existing account; returns false if the account is absent.
    pub fn update(&mut self, a: &Address, f: impl FnOnce(&mut Account)) -> bool {
        match self.0.get_mut(a) {
            Some(acc) => {
                f(acc);
                true
            }
            None => false,
        }
    }

    pub fn balance(&self, a: &Address) -> Word256 {
        self.get(a).map_or(Word256::ZERO, |acc| acc.balance)
    }

    pub fn code(&self, a: &Address) -> Option<&Code> {
        self.get(a).map(|acc| &acc.code)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Address, &Account)> {
        self.0.iter()
    }

    pub fn addresses(&self) -> impl Iterator<Item = &Address> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ptr_eq(&self, other: &GlobalState) -> bool {
        self.0.ptr_eq(&other.0)
    }
}

impl FromIterator<(Address, Account)> for GlobalState {
    fn from_iter<I: IntoIterator<Item = (Address, Account)>>(iter: I) -> Self {
        GlobalState(iter.into_iter().collect())
    }
}

fn account_eq_except(a: &Account, b: &Account, ignore: &BTreeSet<AccountComponent>) -> bool {
    (ignore.contains(&AccountComponent::Nonce) || a.nonce == b.nonce)
        && (ignore.contains(&AccountComponent::Balance) || a.balance == b.balance)
        && (ignore.contains(&AccountComponent::Storage) || a.storage == b.storage)
        && (ignore.contains(&AccountComponent::Code) || a.code == b.code)
}

/// Equality of global states ignoring the given components at the given
/// addresses. Existence is never ignored.
pub fn state_eq_up_to(
    a: &GlobalState,
    b: &GlobalState,
    ignore: &BTreeSet<AccountComponent>,
    at: &BTreeSet<Address>,
) -> bool {
    if a.ptr_eq(b) {
        return true;
    }
    let keys: BTreeSet<&Address> = a.addresses().chain(b.addresses()).collect();
    keys.into_iter().all(|k| match (a.get(k), b.get(k)) {
        (None, None) => true,
        (Some(x), Some(y)) if at.contains(k) => account_eq_except(x, y, ignore),
        (Some(x), Some(y)) => x == y,
        _ => false,
    })
}

/// Byte-addressed memory. Bytes beyond the stored prefix read as zero, and
/// equality ignores trailing zeros, so the dense buffer behaves like a total map.
#[derive(Clone, Default)]
pub struct Memory(Arc<Vec<u8>>);

/// Upper bound on materialised memory; larger writes are a resource error.
pub const MEMORY_LIMIT: usize = 1 << 26;

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    fn trimmed(&self) -> &[u8] {
        let end = self.0.iter().rposition(|&b| b != 0).map_or(0, |i| i + 1);
        &self.0[..end]
    }

    /// Reads `len` bytes at `offset`, zero-filled.
    pub fn read(&self, offset: &Word256, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        if let Some(off) = offset.to_usize() {
            if off < self.0.len() {
                let end = (off + len).min(self.0.len());
                out[..end - off].copy_from_slice(&self.0[off..end]);
            }
        }
        out
    }

    pub fn read_word(&self, offset: &Word256) -> Word256 {
        Word256::from_be_slice(&self.read(offset, 32))
    }

    /// Writes `data` at `offset`; fails only if the buffer would exceed [`MEMORY_LIMIT`].
    pub fn write(&mut self, offset: &Word256, data: &[u8]) -> Result<(), ResourceError> {
        if data.is_empty() {
            return Ok(());
        }
        let off = offset.to_usize().ok_or(ResourceError::Memory)?;
        let end = off.checked_add(data.len()).ok_or(ResourceError::Memory)?;
        if end > MEMORY_LIMIT {
            return Err(ResourceError::Memory);
        }
        let buf = Arc::make_mut(&mut self.0);
        if buf.len() < end {
            buf.resize(end, 0);
        }
        buf[off..end].copy_from_slice(data);
        Ok(())
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.trimmed()
    }
}

impl PartialEq for Memory {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.trimmed() == other.trimmed()
    }
}

impl Eq for Memory {}

impl fmt::Debug for Memory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Memory({} bytes)", self.trimmed().len())
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ResourceError {
    #[error("memory write exceeds the interpreter's buffer limit")]
    Memory,
}

/// Machine state μ. The stack is stored with its top at the end of the vector.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MachineState {
    pub gas: Word256,
    pub pc: Word256,
    pub memory: Memory,
    pub active_words: Word256,
    pub stack: Vec<Word256>,
}

impl MachineState {
    pub fn with_gas(gas: Word256) -> Self {
        MachineState { gas, ..Default::default() }
    }

    /// The `n`-th stack element counted from the top (0 is the top).
    pub fn peek(&self, n: usize) -> Option<&Word256> {
        self.stack.len().checked_sub(n + 1).map(|i| &self.stack[i])
    }

    /// Stack listed top first.
    pub fn stack_top_first(&self) -> Vec<Word256> {
        self.stack.iter().rev().copied().collect()
    }
}

/// Execution environment ι.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecutionEnvironment {
    pub actor: Address,
    pub input: Arc<[u8]>,
    pub sender: Address,
    pub value: Word256,
    pub code: Code,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogEvent {
    pub address: Address,
    pub topics: Vec<Word256>,
    #[serde(with = "hex_bytes")]
    pub data: Vec<u8>,
}

/// Transaction effects η: refund balance, logs, and the suicide set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransactionEffects {
    pub refund: Word256,
    pub logs: im::Vector<LogEvent>,
    pub suicides: im::OrdSet<Address>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockHeader {
    pub parent: Word256,
    pub beneficiary: Address,
    pub difficulty: Word256,
    pub number: Word256,
    pub gaslimit: Word256,
    pub timestamp: Word256,
}

/// A known ancestor block, used to answer `BLOCKHASH`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ancestor {
    pub hash: Word256,
    pub header: BlockHeader,
}

/// Transaction environment Γ: origin, gas prize and block header, plus the
/// ancestor chain needed to resolve block hashes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransactionEnvironment {
    pub origin: Address,
    pub prize: Word256,
    pub header: BlockHeader,
    pub ancestors: Arc<Vec<Ancestor>>,
}

impl TransactionEnvironment {
    pub fn ancestor(&self, hash: &Word256) -> Option<&BlockHeader> {
        self.ancestors.iter().find(|a| &a.hash == hash).map(|a| &a.header)
    }
}

/// Environment components that miners can influence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvComponent {
    Origin,
    GasPrice,
    Parent,
    Coinbase,
    Difficulty,
    Number,
    GasLimit,
    Timestamp,
}

impl EnvComponent {
    pub const ALL: [EnvComponent; 8] = [
        EnvComponent::Origin,
        EnvComponent::GasPrice,
        EnvComponent::Parent,
        EnvComponent::Coinbase,
        EnvComponent::Difficulty,
        EnvComponent::Number,
        EnvComponent::GasLimit,
        EnvComponent::Timestamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvComponent::Origin => "origin",
            EnvComponent::GasPrice => "gasprice",
            EnvComponent::Parent => "parent",
            EnvComponent::Coinbase => "coinbase",
            EnvComponent::Difficulty => "difficulty",
            EnvComponent::Number => "number",
            EnvComponent::GasLimit => "gaslimit",
            EnvComponent::Timestamp => "timestamp",
        }
    }

    pub fn parse(s: &str) -> Option<EnvComponent> {
        Self::ALL.into_iter().find(|c| c.name() == s.to_ascii_lowercase())
    }

    pub fn get(self, env: &TransactionEnvironment) -> Word256 {
        match self {
            EnvComponent::Origin => env.origin.to_word(),
            EnvComponent::GasPrice => env.prize,
            EnvComponent::Parent => env.header.parent,
            EnvComponent::Coinbase => env.header.beneficiary.to_word(),
            EnvComponent::Difficulty => env.header.difficulty,
            EnvComponent::Number => env.header.number,
            EnvComponent::GasLimit => env.header.gaslimit,
            EnvComponent::Timestamp => env.header.timestamp,
        }
    }

    pub fn set(self, env: &mut TransactionEnvironment, v: Word256) {
        match self {
            EnvComponent::Origin => env.origin = Address::from_word(&v),
            EnvComponent::GasPrice => env.prize = v,
            EnvComponent::Parent => env.header.parent = v,
            EnvComponent::Coinbase => env.header.beneficiary = Address::from_word(&v),
            EnvComponent::Difficulty => env.header.difficulty = v,
            EnvComponent::Number => env.header.number = v,
            EnvComponent::GasLimit => env.header.gaslimit = v,
            EnvComponent::Timestamp => env.header.timestamp = v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegularState {
    pub mu: MachineState,
    pub iota: Arc<ExecutionEnvironment>,
    pub sigma: GlobalState,
    pub eta: TransactionEffects,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HaltState {
    pub sigma: GlobalState,
    pub gas: Word256,
    pub data: Vec<u8>,
    pub eta: TransactionEffects,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExecutionState {
    Regular(Box<RegularState>),
    Halt(Box<HaltState>),
    Exc,
}

impl ExecutionState {
    pub fn is_final(&self) -> bool {
        !matches!(self, ExecutionState::Regular(_))
    }

    pub fn as_regular(&self) -> Option<&RegularState> {
        match self {
            ExecutionState::Regular(r) => Some(r),
            _ => None,
        }
    }
}

/// A contract identity used to annotate frames: its address and code.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Contract {
    pub address: Address,
    pub code: Code,
}

/// Frame annotation; `None` for frames that run code not owned by any contract
/// (creation code) and for exceptions raised by the depth or balance guard.
pub type Annotation = Option<Contract>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub state: ExecutionState,
    pub annotation: Annotation,
}

impl Frame {
    pub fn new(state: ExecutionState, annotation: Annotation) -> Self {
        Frame { state, annotation }
    }

    pub fn is_annotated(&self, c: &Contract) -> bool {
        self.annotation.as_ref() == Some(c)
    }
}

#[derive(Debug)]
struct Node {
    frame: Frame,
    next: Option<Arc<Node>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StackShapeError {
    #[error("halting or exceptional frame at depth {0} below the top")]
    FinalBelowTop(usize),
    #[error("call stack of length {0} exceeds 1025 frames")]
    TooDeep(usize),
}

/// Maximum call-stack length: 1024 regular frames plus one transient final frame.
pub const MAX_CALL_STACK: usize = 1025;

/// Persistent annotated call stack. Only the top frame may be final.
#[derive(Clone, Debug, Default)]
pub struct CallStack {
    head: Option<Arc<Node>>,
    len: usize,
}

impl CallStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(frame: Frame) -> Self {
        CallStack::new().push_unchecked(frame)
    }

    /// Builds a stack from frames listed top first, checking the grammar.
    pub fn from_frames(frames: Vec<Frame>) -> Result<Self, StackShapeError> {
        if frames.len() > MAX_CALL_STACK {
            return Err(StackShapeError::TooDeep(frames.len()));
        }
        if let Some(i) = frames.iter().skip(1).position(|f| f.state.is_final()) {
            return Err(StackShapeError::FinalBelowTop(i + 1));
        }
        let mut s = CallStack::new();
        for f in frames.into_iter().rev() {
            s = s.push_unchecked(f);
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn top(&self) -> Option<&Frame> {
        self.head.as_deref().map(|n| &n.frame)
    }

    /// The stack without its top frame.
    pub fn rest(&self) -> CallStack {
        match &self.head {
            None => CallStack::new(),
            Some(n) => CallStack { head: n.next.clone(), len: self.len - 1 },
        }
    }

    /// Pushes a frame; fails if the current top is final or the stack is full.
    pub fn push(&self, frame: Frame) -> Result<CallStack, StackShapeError> {
        if self.top().is_some_and(|t| t.state.is_final()) {
            return Err(StackShapeError::FinalBelowTop(1));
        }
        if self.len + 1 > MAX_CALL_STACK {
            return Err(StackShapeError::TooDeep(self.len + 1));
        }
        Ok(self.push_unchecked(frame))
    }

    pub(crate) fn push_unchecked(&self, frame: Frame) -> CallStack {
        CallStack { head: Some(Arc::new(Node { frame, next: self.head.clone() })), len: self.len + 1 }
    }

    /// Replaces the top frame.
    pub fn replace_top(&self, frame: Frame) -> CallStack {
        self.rest().push_unchecked(frame)
    }

    /// Frames from the top down.
    pub fn iter(&self) -> impl Iterator<Item = &Frame> {
        let mut cur = self.head.as_deref();
        std::iter::from_fn(move || {
            let n = cur?;
            cur = n.next.as_deref();
            Some(&n.frame)
        })
    }

    pub fn to_frames(&self) -> Vec<Frame> {
        self.iter().cloned().collect()
    }

    /// The suffix of length `n` (the bottom `n` frames).
    pub fn suffix(&self, n: usize) -> CallStack {
        let mut cur = self.clone();
        while cur.len > n {
            cur = cur.rest();
        }
        cur
    }

    fn same_node(&self, other: &CallStack) -> bool {
        match (&self.head, &other.head) {
            (None, None) => true,
            (Some(a), Some(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }

    /// Whether `self` ends with `tail` (including equality).
    pub fn ends_with(&self, tail: &CallStack) -> bool {
        if tail.len > self.len {
            return false;
        }
        let suffix = self.suffix(tail.len);
        suffix.same_node(tail) || suffix == *tail
    }

    pub fn is_final(&self) -> bool {
        self.len == 1 && self.top().is_some_and(|f| f.state.is_final())
    }

    pub fn contains_annotation(&self, c: &Contract) -> bool {
        self.iter().any(|f| f.is_annotated(c))
    }
}

impl PartialEq for CallStack {
    fn eq(&self, other: &Self) -> bool {
        if self.len != other.len {
            return false;
        }
        let mut a = self.clone();
        let mut b = other.clone();
        while !a.is_empty() {
            if a.same_node(&b) {
                return true;
            }
            if a.top() != b.top() {
                return false;
            }
            a = a.rest();
            b = b.rest();
        }
        true
    }
}

impl Eq for CallStack {}

/// `inner ⊂ outer`: `outer` strictly extends `inner` below its top frame,
/// i.e. `outer = s :: (S' ++ inner)`.
pub fn substack(inner: &CallStack, outer: &CallStack) -> bool {
    outer.len > inner.len && outer.ends_with(inner)
}

/// The frames of `a` above its suffix `b`, or `None` when `b` is not a suffix of `a`.
pub fn stack_diff(a: &CallStack, b: &CallStack) -> Option<Vec<Frame>> {
    if !a.ends_with(b) {
        return None;
    }
    Some(a.iter().take(a.len - b.len).cloned().collect())
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::words::to_hex(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        crate::words::from_hex(&s).map_err(serde::de::Error::custom)
    }
}
