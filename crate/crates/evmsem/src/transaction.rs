//! External transactions: initialization, execution and finalization.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bytecode::Code;
use crate::gas::{gas, wide, SCHEDULE};
use crate::semantics::{self, RunError, RunOutput, StepBudget};
use crate::state::{
    hex_bytes, Account, Ancestor, BlockHeader, CallStack, Contract, ExecutionEnvironment, ExecutionState, Frame,
    GlobalState, HaltState, LogEvent, TransactionEnvironment,
};
use crate::traces::Trace;
use crate::words::{fresh_address, Address, Word256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxKind {
    Call,
    Create,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
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
    #[serde(default, with = "hex_bytes")]
    pub input: Vec<u8>,
    #[serde(rename = "type")]
    pub kind: TxKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxShapeError {
    #[error("call transaction without a target")]
    CallWithoutTarget,
    #[error("create transaction with a target")]
    CreateWithTarget,
}

impl Transaction {
    pub fn call(sender: Address, to: Address, gaslimit: u64) -> Self {
        Transaction {
            nonce: Word256::ZERO,
            prize: Word256::ZERO,
            gaslimit: Word256::from_u64(gaslimit),
            to: Some(to),
            value: Word256::ZERO,
            sender,
            input: Vec::new(),
            kind: TxKind::Call,
        }
    }

    pub fn create(sender: Address, init: Vec<u8>, gaslimit: u64) -> Self {
        Transaction {
            nonce: Word256::ZERO,
            prize: Word256::ZERO,
            gaslimit: Word256::from_u64(gaslimit),
            to: None,
            value: Word256::ZERO,
            sender,
            input: init,
            kind: TxKind::Create,
        }
    }

    pub fn check_shape(&self) -> Result<(), TxShapeError> {
        match (self.kind, self.to) {
            (TxKind::Call, None) => Err(TxShapeError::CallWithoutTarget),
            (TxKind::Create, Some(_)) => Err(TxShapeError::CreateWithTarget),
            _ => Ok(()),
        }
    }

    pub fn intrinsic_gas(&self) -> Word256 {
        Word256::from_u64(match self.kind {
            TxKind::Call => SCHEDULE.tx_call,
            TxKind::Create => SCHEDULE.tx_create,
        })
    }

    /// The account a create transaction deploys to.
    pub fn created_address(&self) -> Option<Address> {
        (self.kind == TxKind::Create).then(|| fresh_address(&self.sender, &self.nonce.wrapping_add(Word256::one())))
    }
}

/// A block header together with the ancestors reachable through `BLOCKHASH`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub ancestors: Vec<Ancestor>,
}

impl From<BlockHeader> for Block {
    fn from(header: BlockHeader) -> Self {
        Block { header, ancestors: Vec::new() }
    }
}

/// Result of a successful initialization.
#[derive(Clone, Debug)]
pub struct Initialized {
    pub env: TransactionEnvironment,
    pub frame: Frame,
    /// The global state after the nonce increment and upfront gas payment,
    /// before any value moves.
    pub sigma_pre: GlobalState,
}

/// Validates `tx` against `sigma` and builds the initial frame. Returns
/// `None` for an invalid transaction.
pub fn t_init(tx: &Transaction, block: &Block, sigma: &GlobalState) -> Option<Initialized> {
    tx.check_shape().ok()?;
    let sender = sigma.get(&tx.sender)?;
    let upfront = wide(&tx.gaslimit).wrapping_mul(wide(&tx.prize));
    if tx.nonce != sender.nonce
        || wide(&sender.balance) < upfront.wrapping_add(wide(&tx.value))
        || tx.gaslimit < tx.intrinsic_gas()
    {
        return None;
    }
    let mut sigma_pre = sigma.clone();
    sigma_pre.update(&tx.sender, |a| {
        a.nonce = a.nonce.wrapping_add(Word256::one());
        a.balance = a.balance.wrapping_sub(upfront.resize());
    });
    let mut s = sigma_pre.clone();
    s.update(&tx.sender, |a| a.balance = a.balance.wrapping_sub(tx.value));
    let (iota, annotation) = match (tx.kind, tx.to) {
        (TxKind::Call, Some(to)) => {
            if !s.update(&to, |a| a.balance = a.balance.wrapping_add(tx.value)) {
                s.set(to, Account::with_balance(tx.value));
            }
            let code = s.code(&to).cloned().unwrap_or_default();
            let iota = ExecutionEnvironment {
                actor: to,
                input: Arc::from(tx.input.clone()),
                sender: tx.sender,
                value: tx.value,
                code: code.clone(),
            };
            (iota, Some(Contract { address: to, code }))
        }
        _ => {
            let rho = tx.created_address()?;
            let carried = s.balance(&rho);
            s.set(rho, Account::with_balance(carried.wrapping_add(tx.value)));
            let iota = ExecutionEnvironment {
                actor: rho,
                input: Arc::from(Vec::new()),
                sender: tx.sender,
                value: tx.value,
                code: Code::new(tx.input.clone()),
            };
            (iota, None)
        }
    };
    let env = TransactionEnvironment {
        origin: tx.sender,
        prize: tx.prize,
        header: block.header.clone(),
        ancestors: Arc::new(block.ancestors.clone()),
    };
    let gas = tx.gaslimit.wrapping_sub(tx.intrinsic_gas());
    let frame = semantics::initial_frame(s, iota, gas, annotation);
    Some(Initialized { env, frame, sigma_pre })
}

/// Applies the code-deposit charge of a create transaction. A result that
/// cannot pay for its code becomes `Exc`.
pub fn deposit_code(final_state: ExecutionState, tx: &Transaction) -> ExecutionState {
    let (ExecutionState::Halt(h), Some(rho)) = (&final_state, tx.created_address()) else {
        return final_state;
    };
    let cost = gas(SCHEDULE.code_deposit).wrapping_mul(gas(h.data.len() as u64));
    if wide(&h.gas) < cost {
        return ExecutionState::Exc;
    }
    let mut sigma = h.sigma.clone();
    let code = Code::new(h.data.clone());
    if !sigma.update(&rho, |a| a.code = code.clone()) {
        sigma.set(rho, Account::with_code(code));
    }
    ExecutionState::Halt(Box::new(HaltState {
        sigma,
        gas: wide(&h.gas).wrapping_sub(cost).resize(),
        data: h.data.clone(),
        eta: h.eta.clone(),
    }))
}

/// Gas charged for a finished transaction and the refund granted.
pub fn gas_accounting(final_state: &ExecutionState, tx: &Transaction) -> (Word256, Word256) {
    match final_state {
        ExecutionState::Halt(h) => {
            let used = tx.gaslimit.wrapping_sub(h.gas);
            let refund = h.eta.refund.min(used.div_rem_u64(2).0);
            (used.wrapping_sub(refund), refund)
        }
        _ => (tx.gaslimit, Word256::ZERO),
    }
}

/// Finalizes a transaction: pays back unused gas and refunds, pays the fee to
/// the beneficiary and deletes self-destructed accounts.
pub fn t_final(
    final_state: &ExecutionState,
    tx: &Transaction,
    sigma_pre: &GlobalState,
    env: &TransactionEnvironment,
) -> GlobalState {
    let (charged, _) = gas_accounting(final_state, tx);
    let fee = charged.wrapping_mul(tx.prize);
    let mut sigma = match final_state {
        ExecutionState::Halt(h) => {
            let mut s = h.sigma.clone();
            let back = tx.gaslimit.wrapping_sub(charged).wrapping_mul(tx.prize);
            credit(&mut s, &tx.sender, back);
            s
        }
        _ => sigma_pre.clone(),
    };
    credit(&mut sigma, &env.header.beneficiary, fee);
    if let ExecutionState::Halt(h) = final_state {
        for a in h.eta.suicides.iter() {
            sigma.remove(a);
        }
    }
    sigma
}

fn credit(sigma: &mut GlobalState, a: &Address, v: Word256) {
    if !sigma.update(a, |acc| acc.balance = acc.balance.wrapping_add(v)) && !v.is_zero() {
        sigma.set(*a, Account::with_balance(v));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxStatus {
    Success,
    Exception,
    Invalid,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Receipt {
    pub status: TxStatus,
    pub gas_used: Word256,
    pub refund: Word256,
    pub logs: Vec<LogEvent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub created: Option<Address>,
    #[serde(with = "hex_bytes")]
    pub output: Vec<u8>,
}

impl Receipt {
    fn invalid() -> Self {
        Receipt {
            status: TxStatus::Invalid,
            gas_used: Word256::ZERO,
            refund: Word256::ZERO,
            logs: Vec::new(),
            created: None,
            output: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TxOutcome {
    pub post: GlobalState,
    pub trace: Trace,
    pub receipt: Receipt,
    /// The final call stack of the run; `None` for an invalid transaction.
    pub final_stack: Option<CallStack>,
    pub steps: u64,
}

/// Runs `tx` from initialization to finalization.
pub fn execute_transaction(
    tx: &Transaction,
    block: &Block,
    sigma: &GlobalState,
    budget: StepBudget,
) -> Result<TxOutcome, RunError> {
    let Some(init) = t_init(tx, block, sigma) else {
        return Ok(TxOutcome {
            post: sigma.clone(),
            trace: Vec::new(),
            receipt: Receipt::invalid(),
            final_stack: None,
            steps: 0,
        });
    };
    let run = semantics::run(&init.env, &CallStack::singleton(init.frame.clone()), budget, None)?;
    Ok(finish(tx, &init, run))
}

/// Finalizes a completed run of an initialized transaction.
pub fn finish(tx: &Transaction, init: &Initialized, run: RunOutput) -> TxOutcome {
    let raw = run.final_state().cloned().unwrap_or(ExecutionState::Exc);
    let final_state = deposit_code(raw, tx);
    let (gas_used, refund) = gas_accounting(&final_state, tx);
    let post = t_final(&final_state, tx, &init.sigma_pre, &init.env);
    let receipt = match &final_state {
        ExecutionState::Halt(h) => Receipt {
            status: TxStatus::Success,
            gas_used,
            refund,
            logs: h.eta.logs.iter().cloned().collect(),
            created: tx.created_address(),
            output: h.data.clone(),
        },
        _ => Receipt {
            status: TxStatus::Exception,
            gas_used,
            refund,
            logs: Vec::new(),
            created: None,
            output: Vec::new(),
        },
    };
    TxOutcome { post, trace: run.trace, receipt, final_stack: Some(run.final_stack), steps: run.steps }
}
