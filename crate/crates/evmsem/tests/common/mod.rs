#![allow(dead_code)]

pub mod corpus;
pub mod opcode_table;

use evmsem::bytecode::{assemble_text, Code};
use evmsem::state::{Account, BlockHeader, GlobalState};
use evmsem::transaction::Block;
use evmsem::words::{Address, Word256};

pub fn w(v: u64) -> Word256 {
    Word256::from_u64(v)
}

pub fn addr(v: u64) -> Address {
    Address::from_low_u64(v)
}

pub fn asm(text: &str) -> Code {
    Code::new(assemble_text(text).unwrap_or_else(|e| panic!("bad test program: {e}")))
}

pub fn account(balance: u64, code: Code) -> Account {
    Account { balance: w(balance), code, ..Default::default() }
}

pub fn state(accounts: &[(Address, Account)]) -> GlobalState {
    let mut s = GlobalState::new();
    for (a, acc) in accounts {
        s.set(*a, acc.clone());
    }
    s
}

pub fn block() -> Block {
    Block::from(BlockHeader {
        beneficiary: addr(0xc0),
        number: w(100),
        timestamp: w(1000),
        gaslimit: w(10_000_000),
        difficulty: w(1),
        ..Default::default()
    })
}

pub fn total_balance(s: &GlobalState) -> num_bigint::BigUint {
    s.iter().map(|(_, a)| num_bigint::BigUint::from_bytes_be(&a.balance.to_be_bytes())).sum()
}
