//! Executable small-step semantics for EVM bytecode, with trace-based
//! checkers for security properties of smart contracts.

pub mod bytecode;
pub mod checkers;
pub mod fixtures;
pub mod gas;
pub mod semantics;
pub mod state;
pub mod traces;
pub mod transaction;
pub mod words;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/semantics.md")]
mod book_semantics {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/gas.md")]
mod book_gas {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/security.md")]
mod book_security {}
