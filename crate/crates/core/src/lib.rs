//! Forensics toolkit for smart-contract Ponzi schemes: bytecode similarity
//! search, deterministic scheme simulators with their known bugs and
//! attacks, and economic impact metrics over transaction ledgers.

pub mod attacks;
pub mod ledger;
pub mod metrics;
pub mod schemes;
pub mod similarity;
