//! Deterministic state machines for the four scheme archetypes, plus a
//! daily-paying investment program, with switchable versions of the bugs
//! found in deployed contracts.
//!
//! All arithmetic is integer wei with truncating division. Every event runs
//! atomically: when a checked send fails the whole call reverts, the state
//! is restored (only the clock advances) and every transfer of that call is
//! reported as reverted.

mod engine;
pub mod params;
mod trace;

#[cfg(test)]
mod tests;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Address, Wei};
pub use engine::{
    apply_bug_accumulating_fees, clear_array, hijack_constructor, step, ClearOutcome, StepOutput,
};
pub use params::{
    wei_serde, Archetype, Bug, FeeCollection, Fraction, RejectPolicy, SchemeParams, WaterfallBudget,
};
pub use trace::{run, Simulation};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("event at {at} precedes the clock at {clock}")]
    OutOfOrder {
        at: DateTime<Utc>,
        clock: DateTime<Utc>,
    },
    #[error("{event} is not supported by the {archetype} archetype")]
    UnsupportedEvent {
        archetype: Archetype,
        event: &'static str,
    },
    #[error("operation unavailable: requires the {0} variant")]
    Unavailable(Bug),
    #[error("wei arithmetic overflow")]
    Overflow,
    #[error("conservation breach: in {total_in}, out {total_out}, balance {balance}")]
    ConservationBreach {
        total_in: Wei,
        total_out: Wei,
        balance: Wei,
    },
}

/// Decides whether a send to an address fails, e.g. because its fallback
/// always throws.
pub trait FailureOracle {
    fn send_fails(&self, to: &Address) -> bool;
}

impl<F: Fn(&Address) -> bool> FailureOracle for F {
    fn send_fails(&self, to: &Address) -> bool {
        self(to)
    }
}

impl FailureOracle for HashSet<Address> {
    fn send_fails(&self, to: &Address) -> bool {
        self.contains(to)
    }
}

impl FailureOracle for BTreeSet<Address> {
    fn send_fails(&self, to: &Address) -> bool {
        self.contains(to)
    }
}

/// Every recipient accepts payments.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeverFails;

impl FailureOracle for NeverFails {
    fn send_fails(&self, _to: &Address) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    Deposit {
        from: Address,
        #[serde(with = "wei_serde")]
        amount: Wei,
        #[serde(default)]
        inviter: Option<Address>,
    },
    /// Owner asks for the fees retained in the contract.
    OwnerWithdraw { caller: Address },
    /// Daily payout round of a `hyip_daily` scheme.
    DailyTick { caller: Address },
    /// Call to a misnamed constructor.
    ConstructorCall { caller: Address },
    /// Attempt to reset the user array within a gas budget.
    ClearArray { caller: Address, gas_limit: u64 },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Deposit { .. } => "deposit",
            EventKind::OwnerWithdraw { .. } => "owner_withdraw",
            EventKind::DailyTick { .. } => "daily_tick",
            EventKind::ConstructorCall { .. } => "constructor_call",
            EventKind::ClearArray { .. } => "clear_array",
        }
    }

    /// Address that sends the external transaction.
    pub fn caller(&self) -> Address {
        match *self {
            EventKind::Deposit { from, .. } => from,
            EventKind::OwnerWithdraw { caller }
            | EventKind::DailyTick { caller }
            | EventKind::ConstructorCall { caller }
            | EventKind::ClearArray { caller, .. } => caller,
        }
    }

    /// Ether attached to the external transaction.
    pub fn value(&self) -> Wei {
        match *self {
            EventKind::Deposit { amount, .. } => amount,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl SimEvent {
    pub fn deposit(at: DateTime<Utc>, from: Address, amount: Wei) -> Self {
        SimEvent {
            at,
            kind: EventKind::Deposit {
                from,
                amount,
                inviter: None,
            },
        }
    }

    pub fn invited_deposit(
        at: DateTime<Utc>,
        from: Address,
        amount: Wei,
        inviter: Address,
    ) -> Self {
        SimEvent {
            at,
            kind: EventKind::Deposit {
                from,
                amount,
                inviter: Some(inviter),
            },
        }
    }

    pub fn new(at: DateTime<Utc>, kind: EventKind) -> Self {
        SimEvent { at, kind }
    }
}

/// Value moved out of the contract by one call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: Address,
    pub to: Address,
    #[serde(with = "wei_serde")]
    pub amount: Wei,
    pub reverted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueEntry {
    pub address: Address,
    pub owed: Wei,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Investor {
    pub address: Address,
    pub invested: Wei,
}

/// Archetype-specific bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Users {
    /// Users waiting in arrival order; entries before `cursor` are paid.
    Array {
        queue: Vec<QueueEntry>,
        cursor: usize,
    },
    /// Inviter of every member; the root is not a key.
    Tree {
        root: Address,
        inviters: BTreeMap<Address, Address>,
    },
    Handover {
        last_user: Address,
        price: Wei,
    },
    Waterfall {
        investors: Vec<Investor>,
        cursor: usize,
    },
    Hyip {
        investors: Vec<Investor>,
    },
}

/// Complete mutable state of one simulated scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimState {
    pub contract: Address,
    pub owner: Address,
    pub balance: Wei,
    pub total_in: Wei,
    pub total_out: Wei,
    /// All fees charged so far, sent or not.
    pub owner_fees_total: Wei,
    /// Fees held in the contract until the owner withdraws them.
    pub uncollected_fees: Wei,
    /// Running fee counter of the `accumulating_fees` variant.
    pub pending_fees: Wei,
    pub deposits_accepted: u64,
    pub users: Users,
    pub clock: Option<DateTime<Utc>>,
}

impl SimState {
    pub fn new(params: &SchemeParams, contract: Address, owner: Address) -> Result<Self, SimError> {
        params.validate()?;
        let users = match params.archetype {
            Archetype::Array => Users::Array {
                queue: Vec::new(),
                cursor: 0,
            },
            Archetype::Tree => Users::Tree {
                root: owner,
                inviters: BTreeMap::new(),
            },
            Archetype::Handover => Users::Handover {
                last_user: owner,
                price: params.initial_price,
            },
            Archetype::Waterfall => Users::Waterfall {
                investors: Vec::new(),
                cursor: 0,
            },
            Archetype::HyipDaily => Users::Hyip {
                investors: Vec::new(),
            },
        };
        Ok(SimState {
            contract,
            owner,
            balance: 0,
            total_in: 0,
            total_out: 0,
            owner_fees_total: 0,
            uncollected_fees: 0,
            pending_fees: 0,
            deposits_accepted: 0,
            users,
            clock: None,
        })
    }

    /// Balance not earmarked for the owner.
    pub fn available(&self) -> Wei {
        self.balance - self.uncollected_fees
    }

    /// `balance == total_in - total_out` and nothing left that was not put in.
    pub fn check_conservation(&self) -> Result<(), SimError> {
        if self.total_out <= self.total_in && self.total_in - self.total_out == self.balance {
            Ok(())
        } else {
            Err(SimError::ConservationBreach {
                total_in: self.total_in,
                total_out: self.total_out,
                balance: self.balance,
            })
        }
    }

    /// Wei still owed to queued users of an array scheme, net of what the
    /// contract can already pay.
    pub fn array_backlog(&self) -> Wei {
        match &self.users {
            Users::Array { queue, cursor } => {
                let owed: Wei = queue[*cursor..].iter().map(|e| e.owed).sum();
                owed.saturating_sub(self.available())
            }
            _ => 0,
        }
    }

    pub fn queue_len(&self) -> usize {
        match &self.users {
            Users::Array { queue, .. } => queue.len(),
            Users::Waterfall { investors, .. } | Users::Hyip { investors } => investors.len(),
            Users::Tree { inviters, .. } => inviters.len(),
            Users::Handover { .. } => 0,
        }
    }

    /// Current entry price of a handover scheme.
    pub fn price(&self) -> Option<Wei> {
        match self.users {
            Users::Handover { price, .. } => Some(price),
            _ => None,
        }
    }
}
