use super::{
    Archetype, Bug, EventKind, FailureOracle, FeeCollection, Investor, QueueEntry, RejectPolicy,
    SchemeParams, SimError, SimEvent, SimState, Transfer, Users, WaterfallBudget,
};
use crate::ledger::{Address, Wei};

/// Result of applying one event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutput {
    pub state: SimState,
    pub transfers: Vec<Transfer>,
    /// The external call reverted: attached ether bounced and every transfer
    /// in `transfers` is marked reverted.
    pub reverted: bool,
}

/// Marker for a failed checked send; unwinds the whole call.
struct Revert;

enum Outcome {
    Done,
    Reverted,
}

struct Exec<'a> {
    state: SimState,
    params: &'a SchemeParams,
    oracle: &'a dyn FailureOracle,
    transfers: Vec<Transfer>,
}

impl Exec<'_> {
    fn receive(&mut self, amount: Wei) -> Result<(), SimError> {
        self.state.balance = self
            .state
            .balance
            .checked_add(amount)
            .ok_or(SimError::Overflow)?;
        self.state.total_in = self
            .state
            .total_in
            .checked_add(amount)
            .ok_or(SimError::Overflow)?;
        Ok(())
    }

    /// Solidity `send`: fails when the recipient throws or funds not earmarked
    /// for the owner are short.
    /// Unchecked failures are recorded and otherwise ignored.
    fn send(&mut self, to: Address, amount: Wei) -> Result<(), Revert> {
        if self.oracle.send_fails(&to) || amount > self.state.available() {
            self.transfers.push(Transfer {
                from: self.state.contract,
                to,
                amount,
                reverted: true,
            });
            return if self.params.has(Bug::UncheckedSend) {
                Ok(())
            } else {
                Err(Revert)
            };
        }
        if amount > 0 {
            self.state.balance -= amount;
            self.state.total_out += amount;
            self.transfers.push(Transfer {
                from: self.state.contract,
                to,
                amount,
                reverted: false,
            });
        }
        Ok(())
    }

    fn reject(&mut self, from: Address, amount: Wei) -> Result<(), Revert> {
        match self.params.reject_policy {
            RejectPolicy::Refund => self.send(from, amount),
            RejectPolicy::Keep => Ok(()),
        }
    }

    fn compute_fee(&mut self, amount: Wei) -> Result<Wei, SimError> {
        if self.params.has(Bug::AccumulatingFees) {
            apply_bug_accumulating_fees(&mut self.state, self.params, amount)
        } else {
            self.params.owner_fee.of(amount)
        }
    }

    fn collect_fee(&mut self, fee: Wei) -> Result<(), Revert> {
        self.state.owner_fees_total += fee;
        match self.params.fee_collection {
            FeeCollection::Immediate => {
                let owner = self.state.owner;
                self.send(owner, fee)
            }
            FeeCollection::Retained => {
                self.state.uncollected_fees += fee;
                Ok(())
            }
        }
    }

    fn deposit(
        &mut self,
        from: Address,
        amount: Wei,
        inviter: Option<Address>,
    ) -> Result<Result<(), Revert>, SimError> {
        self.receive(amount)?;
        match self.params.archetype {
            Archetype::Array => self.array_deposit(from, amount),
            Archetype::Tree => self.tree_deposit(from, amount, inviter),
            Archetype::Handover => self.handover_deposit(from, amount),
            Archetype::Waterfall => self.waterfall_deposit(from, amount),
            Archetype::HyipDaily => self.hyip_deposit(from, amount),
        }
    }

    fn array_deposit(
        &mut self,
        from: Address,
        amount: Wei,
    ) -> Result<Result<(), Revert>, SimError> {
        if amount < self.params.min_toll {
            return Ok(self.reject(from, amount));
        }
        let owed = self.params.multiplier.of(amount)?;
        if let Users::Array { queue, .. } = &mut self.state.users {
            queue.push(QueueEntry {
                address: from,
                owed,
            });
        }
        let first = self.state.deposits_accepted == 0;
        self.state.deposits_accepted += 1;
        let fee = if first && self.params.first_deposit_to_owner {
            amount
        } else {
            self.compute_fee(amount)?
        };
        if let Err(r) = self.collect_fee(fee) {
            return Ok(Err(r));
        }
        Ok(self.pay_queue())
    }

    fn pay_queue(&mut self) -> Result<(), Revert> {
        loop {
            let (address, owed) = match &self.state.users {
                Users::Array { queue, cursor } if *cursor < queue.len() => {
                    (queue[*cursor].address, queue[*cursor].owed)
                }
                _ => return Ok(()),
            };
            if self.state.available() < owed {
                return Ok(());
            }
            self.send(address, owed)?;
            if let Users::Array { cursor, .. } = &mut self.state.users {
                *cursor += 1;
            }
        }
    }

    fn tree_deposit(
        &mut self,
        from: Address,
        amount: Wei,
        inviter: Option<Address>,
    ) -> Result<Result<(), Revert>, SimError> {
        let (root, inviters) = match &mut self.state.users {
            Users::Tree { root, inviters } => (*root, inviters),
            _ => unreachable!("tree archetype holds a tree"),
        };
        let known = |a: &Address| *a == root || inviters.contains_key(a);
        let accepted =
            amount >= self.params.min_toll && !known(&from) && inviter.as_ref().is_some_and(known);
        let Some(inviter) = inviter.filter(|_| accepted) else {
            return Ok(self.reject(from, amount));
        };
        inviters.insert(from, inviter);
        self.state.deposits_accepted += 1;

        let fee = self.compute_fee(amount)?;
        if let Err(r) = self.collect_fee(fee) {
            return Ok(Err(r));
        }
        let distributable = amount.saturating_sub(fee);
        let mut share = distributable;
        let mut paid: Wei = 0;
        let mut node = inviter;
        while node != root {
            share /= 2;
            if share == 0 {
                break;
            }
            if let Err(r) = self.send(node, share) {
                return Ok(Err(r));
            }
            paid += share;
            node = match &self.state.users {
                Users::Tree { inviters, .. } => inviters[&node],
                _ => unreachable!(),
            };
        }
        let remainder = distributable - paid;
        if remainder > 0 {
            return Ok(self.send(root, remainder));
        }
        Ok(Ok(()))
    }

    fn handover_deposit(
        &mut self,
        from: Address,
        amount: Wei,
    ) -> Result<Result<(), Revert>, SimError> {
        let (last_user, price) = match self.state.users {
            Users::Handover { last_user, price } => (last_user, price),
            _ => unreachable!("handover archetype holds a handover"),
        };
        if amount < price {
            return Ok(self.reject(from, amount));
        }
        self.state.deposits_accepted += 1;
        let payment = price - self.params.owner_fee.of(price)?;
        if let Err(r) = self.send(last_user, payment) {
            return Ok(Err(r));
        }
        // Fee plus any overpayment is the owner's commission.
        if let Err(r) = self.collect_fee(amount - payment) {
            return Ok(Err(r));
        }
        let next_price = self.params.price_growth.of(price)?;
        self.state.users = Users::Handover {
            last_user: from,
            price: next_price,
        };
        Ok(Ok(()))
    }

    fn waterfall_deposit(
        &mut self,
        from: Address,
        amount: Wei,
    ) -> Result<Result<(), Revert>, SimError> {
        if amount < self.params.min_toll {
            return Ok(self.reject(from, amount));
        }
        if let Users::Waterfall { investors, .. } = &mut self.state.users {
            investors.push(Investor {
                address: from,
                invested: amount,
            });
        }
        self.state.deposits_accepted += 1;
        let fee = self.compute_fee(amount)?;
        if let Err(r) = self.collect_fee(fee) {
            return Ok(Err(r));
        }
        let mut budget = match self.params.waterfall_budget {
            WaterfallBudget::Deposit => amount.saturating_sub(fee),
            WaterfallBudget::ContractBalance => self.state.available(),
        };
        if !self.params.has(Bug::CursorNotReset) {
            if let Users::Waterfall { cursor, .. } = &mut self.state.users {
                *cursor = 0;
            }
        }
        loop {
            let (address, invested) = match &self.state.users {
                Users::Waterfall { investors, cursor } if *cursor < investors.len() => {
                    (investors[*cursor].address, investors[*cursor].invested)
                }
                _ => return Ok(Ok(())),
            };
            let owed = self.params.payout_rate.of(invested)?;
            if owed > budget || owed > self.state.available() {
                return Ok(Ok(()));
            }
            if let Err(r) = self.send(address, owed) {
                return Ok(Err(r));
            }
            budget -= owed;
            if let Users::Waterfall { cursor, .. } = &mut self.state.users {
                *cursor += 1;
            }
            // The stale cursor sits on the last entry, so the scan covers one user.
            if self.params.has(Bug::CursorNotReset) {
                return Ok(Ok(()));
            }
        }
    }

    fn hyip_deposit(&mut self, from: Address, amount: Wei) -> Result<Result<(), Revert>, SimError> {
        if amount < self.params.min_toll {
            return Ok(self.reject(from, amount));
        }
        if let Users::Hyip { investors } = &mut self.state.users {
            investors.push(Investor {
                address: from,
                invested: amount,
            });
        }
        self.state.deposits_accepted += 1;
        let fee = self.compute_fee(amount)?;
        Ok(self.collect_fee(fee))
    }

    fn daily_tick(&mut self) -> Result<Result<(), Revert>, SimError> {
        let investors = match &self.state.users {
            Users::Hyip { investors } => investors.clone(),
            _ => unreachable!("checked by the caller"),
        };
        for investor in investors {
            let owed = self.params.payout_rate.of(investor.invested)?;
            if let Err(r) = self.send(investor.address, owed) {
                return Ok(Err(r));
            }
        }
        Ok(Ok(()))
    }

    fn owner_withdraw(&mut self, caller: Address) -> Result<(), Revert> {
        if caller != self.state.owner {
            return Err(Revert);
        }
        let fees = std::mem::take(&mut self.state.uncollected_fees);
        self.send(caller, fees)
    }
}

/// `accumulating_fees` variant: the fee counter grows by `owner_fee` of every
/// deposit and the whole counter is charged each time, limited to what the
/// contract can actually pay out. Returns the fee charged.
pub fn apply_bug_accumulating_fees(
    state: &mut SimState,
    params: &SchemeParams,
    amount: Wei,
) -> Result<Wei, SimError> {
    state.pending_fees = state
        .pending_fees
        .checked_add(params.owner_fee.of(amount)?)
        .ok_or(SimError::Overflow)?;
    Ok(state.pending_fees.min(state.available()))
}

/// Misnamed constructor: whoever calls it becomes the owner.
pub fn hijack_constructor(
    state: &SimState,
    params: &SchemeParams,
    caller: Address,
) -> Result<SimState, SimError> {
    if !params.has(Bug::OpenConstructor) {
        return Err(SimError::Unavailable(Bug::OpenConstructor));
    }
    let mut next = state.clone();
    next.owner = caller;
    Ok(next)
}

/// Outcome of trying to clear an array scheme's user list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClearOutcome {
    /// List emptied; the jackpot can be claimed.
    Cleared { removed: usize, cost: u64 },
    /// The clearing loop needs more gas than allowed; nothing changes.
    OutOfGas { cost: u64, gas_limit: u64 },
}

/// Clearing costs `clear_cost_per_entry` per array entry.
pub fn clear_array(
    state: &SimState,
    params: &SchemeParams,
    gas_limit: u64,
) -> Result<(SimState, ClearOutcome), SimError> {
    if !params.has(Bug::GasLimitedClear) {
        return Err(SimError::Unavailable(Bug::GasLimitedClear));
    }
    let Users::Array { queue, .. } = &state.users else {
        return Err(SimError::UnsupportedEvent {
            archetype: params.archetype,
            event: "clear_array",
        });
    };
    let cost = params
        .clear_cost_per_entry
        .checked_mul(queue.len() as u64)
        .ok_or(SimError::Overflow)?;
    if cost > gas_limit {
        return Ok((state.clone(), ClearOutcome::OutOfGas { cost, gas_limit }));
    }
    let mut next = state.clone();
    let removed = queue.len();
    next.users = Users::Array {
        queue: Vec::new(),
        cursor: 0,
    };
    Ok((next, ClearOutcome::Cleared { removed, cost }))
}

/// Applies one event to a state. Pure: the input state is never modified.
pub fn step(
    state: &SimState,
    params: &SchemeParams,
    ev: &SimEvent,
    oracle: &dyn FailureOracle,
) -> Result<StepOutput, SimError> {
    if let Some(clock) = state.clock {
        if ev.at < clock {
            return Err(SimError::OutOfOrder { at: ev.at, clock });
        }
    }
    let mut exec = Exec {
        state: state.clone(),
        params,
        oracle,
        transfers: Vec::new(),
    };
    exec.state.clock = Some(ev.at);

    let outcome = match ev.kind {
        EventKind::Deposit {
            from,
            amount,
            inviter,
        } => exec.deposit(from, amount, inviter)?.into(),
        EventKind::OwnerWithdraw { caller } => exec.owner_withdraw(caller).into(),
        EventKind::DailyTick { .. } => {
            if params.archetype != Archetype::HyipDaily {
                return Err(SimError::UnsupportedEvent {
                    archetype: params.archetype,
                    event: ev.kind.name(),
                });
            }
            exec.daily_tick()?.into()
        }
        EventKind::ConstructorCall { caller } => {
            exec.state = hijack_constructor(&exec.state, params, caller)?;
            Outcome::Done
        }
        EventKind::ClearArray { gas_limit, .. } => {
            let (next, result) = clear_array(&exec.state, params, gas_limit)?;
            exec.state = next;
            match result {
                ClearOutcome::Cleared { .. } => Outcome::Done,
                ClearOutcome::OutOfGas { .. } => Outcome::Reverted,
            }
        }
    };

    Ok(match outcome {
        Outcome::Done => StepOutput {
            state: exec.state,
            transfers: exec.transfers,
            reverted: false,
        },
        Outcome::Reverted => {
            let mut restored = state.clone();
            restored.clock = Some(ev.at);
            let transfers = exec
                .transfers
                .into_iter()
                .map(|t| Transfer {
                    reverted: true,
                    ..t
                })
                .collect();
            StepOutput {
                state: restored,
                transfers,
                reverted: true,
            }
        }
    })
}

impl From<Result<(), Revert>> for Outcome {
    fn from(r: Result<(), Revert>) -> Self {
        match r {
            Ok(()) => Outcome::Done,
            Err(Revert) => Outcome::Reverted,
        }
    }
}
