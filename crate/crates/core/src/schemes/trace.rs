use super::{step, FailureOracle, SchemeParams, SimError, SimEvent, SimState, StepOutput};
use crate::ledger::{Address, Transaction};

/// Drives one scheme event by event and records the ledger trace: one
/// block per event, the external call first, then its internal transfers.
pub struct Simulation<'a> {
    params: SchemeParams,
    state: SimState,
    oracle: &'a dyn FailureOracle,
    transactions: Vec<Transaction>,
    next_block: u64,
}

impl<'a> Simulation<'a> {
    pub fn new(
        params: SchemeParams,
        contract: Address,
        owner: Address,
        oracle: &'a dyn FailureOracle,
    ) -> Result<Self, SimError> {
        let state = SimState::new(&params, contract, owner)?;
        Ok(Simulation {
            params,
            state,
            oracle,
            transactions: Vec::new(),
            next_block: 1,
        })
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn into_parts(self) -> (SimState, Vec<Transaction>) {
        (self.state, self.transactions)
    }

    /// Applies `ev`, appends its rows and returns what happened.
    pub fn apply(&mut self, ev: &SimEvent) -> Result<StepOutput, SimError> {
        let out = step(&self.state, &self.params, ev, self.oracle)?;
        out.state.check_conservation()?;

        let block_number = self.next_block;
        self.next_block += 1;
        let contract = self.state.contract;
        self.transactions.push(Transaction {
            block_number,
            timestamp: ev.at,
            from: ev.kind.caller(),
            to: contract,
            value: ev.kind.value(),
            is_error: out.reverted,
            is_internal: false,
        });
        self.transactions
            .extend(out.transfers.iter().map(|t| Transaction {
                block_number,
                timestamp: ev.at,
                from: t.from,
                to: t.to,
                value: t.amount,
                is_error: t.reverted,
                is_internal: true,
            }));
        self.state = out.state.clone();
        Ok(out)
    }
}

/// Folds `events` through a fresh scheme and returns the ledger trace.
pub fn run(
    params: &SchemeParams,
    contract: Address,
    owner: Address,
    events: &[SimEvent],
    oracle: &dyn FailureOracle,
) -> Result<Vec<Transaction>, SimError> {
    let mut sim = Simulation::new(params.clone(), contract, owner, oracle)?;
    for ev in events {
        sim.apply(ev)?;
    }
    Ok(sim.into_parts().1)
}
