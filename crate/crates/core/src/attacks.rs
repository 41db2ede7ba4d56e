//! Attack scenarios run on the simulator, and the closed-form waiting time
//! of a doubler.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Address, Transaction, Wei};
use crate::schemes::{
    wei_serde, Archetype, EventKind, Fraction, NeverFails, SchemeParams, SimError, SimEvent,
    Simulation,
};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AttackError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("queue positions start at 1")]
    ZeroPosition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerProfile {
    pub address: Address,
    pub throws_on_receive: bool,
    #[serde(with = "wei_serde")]
    pub budget: Wei,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contribution {
    pub from: Address,
    #[serde(with = "wei_serde")]
    pub amount: Wei,
}

/// Where and when the attacked contract lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deployment {
    pub contract: Address,
    pub owner: Address,
    pub start: DateTime<Utc>,
}

impl Default for Deployment {
    fn default() -> Self {
        Deployment {
            contract: Address::from_index(0xc0_ffee),
            owner: Address::from_index(0x0_c0de),
            start: Utc.with_ymd_and_hms(2016, 3, 1, 0, 0, 0).unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DosReport {
    pub scenario: &'static str,
    pub params: SchemeParams,
    pub attacker: AttackerProfile,
    pub ticks: u32,
    /// Every tick reverted and the balance never moved.
    pub frozen: bool,
    pub reverted_ticks: u32,
    #[serde(with = "wei_serde")]
    pub balance_before_ticks: Wei,
    #[serde(with = "wei_serde")]
    pub balance_after_ticks: Wei,
    /// Wei that left the contract after the attacker joined.
    #[serde(with = "wei_serde")]
    pub outgoing_after_join: Wei,
    #[serde(with = "wei_serde")]
    pub honest_paid_after_join: Wei,
    /// Payouts to the attacker that failed without reverting the tick.
    #[serde(with = "wei_serde")]
    pub attacker_stranded: Wei,
    pub trace_path: Option<String>,
    #[serde(skip)]
    pub trace: Vec<Transaction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShutdownReport {
    pub scenario: &'static str,
    pub params: SchemeParams,
    pub oscar: Address,
    #[serde(with = "wei_serde")]
    pub oscar_amount: Wei,
    /// Oscar's deposits the scheme turned down.
    pub rejected_deposits: u32,
    #[serde(with = "wei_serde")]
    pub oscar_sent: Wei,
    #[serde(with = "wei_serde")]
    pub oscar_received: Wei,
    /// `received - sent`, signed decimal.
    pub oscar_net: String,
    /// Owner fees charged on Oscar's deposits.
    #[serde(with = "wei_serde")]
    pub oscar_fees: Wei,
    /// Wei still owed to queued users, beyond the payable balance, right
    /// after Oscar's second deposit.
    #[serde(with = "wei_serde")]
    pub backlog: Wei,
    pub trace_path: Option<String>,
    #[serde(skip)]
    pub trace: Vec<Transaction>,
}

fn net(received: Wei, sent: Wei) -> String {
    if received >= sent {
        (received - sent).to_string()
    } else {
        format!("-{}", sent - received)
    }
}

fn outflow(txs: &[Transaction], keep: impl Fn(&Transaction) -> bool) -> Wei {
    txs.iter()
        .filter(|t| t.is_internal && !t.is_error && keep(t))
        .map(|t| t.value)
        .sum()
}

/// A throwing investor joins a daily-paying scheme with `min_toll` and every
/// later payout round hits it.
pub fn dos_attack(
    params: &SchemeParams,
    deployment: &Deployment,
    honest_deposits: &[Contribution],
    attacker: &AttackerProfile,
    ticks: u32,
) -> Result<DosReport, AttackError> {
    if params.archetype != Archetype::HyipDaily {
        return Err(AttackError::Precondition(format!(
            "denial of service needs a hyip_daily scheme, got {}",
            params.archetype
        )));
    }
    if attacker.budget < params.min_toll {
        return Err(AttackError::Precondition(format!(
            "attacker budget {} is below the minimum toll {}",
            attacker.budget, params.min_toll
        )));
    }
    let failing: BTreeSet<Address> = if attacker.throws_on_receive {
        BTreeSet::from([attacker.address])
    } else {
        BTreeSet::new()
    };
    let mut sim = Simulation::new(
        params.clone(),
        deployment.contract,
        deployment.owner,
        &failing,
    )?;
    let mut at = deployment.start;
    for c in honest_deposits {
        sim.apply(&SimEvent::deposit(at, c.from, c.amount))?;
        at += Duration::hours(1);
    }
    sim.apply(&SimEvent::deposit(at, attacker.address, params.min_toll))?;
    let joined = sim.transactions().len();

    let balance_before_ticks = sim.state().balance;
    let mut reverted_ticks = 0;
    let mut attacker_stranded = 0;
    for _ in 0..ticks {
        at += Duration::days(1);
        let caller = deployment.owner;
        let out = sim.apply(&SimEvent::new(at, EventKind::DailyTick { caller }))?;
        if out.reverted {
            reverted_ticks += 1;
        } else {
            attacker_stranded += out
                .transfers
                .iter()
                .filter(|t| t.reverted && t.to == attacker.address)
                .map(|t| t.amount)
                .sum::<Wei>();
        }
    }
    let balance_after_ticks = sim.state().balance;
    let (_, trace) = sim.into_parts();
    let after = &trace[joined..];
    let honest: BTreeSet<Address> = honest_deposits.iter().map(|c| c.from).collect();
    Ok(DosReport {
        scenario: "dos",
        params: params.clone(),
        attacker: attacker.clone(),
        ticks,
        frozen: reverted_ticks == ticks && balance_after_ticks == balance_before_ticks,
        reverted_ticks,
        balance_before_ticks,
        balance_after_ticks,
        outgoing_after_join: outflow(after, |_| true),
        honest_paid_after_join: outflow(after, |t| honest.contains(&t.to)),
        attacker_stranded,
        trace_path: None,
        trace,
    })
}

/// Oscar deposits `oscar_amount` twice in a row into an array scheme: his
/// second deposit pays out his first, and the queue now owes him a large
/// entry that later joiners must fund.
pub fn shutdown_attack(
    params: &SchemeParams,
    deployment: &Deployment,
    prior_deposits: &[Contribution],
    oscar: Address,
    oscar_amount: Wei,
) -> Result<ShutdownReport, AttackError> {
    if params.archetype != Archetype::Array {
        return Err(AttackError::Precondition(format!(
            "shutdown needs an array scheme, got {}",
            params.archetype
        )));
    }
    let mut sim = Simulation::new(
        params.clone(),
        deployment.contract,
        deployment.owner,
        &NeverFails,
    )?;
    let mut at = deployment.start;
    for c in prior_deposits {
        sim.apply(&SimEvent::deposit(at, c.from, c.amount))?;
        at += Duration::hours(1);
    }
    let first_oscar_row = sim.transactions().len();
    let fees_before = sim.state().owner_fees_total;
    let mut rejected_deposits = 0;
    for _ in 0..2 {
        let accepted = sim.state().deposits_accepted;
        let out = sim.apply(&SimEvent::deposit(at, oscar, oscar_amount))?;
        if out.reverted || sim.state().deposits_accepted == accepted {
            rejected_deposits += 1;
        }
        at += Duration::hours(1);
    }
    let oscar_fees = sim.state().owner_fees_total - fees_before;
    let backlog = sim.state().array_backlog();
    let (_, trace) = sim.into_parts();
    let rows = &trace[first_oscar_row..];
    let oscar_sent: Wei = rows
        .iter()
        .filter(|t| !t.is_internal && !t.is_error && t.from == oscar)
        .map(|t| t.value)
        .sum();
    let oscar_received = outflow(rows, |t| t.to == oscar);
    Ok(ShutdownReport {
        scenario: "shutdown",
        params: params.clone(),
        oscar,
        oscar_amount,
        rejected_deposits,
        oscar_sent,
        oscar_received,
        oscar_net: net(oscar_received, oscar_sent),
        oscar_fees,
        backlog,
        trace_path: None,
        trace,
    })
}

/// Joiners needed after user `k` before a fee-less doubler with fixed tolls,
/// whose first deposit goes to the owner, pays that user.
pub fn payout_wait(k: u64) -> Result<u64, AttackError> {
    if k == 0 {
        return Err(AttackError::ZeroPosition);
    }
    Ok(k + 1)
}

/// Simulates the doubler behind [`payout_wait`] and returns, for users
/// `1..=max_k`, how many joiners arrived after each before it was paid.
pub fn simulated_payout_waits(max_k: u64, toll: Wei) -> Result<Vec<u64>, AttackError> {
    let mut params = SchemeParams::array(Fraction::new(2, 1)?, Fraction::ZERO, toll);
    params.first_deposit_to_owner = true;
    let deployment = Deployment::default();
    let mut sim = Simulation::new(params, deployment.contract, deployment.owner, &NeverFails)?;
    let user = |i: u64| Address::from_index(i);
    let mut waits = vec![None; max_k as usize];
    let mut joined = 0u64;
    while waits.iter().any(Option::is_none) {
        joined += 1;
        let at = deployment.start + Duration::minutes(joined as i64);
        let out = sim.apply(&SimEvent::deposit(at, user(joined), toll))?;
        for t in out.transfers.iter().filter(|t| !t.reverted) {
            let k = (1..=max_k).find(|&k| user(k) == t.to);
            if let Some(k) = k {
                waits[k as usize - 1] = Some(joined - k);
            }
        }
    }
    Ok(waits.into_iter().map(Option::unwrap).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::WEI_PER_ETH as ETH;
    use crate::schemes::Bug;

    fn attacker() -> AttackerProfile {
        AttackerProfile {
            address: Address::from_index(666),
            throws_on_receive: true,
            budget: ETH,
        }
    }

    fn honest(n: u64) -> Vec<Contribution> {
        (1..=n)
            .map(|i| Contribution {
                from: Address::from_index(i),
                amount: ETH,
            })
            .collect()
    }

    #[test]
    fn dos_freezes_checked_scheme() {
        let p = SchemeParams::hyip_daily(ETH / 10);
        let r = dos_attack(&p, &Deployment::default(), &honest(5), &attacker(), 10).unwrap();
        assert!(r.frozen);
        assert_eq!(r.reverted_ticks, 10);
        assert_eq!(r.outgoing_after_join, 0);
        assert_eq!(r.balance_after_ticks, 5 * ETH + ETH / 10);

        let empty = dos_attack(&p, &Deployment::default(), &[], &attacker(), 3).unwrap();
        assert!(empty.frozen);
    }

    #[test]
    fn dos_with_unchecked_send_strands_attacker_share() {
        let p = SchemeParams::hyip_daily(ETH / 10).with_bug(Bug::UncheckedSend);
        let r = dos_attack(&p, &Deployment::default(), &honest(5), &attacker(), 10).unwrap();
        assert!(!r.frozen);
        assert_eq!(r.honest_paid_after_join, 10 * 5 * ETH / 100);
        assert_eq!(r.attacker_stranded, 10 * ETH / 1000);
        assert_eq!(
            r.balance_after_ticks,
            r.balance_before_ticks - r.honest_paid_after_join
        );
    }

    #[test]
    fn dos_preconditions() {
        let array = SchemeParams::array(Fraction::ONE, Fraction::ZERO, 0);
        assert!(dos_attack(&array, &Deployment::default(), &[], &attacker(), 1).is_err());
        let pricey = SchemeParams::hyip_daily(2 * ETH);
        assert!(dos_attack(&pricey, &Deployment::default(), &[], &attacker(), 1).is_err());
    }

    #[test]
    fn shutdown_on_empty_doubler() {
        let p = SchemeParams::array(Fraction::new(2, 1).unwrap(), Fraction::ZERO, 0);
        let oscar = Address::from_index(42);
        let r = shutdown_attack(&p, &Deployment::default(), &[], oscar, 100 * ETH).unwrap();
        assert_eq!(r.oscar_received, 200 * ETH);
        assert_eq!(r.oscar_net, "0");
        assert_eq!(r.backlog, 200 * ETH);
        assert_eq!(r.oscar_fees, 0);
    }

    #[test]
    fn shutdown_with_fee() {
        let p = SchemeParams::array(
            Fraction::new(2, 1).unwrap(),
            Fraction::new(1, 10).unwrap(),
            0,
        );
        let oscar = Address::from_index(42);
        let r = shutdown_attack(&p, &Deployment::default(), &[], oscar, 100 * ETH).unwrap();
        // 90 + 90 ETH on hand cannot cover his first 200 ETH entry.
        assert_eq!(r.oscar_fees, 20 * ETH);
        assert_eq!(r.oscar_received, 0);
        assert_eq!(r.oscar_net, format!("-{}", 200 * ETH));
        assert_eq!(r.backlog, 400 * ETH - 180 * ETH);
    }

    #[test]
    fn shutdown_rejected_below_toll() {
        let p = SchemeParams::array(Fraction::new(2, 1).unwrap(), Fraction::ZERO, ETH);
        let oscar = Address::from_index(42);
        let r = shutdown_attack(&p, &Deployment::default(), &[], oscar, 0).unwrap();
        assert_eq!(r.rejected_deposits, 2);
        assert_eq!((r.oscar_sent, r.oscar_received, r.backlog), (0, 0, 0));
    }

    #[test]
    fn waits() {
        assert_eq!(payout_wait(1), Ok(2));
        assert_eq!(payout_wait(2), Ok(3));
        assert_eq!(payout_wait(50), Ok(51));
        assert_eq!(payout_wait(0), Err(AttackError::ZeroPosition));
        assert_eq!(simulated_payout_waits(4, ETH).unwrap(), vec![2, 3, 4, 5]);
    }

    #[test]
    fn report_json_omits_trace() {
        let p = SchemeParams::hyip_daily(0);
        let r = dos_attack(&p, &Deployment::default(), &honest(1), &attacker(), 1).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["frozen"], true);
        assert_eq!(v["scenario"], "dos");
        assert!(v.get("trace").is_none());
    }
}
