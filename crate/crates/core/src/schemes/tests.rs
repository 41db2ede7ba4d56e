use std::collections::BTreeSet;

use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;

use super::*;
use crate::ledger::WEI_PER_ETH;

const ETH: Wei = WEI_PER_ETH;

fn at(i: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_460_000_000 + i * 3600, 0).unwrap()
}

fn user(i: u64) -> Address {
    Address::from_index(i)
}

fn contract() -> Address {
    Address::from_index(1_000_000)
}

fn owner() -> Address {
    Address::from_index(999_999)
}

fn frac(n: u128, d: u128) -> Fraction {
    Fraction::new(n, d).unwrap()
}

struct Harness<'a> {
    params: SchemeParams,
    state: SimState,
    oracle: &'a dyn FailureOracle,
    clock: i64,
}

impl<'a> Harness<'a> {
    fn new(params: SchemeParams, oracle: &'a dyn FailureOracle) -> Self {
        let state = SimState::new(&params, contract(), owner()).unwrap();
        Harness {
            params,
            state,
            oracle,
            clock: 0,
        }
    }

    fn apply(&mut self, kind: EventKind) -> StepOutput {
        self.clock += 1;
        let out = step(
            &self.state,
            &self.params,
            &SimEvent::new(at(self.clock), kind),
            self.oracle,
        )
        .unwrap();
        out.state.check_conservation().unwrap();
        self.state = out.state.clone();
        out
    }

    fn deposit(&mut self, from: Address, amount: Wei) -> StepOutput {
        self.apply(EventKind::Deposit {
            from,
            amount,
            inviter: None,
        })
    }
}

fn paid_to(out: &StepOutput, to: Address) -> Wei {
    out.transfers
        .iter()
        .filter(|t| t.to == to && !t.reverted)
        .map(|t| t.amount)
        .sum()
}

#[test]
fn doubler_pays_first_user_after_two_joiners() {
    let mut p = SchemeParams::array(frac(2, 1), Fraction::ZERO, ETH);
    p.first_deposit_to_owner = true;
    let mut h = Harness::new(p, &NeverFails);
    let d1 = h.deposit(user(1), ETH);
    assert_eq!(paid_to(&d1, owner()), ETH);
    let d2 = h.deposit(user(2), ETH);
    assert!(d2.transfers.is_empty());
    let d3 = h.deposit(user(3), ETH);
    assert_eq!(paid_to(&d3, user(1)), 2 * ETH);
    assert_eq!(h.state.balance, 0);
}

#[test]
fn array_with_ten_percent_fee() {
    let p = SchemeParams::array(frac(2, 1), frac(1, 10), ETH);
    let mut h = Harness::new(p, &NeverFails);
    let d1 = h.deposit(user(1), ETH);
    assert_eq!(paid_to(&d1, owner()), ETH / 10);
    assert_eq!(h.state.balance, 9 * ETH / 10);
    assert_eq!(d1.transfers.len(), 1);
    h.deposit(user(2), ETH);
    assert_eq!(h.state.balance, 18 * ETH / 10);
    let d3 = h.deposit(user(3), ETH);
    assert_eq!(paid_to(&d3, user(1)), 2 * ETH);
    assert_eq!(h.state.balance, 7 * ETH / 10);
}

#[test]
fn handover_price_grows() {
    let p = SchemeParams::handover(ETH, frac(3, 2), Fraction::ZERO);
    let mut h = Harness::new(p, &NeverFails);
    let mut prices = vec![h.state.price().unwrap()];
    for i in 1..=2 {
        let price = h.state.price().unwrap();
        h.deposit(user(i), price);
        prices.push(h.state.price().unwrap());
    }
    assert_eq!(prices, vec![ETH, 3 * ETH / 2, 9 * ETH / 4]);

    // Below the price: refunded, price unchanged.
    let out = h.deposit(user(9), ETH);
    assert_eq!(paid_to(&out, user(9)), ETH);
    assert_eq!(h.state.price(), Some(9 * ETH / 4));
}

#[test]
fn handover_pays_previous_user_net_of_fee() {
    let p = SchemeParams::handover(ETH, frac(3, 2), frac(1, 10));
    let mut h = Harness::new(p, &NeverFails);
    h.deposit(user(1), ETH);
    let out = h.deposit(user(2), 3 * ETH / 2);
    assert_eq!(paid_to(&out, user(1)), 3 * ETH / 2 - 3 * ETH / 20);
    assert_eq!(h.state.uncollected_fees, ETH / 10 + 3 * ETH / 20);
}

#[test]
fn waterfall_reaches_sixteen_users() {
    let p = SchemeParams::waterfall(frac(6, 100), Fraction::ZERO, 0);
    let mut h = Harness::new(p, &NeverFails);
    for i in 0..16 {
        h.deposit(user(i), ETH);
    }
    for i in 16..40 {
        let before = h.state.balance;
        let out = h.deposit(user(i), ETH);
        let paid: Vec<_> = out.transfers.iter().map(|t| (t.to, t.amount)).collect();
        let expected: Vec<_> = (0..16).map(|j| (user(j), 6 * ETH / 100)).collect();
        assert_eq!(paid, expected);
        assert_eq!(h.state.balance - before, 4 * ETH / 100);
    }
}

#[test]
fn waterfall_stale_cursor_pays_one_user() {
    let p = SchemeParams::waterfall(frac(6, 100), Fraction::ZERO, 0).with_bug(Bug::CursorNotReset);
    let mut h = Harness::new(p, &NeverFails);
    for i in 0..20 {
        let out = h.deposit(user(i), ETH);
        assert_eq!(out.transfers.len(), 1);
        assert_eq!(out.transfers[0].to, user(i));
    }
}

#[test]
fn tree_distribution() {
    let p = SchemeParams::tree(Fraction::ZERO, 0);
    let mut h = Harness::new(p, &NeverFails);
    let invited = |from, inviter| EventKind::Deposit {
        from,
        amount: 800,
        inviter: Some(inviter),
    };
    h.apply(invited(user(1), owner()));
    h.apply(invited(user(2), user(1)));
    let out = h.apply(invited(user(3), user(2)));
    assert_eq!(paid_to(&out, user(2)), 400);
    assert_eq!(paid_to(&out, user(1)), 200);
    assert_eq!(paid_to(&out, owner()), 200);

    // Unknown inviter and repeat sender are refunded.
    let out = h.apply(invited(user(4), user(77)));
    assert_eq!(paid_to(&out, user(4)), 800);
    let out = h.apply(invited(user(3), user(1)));
    assert_eq!(paid_to(&out, user(3)), 800);
    assert_eq!(h.state.queue_len(), 3);
}

#[test]
fn reject_policies_in_trace() {
    let events = [SimEvent::deposit(at(1), user(1), 5)];
    let mut p = SchemeParams::array(frac(2, 1), Fraction::ZERO, ETH);

    let refund = run(&p, contract(), owner(), &events, &NeverFails).unwrap();
    assert_eq!(refund.len(), 2);
    assert!(!refund[0].is_internal && refund[0].value == 5 && refund[0].to == contract());
    assert!(refund[1].is_internal && refund[1].value == 5 && refund[1].to == user(1));

    p.reject_policy = RejectPolicy::Keep;
    let mut sim = Simulation::new(p, contract(), owner(), &NeverFails).unwrap();
    sim.apply(&events[0]).unwrap();
    assert_eq!(sim.transactions().len(), 1);
    assert_eq!(sim.state().balance, 5);
}

#[test]
fn run_assigns_blocks() {
    let p = SchemeParams::array(frac(2, 1), Fraction::ZERO, 0);
    assert!(run(&p, contract(), owner(), &[], &NeverFails)
        .unwrap()
        .is_empty());
    let events: Vec<_> = (0..3)
        .map(|i| SimEvent::deposit(at(i), user(i as u64), ETH))
        .collect();
    let txs = run(&p, contract(), owner(), &events, &NeverFails).unwrap();
    let blocks: Vec<_> = txs.iter().map(|t| t.block_number).collect();
    assert_eq!(blocks, vec![1, 2, 2, 3]);
}

#[test]
fn out_of_order_and_unsupported_events() {
    let p = SchemeParams::array(frac(2, 1), Fraction::ZERO, 0);
    let s = SimState::new(&p, contract(), owner()).unwrap();
    let s = step(&s, &p, &SimEvent::deposit(at(5), user(1), 1), &NeverFails)
        .unwrap()
        .state;
    let err = step(&s, &p, &SimEvent::deposit(at(4), user(1), 1), &NeverFails).unwrap_err();
    assert!(matches!(err, SimError::OutOfOrder { .. }));
    let tick = SimEvent::new(at(6), EventKind::DailyTick { caller: owner() });
    assert!(matches!(
        step(&s, &p, &tick, &NeverFails),
        Err(SimError::UnsupportedEvent { .. })
    ));
}

#[test]
fn checked_send_reverts_whole_tick() {
    let attacker = user(66);
    let oracle = BTreeSet::from([attacker]);
    let p = SchemeParams::hyip_daily(ETH / 10);
    let mut h = Harness::new(p.clone(), &oracle);
    for i in 0..5 {
        h.deposit(user(i), ETH);
    }
    h.deposit(attacker, ETH / 10);
    let before = h.state.clone();
    let out = h.apply(EventKind::DailyTick { caller: owner() });
    assert!(out.reverted);
    assert!(out.transfers.iter().all(|t| t.reverted));
    assert_eq!(h.state.balance, before.balance);

    let mut h = Harness::new(p.with_bug(Bug::UncheckedSend), &oracle);
    for i in 0..5 {
        h.deposit(user(i), ETH);
    }
    h.deposit(attacker, ETH / 10);
    let out = h.apply(EventKind::DailyTick { caller: owner() });
    assert!(!out.reverted);
    assert_eq!(paid_to(&out, user(0)), ETH / 100);
    let stranded: Vec<_> = out.transfers.iter().filter(|t| t.reverted).collect();
    assert_eq!(stranded.len(), 1);
    assert_eq!(stranded[0].to, attacker);
    assert_eq!(h.state.balance, 51 * ETH / 10 - 5 * ETH / 100);
}

#[test]
fn hijack_then_withdraw_fees() {
    let mut p = SchemeParams::array(frac(2, 1), frac(1, 10), 0).with_bug(Bug::OpenConstructor);
    p.fee_collection = FeeCollection::Retained;
    let attacker = user(66);
    let mut h = Harness::new(p, &NeverFails);
    for i in 0..3 {
        h.deposit(user(i), ETH);
    }
    // Before hijacking, the attacker cannot withdraw.
    assert!(
        h.apply(EventKind::OwnerWithdraw { caller: attacker })
            .reverted
    );
    h.apply(EventKind::ConstructorCall { caller: attacker });
    assert_eq!(h.state.owner, attacker);
    let out = h.apply(EventKind::OwnerWithdraw { caller: attacker });
    assert_eq!(paid_to(&out, attacker), 3 * ETH / 10);
    assert_eq!(h.state.uncollected_fees, 0);

    let same = hijack_constructor(&h.state, &h.params, attacker).unwrap();
    assert_eq!(same, h.state);
    let plain = SchemeParams::array(frac(2, 1), Fraction::ZERO, 0);
    assert_eq!(
        hijack_constructor(&h.state, &plain, attacker),
        Err(SimError::Unavailable(Bug::OpenConstructor))
    );
}

#[test]
fn clear_array_gas_limit() {
    let p = SchemeParams::array(frac(2, 1), Fraction::ZERO, 0).with_bug(Bug::GasLimitedClear);
    let empty = SimState::new(&p, contract(), owner()).unwrap();
    let (_, r) = clear_array(&empty, &p, 0).unwrap();
    assert_eq!(
        r,
        ClearOutcome::Cleared {
            removed: 0,
            cost: 0
        }
    );

    let mut h = Harness::new(p.clone(), &NeverFails);
    for i in 0..100 {
        h.deposit(user(i), ETH);
    }
    let (next, r) = clear_array(&h.state, &p, 50).unwrap();
    assert_eq!(
        r,
        ClearOutcome::OutOfGas {
            cost: 100,
            gas_limit: 50
        }
    );
    assert_eq!(next, h.state);
    let out = h.apply(EventKind::ClearArray {
        caller: owner(),
        gas_limit: 50,
    });
    assert!(out.reverted);
    assert_eq!(h.state.queue_len(), 100);

    let (next, r) = clear_array(&h.state, &p, 100).unwrap();
    assert_eq!(
        r,
        ClearOutcome::Cleared {
            removed: 100,
            cost: 100
        }
    );
    assert_eq!(next.queue_len(), 0);

    let plain = SchemeParams::array(frac(2, 1), Fraction::ZERO, 0);
    assert!(clear_array(&h.state, &plain, 100).is_err());
}

#[test]
fn accumulating_fees() {
    let fees = |amount: Wei, bug: bool, n: usize| -> Vec<Wei> {
        let mut p = SchemeParams::hyip_daily(0);
        p.owner_fee = frac(1, 33);
        if bug {
            p = p.with_bug(Bug::AccumulatingFees);
        }
        let mut h = Harness::new(p, &NeverFails);
        (0..n)
            .map(|i| paid_to(&h.deposit(user(i as u64), amount), owner()))
            .collect()
    };
    let small = fees(33, true, 40);
    assert_eq!(small, (1..=40).collect::<Vec<Wei>>());
    let big = fees(ETH, true, 40);
    assert!(big.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(big.iter().position(|&f| f >= ETH), Some(33));
    assert!(fees(ETH, false, 10).iter().all(|&f| f == ETH / 33));
}

#[test]
fn event_json() {
    let ev: SimEvent = serde_json::from_str(&format!(
        r#"{{"at":"2016-04-01T00:00:00Z","kind":"deposit","from":"{}","amount":"1000"}}"#,
        user(1)
    ))
    .unwrap();
    assert_eq!(ev.kind.value(), 1000);
    let back: SimEvent = serde_json::from_str(&serde_json::to_string(&ev).unwrap()).unwrap();
    assert_eq!(back, ev);
    assert!(
        serde_json::from_str::<SimEvent>(r#"{"at":"2016-04-01T00:00:00Z","kind":"explode"}"#)
            .is_err()
    );
}

// Random scenarios.

fn archetype_params(archetype: Archetype) -> impl Strategy<Value = SchemeParams> {
    let fee = (0u128..=20).prop_map(|n| frac(n, 100));
    let rate = (1u128..=30).prop_map(|n| frac(n, 100));
    let mult = (100u128..=400).prop_map(|n| frac(n, 100));
    let growth = (101u128..=300).prop_map(|n| frac(n, 100));
    let toll = prop_oneof![Just(0 as Wei), 1..ETH];
    let flags = (
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
    );
    (fee, rate, mult, growth, toll, flags).prop_map(
        move |(fee, rate, mult, growth, toll, (unchecked, keep, retained, accumulating, stale))| {
            let mut p = match archetype {
                Archetype::Array => SchemeParams::array(mult, fee, toll),
                Archetype::Tree => SchemeParams::tree(fee, toll),
                Archetype::Handover => SchemeParams::handover(toll.max(1), growth, fee),
                Archetype::Waterfall => SchemeParams::waterfall(rate, fee, toll),
                Archetype::HyipDaily => {
                    let mut p = SchemeParams::hyip_daily(toll);
                    p.payout_rate = rate;
                    p.owner_fee = fee;
                    p
                }
            };
            if unchecked {
                p = p.with_bug(Bug::UncheckedSend);
            }
            if keep {
                p.reject_policy = RejectPolicy::Keep;
            }
            if retained {
                p.fee_collection = FeeCollection::Retained;
            }
            if accumulating {
                p = p.with_bug(Bug::AccumulatingFees);
            }
            if stale && archetype == Archetype::Waterfall {
                p = p.with_bug(Bug::CursorNotReset);
            }
            p
        },
    )
}

fn random_events(archetype: Archetype) -> impl Strategy<Value = Vec<EventKind>> {
    let ev = (0u8..10, 0u64..8, 0u64..8, 0..3 * ETH).prop_map(move |(k, a, b, amount)| match k {
        0 => EventKind::OwnerWithdraw {
            caller: if a == 0 { owner() } else { user(a) },
        },
        1 if archetype == Archetype::HyipDaily => EventKind::DailyTick { caller: owner() },
        2 if archetype == Archetype::HyipDaily => EventKind::DailyTick { caller: owner() },
        _ => EventKind::Deposit {
            from: user(a),
            amount,
            inviter: Some(if b == 0 { owner() } else { user(b) }),
        },
    });
    proptest::collection::vec(ev, 0..40)
}

fn scenario(
    archetype: Archetype,
) -> impl Strategy<Value = (SchemeParams, Vec<EventKind>, BTreeSet<Address>)> {
    (
        archetype_params(archetype),
        random_events(archetype),
        proptest::collection::btree_set((0u64..8).prop_map(user), 0..3),
    )
}

fn check_conservation(params: &SchemeParams, events: &[EventKind], failing: &BTreeSet<Address>) {
    let mut sim = Simulation::new(params.clone(), contract(), owner(), failing).unwrap();
    for (i, kind) in events.iter().enumerate() {
        sim.apply(&SimEvent::new(at(i as i64), kind.clone()))
            .unwrap();
    }
    let s = sim.state();
    assert!(s.total_out <= s.total_in);
    assert_eq!(s.balance, s.total_in - s.total_out);
    let (mut inflow, mut outflow) = (0, 0);
    for tx in sim.transactions().iter().filter(|t| !t.is_error) {
        if tx.is_internal {
            outflow += tx.value;
        } else {
            inflow += tx.value;
        }
    }
    assert_eq!((inflow, outflow), (s.total_in, s.total_out));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn conservation_array((p, evs, f) in scenario(Archetype::Array)) {
        check_conservation(&p, &evs, &f);
    }

    #[test]
    fn conservation_tree((p, evs, f) in scenario(Archetype::Tree)) {
        check_conservation(&p, &evs, &f);
    }

    #[test]
    fn conservation_handover((p, evs, f) in scenario(Archetype::Handover)) {
        check_conservation(&p, &evs, &f);
    }

    #[test]
    fn conservation_waterfall((p, evs, f) in scenario(Archetype::Waterfall)) {
        check_conservation(&p, &evs, &f);
    }

    #[test]
    fn conservation_hyip((p, evs, f) in scenario(Archetype::HyipDaily)) {
        check_conservation(&p, &evs, &f);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn array_pays_fifo(
        mult in 100u128..=400,
        fee in 0u128..=20,
        amounts in proptest::collection::vec(1..5 * ETH, 1..60),
    ) {
        let p = SchemeParams::array(frac(mult, 100), frac(fee, 100), 0);
        let mut h = Harness::new(p, &NeverFails);
        let mut paid = Vec::new();
        for (i, &a) in amounts.iter().enumerate() {
            let out = h.deposit(user(i as u64), a);
            paid.extend(out.transfers.iter().filter(|t| t.to != owner()).map(|t| t.to));
        }
        let expected: Vec<_> = (0..paid.len() as u64).map(user).collect();
        prop_assert_eq!(paid, expected);
    }

    #[test]
    fn tree_deposit_fully_distributed(
        parents in proptest::collection::vec(any::<prop::sample::Index>(), 1..30),
        amounts in proptest::collection::vec(1..u64::MAX as Wei, 30),
        fee in 0u128..=20,
    ) {
        let p = SchemeParams::tree(frac(fee, 100), 0);
        let mut h = Harness::new(p, &NeverFails);
        let mut members = vec![owner()];
        for (i, idx) in parents.iter().enumerate() {
            let from = user(i as u64 + 1);
            let inviter = members[idx.index(members.len())];
            let out = h.apply(EventKind::Deposit { from, amount: amounts[i], inviter: Some(inviter) });
            prop_assert!(!out.reverted);
            let sent: Wei = out.transfers.iter().map(|t| t.amount).sum();
            prop_assert_eq!(sent, amounts[i]);
            prop_assert_eq!(h.state.balance, 0);
            members.push(from);
        }
    }

    #[test]
    fn waterfall_payout_shape(
        rate in 1u128..=30,
        fee in 0u128..=20,
        stale in any::<bool>(),
        amounts in proptest::collection::vec(1..5 * ETH, 1..50),
    ) {
        prop_assume!(rate + fee <= 100);
        let mut p = SchemeParams::waterfall(frac(rate, 100), frac(fee, 100), 0);
        if stale {
            p = p.with_bug(Bug::CursorNotReset);
        }
        let mut h = Harness::new(p, &NeverFails);
        for (i, &a) in amounts.iter().enumerate() {
            let out = h.deposit(user(i as u64), a);
            let paid: Vec<_> = out.transfers.iter().filter(|t| t.to != owner()).map(|t| t.to).collect();
            if stale {
                prop_assert!(paid.len() <= 1);
            } else {
                let prefix: Vec<_> = (0..paid.len() as u64).map(user).collect();
                prop_assert_eq!(paid, prefix);
            }
        }
    }

    #[test]
    fn run_is_deterministic((p, evs, f) in scenario(Archetype::Array)) {
        let events: Vec<_> = evs.into_iter().enumerate().map(|(i, k)| SimEvent::new(at(i as i64), k)).collect();
        let a = run(&p, contract(), owner(), &events, &f).unwrap();
        let b = run(&p, contract(), owner(), &events, &f).unwrap();
        prop_assert_eq!(a, b);
    }
}
