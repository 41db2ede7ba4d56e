use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::SimError;
use crate::ledger::Wei;

/// Exact non-negative rational used for multipliers, fees and rates.
/// Applying it to an amount truncates, like integer division on the EVM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    num: u128,
    den: u128,
}

impl Fraction {
    pub const ZERO: Fraction = Fraction { num: 0, den: 1 };
    pub const ONE: Fraction = Fraction { num: 1, den: 1 };

    pub fn new(num: u128, den: u128) -> Result<Self, SimError> {
        if den == 0 {
            return Err(SimError::InvalidParams(format!(
                "fraction {num}/{den} has a zero denominator"
            )));
        }
        Ok(Fraction { num, den })
    }

    pub fn num(&self) -> u128 {
        self.num
    }

    pub fn den(&self) -> u128 {
        self.den
    }

    /// `floor(amount * num / den)`.
    pub fn of(&self, amount: Wei) -> Result<Wei, SimError> {
        amount
            .checked_mul(self.num)
            .map(|p| p / self.den)
            .ok_or(SimError::Overflow)
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    /// Exact comparison `self <= other` by cross-multiplication.
    pub fn le(&self, other: &Fraction) -> bool {
        self.num * other.den <= other.num * self.den
    }

    pub fn lt(&self, other: &Fraction) -> bool {
        self.num * other.den < other.num * self.den
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fraction {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SimError::InvalidParams(format!("bad fraction `{s}`, expected `num/den`"));
        let (num, den) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        Fraction::new(
            num.parse().map_err(|_| bad())?,
            den.parse().map_err(|_| bad())?,
        )
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Wei amounts travel through JSON as decimal strings; plain integers are
/// accepted on input when they fit in 64 bits.
pub mod wei_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    use crate::ledger::Wei;

    pub fn serialize<S: Serializer>(value: &Wei, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(value)
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Number(u64),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Wei, D::Error> {
        match Raw::deserialize(deserializer)? {
            Raw::Number(n) => Ok(n as Wei),
            Raw::Text(s) => s
                .parse()
                .map_err(|_| de::Error::custom(format!("bad wei amount `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    /// Users are paid in arrival order a multiple of what they put in.
    Array,
    /// Each deposit is split among the depositor's inviters.
    Tree,
    /// Each newcomer repays the previous user at a rising price.
    Handover,
    /// Each deposit pays a percentage to users from the head of the list.
    Waterfall,
    /// Investors are paid a rate on every daily tick.
    HyipDaily,
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Archetype::Array => "array",
            Archetype::Tree => "tree",
            Archetype::Handover => "handover",
            Archetype::Waterfall => "waterfall",
            Archetype::HyipDaily => "hyip_daily",
        })
    }
}

/// What happens to a deposit that does not meet the entry conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectPolicy {
    #[default]
    Refund,
    Keep,
}

/// When the owner's cut leaves the contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeeCollection {
    /// Sent to the owner as part of each deposit.
    #[default]
    Immediate,
    /// Kept in the contract until the owner calls for a withdrawal.
    Retained,
}

/// Money a waterfall deposit may distribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaterfallBudget {
    /// Only what is left of the incoming deposit after fees; the unspent
    /// remainder stays in the contract for good.
    #[default]
    Deposit,
    /// Everything the contract holds.
    ContractBalance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bug {
    /// Failed sends are ignored: the user counts as paid, the ether stays.
    UncheckedSend,
    /// `fees += amount / 33` instead of `fees = amount / 33`.
    AccumulatingFees,
    /// The waterfall cursor is never rewound to the head of the list.
    CursorNotReset,
    /// A misnamed constructor anyone can call to take ownership.
    OpenConstructor,
    /// Clearing the user array costs gas linear in its length.
    GasLimitedClear,
}

impl fmt::Display for Bug {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bug::UncheckedSend => "unchecked_send",
            Bug::AccumulatingFees => "accumulating_fees",
            Bug::CursorNotReset => "cursor_not_reset",
            Bug::OpenConstructor => "open_constructor",
            Bug::GasLimitedClear => "gas_limited_clear",
        })
    }
}

fn default_price_growth() -> Fraction {
    Fraction { num: 3, den: 2 }
}

fn default_clear_cost() -> u64 {
    1
}

fn one() -> Fraction {
    Fraction::ONE
}

/// Configuration of one simulated scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeParams {
    pub archetype: Archetype,
    #[serde(default = "one")]
    pub multiplier: Fraction,
    #[serde(default = "zero_fraction")]
    pub owner_fee: Fraction,
    #[serde(default, with = "wei_serde")]
    pub min_toll: Wei,
    #[serde(default = "zero_fraction")]
    pub payout_rate: Fraction,
    #[serde(default = "default_price_growth")]
    pub price_growth: Fraction,
    #[serde(default, with = "wei_serde")]
    pub initial_price: Wei,
    #[serde(default)]
    pub reject_policy: RejectPolicy,
    #[serde(default)]
    pub fee_collection: FeeCollection,
    /// Array only: the first accepted deposit is entirely the owner's fee.
    #[serde(default)]
    pub first_deposit_to_owner: bool,
    #[serde(default)]
    pub waterfall_budget: WaterfallBudget,
    /// Abstract gas per array entry when clearing (`gas_limited_clear`).
    #[serde(default = "default_clear_cost")]
    pub clear_cost_per_entry: u64,
    #[serde(default)]
    pub bugs: BTreeSet<Bug>,
}

fn zero_fraction() -> Fraction {
    Fraction::ZERO
}

impl SchemeParams {
    pub fn new(archetype: Archetype) -> Self {
        SchemeParams {
            archetype,
            multiplier: Fraction::ONE,
            owner_fee: Fraction::ZERO,
            min_toll: 0,
            payout_rate: Fraction::ZERO,
            price_growth: default_price_growth(),
            initial_price: 0,
            reject_policy: RejectPolicy::Refund,
            fee_collection: FeeCollection::Immediate,
            first_deposit_to_owner: false,
            waterfall_budget: WaterfallBudget::Deposit,
            clear_cost_per_entry: 1,
            bugs: BTreeSet::new(),
        }
    }

    /// Array scheme paying `multiplier` times each deposit.
    pub fn array(multiplier: Fraction, owner_fee: Fraction, min_toll: Wei) -> Self {
        SchemeParams {
            multiplier,
            owner_fee,
            min_toll,
            ..SchemeParams::new(Archetype::Array)
        }
    }

    pub fn tree(owner_fee: Fraction, min_toll: Wei) -> Self {
        SchemeParams {
            owner_fee,
            min_toll,
            ..SchemeParams::new(Archetype::Tree)
        }
    }

    /// Handover scheme; the fee is kept in the contract for the owner.
    pub fn handover(initial_price: Wei, price_growth: Fraction, owner_fee: Fraction) -> Self {
        SchemeParams {
            initial_price,
            price_growth,
            owner_fee,
            fee_collection: FeeCollection::Retained,
            ..SchemeParams::new(Archetype::Handover)
        }
    }

    pub fn waterfall(payout_rate: Fraction, owner_fee: Fraction, min_toll: Wei) -> Self {
        SchemeParams {
            payout_rate,
            owner_fee,
            min_toll,
            ..SchemeParams::new(Archetype::Waterfall)
        }
    }

    /// Daily-paying scheme, 1% per tick unless changed.
    pub fn hyip_daily(min_toll: Wei) -> Self {
        SchemeParams {
            payout_rate: Fraction { num: 1, den: 100 },
            min_toll,
            ..SchemeParams::new(Archetype::HyipDaily)
        }
    }

    pub fn with_bug(mut self, bug: Bug) -> Self {
        self.bugs.insert(bug);
        self
    }

    pub fn has(&self, bug: Bug) -> bool {
        self.bugs.contains(&bug)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |msg: String| Err(SimError::InvalidParams(msg));
        for (name, f) in [
            ("multiplier", &self.multiplier),
            ("owner_fee", &self.owner_fee),
            ("payout_rate", &self.payout_rate),
            ("price_growth", &self.price_growth),
        ] {
            if f.den == 0 {
                return invalid(format!("{name} has a zero denominator"));
            }
        }
        if !self.owner_fee.le(&Fraction::ONE) {
            return invalid(format!("owner_fee {} exceeds 1", self.owner_fee));
        }
        if self.multiplier.lt(&Fraction::ONE) {
            return invalid(format!("multiplier {} is below 1", self.multiplier));
        }
        if self.archetype == Archetype::Handover {
            if self.price_growth.le(&Fraction::ONE) {
                return invalid(format!("price_growth {} must exceed 1", self.price_growth));
            }
            if self.initial_price == 0 {
                return invalid("handover needs a positive initial_price".into());
            }
        }
        Ok(())
    }
}
