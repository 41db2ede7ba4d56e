//! Economic impact of a scheme from its ledger: flows in ether and USD,
//! lifetime, per-user gains and losses, daily volume, Lorenz curves and Gini
//! coefficients, plus the monthly creation timeline over many schemes.
//!
//! USD values stay exact rationals until they are written out, where they are
//! rounded half-to-even to six decimals.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use chrono::NaiveDate;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::ledger::{
    classify_flow, wei_to_eth, Address, Flow, RateTable, SchemeDescriptor, SchemeKind, Transaction,
    Wei,
};
use crate::schemes::wei_serde;

pub const USD_DECIMALS: usize = 6;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no exchange rate for {0}")]
    MissingRate(NaiveDate),
    #[error("no exchange rate for {}", join_dates(.0))]
    MissingRates(Vec<NaiveDate>),
    #[error("empty transaction list")]
    EmptyLedger,
    #[error("inequality needs at least one positive value")]
    NoPositiveValue,
    #[error("negative value in inequality input")]
    NegativeValue,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn join_dates(dates: &[NaiveDate]) -> String {
    dates
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Rounds half-to-even at `decimals` places and renders without exponent.
pub fn format_decimal(value: &BigRational, decimals: usize) -> String {
    let scale = num_traits::pow(BigInt::from(10), decimals);
    let scaled = value * BigRational::from_integer(scale.clone());
    let floor = scaled.floor();
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let mut units = floor.to_integer();
    match (&scaled - &floor).cmp(&half) {
        Ordering::Greater => units += 1,
        Ordering::Equal if !(&units % 2u8).is_zero() => units += 1,
        _ => {}
    }
    let negative = units.is_negative();
    let digits = units.abs().to_string();
    let digits = format!("{digits:0>width$}", width = decimals + 1);
    let (int_part, frac_part) = digits.split_at(digits.len() - decimals);
    let sign = if negative { "-" } else { "" };
    if decimals == 0 {
        format!("{sign}{int_part}")
    } else {
        format!("{sign}{int_part}.{frac_part}")
    }
}

/// Exact USD amount.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Usd(pub BigRational);

impl Usd {
    pub fn zero() -> Self {
        Usd(BigRational::zero())
    }

    pub fn to_f64(&self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self.0).unwrap_or(f64::NAN)
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_decimal(&self.0, USD_DECIMALS))
    }
}

impl Serialize for Usd {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl std::ops::Add for Usd {
    type Output = Usd;
    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign<&Usd> for Usd {
    fn add_assign(&mut self, rhs: &Usd) {
        self.0 += &rhs.0;
    }
}

impl std::ops::Sub for &Usd {
    type Output = Usd;
    fn sub(self, rhs: &Usd) -> Usd {
        Usd(&self.0 - &rhs.0)
    }
}

impl std::iter::Sum for Usd {
    fn sum<I: Iterator<Item = Usd>>(iter: I) -> Usd {
        iter.fold(Usd::zero(), |a, b| a + b)
    }
}

/// Value of `tx` at the average rate of its UTC day.
pub fn to_usd(tx: &Transaction, rates: &RateTable) -> Result<Usd, MetricsError> {
    let date = tx.date();
    let rate = rates.get(&date).ok_or(MetricsError::MissingRate(date))?;
    Ok(Usd(wei_to_eth(tx.value) * rate))
}

/// Every date of a value-moving transaction that has no rate, ascending.
pub fn missing_rates(txs: &[Transaction], rates: &RateTable) -> Vec<NaiveDate> {
    txs.iter()
        .filter(|t| !t.is_error)
        .map(Transaction::date)
        .filter(|d| rates.get(d).is_none())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Calendar days between the first and the last transaction.
pub fn lifetime(txs: &[Transaction]) -> Result<i64, MetricsError> {
    let first = txs
        .iter()
        .map(Transaction::date)
        .min()
        .ok_or(MetricsError::EmptyLedger)?;
    let last = txs
        .iter()
        .map(Transaction::date)
        .max()
        .ok_or(MetricsError::EmptyLedger)?;
    Ok((last - first).num_days())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlowSummary {
    pub in_tx_count: u64,
    pub out_tx_count: u64,
    #[serde(with = "wei_serde")]
    pub in_eth: Wei,
    #[serde(with = "wei_serde")]
    pub out_eth: Wei,
    pub in_usd: Usd,
    pub out_usd: Usd,
    pub paying_users: u64,
    pub paid_users: u64,
}

pub fn flow_summary(
    txs: &[Transaction],
    scheme: &Address,
    rates: &RateTable,
) -> Result<FlowSummary, MetricsError> {
    let mut s = FlowSummary {
        in_tx_count: 0,
        out_tx_count: 0,
        in_eth: 0,
        out_eth: 0,
        in_usd: Usd::zero(),
        out_usd: Usd::zero(),
        paying_users: 0,
        paid_users: 0,
    };
    let mut paying = BTreeSet::new();
    let mut paid = BTreeSet::new();
    for tx in txs {
        match classify_flow(tx, scheme) {
            Flow::Incoming => {
                s.in_tx_count += 1;
                s.in_eth += tx.value;
                s.in_usd += &to_usd(tx, rates)?;
                if tx.value > 0 {
                    paying.insert(tx.from);
                }
            }
            Flow::Outgoing => {
                s.out_tx_count += 1;
                s.out_eth += tx.value;
                s.out_usd += &to_usd(tx, rates)?;
                if tx.value > 0 {
                    paid.insert(tx.to);
                }
            }
            Flow::Unrelated => {}
        }
    }
    s.paying_users = paying.len() as u64;
    s.paid_users = paid.len() as u64;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserNet {
    pub address: Address,
    pub sent_usd: Usd,
    pub received_usd: Usd,
    pub net_usd: Usd,
}

/// Per-address USD sent to and received from the scheme, by address. The
/// scheme itself and the zero address are not users.
pub fn user_nets(
    txs: &[Transaction],
    scheme: &Address,
    rates: &RateTable,
) -> Result<Vec<UserNet>, MetricsError> {
    let mut totals: BTreeMap<Address, (Usd, Usd)> = BTreeMap::new();
    for tx in txs {
        let (user, incoming) = match classify_flow(tx, scheme) {
            Flow::Incoming => (tx.from, true),
            Flow::Outgoing => (tx.to, false),
            Flow::Unrelated => continue,
        };
        if user == *scheme || user.is_zero() {
            continue;
        }
        let usd = to_usd(tx, rates)?;
        let entry = totals.entry(user).or_default();
        if incoming {
            entry.0 += &usd;
        } else {
            entry.1 += &usd;
        }
    }
    Ok(totals
        .into_iter()
        .map(|(address, (sent_usd, received_usd))| UserNet {
            address,
            net_usd: &received_usd - &sent_usd,
            sent_usd,
            received_usd,
        })
        .collect())
}

/// Positive nets and magnitudes of negative nets, each ascending.
pub fn gains_and_losses(nets: &[UserNet]) -> (Vec<Usd>, Vec<Usd>) {
    let mut gains = Vec::new();
    let mut losses = Vec::new();
    for n in nets {
        if n.net_usd.0.is_positive() {
            gains.push(n.net_usd.clone());
        } else if n.net_usd.0.is_negative() {
            losses.push(Usd(-n.net_usd.0.clone()));
        }
    }
    gains.sort();
    losses.sort();
    (gains, losses)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DailyVolume {
    pub date: NaiveDate,
    pub in_usd: Usd,
    pub out_usd: Usd,
}

/// One row per date with incoming or outgoing transactions, ascending.
pub fn daily_volume(
    txs: &[Transaction],
    scheme: &Address,
    rates: &RateTable,
) -> Result<Vec<DailyVolume>, MetricsError> {
    let mut days: BTreeMap<NaiveDate, (Usd, Usd)> = BTreeMap::new();
    for tx in txs {
        let flow = classify_flow(tx, scheme);
        if flow == Flow::Unrelated {
            continue;
        }
        let usd = to_usd(tx, rates)?;
        let day = days.entry(tx.date()).or_default();
        if flow == Flow::Incoming {
            day.0 += &usd;
        } else {
            day.1 += &usd;
        }
    }
    Ok(days
        .into_iter()
        .map(|(date, (in_usd, out_usd))| DailyVolume {
            date,
            in_usd,
            out_usd,
        })
        .collect())
}

/// Cumulative share curve in percent, one point per member plus the origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InequalityCurve {
    pub points: Vec<(BigRational, BigRational)>,
    pub gini_pct: BigRational,
}

impl InequalityCurve {
    pub fn gini_f64(&self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self.gini_pct).unwrap_or(f64::NAN)
    }

    /// Trapezoid area under the curve, in units of the 100×100 square.
    pub fn area(&self) -> BigRational {
        let hundred = BigRational::from_integer(100.into());
        let twice: BigRational = self
            .points
            .windows(2)
            .map(|w| (&w[1].0 - &w[0].0) * (&w[0].1 + &w[1].1))
            .sum();
        twice / (BigRational::from_integer(2.into()) * &hundred * &hundred)
    }
}

pub fn lorenz(values: &[BigRational]) -> Result<InequalityCurve, MetricsError> {
    if values.iter().any(Signed::is_negative) {
        return Err(MetricsError::NegativeValue);
    }
    let mut sorted = values.to_vec();
    sorted.sort();
    let total: BigRational = sorted.iter().sum();
    if !total.is_positive() {
        return Err(MetricsError::NoPositiveValue);
    }
    let n = BigRational::from_integer(sorted.len().into());
    let hundred = BigRational::from_integer(100.into());

    let mut points = vec![(BigRational::zero(), BigRational::zero())];
    let mut prefix = BigRational::zero();
    for (i, v) in sorted.iter().enumerate() {
        prefix += v;
        let pop = &hundred * BigRational::from_integer((i + 1).into()) / &n;
        points.push((pop, &hundred * &prefix / &total));
    }

    // Sum of |x_i - x_j| over ordered pairs, from the sorted order:
    // x_(j) exceeds the j smaller entries and trails the n-1-j larger ones.
    let len = sorted.len() as i64;
    let pairwise: BigRational = sorted
        .iter()
        .enumerate()
        .map(|(j, v)| v * BigRational::from_integer((2 * (2 * j as i64 - len + 1)).into()))
        .sum();
    let two = BigRational::from_integer(2.into());
    let gini_pct = hundred * pairwise / (two * n * total);
    Ok(InequalityCurve { points, gini_pct })
}

pub fn creation_timeline(
    schemes: &[(SchemeDescriptor, NaiveDate)],
) -> BTreeMap<(String, SchemeKind), u64> {
    let mut counts = BTreeMap::new();
    for (descriptor, first) in schemes {
        let month = first.format("%Y-%m").to_string();
        *counts.entry((month, descriptor.kind)).or_insert(0) += 1;
    }
    counts
}

/// All single-scheme metrics of one ledger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Analysis {
    pub summary: FlowSummary,
    pub lifetime_days: Option<i64>,
    pub nets: Vec<UserNet>,
    pub volume: Vec<DailyVolume>,
    /// Over what each user sent; `None` when nobody paid in.
    pub lorenz_in: Option<InequalityCurve>,
    /// Over what each user received.
    pub lorenz_out: Option<InequalityCurve>,
}

/// Fails up front with every missing rate date.
pub fn analyze(
    txs: &[Transaction],
    scheme: &Address,
    rates: &RateTable,
) -> Result<Analysis, MetricsError> {
    let missing = missing_rates(txs, rates);
    if !missing.is_empty() {
        return Err(MetricsError::MissingRates(missing));
    }
    let nets = user_nets(txs, scheme, rates)?;
    let curve = |pick: fn(&UserNet) -> &Usd| {
        let values: Vec<BigRational> = nets
            .iter()
            .map(|n| pick(n).0.clone())
            .filter(Signed::is_positive)
            .collect();
        lorenz(&values).ok()
    };
    Ok(Analysis {
        summary: flow_summary(txs, scheme, rates)?,
        lifetime_days: lifetime(txs).ok(),
        lorenz_in: curve(|n| &n.sent_usd),
        lorenz_out: curve(|n| &n.received_usd),
        volume: daily_volume(txs, scheme, rates)?,
        nets,
    })
}

// CSV outputs.

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

/// Rows `kind,rank,days`; within a kind, longest-lived first.
pub fn write_lifetime_csv<W: Write>(
    w: W,
    lifetimes: &[(SchemeKind, i64)],
) -> Result<(), MetricsError> {
    let mut by_kind: BTreeMap<SchemeKind, Vec<i64>> = BTreeMap::new();
    for &(kind, days) in lifetimes {
        by_kind.entry(kind).or_default().push(days);
    }
    let mut out = writer(w);
    out.write_record(["kind", "rank", "days"])?;
    for (kind, mut days) in by_kind {
        days.sort_unstable_by(|a, b| b.cmp(a));
        for (rank, d) in days.iter().enumerate() {
            out.write_record([kind.to_string(), (rank + 1).to_string(), d.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_creation_csv<W: Write>(
    w: W,
    timeline: &BTreeMap<(String, SchemeKind), u64>,
) -> Result<(), MetricsError> {
    let mut out = writer(w);
    out.write_record(["month", "kind", "count"])?;
    for ((month, kind), count) in timeline {
        out.write_record([month.clone(), kind.to_string(), count.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Gains and losses side by side, each ranked ascending; the shorter
/// series leaves its columns empty.
pub fn write_gains_losses_csv<W: Write>(
    w: W,
    gains: &[Usd],
    losses: &[Usd],
) -> Result<(), MetricsError> {
    let mut out = writer(w);
    out.write_record(["rank", "gain_usd", "rank", "loss_usd"])?;
    let column = |series: &[Usd], i: usize| match series.get(i) {
        Some(v) => [(i + 1).to_string(), v.to_string()],
        None => [String::new(), String::new()],
    };
    for i in 0..gains.len().max(losses.len()) {
        let [gr, gv] = column(gains, i);
        let [lr, lv] = column(losses, i);
        out.write_record([gr, gv, lr, lv])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_volume_csv<W: Write>(w: W, volume: &[DailyVolume]) -> Result<(), MetricsError> {
    let mut out = writer(w);
    out.write_record(["date", "in_usd", "out_usd"])?;
    for row in volume {
        out.write_record([
            row.date.to_string(),
            row.in_usd.to_string(),
            row.out_usd.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_lorenz_csv<W: Write>(
    w: W,
    curve: Option<&InequalityCurve>,
) -> Result<(), MetricsError> {
    let mut out = writer(w);
    out.write_record(["pop_pct", "value_pct"])?;
    for (pop, value) in curve.map(|c| c.points.as_slice()).unwrap_or_default() {
        out.write_record([
            format_decimal(pop, USD_DECIMALS),
            format_decimal(value, USD_DECIMALS),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GiniRow {
    pub scheme: String,
    pub gini_in_pct: Option<BigRational>,
    pub gini_out_pct: Option<BigRational>,
    pub total_in_usd: Usd,
    pub total_out_usd: Usd,
}

impl GiniRow {
    pub fn from_analysis(scheme: String, a: &Analysis) -> Self {
        GiniRow {
            scheme,
            gini_in_pct: a.lorenz_in.as_ref().map(|c| c.gini_pct.clone()),
            gini_out_pct: a.lorenz_out.as_ref().map(|c| c.gini_pct.clone()),
            total_in_usd: a.summary.in_usd.clone(),
            total_out_usd: a.summary.out_usd.clone(),
        }
    }
}

pub fn write_gini_csv<W: Write>(w: W, rows: &[GiniRow]) -> Result<(), MetricsError> {
    let mut out = writer(w);
    out.write_record([
        "scheme",
        "gini_in_pct",
        "gini_out_pct",
        "total_in_usd",
        "total_out_usd",
    ])?;
    let pct = |g: &Option<BigRational>| {
        g.as_ref()
            .map(|g| format_decimal(g, USD_DECIMALS))
            .unwrap_or_default()
    };
    for r in rows {
        out.write_record([
            r.scheme.clone(),
            pct(&r.gini_in_pct),
            pct(&r.gini_out_pct),
            r.total_in_usd.to_string(),
            r.total_out_usd.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
