//! Transaction ledger, scheme manifests and exchange-rate tables.
//!
//! Everything in here is immutable after loading. Values are kept in exact
//! integer wei and exchange rates as exact rationals so downstream totals can
//! be cross-footed without rounding noise.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Signed;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Amount of ether in wei. `u128` covers every plausible supply (10^26 wei).
pub type Wei = u128;

pub const WEI_PER_ETH: Wei = 1_000_000_000_000_000_000;

pub const TRANSACTIONS_HEADER: [&str; 7] = [
    "block_number",
    "timestamp",
    "from",
    "to",
    "value_wei",
    "is_error",
    "is_internal",
];

pub const RATES_HEADER: [&str; 2] = ["date", "usd_per_eth"];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid address `{0}`: expected 0x followed by 40 hex digits")]
pub struct AddressError(pub String);

/// A 160-bit account or contract identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Address([u8; 20]);

impl Address {
    pub const ZERO: Address = Address([0; 20]);

    pub const fn from_bytes(bytes: [u8; 20]) -> Self {
        Address(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }

    /// Deterministic synthetic address, handy for simulated users.
    pub fn from_index(index: u64) -> Self {
        let mut bytes = [0u8; 20];
        bytes[0] = 0xee;
        bytes[12..].copy_from_slice(&index.to_be_bytes());
        Address(bytes)
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; 20]
    }
}

impl FromStr for Address {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .strip_prefix("0x")
            .or_else(|| s.strip_prefix("0X"))
            .ok_or_else(|| AddressError(s.to_string()))?;
        if digits.len() != 40 {
            return Err(AddressError(s.to_string()));
        }
        let mut bytes = [0u8; 20];
        hex::decode_to_slice(digits, &mut bytes).map_err(|_| AddressError(s.to_string()))?;
        Ok(Address(bytes))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One ledger row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub block_number: u64,
    pub timestamp: DateTime<Utc>,
    pub from: Address,
    pub to: Address,
    pub value: Wei,
    pub is_error: bool,
    pub is_internal: bool,
}

impl Transaction {
    pub fn date(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

/// Direction of a transaction relative to one scheme contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flow {
    Incoming,
    Outgoing,
    Unrelated,
}

/// Reverted transactions move no value and are always unrelated. Anything
/// sent to the scheme counts as incoming, whether it came from a user or was
/// forwarded by a wallet contract; only internal transfers out of the scheme
/// are payouts.
pub fn classify_flow(tx: &Transaction, scheme: &Address) -> Flow {
    if tx.is_error {
        Flow::Unrelated
    } else if tx.to == *scheme {
        Flow::Incoming
    } else if tx.is_internal && tx.from == *scheme {
        Flow::Outgoing
    } else {
        Flow::Unrelated
    }
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("unsorted at row {row}: block {block} follows block {previous}")]
    Unsorted {
        row: usize,
        block: u64,
        previous: u64,
    },
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("non-positive rate for {0}")]
    NonPositiveRate(NaiveDate),
    #[error("line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("duplicate scheme address {0}")]
    DuplicateAddress(Address),
}

impl LedgerError {
    fn row(row: usize, message: impl Into<String>) -> Self {
        LedgerError::Row {
            row,
            message: message.into(),
        }
    }
}

fn open(path: &Path) -> Result<File, LedgerError> {
    File::open(path).map_err(|source| LedgerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), LedgerError> {
    if found.iter().eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(LedgerError::Header {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        })
    }
}

fn parse_flag(row: usize, column: &str, raw: &str) -> Result<bool, LedgerError> {
    match raw {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(LedgerError::row(
            row,
            format!("{column}: expected 0 or 1, found `{other}`"),
        )),
    }
}

pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT)
        .ok()
        .map(|naive| naive.and_utc())
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

fn parse_transaction(row: usize, record: &csv::StringRecord) -> Result<Transaction, LedgerError> {
    if record.len() != TRANSACTIONS_HEADER.len() {
        return Err(LedgerError::row(
            row,
            format!(
                "expected {} columns, found {}",
                TRANSACTIONS_HEADER.len(),
                record.len()
            ),
        ));
    }
    let block_number = record[0].parse::<u64>().map_err(|_| {
        LedgerError::row(row, format!("block_number: bad integer `{}`", &record[0]))
    })?;
    let timestamp = parse_timestamp(&record[1])
        .ok_or_else(|| LedgerError::row(row, format!("timestamp: bad date `{}`", &record[1])))?;
    let from = record[2]
        .parse::<Address>()
        .map_err(|e| LedgerError::row(row, format!("from: {e}")))?;
    let to = record[3]
        .parse::<Address>()
        .map_err(|e| LedgerError::row(row, format!("to: {e}")))?;
    let value = record[4]
        .parse::<Wei>()
        .map_err(|_| LedgerError::row(row, format!("value_wei: bad integer `{}`", &record[4])))?;
    Ok(Transaction {
        block_number,
        timestamp,
        from,
        to,
        value,
        is_error: parse_flag(row, "is_error", &record[5])?,
        is_internal: parse_flag(row, "is_internal", &record[6])?,
    })
}

/// Reads a transactions CSV. Rows are numbered from 1, not counting the header.
pub fn read_transactions<R: Read>(reader: R) -> Result<Vec<Transaction>, LedgerError> {
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    check_header(csv.headers()?, &TRANSACTIONS_HEADER)?;
    let mut txs: Vec<Transaction> = Vec::new();
    for (index, record) in csv.records().enumerate() {
        let row = index + 1;
        let record = record.map_err(|e| LedgerError::row(row, e.to_string()))?;
        let tx = parse_transaction(row, &record)?;
        if let Some(prev) = txs.last() {
            if tx.block_number < prev.block_number {
                return Err(LedgerError::Unsorted {
                    row,
                    block: tx.block_number,
                    previous: prev.block_number,
                });
            }
        }
        txs.push(tx);
    }
    Ok(txs)
}

pub fn load_transactions(path: impl AsRef<Path>) -> Result<Vec<Transaction>, LedgerError> {
    read_transactions(BufReader::new(open(path.as_ref())?))
}

pub fn write_transactions<W: Write>(writer: W, txs: &[Transaction]) -> Result<(), LedgerError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(TRANSACTIONS_HEADER)?;
    for tx in txs {
        csv.write_record([
            tx.block_number.to_string(),
            format_timestamp(&tx.timestamp),
            tx.from.to_string(),
            tx.to.to_string(),
            tx.value.to_string(),
            u8::from(tx.is_error).to_string(),
            u8::from(tx.is_internal).to_string(),
        ])?;
    }
    csv.flush().map_err(|e| LedgerError::Csv(e.into()))?;
    Ok(())
}

pub fn save_transactions(path: impl AsRef<Path>, txs: &[Transaction]) -> Result<(), LedgerError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| LedgerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_transactions(io::BufWriter::new(file), txs)
}

/// Parses a plain decimal (`12`, `0.5`, `-3.25`) into an exact rational.
pub fn parse_decimal(raw: &str) -> Option<BigRational> {
    let (negative, body) = match raw.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, raw.strip_prefix('+').unwrap_or(raw)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part
        .bytes()
        .chain(frac_part.bytes())
        .all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = digits.parse().ok()?;
    let denom = num_traits::pow(BigInt::from(10), frac_part.len());
    let value = BigRational::new(numer, denom);
    Some(if negative { -value } else { value })
}

/// Daily average USD price of one ether.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateTable {
    rates: BTreeMap<NaiveDate, BigRational>,
}

impl RateTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, date: NaiveDate, usd_per_eth: BigRational) -> Result<(), LedgerError> {
        if !usd_per_eth.is_positive() {
            return Err(LedgerError::NonPositiveRate(date));
        }
        if self.rates.contains_key(&date) {
            return Err(LedgerError::DuplicateDate(date));
        }
        self.rates.insert(date, usd_per_eth);
        Ok(())
    }

    pub fn get(&self, date: &NaiveDate) -> Option<&BigRational> {
        self.rates.get(date)
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NaiveDate, &BigRational)> {
        self.rates.iter()
    }

    /// Same rate on every day in `[first, last]`.
    pub fn flat(first: NaiveDate, last: NaiveDate, usd_per_eth: BigRational) -> Self {
        let rates = first
            .iter_days()
            .take_while(|d| *d <= last)
            .map(|d| (d, usd_per_eth.clone()))
            .collect();
        RateTable { rates }
    }
}

pub fn read_rates<R: Read>(reader: R) -> Result<RateTable, LedgerError> {
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    check_header(csv.headers()?, &RATES_HEADER)?;
    let mut table = RateTable::new();
    for (index, record) in csv.records().enumerate() {
        let row = index + 1;
        let record = record.map_err(|e| LedgerError::row(row, e.to_string()))?;
        if record.len() != RATES_HEADER.len() {
            return Err(LedgerError::row(
                row,
                format!("expected 2 columns, found {}", record.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|_| LedgerError::row(row, format!("date: bad date `{}`", &record[0])))?;
        let rate = parse_decimal(&record[1]).ok_or_else(|| {
            LedgerError::row(row, format!("usd_per_eth: bad decimal `{}`", &record[1]))
        })?;
        table.insert(date, rate)?;
    }
    Ok(table)
}

pub fn load_rates(path: impl AsRef<Path>) -> Result<RateTable, LedgerError> {
    read_rates(BufReader::new(open(path.as_ref())?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Public,
    Hidden,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Public => "public",
            SchemeKind::Hidden => "hidden",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchetypeLabel {
    Array,
    Tree,
    Handover,
    Waterfall,
    Other,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeDescriptor {
    pub address: Address,
    pub name: String,
    pub kind: SchemeKind,
    pub archetype: ArchetypeLabel,
}

/// Reads a JSONL scheme manifest; blank lines are skipped.
pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<SchemeDescriptor>, LedgerError> {
    let mut seen = HashSet::new();
    let mut schemes = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|e| LedgerError::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let scheme: SchemeDescriptor =
            serde_json::from_str(&line).map_err(|e| LedgerError::Manifest {
                line: line_no,
                message: e.to_string(),
            })?;
        if !seen.insert(scheme.address) {
            return Err(LedgerError::DuplicateAddress(scheme.address));
        }
        schemes.push(scheme);
    }
    Ok(schemes)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SchemeDescriptor>, LedgerError> {
    read_manifest(BufReader::new(open(path.as_ref())?))
}

/// Wei to ether as an exact rational.
pub fn wei_to_eth(value: Wei) -> BigRational {
    BigRational::new(BigInt::from(value), BigInt::from(WEI_PER_ETH))
}
