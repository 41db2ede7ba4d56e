//! Byte-level edit distance.
//!
//! `levenshtein` runs the bit-parallel block algorithm (Myers 1999 in Hyyrö's
//! multi-word formulation), `levenshtein_dp` is the plain two-row table and
//! `banded_levenshtein` restricts the table to a diagonal band so pairs that
//! cannot fall under a threshold are abandoned early.

use serde::{Deserialize, Serialize};

/// How an edit distance is mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `2L / (|a| + |b| + L)`: a metric, strictly below 1 for finite inputs.
    #[default]
    Metric,
    /// `L / max(|a|, |b|)`: common, but breaks the triangle inequality.
    MaxLength,
}

fn strip_affixes<'a>(mut a: &'a [u8], mut b: &'a [u8]) -> (&'a [u8], &'a [u8]) {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    a = &a[prefix..];
    b = &b[prefix..];
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    (&a[..a.len() - suffix], &b[..b.len() - suffix])
}

/// Unit-cost Levenshtein distance between two byte strings.
pub fn levenshtein(a: &[u8], b: &[u8]) -> usize {
    let (a, b) = strip_affixes(a, b);
    let (pattern, text) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if pattern.is_empty() {
        return text.len();
    }
    bit_parallel(pattern, text)
}

fn bit_parallel(pattern: &[u8], text: &[u8]) -> usize {
    let words = pattern.len().div_ceil(64);
    let mut peq = vec![0u64; 256 * words];
    for (i, &c) in pattern.iter().enumerate() {
        peq[c as usize * words + i / 64] |= 1u64 << (i % 64);
    }
    let last = 1u64 << ((pattern.len() - 1) % 64);
    let mut vp = vec![!0u64; words];
    let mut vn = vec![0u64; words];
    let mut score = pattern.len();

    for &c in text {
        let eq_row = &peq[c as usize * words..(c as usize + 1) * words];
        // Row zero of the table grows by one per text byte.
        let mut hp_carry = 1u64;
        let mut hn_carry = 0u64;
        for w in 0..words {
            let x = eq_row[w] | hn_carry;
            let d0 = ((x & vp[w]).wrapping_add(vp[w]) ^ vp[w]) | x | vn[w];
            let mut hp = vn[w] | !(d0 | vp[w]);
            let mut hn = d0 & vp[w];

            let (hp_in, hn_in) = (hp_carry, hn_carry);
            if w + 1 < words {
                hp_carry = hp >> 63;
                hn_carry = hn >> 63;
            } else {
                hp_carry = u64::from(hp & last != 0);
                hn_carry = u64::from(hn & last != 0);
            }

            hp = (hp << 1) | hp_in;
            hn = (hn << 1) | hn_in;
            vp[w] = hn | !(d0 | hp);
            vn[w] = hp & d0;
        }
        score = score + hp_carry as usize - hn_carry as usize;
    }
    score
}

/// Two-row Wagner-Fischer table, O(min(|a|, |b|)) memory.
pub fn levenshtein_dp(a: &[u8], b: &[u8]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (j, &cb) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = j + 1;
        for (i, &ca) in short.iter().enumerate() {
            let above = row[i + 1];
            let cost = usize::from(ca != cb);
            row[i + 1] = (diag + cost).min(above + 1).min(row[i] + 1);
            diag = above;
        }
    }
    row[short.len()]
}

/// Distance restricted to the diagonal band `|i - j| <= max`.
///
/// Returns `Some(d)` with the exact distance when `d <= max`, and `None` when
/// the distance provably exceeds `max`.
pub fn banded_levenshtein(a: &[u8], b: &[u8], max: usize) -> Option<usize> {
    let (a, b) = strip_affixes(a, b);
    let (n, m) = (a.len(), b.len());
    if n.abs_diff(m) > max {
        return None;
    }
    if n == 0 || m == 0 {
        return Some(n.max(m));
    }
    let inf = max + 1;
    let mut prev = vec![inf; m + 1];
    let mut cur = vec![inf; m + 1];
    for (j, cell) in prev.iter_mut().enumerate().take(m.min(max) + 1) {
        *cell = j;
    }

    for i in 1..=n {
        let lo = i.saturating_sub(max);
        let hi = m.min(i + max);
        if lo > 0 {
            cur[lo - 1] = inf;
        }
        let mut row_min = inf;
        for j in lo..=hi {
            let value = if j == 0 {
                i
            } else {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                (prev[j - 1] + cost).min(prev[j] + 1).min(cur[j - 1] + 1)
            };
            let value = value.min(inf);
            cur[j] = value;
            row_min = row_min.min(value);
        }
        if hi < m {
            cur[hi + 1] = inf;
        }
        if row_min > max {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[m];
    (d <= max).then_some(d)
}

/// Exact distance if it is at most `max`, otherwise `None`.
///
/// Narrow bands go through the banded table; wide ones are cheaper with the
/// bit-parallel kernel followed by a comparison.
pub fn levenshtein_within(a: &[u8], b: &[u8], max: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > max {
        return None;
    }
    if 2 * max < 64 {
        banded_levenshtein(a, b, max)
    } else {
        let d = levenshtein(a, b);
        (d <= max).then_some(d)
    }
}

/// Maps a raw distance onto `[0, 1]`. Two empty strings are identical.
pub fn normalize(distance: usize, len_a: usize, len_b: usize, norm: Normalization) -> f64 {
    if distance == 0 {
        return 0.0;
    }
    let d = distance as f64;
    match norm {
        Normalization::Metric => 2.0 * d / ((len_a + len_b) as f64 + d),
        Normalization::MaxLength => d / len_a.max(len_b) as f64,
    }
}

/// Normalized Levenshtein distance with the metric normalization.
pub fn nld(a: &[u8], b: &[u8]) -> f64 {
    normalized_distance(a, b, Normalization::Metric)
}

pub fn normalized_distance(a: &[u8], b: &[u8], norm: Normalization) -> f64 {
    normalize(levenshtein(a, b), a.len(), b.len(), norm)
}

/// Largest raw distance that can still normalize to a value below
/// `threshold`. Conservative by one unit to absorb floating-point error; the
/// final comparison is always made on the exact normalized value.
pub fn distance_bound(len_a: usize, len_b: usize, threshold: f64, norm: Normalization) -> usize {
    let raw = match norm {
        Normalization::Metric => threshold * (len_a + len_b) as f64 / (2.0 - threshold),
        Normalization::MaxLength => threshold * len_a.max(len_b) as f64,
    };
    (raw.floor() as usize + 1).min(len_a.max(len_b))
}
