//! Integer frequency tables over a contiguous symbol window.

use crate::codec::rate::{bin_probability, Dist};
use crate::error::{Error, Result};

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
pub const SYM_MIN: i32 = -255;
pub const SYM_MAX: i32 = 255;

/// Cumulative counts for the symbols `min..=max` followed, optionally, by
/// an escape entry that announces a raw 32-bit value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyTable {
    min: i32,
    max: i32,
    escape: bool,
    /// `cum[i]` is the start of entry `i`; the last element is the total.
    cum: Vec<u32>,
}

impl FrequencyTable {
    /// Counts given directly, one per symbol (and one more for the escape
    /// when `escape` is set). Every count must be positive.
    pub fn from_counts(min: i32, counts: &[u32], escape: bool) -> Result<Self> {
        let symbols = counts.len() - usize::from(escape && !counts.is_empty());
        if symbols == 0 {
            return Err(Error::InvalidArgument("frequency table needs at least one symbol".into()));
        }
        if counts.contains(&0) {
            return Err(Error::InvalidArgument("every frequency must be positive".into()));
        }
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total > TOTAL as u64 {
            return Err(Error::InvalidArgument(format!("frequencies sum to {total}, above {TOTAL}")));
        }
        let max = min
            .checked_add(symbols as i32 - 1)
            .ok_or_else(|| Error::InvalidArgument("symbol window overflows".into()))?;
        let mut cum = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0;
        cum.push(0);
        for &c in counts {
            acc += c;
            cum.push(acc);
        }
        Ok(Self { min, max, escape, cum })
    }

    /// Quantizes probabilities of `min..` (and the leftover mass, assigned to
    /// the escape entry when present) into counts summing to [`TOTAL`]:
    /// one guaranteed count each, the rest in proportion, any remainder to
    /// the most probable entry.
    pub fn from_probabilities(min: i32, probs: &[f64], escape: bool) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty symbol range".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("probabilities must be finite and nonnegative".into()));
        }
        let mut p = probs.to_vec();
        let mass: f64 = p.iter().sum();
        if escape {
            p.push((1.0 - mass).max(0.0));
        }
        let norm: f64 = p.iter().sum();
        if norm <= 0.0 {
            return Err(Error::InvalidArgument("probabilities sum to zero".into()));
        }
        if p.len() > TOTAL as usize {
            return Err(Error::InvalidArgument("alphabet larger than the frequency budget".into()));
        }
        let spare = (TOTAL as usize - p.len()) as f64;
        let mut counts: Vec<u32> = p.iter().map(|&v| 1 + (v / norm * spare).floor() as u32).collect();
        let used: u32 = counts.iter().sum();
        let mut top = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[top] {
                top = i;
            }
        }
        counts[top] += TOTAL - used;
        Self::from_counts(min, &counts, escape)
    }

    /// Table of a discretized location-scale distribution on a window around
    /// the location wide enough to hold all but a negligible tail, clipped to
    /// [`SYM_MIN`]..=[`SYM_MAX`], with an escape for everything else.
    pub fn discretized(dist: Dist, loc: f64, scale: f64) -> Result<Self> {
        if !loc.is_finite() || !scale.is_finite() || scale <= 0.0 {
            return Err(Error::InvalidArgument(format!("invalid distribution loc={loc}, scale={scale}")));
        }
        let tails = match dist {
            Dist::Gaussian => 12.0,
            Dist::Logistic => 40.0,
        };
        let center = loc.round().clamp(SYM_MIN as f64, SYM_MAX as f64) as i32;
        let half = (tails * scale).ceil().min((SYM_MAX - SYM_MIN) as f64) as i32 + 1;
        let lo = (center - half).max(SYM_MIN);
        let hi = (center + half).min(SYM_MAX);
        let probs: Vec<f64> = (lo..=hi).map(|k| bin_probability(dist, k as f64, loc, scale)).collect();
        Self::from_probabilities(lo, &probs, true)
    }

    pub fn min(&self) -> i32 {
        self.min
    }

    pub fn max(&self) -> i32 {
        self.max
    }

    pub fn has_escape(&self) -> bool {
        self.escape
    }

    /// Number of entries including the escape.
    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> u32 {
        *self.cum.last().expect("table is non-empty")
    }

    pub fn escape_index(&self) -> Option<usize> {
        self.escape.then(|| self.len() - 1)
    }

    /// `(start, frequency)` of entry `i`.
    pub fn span(&self, i: usize) -> (u32, u32) {
        (self.cum[i], self.cum[i + 1] - self.cum[i])
    }

    pub fn counts(&self) -> Vec<u32> {
        self.cum.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Entry index of a symbol, `None` when it needs the escape.
    pub fn index_of(&self, symbol: i32) -> Option<usize> {
        (self.min..=self.max).contains(&symbol).then(|| (symbol - self.min) as usize)
    }

    /// Entry whose span contains `target`.
    pub fn lookup(&self, target: u32) -> Option<usize> {
        if target >= self.total() {
            return None;
        }
        Some(self.cum.partition_point(|&c| c <= target) - 1)
    }

    pub fn symbol(&self, index: usize) -> i32 {
        self.min + index as i32
    }

    /// Ideal code length of `symbol` under the table, in bits.
    pub fn cost(&self, symbol: i32) -> f64 {
        let i = match self.index_of(symbol) {
            Some(i) => i,
            None => return f64::INFINITY,
        };
        let (_, f) = self.span(i);
        -libm::log2(f as f64 / self.total() as f64)
    }
}
