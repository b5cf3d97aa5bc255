//! Building blocks for the demo programs: block partitions, data
//! redistribution, the relaxation kernel and small run reports.

pub mod refine;
pub mod relax;

use std::collections::BTreeMap;
use std::fmt::{Debug, Display};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::checkpoint::write_atomic;
use crate::runtime::RuntimeError;
use crate::world::Rank;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("PartitionMismatch: {0}")]
    PartitionMismatch(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("fork returned {0}")]
    Fork(i32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Contiguous blocks tiling `0..n` over `p` owners; the first `n % p` blocks
/// are one element longer.
pub fn partition(n: usize, p: usize) -> Vec<Range<usize>> {
    assert!(p > 0, "partition over zero owners");
    let (base, extra) = (n / p, n % p);
    let mut lo = 0;
    (0..p)
        .map(|i| {
            let hi = lo + base + usize::from(i < extra);
            let r = lo..hi;
            lo = hi;
            r
        })
        .collect()
}

/// Who owns what: `ranges[i]` belongs to `members[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub members: Vec<Rank>,
    pub ranges: Vec<Range<usize>>,
}

impl Layout {
    pub fn blocks(n: usize, members: Vec<Rank>) -> Layout {
        let ranges = partition(n, members.len());
        Layout { members, ranges }
    }

    pub fn len(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, rank: Rank) -> Option<usize> {
        self.members.iter().position(|&r| r == rank)
    }

    pub fn range_of(&self, rank: Rank) -> Option<Range<usize>> {
        self.position(rank).map(|i| self.ranges[i].clone())
    }

    /// Ranges must be non-overlapping, ordered by position, and cover
    /// `0..n` with no holes.
    pub fn check(&self, n: usize) -> Result<(), DemoError> {
        if self.members.len() != self.ranges.len() {
            return Err(DemoError::PartitionMismatch(format!(
                "{} members but {} ranges",
                self.members.len(),
                self.ranges.len()
            )));
        }
        let mut next = 0;
        for (r, range) in self.members.iter().zip(&self.ranges) {
            if range.start != next || range.end < range.start {
                return Err(DemoError::PartitionMismatch(format!(
                    "rank {r} claims {range:?}, expected a block starting at {next}"
                )));
            }
            next = range.end;
        }
        if next != n {
            return Err(DemoError::PartitionMismatch(format!(
                "blocks cover 0..{next}, grid has {n}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transfer {
    pub from: Rank,
    pub to: Rank,
    pub range: Range<usize>,
}

/// Point-to-point moves taking data laid out as `old` to `new`, one per
/// overlapping (old block, new block) pair, in ascending index order.
pub fn plan_transfers(old: &Layout, new: &Layout) -> Result<Vec<Transfer>, DemoError> {
    let n = old.len();
    old.check(n)?;
    new.check(n)?;
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < old.ranges.len() && j < new.ranges.len() {
        let (a, b) = (&old.ranges[i], &new.ranges[j]);
        let lo = a.start.max(b.start);
        let hi = a.end.min(b.end);
        if lo < hi {
            out.push(Transfer {
                from: old.members[i],
                to: new.members[j],
                range: lo..hi,
            });
        }
        if a.end <= b.end {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(out)
}

/// A grid value: floating point or an integer variant with exact arithmetic.
pub trait Value: Copy + PartialEq + Debug + Display + FromStr + Send + 'static {
    /// New value from the two neighbours.
    fn relax(left: Self, right: Self) -> Self;
    fn to_bits(self) -> u64;
    fn from_bits(bits: u64) -> Self;
}

impl Value for f64 {
    fn relax(left: f64, right: f64) -> f64 {
        (left + right) / 2.0
    }
    fn to_bits(self) -> u64 {
        f64::to_bits(self)
    }
    fn from_bits(bits: u64) -> f64 {
        f64::from_bits(bits)
    }
}

impl Value for i64 {
    fn relax(left: i64, right: i64) -> i64 {
        (left + right).div_euclid(2)
    }
    fn to_bits(self) -> u64 {
        self as u64
    }
    fn from_bits(bits: u64) -> i64 {
        bits as i64
    }
}

pub fn encode_values<V: Value>(values: &[V]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_bits().to_le_bytes()).collect()
}

pub fn decode_values<V: Value>(bytes: &[u8]) -> Result<Vec<V>, DemoError> {
    if !bytes.len().is_multiple_of(8) {
        return Err(DemoError::Protocol(format!(
            "{} bytes is not a whole number of values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| V::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect())
}

/// One Jacobi sweep of the block `lo..lo+block.len()` of an `n`-point grid
/// whose end points are fixed. `left`/`right` are the neighbouring values,
/// absent at the grid ends.
pub fn sweep_block<V: Value>(block: &[V], lo: usize, n: usize, left: Option<V>, right: Option<V>) -> Vec<V> {
    let at = |i: isize| -> V {
        if i < 0 {
            left.expect("left halo")
        } else if i as usize >= block.len() {
            right.expect("right halo")
        } else {
            block[i as usize]
        }
    };
    (0..block.len())
        .map(|k| {
            let g = lo + k;
            if g == 0 || g == n - 1 {
                block[k]
            } else {
                V::relax(at(k as isize - 1), at(k as isize + 1))
            }
        })
        .collect()
}

/// Linear interpolation of a coarse grid onto `fine` points with matching
/// end points.
pub fn interpolate(coarse: &[f64], fine: usize) -> Vec<f64> {
    let gc = coarse.len();
    assert!(gc >= 2 && fine >= 2, "interpolation needs at least two points");
    let (num, den) = (gc - 1, fine - 1);
    (0..fine)
        .map(|j| {
            let i0 = j * num / den;
            let rem = j * num % den;
            if rem == 0 {
                coarse[i0]
            } else {
                let t = rem as f64 / den as f64;
                coarse[i0] + (coarse[i0 + 1] - coarse[i0]) * t
            }
        })
        .collect()
}

pub fn format_values<V: Value>(values: &[V]) -> String {
    values.iter().map(|v| format!("{v}\n")).collect()
}

pub fn parse_values<V: Value>(text: &str) -> Result<Vec<V>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<V>().map_err(|_| format!("bad value {s:?}")))
        .collect()
}

/// `key value` lines written by demo and probe ranks for their drivers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Report(pub BTreeMap<String, String>);

impl Report {
    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn parse_key<T: FromStr>(&self, key: &str) -> Option<T> {
        self.get(key)?.parse().ok()
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Report {
        Report(
            text.lines()
                .filter_map(|l| l.split_once(' '))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        )
    }

    pub fn write(&self, dir: &Path, rank: Rank) -> std::io::Result<()> {
        write_atomic(&dir.join(format!("rank-{rank}.txt")), self.to_text().as_bytes())
    }

    pub fn read(dir: &Path, rank: Rank) -> std::io::Result<Report> {
        Ok(Report::parse(&std::fs::read_to_string(
            dir.join(format!("rank-{rank}.txt")),
        )?))
    }
}

/// Comma-separated rank list, `NULL` for none.
pub fn format_ranks(ranks: Option<&[Rank]>) -> String {
    match ranks {
        None => "NULL".into(),
        Some(r) => r.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(","),
    }
}
