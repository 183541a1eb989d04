//! Exhaustive enumeration of ensemble subsets of size 1..=k_max in
//! size-ascending, then lexicographic order, with exact counting, ranked
//! cursors for restart, and range partitioning for parallel scans.

use crate::error::{Error, Result};

/// C(n, k) in exact integer arithmetic.
pub fn binomial(n: usize, k: usize) -> Result<u128> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k {
        // c * (n - k + i) is always divisible by i at this point.
        c = c
            .checked_mul((n - k + i) as u128)
            .ok_or(Error::CountOverflow { n, k_max: k })?
            / i as u128;
    }
    Ok(c)
}

/// Number of subsets of sizes 1..=k_max: sum of C(n, i).
pub fn count_subsets(n: usize, k_max: usize) -> Result<u128> {
    if k_max == 0 || k_max > n {
        return Err(Error::invalid(format!(
            "k_max must lie in [1, n]; got k_max = {k_max}, n = {n}"
        )));
    }
    let mut total: u128 = 0;
    for i in 1..=k_max {
        total = total
            .checked_add(binomial(n, i)?)
            .ok_or(Error::CountOverflow { n, k_max })?;
    }
    Ok(total)
}

/// Indices of one subset's members, strictly ascending, nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetId(Vec<u32>);

impl SubsetId {
    pub fn new(members: Vec<u32>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("a subset must have at least one member"));
        }
        if members.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "subset members must be strictly ascending, got {members:?}"
            )));
        }
        Ok(SubsetId(members))
    }

    pub(crate) fn from_sorted(members: Vec<u32>) -> Self {
        debug_assert!(!members.is_empty() && members.windows(2).all(|w| w[0] < w[1]));
        SubsetId(members)
    }

    pub fn members(&self) -> &[u32] {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.len()
    }
}

impl std::ops::Deref for SubsetId {
    type Target = [u32];

    fn deref(&self) -> &[u32] {
        &self.0
    }
}

/// Restart point in the enumeration: the `rank`-th (0-based, lexicographic)
/// combination of the given `size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsetCursor {
    pub size: usize,
    pub rank: u128,
}

/// Converts a global stream position into a (size, rank) cursor.
pub fn cursor_at(n: usize, k_max: usize, global: u128) -> Result<SubsetCursor> {
    let total = count_subsets(n, k_max)?;
    if global >= total {
        return Err(Error::invalid(format!(
            "position {global} beyond stream length {total}"
        )));
    }
    let mut remaining = global;
    for size in 1..=k_max {
        let c = binomial(n, size)?;
        if remaining < c {
            return Ok(SubsetCursor { size, rank: remaining });
        }
        remaining -= c;
    }
    unreachable!("position checked against total");
}

/// Lexicographic rank-to-combination mapping: the `rank`-th k-combination
/// of {0..n-1} in ascending lexicographic order.
pub fn unrank_combination(n: usize, k: usize, mut rank: u128, out: &mut Vec<u32>) {
    out.clear();
    let mut x = 0usize;
    for pos in 0..k {
        loop {
            let c = binomial(n - 1 - x, k - 1 - pos).expect("within enumerable range");
            if rank < c {
                break;
            }
            rank -= c;
            x += 1;
        }
        out.push(x as u32);
        x += 1;
    }
}

/// Advances `combo` to the next lexicographic k-combination of {0..n-1};
/// returns false when `combo` was the last one.
fn advance_combination(combo: &mut [u32], n: usize) -> bool {
    let k = combo.len();
    for i in (0..k).rev() {
        if (combo[i] as usize) < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Iterator over all subsets of size 1..=k_max, size-ascending then
/// lexicographic within a size.
pub struct SubsetIter {
    n: usize,
    k_max: usize,
    combo: Vec<u32>,
    remaining: u128,
    fresh: bool,
}

impl Iterator for SubsetIter {
    type Item = SubsetId;

    fn next(&mut self) -> Option<SubsetId> {
        if self.remaining == 0 {
            return None;
        }
        if self.fresh {
            self.fresh = false;
        } else if !advance_combination(&mut self.combo, self.n) {
            let size = self.combo.len() + 1;
            debug_assert!(size <= self.k_max);
            self.combo = (0..size as u32).collect();
        }
        self.remaining -= 1;
        Some(SubsetId::from_sorted(self.combo.clone()))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let r = usize::try_from(self.remaining).ok();
        (r.unwrap_or(usize::MAX), r)
    }
}

/// Enumerates every subset exactly once, from the beginning.
pub fn enumerate_subsets(n: usize, k_max: usize) -> Result<SubsetIter> {
    let total = count_subsets(n, k_max)?;
    Ok(SubsetIter {
        n,
        k_max,
        combo: vec![0],
        remaining: total,
        fresh: true,
    })
}

/// Resumes enumeration at a cursor.
pub fn enumerate_from(n: usize, k_max: usize, cursor: SubsetCursor) -> Result<SubsetIter> {
    let total = count_subsets(n, k_max)?;
    if cursor.size == 0 || cursor.size > k_max || cursor.rank >= binomial(n, cursor.size)? {
        return Err(Error::invalid(format!(
            "cursor (size {}, rank {}) outside the stream",
            cursor.size, cursor.rank
        )));
    }
    let mut consumed = cursor.rank;
    for size in 1..cursor.size {
        consumed += binomial(n, size)?;
    }
    let mut combo = Vec::with_capacity(cursor.size);
    unrank_combination(n, cursor.size, cursor.rank, &mut combo);
    Ok(SubsetIter {
        n,
        k_max,
        combo,
        remaining: total - consumed,
        fresh: true,
    })
}

/// Splits the global stream into `parts` contiguous index ranges of
/// near-equal length whose concatenation is the full stream.
pub fn partition_ranges(n: usize, k_max: usize, parts: usize) -> Result<Vec<(u128, u128)>> {
    if parts == 0 {
        return Err(Error::invalid("at least one partition is required"));
    }
    let total = count_subsets(n, k_max)?;
    let parts_u = parts as u128;
    let mut ranges = Vec::with_capacity(parts);
    for p in 0..parts_u {
        let start = total * p / parts_u;
        let end = total * (p + 1) / parts_u;
        if start < end {
            ranges.push((start, end));
        }
    }
    Ok(ranges)
}

/// Visits the subsets at global positions [start, end), in order, without
/// allocating per subset. The callback receives the global position and the
/// member slice.
pub fn walk_range<F>(n: usize, k_max: usize, start: u128, end: u128, mut visit: F) -> Result<()>
where
    F: FnMut(u128, &[u32]),
{
    let total = count_subsets(n, k_max)?;
    if start > end || end > total {
        return Err(Error::invalid(format!(
            "range [{start}, {end}) outside stream of length {total}"
        )));
    }
    if start == end {
        return Ok(());
    }
    let cursor = cursor_at(n, k_max, start)?;
    let mut combo = Vec::with_capacity(k_max);
    unrank_combination(n, cursor.size, cursor.rank, &mut combo);
    let mut pos = start;
    loop {
        visit(pos, &combo);
        pos += 1;
        if pos == end {
            return Ok(());
        }
        if !advance_combination(&mut combo, n) {
            let size = combo.len() + 1;
            debug_assert!(size <= k_max, "ran past the last size before the range end");
            combo.clear();
            combo.extend(0..size as u32);
        }
    }
}
