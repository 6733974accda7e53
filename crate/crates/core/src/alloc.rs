//! Subcarrier occupancy patterns and the allocation families under study.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// Label width of the pattern estimator.
pub const LABEL_WIDTH: usize = 64;

const MAX_PLACEMENT_RETRIES: usize = 10_000;

/// Binary occupancy over a band of subcarriers; always has at least one
/// active entry.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BandAllocation {
    occupancy: Vec<bool>,
}

impl BandAllocation {
    pub fn from_bools(occupancy: Vec<bool>) -> Result<Self> {
        if !occupancy.iter().any(|&b| b) {
            return invalid("allocation has no active subcarrier");
        }
        Ok(Self { occupancy })
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return invalid(format!("occupancy entries must be 0 or 1, got {b}"));
        }
        Self::from_bools(bits.iter().map(|&b| b == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.occupancy.get(i).copied().unwrap_or(false)
    }

    pub fn count_active(&self) -> usize {
        self.occupancy.iter().filter(|&&b| b).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.occupancy
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn as_bools(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.occupancy.iter().map(|&b| u8::from(b)).collect()
    }

    /// Zero-pad (never truncate) to `width` label positions.
    pub fn padded_bits(&self, width: usize) -> Result<Vec<u8>> {
        if self.len() > width {
            return invalid(format!(
                "allocation of {} subcarriers does not fit a {width}-wide label",
                self.len()
            ));
        }
        let mut bits = self.to_bits();
        bits.resize(width, 0);
        Ok(bits)
    }

    /// Ratio of active to total subcarriers.
    pub fn rate(&self) -> f64 {
        self.count_active() as f64 / self.len() as f64
    }
}

impl fmt::Debug for BandAllocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self
            .occupancy
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        write!(f, "BandAllocation({s})")
    }
}

/// Allocation family tag, also used as the on-disk code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ofdm,
    Struct1,
    Struct2,
    Random,
    Interleaved,
}

impl Family {
    pub fn code(self) -> u8 {
        match self {
            Family::Ofdm => 0,
            Family::Struct1 => 1,
            Family::Struct2 => 2,
            Family::Random => 3,
            Family::Interleaved => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Family::Ofdm,
            1 => Family::Struct1,
            2 => Family::Struct2,
            3 => Family::Random,
            4 => Family::Interleaved,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Ofdm => "ofdm",
            Family::Struct1 => "struct1",
            Family::Struct2 => "struct2",
            Family::Random => "random",
            Family::Interleaved => "interleaved",
        }
    }
}

/// Family parameters that produced an allocation (zero where unused).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuxLabels {
    pub q: u8,
    pub c: u8,
    pub q1: u8,
    pub q2: u8,
    pub q3: u8,
}

/// Inclusive integer range used by the family specs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
}

impl IntRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn within(&self, lo: usize, hi: usize) -> bool {
        lo <= self.min && self.min <= self.max && self.max <= hi
    }

    fn sample(&self, hi_cap: usize, rng: &mut Rng) -> Option<usize> {
        let hi = self.max.min(hi_cap);
        (self.min <= hi).then(|| rng.random_range(self.min..=hi))
    }
}

/// Description of an allocation family and its parameter ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum AllocSpec {
    Ofdm,
    Struct1 {
        #[serde(default = "AllocSpec::struct1_q")]
        q: IntRange,
        #[serde(default = "AllocSpec::struct1_c")]
        c: IntRange,
        /// Restrict draws to this active/total ratio (to the nearest subcarrier).
        #[serde(default)]
        rate: Option<f64>,
    },
    Struct2 {
        #[serde(default = "AllocSpec::struct2_c")]
        c: IntRange,
        #[serde(default = "AllocSpec::struct2_q")]
        q: IntRange,
    },
    Random {
        #[serde(default = "AllocSpec::random_k")]
        active: IntRange,
    },
    Interleaved {
        q: usize,
    },
}

impl AllocSpec {
    fn struct1_q() -> IntRange {
        IntRange::new(1, 6)
    }
    fn struct1_c() -> IntRange {
        IntRange::new(4, 53)
    }
    fn struct2_c() -> IntRange {
        IntRange::new(3, 15)
    }
    fn struct2_q() -> IntRange {
        IntRange::new(1, 8)
    }
    fn random_k() -> IntRange {
        IntRange::new(4, 44)
    }

    pub fn struct1() -> Self {
        AllocSpec::Struct1 {
            q: Self::struct1_q(),
            c: Self::struct1_c(),
            rate: None,
        }
    }

    pub fn struct2() -> Self {
        AllocSpec::Struct2 {
            c: Self::struct2_c(),
            q: Self::struct2_q(),
        }
    }

    pub fn random() -> Self {
        AllocSpec::Random {
            active: Self::random_k(),
        }
    }

    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Ofdm => AllocSpec::Ofdm,
            Family::Struct1 => Self::struct1(),
            Family::Struct2 => Self::struct2(),
            Family::Random => Self::random(),
            Family::Interleaved => AllocSpec::Interleaved { q: 4 },
        }
    }

    pub fn family(&self) -> Family {
        match self {
            AllocSpec::Ofdm => Family::Ofdm,
            AllocSpec::Struct1 { .. } => Family::Struct1,
            AllocSpec::Struct2 { .. } => Family::Struct2,
            AllocSpec::Random { .. } => Family::Random,
            AllocSpec::Interleaved { .. } => Family::Interleaved,
        }
    }

    /// Check the parameter ranges against the family definitions.
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            AllocSpec::Ofdm => true,
            AllocSpec::Struct1 { q, c, rate } => {
                q.within(1, 6) && c.within(4, 53) && rate.is_none_or(|r| r > 0.0 && r <= 1.0)
            }
            AllocSpec::Struct2 { c, q } => c.within(3, 15) && q.within(1, 8),
            AllocSpec::Random { active } => active.within(4, 44),
            AllocSpec::Interleaved { q } => *q >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("allocation spec out of range: {self:?}")))
        }
    }

    /// Draw an allocation over `l` subcarriers. Ranges are narrowed to what
    /// fits in the band.
    pub fn draw(&self, l: usize, rng: &mut Rng) -> Result<(BandAllocation, AuxLabels)> {
        match *self {
            AllocSpec::Ofdm => Ok((gen_ofdm(l)?, AuxLabels::default())),
            AllocSpec::Struct1 { q, c, rate } => {
                let target = rate.map(|r| (r * l as f64).round() as usize);
                for _ in 0..MAX_PLACEMENT_RETRIES {
                    let qv = q.sample(l, rng).ok_or_else(|| infeasible(self, l))?;
                    let cv = c
                        .sample(l.saturating_sub(1), rng)
                        .ok_or_else(|| infeasible(self, l))?;
                    if let Some(t) = target {
                        if struct1_count(l, qv, cv) != t {
                            continue;
                        }
                    }
                    let a = gen_struct1(l, qv, cv, rng)?;
                    let aux = AuxLabels {
                        q: qv as u8,
                        c: cv as u8,
                        ..Default::default()
                    };
                    return Ok((a, aux));
                }
                Err(infeasible(self, l))
            }
            AllocSpec::Struct2 { c, q } => {
                let cv = c
                    .sample(l.saturating_sub(1) / 2, rng)
                    .ok_or_else(|| infeasible(self, l))?;
                let mut qs = [0usize; 3];
                for v in &mut qs {
                    *v = q.sample(usize::MAX, rng).expect("validated range");
                }
                let a = gen_struct2(l, cv, qs[0], qs[1], qs[2], rng)?;
                let aux = AuxLabels {
                    c: cv as u8,
                    q1: qs[0] as u8,
                    q2: qs[1] as u8,
                    q3: qs[2] as u8,
                    ..Default::default()
                };
                Ok((a, aux))
            }
            AllocSpec::Random { active } => {
                let hi = active.max.min(l);
                let a = gen_random(l, active.min.min(hi), hi, rng)?;
                Ok((a, AuxLabels::default()))
            }
            AllocSpec::Interleaved { q } => {
                let aux = AuxLabels {
                    q: q.min(255) as u8,
                    ..Default::default()
                };
                Ok((gen_interleaved(l, q)?, aux))
            }
        }
    }
}

fn infeasible(spec: &AllocSpec, l: usize) -> Error {
    Error::InvalidInput(format!("{spec:?} cannot be placed in {l} subcarriers"))
}

/// Every subcarrier active.
pub fn gen_ofdm(l: usize) -> Result<BandAllocation> {
    if l == 0 {
        return invalid("band must have at least one subcarrier");
    }
    BandAllocation::from_bools(vec![true; l])
}

/// Mark an interleaved lattice anchored on `edge`, stepping by `gap + 1` in
/// the direction of `step_right` while staying in `[lo, hi)`.
fn fill_lattice(occ: &mut [bool], edge: isize, gap: usize, step_right: bool, lo: isize, hi: isize) {
    let period = (gap + 1) as isize;
    let mut pos = if step_right { edge + period } else { edge - period };
    while pos >= lo && pos < hi {
        occ[pos as usize] = true;
        pos = if step_right { pos + period } else { pos - period };
    }
}

/// Structure-1 pattern with the contiguous block starting at `start`.
pub fn struct1_at(l: usize, q: usize, c: usize, start: usize) -> Result<BandAllocation> {
    if q == 0 || c == 0 {
        return invalid("structure-1 needs q >= 1 and c >= 1");
    }
    if c > l || start + c > l {
        return invalid(format!("block of {c} at {start} does not fit {l} subcarriers"));
    }
    let mut occ = vec![false; l];
    occ[start..start + c].iter_mut().for_each(|b| *b = true);
    let (s, e) = (start as isize, (start + c) as isize);
    fill_lattice(&mut occ, s, q, false, 0, s);
    fill_lattice(&mut occ, e - 1, q, true, e, l as isize);
    BandAllocation::from_bools(occ)
}

/// Active count of a structure-1 pattern; independent of block position
/// when it is computed over the whole lattice.
pub fn struct1_count(l: usize, q: usize, c: usize) -> usize {
    // Block plus one single every q + 1 subcarriers of the remaining band;
    // exact for the left-edge placement, which is what rate targeting uses.
    c + (l - c) / (q + 1)
}

/// Structure 1: one contiguous block of `c` active subcarriers at a uniformly
/// random position, the rest of the band interleaved with `q` inactive
/// subcarriers between consecutive active ones.
pub fn gen_struct1(l: usize, q: usize, c: usize, rng: &mut Rng) -> Result<BandAllocation> {
    if c > l {
        return invalid(format!("block length {c} exceeds band of {l}"));
    }
    let start = rng.random_range(0..=l - c);
    struct1_at(l, q, c, start)
}

/// Structure-2 pattern with blocks at `p1 < p2`.
pub fn struct2_at(
    l: usize,
    c: usize,
    q: [usize; 3],
    p1: usize,
    p2: usize,
) -> Result<BandAllocation> {
    if c == 0 || q.contains(&0) {
        return invalid("structure-2 needs c >= 1 and all q >= 1");
    }
    if p2 < p1 + c + 1 || p2 + c > l {
        return invalid(format!("blocks at {p1} and {p2} (length {c}) do not fit {l}"));
    }
    let mut occ = vec![false; l];
    occ[p1..p1 + c].iter_mut().for_each(|b| *b = true);
    occ[p2..p2 + c].iter_mut().for_each(|b| *b = true);
    let (p1, e1, p2, e2) = (p1 as isize, (p1 + c) as isize, p2 as isize, (p2 + c) as isize);
    fill_lattice(&mut occ, p1, q[0], false, 0, p1);
    // Keep at least one inactive subcarrier in front of the second block.
    fill_lattice(&mut occ, e1 - 1, q[1], true, e1, p2 - 1);
    fill_lattice(&mut occ, e2 - 1, q[2], true, e2, l as isize);
    BandAllocation::from_bools(occ)
}

/// Structure 2: two non-touching blocks of length `c` at random positions;
/// interleaving factor `q1` before the first block, `q2` between the blocks
/// and `q3` after the second.
pub fn gen_struct2(
    l: usize,
    c: usize,
    q1: usize,
    q2: usize,
    q3: usize,
    rng: &mut Rng,
) -> Result<BandAllocation> {
    if 2 * c + 1 > l {
        return invalid(format!("two blocks of {c} cannot be separated in {l} subcarriers"));
    }
    for _ in 0..MAX_PLACEMENT_RETRIES {
        let a = rng.random_range(0..=l - c);
        let b = rng.random_range(0..=l - c);
        let (p1, p2) = (a.min(b), a.max(b));
        if p2 > p1 + c {
            return struct2_at(l, c, [q1, q2, q3], p1, p2);
        }
    }
    invalid(format!(
        "no separated placement found for c={c} in {l} subcarriers after {MAX_PLACEMENT_RETRIES} draws"
    ))
}

fn ln_choose(n: usize, k: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// Uniformly random occupancy (fair coin per subcarrier) conditioned on the
/// active count lying in `[k_min, k_max]`.
pub fn gen_random(l: usize, k_min: usize, k_max: usize, rng: &mut Rng) -> Result<BandAllocation> {
    if k_min == 0 || k_min > k_max || k_max > l {
        return invalid(format!("need 1 <= k_min <= k_max <= {l}, got [{k_min}, {k_max}]"));
    }
    // Count k has weight C(l, k); then a uniform k-subset.
    let logw: Vec<f64> = (k_min..=k_max).map(|k| ln_choose(l, k)).collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|v| (v - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut k = k_max;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            k = k_min + i;
            break;
        }
        u -= wi;
    }
    let mut idx: Vec<usize> = (0..l).collect();
    for i in 0..k {
        let j = rng.random_range(i..l);
        idx.swap(i, j);
    }
    let mut occ = vec![false; l];
    idx[..k].iter().for_each(|&i| occ[i] = true);
    BandAllocation::from_bools(occ)
}

/// Interleaved allocation: subcarriers `0, q, 2q, ...` active.
pub fn gen_interleaved(n: usize, q: usize) -> Result<BandAllocation> {
    if q == 0 || n == 0 {
        return invalid("interleaving needs q >= 1 and a non-empty band");
    }
    BandAllocation::from_bools((0..n).map(|i| i % q == 0).collect())
}

/// Pattern recognizers for the structured families. These parse run lengths
/// and do not share code with the generators.
pub mod validate {
    /// Maximal runs of ones as `(start, len)`.
    pub fn runs(bits: &[bool]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < bits.len() {
            if bits[i] {
                let s = i;
                while i < bits.len() && bits[i] {
                    i += 1;
                }
                out.push((s, i - s));
            } else {
                i += 1;
            }
        }
        out
    }

    fn gaps(runs: &[(usize, usize)]) -> Vec<usize> {
        runs.windows(2).map(|w| w[1].0 - (w[0].0 + w[0].1)).collect()
    }

    /// Recognized structure-1 geometry.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Struct1Shape {
        pub block_start: usize,
        pub c: usize,
        /// `None` when no interleaved single is present.
        pub q: Option<usize>,
    }

    pub fn struct1(bits: &[bool]) -> Option<Struct1Shape> {
        let r = runs(bits);
        let blocks: Vec<_> = r.iter().filter(|(_, len)| *len > 1).collect();
        if blocks.len() != 1 || blocks[0].1 < 4 {
            return None;
        }
        let (block_start, c) = *blocks[0];
        let g = gaps(&r);
        let q = g.first().copied();
        if let Some(q) = q {
            if q == 0 || g.iter().any(|&x| x != q) {
                return None;
            }
            let lead = r[0].0;
            let trail = bits.len() - (r.last().unwrap().0 + r.last().unwrap().1);
            if lead > q || trail > q {
                return None;
            }
        }
        Some(Struct1Shape { block_start, c, q })
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Struct2Shape {
        pub starts: (usize, usize),
        pub c: usize,
    }

    pub fn struct2(bits: &[bool]) -> Option<Struct2Shape> {
        let r = runs(bits);
        let block_idx: Vec<usize> = (0..r.len()).filter(|&i| r[i].1 > 1).collect();
        if block_idx.len() != 2 {
            return None;
        }
        let (i1, i2) = (block_idx[0], block_idx[1]);
        let c = r[i1].1;
        if c < 3 || r[i2].1 != c {
            return None;
        }
        let g = gaps(&r);
        // Left region: gaps r[0..=i1] constant, leading zeros no larger.
        let left = &g[..i1];
        if let Some(&q1) = left.first() {
            if left.iter().any(|&x| x != q1) || r[0].0 > q1 {
                return None;
            }
        }
        // Between: constant except the last gap (before block 2), which may
        // be anywhere in 1..=q2 + 1.
        let between = &g[i1..i2];
        if between.len() > 1 {
            let q2 = between[0];
            let (body, last) = between.split_at(between.len() - 1);
            if body.iter().any(|&x| x != q2) || last[0] == 0 || last[0] > q2 + 1 {
                return None;
            }
        }
        let right = &g[i2..];
        if let Some(&q3) = right.first() {
            let end = r.last().unwrap().0 + 1;
            if right.iter().any(|&x| x != q3) || bits.len() - end > q3 {
                return None;
            }
        }
        Some(Struct2Shape {
            starts: (r[i1].0, r[i2].0),
            c,
        })
    }

    /// Active indices exactly `0, q, 2q, ...`.
    pub fn interleaved(bits: &[bool], q: usize) -> bool {
        q > 0 && bits.iter().enumerate().all(|(i, &b)| b == (i % q == 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn bits(a: &BandAllocation) -> Vec<u8> {
        a.to_bits()
    }

    #[test]
    fn ofdm_all_active() {
        assert_eq!(bits(&gen_ofdm(4).unwrap()), vec![1, 1, 1, 1]);
        for l in 1..=64 {
            assert_eq!(gen_ofdm(l).unwrap().count_active(), l);
        }
    }

    #[test]
    fn struct1_left_edge_example() {
        let a = struct1_at(12, 2, 4, 0).unwrap();
        assert_eq!(bits(&a), vec![1, 1, 1, 1, 0, 0, 1, 0, 0, 1, 0, 0]);
        let shape = validate::struct1(a.as_bools()).unwrap();
        assert_eq!((shape.c, shape.q), (4, Some(2)));
    }

    #[test]
    fn struct1_q1_alternates() {
        let a = struct1_at(16, 1, 4, 6).unwrap();
        let b = a.to_bits();
        assert_eq!(&b[..6], &[1, 0, 1, 0, 1, 0]);
        assert_eq!(&b[10..], &[0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn struct1_rejects_oversized_block() {
        let mut rng = rng_from_seed(0);
        assert!(gen_struct1(8, 2, 9, &mut rng).is_err());
    }

    #[test]
    fn struct1_draws_validate() {
        let mut rng = rng_from_seed(5);
        for _ in 0..10_000 {
            let q = rng.random_range(1..=6);
            let c = rng.random_range(4..=53);
            let a = gen_struct1(64, q, c, &mut rng).unwrap();
            let s = validate::struct1(a.as_bools()).expect("struct1 shape");
            assert_eq!(s.c, c);
            if let Some(found) = s.q {
                assert_eq!(found, q);
            }
        }
    }

    #[test]
    fn struct1_count_matches_left_placement() {
        for q in 1..=6 {
            for c in 4..=53 {
                assert_eq!(struct1_at(64, q, c, 0).unwrap().count_active(), struct1_count(64, q, c));
            }
        }
    }

    #[test]
    fn struct2_minimal_case() {
        let mut rng = rng_from_seed(9);
        for _ in 0..200 {
            let a = gen_struct2(16, 3, 1, 1, 1, &mut rng).unwrap();
            let s = validate::struct2(a.as_bools()).expect("struct2 shape");
            assert_eq!(s.c, 3);
        }
    }

    #[test]
    fn struct2_never_merges_blocks() {
        let mut rng = rng_from_seed(10);
        for _ in 0..10_000 {
            let c = rng.random_range(3..=15);
            let q: Vec<usize> = (0..3).map(|_| rng.random_range(1..=8)).collect();
            let a = gen_struct2(64, c, q[0], q[1], q[2], &mut rng).unwrap();
            let r = validate::runs(a.as_bools());
            assert!(r.iter().all(|&(_, len)| len != 2 * c));
            assert!(validate::struct2(a.as_bools()).is_some(), "{a:?}");
        }
    }

    #[test]
    fn struct2_range_endpoints() {
        let mut rng = rng_from_seed(1);
        assert!(gen_struct2(64, 3, 8, 8, 8, &mut rng).is_ok());
        assert!(gen_struct2(64, 15, 1, 1, 1, &mut rng).is_ok());
        assert!(gen_struct2(10, 5, 1, 1, 1, &mut rng).is_err());
    }

    #[test]
    fn random_forced_count() {
        let mut rng = rng_from_seed(2);
        for _ in 0..100 {
            assert_eq!(gen_random(64, 4, 4, &mut rng).unwrap().count_active(), 4);
        }
    }

    #[test]
    fn random_counts_in_range() {
        let mut rng = rng_from_seed(3);
        for _ in 0..2_000 {
            let k = gen_random(64, 4, 44, &mut rng).unwrap().count_active();
            assert!((4..=44).contains(&k));
        }
    }

    #[test]
    fn interleaved_examples() {
        assert_eq!(bits(&gen_interleaved(8, 4).unwrap()), vec![1, 0, 0, 0, 1, 0, 0, 0]);
        let a = gen_interleaved(256, 5).unwrap();
        assert_eq!(a.count_active(), 256usize.div_ceil(5));
        assert_eq!(a.count_active(), 52);
        assert_eq!(*a.active_indices().last().unwrap(), 255);
        assert_eq!(gen_interleaved(10, 1).unwrap().count_active(), 10);
        assert!(validate::interleaved(a.as_bools(), 5));
    }

    #[test]
    fn padding_appends_zeros() {
        let a = gen_ofdm(16).unwrap();
        let p = a.padded_bits(LABEL_WIDTH).unwrap();
        assert_eq!(p.len(), 64);
        assert!(p[..16].iter().all(|&b| b == 1) && p[16..].iter().all(|&b| b == 0));
    }

    #[test]
    fn empty_allocation_rejected() {
        assert!(BandAllocation::from_bools(vec![false; 4]).is_err());
    }

    #[test]
    fn spec_ranges_checked() {
        assert!(AllocSpec::struct1().validate().is_ok());
        let bad = AllocSpec::Struct1 {
            q: IntRange::new(0, 6),
            c: IntRange::new(4, 53),
            rate: None,
        };
        assert!(bad.validate().is_err());
        let bad = AllocSpec::Random {
            active: IntRange::new(4, 50),
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn draws_fit_small_bands() {
        let mut rng = rng_from_seed(4);
        for l in [16, 32, 64] {
            for fam in [Family::Ofdm, Family::Struct1, Family::Struct2, Family::Random] {
                for _ in 0..200 {
                    let (a, _) = AllocSpec::for_family(fam).draw(l, &mut rng).unwrap();
                    assert_eq!(a.len(), l);
                }
            }
        }
    }

    #[test]
    fn rate_targeting() {
        let mut rng = rng_from_seed(8);
        for r in [0.3, 0.5, 0.75] {
            let spec = AllocSpec::Struct1 {
                q: IntRange::new(1, 6),
                c: IntRange::new(4, 53),
                rate: Some(r),
            };
            for _ in 0..50 {
                let (a, _) = spec.draw(64, &mut rng).unwrap();
                let target = (r * 64.0).round() as i64;
                assert!((a.count_active() as i64 - target).abs() <= 1, "{r} {a:?}");
            }
        }
    }
}
