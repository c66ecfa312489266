//! Bin grids, conditional histograms and the two interval kernels.
//!
//! Bins are indexed from 0. A [`BinInterval`] is an inclusive range of bin
//! indices; the empty interval is represented as `None` wherever a set may be
//! empty.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ChrError, Result};

/// Slack used when comparing an interval mass against a target level.
pub const FEASIBILITY_TOL: f64 = 1e-12;
/// Masses closer than this are treated as tied.
pub const TIE_TOL: f64 = 1e-12;
/// Histograms must sum to one within this tolerance.
pub const UNIT_SUM_TOL: f64 = 1e-9;
/// Deviations up to this size are silently renormalized on construction.
pub const RENORMALIZE_TOL: f64 = 1e-6;

/// Ordered bin edges `b_0 < b_1 < ... < b_m` over the response domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    edges: Vec<f64>,
}

impl Partition {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(ChrError::InvalidPartition(format!(
                "need at least two edges, got {}",
                edges.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(ChrError::InvalidPartition("non-finite edge".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ChrError::InvalidPartition(
                "edges must be strictly increasing".into(),
            ));
        }
        Ok(Self { edges })
    }

    /// `bins` equal-width bins spanning `[lower, upper]`.
    pub fn uniform(lower: f64, upper: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(ChrError::InvalidPartition("bin count must be positive".into()));
        }
        if !(lower < upper) {
            return Err(ChrError::InvalidPartition(format!(
                "lower bound {lower} must be below upper bound {upper}"
            )));
        }
        let width = (upper - lower) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|j| lower + width * j as f64).collect();
        edges.push(upper);
        Self::new(edges)
    }

    /// Equal-width partition over the observed response range, widened by
    /// `pad_fraction` of that range on each side.
    pub fn from_responses(responses: &[f64], bins: usize, pad_fraction: f64) -> Result<Self> {
        let (lo, hi) = response_bounds(responses, pad_fraction)?;
        Self::uniform(lo, hi, bins)
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn lower(&self) -> f64 {
        self.edges[0]
    }

    pub fn upper(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    /// Index `j` with `y` in `[b_j, b_{j+1})`, or `None` outside `[b_0, b_m)`.
    pub fn bin_of(&self, y: f64) -> Option<usize> {
        if !(y >= self.lower() && y < self.upper()) {
            return None;
        }
        // first edge strictly greater than y, minus one
        let idx = self.edges.partition_point(|&e| e <= y);
        Some(idx - 1)
    }

    pub fn midpoint(&self, bin: usize) -> f64 {
        0.5 * (self.edges[bin] + self.edges[bin + 1])
    }

    /// Response-unit range `[b_lo, b_{hi+1}]` covered by a bin interval.
    pub fn range_of(&self, interval: BinInterval) -> (f64, f64) {
        (self.edges[interval.lo], self.edges[interval.hi + 1])
    }
}

/// Observed range of `responses` padded by `pad_fraction` of its width on
/// each side. A constant sample gets a unit pad.
pub fn response_bounds(responses: &[f64], pad_fraction: f64) -> Result<(f64, f64)> {
    if responses.is_empty() {
        return Err(ChrError::EmptyTrainingSet);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &y in responses {
        if !y.is_finite() {
            return Err(ChrError::InvalidPartition("non-finite response".into()));
        }
        lo = lo.min(y);
        hi = hi.max(y);
    }
    let range = hi - lo;
    let pad = if range > 0.0 {
        pad_fraction * range
    } else {
        1.0_f64.max(lo.abs() * pad_fraction)
    };
    Ok((lo - pad, hi + pad))
}

/// Inclusive range of bin indices `lo..=hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinInterval {
    pub lo: usize,
    pub hi: usize,
}

impl BinInterval {
    pub fn new(lo: usize, hi: usize) -> Self {
        assert!(lo <= hi, "bin interval requires lo <= hi, got [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn full(bins: usize) -> Self {
        Self::new(0, bins - 1)
    }

    /// Number of bins in the interval.
    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn contains_bin(&self, bin: usize) -> bool {
        self.lo <= bin && bin <= self.hi
    }

    /// `other ⊆ self`.
    pub fn contains(&self, other: &BinInterval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }
}

/// Set inclusion for possibly-empty intervals: `inner ⊆ outer`.
pub fn is_subset(inner: Option<BinInterval>, outer: Option<BinInterval>) -> bool {
    match (inner, outer) {
        (None, _) => true,
        (Some(_), None) => false,
        (Some(i), Some(o)) => o.contains(&i),
    }
}

/// Unit-sum bin probabilities for one feature point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalHistogram {
    masses: Vec<f64>,
    prefix: Vec<f64>,
}

impl ConditionalHistogram {
    pub fn new(mut masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(ChrError::InvalidHistogram("no bins".into()));
        }
        if let Some(bad) = masses.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(ChrError::InvalidHistogram(format!(
                "bin mass {bad} is negative or non-finite"
            )));
        }
        let sum: f64 = masses.iter().sum();
        let deviation = (sum - 1.0).abs();
        if deviation > RENORMALIZE_TOL {
            return Err(ChrError::NonUnitSum { sum });
        }
        if deviation > UNIT_SUM_TOL {
            masses.iter_mut().for_each(|p| *p /= sum);
        }
        let mut prefix = Vec::with_capacity(masses.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &p in &masses {
            acc += p;
            prefix.push(acc);
        }
        Ok(Self { masses, prefix })
    }

    /// Uniform masses over `bins` bins.
    pub fn uniform(bins: usize) -> Self {
        Self::new(vec![1.0 / bins as f64; bins]).expect("uniform histogram is valid")
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn bin_mass(&self, bin: usize) -> f64 {
        self.masses[bin]
    }

    pub fn mass(&self, interval: BinInterval) -> f64 {
        self.prefix[interval.hi + 1] - self.prefix[interval.lo]
    }

    pub fn mass_of(&self, interval: Option<BinInterval>) -> f64 {
        interval.map_or(0.0, |iv| self.mass(iv))
    }

    /// Adds uniform noise of size `scale` to every bin and renormalizes, so
    /// that exact ties in the interval search are broken at random.
    pub fn jittered<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> Self {
        let noisy: Vec<f64> = self
            .masses
            .iter()
            .map(|&p| p + scale * rng.random::<f64>())
            .collect();
        let sum: f64 = noisy.iter().sum();
        Self::new(noisy.into_iter().map(|p| p / sum).collect())
            .expect("jittered histogram stays valid")
    }
}

/// Shortest bin interval `[l, u]` with `S⁻ ⊆ [l, u] ⊆ S⁺` and mass at least
/// `tau`. Among shortest candidates the one with the smallest mass wins, and
/// remaining ties go to the leftmost.
///
/// Linear in the width of `s_plus`: the minimal feasible right end is
/// non-decreasing in the left end, so one sweep of two pointers visits every
/// candidate.
pub fn shortest_mass_interval(
    hist: &ConditionalHistogram,
    tau: f64,
    s_minus: Option<BinInterval>,
    s_plus: BinInterval,
) -> Result<BinInterval> {
    if s_plus.hi >= hist.bins() {
        return Err(ChrError::Infeasible(format!(
            "outer interval [{}, {}] exceeds {} bins",
            s_plus.lo,
            s_plus.hi,
            hist.bins()
        )));
    }
    if !is_subset(s_minus, Some(s_plus)) {
        return Err(ChrError::Infeasible(
            "inner constraint is not contained in the outer constraint".into(),
        ));
    }
    let threshold = tau - FEASIBILITY_TOL;
    if hist.mass(s_plus) < threshold {
        return Err(ChrError::Infeasible(format!(
            "outer interval holds mass {} < {tau}",
            hist.mass(s_plus)
        )));
    }

    let (l_max, u_min) = match s_minus {
        Some(inner) => (inner.lo, inner.hi),
        None => (s_plus.hi, s_plus.lo),
    };

    let mut best: Option<(usize, f64, BinInterval)> = None;
    let mut u = u_min;
    for l in s_plus.lo..=l_max {
        u = u.max(l);
        while u <= s_plus.hi && hist.mass(BinInterval { lo: l, hi: u }) < threshold {
            u += 1;
        }
        if u > s_plus.hi {
            // moving l right only removes mass
            break;
        }
        let candidate = BinInterval { lo: l, hi: u };
        let width = u - l;
        let mass = hist.mass(candidate);
        let better = match best {
            None => true,
            Some((w, m, _)) => width < w || (width == w && mass < m - TIE_TOL),
        };
        if better {
            best = Some((width, mass, candidate));
        }
    }

    let (_, _, chosen) = best.expect("feasibility was checked above");
    debug_assert!(hist.mass(chosen) >= threshold);
    debug_assert!(s_plus.contains(&chosen));
    debug_assert!(is_subset(s_minus, Some(chosen)));
    Ok(chosen)
}

/// `(mass([l,u]) - tau) / min(π_l, π_u)`: how far the interval overshoots
/// `tau`, in units of its lighter boundary bin. A zero-mass boundary bin
/// yields `+∞`.
pub fn mass_excess(interval: BinInterval, hist: &ConditionalHistogram, tau: f64) -> f64 {
    let boundary = hist.bin_mass(interval.lo).min(hist.bin_mass(interval.hi));
    if boundary <= 0.0 {
        return f64::INFINITY;
    }
    (hist.mass(interval) - tau) / boundary
}

/// Drops the lighter boundary bin of `interval` when `eps <= V`, keeping it
/// otherwise. Ties between the two boundary bins drop the left one. A
/// single-bin interval trims to the empty set.
pub fn randomized_trim(
    interval: BinInterval,
    hist: &ConditionalHistogram,
    tau: f64,
    eps: f64,
) -> Option<BinInterval> {
    if eps > mass_excess(interval, hist, tau) {
        return Some(interval);
    }
    if interval.len() == 1 {
        return None;
    }
    if hist.bin_mass(interval.lo) <= hist.bin_mass(interval.hi) {
        Some(BinInterval::new(interval.lo + 1, interval.hi))
    } else {
        Some(BinInterval::new(interval.lo, interval.hi - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hist(m: &[f64]) -> ConditionalHistogram {
        ConditionalHistogram::new(m.to_vec()).unwrap()
    }

    fn iv(lo: usize, hi: usize) -> BinInterval {
        BinInterval::new(lo, hi)
    }

    /// Exhaustive search with the same tie rules, summing masses directly.
    fn brute_force(
        h: &ConditionalHistogram,
        tau: f64,
        s_minus: Option<BinInterval>,
        s_plus: BinInterval,
    ) -> Option<BinInterval> {
        let mut best: Option<(usize, f64, BinInterval)> = None;
        for l in s_plus.lo..=s_plus.hi {
            for u in l..=s_plus.hi {
                let c = iv(l, u);
                if !is_subset(s_minus, Some(c)) {
                    continue;
                }
                let mass: f64 = h.masses()[l..=u].iter().sum();
                if mass < tau - FEASIBILITY_TOL {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((w, m, _)) => u - l < w || (u - l == w && mass < m - TIE_TOL),
                };
                if better {
                    best = Some((u - l, mass, c));
                }
            }
        }
        best.map(|b| b.2)
    }

    #[test]
    fn partition_bins_and_lookup() {
        let p = Partition::uniform(0.0, 4.0, 4).unwrap();
        assert_eq!(p.bins(), 4);
        assert_eq!(p.edges(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(p.bin_of(0.0), Some(0));
        assert_eq!(p.bin_of(3.5), Some(3));
        assert_eq!(p.bin_of(1.0), Some(1));
        assert_eq!(p.bin_of(4.0), None);
        assert_eq!(p.bin_of(-0.1), None);
        assert!(Partition::new(vec![0.0, 0.0, 1.0]).is_err());
        assert!(Partition::uniform(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn partition_from_responses_pads_range() {
        let p = Partition::from_responses(&[0.0, 10.0, 5.0], 10, 0.2).unwrap();
        assert_eq!(p.lower(), -2.0);
        assert_eq!(p.upper(), 12.0);
    }

    #[test]
    fn histogram_rejects_bad_sums_and_renormalizes_small_ones() {
        assert!(matches!(
            ConditionalHistogram::new(vec![0.5, 0.4]),
            Err(ChrError::NonUnitSum { .. })
        ));
        assert!(ConditionalHistogram::new(vec![0.5, -0.1, 0.6]).is_err());
        let h = hist(&[0.5, 0.5 + 5e-7]);
        let sum: f64 = h.masses().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shortest_interval_single_feasible_width_one() {
        let h = hist(&[0.1, 0.5, 0.3, 0.1]);
        let got = shortest_mass_interval(&h, 0.7, None, iv(0, 3)).unwrap();
        assert_eq!(got, iv(1, 2));
    }

    #[test]
    fn shortest_interval_breaks_length_ties_by_minimal_mass() {
        // (0.4, 0.3, 0.3, 0.4) renormalized; pairs hold 0.5, 3/7, 0.5
        let h = hist(&[0.4 / 1.4, 0.3 / 1.4, 0.3 / 1.4, 0.4 / 1.4]);
        let got = shortest_mass_interval(&h, 0.6 / 1.4, None, iv(0, 3)).unwrap();
        assert_eq!(got, iv(1, 2));
    }

    #[test]
    fn shortest_interval_respects_inner_constraint() {
        let h = hist(&[0.5, 0.2, 0.2, 0.1]);
        let got = shortest_mass_interval(&h, 0.5, Some(iv(2, 2)), iv(0, 3)).unwrap();
        assert_eq!(got, iv(1, 3));
    }

    #[test]
    fn shortest_interval_full_mass_needs_full_range() {
        let h = hist(&[0.2, 0.3, 0.1, 0.4]);
        assert_eq!(shortest_mass_interval(&h, 1.0, None, iv(0, 3)).unwrap(), iv(0, 3));
        let z = hist(&[0.0, 0.6, 0.4, 0.0]);
        assert_eq!(shortest_mass_interval(&z, 1.0, None, iv(0, 3)).unwrap(), iv(1, 2));
    }

    #[test]
    fn shortest_interval_equal_optima_pick_leftmost() {
        let h = ConditionalHistogram::uniform(5);
        assert_eq!(shortest_mass_interval(&h, 0.4, None, iv(0, 4)).unwrap(), iv(0, 1));
        assert_eq!(shortest_mass_interval(&h, 0.0, None, iv(2, 4)).unwrap(), iv(2, 2));
    }

    #[test]
    fn shortest_interval_infeasible_inputs() {
        let h = hist(&[0.1, 0.5, 0.3, 0.1]);
        assert!(matches!(
            shortest_mass_interval(&h, 0.9, None, iv(1, 2)),
            Err(ChrError::Infeasible(_))
        ));
        assert!(matches!(
            shortest_mass_interval(&h, 0.1, Some(iv(0, 1)), iv(1, 3)),
            Err(ChrError::Infeasible(_))
        ));
        assert!(shortest_mass_interval(&h, 0.1, None, iv(0, 4)).is_err());
    }

    #[test]
    fn mass_excess_examples() {
        let h = hist(&[0.1, 0.5, 0.3, 0.1]);
        assert!((mass_excess(iv(1, 2), &h, 0.7) - 1.0 / 3.0).abs() < 1e-12);
        assert!((mass_excess(iv(1, 1), &h, 0.3) - 0.4).abs() < 1e-12);
        assert_eq!(mass_excess(iv(0, 1), &h, h.mass(iv(0, 1))), 0.0);
        let z = hist(&[0.0, 1.0]);
        assert_eq!(mass_excess(iv(0, 1), &z, 0.5), f64::INFINITY);
    }

    #[test]
    fn trim_examples() {
        let h = hist(&[0.1, 0.5, 0.3, 0.1]);
        assert_eq!(randomized_trim(iv(1, 2), &h, 0.7, 0.5), Some(iv(1, 2)));
        assert_eq!(randomized_trim(iv(1, 2), &h, 0.7, 0.2), Some(iv(1, 1)));
        let exact = h.mass(iv(0, 2));
        assert_eq!(randomized_trim(iv(0, 2), &h, exact, 1e-9), Some(iv(0, 2)));
        assert_eq!(randomized_trim(iv(2, 2), &h, 0.0, 0.9), None);
        // equal boundary masses drop the left bin
        let u = ConditionalHistogram::uniform(4);
        assert_eq!(randomized_trim(iv(0, 3), &u, 0.5, 0.1), Some(iv(1, 3)));
    }

    #[test]
    fn jitter_keeps_unit_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = ConditionalHistogram::uniform(8).jittered(&mut rng, 1e-12);
        let sum: f64 = h.masses().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_ne!(h, ConditionalHistogram::uniform(8));
    }

    fn histogram_strategy(max_bins: usize) -> impl Strategy<Value = ConditionalHistogram> {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 1..=max_bins).prop_filter_map(
            "needs positive total",
            |raw| {
                let sum: f64 = raw.iter().sum();
                (sum > 0.0).then(|| hist(&raw.iter().map(|v| v / sum).collect::<Vec<_>>()))
            },
        )
    }

    proptest! {
        #[test]
        fn kernel_matches_brute_force(
            h in histogram_strategy(12),
            tau_step in 0usize..=20,
            a in 0usize..12, b in 0usize..12, c in 0usize..12, d in 0usize..12,
            constrained in any::<bool>(),
        ) {
            let m = h.bins();
            let tau = tau_step as f64 * 0.05;
            let mut outer = [a % m, b % m];
            outer.sort();
            let s_plus = iv(outer[0], outer[1]);
            let s_minus = if constrained {
                let mut inner = [s_plus.lo + c % s_plus.len(), s_plus.lo + d % s_plus.len()];
                inner.sort();
                Some(iv(inner[0], inner[1]))
            } else {
                None
            };
            let expected = brute_force(&h, tau, s_minus, s_plus);
            let got = shortest_mass_interval(&h, tau, s_minus, s_plus).ok();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn trim_output_is_subset_missing_at_most_one_bin(
            h in histogram_strategy(20),
            lo in 0usize..20, len in 1usize..20,
            tau in 0.0f64..1.0, eps in 0.0f64..1.0,
        ) {
            let m = h.bins();
            let lo = lo % m;
            let hi = (lo + len - 1).min(m - 1);
            let input = iv(lo, hi);
            match randomized_trim(input, &h, tau, eps) {
                None => prop_assert_eq!(input.len(), 1),
                Some(out) => {
                    prop_assert!(input.contains(&out));
                    prop_assert!(input.len() - out.len() <= 1);
                }
            }
        }
    }

    #[test]
    fn trimmed_mass_averages_to_tau() {
        let h = hist(&[0.1, 0.5, 0.3, 0.1]);
        let tau = 0.7;
        let interval = shortest_mass_interval(&h, tau, None, iv(0, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let masses: Vec<f64> = (0..draws)
            .map(|_| h.mass_of(randomized_trim(interval, &h, tau, rand::Rng::random::<f64>(&mut rng))))
            .collect();
        let mean = masses.iter().sum::<f64>() / draws as f64;
        let var = masses.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!((mean - tau).abs() <= 3.0 * se, "mean {mean} se {se}");
    }
}
