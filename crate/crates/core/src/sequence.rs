//! Nested families of bin intervals `S_0 ⊆ S_1 ⊆ ... ⊆ S_T` for one feature
//! point.
//!
//! The family is seeded at a starting level `t̄` with an unconstrained
//! shortest-mass interval. Levels above `t̄` must contain their predecessor;
//! levels below must fit inside the untrimmed interval one level up. The
//! randomized trim is skipped above `t̄` whenever it would break nesting.
//!
//! Consecutive levels usually share the same interval, so sequences are
//! stored as runs and built by jumping over constant stretches with a binary
//! search on the per-level rule. [`build_sequence_reference`] evaluates every
//! level directly and is kept for differential testing.

use serde::{Deserialize, Serialize};

use crate::error::{ChrError, Result};
use crate::interval::{
    is_subset, mass_excess, randomized_trim, shortest_mass_interval, BinInterval,
    ConditionalHistogram, Partition,
};

/// Resolution and starting point of the level grid `τ_t = t / T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceConfig {
    /// `T`, the number of level steps.
    pub levels: usize,
    /// `t̄`, the level built without nesting constraints.
    pub start: usize,
    /// Apply the randomized trim.
    pub randomize: bool,
}

impl SequenceConfig {
    pub fn new(levels: usize, start: usize, randomize: bool) -> Result<Self> {
        if levels == 0 {
            return Err(ChrError::Config("resolution T must be positive".into()));
        }
        if start > levels {
            return Err(ChrError::Config(format!(
                "starting level {start} exceeds resolution {levels}"
            )));
        }
        Ok(Self {
            levels,
            start,
            randomize,
        })
    }

    /// Starts at `round((1 - alpha) T)` so that `τ_t̄ ≈ 1 - alpha`.
    pub fn for_alpha(levels: usize, alpha: f64, randomize: bool) -> Result<Self> {
        let start = ((1.0 - alpha) * levels as f64).round() as usize;
        Self::new(levels, start.min(levels), randomize)
    }

    pub fn tau(&self, t: usize) -> f64 {
        t as f64 / self.levels as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Run {
    start: usize,
    set: Option<BinInterval>,
}

/// Nested intervals for levels `0..=T`, stored as runs of equal sets.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedSequence {
    levels: usize,
    runs: Vec<Run>,
    eps: f64,
}

impl NestedSequence {
    fn from_levels(levels: usize, eps: f64, spans: impl IntoIterator<Item = (usize, Option<BinInterval>)>) -> Self {
        let mut runs: Vec<Run> = Vec::new();
        for (start, set) in spans {
            match runs.last() {
                Some(last) if last.set == set => {}
                _ => runs.push(Run { start, set }),
            }
        }
        Self { levels, runs, eps }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// The uniform draw the trims were based on.
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn set(&self, t: usize) -> Option<BinInterval> {
        assert!(t <= self.levels, "level {t} beyond T = {}", self.levels);
        let idx = self.runs.partition_point(|r| r.start <= t);
        self.runs[idx - 1].set
    }

    /// Every level materialized, `S_0..=S_T`.
    pub fn sets(&self) -> Vec<Option<BinInterval>> {
        (0..=self.levels).map(|t| self.set(t)).collect()
    }

    /// Number of distinct consecutive intervals.
    pub fn run_count(&self) -> usize {
        self.runs.len()
    }

    /// Smallest `t` whose interval contains `bin`, or `T` when none does.
    pub fn first_level_containing(&self, bin: usize) -> usize {
        self.runs
            .iter()
            .find(|r| r.set.is_some_and(|s| s.contains_bin(bin)))
            .map_or(self.levels, |r| r.start)
    }
}

fn full(hist: &ConditionalHistogram) -> BinInterval {
    BinInterval::full(hist.bins())
}

fn solve(
    hist: &ConditionalHistogram,
    tau: f64,
    inner: Option<BinInterval>,
    outer: BinInterval,
) -> BinInterval {
    shortest_mass_interval(hist, tau, inner, outer)
        .expect("nested construction keeps every level feasible")
}

/// Level `t̄`: `(S⁰_t̄, S_t̄)`.
fn start_level(
    hist: &ConditionalHistogram,
    cfg: &SequenceConfig,
    eps: f64,
) -> (BinInterval, Option<BinInterval>) {
    let tau = cfg.tau(cfg.start);
    let base = solve(hist, tau, None, full(hist));
    let set = if cfg.randomize {
        randomized_trim(base, hist, tau, eps)
    } else {
        Some(base)
    };
    (base, set)
}

/// One level above `t̄`, given the set one level below: `(S⁰_t, S_t)`.
fn ascending_step(
    hist: &ConditionalHistogram,
    cfg: &SequenceConfig,
    eps: f64,
    prev: Option<BinInterval>,
    t: usize,
) -> (BinInterval, Option<BinInterval>) {
    let tau = cfg.tau(t);
    let base = solve(hist, tau, prev, full(hist));
    if !cfg.randomize {
        return (base, Some(base));
    }
    let trimmed = randomized_trim(base, hist, tau, eps);
    if is_subset(prev, trimmed) {
        (base, trimmed)
    } else {
        (base, Some(base))
    }
}

/// `a ∩ b` for possibly-empty intervals.
fn intersect(a: Option<BinInterval>, b: Option<BinInterval>) -> Option<BinInterval> {
    let (a, b) = (a?, b?);
    let (lo, hi) = (a.lo.max(b.lo), a.hi.min(b.hi));
    (lo <= hi).then(|| BinInterval::new(lo, hi))
}

/// One level below `t̄`: `(S⁰_t, S_t)` given `S⁰_{t+1}` and `S_{t+1}`.
///
/// `S⁰_t` is searched inside the untrimmed `S⁰_{t+1}`. When the trimmed
/// `S⁰_t` would stick out of `S_{t+1}` (it still holds the bin trimmed one
/// level up), that bin is dropped instead: `S_t = S⁰_t ∩ S_{t+1}`.
fn descending_step(
    hist: &ConditionalHistogram,
    cfg: &SequenceConfig,
    eps: f64,
    outer: BinInterval,
    above: Option<BinInterval>,
    t: usize,
) -> (BinInterval, Option<BinInterval>) {
    let tau = cfg.tau(t);
    let base = solve(hist, tau, None, outer);
    if !cfg.randomize {
        return (base, Some(base));
    }
    let trimmed = randomized_trim(base, hist, tau, eps);
    if is_subset(trimmed, above) {
        (base, trimmed)
    } else {
        (base, intersect(Some(base), above))
    }
}

/// Largest `t` in `[lo, hi]` with `pred(t)`, given `pred(lo)` and a predicate
/// that stays true up to some point and false afterwards.
fn last_true(lo: usize, hi: usize, mut pred: impl FnMut(usize) -> bool) -> usize {
    let (mut good, mut bad) = (lo, hi + 1);
    while bad - good > 1 {
        let mid = good + (bad - good) / 2;
        if pred(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good
}

/// Smallest `t` in `[lo, hi]` with `pred(t)`, given `pred(hi)` and a predicate
/// that is false up to some point and true afterwards.
fn first_true(lo: usize, hi: usize, mut pred: impl FnMut(usize) -> bool) -> usize {
    let (mut bad, mut good) = (lo as isize - 1, hi as isize);
    while good - bad > 1 {
        let mid = bad + (good - bad) / 2;
        if pred(mid as usize) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good as usize
}

/// Walks levels `t̄+1..=T` one run at a time.
struct Ascending<'a> {
    hist: &'a ConditionalHistogram,
    cfg: &'a SequenceConfig,
    eps: f64,
    next: usize,
    prev: Option<BinInterval>,
}

impl Iterator for Ascending<'_> {
    /// `(first level, last level, set)`.
    type Item = (usize, usize, Option<BinInterval>);

    fn next(&mut self) -> Option<Self::Item> {
        let t = self.next;
        if t > self.cfg.levels {
            return None;
        }
        let (hist, cfg, eps, prev) = (self.hist, self.cfg, self.eps, self.prev);
        let (base, set) = ascending_step(hist, cfg, eps, prev, t);
        // while S⁰ stays put, both its feasibility and the trim condition
        // can only switch off as τ grows
        let end = if set == prev {
            last_true(t, cfg.levels, |u| ascending_step(hist, cfg, eps, prev, u) == (base, prev))
        } else {
            t
        };
        self.prev = set;
        self.next = end + 1;
        Some((t, end, set))
    }
}

/// Walks levels `t̄-1` down to `0` one run at a time.
struct Descending<'a> {
    hist: &'a ConditionalHistogram,
    cfg: &'a SequenceConfig,
    eps: f64,
    /// Next level to produce, plus one (0 when exhausted).
    next_plus_one: usize,
    /// `S⁰` one level up.
    outer: BinInterval,
    /// `S` one level up.
    above: Option<BinInterval>,
    /// Lower half of a run split by the trim, waiting to be emitted.
    pending: Option<(usize, usize, Option<BinInterval>)>,
}

impl Iterator for Descending<'_> {
    /// `(lowest level, highest level, set)`, emitted from high to low.
    type Item = (usize, usize, Option<BinInterval>);

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(run) = self.pending.take() {
            return Some(run);
        }
        if self.next_plus_one == 0 {
            return None;
        }
        let t = self.next_plus_one - 1;
        let (hist, cfg, eps) = (self.hist, self.cfg, self.eps);
        let (base, set) = descending_step(hist, cfg, eps, self.outer, self.above, t);
        // levels below t keep the same untrimmed interval while no proper
        // sub-interval becomes feasible
        let low = if t == 0 {
            0
        } else {
            first_true(0, t, |u| u == t || solve(hist, cfg.tau(u), None, base) == base)
        };
        self.outer = base;
        self.next_plus_one = low;

        let unguarded = if cfg.randomize {
            randomized_trim(base, hist, cfg.tau(t), eps)
        } else {
            Some(base)
        };
        if !cfg.randomize || set != unguarded || set != Some(base) {
            // no trim, a guarded level, or trimmed from the top: the whole
            // run shares one set
            self.above = set;
            return Some((low, t, set));
        }
        // kept at t; the trim fires from some lower level on since V grows
        // as τ falls
        let keeps = |u: usize| eps > mass_excess(base, hist, cfg.tau(u));
        let kept_from = first_true(low, t, keeps);
        if kept_from > low {
            let trimmed = randomized_trim(base, hist, cfg.tau(low), eps);
            self.pending = Some((low, kept_from - 1, trimmed));
            self.above = trimmed;
        } else {
            self.above = set;
        }
        Some((kept_from, t, set))
    }
}

/// Builds the nested family for one histogram and one uniform draw `eps`.
///
/// With `cfg.randomize == false` every trim is skipped.
pub fn build_sequence(hist: &ConditionalHistogram, cfg: &SequenceConfig, eps: f64) -> NestedSequence {
    let (base, start_set) = start_level(hist, cfg, eps);
    let mut spans: Vec<(usize, Option<BinInterval>)> = Descending {
        hist,
        cfg,
        eps,
        next_plus_one: cfg.start,
        outer: base,
        above: start_set,
        pending: None,
    }
    .map(|(lo, _, set)| (lo, set))
    .collect();
    spans.reverse();
    spans.push((cfg.start, start_set));
    spans.extend(
        Ascending {
            hist,
            cfg,
            eps,
            next: cfg.start + 1,
            prev: start_set,
        }
        .map(|(lo, _, set)| (lo, set)),
    );
    let seq = NestedSequence::from_levels(cfg.levels, eps, spans);
    debug_assert!(seq
        .runs
        .windows(2)
        .all(|w| is_subset(w[0].set, w[1].set)));
    seq
}

/// Smallest level whose interval contains `bin`, building only as far as
/// needed. Agrees with `build_sequence(..).first_level_containing(bin)`.
pub fn first_level_containing(
    hist: &ConditionalHistogram,
    cfg: &SequenceConfig,
    eps: f64,
    bin: usize,
) -> usize {
    let (base, start_set) = start_level(hist, cfg, eps);
    if start_set.is_some_and(|s| s.contains_bin(bin)) {
        let mut below = Descending {
            hist,
            cfg,
            eps,
            next_plus_one: cfg.start,
            outer: base,
            above: start_set,
            pending: None,
        };
        return below
            .find(|(_, _, set)| !set.is_some_and(|s| s.contains_bin(bin)))
            .map_or(0, |(_, hi, _)| hi + 1);
    }
    Ascending {
        hist,
        cfg,
        eps,
        next: cfg.start + 1,
        prev: start_set,
    }
    .find(|(_, _, set)| set.is_some_and(|s| s.contains_bin(bin)))
    .map_or(cfg.levels, |(lo, _, _)| lo)
}

/// Direct level-by-level construction. Quadratic in `T`; meant for checking
/// [`build_sequence`].
pub fn build_sequence_reference(
    hist: &ConditionalHistogram,
    cfg: &SequenceConfig,
    eps: f64,
) -> Vec<Option<BinInterval>> {
    let mut sets = vec![None; cfg.levels + 1];
    let (base, start_set) = start_level(hist, cfg, eps);
    sets[cfg.start] = start_set;
    for t in cfg.start + 1..=cfg.levels {
        sets[t] = ascending_step(hist, cfg, eps, sets[t - 1], t).1;
    }
    let mut outer = base;
    for t in (0..cfg.start).rev() {
        let (b, s) = descending_step(hist, cfg, eps, outer, sets[t + 1], t);
        sets[t] = s;
        outer = b;
    }
    sets
}

/// Response-unit endpoints `(b_lo, b_{hi+1})` of a bin interval.
pub fn interval_to_response_range(
    set: Option<BinInterval>,
    partition: &Partition,
) -> Result<(f64, f64)> {
    set.map(|s| partition.range_of(s)).ok_or(ChrError::EmptyInterval)
}
