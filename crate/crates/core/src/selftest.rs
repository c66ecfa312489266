//! Seeded differential and property suites runnable outside the test
//! harness.
//!
//! Each suite draws random cases from its own seed, checks the fast code
//! against a brute-force reference or a structural invariant, and reports
//! how many cases failed together with the first offending case.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::density::{density_to_histogram, grid_density, PiecewiseDensity, QuantileGrid};
use crate::interval::{
    is_subset, mass_excess, randomized_trim, shortest_mass_interval, BinInterval, ConditionalHistogram, Partition,
    FEASIBILITY_TOL, TIE_TOL, UNIT_SUM_TOL,
};
use crate::sequence::{build_sequence, build_sequence_reference, first_level_containing, SequenceConfig};

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

/// Case counts per suite.
#[derive(Debug, Clone, Copy)]
pub struct SelftestConfig {
    pub kernel_cases: usize,
    pub nesting_cases: usize,
    pub trim_draws: usize,
    pub density_cases: usize,
    pub seed: u64,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            kernel_cases: 1000,
            nesting_cases: 10_000,
            trim_draws: 100_000,
            density_cases: 10_000,
            seed: 0,
        }
    }
}

struct Tally {
    name: &'static str,
    cases: usize,
    failures: usize,
    first_failure: Option<String>,
    start: Instant,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            first_failure: None,
            start: Instant::now(),
        }
    }

    fn record(&mut self, failure: Option<String>) {
        self.cases += 1;
        if let Some(msg) = failure {
            self.failures += 1;
            self.first_failure.get_or_insert(msg);
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            name: self.name,
            cases: self.cases,
            failures: self.failures,
            first_failure: self.first_failure,
            elapsed: self.start.elapsed(),
        }
    }
}

/// Masses that often tie or vanish: small integer weights, or continuous
/// weights with occasional zeros.
fn random_histogram<R: Rng>(rng: &mut R, bins: usize) -> ConditionalHistogram {
    let integer = rng.random_bool(0.5);
    loop {
        let raw: Vec<f64> = (0..bins)
            .map(|_| {
                if integer {
                    f64::from(rng.random_range(0..4u8))
                } else if rng.random_bool(0.15) {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            return ConditionalHistogram::new(raw.iter().map(|p| p / total).collect()).expect("normalized");
        }
    }
}

/// `ε` in `(0, 1]`.
fn random_eps<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Enumerates every `[l, u]` in `s_plus` containing `s_minus` with mass at
/// least `tau`; keeps the shortest, then the lightest, then the leftmost.
pub fn exhaustive_shortest_interval(
    hist: &ConditionalHistogram,
    tau: f64,
    s_minus: Option<BinInterval>,
    s_plus: BinInterval,
) -> Option<BinInterval> {
    let mut best: Option<(usize, f64, BinInterval)> = None;
    for l in s_plus.lo..=s_plus.hi {
        for u in l..=s_plus.hi {
            let candidate = BinInterval::new(l, u);
            if !is_subset(s_minus, Some(candidate)) {
                continue;
            }
            let mass: f64 = hist.masses()[l..=u].iter().sum();
            if mass < tau - FEASIBILITY_TOL {
                continue;
            }
            let better = match best {
                None => true,
                Some((w, m, _)) => u - l < w || (u - l == w && mass < m - TIE_TOL),
            };
            if better {
                best = Some((u - l, mass, candidate));
            }
        }
    }
    best.map(|(_, _, c)| c)
}

fn random_subinterval<R: Rng>(rng: &mut R, within: BinInterval) -> BinInterval {
    let a = rng.random_range(within.lo..=within.hi);
    let b = rng.random_range(within.lo..=within.hi);
    BinInterval::new(a.min(b), a.max(b))
}

/// Shortest-mass kernel against exhaustive enumeration, over `m ≤ 12` and
/// `τ ∈ {0.05, 0.10, ..., 1.0}`, unconstrained and with random nesting
/// constraints.
pub fn kernel_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut tally = Tally::new("shortest-mass kernel vs exhaustive search");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let m = rng.random_range(1..=12);
        let hist = random_histogram(&mut rng, m);
        let full = BinInterval::full(m);
        let outer = random_subinterval(&mut rng, full);
        let inner = rng.random_bool(0.5).then(|| random_subinterval(&mut rng, outer));
        let mut failure = None;
        for k in 1..=20 {
            let tau = k as f64 / 20.0;
            for (s_minus, s_plus) in [(None, full), (inner, outer)] {
                let fast = shortest_mass_interval(&hist, tau, s_minus, s_plus).ok();
                let slow = exhaustive_shortest_interval(&hist, tau, s_minus, s_plus);
                if fast != slow && failure.is_none() {
                    failure = Some(format!(
                        "case {case}: masses {:?}, tau {tau}, inner {s_minus:?}, outer {s_plus:?}: got {fast:?}, expected {slow:?}",
                        hist.masses()
                    ));
                }
            }
        }
        tally.record(failure);
    }
    tally.finish()
}

/// Nesting of fuzzed sequences with `m ∈ 1..=50`, plus agreement of the
/// run-length construction with the level-by-level reference and of the
/// early-exit score with the full sequence.
pub fn nesting_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut tally = Tally::new("nested sequences");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let m = rng.random_range(1..=50);
        let hist = random_histogram(&mut rng, m);
        let levels = rng.random_range(1..=200);
        let start = rng.random_range(0..=levels);
        let randomize = rng.random_bool(0.7);
        let eps = random_eps(&mut rng);
        let cfg = SequenceConfig::new(levels, start, randomize).expect("start within levels");
        let describe = || format!("case {case}: masses {:?}, T {levels}, start {start}, eps {eps}, randomize {randomize}", hist.masses());

        let fast = build_sequence(&hist, &cfg, eps).sets();
        let reference = build_sequence_reference(&hist, &cfg, eps);
        let failure = if let Some(t) = (1..fast.len()).find(|&t| !is_subset(fast[t - 1], fast[t])) {
            Some(format!("{}: S_{} = {:?} not inside S_{t} = {:?}", describe(), t - 1, fast[t - 1], fast[t]))
        } else if let Some(t) = (1..reference.len()).find(|&t| !is_subset(reference[t - 1], reference[t])) {
            Some(format!("{}: reference not nested at level {t}", describe()))
        } else if fast != reference {
            Some(format!("{}: fast and reference sequences differ", describe()))
        } else {
            let bin = rng.random_range(0..m);
            let direct = first_level_containing(&hist, &cfg, eps, bin);
            let scanned = (0..=levels)
                .find(|&t| fast[t].is_some_and(|s| s.contains_bin(bin)))
                .unwrap_or(levels);
            (direct != scanned).then(|| format!("{}: bin {bin} scored {direct}, expected {scanned}", describe()))
        };
        tally.record(failure);
    }
    tally.finish()
}

/// Monte Carlo mean mass of the randomized trim of shortest unconstrained
/// intervals, one case per `τ ∈ {0.1, 0.3, 0.5, 0.7, 0.9}`: each mean must
/// be within three standard errors of `τ`.
pub fn trim_mean_suite(draws: usize, seed: u64) -> SuiteReport {
    let mut tally = Tally::new("randomized trim mean mass");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for tau in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let m = rng.random_range(5..=30);
        let hist = random_histogram(&mut rng, m);
        let interval = shortest_mass_interval(&hist, tau, None, BinInterval::full(m)).expect("unconstrained is feasible");
        let excess = mass_excess(interval, &hist, tau);
        if excess > 1.0 + FEASIBILITY_TOL {
            tally.record(Some(format!("tau {tau}: shortest interval overshoots by {excess} boundary masses")));
            continue;
        }
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..draws {
            let mass = hist.mass_of(randomized_trim(interval, &hist, tau, random_eps(&mut rng)));
            sum += mass;
            sum_sq += mass * mass;
        }
        let n = draws as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean).max(0.0) / (n - 1.0)).sqrt();
        let gap = (mean - tau).abs();
        tally.record((gap > 3.0 * se + 1e-12).then(|| {
            format!("tau {tau}: mean mass {mean} differs by {gap:.3e} with standard error {se:.3e}")
        }));
    }
    tally.finish()
}

fn random_grid<R: Rng>(rng: &mut R) -> QuantileGrid {
    let steps = rng.random_range(1..=40);
    let centre = rng.random_range(-100.0..100.0);
    let spread = 10f64.powf(rng.random_range(-3.0..2.0));
    let coarse = rng.random_bool(0.3);
    let mut values: Vec<f64> = (0..=steps)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            // coarse grids repeat values
            centre + spread * if coarse { (4.0 * v).round() / 4.0 } else { v }
        })
        .collect();
    values.sort_by(f64::total_cmp);
    QuantileGrid::new(QuantileGrid::uniform_levels(steps), values).expect("sorted grid")
}

fn check_density(grid: &QuantileGrid, d: &PiecewiseDensity, smooth: bool, rng: &mut ChaCha8Rng) -> Option<String> {
    let total: f64 = d.masses().iter().sum();
    if (total - 1.0).abs() > UNIT_SUM_TOL {
        return Some(format!("density mass {total}"));
    }
    if !smooth {
        // the grid's CDF is reproduced at every distinct value
        let values = grid.values();
        for (k, &q) in values.iter().enumerate().skip(1) {
            let last = values.iter().rposition(|&v| v == q).expect("present");
            if last == k && q > grid.lower() && (d.cdf(q) - grid.levels()[k]).abs() > UNIT_SUM_TOL {
                return Some(format!("cdf at grid value {q} is {}, level {}", d.cdf(q), grid.levels()[k]));
            }
        }
    }
    let (lo, hi) = (d.lower(), d.upper());
    let span = (hi - lo).max(1e-6);
    let mut ys: Vec<f64> = (0..32).map(|_| rng.random_range(lo - 0.1 * span..hi + 0.1 * span)).collect();
    ys.extend(d.knots());
    ys.sort_by(f64::total_cmp);
    if let Some(w) = ys.windows(2).find(|w| d.cdf(w[0]) > d.cdf(w[1])) {
        return Some(format!("cdf decreases between {} and {}", w[0], w[1]));
    }
    for &y in &ys {
        // the inverse maps level 0 to the lower end rather than -inf, so
        // the relation is checked on (0, 1]
        let mut us: Vec<f64> = (0..4).map(|_| 1.0 - rng.random::<f64>()).collect();
        us.extend([1.0, d.cdf(y)]);
        for u in us.into_iter().filter(|&u| u > 0.0) {
            if (d.inverse_cdf(u) <= y) != (u <= d.cdf(y)) {
                return Some(format!("galois pair broken at u {u}, y {y}"));
            }
        }
    }
    let bins = rng.random_range(1..=60);
    let (a, b) = (lo + rng.random_range(-0.2..0.5) * span, hi - rng.random_range(-0.2..0.5) * span);
    let (a, b) = if a < b { (a, b) } else { (lo, hi) };
    let partition = Partition::uniform(a, b, bins).expect("ordered range");
    let h = density_to_histogram(d, &partition);
    let sum: f64 = h.masses().iter().sum();
    if (sum - 1.0).abs() > UNIT_SUM_TOL || h.masses().iter().any(|&p| p < 0.0) {
        return Some(format!("histogram masses {:?}", h.masses()));
    }
    let edges = partition.edges();
    for j in 1..bins.saturating_sub(1) {
        let expected = d.cdf(edges[j + 1]) - d.cdf(edges[j]);
        if (h.masses()[j] - expected).abs() > UNIT_SUM_TOL {
            return Some(format!("bin {j} holds {} but cdf difference is {expected}", h.masses()[j]));
        }
    }
    // binning on the knots returns the segment masses
    if let Ok(own) = Partition::new(d.knots().to_vec()) {
        let h = density_to_histogram(d, &own);
        if let Some(j) = (0..d.segments()).find(|&j| (h.masses()[j] - d.masses()[j]).abs() > UNIT_SUM_TOL) {
            return Some(format!("segment {j} round trip gives {}", h.masses()[j]));
        }
    }
    None
}

/// Quantile grid to density to histogram: unit sums, monotone CDF, the
/// Galois relation `F⁻¹(u) ≤ y ⇔ u ≤ F(y)` for `u > 0`, and round trips through the
/// grid levels and the density's own knots.
pub fn density_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut tally = Tally::new("distribution-estimation invariants");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let grid = random_grid(&mut rng);
        let smooth = rng.random_bool(0.5);
        let d = grid_density(&grid, smooth);
        let failure = check_density(&grid, &d, smooth, &mut rng)
            .map(|msg| format!("case {case} (values {:?}, smoothed {smooth}): {msg}", grid.values()));
        tally.record(failure);
    }
    tally.finish()
}

pub fn run_all(cfg: &SelftestConfig) -> Vec<SuiteReport> {
    vec![
        kernel_suite(cfg.kernel_cases, cfg.seed),
        nesting_suite(cfg.nesting_cases, cfg.seed.wrapping_add(1)),
        trim_mean_suite(cfg.trim_draws, cfg.seed.wrapping_add(2)),
        density_suite(cfg.density_cases, cfg.seed.wrapping_add(3)),
    ]
}
