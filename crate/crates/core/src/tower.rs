//! Induced Markov structure on the base `Lambda = [1/2, 1]`.
//!
//! For both implemented families the right branch sends `Lambda` affinely
//! onto `[0, 1]`, so a point `x in Lambda` is conveniently described by its
//! first image `y = 2x - 1`. Return partitions are computed in `y`
//! coordinates, where points near the boundary `x = 1/2` (the long returns)
//! keep full floating point resolution.
//!
//! Returns are first returns to `Lambda`. For these families the first-return
//! cells `{R = n}` are intervals mapped by `f^R` onto `Lambda`, so first
//! returns and Markov (cell-based) returns coincide; [`ReturnMode`] records
//! which route produced a value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_power_law, PowerLawFit};
use crate::maps::{Branch, Orbit};
use crate::omega::{Family, FiberSequence, ParamBounds, ParamSequence};
use crate::rng::{counter_word, stream_key, tag, unit_f64};

/// Lower end of the base `Lambda`.
pub const BASE_LO: f64 = 0.5;

/// Default iteration cap for a single return.
pub const DEFAULT_RETURN_CAP: u64 = 1_000_000;

#[inline]
pub fn in_base(x: f64) -> bool {
    x >= BASE_LO
}

pub(crate) fn check_base(x: f64) -> Result<()> {
    if (BASE_LO..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain {
            x,
            domain: "the base [1/2, 1]",
        })
    }
}

/// A return time, or the marker that the iteration cap was reached first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReturnTime {
    Finite(u64),
    Capped,
}

impl ReturnTime {
    pub fn finite(self) -> Option<u64> {
        match self {
            ReturnTime::Finite(n) => Some(n),
            ReturnTime::Capped => None,
        }
    }

    pub fn is_capped(self) -> bool {
        matches!(self, ReturnTime::Capped)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReturnMode {
    /// Orbit scan until the first entrance into `Lambda`.
    FirstReturn,
    /// Lookup of the partition cell containing the point.
    Markov,
}

/// Run-length encoded branch symbols of `x, f(x), ..., f^{R-1}(x)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Itinerary(pub Vec<(Branch, u64)>);

impl Itinerary {
    fn push(&mut self, b: Branch) {
        match self.0.last_mut() {
            Some((last, count)) if *last == b => *count += 1,
            _ => self.0.push((b, 1)),
        }
    }

    pub fn len(&self) -> u64 {
        self.0.iter().map(|(_, c)| c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnRecord {
    pub x: f64,
    pub time: ReturnTime,
    pub itinerary: Itinerary,
    pub mode: ReturnMode,
    /// `f^R(x)`, absent when capped.
    pub image: Option<f64>,
}

/// Steps after time `start` until a point sitting at `y` enters the base,
/// zero if it is already there. `None` when `budget` steps do not suffice.
#[inline]
fn hit_base<S: FiberSequence>(seq: &S, start: i64, mut y: f64, budget: u64) -> Option<(u64, f64)> {
    let mut k = 0u64;
    while !in_base(y) {
        if k == budget {
            return None;
        }
        y = seq.fiber(start + k as i64).image(y);
        k += 1;
    }
    Some((k, y))
}

/// Return time of `y = f_0(x)`'s preimage: `R = 1 + steps from time 1`.
#[inline]
fn return_from_image<S: FiberSequence>(seq: &S, y: f64, cap: u64) -> (ReturnTime, Option<f64>) {
    match hit_base(seq, 1, y, cap.saturating_sub(1)) {
        Some((k, img)) => (ReturnTime::Finite(k + 1), Some(img)),
        None => (ReturnTime::Capped, None),
    }
}

/// First return time of `x in Lambda` under the sequence.
pub fn return_time<S: FiberSequence>(seq: &S, x: f64, cap: u64) -> Result<ReturnRecord> {
    check_base(x)?;
    if cap == 0 {
        return Err(Error::InvalidArgument("return cap must be at least 1".into()));
    }
    let y = seq.fiber(0).image(x);
    let (time, image) = return_from_image(seq, y, cap);
    let mut itinerary = Itinerary::default();
    itinerary.push(Branch::Right);
    let steps = time.finite().unwrap_or(cap);
    if steps > 1 {
        itinerary.0.push((Branch::Left, steps - 1));
    }
    Ok(ReturnRecord {
        x,
        time,
        itinerary,
        mode: ReturnMode::FirstReturn,
        image,
    })
}

/// Advance a tracked point from time `start` until it re-enters the base
/// (at least one step). The point is left at the return position.
pub fn advance_to_base<S: FiberSequence, P: Orbit>(
    seq: &S,
    start: i64,
    point: &mut P,
    cap: u64,
) -> ReturnTime {
    let mut k = 0u64;
    loop {
        if k == cap {
            return ReturnTime::Capped;
        }
        point.advance(&seq.fiber(start + k as i64));
        k += 1;
        if in_base(point.x()) {
            return ReturnTime::Finite(k);
        }
    }
}

/// `R^n(x)`: the time of the `n`-th return, each return evaluated on the
/// sequence shifted by the time already elapsed.
pub fn nth_return<S: FiberSequence>(seq: &S, x: f64, n: u32, cap: u64) -> Result<ReturnTime> {
    check_base(x)?;
    let mut total = 0u64;
    let mut point = x;
    for _ in 0..n {
        match advance_to_base(seq, total as i64, &mut point, cap) {
            ReturnTime::Finite(r) => total += r,
            ReturnTime::Capped => return Ok(ReturnTime::Capped),
        }
    }
    Ok(ReturnTime::Finite(total))
}

/// One cell `{R = n}` of the return partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionCell {
    /// Cell endpoints in `x` coordinates.
    pub lo: f64,
    pub hi: f64,
    /// The same endpoints in `y = 2x - 1` coordinates (full resolution).
    pub y_lo: f64,
    pub y_hi: f64,
    pub return_time: u64,
    /// Lebesgue mass of the cell.
    pub mass: f64,
    /// `f^R` of the two endpoints.
    pub image_lo: f64,
    pub image_hi: f64,
    /// Whether the endpoint images bracket `Lambda` to within the tolerance.
    pub markov_ok: bool,
}

impl PartitionCell {
    /// Mass relative to `Leb(Lambda) = 1/2`.
    pub fn fraction(&self) -> f64 {
        2.0 * self.mass
    }
}

#[derive(Clone, Debug)]
pub struct ReturnPartition<S: FiberSequence = ParamSequence> {
    pub omega: S,
    /// Cells ordered by increasing return time (decreasing position).
    pub cells: Vec<PartitionCell>,
    pub depth_cap: u64,
    pub refine_tol: f64,
    /// Lebesgue mass of `Lambda` not covered by resolved cells.
    pub residual_mass: f64,
}

impl<S: FiberSequence> ReturnPartition<S> {
    pub fn covered_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.mass).sum()
    }

    /// Cell containing `x`, if resolved.
    pub fn locate(&self, x: f64) -> Option<&PartitionCell> {
        // cells are sorted by decreasing `lo`
        let idx = self.cells.partition_point(|c| c.lo > x);
        self.cells
            .get(idx)
            .filter(|c| x >= c.lo && (x < c.hi || (c.return_time == 1 && x <= c.hi)))
    }

    /// Return time read off the partition.
    pub fn markov_return(&self, x: f64) -> Result<ReturnRecord> {
        check_base(x)?;
        let time = match self.locate(x) {
            Some(cell) => ReturnTime::Finite(cell.return_time),
            None => ReturnTime::Capped,
        };
        let image = time.finite().map(|r| {
            let mut p = x;
            for k in 0..r {
                p = self.omega.fiber(k as i64).image(p);
            }
            p
        });
        let mut itinerary = Itinerary::default();
        itinerary.push(Branch::Right);
        if let Some(r) = time.finite().filter(|&r| r > 1) {
            itinerary.0.push((Branch::Left, r - 1));
        }
        Ok(ReturnRecord {
            x,
            time,
            itinerary,
            mode: ReturnMode::Markov,
            image,
        })
    }
}

/// Bracket `[lo, hi]` of the smallest `y` whose hitting time from time 1 is
/// at most `steps`.
fn bisect_boundary<S: FiberSequence>(seq: &S, steps: u64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let hits = |y: f64| hit_base(seq, 1, y, steps).is_some();
    for _ in 0..2048 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if hits(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

/// Resolve the cells `{R = n}` for `n <= depth_cap`.
pub fn build_partition<S: FiberSequence>(
    seq: &S,
    depth_cap: u64,
    refine_tol: f64,
) -> Result<ReturnPartition<S>> {
    if depth_cap == 0 {
        return Err(Error::InvalidArgument("depth_cap must be at least 1".into()));
    }
    if !(refine_tol > 0.0) {
        return Err(Error::InvalidArgument("refine_tol must be positive".into()));
    }
    let image_after = |y: f64, steps: u64| -> f64 {
        let mut p = y;
        for k in 0..steps {
            p = seq.fiber(1 + k as i64).image(p);
        }
        p
    };

    let mut cells = Vec::new();
    let mut residual = 0.0;
    // Upper end of the current cell in y, and the point just below the previous
    // boundary (whose image under f^R approaches 1).
    let mut upper = 1.0f64;
    let mut upper_inner = 1.0f64;
    let mut n = 1u64;
    while n <= depth_cap {
        if upper * 0.5 < refine_tol {
            break;
        }
        let (below, boundary) = if n == 1 {
            (f64::from_bits(BASE_LO.to_bits() - 1), BASE_LO)
        } else {
            bisect_boundary(seq, n - 1, 0.0, upper_inner)
        };
        let mass = 0.5 * (upper - boundary);
        if mass < refine_tol {
            residual += mass;
        } else {
            let image_lo = image_after(boundary, n - 1);
            let image_hi = if n == 1 {
                seq.fiber(0).image(1.0)
            } else {
                seq.fiber(n as i64 - 1).image(image_after(upper_inner, n - 2))
            };
            let markov_ok = (image_lo - BASE_LO).abs() <= refine_tol
                && (1.0 - image_hi).abs() <= refine_tol
                && in_base(image_lo);
            cells.push(PartitionCell {
                lo: 0.5 + 0.5 * boundary,
                hi: 0.5 + 0.5 * upper,
                y_lo: boundary,
                y_hi: upper,
                return_time: n,
                mass,
                image_lo,
                image_hi,
                markov_ok,
            });
        }
        upper = boundary;
        upper_inner = below;
        n += 1;
    }
    residual += 0.5 * upper;
    Ok(ReturnPartition {
        omega: seq.clone(),
        cells,
        depth_cap,
        refine_tol,
        residual_mass: residual,
    })
}

/// gcd of the return times whose cells carry more than `mass_floor` of `Lambda`.
pub fn gcd_check<S: FiberSequence>(partition: &ReturnPartition<S>, mass_floor: f64) -> Result<u64> {
    gcd_of_times(
        partition
            .cells
            .iter()
            .map(|c| (c.return_time, c.fraction())),
        mass_floor,
    )
}

/// gcd of `times` whose relative mass exceeds `mass_floor`.
pub fn gcd_of_times(cells: impl IntoIterator<Item = (u64, f64)>, mass_floor: f64) -> Result<u64> {
    let g = cells
        .into_iter()
        .filter(|&(_, m)| m > mass_floor)
        .fold(0u64, |g, (t, _)| gcd(g, t));
    if g == 0 {
        Err(Error::NoCellAboveFloor { floor: mass_floor })
    } else {
        Ok(g)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Separation {
    Finite(u32),
    /// Not separated within the allowed number of returns; `capped` marks a
    /// return computation that hit its iteration cap.
    Infinite { capped: bool },
}

/// Number of common returns before `x` and `y` fall in different cells.
/// Cells are identified by their return time, one interval per value.
pub fn separation_time<S: FiberSequence>(
    seq: &S,
    x: f64,
    y: f64,
    max_returns: u32,
    return_cap: u64,
) -> Result<Separation> {
    check_base(x)?;
    check_base(y)?;
    let (mut a, mut b) = (x, y);
    let mut t = 0i64;
    for n in 0..max_returns {
        let ra = advance_to_base(seq, t, &mut a, return_cap);
        let rb = advance_to_base(seq, t, &mut b, return_cap);
        match (ra, rb) {
            (ReturnTime::Finite(p), ReturnTime::Finite(q)) if p == q => t += p as i64,
            (ReturnTime::Finite(_), ReturnTime::Finite(_)) => return Ok(Separation::Finite(n)),
            _ => return Ok(Separation::Infinite { capped: true }),
        }
    }
    Ok(Separation::Infinite { capped: false })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub pairs_checked: usize,
    pub pairs_skipped: usize,
    /// `max |J(x)/J(y) - 1| / beta_hat^s(x, y)` over sampled pairs.
    pub empirical_cf: f64,
    /// `1 / min_expansion`.
    pub beta_hat: f64,
    pub min_expansion: f64,
    pub max_deviation: f64,
    /// Pairs whose expansion is below `1 / beta_bound`.
    pub violations: usize,
    pub beta_bound: f64,
}

/// Sampled check of bounded distortion and uniform expansion of `f^R` on the
/// partition cells. Cells are chosen uniformly, points uniformly within cells.
pub fn distortion_check<S: FiberSequence>(
    seq: &S,
    partition: &ReturnPartition<S>,
    pair_samples: usize,
    sample_seed: u64,
    beta_bound: f64,
) -> Result<DistortionReport> {
    if partition.cells.is_empty() {
        return Err(Error::InvalidArgument("partition has no cells".into()));
    }
    struct PairStat {
        deviation: f64,
        expansion: f64,
        separation: Option<u32>,
    }
    let key = stream_key(sample_seed, tag::DISTORTION);
    let stats: Vec<Option<PairStat>> = (0..pair_samples as u64)
        .into_par_iter()
        .map(|j| {
            let w = |k: u64| unit_f64(counter_word(key, 3 * j + k));
            let cell = &partition.cells[((w(0) * partition.cells.len() as f64) as usize)
                .min(partition.cells.len() - 1)];
            let width = cell.y_hi - cell.y_lo;
            let y1 = cell.y_lo + width * w(1);
            let y2 = cell.y_lo + width * w(2);
            if y1 == y2 {
                return None;
            }
            let steps = cell.return_time - 1;
            let trace = |y: f64| -> Option<(f64, f64)> {
                let mut p = y;
                let mut log_j = std::f64::consts::LN_2;
                for k in 0..steps {
                    if in_base(p) {
                        return None;
                    }
                    let f = seq.fiber(1 + k as i64);
                    log_j += f.derivative(p).ln();
                    p = f.image(p);
                }
                in_base(p).then_some((log_j, p))
            };
            let ((j1, img1), (j2, img2)) = (trace(y1)?, trace(y2)?);
            let expansion = (img1 - img2).abs() / (0.5 * (y1 - y2).abs());
            let deviation = ((j1 - j2).exp() - 1.0).abs();
            let shifted = seq.shift(cell.return_time as i64);
            let separation = match separation_time(&shifted, img1, img2, 32, DEFAULT_RETURN_CAP) {
                Ok(Separation::Finite(s)) => Some(s + 1),
                _ => None,
            };
            Some(PairStat {
                deviation,
                expansion,
                separation,
            })
        })
        .collect();

    let checked: Vec<&PairStat> = stats.iter().flatten().collect();
    let min_expansion = checked
        .iter()
        .map(|s| s.expansion)
        .fold(f64::INFINITY, f64::min);
    let beta_hat = 1.0 / min_expansion;
    let max_deviation = checked.iter().map(|s| s.deviation).fold(0.0, f64::max);
    let empirical_cf = checked
        .iter()
        .filter_map(|s| s.separation.map(|sep| s.deviation / beta_hat.powi(sep as i32)))
        .fold(0.0, f64::max);
    let violations = checked
        .iter()
        .filter(|s| s.expansion < 1.0 / beta_bound)
        .count();
    Ok(DistortionReport {
        pairs_checked: checked.len(),
        pairs_skipped: stats.len() - checked.len(),
        empirical_cf,
        beta_hat,
        min_expansion,
        max_deviation,
        violations,
        beta_bound,
    })
}

/// How base points are drawn for tail estimation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TailSampling {
    /// Normalized Lebesgue measure on `Lambda`.
    Lebesgue,
    /// Importance sampling of `y = 2x - 1`: with probability `uniform_share`
    /// uniform on `[0, 1]`, otherwise log-uniform on `[y_min, 1]`. Samples are
    /// reweighted by the likelihood ratio, so estimates stay unbiased while
    /// the rare long returns near `x = 1/2` are resolved.
    LogUniformMixture { y_min: f64, uniform_share: f64 },
}

impl TailSampling {
    /// Draw `y` and its importance weight from two uniform variates.
    #[inline]
    fn draw(&self, u: f64, v: f64) -> (f64, f64) {
        match *self {
            TailSampling::Lebesgue => (v, 1.0),
            TailSampling::LogUniformMixture { y_min, uniform_share } => {
                let log_range = -y_min.ln();
                let y = if u < uniform_share {
                    v
                } else {
                    (y_min.ln() * (1.0 - v)).exp()
                };
                let log_density = if y >= y_min { 1.0 / (y * log_range) } else { 0.0 };
                let q = uniform_share + (1.0 - uniform_share) * log_density;
                (y, 1.0 / q)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            TailSampling::Lebesgue => Ok(()),
            TailSampling::LogUniformMixture { y_min, uniform_share }
                if y_min > 0.0 && y_min < 1.0 && uniform_share > 0.0 && uniform_share <= 1.0 =>
            {
                Ok(())
            }
            _ => Err(Error::InvalidArgument(
                "log-uniform mixture needs 0 < y_min < 1 and 0 < uniform_share <= 1".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailOptions {
    pub n_max: u64,
    pub samples_per_omega: usize,
    pub cap: u64,
    pub sampling: TailSampling,
}

impl TailOptions {
    pub fn new(n_max: u64, samples_per_omega: usize) -> Self {
        Self {
            n_max,
            samples_per_omega,
            cap: DEFAULT_RETURN_CAP,
            sampling: TailSampling::Lebesgue,
        }
    }

    pub fn with_sampling(mut self, sampling: TailSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub n: u64,
    pub estimate: f64,
    pub std_err: f64,
    /// Effective number of samples behind the estimate (Kish).
    pub n_eff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub rows: Vec<TailRow>,
    pub samples: usize,
    pub capped_fraction: f64,
    pub warnings: Vec<String>,
}

impl TailCurve {
    /// Log-log fit of the decay exponent over `n in [lo, hi]`.
    pub fn fit(&self, window: (f64, f64)) -> Result<PowerLawFit> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .map(|r| (r.n as f64, r.estimate))
            .collect();
        fit_power_law(&pts, window)
    }
}

/// Monte Carlo estimate of `n -> E Leb_Lambda(R_omega > n)` over the given
/// driving seeds (normalized Lebesgue measure on `Lambda`).
pub fn tail_curve(
    family: Family,
    bounds: ParamBounds,
    seeds: &[u64],
    options: &TailOptions,
) -> Result<TailCurve> {
    if options.n_max < 2 {
        return Err(Error::InvalidArgument("n_max must be at least 2".into()));
    }
    if seeds.is_empty() || options.samples_per_omega == 0 {
        return Err(Error::InvalidArgument("need at least one seed and one sample".into()));
    }
    options.sampling.validate()?;
    let sequences = seeds
        .iter()
        .map(|&s| ParamSequence::new(s, family, bounds))
        .collect::<Result<Vec<_>>>()?;
    let per = options.samples_per_omega;
    let draws: Vec<(ReturnTime, f64)> = (0..sequences.len() * per)
        .into_par_iter()
        .map(|idx| {
            let seq = &sequences[idx / per];
            let key = stream_key(seq.master_seed(), tag::TAIL);
            let j = (idx % per) as u64;
            let u = unit_f64(counter_word(key, 2 * j));
            let v = unit_f64(counter_word(key, 2 * j + 1));
            let (y, weight) = options.sampling.draw(u, v);
            (return_from_image(seq, y, options.cap).0, weight)
        })
        .collect();
    Ok(summarize_tail(&draws, options.n_max))
}

/// Self-normalized weighted tail estimates from `(R, weight)` draws.
pub(crate) fn summarize_tail(draws: &[(ReturnTime, f64)], n_max: u64) -> TailCurve {
    let total_w: f64 = draws.iter().map(|d| d.1).sum();
    let total_w2: f64 = draws.iter().map(|d| d.1 * d.1).sum();
    // Weight mass sitting exactly at each return time, plus the capped mass.
    let mut at = vec![(0.0f64, 0.0f64); n_max as usize + 2];
    let mut capped = 0usize;
    for &(r, w) in draws {
        let slot = match r {
            ReturnTime::Finite(n) if n <= n_max => n as usize,
            ReturnTime::Finite(_) => n_max as usize + 1,
            ReturnTime::Capped => {
                capped += 1;
                n_max as usize + 1
            }
        };
        at[slot].0 += w;
        at[slot].1 += w * w;
    }
    // Survivor sums S1(n), S2(n) over draws with R > n, accumulated from the
    // top so that tiny tail weights are not lost to cancellation.
    let mut survivors = vec![(0.0f64, 0.0f64); n_max as usize + 1];
    let (mut s1, mut s2) = at[n_max as usize + 1];
    for n in (0..=n_max as usize).rev() {
        survivors[n] = (s1, s2);
        s1 += at[n].0;
        s2 += at[n].1;
    }
    let rows = survivors
        .iter()
        .enumerate()
        .map(|(n, &(s1, s2))| {
            // R >= 1, so the n = 0 row is exactly one whenever no draw sits at 0
            let t = if n == 0 { 1.0 - at[0].0 / total_w } else { (s1 / total_w).min(1.0) };
            let var = s2 * (1.0 - t).powi(2) + (total_w2 - s2).max(0.0) * t * t;
            TailRow {
                n: n as u64,
                estimate: t,
                std_err: var.sqrt() / total_w,
                n_eff: if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 },
            }
        })
        .collect();
    let capped_fraction = capped as f64 / draws.len() as f64;
    let mut warnings = Vec::new();
    if capped_fraction > 0.01 {
        warnings.push(format!(
            "{:.2}% of return computations hit the iteration cap",
            100.0 * capped_fraction
        ));
    }
    TailCurve {
        rows,
        samples: draws.len(),
        capped_fraction,
        warnings,
    }
}
