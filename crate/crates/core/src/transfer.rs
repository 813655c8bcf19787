//! Ulam discretization of the quenched transfer operators.
//!
//! Measures are stored as bin masses, never as density values, so a
//! pushforward conserves total mass up to summation round-off. The
//! equivariant density `h_omega` is the pushforward of Lebesgue through the
//! past fibers `sigma^{-depth} omega, ..., sigma^{-1} omega`.
//!
//! The dual operator of `f_omega` with respect to the equivariant measures is
//!
//! ```text
//! (P_omega psi)[j] = sum_i psi[i] h_omega[i] M_omega[i][j] / h_{sigma omega}[j]
//! ```
//!
//! where the denominator is the pushforward `M_omega^T h_omega` itself, so
//! `P_omega 1 = 1` holds to round-off and iterated duals compose exactly.

use std::collections::VecDeque;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_power_law, PowerLawFit};
use crate::maps::{FiberMap, Observable};
use crate::omega::{Family, FiberSequence, ParamBounds, ParamSequence};

pub const DEFAULT_SUBSAMPLES: usize = 64;
/// Bins whose target mass falls below this are masked in the dual operator.
pub const MASK_FLOOR: f64 = 1e-12;
/// Largest tolerated masked-bin fraction.
pub const MASK_LIMIT: f64 = 0.1;

#[inline]
pub fn bin_of(x: f64, n_bins: usize) -> usize {
    ((x * n_bins as f64) as usize).min(n_bins - 1)
}

/// Row-stochastic sparse matrix: `M[i][j]` is the fraction of bin `i` sent
/// into bin `j` by one fiber map.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferMatrix {
    n_bins: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl TransferMatrix {
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.vals[span])
            .map(|(&j, &v)| (j as usize, v))
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    pub fn min_entry(&self) -> f64 {
        self.vals.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn from_rows(n_bins: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n_bins + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                cols.push(j);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            n_bins,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Matrix product `self * other`: one step of `self` followed by `other`.
    pub fn then(&self, other: &TransferMatrix) -> Result<TransferMatrix> {
        check_dims(self.n_bins, other.n_bins)?;
        let mut acc = vec![0.0; self.n_bins];
        let mut touched = Vec::new();
        let rows = (0..self.n_bins)
            .map(|i| {
                for (k, a) in self.row(i) {
                    for (j, b) in other.row(k) {
                        if acc[j] == 0.0 {
                            touched.push(j);
                        }
                        acc[j] += a * b;
                    }
                }
                touched.sort_unstable();
                let row = touched.iter().map(|&j| (j as u32, acc[j])).collect();
                for &j in &touched {
                    acc[j] = 0.0;
                }
                touched.clear();
                row
            })
            .collect();
        Ok(Self::from_rows(self.n_bins, rows))
    }
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Ulam matrix of `map` by stratified subsampling of every bin.
pub fn ulam_matrix(map: &FiberMap, n_bins: usize, subsamples: usize) -> Result<TransferMatrix> {
    if n_bins < 2 || subsamples == 0 {
        return Err(Error::InvalidArgument(
            "Ulam matrix needs at least 2 bins and 1 subsample".into(),
        ));
    }
    Ok(ulam_unchecked(map, n_bins, subsamples))
}

fn ulam_unchecked(map: &FiberMap, n_bins: usize, subsamples: usize) -> TransferMatrix {
    let width = 1.0 / n_bins as f64;
    let step = width / subsamples as f64;
    let inv = 1.0 / subsamples as f64;
    let mut targets = Vec::with_capacity(subsamples);
    let rows = (0..n_bins)
        .map(|i| {
            targets.clear();
            let left = i as f64 * width;
            targets.extend(
                (0..subsamples).map(|k| bin_of(map.image(left + (k as f64 + 0.5) * step), n_bins) as u32),
            );
            targets.sort_unstable();
            let mut row: Vec<(u32, f64)> = Vec::with_capacity(4);
            let mut start = 0;
            while start < targets.len() {
                let j = targets[start];
                let end = start + targets[start..].iter().take_while(|&&t| t == j).count();
                row.push((j, (end - start) as f64 * inv));
                start = end;
            }
            row
        })
        .collect();
    TransferMatrix::from_rows(n_bins, rows)
}

/// Probability masses on a uniform grid of `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    masses: Vec<f64>,
}

impl GridDensity {
    pub fn uniform(n_bins: usize) -> Self {
        Self {
            masses: vec![1.0 / n_bins as f64; n_bins],
        }
    }

    /// Unit mass in bin `i`.
    pub fn point_mass(n_bins: usize, i: usize) -> Self {
        let mut masses = vec![0.0; n_bins];
        masses[i] = 1.0;
        Self { masses }
    }

    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        if masses.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument("masses must be finite and non-negative".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { masses })
    }

    pub fn n_bins(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Density value (with respect to Lebesgue) on bin `i`.
    pub fn density(&self, i: usize) -> f64 {
        self.masses[i] * self.n_bins() as f64
    }

    pub fn l1_distance(&self, other: &GridDensity) -> f64 {
        self.masses
            .iter()
            .zip(&other.masses)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn integrate(&self, f: &GridFunction) -> f64 {
        self.masses.iter().zip(&f.values).map(|(m, v)| m * v).sum()
    }

    /// Inverse-CDF sampler: bin by cumulative mass, uniform within the bin.
    pub fn sampler(&self) -> GridSampler {
        let mut cdf = Vec::with_capacity(self.masses.len());
        let mut acc = 0.0;
        for &m in &self.masses {
            acc += m;
            cdf.push(acc);
        }
        GridSampler { cdf }
    }
}

#[derive(Clone, Debug)]
pub struct GridSampler {
    cdf: Vec<f64>,
}

impl GridSampler {
    /// Point for the uniform variates `u` (bin choice) and `v` (position).
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let n = self.cdf.len();
        let total = self.cdf[n - 1];
        let i = self.cdf.partition_point(|&c| c <= u * total).min(n - 1);
        ((i as f64 + v) / n as f64).min(1.0)
    }
}

/// Bin-averaged function values on the grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn constant(n_bins: usize, c: f64) -> Self {
        Self {
            values: vec![c; n_bins],
        }
    }

    pub fn from_fn(n_bins: usize, f: impl Fn(usize) -> f64) -> Self {
        Self {
            values: (0..n_bins).map(f).collect(),
        }
    }

    pub fn from_observable(obs: &Observable, fiber: &FiberMap, n_bins: usize) -> Self {
        let w = 1.0 / n_bins as f64;
        Self::from_fn(n_bins, |i| obs.bin_average(fiber, i as f64 * w, (i + 1) as f64 * w))
    }

    pub fn n_bins(&self) -> usize {
        self.values.len()
    }

    /// Nearest-bin lookup at a point.
    #[inline]
    pub fn at(&self, x: f64) -> f64 {
        self.values[bin_of(x, self.values.len())]
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        GridFunction {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GridFunction) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn shifted(&self, c: f64) -> GridFunction {
        GridFunction {
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }

    /// `int |f| d mu`.
    pub fn l1(&self, mu: &GridDensity) -> f64 {
        self.values.iter().zip(mu.masses()).map(|(v, m)| v.abs() * m).sum()
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Mass-conserving pushforward `rho' = M^T rho`.
pub fn pushforward(m: &TransferMatrix, rho: &GridDensity) -> Result<GridDensity> {
    check_dims(m.n_bins(), rho.n_bins())?;
    Ok(push_unchecked(m, rho))
}

fn push_unchecked(m: &TransferMatrix, rho: &GridDensity) -> GridDensity {
    let mut out = vec![0.0; m.n_bins()];
    for (i, &mass) in rho.masses.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        for (j, v) in m.row(i) {
            out[j] += mass * v;
        }
    }
    GridDensity { masses: out }
}

/// Composition with the fiber map on the grid: `(u o f)[i] = sum_j M[i][j] u[j]`.
pub fn koopman(m: &TransferMatrix, u: &GridFunction) -> Result<GridFunction> {
    check_dims(m.n_bins(), u.n_bins())?;
    Ok(GridFunction::from_fn(m.n_bins(), |i| {
        m.row(i).map(|(j, v)| v * u.values[j]).sum()
    }))
}

/// Grid resolution and pullback depth shared by the operator computations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    pub n_bins: usize,
    pub pullback_depth: usize,
    pub subsamples: usize,
}

impl GridSettings {
    pub fn new(n_bins: usize, pullback_depth: usize) -> Self {
        Self {
            n_bins,
            pullback_depth,
            subsamples: DEFAULT_SUBSAMPLES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 || self.subsamples == 0 {
            return Err(Error::InvalidArgument(
                "grids need at least 2 bins and 1 subsample".into(),
            ));
        }
        Ok(())
    }
}

impl Default for GridSettings {
    fn default() -> Self {
        Self::new(1 << 12, 32)
    }
}

const CHUNK: usize = 64;

/// Ulam matrices of consecutive fibers, built in parallel chunks. A sequence
/// with a constant map (doubling, or a fixed exponent) reuses one matrix.
pub struct FiberMatrices<'a, S: FiberSequence> {
    seq: &'a S,
    settings: GridSettings,
    next: i64,
    buffer: VecDeque<Arc<TransferMatrix>>,
    shared: Option<Arc<TransferMatrix>>,
}

impl<'a, S: FiberSequence> FiberMatrices<'a, S> {
    pub fn new(seq: &'a S, start: i64, settings: GridSettings) -> Self {
        Self {
            seq,
            settings,
            next: start,
            buffer: VecDeque::new(),
            shared: None,
        }
    }

    fn refill(&mut self) {
        let (n, s) = (self.settings.n_bins, self.settings.subsamples);
        if self.seq.is_constant() {
            let fiber = self.seq.fiber(0);
            let m = self
                .shared
                .get_or_insert_with(|| Arc::new(ulam_unchecked(&fiber, n, s)))
                .clone();
            self.buffer.push_back(m);
            return;
        }
        let first = self.next + self.buffer.len() as i64;
        let built: Vec<Arc<TransferMatrix>> = (0..CHUNK as i64)
            .into_par_iter()
            .map(|k| Arc::new(ulam_unchecked(&self.seq.fiber(first + k), n, s)))
            .collect();
        self.buffer.extend(built);
    }
}

impl<S: FiberSequence> Iterator for FiberMatrices<'_, S> {
    type Item = Arc<TransferMatrix>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.buffer.is_empty() {
            self.refill();
        }
        self.next += 1;
        self.buffer.pop_front()
    }
}

/// `h_omega` on the grid: Lebesgue pushed through the `pullback_depth`
/// fibers preceding time 0. Depth 0 gives the uniform density.
pub fn equivariant_density<S: FiberSequence>(seq: &S, settings: &GridSettings) -> Result<GridDensity> {
    settings.validate()?;
    let depth = settings.pullback_depth;
    let mut rho = GridDensity::uniform(settings.n_bins);
    let mats = FiberMatrices::new(seq, -(depth as i64), *settings);
    for m in mats.take(depth) {
        rho = push_unchecked(&m, &rho);
    }
    Ok(rho)
}

/// `|| M_omega h_omega - h_{sigma omega} ||_1` with both densities obtained
/// by independent pullbacks of the same depth.
pub fn equivariance_residual<S: FiberSequence>(seq: &S, settings: &GridSettings) -> Result<f64> {
    let h0 = equivariant_density(seq, settings)?;
    let h1 = equivariant_density(&seq.shift(1), settings)?;
    let m0 = ulam_unchecked(&seq.fiber(0), settings.n_bins, settings.subsamples);
    Ok(push_unchecked(&m0, &h0).l1_distance(&h1))
}

/// Result of one dual step.
#[derive(Clone, Debug, PartialEq)]
pub struct DualOutput {
    pub values: GridFunction,
    pub masked_fraction: f64,
}

/// Transfer matrices and equivariant densities on the consecutive fibers
/// `first..=last` (densities also on `last + 1`).
#[derive(Clone, Debug)]
pub struct OperatorChain<S: FiberSequence> {
    seq: S,
    settings: GridSettings,
    first: i64,
    matrices: Vec<Arc<TransferMatrix>>,
    densities: Vec<GridDensity>,
}

impl<S: FiberSequence> OperatorChain<S> {
    pub fn build(seq: &S, first: i64, last: i64, settings: &GridSettings) -> Result<Self> {
        if last < first {
            return Err(Error::InvalidArgument("empty fiber range".into()));
        }
        let h = equivariant_density(&seq.shift(first), settings)?;
        let count = (last - first + 1) as usize;
        let matrices: Vec<Arc<TransferMatrix>> =
            FiberMatrices::new(seq, first, *settings).take(count).collect();
        let mut densities = Vec::with_capacity(count + 1);
        densities.push(h);
        for m in &matrices {
            let next = push_unchecked(m, densities.last().expect("nonempty"));
            densities.push(next);
        }
        Ok(Self {
            seq: seq.clone(),
            settings: *settings,
            first,
            matrices,
            densities,
        })
    }

    pub fn settings(&self) -> &GridSettings {
        &self.settings
    }

    pub fn first(&self) -> i64 {
        self.first
    }

    pub fn last(&self) -> i64 {
        self.first + self.matrices.len() as i64 - 1
    }

    pub fn sequence(&self) -> &S {
        &self.seq
    }

    fn index(&self, k: i64, extra: i64) -> usize {
        assert!(
            k >= self.first && k <= self.last() + extra,
            "fiber {k} outside chain [{}, {}]",
            self.first,
            self.last() + extra
        );
        (k - self.first) as usize
    }

    /// Density of `mu_{sigma^k omega}`.
    pub fn density(&self, k: i64) -> &GridDensity {
        &self.densities[self.index(k, 1)]
    }

    pub fn matrix(&self, k: i64) -> &TransferMatrix {
        &self.matrices[self.index(k, 0)]
    }

    /// `phi` on fiber `k`, bin averaged and centered with respect to `mu_k`.
    pub fn centered(&self, obs: &Observable, k: i64) -> GridFunction {
        let raw = GridFunction::from_observable(obs, &self.seq.fiber(k), self.settings.n_bins);
        let mean = self.density(k).integrate(&raw);
        raw.shifted(-mean)
    }

    /// Dual operator from fiber `k` to fiber `k + 1`.
    pub fn dual(&self, k: i64, psi: &GridFunction) -> Result<DualOutput> {
        check_dims(self.settings.n_bins, psi.n_bins())?;
        let m = self.matrix(k);
        let h = self.density(k).masses();
        let target = self.density(k + 1).masses();
        let mut num = vec![0.0; self.settings.n_bins];
        for (i, (&p, &hi)) in psi.values.iter().zip(h).enumerate() {
            let w = p * hi;
            if w == 0.0 {
                continue;
            }
            for (j, v) in m.row(i) {
                num[j] += w * v;
            }
        }
        let mut masked = 0usize;
        for (n, &t) in num.iter_mut().zip(target) {
            if t < MASK_FLOOR {
                masked += 1;
                *n = 0.0;
            } else {
                *n /= t;
            }
        }
        let masked_fraction = masked as f64 / self.settings.n_bins as f64;
        if masked_fraction > MASK_LIMIT {
            return Err(Error::MaskedOverflow {
                fraction: masked_fraction,
                limit: MASK_LIMIT,
            });
        }
        Ok(DualOutput {
            values: GridFunction { values: num },
            masked_fraction,
        })
    }

    /// `u o f_k` for `u` on fiber `k + 1`.
    pub fn compose(&self, k: i64, u: &GridFunction) -> Result<GridFunction> {
        koopman(self.matrix(k), u)
    }

    /// L1 norm on fiber `k`, ignoring bins below the mask floor.
    pub fn l1(&self, k: i64, f: &GridFunction) -> f64 {
        f.values
            .iter()
            .zip(self.density(k).masses())
            .filter(|(_, &m)| m >= MASK_FLOOR)
            .map(|(v, m)| v.abs() * m)
            .sum()
    }
}

/// `P_omega psi` for `psi` on fiber `omega`.
pub fn dual_apply<S: FiberSequence>(seq: &S, psi: &GridFunction, settings: &GridSettings) -> Result<DualOutput> {
    OperatorChain::build(seq, 0, 0, settings)?.dual(0, psi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub n: usize,
    pub estimate: f64,
    pub std_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub rows: Vec<DecayRow>,
    pub max_masked_fraction: f64,
    pub warnings: Vec<String>,
}

impl DecayCurve {
    pub fn fit(&self, window: (f64, f64)) -> Result<PowerLawFit> {
        let pts: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.n as f64, r.estimate)).collect();
        fit_power_law(&pts, window)
    }
}

/// Mean over driving seeds of `int |P^n (phi_omega - int phi_omega d mu_omega)| d mu_{sigma^n omega}`.
pub fn decay_curve(
    family: Family,
    bounds: ParamBounds,
    seeds: &[u64],
    obs: &Observable,
    n_max: usize,
    settings: &GridSettings,
) -> Result<DecayCurve> {
    if n_max < 1 || seeds.is_empty() {
        return Err(Error::InvalidArgument("decay curve needs n_max >= 1 and a seed".into()));
    }
    let per_seed = seeds
        .iter()
        .map(|&s| {
            let seq = ParamSequence::new(s, family, bounds)?;
            let chain = OperatorChain::build(&seq, 0, n_max as i64 - 1, settings)?;
            let mut psi = chain.centered(obs, 0);
            let mut norms = vec![chain.l1(0, &psi)];
            let mut masked: f64 = 0.0;
            for k in 0..n_max as i64 {
                let out = chain.dual(k, &psi)?;
                masked = masked.max(out.masked_fraction);
                psi = out.values;
                norms.push(chain.l1(k + 1, &psi));
            }
            Ok((norms, masked))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = per_seed.len() as f64;
    let rows = (0..=n_max)
        .map(|n| {
            let vals: Vec<f64> = per_seed.iter().map(|(v, _)| v[n]).collect();
            let mean = vals.iter().sum::<f64>() / m;
            let var = if vals.len() > 1 {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            DecayRow {
                n,
                estimate: mean,
                std_err: (var / m).sqrt(),
            }
        })
        .collect();
    let max_masked_fraction = per_seed.iter().map(|p| p.1).fold(0.0, f64::max);
    let mut warnings = Vec::new();
    if max_masked_fraction > 0.0 {
        warnings.push(format!("masked-bin fraction reached {max_masked_fraction:.3e}"));
    }
    Ok(DecayCurve {
        rows,
        max_masked_fraction,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::omega::{Family, ParamBounds, ParamSequence};

    fn doubling() -> ParamSequence {
        ParamSequence::new(0, Family::Doubling, ParamBounds::fixed(0.0)).unwrap()
    }

    #[test]
    fn doubling_four_bins() {
        let m = ulam_matrix(&FiberMap::doubling(), 4, 64).unwrap();
        assert_eq!(m.entry(0, 0), 0.5);
        assert_eq!(m.entry(0, 1), 0.5);
        assert_eq!(m.entry(0, 2), 0.0);
        assert_eq!(m.entry(0, 3), 0.0);
    }

    #[test]
    fn lsv_rows_and_pile_up() {
        let n = 1 << 10;
        let m = ulam_matrix(&FiberMap::lsv(0.1).unwrap(), n, 64).unwrap();
        assert!(m.min_entry() >= 0.0);
        assert!((0..n).all(|i| (m.row_sum(i) - 1.0).abs() < 1e-12));
        let column0: f64 = (0..n).map(|i| m.entry(i, 0)).sum();
        assert!(column0 / n as f64 > 1.0 / n as f64);
    }

    #[test]
    fn pushforward_examples() {
        let m = ulam_matrix(&FiberMap::doubling(), 64, 16).unwrap();
        let u = GridDensity::uniform(64);
        assert!(pushforward(&m, &u).unwrap().l1_distance(&u) < 1e-15);

        let lsv = ulam_matrix(&FiberMap::lsv(0.12).unwrap(), 64, 16).unwrap();
        let out = pushforward(&lsv, &GridDensity::point_mass(64, 5)).unwrap();
        for j in 0..64 {
            assert_eq!(out.masses()[j], lsv.entry(5, j));
        }
        assert!(pushforward(&lsv, &GridDensity::uniform(32)).is_err());
    }

    #[test]
    fn pushforwards_compose_as_matrix_products() {
        let n = 128;
        let ms: Vec<TransferMatrix> = [0.05, 0.1, 0.15]
            .iter()
            .map(|&a| ulam_matrix(&FiberMap::lsv(a).unwrap(), n, 16).unwrap())
            .collect();
        let raw: Vec<f64> = (0..n).map(|i| ((i * 37 + 11) % 17) as f64 + 0.5).collect();
        let total: f64 = raw.iter().sum();
        let rho = GridDensity {
            masses: raw.iter().map(|v| v / total).collect(),
        };
        let stepwise = ms.iter().fold(rho.clone(), |r, m| pushforward(m, &r).unwrap());
        let product = ms[0].then(&ms[1]).unwrap().then(&ms[2]).unwrap();
        let direct = pushforward(&product, &rho).unwrap();
        assert!(stepwise.l1_distance(&direct) < 1e-14);
    }

    #[test]
    fn doubling_density_is_uniform() {
        let settings = GridSettings::new(256, 8);
        let h = equivariant_density(&doubling(), &settings).unwrap();
        assert!(h.l1_distance(&GridDensity::uniform(256)) < 1e-13);
        let h0 = equivariant_density(&doubling(), &GridSettings::new(256, 0)).unwrap();
        assert_eq!(h0, GridDensity::uniform(256));
    }

    #[test]
    fn equivariance_improves_with_depth() {
        let seq = ParamSequence::new(11, Family::Lsv, ParamBounds::new(0.05, 0.15)).unwrap();
        let shallow = equivariance_residual(&seq, &GridSettings::new(1 << 12, 4)).unwrap();
        let deep = equivariance_residual(&seq, &GridSettings::new(1 << 12, 32)).unwrap();
        assert!(deep < shallow, "deep {deep} shallow {shallow}");
    }

    #[test]
    fn dual_of_one_is_one() {
        let seq = ParamSequence::new(3, Family::Lsv, ParamBounds::new(0.05, 0.15)).unwrap();
        let settings = GridSettings::new(1 << 10, 16);
        let out = dual_apply(&seq, &GridFunction::constant(1 << 10, 1.0), &settings).unwrap();
        assert_eq!(out.masked_fraction, 0.0);
        assert!(out.values.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn doubling_kills_cos() {
        let settings = GridSettings::new(1 << 12, 4);
        let psi = GridFunction::from_observable(&Observable::Cos2Pi, &FiberMap::doubling(), 1 << 12);
        let out = dual_apply(&doubling(), &psi, &settings).unwrap();
        assert!(out.values.sup_abs() < 1e-12);
    }

    #[test]
    fn duality_against_fine_quadrature() {
        let seq = ParamSequence::new(21, Family::Lsv, ParamBounds::new(0.05, 0.15)).unwrap();
        let n = 1 << 12;
        let settings = GridSettings::new(n, 16);
        let chain = OperatorChain::build(&seq, 0, 0, &settings).unwrap();
        let f = seq.fiber(0);
        let psi = GridFunction::from_fn(n, |i| ((i as f64 + 0.5) / n as f64 * 5.0).sin());
        let p_psi = chain.dual(0, &psi).unwrap().values;
        for trial in 0..3 {
            let (a, b, c) = (0.3 + trial as f64, 1.0 + 0.5 * trial as f64, 0.2 * trial as f64);
            let upsilon = |x: f64| a * (2.0 * std::f64::consts::PI * x + c).sin() + b * x * x;
            // left: int psi (upsilon o f) d mu_0 with 32 midpoints per bin
            let h0 = chain.density(0).masses();
            let left: f64 = (0..n)
                .map(|i| {
                    let avg: f64 = (0..32)
                        .map(|k| upsilon(f.image((i as f64 + (k as f64 + 0.5) / 32.0) / n as f64)))
                        .sum::<f64>()
                        / 32.0;
                    psi.values[i] * h0[i] * avg
                })
                .sum();
            let h1 = chain.density(1).masses();
            let right: f64 = (0..n)
                .map(|j| {
                    let avg: f64 = (0..32)
                        .map(|k| upsilon((j as f64 + (k as f64 + 0.5) / 32.0) / n as f64))
                        .sum::<f64>()
                        / 32.0;
                    p_psi.values[j] * h1[j] * avg
                })
                .sum();
            assert!((left - right).abs() < 1e-3, "trial {trial}: {left} vs {right}");
        }
    }

    #[test]
    fn iterated_dual_matches_product_operator() {
        let seq = ParamSequence::new(5, Family::Lsv, ParamBounds::new(0.05, 0.15)).unwrap();
        let n = 512;
        let settings = GridSettings::new(n, 8);
        let chain = OperatorChain::build(&seq, 0, 2, &settings).unwrap();
        let psi = GridFunction::from_fn(n, |i| (i as f64 * 0.37).cos());
        let mut iter = psi.clone();
        for k in 0..3 {
            iter = chain.dual(k, &iter).unwrap().values;
        }
        let product = chain.matrix(0).then(chain.matrix(1)).unwrap().then(chain.matrix(2)).unwrap();
        let h0 = chain.density(0).masses();
        let h3 = chain.density(3).masses();
        let mut num = vec![0.0; n];
        for i in 0..n {
            for (j, v) in product.row(i) {
                num[j] += psi.values[i] * h0[i] * v;
            }
        }
        for j in 0..n {
            if h3[j] >= MASK_FLOOR {
                assert!((num[j] / h3[j] - iter.values[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn decay_curve_examples() {
        let settings = GridSettings::new(1 << 10, 4);
        let bounds = ParamBounds::fixed(0.0);
        let c = decay_curve(Family::Doubling, bounds, &[1, 2], &Observable::Cos2Pi, 3, &settings).unwrap();
        // n = 0: centered L1 norm of cos is 2/pi (slightly less after bin averaging)
        assert!((c.rows[0].estimate - 2.0 / std::f64::consts::PI).abs() < 1e-5);
        assert!(c.rows[1].estimate < 1e-12);
        let z = decay_curve(
            Family::Doubling,
            bounds,
            &[1],
            &Observable::Constant { value: 3.0 },
            3,
            &settings,
        )
        .unwrap();
        assert!(z.rows.iter().all(|r| r.estimate < 1e-12));
    }
}
