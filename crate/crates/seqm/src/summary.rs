//! Posterior summaries: predominant modes, highest posterior density regions
//! and chain diagnostics.
//!
//! Multi-modal marginals make means and quantile intervals misleading, so the
//! point estimate is the predominant mode of a Gaussian kernel density
//! estimate and uncertainty is reported as HPDRs, which may be unions of
//! disjoint intervals. The KDE bandwidth follows Silverman's normal-reference
//! rule (`0.9 min(sd, IQR/1.34) n^{-1/5}`) and the evaluation grid extends
//! three bandwidths past the sample extremes so modes near the edge are not
//! clipped.

use crate::geo::GeoPoint;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SummaryError {
    #[error("need at least {1} samples, got {0}")]
    InsufficientSamples(usize, usize),
    #[error("samples contain non-finite values")]
    NonFinite,
    #[error("HPDR level {0} must lie in (0, 1)")]
    BadLevel(f64),
    #[error("latitude and longitude sample lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

const MIN_SAMPLES: usize = 100;
const GRID_1D: usize = 512;
const GRID_2D: usize = 256;

/// A closed interval on the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Mode, HPDR and mixing diagnostics of one scalar parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSummary {
    pub name: String,
    pub mode: f64,
    pub hpdr: Vec<Interval>,
    pub level: f64,
    pub ess: Option<f64>,
    pub act: Option<f64>,
}

impl MarginalSummary {
    /// The HPDR interval containing the predominant mode.
    pub fn mode_interval(&self) -> Interval {
        *self
            .hpdr
            .iter()
            .find(|iv| iv.contains(self.mode))
            .expect("mode lies in an HPDR interval by construction")
    }
}

fn validate(samples: &[f64]) -> Result<(), SummaryError> {
    if samples.len() < MIN_SAMPLES {
        return Err(SummaryError::InsufficientSamples(samples.len(), MIN_SAMPLES));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(SummaryError::NonFinite);
    }
    Ok(())
}

fn mean_sd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let (_, sd) = mean_sd(samples);
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let idx = p * (sorted.len() - 1) as f64;
        let lo = idx.floor() as usize;
        let frac = idx - lo as f64;
        if lo + 1 < sorted.len() {
            sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
        } else {
            sorted[lo]
        }
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (samples.len() as f64).powf(-0.2)
}

struct Kde1d {
    grid: Vec<f64>,
    density: Vec<f64>,
    cell: f64,
}

fn kde_1d(samples: &[f64]) -> Kde1d {
    let h = silverman_bandwidth(samples);
    let (min, max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let lo = min - 3.0 * h;
    let hi = max + 3.0 * h;
    let cell = (hi - lo) / (GRID_1D - 1) as f64;
    let grid: Vec<f64> = (0..GRID_1D).map(|i| lo + i as f64 * cell).collect();
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|&g| {
            let mut acc = 0.0;
            for &x in samples {
                let z = (g - x) / h;
                if z.abs() < 8.0 {
                    acc += (-0.5 * z * z).exp();
                }
            }
            acc * norm
        })
        .collect();
    Kde1d { grid, density, cell }
}

/// Predominant mode: the argmax of the kernel density estimate on a 512-point
/// grid. Constant samples short-circuit to the constant.
pub fn marginal_mode(samples: &[f64]) -> Result<f64, SummaryError> {
    validate(samples)?;
    if is_constant(samples) {
        return Ok(samples[0]);
    }
    let kde = kde_1d(samples);
    let (idx, _) = kde
        .density
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    Ok(kde.grid[idx])
}

fn is_constant(samples: &[f64]) -> bool {
    samples.iter().all(|&x| x == samples[0])
}

/// Highest posterior density region at level `gamma`: the smallest-measure
/// union of KDE grid cells holding at least `gamma` of the estimated mass,
/// merged into maximal disjoint intervals ordered left to right.
pub fn hpdr(samples: &[f64], gamma: f64) -> Result<Vec<Interval>, SummaryError> {
    validate(samples)?;
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(SummaryError::BadLevel(gamma));
    }
    if is_constant(samples) {
        return Ok(vec![Interval {
            lo: samples[0],
            hi: samples[0],
        }]);
    }
    let kde = kde_1d(samples);
    let total: f64 = kde.density.iter().sum();
    let mut order: Vec<usize> = (0..kde.density.len()).collect();
    order.sort_by(|&a, &b| kde.density[b].partial_cmp(&kde.density[a]).unwrap());
    let mut selected = vec![false; kde.density.len()];
    let mut mass = 0.0;
    for idx in order {
        selected[idx] = true;
        mass += kde.density[idx] / total;
        if mass >= gamma {
            break;
        }
    }
    let mut intervals = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..selected.len() {
        match (selected[i], run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                intervals.push(cell_interval(&kde, s, i - 1));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        intervals.push(cell_interval(&kde, s, selected.len() - 1));
    }
    Ok(intervals)
}

fn cell_interval(kde: &Kde1d, first: usize, last: usize) -> Interval {
    Interval {
        lo: kde.grid[first] - kde.cell / 2.0,
        hi: kde.grid[last] + kde.cell / 2.0,
    }
}

/// The KDE evaluation grid and density values, for plot-ready output.
pub fn density_estimate(samples: &[f64]) -> Result<(Vec<f64>, Vec<f64>), SummaryError> {
    validate(samples)?;
    if is_constant(samples) {
        return Ok((vec![samples[0]], vec![1.0]));
    }
    let kde = kde_1d(samples);
    Ok((kde.grid, kde.density))
}

/// Mode, HPDR and diagnostics of one parameter in a single pass.
pub fn marginal_summary(
    name: &str,
    samples: &[f64],
    gamma: f64,
) -> Result<MarginalSummary, SummaryError> {
    let mode = marginal_mode(samples)?;
    let hpdr = hpdr(samples, gamma)?;
    let diag = diagnostics(samples);
    Ok(MarginalSummary {
        name: name.to_string(),
        mode,
        hpdr,
        level: gamma,
        ess: diag.ess,
        act: diag.act,
    })
}

/// Joint epicentre summary: 2D KDE on a 256x256 grid (linear binning plus a
/// separable Gaussian convolution), the mode cell centre, and the HPDR cell
/// mask at level `gamma`. Cell masses are normalised to sum to one.
#[derive(Debug, Clone)]
pub struct EpicentreSummary {
    pub mode: GeoPoint,
    pub lat_grid: Vec<f64>,
    pub lon_grid: Vec<f64>,
    /// Row-major `lat x lon` cell masses, summing to one.
    pub density: Vec<f64>,
    /// Cells in the level-`gamma` HPDR, same layout as `density`.
    pub hpdr_mask: Vec<bool>,
    pub level: f64,
}

fn axis_grid(samples: &[f64], h: f64, n: usize) -> (Vec<f64>, f64) {
    let (min, max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let span_lo = min - 3.0 * h;
    let span_hi = max + 3.0 * h;
    let cell = (span_hi - span_lo) / (n - 1) as f64;
    ((0..n).map(|i| span_lo + i as f64 * cell).collect(), cell)
}

fn gaussian_kernel(h: f64, cell: f64) -> Vec<f64> {
    let half = ((4.0 * h / cell).ceil() as usize).max(1);
    let mut k: Vec<f64> = (0..=half)
        .map(|i| (-0.5 * (i as f64 * cell / h).powi(2)).exp())
        .collect();
    let total = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    for v in k.iter_mut() {
        *v /= total;
    }
    k
}

pub fn epicentre_summary(
    lat_samples: &[f64],
    lon_samples: &[f64],
    gamma: f64,
) -> Result<EpicentreSummary, SummaryError> {
    if lat_samples.len() != lon_samples.len() {
        return Err(SummaryError::LengthMismatch(
            lat_samples.len(),
            lon_samples.len(),
        ));
    }
    validate(lat_samples)?;
    validate(lon_samples)?;
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(SummaryError::BadLevel(gamma));
    }
    let n = GRID_2D;
    let h_lat = positive_bandwidth(lat_samples);
    let h_lon = positive_bandwidth(lon_samples);
    let (lat_grid, lat_cell) = axis_grid(lat_samples, h_lat, n);
    let (lon_grid, lon_cell) = axis_grid(lon_samples, h_lon, n);

    // Linear binning of the sample cloud.
    let mut mass = vec![0.0; n * n];
    for (&la, &lo) in lat_samples.iter().zip(lon_samples) {
        let fi = (la - lat_grid[0]) / lat_cell;
        let fj = (lo - lon_grid[0]) / lon_cell;
        let i = (fi.floor() as usize).min(n - 2);
        let j = (fj.floor() as usize).min(n - 2);
        let wi = fi - i as f64;
        let wj = fj - j as f64;
        mass[i * n + j] += (1.0 - wi) * (1.0 - wj);
        mass[i * n + j + 1] += (1.0 - wi) * wj;
        mass[(i + 1) * n + j] += wi * (1.0 - wj);
        mass[(i + 1) * n + j + 1] += wi * wj;
    }

    // Separable Gaussian smoothing, then renormalisation.
    let k_lat = gaussian_kernel(h_lat, lat_cell);
    let k_lon = gaussian_kernel(h_lon, lon_cell);
    let mut tmp = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let m = mass[i * n + j];
            if m == 0.0 {
                continue;
            }
            for (d, w) in k_lat.iter().enumerate() {
                if d == 0 {
                    tmp[i * n + j] += m * w;
                } else {
                    if i >= d {
                        tmp[(i - d) * n + j] += m * w;
                    }
                    if i + d < n {
                        tmp[(i + d) * n + j] += m * w;
                    }
                }
            }
        }
    }
    let mut density = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let m = tmp[i * n + j];
            if m == 0.0 {
                continue;
            }
            for (d, w) in k_lon.iter().enumerate() {
                if d == 0 {
                    density[i * n + j] += m * w;
                } else {
                    if j >= d {
                        density[i * n + j - d] += m * w;
                    }
                    if j + d < n {
                        density[i * n + j + d] += m * w;
                    }
                }
            }
        }
    }
    let total: f64 = density.iter().sum();
    for v in density.iter_mut() {
        *v /= total;
    }

    let (mode_idx, _) = density
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let mode_lat = lat_grid[mode_idx / n].clamp(-90.0, 90.0);
    let mode_lon = lon_grid[mode_idx % n].clamp(-180.0, 180.0);

    let mut order: Vec<usize> = (0..density.len()).collect();
    order.sort_by(|&a, &b| density[b].partial_cmp(&density[a]).unwrap());
    let mut hpdr_mask = vec![false; density.len()];
    let mut acc = 0.0;
    for idx in order {
        hpdr_mask[idx] = true;
        acc += density[idx];
        if acc >= gamma {
            break;
        }
    }

    Ok(EpicentreSummary {
        mode: GeoPoint::new(mode_lat, mode_lon).expect("grid mode clamped into bounds"),
        lat_grid,
        lon_grid,
        density,
        hpdr_mask,
        level: gamma,
    })
}

fn positive_bandwidth(samples: &[f64]) -> f64 {
    let h = silverman_bandwidth(samples);
    if h > 0.0 {
        h
    } else {
        1e-6
    }
}

/// Autocorrelations and effective sample size of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Autocorrelation at lags `0..=100` (shorter for short chains).
    pub autocorr: Vec<f64>,
    /// `n / act`; `None` for a degenerate (constant) chain.
    pub ess: Option<f64>,
    /// Integrated autocorrelation time `1 + 2 sum of the initial positive
    /// autocorrelation sequence`; `None` for a degenerate chain.
    pub act: Option<f64>,
}

/// Lag autocorrelations by direct summation and the positive-sequence ESS
/// estimate. Constant chains report the degenerate flag instead of NaN.
pub fn diagnostics(samples: &[f64]) -> Diagnostics {
    let n = samples.len();
    let report_lags = 100.min(n.saturating_sub(1));
    if n < 2 || is_constant(samples) {
        return Diagnostics {
            autocorr: std::iter::once(1.0)
                .chain(std::iter::repeat(0.0).take(report_lags))
                .collect(),
            ess: None,
            act: None,
        };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = samples.iter().map(|x| x - mean).collect();
    let var: f64 = centered.iter().map(|x| x * x).sum();
    let rho = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..n - lag {
            acc += centered[i] * centered[i + lag];
        }
        acc / var
    };
    let autocorr: Vec<f64> = (0..=report_lags).map(rho).collect();

    // Sum the initial positive sequence, probing past the reporting window if
    // the chain is still correlated there.
    let mut act = 1.0;
    let max_lag = (n - 1).min(10_000);
    for lag in 1..=max_lag {
        let r = if lag <= report_lags { autocorr[lag] } else { rho(lag) };
        if r <= 0.0 {
            break;
        }
        act += 2.0 * r;
    }
    Diagnostics {
        autocorr,
        ess: Some(n as f64 / act),
        act: Some(act),
    }
}
