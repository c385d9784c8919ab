//! Measurement analysis shared by simulated and imported data: linecut
//! correlation, step grouping, histogram thresholding and 2-D shift
//! extraction for persistent-current monitoring.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::microwave::TransmissionGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("curve {0} has zero norm")]
    ZeroNormCurve(usize),
    #[error("correlation histogram has a single peak; widen the sweep")]
    UnimodalHistogram,
    #[error("grid has zero variance")]
    FlatGrid,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Linecuts `τ_m(I_Z)`, one per C-axis index `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinecutSet {
    pub curves: Vec<Vec<Complex64>>,
    pub i_z_axis: Vec<f64>,
    pub c_axis: Vec<f64>,
}

impl LinecutSet {
    pub fn new(curves: Vec<Vec<Complex64>>, i_z_axis: Vec<f64>, c_axis: Vec<f64>) -> Result<Self, AnalysisError> {
        if curves.len() != c_axis.len() {
            return Err(AnalysisError::InvalidInput("one curve per C-axis value required".into()));
        }
        if curves.iter().any(|c| c.len() != i_z_axis.len()) {
            return Err(AnalysisError::InvalidInput("every curve must match the I_Z axis".into()));
        }
        Ok(Self {
            curves,
            i_z_axis,
            c_axis,
        })
    }

    /// Columns of a grid become linecuts.
    pub fn from_grid(grid: &TransmissionGrid) -> Self {
        Self {
            curves: (0..grid.cols()).map(|ic| grid.column(ic)).collect(),
            i_z_axis: grid.i_z_axis.clone(),
            c_axis: grid.c_axis.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Normalised complex correlation `Σ τ*_m τ_n / (‖τ_m‖ ‖τ_n‖)`.
pub fn chi_complex(a: &[Complex64], b: &[Complex64]) -> Result<Complex64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::InvalidInput("curves differ in length".into()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(AnalysisError::ZeroNormCurve(0));
    }
    if nb == 0.0 {
        return Err(AnalysisError::ZeroNormCurve(1));
    }
    Ok(inner(a, b) / (na * nb))
}

/// Real part of [`chi_complex`].
pub fn chi(a: &[Complex64], b: &[Complex64]) -> Result<f64, AnalysisError> {
    if std::ptr::eq(a, b) {
        return if norm(a) == 0.0 { Err(AnalysisError::ZeroNormCurve(0)) } else { Ok(1.0) };
    }
    Ok(chi_complex(a, b)?.re.clamp(-1.0, 1.0))
}

/// Magnitude of [`chi_complex`], insensitive to a common phase.
pub fn chi_abs(a: &[Complex64], b: &[Complex64]) -> Result<f64, AnalysisError> {
    Ok(chi_complex(a, b)?.norm().min(1.0))
}

/// Unit-norm copies of every curve for repeated correlation.
struct Normalized(Vec<Vec<Complex64>>);

impl Normalized {
    fn new(set: &LinecutSet) -> Result<Self, AnalysisError> {
        set.curves
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let n = norm(c);
                if n == 0.0 {
                    Err(AnalysisError::ZeroNormCurve(k))
                } else {
                    Ok(c.iter().map(|x| x / n).collect())
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }

    fn chi(&self, m: usize, n: usize) -> f64 {
        if m == n {
            return 1.0;
        }
        inner(&self.0[m], &self.0[n]).re.clamp(-1.0, 1.0)
    }
}

/// χ between each index and its neighbours up to `window` positions away.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiBand {
    pub window: usize,
    pub len: usize,
    /// `values[m * (2w+1) + (n - m + w)]`; NaN outside the index range.
    pub values: Vec<f64>,
}

impl ChiBand {
    pub fn get(&self, m: usize, n: usize) -> Option<f64> {
        let w = self.window;
        if m >= self.len || n >= self.len || m.abs_diff(n) > w {
            return None;
        }
        Some(self.values[m * (2 * w + 1) + n + w - m])
    }

    /// Off-diagonal pairs `m < n` within the window.
    pub fn pairs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).flat_map(move |m| ((m + 1)..(m + self.window + 1).min(self.len)).filter_map(move |n| self.get(m, n)))
    }
}

pub fn chi_band(set: &LinecutSet, window: usize) -> Result<ChiBand, AnalysisError> {
    let norm = Normalized::new(set)?;
    let n = set.len();
    let stride = 2 * window + 1;
    let values: Vec<f64> = (0..n * stride)
        .into_par_iter()
        .map(|idx| {
            let (m, off) = (idx / stride, idx % stride);
            let k = m as i64 + off as i64 - window as i64;
            if k < 0 || k >= n as i64 {
                f64::NAN
            } else {
                norm.chi(m, k as usize)
            }
        })
        .collect();
    Ok(ChiBand {
        window,
        len: n,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramOptions {
    pub bin_width: f64,
    /// Smallest peak prominence kept, as a fraction of the tallest bin.
    pub min_prominence: f64,
}

impl Default for HistogramOptions {
    fn default() -> Self {
        Self {
            bin_width: 1e-4,
            min_prominence: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(values: impl IntoIterator<Item = f64>, bin_width: f64) -> Self {
        let values: Vec<f64> = values.into_iter().filter(|v| v.is_finite()).collect();
        let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(1.0);
        let lo = values.iter().cloned().fold(top, f64::min);
        let bins = (((top - lo) / bin_width).floor() as usize + 1).max(1);
        let mut counts = vec![0u64; bins];
        for v in values {
            let k = (((v - lo) / bin_width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self { lo, bin_width, counts }
    }

    pub fn center(&self, k: f64) -> f64 {
        self.lo + (k + 0.5) * self.bin_width
    }
}

/// Indices of local maxima of `s` whose topographic prominence is at least
/// `floor`.
fn prominent_peaks(s: &[f64], floor: f64) -> Vec<usize> {
    let n = s.len();
    let mut peaks = Vec::new();
    let mut k = 0;
    while k < n {
        // Plateaus count once, at their centre.
        let mut e = k;
        while e + 1 < n && s[e + 1] == s[k] {
            e += 1;
        }
        let left_ok = k == 0 || s[k - 1] < s[k];
        let right_ok = e + 1 == n || s[e + 1] < s[k];
        if left_ok && right_ok && s[k] > 0.0 {
            let h = s[k];
            let mut left_min = h;
            let mut i = k;
            while i > 0 && s[i - 1] <= h {
                i -= 1;
                left_min = left_min.min(s[i]);
            }
            if i == 0 && s[0] <= h {
                left_min = left_min.min(0.0);
            }
            let mut right_min = h;
            let mut i = e;
            while i + 1 < n && s[i + 1] <= h {
                i += 1;
                right_min = right_min.min(s[i]);
            }
            if i + 1 == n {
                right_min = right_min.min(0.0);
            }
            if h - left_min.max(right_min) >= floor {
                peaks.push((k + e) / 2);
            }
        }
        k = e + 1;
    }
    peaks
}

/// Threshold at the deepest valley between the two highest-χ peaks of the
/// histogram of `values`.
pub fn histogram_threshold(values: impl IntoIterator<Item = f64>, opts: &HistogramOptions) -> Result<f64, AnalysisError> {
    let h = Histogram::build(values, opts.bin_width);
    let raw: Vec<f64> = h.counts.iter().map(|c| *c as f64).collect();
    let n = raw.len();
    let smooth: Vec<f64> = (0..n)
        .map(|k| {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(n - 1);
            raw[lo..=hi].iter().sum::<f64>() / 3.0
        })
        .collect();
    let tallest = smooth.iter().cloned().fold(0.0, f64::max);
    let floor = (opts.min_prominence * tallest).max(1.0 / 3.0);
    let peaks = prominent_peaks(&smooth, floor);
    if peaks.len() < 2 {
        return Err(AnalysisError::UnimodalHistogram);
    }
    let (p1, p0) = (peaks[peaks.len() - 2], peaks[peaks.len() - 1]);
    let between = &raw[p1..=p0];
    let depth = between.iter().cloned().fold(f64::INFINITY, f64::min);
    // Longest run at the minimum depth; its centre is the threshold.
    let (mut best, mut best_len, mut run_start) = ((0, 0), 0, None);
    for (k, v) in between.iter().enumerate().chain(std::iter::once((between.len(), &f64::INFINITY))) {
        match (*v == depth, run_start) {
            (true, None) => run_start = Some(k),
            (false, Some(s)) => {
                if k - s > best_len {
                    best_len = k - s;
                    best = (s, k - 1);
                }
                run_start = None;
            }
            _ => {}
        }
    }
    let mid = p1 as f64 + 0.5 * (best.0 + best.1) as f64;
    Ok(h.center(mid))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepOptions {
    /// Neighbourhood (in indices) over which linecuts are compared.
    pub window: usize,
    /// χ below which a linecut matches no group at all.
    pub outlier_chi: f64,
    /// Half-width of the stochastic zone around each boundary, as a fraction
    /// of the local step width. Indices there that carry the neighbouring
    /// step's flux are boundary noise rather than failures.
    pub boundary_fuzz: f64,
    /// A group is a step when it holds at least this fraction of the indices
    /// in its own span; sparse groups are stray mistraps.
    pub min_dominance: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            window: 50,
            outlier_chi: 0.9,
            boundary_fuzz: 0.25,
            min_dominance: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepGroup {
    /// Member indices whose linecut matches this step.
    pub members: Vec<usize>,
    /// Index span of the step between its boundaries, inclusive.
    pub segment: (usize, usize),
    pub medoid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub threshold: f64,
    /// Steps in index order.
    pub groups: Vec<StepGroup>,
    /// Boundary positions in index units (half-integers).
    pub boundaries: Vec<f64>,
    /// C-axis value at each boundary.
    pub boundary_c: Vec<f64>,
    /// Width of each fully bounded step (C-axis units).
    pub step_widths: Vec<f64>,
    /// C-axis midpoint of each fully bounded step.
    pub step_centers: Vec<f64>,
    /// Step ordinal of each index's linecut, `None` for outliers.
    pub labels: Vec<Option<usize>>,
    /// Step ordinal whose flux each linecut carries, outliers included;
    /// `None` when it matches no step.
    pub flux_labels: Vec<Option<usize>>,
    pub outlier_indices: Vec<usize>,
    /// Outlier fraction among indices outside the boundary zones, where
    /// mistraps and boundary noise cannot be confused.
    pub failure_rate: f64,
    /// Outliers over all indices.
    pub outlier_fraction: f64,
}

fn interp_axis(axis: &[f64], pos: f64) -> f64 {
    let n = axis.len();
    if n == 1 {
        return axis[0];
    }
    let k = (pos.floor().max(0.0) as usize).min(n - 2);
    let t = pos - k as f64;
    axis[k] + t * (axis[k + 1] - axis[k])
}

/// Boundary between a lower group `a` and an upper group `b`: fewest
/// misassigned indices, ties resolved by the smallest mean-square distance of
/// the misassigned indices to the boundary.
fn place_boundary(a: &[usize], b: &[usize], lo: usize, hi: usize) -> f64 {
    let mut best = (usize::MAX, f64::INFINITY, lo as f64 + 0.5);
    for k in lo..hi.max(lo + 1) {
        let pos = k as f64 + 0.5;
        let wrong_a = a.iter().filter(|&&i| i as f64 > pos);
        let wrong_b = b.iter().filter(|&&i| (i as f64) < pos);
        let wrong: Vec<f64> = wrong_a.chain(wrong_b).map(|&i| (i as f64 - pos).powi(2)).collect();
        let count = wrong.len();
        let msd = if count == 0 { 0.0 } else { wrong.iter().sum::<f64>() / count as f64 };
        if count < best.0 || (count == best.0 && msd < best.1) {
            best = (count, msd, pos);
        }
    }
    best.2
}

fn medoid(members: &[usize], norm: &Normalized) -> usize {
    // Large groups are sampled evenly to bound the cost; ties go to the
    // member nearest the median index.
    let stride = (members.len() / 64).max(1);
    let sample: Vec<usize> = members.iter().step_by(stride).cloned().collect();
    let centre = members[members.len() / 2];
    let score = |p: usize| sample.iter().map(|&r| norm.chi(p, r)).sum::<f64>();
    let scores: Vec<f64> = sample.iter().map(|&p| score(p)).collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * sample.len() as f64;
    *sample
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s >= top - tol)
        .min_by_key(|(&p, _)| (p.abs_diff(centre), p))
        .map(|(p, _)| p)
        .expect("non-empty group")
}

/// Groups linecuts by trapped flux, places step boundaries and counts trap
/// failures.
pub fn group_steps(set: &LinecutSet, threshold: f64, opts: &StepOptions) -> Result<StepReport, AnalysisError> {
    let n = set.len();
    if n == 0 {
        return Err(AnalysisError::InvalidInput("no linecuts".into()));
    }
    let norm = Normalized::new(set)?;
    let w = opts.window.max(1);

    // Greedy clustering in index order against groups active in the window.
    let mut reps: Vec<usize> = Vec::new();
    let mut last: Vec<usize> = Vec::new();
    let mut label = vec![0usize; n];
    for m in 0..n {
        let best = (0..reps.len())
            .filter(|&g| m - last[g] <= w)
            .map(|g| (g, norm.chi(m, reps[g])))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((g, c)) if c >= threshold => {
                label[m] = g;
                last[g] = m;
            }
            _ => {
                label[m] = reps.len();
                reps.push(m);
                last.push(m);
            }
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); reps.len()];
    for (m, &g) in label.iter().enumerate() {
        members[g].push(m);
    }
    // Re-centre on medoids and reassign once.
    let medoids: Vec<usize> = members.iter().map(|g| medoid(g, &norm)).collect();
    let relabel: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|m| {
            (0..medoids.len())
                .filter(|&g| medoids[g].abs_diff(m) <= 2 * w || g == label[m])
                .map(|g| (g, norm.chi(m, medoids[g])))
                .filter(|(g, c)| *c >= threshold || *g == label[m])
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(g, _)| g)
                .unwrap_or(label[m])
        })
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); reps.len()];
    for (m, &g) in relabel.iter().enumerate() {
        members[g].push(m);
    }

    // Merge fragments of one flux value that were seeded far apart.
    let live: Vec<usize> = (0..members.len()).filter(|&g| !members[g].is_empty()).collect();
    let meds: Vec<usize> = live.iter().map(|&g| medoid(&members[g], &norm)).collect();
    let reach = 2 * live
        .iter()
        .map(|&g| members[g][members[g].len() - 1] - members[g][0] + 1)
        .max()
        .unwrap_or(1)
        .max(2 * w);
    let mut parent: Vec<usize> = (0..live.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for a in 0..live.len() {
        for b in (a + 1)..live.len() {
            let (ga, gb) = (&members[live[a]], &members[live[b]]);
            let gap = if gb[0] > ga[ga.len() - 1] {
                gb[0] - ga[ga.len() - 1]
            } else {
                ga[0].saturating_sub(gb[gb.len() - 1])
            };
            if gap <= reach && norm.chi(meds[a], meds[b]) >= threshold {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut merged: Vec<Vec<usize>> = vec![Vec::new(); live.len()];
    let mut relabel = relabel;
    for (k, &g) in live.iter().enumerate() {
        let root = find(&mut parent, k);
        for &m in &members[g] {
            relabel[m] = root;
        }
    }
    for (m, &g) in relabel.iter().enumerate() {
        merged[g].push(m);
    }
    let members = merged;

    // Steps: groups that dominate their core span and are not nested inside
    // a larger step.
    // Core: the most populated run of members with gaps of at most `w / 10`.
    let max_gap = (w / 10).max(1);
    let core = |v: &Vec<usize>| {
        let (mut best, mut start) = ((v[0], v[0], 1usize), 0usize);
        for k in 1..=v.len() {
            if k == v.len() || v[k] - v[k - 1] > max_gap {
                let run = (v[start], v[k - 1], k - start);
                if run.2 > best.2 {
                    best = run;
                }
                start = k;
            }
        }
        best
    };
    let dominant: Vec<usize> = (0..members.len())
        .filter(|&g| {
            let v = &members[g];
            if v.is_empty() {
                return false;
            }
            let (lo, hi, inside) = core(v);
            inside as f64 >= opts.min_dominance * (hi - lo + 1) as f64
        })
        .collect();
    let mut steps: Vec<usize> = dominant
        .iter()
        .cloned()
        .filter(|&g| {
            let (lo, hi, _) = core(&members[g]);
            !dominant.iter().any(|&o| {
                let (olo, ohi, _) = core(&members[o]);
                o != g && members[o].len() > members[g].len() && olo < lo && hi < ohi
            })
        })
        .collect();
    let core_mid = |g: usize| {
        let (lo, hi, _) = core(&members[g]);
        (lo + hi) / 2
    };
    steps.sort_by_key(|&g| (core_mid(g), g));
    let mut ordinal = vec![None; members.len()];
    for (k, &g) in steps.iter().enumerate() {
        ordinal[g] = Some(k);
    }

    let medians: Vec<usize> = steps.iter().map(|&g| core_mid(g)).collect();
    let boundaries: Vec<f64> = (1..steps.len())
        .map(|k| place_boundary(&members[steps[k - 1]], &members[steps[k]], medians[k - 1], medians[k]))
        .collect();
    let segment_of = |m: usize| boundaries.iter().filter(|&&b| (m as f64) > b).count();
    // Zone half-width at each boundary from the adjacent segment lengths.
    let edges: Vec<f64> = std::iter::once(-0.5)
        .chain(boundaries.iter().cloned())
        .chain(std::iter::once(n as f64 - 0.5))
        .collect();
    let zone: Vec<f64> = (0..boundaries.len())
        .map(|k| opts.boundary_fuzz * 0.5 * (edges[k + 2] - edges[k]))
        .collect();
    let in_zone = |m: usize| {
        boundaries
            .iter()
            .zip(&zone)
            .any(|(b, z)| (m as f64 - b).abs() <= *z)
    };

    let step_medoids: Vec<usize> = steps.iter().map(|&g| medoid(&members[g], &norm)).collect();
    let mut labels = vec![None; n];
    let mut flux_labels = vec![None; n];
    let mut outliers = Vec::new();
    for m in 0..n {
        let own = ordinal[relabel[m]];
        flux_labels[m] = own;
        let seg = segment_of(m);
        let near_steps = seg.saturating_sub(3)..(seg + 4).min(steps.len());
        let matches_any = step_medoids[near_steps].iter().any(|&r| norm.chi(m, r) >= opts.outlier_chi);
        let failed = match own {
            None => true,
            Some(_) if !matches_any => true,
            Some(k) if k == seg => false,
            Some(k) => {
                // Misassigned: forgiven only next to the shared boundary.
                let near = if k + 1 == seg {
                    m as f64 - boundaries[k] <= zone[k]
                } else if k == seg + 1 {
                    boundaries[seg] - m as f64 <= zone[seg]
                } else {
                    false
                };
                !near
            }
        };
        if failed {
            outliers.push(m);
        } else {
            labels[m] = own;
        }
    }

    let mut groups: Vec<StepGroup> = steps
        .iter()
        .enumerate()
        .map(|(k, _)| StepGroup {
            members: Vec::new(),
            segment: (
                if k == 0 { 0 } else { boundaries[k - 1].ceil() as usize },
                if k + 1 == steps.len() { n - 1 } else { boundaries[k].floor() as usize },
            ),
            medoid: step_medoids[k],
        })
        .collect();
    for (m, l) in labels.iter().enumerate() {
        if let Some(k) = l {
            groups[*k].members.push(m);
        }
    }
    let outside = (0..n).filter(|&m| !in_zone(m)).count();
    let failed = outliers.iter().filter(|&&m| !in_zone(m)).count();
    let failure_rate = if outside == 0 {
        outliers.len() as f64 / n as f64
    } else {
        failed as f64 / outside as f64
    };
    let boundary_c: Vec<f64> = boundaries.iter().map(|&b| interp_axis(&set.c_axis, b)).collect();
    let step_widths: Vec<f64> = boundary_c.windows(2).map(|p| p[1] - p[0]).collect();
    let step_centers: Vec<f64> = boundary_c.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    Ok(StepReport {
        threshold,
        groups,
        boundaries,
        boundary_c,
        step_widths,
        step_centers,
        labels,
        flux_labels,
        failure_rate,
        outlier_fraction: outliers.len() as f64 / n as f64,
        outlier_indices: outliers,
    })
}

/// Histogram threshold from the windowed χ band, then [`group_steps`].
pub fn analyze_steps(
    set: &LinecutSet,
    hist: &HistogramOptions,
    opts: &StepOptions,
    threshold_override: Option<f64>,
) -> Result<StepReport, AnalysisError> {
    let threshold = match threshold_override {
        Some(t) => t,
        None => histogram_threshold(chi_band(set, opts.window)?.pairs(), hist)?,
    };
    group_steps(set, threshold, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shift2d {
    /// Shift along `I_Z` in axis units.
    pub delta_i_z: f64,
    /// Shift along the flux axis in axis units (rad).
    pub delta_phi_ext: f64,
    pub chi_max: f64,
}

fn fft2(data: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (fr, fc) = if inverse {
        (planner.plan_fft_inverse(rows), planner.plan_fft_inverse(cols))
    } else {
        (planner.plan_fft_forward(rows), planner.plan_fft_forward(cols))
    };
    for r in data.chunks_mut(cols) {
        fc.process(r);
    }
    let mut col = vec![Complex64::default(); rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = data[r * cols + c];
        }
        fr.process(&mut col);
        for r in 0..rows {
            data[r * cols + c] = col[r];
        }
    }
}

/// Sub-sample offset of a maximum from a 3×3 neighbourhood by a least
/// squares quadratic surface; each offset is limited to ±1.
fn refine_peak(z: &[[f64; 3]; 3]) -> (f64, f64) {
    // Closed-form least squares for f = a + b x + c y + d x² + e xy + g y².
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    let mut s0 = 0.0;
    for (i, row) in z.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let (x, y) = (i as f64 - 1.0, j as f64 - 1.0);
            s0 += v;
            sx += v * x;
            sy += v * y;
            sxx += v * x * x;
            syy += v * y * y;
            sxy += v * x * y;
        }
    }
    let b = sx / 6.0;
    let c = sy / 6.0;
    let d = (sxx - 2.0 * s0 / 3.0) / 2.0;
    let g = (syy - 2.0 * s0 / 3.0) / 2.0;
    let e = sxy / 4.0;
    let det = 4.0 * d * g - e * e;
    if d < 0.0 && det > 0.0 {
        let x = (-2.0 * g * b + e * c) / det;
        let y = (-2.0 * d * c + e * b) / det;
        if x.abs() <= 1.0 && y.abs() <= 1.0 {
            return (x, y);
        }
    }
    let para = |m: f64, c0: f64, p: f64| {
        let den = m - 2.0 * c0 + p;
        if den < 0.0 {
            (0.5 * (m - p) / den).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    };
    (para(z[0][1], z[1][1], z[2][1]), para(z[1][0], z[1][1], z[1][2]))
}

/// Shift `Δ` with `τ_b(x) ≈ τ_a(x + Δ)` maximising the normalised 2-D
/// correlation. Rows are `I_Z` (zero padded), columns the periodic flux axis.
pub fn extract_shift_2d(a: &TransmissionGrid, b: &TransmissionGrid) -> Result<Shift2d, AnalysisError> {
    if a.i_z_axis.len() != b.i_z_axis.len() || a.c_axis.len() != b.c_axis.len() {
        return Err(AnalysisError::InvalidInput("grids must share axes".into()));
    }
    let (rows, cols) = (a.rows(), a.cols());
    let centred = |g: &TransmissionGrid| {
        let mean = g.tau.iter().sum::<Complex64>() / g.tau.len() as f64;
        let v: Vec<Complex64> = g.tau.iter().map(|t| t - mean).collect();
        let e: f64 = v.iter().map(|t| t.norm_sqr()).sum();
        (v, e)
    };
    let (va, ea) = centred(a);
    let (vb, eb) = centred(b);
    let scale = (ea * eb).sqrt();
    if !(scale > 0.0) || ea <= 1e-24 * a.tau.iter().map(|t| t.norm_sqr()).sum::<f64>() {
        return Err(AnalysisError::FlatGrid);
    }
    let prow = 2 * rows;
    let pad = |v: &[Complex64]| {
        let mut out = vec![Complex64::default(); prow * cols];
        out[..rows * cols].copy_from_slice(v);
        out
    };
    let (mut fa, mut fb) = (pad(&va), pad(&vb));
    fft2(&mut fa, prow, cols, false);
    fft2(&mut fb, prow, cols, false);
    let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    fft2(&mut prod, prow, cols, true);
    let norm = 1.0 / ((prow * cols) as f64 * scale);
    let corr: Vec<f64> = prod.iter().map(|v| v.re * norm).collect();
    let at = |r: i64, c: i64| corr[(r.rem_euclid(prow as i64) as usize) * cols + c.rem_euclid(cols as i64) as usize];

    let (mut best, mut br, mut bc) = (f64::NEG_INFINITY, 0i64, 0i64);
    for r in -(rows as i64 - 1)..=(rows as i64 - 1) {
        for c in -((cols as i64 - 1) / 2)..=(cols as i64 / 2) {
            let v = at(r, c);
            let closer = (r.abs() + c.abs()) < (br.abs() + bc.abs());
            if v > best + 1e-12 || (v > best - 1e-12 && closer) {
                best = best.max(v);
                br = r;
                bc = c;
            }
        }
    }
    let mut z = [[0.0; 3]; 3];
    for (i, row) in z.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let r = br + i as i64 - 1;
            *v = if r.unsigned_abs() as usize >= rows { 0.0 } else { at(r, bc + j as i64 - 1) };
        }
    }
    let (dr, dc) = if rows >= 3 || cols >= 3 { refine_peak(&z) } else { (0.0, 0.0) };
    let (dr, dc) = (if rows < 2 { 0.0 } else { dr }, if cols < 3 { 0.0 } else { dc });
    let step = |axis: &[f64]| if axis.len() > 1 { axis[1] - axis[0] } else { 0.0 };
    let (sr, sc) = (br as f64 + dr, bc as f64 + dc);
    Ok(Shift2d {
        delta_i_z: -sr * step(&a.i_z_axis),
        delta_phi_ext: -sc * step(&a.c_axis),
        chi_max: best.min(1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftJump {
    pub epoch: usize,
    pub time: f64,
    /// Change in flux shift, in units of 2π.
    pub quanta: f64,
    /// Set when the jump spans more than one flux quantum.
    pub multi_quanta: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub timestamps: Vec<f64>,
    pub delta_phi_ext: Vec<f64>,
    pub delta_i_z: Vec<f64>,
    pub chi_max: Vec<f64>,
    pub jump_times: Vec<f64>,
    pub jumps: Vec<DriftJump>,
}

/// Shift of every grid against the first; a jump is a change of more than π
/// between consecutive epochs.
pub fn monitor(grids: &[TransmissionGrid], cadence_hours: f64) -> Result<DriftRecord, AnalysisError> {
    if grids.len() < 2 {
        return Err(AnalysisError::InvalidInput("at least two grids required".into()));
    }
    let shifts: Vec<Shift2d> = grids
        .par_iter()
        .map(|g| extract_shift_2d(&grids[0], g))
        .collect::<Result<_, _>>()?;
    let c = &grids[0].c_axis;
    let period = if c.len() > 1 { (c[1] - c[0]) * c.len() as f64 } else { f64::INFINITY };
    let mut rec = DriftRecord {
        timestamps: (0..grids.len()).map(|k| k as f64 * cadence_hours).collect(),
        delta_phi_ext: Vec::with_capacity(grids.len()),
        delta_i_z: shifts.iter().map(|s| s.delta_i_z).collect(),
        chi_max: shifts.iter().map(|s| s.chi_max).collect(),
        jump_times: Vec::new(),
        jumps: Vec::new(),
    };
    // Unwrap the cyclic flux shift along the series.
    let mut prev = shifts[0].delta_phi_ext;
    rec.delta_phi_ext.push(prev);
    for (k, pair) in shifts.windows(2).enumerate() {
        let mut d = pair[1].delta_phi_ext - pair[0].delta_phi_ext;
        if period.is_finite() {
            d -= (d / period).round() * period;
        }
        prev += d;
        rec.delta_phi_ext.push(prev);
        if d.abs() > PI {
            let quanta = d / (2.0 * PI);
            let epoch = k + 1;
            rec.jump_times.push(rec.timestamps[epoch]);
            rec.jumps.push(DriftJump {
                epoch,
                time: rec.timestamps[epoch],
                quanta,
                multi_quanta: quanta.abs().round() >= 2.0,
            });
        }
    }
    Ok(rec)
}
