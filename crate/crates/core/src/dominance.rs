//! Increasing convex order between empirical samples.
//!
//! `A` is second-order dominated by `B` (as losses) when
//! `E[(A - t)+] <= E[(B - t)+]` for every `t`. Finite samples are compared on
//! a fixed grid with a pointwise `z * SE` band.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        let m = values.len();
        let mean = values.iter().sum::<f64>() / m as f64;
        let variance = if m > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64
        } else {
            0.0
        };
        Summary {
            count: m,
            mean,
            variance,
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn standard_error(&self) -> f64 {
        (self.variance / self.count as f64).sqrt()
    }
}

/// A bag of scalar draws, with its values sorted once for fast stop-loss
/// evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSample {
    label: String,
    values: Vec<f64>,
    summary: Summary,
    #[serde(skip)]
    sorted: SortedPrefix,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct SortedPrefix {
    values: Vec<f64>,
    /// `tail[i] = sum_{j >= i} v_j`, and likewise for squares.
    tail: Vec<f64>,
    tail_sq: Vec<f64>,
}

impl SortedPrefix {
    fn build(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let m = v.len();
        let mut tail = vec![0.0; m + 1];
        let mut tail_sq = vec![0.0; m + 1];
        for i in (0..m).rev() {
            tail[i] = tail[i + 1] + v[i];
            tail_sq[i] = tail_sq[i + 1] + v[i] * v[i];
        }
        SortedPrefix {
            values: v,
            tail,
            tail_sq,
        }
    }

    /// `(E[(X - t)+], E[(X - t)+^2])`
    fn moments(&self, t: f64) -> (f64, f64) {
        let m = self.values.len();
        let i = self.values.partition_point(|v| *v <= t);
        let k = (m - i) as f64;
        let s1 = self.tail[i] - t * k;
        let s2 = self.tail_sq[i] - 2.0 * t * self.tail[i] + t * t * k;
        (s1.max(0.0) / m as f64, s2.max(0.0) / m as f64)
    }
}

impl EmpiricalSample {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Sample("empty sample".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Sample(format!("non-finite value {v}")));
        }
        let summary = Summary::of(&values);
        let sorted = SortedPrefix::build(&values);
        Ok(EmpiricalSample {
            label: label.into(),
            values,
            summary,
            sorted,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn summary(&self) -> &Summary {
        &self.summary
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted.values
    }

    /// Sample median.
    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// Linear-interpolation quantile.
    pub fn quantile(&self, q: f64) -> f64 {
        let v = &self.sorted.values;
        let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }

    /// Same values, scaled by `factor`.
    pub fn scaled(&self, factor: f64, label: impl Into<String>) -> Result<Self> {
        EmpiricalSample::new(label, self.values.iter().map(|v| v * factor).collect())
    }
}

/// `(1/m) sum_i max(v_i - t, 0)`.
pub fn stop_loss(sample: &EmpiricalSample, t: f64) -> f64 {
    sample.sorted.moments(t).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DominancePolicy {
    /// Width of the pointwise band in standard errors.
    pub z: f64,
    pub grid_points: usize,
    /// Fraction of the pooled range added on each side of the grid.
    pub extension: f64,
    /// Below this size in either sample the band is dropped and the curves
    /// are compared exactly.
    pub min_band_sample: usize,
}

impl Default for DominancePolicy {
    fn default() -> Self {
        DominancePolicy {
            z: 3.0,
            grid_points: 512,
            extension: 0.05,
            min_band_sample: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Dominated,
    NotDominated,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Dominated => "dominated",
            Verdict::NotDominated => "not-dominated",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Grid point where `SL_A - SL_B - z SE` is largest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    /// `SL_A(t) - SL_B(t)`, floored at 0.
    pub magnitude: f64,
    pub standard_error: f64,
    /// `SL_A(t) - SL_B(t) - z SE(t)`.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceVerdict {
    pub verdict: Verdict,
    pub a: String,
    pub b: String,
    pub worst_violation: Violation,
    /// Grid points where the difference exceeds the band.
    pub violations_beyond_band: usize,
    pub grid: GridSpec,
    pub policy: DominancePolicy,
    /// `z` actually applied (0 under the small-sample rule).
    pub effective_z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl DominanceVerdict {
    /// Downgrades the verdict, keeping the numbers.
    pub fn mark_inconclusive(mut self, reason: impl Into<String>) -> Self {
        self.verdict = Verdict::Inconclusive;
        self.note = Some(reason.into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serializes")
    }
}

/// Is `a` smaller than `b` in increasing convex order, up to the band?
pub fn icx_dominates(a: &EmpiricalSample, b: &EmpiricalSample, policy: &DominancePolicy) -> DominanceVerdict {
    let lo = a.summary.min.min(b.summary.min);
    let hi = a.summary.max.max(b.summary.max);
    let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
    let lower = lo - policy.extension * span;
    let upper = hi + policy.extension * span;
    let points = policy.grid_points.max(2);
    let small = a.len().min(b.len()) < policy.min_band_sample;
    let z = if small { 0.0 } else { policy.z };
    // Rounding slack so identical curves never register as violations.
    let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    let (ma, mb) = (a.len() as f64, b.len() as f64);
    let mut worst: Option<Violation> = None;
    let mut beyond = 0;
    for k in 0..points {
        let t = lower + (upper - lower) * k as f64 / (points - 1) as f64;
        let (a1, a2) = a.sorted.moments(t);
        let (b1, b2) = b.sorted.moments(t);
        let var_a = if ma > 1.0 { (a2 - a1 * a1).max(0.0) * ma / (ma - 1.0) } else { 0.0 };
        let var_b = if mb > 1.0 { (b2 - b1 * b1).max(0.0) * mb / (mb - 1.0) } else { 0.0 };
        let se = (var_a / ma + var_b / mb).sqrt();
        let diff = a1 - b1;
        let excess = diff - z * se;
        if excess > tol {
            beyond += 1;
        }
        if worst.as_ref().map_or(true, |w| excess > w.excess) {
            worst = Some(Violation {
                t,
                magnitude: diff.max(0.0),
                standard_error: se,
                excess,
            });
        }
    }
    let worst = worst.expect("grid is nonempty");
    DominanceVerdict {
        verdict: if beyond == 0 {
            Verdict::Dominated
        } else {
            Verdict::NotDominated
        },
        a: a.label.clone(),
        b: b.label.clone(),
        worst_violation: worst,
        violations_beyond_band: beyond,
        grid: GridSpec {
            lower,
            upper,
            points,
        },
        policy: *policy,
        effective_z: z,
        note: small.then(|| "small sample: curves compared without a band".to_string()),
    }
}

/// Per-bin conditional mean of the noise term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpsBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpsReport {
    pub bins: Vec<MpsBin>,
    pub max_abs_mean: f64,
}

impl MpsReport {
    /// Every bin mean within `z` of its standard errors of zero.
    pub fn passes(&self, z: f64) -> bool {
        self.bins.iter().all(|b| b.mean.abs() <= z * b.standard_error + 1e-15)
    }
}

pub const MIN_POINTS_PER_BIN: usize = 10;

/// Bins `base + shift` into equal-count quantile bins and reports the mean
/// of the paired `noise` inside each.
pub fn mps_check(base: &EmpiricalSample, shift: f64, noise: &[f64], bins: usize) -> Result<MpsReport> {
    if noise.len() != base.len() {
        return Err(Error::Sample("noise is not paired with the base sample".into()));
    }
    if bins < 2 {
        return Err(Error::Sample("need at least two bins".into()));
    }
    if !(shift >= 0.0) {
        return Err(Error::Sample(format!("shift {shift} must be nonnegative")));
    }
    let m = base.len();
    if m / bins < MIN_POINTS_PER_BIN {
        return Err(Error::Sample(format!(
            "{m} points give bins with fewer than {MIN_POINTS_PER_BIN} points"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    let shifted: Vec<f64> = base.values.iter().map(|v| v + shift).collect();
    order.sort_by(|&i, &j| shifted[i].total_cmp(&shifted[j]));
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let (s, e) = (b * m / bins, (b + 1) * m / bins);
        let idx = &order[s..e];
        let vals: Vec<f64> = idx.iter().map(|&i| noise[i]).collect();
        let sum = Summary::of(&vals);
        out.push(MpsBin {
            lower: shifted[idx[0]],
            upper: shifted[idx[idx.len() - 1]],
            count: vals.len(),
            mean: sum.mean,
            standard_error: sum.standard_error(),
        });
    }
    let max_abs_mean = out.iter().map(|b| b.mean.abs()).fold(0.0, f64::max);
    Ok(MpsReport {
        bins: out,
        max_abs_mean,
    })
}

/// `(1/m) sum_i v_i^p` for each `p`, with standard errors.
pub fn utility_moments_with_se(sample: &EmpiricalSample, exponents: &[f64]) -> Result<Vec<(f64, f64)>> {
    exponents
        .iter()
        .map(|&p| {
            if !(p >= 1.0) {
                return Err(Error::Sample(format!("exponent {p} below 1")));
            }
            if p.fract() != 0.0 && sample.summary.min < 0.0 {
                return Err(Error::Sample(format!(
                    "fractional exponent {p} on negative values"
                )));
            }
            let vals: Vec<f64> = sample.values.iter().map(|v| v.powf(p)).collect();
            let s = Summary::of(&vals);
            Ok((s.mean, s.standard_error()))
        })
        .collect()
}

pub fn utility_moments(sample: &EmpiricalSample, exponents: &[f64]) -> Result<Vec<f64>> {
    Ok(utility_moments_with_se(sample, exponents)?
        .into_iter()
        .map(|(m, _)| m)
        .collect())
}
