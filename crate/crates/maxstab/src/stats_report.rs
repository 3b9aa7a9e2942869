//! Estimates with mergeable sufficient statistics, ladder trends and a
//! Kolmogorov–Smirnov test.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("cannot merge estimates labelled `{0}` and `{1}`")]
    LabelMismatch(String, String),
    #[error("cannot merge a proportion with a mean estimate (`{0}`)")]
    KindMismatch(String),
    #[error("trend needs at least 3 ladder points, got {0}")]
    ShortLadder(usize),
    #[error("KS test needs at least 100 observations, got {0}")]
    SmallSample(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    /// 0/1 observations; Wilson interval.
    Proportion,
    /// Real observations; normal interval.
    Mean,
}

/// Sample summary stored as `(n, sum, sum of squares)`.
///
/// Everything else (mean, stderr, interval) is computed from those three
/// numbers, so merging shards is plain addition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub label: String,
    pub kind: EstimateKind,
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Estimate {
    pub fn empty(label: impl Into<String>, kind: EstimateKind) -> Self {
        Estimate {
            label: label.into(),
            kind,
            n: 0,
            sum: 0.0,
            sum_sq: 0.0,
        }
    }

    pub fn proportion(label: impl Into<String>, successes: u64, n: u64) -> Self {
        assert!(successes <= n, "successes exceed trials");
        Estimate {
            label: label.into(),
            kind: EstimateKind::Proportion,
            n,
            sum: successes as f64,
            sum_sq: successes as f64,
        }
    }

    pub fn from_values(label: impl Into<String>, values: impl IntoIterator<Item = f64>) -> Self {
        let mut e = Estimate::empty(label, EstimateKind::Mean);
        for x in values {
            e.push(x);
        }
        e
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn push_bool(&mut self, hit: bool) {
        debug_assert_eq!(self.kind, EstimateKind::Proportion);
        self.push(if hit { 1.0 } else { 0.0 });
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    /// Unbiased sample variance (proportions use p(1-p)).
    pub fn variance(&self) -> f64 {
        match self.kind {
            EstimateKind::Proportion => {
                let p = self.mean();
                p * (1.0 - p)
            }
            EstimateKind::Mean => {
                if self.n < 2 {
                    return 0.0;
                }
                let n = self.n as f64;
                let m = self.sum / n;
                ((self.sum_sq - n * m * m) / (n - 1.0)).max(0.0)
            }
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    /// 95% interval: Wilson for proportions, mean ± z·stderr otherwise.
    pub fn ci(&self) -> (f64, f64) {
        let m = self.mean();
        match self.kind {
            EstimateKind::Proportion => {
                if self.n == 0 {
                    return (0.0, 1.0);
                }
                let (lo, hi) = wilson(self.sum, self.n as f64, Z95);
                (lo.min(m), hi.max(m))
            }
            EstimateKind::Mean => {
                let h = Z95 * self.stderr();
                (m - h, m + h)
            }
        }
    }

    pub fn row(&self, param: f64) -> EvidenceRow {
        let (ci_lo, ci_hi) = self.ci();
        EvidenceRow {
            label: self.label.clone(),
            param,
            n: self.n,
            mean: self.mean(),
            stderr: self.stderr(),
            ci_lo,
            ci_hi,
        }
    }
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson(k: f64, n: f64, z: f64) -> (f64, f64) {
    let p = k / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Pool two estimates of the same quantity.
pub fn merge(a: &Estimate, b: &Estimate) -> Result<Estimate, StatsError> {
    if a.label != b.label {
        return Err(StatsError::LabelMismatch(a.label.clone(), b.label.clone()));
    }
    if a.kind != b.kind {
        return Err(StatsError::KindMismatch(a.label.clone()));
    }
    Ok(Estimate {
        label: a.label.clone(),
        kind: a.kind,
        n: a.n + b.n,
        sum: a.sum + b.sum,
        sum_sq: a.sum_sq + b.sum_sq,
    })
}

/// One CSV line of evidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRow {
    pub label: String,
    pub param: f64,
    pub n: u64,
    pub mean: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Trend {
    Increasing,
    Decreasing,
    Flat,
    Mixed,
}

impl std::fmt::Display for Trend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Trend::Increasing => "INCREASING",
            Trend::Decreasing => "DECREASING",
            Trend::Flat => "FLAT",
            Trend::Mixed => "MIXED",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub params: Vec<f64>,
    pub estimates: Vec<Estimate>,
    pub verdict: Trend,
    /// Number of CI-separated increases and decreases among all pairs i < j.
    pub separated_up: usize,
    pub separated_down: usize,
}

/// Monotonicity verdict from pairwise 95% interval separation.
///
/// A pair `i < j` counts as an increase when `ci_lo[j] > ci_hi[i]` and as a
/// decrease when `ci_hi[j] < ci_lo[i]`. Increases only: INCREASING;
/// decreases only: DECREASING; neither: FLAT; both: MIXED.
pub fn trend(ladder: &[(f64, Estimate)]) -> Result<TrendReport, StatsError> {
    let cis: Vec<(f64, f64)> = ladder.iter().map(|(_, e)| e.ci()).collect();
    let (verdict, up, down) = interval_trend(&cis)?;
    Ok(TrendReport {
        params: ladder.iter().map(|(p, _)| *p).collect(),
        estimates: ladder.iter().map(|(_, e)| e.clone()).collect(),
        verdict,
        separated_up: up,
        separated_down: down,
    })
}

/// The rule of [`trend`] applied to stored intervals, in ladder order.
/// Returns the verdict and the separated increase and decrease counts.
pub fn interval_trend(cis: &[(f64, f64)]) -> Result<(Trend, usize, usize), StatsError> {
    if cis.len() < 3 {
        return Err(StatsError::ShortLadder(cis.len()));
    }
    let (mut up, mut down) = (0, 0);
    for i in 0..cis.len() {
        for j in i + 1..cis.len() {
            if cis[j].0 > cis[i].1 {
                up += 1;
            } else if cis[j].1 < cis[i].0 {
                down += 1;
            }
        }
    }
    let verdict = match (up > 0, down > 0) {
        (true, false) => Trend::Increasing,
        (false, true) => Trend::Decreasing,
        (false, false) => Trend::Flat,
        (true, true) => Trend::Mixed,
    };
    Ok((verdict, up, down))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub n: usize,
    pub statistic: f64,
    pub critical: f64,
    pub pass: bool,
}

/// One-sample KS test of `sample` against a continuous reference CDF at
/// level 0.01, using the asymptotic critical value with Stephens' small
/// sample correction.
pub fn ks_uniformity(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsReport, StatsError> {
    let n = sample.len();
    if n < 100 {
        return Err(StatsError::SmallSample(n));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / nf - f).abs()).max((f - i as f64 / nf).abs());
    }
    let sn = nf.sqrt();
    let critical = 1.628 / (sn + 0.12 + 0.11 / sn);
    Ok(KsReport {
        n,
        statistic: d,
        critical,
        pass: d < critical,
    })
}

/// CDF of the arcsine law on [0, 1].
pub fn arcsine_cdf(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    2.0 / std::f64::consts::PI * x.sqrt().asin()
}
