//! Sentiment and volume time-series tools: bucketing, exponential smoothing,
//! first-difference variation, lagged Pearson correlation, and the
//! post-time-keyed sentiment log read by the appdata policy.

use std::io::Write;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("bucket width must be positive, got {0}")]
    BucketWidth(f64),
    #[error("smoothing factor must lie in (0, 1], got {0}")]
    Alpha(f64),
    #[error("series needs at least {needed} buckets, has {got}")]
    TooShort { needed: usize, got: usize },
    #[error("series are not aligned (width {0} vs {1}, origin {2} vs {3})")]
    Misaligned(f64, f64, f64, f64),
    #[error("lag {lag} leaves only {overlap} overlapping buckets (need 3)")]
    InsufficientOverlap { lag: i64, overlap: usize },
}

/// What [`bucketize`] aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Mean,
    Count,
}

/// Dense bucketed series. Empty buckets are `None`, never silently zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub bucket_width_s: f64,
    pub origin_s: f64,
    pub values: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bucket_start(&self, i: usize) -> f64 {
        self.origin_s + i as f64 * self.bucket_width_s
    }

    /// Index of the largest present value; ties go to the earliest bucket.
    pub fn argmax(&self) -> Option<usize> {
        self.argmax_in(0, self.len())
    }

    fn argmax_in(&self, lo: usize, hi: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, v) in self.values.iter().enumerate().take(hi).skip(lo) {
            if let Some(v) = *v {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Buckets `(time, value)` pairs into `[origin + i·w, origin + (i+1)·w)`
/// where the origin is the earliest time rounded down to a multiple of `w`.
pub fn bucketize(
    points: &[(f64, f64)],
    aggregate: Aggregate,
    bucket_width_s: f64,
) -> Result<TimeSeries, AnalyticsError> {
    if !(bucket_width_s > 0.0 && bucket_width_s.is_finite()) {
        return Err(AnalyticsError::BucketWidth(bucket_width_s));
    }
    if points.is_empty() {
        return Ok(TimeSeries {
            bucket_width_s,
            origin_s: 0.0,
            values: Vec::new(),
            counts: Vec::new(),
        });
    }
    let min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let origin = (min / bucket_width_s).floor() * bucket_width_s;
    let n = ((max - origin) / bucket_width_s).floor() as usize + 1;
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for &(t, v) in points {
        let i = (((t - origin) / bucket_width_s).floor() as usize).min(n - 1);
        sums[i] += v;
        counts[i] += 1;
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| match aggregate {
            Aggregate::Count => Some(c as f64),
            Aggregate::Mean if c > 0 => Some(s / c as f64),
            Aggregate::Mean => None,
        })
        .collect();
    Ok(TimeSeries {
        bucket_width_s,
        origin_s: origin,
        values,
        counts,
    })
}

/// Smoothing factor for an `n`-bucket window, `2 / (n + 1)`.
pub fn alpha_for_window(n_buckets: usize) -> f64 {
    2.0 / (n_buckets as f64 + 1.0)
}

/// `y₀ = x₀`, `yₜ = α·xₜ + (1−α)·yₜ₋₁`. Empty buckets carry the previous
/// average forward; leading empty buckets stay empty.
pub fn ema(series: &TimeSeries, alpha: f64) -> Result<TimeSeries, AnalyticsError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(AnalyticsError::Alpha(alpha));
    }
    let mut prev: Option<f64> = None;
    let values = series
        .values
        .iter()
        .map(|x| {
            prev = match (prev, *x) {
                (None, x) => x,
                (Some(p), None) => Some(p),
                (Some(_), Some(x)) if alpha == 1.0 => Some(x),
                (Some(p), Some(x)) => Some(p + alpha * (x - p)),
            };
            prev
        })
        .collect();
    Ok(TimeSeries {
        values,
        ..series.clone()
    })
}

/// Absolute first differences. Element `i` describes the change into bucket
/// `i + 1`, so the result starts one bucket later than the input.
pub fn variation(series: &TimeSeries) -> Result<TimeSeries, AnalyticsError> {
    if series.len() < 2 {
        return Err(AnalyticsError::TooShort {
            needed: 2,
            got: series.len(),
        });
    }
    let values = series
        .values
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => Some((b - a).abs()),
            _ => None,
        })
        .collect();
    Ok(TimeSeries {
        bucket_width_s: series.bucket_width_s,
        origin_s: series.origin_s + series.bucket_width_s,
        values,
        counts: series.counts[1..].to_vec(),
    })
}

fn check_aligned(a: &TimeSeries, b: &TimeSeries) -> Result<(), AnalyticsError> {
    let w = a.bucket_width_s;
    if (a.bucket_width_s - b.bucket_width_s).abs() > 1e-12 * w
        || (a.origin_s - b.origin_s).abs() > 1e-9 * w
    {
        return Err(AnalyticsError::Misaligned(
            a.bucket_width_s,
            b.bucket_width_s,
            a.origin_s,
            b.origin_s,
        ));
    }
    Ok(())
}

/// Pearson r between `a(t)` and `b(t + lag)` over buckets where both are
/// present. `Ok(None)` when either side has zero variance.
pub fn pearson_at_lag(
    a: &TimeSeries,
    b: &TimeSeries,
    lag: i64,
) -> Result<Option<f64>, AnalyticsError> {
    check_aligned(a, b)?;
    let pairs: Vec<(f64, f64)> = (0..a.len() as i64)
        .filter_map(|t| {
            let u = t + lag;
            if u < 0 || u >= b.len() as i64 {
                return None;
            }
            Some((a.values[t as usize]?, b.values[u as usize]?))
        })
        .collect();
    if pairs.len() < 3 {
        return Err(AnalyticsError::InsufficientOverlap {
            lag,
            overlap: pairs.len(),
        });
    }
    let constant = |f: fn(&(f64, f64)) -> f64| pairs.iter().all(|p| f(p) == f(&pairs[0]));
    if constant(|p| p.0) || constant(|p| p.1) {
        return Ok(None);
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    Ok(Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)))
}

/// `pearson_at_lag` for lags `0..=max_lag`.
pub fn lagged_pearson(
    a: &TimeSeries,
    b: &TimeSeries,
    max_lag: usize,
) -> Result<Vec<(usize, Option<f64>)>, AnalyticsError> {
    (0..=max_lag)
        .map(|lag| Ok((lag, pearson_at_lag(a, b, lag as i64)?)))
        .collect()
}

/// Settings for [`report_correlation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationSettings {
    pub bucket_width_s: f64,
    pub max_lag: usize,
    /// Smoothing applied to the sentiment series before differencing.
    pub ema_alpha: f64,
}

impl Default for CorrelationSettings {
    fn default() -> Self {
        Self {
            bucket_width_s: 60.0,
            max_lag: 10,
            ema_alpha: alpha_for_window(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub volume: TimeSeries,
    pub sentiment: TimeSeries,
    pub smoothed: TimeSeries,
    pub variation: TimeSeries,
    /// `(lag, r)` of volume at `t + lag` against sentiment at `t`.
    pub lags: Vec<(usize, Option<f64>)>,
    pub volume_peak: Option<usize>,
    /// Largest variation within `max_lag` buckets up to the volume peak.
    pub variation_peak: Option<usize>,
}

impl CorrelationReport {
    /// Buckets by which the variation peak precedes the volume peak.
    pub fn lead_buckets(&self) -> Option<i64> {
        Some(self.volume_peak? as i64 - self.variation_peak? as i64)
    }

    pub fn write_lags<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "lag,r")?;
        for (lag, r) in &self.lags {
            match r {
                Some(r) => writeln!(w, "{lag},{r:.6}")?,
                None => writeln!(w, "{lag},undefined")?,
            }
        }
        Ok(())
    }

    pub fn write_series<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bucket_start_s,volume,sentiment,smoothed,variation")?;
        let cell = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
        for i in 0..self.volume.len() {
            let var = if i == 0 {
                None
            } else {
                self.variation.values.get(i - 1).copied().flatten()
            };
            writeln!(
                w,
                "{},{},{},{},{}",
                self.volume.bucket_start(i),
                cell(self.volume.values[i]),
                cell(self.sentiment.values.get(i).copied().flatten()),
                cell(self.smoothed.values.get(i).copied().flatten()),
                cell(var),
            )?;
        }
        Ok(())
    }
}

/// Volume and sentiment series from `(post_time, score)` points, the
/// volume/sentiment lag table and the precursor peak location.
pub fn report_correlation(
    points: &[(f64, f64)],
    settings: &CorrelationSettings,
) -> Result<CorrelationReport, AnalyticsError> {
    let volume = bucketize(points, Aggregate::Count, settings.bucket_width_s)?;
    let sentiment = bucketize(points, Aggregate::Mean, settings.bucket_width_s)?;
    let smoothed = ema(&sentiment, settings.ema_alpha)?;
    let variation = variation(&smoothed)?;
    let lags = lagged_pearson(&sentiment, &volume, settings.max_lag)?;

    let volume_peak = volume.argmax();
    // variation index i sits on bucket i + 1.
    let variation_peak = volume_peak.and_then(|p| {
        let lo = p.saturating_sub(settings.max_lag + 1);
        variation.argmax_in(lo, p).map(|i| i + 1)
    });
    Ok(CorrelationReport {
        volume,
        sentiment,
        smoothed,
        variation,
        lags,
        volume_peak,
        variation_peak,
    })
}

/// Per-bucket score sums of completed items keyed by post time, so windowed
/// means over post-time ranges are cheap.
#[derive(Debug, Clone)]
pub struct SentimentLog {
    origin_s: f64,
    resolution_s: f64,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl SentimentLog {
    pub fn new(origin_s: f64, resolution_s: f64) -> Self {
        assert!(resolution_s > 0.0, "resolution must be positive");
        Self {
            origin_s,
            resolution_s,
            sums: Vec::new(),
            counts: Vec::new(),
        }
    }

    fn index(&self, t: f64) -> i64 {
        ((t - self.origin_s) / self.resolution_s).floor() as i64
    }

    pub fn record(&mut self, post_time: f64, score: f64) {
        let i = self.index(post_time).max(0) as usize;
        if i >= self.sums.len() {
            self.sums.resize(i + 1, 0.0);
            self.counts.resize(i + 1, 0);
        }
        self.sums[i] += score;
        self.counts[i] += 1;
    }

    /// Mean score of items posted in `[from, to)`; bucket boundaries are
    /// resolved at the log's resolution. `None` when the window is empty.
    pub fn window_mean(&self, from: f64, to: f64) -> Option<f64> {
        let lo = self.index(from + 1e-9 * self.resolution_s).max(0) as usize;
        let hi = self.index(to + 1e-9 * self.resolution_s).max(0) as usize;
        let hi = hi.min(self.sums.len());
        if lo >= hi {
            return None;
        }
        let n: u64 = self.counts[lo..hi].iter().sum();
        if n == 0 {
            return None;
        }
        Some(self.sums[lo..hi].iter().sum::<f64>() / n as f64)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}
