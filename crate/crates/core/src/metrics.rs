//! Run aggregation: average throughput, end-to-end delay and jitter, plus scheme comparison.
//!
//! The engine fills one [`FlowTrace`] per flow with per-tick samples folded into time
//! buckets. [`aggregate`] turns those into a [`MetricsReport`] whose headline averages are
//! exactly the means of the emitted bucket series.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::topology::FlowId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("reports describe different scenarios (flows {0} vs {1}, duration {2} vs {3})")]
    MismatchedScenarios(usize, usize, f64, f64),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BucketAccumulator<S> {
    pub ticks: usize,
    pub throughput_sum: S,
    pub delay_sum: S,
    pub abs_diff_sum: S,
    pub diffs: usize,
}

/// Per-tick samples of one flow, folded into fixed-width buckets.
#[derive(Debug, Clone)]
pub struct FlowTrace<S> {
    pub id: FlowId,
    pub measured: bool,
    pub failed: bool,
    pub buckets: Vec<BucketAccumulator<S>>,
    last_delay: Option<S>,
}

impl<S: Scalar> FlowTrace<S> {
    pub fn new(id: FlowId, measured: bool, buckets: usize) -> Self {
        let empty = BucketAccumulator {
            ticks: 0,
            throughput_sum: S::zero(),
            delay_sum: S::zero(),
            abs_diff_sum: S::zero(),
            diffs: 0,
        };
        Self {
            id,
            measured,
            failed: false,
            buckets: vec![empty; buckets],
            last_delay: None,
        }
    }

    /// One tick of the flow: delivered rate (bits/s) and end-to-end delay (s).
    pub fn record(&mut self, bucket: usize, throughput: S, delay: S) {
        let b = &mut self.buckets[bucket];
        b.ticks += 1;
        b.throughput_sum = b.throughput_sum + throughput;
        b.delay_sum = b.delay_sum + delay;
        if let Some(prev) = self.last_delay {
            b.abs_diff_sum = b.abs_diff_sum + (delay - prev).abs();
            b.diffs += 1;
        }
        self.last_delay = Some(delay);
    }

    /// Marks the flow inactive so the next sample does not difference across the gap.
    pub fn pause(&mut self) {
        self.last_delay = None;
    }
}

/// Everything [`aggregate`] needs from a finished run.
#[derive(Debug, Clone)]
pub struct RunTrace<S> {
    pub scheme: String,
    pub duration: S,
    pub bucket: S,
    pub flows: Vec<FlowTrace<S>>,
    pub migrations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowMetrics<S> {
    pub id: FlowId,
    pub failed: bool,
    pub avg_throughput: S,
    pub avg_e2e_delay: S,
    pub avg_jitter: S,
}

/// Network-wide values of one bucket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketMetrics<S> {
    /// bucket start, seconds
    pub time: S,
    pub active_flows: usize,
    /// mean over active flows, bits/s
    pub avg_throughput: S,
    /// sum over active flows, bits/s
    pub network_throughput: S,
    pub avg_e2e_delay: S,
    pub avg_jitter: S,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport<S> {
    pub scheme: String,
    pub flow_count: usize,
    pub duration: S,
    pub bucket: S,
    /// Per-flow mean rate, averaged over the series.
    pub avg_throughput: S,
    /// Aggregate rate of all measured flows, averaged over the series.
    pub network_throughput: S,
    pub avg_e2e_delay: S,
    pub avg_jitter: S,
    pub migrations: usize,
    pub failed_flows: usize,
    pub flows: Vec<FlowMetrics<S>>,
    /// Only buckets with at least one active measured flow.
    pub series: Vec<BucketMetrics<S>>,
}

fn mean<S: Scalar>(values: impl Iterator<Item = S>) -> S {
    let (sum, n) = values.fold((S::zero(), 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        S::zero()
    } else {
        sum / S::of_count(n)
    }
}

struct FlowBucket<S> {
    throughput: S,
    delay: S,
    jitter: Option<S>,
}

fn flow_bucket<S: Scalar>(b: &BucketAccumulator<S>) -> Option<FlowBucket<S>> {
    if b.ticks == 0 {
        return None;
    }
    let n = S::of_count(b.ticks);
    Some(FlowBucket {
        throughput: b.throughput_sum / n,
        delay: b.delay_sum / n,
        jitter: (b.diffs > 0).then(|| b.abs_diff_sum / S::of_count(b.diffs)),
    })
}

pub fn aggregate<S: Scalar>(trace: &RunTrace<S>) -> MetricsReport<S> {
    let measured: Vec<&FlowTrace<S>> = trace.flows.iter().filter(|f| f.measured).collect();
    let n_buckets = measured.iter().map(|f| f.buckets.len()).max().unwrap_or(0);

    let flows = measured
        .iter()
        .map(|f| {
            let buckets: Vec<_> = f.buckets.iter().filter_map(flow_bucket).collect();
            FlowMetrics {
                id: f.id,
                failed: f.failed,
                avg_throughput: mean(buckets.iter().map(|b| b.throughput)),
                avg_e2e_delay: mean(buckets.iter().map(|b| b.delay)),
                avg_jitter: mean(buckets.iter().filter_map(|b| b.jitter)),
            }
        })
        .collect();

    let mut series = Vec::new();
    for k in 0..n_buckets {
        let active: Vec<FlowBucket<S>> = measured
            .iter()
            .filter(|f| !f.failed)
            .filter_map(|f| f.buckets.get(k).and_then(flow_bucket))
            .collect();
        if active.is_empty() {
            continue;
        }
        series.push(BucketMetrics {
            time: trace.bucket * S::of_count(k),
            active_flows: active.len(),
            avg_throughput: mean(active.iter().map(|b| b.throughput)),
            network_throughput: active.iter().fold(S::zero(), |acc, b| acc + b.throughput),
            avg_e2e_delay: mean(active.iter().map(|b| b.delay)),
            avg_jitter: mean(active.iter().filter_map(|b| b.jitter)),
        });
    }

    MetricsReport {
        scheme: trace.scheme.clone(),
        flow_count: measured.len(),
        duration: trace.duration,
        bucket: trace.bucket,
        avg_throughput: mean(series.iter().map(|b| b.avg_throughput)),
        network_throughput: mean(series.iter().map(|b| b.network_throughput)),
        avg_e2e_delay: mean(series.iter().map(|b| b.avg_e2e_delay)),
        avg_jitter: mean(series.iter().map(|b| b.avg_jitter)),
        migrations: trace.migrations,
        failed_flows: measured.iter().filter(|f| f.failed).count(),
        flows,
        series,
    }
}

/// Percent improvement of `a` over `b` for a lower-is-better metric: `(b - a) / b * 100`.
pub fn improvement_lower_better<S: Scalar>(a: S, b: S) -> Option<S> {
    if b == S::zero() {
        return (a == S::zero()).then(S::zero);
    }
    Some((b - a) / b * S::of(100.0))
}

/// Percent improvement of `a` over `b` for a higher-is-better metric: `(a - b) / b * 100`.
pub fn improvement_higher_better<S: Scalar>(a: S, b: S) -> Option<S> {
    if b == S::zero() {
        return (a == S::zero()).then(S::zero);
    }
    Some((a - b) / b * S::of(100.0))
}

/// Improvement of scheme `a` over scheme `b`, in percent; `None` when `b` is zero and `a` is not.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Improvement<S> {
    pub avg_throughput: Option<S>,
    pub network_throughput: Option<S>,
    pub avg_e2e_delay: Option<S>,
    pub avg_jitter: Option<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison<S> {
    pub scheme_a: MetricsReport<S>,
    pub scheme_b: MetricsReport<S>,
    pub improvement_pct: Improvement<S>,
}

pub fn compare<S: Scalar>(
    a: &MetricsReport<S>,
    b: &MetricsReport<S>,
) -> Result<Comparison<S>, MetricsError> {
    if a.flow_count != b.flow_count || a.duration != b.duration {
        return Err(MetricsError::MismatchedScenarios(
            a.flow_count,
            b.flow_count,
            a.duration.as_f64(),
            b.duration.as_f64(),
        ));
    }
    Ok(Comparison {
        scheme_a: a.clone(),
        scheme_b: b.clone(),
        improvement_pct: Improvement {
            avg_throughput: improvement_higher_better(a.avg_throughput, b.avg_throughput),
            network_throughput: improvement_higher_better(
                a.network_throughput,
                b.network_throughput,
            ),
            avg_e2e_delay: improvement_lower_better(a.avg_e2e_delay, b.avg_e2e_delay),
            avg_jitter: improvement_lower_better(a.avg_jitter, b.avg_jitter),
        },
    })
}

/// One row of a plot table: `<x>,metric,scheme,value`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub x: f64,
    pub metric: &'static str,
    pub scheme: String,
    pub value: f64,
}

/// Writes rows with `x_label` (`time_s` or `flow_count`) as the first column header.
pub fn write_series_csv<W: Write>(x_label: &str, rows: &[SeriesRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([x_label, "metric", "scheme", "value"])?;
    for r in rows {
        w.write_record([
            fmt_num(r.x),
            r.metric.to_string(),
            r.scheme.clone(),
            fmt_num(r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Bucket series of a report as plot rows for the four headline metrics.
pub fn time_series_rows<S: Scalar>(report: &MetricsReport<S>) -> Vec<SeriesRow> {
    let mut rows = Vec::with_capacity(report.series.len() * 4);
    for b in &report.series {
        let x = b.time.as_f64();
        for (metric, value) in [
            ("avg_throughput_bps", b.avg_throughput),
            ("network_throughput_bps", b.network_throughput),
            ("avg_e2e_delay_s", b.avg_e2e_delay),
            ("avg_jitter_s", b.avg_jitter),
        ] {
            rows.push(SeriesRow {
                x,
                metric,
                scheme: report.scheme.clone(),
                value: value.as_f64(),
            });
        }
    }
    rows
}
