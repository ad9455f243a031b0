//! Evaluation quantities computed after a run from its trace.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::CircuitId;
use crate::sim::{Policy, SimTrace};

/// Histogram bin width in milliseconds.
pub const LATENCY_BIN_MS: f64 = 10.0;
/// Start-up period left out of steady-state throughput and fairness.
pub const TRANSIENT_SECONDS: f64 = 2.0;
/// Bytes per data packet when charging control traffic against data.
pub const CELL_BYTES: usize = 514;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("fairness index of an empty allocation")]
    Empty,
    #[error("fairness index undefined: all allocations are zero")]
    AllZero,
    #[error("fairness index needs finite non-negative allocations")]
    Negative,
}

/// `(Σx)² / (p·Σx²)`, in `[1/p, 1]`.
pub fn jain_index(x: &[f64]) -> Result<f64, MetricsError> {
    if x.is_empty() {
        return Err(MetricsError::Empty);
    }
    if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(MetricsError::Negative);
    }
    let sum: f64 = x.iter().sum();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return Err(MetricsError::AllZero);
    }
    Ok(sum * sum / (x.len() as f64 * sq))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyHistogram {
    pub bin_ms: f64,
    /// `counts[i]` holds latencies in `[i·bin_ms, (i+1)·bin_ms)`.
    pub counts: Vec<u64>,
}

impl LatencyHistogram {
    pub fn from_latencies(latencies_ms: impl IntoIterator<Item = f64>, bin_ms: f64) -> Self {
        let mut counts = Vec::new();
        for l in latencies_ms {
            // Latencies are whole ticks, so nudge exact bin edges upwards.
            let b = (l / bin_ms + 1e-9).floor().max(0.0) as usize;
            if counts.len() <= b {
                counts.resize(b + 1, 0);
            }
            counts[b] += 1;
        }
        Self { bin_ms, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Mean at bin midpoints; within one bin width of the exact mean.
    pub fn mean_ms(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| {
            let s: f64 = self
                .counts
                .iter()
                .enumerate()
                .map(|(i, c)| (i as f64 + 0.5) * self.bin_ms * *c as f64)
                .sum();
            s / n as f64
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitMetrics {
    pub circuit: CircuitId,
    pub admitted: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub mean_latency_ms: Option<f64>,
    /// Sum of link delays along the path.
    pub propagation_floor_ms: f64,
    /// Delivery rate after the start-up period, packets/s.
    pub steady_throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub policy: Policy,
    pub duration_s: f64,
    pub circuits: Vec<CircuitMetrics>,
    pub delivered_total: u64,
    pub mean_latency_ms: Option<f64>,
    pub propagation_floor_ms: f64,
    pub latency_histogram: LatencyHistogram,
    /// Steady-state throughput fairness; absent when nothing was delivered.
    pub jain_index: Option<f64>,
    pub control_bytes: u64,
    pub data_bytes: u64,
    pub overhead_percent: f64,
    pub dropped_total: u64,
    pub max_backlog: u64,
    pub mean_steady_backlog: f64,
    pub queue_violations: usize,
    pub solves: usize,
    pub solver_iterations_max: usize,
}

/// Total queued packets at each step.
pub fn backlog_series(trace: &SimTrace) -> Vec<u64> {
    let mut b = vec![0u64; trace.steps as usize];
    for q in &trace.queue_samples {
        b[q.step as usize] += q.queue as u64;
    }
    b
}

pub fn compute(trace: &SimTrace) -> RunMetrics {
    let dt = trace.dt;
    let p = trace.topology.num_circuits();
    let ms = |ticks: u64| ticks as f64 * dt * 1000.0;
    let first_steady = (TRANSIENT_SECONDS / dt).round() as u64;
    let steady_span = (trace.steps.saturating_sub(first_steady)) as f64 * dt;

    let mut delivered = vec![0u64; p];
    let mut steady = vec![0u64; p];
    let mut latency_sum = vec![0.0; p];
    for pkt in &trace.packets {
        let c = pkt.circuit.0;
        delivered[c] += 1;
        latency_sum[c] += ms(pkt.leave_step - pkt.enter_step);
        if pkt.leave_step >= first_steady {
            steady[c] += 1;
        }
    }
    let histogram = LatencyHistogram::from_latencies(
        trace.packets.iter().map(|p| ms(p.leave_step - p.enter_step)),
        LATENCY_BIN_MS,
    );
    let circuits: Vec<CircuitMetrics> = (0..p)
        .map(|c| CircuitMetrics {
            circuit: CircuitId(c),
            admitted: trace.admitted[c],
            delivered: delivered[c],
            dropped: trace.dropped[c],
            mean_latency_ms: (delivered[c] > 0).then(|| latency_sum[c] / delivered[c] as f64),
            propagation_floor_ms: trace.topology.path_delay(CircuitId(c)) * 1000.0,
            steady_throughput: if steady_span > 0.0 {
                steady[c] as f64 / steady_span
            } else {
                0.0
            },
        })
        .collect();
    let delivered_total: u64 = delivered.iter().sum();
    let mean_latency_ms = (delivered_total > 0).then(|| latency_sum.iter().sum::<f64>() / delivered_total as f64);
    // Floor of the whole run: the delivery-weighted mean of path floors.
    let propagation_floor_ms = if delivered_total > 0 {
        circuits
            .iter()
            .map(|c| c.propagation_floor_ms * c.delivered as f64)
            .sum::<f64>()
            / delivered_total as f64
    } else {
        circuits.iter().map(|c| c.propagation_floor_ms).fold(0.0, f64::max)
    };
    let throughputs: Vec<f64> = circuits.iter().map(|c| c.steady_throughput).collect();
    let control_bytes: u64 = trace.messages.iter().map(|m| m.size as u64).sum();
    let data_bytes = delivered_total * CELL_BYTES as u64;
    let overhead_percent = if data_bytes > 0 {
        (100.0 * control_bytes as f64 / data_bytes as f64).min(100.0)
    } else if control_bytes > 0 {
        100.0
    } else {
        0.0
    };
    let backlog = backlog_series(trace);
    let steady_backlog = &backlog[(first_steady as usize).min(backlog.len())..];
    RunMetrics {
        policy: trace.policy,
        duration_s: trace.steps as f64 * dt,
        jain_index: jain_index(&throughputs).ok(),
        circuits,
        delivered_total,
        mean_latency_ms,
        propagation_floor_ms,
        latency_histogram: histogram,
        control_bytes,
        data_bytes,
        overhead_percent,
        dropped_total: trace.dropped.iter().sum(),
        max_backlog: backlog.iter().copied().max().unwrap_or(0),
        mean_steady_backlog: if steady_backlog.is_empty() {
            0.0
        } else {
            steady_backlog.iter().sum::<u64>() as f64 / steady_backlog.len() as f64
        },
        queue_violations: trace.violations.len(),
        solves: trace.solves.len(),
        solver_iterations_max: trace.solves.iter().map(|s| s.iterations).max().unwrap_or(0),
    }
}

/// Release rate of every circuit at every relay and step, as
/// `(step, circuit, relay, packets/s)`.
pub fn rate_series(trace: &SimTrace) -> Vec<(u64, CircuitId, u16, f64)> {
    trace
        .flows
        .iter()
        .map(|f| (f.step, f.circuit, f.node.0, f.sent as f64 / trace.dt))
        .collect()
}

/// Table-style text summary.
pub fn render_summary(m: &RunMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "policy: {}", m.policy);
    let _ = writeln!(s, "{:>8} {:>14} {:>12} {:>10} {:>10}", "circuit", "latency [ms]", "delivered", "dropped", "pkts/s");
    for c in &m.circuits {
        let lat = c.mean_latency_ms.map_or("-".to_string(), |v| format!("{v:.1}"));
        let _ = writeln!(
            s,
            "{:>8} {:>14} {:>12} {:>10} {:>10.1}",
            c.circuit.0, lat, c.delivered, c.dropped, c.steady_throughput
        );
    }
    let lat = m.mean_latency_ms.map_or("-".to_string(), |v| format!("{v:.1}"));
    let _ = writeln!(s, "{:>8} {:>14} {:>12} {:>10}", "total", lat, m.delivered_total, m.dropped_total);
    let jain = m.jain_index.map_or("-".to_string(), |v| format!("{v:.4}"));
    let _ = writeln!(
        s,
        "floor {:.1} ms | jain {} | overhead {:.2} % | max backlog {} | queue violations {}",
        m.propagation_floor_ms, jain, m.overhead_percent, m.max_backlog, m.queue_violations
    );
    s
}

/// Writes `latency_hist.csv`, `rates.csv`, `backlog.csv` and `summary.json`.
pub fn write_outputs(dir: &Path, trace: &SimTrace, m: &RunMetrics) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut hist = String::from("bin_start_ms,bin_end_ms,packets\n");
    for (i, c) in m.latency_histogram.counts.iter().enumerate() {
        let a = i as f64 * m.latency_histogram.bin_ms;
        let _ = writeln!(hist, "{a},{},{c}", a + m.latency_histogram.bin_ms);
    }
    fs::write(dir.join("latency_hist.csv"), hist)?;

    let mut rates = String::from("step,time_s,node,circuit,sent,rate_pkts_per_s\n");
    for f in &trace.flows {
        let t = f.step as f64 * trace.dt;
        let _ = writeln!(rates, "{},{t},{},{},{},{}", f.step, f.node.0, f.circuit.0, f.sent, f.sent as f64 / trace.dt);
    }
    fs::write(dir.join("rates.csv"), rates)?;

    let mut backlog = String::from("step,time_s,backlog\n");
    for (k, b) in backlog_series(trace).iter().enumerate() {
        let _ = writeln!(backlog, "{k},{},{b}", k as f64 * trace.dt);
    }
    fs::write(dir.join("backlog.csv"), backlog)?;

    let json = serde_json::to_string_pretty(m).map_err(io::Error::other)?;
    fs::write(dir.join("summary.json"), json + "\n")
}
