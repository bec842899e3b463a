//! Kernel benchmark: cost volume versus the contextual correlation layer
//! across feature-map sizes.
//!
//! Both kernels do `O(n^4)` work at a fixed per-element cost, but the
//! correlation volume carries `n^2` channels against the full cost
//! volume's `(2n+1)^2`, under a quarter of the elements.

use std::time::Instant;

use crate::correlation::{correlation_volume, cost_volume, feature_flow, scale_softmax};
use crate::error::Result;
use crate::evalkit::Rng;
use crate::pyramid::FeatureMap;

/// Measurements for one square feature-map size.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub n: usize,
    pub cost_channels: usize,
    pub ccl_channels: usize,
    pub channel_ratio: f64,
    /// Best-of-reps wall time of the cost-volume kernel.
    pub cost_ms: f64,
    /// Best-of-reps wall time of correlation volume + softmax + flow.
    pub ccl_ms: f64,
    /// Peak live allocation estimates of the volumes involved.
    pub cost_bytes: usize,
    pub ccl_bytes: usize,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub feature_channels: usize,
    /// Log-log slope of kernel time against n.
    pub cost_slope: f64,
    pub ccl_slope: f64,
}

fn random_features(n: usize, channels: usize, seed: u64) -> FeatureMap {
    let mut rng = Rng::new(seed);
    let data = (0..n * n * channels).map(|_| rng.next_f64() as f32).collect();
    FeatureMap::from_vec(n, n, channels, data)
        .expect("buffer sized to dimensions")
        .l2_normalize()
}

/// Runs `f` enough times to spend roughly `budget_ms`, returning the
/// fastest wall time in milliseconds.
fn time_best<F: FnMut()>(mut f: F, budget_ms: f64) -> f64 {
    let warm = Instant::now();
    f();
    let first = warm.elapsed().as_secs_f64() * 1e3;
    let reps = ((budget_ms / first.max(1e-3)).ceil() as usize).clamp(2, 200);
    let mut best = first;
    for _ in 0..reps {
        let t = Instant::now();
        f();
        best = best.min(t.elapsed().as_secs_f64() * 1e3);
    }
    best
}

fn log_log_slope(rows: &[(f64, f64)]) -> f64 {
    let n = rows.len() as f64;
    let mx = rows.iter().map(|r| r.0.ln()).sum::<f64>() / n;
    let my = rows.iter().map(|r| r.1.ln()).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in rows {
        num += (x.ln() - mx) * (y.ln() - my);
        den += (x.ln() - mx) * (x.ln() - mx);
    }
    num / den
}

fn bench_sizes(sizes: &[usize], feature_channels: usize, seed: u64) -> Result<BenchReport> {
    let mut rows = Vec::with_capacity(sizes.len());
    for (i, &n) in sizes.iter().enumerate() {
        let f_r = random_features(n, feature_channels, seed.wrapping_add(2 * i as u64));
        let f_t = random_features(n, feature_channels, seed.wrapping_add(2 * i as u64 + 1));

        // Prove both kernels run before timing them.
        cost_volume(&f_r, &f_t, n)?;
        feature_flow(&scale_softmax(&correlation_volume(&f_r, &f_t, 3)?, 10.0)?)?;

        let budget = 60.0;
        let cost_ms = time_best(
            || {
                cost_volume(&f_r, &f_t, n).expect("checked above");
            },
            budget,
        );
        let ccl_ms = time_best(
            || {
                let v = correlation_volume(&f_r, &f_t, 3).expect("checked above");
                let p = scale_softmax(&v, 10.0).expect("checked above");
                feature_flow(&p).expect("checked above");
            },
            budget,
        );

        let cost_channels = (2 * n + 1) * (2 * n + 1);
        let ccl_channels = n * n;
        rows.push(BenchRow {
            n,
            cost_channels,
            ccl_channels,
            channel_ratio: ccl_channels as f64 / cost_channels as f64,
            cost_ms,
            ccl_ms,
            // Cost volume: one n^2 x (2n+1)^2 buffer. CCL: the dot table
            // plus the volume, two n^4 buffers live at once.
            cost_bytes: n * n * cost_channels * 4,
            ccl_bytes: 2 * n * n * n * n * 4,
        });
    }
    let cost_slope = log_log_slope(
        &rows.iter().map(|r| (r.n as f64, r.cost_ms)).collect::<Vec<_>>(),
    );
    let ccl_slope = log_log_slope(
        &rows.iter().map(|r| (r.n as f64, r.ccl_ms)).collect::<Vec<_>>(),
    );
    Ok(BenchReport {
        rows,
        feature_channels,
        cost_slope,
        ccl_slope,
    })
}

/// Times both kernels single-threaded over the given sizes.
pub fn run_kernel_bench(sizes: &[usize], feature_channels: usize, seed: u64) -> Result<BenchReport> {
    #[cfg(feature = "rayon")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("single-thread pool")
            .install(|| bench_sizes(sizes, feature_channels, seed))
    }
    #[cfg(not(feature = "rayon"))]
    {
        bench_sizes(sizes, feature_channels, seed)
    }
}

impl BenchReport {
    /// Plain-text table plus the fitted slopes.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "kernel benchmark ({} feature channels, single-threaded)\n",
            self.feature_channels
        ));
        s.push_str(
            "   n  cost-ch   ccl-ch   ratio    cost-ms     ccl-ms   cost-MB   ccl-MB\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:4} {:8} {:8}   {:.3} {:10.3} {:10.3} {:9.1} {:8.1}\n",
                r.n,
                r.cost_channels,
                r.ccl_channels,
                r.channel_ratio,
                r.cost_ms,
                r.ccl_ms,
                r.cost_bytes as f64 / (1024.0 * 1024.0),
                r.ccl_bytes as f64 / (1024.0 * 1024.0),
            ));
        }
        s.push_str(&format!(
            "log-log time slope: cost {:.2}, ccl {:.2}\n",
            self.cost_slope, self.ccl_slope
        ));
        s
    }
}
