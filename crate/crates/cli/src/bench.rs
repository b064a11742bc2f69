//! Timing of Poisson-disk and farthest-point subsampling at growing sizes.

use std::time::Instant;

use mcconv_core::{farthest_point_sample, generate_shape, poisson_sample, PointCloud, Rng, ShapeKind};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub reps: usize,
    /// Target output size as a fraction of the input.
    pub fraction: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![1_000, 10_000, 100_000],
            reps: 5,
            fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub algorithm: &'static str,
    pub n_in: usize,
    pub n_out: usize,
    pub millis: f64,
    pub seed: u64,
}

/// Poisson radius whose sample size is closest to `target`, by bisection on
/// a log scale with a fixed stream.
pub fn calibrate_radius(cloud: &PointCloud, target: usize, rng: &Rng) -> mcconv_core::Result<f64> {
    let diag = cloud.bbox_diag().max(f64::MIN_POSITIVE);
    let (mut lo, mut hi) = (diag * 1e-6, diag);
    let count = |r: f64| poisson_sample(cloud, r, &mut rng.fork("calibrate")).map(|v| v.len());
    let mut best = (usize::MAX, hi);
    for _ in 0..40 {
        let mid = (lo * hi).sqrt();
        let k = count(mid)?;
        let miss = k.abs_diff(target);
        if miss < best.0 {
            best = (miss, mid);
        }
        if k == target {
            break;
        }
        if k > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best.1)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Two rows per nonzero size, Poisson-disk first. Sizes of zero are skipped.
pub fn run_bench(cfg: &BenchConfig, seed: u64) -> mcconv_core::Result<Vec<BenchRow>> {
    if cfg.reps == 0 || !(cfg.fraction > 0.0 && cfg.fraction <= 1.0) {
        return Err(mcconv_core::Error::InvalidParameter(
            "bench needs at least one repetition and a fraction in (0, 1]".into(),
        ));
    }
    let rng = Rng::new(seed);
    let mut rows = Vec::new();
    for &n in cfg.sizes.iter().filter(|&&n| n > 0) {
        let cloud = generate_shape(ShapeKind::Sphere, n, &mut rng.fork_index("cloud", n as u64))?;
        let target = ((n as f64 * cfg.fraction).round() as usize).max(1);
        let r_p = calibrate_radius(&cloud, target, &rng.fork_index("radius", n as u64))?;

        let mut times = Vec::with_capacity(cfg.reps);
        let mut kept = 0;
        for rep in 0..cfg.reps {
            let mut r = rng.fork_index("pd", rep as u64);
            let t = Instant::now();
            kept = poisson_sample(&cloud, r_p, &mut r)?.len();
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        rows.push(BenchRow {
            algorithm: "poisson",
            n_in: n,
            n_out: kept,
            millis: median(times),
            seed,
        });

        let mut times = Vec::with_capacity(cfg.reps);
        for rep in 0..cfg.reps {
            let mut r = rng.fork_index("fps", rep as u64);
            let t = Instant::now();
            let sel = farthest_point_sample(&cloud, target, &mut r)?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
            debug_assert_eq!(sel.len(), target);
        }
        rows.push(BenchRow {
            algorithm: "farthest",
            n_in: n,
            n_out: target,
            millis: median(times),
            seed,
        });
    }
    Ok(rows)
}

/// Columns: `algorithm,n_in,n_out,millis,seed`.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("algorithm,n_in,n_out,millis,seed\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:.3},{}\n", r.algorithm, r.n_in, r.n_out, r.millis, r.seed));
    }
    out
}

/// `t(big) / t(small)` for one algorithm, if both sizes were measured.
pub fn time_ratio(rows: &[BenchRow], algorithm: &str, small: usize, big: usize) -> Option<f64> {
    let t = |n| rows.iter().find(|r| r.algorithm == algorithm && r.n_in == n).map(|r| r.millis);
    Some(t(big)? / t(small)?.max(1e-6))
}
