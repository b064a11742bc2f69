//! Edge filter on a sphere under uniform and density-ramped sampling.
//!
//! A latitude band signal is convolved with the fixed kernel
//! `g(d) = d_z * exp(-|d|^2 / 0.18)` at a fixed set of evaluation points.
//! Each sampled condition is compared against a dense uniform reference
//! computed with the same estimator. Errors are taken between per-latitude-bin
//! mean curves, and relative RMSE (RMSE over the RMS of the binned reference)
//! makes the two estimators' scales comparable.

use mcconv_core::protocols::latitude;
use mcconv_core::{
    analytic_conv_forward, build_conv_table, generate_shape, protocol_indices, scalar_field_on_sphere, Estimator,
    FeatureMap, PointCloud, Protocol, ProtocolKind, Rng, ScalarField, ShapeKind,
};
use serde::Serialize;

use crate::svg::{line_chart, Series, PALETTE};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeaserConfig {
    pub dense_points: usize,
    pub points: usize,
    pub eval_points: usize,
    pub radius: f64,
    pub sigma_fraction: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub bins: usize,
    pub constant_signal: bool,
}

impl Default for TeaserConfig {
    fn default() -> Self {
        TeaserConfig {
            dense_points: 200_000,
            points: 4000,
            eval_points: 1000,
            radius: 0.2,
            sigma_fraction: mcconv_core::density::DEFAULT_SIGMA_FRACTION,
            band_lo: -1.2,
            band_hi: 1.0,
            bins: 18,
            constant_signal: false,
        }
    }
}

pub fn edge_kernel(d: [f64; 3]) -> f64 {
    d[2] * (-(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) / 0.18).exp()
}

#[derive(Debug, Clone, Serialize)]
pub struct Condition {
    pub name: String,
    pub sampling: String,
    pub estimator: String,
    pub points: usize,
    pub rmse: f64,
    pub relative_rmse: f64,
    pub mean_abs: f64,
    #[serde(skip)]
    pub response: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TeaserResult {
    pub config: TeaserConfig,
    pub eval_latitudes: Vec<f64>,
    pub signal: Vec<f64>,
    pub reference_mc: Vec<f64>,
    pub reference_avg: Vec<f64>,
    pub conditions: Vec<Condition>,
}

impl TeaserResult {
    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Evenly spread points on the unit sphere (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> PointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let pos = (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [rho * phi.cos(), rho * phi.sin(), z]
        })
        .collect();
    PointCloud::new(pos)
}

fn field(cfg: &TeaserConfig) -> ScalarField {
    if cfg.constant_signal {
        ScalarField::Constant
    } else {
        ScalarField::StepBand {
            lo: cfg.band_lo,
            hi: cfg.band_hi,
        }
    }
}

fn respond(cfg: &TeaserConfig, cloud: &PointCloud, eval: &PointCloud, estimator: Estimator) -> mcconv_core::Result<Vec<f64>> {
    let table = build_conv_table(eval, cloud, cfg.radius, cfg.sigma_fraction, estimator)?;
    let f: FeatureMap = scalar_field_on_sphere(cloud, field(cfg));
    Ok(analytic_conv_forward(edge_kernel, estimator, cloud, &f, eval, &table)?.into_values())
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// RMSE between two binned curves over the bins both populate.
fn binned_rmse(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| x - y).collect();
    rms(&d)
}

/// Draws `points` samples whose density ramps along +z with the Gradient protocol.
pub fn gradient_sphere(points: usize, rng: &Rng) -> mcconv_core::Result<PointCloud> {
    // The ramp keeps a bit more than half of a uniform cloud on average.
    let candidates = generate_shape(ShapeKind::Sphere, points * 3, &mut rng.fork("candidates"))?;
    let proto = Protocol::new(ProtocolKind::Gradient, rng.fork("protocol")).with_direction([0.0, 0.0, 1.0]);
    let mut idx = protocol_indices(&candidates, &proto)?;
    rng.fork("subset").shuffle(&mut idx);
    idx.truncate(points);
    idx.sort_unstable();
    Ok(candidates.subset(&idx))
}

pub fn run_teaser(cfg: &TeaserConfig, rng: &Rng) -> mcconv_core::Result<TeaserResult> {
    if cfg.points == 0 || cfg.dense_points == 0 || cfg.eval_points == 0 || cfg.bins == 0 {
        return Err(mcconv_core::Error::InvalidParameter("teaser sizes must be positive".into()));
    }
    let eval = fibonacci_sphere(cfg.eval_points);
    let dense = generate_shape(ShapeKind::Sphere, cfg.dense_points, &mut rng.fork("dense"))?;
    let reference_mc = respond(cfg, &dense, &eval, Estimator::MonteCarlo)?;
    let reference_avg = respond(cfg, &dense, &eval, Estimator::Average)?;
    let uniform = generate_shape(ShapeKind::Sphere, cfg.points, &mut rng.fork("uniform"))?;
    let ramped = gradient_sphere(cfg.points, &rng.fork("gradient"))?;

    let setups = [
        ("uniform-avg", "uniform", &uniform, Estimator::Average),
        ("uniform-mc", "uniform", &uniform, Estimator::MonteCarlo),
        ("gradient-avg", "gradient", &ramped, Estimator::Average),
        ("gradient-mc", "gradient", &ramped, Estimator::MonteCarlo),
    ];
    let eval_latitudes: Vec<f64> = eval.positions().iter().map(|&p| latitude(p)).collect();
    let mut conditions = Vec::new();
    for (name, sampling, cloud, est) in setups {
        let response = respond(cfg, cloud, &eval, est)?;
        let reference = match est {
            Estimator::MonteCarlo => &reference_mc,
            Estimator::Average => &reference_avg,
        };
        let lat = &eval_latitudes;
        let binned_ref = bin_means(lat, reference, cfg.bins);
        let err = binned_rmse(&bin_means(lat, &response, cfg.bins), &binned_ref);
        let scale = binned_rmse(&binned_ref, &vec![0.0; cfg.bins]);
        conditions.push(Condition {
            name: name.into(),
            sampling: sampling.into(),
            estimator: estimator_name(est).into(),
            points: cloud.len(),
            rmse: err,
            relative_rmse: if scale > 0.0 { err / scale } else { err },
            mean_abs: response.iter().map(|v| v.abs()).sum::<f64>() / response.len() as f64,
            response,
        });
    }
    Ok(TeaserResult {
        config: cfg.clone(),
        eval_latitudes,
        signal: scalar_field_on_sphere(&eval, field(cfg)).into_values(),
        reference_mc,
        reference_avg,
        conditions,
    })
}

fn estimator_name(e: Estimator) -> &'static str {
    match e {
        Estimator::MonteCarlo => "mc",
        Estimator::Average => "avg",
    }
}

/// Mean of `values` per latitude bin; empty bins are NaN.
pub fn bin_means(latitudes: &[f64], values: &[f64], bins: usize) -> Vec<f64> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut sum = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (&lat, &v) in latitudes.iter().zip(values) {
        let b = (((lat + half_pi) / std::f64::consts::PI * bins as f64) as usize).min(bins - 1);
        sum[b] += v;
        count[b] += 1;
    }
    sum.iter().zip(&count).map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 }).collect()
}

pub fn bin_centers(bins: usize) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    (0..bins).map(|b| -pi / 2.0 + (b as f64 + 0.5) * pi / bins as f64).collect()
}

/// Columns: `bin,latitude,signal,reference_mc,reference_avg,<condition>...`.
pub fn curves_csv(res: &TeaserResult) -> String {
    let bins = res.config.bins;
    let lat = &res.eval_latitudes;
    let mut cols = vec![
        bin_means(lat, &res.signal, bins),
        bin_means(lat, &res.reference_mc, bins),
        bin_means(lat, &res.reference_avg, bins),
    ];
    cols.extend(res.conditions.iter().map(|c| bin_means(lat, &c.response, bins)));
    let mut out = String::from("bin,latitude,signal,reference_mc,reference_avg");
    for c in &res.conditions {
        out.push(',');
        out.push_str(&c.name);
    }
    out.push('\n');
    for (b, center) in bin_centers(bins).iter().enumerate() {
        out.push_str(&format!("{b},{center:.6}"));
        for col in &cols {
            out.push_str(&format!(",{:.9e}", col[b]));
        }
        out.push('\n');
    }
    out
}

/// Columns: `condition,sampling,estimator,points,rmse,relative_rmse,mean_abs`.
pub fn summary_csv(res: &TeaserResult) -> String {
    let mut out = String::from("condition,sampling,estimator,points,rmse,relative_rmse,mean_abs\n");
    for c in &res.conditions {
        out.push_str(&format!(
            "{},{},{},{},{:.9e},{:.9e},{:.9e}\n",
            c.name, c.sampling, c.estimator, c.points, c.rmse, c.relative_rmse, c.mean_abs
        ));
    }
    out
}

/// Two panels side by side would need layout code; instead each curve is
/// divided by the RMS of its reference so both estimators share one axis.
pub fn teaser_svg(res: &TeaserResult) -> String {
    let bins = res.config.bins;
    let lat = &res.eval_latitudes;
    let centers = bin_centers(bins);
    let scaled = |v: &[f64], reference: &[f64]| -> Vec<(f64, f64)> {
        let s = rms(reference).max(f64::MIN_POSITIVE);
        let means = bin_means(lat, v, bins);
        centers.iter().zip(means).map(|(&x, y)| (x, y / s)).collect()
    };
    let mut series = vec![Series {
        label: "dense reference".into(),
        color: PALETTE[0],
        points: scaled(&res.reference_mc, &res.reference_mc),
    }];
    for (i, c) in res.conditions.iter().enumerate() {
        let reference = if c.estimator == "mc" { &res.reference_mc } else { &res.reference_avg };
        series.push(Series {
            label: format!("{} ({:.3})", c.name, c.relative_rmse),
            color: PALETTE[1 + i % (PALETTE.len() - 1)],
            points: scaled(&c.response, reference),
        });
    }
    line_chart(
        "Edge response by latitude (relative RMSE in legend)",
        "latitude (rad)",
        "response / reference RMS",
        &series,
    )
}
