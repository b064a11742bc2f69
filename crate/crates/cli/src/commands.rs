//! Subcommand implementations. Each writes its artifacts into `--out`.

use std::fs;
use std::path::{Path, PathBuf};

use mcconv_core::{generate_shape, io, poisson_sample, PointCloud, ProtocolKind, Rng};
use mcconv_train::trainer::eval_seeds;
use mcconv_train::{
    evaluate, load_checkpoint, load_dataset, metrics_csv, normal_estimation_network, save_checkpoint, save_dataset,
    generate_dataset, train_normal_estimation, Dataset, DatasetConfig, MetricRow, Schedule, TrainConfig,
};
use serde::Serialize;

use crate::bench::{bench_csv, run_bench, BenchConfig};
use crate::cli::*;
use crate::svg::{line_chart, Series, PALETTE};
use crate::teaser::{curves_csv, run_teaser, summary_csv, teaser_svg, TeaserConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.into())
            }
        }
    )*};
}
runtime_from!(mcconv_core::Error, mcconv_train::TrainError, std::io::Error, serde_json::Error);

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Serialize)]
struct RunRecord<'a> {
    version: &'static str,
    #[serde(flatten)]
    cli: &'a Cli,
}

pub fn run(cli: &Cli) -> CliResult<()> {
    if cli.threads > 0 {
        // A pool may already exist when called as a library; thread count
        // never changes results, so that is not an error.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    fs::create_dir_all(&cli.out)?;
    let record = RunRecord {
        version: env!("CARGO_PKG_VERSION"),
        cli,
    };
    fs::write(cli.out.join("run.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Gen(a) => gen(a, cli.seed, out),
        Command::Resample(a) => resample(a, cli.seed, out),
        Command::SamplePd(a) => sample_pd(a, cli.seed, out),
        Command::Teaser(a) => teaser(a, cli.seed, out),
        Command::Bench(a) => bench(a, cli.seed, out),
        Command::Train(a) => train(a, cli.seed, out),
        Command::Eval(a) => eval(a, cli.seed, out),
        Command::Inspect(a) => inspect(a, out),
    }
}

/// Reads the text format, or ASCII PLY for `.ply` files.
pub fn read_input(path: &Path) -> CliResult<PointCloud> {
    let is_ply = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    let cloud = if is_ply {
        io::read_ply_ascii(fs::File::open(path)?)?
    } else {
        io::load_cloud(path)?
    };
    Ok(cloud)
}

fn gen(a: &GenArgs, seed: u64, out: &Path) -> CliResult<()> {
    let rng = Rng::new(seed);
    if a.dataset {
        if a.dense_points == 0 || a.shapes.is_empty() {
            return Err(usage("dataset shapes need at least one kind and one point"));
        }
        let cfg = DatasetConfig {
            shapes: a.shapes.iter().map(|&s| mcconv_core::ShapeKind::from(s).name().to_string()).collect(),
            train: a.train,
            test: a.test,
            dense_points: a.dense_points,
            rotate: !a.no_rotate,
        };
        let data = generate_dataset(&cfg, &rng)?;
        let dir = out.join("dataset");
        save_dataset(&dir, &data)?;
        println!("wrote {} train and {} test shapes to {}", data.train.len(), data.test.len(), dir.display());
    } else {
        if a.points == 0 {
            return Err(usage("--points must be positive"));
        }
        let cloud = generate_shape(a.shape.into(), a.points, &mut rng.fork("gen"))?;
        let path = out.join("cloud.mcc");
        io::write_cloud(&path, &cloud)?;
        println!("wrote {} points to {}", cloud.len(), path.display());
    }
    Ok(())
}

fn resample(a: &ResampleArgs, seed: u64, out: &Path) -> CliResult<()> {
    if a.points == Some(0) {
        return Err(usage("--points must be positive"));
    }
    let cloud = read_input(&a.input)?;
    let kept = mcconv_train::resample(&cloud, a.protocol.into(), a.points.unwrap_or(usize::MAX), &Rng::new(seed))?;
    let path = out.join("resampled.mcc");
    io::write_cloud(&path, &kept)?;
    println!("kept {} of {} points", kept.len(), cloud.len());
    Ok(())
}

fn sample_pd(a: &SamplePdArgs, seed: u64, out: &Path) -> CliResult<()> {
    let cloud = read_input(&a.input)?;
    let r_p = match a.radius {
        Some(r) => r,
        None => a.radius_fraction * cloud.bbox_diag(),
    };
    if !(r_p > 0.0) || !r_p.is_finite() {
        return Err(usage(format!("Poisson radius must be positive, got {r_p}")));
    }
    let idx = poisson_sample(&cloud, r_p, &mut Rng::new(seed).fork("poisson"))?;
    io::write_cloud(out.join("poisson.mcc"), &cloud.subset(&idx))?;
    println!("kept {} of {} points at r_p = {r_p}", idx.len(), cloud.len());
    Ok(())
}

fn teaser(a: &TeaserArgs, seed: u64, out: &Path) -> CliResult<()> {
    if !(a.band_lo < a.band_hi) || !(a.radius > 0.0) {
        return Err(usage("teaser needs band_lo < band_hi and a positive radius"));
    }
    let cfg = TeaserConfig {
        dense_points: a.dense_points,
        points: a.points,
        eval_points: a.eval_points,
        radius: a.radius,
        band_lo: a.band_lo,
        band_hi: a.band_hi,
        bins: a.bins,
        constant_signal: a.constant,
        ..TeaserConfig::default()
    };
    if cfg.dense_points == 0 || cfg.points == 0 || cfg.eval_points == 0 || cfg.bins == 0 {
        return Err(usage("teaser sizes must be positive"));
    }
    let res = run_teaser(&cfg, &Rng::new(seed))?;
    let summary = summary_csv(&res);
    fs::write(out.join("teaser_curves.csv"), curves_csv(&res))?;
    fs::write(out.join("teaser_summary.csv"), &summary)?;
    fs::write(out.join("teaser.svg"), teaser_svg(&res))?;
    print!("{summary}");
    Ok(())
}

fn bench(a: &BenchArgs, seed: u64, out: &Path) -> CliResult<()> {
    if a.reps == 0 {
        return Err(usage("--reps must be positive"));
    }
    let mut sizes = a.sizes.clone();
    if a.million {
        sizes.push(1_000_000);
    }
    let cfg = BenchConfig {
        sizes,
        reps: a.reps,
        ..BenchConfig::default()
    };
    let csv = bench_csv(&run_bench(&cfg, seed)?);
    fs::write(out.join("bench.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn truncate(data: &mut Dataset, train: Option<usize>, test: Option<usize>) {
    if let Some(n) = train {
        data.train.truncate(n);
    }
    if let Some(n) = test {
        data.test.truncate(n);
    }
}

fn train(a: &TrainArgs, seed: u64, out: &Path) -> CliResult<()> {
    if a.width == 0 || a.batch_size == 0 || a.points == 0 || !(a.lr > 0.0) || a.decay_every == 0 {
        return Err(usage("width, batch size, points, learning rate and decay period must be positive"));
    }
    let mut data = load_dataset(&a.dataset)?;
    truncate(&mut data, a.max_train, a.max_test);
    let spec = normal_estimation_network(a.width);
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        points: a.points,
        schedule: Schedule {
            base_lr: a.lr,
            every: a.decay_every,
            ..Schedule::default()
        },
        regimen: a.train_regimen.into(),
        estimator: a.conv.into(),
        eval_every: a.eval_every,
        eval_seeds: a.eval_seeds,
        seed,
    };
    let outcome = train_normal_estimation(&spec, &cfg, &data)?;
    save_checkpoint(out.join("checkpoint.mcckpt"), &outcome.spec, &outcome.state)?;
    fs::write(out.join("metrics.csv"), metrics_csv(&outcome.metrics))?;
    fs::write(out.join("loss.svg"), loss_svg(&outcome.metrics))?;
    for row in outcome.metrics.iter().filter(|r| r.split == "test") {
        println!("test {:<10} {:.4}", row.protocol, row.loss);
    }
    Ok(())
}

/// Training loss and per-protocol validation curves against epoch.
pub fn loss_svg(rows: &[MetricRow]) -> String {
    let mut series = vec![Series {
        label: "train".into(),
        color: PALETTE[0],
        points: rows
            .iter()
            .filter(|r| r.split == "train")
            .map(|r| (r.epoch as f64, r.loss))
            .collect(),
    }];
    for (i, p) in ProtocolKind::ALL.iter().enumerate() {
        series.push(Series {
            label: format!("val {}", p.name()),
            color: PALETTE[1 + i % (PALETTE.len() - 1)],
            points: rows
                .iter()
                .filter(|r| r.split == "val" && r.protocol == p.name())
                .map(|r| (r.epoch as f64, r.loss))
                .collect(),
        });
    }
    line_chart("Cosine loss", "epoch", "loss", &series)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub split: String,
    pub protocol: String,
    pub loss: f64,
}

/// Columns: `split,protocol,loss`.
pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("split,protocol,loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.split, r.protocol, r.loss));
    }
    out
}

fn eval(a: &EvalArgs, seed: u64, out: &Path) -> CliResult<()> {
    if a.seeds == 0 || a.points == 0 {
        return Err(usage("--seeds and --points must be positive"));
    }
    let (spec, state) = load_checkpoint(&a.checkpoint)?;
    let mut data = load_dataset(&a.dataset)?;
    truncate(&mut data, a.max_shapes, a.max_shapes);
    let seeds = eval_seeds(seed, a.seeds);
    let mut rows = Vec::new();
    for (split, shapes) in [("train", &data.train), ("test", &data.test)] {
        if shapes.is_empty() {
            return Err(anyhow::anyhow!("the {split} split of {} is empty", a.dataset.display()).into());
        }
        for p in ProtocolKind::ALL {
            rows.push(EvalRow {
                split: split.into(),
                protocol: p.name().into(),
                loss: evaluate(&spec, &state.params, shapes, p, a.points, &seeds)?,
            });
        }
    }
    let csv = eval_csv(&rows);
    fs::write(out.join("eval.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct CloudStats {
    pub input: PathBuf,
    pub points: usize,
    pub normals: bool,
    pub feature_channels: usize,
    pub batches: usize,
    pub min: Option<[f64; 3]>,
    pub max: Option<[f64; 3]>,
    pub centroid: Option<[f64; 3]>,
    pub bbox_diag: f64,
}

pub fn cloud_stats(input: &Path, cloud: &PointCloud) -> CloudStats {
    let bounds = cloud.bounds();
    let centroid = (!cloud.is_empty()).then(|| {
        let n = cloud.len() as f64;
        [0, 1, 2].map(|d| cloud.positions().iter().map(|p| p[d]).sum::<f64>() / n)
    });
    CloudStats {
        input: input.to_path_buf(),
        points: cloud.len(),
        normals: cloud.normals().is_some(),
        feature_channels: cloud.features().map_or(0, |f| f.channels()),
        batches: cloud.batch_vocabulary().len(),
        min: bounds.map(|b| b.0),
        max: bounds.map(|b| b.1),
        centroid,
        bbox_diag: cloud.bbox_diag(),
    }
}

fn inspect(a: &InspectArgs, out: &Path) -> CliResult<()> {
    let cloud = read_input(&a.input)?;
    let json = serde_json::to_string_pretty(&cloud_stats(&a.input, &cloud))? + "\n";
    fs::write(out.join("inspect.json"), &json)?;
    print!("{json}");
    Ok(())
}
