use std::fs;
use std::path::{Path, PathBuf};

use bfsa::diagnostics::{ks_critical_1pct, spectral_zscores};
use bfsa::geometry::kdtree_partition;
use bfsa::io::{config_schema, fmt, holdout_mse, read_json, read_points, write_json, write_records, write_table, Dataset, RunConfig};
use bfsa::likelihood::nll;
use bfsa::optimizer::{fit, fit_global, fit_local, LocalFit};
use bfsa::predict::{cond_cov, cond_mean, cond_simulate};
use bfsa::scaling::run_scaling;
use bfsa::synthetic::{holdout_mask, ps_problem, simulate, SyntheticConfig};
use bfsa::{assemble, build_plan, BfsaMatrix, Error, FitReport, KernelSpec, PartitionPlan, Point, PredictionPlan, Result};
use serde_json::json;

use crate::{Command, Common};

/// Largest problem `diagnose` will decompose densely.
const DIAGNOSE_MAX_N: usize = 8000;

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| invalid(format!("missing --{flag} (or paths.{flag} in the config)")))
}

/// Reads either a fit report or a bare kernel spec.
fn load_params(path: &Path) -> Result<KernelSpec> {
    let value: serde_json::Value = read_json(path)?;
    let spec = if value.get("theta_hat").is_some() {
        serde_json::from_value::<FitReport>(value)?.spec
    } else {
        serde_json::from_value::<KernelSpec>(value)?
    };
    spec.validate()?;
    Ok(spec)
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Training part of the dataset together with its held-out rows.
    fn data(&self) -> Result<(Dataset, Dataset)> {
        let d = Dataset::read(required(&self.cfg.paths.data, "data")?)?;
        let (train, holdout) = d.split();
        if train.is_empty() {
            return Err(invalid("every row is held out"));
        }
        Ok((train, holdout))
    }

    fn plan(&self, coords: &[Point]) -> Result<PartitionPlan> {
        let n = coords.len();
        build_plan(coords, self.cfg.blocks_for(n), self.cfg.num_landmarks.min(n))
    }

    fn params(&self) -> Result<KernelSpec> {
        load_params(required(&self.cfg.paths.params, "params")?)
    }

    fn matrix(&self, spec: &KernelSpec, coords: &[Point]) -> Result<BfsaMatrix> {
        assemble(spec, coords, &self.plan(coords)?)
    }

    fn resolved(&self, n: Option<usize>) -> Result<()> {
        let cfg = n.map_or_else(|| self.cfg.clone(), |n| self.cfg.resolved(n));
        write_json(&self.path("resolved_config.json"), &cfg)
    }
}

pub fn run(config: Option<&Path>, common: &Common, command: &Command) -> Result<()> {
    if let Command::Schema = command {
        println!("{}", serde_json::to_string_pretty(&config_schema())?);
        return Ok(());
    }
    let mut cfg = match config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    let paths = &mut cfg.paths;
    for (slot, flag) in [
        (&mut paths.data, &common.data),
        (&mut paths.targets, &common.targets),
        (&mut paths.params, &common.params),
        (&mut paths.output_dir, &common.out),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = cfg.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    let ctx = Context { cfg, out };
    match command {
        Command::Generate { n, holdout_fraction } => generate(&ctx, *n, *holdout_fraction),
        Command::FitLocal => fit_local_cmd(&ctx),
        Command::FitGlobal { local } => fit_global_cmd(&ctx, local.as_deref()),
        Command::Predict => predict(&ctx),
        Command::Simulate { count } => simulate_cmd(&ctx, *count),
        Command::Diagnose { k } => diagnose(&ctx, *k),
        Command::Bench { sizes, repetitions } => bench(ctx, sizes.clone(), *repetitions),
        Command::Schema => unreachable!(),
    }
}

fn generate(ctx: &Context, n: usize, fraction: f64) -> Result<()> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(invalid("--holdout-fraction must lie in [0, 1)"));
    }
    let cfg = &ctx.cfg;
    let matern = cfg.kernel.matern;
    let sc = SyntheticConfig {
        n,
        num_centers: cfg.num_centers,
        nu: matern.nu,
        sigma2: matern.sigma2,
        nugget: cfg.nugget_ratio * matern.sigma2,
        num_blocks: cfg.blocks_for(n),
        num_landmarks: cfg.num_landmarks.min(n),
    };
    let pb = ps_problem(&sc, cfg.seed)?;
    let mask = (fraction > 0.0).then(|| holdout_mask(n, fraction, cfg.seed.wrapping_add(3)));
    Dataset::new(pb.points, pb.values, mask)?.write(&ctx.path("data.csv"))?;
    write_json(&ctx.path("truth.json"), &pb.truth)?;
    ctx.resolved(Some(n))
}

fn fit_local_cmd(ctx: &Context) -> Result<()> {
    let (train, _) = ctx.data()?;
    let cfg = &ctx.cfg;
    let cells = kdtree_partition(&train.coords, cfg.num_centers)?;
    let local = fit_local(&train.coords, &train.values, &cells, cfg.kernel.matern.nu, cfg.nugget_ratio, &cfg.trust_region);
    write_json(&ctx.path("local_fits.json"), &local)?;
    let rows: Vec<Vec<String>> = local
        .iter()
        .map(|f| {
            let mut r = vec![f.block.to_string(), fmt(f.center[0]), fmt(f.center[1]), f.n.to_string()];
            r.extend(f.coeffs.iter().map(|v| fmt(*v)));
            r.push(fmt(f.sigma2));
            r.push(fmt(f.nll));
            r.push(f.iterations.to_string());
            r.push(u8::from(f.fallback).to_string());
            r
        })
        .collect();
    let header =
        ["block", "center_x", "center_y", "n", "log_l11", "l21", "log_l22", "sigma2", "nll", "iterations", "fallback"];
    write_records(&ctx.path("local_fits.csv"), &header, &rows)?;
    for f in local.iter().filter(|f| f.fallback) {
        eprintln!("warning: local fit for block {} fell back to the isotropic start: {}", f.block, f.message.as_deref().unwrap_or(""));
    }
    ctx.resolved(Some(train.len()))
}

/// Correlation matrix of the inverse Fisher information; NaN when singular.
fn inverse_correlation(report: &FitReport) -> Vec<Vec<f64>> {
    let f = report.fisher();
    let d = f.nrows();
    match f.try_inverse() {
        Some(inv) => (0..d)
            .map(|i| (0..d).map(|j| inv[(i, j)] / (inv[(i, i)] * inv[(j, j)]).sqrt()).collect())
            .collect(),
        None => vec![vec![f64::NAN; d]; d],
    }
}

fn fit_global_cmd(ctx: &Context, local: Option<&Path>) -> Result<()> {
    let (train, _) = ctx.data()?;
    let cfg = &ctx.cfg;
    let plan = ctx.plan(&train.coords)?;
    let report = match local {
        Some(path) => {
            let local: Vec<LocalFit> = read_json(path)?;
            let nu = cfg.kernel.matern.nu;
            fit_global(&train.coords, &train.values, &plan, &local, nu, cfg.nugget_ratio, &cfg.trust_region)?
        }
        None => {
            let start = match &cfg.paths.params {
                Some(p) => load_params(p)?,
                None => cfg.kernel.clone(),
            };
            fit(&start, &train.coords, &train.values, &plan, &cfg.trust_region)?
        }
    };
    write_json(&ctx.path("fit_report.json"), &report)?;
    write_json(&ctx.path("params.json"), &report.spec)?;
    let names = report.spec.param_names();
    let header: Vec<&str> = report.free.iter().map(|&j| names[j].as_str()).collect();
    write_table(&ctx.path("fisher.csv"), &header, &report.fisher_at_mle)?;
    write_table(&ctx.path("correlation.csv"), &header, &inverse_correlation(&report))?;
    ctx.resolved(Some(train.len()))
}

fn predict_rows(targets: &[Point], mean: &[f64], var: &[f64]) -> Vec<Vec<f64>> {
    (0..targets.len()).map(|i| vec![targets[i][0], targets[i][1], mean[i], var[i]]).collect()
}

fn predict(ctx: &Context) -> Result<()> {
    let (train, holdout) = ctx.data()?;
    let spec = ctx.params()?;
    let k = ctx.matrix(&spec, &train.coords)?;
    let at = |targets: &[Point]| -> Result<(Vec<f64>, Vec<f64>)> {
        let pp = PredictionPlan::new(&spec, &train.coords, &k, targets)?;
        Ok((cond_mean(&k, &train.values, &pp)?, cond_cov(&k, &pp).variances()))
    };
    let header = ["x", "y", "mean", "variance"];
    let targets_path = ctx.cfg.paths.targets.as_deref();
    if targets_path.is_none() && holdout.is_empty() {
        return Err(invalid("predict needs --targets or held-out rows in the data"));
    }
    if let Some(p) = targets_path {
        let targets = read_points(p)?;
        let (m, v) = at(&targets)?;
        write_table(&ctx.path("predictions.csv"), &header, &predict_rows(&targets, &m, &v))?;
    }
    if !holdout.is_empty() {
        let (m, v) = at(&holdout.coords)?;
        let mut rows = predict_rows(&holdout.coords, &m, &v);
        for (r, y) in rows.iter_mut().zip(&holdout.values) {
            r.push(*y);
        }
        write_table(&ctx.path("holdout_predictions.csv"), &["x", "y", "mean", "variance", "value"], &rows)?;
        let mse = holdout_mse(&m, &holdout.values)?;
        write_json(&ctx.path("holdout_summary.json"), &json!({ "n": holdout.len(), "mse": mse }))?;
    }
    ctx.resolved(Some(train.len()))
}

fn draw_rows(locs: &[Point], draws: &[Vec<f64>]) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut header = vec!["x".to_string(), "y".to_string()];
    header.extend((0..draws.len()).map(|c| format!("draw_{c}")));
    let rows = (0..locs.len())
        .map(|i| {
            let mut r = vec![locs[i][0], locs[i][1]];
            r.extend(draws.iter().map(|d| d[i]));
            r
        })
        .collect();
    (header, rows)
}

fn simulate_cmd(ctx: &Context, count: Option<usize>) -> Result<()> {
    let (train, _) = ctx.data()?;
    let spec = ctx.params()?;
    let k = ctx.matrix(&spec, &train.coords)?;
    let count = count.unwrap_or(ctx.cfg.num_draws);
    let seed = ctx.cfg.seed;
    let (name, locs, draws) = match ctx.cfg.paths.targets.as_deref() {
        Some(p) => {
            let targets = read_points(p)?;
            let pp = PredictionPlan::new(&spec, &train.coords, &k, &targets)?;
            ("conditional_draws.csv", targets, cond_simulate(&k, &train.values, &pp, seed, count)?)
        }
        None => ("unconditional_draws.csv", train.coords.clone(), simulate(&k, seed, count)?),
    };
    let (header, rows) = draw_rows(&locs, &draws);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(&ctx.path(name), &header, &rows)?;
    ctx.resolved(Some(train.len()))
}

fn diagnose(ctx: &Context, k: Option<usize>) -> Result<()> {
    let (train, _) = ctx.data()?;
    let n = train.len();
    if n > DIAGNOSE_MAX_N {
        return Err(invalid(format!("diagnose decomposes the covariance densely; n = {n} exceeds {DIAGNOSE_MAX_N}")));
    }
    let spec = ctx.params()?;
    let kmat = ctx.matrix(&spec, &train.coords)?;
    let count = k.unwrap_or(ctx.cfg.num_eigenpairs).min(n);
    let r = spectral_zscores(&kmat.to_dense(), &train.values, count)?;
    let rows: Vec<Vec<f64>> = (0..count)
        .map(|j| vec![j as f64, r.eigenvalues[j], r.zscores[j], r.qq[j].0, r.qq[j].1])
        .collect();
    write_table(&ctx.path("zscores.csv"), &["index", "eigenvalue", "zscore", "qq_theoretical", "qq_observed"], &rows)?;
    let summary = json!({
        "k": count,
        "ks_statistic": r.ks_statistic(),
        "ks_critical_1pct": ks_critical_1pct(count),
        "ks_passes": r.ks_passes(),
        "max_zscore": r.max_zscore(),
        "nll": nll(&kmat, &train.values)?,
    });
    write_json(&ctx.path("diagnostics.json"), &summary)?;
    ctx.resolved(Some(n))
}

fn bench(mut ctx: Context, sizes: Option<Vec<usize>>, repetitions: Option<usize>) -> Result<()> {
    if let Some(s) = sizes {
        ctx.cfg.bench.sizes = s;
    }
    if let Some(r) = repetitions {
        ctx.cfg.bench.repetitions = r;
    }
    ctx.cfg.validate()?;
    let report = run_scaling(&ctx.cfg.bench)?;
    let rows: Vec<Vec<String>> = report
        .timings
        .iter()
        .map(|t| vec![t.n.to_string(), t.operation.clone(), fmt(t.seconds)])
        .collect();
    write_records(&ctx.path("timings.csv"), &["n", "operation", "seconds"], &rows)?;
    let rows: Vec<Vec<String>> = report.slopes.iter().map(|(op, s)| vec![op.clone(), fmt(*s)]).collect();
    write_records(&ctx.path("slopes.csv"), &["operation", "slope"], &rows)?;
    ctx.resolved(None)
}
