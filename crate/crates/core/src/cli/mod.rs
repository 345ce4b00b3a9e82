//! The `bnnood` command line: `train`, `eval`, `ood-detect`, `grid`, `gen-ood`.
//!
//! Exit codes: 0 success, 2 usage or configuration problems, 3 numerical abort.

mod config;
mod dataspec;

pub use config::{ExperimentConfig, Method};
pub use dataspec::DataSpec;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{
    gen_smooth_ood, gen_uniform_ood, split_validation, write_csv, write_idx_images, SmoothNoiseSpec,
};
use crate::dataset::{LabeledSet, Origin};
use crate::error::{Error, Result};
use crate::inference::{fit_laplace, fit_vb, train_map, Trace, TraceRow, TrainConfig};
use crate::likelihoods::{Likelihood, OodWeight};
use crate::matrix::Matrix;
use crate::metrics::{accuracy, confidences, ConfidenceMode, MetricsReport};
use crate::models::{predict, Mlp, ModelFile, Posterior};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "bnnood",
    version,
    about = "Bayesian MLP classifiers trained with outlier-aware likelihoods"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model (MAP, then optionally VB or Laplace) and write it with a trace CSV.
    Train(TrainArgs),
    /// Accuracy, ECE and Brier score on a labelled set.
    Eval(EvalArgs),
    /// FPR@95TPR, AUROC, AUPRC and MMC for in- versus out-of-distribution data.
    OodDetect(OodArgs),
    /// Confidence heatmap of a 2-D model as PGM and CSV.
    Grid(GridArgs),
    /// Generate an outlier data set.
    GenOod(GenOodArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub likelihood: Option<String>,
    /// none | uniform | smooth | idx:PATH | any data spec
    #[arg(long)]
    pub ood: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight 1 on every outlier term, also under the OE likelihood.
    #[arg(long)]
    pub untempered: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Trace CSV path (default: MODEL.trace.csv).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

/// Options shared by commands that run a model forward.
#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Seed of the MC posterior draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the posterior's stored MC sample count.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub predict: PredictArgs,
    #[arg(long)]
    pub data: String,
    /// Hold out N random rows (as a validation split) and evaluate on the rest.
    #[arg(long)]
    pub val_split: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub names: ReportNames,
}

#[derive(Debug, Args)]
pub struct OodArgs {
    #[command(flatten)]
    pub predict: PredictArgs,
    #[arg(long)]
    pub in_data: String,
    #[arg(long)]
    pub out_data: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub names: ReportNames,
}

/// Labels written into the report's first three columns.
#[derive(Debug, Args)]
pub struct ReportNames {
    #[arg(long)]
    pub dataset_name: Option<String>,
    #[arg(long)]
    pub method_name: Option<String>,
    #[arg(long)]
    pub likelihood_name: Option<String>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub predict: PredictArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub xmin: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub xmax: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub ymin: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub ymax: f64,
    #[arg(long)]
    pub res: usize,
    /// Writes PREFIX.pgm and PREFIX.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OodKind {
    Uniform,
    Smooth,
}

#[derive(Debug, Args)]
pub struct GenOodArgs {
    #[arg(long, value_enum)]
    pub kind: OodKind,
    /// Source data spec; supplies the dimension (uniform) or the images (smooth).
    #[arg(long)]
    pub from: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub low: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub high: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub blur_min: f64,
    #[arg(long, default_value_t = 2.5)]
    pub blur_max: f64,
    #[arg(long, default_value_t = 0.3)]
    pub contrast_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub contrast_max: f64,
    #[arg(long, default_value_t = 2)]
    pub radius: usize,
}

/// Runs a parsed command; human-readable output goes to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    check_threads_env()?;
    match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::OodDetect(a) => cmd_ood_detect(&a, out),
        Command::Grid(a) => cmd_grid(&a, out),
        Command::GenOod(a) => cmd_gen_ood(&a, out),
    }
}

/// `BNNOOD_THREADS` caps worker threads; execution is single-threaded, so any
/// positive value is honoured trivially.
fn check_threads_env() -> Result<()> {
    match std::env::var("BNNOOD_THREADS") {
        Ok(v) if v.trim().parse::<usize>().map_or(true, |n| n == 0) => Err(Error::config(format!(
            "BNNOOD_THREADS must be a positive integer, got '{v}'"
        ))),
        _ => Ok(()),
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn resolve_ood(
    cfg: &ExperimentConfig,
    train: &LabeledSet,
    image: bool,
) -> Result<Option<LabeledSet>> {
    let seed = cfg.seed.wrapping_add(1);
    let n = cfg.ood_n.unwrap_or(train.len());
    let set = match cfg.ood.as_str() {
        "none" => return Ok(None),
        "uniform" => {
            let (lo, hi) = if image { (0.0, 1.0) } else { (-6.0, 6.0) };
            gen_uniform_ood(
                cfg.ood_low.unwrap_or(lo),
                cfg.ood_high.unwrap_or(hi),
                train.n_features(),
                n,
                seed,
            )?
        }
        "smooth" => {
            let spec = SmoothNoiseSpec {
                seed,
                ..SmoothNoiseSpec::default()
            };
            gen_smooth_ood(&train.without_labels(), &spec)?.truncate(n)
        }
        other => {
            let spec: DataSpec = other.parse()?;
            spec.load(Origin::OutOfDistribution)?.truncate(n)
        }
    };
    if set.n_features() != train.n_features() {
        return Err(Error::config(format!(
            "OOD data has {} features, training data {}",
            set.n_features(),
            train.n_features()
        )));
    }
    Ok(Some(
        set.without_labels().with_origin(Origin::OutOfDistribution),
    ))
}

fn merge_traces(first: Trace, second: Trace) -> Trace {
    let offset = first.len();
    let mut merged = first;
    for r in second.rows() {
        merged.push(TraceRow {
            step: r.step + offset,
            ..*r
        });
    }
    merged
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(m) = &a.method {
        cfg.set("method", m)?;
    }
    if let Some(l) = &a.likelihood {
        cfg.set("likelihood", l)?;
    }
    if let Some(o) = &a.ood {
        cfg.ood = o.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.untempered {
        cfg.ood_weight = OodWeight::Fixed(1.0);
    }
    cfg.train.seed = cfg.seed;
    cfg.laplace.seed = cfg.seed;

    let data_spec: DataSpec = cfg.data.parse()?;
    let d = data_spec.load(Origin::InDistribution)?;
    let labels = d
        .hard_labels()
        .ok_or_else(|| Error::usage("training data needs hard labels"))?;
    if labels.is_empty() {
        return Err(Error::usage("training data is empty"));
    }
    let c = d.n_classes();
    let spec = cfg.likelihood_spec(c)?;
    let none_class = matches!(spec.likelihood, Likelihood::NoneClass);

    let (train, val) = if cfg.method == Method::La {
        let n_val = cfg.val_size.unwrap_or((d.len() / 10).max(1));
        split_validation(&d, n_val, cfg.seed)?
    } else {
        (d.clone(), d.truncate(0))
    };
    let ood = if spec.uses_ood() {
        resolve_ood(&cfg, &train, data_spec.is_image())?
    } else {
        None
    };

    let mut widths = vec![train.n_features()];
    widths.extend(&cfg.hidden);
    widths.push(if none_class { c + 1 } else { c });
    let init = Mlp::init(&widths, cfg.activation, cfg.seed)?;
    let (mlp, mut trace) = train_map(&init, &spec, &train, ood.as_ref(), &cfg.train)?;

    let posterior = match cfg.method {
        Method::Map => Posterior::MapPoint,
        Method::La => {
            let fit = fit_laplace(&mlp, &spec, &train, ood.as_ref(), &cfg.laplace, &val)?;
            writeln!(out, "laplace: prior precision {}", fit.prior_precision)?;
            fit.to_posterior()
        }
        Method::Vb => {
            let vb_train = TrainConfig {
                lr: cfg.vb_lr,
                ..cfg.train.clone()
            };
            let (q, vb_trace) = fit_vb(&mlp, &spec, &train, ood.as_ref(), &cfg.vb, &vb_train)?;
            trace = merge_traces(trace, vb_trace);
            Posterior::DiagGaussian(q)
        }
    };

    let file = ModelFile {
        mlp,
        posterior,
        none_class,
    };
    let mode = confidence_mode(&file);
    let probs = predict(&file.mlp, &file.posterior, train.x(), cfg.seed)?;
    let acc = accuracy(&probs, train.hard_labels().expect("checked above"), mode)?;
    file.save(&a.out)?;
    let trace_path = a.trace.clone().or(cfg.trace.clone()).unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".trace.csv");
        PathBuf::from(p)
    });
    trace.write_csv(&trace_path)?;
    writeln!(
        out,
        "trained {} with the '{}' likelihood: train accuracy {acc:.4}; wrote {} and {}",
        cfg.method.name(),
        spec.likelihood.short_name(),
        a.out.display(),
        trace_path.display()
    )?;
    Ok(())
}

fn load_model(p: &PredictArgs) -> Result<ModelFile> {
    if !p.model.exists() {
        return Err(Error::config(format!(
            "model file {} does not exist",
            p.model.display()
        )));
    }
    let mut file = ModelFile::load(&p.model)?;
    if let (Some(n), Posterior::DiagGaussian(q)) = (p.samples, &file.posterior) {
        file.posterior = Posterior::DiagGaussian(q.clone().with_samples(n)?);
    }
    Ok(file)
}

fn confidence_mode(file: &ModelFile) -> ConfidenceMode {
    if file.none_class {
        ConfidenceMode::NcAware(file.n_classes())
    } else {
        ConfidenceMode::MaxSoftmax
    }
}

fn predict_checked(file: &ModelFile, set: &LabeledSet, seed: u64) -> Result<Matrix> {
    if set.n_features() != file.mlp.n_inputs() {
        return Err(Error::config(format!(
            "data has {} features, the model expects {}",
            set.n_features(),
            file.mlp.n_inputs()
        )));
    }
    predict(&file.mlp, &file.posterior, set.x(), seed)
}

fn report_for(file: &ModelFile, names: &ReportNames, data: &str) -> MetricsReport {
    let dataset = names
        .dataset_name
        .clone()
        .unwrap_or_else(|| data.split(':').next().unwrap_or("").to_string());
    let method = names.method_name.clone().unwrap_or_else(|| {
        match file.posterior {
            Posterior::MapPoint => "map",
            Posterior::DiagGaussian(_) => "bayes",
        }
        .to_string()
    });
    let likelihood = names
        .likelihood_name
        .clone()
        .unwrap_or_else(|| if file.none_class { "nc" } else { "" }.to_string());
    MetricsReport::new(&dataset, &method, &likelihood)
}

fn emit_report(report: &MetricsReport, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let csv = report.to_csv();
    if let Some(p) = path {
        std::fs::write(p, &csv)?;
    }
    write_out(out, &csv)
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let file = load_model(&a.predict)?;
    let mut set = a.data.parse::<DataSpec>()?.load(Origin::InDistribution)?;
    if let Some(n) = a.val_split {
        set = split_validation(&set, n, a.predict.seed)?.0;
    }
    let labels = set
        .hard_labels()
        .ok_or_else(|| Error::usage("evaluation data needs hard labels"))?
        .to_vec();
    if labels.is_empty() {
        return Err(Error::usage("evaluation data is empty"));
    }
    let probs = predict_checked(&file, &set, a.predict.seed)?;
    let report = report_for(&file, &a.names, &a.data).with_calibration(
        &probs,
        &labels,
        confidence_mode(&file),
    )?;
    emit_report(&report, a.out.as_deref(), out)
}

fn cmd_ood_detect(a: &OodArgs, out: &mut dyn Write) -> Result<()> {
    let file = load_model(&a.predict)?;
    let set_in = a
        .in_data
        .parse::<DataSpec>()?
        .load(Origin::InDistribution)?;
    let set_out = a
        .out_data
        .parse::<DataSpec>()?
        .load(Origin::OutOfDistribution)?;
    if set_in.is_empty() || set_out.is_empty() {
        return Err(Error::usage("ood-detect needs non-empty in and out sets"));
    }
    let p_in = predict_checked(&file, &set_in, a.predict.seed)?;
    let p_out = predict_checked(&file, &set_out, a.predict.seed)?;
    let report = report_for(&file, &a.names, &a.in_data).with_detection(
        &p_in,
        &p_out,
        confidence_mode(&file),
    )?;
    emit_report(&report, a.out.as_deref(), out)
}

/// Cell centres of an `res × res` lattice, top row (largest y) first.
pub fn grid_points(xmin: f64, xmax: f64, ymin: f64, ymax: f64, res: usize) -> Matrix {
    let (dx, dy) = ((xmax - xmin) / res as f64, (ymax - ymin) / res as f64);
    let mut data = Vec::with_capacity(2 * res * res);
    for row in 0..res {
        let y = ymax - (row as f64 + 0.5) * dy;
        for col in 0..res {
            data.push(xmin + (col as f64 + 0.5) * dx);
            data.push(y);
        }
    }
    Matrix::new(res * res, 2, data).expect("sizes agree")
}

/// Binary greyscale PGM with pixel `round(255·v)`.
pub fn pgm_bytes(values: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(
        values
            .iter()
            .map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8),
    );
    bytes
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(suffix);
    PathBuf::from(p)
}

fn cmd_grid(a: &GridArgs, out: &mut dyn Write) -> Result<()> {
    let file = load_model(&a.predict)?;
    if file.mlp.n_inputs() != 2 {
        return Err(Error::config(format!(
            "grid needs a 2-D input model, this one takes {}",
            file.mlp.n_inputs()
        )));
    }
    if a.res == 0 || !(a.xmin < a.xmax) || !(a.ymin < a.ymax) {
        return Err(Error::usage(
            "grid needs res ≥ 1, xmin < xmax and ymin < ymax",
        ));
    }
    let pts = grid_points(a.xmin, a.xmax, a.ymin, a.ymax, a.res);
    let probs = predict(&file.mlp, &file.posterior, &pts, a.predict.seed)?;
    let conf = confidences(&probs, confidence_mode(&file));
    let mut csv = String::from("x,y,confidence\n");
    for (p, c) in pts.iter_rows().zip(&conf) {
        let _ = writeln!(csv, "{},{},{}", p[0], p[1], c);
    }
    let pgm = with_suffix(&a.out, ".pgm");
    let csv_path = with_suffix(&a.out, ".csv");
    std::fs::write(&pgm, pgm_bytes(&conf, a.res, a.res))?;
    std::fs::write(&csv_path, csv)?;
    writeln!(out, "wrote {} and {}", pgm.display(), csv_path.display())?;
    Ok(())
}

fn square_side(dim: usize) -> Option<usize> {
    let side = (dim as f64).sqrt().round() as usize;
    (side >= 4 && side * side == dim).then_some(side)
}

fn cmd_gen_ood(a: &GenOodArgs, out: &mut dyn Write) -> Result<()> {
    let source = a.from.as_deref().map(str::parse::<DataSpec>).transpose()?;
    let from_images = source.as_ref().is_some_and(DataSpec::is_image);
    let set = match a.kind {
        OodKind::Uniform => {
            let dim = match (&source, a.dim) {
                (_, Some(d)) => d,
                (Some(s), None) => s.load(Origin::InDistribution)?.n_features(),
                (None, None) => return Err(Error::usage("uniform noise needs --dim or --from")),
            };
            let n = a.n.ok_or_else(|| Error::usage("uniform noise needs --n"))?;
            let image = from_images || square_side(dim).is_some();
            let (lo, hi) = if image { (0.0, 1.0) } else { (-6.0, 6.0) };
            gen_uniform_ood(a.low.unwrap_or(lo), a.high.unwrap_or(hi), dim, n, a.seed)?
        }
        OodKind::Smooth => {
            let src = source.ok_or_else(|| Error::usage("smooth noise needs --from"))?;
            let images = src.load(Origin::InDistribution)?;
            let images = a.n.map_or(images.clone(), |n| images.truncate(n));
            let spec = SmoothNoiseSpec {
                blur_sigma_range: (a.blur_min, a.blur_max),
                contrast_range: (a.contrast_min, a.contrast_max),
                kernel_radius: a.radius,
                seed: a.seed,
            };
            gen_smooth_ood(&images, &spec)?
        }
    };
    let side = square_side(set.n_features());
    match side {
        Some(s) if from_images || a.kind == OodKind::Smooth || a.from.is_none() => {
            write_idx_images(&a.out, set.x(), s, s)?;
        }
        _ => write_csv(&set, &a.out)?,
    }
    writeln!(out, "wrote {} outliers to {}", set.len(), a.out.display())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_geometry() {
        let one = grid_points(-1.0, 3.0, 0.0, 2.0, 1);
        assert_eq!(one.row(0), &[1.0, 1.0]);
        let g = grid_points(0.0, 4.0, 0.0, 2.0, 2);
        assert_eq!(g.row(0), &[1.0, 1.5]);
        assert_eq!(g.row(1), &[3.0, 1.5]);
        assert_eq!(g.row(2), &[1.0, 0.5]);
    }

    #[test]
    fn pgm_layout() {
        assert_eq!(
            pgm_bytes(&[0.25, 1.0], 2, 1),
            b"P5\n2 1\n255\n\x40\xff".to_vec()
        );
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_eq!(exit_code(&Error::Format("x".into())), 2);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
    }
}
