//! Command-line front end: `gen-data`, `train`, `predict`, `eval`, `plot-pr`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma};
use ndarray::Array2;

use crate::checkpoint::Checkpoint;
use crate::config::{documented_keys, Config};
use crate::data::{self, DatasetManifest, SyntheticSceneSpec};
use crate::error::Error;
use crate::metrics::{self, EvalOptions, FPolicy, PrCurve};
use crate::network::Sfcn;
use crate::training::{self, AblationPreset, Trainer};

pub const THREADS_ENV: &str = "REFLECT_SOD_THREADS";

#[derive(Parser, Debug)]
#[command(name = "reflect-sod", version, about = "Salient object detection with reciprocal image input")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset of image/mask PNG pairs.
    GenData(GenDataArgs),
    /// Train a network on `<data>/<train_split>`.
    Train(TrainArgs),
    /// Write one 8-bit saliency PNG per input image.
    Predict(PredictArgs),
    /// Compare prediction PNGs with ground-truth masks.
    Eval(EvalArgs),
    /// Turn a pr_curve.csv into gnuplot data and an SVG plot.
    PlotPr(PlotArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Output dataset root.
    #[arg(long)]
    out: PathBuf,
    /// Number of training scenes.
    #[arg(long)]
    n: usize,
    /// Number of held-out scenes written to the `val` split.
    #[arg(long, default_value_t = 0)]
    val: usize,
    /// Square canvas side in pixels (overrides the spec file).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file with generator settings: size, objects, shapes, contrast,
    /// noise, coverage, seed.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset root containing `<split>/images` and `<split>/masks`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for logs and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set train.base_lr=0.005` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Ablation preset: table3-a .. table3-e or full.
    #[arg(long)]
    preset: Option<String>,
    /// Seed for initialization, sampling and augmentation.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of input PNG images.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of prediction PNGs.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth mask PNGs.
    #[arg(long)]
    gt: PathBuf,
    /// Directory receiving report.csv and pr_curve.csv.
    #[arg(long)]
    out: PathBuf,
    /// Headline F-measure: `max` over the threshold sweep or `adaptive`.
    #[arg(long, default_value = "max")]
    f_policy: String,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// A pr_curve.csv written by `eval`.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for pr_curve.dat and pr_curve.svg.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other),
        }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn command() -> clap::Command {
    let keys = format!("Configuration keys (defaults):\n{}", documented_keys());
    Cli::command().mut_subcommand("train", |c| c.after_long_help(keys))
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match command().try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    init_threads();
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::PlotPr(a) => plot_pr(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require_dir(path: &Path, what: &str) -> CliResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{what} `{}` is not a directory", path.display())))
    }
}

fn gen_data(a: GenDataArgs) -> CliResult {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let mut spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSceneSpec::default(),
    };
    if let Some(s) = a.size {
        spec.size = [s, s];
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let mut splits = vec![("train", a.n)];
    if a.val > 0 {
        splits.push(("val", a.val));
    }
    let manifest = data::generate_splits(&spec, &splits, &a.out)?;
    println!("dataset {} (seed {})", a.out.display(), spec.seed);
    for (name, split) in &manifest.splits {
        println!("  {name}: {} pairs at {}x{}", split.stems.len(), split.size[0], split.size[1]);
    }
    Ok(())
}

fn train(a: TrainArgs) -> CliResult {
    require_dir(&a.data, "data root")?;
    let mut config = match (&a.config, &a.resume) {
        (Some(path), _) => Config::load(path)?,
        (None, Some(ckpt)) => Checkpoint::load(ckpt)?.config()?,
        (None, None) => Config::default(),
    };
    if let Some(p) = &a.preset {
        config.train.preset = AblationPreset::parse(p)?;
    }
    if let Some(seed) = a.seed {
        config.train.seed = seed;
    }
    for o in &a.overrides {
        config.apply_override(o)?;
    }
    config.validate()?;
    let manifest = DatasetManifest::load(&a.data)?;
    let (model_cfg, _) = training::effective_settings(&config);
    let samples = data::load_split(&manifest, &config.data.train_split, model_cfg.input_size)?;
    let validation = match manifest.splits.contains_key(&config.data.val_split) {
        true => data::load_split(&manifest, &config.data.val_split, model_cfg.input_size)?,
        false => Vec::new(),
    };
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path)?;
            ckpt.config_toml = config.to_toml_string();
            Trainer::from_checkpoint(&ckpt, samples)?
        }
        None => Trainer::new(config.clone(), samples)?,
    }
    .with_validation(validation)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let config_path = a.out.join("config.toml");
    fs::write(&config_path, config.to_toml_string()).map_err(|e| Error::io(&config_path, e))?;
    trainer.run(Some(&a.out))?;
    let last = trainer.log().last();
    println!(
        "trained to step {} (loss {}), checkpoint {}",
        trainer.step_count(),
        last.map_or("n/a".into(), |r| format!("{:.6}", r.total)),
        a.out.join(training::FINAL_CHECKPOINT).display()
    );
    Ok(())
}

fn predict(a: PredictArgs) -> CliResult {
    require_dir(&a.images, "image directory")?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let config = ckpt.config()?;
    let (model_cfg, _) = training::effective_settings(&config);
    let params = ckpt.params_for(&model_cfg)?;
    let mut model = Sfcn::from_parts(model_cfg.clone(), params);
    let stems = data::png_stems(&a.images)?;
    if stems.is_empty() {
        return Err(usage(format!("no PNG files in `{}`", a.images.display())));
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for stem in &stems {
        let path = a.images.join(format!("{stem}.png"));
        let (h, w) = image::image_dimensions(&path).map_err(|e| Error::Image { path: path.clone(), source: e })?;
        let img = data::read_rgb(&path, model_cfg.input_size)?;
        let prob = training::predict_maps(&mut model, &ckpt.mean, config.data.k, [&img])?.remove(0);
        let prob = resize_map(&prob, w as usize, h as usize);
        data::write_gray(&a.out.join(format!("{stem}.png")), &prob)?;
    }
    println!("wrote {} saliency maps to {}", stems.len(), a.out.display());
    Ok(())
}

/// Bilinear resize of a probability map to `h × w` (identity at equal size).
fn resize_map(map: &Array2<f64>, w: usize, h: usize) -> Array2<f64> {
    let (mh, mw) = map.dim();
    if (mh, mw) == (h, w) {
        return map.clone();
    }
    let img = ImageBuffer::<Luma<f32>, Vec<f32>>::from_fn(mw as u32, mh as u32, |x, y| Luma([map[[y as usize, x as usize]] as f32]));
    let out = imageops::resize(&img, w as u32, h as u32, FilterType::Triangle);
    Array2::from_shape_fn((h, w), |(y, x)| f64::from(out.get_pixel(x as u32, y as u32).0[0]))
}

fn eval(a: EvalArgs) -> CliResult {
    require_dir(&a.pred, "prediction directory")?;
    require_dir(&a.gt, "ground-truth directory")?;
    let policy: FPolicy = a.f_policy.parse()?;
    let options = EvalOptions {
        policy,
        ..EvalOptions::default()
    };
    let report = metrics::evaluate_dataset(&a.pred, &a.gt, options)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    metrics::write_report_csv(&report, &a.out.join("report.csv"))?;
    metrics::write_pr_csv(&report.pr, &a.out.join("pr_curve.csv"))?;
    if !report.skipped.is_empty() {
        eprintln!("warning: {} unmatched file(s) skipped: {}", report.skipped.len(), report.skipped.join(", "));
    }
    println!(
        "{} images: F({:?}) {:.4}  max-F {:.4}  adaptive-F {:.4}  MAE {:.4}  S {:.4}",
        report.per_image.len(),
        policy,
        report.f_measure,
        report.fmax,
        report.fadaptive,
        report.mae,
        report.s_measure
    );
    Ok(())
}

fn plot_pr(a: PlotArgs) -> CliResult {
    if !a.input.is_file() {
        return Err(usage(format!("`{}` is not a file", a.input.display())));
    }
    let curve = metrics::read_pr_csv(&a.input)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let dat = a.out.join("pr_curve.dat");
    fs::write(&dat, gnuplot_data(&curve)).map_err(|e| Error::io(&dat, e))?;
    let svg = a.out.join("pr_curve.svg");
    fs::write(&svg, svg_plot(&curve)).map_err(|e| Error::io(&svg, e))?;
    println!("{} points -> {}, {}", curve.thresholds.len(), dat.display(), svg.display());
    Ok(())
}

/// Whitespace-separated `recall precision threshold` rows.
pub fn gnuplot_data(curve: &PrCurve) -> String {
    let mut out = String::from("# recall precision threshold\n# xrange [0:1] yrange [0:1]\n");
    for k in 0..curve.thresholds.len() {
        let _ = writeln!(out, "{} {} {}", curve.recall[k], curve.precision[k], curve.thresholds[k]);
    }
    out
}

/// Precision (y) against recall (x) on fixed `[0, 1] × [0, 1]` axes.
pub fn svg_plot(curve: &PrCurve) -> String {
    const SIZE: f64 = 400.0;
    const MARGIN: f64 = 50.0;
    let px = |r: f64| MARGIN + r.clamp(0.0, 1.0) * SIZE;
    let py = |p: f64| MARGIN + (1.0 - p.clamp(0.0, 1.0)) * SIZE;
    let total = SIZE + 2.0 * MARGIN;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total}\" height=\"{total}\" viewBox=\"0 0 {total} {total}\">\n\
         <rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\" stroke=\"black\"/>\n"
    );
    for i in 0..=10 {
        let v = i as f64 / 10.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{v:.1}</text>\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{v:.1}</text>",
            px(v),
            MARGIN + SIZE + 15.0,
            MARGIN - 5.0,
            py(v) + 3.0
        );
    }
    let points: Vec<String> = (0..curve.thresholds.len())
        .map(|k| format!("{:.2},{:.2}", px(curve.recall[k]), py(curve.precision[k])))
        .collect();
    let _ = writeln!(
        s,
        "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"{}\"/>",
        points.join(" ")
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">Recall</text>\
         <text x=\"15\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {:.1})\">Precision</text>\n</svg>",
        MARGIN + SIZE / 2.0,
        total - 10.0,
        MARGIN + SIZE / 2.0,
        MARGIN + SIZE / 2.0
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perfect_curve() -> PrCurve {
        PrCurve {
            thresholds: (0..256).map(metrics::threshold).collect(),
            precision: vec![1.0; 256],
            recall: vec![1.0; 256],
        }
    }

    #[test]
    fn gnuplot_data_has_one_row_per_threshold() {
        let text = gnuplot_data(&perfect_curve());
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 256);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = svg_plot(&perfect_curve());
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polyline"));
    }

    #[test]
    fn help_and_usage_exit_codes() {
        assert_eq!(run(["reflect-sod", "--help"]), 0);
        assert_eq!(run(["reflect-sod", "train", "--help"]), 0);
        assert_eq!(run(["reflect-sod", "bogus"]), 2);
        assert_eq!(run(["reflect-sod", "gen-data", "--out", "/nonexistent/x", "--n", "0"]), 2);
    }

    #[test]
    fn train_help_lists_config_keys() {
        let help = command().find_subcommand_mut("train").unwrap().render_long_help().to_string();
        for key in ["train.base_lr", "loss.gamma", "model.fusion", "data.mean"] {
            assert!(help.contains(key), "{key}");
        }
    }
}
