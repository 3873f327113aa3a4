use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use fabric_motif::anomaly::{calibrate_threshold, defect_probability_map, ProbabilityMap};
use fabric_motif::evaluation::{
    confusion, fmt_metric, metrics, parse_threshold_range, save_curve_csv, sweep_curves, synth_fabric,
    Binarization, DefectKind, SynthSpec,
};
use fabric_motif::feature_bank::{build_model, load_model, save_model};
use fabric_motif::harness::{self, CaseInput, PipelineConfig};
use fabric_motif::imaging::{load_gray, preprocess, save_gray};
use fabric_motif::periodicity::{derive_filter_size, trace_period, AxisTrace, PeriodOptions};
use fabric_motif::segmentation::{segment, BinaryMask, SegmentParams};
use fabric_motif::Error;

#[derive(Parser)]
#[command(name = "fabric-motif", version, about = "Unsupervised defect detection for patterned fabrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the repeat period and the derived filter size.
    Period(PeriodArgs),
    /// Learn a filter bank from one defect-free image and calibrate it.
    Train(TrainArgs),
    /// Write the defect probability map of a test image.
    Detect(DetectArgs),
    /// Binarize a probability map.
    Segment(SegmentArgs),
    /// Compare a predicted mask with a ground-truth mask.
    Evaluate(EvaluateArgs),
    /// Pooled ROC / precision-recall table over anomaly thresholds.
    Sweep(SweepArgs),
    /// Generate a synthetic fabric and its truth mask.
    Synth(SynthArgs),
    /// Train, calibrate, detect, segment and evaluate a whole dataset.
    Pipeline(PipelineArgs),
}

/// Flags shared by `train` and `pipeline`; unset flags fall back to the
/// config file, then to defaults.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cosine similarity needed to join an existing filter.
    #[arg(long, value_name = "THETA")]
    threshold: Option<String>,
    #[arg(long)]
    layers: Option<String>,
    /// Patch origin spacing.
    #[arg(long)]
    stride: Option<String>,
    /// Downsampling between layers.
    #[arg(long)]
    layer_stride: Option<String>,
    /// `auto` or an odd integer.
    #[arg(long)]
    filter_size: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Patches with variance at or below this are dropped.
    #[arg(long)]
    contrast_threshold: Option<String>,
    /// `max` or `mean`.
    #[arg(long)]
    aggregation: Option<String>,
    #[arg(long)]
    min_prominence: Option<String>,
    /// Skip histogram equalization.
    #[arg(long)]
    no_equalize: bool,
}

impl ConfigArgs {
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<PipelineConfig, Error> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("similarity_threshold", &self.threshold),
            ("layers", &self.layers),
            ("stride", &self.stride),
            ("layer_stride", &self.layer_stride),
            ("filter_size", &self.filter_size),
            ("seed", &self.seed),
            ("contrast_threshold", &self.contrast_threshold),
            ("aggregation", &self.aggregation),
            ("min_prominence", &self.min_prominence),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for (key, value) in extra {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.no_equalize {
            cfg.train.equalize = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SegmentFlags {
    #[arg(long, default_value_t = fabric_motif::segmentation::DEFAULT_LEVELS)]
    levels: usize,
    /// Neighbourhood size for the local mean.
    #[arg(long = "n", default_value_t = fabric_motif::segmentation::DEFAULT_NEIGHBORHOOD)]
    neighborhood: usize,
    /// Structuring element size for the opening.
    #[arg(long, default_value_t = fabric_motif::segmentation::DEFAULT_SE)]
    se: usize,
}

impl SegmentFlags {
    fn params(&self) -> SegmentParams {
        SegmentParams {
            levels: self.levels,
            neighborhood: self.neighborhood,
            se: self.se,
        }
    }
}

#[derive(Args)]
struct PeriodArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = fabric_motif::periodicity::DEFAULT_MIN_PROMINENCE)]
    min_prominence: f64,
    #[arg(long, default_value_t = fabric_motif::periodicity::DEFAULT_DOMINANCE)]
    dominance: f64,
    #[arg(long)]
    no_equalize: bool,
    /// Write `rows.csv` and `cols.csv` (projection, autocorrelation, peaks).
    #[arg(long, value_name = "DIR")]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    fabric_id: Option<String>,
    /// Leave the anomaly threshold unset instead of calibrating on the input.
    #[arg(long)]
    no_calibrate: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// 16-bit PNG output.
    #[arg(long)]
    map: PathBuf,
    /// Also segment the map into this mask.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    anomaly_threshold: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[command(flatten)]
    segment: SegmentFlags,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    segment: SegmentFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    /// A fabric directory (or a root holding exactly one fabric).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "0:1:0.1")]
    thresholds: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sigma: Option<f64>,
    /// Binarize with full segmentation instead of `map > 0`.
    #[arg(long)]
    entropy: bool,
    #[command(flatten)]
    segment: SegmentFlags,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    period: usize,
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// none, bar, thin-bar, thick-bar, hole, block, broken-end
    #[arg(long, default_value = "none")]
    defect: String,
    /// Gaussian noise standard deviation in gray levels.
    #[arg(long, default_value_t = 2.0)]
    noise: f64,
    /// Selects the fabric pattern.
    #[arg(long, default_value_t = 1)]
    tile_seed: u64,
    /// Selects phase, defect placement and noise.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    anomaly_threshold: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    levels: Option<String>,
    #[arg(long = "n")]
    neighborhood: Option<String>,
    #[arg(long)]
    se: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn run_period(a: PeriodArgs) -> Result<(), Error> {
    let img = preprocess(&load_gray(&a.input)?, !a.no_equalize)?;
    let options = PeriodOptions {
        min_prominence: a.min_prominence,
        dominance: a.dominance,
    };
    let (estimate, rows, cols) = trace_period(&img, &options)?;
    if let Some(dir) = &a.plot {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), reason: e.to_string() })?;
        write_trace(&rows, &dir.join("rows.csv"))?;
        write_trace(&cols, &dir.join("cols.csv"))?;
    }
    println!("row_period: {}", estimate.row_period);
    println!("col_period: {}", estimate.col_period);
    println!("filter_size: {}", derive_filter_size(&estimate));
    Ok(())
}

fn write_trace(trace: &AxisTrace, path: &Path) -> Result<(), Error> {
    let mut text = String::from("index,projection,autocorrelation,peak\n");
    for (i, (p, a)) in trace.projection.iter().zip(&trace.autocorrelation).enumerate() {
        let peak = u8::from(trace.peaks.binary_search(&i).is_ok());
        text.push_str(&format!("{i},{p},{a},{peak}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), reason: e.to_string() })
}

fn run_train(a: TrainArgs) -> Result<(), Error> {
    let mut cfg = a.config.resolve(&[])?;
    cfg.train.fabric_id = a.fabric_id.clone().unwrap_or_else(|| {
        a.input
            .file_stem()
            .map_or("fabric".into(), |s| s.to_string_lossy().into_owned())
    });
    let raw = load_gray(&a.input)?;
    let start = Instant::now();
    let (mut model, report) = build_model(&raw, &cfg.train)?;
    let elapsed = start.elapsed();
    if let Some(e) = &report.period {
        println!("period: {} x {}", e.row_period, e.col_period);
    }
    println!("filter_size: {}", report.filter_size);
    for (i, layer) in report.layers.iter().enumerate() {
        println!(
            "layer {}: {} patches, {} kept, {} visited, {} features, window {}",
            i + 1,
            layer.candidate_patches,
            layer.kept_patches,
            layer.visits,
            layer.features,
            layer.effective_window
        );
    }
    println!("features: {}", model.feature_count());
    println!("parameters: {}", model.parameter_count());
    println!("training_seconds: {:.3}", elapsed.as_secs_f64());
    if !a.no_calibrate {
        let pre = model.preprocess(&raw)?;
        println!("anomaly_threshold: {}", calibrate_threshold(&mut model, &pre)?);
    }
    save_model(&model, &a.out)
}

fn run_detect(a: DetectArgs) -> Result<(), Error> {
    let model = load_model(&a.model)?;
    let pre = model.preprocess(&load_gray(&a.input)?)?;
    let map = defect_probability_map(&model, &pre, a.anomaly_threshold, a.sigma)?;
    map.save_png16(&a.map)?;
    println!("map_max: {}", map.max());
    if let Some(path) = &a.mask {
        let mask = segment(&map, &a.segment.params())?;
        mask.save(path)?;
        println!("defective_pixels: {}", mask.count());
    }
    Ok(())
}

fn run_segment(a: SegmentArgs) -> Result<(), Error> {
    let map = ProbabilityMap::load_png(&a.map)?;
    let mask = segment(&map, &a.segment.params())?;
    mask.save(&a.out)?;
    println!("defective_pixels: {}", mask.count());
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<(), Error> {
    let counts = confusion(&BinaryMask::load(&a.pred)?, &BinaryMask::load(&a.truth)?)?;
    let m = metrics(&counts);
    let cells = [m.tpr, m.tnr, m.fnr, m.fpr, m.ppv, m.acc, m.f1].map(fmt_metric);
    let line = format!(
        "{},{},{},{},{}",
        counts.tp,
        counts.tn,
        counts.fp,
        counts.fn_,
        cells.join(",")
    );
    let header = "tp,tn,fp,fn,tpr,tnr,fnr,fpr,ppv,acc,f1";
    println!("{header}\n{line}");
    if let Some(path) = &a.out {
        std::fs::write(path, format!("{header}\n{line}\n"))
            .map_err(|e| Error::Io { path: path.clone(), reason: e.to_string() })?;
    }
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<(), Error> {
    let model = load_model(&a.model)?;
    let thresholds = parse_threshold_range(&a.thresholds)?;
    let fabrics = harness::discover(&a.dataset)?;
    let [fabric] = fabrics.as_slice() else {
        return Err(Error::Parameter(format!(
            "{} holds {} fabrics; point --dataset at one of them",
            a.dataset.display(),
            fabrics.len()
        )));
    };
    let items = fabric
        .cases
        .iter()
        .map(|c| c.load())
        .collect::<Result<Vec<_>, _>>()?;
    let binarization = if a.entropy {
        Binarization::Entropy(a.segment.params())
    } else {
        Binarization::Fixed(0.0)
    };
    let rows = sweep_curves(&model, &items, &thresholds, a.sigma, binarization)?;
    save_curve_csv(&rows, &a.out)?;
    println!("rows: {}", rows.len());
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<(), Error> {
    let spec = SynthSpec {
        noise_sigma: a.noise,
        tile_seed: a.tile_seed,
        sample_seed: a.seed,
        ..SynthSpec::new(a.period, a.size, a.defect.parse::<DefectKind>()?)
    };
    let (img, truth) = synth_fabric(&spec)?;
    save_gray(&img, &a.out)?;
    if let Some(path) = &a.truth {
        truth.save(path)?;
    }
    Ok(())
}

fn run_pipeline(a: PipelineArgs) -> Result<(), Error> {
    let cfg = a.config.resolve(&[
        ("anomaly_threshold", a.anomaly_threshold.clone()),
        ("sigma", a.sigma.clone()),
        ("levels", a.levels.clone()),
        ("neighborhood", a.neighborhood.clone()),
        ("se", a.se.clone()),
    ])?;
    let fabrics = harness::discover(&a.dataset)?;
    for fabric in &fabrics {
        let mut fabric_cfg = cfg.clone();
        fabric_cfg.train.fabric_id = fabric.name.clone();
        let reference = load_gray(&fabric.reference)?;
        let cases: Vec<CaseInput> = fabric.cases.iter().cloned().map(CaseInput::File).collect();
        let start = Instant::now();
        let outcome = harness::run_pipeline(&reference, &cases, &fabric_cfg)?;
        let dir = if fabrics.len() == 1 { a.out.clone() } else { a.out.join(&fabric.name) };
        harness::write_artifacts(&outcome, &fabric_cfg, &dir)?;
        for img in &outcome.images {
            if let Err(reason) = &img.result {
                eprintln!("{}: {}: skipped: {reason}", fabric.name, img.id);
            }
        }
        println!(
            "{}: filter {} features {} anomaly_threshold {} ({} images, {:.1}s)",
            fabric.name,
            outcome.report.filter_size,
            outcome.model.feature_count(),
            outcome.anomaly_threshold,
            outcome.images.len(),
            start.elapsed().as_secs_f64()
        );
        print!("{}", harness::format_summary(&outcome.summary));
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = std::panic::catch_unwind(|| match cli.command {
        Command::Period(a) => run_period(a),
        Command::Train(a) => run_train(a),
        Command::Detect(a) => run_detect(a),
        Command::Segment(a) => run_segment(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Synth(a) => run_synth(a),
        Command::Pipeline(a) => run_pipeline(a),
    });
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}
