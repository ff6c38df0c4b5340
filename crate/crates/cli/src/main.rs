//! `g2dyn`: batch front end. Each subcommand reads its inputs, writes one
//! output (a file, or stdout when no path is given) and exits nonzero on any
//! error.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use g2dyn::coherence::{analytic_set, coalescence};
use g2dyn::correlator::{count_stream, cut, cut_coalescence, time_average, CutKind};
use g2dyn::fitting::{
    fit_g2_surface, fit_lifetime, FitTemplate, FreeParameter, LifetimeData, LifetimeGuess, ReservoirField,
    SimplexOptions, SurfaceFitOptions,
};
use g2dyn::io::{self, Metadata, PhotonFile, SurfaceFile, TagFile, TOOL_VERSION};
use g2dyn::model::AnalyticGrid;
use g2dyn::optics::{detect_photons, DetectorSpec, TagStream, DEFAULT_DELAY_PERIODS};
use g2dyn::stats::fwhm_to_sigma;
use g2dyn::stochastic::{photon_histogram, simulate};
use g2dyn::{Configuration, EmitterScenario, TimeAxis};

use config::{load_scenario, PipelineConfig};

const DEFAULT_BIN_NS: f64 = 0.2;
const DEFAULT_CYCLES: u64 = 100_000;
const BINARY_TAG_MAGIC: &[u8] = b"G2TG";
/// Surface-file keys that describe one g2 surface rather than its provenance.
const SURFACE_KEYS: &[&str] = &[
    "bin_width_ns",
    "period_ns",
    "window_start_ns",
    "n_bins",
    "quantity",
    "configuration",
    "origin",
    "n_events",
    "marginal1",
    "marginal2",
    "n_cycles",
    "delay_periods",
];

#[derive(Parser)]
#[command(name = "g2dyn", version, about = "Two-time photon correlations of a pulsed single emitter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate excitation cycles and write the emitted photons.
    Simulate(SimulateArgs),
    /// Send a photon file through the interferometer and detectors.
    Detect(DetectArgs),
    /// Build a two-time g2 surface from a tag file.
    Correlate(CorrelateArgs),
    /// Combine HBT and HOM surfaces into a coalescence surface.
    Coalesce(CoalesceArgs),
    /// Write the model g2_HBT, g2_HOM, |g1|^2 and coalescence surfaces.
    Analytic(AnalyticArgs),
    /// Fit a rise/decay curve to a photon or tag histogram.
    FitLifetime(FitLifetimeArgs),
    /// Fit reservoir parameters to a measured g2 surface.
    FitG2(FitG2Args),
    /// Export a surface cut or the full grid as plot-ready CSV.
    Export(ExportArgs),
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; stdout when omitted and the config names none.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Preset name (755nm, 893nm, 904nm) or scenario TOML file.
    #[arg(long)]
    scenario: Option<String>,
    /// Master seed of the emission streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of excitation cycles.
    #[arg(long)]
    cycles: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Interferometer {
    Hbt,
    Hom,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TagFormat {
    Text,
    Binary,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    common: Common,
    /// Photon file written by `simulate`.
    photons: PathBuf,
    /// Detection seed; defaults to the config value, then the photon file's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured interferometer.
    #[arg(long, value_enum)]
    interferometer: Option<Interferometer>,
    /// Jitter FWHM of both detectors, ns.
    #[arg(long)]
    jitter_ns: Option<f64>,
    /// Make interfering photons fully distinguishable (HOM only).
    #[arg(long)]
    distinguishable: bool,
    /// Start of the detection window relative to the pulse, ns, in (-period, 0].
    #[arg(long, allow_hyphen_values = true)]
    window_start_ns: Option<f64>,
    /// Output encoding; binary keeps only the period and window start in its header.
    #[arg(long, value_enum, default_value = "text")]
    format: TagFormat,
}

#[derive(Args)]
struct CorrelateArgs {
    #[command(flatten)]
    common: Common,
    /// Tag file, text or binary.
    tags: PathBuf,
    /// Bin width, ns.
    #[arg(long)]
    bin_ns: Option<f64>,
    /// Configuration of a binary tag file (text files carry their own).
    #[arg(long, value_enum, default_value = "hbt")]
    interferometer: Interferometer,
    /// Cycle count of a binary tag file; defaults to one past the last tag.
    #[arg(long)]
    cycles: Option<u64>,
}

#[derive(Args)]
struct CoalesceArgs {
    #[command(flatten)]
    common: Common,
    /// HBT surface.
    hbt: PathBuf,
    /// HOM surface on the same grid.
    hom: PathBuf,
}

#[derive(Args)]
struct AnalyticArgs {
    /// Pipeline configuration (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; receives g2_hbt.txt, g2_hom.txt, g1_squared.txt, coalescence.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Preset name (755nm, 893nm, 904nm) or scenario TOML file.
    #[arg(long)]
    scenario: Option<String>,
    /// Bin width, ns.
    #[arg(long)]
    bin_ns: Option<f64>,
    /// Quadrature nodes per bin and axis.
    #[arg(long, default_value_t = 2)]
    subsamples: usize,
    /// Jitter FWHM of both detectors, ns; overrides the config.
    #[arg(long)]
    jitter_ns: Option<f64>,
    /// Skip the detector convolution.
    #[arg(long, conflicts_with = "jitter_ns")]
    unconvolved: bool,
    /// Start of the detection window relative to the pulse, ns; overrides the config.
    #[arg(long, allow_hyphen_values = true)]
    window_start_ns: Option<f64>,
}

#[derive(Args)]
struct FitLifetimeArgs {
    #[command(flatten)]
    common: Common,
    /// Photon file (emission times) or text tag file (detection delays).
    data: PathBuf,
    /// Histogram bin width, ns.
    #[arg(long, default_value_t = 0.1)]
    bin_ns: f64,
    /// Starting rise rate, 1/ns.
    #[arg(long, default_value_t = 10.0)]
    rise: f64,
    /// Starting decay rate, 1/ns.
    #[arg(long, default_value_t = 1.5)]
    decay: f64,
    /// Instrument-response FWHM, ns; defaults to 0 for photon files and the
    /// reference detector jitter for tag files.
    #[arg(long)]
    irf_ns: Option<f64>,
}

#[derive(Args)]
struct FitG2Args {
    #[command(flatten)]
    common: Common,
    /// Measured g2 surface.
    surface: PathBuf,
    /// Template scenario; its free fields are the starting point.
    #[arg(long)]
    scenario: Option<String>,
    /// Free parameter as FIELD:RESERVOIR, FIELD one of mean_carriers,
    /// loss_rate and RESERVOIR a label or index. Repeatable.
    #[arg(long = "free")]
    free: Vec<String>,
    /// Jitter FWHM of the detectors, ns; defaults to the config's first detector.
    #[arg(long)]
    jitter_ns: Option<f64>,
    /// Quadrature nodes per bin and axis.
    #[arg(long, default_value_t = 2)]
    subsamples: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportFormat {
    /// One row per cut sample.
    Csv,
    /// Full grid, rows t1, columns t2.
    Matrix,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    /// g2 or coalescence surface file.
    surface: PathBuf,
    /// KIND[:OFFSET_NS]; KIND is diagonal (t2 - t1 = offset) or antidiagonal (t1 + t2 = offset).
    #[arg(long, default_value = "diagonal:0")]
    cut: String,
    /// Cut samples or the full grid.
    #[arg(long, value_enum, default_value = "csv")]
    format: ExportFormat,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Correlate(a) => cmd_correlate(a),
        Command::Coalesce(a) => cmd_coalesce(a),
        Command::Analytic(a) => cmd_analytic(a),
        Command::FitLifetime(a) => cmd_fit_lifetime(a),
        Command::FitG2(a) => cmd_fit_g2(a),
        Command::Export(a) => cmd_export(a),
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
        }
        None => std::io::stdout().write_all(bytes).context("writing stdout"),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn scenario_from(flag: Option<String>, cfg: &PipelineConfig) -> Result<EmitterScenario> {
    match flag.or_else(|| cfg.scenario.clone()) {
        Some(s) => load_scenario(&s),
        None => bail!("no scenario given (use --scenario or the config's `scenario`)"),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = PipelineConfig::load(a.common.config.as_deref())?;
    let scenario = scenario_from(a.scenario, &cfg)?;
    let seed = a.seed.or(cfg.master_seed).unwrap_or(0);
    let cycles = a.cycles.or(cfg.n_cycles).unwrap_or(DEFAULT_CYCLES);
    let run = simulate(&scenario, cycles, seed)?;
    let file = PhotonFile::from_run(&run, &scenario.hash());
    let out = a.common.out.or(cfg.outputs.photons);
    write_output(out.as_deref(), io::write_photons(&file).as_bytes())
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let cfg = PipelineConfig::load(a.common.config.as_deref())?;
    let photons = io::read_photons(&read_text(&a.photons)?).with_context(|| a.photons.display().to_string())?;
    let mut setup = cfg.optics;
    match a.interferometer {
        Some(Interferometer::Hbt) => setup.interferometer.configuration = Configuration::Hbt,
        Some(Interferometer::Hom) => setup.interferometer.configuration = Configuration::Hom,
        None => {}
    }
    if let Some(j) = a.jitter_ns {
        for d in &mut setup.detectors {
            d.jitter_fwhm = j;
        }
    }
    setup.interferometer.distinguishable |= a.distinguishable;
    if let Some(start) = a.window_start_ns {
        setup.window_start = start;
    }
    setup.validate()?;
    let master: Option<u64> = photons.metadata.get("master_seed").and_then(|s| s.parse().ok());
    let seed = a.seed.or(cfg.detect_seed).or(master).unwrap_or(0);
    let stream = detect_photons(&photons.photons, &photons.info, &setup, seed)?;
    let out = a.common.out.or(cfg.outputs.tags);
    match a.format {
        TagFormat::Binary => write_output(out.as_deref(), &io::write_tags_binary(&stream)?),
        TagFormat::Text => {
            let mut metadata = photons.metadata.clone();
            metadata.set("detect_seed", seed);
            metadata.set("jitter_fwhm_ns", format!("{},{}", setup.detectors[0].jitter_fwhm, setup.detectors[1].jitter_fwhm));
            metadata.set("efficiency", format!("{},{}", setup.detectors[0].efficiency, setup.detectors[1].efficiency));
            metadata.set("dead_time_ns", format!("{},{}", setup.detectors[0].dead_time, setup.detectors[1].dead_time));
            metadata.set("splitter_transmission", setup.interferometer.splitter_transmission);
            metadata.set("distinguishable", setup.interferometer.distinguishable);
            metadata.set("tool_version", TOOL_VERSION);
            let text = io::write_tags(&TagFile { metadata, stream });
            write_output(out.as_deref(), text.as_bytes())
        }
    }
}

fn read_tag_input(path: &Path, interferometer: Interferometer, cycles: Option<u64>) -> Result<TagFile> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let ctx = || path.display().to_string();
    if bytes.starts_with(BINARY_TAG_MAGIC) {
        let configuration = match interferometer {
            Interferometer::Hbt => Configuration::Hbt,
            Interferometer::Hom => Configuration::Hom,
        };
        let stream = io::read_tags_binary(&bytes, configuration, DEFAULT_DELAY_PERIODS, cycles).with_context(ctx)?;
        return Ok(TagFile {
            metadata: Metadata::new(),
            stream,
        });
    }
    let text = String::from_utf8(bytes).with_context(|| format!("{} is neither UTF-8 text nor binary tags", ctx()))?;
    io::read_tags(&text).with_context(ctx)
}

fn cmd_correlate(a: CorrelateArgs) -> Result<()> {
    let cfg = PipelineConfig::load(a.common.config.as_deref())?;
    let tags = read_tag_input(&a.tags, a.interferometer, a.cycles)?;
    let bin = a.bin_ns.or(cfg.bin_width_ns).unwrap_or(DEFAULT_BIN_NS);
    let surface = count_stream(&tags.stream, bin)?.to_surface()?;
    let avg = time_average(&surface)?;
    eprintln!(
        "time-averaged g2 = {:.4} (95% CI {:.4}..{:.4})",
        avg.value, avg.ci_low, avg.ci_high
    );
    let mut extra = tags.metadata.clone();
    extra.set("tool_version", TOOL_VERSION);
    let out = a.common.out.or(cfg.outputs.surface);
    write_output(out.as_deref(), io::write_surface(&surface, &extra).as_bytes())
}

fn read_g2_surface(path: &Path) -> Result<(g2dyn::CorrelationSurface, Metadata)> {
    match io::read_surface(&read_text(path)?).with_context(|| path.display().to_string())? {
        SurfaceFile::Correlation(s, m) => Ok((s, m)),
        SurfaceFile::Coalescence(..) => bail!("{} holds a coalescence surface, expected g2", path.display()),
    }
}

fn cmd_coalesce(a: CoalesceArgs) -> Result<()> {
    let cfg = PipelineConfig::load(a.common.config.as_deref())?;
    let (hbt, hbt_meta) = read_g2_surface(&a.hbt)?;
    let (hom, hom_meta) = read_g2_surface(&a.hom)?;
    if hbt.configuration != Configuration::Hbt || hom.configuration != Configuration::Hom {
        bail!("expected an HBT surface followed by a HOM surface");
    }
    let c = coalescence(&hbt, &hom)?;
    // Provenance keys of the HBT input; HOM values that differ are kept
    // under a `hom.` prefix.
    let mut meta = Metadata::new();
    for (key, value) in hbt_meta.entries().filter(|(k, _)| !SURFACE_KEYS.contains(k)) {
        meta.set(key, value);
    }
    for (key, value) in hom_meta.entries().filter(|(k, _)| !SURFACE_KEYS.contains(k)) {
        if hbt_meta.get(key) != Some(value) {
            meta.set(&format!("hom.{key}"), value);
        }
    }
    meta.set("tool_version", TOOL_VERSION);
    let out = a.common.out.or(cfg.outputs.coalescence);
    write_output(out.as_deref(), io::write_coalescence(&c, &meta).as_bytes())
}

fn cmd_analytic(a: AnalyticArgs) -> Result<()> {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let scenario = scenario_from(a.scenario, &cfg)?;
    let bin = a.bin_ns.or(cfg.bin_width_ns).unwrap_or(DEFAULT_BIN_NS);
    let start = a.window_start_ns.unwrap_or(cfg.optics.window_start);
    let axis = TimeAxis::new(bin, scenario.pulse_period)?.with_start(start)?;
    let grid = AnalyticGrid::for_axis(axis, a.subsamples)?;
    let detectors = match a.jitter_ns {
        Some(j) => [DetectorSpec::with_jitter(j); 2],
        None => cfg.optics.detectors,
    };
    let set = analytic_set(&scenario, &grid, (!a.unconvolved).then_some(&detectors))?;
    let Some(dir) = a.out.or(cfg.outputs.analytic) else {
        bail!("analytic writes four files; give an output directory with --out");
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut meta = Metadata::new();
    meta.set("scenario_hash", scenario.hash());
    meta.set("source", &scenario.label);
    meta.set("master_seed", "none");
    meta.set("tool_version", TOOL_VERSION);
    meta.set("subsamples", a.subsamples);
    let jitter = if a.unconvolved {
        "none".to_string()
    } else {
        format!("{},{}", detectors[0].jitter_fwhm, detectors[1].jitter_fwhm)
    };
    meta.set("jitter_fwhm_ns", jitter);
    let files = [
        ("g2_hbt.txt", io::write_surface(&set.hbt, &meta)),
        ("g2_hom.txt", io::write_surface(&set.hom, &meta)),
        ("g1_squared.txt", io::write_surface(&set.g1_squared, &meta)),
        ("coalescence.txt", io::write_coalescence(&set.coalescence, &meta)),
    ];
    for (name, text) in files {
        write_output(Some(&dir.join(name)), text.as_bytes())?;
    }
    Ok(())
}

/// Histogram of detection delays over all channels.
fn tag_histogram(stream: &TagStream, bin: f64) -> (Vec<f64>, Vec<f64>) {
    let n = (stream.period() / bin).ceil() as usize;
    let mut counts = vec![0.0; n];
    for t in &stream.tags {
        let k = ((t.delay_ps as f64 * 1e-3 / bin) as usize).min(n - 1);
        counts[k] += 1.0;
    }
    let centers = (0..n).map(|k| (k as f64 + 0.5) * bin).collect();
    (centers, counts)
}

fn cmd_fit_lifetime(a: FitLifetimeArgs) -> Result<()> {
    let cfg = PipelineConfig::load(a.common.config.as_deref())?;
    let text = read_text(&a.data)?;
    let ctx = || a.data.display().to_string();
    let (meta, (centers, counts), default_irf) = if text.starts_with("#g2dyn-photons") {
        let file = io::read_photons(&text).with_context(ctx)?;
        let hist = photon_histogram(&file.photons, file.info.pulse_period, a.bin_ns);
        (file.metadata, hist, 0.0)
    } else {
        let file = io::read_tags(&text).with_context(ctx)?;
        let hist = tag_histogram(&file.stream, a.bin_ns);
        (file.metadata, hist, cfg.optics.detectors[0].jitter_fwhm)
    };
    let guess = LifetimeGuess {
        rise: a.rise,
        decay: a.decay,
        irf_sigma: fwhm_to_sigma(a.irf_ns.unwrap_or(default_irf)),
    };
    let fit = fit_lifetime(&LifetimeData::from_histogram(&centers, &counts, a.bin_ns), guess, &SimplexOptions::default())?;
    let mut extra = meta;
    extra.set("fit", "lifetime");
    extra.set("tool_version", TOOL_VERSION);
    let out = a.common.out.or(cfg.outputs.fit);
    write_output(out.as_deref(), io::write_fit_report(&fit, &extra).as_bytes())
}

fn parse_free(spec: &str, scenario: &EmitterScenario) -> Result<FreeParameter> {
    let Some((field, reservoir)) = spec.split_once(':') else {
        bail!("free parameter '{spec}' is not FIELD:RESERVOIR");
    };
    let field = match field {
        "mean_carriers" | "mean" => ReservoirField::MeanCarriers,
        "loss_rate" | "loss" => ReservoirField::LossRate,
        other => bail!("unknown free field '{other}' (mean_carriers or loss_rate)"),
    };
    let reservoir = match scenario.reservoirs.iter().position(|r| r.label == reservoir) {
        Some(k) => k,
        None => reservoir
            .parse::<usize>()
            .ok()
            .filter(|&k| k < scenario.reservoirs.len())
            .with_context(|| format!("no reservoir '{reservoir}' in the template"))?,
    };
    Ok(FreeParameter { reservoir, field })
}

fn cmd_fit_g2(a: FitG2Args) -> Result<()> {
    let cfg = PipelineConfig::load(a.common.config.as_deref())?;
    let (measured, meta) = read_g2_surface(&a.surface)?;
    let scenario = scenario_from(a.scenario, &cfg)?;
    let free = a
        .free
        .iter()
        .map(|s| parse_free(s, &scenario))
        .collect::<Result<Vec<_>>>()?;
    let detector = match a.jitter_ns {
        Some(j) => DetectorSpec::with_jitter(j),
        None => cfg.optics.detectors[0],
    };
    let template_hash = scenario.hash();
    let template = FitTemplate { scenario, free };
    let options = SurfaceFitOptions {
        subsamples: a.subsamples,
        ..SurfaceFitOptions::default()
    };
    let fit = fit_g2_surface(&measured, &template, detector, &options)?;
    let mut extra = meta;
    extra.set("fit", "g2_surface");
    extra.set("template_hash", template_hash);
    extra.set("tool_version", TOOL_VERSION);
    let out = a.common.out.or(cfg.outputs.fit);
    write_output(out.as_deref(), io::write_fit_report(&fit, &extra).as_bytes())
}

fn parse_cut(spec: &str) -> Result<(CutKind, f64)> {
    let (kind, offset) = spec.split_once(':').unwrap_or((spec, "0"));
    let offset: f64 = offset.parse().with_context(|| format!("bad cut offset '{offset}'"))?;
    Ok((kind.parse()?, offset))
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let cfg = PipelineConfig::load(a.common.config.as_deref())?;
    let file = io::read_surface(&read_text(&a.surface)?).with_context(|| a.surface.display().to_string())?;
    let text = match (a.format, &file) {
        (ExportFormat::Matrix, SurfaceFile::Correlation(s, _)) => {
            let centers: Vec<f64> = (0..s.n_bins()).map(|i| s.axis.bin_center(i)).collect();
            io::write_matrix_csv(&centers, &s.g2, &s.valid)
        }
        (ExportFormat::Matrix, SurfaceFile::Coalescence(c, _)) => {
            let centers: Vec<f64> = (0..c.n_bins()).map(|i| c.axis.bin_center(i)).collect();
            io::write_matrix_csv(&centers, &c.values, &c.valid)
        }
        (ExportFormat::Csv, _) => {
            let (kind, offset) = parse_cut(&a.cut)?;
            let cut = match &file {
                SurfaceFile::Correlation(s, _) => cut(s, kind, offset)?,
                SurfaceFile::Coalescence(c, _) => cut_coalescence(c, kind, offset)?,
            };
            io::write_cut_csv(&cut)
        }
    };
    let out = a.common.out.or(cfg.outputs.export);
    write_output(out.as_deref(), text.as_bytes())
}
