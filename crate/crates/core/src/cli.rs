//! The `noisevec` command line. Every subcommand is a thin wrapper over the
//! library; defaults can be overridden with `NV_*` environment variables.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::codec::format_row;
use crate::error::Error;
use crate::estimators::{cmn_apply, nat_vector, read_noise_vectors, utt_mean, NoiseVector, DEFAULT_NAT_EDGE_FRAMES};
use crate::eval::{
    compare_estimators, compare_tsv, default_plot_coefficients, label_noise_sweep, sweep_tsv, trace_convergence,
    utterance_vector, MapOptions, Method,
};
use crate::features::{
    encode_features, read_features_auto, read_labels, read_manifest, FeatureFormat, FeatureMatrix, LabeledUtterance,
    SadLabels,
};
use crate::map_model::{read_prior, train_prior, EmConfig, NoisePrior, PriorConfig, RPolicy, ScalingFactors};
use crate::sad::{label_by_energy, load_corpus, SadConfig};
use crate::synth::{default_prior, read_ground_truth, sample_corpus, SynthConfig};
use crate::transform::{apply_control_layer, read_affine, AffineMap};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "noisevec",
    version,
    about = "Utterance-level noise vectors for noise-aware acoustic models"
)]
pub struct Cli {
    /// Worker threads for manifest-level parallelism; output order is fixed.
    #[arg(long, global = true, env = "NV_JOBS", default_value_t = 1)]
    pub jobs: usize,

    /// Seed for every random draw.
    #[arg(long, global = true, env = "NV_SEED", default_value_t = 42)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute noise vectors for one utterance or a manifest.
    Extract(ExtractArgs),
    /// Train the joint Gaussian prior from a labelled corpus.
    TrainPrior(TrainPriorArgs),
    /// Emit the frame-by-frame online trajectory of one utterance.
    Stream(StreamArgs),
    /// Label frames with the energy-quantile detector.
    Sad(SadArgs),
    /// Sample a synthetic corpus from the generative model.
    Synth(SynthArgs),
    /// Compare estimators or sweep label noise on a corpus.
    Eval(EvalArgs),
    /// Apply the control-layer affine map to features and a noise vector.
    Apply(ApplyArgs),
    /// Baseline normalisations and vectors.
    Baseline(BaselineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractMode {
    Offline,
    Mle,
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StreamMode {
    Mle,
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Binary,
    Text,
}

impl From<FormatArg> for FeatureFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Binary => FeatureFormat::Binary,
            FormatArg::Text => FeatureFormat::Text,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SadFlags {
    /// Energy quantile above which a frame is speech.
    #[arg(long = "sad-quantile", env = "NV_SAD_QUANTILE", default_value_t = 0.3)]
    pub quantile: f64,
    /// Odd majority-smoothing window in frames.
    #[arg(long = "sad-window", env = "NV_SAD_WINDOW", default_value_t = 5)]
    pub window: usize,
    /// Feature coefficient used as energy.
    #[arg(long = "sad-coeff", env = "NV_SAD_COEFF", default_value_t = 0)]
    pub coeff: usize,
}

impl SadFlags {
    pub fn config(&self) -> SadConfig {
        SadConfig {
            energy_coefficient_index: self.coeff,
            speech_quantile: self.quantile,
            smoothing_window: self.window,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    /// Single feature file (NVF1 or text).
    #[arg(long, conflicts_with = "manifest")]
    pub feats: Option<PathBuf>,
    /// Label file for --feats; energy SAD is used when absent.
    #[arg(long, requires = "feats")]
    pub labels: Option<PathBuf>,
    /// Manifest TSV for batch extraction.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, env = "NV_MODE", default_value = "offline")]
    pub mode: ExtractMode,
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// fixed-one, global, em or em:<k>.
    #[arg(long = "r-policy", env = "NV_R_POLICY", default_value = "global")]
    pub r_policy: String,
    #[command(flatten)]
    pub sad: SadFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainPriorArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long = "min-class-frames", env = "NV_MIN_CLASS_FRAMES", default_value_t = crate::map_model::DEFAULT_MIN_CLASS_FRAMES)]
    pub min_class_frames: usize,
    /// Ridge scale relative to the mean variance of the utterance means.
    #[arg(long, env = "NV_RIDGE", default_value_t = crate::map_model::DEFAULT_RIDGE_SCALE)]
    pub ridge: f64,
    #[arg(long = "em-iters", env = "NV_EM_ITERS", default_value_t = 50)]
    pub em_iters: usize,
    #[arg(long = "em-tol", env = "NV_EM_TOL", default_value_t = 1e-6)]
    pub em_tol: f64,
    #[command(flatten)]
    pub sad: SadFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub feats: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, env = "NV_MODE", default_value = "mle")]
    pub mode: StreamMode,
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long = "r-policy", env = "NV_R_POLICY", default_value = "global")]
    pub r_policy: String,
    /// Re-solve the MAP system every N frames.
    #[arg(long, env = "NV_EVERY", default_value_t = 1)]
    pub every: usize,
    /// Also write the per-coefficient plot table here.
    #[arg(long = "plot-out")]
    pub plot_out: Option<PathBuf>,
    /// Comma-separated coefficient indices for the plot table.
    #[arg(long, value_delimiter = ',')]
    pub coeffs: Option<Vec<usize>>,
    #[command(flatten)]
    pub sad: SadFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SadArgs {
    #[arg(long)]
    pub feats: PathBuf,
    #[command(flatten)]
    pub sad: SadFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    /// Generating prior; a fixed default prior of --dim is used when absent.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long, env = "NV_DIM", default_value_t = 4)]
    pub dim: usize,
    #[arg(long = "num-utts", env = "NV_NUM_UTTS", default_value_t = 100)]
    pub num_utts: usize,
    #[arg(long, env = "NV_FRAMES", default_value_t = 300)]
    pub frames: usize,
    #[arg(long = "speech-fraction", env = "NV_SPEECH_FRACTION", default_value_t = 0.6)]
    pub speech_fraction: f64,
    #[arg(long = "segment-length", env = "NV_SEGMENT_LENGTH", default_value_t = 30.0)]
    pub segment_length: f64,
    #[arg(long = "r-s", env = "NV_R_S", default_value_t = 1.0)]
    pub r_s: f64,
    #[arg(long = "r-n", env = "NV_R_N", default_value_t = 1.0)]
    pub r_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Compare,
    Sweep,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "compare")]
    pub report: ReportKind,
    /// Ground-truth TSV; defaults to truth.tsv next to the manifest.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long = "r-policy", env = "NV_R_POLICY", default_value = "global")]
    pub r_policy: String,
    /// Flip probabilities for the sweep report.
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.2")]
    pub flips: Vec<f64>,
    /// Estimator for the sweep report.
    #[arg(long, value_enum, env = "NV_MODE", default_value = "mle")]
    pub mode: StreamMode,
    #[command(flatten)]
    pub sad: SadFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub feats: PathBuf,
    /// Noise-vector file as written by `extract`.
    #[arg(long)]
    pub vectors: PathBuf,
    /// Which line of --vectors to use; required when it has several.
    #[arg(long)]
    pub utt: Option<String>,
    /// Affine map file; identity-append when absent.
    #[arg(long)]
    pub affine: Option<PathBuf>,
    #[arg(long, value_enum, env = "NV_FORMAT", default_value = "binary")]
    pub format: FormatArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMethod {
    Cmn,
    UttMean,
    Nat,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub feats: PathBuf,
    #[arg(long, value_enum)]
    pub method: BaselineMethod,
    /// Edge width for the NAT vector.
    #[arg(long, env = "NV_EDGE", default_value_t = DEFAULT_NAT_EDGE_FRAMES)]
    pub edge: usize,
    /// Output feature format for cmn.
    #[arg(long, value_enum, env = "NV_FORMAT", default_value = "text")]
    pub format: FormatArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Lib(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "error: {e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    if cli.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", cli.jobs)))?;
    pool.install(|| match &cli.command {
        Command::Extract(a) => cmd_extract(a),
        Command::TrainPrior(a) => cmd_train_prior(a),
        Command::Stream(a) => cmd_stream(a),
        Command::Sad(a) => cmd_sad(a),
        Command::Synth(a) => cmd_synth(a, cli.seed),
        Command::Eval(a) => cmd_eval(a, cli.seed),
        Command::Apply(a) => cmd_apply(a),
        Command::Baseline(a) => cmd_baseline(a),
    })
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| {
            Error::Io {
                path: path.to_path_buf(),
                source: e,
            }
            .into()
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes).and_then(|_| stdout.flush()).map_err(|e| {
                Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                }
                .into()
            })
        }
    }
}

fn parse_policy(s: &str) -> CliResult<RPolicy> {
    s.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

fn load_prior(path: Option<&PathBuf>, needed: bool) -> CliResult<Option<NoisePrior>> {
    match path {
        Some(p) => Ok(Some(read_prior(p)?)),
        None if needed => Err(CliError::Usage("MAP mode requires --prior".into())),
        None => Ok(None),
    }
}

fn utterance_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "utt".to_string())
}

/// External labels take precedence; otherwise energy SAD (an empty
/// utterance gets empty labels).
pub fn labels_for(features: &FeatureMatrix, labels: Option<&Path>, sad: &SadConfig) -> crate::Result<SadLabels> {
    match labels {
        Some(p) => read_labels(p, features.num_frames()),
        None if features.is_empty() => Ok(SadLabels::default()),
        None => label_by_energy(features, sad),
    }
}

fn load_single(feats: &Path, labels: Option<&Path>, sad: &SadConfig) -> CliResult<LabeledUtterance> {
    let features = read_features_auto(feats)?;
    let labels = labels_for(&features, labels, sad)?;
    Ok(LabeledUtterance::new(utterance_id_of(feats), features, labels)?)
}

fn load_manifest_corpus(manifest: &Path, sad: &SadConfig) -> CliResult<Vec<LabeledUtterance>> {
    let m = read_manifest(manifest)?;
    Ok(load_corpus(&m, sad)?)
}

/// Vector line for one utterance under an `extract` mode.
pub fn extract_vector(
    utt: &LabeledUtterance,
    mode: ExtractMode,
    prior: Option<&NoisePrior>,
    policy: RPolicy,
) -> crate::Result<NoiseVector> {
    let options = MapOptions { policy, solve_every: 1 };
    match mode {
        ExtractMode::Offline => utterance_vector(utt.features(), utt.labels(), Method::Mle, None, &options),
        ExtractMode::Mle => {
            let mut online = crate::eval::OnlineEstimator::new(Method::Mle, utt.features().dim(), None, &options)?;
            for (frame, label) in utt.features().frames().zip(utt.labels().iter()) {
                online.push(frame, label)?;
            }
            online.estimate_exact()
        }
        ExtractMode::Map => utterance_vector(utt.features(), utt.labels(), Method::Map, prior, &options),
    }
}

fn cmd_extract(a: &ExtractArgs) -> CliResult<()> {
    let policy = parse_policy(&a.r_policy)?;
    let prior = load_prior(a.prior.as_ref(), a.mode == ExtractMode::Map)?;
    let sad = a.sad.config();
    let corpus = match (&a.feats, &a.manifest) {
        (Some(f), None) => vec![load_single(f, a.labels.as_deref(), &sad)?],
        (None, Some(m)) => load_manifest_corpus(m, &sad)?,
        _ => {
            return Err(CliError::Usage(
                "extract needs exactly one of --feats or --manifest".into(),
            ))
        }
    };
    let lines = corpus
        .par_iter()
        .map(|u| extract_vector(u, a.mode, prior.as_ref(), policy).map(|v| v.to_line(&u.id)))
        .collect::<crate::Result<Vec<_>>>()?;
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    emit(a.out.as_deref(), text.as_bytes())
}

fn cmd_train_prior(a: &TrainPriorArgs) -> CliResult<()> {
    let corpus = load_manifest_corpus(&a.manifest, &a.sad.config())?;
    let config = PriorConfig {
        min_class_frames: a.min_class_frames,
        ridge_scale: a.ridge,
        em: EmConfig {
            max_iters: a.em_iters,
            rel_tol: a.em_tol,
        },
    };
    let (joint, prior) = train_prior(&corpus, &config)?;
    log::info!(
        "trained prior on {} of {} utterances (r_s={}, r_n={})",
        joint.num_utterances,
        corpus.len(),
        prior.global_scaling().r_s,
        prior.global_scaling().r_n
    );
    emit(a.out.as_deref(), prior.to_text().as_bytes())
}

fn cmd_stream(a: &StreamArgs) -> CliResult<()> {
    let method = match a.mode {
        StreamMode::Mle => Method::Mle,
        StreamMode::Map => Method::Map,
    };
    let prior = load_prior(a.prior.as_ref(), method == Method::Map)?;
    let options = MapOptions {
        policy: parse_policy(&a.r_policy)?,
        solve_every: a.every.max(1),
    };
    let utt = load_single(&a.feats, a.labels.as_deref(), &a.sad.config())?;
    let trajectory = trace_convergence(utt.features(), utt.labels(), method, prior.as_ref(), &options)?;
    if let Some(plot) = &a.plot_out {
        let coeffs = a
            .coeffs
            .clone()
            .unwrap_or_else(|| default_plot_coefficients(2 * utt.features().dim()));
        emit(Some(plot), trajectory.plot_tsv(&coeffs)?.as_bytes())?;
    }
    emit(a.out.as_deref(), trajectory.to_tsv().as_bytes())
}

fn cmd_sad(a: &SadArgs) -> CliResult<()> {
    let features = read_features_auto(&a.feats)?;
    let labels = label_by_energy(&features, &a.sad.config())?;
    emit(a.out.as_deref(), format!("{}\n", labels.to_line()).as_bytes())
}

fn cmd_synth(a: &SynthArgs, seed: u64) -> CliResult<()> {
    let prior = match &a.prior {
        Some(p) => read_prior(p)?,
        None => default_prior(a.dim)?,
    };
    let config = SynthConfig {
        prior,
        r: ScalingFactors::new(a.r_s, a.r_n)?,
        num_utterances: a.num_utts,
        frames_per_utterance: a.frames,
        speech_fraction: a.speech_fraction,
        segment_mean_length: a.segment_length,
        seed,
    };
    let manifest = sample_corpus(&config, &a.out_dir)?;
    log::info!("wrote {} utterances to {}", manifest.len(), a.out_dir.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs, seed: u64) -> CliResult<()> {
    let options = MapOptions {
        policy: parse_policy(&a.r_policy)?,
        solve_every: 1,
    };
    let corpus = load_manifest_corpus(&a.manifest, &a.sad.config())?;
    let text = match a.report {
        ReportKind::Compare => {
            let prior = load_prior(a.prior.as_ref(), true)?.expect("required");
            let truth_path = a.truth.clone().unwrap_or_else(|| {
                a.manifest
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join(crate::synth::TRUTH_FILE)
            });
            let truth = read_ground_truth(truth_path)?;
            compare_tsv(&compare_estimators(&corpus, &truth, &prior, &options)?)
        }
        ReportKind::Sweep => {
            let method = match a.mode {
                StreamMode::Mle => Method::Mle,
                StreamMode::Map => Method::Map,
            };
            let prior = load_prior(a.prior.as_ref(), method == Method::Map)?;
            sweep_tsv(&label_noise_sweep(
                &corpus,
                &a.flips,
                method,
                prior.as_ref(),
                &options,
                seed,
            )?)
        }
    };
    emit(a.out.as_deref(), text.as_bytes())
}

fn cmd_apply(a: &ApplyArgs) -> CliResult<()> {
    let features = read_features_auto(&a.feats)?;
    let vectors = read_noise_vectors(&a.vectors)?;
    let vector = match &a.utt {
        Some(id) => vectors
            .into_iter()
            .find(|(u, _)| u == id)
            .map(|(_, v)| v)
            .ok_or_else(|| CliError::Usage(format!("no vector for utterance {id:?}")))?,
        None if vectors.len() == 1 => vectors.into_iter().next().unwrap().1,
        None => {
            return Err(CliError::Usage(format!(
                "{} vectors in {}; pick one with --utt",
                vectors.len(),
                a.vectors.display()
            )))
        }
    };
    let map = match &a.affine {
        Some(p) => read_affine(p)?,
        None => AffineMap::identity_append(features.dim()),
    };
    let out = apply_control_layer(&features, &vector, &map)?;
    emit(a.out.as_deref(), &encode_features(&out, a.format.into()))
}

fn cmd_baseline(a: &BaselineArgs) -> CliResult<()> {
    let features = read_features_auto(&a.feats)?;
    let id = utterance_id_of(&a.feats);
    let bytes = match a.method {
        BaselineMethod::Cmn => encode_features(&cmn_apply(&features)?, a.format.into()),
        BaselineMethod::UttMean => format!("{id}\t{}\n", format_row(utt_mean(&features)?)).into_bytes(),
        BaselineMethod::Nat => format!("{id}\t{}\n", format_row(nat_vector(&features, a.edge)?)).into_bytes(),
    };
    emit(a.out.as_deref(), &bytes)
}
