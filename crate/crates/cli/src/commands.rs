use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gradleak_core::attack::{run_attack, AttackOptions, ReconstructionReport, DEFAULT_RANK_EPS};
use gradleak_core::audit::{audit_architecture, audit_with_gradients, LayerAudit, COUNTING_NOTE};
use gradleak_core::model::init_parameters;
use gradleak_core::victim::{backward, forward};
use gradleak_core::{ArchitectureSpec, GradientBundle, ParameterSet, Tensor};
use serde::Serialize;

use crate::error::CliError;
use crate::formats::{self, arch_hash, ParamsDoc};
use crate::metrics::Metrics;
use crate::pnm;

/// Environment variable overriding the relative rank threshold.
pub const RANK_EPS_VAR: &str = "GRADLEAK_RANK_EPS";

#[derive(Debug, Parser)]
#[command(name = "gradleak", version, about = "Closed-form input reconstruction from CNN gradients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one honest training step and write the gradients it leaks.
    Gradgen(GradgenArgs),
    /// Reconstruct the training input from leaked gradients.
    Attack(AttackArgs),
    /// Count constraints per conv layer and predict which layers leak.
    Audit(AuditArgs),
    /// Compare two images (MSE, PSNR).
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GradgenArgs {
    #[arg(long)]
    pub arch: PathBuf,
    /// Existing parameters; without it parameters are drawn from `--seed`.
    #[arg(long, conflicts_with = "seed")]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where generated parameters go (default: params.json next to --out).
    #[arg(long)]
    pub params_out: Option<PathBuf>,
    /// PGM/PPM image or JSON tensor.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub label: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub arch: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub grads: PathBuf,
    /// Reconstructed image: `.json` for a lossless tensor, otherwise PGM/PPM.
    #[arg(long)]
    pub out: PathBuf,
    /// Report path (default: `<out>.report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Solve from gradient constraints alone.
    #[arg(long)]
    pub no_weight_constraints: bool,
    /// Combine every usable dense node when recovering the dense input.
    #[arg(long)]
    pub average_fc: bool,
    /// Ground-truth image; adds MSE/PSNR to the report.
    #[arg(long)]
    pub original: Option<PathBuf>,
    /// Record wall-clock time in the report (makes it non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub arch: PathBuf,
    /// With --grads: also assemble each layer's system and measure its rank.
    #[arg(long, requires = "grads")]
    pub params: Option<PathBuf>,
    #[arg(long, requires = "params")]
    pub grads: Option<PathBuf>,
    #[arg(long)]
    pub no_weight_constraints: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub reconstructed: PathBuf,
    #[arg(long)]
    pub json: bool,
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn read_image(path: &Path) -> Result<Tensor, CliError> {
    if is_json(path) {
        formats::read_tensor(path)
    } else {
        pnm::read(path)
    }
}

pub fn write_image(path: &Path, t: &Tensor) -> Result<(), CliError> {
    if is_json(path) {
        formats::write_text(path, &formats::tensor_json(t)?)
    } else {
        pnm::write(path, t)
    }
}

fn read_input(path: &Path, arch: &ArchitectureSpec) -> Result<Tensor, CliError> {
    let t = read_image(path)?;
    if t.shape() != arch.input_shape() {
        return Err(CliError::Invalid(format!(
            "{}: image shape {:?} does not match the architecture input {:?}",
            path.display(),
            t.shape(),
            arch.input_shape()
        )));
    }
    Ok(t)
}

fn read_params(path: &Path, hash: &str) -> Result<(ParameterSet, Option<u64>), CliError> {
    let doc: ParamsDoc = formats::read_json(path)?;
    let seed = doc.seed;
    let (params, h) = doc.into_params()?;
    if h != hash {
        return Err(CliError::Invalid(format!("{}: arch_hash does not match the architecture", path.display())));
    }
    Ok((params, seed))
}

fn read_grads(path: &Path, hash: &str) -> Result<GradientBundle, CliError> {
    let grads = formats::read_json::<ParamsDoc>(path)?.into_grads()?;
    if grads.arch_hash != hash {
        return Err(CliError::Invalid(format!("{}: arch_hash does not match the architecture", path.display())));
    }
    Ok(grads)
}

pub fn rank_eps_from_env() -> Result<f64, CliError> {
    match std::env::var(RANK_EPS_VAR) {
        Err(_) => Ok(DEFAULT_RANK_EPS),
        Ok(s) => match s.trim().parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
            _ => Err(CliError::Invalid(format!("{RANK_EPS_VAR}={s:?} is not a positive number"))),
        },
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

pub fn gradgen(args: &GradgenArgs) -> Result<String, CliError> {
    let arch = formats::read_arch(&args.arch)?;
    let hash = arch_hash(&arch);
    let (params, seed) = match &args.params {
        Some(p) => read_params(p, &hash)?,
        None => {
            let seed = args.seed.unwrap_or(0);
            let params = init_parameters(&arch, seed);
            let out = args.params_out.clone().unwrap_or_else(|| sibling(&args.out, "params.json"));
            formats::write_text(&out, &formats::to_json(&ParamsDoc::from_params(&params, &hash, Some(seed))?))?;
            (params, Some(seed))
        }
    };
    let input = read_input(&args.input, &arch)?;
    if input.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(CliError::Invalid("input pixels must lie in [0, 1]".into()));
    }
    let mut trace = forward(&arch, &params, &input)?;
    let dlogits = trace.attach_label(args.label)?;
    let mut grads = backward(&arch, &params, &trace, &dlogits)?;
    grads.arch_hash = hash;
    grads.seed = seed;
    formats::write_text(&args.out, &formats::to_json(&ParamsDoc::from_grads(&grads)?))?;
    Ok(format!("wrote {} (loss {})", args.out.display(), grads.loss.unwrap_or(f64::NAN)))
}

#[derive(Debug, Serialize)]
pub struct LayerReport {
    pub layer: usize,
    pub n_unknowns: usize,
    pub n_weight_constraints: usize,
    pub n_gradient_constraints: usize,
    pub rank: usize,
    pub residual: f64,
}

#[derive(Debug, Serialize)]
pub struct AttackReport {
    pub arch_hash: String,
    pub input_shape: Vec<usize>,
    pub unknown_ordering: &'static str,
    pub rank_eps: f64,
    pub weight_constraints: bool,
    pub fc_node: Option<usize>,
    pub layers: Vec<LayerReport>,
    pub metrics: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

impl AttackReport {
    fn new(r: &ReconstructionReport, hash: String, opts: &AttackOptions) -> Self {
        Self {
            arch_hash: hash,
            input_shape: r.input.shape().to_vec(),
            unknown_ordering: r.unknown_ordering(),
            rank_eps: opts.rank_eps,
            weight_constraints: opts.use_weight_constraints,
            fc_node: r.fc_node,
            layers: r
                .layers
                .iter()
                .map(|l| {
                    let d = l.diagnostics;
                    LayerReport {
                        layer: d.layer,
                        n_unknowns: d.n_unknowns,
                        n_weight_constraints: d.n_weight_constraints,
                        n_gradient_constraints: d.n_gradient_constraints,
                        rank: d.matrix_rank,
                        residual: d.residual_norm,
                    }
                })
                .collect(),
            metrics: None,
            wall_time: None,
        }
    }
}

pub fn attack(args: &AttackArgs) -> Result<String, CliError> {
    let arch = formats::read_arch(&args.arch)?;
    let hash = arch_hash(&arch);
    let (params, _) = read_params(&args.params, &hash)?;
    let grads = read_grads(&args.grads, &hash)?;
    let original = args.original.as_deref().map(|p| read_input(p, &arch)).transpose()?;
    let opts = AttackOptions {
        rank_eps: rank_eps_from_env()?,
        use_weight_constraints: !args.no_weight_constraints,
        average_fc_estimates: args.average_fc,
        ..AttackOptions::default()
    };

    let start = Instant::now();
    let result = run_attack(&arch, &params, &grads, &opts)?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut report = AttackReport::new(&result, hash, &opts);
    let wall_time = args.timing.then_some(elapsed);
    if let Some(o) = &original {
        report.metrics = Some(Metrics { wall_time, ..Metrics::compare(o, &result.input)? });
    }
    report.wall_time = wall_time;
    write_image(&args.out, &result.input)?;
    let report_path = args.report.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".report.json");
        p.into()
    });
    formats::write_text(&report_path, &formats::to_json(&report))?;

    let mut msg = format!("reconstructed {} ({} conv layers solved)", args.out.display(), report.layers.len());
    if let Some(m) = report.metrics {
        write!(msg, "; mse {:e}, psnr {}", m.mse, m.psnr_text()).unwrap();
    }
    Ok(msg)
}

#[derive(Debug, Serialize)]
pub struct WeightCount {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Serialize)]
pub struct AuditRow {
    pub layer: usize,
    pub activation: &'static str,
    pub out_size: usize,
    pub n_unknowns: usize,
    pub weight_constraints: WeightCount,
    pub gradient_constraints: usize,
    pub min_filters_gradient_only: usize,
    pub empirical_rank: Option<usize>,
    pub verdict: &'static str,
}

#[derive(Debug, Serialize)]
pub struct AuditReport {
    pub arch_hash: String,
    pub layers: Vec<AuditRow>,
    pub note: &'static str,
}

impl AuditReport {
    pub fn new(hash: String, audits: &[LayerAudit]) -> Self {
        let layers = audits
            .iter()
            .map(|a| AuditRow {
                layer: a.layer,
                activation: a.activation.name(),
                out_size: a.out_size,
                n_unknowns: a.n_unknowns,
                weight_constraints: WeightCount { min: a.weight_constraints.min, max: a.weight_constraints.max },
                gradient_constraints: a.gradient_constraints,
                min_filters_gradient_only: a.min_filters_gradient_only,
                empirical_rank: a.empirical_rank(),
                verdict: a.verdict.as_str(),
            })
            .collect();
        Self { arch_hash: hash, layers, note: COUNTING_NOTE }
    }

    pub fn table(&self) -> String {
        let header = ["layer", "activation", "|X|", "|A|", "|B|", "rank", "min F", "verdict"];
        let rows: Vec<[String; 8]> = self
            .layers
            .iter()
            .map(|r| {
                let a = &r.weight_constraints;
                [
                    r.layer.to_string(),
                    r.activation.to_owned(),
                    r.n_unknowns.to_string(),
                    if a.min == a.max { a.min.to_string() } else { format!("{}..{}", a.min, a.max) },
                    r.gradient_constraints.to_string(),
                    r.empirical_rank.map_or_else(|| "-".to_owned(), |k| k.to_string()),
                    r.min_filters_gradient_only.to_string(),
                    r.verdict.to_owned(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let mut line = |cells: &[&str]| {
            let parts: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:>w$}")).collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        line(&header);
        for row in &rows {
            line(&row.each_ref().map(String::as_str));
        }
        writeln!(out, "\nnote: {}", self.note).unwrap();
        out
    }
}

pub fn audit(args: &AuditArgs) -> Result<String, CliError> {
    let arch = formats::read_arch(&args.arch)?;
    let hash = arch_hash(&arch);
    let audits = match (&args.params, &args.grads) {
        (Some(p), Some(g)) => {
            let (params, _) = read_params(p, &hash)?;
            let grads = read_grads(g, &hash)?;
            let opts = AttackOptions {
                rank_eps: rank_eps_from_env()?,
                use_weight_constraints: !args.no_weight_constraints,
                ..AttackOptions::default()
            };
            audit_with_gradients(&arch, &params, &grads, &opts)?
        }
        _ => audit_architecture(&arch),
    };
    let report = AuditReport::new(hash, &audits);
    let text = match args.format {
        Format::Text => report.table(),
        Format::Json => formats::to_json(&report),
    };
    match &args.out {
        Some(path) => {
            formats::write_text(path, &text)?;
            Ok(format!("wrote {}", path.display()))
        }
        None => Ok(text.trim_end().to_owned()),
    }
}

pub fn eval(args: &EvalArgs) -> Result<String, CliError> {
    let m = Metrics::compare(&read_image(&args.original)?, &read_image(&args.reconstructed)?)?;
    Ok(if args.json {
        serde_json::to_string(&m).expect("metrics serialize")
    } else {
        format!("mse {:e}\npsnr {}", m.mse, m.psnr_text())
    })
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Gradgen(a) => gradgen(a),
        Command::Attack(a) => attack(a),
        Command::Audit(a) => audit(a),
        Command::Eval(a) => eval(a),
    }
}
