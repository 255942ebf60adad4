//! Pipeline front end: one subcommand per analysis stage, each producing a
//! [`Report`] and an exit code.
//!
//! Exit codes: 0 success, 2 when the method's conditions are not met
//! (structural check failed, terminal-pair sum not established, inactive
//! path edge, no balanced equilibrium), 1 on any other error.

use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use ergograph::ctmc::{
    solve_stationary_truncated, stationarity_residual, Distribution, ProductFormRule,
};
use ergograph::mixing::{
    empirical_vs_stationary, mixing_report, ssa_simulate, tv_curve, MixingError, Trajectory,
};
use ergograph::network::{
    derive_catalytic_partition, search_complex_balanced, tail_decay_candidates,
    tail_decay_for_alpha, verify_complex_balanced, NetworkError, TailDecay,
};
use ergograph::path::{
    certify_network, congestion_ratio, CongestionPaths, GapCertificate, PathError, PathFamily,
};
use ergograph::spectral::{estimate_gap, witness_upper_bound, SpectralError};
use ergograph::{ReactionNetwork, State, StateBox, StateSpace, TruncatedChain};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNMET: i32 = 2;

/// Box scale factors used by `certify` when no step is given.
pub const CERTIFY_SCALES: [f64; 5] = [0.5, 0.625, 0.75, 0.875, 1.0];

const LEVEL_SETS: usize = 64;

const FACTOR_NOTE: &str = "C bounds the spectral gap of E; total variation is bounded by \
(2/pi(x0)) exp(-C t), so mixing bounds use 1/C rather than 1/(2C)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Parse,
    Check,
    Balance,
    Stationary,
    Gap,
    Witness,
    Certify,
    Congestion,
    Mixing,
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Composed,
    Monotone,
}

/// Command-line configuration. Options a command does not use are ignored.
#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "ergograph", version, about = "Exponential ergodicity analysis for reaction networks")]
pub struct RunConfig {
    #[arg(value_enum)]
    pub command: Command,
    /// Reaction network file.
    pub network: PathBuf,
    /// Upper corner of the truncation box, e.g. `40,40`.
    #[arg(long = "box", value_delimiter = ',')]
    pub upper: Option<Vec<u32>>,
    /// Tail-decay exponent; by default every supported exponent is tried.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Tail threshold K; by default the smallest valid one.
    #[arg(long = "k")]
    pub k: Option<u64>,
    /// Complex-balanced equilibrium; searched for when absent.
    #[arg(long, value_delimiter = ',')]
    pub c: Option<Vec<f64>>,
    /// Total-variation target for `mixing`, in (0, 1/2).
    #[arg(long, default_value_t = 0.25)]
    pub eps: f64,
    /// Time horizon for `mixing` curves and `simulate`.
    #[arg(long = "t")]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial state, e.g. `10,10`; defaults to 10 per coordinate.
    #[arg(long, value_delimiter = ',')]
    pub x0: Option<Vec<i64>>,
    /// Witness set as `;`-separated states, e.g. `5,0;6,1`.
    #[arg(long)]
    pub set: Option<String>,
    /// Box step for `certify`'s nested boxes instead of scale factors.
    #[arg(long)]
    pub step: Option<u32>,
    #[arg(long, value_enum, default_value_t = PathKind::Composed)]
    pub paths: PathKind,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    #[serde(skip)]
    pub format: Format,
    #[arg(long, short)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
    /// Worker thread cap for parallel kernels.
    #[arg(long, env = "ERGOGRAPH_THREADS")]
    #[serde(skip)]
    pub threads: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("format {format} is not available for this command's results")]
    UnsupportedFormat { format: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Chain(#[from] ergograph::ctmc::ChainError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Mixing(#[from] MixingError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Columns and rows for CSV rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: Value,
    pub version: String,
    pub inputs_digest: String,
    pub results: Value,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub table: Option<Table>,
}

/// A finished run: the report, if one was produced, and the exit code.
#[derive(Debug)]
pub struct Outcome {
    pub report: Option<Report>,
    pub exit_code: i32,
    /// Reason for a non-zero exit, for the diagnostic stream.
    pub message: Option<String>,
}

struct Stage {
    results: Value,
    warnings: Vec<String>,
    table: Option<Table>,
    unmet: Option<String>,
}

impl Stage {
    fn ok(results: Value) -> Self {
        Self {
            results,
            warnings: Vec::new(),
            table: None,
            unmet: None,
        }
    }
}

struct Context<'a> {
    config: &'a RunConfig,
    net: ReactionNetwork,
}

pub fn run(config: &RunConfig) -> Outcome {
    match run_inner(config) {
        Ok((report, unmet)) => Outcome {
            exit_code: if unmet.is_some() { EXIT_UNMET } else { EXIT_OK },
            message: unmet,
            report: Some(report),
        },
        Err(e) => Outcome {
            report: None,
            exit_code: EXIT_ERROR,
            message: Some(e.to_string()),
        },
    }
}

fn run_inner(config: &RunConfig) -> Result<(Report, Option<String>), CliError> {
    validate(config)?;
    let text = std::fs::read_to_string(&config.network).map_err(|source| CliError::Io {
        path: config.network.clone(),
        source,
    })?;
    let net = ReactionNetwork::parse(&text)?;
    let ctx = Context { config, net };
    let stage = match config.command {
        Command::Parse => parse_stage(&ctx),
        Command::Check => check_stage(&ctx),
        Command::Balance => balance_stage(&ctx),
        Command::Stationary => stationary_stage(&ctx),
        Command::Gap => gap_stage(&ctx),
        Command::Witness => witness_stage(&ctx),
        Command::Certify => certify_stage(&ctx),
        Command::Congestion => congestion_stage(&ctx),
        Command::Mixing => mixing_stage(&ctx),
        Command::Simulate => simulate_stage(&ctx),
    }?;
    if config.format == Format::Csv && stage.table.is_none() {
        return Err(CliError::UnsupportedFormat {
            format: "csv".into(),
        });
    }
    let command = serde_json::to_value(config)?;
    let report = Report {
        inputs_digest: digest(&text, &command),
        command,
        version: env!("CARGO_PKG_VERSION").to_string(),
        results: stage.results,
        warnings: stage.warnings,
        table: stage.table,
    };
    Ok((report, stage.unmet))
}

fn validate(config: &RunConfig) -> Result<(), CliError> {
    if let Some(upper) = &config.upper {
        if upper.is_empty() || upper.iter().any(|&u| u == 0) {
            return Err(CliError::Argument(format!("box entries must be positive, got {upper:?}")));
        }
    }
    if !(config.eps > 0.0 && config.eps < 0.5) {
        return Err(CliError::Argument(format!("eps must lie in (0, 1/2), got {}", config.eps)));
    }
    if let Some(t) = config.horizon {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Argument(format!("t must be positive, got {t}")));
        }
    }
    if config.threads == Some(0) {
        return Err(CliError::Argument("threads must be positive".into()));
    }
    Ok(())
}

fn digest(network_text: &str, command: &Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(network_text.as_bytes());
    hasher.update([0u8]);
    hasher.update(command.to_string().as_bytes());
    hex::encode(hasher.finalize())
}

/// JSON for every command; CSV for tabular results only.
pub fn render_report(report: &Report, format: Format) -> Result<Vec<u8>, CliError> {
    match format {
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(report)?;
            out.push(b'\n');
            Ok(out)
        }
        Format::Csv => {
            let table = report.table.as_ref().ok_or_else(|| {
                CliError::Argument("this report has no tabular result; use --format json".into())
            })?;
            let mut writer = csv::Writer::from_writer(Vec::new());
            writer.write_record(&table.header)?;
            for row in &table.rows {
                writer.write_record(row)?;
            }
            writer
                .into_inner()
                .map_err(|e| CliError::Argument(format!("csv buffer: {e}")))
        }
    }
}

impl Context<'_> {
    fn bx(&self) -> Result<StateBox, CliError> {
        let upper = self
            .config
            .upper
            .clone()
            .ok_or_else(|| CliError::Argument(format!("{:?} needs --box", self.config.command)))?;
        if upper.len() != self.net.dim() {
            return Err(CliError::Argument(format!(
                "box has {} entries for {} species",
                upper.len(),
                self.net.dim()
            )));
        }
        Ok(StateBox::new(upper)?)
    }

    fn x0(&self) -> Result<State, CliError> {
        let x0 = self.config.x0.clone().unwrap_or_else(|| vec![10; self.net.dim()]);
        if x0.len() != self.net.dim() || x0.iter().any(|&v| v < 0) {
            return Err(CliError::Argument(format!("x0 {x0:?} is not a state of this network")));
        }
        Ok(x0)
    }

    /// The given equilibrium if balanced, else one found by search.
    fn equilibrium(&self) -> Result<Vec<f64>, NetworkError> {
        match &self.config.c {
            Some(c) => {
                let report = verify_complex_balanced(&self.net, c)?;
                if report.balanced {
                    Ok(c.clone())
                } else {
                    Err(NetworkError::NoCertificate {
                        iterations: 0,
                        residual: report.relative_residual(),
                        reason: format!("c = {c:?} is not complex balanced"),
                    })
                }
            }
            None => search_complex_balanced(&self.net, &vec![1.0; self.net.dim()]),
        }
    }

    fn tail_decays(&self, c: &[f64]) -> Result<Vec<TailDecay>, CliError> {
        let Some(alpha) = self.config.alpha else {
            let mut all = tail_decay_candidates(&self.net, c)?;
            if let Some(k) = self.config.k {
                all.iter_mut().for_each(|d| d.k = k);
            }
            return Ok(all);
        };
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(CliError::Argument(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        let k = match self.config.k {
            Some(k) => Some(k),
            None => self
                .net
                .kinetics()
                .iter()
                .zip(c)
                .map(|(theta, &ci)| tail_decay_for_alpha(theta, ci, alpha))
                .collect::<Option<Vec<u64>>>()
                .map(|ks| ks.into_iter().max().unwrap_or(2)),
        };
        Ok(k.map(|k| vec![TailDecay { alpha, k }]).unwrap_or_default())
    }

    /// Truncated chain on the box, restricted to its closed core when the
    /// truncation is reducible.
    fn chain(&self, warnings: &mut Vec<String>) -> Result<TruncatedChain, CliError> {
        let chain = TruncatedChain::from_network(&self.net, &self.bx()?)?;
        if chain.is_irreducible() {
            return Ok(chain);
        }
        let (core, dropped) = chain.closed_core();
        warnings.push(format!(
            "truncation is reducible; analysis uses the closed core of {} states ({} dropped)",
            core.len(),
            dropped.len()
        ));
        Ok(core)
    }

    fn species(&self) -> Vec<String> {
        self.net.names().to_vec()
    }

    fn layer_names(&self, layers: &[Vec<usize>]) -> Vec<Vec<String>> {
        let names = self.net.names();
        layers
            .iter()
            .map(|l| l.iter().map(|&i| names[i].clone()).collect())
            .collect()
    }
}

fn path_unmet(e: &PathError) -> bool {
    matches!(
        e,
        PathError::SumNotConverged { .. } | PathError::InactiveEdge { .. } | PathError::NoPartition(_)
    )
}

fn parse_stage(ctx: &Context) -> Result<Stage, CliError> {
    let net = &ctx.net;
    let reactions: Vec<String> = net.reactions().iter().map(|r| net.describe(r)).collect();
    Ok(Stage::ok(json!({
        "species": ctx.species(),
        "reactions": reactions,
        "complexes": net.complexes().len(),
        "mass_action": net.is_mass_action(),
    })))
}

fn check_stage(ctx: &Context) -> Result<Stage, CliError> {
    Ok(match derive_catalytic_partition(&ctx.net) {
        Ok(partition) => Stage::ok(json!({
            "accepted": true,
            "layers": ctx.layer_names(&partition.layers),
            "threshold": partition.threshold,
            "single_layer": partition.layers.len() == 1,
        })),
        Err(failure) => {
            let reason = failure.reason(&ctx.net);
            let stranded: Vec<String> = failure
                .stranded
                .iter()
                .map(|&i| ctx.net.names()[i].clone())
                .collect();
            let mut stage = Stage::ok(json!({
                "accepted": false,
                "layers": ctx.layer_names(&failure.placed),
                "stranded": stranded,
                "reason": reason,
            }));
            stage.unmet = Some(reason);
            stage
        }
    })
}

fn balance_stage(ctx: &Context) -> Result<Stage, CliError> {
    let c = match &ctx.config.c {
        Some(c) => c.clone(),
        None => match search_complex_balanced(&ctx.net, &vec![1.0; ctx.net.dim()]) {
            Ok(c) => c,
            Err(NetworkError::NoCertificate { reason, .. }) => {
                let mut stage = Stage::ok(json!({ "balanced": false, "reason": reason }));
                stage.unmet = Some(format!("no complex-balanced equilibrium found: {reason}"));
                return Ok(stage);
            }
            Err(e) => return Err(e.into()),
        },
    };
    let report = verify_complex_balanced(&ctx.net, &c)?;
    let mut stage = Stage::ok(json!({
        "c": c,
        "balanced": report.balanced,
        "residual": report.max_residual,
        "relative_residual": report.relative_residual(),
        "max_flux": report.max_flux,
    }));
    if !report.balanced {
        stage.unmet = Some(format!(
            "c is not complex balanced: relative residual {:.3e}",
            report.relative_residual()
        ));
    }
    Ok(stage)
}

fn distribution_table(pi: &Distribution) -> Table {
    let d = pi.space().dim();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("prob".into());
    let rows = pi
        .entries()
        .map(|(x, p)| {
            let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            row.push(format!("{p:e}"));
            row
        })
        .collect();
    Table { header, rows }
}

fn stationary_stage(ctx: &Context) -> Result<Stage, CliError> {
    let mut warnings = Vec::new();
    let chain = ctx.chain(&mut warnings)?;
    let pi = solve_stationary_truncated(&chain)?;
    let residual = stationarity_residual(&pi, &chain)?;
    let mut results = json!({
        "box": chain.space().bx().upper(),
        "states": chain.len(),
        "residual": residual.max_overall,
        "interior_residual": residual.max_interior,
        "boundary_mass": pi.upper_face_mass(),
        "mean": pi.mean(),
    });
    if let Ok(c) = ctx.equilibrium() {
        let rule = ProductFormRule::for_network(&ctx.net, &c)?;
        let product = Distribution::from_rule(&rule, chain.space().clone())?;
        results["product_form"] = json!({ "c": c, "tv": pi.tv_distance(&product)? });
    }
    Ok(Stage {
        results,
        warnings,
        table: Some(distribution_table(&pi)),
        unmet: None,
    })
}

/// Nested boxes for the terminal-pair sum.
fn certify_boxes(config: &RunConfig, bx: &StateBox) -> Result<Vec<StateBox>, CliError> {
    let upper = bx.upper();
    let mut boxes: Vec<StateBox> = match config.step {
        Some(0) => return Err(CliError::Argument("step must be positive".into())),
        Some(step) => {
            let top = *upper.iter().max().expect("non-empty box");
            (1..=top / step)
                .map(|j| upper.iter().map(|&u| (j * step).min(u)).collect::<Vec<u32>>())
                .map(StateBox::new)
                .collect::<Result<_, _>>()?
        }
        None => CERTIFY_SCALES
            .iter()
            .map(|s| upper.iter().map(|&u| ((u as f64 * s).round() as u32).max(1)).collect())
            .map(StateBox::new)
            .collect::<Result<_, _>>()?,
    };
    boxes.dedup();
    if boxes.len() < 3 {
        return Err(CliError::Argument(format!(
            "box {upper:?} yields only {} nested boxes; at least 3 are needed",
            boxes.len()
        )));
    }
    Ok(boxes)
}

enum Certified {
    Done(GapCertificate),
    Unmet(String),
}

fn certify_on_box(ctx: &Context, bx: &StateBox) -> Result<Certified, CliError> {
    if let Err(failure) = derive_catalytic_partition(&ctx.net) {
        return Ok(Certified::Unmet(format!(
            "structural check failed: {}",
            failure.reason(&ctx.net)
        )));
    }
    let c = match ctx.equilibrium() {
        Ok(c) => c,
        Err(NetworkError::NoCertificate { reason, .. }) => {
            return Ok(Certified::Unmet(format!("no complex-balanced equilibrium: {reason}")))
        }
        Err(e) => return Err(e.into()),
    };
    let decays = ctx.tail_decays(&c)?;
    if decays.is_empty() {
        return Ok(Certified::Unmet("no tail-decay exponent applies".into()));
    }
    let rule = ProductFormRule::for_network(&ctx.net, &c)?;
    let boxes = certify_boxes(ctx.config, bx)?;
    match certify_network(&ctx.net, &rule, &decays, &boxes) {
        Ok(cert) => Ok(Certified::Done(cert)),
        Err(e) if path_unmet(&e) => Ok(Certified::Unmet(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

fn certify_stage(ctx: &Context) -> Result<Stage, CliError> {
    let bx = ctx.bx()?;
    let mut warnings = vec![FACTOR_NOTE.to_string()];
    match certify_on_box(ctx, &bx)? {
        Certified::Done(mut cert) => {
            let chain = ctx.chain(&mut warnings)?;
            let pi = solve_stationary_truncated(&chain)?;
            let gap = estimate_gap(&pi, &chain)?;
            if !cert.check_against(&gap) {
                warnings.push(format!(
                    "certificate {:.6e} exceeds the numeric gap {:.6e} on the truncation",
                    cert.constant, gap.value
                ));
            }
            let mut results = serde_json::to_value(&cert)?;
            results["numeric_gap"] = json!(gap.value);
            Ok(Stage {
                results,
                warnings,
                table: None,
                unmet: None,
            })
        }
        Certified::Unmet(reason) => {
            warnings.push(reason.clone());
            Ok(Stage {
                results: json!({ "certified": false, "reason": reason }),
                warnings,
                table: None,
                unmet: Some(reason),
            })
        }
    }
}

fn parse_set(text: &str, dim: usize) -> Result<Vec<State>, CliError> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let x: Vec<i64> = s
                .split(',')
                .map(|v| v.trim().parse::<i64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Argument(format!("bad state {s:?} in --set: {e}")))?;
            if x.len() != dim {
                return Err(CliError::Argument(format!("state {x:?} has dimension {}, expected {dim}", x.len())));
            }
            Ok(x)
        })
        .collect()
}

#[derive(Serialize)]
struct WitnessEntry {
    set: String,
    size: usize,
    mass: f64,
    quotient: f64,
}

fn witness_entry(
    pi: &Distribution,
    chain: &TruncatedChain,
    set: &[State],
    label: String,
) -> Result<WitnessEntry, CliError> {
    Ok(WitnessEntry {
        set: label,
        size: set.len(),
        mass: set.iter().map(|x| pi.prob(x)).sum(),
        quotient: witness_upper_bound(pi, chain, set)?,
    })
}

/// Best indicator witness among sublevel sets of the eigenfunction, scanned
/// at `LEVEL_SETS` quantiles. An indicator and its complement give the same
/// quotient, so prefixes of the sorted order suffice.
fn level_set_witness(
    pi: &Distribution,
    chain: &TruncatedChain,
    eigenfunction: &[f64],
) -> Result<Option<WitnessEntry>, CliError> {
    let n = chain.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigenfunction[a].total_cmp(&eigenfunction[b]).then(a.cmp(&b)));
    let mut sizes: Vec<usize> = (1..LEVEL_SETS).map(|q| q * n / LEVEL_SETS).filter(|&k| k > 0).collect();
    sizes.dedup();
    let mut best: Option<WitnessEntry> = None;
    for k in sizes {
        let set: Vec<State> = order[..k].iter().map(|&i| chain.space().state(i)).collect();
        let entry = witness_entry(pi, chain, &set, format!("eigenfunction sublevel set ({k} states)"))?;
        if best.as_ref().map_or(true, |b| entry.quotient < b.quotient) {
            best = Some(entry);
        }
    }
    Ok(best)
}

fn gap_stage(ctx: &Context) -> Result<Stage, CliError> {
    let mut warnings = Vec::new();
    let chain = ctx.chain(&mut warnings)?;
    let pi = solve_stationary_truncated(&chain)?;
    let mut gap = estimate_gap(&pi, &chain)?;
    let mut witnesses = Vec::new();
    if let Some(best) = level_set_witness(&pi, &chain, &gap.eigenfunction)? {
        witnesses.push(best);
    }
    if let Some(text) = &ctx.config.set {
        let set = parse_set(text, ctx.net.dim())?;
        witnesses.push(witness_entry(&pi, &chain, &set, text.clone())?);
    }
    gap.witness_bounds = witnesses.iter().map(|w| w.quotient).collect();
    let certificate = match certify_on_box(ctx, chain.space().bx())? {
        Certified::Done(mut cert) => {
            cert.check_against(&gap);
            serde_json::to_value(&cert)?
        }
        Certified::Unmet(reason) => {
            warnings.push(format!("no certificate: {reason}"));
            Value::Null
        }
    };
    Ok(Stage {
        results: json!({
            "gap": serde_json::to_value(&gap)?,
            "certificate": certificate,
            "witnesses": serde_json::to_value(&witnesses)?,
        }),
        warnings,
        table: None,
        unmet: None,
    })
}

fn witness_stage(ctx: &Context) -> Result<Stage, CliError> {
    let text = ctx
        .config
        .set
        .as_ref()
        .ok_or_else(|| CliError::Argument("witness needs --set".into()))?;
    let set = parse_set(text, ctx.net.dim())?;
    let mut warnings = Vec::new();
    let chain = ctx.chain(&mut warnings)?;
    let pi = solve_stationary_truncated(&chain)?;
    let entry = witness_entry(&pi, &chain, &set, text.clone())?;
    warnings.push("the quotient is an upper bound on the gap of this truncation, not a verdict".into());
    Ok(Stage {
        results: serde_json::to_value(&entry)?,
        warnings,
        table: None,
        unmet: None,
    })
}

fn congestion_stage(ctx: &Context) -> Result<Stage, CliError> {
    let mut warnings = Vec::new();
    let chain = ctx.chain(&mut warnings)?;
    let pi = solve_stationary_truncated(&chain)?;
    let family;
    let paths = match ctx.config.paths {
        PathKind::Monotone => CongestionPaths::Monotone,
        PathKind::Composed => {
            let c = ctx.equilibrium().unwrap_or_else(|_| vec![1.0; ctx.net.dim()]);
            let decay = ctx
                .tail_decays(&c)?
                .into_iter()
                .next()
                .unwrap_or(TailDecay { alpha: 1.0, k: 2 });
            family = match PathFamily::for_network(&ctx.net, decay.alpha, decay.k) {
                Ok(f) => f,
                Err(e) if path_unmet(&e) => {
                    let reason = e.to_string();
                    return Ok(Stage {
                        results: json!({ "reason": reason }),
                        warnings,
                        table: None,
                        unmet: Some(reason),
                    });
                }
                Err(e) => return Err(e.into()),
            };
            CongestionPaths::Composed(&family)
        }
    };
    match congestion_ratio(paths, &pi, &chain) {
        Ok(report) => Ok(Stage {
            results: serde_json::to_value(&report)?,
            warnings,
            table: None,
            unmet: None,
        }),
        Err(e) if path_unmet(&e) => {
            let reason = e.to_string();
            Ok(Stage {
                results: json!({ "reason": reason }),
                warnings,
                table: None,
                unmet: Some(reason),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn mixing_stage(ctx: &Context) -> Result<Stage, CliError> {
    let mut warnings = vec![FACTOR_NOTE.to_string()];
    let chain = ctx.chain(&mut warnings)?;
    let pi = solve_stationary_truncated(&chain)?;
    let x0 = ctx.x0()?;
    let p0 = pi.prob(&x0);
    if chain.space().index_of(&x0).is_none() || p0 <= 0.0 {
        return Err(CliError::Argument(format!("x0 {x0:?} is not in the analysed state space")));
    }
    let gap = estimate_gap(&pi, &chain)?;
    let report = mixing_report(&chain, &pi, &x0, ctx.config.eps, gap.value, p0.ln())?;
    let horizon = ctx.config.horizon.unwrap_or(2.0 * report.tau_numeric.max(0.5));
    let times: Vec<f64> = (0..=100).map(|j| horizon * j as f64 / 100.0).collect();
    let curve = tv_curve(&chain, &pi, &x0, &times, gap.value)?;
    let rows = curve
        .iter()
        .map(|p| vec![p.t.to_string(), format!("{:e}", p.tv), format!("{:e}", p.bound)])
        .collect();
    Ok(Stage {
        results: json!({
            "mixing": serde_json::to_value(&report)?,
            "numeric_gap": gap.value,
            "curve": serde_json::to_value(&curve)?,
        }),
        warnings,
        table: Some(Table {
            header: vec!["t".into(), "tv".into(), "bound".into()],
            rows,
        }),
        unmet: None,
    })
}

fn trajectory_table(traj: &Trajectory) -> Table {
    let d = traj.states[0].len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    let rows = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, x)| {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            row
        })
        .collect();
    Table { header, rows }
}

fn simulate_stage(ctx: &Context) -> Result<Stage, CliError> {
    let x0 = ctx.x0()?;
    let horizon = ctx
        .config
        .horizon
        .ok_or_else(|| CliError::Argument("simulate needs --t".into()))?;
    let traj = ssa_simulate(&ctx.net, &x0, horizon, ctx.config.seed)?;
    let mut results = json!({
        "x0": x0,
        "horizon": horizon,
        "seed": ctx.config.seed,
        "jumps": traj.jumps(),
        "final_state": traj.states.last(),
        "time_average": traj.time_average(0.0),
    });
    let mut warnings = Vec::new();
    if ctx.config.upper.is_some() {
        match ctx.equilibrium() {
            Ok(c) => {
                let rule = ProductFormRule::for_network(&ctx.net, &c)?;
                let pi = Distribution::from_rule(&rule, StateSpace::full(ctx.bx()?))?;
                let empirical = empirical_vs_stationary(&traj, &pi, 0.0)?;
                results["empirical"] = serde_json::to_value(&empirical)?;
            }
            Err(_) => warnings.push("no product-form law to compare against".into()),
        }
    }
    Ok(Stage {
        results,
        warnings,
        table: Some(trajectory_table(&traj)),
        unmet: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(args: &[&str]) -> RunConfig {
        RunConfig::try_parse_from(std::iter::once("ergograph").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn scale_boxes_are_nested() {
        let cfg = config(&["certify", "x.rn", "--box", "40,40"]);
        let boxes = certify_boxes(&cfg, &StateBox::new(vec![40, 40]).unwrap()).unwrap();
        let sides: Vec<u32> = boxes.iter().map(|b| b.upper()[0]).collect();
        assert_eq!(sides, vec![20, 25, 30, 35, 40]);
    }

    #[test]
    fn step_boxes_stop_at_the_corner() {
        let cfg = config(&["certify", "x.rn", "--box", "100", "--step", "20"]);
        let boxes = certify_boxes(&cfg, &StateBox::new(vec![100]).unwrap()).unwrap();
        assert_eq!(boxes.len(), 5);
        assert_eq!(boxes[0].upper(), &[20]);
    }

    #[test]
    fn witness_sets_parse() {
        assert_eq!(parse_set("5,0;6,1", 2).unwrap(), vec![vec![5, 0], vec![6, 1]]);
        assert!(parse_set("5,0,1", 2).is_err());
        assert!(parse_set("a,0", 2).is_err());
    }

    #[test]
    fn invalid_eps_is_rejected() {
        let cfg = config(&["mixing", "x.rn", "--eps", "0.5"]);
        assert!(matches!(validate(&cfg), Err(CliError::Argument(_))));
    }

    #[test]
    fn csv_needs_a_table() {
        let report = Report {
            command: Value::Null,
            version: "0".into(),
            inputs_digest: String::new(),
            results: Value::Null,
            warnings: Vec::new(),
            table: None,
        };
        assert!(render_report(&report, Format::Csv).is_err());
        let json = String::from_utf8(render_report(&report, Format::Json).unwrap()).unwrap();
        let keys: Vec<&str> = ["command", "version", "inputs_digest", "results", "warnings"].to_vec();
        let positions: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }
}
