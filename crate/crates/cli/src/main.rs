use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tierattn_core::export::to_canonical_json;
use tierattn_core::metrics::spearman_rho;
use tierattn_core::probing::{
    build_layer_plans, build_stack, default_probe_vrpr, default_window, probe_context_ood, probe_position_ood,
    shipped_orderings, PlanBundle, PlanValidation, SensitivityProfile, Strategy, SENSITIVE_FRACTION, TSA_FRACTION,
};
use tierattn_core::tsa::{mask_budget, materialize_mask, MaskBudget};
use tierattn_core::{
    build_block_mask, implemented_relative_matrix, preset, presets, validate_tsa, validate_vrpr, BlockMaskDescriptor,
    Preset, TsaConfig, TsaValidity, VrprConfig,
};

mod output;

use output::write_atomic;

const EXIT_VALIDATION: u8 = 2;
const EXIT_USAGE: u8 = 1;

/// Temporal extension planning for RoPE video attention: position remapping,
/// tiered sparse masks and per-layer sensitivity probing.
#[derive(Debug, Parser)]
#[command(name = "tierattn", version)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Implemented relative-position matrix (CSV) and range report (JSON).
    Remap(RemapArgs),
    /// Tiered block-mask descriptor (JSON) with an optional PGM rendering.
    Mask(MaskArgs),
    /// Probe a seeded synthetic stack and write a sensitivity profile.
    Probe(ProbeArgs),
    /// Combine a sensitivity profile with a preset into per-layer plans.
    Plan(PlanArgs),
    /// List the shipped presets.
    Presets(PresetsArgs),
}

#[derive(Debug, Args)]
struct RemapArgs {
    /// Start from a shipped preset; explicit flags override its fields.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    w1: Option<u32>,
    #[arg(long)]
    w2: Option<u32>,
    #[arg(long)]
    g1: Option<u32>,
    #[arg(long)]
    g2: Option<u32>,
    /// Pre-trained length L in frames.
    #[arg(long)]
    pretrained: Option<u32>,
    /// Target length in frames.
    #[arg(long)]
    target: Option<usize>,
    /// Where to write the matrix CSV.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Where to write the report JSON (it is always printed as well).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MaskArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    frames: Option<usize>,
    /// Tokens per frame.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d1: Option<u32>,
    #[arg(long)]
    d2: Option<u32>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Pre-trained context in frames; defaults to the frame count.
    #[arg(long)]
    pretrained_ctx: Option<u32>,
    /// Sink frame index (default 0).
    #[arg(long, conflicts_with = "no_sink")]
    sink: Option<usize>,
    #[arg(long)]
    no_sink: bool,
    /// Descriptor JSON destination; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also materialize the token mask as a binary PGM image.
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Check the window/decay constraint; exit 2 if it fails.
    #[arg(long)]
    validate: bool,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Tokens per frame.
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Base length in frames; the context probe runs at `extension` times this.
    #[arg(long, default_value_t = 21)]
    frames: usize,
    /// Stack weight seed.
    #[arg(long, env = "TIERATTN_SEED", default_value_t = 0)]
    seed: u64,
    /// Key-position shifts, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-40,-20,20,40")]
    shifts: Vec<i64>,
    /// Input seeds averaged over, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    input_seeds: Vec<u64>,
    #[arg(long, default_value_t = 2)]
    extension: usize,
    /// Sliding-window width in frames for the context probe.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, default_value_t = SENSITIVE_FRACTION)]
    sensitive_fraction: f64,
    #[arg(long, default_value_t = TSA_FRACTION)]
    tsa_fraction: f64,
    #[arg(long, default_value = "synthetic")]
    name: String,
    /// Profile JSON destination; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write `layer,metric,value` rows.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Print Spearman correlations against another profile.
    #[arg(long)]
    compare: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Profile JSON produced by `probe`.
    #[arg(long, required_unless_present = "shipped", conflicts_with = "shipped")]
    profile: Option<PathBuf>,
    /// Use a shipped profile (`wan` or `hunyuan`).
    #[arg(long)]
    shipped: Option<String>,
    #[arg(long)]
    preset: String,
    /// Override the preset's target length.
    #[arg(long)]
    target: Option<usize>,
    /// Bundle JSON destination; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PresetsArgs {
    /// Emit JSON instead of a table.
    #[arg(long)]
    json: bool,
}

/// Failure that maps to the validation exit code.
#[derive(Debug)]
struct ValidationFailure(String);

impl std::fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailure {}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ValidationFailure>().is_some() {
        return EXIT_VALIDATION;
    }
    match err.downcast_ref::<tierattn_core::Error>() {
        Some(tierattn_core::Error::InvalidConfig(_) | tierattn_core::Error::PlanRejected(_)) => EXIT_VALIDATION,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Remap(a) => cmd_remap(a),
        Command::Mask(a) => cmd_mask(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Presets(a) => cmd_presets(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(to_canonical_json(value)?)
}

fn out_or_stdout(path: Option<PathBuf>) -> PathBuf {
    path.unwrap_or_else(|| PathBuf::from("-"))
}

fn load_preset(name: Option<&str>) -> Result<Option<Preset>> {
    name.map(|n| preset(n).map_err(anyhow::Error::from)).transpose()
}

fn pick<T: Copy>(flag: Option<T>, fallback: Option<T>, name: &str) -> Result<T> {
    flag.or(fallback)
        .with_context(|| format!("missing --{name} (or pass --preset)"))
}

fn cmd_remap(a: RemapArgs) -> Result<()> {
    let base = load_preset(a.preset.as_deref())?;
    let v = base.as_ref().map(|p| p.vrpr);
    let cfg = VrprConfig::new(
        pick(a.w1, v.map(|c| c.w1), "w1")?,
        pick(a.w2, v.map(|c| c.w2), "w2")?,
        pick(a.g1, v.map(|c| c.g1), "g1")?,
        pick(a.g2, v.map(|c| c.g2), "g2")?,
        pick(a.pretrained, v.map(|c| c.pretrained_len), "pretrained")?,
    )?;
    let target = pick(a.target, base.as_ref().map(|p| p.target_frames), "target")?;
    if target == 0 {
        bail!("--target must be at least 1");
    }
    let report = validate_vrpr(&cfg, target);
    if let Some(path) = &a.out {
        write_atomic(path, implemented_relative_matrix(target, &cfg).to_csv().as_bytes())?;
    }
    let text = json(&report)?;
    if let Some(path) = &a.report {
        write_atomic(path, text.as_bytes())?;
    }
    if report.valid {
        print!("{text}");
        Ok(())
    } else {
        eprint!("{text}");
        Err(ValidationFailure(format!(
            "max |mapped| {} exceeds {} for pre-trained length {}",
            report.max_mapped,
            i64::from(cfg.pretrained_len) - 1,
            cfg.pretrained_len
        ))
        .into())
    }
}

#[derive(Serialize)]
struct MaskOutput<'a> {
    config: &'a TsaConfig,
    descriptor: &'a BlockMaskDescriptor,
    stripe_width: usize,
    budget: MaskBudget,
    validity: TsaValidity,
}

fn tsa_from_args(a: &MaskArgs) -> Result<TsaConfig> {
    let base = load_preset(a.preset.as_deref())?.map(|p| p.tsa);
    let frames = pick(a.frames, base.map(|c| c.frames), "frames")?;
    let sink = if a.no_sink {
        None
    } else {
        Some(a.sink.or(base.and_then(|c| c.sink_frame)).unwrap_or(0))
    };
    let cfg = TsaConfig::new(
        pick(a.d1, base.map(|c| c.d1), "d1")?,
        pick(a.d2, base.map(|c| c.d2), "d2")?,
        pick(a.alpha, base.map(|c| c.alpha), "alpha")?,
        pick(a.n, base.map(|c| c.tokens_per_frame), "n")?,
        frames,
        a.pretrained_ctx.or(base.map(|c| c.pretrained_ctx)).unwrap_or(frames as u32),
    )?;
    Ok(cfg.with_sink(sink)?)
}

fn cmd_mask(a: MaskArgs) -> Result<()> {
    let cfg = tsa_from_args(&a)?;
    let desc = build_block_mask(&cfg);
    let validity = validate_tsa(&cfg);
    let doc = MaskOutput {
        config: &cfg,
        descriptor: &desc,
        stripe_width: desc.stripe_width(),
        budget: mask_budget(&desc, &cfg),
        validity,
    };
    write_atomic(&out_or_stdout(a.out.clone()), json(&doc)?.as_bytes())?;
    if let Some(path) = &a.pgm {
        write_atomic(path, &materialize_mask(&desc)?.to_pgm())?;
    }
    if a.validate {
        let verdict = if validity.valid { "valid" } else { "INVALID" };
        eprintln!(
            "d1(1+1/alpha) = {} in [{}, {}]: {verdict}",
            validity.value, validity.lower, validity.upper
        );
        if !validity.valid {
            return Err(ValidationFailure("window/decay constraint violated".into()).into());
        }
    }
    Ok(())
}

fn read_profile(path: &PathBuf) -> Result<SensitivityProfile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SensitivityProfile::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn describe_rho(a: &[f64], b: &[f64]) -> String {
    match spearman_rho(a, b) {
        Ok(r) => format!("{r:?}"),
        Err(e) => format!("undefined ({e})"),
    }
}

fn cmd_probe(a: ProbeArgs) -> Result<()> {
    let stack = build_stack(a.layers, a.dim, a.n, a.seed)?;
    log::info!("probing {} layers, {} frames, seed {}", a.layers, a.frames, a.seed);
    let ald = probe_position_ood(&stack, a.frames, &a.shifts, &a.input_seeds)?;
    let vrpr = default_probe_vrpr(a.frames)?;
    let window = a.window.unwrap_or_else(|| default_window(a.frames));
    let ctx = probe_context_ood(&stack, a.frames, a.extension, &vrpr, window, &a.input_seeds)?;
    let profile = SensitivityProfile::from_scores_with(a.name, ald, ctx, a.sensitive_fraction, a.tsa_fraction)?;
    write_atomic(&out_or_stdout(a.out), json(&profile)?.as_bytes())?;
    if let Some(path) = &a.csv {
        write_atomic(path, profile.scores_csv().as_bytes())?;
    }
    if let Some(path) = &a.compare {
        let other = read_profile(path)?;
        if other.num_layers != profile.num_layers {
            bail!("{} has {} layers, this profile has {}", path.display(), other.num_layers, profile.num_layers);
        }
        eprintln!("spearman ald: {}", describe_rho(&profile.ald, &other.ald));
        eprintln!("spearman ctx_score: {}", describe_rho(&profile.ctx_score, &other.ctx_score));
    }
    Ok(())
}

fn shipped_by_alias(alias: &str) -> Result<SensitivityProfile> {
    let key = alias.to_ascii_lowercase();
    let found = shipped_orderings()
        .into_iter()
        .find(|o| o.model_name.to_ascii_lowercase().starts_with(&key));
    match found {
        Some(o) => Ok(o.profile()?),
        None => bail!("no shipped profile matches {alias:?} (try wan or hunyuan)"),
    }
}

fn cmd_plan(a: PlanArgs) -> Result<()> {
    let profile = match (&a.profile, &a.shipped) {
        (Some(path), _) => read_profile(path)?,
        (None, Some(alias)) => shipped_by_alias(alias)?,
        (None, None) => bail!("pass --profile or --shipped"),
    };
    let p = preset(&a.preset)?;
    let target = a.target.unwrap_or(p.target_frames);
    let tsa = p.tsa.with_frames(target)?;
    let plans = match build_layer_plans(&profile.strategy, target, &p.vrpr, &tsa) {
        Ok(plans) => plans,
        Err(tierattn_core::Error::PlanRejected(v)) => {
            eprint!("{}", json(&*v)?);
            return Err(ValidationFailure(format!("{v}")).into());
        }
        Err(e) => return Err(e.into()),
    };
    let bundle = PlanBundle::new(profile.model_name.clone(), &plans, &p.vrpr, &tsa)?;
    write_atomic(&out_or_stdout(a.out), json(&bundle)?.as_bytes())?;
    let masked = plans.iter().filter(|pl| pl.mask.is_some()).count();
    eprintln!(
        "{}: {} layers, {masked} {} / {} {} at {target} frames",
        profile.model_name,
        plans.len(),
        Strategy::VrprPlusTsa.label(),
        plans.len() - masked,
        Strategy::VrprOnly.label()
    );
    Ok(())
}

#[derive(Serialize)]
struct PresetListing {
    preset: Preset,
    validation: PlanValidation,
}

fn cmd_presets(a: PresetsArgs) -> Result<()> {
    let all = presets();
    if a.json {
        let listing: Vec<PresetListing> = all
            .into_iter()
            .map(|p| PresetListing { validation: PlanValidation::check(p.target_frames, &p.vrpr, &p.tsa), preset: p })
            .collect();
        print!("{}", json(&listing)?);
        return Ok(());
    }
    println!("{:<11} {:>6}  {:<20} {:<22} {:>9}", "name", "target", "vrpr w1/w2/g1/g2 L", "tsa d1/d2/alpha ctx n", "max|pos|");
    for p in all {
        let v = PlanValidation::check(p.target_frames, &p.vrpr, &p.tsa);
        println!(
            "{:<11} {:>6}  {:<20} {:<22} {:>9}{}",
            p.name,
            p.target_frames,
            format!("{}/{}/{}/{} {}", p.vrpr.w1, p.vrpr.w2, p.vrpr.g1, p.vrpr.g2, p.vrpr.pretrained_len),
            format!("{}/{}/{} {} {}", p.tsa.d1, p.tsa.d2, p.tsa.alpha, p.tsa.pretrained_ctx, p.tsa.tokens_per_frame),
            v.vrpr.max_mapped,
            if v.ok() { "" } else { "  INVALID" }
        );
    }
    Ok(())
}
