//! Subcommand implementations and artifact writing.
//!
//! Every output is written atomically (temp file, then rename) and starts
//! with a `# config_hash=... seed=...` comment row so artifacts are
//! traceable to the exact configuration and seed that produced them.

use crate::config::{parse_grid_kind, parse_reparam_kind, parse_sampler_kind, ExperimentConfig};
use crate::CliError;
use deis_core::{
    collect_profile, compute_coefficients, convergence_study, ddim_sample, deis_sample,
    euler_sample, make_time_grid, score_curves, standard_normal_batch, ConvergenceReport,
    GmmOracle, GridKind, ReparamKind, Reparameterisation, SamplerKind, ScoreFunction,
    ScoreMagnitudeProfile, StudyConfig,
};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Loaded configuration plus the hash of its on-disk bytes.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub config_hash: String,
}

/// Reads, parses and validates a config file.
pub fn load_context(path: &Path) -> Result<Context, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let config_hash: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    let text = String::from_utf8(bytes)
        .map_err(|e| CliError::Config(format!("{}: not utf-8: {e}", path.display())))?;
    let config: ExperimentConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(Context {
        config,
        config_hash,
    })
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn header(ctx: &Context, seed: u64) -> String {
    format!("# config_hash={} seed={}\n", ctx.config_hash, seed)
}

fn out_path(ctx: &Context, name: &str, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| ctx.config.output.dir.join(name))
}

fn load_or_collect_profile(
    ctx: &Context,
    path: Option<&Path>,
) -> Result<ScoreMagnitudeProfile, CliError> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            Ok(ScoreMagnitudeProfile::from_csv_str(&text)?)
        }
        None => {
            let sched = ctx.config.schedule()?;
            let oracle = GmmOracle::new(ctx.config.mixture()?, sched.clone());
            let p = collect_profile(
                &oracle,
                &sched,
                ctx.config.profile.nfe,
                ctx.config.profile.batch,
                ctx.config.profile.seed,
            )?;
            Ok(p.with_truncation_threshold(ctx.config.profile.truncation_threshold)?)
        }
    }
}

/// `profile`: collect the score-magnitude profile and write it as CSV.
pub fn cmd_profile(ctx: &Context, out: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let profile = load_or_collect_profile(ctx, None)?;
    let path = out_path(ctx, "profile.csv", out);
    let body = format!(
        "{}{}",
        header(ctx, ctx.config.profile.seed),
        profile.to_csv_string()
    );
    write_atomic(&path, &body)?;
    Ok(path)
}

/// Flags shared by `coeffs` and `sample`.
#[derive(Debug, Default, Clone)]
pub struct SampleFlags {
    pub sampler: Option<String>,
    pub order: Option<usize>,
    pub reparam: Option<String>,
    pub profile: Option<PathBuf>,
    pub nfe: Option<usize>,
    pub grid: Option<String>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

struct ResolvedRun {
    kind: SamplerKind,
    order: usize,
    rep: Reparameterisation,
    grid_kind: GridKind,
    nfe: usize,
}

fn resolve_run(ctx: &Context, flags: &SampleFlags) -> Result<ResolvedRun, CliError> {
    let kind = parse_sampler_kind(flags.sampler.as_deref().unwrap_or("deis"))?;
    let order = flags.order.unwrap_or(3);
    let rep_kind = parse_reparam_kind(flags.reparam.as_deref().unwrap_or("sigma"))?;
    let rep = match rep_kind {
        ReparamKind::Identity => Reparameterisation::identity(),
        ReparamKind::Sigma => Reparameterisation::sigma(),
        ReparamKind::ScoreNorm => {
            let profile = load_or_collect_profile(ctx, flags.profile.as_deref())?;
            Reparameterisation::score_norm(profile)
        }
    };
    let grid_kind = match &flags.grid {
        Some(g) => parse_grid_kind(g)?,
        None => crate::config::default_grid_for(kind),
    };
    let nfe = flags.nfe.unwrap_or(10);
    if nfe < 1 {
        return Err(CliError::Config("--nfe must be >= 1".into()));
    }
    Ok(ResolvedRun {
        kind,
        order,
        rep,
        grid_kind,
        nfe,
    })
}

/// `coeffs`: dump the coefficient table for one sampler configuration.
pub fn cmd_coeffs(ctx: &Context, flags: &SampleFlags) -> Result<PathBuf, CliError> {
    let run = resolve_run(ctx, flags)?;
    let sched = ctx.config.schedule()?;
    let grid = make_time_grid(run.grid_kind, run.nfe)?;
    let table = compute_coefficients(
        &grid,
        run.order,
        &run.rep,
        &sched,
        ctx.config.sampling.quadrature_subdivisions,
    )?;
    let mut body = header(ctx, ctx.config.sampling.seed);
    body.push_str("i,t_i,t_prev,j,c_ij\n");
    for (k, row) in table.rows.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            let _ = writeln!(
                body,
                "{},{},{},{},{}",
                k,
                grid.times()[k],
                grid.times()[k + 1],
                j,
                c
            );
        }
    }
    let path = out_path(ctx, "coeffs.csv", flags.out.clone());
    write_atomic(&path, &body)?;
    Ok(path)
}

/// `sample`: run one sampler once and write the terminal batch.
pub fn cmd_sample(ctx: &Context, flags: &SampleFlags) -> Result<PathBuf, CliError> {
    let run = resolve_run(ctx, flags)?;
    let sched = ctx.config.schedule()?;
    let mixture = ctx.config.mixture()?;
    let oracle = GmmOracle::new(mixture, sched.clone());
    let batch = flags.batch.unwrap_or(ctx.config.sampling.batch);
    let seed = flags.seed.unwrap_or(ctx.config.sampling.seed);
    if seed == ctx.config.profile.seed {
        return Err(CliError::Config(
            "--seed must differ from profile.seed".into(),
        ));
    }
    let grid = make_time_grid(run.grid_kind, run.nfe)?;
    let x1 = standard_normal_batch(batch, oracle.dim(), seed);
    let result = match run.kind {
        SamplerKind::Deis => {
            let table = compute_coefficients(
                &grid,
                run.order,
                &run.rep,
                &sched,
                ctx.config.sampling.quadrature_subdivisions,
            )?;
            deis_sample(
                &x1, &grid, run.order, &oracle, &run.rep, &sched, &table, false,
            )?
        }
        SamplerKind::Euler => euler_sample(&x1, &grid, &oracle, &sched, false)?,
        SamplerKind::Ddim => ddim_sample(&x1, &grid, &oracle, &sched, false)?,
    };
    let mut body = header(ctx, seed);
    let dim = result.terminal[0].len();
    let cols: Vec<String> = (0..dim).map(|d| format!("x{d}")).collect();
    body.push_str(&cols.join(","));
    body.push('\n');
    for row in &result.terminal {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        body.push_str(&cells.join(","));
        body.push('\n');
    }
    let path = out_path(ctx, "samples.csv", flags.out.clone());
    write_atomic(&path, &body)?;
    Ok(path)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config_hash: &'a str,
    #[serde(flatten)]
    report: &'a ConvergenceReport,
}

/// `converge`: run the configured sampler sweep and write both report files.
pub fn cmd_converge(
    ctx: &Context,
    profile_path: Option<&Path>,
) -> Result<(PathBuf, PathBuf), CliError> {
    let sched = ctx.config.schedule()?;
    let mixture = ctx.config.mixture()?;
    if ctx.config.samplers.is_empty() {
        return Err(CliError::Config(
            "converge requires at least one [[samplers]] entry".into(),
        ));
    }
    let profile = if ctx.config.needs_profile() {
        Some(load_or_collect_profile(ctx, profile_path)?)
    } else {
        None
    };
    let specs = ctx.config.sampler_specs(profile.as_ref())?;
    let study = StudyConfig {
        nfe_list: ctx.config.sampling.nfe_list.clone(),
        batch: ctx.config.sampling.batch,
        seed: ctx.config.sampling.seed,
        n_projections: ctx.config.sampling.n_projections,
        quadrature_subdivisions: ctx.config.sampling.quadrature_subdivisions,
    };
    let report = convergence_study(&mixture, &sched, &specs, &study)?;

    let mut csv = header(ctx, report.seed);
    csv.push_str("sampler,reparam,nfe,metric,value,seed\n");
    for series in &report.series {
        for p in &series.points {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                series.sampler, series.reparam, p.nfe, p.metric, p.value, report.seed
            );
        }
    }
    let csv_path = out_path(ctx, "report.csv", None);
    write_atomic(&csv_path, &csv)?;

    let json = serde_json::to_string_pretty(&ReportFile {
        config_hash: &ctx.config_hash,
        report: &report,
    })
    .expect("report serialisation");
    let json_path = out_path(ctx, "report.json", None);
    write_atomic(&json_path, &json)?;
    Ok((csv_path, json_path))
}

/// `curves`: write the diagnostic `(t, s_bar, sigma, product)` table.
pub fn cmd_curves(
    ctx: &Context,
    profile_path: Option<&Path>,
    out: Option<PathBuf>,
) -> Result<PathBuf, CliError> {
    let sched = ctx.config.schedule()?;
    let profile = load_or_collect_profile(ctx, profile_path)?;
    let rows = score_curves(&sched, &profile)?;
    let mut body = header(ctx, ctx.config.profile.seed);
    body.push_str("t,s_bar,sigma,product\n");
    for r in &rows {
        let _ = writeln!(body, "{},{},{},{}", r.t, r.s_bar, r.sigma, r.product);
    }
    let path = out_path(ctx, "curves.csv", out);
    write_atomic(&path, &body)?;
    Ok(path)
}
