use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use oqw_core::analysis::{
    analytic_sigma, invariant_state, kernel_image_split, mean_vector, mix_drifts,
    poisson_identity_check, solve_poisson, DriftVector, SigmaInput, SigmaReading,
    FIXED_POINT_TOL,
};
use oqw_core::channel::superop_matrix;
use oqw_core::class::{require_valid, validate_class, VertexClass};
use oqw_core::evolution::{
    cross_section, field_moments, init_delta, write_cross_section_csv, Evolution, Window,
};
use oqw_core::lattice::{ClassField, SiteClassifier};
use oqw_core::matrix::TOL_COMPLETENESS;
use oqw_core::presets::random_density;
use oqw_core::reduction::{compose_paths, equivalence_check, is_reducible, reduced_drift};
use oqw_core::rng::{derive_seed, site_uniform, RngStream};
use oqw_core::stats::{clt_report, trajectory_statistics, CltThresholds, TrajectoryStatistics};
use oqw_core::trajectory::{run_ensemble, write_endpoints_csv};
use oqw_core::walk::CompiledWalk;
use oqw_core::OqwError;

use crate::config::{ClassFile, ExperimentConfig, FieldSpec, LoadedConfig};
use crate::error::{CliError, CliResult};
use crate::output::{render, to_value, OutDir};

/// Open quantum walk experiments.
#[derive(Debug, Parser)]
#[command(name = "oqw", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Completeness report for every class.
    Validate(Common),
    /// Invariant state, drift and eigenvalue-1 multiplicity per class.
    Invariant(Common),
    /// Poisson operators and martingale identity residuals.
    Poisson(Common),
    /// Reducibility check, reduced walk export and equivalence report.
    Reduce(Common),
    /// Exact evolution with marginals and cross-sections.
    Evolve(EvolveArgs),
    /// Monte Carlo trajectory statistics.
    Simulate(Common),
    /// Runs the simulation and checks drift and normality of the endpoints.
    CltCheck(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated snapshot steps; overrides `run.evolve_steps`.
    #[arg(long, value_delimiter = ',')]
    pub steps: Vec<usize>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Invariant(_) => "invariant",
            Command::Poisson(_) => "poisson",
            Command::Reduce(_) => "reduce",
            Command::Evolve(_) => "evolve",
            Command::Simulate(_) => "simulate",
            Command::CltCheck(_) => "clt-check",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Evolve(a) => &a.common,
            Command::Validate(c)
            | Command::Invariant(c)
            | Command::Poisson(c)
            | Command::Reduce(c)
            | Command::Simulate(c)
            | Command::CltCheck(c) => c,
        }
    }
}

struct Ctx {
    command: &'static str,
    loaded: LoadedConfig,
    out: OutDir,
    seed: u64,
}

impl Ctx {
    fn config(&self) -> &ExperimentConfig {
        &self.loaded.config
    }

    fn envelope(&self, result: Value) -> Value {
        json!({
            "command": self.command,
            "config_sha256": self.loaded.sha256,
            "seed": self.seed,
            "result": result,
        })
    }

    fn finish(&self, result: Value) -> CliResult<()> {
        self.out.write_json("summary.json", &self.envelope(result))?;
        Ok(())
    }
}

/// Runs one command; artifacts go to `--out`.
pub fn execute(command: &Command) -> CliResult<()> {
    let common = command.common();
    let loaded = LoadedConfig::load(&common.config)?;
    let out = OutDir::create(&common.out)?;
    let seed = common.seed.unwrap_or(loaded.config.run.seed);
    let ctx = Ctx {
        command: command.name(),
        loaded,
        out,
        seed,
    };
    let work = || match command {
        Command::Validate(_) => validate(&ctx),
        Command::Invariant(_) => invariant(&ctx),
        Command::Poisson(_) => poisson(&ctx),
        Command::Reduce(_) => reduce(&ctx),
        Command::Evolve(a) => evolve(&ctx, &a.steps),
        Command::Simulate(_) => simulate(&ctx),
        Command::CltCheck(_) => clt_check(&ctx),
    };
    match common.threads {
        None => work(),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(work),
    }
}

/// Parses arguments, runs, and reports errors; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let record = e.record();
            eprint!("{}", render(&record));
            if let Ok(out) = OutDir::create(&cli.command.common().out) {
                let _ = out.write_json("error.json", &record);
            }
            e.exit_code()
        }
    }
}

fn validate(ctx: &Ctx) -> CliResult<()> {
    let classes = ctx.config().classes()?;
    let reports = classes
        .iter()
        .map(|c| validate_class(c, TOL_COMPLETENESS))
        .collect::<Result<Vec<_>, _>>()?;
    let passed = reports.iter().all(|r| r.passed);
    ctx.finish(json!({
        "classes": to_value(&reports),
        "passed": passed,
    }))?;
    for class in &classes {
        require_valid(class)?;
    }
    ctx.config().walk()?;
    Ok(())
}

fn class_invariant(class: &VertexClass) -> CliResult<(Value, DriftVector, usize)> {
    let inv = invariant_state(class, FIXED_POINT_TOL)?;
    let m = mean_vector(class, &inv.rho_inf)?;
    let split = kernel_image_split(&superop_matrix(class, false));
    let value = json!({
        "label": class.label(),
        "rho_inf": to_value(&inv.rho_inf),
        "fixed_point_residual": inv.fixed_point_residual,
        "eigenvalue_one_multiplicity": inv.eigenvalue_one_multiplicity,
        "drift": to_value(&m),
        "kernel_image": to_value(&split),
    });
    Ok((value, m, inv.eigenvalue_one_multiplicity))
}

fn weighted_drift(
    cfg: &ExperimentConfig,
    field: &ClassField,
    drifts: &[(String, DriftVector)],
) -> CliResult<DriftVector> {
    let weights = cfg.class_weights(field);
    let pairs: Vec<(DriftVector, f64)> = weights
        .iter()
        .map(|(label, w)| {
            let d = drifts
                .iter()
                .find(|(l, _)| l == label)
                .map(|(_, d)| d.clone())
                .ok_or_else(|| CliError::Config(format!("class `{label}` is not defined")))?;
            Ok((d, *w))
        })
        .collect::<CliResult<_>>()?;
    Ok(mix_drifts(&pairs)?)
}

fn invariant(ctx: &Ctx) -> CliResult<()> {
    let cfg = ctx.config();
    let (table, walk) = cfg.walk()?;
    let mut entries = Vec::new();
    let mut drifts = Vec::new();
    let mut non_unique = None;
    for class in table.iter() {
        let (value, m, multiplicity) = class_invariant(class)?;
        entries.push(value);
        drifts.push((class.label().to_string(), m));
        if multiplicity != 1 && non_unique.is_none() {
            non_unique = Some(OqwError::NonUniqueInvariantState {
                label: class.label().to_string(),
                multiplicity,
            });
        }
    }
    let mixed = weighted_drift(cfg, walk.field(), &drifts)?;
    ctx.finish(json!({
        "classes": entries,
        "class_densities": to_value(&walk.field().densities()),
        "mixed_drift": to_value(&mixed),
    }))?;
    match non_unique {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn poisson(ctx: &Ctx) -> CliResult<()> {
    let cfg = ctx.config();
    let (table, _) = cfg.walk()?;
    let directions = cfg.directions();
    let samples = cfg.analysis.identity_samples;
    let mut entries = Vec::new();
    for (ci, class) in table.iter().enumerate() {
        let inv = invariant_state(class, FIXED_POINT_TOL)?;
        for (li, l) in directions.iter().enumerate() {
            let p = solve_poisson(class, &inv.rho_inf, l)?;
            let stream = derive_seed(ctx.seed, ((ci as u64) << 32) | li as u64);
            let mut rng = RngStream::new(stream, 0).rng();
            let mut worst: f64 = 0.0;
            for s in 0..samples {
                let rho = random_density(&mut rng, class.internal_dim());
                let x: Vec<f64> = (0..cfg.dimension)
                    .map(|a| 20.0 * site_uniform(stream, &[s as i64, a as i64]) - 10.0)
                    .collect();
                worst = worst.max(poisson_identity_check(class, &p, &rho, &x, l)?);
            }
            let sigma = analytic_sigma(
                &[SigmaInput {
                    class,
                    probability: 1.0,
                    poisson: &p,
                    rho_inf: &inv.rho_inf,
                }],
                l,
                &inv.rho_inf,
                SigmaReading::Additive,
            )?;
            entries.push(json!({
                "label": class.label(),
                "direction": l,
                "poisson": to_value(&p),
                "identity_samples": samples,
                "identity_max_deviation": worst,
                "sigma_squared": to_value(&sigma),
            }));
        }
    }
    ctx.finish(json!({ "operators": entries }))
}

fn reduce(ctx: &Ctx) -> CliResult<()> {
    let cfg = ctx.config();
    let spec = cfg
        .reduction
        .as_ref()
        .ok_or_else(|| CliError::Config("`reduction` block is required".into()))?;
    let (_, walk) = cfg.walk()?;
    let reducible = is_reducible(walk.field(), &spec.base_class, spec.path_length)?;
    if !reducible {
        return Err(OqwError::NotReducible(format!(
            "not every {}-step path from `{}` returns to `{}`",
            spec.path_length, spec.base_class, spec.base_class
        ))
        .into());
    }
    let reduced = compose_paths(&walk, &spec.base_class, spec.path_length)?;
    let drift = reduced_drift(&reduced)?;
    let rho0 = cfg.initial_density()?;
    let equivalence = equivalence_check(&walk, &reduced, &rho0, spec.equivalence_steps)?;
    let class = reduced.to_class(format!("{}^{}", spec.base_class, spec.path_length))?;
    let file = ClassFile::from_class(&class);
    let path = ctx.out.write_json("reduced_class.json", &to_value(&file))?;
    let reloaded = ClassFile::load(&path)?.build()?;
    let reload_lossless = reloaded == class;
    let revalidated = validate_class(&reloaded, TOL_COMPLETENESS)?;
    ctx.finish(json!({
        "reducible": reducible,
        "base_class": spec.base_class,
        "path_length": spec.path_length,
        "operator_count": reduced.operators.len(),
        "nonzero_operator_count": reduced.nonzero_count(),
        "distinct_displacements": reduced.distinct_displacements(),
        "completeness_deviation": reduced.completeness_deviation(),
        "drift": to_value(&drift),
        "equivalence": to_value(&equivalence),
        "export": {
            "file": "reduced_class.json",
            "reload_lossless": reload_lossless,
            "validation": to_value(&revalidated),
        },
    }))?;
    if !equivalence.passed {
        return Err(OqwError::EquivalenceMismatch {
            deviation: equivalence.max_deviation,
        }
        .into());
    }
    Ok(())
}

fn evolve(ctx: &Ctx, override_steps: &[usize]) -> CliResult<()> {
    let cfg = ctx.config();
    let (_, walk) = cfg.walk()?;
    let rho0 = cfg.initial_density()?;
    let x0 = cfg.initial_position()?;
    let mut steps = if override_steps.is_empty() {
        cfg.run.evolve_steps.clone()
    } else {
        override_steps.to_vec()
    };
    if steps.is_empty() {
        steps.push(cfg.run.steps);
    }
    steps.sort_unstable();
    steps.dedup();
    let last = *steps.last().expect("nonempty");
    let radius = cfg
        .run
        .window_radius
        .unwrap_or(walk.max_step() * (last as i64 + 1));
    let window = Window::centered(&x0, radius)?;
    let mut ev = Evolution::new(&walk, init_delta(&rho0, &x0, window)?)?;
    let section_index = x0.iter().skip(1).copied().next().unwrap_or(0);
    let mut snapshots = Vec::new();
    for &k in &steps {
        ev.run(k - ev.state().step())?;
        let p = ev.state().marginal();
        let marginal_file = format!("marginal_n{k}.csv");
        ctx.out.write_with(&marginal_file, |w| p.write_csv(w))?;
        let section = cross_section(&p, 0, section_index)?;
        let section_file = format!("xsection_n{k}.csv");
        ctx.out
            .write_with(&section_file, |w| write_cross_section_csv(&section, w))?;
        let moments = field_moments(&p);
        snapshots.push(json!({
            "step": k,
            "total_trace": ev.state().total_trace(),
            "cumulative_trace_drift": ev.cumulative_drift(),
            "min_eigenvalue": ev.state().min_eigenvalue(),
            "support_l1_radius": ev.state().support_l1_radius(&x0),
            "moments": to_value(&moments),
            "marginal_file": marginal_file,
            "cross_section_file": section_file,
            "cross_section_axis": 0,
            "cross_section_index": section_index,
        }));
    }
    ctx.finish(json!({
        "window": { "lower": window.lower(), "upper": window.upper() },
        "initial_position": x0,
        "max_step_trace_drift": ev.max_step_drift(),
        "snapshots": snapshots,
    }))
}

fn sample(ctx: &Ctx, walk: &CompiledWalk) -> CliResult<TrajectoryStatistics> {
    let cfg = ctx.config();
    let rho0 = cfg.initial_density()?;
    let x0 = cfg.initial_position()?;
    let endpoints = run_ensemble(walk, &rho0, &x0, cfg.run.steps, cfg.run.trajectories, ctx.seed)?;
    if cfg.run.dump_endpoints {
        ctx.out
            .write_with("endpoints.csv", |w| write_endpoints_csv(&endpoints, w))?;
    }
    let shifted: Vec<Vec<i64>> = endpoints
        .iter()
        .map(|e| e.iter().zip(&x0).map(|(a, b)| a - b).collect())
        .collect();
    Ok(trajectory_statistics(&shifted, cfg.run.steps)?)
}

fn simulate(ctx: &Ctx) -> CliResult<()> {
    let (_, walk) = ctx.config().walk()?;
    let stats = sample(ctx, &walk)?;
    ctx.finish(json!({
        "statistics": to_value(&stats),
        "endpoints_file": ctx.config().run.dump_endpoints.then_some("endpoints.csv"),
    }))
}

fn clt_check(ctx: &Ctx) -> CliResult<()> {
    let cfg = ctx.config();
    let (table, walk) = cfg.walk()?;
    let thresholds = CltThresholds::from(&cfg.thresholds);
    let field = walk.field();
    let reduction = match (&cfg.reduction, field.is_periodic()) {
        (Some(spec), true) if is_reducible(field, &spec.base_class, spec.path_length)? => {
            Some(reduced_drift(&compose_paths(&walk, &spec.base_class, spec.path_length)?)?)
        }
        _ => None,
    };
    let homogeneous = field.labels().len() == 1 || matches!(cfg.field, FieldSpec::Homogeneous { .. });
    let mut extra = serde_json::Map::new();
    let target = if let Some(drift) = &reduction {
        extra.insert("mode".into(), json!("reducible"));
        extra.insert("reduced_drift".into(), to_value(drift));
        drift.per_original_step.clone()
    } else {
        let mut drifts = Vec::new();
        for class in table.iter() {
            let inv = invariant_state(class, FIXED_POINT_TOL)?;
            drifts.push((class.label().to_string(), mean_vector(class, &inv.rho_inf)?));
        }
        extra.insert(
            "mode".into(),
            json!(if homogeneous { "homogeneous" } else { "mixed" }),
        );
        weighted_drift(cfg, field, &drifts)?
    };
    let stats = sample(ctx, &walk)?;
    if let Some(drift) = &reduction {
        // Displacement per reduced step against both normalizations.
        let l = drift.path_length as f64;
        extra.insert(
            "per_reduced_step".into(),
            json!({
                "estimate": stats.mean_per_step.iter().map(|m| m * l).collect::<Vec<_>>(),
                "target": drift.per_reduced_step.components,
            }),
        );
    }
    if homogeneous {
        let class = walk.class(0);
        let inv = invariant_state(class, FIXED_POINT_TOL)?;
        let mut sigmas = Vec::new();
        for l in cfg.directions() {
            let p = solve_poisson(class, &inv.rho_inf, &l)?;
            let sigma = analytic_sigma(
                &[SigmaInput {
                    class,
                    probability: 1.0,
                    poisson: &p,
                    rho_inf: &inv.rho_inf,
                }],
                &l,
                &inv.rho_inf,
                SigmaReading::Additive,
            )?;
            let empirical = stats.normalized_variance_along(&l);
            sigmas.push(json!({
                "direction": l,
                "analytic": sigma.value,
                "empirical": empirical,
                "relative_error": if sigma.value > 0.0 {
                    json!((empirical - sigma.value).abs() / sigma.value)
                } else {
                    Value::Null
                },
            }));
        }
        extra.insert("variance".into(), Value::Array(sigmas));
    }
    let report = clt_report(&stats, &target, &thresholds)?;
    extra.insert("target_drift".into(), to_value(&target));
    extra.insert("statistics".into(), to_value(&stats));
    extra.insert("report".into(), to_value(&report));
    extra.insert("passed".into(), json!(report.passed));
    ctx.finish(Value::Object(extra))
}
