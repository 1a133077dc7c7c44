use std::path::Path;
use std::time::Instant;

use modmf_core::chain::{sample_chain, GeneratorMatrix};
use modmf_core::control::{
    feedback_discrepancy, martingale_fit, solve_adjoint, solve_lq_oracle, verify_sufficient_conditions, AdjointOptions,
    AdjointTriple, FeedbackControl, MeanFlowStart, RegressionBasis, VerifyOptions,
};
use modmf_core::mean_field::{solve_mean_field, MeanFieldCurves, PicardOptions};
use modmf_core::metrics::{chaos_ladder, fit_chaos_rate, RateFit};
use modmf_core::model::{check_assumptions, ModelFile, ModelSpec};
use modmf_core::nash::{gap_scaling, nash_gap, GapScalingOutcome};
use modmf_core::par;
use modmf_core::particle::{agent_cost, ensemble_moments, simulate_replication, InitialLaw, Profile, TimeGrid};
use modmf_core::rng::{module, Driver, StreamKey};
use modmf_core::stats::{self, Estimate};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, FeedbackSpec, Kind};
use crate::error::{HarnessError, Result};
use crate::output::{self, csv_artifact, json_artifact, num, Artifact};
use crate::plot;

/// Name of the manifest written next to the outputs.
pub const MANIFEST: &str = "manifest.json";
/// Name of the resolved configuration written next to the outputs.
pub const RESOLVED_CONFIG: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub stream: String,
    pub module_tag: u64,
    /// Hash-chain rule producing every seed of the stream.
    pub derivation: String,
    /// Seeds of replication 0, agent 0 per driver (initial, brownian, chain, aux).
    pub first_seeds: [u64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: Kind,
    pub config_hash: String,
    pub version: String,
    pub wall_time_seconds: f64,
    pub threads: usize,
    pub master_seed: u64,
    pub seeds: Vec<SeedRecord>,
    pub outputs: Vec<OutputRecord>,
    /// Inputs needed to rerun.
    pub config: ExperimentConfig,
}

pub fn version() -> String {
    format!("modmf {}", env!("CARGO_PKG_VERSION"))
}

/// Tabulated affine gains, the `table` feedback format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsTable {
    pub horizon: f64,
    pub n_steps: usize,
    pub regimes: usize,
    /// `(n_steps + 1) × regimes`, time-major.
    pub k0: Vec<f64>,
    pub k1: Vec<f64>,
}

struct Outcome {
    artifacts: Vec<Artifact>,
    streams: Vec<(&'static str, u64)>,
    /// Outputs are written, but the run reports this error.
    failure: Option<HarnessError>,
}

impl Outcome {
    fn ok(artifacts: Vec<Artifact>, streams: Vec<(&'static str, u64)>) -> Self {
        Self { artifacts, streams, failure: None }
    }
}

/// Runs the experiment in `cfg`, writes its outputs and the manifest into
/// `cfg.out_dir` and returns the manifest.
pub fn run(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| HarnessError::validation(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| dispatch(cfg))?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| HarnessError::io(&cfg.out_dir, e))?;
    let mut files = vec![json_artifact(RESOLVED_CONFIG, cfg)?];
    files.extend(outcome.artifacts);
    let mut outputs = Vec::with_capacity(files.len());
    for a in &files {
        output::write_file(&cfg.out_dir.join(&a.name), &a.bytes)?;
        outputs.push(OutputRecord {
            file: a.name.clone(),
            sha256: output::sha256_hex(&a.bytes),
            bytes: a.bytes.len() as u64,
        });
    }
    let seeds = outcome
        .streams
        .iter()
        .map(|&(name, tag)| {
            let key = StreamKey::new(cfg.seed, tag);
            SeedRecord {
                stream: name.into(),
                module_tag: tag,
                derivation: "splitmix64 chain over (master, module_tag, replication, agent, driver)".into(),
                first_seeds: [Driver::Initial, Driver::Brownian, Driver::Chain, Driver::Aux].map(|d| key.seed(d)),
            }
        })
        .collect();
    let manifest = RunManifest {
        kind: cfg.kind,
        config_hash: cfg.hash(),
        version: version(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        threads: cfg.threads,
        master_seed: cfg.seed,
        seeds,
        outputs,
        config: cfg.clone(),
    };
    output::write_file(&cfg.out_dir.join(MANIFEST), &output::json_bytes(&manifest)?)?;
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

fn dispatch(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.kind {
        Kind::Chain => chain(cfg),
        Kind::ModelCheck => model_check(cfg),
        Kind::Particles => particles(cfg),
        Kind::Meanfield => meanfield(cfg),
        Kind::Chaos => chaos(cfg),
        Kind::Adjoint => adjoint(cfg),
        Kind::VerifyMp => verify_mp(cfg),
        Kind::LqOracle => lq_oracle(cfg),
        Kind::Nash => nash(cfg),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::validation(format!("{what} {}: {e}", path.display())))
}

struct Loaded {
    file: ModelFile,
    spec: ModelSpec,
    grid: TimeGrid,
    init: InitialLaw,
}

fn load(cfg: &ExperimentConfig) -> Result<Loaded> {
    let path = cfg.model.as_deref().ok_or_else(|| HarnessError::validation("missing `model`"))?;
    let file: ModelFile = read_json(path, "model file")?;
    let mut spec = file.build()?;
    if let Some(i) = cfg.initial_regime {
        spec = spec.with_chain(spec.generator().clone(), spec.modulation().to_vec(), i - 1)?;
    }
    let grid = TimeGrid::new(cfg.horizon, cfg.n_steps)?;
    Ok(Loaded { init: file.initial_law, file, spec, grid })
}

fn feedback(cfg: &ExperimentConfig, m: &Loaded) -> Result<FeedbackControl> {
    let d = m.spec.regimes();
    let spec = cfg.feedback.clone().unwrap_or(match m.file.lq_params() {
        Some(_) => FeedbackSpec::Riccati,
        None => FeedbackSpec::Constant { value: 0.0 },
    });
    Ok(match spec {
        FeedbackSpec::Constant { value } => FeedbackControl::constant(value),
        FeedbackSpec::Affine { k0, k1 } => {
            if k0.len() != d || k1.len() != d {
                return Err(HarnessError::validation(format!("affine feedback needs {d} gains per coefficient")));
            }
            let rep = |v: Vec<f64>| v.iter().chain(&v).copied().collect::<Vec<_>>();
            FeedbackControl::affine(cfg.horizon, 1, d, rep(k0), rep(k1))?.with_label("affine")
        }
        FeedbackSpec::Riccati => riccati(m)?.feedback()?,
        FeedbackSpec::Table { path } => {
            let t: GainsTable = read_json(&path, "gains table")?;
            if t.regimes != d {
                return Err(HarnessError::validation(format!("gains table has {} regimes, model has {d}", t.regimes)));
            }
            FeedbackControl::affine(t.horizon, t.n_steps, t.regimes, t.k0, t.k1)?.with_label("table")
        }
    })
}

fn riccati(m: &Loaded) -> Result<modmf_core::control::RiccatiSolution> {
    let lq = m.file.lq_params().ok_or_else(|| HarnessError::validation("the Riccati oracle needs an `lq` model"))?;
    let start = MeanFlowStart { mean_x0: m.init.mean(), regime: m.spec.initial_regime() };
    Ok(solve_lq_oracle(&lq, m.spec.generator(), m.spec.modulation(), &m.grid, start, 4)?)
}

fn picard(cfg: &ExperimentConfig) -> PicardOptions {
    PicardOptions { copies: cfg.paths, tol: cfg.tol, max_iters: cfg.max_iters, damping: cfg.damping, seed: cfg.seed }
}

/// Mean-field curves under `fb`, required to have converged.
fn converged_curves(cfg: &ExperimentConfig, m: &Loaded, fb: &FeedbackControl) -> Result<MeanFieldCurves> {
    let (curves, report) = solve_mean_field(&m.spec, fb, &m.grid, &m.init, &picard(cfg))?;
    if !report.converged {
        return Err(HarnessError::Numerical(format!(
            "mean-field fixed point did not reach tol {:e} in {} iterations (last residual {:e})",
            cfg.tol,
            report.iterates,
            report.residuals.last().copied().unwrap_or(f64::NAN)
        )));
    }
    Ok(curves)
}

fn chain(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (gen, i0) = match &cfg.generator {
        Some(p) => (read_json::<GeneratorMatrix>(p, "generator")?, cfg.initial_regime.unwrap_or(1) - 1),
        None => {
            let m = load(cfg)?;
            (m.spec.generator().clone(), m.spec.initial_regime())
        }
    };
    gen.check_state(i0)?;
    let d = gen.dim();
    let key = StreamKey::new(cfg.seed, module::CHAIN);
    let paths = par::map_range(cfg.samples, |p| {
        sample_chain(&gen, i0, cfg.horizon, &mut key.agent(p as u64).rng(Driver::Chain))
    })
    .into_iter()
    .collect::<modmf_core::Result<Vec<_>>>()?;
    let grid = TimeGrid::new(cfg.horizon, cfg.n_steps)?;
    let mut rows = Vec::new();
    let mut max_tv = 0.0f64;
    for t in grid.points() {
        let mut counts = vec![0usize; d];
        for p in &paths {
            counts[p.state_at(t)] += 1;
        }
        let exact = gen.marginal(i0, t)?;
        let mut tv = 0.0;
        for s in 0..d {
            let freq = counts[s] as f64 / paths.len() as f64;
            tv += 0.5 * (freq - exact[s]).abs();
            rows.push(vec![num(t), (s + 1).to_string(), num(freq), num(exact[s])]);
        }
        max_tv = max_tv.max(tv);
    }
    let jumps: Vec<f64> = paths.iter().map(|p| p.n_jumps() as f64).collect();
    let zero = paths.iter().filter(|p| p.n_jumps() == 0).count() as f64 / paths.len() as f64;
    let mut artifacts = vec![
        csv_artifact("chain_frequencies.csv", &["t", "state", "frequency", "exact"], rows)?,
        json_artifact(
            "chain_summary.json",
            &json!({
                "states": d,
                "initial_state": i0 + 1,
                "samples": paths.len(),
                "horizon": cfg.horizon,
                "mean_jumps": stats::estimate(&jumps),
                "zero_jump_fraction": zero,
                "max_total_variation": max_tv,
            }),
        )?,
    ];
    if cfg.per_path {
        let rows = paths.iter().enumerate().flat_map(|(j, p)| {
            std::iter::once(vec![j.to_string(), num(0.0), (p.initial_state + 1).to_string()]).chain(
                p.jump_times
                    .iter()
                    .zip(&p.jump_targets)
                    .map(move |(t, s)| vec![j.to_string(), num(*t), (s + 1).to_string()]),
            )
        });
        artifacts.push(csv_artifact("chain_paths.csv", &["path", "t", "state"], rows)?);
    }
    Ok(Outcome::ok(artifacts, vec![("chain", module::CHAIN)]))
}

fn model_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let m = load(cfg)?;
    let report = check_assumptions(&m.spec, cfg.horizon, cfg.samples, cfg.seed)?;
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("assumption `{}` failed: {}", c.id, c.detail))
        .collect();
    Ok(Outcome {
        artifacts: vec![json_artifact("assumptions.json", &report)?],
        streams: vec![("assumptions", module::ASSUMPTIONS)],
        failure: (!failed.is_empty()).then_some(HarnessError::Validation(failed)),
    })
}

fn particles(cfg: &ExperimentConfig) -> Result<Outcome> {
    let m = load(cfg)?;
    let fb = feedback(cfg, &m)?;
    let key = StreamKey::new(cfg.seed, module::PARTICLES);
    let ens = (0..cfg.replications)
        .map(|r| {
            simulate_replication(&m.spec, Profile::symmetric(&fb), cfg.n, &m.grid, &m.init, key.replication(r as u64))
        })
        .collect::<modmf_core::Result<Vec<_>>>()?;
    let moments = ensemble_moments(&ens);
    let costs = ens.iter().map(|e| agent_cost(e, &m.spec, 0)).collect::<modmf_core::Result<Vec<_>>>()?;
    let mut artifacts = vec![
        csv_artifact(
            "moments.csv",
            &["t", "mean", "second_moment", "se_mean"],
            moments.iter().map(|r| vec![num(r.t), num(r.mean), num(r.second_moment), num(r.se_mean)]),
        )?,
        json_artifact(
            "particles_summary.json",
            &json!({
                "n": cfg.n,
                "replications": cfg.replications,
                "feedback": fb.label(),
                "agent1_cost": stats::estimate(&costs),
                "clamped": ens.iter().map(|e| e.clamped()).sum::<usize>(),
            }),
        )?,
    ];
    if cfg.per_path {
        let steps = m.grid.n_steps();
        let rows = ens.iter().enumerate().flat_map(|(r, e)| {
            (0..e.n()).flat_map(move |i| {
                (0..=steps).map(move |k| {
                    vec![
                        r.to_string(),
                        (i + 1).to_string(),
                        num(e.grid().t(k)),
                        num(e.state(i, k)),
                        (e.regime(i, k) + 1).to_string(),
                        num(e.control(i, k)),
                    ]
                })
            })
        });
        artifacts.push(csv_artifact("particles.csv", &["replication", "agent", "t", "x", "regime", "u"], rows)?);
    }
    Ok(Outcome::ok(artifacts, vec![("particles", module::PARTICLES)]))
}

fn meanfield(cfg: &ExperimentConfig) -> Result<Outcome> {
    let m = load(cfg)?;
    let fb = feedback(cfg, &m)?;
    let (c, report) = solve_mean_field(&m.spec, &fb, &m.grid, &m.init, &picard(cfg))?;
    let failure = (!report.converged).then(|| {
        HarnessError::Numerical(format!(
            "mean-field fixed point did not reach tol {:e} in {} iterations (last residual {:e})",
            cfg.tol,
            report.iterates,
            report.residuals.last().copied().unwrap_or(f64::NAN)
        ))
    });
    let rows = (0..c.len()).map(|k| {
        vec![
            num(m.grid.t(k)),
            num(c.m_psi[k]),
            num(c.m_phi[k]),
            num(c.m_varphi[k]),
            num(c.se_psi[k]),
            num(c.se_phi[k]),
            num(c.se_varphi[k]),
        ]
    });
    let artifacts = vec![
        csv_artifact("curves.csv", &["t", "m_psi", "m_phi", "m_varphi", "se_psi", "se_phi", "se_varphi"], rows)?,
        json_artifact(
            "meanfield_report.json",
            &json!({
                "converged": report.converged,
                "iterates": report.iterates,
                "residuals": report.residuals,
                "ratios": report.ratios(),
                "tolerance": report.tolerance,
                "damping": report.damping,
                "copies": report.copies,
                "m_chi_t": c.m_chi_t,
                "se_chi_t": c.se_chi_t,
                "feedback": fb.label(),
            }),
        )?,
    ];
    Ok(Outcome { artifacts, streams: vec![("mean_field", module::MEAN_FIELD)], failure })
}

fn chaos(cfg: &ExperimentConfig) -> Result<Outcome> {
    let m = load(cfg)?;
    let fb = feedback(cfg, &m)?;
    let curves = converged_curves(cfg, &m, &fb)?;
    let ests = chaos_ladder(&m.spec, &fb, &curves, &cfg.ladder, &m.grid, &m.init, cfg.replications, cfg.seed)?;
    let errors: Vec<Estimate> = ests.iter().map(|e| Estimate { mean: e.error, se: e.se }).collect();
    let fit = match fit_chaos_rate(&cfg.ladder, &errors) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("{e}; fitting anyway");
            RateFit::fit(&cfg.ladder, &errors)?
        }
    };
    let mut artifacts = vec![
        csv_artifact(
            "chaos.csv",
            &["n", "error", "se", "mean_error", "mean_error_se"],
            ests.iter()
                .map(|e| vec![e.n.to_string(), num(e.error), num(e.se), num(e.mean_error.mean), num(e.mean_error.se)]),
        )?,
        json_artifact("rate_fit.json", &fit)?,
    ];
    if cfg.plot {
        artifacts.push(Artifact { name: "rate_plot.svg".into(), bytes: plot::rate_plot_svg(&fit)?.into_bytes() });
    }
    Ok(Outcome::ok(
        artifacts,
        vec![("mean_field", module::MEAN_FIELD), ("chaos", module::CHAOS), ("bootstrap", module::BOOTSTRAP)],
    ))
}

fn solve_triple(cfg: &ExperimentConfig, m: &Loaded, fb: &FeedbackControl) -> Result<(MeanFieldCurves, AdjointTriple)> {
    let curves = converged_curves(cfg, m, fb)?;
    let opts = AdjointOptions {
        basis: RegressionBasis { degree: cfg.basis_degree },
        ..AdjointOptions::new(cfg.paths, cfg.seed)
    };
    let triple = solve_adjoint(&m.spec, fb, &curves, &m.grid, &m.init, &opts)?;
    Ok((curves, triple))
}

fn diagnostics_csv(triple: &AdjointTriple) -> Result<Artifact> {
    let mut diags = triple.diagnostics.clone();
    diags.sort_by_key(|d| d.step);
    csv_artifact(
        "adjoint_diagnostics.csv",
        &[
            "step",
            "t",
            "r_squared",
            "condition",
            "reduced_basis",
            "mean_p",
            "mean_q",
            "mf_drift",
            "mf_diffusion",
            "mf_cost",
        ],
        diags.iter().map(|d| {
            vec![
                d.step.to_string(),
                num(d.t),
                num(d.r_squared),
                num(d.condition),
                d.reduced_basis.to_string(),
                num(d.mean_p),
                num(d.mean_q),
                num(d.mf_terms[0]),
                num(d.mf_terms[1]),
                num(d.mf_terms[2]),
            ]
        }),
    )
}

fn adjoint(cfg: &ExperimentConfig) -> Result<Outcome> {
    let m = load(cfg)?;
    let fb = feedback(cfg, &m)?;
    let (curves, triple) = solve_triple(cfg, &m, &fb)?;
    let fit = martingale_fit(&m.spec, &triple, &curves);
    let discrepancy = feedback_discrepancy(&m.spec, &triple, &curves, &fb)?;
    let artifacts = vec![
        diagnostics_csv(&triple)?,
        json_artifact(
            "adjoint_summary.json",
            &json!({
                "paths": cfg.paths,
                "basis_degree": cfg.basis_degree,
                "basis_reductions": triple.basis_reductions,
                "martingale_fit": fit,
                "feedback": fb.label(),
                "feedback_discrepancy": discrepancy,
                "clamped": triple.forward.clamped,
            }),
        )?,
    ];
    Ok(Outcome::ok(artifacts, vec![("mean_field", module::MEAN_FIELD), ("adjoint", module::ADJOINT)]))
}

fn verify_mp(cfg: &ExperimentConfig) -> Result<Outcome> {
    let m = load(cfg)?;
    let fb = feedback(cfg, &m)?;
    let (curves, triple) = solve_triple(cfg, &m, &fb)?;
    let mut rng = StreamKey::new(cfg.seed, module::VERIFY).rng(Driver::Aux);
    let comparisons = fb.random_perturbations(cfg.comparisons, &[0.1, 0.5, 1.0], &mut rng);
    let opts = VerifyOptions {
        cost_copies: cfg.paths,
        integrability_paths: cfg.paths.min(10_000),
        picard: picard(cfg),
        seed: cfg.seed,
        ..Default::default()
    };
    let report = verify_sufficient_conditions(&m.spec, &fb, &triple, &curves, &comparisons, &m.grid, &m.init, &opts)?;
    if !report.all_passed {
        log::warn!("verification: some conditions failed; see verification.json");
    }
    let artifacts = vec![diagnostics_csv(&triple)?, json_artifact("verification.json", &report)?];
    Ok(Outcome::ok(
        artifacts,
        vec![("mean_field", module::MEAN_FIELD), ("adjoint", module::ADJOINT), ("verify", module::VERIFY)],
    ))
}

fn lq_oracle(cfg: &ExperimentConfig) -> Result<Outcome> {
    let m = load(cfg)?;
    let sol = riccati(&m)?;
    let d = sol.regimes;
    let rows = (0..=m.grid.n_steps()).flat_map(|k| {
        let sol = &sol;
        let t = m.grid.t(k);
        (0..d).map(move |i| {
            vec![
                num(t),
                (i + 1).to_string(),
                num(sol.p_at(k, i)),
                num(sol.s_at(k, i)),
                num(sol.r_at(k, i)),
                num(sol.k0[k * d + i]),
                num(sol.k1[k * d + i]),
                num(sol.mean[k]),
                num(sol.regime_prob[k * d + i]),
            ]
        })
    });
    let table =
        GainsTable { horizon: cfg.horizon, n_steps: cfg.n_steps, regimes: d, k0: sol.k0.clone(), k1: sol.k1.clone() };
    let artifacts = vec![
        csv_artifact("riccati.csv", &["t", "regime", "P", "S", "R", "k0", "k1", "mean", "probability"], rows)?,
        json_artifact("gains.json", &table)?,
        json_artifact(
            "lq_summary.json",
            &json!({
                "p0": (0..d).map(|i| sol.p_at(0, i)).collect::<Vec<_>>(),
                "s0": (0..d).map(|i| sol.s_at(0, i)).collect::<Vec<_>>(),
                "fixed_point_iterations": sol.fixed_point_iterations,
            }),
        )?,
    ];
    Ok(Outcome::ok(artifacts, Vec::new()))
}

fn nash(cfg: &ExperimentConfig) -> Result<Outcome> {
    let m = load(cfg)?;
    let fb = feedback(cfg, &m)?;
    let (results, outcome) = if cfg.ladder.is_empty() {
        let r = nash_gap(&m.spec, &fb, &cfg.deviation, cfg.n, &m.grid, &m.init, cfg.replications, cfg.seed, 0)?;
        (vec![r], None)
    } else {
        let s = gap_scaling(&m.spec, &fb, &cfg.deviation, &cfg.ladder, &m.grid, &m.init, cfg.replications, cfg.seed)?;
        (s.results, Some(s.outcome))
    };
    let rows = results.iter().map(|r| {
        vec![
            r.n.to_string(),
            (r.deviator + 1).to_string(),
            num(r.equilibrium.mean),
            num(r.equilibrium.se),
            num(r.best_deviation.mean),
            num(r.best_deviation.se),
            r.best_label.clone(),
            num(r.gap),
            num(r.gap_se),
            num(r.advantage),
            r.members.to_string(),
            r.deviator_clamped.to_string(),
        ]
    });
    let header = [
        "n",
        "deviator",
        "equilibrium",
        "equilibrium_se",
        "best_deviation",
        "best_deviation_se",
        "best_label",
        "gap",
        "gap_se",
        "advantage",
        "members",
        "deviator_clamped",
    ];
    let fit = match &outcome {
        Some(GapScalingOutcome::Fit(f)) => json!({"fit": f}),
        Some(GapScalingOutcome::IndistinguishableFromZero) => json!("indistinguishable_from_zero"),
        None => serde_json::Value::Null,
    };
    let artifacts = vec![
        csv_artifact("nash_ladder.csv", &header, rows)?,
        json_artifact("nash.json", &json!({"results": results, "scaling": fit, "feedback": fb.label()}))?,
    ];
    Ok(Outcome::ok(artifacts, vec![("nash", module::NASH)]))
}
