//! The five CLI workflows: fit, compare, predict, rank, simulate.
//!
//! Each command reads its inputs per the run configuration, writes artifacts
//! under `out_dir`, and returns a [`CmdOutcome`] with human-readable messages
//! and warnings. Every JSON artifact carries the config hash and seed.
//! Non-convergence is reported as a warning, not an error.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{spec_for, RunConfig};
use crate::error::{CliError, Result};
use crate::io;
use shfm::model::ParamState;
use shfm::predict::{posterior_ranks, predict_theta, summarize_index, RankTarget, ThetaStandardize};
use shfm::sampler::{convergence_report, run_chain_ctx, ConvergenceReport};
use shfm::select::{compare, criteria_report, CriteriaReport};
use shfm::synth::{random_geometry_with_counts, simulate_dataset, Preset};
use shfm::{ChainOutput, FitContext, Geometry, HyperPriors, IndicatorPanel, McmcConfig, ModelSpec};

/// What a command produced, for the caller to print.
#[derive(Debug, Default)]
pub struct CmdOutcome {
    pub messages: Vec<String>,
    pub warnings: Vec<String>,
}

impl CmdOutcome {
    fn say(&mut self, m: impl Into<String>) {
        self.messages.push(m.into());
    }

    fn warn(&mut self, m: impl Into<String>) {
        self.warnings.push(m.into());
    }
}

fn load_inputs(config: &RunConfig, spec: &ModelSpec) -> Result<(IndicatorPanel, Geometry)> {
    let panel_dir = config
        .panel_dir
        .as_deref()
        .ok_or_else(|| CliError::Input("config needs panel_dir".into()))?;
    let centroids = config
        .city_centroids_file
        .as_deref()
        .ok_or_else(|| CliError::Input("config needs city_centroids_file".into()))?;
    let panel = io::load_panel(panel_dir, config.has_header)?;
    if spec.uses_car() {
        if config.tract_centroids_dir.is_none() {
            return Err(CliError::Input(
                "shfm needs tract_centroids_dir for the within-city weights".into(),
            ));
        }
        if config.adjacency_dir.is_none() {
            return Err(CliError::Input("shfm needs adjacency_dir".into()));
        }
    }
    let geometry = io::load_geometry(
        &panel,
        centroids,
        config.tract_centroids_dir.as_deref(),
        config.adjacency_dir.as_deref(),
    )?;
    Ok((panel, geometry))
}

fn hyperpriors(config: &RunConfig, panel: &IndicatorPanel, geometry: &Geometry) -> HyperPriors {
    let mut hyper = HyperPriors::vague(
        panel.n_indicators(),
        panel.n_cities(),
        geometry.max_city_distance(),
    );
    if let Some(v) = config.prior_variance {
        hyper.c_mu = v;
        hyper.c0 = v;
        hyper.v0 = v;
    }
    if config.ig_shape.is_some() || config.ig_scale.is_some() {
        let a = config.ig_shape.unwrap_or(2.1);
        let b = config.ig_scale.unwrap_or(1.1);
        for pair in hyper
            .sigma2_ig
            .iter_mut()
            .chain(hyper.omega_ig.iter_mut())
            .chain(hyper.tau2_ig.iter_mut())
        {
            *pair = (a, b);
        }
    }
    if let Some(h) = config.lambda1_scale {
        hyper.lambda1_scale = h;
    }
    hyper
}

fn run_all_chains(ctx: &FitContext, mcmc: &McmcConfig) -> Result<Vec<ChainOutput>> {
    (0..mcmc.n_chains)
        .into_par_iter()
        .map(|chain_id| run_chain_ctx(ctx, mcmc, chain_id).map_err(CliError::from))
        .collect()
}

/// PSRF report when there are enough chains to compute one.
fn try_convergence(
    chains: &[ChainOutput],
    spec: &ModelSpec,
    outcome: &mut CmdOutcome,
) -> Option<ConvergenceReport> {
    if chains.len() < 2 {
        outcome.warn("single chain: convergence diagnostics need at least 2 chains");
        return None;
    }
    match convergence_report(chains, spec) {
        Ok(report) => {
            if !report.all_converged {
                let bad: Vec<String> = report
                    .params
                    .iter()
                    .filter(|p| !p.converged)
                    .map(|p| format!("{} (psrf {:.3})", p.name, p.psrf))
                    .collect();
                outcome.warn(format!(
                    "convergence not reached for: {}; inspect the chains before use",
                    bad.join(", ")
                ));
            }
            Some(report)
        }
        Err(e) => {
            outcome.warn(format!("convergence diagnostics failed: {e}"));
            None
        }
    }
}

fn fit_metadata(
    config: &RunConfig,
    model: &str,
    spec: &ModelSpec,
    panel: &IndicatorPanel,
    geometry: &Geometry,
    chains: &[ChainOutput],
    convergence: Option<&ConvergenceReport>,
    warnings: &[String],
) -> serde_json::Value {
    json!({
        "config_hash": config.config_hash,
        "seed": config.seed,
        "model": model,
        "phi": spec.phi,
        "anchor": spec.anchor,
        "lambda2": spec.lambda2,
        "n_cities": panel.n_cities(),
        "n_indicators": panel.n_indicators(),
        "tract_counts": panel.tract_counts(),
        "city_names": panel.city_names,
        "indicator_names": panel.indicator_names,
        "city_centroids": geometry.city_centroids,
        "mcmc": {
            "n_iter": config.n_iter,
            "burn_in": config.burn_in,
            "thin": config.thin,
            "n_chains": config.n_chains,
            "mh_step_scale": config.mh_step_scale,
        },
        "acceptance_rate_lambda1": chains.iter().map(|c| c.acceptance_rate_lambda1).collect::<Vec<_>>(),
        "convergence": convergence,
        "converged": convergence.map(|c| c.all_converged),
        "warnings": warnings,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_rank_csv(path: &Path, city_names: &[String], ranks: &shfm::predict::RankSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["city", "mean_rank", "rank_lo", "rank_hi"])?;
    for (i, name) in city_names.iter().enumerate() {
        w.write_record([
            name.as_str(),
            &ranks.mean_rank[i].to_string(),
            &ranks.interval[i].0.to_string(),
            &ranks.interval[i].1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fits the configured model and writes the draw store, metadata, index
/// summaries, and posterior ranks under `out_dir`.
pub fn cmd_fit(config: &RunConfig) -> Result<CmdOutcome> {
    let mut outcome = CmdOutcome::default();
    let spec = config.model_spec()?;
    let (panel, geometry) = load_inputs(config, &spec)?;
    let hyper = hyperpriors(config, &panel, &geometry);
    let ctx = FitContext::new(&panel, &spec, &hyper, &geometry)?;
    let mcmc = config.mcmc();
    let chains = run_all_chains(&ctx, &mcmc)?;
    let convergence = try_convergence(&chains, &spec, &mut outcome);

    fs::create_dir_all(&config.out_dir)?;
    io::write_chains(&config.out_dir.join("draws"), &chains)?;

    let standardize = ThetaStandardize::from_name(&config.standardize)?;
    let index = match summarize_index(&chains, &spec, ctx.cars.as_deref(), standardize) {
        Ok(index) => index,
        Err(shfm::ShfmError::Degenerate(m)) => {
            outcome.warn(format!(
                "theta standardization failed ({m}); reporting unstandardized values"
            ));
            summarize_index(&chains, &spec, ctx.cars.as_deref(), ThetaStandardize::None)?
        }
        Err(e) => return Err(e.into()),
    };
    let mut index_json = serde_json::to_value(&index)?;
    index_json["config_hash"] = json!(config.config_hash);
    index_json["seed"] = json!(config.seed);
    index_json["city_names"] = json!(panel.city_names);
    write_json(&config.out_dir.join("index_summary.json"), &index_json)?;

    if panel.n_cities() >= 2 {
        let target = rank_target(config)?;
        let ranks = posterior_ranks(&chains, target)?;
        write_rank_csv(&config.out_dir.join("ranks.csv"), &panel.city_names, &ranks)?;
    }

    let meta = fit_metadata(
        config,
        &config.model,
        &spec,
        &panel,
        &geometry,
        &chains,
        convergence.as_ref(),
        &outcome.warnings,
    );
    write_json(&config.out_dir.join("metadata.json"), &meta)?;

    outcome.say(format!(
        "fitted {} on {} cities ({} draws per chain, {} chains); artifacts in {}",
        config.model,
        panel.n_cities(),
        mcmc.n_stored(),
        mcmc.n_chains,
        config.out_dir.display()
    ));
    Ok(outcome)
}

fn rank_target(config: &RunConfig) -> Result<RankTarget> {
    match config.rank_target.as_str() {
        "theta" => Ok(RankTarget::Theta),
        "city-mean-f" => Ok(RankTarget::CityMeanF),
        other => Err(CliError::Input(format!(
            "unknown rank_target {other:?} (expected theta or city-mean-f)"
        ))),
    }
}

/// One comparison entry: a model name, expanded over the phi grid for shfm.
fn comparison_specs(config: &RunConfig) -> Result<Vec<(String, ModelSpec)>> {
    let mut out = Vec::new();
    for name in &config.compare_models {
        if name == "shfm" {
            for &phi in &config.phi_grid {
                out.push((
                    format!("shfm(phi={phi})"),
                    spec_for(name, phi, config.anchor, config.lambda2)?,
                ));
            }
        } else {
            out.push((
                name.clone(),
                spec_for(name, config.phi, config.anchor, config.lambda2)?,
            ));
        }
    }
    Ok(out)
}

/// Fits every configured model on the same panel and writes the five-criterion
/// comparison table.
pub fn cmd_compare(config: &RunConfig) -> Result<CmdOutcome> {
    let mut outcome = CmdOutcome::default();
    let entries = comparison_specs(config)?;
    if entries.len() < 2 {
        return Err(CliError::Input(
            "compare_models (with the phi grid applied) must list at least 2 models".into(),
        ));
    }
    // Any model needing tract geometry forces the full geometry load; the
    // panel itself is shared.
    let widest = entries
        .iter()
        .map(|(_, s)| s)
        .find(|s| s.uses_car())
        .cloned()
        .unwrap_or_else(|| entries[0].1.clone());
    let (panel, geometry) = load_inputs(config, &widest)?;
    let hyper = hyperpriors(config, &panel, &geometry);
    let mcmc = config.mcmc();

    let mut reports: Vec<CriteriaReport> = Vec::new();
    for (label, spec) in &entries {
        let ctx = FitContext::new(&panel, spec, &hyper, &geometry)?;
        let chains = run_all_chains(&ctx, &mcmc)?;
        try_convergence(&chains, spec, &mut outcome);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x51ec_7a1d_9b3f_0c25);
        let mut report = criteria_report(&chains, &panel, spec, &mut rng)?;
        report.model = label.clone();
        if report.negative_p_d {
            outcome.warn(format!("{label}: negative effective parameter count in DIC"));
        }
        reports.push(report);
    }
    let table = compare(&reports)?;

    fs::create_dir_all(&config.out_dir)?;
    let mut table_json = serde_json::to_value(&table)?;
    table_json["config_hash"] = json!(config.config_hash);
    table_json["seed"] = json!(config.seed);
    table_json["reports"] = serde_json::to_value(&reports)?;
    write_json(&config.out_dir.join("comparison.json"), &table_json)?;

    let mut w = csv::Writer::from_path(config.out_dir.join("comparison.csv"))?;
    w.write_record(["model", "dic", "epd", "crps", "mae", "mse"])?;
    for row in &table.rows {
        w.write_record([
            row.model.as_str(),
            &row.dic.to_string(),
            &row.epd.to_string(),
            &row.crps.to_string(),
            &row.mae.to_string(),
            &row.mse.to_string(),
        ])?;
    }
    w.flush()?;

    if table.best_overall.is_empty() {
        outcome.say("no model is best under all five criteria; see comparison.csv".to_string());
    } else {
        outcome.say(format!(
            "best under all five criteria: {}",
            table.best_overall.join(", ")
        ));
    }
    if !table.ties.is_empty() {
        outcome.warn(format!("criteria with ties at the minimum: {}", table.ties.join(", ")));
    }
    Ok(outcome)
}

/// Reads a fitted draw store back and predicts the city factor at new sites.
pub fn cmd_predict(config: &RunConfig) -> Result<CmdOutcome> {
    let mut outcome = CmdOutcome::default();
    let fit_dir = &config.out_dir;
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fit_dir.join("metadata.json")).map_err(|e| {
            CliError::Input(format!("no fit found in {}: {e}", fit_dir.display()))
        })?)?;
    let model = meta["model"]
        .as_str()
        .ok_or_else(|| CliError::Input("metadata.json lacks a model name".into()))?;
    let spec = spec_for(
        model,
        meta["phi"].as_f64().unwrap_or(config.phi),
        meta["anchor"].as_u64().unwrap_or(0) as usize,
        meta["lambda2"].as_f64().unwrap_or(1.0),
    )?;
    let observed: Vec<[f64; 2]> = serde_json::from_value(meta["city_centroids"].clone())
        .map_err(|_| CliError::Input("metadata.json lacks city centroids".into()))?;

    let new_file = config
        .new_centroids_file
        .as_deref()
        .ok_or_else(|| CliError::Input("config needs new_centroids_file".into()))?;
    let new_points = io::load_labeled_points(new_file)?;
    let new_centroids: Vec<[f64; 2]> = new_points.iter().map(|(_, xy)| *xy).collect();

    let (chains, _) = io::read_chains(&fit_dir.join("draws"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9d2c_5680_1ca5_88e7);
    let prediction = predict_theta(&chains, &spec, &observed, &new_centroids, &mut rng)?;
    let summaries = prediction.summaries();

    let mut w = csv::Writer::from_path(fit_dir.join("predictions.csv"))?;
    w.write_record(["site", "x", "y", "mean", "sd"])?;
    for ((id, xy), (mean, sd)) in new_points.iter().zip(&summaries) {
        w.write_record([
            id.as_str(),
            &xy[0].to_string(),
            &xy[1].to_string(),
            &mean.to_string(),
            &sd.to_string(),
        ])?;
    }
    w.flush()?;

    write_json(
        &fit_dir.join("predictions.json"),
        &json!({
            "config_hash": config.config_hash,
            "seed": config.seed,
            "model": model,
            "sites": new_points.iter().map(|(id, _)| id).collect::<Vec<_>>(),
            "new_centroids": new_centroids,
            "mean": summaries.iter().map(|(m, _)| m).collect::<Vec<_>>(),
            "sd": summaries.iter().map(|(_, s)| s).collect::<Vec<_>>(),
            "n_draws": prediction.draws.len(),
        }),
    )?;

    outcome.say(format!(
        "predicted the city factor at {} new sites; see {}",
        new_centroids.len(),
        fit_dir.join("predictions.csv").display()
    ));
    Ok(outcome)
}

/// Reads a fitted draw store back and writes posterior rank summaries.
pub fn cmd_rank(config: &RunConfig) -> Result<CmdOutcome> {
    let mut outcome = CmdOutcome::default();
    let fit_dir = &config.out_dir;
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fit_dir.join("metadata.json")).map_err(|e| {
            CliError::Input(format!("no fit found in {}: {e}", fit_dir.display()))
        })?)?;
    let city_names: Vec<String> = serde_json::from_value(meta["city_names"].clone())
        .map_err(|_| CliError::Input("metadata.json lacks city names".into()))?;

    let (chains, _) = io::read_chains(&fit_dir.join("draws"))?;
    let target = rank_target(config)?;
    let ranks = posterior_ranks(&chains, target)?;

    write_rank_csv(&fit_dir.join("ranks.csv"), &city_names, &ranks)?;

    let mut w = csv::Writer::from_path(fit_dir.join("rank_histograms.csv"))?;
    let n_cities = city_names.len();
    let mut header = vec!["city".to_string()];
    header.extend((1..=n_cities).map(|r| format!("rank_{r}")));
    w.write_record(&header)?;
    for (name, hist) in city_names.iter().zip(&ranks.histograms) {
        let mut record = vec![name.clone()];
        record.extend(hist.iter().map(|c| c.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;

    write_json(
        &fit_dir.join("ranks.json"),
        &json!({
            "config_hash": config.config_hash,
            "seed": config.seed,
            "target": config.rank_target,
            "city_names": city_names,
            "mean_rank": ranks.mean_rank,
            "interval": ranks.interval,
            "n_draws": ranks.n_draws,
            "average_mean_rank": ranks.average_mean_rank(),
        }),
    )?;

    outcome.say(format!(
        "ranked {n_cities} cities over {} draws; see {}",
        ranks.n_draws,
        fit_dir.join("ranks.csv").display()
    ));
    Ok(outcome)
}

fn truth_json(truth: &ParamState) -> serde_json::Value {
    let vec = |v: &nalgebra::DVector<f64>| v.iter().cloned().collect::<Vec<f64>>();
    json!({
        "mu": vec(&truth.mu),
        "beta": vec(&truth.beta),
        "sigma2": vec(&truth.sigma2),
        "f": truth.f.iter().map(vec).collect::<Vec<_>>(),
        "f_tilde": truth.f_tilde.iter().map(vec).collect::<Vec<_>>(),
        "theta": vec(&truth.theta),
        "theta0": truth.theta0,
        "delta2": truth.delta2,
        "tau2": vec(&truth.tau2),
        "omega": vec(&truth.omega),
        "lambda1": truth.lambda1,
    })
}

/// Simulates a synthetic dataset from a preset and writes it in the same
/// layout the loaders read, plus the generating parameter values.
pub fn cmd_simulate(config: &RunConfig) -> Result<CmdOutcome> {
    let mut outcome = CmdOutcome::default();
    let preset = Preset::from_name(&config.preset)?;
    if config.tracts_min == 0 || config.tracts_min > config.tracts_max {
        return Err(CliError::Input(format!(
            "tract count range [{}, {}] is empty or zero",
            config.tracts_min, config.tracts_max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_random = if config.huge_city_tracts > 0 {
        config.n_cities.saturating_sub(1)
    } else {
        config.n_cities
    };
    let mut counts: Vec<usize> = (0..n_random)
        .map(|_| rng.gen_range(config.tracts_min..=config.tracts_max))
        .collect();
    if config.huge_city_tracts > 0 {
        counts.push(config.huge_city_tracts);
    }
    let geometry = random_geometry_with_counts(&counts, &mut rng)?;
    let spec = preset.spec();
    let truth = preset.true_params(
        config.n_indicators,
        &counts,
        geometry.max_city_distance(),
    );
    let (panel, latent) = simulate_dataset(&spec, &truth, &geometry, &mut rng)?;

    fs::create_dir_all(&config.out_dir)?;
    io::write_panel(&config.out_dir.join("panel"), &panel)?;
    io::write_geometry(&config.out_dir, &geometry, &panel.city_names)?;
    write_json(
        &config.out_dir.join("truth.json"),
        &json!({
            "config_hash": config.config_hash,
            "seed": config.seed,
            "preset": preset.name(),
            "truth": truth_json(&latent),
        }),
    )?;

    outcome.say(format!(
        "simulated {} cities ({} tracts total, {} indicators) with preset {}; data in {}",
        counts.len(),
        counts.iter().sum::<usize>(),
        config.n_indicators,
        preset.name(),
        config.out_dir.display()
    ));
    Ok(outcome)
}
