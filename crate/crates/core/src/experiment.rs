//! Experiment presets: each produces CSV artifacts, optional SVG charts and a
//! manifest describing how they were made.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bayes::{run_sbu, PriorMatrix, SbuState};
use crate::chain::payload::FnPayload;
use crate::chain::{ChainError, Simulation};
use crate::config::{ConfigError, ExperimentConfig};
use crate::credit::{traceability_check, CreditLog, TokenTransfer};
use crate::field::{relative_frequency, sample_frequency_table, ConditionalMatrix, FarmConfig, FieldError};
use crate::kinetics::{
    self, fit_rf_model, settled_response_factor, KineticsError, ResponseClass, ResponseTrace, RfModelFit,
    SensorParams,
};
use crate::metrics::{self, centralized_classify, posterior_classify, write_scores_csv, Method, RoundScore};
use crate::rng::{stream_rng, stream_u64};
use crate::svg::LineChart;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// MSE level at which a window counts as correctly classified.
pub const SOPT_MSE_TARGET: f64 = 1e-3;
/// Share of compliant farms that counts as traceable.
pub const TRACE_TARGET_PERCENT: f64 = 98.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error(transparent)]
    Bayes(#[from] crate::bayes::BayesError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Credit(#[from] crate::credit::CreditError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<std::io::Error> for ExperimentError {
    fn from(source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: PathBuf::new(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Sensor response over time for several concentrations, and RF against
    /// concentration for several affinity constants.
    RfCurves,
    /// Recovery of the affinity constant from noisy RF samples.
    RfFit,
    /// Probability of not being in class C as updates accumulate.
    SbuDeviation,
    /// Updates needed before every farm in a window is classified correctly.
    SoptSearch,
    /// Per-round color tokens from the full mining pipeline.
    ColorTokens,
    /// Posterior argmax against per-round count argmax, over seeds.
    AccuracyCompare,
    /// Share of farms whose detected tokens match their declared tokens.
    Traceability,
    /// Credit trajectories for several penalty scales.
    Credits,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::RfCurves,
        Preset::RfFit,
        Preset::SbuDeviation,
        Preset::SoptSearch,
        Preset::ColorTokens,
        Preset::AccuracyCompare,
        Preset::Traceability,
        Preset::Credits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::RfCurves => "rf-curves",
            Preset::RfFit => "rf-fit",
            Preset::SbuDeviation => "sbu-deviation",
            Preset::SoptSearch => "sopt-search",
            Preset::ColorTokens => "color-tokens",
            Preset::AccuracyCompare => "accuracy-compare",
            Preset::Traceability => "traceability",
            Preset::Credits => "credits",
        }
    }

    /// Baseline configuration of the preset; user settings are layered on
    /// top.
    pub fn defaults(self) -> ExperimentConfig {
        let base = ExperimentConfig::default();
        match self {
            Preset::SoptSearch => ExperimentConfig {
                inter_farm_range: [20.0, 50.0],
                ..base
            },
            Preset::AccuracyCompare => ExperimentConfig {
                application_spread: 5.0,
                ..base
            },
            _ => base,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ExperimentError::UnknownPreset(s.to_string()))
    }
}

/// One output file, held in memory until written.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub contents: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    /// Headline numbers, also copied into the manifest.
    pub summary: Vec<(String, String)>,
}

impl RunOutput {
    fn add(&mut self, name: &str, contents: Vec<u8>) {
        self.artifacts.push(Artifact {
            name: name.to_string(),
            contents,
        });
    }

    fn note(&mut self, key: &str, value: impl fmt::Display) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    /// SHA-256 over artifact names and contents in order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for a in &self.artifacts {
            h.update((a.name.len() as u64).to_be_bytes());
            h.update(a.name.as_bytes());
            h.update((a.contents.len() as u64).to_be_bytes());
            h.update(&a.contents);
        }
        hex::encode(h.finalize())
    }
}

fn csv(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>, ExperimentError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn sweep_likelihoods(
    farms: &[FarmConfig],
    params: &SensorParams,
    seed: u64,
    round: u64,
    sweeps: u32,
) -> Result<Vec<ConditionalMatrix>, FieldError> {
    (0..u64::from(sweeps))
        .map(|s| {
            let table = sample_frequency_table(farms, params, stream_u64(seed, "sweep", &[round, s]))?;
            Ok(relative_frequency(&table))
        })
        .collect()
}

fn true_classes(farms: &[FarmConfig], k_dissociation: f64) -> Vec<ResponseClass> {
    farms.iter().map(|f| f.true_class(k_dissociation)).collect()
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

// ---- response curves -------------------------------------------------------

pub const CURVE_CONCENTRATIONS: [f64; 5] = [1.0, 5.0, 10.0, 20.0, 50.0];
pub const CURVE_AFFINITIES: [f64; 3] = [0.1, 1.0, 10.0];

fn rf_curves(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let params = cfg.sensor_params();
    params.validate()?;
    let (duration, dt) = (6000.0, 20.0);
    let mut traces = Vec::new();
    let mut chart = LineChart::new("Sensor response", "time (s)", "response (RU)");
    for &conc in &CURVE_CONCENTRATIONS {
        let assoc = ResponseTrace::association(&params, conc, duration, dt);
        let r_end = *assoc.values.last().unwrap_or(&0.0);
        let dis = ResponseTrace::disassociation(&params, r_end, duration, duration, dt);
        let points = assoc
            .times
            .iter()
            .chain(&dis.times)
            .zip(assoc.values.iter().chain(&dis.values))
            .map(|(&t, &r)| (t, r))
            .collect();
        chart = chart.series(format!("[A]={conc}"), points);
        traces.push(assoc);
        traces.push(dis);
    }
    let mut out = RunOutput::default();
    out.add("response_traces.csv", csv(|b| ResponseTrace::write_csv(&traces, b))?);
    out.add("response_traces.svg", chart.render().into_bytes());

    let mut rf_rows = String::from("concentration,k_dissociation,rf\n");
    let mut rf_chart = LineChart::new("Response factor", "concentration (M)", "RF");
    for &kd in &CURVE_AFFINITIES {
        let p = SensorParams::with_affinity(kd);
        let mut points = Vec::new();
        for i in 0..=100 {
            let conc = 0.5 * i as f64;
            let rf = kinetics::response_factor(&p, conc)?;
            rf_rows.push_str(&format!("{conc},{kd},{rf}\n"));
            points.push((conc, rf));
        }
        rf_chart = rf_chart.series(format!("kD={kd}"), points);
    }
    out.add("response_factor.csv", rf_rows.into_bytes());
    out.add("response_factor.svg", rf_chart.render().into_bytes());
    out.note("k_dissociation", params.affinity_constant());
    Ok(out)
}

// ---- RF model fit ----------------------------------------------------------

pub const FIT_SAMPLES: usize = 50;
pub const FIT_NOISE: f64 = 0.01;

/// `(concentration, noisy RF)` pairs: concentrations uniform over the
/// inter-farm range, RF from the settled sensor response plus Gaussian noise.
pub fn noisy_rf_samples(cfg: &ExperimentConfig, n: usize, noise: f64) -> Result<Vec<(f64, f64)>, ExperimentError> {
    let params = cfg.sensor_params();
    let [lo, hi] = cfg.inter_farm_range;
    let mut rng = stream_rng(cfg.seed, "rf-fit", &[]);
    let dist = Normal::new(0.0, noise).map_err(|_| KineticsError::InvalidParam {
        name: "noise",
        value: noise,
    })?;
    (0..n)
        .map(|_| {
            let conc = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            let rf = settled_response_factor(&params, conc)?;
            Ok((conc, rf + dist.sample(&mut rng)))
        })
        .collect()
}

pub fn rf_fit_experiment(cfg: &ExperimentConfig) -> Result<(Vec<(f64, f64)>, RfModelFit), ExperimentError> {
    let samples = noisy_rf_samples(cfg, FIT_SAMPLES, FIT_NOISE)?;
    let fit = fit_rf_model(&samples)?;
    Ok((samples, fit))
}

/// Writes a calibration from arbitrary `(concentration, rf)` samples.
pub fn calibration_output(samples: &[(f64, f64)]) -> Result<(RfModelFit, RunOutput), ExperimentError> {
    let fit = fit_rf_model(samples)?;
    let mut rows = String::from("concentration,rf_observed,rf_fitted\n");
    let mut observed = Vec::new();
    for &(a, y) in samples {
        rows.push_str(&format!("{a},{y},{}\n", kinetics::equilibrium_rf(a, fit.k_d_hat)));
        observed.push((a, y));
    }
    observed.sort_by(|x, y| x.0.total_cmp(&y.0));
    let fitted = observed.iter().map(|&(a, _)| (a, kinetics::equilibrium_rf(a, fit.k_d_hat))).collect();
    let chart = LineChart::new("RF model fit", "concentration (M)", "RF")
        .series("observed", observed)
        .series("fitted", fitted);
    let mut out = RunOutput::default();
    out.add("rf_fit.csv", rows.into_bytes());
    out.add("rf_fit.svg", chart.render().into_bytes());
    out.note("k_d_hat", fit.k_d_hat);
    out.note("residual_sse", fit.residual_sse);
    out.note("active_region_low", fit.active_region.0);
    out.note("active_region_high", fit.active_region.1);
    out.note("iterations", fit.iterations);
    Ok((fit, out))
}

fn rf_fit(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let (samples, _) = rf_fit_experiment(cfg)?;
    let (_, mut out) = calibration_output(&samples)?;
    out.note("k_dissociation_true", cfg.affinity_constant());
    Ok(out)
}

// ---- deviation from class C --------------------------------------------------

pub const DEVIATION_STEPS: u32 = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationPoint {
    pub step: usize,
    /// Mean over farms whose reference class is C.
    pub mean_in_class: f64,
    /// Mean over all farms.
    pub mean_all: f64,
}

/// Mean probability of not being in class C after each of `steps` updates
/// from a uniform prior, averaged over replicate seeds.
pub fn deviation_curve(cfg: &ExperimentConfig, steps: u32) -> Result<Vec<DeviationPoint>, ExperimentError> {
    let params = cfg.sensor_params();
    let kd = params.affinity_constant();
    let mut in_class = vec![(0.0, 0usize); steps as usize];
    let mut all = vec![0.0; steps as usize];
    for k in 0..cfg.replicates {
        let seed = cfg.replicate_seed(k);
        let farms = ExperimentConfig { seed, ..cfg.clone() }.farms()?;
        let truth = true_classes(&farms, kd);
        let stream = sweep_likelihoods(&farms, &params, seed, 0, steps)?;
        let mut state = SbuState::new(PriorMatrix::uniform(farms.len()));
        for (s, lik) in stream.iter().enumerate() {
            state.update(lik)?;
            let dev = crate::bayes::deviation_from_class(state.posterior(), ResponseClass::C);
            for (d, t) in dev.iter().zip(&truth) {
                if *t == ResponseClass::C {
                    in_class[s].0 += d;
                    in_class[s].1 += 1;
                }
            }
            all[s] += dev.iter().sum::<f64>() / dev.len() as f64;
        }
    }
    Ok((0..steps as usize)
        .map(|s| DeviationPoint {
            step: s + 1,
            mean_in_class: if in_class[s].1 > 0 {
                in_class[s].0 / in_class[s].1 as f64
            } else {
                f64::NAN
            },
            mean_all: all[s] / cfg.replicates as f64,
        })
        .collect())
}

fn sbu_deviation(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let mut rows = String::from("intra_sigma,k_dissociation,step,mean_deviation_class_c,mean_deviation_all\n");
    let mut chart = LineChart::new("Deviation from class C", "update step", "P(not C)");
    let kd0 = cfg.affinity_constant();
    let mut variants: Vec<(f64, f64)> = [0.5, 1.0, 2.0].iter().map(|&s| (s, kd0)).collect();
    variants.extend([1.0, 5.0].iter().map(|&kd| (cfg.intra_sigma, kd)));
    let mut out = RunOutput::default();
    for (sigma, kd) in variants {
        let c = ExperimentConfig {
            intra_sigma: sigma,
            k_dissociation: Some(kd),
            ..cfg.clone()
        };
        let curve = deviation_curve(&c, DEVIATION_STEPS)?;
        for p in &curve {
            rows.push_str(&format!("{sigma},{kd},{},{},{}\n", p.step, p.mean_in_class, p.mean_all));
        }
        chart = chart.series(
            format!("sigma={sigma} kD={kd}"),
            curve.iter().map(|p| (p.step as f64, p.mean_in_class)).collect(),
        );
    }
    out.add("deviation.csv", rows.into_bytes());
    out.add("deviation.svg", chart.render().into_bytes());
    Ok(out)
}

// ---- updates needed for a correct window -----------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SoptRun {
    pub seed: u64,
    /// MSE of the posterior argmax after each update of the window.
    pub mse_by_step: Vec<f64>,
    /// First step from which the MSE stays at or below the target for the
    /// rest of the window; `None` if the window ends above it.
    pub s_opt: Option<usize>,
    /// Steps taken by the convergence-stopped update over the same window.
    pub steps_used: usize,
}

pub fn sopt_runs(cfg: &ExperimentConfig) -> Result<Vec<SoptRun>, ExperimentError> {
    let params = cfg.sensor_params();
    let kd = params.affinity_constant();
    (0..cfg.replicates)
        .map(|k| {
            let seed = cfg.replicate_seed(k);
            let farms = ExperimentConfig { seed, ..cfg.clone() }.farms()?;
            let truth = true_classes(&farms, kd);
            let stream = sweep_likelihoods(&farms, &params, seed, 0, cfg.tw)?;
            let prior = PriorMatrix::uniform(farms.len());
            let mut state = SbuState::new(prior.clone());
            let mut mse_by_step = Vec::with_capacity(stream.len());
            for lik in &stream {
                state.update(lik)?;
                mse_by_step.push(metrics::mse(&truth, &posterior_classify(state.posterior()))?);
            }
            let tail_ok = mse_by_step.iter().rev().take_while(|&&m| m <= SOPT_MSE_TARGET).count();
            let s_opt = (tail_ok > 0).then(|| mse_by_step.len() - tail_ok + 1);
            let steps_used = run_sbu(&prior, &stream, cfg.sbu_epsilon)?.steps_used;
            Ok(SoptRun {
                seed,
                mse_by_step,
                s_opt,
                steps_used,
            })
        })
        .collect()
}

pub fn median_s_opt(runs: &[SoptRun]) -> Option<f64> {
    if runs.iter().any(|r| r.s_opt.is_none()) {
        return None;
    }
    median(&mut runs.iter().map(|r| r.s_opt.unwrap() as f64).collect::<Vec<_>>())
}

fn sopt_search(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let runs = sopt_runs(cfg)?;
    let mut per_seed = String::from("seed,s_opt,steps_used\n");
    let mut trace = String::from("seed,step,mse\n");
    let mut mean_mse = vec![0.0; cfg.tw as usize];
    for r in &runs {
        let s = r.s_opt.map(|s| s.to_string()).unwrap_or_default();
        per_seed.push_str(&format!("{},{s},{}\n", r.seed, r.steps_used));
        for (i, m) in r.mse_by_step.iter().enumerate() {
            trace.push_str(&format!("{},{},{m}\n", r.seed, i + 1));
            mean_mse[i] += m / runs.len() as f64;
        }
    }
    let mut out = RunOutput::default();
    out.add("sopt_per_seed.csv", per_seed.into_bytes());
    out.add("mse_by_step.csv", trace.into_bytes());
    out.add(
        "mse_by_step.svg",
        LineChart::new("MSE by update step", "update step", "mean MSE")
            .series("mean", mean_mse.iter().enumerate().map(|(i, &m)| ((i + 1) as f64, m)).collect())
            .render()
            .into_bytes(),
    );
    match median_s_opt(&runs) {
        Some(m) => out.note("median_s_opt", m),
        None => out.note("median_s_opt", "unreached"),
    }
    let mut used: Vec<f64> = runs.iter().map(|r| r.steps_used as f64).collect();
    out.note("median_steps_used", median(&mut used).unwrap_or(f64::NAN));

    let mut grid = String::from("tw,range_low,range_high,median_s_opt,median_steps_used\n");
    for range in [[0.0, 50.0], [25.0, 50.0], [40.0, 50.0]] {
        for tw in [10, 20, 30, 40, 50] {
            let c = ExperimentConfig {
                tw,
                inter_farm_range: range,
                ..cfg.clone()
            };
            let runs = sopt_runs(&c)?;
            let m = median_s_opt(&runs).map(|m| m.to_string()).unwrap_or_default();
            let mut used: Vec<f64> = runs.iter().map(|r| r.steps_used as f64).collect();
            grid.push_str(&format!("{tw},{},{},{m},{}\n", range[0], range[1], median(&mut used).unwrap_or(f64::NAN)));
        }
    }
    out.add("sopt_grid.csv", grid.into_bytes());
    Ok(out)
}

// ---- full pipeline runs ------------------------------------------------------

fn export_ledgers(sim: &Simulation, out: &mut RunOutput) -> Result<(), ExperimentError> {
    out.add("fn_ledger.txt", csv(|b| sim.fn_ledger().export(b))?);
    out.add("tn_ledger.txt", csv(|b| sim.tn_ledger().export(b))?);
    Ok(())
}

fn token_rows(rows: &mut String, round: u64, payload: &FnPayload, farms: &[FarmConfig], kd: f64) {
    for (rec, farm) in payload.farms.iter().zip(farms) {
        let t = rec.color_token;
        let best = crate::bayes::argmax_column(&t).map(|c| c.to_string()).unwrap_or_default();
        rows.push_str(&format!(
            "{round},{},{},{},{},{},{},{},{},{best},{}\n",
            rec.farm_id,
            farm.mean_conc,
            farm.true_class(kd),
            t[0],
            t[1],
            t[2],
            t[3],
            t[4],
            rec.included
        ));
    }
}

const TOKEN_HEADER: &str = "round,farm_id,mean_conc,reference_class,A,B,C,D,E,argmax,included\n";

fn color_tokens(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let mut sim = Simulation::new(cfg.clone())?;
    let kd = cfg.affinity_constant();
    let mut rows = String::from(TOKEN_HEADER);
    for _ in 0..cfg.rounds {
        let o = sim.run_mining_round()?;
        token_rows(&mut rows, o.round, &FnPayload::decode(&o.fn_block.payload).map_err(ChainError::from)?, sim.farms(), kd);
    }
    let mut out = RunOutput::default();
    out.add("color_tokens.csv", rows.into_bytes());
    Ok(out)
}

/// Runs the mining pipeline for `cfg.rounds` and exports ledgers, tokens,
/// credits and scores.
pub fn simulate(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let mut sim = Simulation::new(cfg.clone())?;
    let kd = cfg.affinity_constant();
    let truth = true_classes(sim.farms(), kd);
    let mut tokens = String::from(TOKEN_HEADER);
    let mut credits = CreditLog::default();
    let mut scores = Vec::new();
    let mut last = None;
    for _ in 0..cfg.rounds {
        let o = sim.run_mining_round()?;
        let payload = FnPayload::decode(&o.fn_block.payload).map_err(ChainError::from)?;
        token_rows(&mut tokens, o.round, &payload, sim.farms(), kd);
        credits.record(o.round, sim.accounts());
        scores.push(RoundScore::new(o.round, Method::Distributed, &truth, &posterior_classify(&o.posterior))?);
        scores.push(RoundScore::new(o.round, Method::Centralized, &truth, &centralized_classify(&o.window))?);
        last = Some(o);
    }
    let mut out = RunOutput::default();
    export_ledgers(&sim, &mut out)?;
    out.add("color_tokens.csv", tokens.into_bytes());
    out.add("credits.csv", csv(|b| credits.write_csv(b))?);
    out.add("scores.csv", csv(|b| write_scores_csv(b, &scores))?);
    if let Some(o) = last {
        let ids: Vec<u32> = sim.farms().iter().map(|f| f.farm_id).collect();
        out.add("posterior_final.csv", csv(|b| o.posterior.write_csv(b, &ids))?);
        out.add("window_final.csv", csv(|b| o.window.write_csv(b))?);
    }
    out.note("rounds", cfg.rounds);
    out.note("fn_height", sim.fn_ledger().height());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyComparison {
    pub scores_by_seed: Vec<(u64, Vec<RoundScore>)>,
    pub mean_distributed: f64,
    pub mean_centralized: f64,
}

/// Scores both classifiers against the reference class of each farm's base
/// mean, for every round of every replicate.
pub fn accuracy_comparison(cfg: &ExperimentConfig) -> Result<AccuracyComparison, ExperimentError> {
    let kd = cfg.affinity_constant();
    let mut scores_by_seed = Vec::new();
    let (mut dist, mut cent, mut n) = (0.0, 0.0, 0usize);
    for k in 0..cfg.replicates {
        let seed = cfg.replicate_seed(k);
        let mut sim = Simulation::new(ExperimentConfig { seed, ..cfg.clone() })?;
        let truth = true_classes(sim.farms(), kd);
        let mut scores = Vec::new();
        for _ in 0..cfg.rounds {
            let o = sim.run_mining_round()?;
            let d = RoundScore::new(o.round, Method::Distributed, &truth, &posterior_classify(&o.posterior))?;
            let c = RoundScore::new(o.round, Method::Centralized, &truth, &centralized_classify(&o.window))?;
            dist += d.accuracy;
            cent += c.accuracy;
            n += 1;
            scores.push(d);
            scores.push(c);
        }
        scores_by_seed.push((seed, scores));
    }
    Ok(AccuracyComparison {
        scores_by_seed,
        mean_distributed: dist / n as f64,
        mean_centralized: cent / n as f64,
    })
}

fn accuracy_compare(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let cmp = accuracy_comparison(cfg)?;
    let mut out = RunOutput::default();
    let rounds = cfg.rounds as usize;
    let mut mean = vec![(0.0, 0.0, 0.0, 0.0); rounds];
    for (seed, scores) in &cmp.scores_by_seed {
        out.add(&format!("scores_seed_{seed}.csv"), csv(|b| write_scores_csv(b, scores))?);
        for pair in scores.chunks(2) {
            let r = pair[0].round as usize;
            let w = 1.0 / cmp.scores_by_seed.len() as f64;
            mean[r].0 += pair[0].mse * w;
            mean[r].1 += pair[0].accuracy * w;
            mean[r].2 += pair[1].mse * w;
            mean[r].3 += pair[1].accuracy * w;
        }
    }
    let mut merged = Vec::new();
    for (r, m) in mean.iter().enumerate() {
        merged.push(RoundScore {
            round: r as u64,
            method: Method::Distributed,
            mse: m.0,
            accuracy: m.1,
        });
        merged.push(RoundScore {
            round: r as u64,
            method: Method::Centralized,
            mse: m.2,
            accuracy: m.3,
        });
    }
    out.add("scores.csv", csv(|b| write_scores_csv(b, &merged))?);
    let series = |method| {
        merged
            .iter()
            .filter(|s| s.method == method)
            .map(|s| (s.round as f64, s.accuracy))
            .collect()
    };
    out.add(
        "accuracy.svg",
        LineChart::new("Detection accuracy", "round", "accuracy (%)")
            .series(Method::Distributed.name(), series(Method::Distributed))
            .series(Method::Centralized.name(), series(Method::Centralized))
            .render()
            .into_bytes(),
    );
    out.note("mean_accuracy_bc_iont", cmp.mean_distributed);
    out.note("mean_accuracy_centralized", cmp.mean_centralized);
    Ok(out)
}

pub const TRACE_SIGMAS: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq)]
pub struct TraceCurve {
    pub sigma: f64,
    /// Compliant share of farms per round.
    pub percent_by_round: Vec<f64>,
}

impl TraceCurve {
    /// 1-based round at which the target share is first reached.
    pub fn first_round_at_target(&self) -> Option<usize> {
        self.percent_by_round
            .iter()
            .position(|&p| p >= TRACE_TARGET_PERCENT)
            .map(|i| i + 1)
    }
}

/// One pipeline run with the given intra-farm sigma. Declared tokens follow
/// each farm's reference class; detected tokens follow the posterior argmax
/// of the round.
pub fn traceability_curve(cfg: &ExperimentConfig, sigma: f64) -> Result<TraceCurve, ExperimentError> {
    let kd = cfg.affinity_constant();
    let mut sim = Simulation::new(ExperimentConfig {
        intra_sigma: sigma,
        ..cfg.clone()
    })?;
    let truth = true_classes(sim.farms(), kd);
    let mut percent_by_round = Vec::with_capacity(cfg.rounds as usize);
    for _ in 0..cfg.rounds {
        let o = sim.run_mining_round()?;
        let mut compliant = 0usize;
        for (i, farm) in sim.farms().iter().enumerate() {
            let t = TokenTransfer::from_classes(farm.farm_id, o.round, truth[i], &o.posterior.columns[i], cfg.alpha);
            if traceability_check(&t, cfg.trace_threshold)? {
                compliant += 1;
            }
        }
        percent_by_round.push(100.0 * compliant as f64 / truth.len() as f64);
    }
    Ok(TraceCurve { sigma, percent_by_round })
}

fn traceability(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let mut rows = String::from("intra_sigma,round,compliant_percent\n");
    let mut chart = LineChart::new("Traceability", "round", "compliant farms (%)");
    let mut out = RunOutput::default();
    for &sigma in &TRACE_SIGMAS {
        let curve = traceability_curve(cfg, sigma)?;
        for (r, p) in curve.percent_by_round.iter().enumerate() {
            rows.push_str(&format!("{sigma},{},{p}\n", r + 1));
        }
        chart = chart.series(
            format!("sigma={sigma}"),
            curve.percent_by_round.iter().enumerate().map(|(r, &p)| ((r + 1) as f64, p)).collect(),
        );
        out.note(
            &format!("first_round_at_target_sigma_{sigma}"),
            curve.first_round_at_target().map(|r| r.to_string()).unwrap_or_else(|| "unreached".into()),
        );
    }
    out.add("traceability.csv", rows.into_bytes());
    out.add("traceability.svg", chart.render().into_bytes());
    Ok(out)
}

pub const CREDIT_ALPHAS: [f64; 3] = [0.05, 0.1, 0.2];

#[derive(Debug, Clone, PartialEq)]
pub struct CreditRun {
    pub alpha: f64,
    pub log: CreditLog,
    /// Max minus min credits after the last round.
    pub final_spread: f64,
}

pub fn credit_run(cfg: &ExperimentConfig, alpha: f64) -> Result<CreditRun, ExperimentError> {
    let mut sim = Simulation::new(ExperimentConfig { alpha, ..cfg.clone() })?;
    let mut log = CreditLog::default();
    for _ in 0..cfg.rounds {
        let o = sim.run_mining_round()?;
        log.record(o.round, sim.accounts());
    }
    let (lo, hi) = sim
        .accounts()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a.credits), hi.max(a.credits)));
    Ok(CreditRun {
        alpha,
        log,
        final_spread: hi - lo,
    })
}

fn credits(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let mut out = RunOutput::default();
    for &alpha in &CREDIT_ALPHAS {
        let run = credit_run(cfg, alpha)?;
        out.add(&format!("credits_alpha_{alpha}.csv"), csv(|b| run.log.write_csv(b))?);
        let mut chart = LineChart::new(&format!("Credits, alpha={alpha}"), "round", "credits");
        for farm in 0..cfg.n_farms as u32 {
            let pts = run
                .log
                .rows
                .iter()
                .filter(|r| r.1 == farm)
                .map(|r| (r.0 as f64, r.2))
                .collect();
            chart = chart.series(format!("farm {farm}"), pts);
        }
        out.add(&format!("credits_alpha_{alpha}.svg"), chart.render().into_bytes());
        out.note(&format!("final_spread_alpha_{alpha}"), run.final_spread);
    }
    Ok(out)
}

pub fn run_preset(preset: Preset, cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    match preset {
        Preset::RfCurves => rf_curves(cfg),
        Preset::RfFit => rf_fit(cfg),
        Preset::SbuDeviation => sbu_deviation(cfg),
        Preset::SoptSearch => sopt_search(cfg),
        Preset::ColorTokens => color_tokens(cfg),
        Preset::AccuracyCompare => accuracy_compare(cfg),
        Preset::Traceability => traceability(cfg),
        Preset::Credits => credits(cfg),
    }
}

#[derive(Debug, Serialize)]
struct ManifestFile {
    name: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    run: &'a str,
    version: &'a str,
    seed: u64,
    wall_time_s: f64,
    results_digest: String,
    summary: toml::Table,
    outputs: Vec<ManifestFile>,
    config: &'a ExperimentConfig,
}

/// Writes every artifact into `dir` plus `manifest.toml`. Returns the
/// manifest path.
pub fn write_run(
    dir: &Path,
    run: &str,
    cfg: &ExperimentConfig,
    output: &RunOutput,
    started: Instant,
) -> Result<PathBuf, ExperimentError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut files = Vec::new();
    for a in &output.artifacts {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.contents).map_err(io(&path))?;
        files.push(ManifestFile {
            name: a.name.clone(),
            sha256: hex::encode(Sha256::digest(&a.contents)),
        });
    }
    let manifest = Manifest {
        run,
        version: VERSION,
        seed: cfg.seed,
        wall_time_s: started.elapsed().as_secs_f64(),
        results_digest: output.digest(),
        summary: output
            .summary
            .iter()
            .map(|(k, v)| (k.clone(), toml::Value::String(v.clone())))
            .collect(),
        outputs: files,
        config: cfg,
    };
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(ConfigError::from)?;
    std::fs::write(&path, text).map_err(io(&path))?;
    Ok(path)
}
