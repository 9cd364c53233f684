//! Exit criteria. Prints one `PASS`/`FAIL` line per criterion with the
//! measured values and runtime; exits non-zero if any criterion fails.

use std::time::Instant;

use agrichain_core::chain::payload::FnPayload;
use agrichain_core::chain::{recover_tn_entry, validate_chain, Ledger, Simulation};
use agrichain_core::config::ExperimentConfig;
use agrichain_core::credit::{update_credit, FarmAccount};
use agrichain_core::crypto::{generate_keypair, open, seal, Channel, NonceCounter, SealedPayload};
use agrichain_core::experiment::{
    accuracy_comparison, credit_run, deviation_curve, median_s_opt, noisy_rf_samples, sopt_runs,
    traceability_curve, Preset, CREDIT_ALPHAS, DEVIATION_STEPS, FIT_NOISE, FIT_SAMPLES, TRACE_SIGMAS,
};
use agrichain_core::kinetics::{
    association_response, disassociation_response, fit_rf_model, response_factor, SensorParams,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Check {
    pass: bool,
    detail: String,
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit_s: f64,
    run: fn() -> Check,
}

fn criterion_01_half_saturation() -> Check {
    let mut worst: f64 = 0.0;
    let mut values = Vec::new();
    for kd in [0.1, 1.0, 10.0] {
        let params = SensorParams::with_affinity(kd);
        assert_eq!(params.epsilon_r, 1e-5);
        let rf = response_factor(&params, kd).unwrap();
        worst = worst.max((rf - 0.5).abs());
        values.push(format!("kD={kd}: {rf:.5}"));
    }
    Check {
        pass: worst <= 0.01,
        detail: format!("{} max |RF-0.5|={worst:.2e}", values.join(", ")),
    }
}

/// Fixed-step RK4 of `dR/dt = k_a A (R_max - R) - k_d R` from `R(0) = r0`,
/// or pure decay when `conc` is `None`.
fn rk4(params: &SensorParams, conc: Option<f64>, r0: f64, t_end: f64, dt: f64) -> f64 {
    let f = |r: f64| match conc {
        Some(a) => params.k_a * a * (params.r_max - r) - params.k_d * r,
        None => -params.k_d * r,
    };
    let steps = (t_end / dt).round() as usize;
    let mut r = r0;
    for _ in 0..steps {
        let k1 = f(r);
        let k2 = f(r + 0.5 * dt * k1);
        let k3 = f(r + 0.5 * dt * k2);
        let k4 = f(r + dt * k3);
        r += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    r
}

fn criterion_02_kinetics_oracle() -> Check {
    let mut worst: f64 = 0.0;
    for params in [SensorParams::with_affinity(10.0), SensorParams::tabulated_rates()] {
        for i in 0..20 {
            let conc = 0.5 + 49.5 * i as f64 / 19.0;
            for j in 0..20 {
                let t = 250.0 * j as f64;
                let closed = association_response(&params, conc, t);
                worst = worst.max((closed - rk4(&params, Some(conc), 0.0, t, 0.5)).abs());
                let r0 = params.plateau(conc);
                let decay = disassociation_response(r0, params.k_d, t);
                worst = worst.max((decay - rk4(&params, None, r0, t, 0.5)).abs());
            }
        }
    }
    Check {
        pass: worst <= 1e-3,
        detail: format!("max |closed - RK4| = {worst:.2e} RU over 2 x 20x20 grid"),
    }
}

/// Log-spaced scan followed by a fine linear scan around the best point.
fn grid_search_kd(samples: &[(f64, f64)]) -> f64 {
    let sse = |k: f64| -> f64 { samples.iter().map(|&(a, y)| (y - a / (a + k)).powi(2)).sum() };
    let coarse = (0..=6000)
        .map(|i| 10f64.powf(-2.0 + 5.0 * i as f64 / 6000.0))
        .min_by(|a, b| sse(*a).total_cmp(&sse(*b)))
        .unwrap();
    (0..=20000)
        .map(|i| coarse * (0.99 + 0.02 * i as f64 / 20000.0))
        .min_by(|a, b| sse(*a).total_cmp(&sse(*b)))
        .unwrap()
}

fn criterion_03_rf_model_recovery() -> Check {
    let cfg = ExperimentConfig::default();
    let truth = cfg.affinity_constant();
    let samples = noisy_rf_samples(&cfg, FIT_SAMPLES, FIT_NOISE).unwrap();
    let fit = fit_rf_model(&samples).unwrap();
    let grid = grid_search_kd(&samples);
    let rel_truth = (fit.k_d_hat - truth).abs() / truth;
    let rel_grid = (fit.k_d_hat - grid).abs() / grid;
    Check {
        pass: samples.len() == 50 && rel_truth <= 0.05 && rel_grid <= 0.01,
        detail: format!(
            "fit kD={:.4} true={truth} (err {:.2}%), grid kD={grid:.4} (diff {:.3}%)",
            fit.k_d_hat,
            100.0 * rel_truth,
            100.0 * rel_grid
        ),
    }
}

fn criterion_04_updates_to_correct_window() -> Check {
    let cfg = Preset::SoptSearch.defaults();
    assert_eq!((cfg.tw, cfg.inter_farm_range, cfg.intra_sigma, cfg.n_farms), (50, [20.0, 50.0], 1.0, 40));
    assert!(cfg.replicates >= 10);
    let runs = sopt_runs(&cfg).unwrap();
    let all_in_range = runs.iter().all(|r| matches!(r.s_opt, Some(s) if (8..=20).contains(&s)));
    let median = median_s_opt(&runs);
    let median_ok = matches!(median, Some(m) if (10.0..=16.0).contains(&m));
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| r.s_opt.map(|s| s.to_string()).unwrap_or_else(|| "-".into()))
        .collect();
    let used: Vec<String> = runs.iter().map(|r| r.steps_used.to_string()).collect();
    Check {
        pass: all_in_range && median_ok,
        detail: format!(
            "per-seed [{}], median {:?}; convergence-stopped steps [{}]",
            per_seed.join(" "),
            median,
            used.join(" ")
        ),
    }
}

fn criterion_05_deviation_non_increasing() -> Check {
    let mut worst_rise = f64::NEG_INFINITY;
    let mut curves = Vec::new();
    for seed in [42u64, 7, 2024] {
        let cfg = ExperimentConfig {
            seed,
            ..ExperimentConfig::default()
        };
        let curve = deviation_curve(&cfg, DEVIATION_STEPS).unwrap();
        assert_eq!(curve.len(), 15);
        for w in curve.windows(2) {
            worst_rise = worst_rise.max(w[1].mean_in_class - w[0].mean_in_class);
        }
        curves.push(format!(
            "seed {seed}: {:.3}->{:.3}",
            curve[0].mean_in_class,
            curve[14].mean_in_class
        ));
    }
    Check {
        pass: worst_rise <= 0.02,
        detail: format!("{}; largest one-step rise {worst_rise:.4} (tolerance 0.02)", curves.join(", ")),
    }
}

fn criterion_06_accuracy_comparison() -> Check {
    let cfg = Preset::AccuracyCompare.defaults();
    assert_eq!((cfg.rounds, cfg.replicates, cfg.n_farms), (15, 10, 40));
    let cmp = accuracy_comparison(&cfg).unwrap();
    Check {
        pass: cmp.mean_distributed >= 90.0 && cmp.mean_centralized <= 85.0,
        detail: format!(
            "posterior argmax {:.2}% (need >= 90), count argmax {:.2}% (need <= 85)",
            cmp.mean_distributed, cmp.mean_centralized
        ),
    }
}

fn criterion_07_traceability() -> Check {
    let cfg = ExperimentConfig::default();
    assert_eq!((cfg.rounds, cfg.n_farms, cfg.trace_threshold), (15, 40, 1e-3));
    let mut firsts = Vec::new();
    let mut details = Vec::new();
    for sigma in TRACE_SIGMAS {
        let curve = traceability_curve(&cfg, sigma).unwrap();
        let first = curve.first_round_at_target();
        details.push(format!(
            "sigma={sigma}: first round {:?}, final {:.1}%",
            first,
            curve.percent_by_round.last().unwrap()
        ));
        firsts.push(first);
    }
    let reached = firsts.iter().all(|f| matches!(f, Some(r) if *r <= 15));
    let ordered = reached && firsts.windows(2).all(|w| w[0] <= w[1]);
    Check {
        pass: reached && ordered,
        detail: details.join("; "),
    }
}

fn criterion_08_credit_behaviour() -> Check {
    let cfg = ExperimentConfig::default();

    let mut always_e = FarmAccount::new(0, cfg.initial_credits);
    let mut penalties = Vec::new();
    for round in 0..cfg.rounds as u64 {
        let before = always_e.credits;
        always_e.record_round(true);
        always_e = update_credit(&always_e, 1.0, cfg.alpha, round).unwrap();
        penalties.push(before - always_e.credits);
    }
    let strictly_decreasing = penalties.iter().all(|&p| p > 0.0);
    let geometric = penalties
        .windows(2)
        .all(|w| (w[1] / w[0] - cfg.alpha.exp()).abs() <= 1e-9);

    let mut spreads = Vec::new();
    let mut never_e_ok = true;
    let mut never_e_seen = 0;
    for alpha in CREDIT_ALPHAS {
        let run = credit_run(&cfg, alpha).unwrap();
        for farm in 0..cfg.n_farms as u32 {
            let rows: Vec<_> = run.log.rows.iter().filter(|r| r.1 == farm).collect();
            if rows.last().map(|r| r.3) == Some(0) {
                never_e_seen += 1;
                never_e_ok &= rows.windows(2).all(|w| w[1].2 >= w[0].2);
            }
        }
        spreads.push(run.final_spread);
    }
    let spread_increasing = spreads.windows(2).all(|w| w[1] > w[0]);
    Check {
        pass: strictly_decreasing && geometric && never_e_ok && never_e_seen > 0 && spread_increasing,
        detail: format!(
            "always-E geometric={geometric}, never-E farms checked={never_e_seen} ok={never_e_ok}, spreads {:?}",
            spreads.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>()
        ),
    }
}

fn flip_bit(bytes: &mut [u8], bit: usize) {
    bytes[bit / 8] ^= 1 << (bit % 8);
}

fn criterion_09_chain_and_crypto_integrity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    let mut round_trips = 0;
    let mut mutations_rejected = 0;
    let mut mutations = 0;
    for _ in 0..1000 {
        let (mut sa, mut sb) = ([0u8; 32], [0u8; 32]);
        rng.fill_bytes(&mut sa);
        rng.fill_bytes(&mut sb);
        let (a, b) = (generate_keypair(&sa), generate_keypair(&sb));
        let key = a.derive_shared_key(&b.public_key()).unwrap();
        let mut payload = vec![0u8; rng.random_range(0..256)];
        rng.fill_bytes(&mut payload);
        let aad = rng.random::<u64>().to_be_bytes();
        let sealed = seal(&key, &mut NonceCounter::new(Channel::Uplink), &a.public_key(), &payload, &aad).unwrap();
        let reopened = SealedPayload::from_bytes(&sealed.to_bytes()).unwrap();
        let peer_key = b.derive_shared_key(&a.public_key()).unwrap();
        if open(&peer_key, &reopened, &aad).unwrap() == payload {
            round_trips += 1;
        }
        for field in 0..4 {
            let mut bad = sealed.clone();
            let target = match field {
                0 => &mut bad.ciphertext,
                1 => &mut bad.nonce,
                2 => &mut bad.auth_tag,
                _ => &mut bad.sender_public_key,
            };
            if target.is_empty() {
                continue;
            }
            let bit = rng.random_range(0..target.len() * 8);
            flip_bit(target, bit);
            mutations += 1;
            if open(&key, &bad, &aad).is_err() {
                mutations_rejected += 1;
            }
        }
    }

    let cfg = ExperimentConfig {
        n_farms: 8,
        tw: 10,
        rounds: 3,
        ..ExperimentConfig::default()
    };
    let mut sim = Simulation::new(cfg.clone()).unwrap();
    let mut entries_match = true;
    for _ in 0..cfg.rounds {
        let out = sim.run_mining_round().unwrap();
        let payload = FnPayload::decode(&out.fn_block.payload).unwrap();
        for rec in &payload.farms {
            let own = sim.tn_keypair(out.round, rec.farm_id);
            let (token, credits) = recover_tn_entry(&out.tn_block, rec.farm_id, &own).unwrap();
            entries_match &= token == rec.color_token && credits == rec.credits;
        }
    }
    let mut history_rejected = 0;
    let mut history_mutations = 0;
    for ledger in [sim.fn_ledger(), sim.tn_ledger()] {
        assert!(validate_chain(ledger, cfg.difficulty));
        let mut export = Vec::new();
        ledger.export(&mut export).unwrap();
        let text = String::from_utf8(export).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        for (height, line) in lines.iter().enumerate() {
            let record = hex::decode(line).unwrap();
            for _ in 0..64 {
                let mut bad = record.clone();
                let bit = rng.random_range(2 * 8..bad.len() * 8);
                flip_bit(&mut bad, bit);
                let mut tampered: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
                tampered[height] = hex::encode(&bad);
                history_mutations += 1;
                let rejected = match Ledger::import(tampered.join("\n").as_bytes()) {
                    Err(_) => true,
                    Ok(l) => !validate_chain(&l, cfg.difficulty),
                };
                if rejected {
                    history_rejected += 1;
                }
            }
        }
    }

    Check {
        pass: round_trips == 1000
            && mutations_rejected == mutations
            && entries_match
            && history_rejected == history_mutations,
        detail: format!(
            "round trips {round_trips}/1000, sealed mutations rejected {mutations_rejected}/{mutations}, \
             block mutations rejected {history_rejected}/{history_mutations}, gateway entries match={entries_match}"
        ),
    }
}

fn criterion_10_replay_determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        rounds: 3,
        ..ExperimentConfig::default()
    };
    let mut files = Vec::new();
    for run in 0..2 {
        let mut sim = Simulation::new(cfg.clone()).unwrap();
        sim.run_rounds(cfg.rounds).unwrap();
        for (name, ledger) in [("fn", sim.fn_ledger()), ("tn", sim.tn_ledger())] {
            let path = dir.path().join(format!("{name}_{run}.txt"));
            ledger.export(std::fs::File::create(&path).unwrap()).unwrap();
            files.push(std::fs::read(&path).unwrap());
        }
    }
    let identical = files[0] == files[2] && files[1] == files[3];
    Check {
        pass: identical && !files[0].is_empty(),
        detail: format!(
            "miner ledger {} bytes, gateway ledger {} bytes, identical={identical}",
            files[0].len(),
            files[1].len()
        ),
    }
}

const CRITERIA: [Criterion; 10] = [
    Criterion {
        id: 1,
        name: "half-saturation",
        limit_s: 5.0,
        run: criterion_01_half_saturation,
    },
    Criterion {
        id: 2,
        name: "kinetics oracle",
        limit_s: 10.0,
        run: criterion_02_kinetics_oracle,
    },
    Criterion {
        id: 3,
        name: "rf-model recovery",
        limit_s: 5.0,
        run: criterion_03_rf_model_recovery,
    },
    Criterion {
        id: 4,
        name: "updates to MSE<=0.001",
        limit_s: 60.0,
        run: criterion_04_updates_to_correct_window,
    },
    Criterion {
        id: 5,
        name: "deviation non-increasing",
        limit_s: 30.0,
        run: criterion_05_deviation_non_increasing,
    },
    Criterion {
        id: 6,
        name: "accuracy comparison",
        limit_s: 90.0,
        run: criterion_06_accuracy_comparison,
    },
    Criterion {
        id: 7,
        name: "traceability",
        limit_s: 60.0,
        run: criterion_07_traceability,
    },
    Criterion {
        id: 8,
        name: "credit behaviour",
        limit_s: 10.0,
        run: criterion_08_credit_behaviour,
    },
    Criterion {
        id: 9,
        name: "chain and crypto integrity",
        limit_s: 30.0,
        run: criterion_09_chain_and_crypto_integrity,
    },
    Criterion {
        id: 10,
        name: "replay determinism",
        limit_s: 30.0,
        run: criterion_10_replay_determinism,
    },
];

fn main() {
    let mut failed = 0;
    for c in &CRITERIA {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run);
        let elapsed = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(check) => (check.pass && elapsed < c.limit_s, check.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {} {}: {detail} (runtime {elapsed:.2}s, limit {}s)",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            c.limit_s
        );
    }
    println!("acceptance: {} passed, {failed} failed", CRITERIA.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
