use std::ffi::OsString;

use gridsafe_core::kernels::{check_stability, solve_are, DesignWeights};
use gridsafe_core::netmodel::{assemble_state_space, LinearModel};
use gridsafe_core::safety::{cross_layer_topology, SafetyEnvelope};
use gridsafe_core::sim::{
    run_closed_loop, safety_metrics, sample_initial_state, seeded_rng, ClosedLoopSystem,
    DisturbanceModel, PlantKind, SimConfig,
};
use gridsafe_core::sparse::{gamma_sweep, log_space, GainDocument, SparsityOptions};
use gridsafe_core::units::{hz_to_rad, rad_to_hz};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config;
use crate::manifest::{OutputSet, RunManifest, MANIFEST_FILE};
use crate::{
    BuildArgs, CliError, Command, ReplayArgs, SimulateArgs, SweepArgs, TopologyArgs, EXIT_OK,
    EXIT_SAFETY,
};

/// Slack on the sampled band check, in Hz.
const BAND_SLACK_HZ: f64 = 1e-3;

pub fn execute(command: Command, raw: &[OsString]) -> Result<i32, CliError> {
    match command {
        Command::Build(a) => build(a, raw),
        Command::Sweep(a) => sweep(a, raw),
        Command::Simulate(a) => simulate(a, raw),
        Command::Topology(a) => topology(a, raw),
        Command::Replay(a) => replay(a),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    text.into_bytes()
}

#[derive(Debug, Serialize)]
struct ModelSummary {
    n: usize,
    states: usize,
    inputs: usize,
    open_loop_abscissa: f64,
    laplacian_spectrum: Vec<f64>,
    centralized_cost: f64,
    centralized_abscissa: f64,
}

#[derive(Debug, Serialize)]
struct ModelDocument {
    n: usize,
    a: Vec<Vec<f64>>,
    b1: Vec<Vec<f64>>,
    b2: Vec<Vec<f64>>,
    l: Vec<Vec<f64>>,
    m: Vec<f64>,
    d: Vec<f64>,
    v: Vec<f64>,
}

fn build(args: BuildArgs, raw: &[OsString]) -> Result<i32, CliError> {
    let cfg = config::load(args.common.config.as_deref())?;
    let model = assemble_state_space(&cfg.network);
    let w = DesignWeights::identity(model.n);
    w.validate_for(&model)?;
    let open_loop = check_stability(&model.a);
    let mut spectrum: Vec<f64> = model.l.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    spectrum.sort_by(f64::total_cmp);

    let are = solve_are(&model, &w)?;
    let central = gridsafe_core::sparse::polish(
        &model,
        &w,
        &DMatrix::from_element(model.inputs(), model.states(), true),
        &are.k,
    )?;
    let summary = ModelSummary {
        n: model.n,
        states: model.states(),
        inputs: model.inputs(),
        open_loop_abscissa: open_loop.spectral_abscissa,
        laplacian_spectrum: spectrum,
        centralized_cost: central.cost,
        centralized_abscissa: central.stability.spectral_abscissa,
    };
    let doc = ModelDocument {
        n: model.n,
        a: rows(&model.a),
        b1: rows(&model.b1),
        b2: rows(&model.b2),
        l: rows(&model.l),
        m: model.m.iter().copied().collect(),
        d: model.d.iter().copied().collect(),
        v: model.v.iter().copied().collect(),
    };

    let mut out = OutputSet::new(&args.common.out_dir)?;
    out.write("model.json", &json_bytes(&doc))?;
    out.write("summary.json", &json_bytes(&summary))?;
    out.write("centralized_gain.json", central.to_document().to_json().as_bytes())?;
    out.finish("build", raw, &cfg, serde_json::json!({}), None)?;

    if args.common.json {
        println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    } else {
        println!(
            "n={}, states={}, open-loop abscissa {:?}",
            summary.n, summary.states, summary.open_loop_abscissa
        );
        println!("laplacian spectrum {:?}", summary.laplacian_spectrum);
        println!(
            "centralized gain: J = {:?}, closed-loop abscissa {:?}",
            summary.centralized_cost, summary.centralized_abscissa
        );
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct SweepOptions {
    gamma_min: f64,
    gamma_max: f64,
    gamma_count: usize,
    epsilon: f64,
    rho: f64,
    max_admm_iters: usize,
    max_reweight_iters: usize,
}

#[derive(Debug, Serialize)]
struct SweepRow {
    gamma: f64,
    card: Option<usize>,
    cost: Option<f64>,
    abscissa: Option<f64>,
    status: String,
}

fn sweep(args: SweepArgs, raw: &[OsString]) -> Result<i32, CliError> {
    let cfg = config::load(args.common.config.as_deref())?;
    let sec = &cfg.sparsity;
    let defaults = SparsityOptions::default();
    let resolved = SweepOptions {
        gamma_min: args.gamma_min.or(sec.gamma_min).unwrap_or(1e-4),
        gamma_max: args.gamma_max.or(sec.gamma_max).unwrap_or(1e-1),
        gamma_count: args.gamma_count.or(sec.gamma_count).unwrap_or(50),
        epsilon: args.epsilon.or(sec.epsilon).unwrap_or(defaults.epsilon),
        rho: args.rho.or(sec.rho).unwrap_or(defaults.rho),
        max_admm_iters: sec.max_admm_iters.unwrap_or(defaults.max_admm_iters),
        max_reweight_iters: sec.max_reweight_iters.unwrap_or(defaults.max_reweight_iters),
    };
    if resolved.gamma_count == 0 {
        return Err(CliError::usage("--gamma-count must be >= 1"));
    }
    let log_ok = resolved.gamma_min > 0.0 && resolved.gamma_max >= resolved.gamma_min;
    let single_ok = resolved.gamma_count == 1 && resolved.gamma_min >= 0.0;
    if !(log_ok || single_ok) {
        return Err(CliError::usage(
            "need 0 < gamma-min <= gamma-max (gamma-min = 0 only with gamma-count 1)",
        ));
    }
    let opts = SparsityOptions {
        epsilon: resolved.epsilon,
        rho: resolved.rho,
        max_admm_iters: resolved.max_admm_iters,
        max_reweight_iters: resolved.max_reweight_iters,
        ..defaults
    };
    opts.validate()?;

    let model = assemble_state_space(&cfg.network);
    let w = DesignWeights::identity(model.n);
    w.validate_for(&model)?;
    let gammas = log_space(resolved.gamma_min, resolved.gamma_max, resolved.gamma_count);
    let points = gamma_sweep(&model, &w, &gammas, &opts)?;

    let mut out = OutputSet::new(&args.common.out_dir)?;
    let mut table = csv::Writer::from_writer(Vec::new());
    let mut summary = Vec::with_capacity(points.len());
    let mut failures = 0;
    for (idx, p) in points.iter().enumerate() {
        let row = match &p.outcome {
            Ok(r) => {
                let doc = r.to_document();
                out.write(&format!("gains/gain_{idx:03}.json"), doc.to_json().as_bytes())?;
                out.write(&format!("patterns/pattern_{idx:03}.csv"), &pattern_csv(&r.pattern))?;
                SweepRow {
                    gamma: p.gamma,
                    card: Some(r.card),
                    cost: Some(r.cost),
                    abscissa: Some(r.stability.spectral_abscissa),
                    status: "ok".into(),
                }
            }
            Err(e) => {
                failures += 1;
                SweepRow {
                    gamma: p.gamma,
                    card: None,
                    cost: None,
                    abscissa: None,
                    status: e.to_string(),
                }
            }
        };
        table
            .serialize(&row)
            .map_err(|e| CliError::usage(format!("sweep table: {e}")))?;
        summary.push(row);
    }
    let bytes = table
        .into_inner()
        .map_err(|e| CliError::usage(format!("sweep table: {e}")))?;
    out.write("sweep.csv", &bytes)?;
    out.finish(
        "sweep",
        raw,
        &cfg,
        serde_json::to_value(&resolved).expect("options serialize"),
        None,
    )?;

    if args.common.json {
        println!("{}", serde_json::to_string_pretty(&summary).expect("rows serialize"));
    } else {
        for r in &summary {
            match (r.card, r.cost) {
                (Some(card), Some(cost)) => println!("gamma {:.4e}  card {card:2}  J {cost:.10}", r.gamma),
                _ => println!("gamma {:.4e}  failed: {}", r.gamma, r.status),
            }
        }
    }
    if failures == points.len() {
        return Err(CliError::numerical("every sweep point failed"));
    }
    Ok(EXIT_OK)
}

fn pattern_csv(pattern: &DMatrix<bool>) -> Vec<u8> {
    let mut text = String::new();
    for i in 0..pattern.nrows() {
        let row: Vec<&str> = pattern.row(i).iter().map(|&b| if b { "1" } else { "0" }).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    text.into_bytes()
}

fn load_gain(path: &std::path::Path, model: &LinearModel) -> Result<GainDocument, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let doc = GainDocument::from_json(&text)?;
    let k = doc.gain()?;
    if k.shape() != (model.inputs(), model.states()) {
        return Err(CliError::usage(format!(
            "{}: gain is {}x{}, model needs {}x{}",
            path.display(),
            k.nrows(),
            k.ncols(),
            model.inputs(),
            model.states()
        )));
    }
    Ok(doc)
}

#[derive(Debug, Serialize)]
struct SimulateOptions {
    gain: Option<String>,
    dt: f64,
    horizon: f64,
    substeps: usize,
    plant: PlantKind,
    disturbance: DisturbanceModel,
    ds: f64,
    eta1: f64,
    eta2: f64,
    omega_band_hz: f64,
    seed: u64,
    runs: usize,
    theta_max: f64,
    settle_tol: f64,
}

#[derive(Debug, Serialize)]
struct RunMetrics {
    run: usize,
    max_abs_omega_hz: f64,
    max_exceedance_hz: f64,
    violation_samples: usize,
    violation_duration_s: f64,
    settling_time_s: Option<f64>,
    filter_activations: usize,
    infeasible_fallbacks: usize,
    final_theta_inf_rad: f64,
    final_omega_inf_hz: f64,
    blowup_time_s: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SimulationReport {
    runs: usize,
    max_abs_omega_hz: f64,
    runs_outside_band: usize,
    infeasible_fallbacks: usize,
    max_final_omega_hz: f64,
    max_final_theta_rad: f64,
    blowups: usize,
    per_run: Vec<RunMetrics>,
}

fn disturbance_model(kind: &str, ds: f64, seed: u64, args: &SimulateArgs) -> Result<DisturbanceModel, CliError> {
    Ok(match kind {
        "zero" => DisturbanceModel::Zero,
        "constant" => DisturbanceModel::Constant { value: ds },
        "step" => DisturbanceModel::Step { time: args.step_time, value: ds },
        "sinusoid" => DisturbanceModel::Sinusoid {
            amplitude: ds,
            frequency_hz: args.sine_hz,
            phase_rad: 0.0,
        },
        "uniform-random" => DisturbanceModel::UniformRandom { seed },
        "adversarial" => DisturbanceModel::Adversarial,
        other => return Err(CliError::usage(format!("unknown disturbance '{other}'"))),
    })
}

fn simulate(args: SimulateArgs, raw: &[OsString]) -> Result<i32, CliError> {
    let cfg = config::load(args.common.config.as_deref())?;
    let sec = cfg.simulation.clone();
    let defaults = SimConfig::default();
    let plant_name = args.plant.clone().or(sec.plant).unwrap_or_else(|| "linear".into());
    let disturbance_name = args
        .disturbance
        .clone()
        .or(sec.disturbance)
        .unwrap_or_else(|| "adversarial".into());
    let ds = args.ds.or(sec.ds).unwrap_or(defaults.envelope.d_s);
    let seed = args.seed.or(sec.seed).unwrap_or(0);
    let band_hz = args.omega_band_hz.or(sec.omega_band_hz).unwrap_or(0.5);
    let resolved = SimulateOptions {
        gain: args.gain.as_ref().map(|p| p.display().to_string()),
        dt: args.dt.or(sec.dt).unwrap_or(defaults.dt),
        horizon: args.horizon.or(sec.horizon).unwrap_or(defaults.horizon),
        substeps: args.substeps.or(sec.substeps).unwrap_or(defaults.substeps),
        plant: plant_name.parse()?,
        disturbance: disturbance_model(&disturbance_name, ds, seed, &args)?,
        ds,
        eta1: args.eta1.or(sec.eta1).unwrap_or(defaults.envelope.eta1),
        eta2: args.eta2.or(sec.eta2).unwrap_or(defaults.envelope.eta2),
        omega_band_hz: band_hz,
        seed,
        runs: args.runs.or(sec.runs).unwrap_or(1),
        theta_max: args.theta_max,
        settle_tol: args.settle_tol,
    };
    if resolved.runs == 0 {
        return Err(CliError::usage("--runs must be >= 1"));
    }
    let envelope = SafetyEnvelope::from_hz(band_hz, band_hz, resolved.eta1, resolved.eta2, ds)?;
    let sim_cfg = SimConfig {
        dt: resolved.dt,
        horizon: resolved.horizon,
        substeps: resolved.substeps,
        plant: resolved.plant,
        envelope,
        filter: true,
    };
    sim_cfg.validate()?;

    let system = ClosedLoopSystem::from_spec(&cfg.network);
    let model = &system.model;
    let k = match &args.gain {
        Some(path) => load_gain(path, model)?.gain()?,
        None => {
            let w = DesignWeights::identity(model.n);
            w.validate_for(model)?;
            solve_are(model, &w)?.k
        }
    };
    let stability = check_stability(&(&model.a - &model.b2 * &k));
    if !stability.is_hurwitz {
        return Err(gridsafe_core::Error::UnstableGain {
            abscissa: stability.spectral_abscissa,
        }
        .into());
    }

    let n = model.n;
    let omega_range = (hz_to_rad(-band_hz), hz_to_rad(band_hz));
    let mut rng = seeded_rng(seed);
    let mut out = OutputSet::new(&args.common.out_dir)?;
    let mut per_run = Vec::with_capacity(resolved.runs);
    for run in 0..resolved.runs {
        let x0 = sample_initial_state(n, (0.0, resolved.theta_max), omega_range, &mut rng);
        let dm = match resolved.disturbance {
            DisturbanceModel::UniformRandom { seed } => DisturbanceModel::UniformRandom {
                seed: seed.wrapping_add(run as u64),
            },
            ref other => other.clone(),
        };
        let trace = run_closed_loop(&system, &k, &sim_cfg, &dm, &x0)?;
        let mut csv = Vec::new();
        trace.write_csv(&mut csv)?;
        out.write(&format!("traces/run_{run:03}.csv"), &csv)?;
        let m = safety_metrics(&trace, &envelope, resolved.settle_tol);
        per_run.push(RunMetrics {
            run,
            max_abs_omega_hz: rad_to_hz(m.max_abs_omega),
            max_exceedance_hz: rad_to_hz(m.max_exceedance),
            violation_samples: m.violation_samples,
            violation_duration_s: m.violation_duration,
            settling_time_s: m.settling_time,
            filter_activations: m.filter_activations,
            infeasible_fallbacks: m.infeasible_fallbacks,
            final_theta_inf_rad: m.final_theta_inf,
            final_omega_inf_hz: rad_to_hz(m.final_omega_inf),
            blowup_time_s: trace.blowup,
        });
    }

    let fold = |f: fn(&RunMetrics) -> f64| per_run.iter().map(f).fold(0.0, f64::max);
    let report = SimulationReport {
        runs: per_run.len(),
        max_abs_omega_hz: fold(|r| r.max_abs_omega_hz),
        runs_outside_band: per_run.iter().filter(|r| r.max_exceedance_hz > BAND_SLACK_HZ).count(),
        infeasible_fallbacks: per_run.iter().map(|r| r.infeasible_fallbacks).sum(),
        max_final_omega_hz: fold(|r| r.final_omega_inf_hz),
        max_final_theta_rad: fold(|r| r.final_theta_inf_rad),
        blowups: per_run.iter().filter(|r| r.blowup_time_s.is_some()).count(),
        per_run,
    };
    out.write("metrics.json", &json_bytes(&report))?;
    out.finish(
        "simulate",
        raw,
        &cfg,
        serde_json::to_value(&resolved).expect("options serialize"),
        Some(seed),
    )?;

    if args.common.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!(
            "runs {}: max |omega| {:.6} Hz (band {band_hz} Hz), outside band {}, infeasible fallbacks {}",
            report.runs, report.max_abs_omega_hz, report.runs_outside_band, report.infeasible_fallbacks
        );
        println!(
            "final |omega| <= {:.6} Hz, final |theta| <= {:.6} rad",
            report.max_final_omega_hz, report.max_final_theta_rad
        );
    }
    if report.blowups > 0 {
        return Err(CliError::numerical(format!("{} run(s) blew up", report.blowups)));
    }
    if report.runs_outside_band > 0 {
        eprintln!("safety violation: {} run(s) left the band", report.runs_outside_band);
        return Ok(EXIT_SAFETY);
    }
    Ok(EXIT_OK)
}

fn topology(args: TopologyArgs, raw: &[OsString]) -> Result<i32, CliError> {
    let cfg = config::load(args.common.config.as_deref())?;
    let model = assemble_state_space(&cfg.network);
    let doc = load_gain(&args.gain, &model)?;
    let report = cross_layer_topology(&doc.pattern_matrix()?, &cfg.network)?;
    let mut out = OutputSet::new(&args.common.out_dir)?;
    out.write("topology.json", (report.to_json() + "\n").as_bytes())?;
    out.finish(
        "topology",
        raw,
        &cfg,
        serde_json::json!({ "gain": args.gain.display().to_string() }),
        None,
    )?;

    if args.common.json {
        println!("{}", report.to_json());
    } else {
        for node in &report.nodes {
            let list: Vec<String> = node
                .neighbors
                .iter()
                .map(|l| format!("{}({})", l.node, serde_json::to_value(l.via).expect("tag").as_str().unwrap_or("")))
                .collect();
            println!("node {}: {}", node.node, list.join(" "));
        }
        println!(
            "links: gain {}, power {}, union {}",
            report.gain_links, report.power_links, report.union_links
        );
    }
    Ok(EXIT_OK)
}

fn replay(args: ReplayArgs) -> Result<i32, CliError> {
    let recorded = RunManifest::read(&args.manifest)?;
    if recorded.command == "replay" {
        return Err(CliError::usage("cannot replay a replay"));
    }
    let current = config::load(recorded.config.path.as_deref().map(std::path::Path::new))?;
    if current.sha256 != recorded.config.sha256 {
        return Err(CliError::usage(format!(
            "config hash changed since the recorded run ({} vs {})",
            current.sha256, recorded.config.sha256
        )));
    }
    let mut argv: Vec<OsString> = vec!["gridsafe".into()];
    argv.extend(recorded.args.iter().map(OsString::from));
    argv.push("--out-dir".into());
    argv.push(args.out_dir.clone().into_os_string());
    let code = crate::run(argv);
    if code != EXIT_OK && code != EXIT_SAFETY {
        return Err(CliError { code, message: "replayed command failed".into() });
    }
    let fresh = RunManifest::read(&args.out_dir.join(MANIFEST_FILE))?;
    if fresh.outputs != recorded.outputs {
        let differing: Vec<&str> = recorded
            .outputs
            .iter()
            .filter(|r| !fresh.outputs.contains(r))
            .map(|r| r.path.as_str())
            .collect();
        return Err(CliError::numerical(format!(
            "replay outputs differ: {}",
            differing.join(", ")
        )));
    }
    println!("replay: {} output(s) identical", fresh.outputs.len());
    Ok(code)
}
