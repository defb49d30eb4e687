use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use scas_core::agent::{load_bundle, save_bundle, MetricsRow, METRICS_COLUMNS};
use scas_core::env::ContinuousDataset;
use scas_core::scas_tabular::verify::{verify, VerificationSummary};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::pipeline::{
    check_dataset_env, dynamics_phase, generate_dataset, train_agent, TrainOptions,
};
use crate::report::{evaluate_policy, EvalReport};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BUNDLE_DIR: &str = "bundle";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const VERIFY_FILE: &str = "verify.json";
pub const SWEEP_FILE: &str = "sweep.csv";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_vec_pretty(value).map_err(scas_core::ScasError::from)?;
    text.push(b'\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub struct GenDataOutcome {
    pub path: PathBuf,
    pub dataset: ContinuousDataset,
    pub retained_in_hole: usize,
}

pub fn cmd_gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<GenDataOutcome, CliError> {
    let seed = cfg.require_seed()?;
    let dataset = generate_dataset(cfg, seed)?;
    create_dir(out_dir)?;
    let path = out_dir.join(DATASET_FILE);
    dataset.save(&path)?;
    let retained_in_hole = dataset
        .transitions
        .iter()
        .filter(|t| cfg.env.in_hole(&t.s) || cfg.env.in_hole(&t.s2))
        .count();
    let dropped: usize = dataset
        .metadata
        .parts
        .iter()
        .map(|p| p.dropped_in_hole)
        .sum();
    println!("wrote {}", path.display());
    println!("transitions: {}", dataset.len());
    println!("dropped for touching the hole: {dropped}");
    println!("retained in-hole transitions: {retained_in_hole}");
    println!(
        "state mean {:?}, std {:?}",
        dataset.state_mean, dataset.state_std
    );
    println!("sha256 {}", dataset.content_hash());
    Ok(GenDataOutcome {
        path,
        dataset,
        retained_in_hole,
    })
}

fn dataset_path(cfg: &RunConfig, flag: Option<&Path>) -> Result<PathBuf, CliError> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.dataset_path.clone())
        .ok_or_else(|| CliError::Usage("a dataset path is required".into()))
}

/// Dynamics phase, then agent phase; writes checkpoints, metrics and the
/// bundle under `out_dir`.
pub fn cmd_train(
    cfg: &RunConfig,
    dataset: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<MetricsRow>, CliError> {
    let seed = cfg.require_seed()?;
    cfg.validate()?;
    let data = ContinuousDataset::load(&dataset_path(cfg, dataset)?)?;
    check_dataset_env(cfg, &data)?;
    create_dir(out_dir)?;
    write_json(&out_dir.join("config.json"), cfg)?;
    train_one(cfg, &data, seed, out_dir, &mut DynamicsCache::default())
}

#[derive(Default)]
struct DynamicsCache(Option<(u64, Vec<scas_core::dynamics::DynamicsModel>)>);

fn train_one(
    cfg: &RunConfig,
    data: &ContinuousDataset,
    seed: u64,
    out_dir: &Path,
    cache: &mut DynamicsCache,
) -> Result<Vec<MetricsRow>, CliError> {
    create_dir(out_dir)?;
    if cfg.agent.uses_dynamics() && cache.0.as_ref().is_none_or(|(s, _)| *s != seed) {
        log::info!("training dynamics model ({} steps)", cfg.dynamics.steps);
        cache.0 = Some((seed, dynamics_phase(cfg, data, seed)?));
    }
    let models = match &cache.0 {
        Some((_, models)) if cfg.agent.uses_dynamics() => models.as_slice(),
        _ => &[],
    };
    if !models.is_empty() {
        let dir = out_dir.join("dynamics");
        create_dir(&dir)?;
        for m in &models[..models.len() - 1] {
            m.save(&dir.join(format!("step_{}.params", m.trained_steps)), seed)?;
        }
    }
    log::info!("training agent ({} steps)", cfg.agent.gradient_steps);
    let metrics_path = out_dir.join(METRICS_FILE);
    let outcome = train_agent(
        cfg,
        data,
        seed,
        models.last().cloned(),
        TrainOptions {
            metrics_path: Some(&metrics_path),
            ..TrainOptions::default()
        },
    )?;
    let bundle = out_dir.join(BUNDLE_DIR);
    save_bundle(&bundle, &outcome.agent, seed, &data.content_hash())?;
    println!(
        "trained {} steps; bundle {}, metrics {}",
        outcome.agent.step,
        bundle.display(),
        metrics_path.display()
    );
    Ok(outcome.rows)
}

pub fn cmd_eval(
    cfg: &RunConfig,
    bundle_dir: &Path,
    out_dir: &Path,
) -> Result<EvalReport, CliError> {
    cfg.env.validate()?;
    let (state, _) = load_bundle(bundle_dir)?;
    let base = cfg.seed.unwrap_or(0);
    let seeds: Vec<u64> = (0..cfg.eval.seeds as u64).map(|i| base + i).collect();
    let report = evaluate_policy(
        &cfg.env,
        &state.policy(),
        cfg.eval.mode,
        cfg.eval.perturb_steps,
        cfg.eval.episodes,
        &seeds,
    )?;
    create_dir(out_dir)?;
    let path = out_dir.join(EVAL_REPORT_FILE);
    write_json(&path, &report)?;
    print!("{}", report.table());
    println!("wrote {}", path.display());
    Ok(report)
}

#[derive(Serialize)]
struct VerifyHeadline {
    instances: usize,
    max_support_violation: f64,
    max_alignment_kl: Option<f64>,
    max_argmax_gap: Option<f64>,
}

pub fn cmd_verify(cfg: &RunConfig, out_dir: &Path) -> Result<VerificationSummary, CliError> {
    let summary = verify(&cfg.verify)?;
    let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.3e}"));
    for r in &summary.reports {
        println!(
            "instance {:>4}  |S|={} |A|={} α={:<4} support {:.2e}  kl {}  gap {}  α0 {:.1e}",
            r.index,
            r.n_states,
            r.n_actions,
            r.alpha,
            r.support_violation,
            fmt(r.alignment_kl),
            fmt(r.argmax_gap),
            r.alpha_zero_gap
        );
    }
    create_dir(out_dir)?;
    write_json(&out_dir.join(VERIFY_FILE), &summary)?;
    let headline = VerifyHeadline {
        instances: summary.instances,
        max_support_violation: summary.max_support_violation,
        max_alignment_kl: summary.max_alignment_kl,
        max_argmax_gap: summary.max_argmax_gap,
    };
    println!(
        "{}",
        serde_json::to_string(&headline).map_err(scas_core::ScasError::from)?
    );
    if !summary.passed {
        return Err(CliError::Verification(
            "a tabular check exceeded its tolerance".into(),
        ));
    }
    Ok(summary)
}

fn metrics_fields(row: &MetricsRow) -> Vec<String> {
    let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    vec![
        row.step.to_string(),
        cell(row.critic_loss),
        cell(row.policy_objective),
        cell(row.mean_q),
        cell(row.max_weight),
        cell(row.eval_return),
        cell(row.eval_steps_out_of_ood),
    ]
}

fn value_label(v: f64) -> String {
    format!("{v}")
}

/// One training run per value per seed, then a combined CSV with
/// `parameter, value, seed` prepended to the metrics columns.
pub fn cmd_sweep(cfg: &RunConfig, dataset: Option<&Path>, out_dir: &Path) -> Result<(), CliError> {
    let base_seed = cfg.require_seed()?;
    let sweep = &cfg.sweep;
    if sweep.values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    if sweep.seeds == 0 {
        return Err(CliError::Usage("sweep.seeds must be positive".into()));
    }
    cfg.validate()?;
    let data = ContinuousDataset::load(&dataset_path(cfg, dataset)?)?;
    check_dataset_env(cfg, &data)?;
    create_dir(out_dir)?;
    let combined = out_dir.join(SWEEP_FILE);
    let mut csv = csv::Writer::from_path(&combined)
        .map_err(|e| CliError::Usage(format!("{}: {e}", combined.display())))?;
    let csv_err = |e: csv::Error| CliError::Usage(format!("{}: {e}", combined.display()));
    let mut header = vec!["parameter", "value", "seed"];
    header.extend(METRICS_COLUMNS);
    csv.write_record(&header).map_err(csv_err)?;

    for i in 0..sweep.seeds as u64 {
        let seed = base_seed + i;
        let mut cache = DynamicsCache::default();
        for &value in &sweep.values {
            let mut run = cfg.clone();
            sweep.parameter.apply(&mut run.agent, value);
            run.agent.validate()?;
            let dir = out_dir
                .join(format!("{}_{}", sweep.parameter.name(), value_label(value)))
                .join(format!("seed_{seed}"));
            let rows = train_one(&run, &data, seed, &dir, &mut cache)?;
            for row in rows {
                let mut fields = vec![
                    sweep.parameter.name().to_string(),
                    value_label(value),
                    seed.to_string(),
                ];
                fields.extend(metrics_fields(&row));
                csv.write_record(&fields).map_err(csv_err)?;
            }
            csv.flush().map_err(|e| CliError::io(&combined, e))?;
        }
    }
    println!("wrote {}", combined.display());
    Ok(())
}
