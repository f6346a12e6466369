use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use drama::bench::{self, BenchConfig, BenchMode, DECODER_POINT, HEADLINE_POINT};
use drama::model::{load_checkpoint, save_checkpoint, Checkpoint, LogRow};
use drama::pdms::PdmsReport;
use drama::pipeline;
use drama::rng::Seed;
use drama::synth::{self, KindMix, ScenarioKind};
use drama::verify::{self, EquivConfig, GradSuiteConfig};
use log::info;

use crate::config::{announce, RunConfig};
use crate::{BenchArgs, CliError, EquivArgs, EvalArgs, GenArgs, GradArgs, TrainArgs};

const LOG_FILE: &str = "train_log.csv";
/// Failing trials printed in full before the rest are summarized.
const DUMP_LIMIT: usize = 20;

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (or paths.{name} in the config)")))
}

pub fn equiv_check(a: EquivArgs) -> Result<(), CliError> {
    let cfg = EquivConfig {
        trials: a.trials as usize,
        max_len: a.max_t as usize,
        tol: a.tol,
        seed: Seed(a.seed),
        inject_fault: a.inject_fault,
    };
    let report = verify::equivalence_suite(&cfg)?;
    println!(
        "equiv-check: {} trials, worst relative error {:.3e} (tolerance {:.0e})",
        report.trials, report.worst, cfg.tol
    );
    if let Some(t) = &report.worst_trial {
        println!(
            "worst trial {}: T={} N={} H={} P={} Q={} quadratic {:.3e} chunked {:.3e}",
            t.index, t.len, t.state_dim, t.heads, t.head_dim, t.chunk, t.err_quadratic, t.err_chunked
        );
    }
    if report.passed() {
        return Ok(());
    }
    for t in report.failures.iter().take(DUMP_LIMIT) {
        println!("FAIL {}", serde_json::to_string(t).expect("trial serializes"));
    }
    if report.failures.len() > DUMP_LIMIT {
        println!("... {} more failing trials", report.failures.len() - DUMP_LIMIT);
    }
    Err(CliError::Check(format!(
        "{} of {} trials exceeded tolerance {:.0e}",
        report.failures.len(),
        report.trials,
        cfg.tol
    )))
}

pub fn bench(a: BenchArgs) -> Result<(), CliError> {
    let cfg = BenchConfig {
        t_list: a.t_list,
        d_list: a.d_list,
        extra_points: if a.no_decoder_point { Vec::new() } else { vec![DECODER_POINT] },
        chunk: a.chunk,
        reps: a.reps,
        seed: a.seed,
    };
    announce("bench", &cfg);
    let rows = bench::run(&cfg)?;
    let csv = bench::to_csv(&rows);
    match &a.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    for r in rows.iter().filter(|r| (r.len, r.dim) == HEADLINE_POINT) {
        info!(
            "{} at T={} D={}: proxy ratio {}, counted/proxy {:.3}",
            r.mode.name(),
            r.len,
            r.dim,
            r.ratio,
            r.count_ratio()
        );
    }
    for &d in &cfg.d_list {
        for mode in [BenchMode::Attention, BenchMode::SsdChunked] {
            if let Some(s) = bench::wall_time_slope(&rows, mode, d, 128, 2048) {
                info!("{} wall-time slope over T in [128, 2048] at D={d}: {s:.3}", mode.name());
            }
        }
    }
    Ok(())
}

pub fn gen_data(a: GenArgs) -> Result<(), CliError> {
    if a.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let kinds = if a.kinds.is_empty() { ScenarioKind::ALL.to_vec() } else { a.kinds };
    let mix = KindMix::balanced(&kinds, a.count)?;
    let seed = Seed(a.seed);
    let samples = synth::generate_set(seed, &mix)?;
    synth::write_set(&a.out, &samples, Some(seed), Some(mix.clone()))?;
    println!("wrote {} scenarios to {}", samples.len(), a.out.display());
    for (kind, n) in &mix.counts {
        println!("  {kind}: {n}");
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let data = required(a.data, &cfg.paths.data, "data")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    announce("run", &cfg);
    let samples = synth::read_set(&data)?;
    let train_data = pipeline::train_samples(&samples);

    let resume = out.join("config.json").exists();
    let mut ckpt = if resume {
        let mut c = load_checkpoint(&out)?;
        if c.model.config() != &cfg.model {
            return Err(CliError::Usage(format!(
                "{}: checkpoint model config differs from the run config",
                out.display()
            )));
        }
        if c.train_seed != cfg.train.seed {
            return Err(CliError::Usage(format!(
                "{}: checkpoint was trained with seed {}, run config has {}",
                out.display(),
                c.train_seed,
                cfg.train.seed
            )));
        }
        c.optimizer.lr = cfg.train.lr;
        c.optimizer.weight_decay = cfg.train.weight_decay;
        info!("resuming from step {}", c.step);
        c
    } else {
        Checkpoint::new(cfg.model.clone(), cfg.train.lr, cfg.train.weight_decay, cfg.train.seed)?
    };
    info!("{} parameters, {} scenarios", ckpt.model.param_count(), train_data.len());

    let log_path = a.log.unwrap_or_else(|| out.join(LOG_FILE));
    let mut log_file = open_log(&log_path, resume)?;
    let mut log_err = None;
    let outcome =
        drama::model::train(&mut ckpt.model, &mut ckpt.optimizer, &train_data, &cfg.train, ckpt.step, |row| {
            info!("step {} epoch {} loss {:.5} ade {:.4}", row.step, row.epoch, row.loss, row.ade);
            if log_err.is_none() {
                log_err = writeln!(log_file, "{}", row.to_csv()).and_then(|_| log_file.flush()).err();
            }
        });
    if let Some(e) = log_err {
        return Err(CliError::Usage(format!("{}: {e}", log_path.display())));
    }
    let outcome = outcome?;
    ckpt.step = outcome.step;
    save_checkpoint(&out, &ckpt)?;
    println!(
        "trained {} steps (step {}), final loss {:.5}, train ADE {:.4} m, target reached: {}",
        outcome.steps_run, outcome.step, outcome.final_loss, outcome.train_ade, outcome.reached_target
    );
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn open_log(path: &Path, append: bool) -> Result<File, CliError> {
    let io = |e: std::io::Error| CliError::Usage(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    if append && path.exists() {
        return OpenOptions::new().append(true).open(path).map_err(io);
    }
    let mut f = File::create(path).map_err(io)?;
    f.write_all(LogRow::preamble().as_bytes()).map_err(io)?;
    Ok(f)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Usage(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let data = required(a.data, &cfg.paths.data, "data")?;
    let out = a.out.or(cfg.paths.report.clone());
    announce("scoring", &cfg.scoring);
    let samples = synth::read_set(&data)?;
    let report = if a.ground_truth {
        pipeline::evaluate_ground_truth(&samples, &cfg.scoring)?
    } else {
        let dir = a.ckpt.expect("clap requires --ckpt without --ground-truth");
        let ckpt = load_checkpoint(&dir)?;
        pipeline::evaluate_model(&ckpt.model, &samples, &cfg.scoring)?
    };
    print_report(&report);
    if let Some(path) = out {
        pipeline::write_report(&path, &report)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn print_report(r: &PdmsReport) {
    let m = &r.mean_subscores;
    println!("scenarios {}", r.per_scenario.len());
    println!("mean PDMS {:.5}", r.mean_pdms);
    println!("subscore means: NC {:.4} DAC {:.4} EP {:.4} TTC {:.4} C {:.4}", m.nc, m.dac, m.ep, m.ttc, m.c);
    println!("PDMS of subscore means {:.5}", r.pdms_of_mean_subscores);
}

pub fn grad_check(a: GradArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    announce("model", &cfg.model);
    let suite = GradSuiteConfig {
        seed: Seed(a.seed),
        max_coords: a.max_coords as usize,
        model: cfg.model,
        model_coords: a.model_coords as usize,
    };
    let rows = verify::gradient_suite(&suite)?;
    println!("{:<16} {:>7} {:>14}  {:<36} status", "block", "params", "worst rel err", "worst parameter");
    let mut failed = Vec::new();
    for r in &rows {
        let ok = r.passed(a.tol);
        println!(
            "{:<16} {:>7} {:>14.3e}  {:<36} {}",
            r.block,
            r.params,
            r.worst,
            r.worst_param,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(r.block.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("gradient check failed for {} (tolerance {:.0e})", failed.join(", "), a.tol)))
    }
}
