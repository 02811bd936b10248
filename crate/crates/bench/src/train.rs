//! Single training runs and their on-disk artifacts.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use marl_core::algos::{Learner, TrainingLog};
use marl_core::checkpoint::Checkpoint;
use marl_core::env::ParticleEnv;
use marl_core::profiler::{PhaseId, PhaseReport};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{BenchError, Result};

pub const REPORT_FILE: &str = "report.json";
pub const REWARDS_FILE: &str = "rewards.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// On-disk report: the profiler output plus the effective configuration
/// that produced it, so a run can be reproduced from its report alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub report: PhaseReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    /// Set when the run shared the machine with other timed runs.
    #[serde(default)]
    pub contended: bool,
}

impl ReportFile {
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(BenchError::io(path))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(BenchError::io(path))?;
        w.flush().map_err(BenchError::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(BenchError::io(path))?;
        crate::config::parse_json(&text, &path.display().to_string())
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub report: PhaseReport,
    pub log: TrainingLog,
    pub checkpoint: Checkpoint,
}

/// Builds the learner (timed as `Other`) and trains for `cfg.episodes`.
pub fn run_training(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mut report = PhaseReport::new(cfg.meta(), cfg.profiler);
    let mut learner = report.scoped_time(PhaseId::Other, || {
        let env = ParticleEnv::new(cfg.env_config())?;
        Learner::new(env, cfg.algo_config(), cfg.seed)
    })??;
    let log = learner.run_episodes(cfg.episodes, &mut report)?;
    if cfg.profiler {
        report.total_seconds = started.elapsed().as_secs_f64();
    }
    log::info!(
        "trained {} N={} for {} episodes: {} update rounds",
        cfg.algorithm,
        cfg.n_agents,
        cfg.episodes,
        log.update_rounds
    );
    Ok(TrainOutcome { report, log, checkpoint: Checkpoint::from_learner(&learner) })
}

/// Trains and writes `report.json`, `rewards.csv` and `checkpoint.bin` into `out_dir`.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    let outcome = run_training(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(BenchError::io(out_dir))?;
    let file = ReportFile { report: outcome.report.clone(), config: Some(cfg.clone()), contended: false };
    file.write(&out_dir.join(REPORT_FILE))?;
    write_rewards_csv(&out_dir.join(REWARDS_FILE), &outcome.log)?;
    let path = out_dir.join(CHECKPOINT_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(BenchError::io(&path))?);
    outcome.checkpoint.write_to(&mut w)?;
    w.flush().map_err(BenchError::io(&path))?;
    Ok(outcome)
}

/// Columns: `episode, team_reward, agent_0 .. agent_{N-1}`.
pub fn write_rewards_csv(path: &Path, log: &TrainingLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = log.episode_rewards.first().map_or(0, Vec::len);
    let mut header = vec!["episode".to_string(), "team_reward".to_string()];
    header.extend((0..n).map(|i| format!("agent_{i}")));
    w.write_record(&header)?;
    for (episode, rewards) in log.episode_rewards.iter().enumerate() {
        let mut row = vec![episode.to_string(), rewards.iter().sum::<f64>().to_string()];
        row.extend(rewards.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(BenchError::io(path))
}

/// Per-episode agent rewards from a file written by [`write_rewards_csv`].
pub fn read_rewards_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let values = record
            .iter()
            .skip(2)
            .map(|v| {
                v.parse::<f64>().map_err(|e| BenchError::Parse {
                    source_name: path.display().to_string(),
                    path: format!("row {}", rows.len()),
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(values);
    }
    Ok(rows)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(BenchError::io(path))?;
    Ok(Checkpoint::read_from(&mut BufReader::new(file))?)
}
