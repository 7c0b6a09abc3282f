//! Hyperparameter search: the MLP search space, and asynchronous successive
//! halving (ASHA) where the resource is the number of inner-CV folds scored.

use std::io::{BufRead, Write};

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{apply_normalizer, fit_normalizer, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::kfold_split;
use crate::exec::Exec;
use crate::mlp::{mse, MlpConfig};
use crate::models::{AnnModel, ModelSpec};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    /// Inclusive per-layer width range.
    pub neurons: (usize, usize),
    pub depths: Vec<usize>,
    /// Log-uniform learning-rate range.
    pub learning_rate: (f64, f64),
    pub batch_sizes: Vec<usize>,
    /// Fixed settings (dropout, Adam, patience, ...) for sampled configs.
    pub template: MlpConfig,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            neurons: (1, 500),
            depths: (1..=7).collect(),
            learning_rate: (1e-4, 1e-1),
            batch_sizes: vec![2, 4, 8, 16, 32, 64],
            template: MlpConfig::default(),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.neurons.0 == 0 || self.neurons.0 > self.neurons.1 {
            return bad("neuron range must satisfy 1 ≤ lo ≤ hi");
        }
        if !(self.learning_rate.0 > 0.0 && self.learning_rate.0 <= self.learning_rate.1) {
            return bad("learning-rate range must satisfy 0 < lo ≤ hi");
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.iter().any(|&b| b < 2) {
            return bad("batch sizes must be non-empty and at least 2");
        }
        if self.depths.is_empty() || self.depths.contains(&0) {
            return bad("depths must be non-empty and positive");
        }
        Ok(())
    }

    /// True when `c` could have been drawn at some depth of this space.
    pub fn contains(&self, c: &MlpConfig) -> bool {
        self.depths.contains(&c.hidden_sizes.len())
            && c.hidden_sizes.iter().all(|&w| w >= self.neurons.0 && w <= self.neurons.1)
            && c.learning_rate >= self.learning_rate.0
            && c.learning_rate <= self.learning_rate.1
            && self.batch_sizes.contains(&c.batch_size)
    }
}

/// Uniform integer widths, log-uniform learning rate, uniform batch size.
pub fn sample_config(space: &SearchSpace, depth: usize, rng: &mut Rng) -> Result<MlpConfig> {
    space.validate()?;
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be at least 1".into()));
    }
    let hidden_sizes = (0..depth)
        .map(|_| rng.random_range(space.neurons.0..=space.neurons.1))
        .collect();
    let (lo, hi) = (space.learning_rate.0.ln(), space.learning_rate.1.ln());
    let learning_rate = if lo == hi {
        space.learning_rate.0
    } else {
        rng.random_range(lo..hi).exp().clamp(space.learning_rate.0, space.learning_rate.1)
    };
    let batch_size = *space.batch_sizes.choose(rng).expect("validated non-empty");
    Ok(MlpConfig {
        hidden_sizes,
        learning_rate,
        batch_size,
        ..space.template.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AshaConfig {
    pub grace_period: usize,
    pub reduction_factor: usize,
    pub brackets: usize,
    pub trials_per_depth: usize,
    /// Inner-CV folds per pass.
    pub max_resource: usize,
    /// Passes over the inner folds, each with a fresh shuffle.
    pub inner_passes: usize,
    /// 1 runs synchronous successive halving; more runs ASHA in waves of
    /// this many concurrent jobs.
    pub workers: usize,
}

impl Default for AshaConfig {
    fn default() -> Self {
        AshaConfig {
            grace_period: 3,
            reduction_factor: 3,
            brackets: 1,
            trials_per_depth: 500,
            max_resource: 10,
            inner_passes: 1,
            workers: 1,
        }
    }
}

impl AshaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.reduction_factor < 2 {
            return bad("reduction_factor must be at least 2");
        }
        if self.grace_period < 1 {
            return bad("grace_period must be at least 1");
        }
        if self.brackets != 1 {
            return bad("only a single bracket is supported");
        }
        if self.trials_per_depth == 0 {
            return bad("trials_per_depth must be at least 1");
        }
        if self.max_resource < 2 || self.inner_passes == 0 {
            return bad("max_resource must be at least 2 folds and inner_passes at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }

    /// Fold evaluations a trial consumes when trained to completion.
    pub fn total_resource(&self) -> usize {
        self.max_resource * self.inner_passes
    }

    /// Resource at each rung: grace·ηʳ capped at the total resource.
    pub fn rung_resources(&self) -> Vec<usize> {
        let cap = self.total_resource();
        let mut out = Vec::new();
        let mut r = self.grace_period;
        loop {
            let v = r.min(cap);
            out.push(v);
            if v == cap {
                return out;
            }
            r = r.saturating_mul(self.reduction_factor);
        }
    }

    /// Upper bound on fold trainings for `n` trials.
    pub fn budget_ceiling(&self, n: usize) -> usize {
        n * self.grace_period * self.rung_resources().len() + 2 * self.total_resource()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    Stopped,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult<C = MlpConfig> {
    pub trial: usize,
    pub config: C,
    pub fold_scores: Vec<f64>,
    pub resource_consumed: usize,
    pub running_score: Option<f64>,
    pub status: TrialStatus,
    /// Highest rung reached, if any.
    pub rung: Option<usize>,
}

impl<C> TrialResult<C> {
    pub fn new(trial: usize, config: C) -> Self {
        TrialResult {
            trial,
            config,
            fold_scores: Vec::new(),
            resource_consumed: 0,
            running_score: None,
            status: TrialStatus::Running,
            rung: None,
        }
    }

    pub fn push_score(&mut self, score: f64) {
        self.fold_scores.push(score);
        self.resource_consumed = self.fold_scores.len();
        self.running_score = Some(self.fold_scores.iter().sum::<f64>() / self.fold_scores.len() as f64);
    }

    /// Mean of the first `r` fold scores.
    pub fn score_at(&self, r: usize) -> f64 {
        self.fold_scores[..r].iter().sum::<f64>() / r as f64
    }
}

/// Inner-CV folds: `passes` independent shuffles of `k` folds each. Resource
/// unit `u` is fold `u % k` of pass `u / k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerFolds {
    pub k: usize,
    pub passes: Vec<Vec<Vec<usize>>>,
}

impl InnerFolds {
    pub fn new(n: usize, k: usize, passes: usize, seed_value: u64) -> Result<Self> {
        let passes = (0..passes)
            .map(|p| kfold_split(n, k, &mut seed::rng_at(seed_value, &[0xF01D, p as u64])))
            .collect::<Result<_>>()?;
        Ok(InnerFolds { k, passes })
    }

    pub fn units(&self) -> usize {
        self.k * self.passes.len()
    }

    /// (training indices, held-out indices) for a resource unit.
    pub fn unit(&self, u: usize) -> (Vec<usize>, &[usize]) {
        let folds = &self.passes[u / self.k];
        let f = u % self.k;
        let mut train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        train.sort_unstable();
        (train, &folds[f])
    }
}

/// Held-out MSE of one inner fold, on the scale of a normalizer fit to that
/// fold's training portion.
pub fn score_unit(model: &dyn ModelSpec, d: &Dataset, folds: &InnerFolds, unit: usize, seed_value: u64) -> Result<f64> {
    let (train_idx, held) = folds.unit(unit);
    let raw_train = d.subset(&train_idx);
    let norm = fit_normalizer(&raw_train)?;
    let train = apply_normalizer(&norm, &raw_train)?;
    let test = apply_normalizer(&norm, &d.subset(held))?;
    let fitted = model.fit(&train, &norm, seed_value)?;
    Ok(mse(&fitted.predict(&test)?, &test.targets()))
}

/// Scores folds `resource_consumed..up_to` of `result`, resuming where a
/// previous call stopped.
pub fn evaluate_trial<C>(
    model: &dyn ModelSpec,
    d: &Dataset,
    folds: &InnerFolds,
    up_to: usize,
    seed_value: u64,
    result: &mut TrialResult<C>,
) -> Result<()> {
    if up_to > folds.units() {
        return Err(Error::InvalidArgument(format!(
            "resource {up_to} exceeds the {} available folds",
            folds.units()
        )));
    }
    for u in result.resource_consumed..up_to {
        let s = score_unit(model, d, folds, u, seed::derive(seed_value, &[result.trial as u64, u as u64]))?;
        result.push_score(s);
    }
    Ok(())
}

/// One record of a search transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Start { trial: usize, config: serde_json::Value },
    FoldScore { trial: usize, unit: usize, score: f64 },
    Promote { trial: usize, from_rung: usize, to_rung: usize },
    Stop { trial: usize, rung: usize, resource: usize },
    Complete { trial: usize, score: f64 },
}

pub fn write_transcript<W: Write>(events: &[Event], mut w: W) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transcript<R: BufRead>(r: R) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AshaOutcome<C = MlpConfig> {
    pub best_trial: usize,
    pub best_config: C,
    pub best_score: f64,
    pub rung_resources: Vec<usize>,
    /// Trials that completed each rung.
    pub rung_counts: Vec<usize>,
    pub budget_used: usize,
    pub budget_ceiling: usize,
    pub trials: Vec<TrialResult<C>>,
    pub events: Vec<Event>,
}

struct Job {
    trial: usize,
    to_rung: usize,
}

struct Scheduler<'a, C> {
    cfg: &'a AshaConfig,
    resources: Vec<usize>,
    configs: Vec<C>,
    trials: Vec<TrialResult<C>>,
    /// Rung each trial is scheduled for or sitting at.
    target: Vec<usize>,
    in_flight: Vec<bool>,
    rung_members: Vec<Vec<usize>>,
    events: Vec<Event>,
}

impl<C: Clone + Serialize> Scheduler<'_, C> {
    fn promotable(&self, rung: usize) -> Option<usize> {
        let members = &self.rung_members[rung];
        let quota = members.len().div_ceil(self.cfg.reduction_factor);
        let r = self.resources[rung];
        let mut ranked: Vec<(f64, usize)> = members.iter().map(|&t| (self.trials[t].score_at(r), t)).collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ranked
            .into_iter()
            .take(quota)
            .map(|(_, t)| t)
            .find(|&t| self.target[t] == rung && !self.in_flight[t])
    }

    fn next_job(&mut self, synchronous: bool) -> Result<Option<Job>> {
        let last = self.resources.len() - 1;
        let can_start = self.trials.len() < self.configs.len();
        if synchronous && can_start {
            return self.start().map(Some);
        }
        let promote = if synchronous {
            (0..last).find_map(|r| self.promotable(r))
        } else {
            (0..last).rev().find_map(|r| self.promotable(r))
        };
        if let Some(t) = promote {
            let from = self.target[t];
            self.target[t] = from + 1;
            self.in_flight[t] = true;
            self.events.push(Event::Promote {
                trial: t,
                from_rung: from,
                to_rung: from + 1,
            });
            return Ok(Some(Job { trial: t, to_rung: from + 1 }));
        }
        if can_start {
            return self.start().map(Some);
        }
        Ok(None)
    }

    fn start(&mut self) -> Result<Job> {
        let t = self.trials.len();
        let config = self.configs[t].clone();
        self.events.push(Event::Start {
            trial: t,
            config: serde_json::to_value(&config)?,
        });
        self.trials.push(TrialResult::new(t, config));
        self.target.push(0);
        self.in_flight.push(true);
        Ok(Job { trial: t, to_rung: 0 })
    }
}

/// Runs ASHA over a fixed pool of configurations. `score(config, trial,
/// unit)` returns the held-out score of one resource unit. The best trial is
/// the completed one with the lowest running score (ties to the lower index).
pub fn asha_run<C, F>(configs: Vec<C>, cfg: &AshaConfig, exec: Exec, score: F) -> Result<AshaOutcome<C>>
where
    C: Clone + Serialize + Send + Sync,
    F: Fn(&C, usize, usize) -> Result<f64> + Sync,
{
    cfg.validate()?;
    if configs.is_empty() {
        return Err(Error::InvalidArgument("no trials to run".into()));
    }
    let n = configs.len();
    let resources = cfg.rung_resources();
    let last = resources.len() - 1;
    let synchronous = cfg.workers == 1;
    let mut s = Scheduler {
        cfg,
        rung_members: vec![Vec::new(); resources.len()],
        resources,
        configs,
        trials: Vec::new(),
        target: Vec::new(),
        in_flight: Vec::new(),
        events: Vec::new(),
    };
    let mut budget_used = 0;
    loop {
        let mut wave = Vec::new();
        while wave.len() < cfg.workers {
            match s.next_job(synchronous)? {
                Some(j) => wave.push(j),
                None => break,
            }
        }
        if wave.is_empty() {
            break;
        }
        let work: Vec<(usize, C, usize, usize)> = wave
            .iter()
            .map(|j| {
                let t = &s.trials[j.trial];
                (j.trial, t.config.clone(), t.resource_consumed, s.resources[j.to_rung])
            })
            .collect();
        let results = exec.map(&work, |_, (trial, config, from, to)| {
            (*from..*to).map(|u| score(config, *trial, u)).collect::<Result<Vec<f64>>>()
        });
        for (job, scores) in wave.iter().zip(results) {
            let scores = scores?;
            let t = job.trial;
            let from = s.trials[t].resource_consumed;
            for (i, sc) in scores.into_iter().enumerate() {
                s.events.push(Event::FoldScore { trial: t, unit: from + i, score: sc });
                s.trials[t].push_score(sc);
                budget_used += 1;
            }
            s.trials[t].rung = Some(job.to_rung);
            s.in_flight[t] = false;
            s.rung_members[job.to_rung].push(t);
            if job.to_rung == last {
                s.trials[t].status = TrialStatus::Completed;
                s.events.push(Event::Complete {
                    trial: t,
                    score: s.trials[t].running_score.expect("scored"),
                });
            }
        }
    }
    for t in 0..n {
        if s.trials[t].status != TrialStatus::Completed {
            s.trials[t].status = TrialStatus::Stopped;
            s.events.push(Event::Stop {
                trial: t,
                rung: s.trials[t].rung.unwrap_or(0),
                resource: s.trials[t].resource_consumed,
            });
        }
    }
    let budget_ceiling = cfg.budget_ceiling(n);
    assert!(budget_used <= budget_ceiling, "ASHA used {budget_used} fold trainings, ceiling {budget_ceiling}");
    let (best_score, best_trial) = s
        .trials
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .map(|t| (t.running_score.expect("scored"), t.trial))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("the best trial always reaches the last rung");
    Ok(AshaOutcome {
        best_trial,
        best_config: s.trials[best_trial].config.clone(),
        best_score,
        rung_counts: s.rung_members.iter().map(Vec::len).collect(),
        rung_resources: s.resources,
        budget_used,
        budget_ceiling,
        trials: s.trials,
        events: s.events,
    })
}

/// Re-runs the schedule using the fold scores recorded in a transcript and
/// returns the regenerated events; an intact transcript reproduces itself.
pub fn replay(events: &[Event], cfg: &AshaConfig) -> Result<Vec<Event>> {
    let mut configs = Vec::new();
    let mut scores = std::collections::HashMap::new();
    for e in events {
        match e {
            Event::Start { trial, config } => {
                if *trial != configs.len() {
                    return Err(Error::InvalidArgument(format!("trial {trial} started out of order")));
                }
                configs.push(config.clone());
            }
            Event::FoldScore { trial, unit, score } => {
                scores.insert((*trial, *unit), *score);
            }
            _ => {}
        }
    }
    let cfg = AshaConfig {
        trials_per_depth: configs.len(),
        ..*cfg
    };
    let index: Vec<usize> = (0..configs.len()).collect();
    let out = asha_run(index, &cfg, Exec::Serial, |_, t, u| {
        scores
            .get(&(t, u))
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("transcript lacks a score for trial {t}, fold {u}")))
    })?;
    Ok(out
        .events
        .into_iter()
        .map(|e| match e {
            Event::Start { trial, .. } => Event::Start {
                trial,
                config: configs[trial].clone(),
            },
            other => other,
        })
        .collect())
}

/// ASHA over `cfg.trials_per_depth` configurations sampled at `depth`, each
/// scored by MLP training on inner folds of the raw dataset `d`.
pub fn asha_search(
    space: &SearchSpace,
    depth: usize,
    d: &Dataset,
    cfg: &AshaConfig,
    seed_value: u64,
    exec: Exec,
) -> Result<AshaOutcome> {
    cfg.validate()?;
    if d.is_normalized() {
        return Err(Error::AlreadyNormalized);
    }
    let mut rng = seed::rng_at(seed_value, &[depth as u64, 0x5A3]);
    let configs = (0..cfg.trials_per_depth)
        .map(|_| sample_config(space, depth, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let folds = InnerFolds::new(d.len(), cfg.max_resource, cfg.inner_passes, seed::derive(seed_value, &[depth as u64]))?;
    let fold_seed = seed::derive(seed_value, &[depth as u64, 0x7E5]);
    asha_run(configs, cfg, exec, |c, trial, unit| {
        let model = AnnModel::new(c.clone());
        score_unit(&model, d, &folds, unit, seed::derive(fold_seed, &[trial as u64, unit as u64]))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthResult {
    pub depth: usize,
    pub best_score: f64,
    pub best_config: MlpConfig,
    pub outcome: AshaOutcome,
}

/// One search per depth of the space, in order.
pub fn depth_sweep(space: &SearchSpace, d: &Dataset, cfg: &AshaConfig, seed_value: u64, exec: Exec) -> Result<Vec<DepthResult>> {
    space.validate()?;
    space
        .depths
        .iter()
        .map(|&depth| {
            let outcome = asha_search(space, depth, d, cfg, seed_value, exec)?;
            Ok(DepthResult {
                depth,
                best_score: outcome.best_score,
                best_config: outcome.best_config.clone(),
                outcome,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
