//! The sequential model-based search loop: initial random sampling,
//! surrogate refitting, candidate-batch generation, lower-confidence-bound
//! ranking, selection, and budget accounting.
//!
//! One quirk is deliberate: with the GP learner, phase 2 does not rank
//! candidates with the model at all. It draws one random valid configuration
//! per iteration and, when that draw repeats an already-executed one, the
//! iteration still consumes budget without executing anything. Small spaces
//! therefore finish a large GP budget with only a fraction of it spent on
//! real evaluations, while the tree learners (which exclude evaluated
//! configurations from every batch) stop early once the space is exhausted.

use std::collections::HashSet;

use thiserror::Error;

use crate::evaluator::TrialRecord;
use crate::space::{Configuration, ParamSpace, Sampler, SpaceError};
use crate::surrogate::{fit, Prediction, Surrogate, SurrogateError, SurrogateKind, TrainingSet};

pub const DEFAULT_MAX_EVALS: usize = 100;
pub const DEFAULT_KAPPA: f64 = 1.96;
pub const DEFAULT_BATCH_SIZE: usize = 512;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("search settings: {0}")]
    BadSettings(String),
    #[error("no unevaluated valid configuration remains")]
    Exhausted,
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

/// Knobs of one search run.
#[derive(Debug, Clone)]
pub struct SearchSettings {
    /// Evaluation budget, counting GP-path duplicate skips.
    pub max_evals: usize,
    /// Exploration weight κ in the acquisition score `mean − κ·std`.
    /// Zero always exploits the lowest predicted mean; large values chase
    /// predictive variance.
    pub kappa: f64,
    pub learner: SurrogateKind,
    /// Valid candidates sampled per model-guided iteration.
    pub batch_size: usize,
    /// Random evaluations before the model takes over. Defaults to
    /// `max(10, 2 × number of parameters)`, capped at `max_evals`.
    pub n_init: Option<usize>,
    pub seed: u64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            max_evals: DEFAULT_MAX_EVALS,
            kappa: DEFAULT_KAPPA,
            learner: SurrogateKind::Rf,
            batch_size: DEFAULT_BATCH_SIZE,
            n_init: None,
            seed: 0,
        }
    }
}

impl SearchSettings {
    pub fn check(&self) -> Result<(), OptimizerError> {
        if self.max_evals == 0 {
            return Err(OptimizerError::BadSettings("max_evals must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(OptimizerError::BadSettings("batch_size must be positive".into()));
        }
        if !self.kappa.is_finite() || self.kappa < 0.0 {
            return Err(OptimizerError::BadSettings("kappa must be finite and non-negative".into()));
        }
        match self.n_init {
            Some(0) => {
                return Err(OptimizerError::BadSettings("n_init must be positive".into()));
            }
            Some(n) if n > self.max_evals => {
                return Err(OptimizerError::BadSettings(format!(
                    "n_init ({n}) exceeds max_evals ({})",
                    self.max_evals
                )));
            }
            _ => {}
        }
        Ok(())
    }

    /// Number of initial random evaluations for a space with `n_params`
    /// parameters.
    pub fn resolved_n_init(&self, n_params: usize) -> usize {
        self.n_init
            .unwrap_or_else(|| 10usize.max(2 * n_params))
            .min(self.max_evals)
    }
}

/// Everything observed so far in one search.
#[derive(Debug, Default)]
pub struct SearchState {
    /// Executed trials, in execution order. Failed trials are kept (their
    /// penalty metric is what the surrogate trains on).
    pub evaluated: Vec<TrialRecord>,
    /// Index into `evaluated` of the earliest trial achieving the lowest
    /// ok-status metric.
    pub best_index: Option<usize>,
    /// Budget consumed: executed trials plus GP-path duplicate skips.
    pub budget_used: usize,
    executed: HashSet<Configuration>,
}

impl SearchState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn best(&self) -> Option<&TrialRecord> {
        self.best_index.map(|i| &self.evaluated[i])
    }

    pub fn already_executed(&self, cfg: &Configuration) -> bool {
        self.executed.contains(cfg)
    }

    fn record(&mut self, record: TrialRecord) {
        self.executed.insert(record.configuration.clone());
        if record.status.is_ok() {
            let beats = self
                .best()
                .is_none_or(|current| record.metric < current.metric);
            if beats {
                self.best_index = Some(self.evaluated.len());
            }
        }
        self.evaluated.push(record);
        self.budget_used += 1;
    }

    fn skip(&mut self) {
        self.budget_used += 1;
    }
}

/// Lower-confidence-bound score per prediction: `mean − kappa·std`.
/// Lower scores are more promising, since the metric is minimized.
pub fn acquisition_lcb(preds: &[Prediction], kappa: f64) -> Vec<f64> {
    preds.iter().map(|p| p.mean - kappa * p.std).collect()
}

/// How one model-guided proposal was decided: the candidate batch in
/// sampling order, each candidate's acquisition score, and the index chosen.
#[derive(Debug, Clone)]
pub struct ProposalLog {
    pub batch: Vec<Configuration>,
    pub scores: Vec<f64>,
    pub chosen: usize,
}

/// First index with the strictly lowest score; ties keep the earliest.
fn argmin_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = i;
        }
    }
    best
}

/// Score a candidate batch under the model and pick the acquisition argmin.
/// Ties are broken by batch order, so the outcome is deterministic in
/// (batch, model, kappa).
pub fn rank_candidates(
    space: &ParamSpace,
    batch: Vec<Configuration>,
    model: &Surrogate,
    settings: &SearchSettings,
) -> Result<ProposalLog, OptimizerError> {
    let scheme = settings.learner.encoding_scheme();
    let rows: Vec<Vec<f64>> = batch
        .iter()
        .map(|cfg| space.encode(cfg, scheme))
        .collect::<Result<_, _>>()?;
    let preds = model.predict(&rows, space.encoding_width(scheme))?;
    let scores = acquisition_lcb(&preds, settings.kappa);
    let chosen = argmin_first(&scores);
    Ok(ProposalLog { batch, scores, chosen })
}

/// One model-guided proposal: sample a batch of valid configurations not yet
/// executed, rank by LCB, return the winner. `Exhausted` when nothing
/// unevaluated remains.
pub fn propose(
    space: &ParamSpace,
    sampler: &mut Sampler,
    state: &SearchState,
    model: &Surrogate,
    settings: &SearchSettings,
) -> Result<(Configuration, ProposalLog), OptimizerError> {
    let batch = sampler.sample(settings.batch_size, &state.executed)?;
    if batch.is_empty() {
        return Err(OptimizerError::Exhausted);
    }
    let log = rank_candidates(space, batch, model, settings)?;
    Ok((log.batch[log.chosen].clone(), log))
}

fn training_set(
    space: &ParamSpace,
    records: &[TrialRecord],
    kind: SurrogateKind,
) -> Result<TrainingSet, OptimizerError> {
    let scheme = kind.encoding_scheme();
    let inputs: Vec<Vec<f64>> = records
        .iter()
        .map(|r| space.encode(&r.configuration, scheme))
        .collect::<Result<_, _>>()?;
    let targets: Vec<f64> = records.iter().map(|r| r.metric).collect();
    Ok(TrainingSet::new(inputs, targets)?)
}

/// Run a full search: `n_init` random evaluations, then model-guided
/// iterations until the budget is spent or the space is exhausted. The
/// callback is invoked serially, once per executed configuration; it must
/// return a failed record (not panic) for broken candidates.
pub fn run_search<F>(
    space: &ParamSpace,
    settings: &SearchSettings,
    evaluate: F,
) -> Result<SearchState, OptimizerError>
where
    F: FnMut(&Configuration) -> TrialRecord,
{
    run_search_observed(space, settings, evaluate, |_| {})
}

/// [`run_search`] with a hook that sees every model-guided proposal before
/// it executes — the test seam for the "each trial was the acquisition
/// argmin of its batch" invariant, and the CLI's verbose-logging hook.
pub fn run_search_observed<F, O>(
    space: &ParamSpace,
    settings: &SearchSettings,
    mut evaluate: F,
    mut observer: O,
) -> Result<SearchState, OptimizerError>
where
    F: FnMut(&Configuration) -> TrialRecord,
    O: FnMut(&ProposalLog),
{
    settings.check()?;
    let mut sampler = Sampler::with_seed(space, settings.seed);
    let mut state = SearchState::new();

    let n_init = settings.resolved_n_init(space.len());
    let initial = sampler.sample(n_init, &HashSet::new())?;
    for cfg in initial {
        if state.budget_used >= settings.max_evals {
            break;
        }
        state.record(evaluate(&cfg));
    }

    if settings.learner == SurrogateKind::Gp {
        // Random draws with duplicate skips: a repeat burns budget without
        // executing, so the model never steers and small spaces can consume
        // a large budget while executing only a handful of trials.
        while state.budget_used < settings.max_evals {
            let cfg = sampler.draw()?;
            if state.already_executed(&cfg) {
                state.skip();
            } else {
                state.record(evaluate(&cfg));
            }
        }
        return Ok(state);
    }

    while state.budget_used < settings.max_evals {
        if state.evaluated.len() < settings.learner.min_rows() {
            // Not enough observations to fit this learner yet; fall back to
            // one more random (still unevaluated) configuration.
            let batch = sampler.sample(1, &state.executed)?;
            let Some(cfg) = batch.into_iter().next() else {
                break;
            };
            state.record(evaluate(&cfg));
            continue;
        }
        let data = training_set(space, &state.evaluated, settings.learner)?;
        let refit_seed = settings.seed.wrapping_add(state.evaluated.len() as u64);
        let model = fit(settings.learner, &data, refit_seed)?;
        match propose(space, &mut sampler, &state, &model, settings) {
            Ok((cfg, log)) => {
                observer(&log);
                state.record(evaluate(&cfg));
            }
            Err(OptimizerError::Exhausted) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(state)
}
