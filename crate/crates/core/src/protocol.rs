//! Task schedule and the online open-world training loop: train on each
//! task's stream, extract prototypes, keep exemplars, replay them, then
//! evaluate against the current known/unknown split.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dlp::{make_adversarial, select_perturb_subset, DlpConfig, FeatureStore};
use crate::error::{check_dim, Error, Result};
use crate::fitting::{fit_all, sample_noise, FitResult};
use crate::flp::{apply_flp, FlpConfig};
use crate::metrics::{build_report, EvalRecord, MetricsReport};
use crate::model::{ModelConfig, ModelState};
use crate::numeric::{global_average_pool, FeatureMap, FeatureVector};
use crate::prototype::{build_prototypes_from_map, select_exemplars, PrototypeMatrix};
use crate::seed::{self, Purpose};
use crate::CategoryId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TaskMode {
    /// Several shuffled passes, no per-record limit.
    Offline { epochs: usize },
    /// One pass with batch size 1.
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: u32,
    pub categories: Vec<CategoryId>,
    #[serde(flatten)]
    pub mode: TaskMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchedule {
    tasks: Vec<TaskSpec>,
}

impl TaskSchedule {
    /// `n_tasks` tasks of `n_per_task` categories each, numbered
    /// contiguously from 0. The first task is offline.
    pub fn build(n_tasks: usize, n_per_task: usize, epochs_base: usize) -> Result<Self> {
        if n_tasks == 0 || n_per_task == 0 || epochs_base == 0 {
            return Err(Error::contract(
                "tasks, categories per task and base epochs must be >= 1",
            ));
        }
        let tasks = (0..n_tasks)
            .map(|i| TaskSpec {
                task_id: i as u32 + 1,
                categories: ((i * n_per_task) as CategoryId..((i + 1) * n_per_task) as CategoryId)
                    .collect(),
                mode: if i == 0 {
                    TaskMode::Offline {
                        epochs: epochs_base,
                    }
                } else {
                    TaskMode::Online
                },
            })
            .collect();
        Self::from_tasks(tasks)
    }

    /// Validate an explicit task list: ids `1..=N` in order, nonempty and
    /// pairwise disjoint category sets.
    pub fn from_tasks(tasks: Vec<TaskSpec>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::contract("schedule needs at least one task"));
        }
        let mut seen = BTreeSet::new();
        for (i, task) in tasks.iter().enumerate() {
            if task.task_id != i as u32 + 1 {
                return Err(Error::contract(format!(
                    "task at position {i} has id {}, expected {}",
                    task.task_id,
                    i + 1
                )));
            }
            if task.categories.is_empty() {
                return Err(Error::contract(format!(
                    "task {} has no categories",
                    task.task_id
                )));
            }
            if let TaskMode::Offline { epochs: 0 } = task.mode {
                return Err(Error::contract(format!(
                    "task {} has zero epochs",
                    task.task_id
                )));
            }
            for &c in &task.categories {
                if !seen.insert(c) {
                    return Err(Error::contract(format!(
                        "category {c} appears in more than one task"
                    )));
                }
            }
        }
        Ok(Self { tasks })
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, t: u32) -> Result<&TaskSpec> {
        t.checked_sub(1)
            .and_then(|i| self.tasks.get(i as usize))
            .ok_or_else(|| {
                Error::contract(format!(
                    "no task {t} in a {}-task schedule",
                    self.tasks.len()
                ))
            })
    }

    pub fn all_categories(&self) -> BTreeSet<CategoryId> {
        self.tasks
            .iter()
            .flat_map(|t| t.categories.iter().copied())
            .collect()
    }

    /// Categories learned in tasks `1..t`.
    pub fn previous(&self, t: u32) -> Result<Vec<CategoryId>> {
        self.task(t)?;
        Ok(self.tasks[..t as usize - 1]
            .iter()
            .flat_map(|s| s.categories.iter().copied())
            .collect())
    }

    /// Known set once task `t` completes.
    pub fn known(&self, t: u32) -> Result<BTreeSet<CategoryId>> {
        self.task(t)?;
        Ok(self.tasks[..t as usize]
            .iter()
            .flat_map(|s| s.categories.iter().copied())
            .collect())
    }

    /// Categories not yet introduced after task `t`.
    pub fn unknown(&self, t: u32) -> Result<BTreeSet<CategoryId>> {
        let known = self.known(t)?;
        Ok(self.all_categories().difference(&known).copied().collect())
    }
}

/// One labeled record as the protocol sees it. The toy backbone is global
/// average pooling: when `raw` is present the model input is its pooled
/// vector, otherwise it is `feature`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub category: CategoryId,
    pub feature: FeatureVector,
    pub raw: Option<FeatureMap>,
}

impl Sample {
    pub fn new(id: impl Into<String>, category: CategoryId, feature: FeatureVector) -> Self {
        Self {
            id: id.into(),
            category,
            feature,
            raw: None,
        }
    }

    pub fn input(&self) -> FeatureVector {
        match &self.raw {
            Some(raw) => global_average_pool(raw),
            None => self.feature.clone(),
        }
    }

    /// The tensor DLP perturbs: `raw`, or the feature as a `(C, 1, 1)` map.
    pub fn raw_view(&self) -> FeatureMap {
        match &self.raw {
            Some(raw) => raw.clone(),
            None => FeatureMap::from_vector(&self.feature),
        }
    }
}

/// Training streams keyed by task id, plus the test set shared by all tasks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamData {
    pub train: BTreeMap<u32, Vec<Sample>>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionStrategy {
    #[default]
    Prototype,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub seed: u64,
    pub exemplars_per_class: usize,
    pub selection: SelectionStrategy,
    pub flp: FlpConfig,
    /// Also perturb exemplar features during replay.
    pub flp_on_replay: bool,
    pub dlp: DlpConfig,
    pub bins: usize,
    pub group_size: usize,
    pub max_groups: usize,
    pub model: ModelConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            exemplars_per_class: 50,
            selection: SelectionStrategy::Prototype,
            flp: FlpConfig::default(),
            flp_on_replay: false,
            dlp: DlpConfig::default(),
            bins: crate::fitting::DEFAULT_BINS,
            group_size: crate::dlp::DEFAULT_GROUP_SIZE,
            max_groups: crate::dlp::DEFAULT_MAX_GROUPS,
            model: ModelConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.exemplars_per_class == 0 {
            return Err(Error::contract("exemplars_per_class must be >= 1"));
        }
        if self.bins < 10 {
            return Err(Error::contract("bins must be >= 10"));
        }
        self.flp.validate()?;
        self.dlp.validate()?;
        let m = &self.model;
        if !(m.learning_rate >= 0.0) || !m.learning_rate.is_finite() {
            return Err(Error::contract("learning_rate must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&m.unknown_threshold) {
            return Err(Error::contract("unknown_threshold must lie in [0, 1]"));
        }
        FeatureStore::new(self.group_size, self.max_groups).map(|_| ())
    }
}

/// Bookkeeping for one task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskLedger {
    pub task_id: u32,
    pub online: bool,
    pub stream_records: usize,
    pub adversarial_records: usize,
    pub gradient_updates: usize,
    /// Largest per-record update count in this task's stream (online only).
    pub max_stream_updates: u32,
    pub flp_applied: usize,
    /// Features FLP could not perturb because their norm was zero.
    pub flp_skipped_zero_norm: usize,
    pub dlp_family: Option<String>,
    pub dlp_fit_failed: bool,
    pub replay_records: usize,
    pub max_replay_updates: u32,
    pub exemplars_per_category: BTreeMap<CategoryId, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub tasks: Vec<TaskLedger>,
}

impl RunLedger {
    /// Largest update count any incremental-task record received.
    pub fn max_online_updates(&self) -> u32 {
        self.tasks
            .iter()
            .filter(|t| t.online)
            .map(|t| t.max_stream_updates)
            .max()
            .unwrap_or(0)
    }
}

/// Update counter that refuses a second update for the same record.
#[derive(Debug, Default)]
struct OnceCounter {
    counts: BTreeMap<String, u32>,
}

impl OnceCounter {
    fn record(&mut self, id: &str, context: &str) -> Result<()> {
        let n = self.counts.entry(id.to_string()).or_insert(0);
        *n += 1;
        if *n > 1 {
            return Err(Error::ProtocolViolation(format!(
                "{context}: record {id} would receive update #{n}"
            )));
        }
        Ok(())
    }

    fn max(&self) -> u32 {
        self.counts.values().copied().max().unwrap_or(0)
    }
}

/// Everything the loop carries from one task to the next.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    pub model: ModelState,
    pub prototypes: PrototypeMatrix,
    pub store: FeatureStore,
    pub exemplars: BTreeMap<CategoryId, Vec<Sample>>,
    pub ledger: RunLedger,
}

impl ProtocolState {
    pub fn new(feature_dim: usize, cfg: &ProtocolConfig) -> Result<Self> {
        Ok(Self {
            model: ModelState::init(feature_dim, &[], cfg.seed, cfg.model)?,
            prototypes: PrototypeMatrix::empty(),
            store: FeatureStore::new(cfg.group_size, cfg.max_groups)?,
            exemplars: BTreeMap::new(),
            ledger: RunLedger::default(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<MetricsReport>,
    pub predictions: Vec<Vec<EvalRecord>>,
    pub state: ProtocolState,
}

/// One training record after optional DLP: the original or its adversarial
/// copy, already mapped to model input space.
struct TrainItem {
    id: String,
    category: CategoryId,
    input: FeatureVector,
}

fn validate_data(data: &StreamData, schedule: &TaskSchedule, dim: usize) -> Result<()> {
    for task in schedule.tasks() {
        let records = data.train.get(&task.task_id).ok_or_else(|| {
            Error::contract(format!("no training stream for task {}", task.task_id))
        })?;
        let allowed: BTreeSet<_> = task.categories.iter().collect();
        for s in records {
            if !allowed.contains(&s.category) {
                return Err(Error::contract(format!(
                    "record {} of task {} has category {} outside the task",
                    s.id, task.task_id, s.category
                )));
            }
        }
    }
    let all = schedule.all_categories();
    for s in data.train.values().flatten().chain(&data.test) {
        check_dim(dim, s.input().dim())?;
        if !all.contains(&s.category) {
            return Err(Error::contract(format!(
                "record {} has category {} outside the schedule",
                s.id, s.category
            )));
        }
    }
    if data.test.is_empty() {
        return Err(Error::contract("test stream is empty"));
    }
    Ok(())
}

/// Run every task of `schedule` in order and report metrics after each.
pub fn run_protocol(
    cfg: &ProtocolConfig,
    schedule: &TaskSchedule,
    data: &StreamData,
    feature_dim: usize,
) -> Result<RunOutcome> {
    cfg.validate()?;
    validate_data(data, schedule, feature_dim)?;
    let mut state = ProtocolState::new(feature_dim, cfg)?;
    let mut reports = Vec::with_capacity(schedule.len());
    let mut predictions = Vec::with_capacity(schedule.len());
    for task in schedule.tasks() {
        let train = &data.train[&task.task_id];
        run_task(&mut state, cfg, schedule, task, train)?;
        let records = evaluate(&state.model, &data.test, schedule, task.task_id)?;
        reports.push(build_report(&records, schedule, task.task_id)?);
        predictions.push(records);
    }
    Ok(RunOutcome {
        reports,
        predictions,
        state,
    })
}

/// Fit the pooled store once and return the best converged family, or
/// `None` when nothing usable converged.
fn fit_noise_source(store: &FeatureStore, bins: usize) -> Result<Option<FitResult>> {
    let pooled = store.pooled_values()?;
    match fit_all(&pooled, bins) {
        Ok(report) => Ok(report.best().filter(|f| f.converged).cloned()),
        Err(Error::DegenerateData(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Steps (1) to (5) of one task: optional DLP, training, prototype and
/// store update, exemplar selection and replay.
pub fn run_task(
    state: &mut ProtocolState,
    cfg: &ProtocolConfig,
    schedule: &TaskSchedule,
    task: &TaskSpec,
    train: &[Sample],
) -> Result<()> {
    let t = task.task_id;
    let online = task.mode == TaskMode::Online;
    let mut ledger = TaskLedger {
        task_id: t,
        online,
        stream_records: train.len(),
        ..Default::default()
    };
    state.model.add_classes(&task.categories, cfg.seed)?;

    // (1) Data-level perturbation for incremental tasks.
    let mut items: Vec<TrainItem> = Vec::with_capacity(train.len());
    let noise_source = if t > 1 && cfg.dlp.frequency > 0.0 && !state.store.is_empty() {
        let fit = fit_noise_source(&state.store, cfg.bins)?;
        ledger.dlp_fit_failed = fit.is_none();
        ledger.dlp_family = fit.as_ref().map(|f| f.family().to_string());
        fit
    } else {
        None
    };
    let flags = match &noise_source {
        Some(_) => select_perturb_subset(
            train.len(),
            cfg.dlp.frequency,
            seed::derive(cfg.seed, Purpose::DlpSubset, t as u64, 0),
        )?,
        None => vec![false; train.len()],
    };

    // (2) Training order: a seeded shuffle, adversarial copies right after
    // their source record.
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut seed::rng(cfg.seed, Purpose::TrainOrder, t as u64, 0));
    for &i in &order {
        let s = &train[i];
        items.push(TrainItem {
            id: s.id.clone(),
            category: s.category,
            input: s.input(),
        });
        if let (true, Some(fit)) = (flags[i], &noise_source) {
            let view = s.raw_view();
            let noise = sample_noise(
                fit,
                view.shape(),
                seed::derive(cfg.seed, Purpose::DlpNoise, t as u64, i as u64),
            )?;
            let adv = make_adversarial(&view, &noise, &cfg.dlp)?;
            items.push(TrainItem {
                id: format!("{}#adv", s.id),
                category: s.category,
                input: global_average_pool(&adv),
            });
            ledger.adversarial_records += 1;
        }
    }

    // FLP mixes toward prototypes of categories learned before this task.
    let old = state.prototypes.clone();
    let mut coins = seed::rng(cfg.seed, Purpose::FlpCoin, t as u64, 0);
    match task.mode {
        TaskMode::Offline { epochs } => {
            for epoch in 0..epochs {
                let mut idx: Vec<usize> = (0..items.len()).collect();
                if epoch > 0 {
                    idx.shuffle(&mut seed::rng(
                        cfg.seed,
                        Purpose::TrainOrder,
                        t as u64,
                        epoch as u64,
                    ));
                }
                for i in idx {
                    let item = &items[i];
                    let x = flp_input(&item.input, &old, &cfg.flp, coins.random(), &mut ledger)?;
                    state.model.train_step(&x, item.category)?;
                    ledger.gradient_updates += 1;
                }
            }
        }
        TaskMode::Online => {
            let mut counter = OnceCounter::default();
            for item in &items {
                counter.record(&item.id, &format!("task {t} stream"))?;
                let x = flp_input(&item.input, &old, &cfg.flp, coins.random(), &mut ledger)?;
                state.model.train_step(&x, item.category)?;
                ledger.gradient_updates += 1;
            }
            ledger.max_stream_updates = counter.max();
        }
    }

    // (3) Inference pass: prototypes of the new categories and store
    // update, over the clean records in stream order.
    let mut by_category: BTreeMap<CategoryId, Vec<(String, FeatureVector)>> = BTreeMap::new();
    for &i in &order {
        let s = &train[i];
        let f = s.input();
        state.store.push(s.category, f.clone())?;
        by_category
            .entry(s.category)
            .or_default()
            .push((s.id.clone(), f));
    }
    let features: BTreeMap<CategoryId, Vec<FeatureVector>> = by_category
        .iter()
        .map(|(c, v)| (*c, v.iter().map(|(_, f)| f.clone()).collect()))
        .collect();
    let new_prototypes = build_prototypes_from_map(&features)?;
    state.prototypes = state.prototypes.append(&new_prototypes)?;

    // (4) Exemplar selection.
    let by_id: BTreeMap<&str, &Sample> = train.iter().map(|s| (s.id.as_str(), s)).collect();
    for (&c, feats) in &by_category {
        let chosen: Vec<String> = match cfg.selection {
            SelectionStrategy::Prototype => {
                let proto = new_prototypes
                    .get(c)
                    .expect("prototype built for every category");
                select_exemplars(c, feats, proto, cfg.exemplars_per_class)?.ranked_ids
            }
            SelectionStrategy::Random => {
                let mut rng = seed::rng(cfg.seed, Purpose::ExemplarRandom, t as u64, c as u64);
                let mut ids: Vec<String> = feats
                    .choose_multiple(&mut rng, cfg.exemplars_per_class)
                    .map(|(id, _)| id.clone())
                    .collect();
                ids.sort();
                ids
            }
        };
        ledger.exemplars_per_category.insert(c, chosen.len());
        let kept = chosen
            .iter()
            .map(|id| (*by_id[id.as_str()]).clone())
            .collect();
        state.exemplars.insert(c, kept);
    }

    // (5) Replay over exemplars of every known category.
    if t > 1 {
        let known = schedule.known(t)?;
        let replay: Vec<&Sample> = known
            .iter()
            .filter_map(|c| state.exemplars.get(c))
            .flatten()
            .collect();
        let replay_flp = cfg.flp_on_replay.then_some((&old, &cfg.flp));
        let (count, max) = replay_finetune(
            &mut state.model,
            &replay,
            cfg.seed,
            t,
            replay_flp,
            &mut ledger,
        )?;
        ledger.replay_records = count;
        ledger.max_replay_updates = max;
    }

    state.ledger.tasks.push(ledger);
    Ok(())
}

fn flp_input(
    x: &FeatureVector,
    old: &PrototypeMatrix,
    flp: &FlpConfig,
    coin: f64,
    ledger: &mut TaskLedger,
) -> Result<FeatureVector> {
    if old.is_empty() || coin >= flp.frequency {
        return Ok(x.clone());
    }
    match apply_flp(x, old, flp, coin) {
        Ok(f) => {
            ledger.flp_applied += 1;
            Ok(f)
        }
        Err(Error::Degenerate(_)) => {
            ledger.flp_skipped_zero_norm += 1;
            Ok(x.clone())
        }
        Err(e) => Err(e),
    }
}

/// One seeded, shuffled pass of single-record updates over `exemplars`.
/// Returns the number of records replayed and the largest update count any
/// of them received. An empty set leaves the model untouched.
pub fn replay_finetune(
    model: &mut ModelState,
    exemplars: &[&Sample],
    seed: u64,
    task_id: u32,
    flp: Option<(&PrototypeMatrix, &FlpConfig)>,
    ledger: &mut TaskLedger,
) -> Result<(usize, u32)> {
    if exemplars.is_empty() {
        return Ok((0, 0));
    }
    let mut order: Vec<usize> = (0..exemplars.len()).collect();
    order.shuffle(&mut seed::rng(
        seed,
        Purpose::ReplayOrder,
        task_id as u64,
        0,
    ));
    let mut coins = seed::rng(seed, Purpose::FlpCoin, task_id as u64, 1);
    let mut counter = OnceCounter::default();
    for i in order {
        let s = exemplars[i];
        counter.record(&s.id, &format!("task {task_id} replay"))?;
        let mut x = s.input();
        if let Some((m, cfg)) = flp {
            x = flp_input(&x, m, cfg, coins.random(), ledger)?;
        }
        model.train_step(&x, s.category)?;
        ledger.gradient_updates += 1;
    }
    Ok((exemplars.len(), counter.max()))
}

/// Predict every test record and label it against the split after `t`.
pub fn evaluate(
    model: &ModelState,
    test: &[Sample],
    schedule: &TaskSchedule,
    t: u32,
) -> Result<Vec<EvalRecord>> {
    test.iter()
        .map(|s| {
            let p = model.predict(&s.input())?;
            EvalRecord::labeled(s.id.clone(), s.category, p, schedule, t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn schedule_examples() {
        let s = TaskSchedule::build(1, 3, 2).unwrap();
        assert_eq!(s.known(1).unwrap().len(), 3);
        assert!(s.unknown(1).unwrap().is_empty());

        let s = TaskSchedule::build(4, 20, 1).unwrap();
        assert_eq!(s.all_categories().len(), 80);
        assert_eq!(s.known(2).unwrap().len(), 40);
        assert_eq!(s.unknown(2).unwrap().len(), 40);
        for t in 1..=4 {
            let k = s.known(t).unwrap();
            let u = s.unknown(t).unwrap();
            assert!(k.is_disjoint(&u));
            assert_eq!(k.len() + u.len(), 80);
            assert_eq!(k.len(), 20 * t as usize);
        }
        assert!(s.task(5).is_err());
        assert!(s.task(0).is_err());

        let overlap = TaskSchedule::from_tasks(vec![
            TaskSpec {
                task_id: 1,
                categories: vec![1, 2],
                mode: TaskMode::Offline { epochs: 1 },
            },
            TaskSpec {
                task_id: 2,
                categories: vec![2, 3],
                mode: TaskMode::Online,
            },
        ]);
        assert!(overlap.is_err());
        assert!(TaskSchedule::build(0, 2, 1).is_err());
    }

    fn cluster_data(
        schedule: &TaskSchedule,
        dim: usize,
        per_class: usize,
        seed: u64,
    ) -> StreamData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let cats = schedule.all_categories();
        let means: BTreeMap<CategoryId, Vec<f64>> = cats
            .iter()
            .map(|&c| (c, (0..dim).map(|_| 4.0 * n.sample(&mut rng)).collect()))
            .collect();
        let draw = |c: CategoryId, id: String, rng: &mut ChaCha8Rng| {
            let f = means[&c].iter().map(|m| m + n.sample(rng)).collect();
            Sample::new(id, c, FeatureVector::new(f).unwrap())
        };
        let mut data = StreamData::default();
        for task in schedule.tasks() {
            let mut v = Vec::new();
            for &c in &task.categories {
                for i in 0..per_class {
                    v.push(draw(c, format!("t{}c{c}i{i}", task.task_id), &mut rng));
                }
            }
            data.train.insert(task.task_id, v);
        }
        for &c in &cats {
            for i in 0..20 {
                data.test.push(draw(c, format!("test{c}i{i}"), &mut rng));
            }
        }
        data
    }

    #[test]
    fn single_offline_task_matches_plain_loop() {
        let schedule = TaskSchedule::build(1, 3, 3).unwrap();
        let data = cluster_data(&schedule, 4, 30, 5);
        let cfg = ProtocolConfig {
            seed: 11,
            flp: FlpConfig {
                gamma: 0.5,
                frequency: 0.0,
            },
            dlp: DlpConfig {
                frequency: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = run_protocol(&cfg, &schedule, &data, 4).unwrap();

        let train = &data.train[&1];
        let mut model = ModelState::init(4, &[0, 1, 2], 11, cfg.model).unwrap();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(11, Purpose::TrainOrder, 1, 0));
        for epoch in 0..3 {
            let mut idx: Vec<usize> = (0..order.len()).collect();
            if epoch > 0 {
                idx.shuffle(&mut seed::rng(11, Purpose::TrainOrder, 1, epoch));
            }
            for i in idx {
                let s = &train[order[i]];
                model.train_step(&s.feature, s.category).unwrap();
            }
        }
        assert_eq!(out.state.model, model);
    }

    #[test]
    fn two_task_run_respects_online_limit() {
        let schedule = TaskSchedule::build(2, 3, 2).unwrap();
        let data = cluster_data(&schedule, 6, 60, 9);
        let cfg = ProtocolConfig {
            seed: 3,
            exemplars_per_class: 10,
            flp: FlpConfig {
                gamma: 0.5,
                frequency: 0.5,
            },
            dlp: DlpConfig {
                frequency: 0.2,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = run_protocol(&cfg, &schedule, &data, 6).unwrap();
        let ledger = &out.state.ledger;
        assert_eq!(ledger.max_online_updates(), 1);
        let t2 = &ledger.tasks[1];
        assert!(t2.adversarial_records > 0);
        assert!(t2.dlp_family.is_some());
        assert!(t2.flp_applied > 0);
        assert_eq!(t2.replay_records, 60);
        assert_eq!(t2.max_replay_updates, 1);
        assert!(t2.exemplars_per_category.values().all(|&n| n == 10));
        assert_eq!(out.reports.len(), 2);
        assert_eq!(out.reports[0].map_previous, None);
        assert!(out.reports[1].map_previous.is_some());
        assert_eq!(out.state.prototypes.len(), 6);

        let again = run_protocol(&cfg, &schedule, &data, 6).unwrap();
        assert_eq!(again.reports, out.reports);
    }

    #[test]
    fn duplicate_online_record_is_a_violation() {
        let schedule = TaskSchedule::build(2, 2, 1).unwrap();
        let mut data = cluster_data(&schedule, 3, 10, 2);
        let dup = data.train[&2][0].clone();
        data.train.get_mut(&2).unwrap().push(dup);
        let cfg = ProtocolConfig {
            dlp: DlpConfig {
                frequency: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(matches!(
            run_protocol(&cfg, &schedule, &data, 3),
            Err(Error::ProtocolViolation(_))
        ));
    }

    #[test]
    fn empty_replay_is_identity() {
        let mut model = ModelState::init(2, &[0], 1, ModelConfig::default()).unwrap();
        let before = model.clone();
        let mut ledger = TaskLedger::default();
        assert_eq!(
            replay_finetune(&mut model, &[], 1, 2, None, &mut ledger).unwrap(),
            (0, 0)
        );
        assert_eq!(model, before);
    }

    #[test]
    fn replay_lowers_exemplar_loss_on_most_seeds() {
        let mut wins = 0;
        for seed in 0..10u64 {
            let schedule = TaskSchedule::build(1, 3, 1).unwrap();
            let data = cluster_data(&schedule, 5, 40, seed);
            let samples: Vec<&Sample> = data.train[&1].iter().collect();
            let mut model = ModelState::init(5, &[0, 1, 2], seed, ModelConfig::default()).unwrap();
            let loss = |m: &ModelState| -> f64 {
                samples
                    .iter()
                    .map(|s| m.loss(&s.feature, s.category).unwrap())
                    .sum()
            };
            let before = loss(&model);
            let mut ledger = TaskLedger::default();
            replay_finetune(&mut model, &samples, seed, 2, None, &mut ledger).unwrap();
            wins += (loss(&model) <= before) as usize;
        }
        assert!(wins >= 6, "{wins}/10");
    }

    #[test]
    fn rejects_out_of_task_records() {
        let schedule = TaskSchedule::build(2, 2, 1).unwrap();
        let mut data = cluster_data(&schedule, 3, 5, 1);
        data.train.get_mut(&1).unwrap()[0].category = 3;
        assert!(run_protocol(&ProtocolConfig::default(), &schedule, &data, 3).is_err());
    }
}
