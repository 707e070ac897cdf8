//! Run configuration, synthetic stream generation, JSON-Lines stream files
//! and report output.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dlp::{DlpConfig, StoreDump};
use crate::error::{Error, Result};
use crate::flp::FlpConfig;
use crate::metrics::{EvalRecord, MetricsReport};
use crate::model::ModelConfig;
use crate::numeric::{FeatureMap, FeatureVector};
use crate::protocol::{
    ProtocolConfig, RunLedger, Sample, SelectionStrategy, StreamData, TaskSchedule,
};
use crate::seed::{self, Purpose};
use crate::CategoryId;

pub const SEED_ENV: &str = "OLOWOD_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One line of a stream file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamRecord {
    pub image_id: String,
    pub task_id: u32,
    pub split: Split,
    pub category_id: CategoryId,
    pub feature: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_shape: Option<(usize, usize, usize)>,
}

impl StreamRecord {
    /// Check the record against the configured feature dimension.
    pub fn validate(&self, feature_dim: usize) -> std::result::Result<(), String> {
        if self.feature.len() != feature_dim {
            return Err(format!(
                "feature has {} values, expected {feature_dim}",
                self.feature.len()
            ));
        }
        if self.feature.iter().any(|v| !v.is_finite()) {
            return Err("feature contains a non-finite value".into());
        }
        match (&self.raw, self.raw_shape) {
            (None, None) => {}
            (Some(raw), Some((c, h, w))) => {
                if raw.len() != c * h * w {
                    return Err(format!(
                        "raw has {} values but raw_shape ({c}, {h}, {w}) needs {}",
                        raw.len(),
                        c * h * w
                    ));
                }
                if c != feature_dim {
                    return Err(format!("raw has {c} channels, expected {feature_dim}"));
                }
                if raw.iter().any(|v| !v.is_finite()) {
                    return Err("raw contains a non-finite value".into());
                }
            }
            _ => return Err("raw and raw_shape must be given together".into()),
        }
        Ok(())
    }

    pub fn to_sample(&self) -> Result<Sample> {
        let raw = match (&self.raw, self.raw_shape) {
            (Some(raw), Some(shape)) => Some(FeatureMap::new(shape, raw.clone())?),
            _ => None,
        };
        Ok(Sample {
            id: self.image_id.clone(),
            category: self.category_id,
            feature: FeatureVector::new(self.feature.clone())?,
            raw,
        })
    }
}

/// Per-category Gaussian clusters: means drawn with per-coordinate standard
/// deviation `separation`, samples scattered around them with `spread`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub spread: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            train_per_class: 100,
            test_per_class: 50,
            separation: 1.0,
            spread: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub feature_dim: usize,
    pub tasks: usize,
    pub n_per_task: usize,
    pub epochs_base: usize,
    pub exemplars_per_class: usize,
    pub gamma: f64,
    pub flp_frequency: f64,
    pub flp_on_replay: bool,
    pub dlp_frequency: f64,
    pub dlp_noise_scale: f64,
    pub dlp_clamp: Option<(f64, f64)>,
    pub group_size: usize,
    pub max_groups: usize,
    pub bins: usize,
    pub unknown_threshold: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub selection_strategy: SelectionStrategy,
    pub geometry: Geometry,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        Self {
            feature_dim: 32,
            tasks: 4,
            n_per_task: 20,
            epochs_base: 5,
            exemplars_per_class: p.exemplars_per_class,
            gamma: p.flp.gamma,
            flp_frequency: p.flp.frequency,
            flp_on_replay: p.flp_on_replay,
            dlp_frequency: p.dlp.frequency,
            dlp_noise_scale: p.dlp.noise_scale,
            dlp_clamp: p.dlp.clamp,
            group_size: p.group_size,
            max_groups: p.max_groups,
            bins: p.bins,
            unknown_threshold: p.model.unknown_threshold,
            learning_rate: p.model.learning_rate,
            seed: p.seed,
            selection_strategy: p.selection,
            geometry: Geometry::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            seed: self.seed,
            exemplars_per_class: self.exemplars_per_class,
            selection: self.selection_strategy,
            flp: FlpConfig {
                gamma: self.gamma,
                frequency: self.flp_frequency,
            },
            flp_on_replay: self.flp_on_replay,
            dlp: DlpConfig {
                frequency: self.dlp_frequency,
                noise_scale: self.dlp_noise_scale,
                clamp: self.dlp_clamp,
            },
            bins: self.bins,
            group_size: self.group_size,
            max_groups: self.max_groups,
            model: ModelConfig {
                learning_rate: self.learning_rate,
                unknown_threshold: self.unknown_threshold,
            },
        }
    }

    pub fn schedule(&self) -> Result<TaskSchedule> {
        TaskSchedule::build(self.tasks, self.n_per_task, self.epochs_base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::contract("feature_dim must be >= 1"));
        }
        let g = &self.geometry;
        if !(g.separation >= 0.0 && g.separation.is_finite())
            || !(g.spread > 0.0 && g.spread.is_finite())
        {
            return Err(Error::contract(
                "geometry needs separation >= 0 and spread > 0",
            ));
        }
        self.schedule()?;
        self.protocol().validate()
    }
}

/// Seed precedence: command-line flag, then the environment variable, then
/// the config file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::contract(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        None => Ok(config),
    }
}

pub fn train_file_name(task_id: u32) -> String {
    format!("task_{task_id}_train.jsonl")
}

pub const TEST_FILE: &str = "test.jsonl";

/// Training records keyed by task id, and the shared test records.
pub type GeneratedRecords = (BTreeMap<u32, Vec<StreamRecord>>, Vec<StreamRecord>);

/// Draw the synthetic records: one training list per task and one test
/// list covering every category.
pub fn generate_records(cfg: &RunConfig) -> Result<GeneratedRecords> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let g = cfg.geometry;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let means: BTreeMap<CategoryId, Vec<f64>> = schedule
        .all_categories()
        .into_iter()
        .map(|c| {
            let mut rng = seed::rng(cfg.seed, Purpose::StreamMeans, c as u64, 0);
            (
                c,
                (0..cfg.feature_dim)
                    .map(|_| g.separation * unit.sample(&mut rng))
                    .collect(),
            )
        })
        .collect();
    let draw = |c: CategoryId, split: u64, count: usize| -> Vec<Vec<f64>> {
        let mut rng = seed::rng(cfg.seed, Purpose::StreamSamples, c as u64, split);
        (0..count)
            .map(|_| {
                means[&c]
                    .iter()
                    .map(|m| m + g.spread * unit.sample(&mut rng))
                    .collect()
            })
            .collect()
    };

    let mut train = BTreeMap::new();
    let mut test = Vec::new();
    for task in schedule.tasks() {
        let mut records = Vec::new();
        for &c in &task.categories {
            for (i, feature) in draw(c, 0, g.train_per_class).into_iter().enumerate() {
                records.push(StreamRecord {
                    image_id: format!("t{}-c{c}-{i}", task.task_id),
                    task_id: task.task_id,
                    split: Split::Train,
                    category_id: c,
                    feature,
                    raw: None,
                    raw_shape: None,
                });
            }
            for (i, feature) in draw(c, 1, g.test_per_class).into_iter().enumerate() {
                test.push(StreamRecord {
                    image_id: format!("test-c{c}-{i}"),
                    task_id: task.task_id,
                    split: Split::Test,
                    category_id: c,
                    feature,
                    raw: None,
                    raw_shape: None,
                });
            }
        }
        train.insert(task.task_id, records);
    }
    Ok((train, test))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write `task_<t>_train.jsonl` per task and `test.jsonl` into `dir`.
pub fn generate_stream(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let (train, test) = generate_records(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (t, records) in &train {
        let path = dir.join(train_file_name(*t));
        write_jsonl(&path, records)?;
        written.push(path);
    }
    let path = dir.join(TEST_FILE);
    write_jsonl(&path, &test)?;
    written.push(path);
    Ok(written)
}

/// Read a stream file in order, checking every record against
/// `feature_dim`. Blank lines are ignored.
pub fn load_stream(path: &Path, feature_dim: usize) -> Result<Vec<StreamRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: StreamRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        record
            .validate(feature_dim)
            .map_err(|message| Error::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            })?;
        out.push(record);
    }
    Ok(out)
}

/// Load every stream file the schedule needs from `dir`.
pub fn load_stream_dir(
    dir: &Path,
    schedule: &TaskSchedule,
    feature_dim: usize,
) -> Result<StreamData> {
    let schema = |path: &Path, line: usize, message: String| Error::Schema {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut data = StreamData::default();
    for task in schedule.tasks() {
        let path = dir.join(train_file_name(task.task_id));
        let records = load_stream(&path, feature_dim)?;
        let mut samples = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.split != Split::Train || r.task_id != task.task_id {
                return Err(schema(
                    &path,
                    i + 1,
                    format!("expected a train record of task {}", task.task_id),
                ));
            }
            samples.push(r.to_sample()?);
        }
        data.train.insert(task.task_id, samples);
    }
    let path = dir.join(TEST_FILE);
    for (i, r) in load_stream(&path, feature_dim)?.iter().enumerate() {
        if r.split != Split::Test {
            return Err(schema(&path, i + 1, "expected a test record".into()));
        }
        data.test.push(r.to_sample()?);
    }
    Ok(data)
}

pub fn load_store_dump(path: &Path) -> Result<Vec<StoreDump>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const SUMMARY_HEADER: &str = "task_id,map_previous,map_current,map_both,wi,a_ose,ur";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn summary_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.task_id,
            cell(r.map_previous),
            cell(r.map_current),
            cell(r.map_both),
            cell(r.wi),
            r.a_ose,
            cell(r.ur)
        ));
    }
    out
}

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub task_id: u32,
    #[serde(flatten)]
    pub record: EvalRecord,
}

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

/// Write `summary.csv`, `task_<t>.json`, `effective_config.json`, the
/// ledger and the predictions file into `dir`.
pub fn write_run_reports(
    dir: &Path,
    cfg: &RunConfig,
    reports: &[MetricsReport],
    predictions: &[Vec<EvalRecord>],
    ledger: Option<&RunLedger>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = dir.join("summary.csv");
    fs::write(&summary, summary_csv(reports)).map_err(|e| Error::io(&summary, e))?;
    for r in reports {
        write_json(&dir.join(format!("task_{}.json", r.task_id)), r)?;
    }
    write_json(&dir.join("effective_config.json"), cfg)?;
    if let Some(ledger) = ledger {
        write_json(&dir.join("ledger.json"), ledger)?;
    }
    let lines: Vec<PredictionLine> = reports
        .iter()
        .zip(predictions)
        .flat_map(|(r, recs)| {
            recs.iter().map(|rec| PredictionLine {
                task_id: r.task_id,
                record: rec.clone(),
            })
        })
        .collect();
    write_jsonl(&dir.join(PREDICTIONS_FILE), &lines)
}

pub fn load_predictions(path: &Path) -> Result<BTreeMap<u32, Vec<EvalRecord>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<u32, Vec<EvalRecord>> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.entry(p.task_id).or_default().push(p.record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig {
            feature_dim: 4,
            tasks: 4,
            n_per_task: 5,
            geometry: Geometry {
                train_per_class: 100,
                test_per_class: 10,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn generation_counts_and_determinism() {
        let cfg = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let files = generate_stream(&cfg, a.path()).unwrap();
        generate_stream(&cfg, b.path()).unwrap();
        assert_eq!(files.len(), 5);
        for t in 1..=4 {
            let name = train_file_name(t);
            let recs = load_stream(&a.path().join(&name), 4).unwrap();
            assert_eq!(recs.len(), 500);
            assert_eq!(
                fs::read(a.path().join(&name)).unwrap(),
                fs::read(b.path().join(&name)).unwrap()
            );
        }
        let test = load_stream(&a.path().join(TEST_FILE), 4).unwrap();
        let cats: std::collections::BTreeSet<_> = test.iter().map(|r| r.category_id).collect();
        assert_eq!(cats.len(), 20);
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = small();
        let dir = tempfile::tempdir().unwrap();
        generate_stream(&cfg, dir.path()).unwrap();
        let (train, test) = generate_records(&cfg).unwrap();
        assert_eq!(
            load_stream(&dir.path().join(train_file_name(2)), 4).unwrap(),
            train[&2]
        );
        assert_eq!(load_stream(&dir.path().join(TEST_FILE), 4).unwrap(), test);
    }

    #[test]
    fn load_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        fs::write(&path, "").unwrap();
        assert!(load_stream(&path, 3).unwrap().is_empty());

        let good =
            r#"{"image_id":"a","task_id":1,"split":"train","category_id":0,"feature":[1,2,3]}"#;
        let short =
            r#"{"image_id":"b","task_id":1,"split":"train","category_id":0,"feature":[1,2]}"#;
        fs::write(&path, format!("{good}\n{short}\n")).unwrap();
        match load_stream(&path, 3) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected schema error, got {other:?}"),
        }
        fs::write(&path, format!("{good}\n{good}\nnot json\n")).unwrap();
        match load_stream(&path, 3) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let raw = r#"{"image_id":"c","task_id":1,"split":"train","category_id":0,"feature":[1,2,3],"raw":[1,2,3,4,5],"raw_shape":[3,1,2]}"#;
        fs::write(&path, raw).unwrap();
        assert!(matches!(
            load_stream(&path, 3),
            Err(Error::Schema { line: 1, .. })
        ));
        assert!(matches!(
            load_stream(&dir.path().join("missing"), 3),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some("2"), 3).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some("2"), 3).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, 3).unwrap(), 3);
        assert!(resolve_seed(None, Some("x"), 3).is_err());
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.exemplars_per_class, 50);
        assert_eq!(cfg.gamma, 0.5);
        assert_eq!(cfg.dlp_frequency, 0.01);
        assert_eq!((cfg.group_size, cfg.max_groups, cfg.bins), (80, 20, 100));
        assert!(serde_json::from_str::<RunConfig>(r#"{"gama": 0.3}"#).is_err());
        let json = serde_json::to_value(&cfg).unwrap();
        assert_eq!(json.as_object().unwrap().len(), 19);
    }

    #[test]
    fn well_separated_clusters_are_learned() {
        // One task, so the test set has no unknowns to steal rank.
        let cfg = RunConfig {
            feature_dim: 8,
            tasks: 1,
            n_per_task: 5,
            epochs_base: 5,
            dlp_frequency: 0.0,
            geometry: Geometry {
                train_per_class: 100,
                test_per_class: 20,
                separation: 5.0,
                spread: 0.5,
            },
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        generate_stream(&cfg, dir.path()).unwrap();
        let schedule = cfg.schedule().unwrap();
        let data = load_stream_dir(dir.path(), &schedule, 8).unwrap();
        let out = crate::protocol::run_protocol(&cfg.protocol(), &schedule, &data, 8).unwrap();
        assert!(
            out.reports[0].map_current.unwrap() >= 0.95,
            "{:?}",
            out.reports[0]
        );

        let report_dir = dir.path().join("report");
        write_run_reports(
            &report_dir,
            &cfg,
            &out.reports,
            &out.predictions,
            Some(&out.state.ledger),
        )
        .unwrap();
        let csv = fs::read_to_string(report_dir.join("summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with(SUMMARY_HEADER));
        let preds = load_predictions(&report_dir.join(PREDICTIONS_FILE)).unwrap();
        let rebuilt = crate::metrics::build_report(&preds[&1], &schedule, 1).unwrap();
        assert_eq!(rebuilt, out.reports[0]);
    }
}
