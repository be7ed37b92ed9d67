//! File formats.
//!
//! * Ground-truth CSV, no header: `video_id,timestamp,x1,y1,x2,y2,category_id`,
//!   one row per (box, label); rows sharing frame and box merge into one
//!   multi-label instance.
//! * Detection CSV: the same columns plus a trailing `score`.
//! * Feature dataset: JSON lines `{id, split, labels, features}`.
//! * Predictions: JSON lines `{id, labels, scores}` with one score per
//!   category.
//! * Model checkpoint: a single JSON document.
//!
//! Coordinates and scores are written with six decimals. Every writer goes
//! through [`write_atomic`], so a failed command leaves no partial file.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detection::{BoundingBox, CategoryId, Detection, FrameKey, GroundTruth};
use crate::error::{Error, Result};
use crate::longtail::{Example, FeatureDataset, Split};
use crate::trainer::{ModelDims, ModelParams};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line() as u64, e.to_string()))
}

struct BoxRow {
    frame: FrameKey,
    bbox: BoundingBox,
    category: CategoryId,
    score: Option<f64>,
}

fn read_box_rows(path: &Path, with_score: bool) -> Result<Vec<BoxRow>> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path).map_err(
            |e| match e.into_kind() {
                csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
                other => parse_err(path, 0, format!("{other:?}")),
            },
        )?;
    let columns = if with_score { 8 } else { 7 };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != columns {
            return Err(parse_err(path, line, format!("expected {columns} columns, found {}", record.len())));
        }
        let num = |i: usize, what: &str| -> Result<f64> {
            record[i].parse::<f64>().map_err(|_| parse_err(path, line, format!("invalid {what} '{}'", &record[i])))
        };
        let timestamp = record[1]
            .parse::<i64>()
            .map_err(|_| parse_err(path, line, format!("invalid timestamp '{}'", &record[1])))?;
        let bbox = BoundingBox::new(num(2, "x1")?, num(3, "y1")?, num(4, "x2")?, num(5, "y2")?)
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        let category = record[6]
            .parse::<u32>()
            .map_err(|_| parse_err(path, line, format!("invalid category '{}'", &record[6])))?;
        let score = if with_score {
            let s = num(7, "score")?;
            if !(0.0..=1.0).contains(&s) {
                return Err(parse_err(path, line, format!("score {s} outside [0, 1]")));
            }
            Some(s)
        } else {
            None
        };
        rows.push(BoxRow { frame: FrameKey::new(&record[0], timestamp), bbox, category: CategoryId(category), score });
    }
    Ok(rows)
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let rows = read_box_rows(path, false)?;
    GroundTruth::from_rows(rows.into_iter().map(|r| (r.frame, r.bbox, r.category)))
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    read_box_rows(path, true)?
        .into_iter()
        .map(|r| Detection::new(r.frame, r.bbox, r.category, r.score.expect("score column")))
        .collect()
}

fn box_fields(frame: &FrameKey, b: &BoundingBox) -> String {
    let [x1, y1, x2, y2] = b.coords();
    format!("{},{},{x1:.6},{y1:.6},{x2:.6},{y2:.6}", frame.video_id, frame.timestamp)
}

pub fn ground_truth_csv(gt: &GroundTruth) -> String {
    let mut out = String::new();
    for g in gt.instances() {
        for c in &g.categories {
            out.push_str(&format!("{},{c}\n", box_fields(&g.frame, &g.bbox)));
        }
    }
    out
}

pub fn detections_csv(dets: &[Detection]) -> String {
    dets.iter().map(|d| format!("{},{},{:.6}\n", box_fields(&d.frame, &d.bbox), d.category, d.score)).collect()
}

pub fn write_ground_truth(path: &Path, gt: &GroundTruth) -> Result<()> {
    write_atomic(path, ground_truth_csv(gt).as_bytes())
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    write_atomic(path, detections_csv(dets).as_bytes())
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    id: u64,
    split: Split,
    labels: Vec<CategoryId>,
    features: Vec<f64>,
}

fn read_lines<T, F>(path: &Path, mut f: F) -> Result<Vec<T>>
where
    F: FnMut(u64, &str) -> Result<T>,
{
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(f(i as u64 + 1, &line)?);
    }
    Ok(out)
}

pub fn dataset_jsonl(ds: &FeatureDataset) -> Result<String> {
    let mut out = String::new();
    for e in &ds.examples {
        let rec = ExampleRecord { id: e.id, split: ds.split, labels: e.labels.clone(), features: e.features.clone() };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, ds: &FeatureDataset) -> Result<()> {
    write_atomic(path, dataset_jsonl(ds)?.as_bytes())
}

/// Reads a feature dataset. The category count is inferred from the largest
/// label unless given.
pub fn read_dataset(path: &Path, n_categories: Option<usize>) -> Result<FeatureDataset> {
    let records: Vec<ExampleRecord> =
        read_lines(path, |line, text| serde_json::from_str(text).map_err(|e| parse_err(path, line, e.to_string())))?;
    let Some(first) = records.first() else {
        return Err(parse_err(path, 0, "dataset file is empty"));
    };
    let split = first.split;
    let dim = first.features.len();
    if let Some((i, _)) = records.iter().enumerate().find(|(_, r)| r.split != split) {
        return Err(parse_err(path, i as u64 + 1, "mixed splits in one file"));
    }
    let inferred = records.iter().flat_map(|r| r.labels.iter()).map(|c| c.0 as usize + 1).max().unwrap_or(0);
    let k = n_categories.unwrap_or(inferred);
    let examples = records.into_iter().map(|r| Example { id: r.id, features: r.features, labels: r.labels }).collect();
    FeatureDataset::new(split, k, dim, examples).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// One example's per-category scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: u64,
    pub labels: Vec<CategoryId>,
    pub scores: Vec<f64>,
}

pub fn predictions_jsonl(records: &[PredictionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    write_atomic(path, predictions_jsonl(records)?.as_bytes())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let records: Vec<PredictionRecord> =
        read_lines(path, |line, text| serde_json::from_str(text).map_err(|e| parse_err(path, line, e.to_string())))?;
    let Some(first) = records.first() else {
        return Ok(records);
    };
    let k = first.scores.len();
    for (i, r) in records.iter().enumerate() {
        let line = i as u64 + 1;
        if r.scores.len() != k {
            return Err(parse_err(path, line, format!("expected {k} scores, found {}", r.scores.len())));
        }
        if let Some(c) = r.labels.iter().find(|c| c.0 as usize >= k) {
            return Err(parse_err(path, line, format!("label {c} outside {k} categories")));
        }
        if r.scores.iter().any(|s| !s.is_finite()) {
            return Err(parse_err(path, line, "non-finite score"));
        }
    }
    Ok(records)
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub dims: ModelDims,
    pub params: ModelParams,
    pub manifest: CheckpointManifest,
}

impl Checkpoint {
    pub fn new(params: ModelParams, manifest: CheckpointManifest) -> Self {
        Checkpoint { format_version: CHECKPOINT_VERSION, dims: params.dims(), params, manifest }
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck: Checkpoint = read_json(path)?;
    if ck.format_version != CHECKPOINT_VERSION {
        return Err(parse_err(path, 0, format!("unsupported checkpoint version {}", ck.format_version)));
    }
    ck.params.validate().map_err(|e| parse_err(path, 0, e.to_string()))?;
    if ck.params.dims() != ck.dims {
        return Err(parse_err(path, 0, "checkpoint dims disagree with weights"));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::fixtures::*;
    use proptest::prelude::*;

    #[test]
    fn ground_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gt = micro_gt();
        let path = dir.path().join("gt.csv");
        write_ground_truth(&path, &gt).unwrap();
        let back = read_ground_truth(&path).unwrap();
        assert_eq!(back.instances(), gt.instances());
        assert_eq!(ground_truth_csv(&back), ground_truth_csv(&gt));
    }

    #[test]
    fn malformed_rows_report_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.csv");
        fs::write(&path, "v,1,0.1,0.1,0.2,0.2,0,0.5\nv,2,0.1,0.1,oops,0.2,0,0.5\n").unwrap();
        match read_detections(&path) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("x2"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        fs::write(&path, "v,1,0.1,0.1,0.2,0.2,0\n").unwrap();
        assert!(matches!(read_detections(&path), Err(Error::Parse { line: 1, .. })));
        fs::write(&path, "v,1,0.3,0.1,0.2,0.2,0,0.5\n").unwrap();
        assert!(matches!(read_detections(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dims = ModelDims { input: 3, hidden: 4, embedding: 2, categories: 2 };
        let ck = Checkpoint::new(
            ModelParams::init(dims, 4),
            CheckpointManifest { variant: "two_stage".into(), seed: 4, config_hash: "ab".into() },
        );
        let path = dir.path().join("model.json");
        write_json(&path, &ck).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), ck);
    }

    fn arb_detection() -> impl Strategy<Value = Detection> {
        ("[a-z]{1,4}", 0i64..2000, 0u32..6, 0.0..0.9f64, 0.0..0.9f64, 0.01..0.1f64, 0.0..1.0f64).prop_map(
            |(v, t, c, x, y, w, s)| {
                let q = |f: f64| (f * 1e6).round() / 1e6;
                let b = BoundingBox::new(q(x), q(y), q(x + w), q(y + w)).unwrap();
                Detection::new(FrameKey::new(v, t), b, CategoryId(c), q(s)).unwrap()
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn detection_csv_round_trip(dets in proptest::collection::vec(arb_detection(), 0..20)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.csv");
            write_detections(&path, &dets).unwrap();
            let back = read_detections(&path).unwrap();
            prop_assert_eq!(&back, &dets);
            prop_assert_eq!(detections_csv(&back), detections_csv(&dets));
        }

        #[test]
        fn dataset_jsonl_round_trip(rows in proptest::collection::vec((proptest::collection::vec(-5.0..5.0f64, 3), 0u32..4), 1..20)) {
            let examples: Vec<Example> = rows.iter().enumerate()
                .map(|(i, (f, c))| Example { id: i as u64, features: f.clone(), labels: vec![CategoryId(*c)] })
                .collect();
            let ds = FeatureDataset::new(Split::Val, 4, 3, examples).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("val.jsonl");
            write_dataset(&path, &ds).unwrap();
            prop_assert_eq!(read_dataset(&path, Some(4)).unwrap(), ds);
        }
    }
}
