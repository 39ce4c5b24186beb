//! Labeled API-sequence datasets: loading, validation, merging, splitting,
//! summary statistics, and API-call vocabulary construction/comparison.

mod adapters;

pub use adapters::{AdapterRegistry, CsvEventsAdapter, DatasetAdapter, JsonlAdapter, RawRecord};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid API call name {name:?}: {reason}")]
    InvalidApiName { name: String, reason: &'static str },
    #[error("sequence {id:?} has no calls")]
    EmptyCalls { id: String },
    #[error("sequence {id:?} carries label {label:?} not present in the class set")]
    UnknownLabel { id: String, label: String },
    #[error("class names contain duplicates")]
    DuplicateClassNames,
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown dataset adapter {0:?}")]
    UnknownAdapter(String),
    #[error("{path}: malformed input: {detail}")]
    MalformedInput { path: PathBuf, detail: String },
    #[error("no valid samples in {path}")]
    NoValidSamples { path: PathBuf },
    #[error("merge policy has no target class for ({dataset:?}, {class:?})")]
    UnmappedClass { dataset: String, class: String },
    #[error("test ratio must lie strictly between 0 and 1, got {0}")]
    BadSplitRatio(f64),
    #[error("class {class:?} has only {count} sample(s); stratified split needs at least 2")]
    StratumTooSmall { class: String, count: usize },
    #[error("IoU is undefined for two empty vocabularies")]
    BothVocabulariesEmpty,
    #[error("test vocabulary is empty")]
    EmptyTestVocabulary,
}

/// A single API-call name. Comparison is exact, case-sensitive string equality;
/// wide/narrow Windows variants (`...W` vs `...A`) must stay distinct.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ApiCall(String);

impl ApiCall {
    pub fn new(name: impl Into<String>) -> Result<Self, CorpusError> {
        let name = name.into();
        if name.is_empty() {
            return Err(CorpusError::InvalidApiName {
                name,
                reason: "empty",
            });
        }
        if name.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(CorpusError::InvalidApiName {
                name,
                reason: "contains whitespace or control characters",
            });
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for ApiCall {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for ApiCall {
    type Error = CorpusError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ApiCall> for String {
    fn from(value: ApiCall) -> Self {
        value.0
    }
}

/// One labeled sample: an ordered, non-empty API-call sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub id: String,
    pub calls: Vec<ApiCall>,
    pub label: String,
}

impl LabeledSequence {
    pub fn new(
        id: impl Into<String>,
        calls: Vec<ApiCall>,
        label: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        if calls.is_empty() {
            return Err(CorpusError::EmptyCalls { id });
        }
        Ok(Self {
            id,
            calls,
            label: label.into(),
        })
    }
}

/// A named collection of labeled sequences with a fixed class set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledDataset {
    name: String,
    samples: Vec<LabeledSequence>,
    class_names: Vec<String>,
    benign_class: Option<String>,
}

impl LabeledDataset {
    /// Builds a dataset whose class set is derived from the samples
    /// (distinct labels, lexicographic order).
    pub fn new(
        name: impl Into<String>,
        samples: Vec<LabeledSequence>,
        benign_class: Option<String>,
    ) -> Result<Self, CorpusError> {
        let classes: BTreeSet<String> = samples.iter().map(|s| s.label.clone()).collect();
        Self::with_classes(name, samples, classes.into_iter().collect(), benign_class)
    }

    /// Builds a dataset with an explicit class set; every sample label must
    /// belong to it.
    pub fn with_classes(
        name: impl Into<String>,
        samples: Vec<LabeledSequence>,
        class_names: Vec<String>,
        benign_class: Option<String>,
    ) -> Result<Self, CorpusError> {
        let distinct: BTreeSet<&String> = class_names.iter().collect();
        if distinct.len() != class_names.len() {
            return Err(CorpusError::DuplicateClassNames);
        }
        for s in &samples {
            if !distinct.contains(&s.label) {
                return Err(CorpusError::UnknownLabel {
                    id: s.id.clone(),
                    label: s.label.clone(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            samples,
            class_names,
            benign_class,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn samples(&self) -> &[LabeledSequence] {
        &self.samples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn benign_class(&self) -> Option<&str> {
        self.benign_class.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == label)
    }

    /// Collapses the class set to `{benign, malware}`: the benign class keeps
    /// its role, every other class becomes "malware". Errors when the dataset
    /// declares no benign class and `all_malware` is false.
    pub fn to_binary(&self, all_malware: bool) -> Result<LabeledDataset, CorpusError> {
        let benign = self.benign_class.clone();
        if benign.is_none() && !all_malware {
            return Err(CorpusError::UnknownLabel {
                id: self.name.clone(),
                label: "<no benign class declared>".into(),
            });
        }
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let label = match &benign {
                    Some(b) if &s.label == b => BINARY_BENIGN,
                    _ => BINARY_MALWARE,
                };
                LabeledSequence {
                    id: s.id.clone(),
                    calls: s.calls.clone(),
                    label: label.to_string(),
                }
            })
            .collect();
        let classes = vec![BINARY_BENIGN.to_string(), BINARY_MALWARE.to_string()];
        LabeledDataset::with_classes(
            self.name.clone(),
            samples,
            classes,
            Some(BINARY_BENIGN.to_string()),
        )
    }
}

/// Canonical class names used when label spaces are collapsed to binary.
pub const BINARY_BENIGN: &str = "benign";
pub const BINARY_MALWARE: &str = "malware";

/// The set of distinct API-call names occurring in one dataset.
/// Iteration order is lexicographic and therefore deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiVocabulary {
    entries: BTreeSet<String>,
    source_dataset: String,
}

impl ApiVocabulary {
    pub fn from_names<I, S>(names: I, source_dataset: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            entries: names.into_iter().map(Into::into).collect(),
            source_dataset: source_dataset.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn source_dataset(&self) -> &str {
        &self.source_dataset
    }
}

/// Summary statistics for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub sample_count: usize,
    pub vocab_size: usize,
    pub benign_fraction: f64,
    pub malicious_fraction: f64,
    pub class_histogram: BTreeMap<String, usize>,
}

/// Maps every (source dataset, class) pair seen during a merge to a target
/// class in the merged dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelabelPolicy {
    rules: BTreeMap<(String, String), String>,
    merged_name: String,
    benign_class: Option<String>,
}

impl RelabelPolicy {
    pub fn new(merged_name: impl Into<String>, benign_class: Option<String>) -> Self {
        Self {
            rules: BTreeMap::new(),
            merged_name: merged_name.into(),
            benign_class,
        }
    }

    pub fn map(mut self, dataset: &str, class: &str, target: &str) -> Self {
        self.rules
            .insert((dataset.to_string(), class.to_string()), target.to_string());
        self
    }

    /// Identity policy: every class keeps its name.
    pub fn identity(merged_name: impl Into<String>, datasets: &[&LabeledDataset]) -> Self {
        let benign = datasets.iter().find_map(|d| d.benign_class.clone());
        let mut policy = Self::new(merged_name, benign);
        for ds in datasets {
            for class in &ds.class_names {
                policy = policy.map(&ds.name, class, class);
            }
        }
        policy
    }

    /// Binary policy anchored on `a`'s benign class: `a`'s benign samples stay
    /// benign, everything else from `a` and all of `b` becomes malware.
    pub fn benign_vs_rest(a: &LabeledDataset, b: &LabeledDataset) -> Result<Self, CorpusError> {
        let benign = a
            .benign_class
            .clone()
            .ok_or_else(|| CorpusError::UnknownLabel {
                id: a.name.clone(),
                label: "<no benign class declared>".into(),
            })?;
        let mut policy = Self::new(
            format!("{}+{}", a.name, b.name),
            Some(BINARY_BENIGN.to_string()),
        );
        for class in &a.class_names {
            let target = if *class == benign {
                BINARY_BENIGN
            } else {
                BINARY_MALWARE
            };
            policy = policy.map(&a.name, class, target);
        }
        for class in &b.class_names {
            policy = policy.map(&b.name, class, BINARY_MALWARE);
        }
        Ok(policy)
    }

    fn target(&self, dataset: &str, class: &str) -> Result<&str, CorpusError> {
        self.rules
            .get(&(dataset.to_string(), class.to_string()))
            .map(String::as_str)
            .ok_or_else(|| CorpusError::UnmappedClass {
                dataset: dataset.to_string(),
                class: class.to_string(),
            })
    }
}

/// Union of distinct call names over all samples, lexicographically ordered.
pub fn build_vocabulary(ds: &LabeledDataset) -> ApiVocabulary {
    let names: BTreeSet<String> = ds
        .samples
        .iter()
        .flat_map(|s| s.calls.iter().map(|c| c.as_str().to_string()))
        .collect();
    ApiVocabulary {
        entries: names,
        source_dataset: ds.name.clone(),
    }
}

/// Sample count, vocabulary size, benign/malicious proportions and the
/// per-class histogram for one dataset.
pub fn dataset_stats(ds: &LabeledDataset) -> DatasetStats {
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    for s in &ds.samples {
        *histogram.entry(s.label.clone()).or_insert(0) += 1;
    }
    let total = ds.samples.len();
    let benign_count = ds
        .benign_class
        .as_ref()
        .and_then(|b| histogram.get(b).copied())
        .unwrap_or(0);
    let (benign_fraction, malicious_fraction) = if total == 0 {
        (0.0, 0.0)
    } else {
        let b = benign_count as f64 / total as f64;
        (b, 1.0 - b)
    };
    DatasetStats {
        name: ds.name.clone(),
        sample_count: total,
        vocab_size: build_vocabulary(ds).len(),
        benign_fraction,
        malicious_fraction,
        class_histogram: histogram,
    }
}

/// Intersection-over-union of two vocabularies. Undefined (error) when both
/// are empty.
pub fn compute_iou(v1: &ApiVocabulary, v2: &ApiVocabulary) -> Result<f64, CorpusError> {
    if v1.is_empty() && v2.is_empty() {
        return Err(CorpusError::BothVocabulariesEmpty);
    }
    let intersection = v1.entries.intersection(&v2.entries).count();
    let union = v1.entries.union(&v2.entries).count();
    Ok(intersection as f64 / union as f64)
}

/// Fraction of the test vocabulary that never occurs in the train vocabulary.
/// 0.0 means full coverage by training, 1.0 means completely unseen.
pub fn unseen_vocab_fraction(
    train_vocab: &ApiVocabulary,
    test_vocab: &ApiVocabulary,
) -> Result<f64, CorpusError> {
    if test_vocab.is_empty() {
        return Err(CorpusError::EmptyTestVocabulary);
    }
    let unseen = test_vocab
        .entries
        .iter()
        .filter(|name| !train_vocab.entries.contains(*name))
        .count();
    Ok(unseen as f64 / test_vocab.len() as f64)
}

/// Concatenates two datasets under a relabeling policy. Sample ids from `b`
/// that collide with ids from `a` are prefixed with `b`'s dataset name.
pub fn merge_datasets(
    a: &LabeledDataset,
    b: &LabeledDataset,
    policy: &RelabelPolicy,
) -> Result<LabeledDataset, CorpusError> {
    let mut samples = Vec::with_capacity(a.len() + b.len());
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();
    for s in &a.samples {
        let label = policy.target(&a.name, &s.label)?.to_string();
        seen_ids.insert(s.id.clone());
        samples.push(LabeledSequence {
            id: s.id.clone(),
            calls: s.calls.clone(),
            label,
        });
    }
    for s in &b.samples {
        let label = policy.target(&b.name, &s.label)?.to_string();
        let id = if seen_ids.contains(&s.id) {
            format!("{}:{}", b.name, s.id)
        } else {
            s.id.clone()
        };
        seen_ids.insert(id.clone());
        samples.push(LabeledSequence {
            id,
            calls: s.calls.clone(),
            label,
        });
    }
    LabeledDataset::new(
        policy.merged_name.clone(),
        samples,
        policy.benign_class.clone(),
    )
}

/// Seeded, optionally stratified partition into train and test parts.
/// The same seed always yields the same split; sample order within each part
/// follows the input dataset.
pub fn split_dataset(
    ds: &LabeledDataset,
    test_ratio: f64,
    seed: u64,
    stratified: bool,
) -> Result<(LabeledDataset, LabeledDataset), CorpusError> {
    if !(test_ratio > 0.0 && test_ratio < 1.0) {
        return Err(CorpusError::BadSplitRatio(test_ratio));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_marks = vec![false; ds.len()];

    if stratified {
        let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in ds.samples.iter().enumerate() {
            by_class.entry(s.label.as_str()).or_default().push(i);
        }
        for (class, indices) in &by_class {
            if indices.len() < 2 {
                return Err(CorpusError::StratumTooSmall {
                    class: class.to_string(),
                    count: indices.len(),
                });
            }
        }
        for indices in by_class.values() {
            let mut shuffled = indices.clone();
            shuffled.shuffle(&mut rng);
            let take = (test_ratio * indices.len() as f64).round() as usize;
            for &i in shuffled.iter().take(take) {
                test_marks[i] = true;
            }
        }
    } else {
        let mut indices: Vec<usize> = (0..ds.len()).collect();
        indices.shuffle(&mut rng);
        let take = (test_ratio * ds.len() as f64).round() as usize;
        for &i in indices.iter().take(take) {
            test_marks[i] = true;
        }
    }

    let mut train_samples = Vec::new();
    let mut test_samples = Vec::new();
    for (i, s) in ds.samples.iter().enumerate() {
        if test_marks[i] {
            test_samples.push(s.clone());
        } else {
            train_samples.push(s.clone());
        }
    }
    let train = LabeledDataset::with_classes(
        format!("{}[train]", ds.name),
        train_samples,
        ds.class_names.clone(),
        ds.benign_class.clone(),
    )?;
    let test = LabeledDataset::with_classes(
        format!("{}[test]", ds.name),
        test_samples,
        ds.class_names.clone(),
        ds.benign_class.clone(),
    )?;
    Ok((train, test))
}

/// Row-level problem reported while loading a dataset file.
#[derive(Debug, Clone, Serialize)]
pub struct RowIssue {
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

/// A loaded dataset plus the rows that were rejected on the way in.
#[derive(Debug)]
pub struct LoadOutcome {
    pub dataset: LabeledDataset,
    pub rejected: Vec<RowIssue>,
}

/// Metadata that the on-disk formats do not carry themselves.
#[derive(Debug, Clone, Default)]
pub struct DatasetMeta {
    pub name: Option<String>,
    pub benign_class: Option<String>,
}

/// Reads `path` through the named adapter, validates every row, and returns
/// the surviving samples plus row-level diagnostics for the rejected ones.
pub fn load_dataset(
    path: &Path,
    adapter: &str,
    registry: &AdapterRegistry,
    meta: DatasetMeta,
) -> Result<LoadOutcome, CorpusError> {
    let adapter = registry
        .get(adapter)
        .ok_or_else(|| CorpusError::UnknownAdapter(adapter.to_string()))?;
    let records = adapter.read(path)?;

    let mut samples = Vec::new();
    let mut rejected = Vec::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();
    for record in records {
        let RawRecord {
            line,
            id,
            label,
            calls,
        } = record;
        if seen_ids.contains(&id) {
            rejected.push(RowIssue {
                line,
                id: Some(id),
                reason: "duplicate sample id".into(),
            });
            continue;
        }
        let mut parsed_calls = Vec::with_capacity(calls.len());
        let mut bad_call = None;
        for call in calls {
            match ApiCall::new(call) {
                Ok(c) => parsed_calls.push(c),
                Err(e) => {
                    bad_call = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(reason) = bad_call {
            rejected.push(RowIssue {
                line,
                id: Some(id),
                reason,
            });
            continue;
        }
        match LabeledSequence::new(id.clone(), parsed_calls, label) {
            Ok(seq) => {
                seen_ids.insert(id);
                samples.push(seq);
            }
            Err(e) => rejected.push(RowIssue {
                line,
                id: Some(id),
                reason: e.to_string(),
            }),
        }
    }

    if samples.is_empty() {
        return Err(CorpusError::NoValidSamples {
            path: path.to_path_buf(),
        });
    }
    let name = meta.name.unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string())
    });
    let dataset = LabeledDataset::new(name, samples, meta.benign_class)?;
    Ok(LoadOutcome { dataset, rejected })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calls(names: &[&str]) -> Vec<ApiCall> {
        names.iter().map(|n| ApiCall::new(*n).unwrap()).collect()
    }

    fn fixture(name: &str, rows: &[(&str, &[&str], &str)], benign: Option<&str>) -> LabeledDataset {
        let samples = rows
            .iter()
            .map(|(id, cs, label)| LabeledSequence::new(*id, calls(cs), *label).unwrap())
            .collect();
        LabeledDataset::new(name, samples, benign.map(str::to_string)).unwrap()
    }

    #[test]
    fn api_call_rejects_whitespace_and_control() {
        assert!(ApiCall::new("NtOpenFile").is_ok());
        assert!(ApiCall::new("").is_err());
        assert!(ApiCall::new("Nt Open").is_err());
        assert!(ApiCall::new("Nt\tOpen").is_err());
        assert!(ApiCall::new("Nt\u{1}Open").is_err());
    }

    #[test]
    fn vocabulary_is_sorted_union() {
        let ds = fixture(
            "v",
            &[("1", &["b", "a", "b"], "x"), ("2", &["c", "b"], "x")],
            None,
        );
        let vocab = build_vocabulary(&ds);
        let entries: Vec<&str> = vocab.iter().collect();
        assert_eq!(entries, vec!["a", "b", "c"]);
    }

    #[test]
    fn vocabulary_of_empty_dataset_is_empty() {
        let ds = LabeledDataset::new("empty", vec![], None).unwrap();
        assert!(build_vocabulary(&ds).is_empty());
    }

    #[test]
    fn vocabulary_is_order_insensitive() {
        let a = fixture("a", &[("1", &["x", "y"], "c"), ("2", &["z"], "c")], None);
        let b = fixture("b", &[("2", &["z"], "c"), ("1", &["y", "x"], "c")], None);
        assert_eq!(
            build_vocabulary(&a).entries,
            build_vocabulary(&b).entries
        );
    }

    #[test]
    fn iou_boundary_cases() {
        let v1 = ApiVocabulary::from_names(["a", "b", "c"], "v1");
        let v2 = ApiVocabulary::from_names(["b", "c", "d"], "v2");
        let empty = ApiVocabulary::from_names(Vec::<String>::new(), "e");
        assert_eq!(compute_iou(&v1, &v1).unwrap(), 1.0);
        assert_eq!(compute_iou(&v1, &v2).unwrap(), 0.5);
        let disjoint = ApiVocabulary::from_names(["x", "y"], "d");
        assert_eq!(compute_iou(&v1, &disjoint).unwrap(), 0.0);
        assert!(compute_iou(&empty, &empty).is_err());
        assert_eq!(compute_iou(&v1, &empty).unwrap(), 0.0);
    }

    #[test]
    fn unseen_fraction_cases() {
        let train = ApiVocabulary::from_names(["a", "b"], "t");
        let test = ApiVocabulary::from_names(["a", "b", "c", "d"], "s");
        assert_eq!(unseen_vocab_fraction(&train, &train).unwrap(), 0.0);
        assert_eq!(unseen_vocab_fraction(&train, &test).unwrap(), 0.5);
        let disjoint = ApiVocabulary::from_names(["x"], "x");
        assert_eq!(unseen_vocab_fraction(&train, &disjoint).unwrap(), 1.0);
        let empty = ApiVocabulary::from_names(Vec::<String>::new(), "e");
        assert!(unseen_vocab_fraction(&train, &empty).is_err());
    }

    #[test]
    fn stats_of_single_sample_dataset() {
        let ds = fixture("one", &[("1", &["a", "b", "a"], "mal")], None);
        let stats = dataset_stats(&ds);
        assert_eq!(stats.sample_count, 1);
        assert_eq!(stats.vocab_size, 2);
        assert_eq!(stats.benign_fraction, 0.0);
        assert_eq!(stats.malicious_fraction, 1.0);
        assert_eq!(stats.class_histogram["mal"], 1);
    }

    #[test]
    fn stats_fractions_against_benign_class() {
        let ds = fixture(
            "mix",
            &[
                ("1", &["a"], "benign"),
                ("2", &["b"], "mal"),
                ("3", &["c"], "mal"),
                ("4", &["d"], "benign"),
            ],
            Some("benign"),
        );
        let stats = dataset_stats(&ds);
        assert_eq!(stats.benign_fraction, 0.5);
        assert_eq!(stats.malicious_fraction, 0.5);
        assert_eq!(
            stats.class_histogram.values().sum::<usize>(),
            stats.sample_count
        );
    }

    #[test]
    fn merge_with_identity_policy_keeps_a_unchanged() {
        let a = fixture(
            "a",
            &[("1", &["x"], "benign"), ("2", &["y"], "mal")],
            Some("benign"),
        );
        let b = LabeledDataset::new("b", vec![], None).unwrap();
        let policy = RelabelPolicy::identity("a", &[&a, &b]);
        let merged = merge_datasets(&a, &b, &policy).unwrap();
        assert_eq!(merged.samples(), a.samples());
        assert_eq!(merged.class_names(), a.class_names());
        assert_eq!(merged.benign_class(), a.benign_class());
    }

    #[test]
    fn merge_histogram_is_sum_of_relabeled_histograms() {
        let a = fixture(
            "a",
            &[("1", &["x"], "benign"), ("2", &["y"], "troj")],
            Some("benign"),
        );
        let b = fixture("b", &[("3", &["z"], "worm"), ("4", &["w"], "worm")], None);
        let policy = RelabelPolicy::benign_vs_rest(&a, &b).unwrap();
        let merged = merge_datasets(&a, &b, &policy).unwrap();
        assert_eq!(merged.len(), 4);
        let stats = dataset_stats(&merged);
        assert_eq!(stats.class_histogram[BINARY_BENIGN], 1);
        assert_eq!(stats.class_histogram[BINARY_MALWARE], 3);
        assert_eq!(merged.class_names(), [BINARY_BENIGN, BINARY_MALWARE]);
    }

    #[test]
    fn merge_rejects_unmapped_class() {
        let a = fixture("a", &[("1", &["x"], "benign")], Some("benign"));
        let b = fixture("b", &[("2", &["y"], "worm")], None);
        let policy = RelabelPolicy::identity("a+b", &[&a]);
        let err = merge_datasets(&a, &b, &policy).unwrap_err();
        assert!(matches!(err, CorpusError::UnmappedClass { .. }));
    }

    #[test]
    fn merge_disambiguates_colliding_ids() {
        let a = fixture("a", &[("1", &["x"], "c")], None);
        let b = fixture("b", &[("1", &["y"], "c")], None);
        let policy = RelabelPolicy::identity("a+b", &[&a, &b]);
        let merged = merge_datasets(&a, &b, &policy).unwrap();
        let ids: Vec<&str> = merged.samples().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["1", "b:1"]);
    }

    #[test]
    fn split_is_deterministic_partition() {
        let rows: Vec<(String, Vec<&str>, &str)> = (0..100)
            .map(|i| {
                (
                    format!("s{i}"),
                    vec!["a"],
                    if i % 2 == 0 { "even" } else { "odd" },
                )
            })
            .collect();
        let samples: Vec<LabeledSequence> = rows
            .iter()
            .map(|(id, cs, label)| LabeledSequence::new(id.clone(), calls(cs), *label).unwrap())
            .collect();
        let ds = LabeledDataset::new("hundred", samples, None).unwrap();

        let (tr1, te1) = split_dataset(&ds, 0.2, 7, false).unwrap();
        let (tr2, te2) = split_dataset(&ds, 0.2, 7, false).unwrap();
        assert_eq!(tr1.samples(), tr2.samples());
        assert_eq!(te1.samples(), te2.samples());

        let mut ids: BTreeSet<&str> = tr1.samples().iter().map(|s| s.id.as_str()).collect();
        for s in te1.samples() {
            assert!(ids.insert(&s.id), "sample {} in both parts", s.id);
        }
        assert_eq!(ids.len(), ds.len());
        assert_eq!(te1.len(), 20);
    }

    #[test]
    fn stratified_split_preserves_class_ratios() {
        let mut samples = Vec::new();
        for i in 0..50 {
            samples.push(LabeledSequence::new(format!("a{i}"), calls(&["x"]), "a").unwrap());
            samples.push(LabeledSequence::new(format!("b{i}"), calls(&["y"]), "b").unwrap());
        }
        let ds = LabeledDataset::new("even", samples, None).unwrap();
        let (_, test) = split_dataset(&ds, 0.2, 3, true).unwrap();
        let stats = dataset_stats(&test);
        assert_eq!(stats.class_histogram["a"], 10);
        assert_eq!(stats.class_histogram["b"], 10);
    }

    #[test]
    fn stratified_split_rejects_tiny_class() {
        let ds = fixture("tiny", &[("1", &["x"], "solo"), ("2", &["y"], "other"), ("3", &["z"], "other")], None);
        let err = split_dataset(&ds, 0.5, 1, true).unwrap_err();
        assert!(matches!(err, CorpusError::StratumTooSmall { .. }));
    }

    #[test]
    fn split_rejects_bad_ratio() {
        let ds = fixture("d", &[("1", &["x"], "c"), ("2", &["y"], "c")], None);
        assert!(split_dataset(&ds, 0.0, 0, false).is_err());
        assert!(split_dataset(&ds, 1.0, 0, false).is_err());
    }

    #[test]
    fn binary_view_collapses_labels() {
        let ds = fixture(
            "m",
            &[
                ("1", &["a"], "benign"),
                ("2", &["b"], "troj"),
                ("3", &["c"], "worm"),
            ],
            Some("benign"),
        );
        let bin = ds.to_binary(false).unwrap();
        let labels: Vec<&str> = bin.samples().iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, vec![BINARY_BENIGN, BINARY_MALWARE, BINARY_MALWARE]);

        let all_mal = fixture("n", &[("1", &["a"], "troj")], None);
        assert!(all_mal.to_binary(false).is_err());
        let bin = all_mal.to_binary(true).unwrap();
        assert_eq!(bin.samples()[0].label, BINARY_MALWARE);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vocab_strategy() -> impl Strategy<Value = ApiVocabulary> {
            proptest::collection::btree_set("[a-e]{1,3}", 0..20)
                .prop_map(|set| ApiVocabulary::from_names(set, "prop"))
        }

        proptest! {
            #[test]
            fn iou_is_symmetric_and_bounded(v1 in vocab_strategy(), v2 in vocab_strategy()) {
                prop_assume!(!(v1.is_empty() && v2.is_empty()));
                let ab = compute_iou(&v1, &v2).unwrap();
                let ba = compute_iou(&v2, &v1).unwrap();
                prop_assert_eq!(ab, ba);
                prop_assert!((0.0..=1.0).contains(&ab));
                // brute-force oracle over raw membership tests
                let names: BTreeSet<String> =
                    v1.iter().chain(v2.iter()).map(str::to_string).collect();
                let mut inter = 0usize;
                let mut union = 0usize;
                for name in &names {
                    let in1 = v1.contains(name);
                    let in2 = v2.contains(name);
                    if in1 && in2 { inter += 1; }
                    if in1 || in2 { union += 1; }
                }
                prop_assert_eq!(ab, inter as f64 / union as f64);
                if v1 == v2 {
                    prop_assert_eq!(ab, 1.0);
                }
                prop_assert_eq!(ab == 0.0, inter == 0);
            }
        }
    }
}
