//! Batch orchestration: one TOML file drives every stage from raw corpus to
//! reports. Each stage records the SHA-256 of its inputs and outputs in
//! `manifest.json`; a stage whose parameters and inputs are unchanged and
//! whose outputs are intact is skipped on the next run.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adoption::{build_adoption_table, fit_adoption, AdoptionConfig, AdoptionRecord};
use crate::cooccurrence::{build_ppmi, count_cooccurrences, PpmiMatrix};
use crate::corpus::{build_vocabulary, ingest, slice_corpus, Corpus, FieldMap, NormalizationRules, SlicedCorpus, Split, Vocabulary};
use crate::dynembed::{load_embeddings, save_embeddings, train, EmbeddingTensor, TrainConfig};
use crate::error::{Error, Result};
use crate::flow::{flow_validation, DensityPeakParams, FlowConfig, Metric, PairMode, SamplingMode};
use crate::geometry::{build_team, document_vector, experience_vector, team_report, DiversityReport, ReportOptions};
use crate::par;
use crate::stats::OlsFit;
use crate::taxonomy::{integration_report, MemberHistory, ProjectTaxonomy};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";

const REQUIRED_KEYS: [&str; 3] = ["corpus", "start_year", "end_year"];

/// Flat key-value run configuration. Relative paths are resolved against
/// the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    /// Precomputed project/member category histories; derived from the
    /// corpus when unset.
    pub taxonomy_input: Option<PathBuf>,
    pub start_year: i32,
    pub end_year: i32,
    pub window_len: u32,
    pub lowercase: bool,
    pub min_token_len: usize,
    pub min_freq: u64,
    /// Co-occurrence window in tokens.
    pub window: usize,
    pub ppmi_shift: f64,
    pub k: usize,
    pub iterations: usize,
    pub lambda: f64,
    pub tau: f64,
    pub train_seed: u64,
    pub init_scale: Option<f64>,
    pub lookback: usize,
    pub marginals: bool,
    pub flow_m: usize,
    pub flow_t1: Vec<f64>,
    pub flow_t2: Vec<f64>,
    pub flow_seed: u64,
    pub flow_sampling: SamplingMode,
    pub flow_pairs: PairMode,
    pub flow_min_cluster_input: usize,
    pub flow_metric: Metric,
    pub flow_bandwidth_percentile: f64,
    pub adopt_sample_n: usize,
    pub adopt_candidates: usize,
    pub adopt_seed: u64,
    pub adopt_demean: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let flow = FlowConfig::default();
        let adopt = AdoptionConfig::default();
        let rules = NormalizationRules::default();
        PipelineConfig {
            corpus: PathBuf::new(),
            output_dir: PathBuf::from("out"),
            taxonomy_input: None,
            start_year: 0,
            end_year: 0,
            window_len: 5,
            lowercase: rules.lowercase,
            min_token_len: rules.min_token_len,
            min_freq: 150,
            window: 5,
            ppmi_shift: 0.0,
            k: train.k,
            iterations: train.iterations,
            lambda: train.lambda,
            tau: train.tau,
            train_seed: train.seed,
            init_scale: train.init_scale,
            lookback: 1,
            marginals: true,
            flow_m: flow.m,
            flow_t1: flow.t1_percentiles,
            flow_t2: flow.t2_percentiles,
            flow_seed: flow.seed,
            flow_sampling: flow.sampling,
            flow_pairs: flow.pairs,
            flow_min_cluster_input: flow.min_cluster_input,
            flow_metric: flow.clustering.metric,
            flow_bandwidth_percentile: flow.clustering.bandwidth_percentile,
            adopt_sample_n: adopt.sample_n,
            adopt_candidates: adopt.candidates,
            adopt_seed: adopt.seed,
            adopt_demean: adopt.demean,
        }
    }
}

impl PipelineConfig {
    /// Parse TOML text, apply `key=value` overrides, resolve relative paths
    /// against `base_dir` and validate.
    pub fn from_toml_str(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            table.insert(key.trim().to_string(), parse_override_value(value.trim()));
        }
        for key in REQUIRED_KEYS {
            if !table.contains_key(key) {
                return Err(Error::Config(format!("missing required key `{key}`")));
            }
        }
        let mut config: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.corpus = base_dir.join(&config.corpus);
        config.output_dir = base_dir.join(&config.output_dir);
        config.taxonomy_input = config.taxonomy_input.map(|p| base_dir.join(p));
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.corpus.is_file() {
            return Err(Error::Config(format!("corpus not found: {}", self.corpus.display())));
        }
        if let Some(p) = &self.taxonomy_input {
            if !p.is_file() {
                return Err(Error::Config(format!("taxonomy_input not found: {}", p.display())));
            }
        }
        if self.end_year < self.start_year {
            return Err(Error::Config("end_year before start_year".into()));
        }
        if self.window_len == 0 || self.window == 0 || self.lookback == 0 {
            return Err(Error::Config("window_len, window and lookback must be >= 1".into()));
        }
        if self.flow_t1.is_empty() || self.flow_t2.is_empty() {
            return Err(Error::Config("flow_t1 and flow_t2 need at least one value".into()));
        }
        self.train_config().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn num_slices(&self) -> usize {
        ((self.end_year - self.start_year + 1) as u32).div_ceil(self.window_len) as usize
    }

    pub fn normalization(&self) -> NormalizationRules {
        NormalizationRules {
            lowercase: self.lowercase,
            min_token_len: self.min_token_len,
            ..NormalizationRules::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            k: self.k,
            iterations: self.iterations,
            lambda: self.lambda,
            tau: self.tau,
            seed: self.train_seed,
            init_scale: self.init_scale,
            ..TrainConfig::default()
        }
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            m: self.flow_m,
            t1_percentiles: self.flow_t1.clone(),
            t2_percentiles: self.flow_t2.clone(),
            seed: self.flow_seed,
            sampling: self.flow_sampling,
            pairs: self.flow_pairs,
            min_cluster_input: self.flow_min_cluster_input,
            clustering: DensityPeakParams {
                metric: self.flow_metric,
                bandwidth_percentile: self.flow_bandwidth_percentile,
            },
        }
    }

    pub fn adoption_config(&self) -> AdoptionConfig {
        AdoptionConfig {
            sample_n: self.adopt_sample_n,
            candidates: self.adopt_candidates,
            seed: self.adopt_seed,
            lookback: self.lookback,
            demean: self.adopt_demean,
        }
    }

    /// Checksum over every setting except file locations, so that moving
    /// the corpus or the output directory does not change it. Input file
    /// contents are checksummed per stage instead.
    pub fn checksum(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            for key in ["corpus", "output_dir", "taxonomy_input"] {
                map.remove(key);
            }
        }
        sha256_hex(value.to_string().as_bytes())
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Read and validate a config file.
pub fn validate_config(path: &Path) -> Result<PipelineConfig> {
    load_config(path, &[])
}

/// Read a config file and apply `key=value` overrides before validation.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    PipelineConfig::from_toml_str(&text, base, overrides)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Vocab,
    Cooc,
    Train,
    Project,
    Taxonomy,
    Diversity,
    Flow,
    Adopt,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Vocab,
        Stage::Cooc,
        Stage::Train,
        Stage::Project,
        Stage::Taxonomy,
        Stage::Diversity,
        Stage::Flow,
        Stage::Adopt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Vocab => "vocab",
            Stage::Cooc => "cooc",
            Stage::Train => "train",
            Stage::Project => "project",
            Stage::Taxonomy => "taxonomy",
            Stage::Diversity => "diversity",
            Stage::Flow => "flow",
            Stage::Adopt => "adopt",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Vocab => &[Stage::Ingest],
            Stage::Cooc => &[Stage::Vocab],
            Stage::Train => &[Stage::Cooc],
            Stage::Project | Stage::Flow | Stage::Adopt => &[Stage::Train],
            Stage::Taxonomy => &[Stage::Ingest],
            Stage::Diversity => &[Stage::Train, Stage::Taxonomy],
        }
    }
}

/// `targets` plus everything upstream of them, in execution order.
pub fn with_upstream(targets: &[Stage]) -> Vec<Stage> {
    let mut set = BTreeSet::new();
    let mut stack = targets.to_vec();
    while let Some(s) = stack.pop() {
        if set.insert(s) {
            stack.extend_from_slice(s.dependencies());
        }
    }
    set.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Checksum of the settings this stage reads.
    pub params: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_checksum: String,
    pub stages: Vec<StageRecord>,
    /// Stages executed by the run that produced this value.
    #[serde(skip)]
    pub executed: Vec<String>,
    /// Stages found up to date and skipped.
    #[serde(skip)]
    pub skipped: Vec<String>,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::malformed("manifest", e.to_string()))
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Exclusive ownership of an output directory for the lifetime of a run.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn ppmi_file(t: usize) -> String {
    format!("ppmi_t{t}.txt")
}

/// Input artifacts of a stage: key as recorded in the manifest and path.
fn stage_inputs(stage: Stage, config: &PipelineConfig) -> Vec<(String, PathBuf)> {
    let out = &config.output_dir;
    let local = |names: &[&str]| -> Vec<(String, PathBuf)> { names.iter().map(|n| (n.to_string(), out.join(n))).collect() };
    match stage {
        Stage::Ingest => vec![("source:corpus".into(), config.corpus.clone())],
        Stage::Vocab => local(&["corpus.jsonl"]),
        Stage::Cooc => local(&["corpus.jsonl", "vocab.tsv"]),
        Stage::Train => {
            let mut v = local(&["vocab.tsv"]);
            v.extend((0..config.num_slices()).map(|t| (ppmi_file(t), out.join(ppmi_file(t)))));
            v
        }
        Stage::Taxonomy => {
            let mut v = local(&["corpus.jsonl"]);
            if let Some(p) = &config.taxonomy_input {
                v.push(("source:taxonomy".into(), p.clone()));
            }
            v
        }
        Stage::Diversity => local(&["corpus.jsonl", "vocab.tsv", "embeddings.dyne", "taxonomy.jsonl"]),
        Stage::Project | Stage::Flow | Stage::Adopt => local(&["corpus.jsonl", "vocab.tsv", "embeddings.dyne"]),
    }
}

fn stage_outputs(stage: Stage, config: &PipelineConfig) -> Vec<String> {
    let names: &[&str] = match stage {
        Stage::Ingest => &["corpus.jsonl"],
        Stage::Vocab => &["vocab.tsv"],
        Stage::Cooc => return (0..config.num_slices()).map(ppmi_file).collect(),
        Stage::Train => &["embeddings.dyne", "objective.csv"],
        Stage::Project => &["doc_vectors.jsonl", "experience.jsonl"],
        Stage::Taxonomy => &["taxonomy_input.jsonl", "taxonomy.jsonl"],
        Stage::Diversity => &["diversity.jsonl", "members.jsonl", "diversity_summary.json"],
        Stage::Flow => &["flow.csv", "flow_summary.jsonl"],
        Stage::Adopt => &["adoption.csv", "adoption_fit.json"],
    };
    names.iter().map(|s| s.to_string()).collect()
}

fn stage_params(stage: Stage, c: &PipelineConfig) -> String {
    let span = (c.start_year, c.end_year, c.window_len);
    let value = match stage {
        Stage::Ingest => serde_json::json!([c.lowercase, c.min_token_len]),
        Stage::Vocab => serde_json::json!([c.min_freq]),
        Stage::Cooc => serde_json::json!([span, c.window, c.ppmi_shift]),
        Stage::Train => serde_json::to_value(c.train_config()).expect("serializes"),
        Stage::Project | Stage::Taxonomy => serde_json::json!([span, c.lookback]),
        Stage::Diversity => serde_json::json!([span, c.lookback, c.marginals]),
        Stage::Flow => serde_json::json!([span, c.flow_config()]),
        Stage::Adopt => serde_json::json!([span, c.adoption_config()]),
    };
    sha256_hex(value.to_string().as_bytes())
}

/// Run the whole pipeline.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    run_stages(config, &Stage::ALL)
}

/// Run `targets` and whatever they depend on, skipping stages that are up
/// to date, and update the manifest after every stage.
pub fn run_stages(config: &PipelineConfig, targets: &[Stage]) -> Result<RunManifest> {
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let _lock = DirLock::acquire(out)?;
    let manifest_path = out.join(MANIFEST_FILE);
    let previous = if manifest_path.exists() {
        match RunManifest::read(&manifest_path) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("ignoring unreadable manifest: {e}");
                None
            }
        }
    } else {
        None
    };

    let mut records: BTreeMap<Stage, StageRecord> = previous
        .iter()
        .flat_map(|m| m.stages.iter())
        .filter_map(|r| Stage::from_name(&r.stage).map(|s| (s, r.clone())))
        .collect();
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_checksum: config.checksum(),
        stages: Vec::new(),
        executed: Vec::new(),
        skipped: Vec::new(),
    };

    for stage in with_upstream(targets) {
        let wrap = |e: Error| Error::Stage {
            stage: stage.name(),
            source: Box::new(e),
        };
        let params = stage_params(stage, config);
        let inputs = stage_inputs(stage, config)
            .into_iter()
            .map(|(key, path)| file_sha256(&path).map(|h| (key, h)))
            .collect::<Result<BTreeMap<_, _>>>()
            .map_err(wrap)?;
        let outputs = stage_outputs(stage, config);

        if let Some(prev) = records.get(&stage) {
            if prev.params == params && prev.inputs == inputs && up_to_date(out, &outputs, prev).map_err(wrap)? {
                log::info!("{}: up to date", stage.name());
                manifest.skipped.push(stage.name().to_string());
                continue;
            }
        }

        log::info!("{}: running", stage.name());
        let start = Instant::now();
        run_one(stage, config).map_err(wrap)?;
        let seconds = start.elapsed().as_secs_f64();
        let outputs = outputs
            .iter()
            .map(|name| file_sha256(&out.join(name)).map(|h| (name.clone(), h)))
            .collect::<Result<BTreeMap<_, _>>>()
            .map_err(wrap)?;
        records.insert(
            stage,
            StageRecord {
                stage: stage.name().to_string(),
                params,
                inputs,
                outputs,
                seconds,
            },
        );
        manifest.executed.push(stage.name().to_string());
        manifest.stages = records.values().cloned().collect();
        manifest.write(&manifest_path)?;
    }
    manifest.stages = records.into_values().collect();
    manifest.write(&manifest_path)?;
    Ok(manifest)
}

/// True when every output exists with its recorded checksum. An output
/// that exists but differs from the record is an error: it was modified
/// after the stage produced it.
fn up_to_date(out: &Path, outputs: &[String], prev: &StageRecord) -> Result<bool> {
    for name in outputs {
        let path = out.join(name);
        let Some(recorded) = prev.outputs.get(name) else {
            return Ok(false);
        };
        if !path.exists() {
            return Ok(false);
        }
        if &file_sha256(&path)? != recorded {
            return Err(Error::ChecksumMismatch(path));
        }
    }
    Ok(true)
}

fn run_one(stage: Stage, c: &PipelineConfig) -> Result<()> {
    let out = c.output_dir.as_path();
    match stage {
        Stage::Ingest => {
            let corpus = ingest(&c.corpus, &FieldMap::default(), &c.normalization())?;
            corpus.write_jsonl(&out.join("corpus.jsonl"))
        }
        Stage::Vocab => {
            let corpus = Corpus::read_jsonl(&out.join("corpus.jsonl"))?;
            build_vocabulary(&corpus, c.min_freq)?.write_tsv(&out.join("vocab.tsv"))
        }
        Stage::Cooc => {
            let sliced = load_sliced(c)?;
            let vocab = Vocabulary::read_tsv(&out.join("vocab.tsv"))?;
            for slice in &sliced.slices {
                let counts = count_cooccurrences(slice.index, &slice.documents, &vocab, c.window)?;
                build_ppmi(&counts, c.ppmi_shift)?.write(&out.join(ppmi_file(slice.index)))?;
            }
            Ok(())
        }
        Stage::Train => {
            let vocab = Vocabulary::read_tsv(&out.join("vocab.tsv"))?;
            let ys = (0..c.num_slices())
                .map(|t| PpmiMatrix::read(&out.join(ppmi_file(t))).map(PpmiMatrix::into_matrix))
                .collect::<Result<Vec<_>>>()?;
            if ys.iter().any(|y| y.n() != vocab.len()) {
                return Err(Error::ShapeMismatch("target matrix size differs from vocabulary".into()));
            }
            let trained = train(&ys, &c.train_config())?;
            save_embeddings(&trained.tensor.with_fingerprint(vocab.fingerprint()), &out.join("embeddings.dyne"))?;
            let mut log = String::from("sweep,objective\n");
            for (i, v) in trained.objective_log.iter().enumerate() {
                log.push_str(&format!("{i},{v}\n"));
            }
            write_file(&out.join("objective.csv"), log)
        }
        Stage::Project => {
            let (sliced, vocab, tensor) = load_trained(c)?;
            project_stage(c, &sliced, &vocab, &tensor)
        }
        Stage::Taxonomy => taxonomy_stage(c),
        Stage::Diversity => {
            let (sliced, vocab, tensor) = load_trained(c)?;
            diversity_stage(c, &sliced, &vocab, &tensor)
        }
        Stage::Flow => {
            let (sliced, vocab, tensor) = load_trained(c)?;
            let table = flow_validation(&sliced, &vocab, &tensor, &c.flow_config())?;
            let mut w = csv::Writer::from_writer(Vec::new());
            let header = ["slice_from", "slice_to", "focal_id", "t1", "t2", "in_flow", "innovation_count"];
            w.write_record(header).map_err(csv_err)?;
            for r in &table.rows {
                w.write_record([
                    r.slice_pair[0].to_string(),
                    r.slice_pair[1].to_string(),
                    r.focal_id.to_string(),
                    r.t1.to_string(),
                    r.t2.to_string(),
                    r.in_flow.to_string(),
                    r.innovation_count.to_string(),
                ])
                .map_err(csv_err)?;
            }
            write_file(&out.join("flow.csv"), w.into_inner().map_err(|e| csv_err(e.into_error().into()))?)?;
            write_jsonl(&out.join("flow_summary.jsonl"), &table.summaries)
        }
        Stage::Adopt => {
            let (sliced, vocab, tensor) = load_trained(c)?;
            let config = c.adoption_config();
            let records = build_adoption_table(&sliced, &vocab, &tensor, &config)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &records {
                w.serialize(r).map_err(csv_err)?;
            }
            write_file(&out.join("adoption.csv"), w.into_inner().map_err(|e| csv_err(e.into_error().into()))?)?;
            let report = adoption_fit_report(&records, config.demean)?;
            let mut text = serde_json::to_string_pretty(&report).expect("fit serializes");
            text.push('\n');
            write_file(&out.join("adoption_fit.json"), text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdoptionFitReport {
    pub n_records: usize,
    pub demean: bool,
    pub fit: Option<OlsFit>,
    /// Why `fit` is absent.
    pub note: Option<String>,
}

fn adoption_fit_report(records: &[AdoptionRecord], demean: bool) -> Result<AdoptionFitReport> {
    let (fit, note) = match fit_adoption(records, demean) {
        Ok(f) => (Some(f), None),
        Err(e @ (Error::RankDeficient | Error::InvalidArgument(_) | Error::TooFewPoints { .. })) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(AdoptionFitReport {
        n_records: records.len(),
        demean,
        fit,
        note,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::malformed("csv output", e.to_string())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    write_file(path, text)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path, what: &'static str) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::malformed(what, format!("line {}: {e}", i + 1))))
        .collect()
}

fn load_sliced(c: &PipelineConfig) -> Result<SlicedCorpus> {
    let corpus = Corpus::read_jsonl(&c.output_dir.join("corpus.jsonl"))?;
    slice_corpus(&corpus, c.start_year, c.end_year, c.window_len)
}

fn load_trained(c: &PipelineConfig) -> Result<(SlicedCorpus, Vocabulary, EmbeddingTensor)> {
    let sliced = load_sliced(c)?;
    let vocab = Vocabulary::read_tsv(&c.output_dir.join("vocab.tsv"))?;
    let tensor = load_embeddings(&c.output_dir.join("embeddings.dyne"))?;
    tensor.check_vocabulary(&vocab)?;
    Ok((sliced, vocab, tensor))
}

#[derive(Serialize)]
struct DocVectorRow<'a> {
    doc_id: &'a str,
    t: usize,
    vector: Vec<f64>,
}

#[derive(Serialize)]
struct ExperienceRow<'a> {
    creator_id: &'a str,
    as_of: usize,
    lookback: usize,
    n_docs: usize,
    vector: Vec<f64>,
}

fn project_stage(c: &PipelineConfig, sliced: &SlicedCorpus, vocab: &Vocabulary, tensor: &EmbeddingTensor) -> Result<()> {
    let mut docs = Vec::new();
    for slice in &sliced.slices {
        for d in &slice.documents {
            match document_vector(d, vocab, tensor, slice.index) {
                Ok(vector) => docs.push(DocVectorRow {
                    doc_id: &d.doc_id,
                    t: slice.index,
                    vector,
                }),
                Err(Error::UnprojectableDocument(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    write_jsonl(&c.output_dir.join("doc_vectors.jsonl"), &docs)?;

    let creators: Vec<&str> = sliced.creators().collect();
    let mut rows = Vec::new();
    for as_of in 1..sliced.len() {
        let found = par::map_slice(&creators, |id| experience_vector(id, as_of, c.lookback, sliced, vocab, tensor));
        for (id, r) in creators.iter().zip(found) {
            match r {
                Ok(e) => rows.push(ExperienceRow {
                    creator_id: id,
                    as_of,
                    lookback: c.lookback,
                    n_docs: e.n_docs,
                    vector: e.vector,
                }),
                Err(Error::NoPriorExperience(_)) | Err(Error::ZeroVector) => {}
                Err(e) => return Err(e),
            }
        }
    }
    write_jsonl(&c.output_dir.join("experience.jsonl"), &rows)
}

/// Category histories for every project with categories: each member's
/// prior categories are those of their documents in the lookback window.
pub fn derive_taxonomy(sliced: &SlicedCorpus, lookback: usize) -> Vec<ProjectTaxonomy> {
    let mut out = Vec::new();
    for slice in &sliced.slices {
        for doc in slice.documents.iter().filter(|d| d.split == Split::Project && !d.categories.is_empty()) {
            let ids: BTreeSet<&str> = doc.creator_ids.iter().map(String::as_str).collect();
            let members = ids
                .into_iter()
                .map(|id| MemberHistory {
                    creator_id: id.to_string(),
                    prior_categories: sliced
                        .creator_history(id, slice.index, lookback)
                        .into_iter()
                        .flat_map(|(_, d)| d.categories.iter().cloned())
                        .collect(),
                })
                .collect();
            out.push(ProjectTaxonomy {
                doc_id: doc.doc_id.clone(),
                categories: doc.categories.iter().cloned().collect(),
                members,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyRow {
    pub doc_id: String,
    pub integration: f64,
    pub speculation: f64,
}

/// Integration and speculation for each project; projects without
/// categories or members are left out.
pub fn taxonomy_rows(projects: &[ProjectTaxonomy]) -> Result<Vec<TaxonomyRow>> {
    let mut rows = Vec::new();
    for p in projects {
        match integration_report(p) {
            Ok(r) => rows.push(TaxonomyRow {
                doc_id: p.doc_id.clone(),
                integration: r.integration,
                speculation: r.speculation,
            }),
            Err(Error::EmptyCategories) | Err(Error::TeamTooSmall { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

/// Read line-delimited [`ProjectTaxonomy`] records.
pub fn read_taxonomy_input(path: &Path) -> Result<Vec<ProjectTaxonomy>> {
    read_jsonl(path, "taxonomy input")
}

fn taxonomy_stage(c: &PipelineConfig) -> Result<()> {
    let projects = match &c.taxonomy_input {
        Some(p) => read_taxonomy_input(p)?,
        None => derive_taxonomy(&load_sliced(c)?, c.lookback),
    };
    write_jsonl(&c.output_dir.join("taxonomy_input.jsonl"), &projects)?;
    write_jsonl(&c.output_dir.join("taxonomy.jsonl"), &taxonomy_rows(&projects)?)
}

fn diversity_stage(c: &PipelineConfig, sliced: &SlicedCorpus, vocab: &Vocabulary, tensor: &EmbeddingTensor) -> Result<()> {
    let taxonomy: BTreeMap<String, TaxonomyRow> = read_jsonl::<TaxonomyRow>(&c.output_dir.join("taxonomy.jsonl"), "taxonomy")?
        .into_iter()
        .map(|r| (r.doc_id.clone(), r))
        .collect();
    let projects: Vec<(usize, &crate::corpus::Document)> = sliced
        .slices
        .iter()
        .flat_map(|s| s.documents.iter().filter(|d| d.split == Split::Project).map(move |d| (s.index, d)))
        .collect();
    let options = ReportOptions { marginals: c.marginals };
    let results = par::map_slice(&projects, |&(t, doc)| {
        build_team(doc, t, sliced, vocab, tensor, c.lookback).and_then(|team| team_report(&team, options))
    });
    let mut reports: Vec<DiversityReport> = Vec::new();
    let mut skipped = 0usize;
    for r in results {
        match r {
            Ok(mut report) => {
                if let Some(tax) = taxonomy.get(&report.doc_id) {
                    report.integration = Some(tax.integration);
                    report.speculation = Some(tax.speculation);
                }
                reports.push(report);
            }
            Err(Error::TeamTooSmall { .. })
            | Err(Error::UnprojectableDocument(_))
            | Err(Error::ZeroVector)
            | Err(Error::DegenerateTeam) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        log::info!("diversity: {skipped} projects without a scorable team");
    }
    let members: Vec<_> = reports.iter().flat_map(|r| r.members.iter()).collect();
    write_jsonl(&c.output_dir.join("diversity.jsonl"), &reports)?;
    write_jsonl(&c.output_dir.join("members.jsonl"), &members)?;
    let mut text = serde_json::to_string_pretty(&diversity_summary(&reports, c.num_slices())).expect("summary serializes");
    text.push('\n');
    write_file(&c.output_dir.join("diversity_summary.json"), text)
}

/// BD against PD correlation, pooled and per slice. Reported only; a
/// constant or too-short series leaves the coefficient null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    /// `None` for the pooled row.
    pub t: Option<usize>,
    pub n_teams: usize,
    pub bd_pd_pearson: Option<f64>,
}

pub fn diversity_summary(reports: &[DiversityReport], num_slices: usize) -> Vec<CorrelationRow> {
    let row = |t: Option<usize>| {
        let (bd, pd): (Vec<f64>, Vec<f64>) = reports
            .iter()
            .filter(|r| t.is_none_or(|t| r.t == t))
            .filter_map(|r| r.pd.map(|pd| (r.bd, pd)))
            .unzip();
        CorrelationRow {
            t,
            n_teams: bd.len(),
            bd_pd_pearson: crate::stats::pearson(&bd, &pd).ok(),
        }
    };
    std::iter::once(row(None)).chain((0..num_slices).map(|t| row(Some(t)))).collect()
}

/// Human-readable summary of an artifact: tensor header, manifest stages,
/// or record counts for text reports.
pub fn inspect_artifact(path: &Path) -> Result<String> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    if ext == "dyne" {
        let t = load_embeddings(path)?;
        let fp: String = t.fingerprint().iter().map(|b| format!("{b:02x}")).collect();
        let drift = t.adjacent_drift();
        let mut s = format!("embedding tensor: T={} n={} k={}\nvocabulary fingerprint: {fp}\nchecksum: ok\n", t.num_slices(), t.n(), t.k());
        if !drift.is_empty() {
            let mean = drift.iter().sum::<f64>() / drift.len() as f64;
            s.push_str(&format!("mean adjacent drift: {mean}\n"));
        }
        return Ok(s);
    }
    if name == MANIFEST_FILE {
        let m = RunManifest::read(path)?;
        let mut s = format!("toolkit {}\nconfig {}\n", m.version, m.config_checksum);
        for r in &m.stages {
            s.push_str(&format!("{:<10} {:>4} inputs {:>4} outputs {:>9.3}s\n", r.stage, r.inputs.len(), r.outputs.len(), r.seconds));
        }
        return Ok(s);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match ext {
        "jsonl" => {
            let first = lines.next();
            let n = first.is_some() as usize + lines.count();
            let fields = first
                .and_then(|l| serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(l).ok())
                .map(|m| m.keys().cloned().collect::<Vec<_>>().join(", "))
                .unwrap_or_default();
            Ok(format!("{n} records\nfields: {fields}\n"))
        }
        "csv" | "tsv" => {
            let header = lines.next().unwrap_or_default().to_string();
            Ok(format!("{} rows\nheader: {header}\n", lines.count()))
        }
        "txt" => {
            let header = lines.next().unwrap_or_default();
            Ok(format!("sparse matrix header (t n nnz): {header}\n"))
        }
        _ => Ok(format!("{} bytes\n", text.len())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        fs::write(dir.join("corpus.jsonl"), "{\"doc_id\":\"a\",\"year\":2000,\"text\":\"x y\"}\n").unwrap();
        let path = dir.join("run.toml");
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "corpus = \"corpus.jsonl\"\nstart_year = 2000\nend_year = 2009\n");
        let c = validate_config(&path).unwrap();
        assert_eq!((c.k, c.window, c.iterations, c.min_freq), (50, 5, 10, 150));
        assert_eq!(c.num_slices(), 2);
        assert_eq!(c.output_dir, dir.path().join("out"));
    }

    #[test]
    fn unknown_and_missing_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "corpus = \"corpus.jsonl\"\nstart_year = 2000\nend_year = 2009\nfoo = 1\n");
        let err = validate_config(&path).unwrap_err();
        assert!(err.to_string().contains("foo"), "{err}");
        let path = write_config(dir.path(), "start_year = 2000\nend_year = 2009\n");
        let err = validate_config(&path).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("corpus")), "{err}");
        let path = write_config(dir.path(), "corpus = \"nope.jsonl\"\nstart_year = 2000\nend_year = 2009\n");
        assert!(matches!(validate_config(&path), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_are_typed() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "corpus = \"corpus.jsonl\"\nstart_year = 2000\nend_year = 2009\n");
        let c = load_config(&path, &["k=8".into(), "flow_t1=[10.0, 20.0]".into(), "flow_sampling=word_positions".into()]).unwrap();
        assert_eq!(c.k, 8);
        assert_eq!(c.flow_t1, [10.0, 20.0]);
        assert_eq!(c.flow_sampling, SamplingMode::WordPositions);
        assert!(load_config(&path, &["k".into()]).is_err());
    }

    #[test]
    fn checksum_ignores_locations() {
        let mut a = PipelineConfig::default();
        let mut b = a.clone();
        b.output_dir = "/elsewhere".into();
        assert_eq!(a.checksum(), b.checksum());
        a.k = 7;
        assert_ne!(a.checksum(), b.checksum());
    }

    #[test]
    fn upstream_closure() {
        assert_eq!(with_upstream(&[Stage::Taxonomy]), [Stage::Ingest, Stage::Taxonomy]);
        assert_eq!(with_upstream(&[Stage::Diversity]).len(), 6);
        assert_eq!(with_upstream(&Stage::ALL), Stage::ALL);
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let held = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(Error::Locked(_))));
        drop(held);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }
}
