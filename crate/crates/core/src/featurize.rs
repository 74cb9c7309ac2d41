//! Feature extraction over behavior logs.
//!
//! Emits the dynamic-behavior feature set: API call counts/ratios and
//! BOW / TF-IDF n-grams over the api-name stream, per-PID counts and
//! ratios, return-value and caller statistics, extra-info counts, the
//! reboot flag, and per-API elapsed-time shares. All vectors are sparse
//! over a shared corpus-level feature space.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::behavior_log::{BehaviorLog, LogError, Manifest};

/// Feature families. RET covers both return values and caller identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureGroup {
    Api,
    Pid,
    Ret,
    Exinfo,
    Reboot,
    Time,
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureGroup::Api => "API",
            FeatureGroup::Pid => "PID",
            FeatureGroup::Ret => "RET",
            FeatureGroup::Exinfo => "EXINFO",
            FeatureGroup::Reboot => "REBOOT",
            FeatureGroup::Time => "TIME",
        };
        write!(f, "{s}")
    }
}

/// n-gram token space over api-name sequences, shared by the BOW and
/// TF-IDF features. Indices are dense and sorted by token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_index: BTreeMap<String, usize>,
    index_to_token: Vec<String>,
    n: usize,
    doc_freq: Vec<usize>,
    corpus_size: usize,
}

#[derive(Debug)]
pub enum FeaturizeError {
    EmptyCorpus,
    BadNgramOrder(usize),
    VocabularyMismatch { vocab_n: usize, config_n: usize },
}

impl fmt::Display for FeaturizeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeaturizeError::EmptyCorpus => write!(f, "corpus must contain at least one log"),
            FeaturizeError::BadNgramOrder(n) => {
                write!(f, "n-gram order must be in 1..=5, got {n}")
            }
            FeaturizeError::VocabularyMismatch { vocab_n, config_n } => write!(
                f,
                "vocabulary n-gram order {vocab_n} does not match config order {config_n}"
            ),
        }
    }
}

impl std::error::Error for FeaturizeError {}

fn ngram_key(window: &[&str]) -> String {
    window.join(" ")
}

/// Sliding n-gram windows of an api-name sequence.
fn ngrams<'a>(names: &'a [&'a str], n: usize) -> impl Iterator<Item = String> + 'a {
    names.windows(n).map(|w| ngram_key(w))
}

impl Vocabulary {
    /// Builds the n-gram vocabulary over token documents. `doc_freq`
    /// counts distinct documents containing each n-gram.
    pub fn from_token_docs<'a, I, D>(docs: I, n: usize) -> Result<Self, FeaturizeError>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a str>,
    {
        if !(1..=5).contains(&n) {
            return Err(FeaturizeError::BadNgramOrder(n));
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut corpus_size = 0usize;
        for doc in docs {
            corpus_size += 1;
            let names: Vec<&str> = doc.into_iter().collect();
            let seen: BTreeSet<String> = ngrams(&names, n).collect();
            for token in seen {
                *df.entry(token).or_insert(0) += 1;
            }
        }
        if corpus_size == 0 {
            return Err(FeaturizeError::EmptyCorpus);
        }
        let mut token_to_index = BTreeMap::new();
        let mut index_to_token = Vec::with_capacity(df.len());
        let mut doc_freq = Vec::with_capacity(df.len());
        for (i, (token, freq)) in df.into_iter().enumerate() {
            token_to_index.insert(token.clone(), i);
            index_to_token.push(token);
            doc_freq.push(freq);
        }
        Ok(Vocabulary {
            token_to_index,
            index_to_token,
            n,
            doc_freq,
            corpus_size,
        })
    }

    pub fn len(&self) -> usize {
        self.token_to_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_to_index.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.token_to_index.get(token).copied()
    }

    pub fn doc_freq(&self, index: usize) -> usize {
        self.doc_freq[index]
    }

    pub fn token_at(&self, index: usize) -> &str {
        &self.index_to_token[index]
    }

    pub fn tokens(&self) -> impl Iterator<Item = (&str, usize)> {
        self.token_to_index.iter().map(|(t, i)| (t.as_str(), *i))
    }

    /// Smoothed inverse document frequency:
    /// `ln((1 + corpus_size) / (1 + doc_freq)) + 1`.
    pub fn idf(&self, index: usize) -> f64 {
        let num = 1.0 + self.corpus_size as f64;
        let den = 1.0 + self.doc_freq[index] as f64;
        (num / den).ln() + 1.0
    }

    /// Raw-count n-gram occurrences in one api-name sequence, by vocab index.
    pub fn count_ngrams(&self, names: &[&str]) -> BTreeMap<usize, f64> {
        let mut counts = BTreeMap::new();
        for token in ngrams(names, self.n) {
            if let Some(idx) = self.index_of(&token) {
                *counts.entry(idx).or_insert(0.0) += 1.0;
            }
        }
        counts
    }
}

/// Builds the shared api-name n-gram vocabulary over a log corpus.
pub fn build_vocabulary(logs: &[BehaviorLog], n: usize) -> Result<Vocabulary, FeaturizeError> {
    Vocabulary::from_token_docs(
        logs.iter()
            .map(|log| log.actions.iter().map(|a| a.api_name.as_str())),
        n,
    )
}

/// Token -> category map. The default maps every token to itself.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryMap {
    map: HashMap<String, String>,
}

impl CategoryMap {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        CategoryMap {
            map: pairs.into_iter().collect(),
        }
    }

    /// Loads a `token,category` CSV.
    pub fn load(path: &Path) -> Result<Self, LogError> {
        let file = std::fs::File::open(path).map_err(|source| LogError::UnreadableFile {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let mut map = HashMap::new();
        for record in reader.records() {
            let record =
                record.map_err(|e| LogError::SchemaViolation(format!("category map: {e}")))?;
            let token = record
                .get(0)
                .ok_or(LogError::MissingField { row: 0, field: "token" })?;
            let category = record
                .get(1)
                .ok_or(LogError::MissingField { row: 0, field: "category" })?;
            map.insert(token.to_string(), category.to_string());
        }
        Ok(CategoryMap { map })
    }

    pub fn category<'a>(&'a self, token: &'a str) -> &'a str {
        self.map.get(token).map(String::as_str).unwrap_or(token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeaturizeConfig {
    pub groups: BTreeSet<FeatureGroup>,
    /// n-gram order used for both BOW and TF-IDF features; must match the
    /// vocabulary the extractor is given.
    pub ngram: usize,
    pub reboot_markers: BTreeSet<String>,
    pub categories: CategoryMap,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        // Best-performing group combination: API + RET + EXINFO + reboot.
        let groups = [
            FeatureGroup::Api,
            FeatureGroup::Ret,
            FeatureGroup::Exinfo,
            FeatureGroup::Reboot,
        ]
        .into_iter()
        .collect();
        let reboot_markers = ["ExitWindowsEx", "InitiateSystemShutdown", "reboot"]
            .into_iter()
            .map(String::from)
            .collect();
        FeaturizeConfig {
            groups,
            ngram: 2,
            reboot_markers,
            categories: CategoryMap::default(),
        }
    }
}

/// Corpus-level registry of named features; assigns dense indices in
/// first-seen order so every vector built against one space shares a
/// column layout.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureSpace {
    names: Vec<(FeatureGroup, String)>,
    index: HashMap<(FeatureGroup, String), usize>,
}

impl FeatureSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn intern(&mut self, group: FeatureGroup, name: &str) -> usize {
        if let Some(&idx) = self.index.get(&(group, name.to_string())) {
            return idx;
        }
        let idx = self.names.len();
        self.names.push((group, name.to_string()));
        self.index.insert((group, name.to_string()), idx);
        idx
    }

    pub fn lookup(&self, group: FeatureGroup, name: &str) -> Option<usize> {
        self.index.get(&(group, name.to_string())).copied()
    }

    pub fn feature(&self, idx: usize) -> Option<(FeatureGroup, &str)> {
        self.names.get(idx).map(|(g, n)| (*g, n.as_str()))
    }

    pub fn features(&self) -> impl Iterator<Item = (usize, FeatureGroup, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, (g, n))| (i, *g, n.as_str()))
    }

    /// Feature-name column table for model explainability.
    pub fn name_table(&self) -> Vec<String> {
        self.names
            .iter()
            .map(|(g, n)| format!("{g}:{n}"))
            .collect()
    }
}

/// Sparse feature vector; zero entries are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub sample_id: String,
    pub entries: BTreeMap<usize, f64>,
}

impl FeatureVector {
    pub fn get(&self, idx: usize) -> f64 {
        self.entries.get(&idx).copied().unwrap_or(0.0)
    }

    pub fn to_dense(&self, width: usize) -> Vec<f64> {
        let mut row = vec![0.0; width];
        for (&i, &v) in &self.entries {
            if i < width {
                row[i] = v;
            }
        }
        row
    }
}

/// A corpus feature matrix: shared space plus one sparse row per sample.
#[derive(Debug, Clone, Default)]
pub struct FeatureMatrix {
    pub space: FeatureSpace,
    pub vectors: Vec<FeatureVector>,
}

/// Extracts one sample's features into `space`, interning any new
/// feature names so repeated calls share a column layout.
pub fn extract_features(
    log: &BehaviorLog,
    vocab: &Vocabulary,
    config: &FeaturizeConfig,
    space: &mut FeatureSpace,
) -> Result<FeatureVector, FeaturizeError> {
    if vocab.n() != config.ngram {
        return Err(FeaturizeError::VocabularyMismatch {
            vocab_n: vocab.n(),
            config_n: config.ngram,
        });
    }
    let mut entries: BTreeMap<usize, f64> = BTreeMap::new();
    let mut put = |space: &mut FeatureSpace, group, name: &str, value: f64| {
        if value != 0.0 {
            entries.insert(space.intern(group, name), value);
        }
    };
    let total = log.actions.len() as f64;
    let names: Vec<&str> = log.actions.iter().map(|a| a.api_name.as_str()).collect();

    if config.groups.contains(&FeatureGroup::Api) {
        put(space, FeatureGroup::Api, "api_count", total);
        let mut per_api: BTreeMap<&str, f64> = BTreeMap::new();
        for name in &names {
            *per_api.entry(name).or_insert(0.0) += 1.0;
        }
        let mut per_cat: BTreeMap<String, f64> = BTreeMap::new();
        for (name, count) in &per_api {
            put(space, FeatureGroup::Api, &format!("api_count:{name}"), *count);
            put(space, FeatureGroup::Api, &format!("api_ratio:{name}"), *count / total);
            *per_cat
                .entry(config.categories.category(name).to_string())
                .or_insert(0.0) += *count;
        }
        for (cat, count) in per_cat {
            put(space, FeatureGroup::Api, &format!("api_category:{cat}"), count);
        }
        for (idx, count) in vocab.count_ngrams(&names) {
            let token = vocab.token_at(idx);
            put(space, FeatureGroup::Api, &format!("api_bow:{token}"), count);
            put(
                space,
                FeatureGroup::Api,
                &format!("api_tfidf:{token}"),
                count * vocab.idf(idx),
            );
        }
    }

    if config.groups.contains(&FeatureGroup::Pid) {
        let mut per_pid: BTreeMap<u64, f64> = BTreeMap::new();
        for a in &log.actions {
            *per_pid.entry(a.call_pid).or_insert(0.0) += 1.0;
        }
        put(space, FeatureGroup::Pid, "pid_count", per_pid.len() as f64);
        let mut per_cat: BTreeMap<String, f64> = BTreeMap::new();
        for (pid, count) in &per_pid {
            put(space, FeatureGroup::Pid, &format!("pid_count:{pid}"), *count);
            put(space, FeatureGroup::Pid, &format!("pid_ratio:{pid}"), *count / total);
            let key = pid.to_string();
            *per_cat
                .entry(config.categories.category(&key).to_string())
                .or_insert(0.0) += *count;
        }
        for (cat, count) in per_cat {
            put(space, FeatureGroup::Pid, &format!("pid_category:{cat}"), count);
        }
    }

    if config.groups.contains(&FeatureGroup::Ret) {
        let mut per_ret: BTreeMap<i64, f64> = BTreeMap::new();
        let mut per_call: BTreeMap<&str, f64> = BTreeMap::new();
        for a in &log.actions {
            *per_ret.entry(a.ret_value).or_insert(0.0) += 1.0;
            *per_call.entry(a.call_name.as_str()).or_insert(0.0) += 1.0;
        }
        put(space, FeatureGroup::Ret, "ret_count", per_ret.len() as f64);
        let mut ret_cat: BTreeMap<String, f64> = BTreeMap::new();
        for (ret, count) in &per_ret {
            put(space, FeatureGroup::Ret, &format!("ret_count:{ret}"), *count);
            let key = ret.to_string();
            *ret_cat
                .entry(config.categories.category(&key).to_string())
                .or_insert(0.0) += *count;
        }
        for (cat, count) in ret_cat {
            put(space, FeatureGroup::Ret, &format!("ret_category:{cat}"), count);
        }
        put(space, FeatureGroup::Ret, "call_count", per_call.len() as f64);
        let mut call_cat: BTreeMap<String, f64> = BTreeMap::new();
        for (call, count) in &per_call {
            put(space, FeatureGroup::Ret, &format!("call_count:{call}"), *count);
            put(space, FeatureGroup::Ret, &format!("call_ratio:{call}"), *count / total);
            *call_cat
                .entry(config.categories.category(call).to_string())
                .or_insert(0.0) += *count;
        }
        for (cat, count) in call_cat {
            put(space, FeatureGroup::Ret, &format!("call_category:{cat}"), count);
        }
    }

    if config.groups.contains(&FeatureGroup::Exinfo) {
        let mut per_info: BTreeMap<&str, f64> = BTreeMap::new();
        let mut total_info = 0.0;
        for a in &log.actions {
            for v in &a.ex_info {
                *per_info.entry(v.as_str()).or_insert(0.0) += 1.0;
                total_info += 1.0;
            }
        }
        put(space, FeatureGroup::Exinfo, "exinfo_count", total_info);
        let mut per_cat: BTreeMap<String, f64> = BTreeMap::new();
        for (info, count) in &per_info {
            put(space, FeatureGroup::Exinfo, &format!("exinfo_count:{info}"), *count);
            *per_cat
                .entry(config.categories.category(info).to_string())
                .or_insert(0.0) += *count;
        }
        for (cat, count) in per_cat {
            put(space, FeatureGroup::Exinfo, &format!("exinfo_category:{cat}"), count);
        }
    }

    if config.groups.contains(&FeatureGroup::Reboot) {
        let has_reboot = log.actions.iter().any(|a| {
            config.reboot_markers.contains(&a.api_name)
                || a.ex_info.iter().any(|v| config.reboot_markers.contains(v))
        });
        if has_reboot {
            put(space, FeatureGroup::Reboot, "has_reboot", 1.0);
        }
    }

    if config.groups.contains(&FeatureGroup::Time) {
        // The gap to the next call is charged to the earlier API; the
        // final call contributes nothing.
        let mut per_api_time: BTreeMap<&str, f64> = BTreeMap::new();
        let mut total_time = 0.0;
        for pair in log.actions.windows(2) {
            let delta = (pair[1].call_time - pair[0].call_time) as f64;
            let delta = delta.max(0.0);
            *per_api_time.entry(pair[0].api_name.as_str()).or_insert(0.0) += delta;
            total_time += delta;
        }
        if total_time > 0.0 {
            for (name, t) in per_api_time {
                put(
                    space,
                    FeatureGroup::Time,
                    &format!("api_time_ratio:{name}"),
                    t / total_time,
                );
            }
        }
    }

    Ok(FeatureVector {
        sample_id: log.sample_id.clone(),
        entries,
    })
}

/// Per-sample featurization failure, attributed by id.
#[derive(Debug)]
pub struct SampleError {
    pub sample_id: String,
    pub error: LogError,
}

impl fmt::Display for SampleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sample {}: {}", self.sample_id, self.error)
    }
}

/// Featurizes every manifest entry. Failed samples are reported and
/// skipped; surviving rows share one feature space.
pub fn featurize_corpus(
    manifest: &Manifest,
    base_dir: &Path,
    vocab: &Vocabulary,
    config: &FeaturizeConfig,
) -> Result<(FeatureMatrix, Vec<SampleError>), FeaturizeError> {
    let mut matrix = FeatureMatrix::default();
    let mut errors = Vec::new();
    for entry in &manifest.entries {
        let path = base_dir.join(&entry.path);
        match crate::behavior_log::parse_log_file(&path) {
            Ok(mut log) => {
                if log.sample_id.is_empty() {
                    log.sample_id = entry.sample_id.clone();
                }
                let vector = extract_features(&log, vocab, config, &mut matrix.space)?;
                matrix.vectors.push(FeatureVector {
                    sample_id: entry.sample_id.clone(),
                    ..vector
                });
            }
            Err(error) => errors.push(SampleError {
                sample_id: entry.sample_id.clone(),
                error,
            }),
        }
    }
    Ok((matrix, errors))
}

/// Writes the sparse triplet CSV (`sample_id,feature_index,value`) and
/// the sidecar name table (`feature_index,group,name`).
pub fn export_feature_matrix(
    matrix: &FeatureMatrix,
    triplets: &mut dyn Write,
    sidecar: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(triplets, "sample_id,feature_index,value")?;
    for v in &matrix.vectors {
        for (&idx, &value) in &v.entries {
            writeln!(triplets, "{},{},{}", v.sample_id, idx, value)?;
        }
    }
    writeln!(sidecar, "feature_index,group,name")?;
    for (idx, group, name) in matrix.space.features() {
        let quoted = if name.contains(',') || name.contains('"') {
            format!("\"{}\"", name.replace('"', "\"\""))
        } else {
            name.to_string()
        };
        writeln!(sidecar, "{idx},{group},{quoted}")?;
    }
    Ok(())
}
