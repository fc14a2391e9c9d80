//! Context ingestion: attach entity contexts from an offline dump (or a
//! rate-limited remote fetcher) and extract per-triple relation contexts by
//! scoring sentences of the endpoints' encyclopedia paragraphs against a
//! verbalized form of the triple.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ContextGraph, EntityContext, EntityId, GraphError, Quadruple, RelationContext, Split};
use crate::llm::TokenBucket;
use crate::textsim::TextScorer;

#[derive(Error, Debug)]
pub enum IngestError {
    #[error("malformed mapping line {line} in {path}: expected `native_id\\tQID`")]
    MalformedMapping { path: String, line: usize },
    #[error("mapping is not injective: {qid} is claimed by both {first} and {second}")]
    NonInjectiveMapping {
        qid: String,
        first: String,
        second: String,
    },
    #[error("fetch policy values must be positive")]
    BadFetchPolicy,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad record in {path}: {source}")]
    BadRecord {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Injective map from native entity ids to external (e.g. Wikidata) ids.
#[derive(Debug, Clone, Default)]
pub struct MappingTable {
    map: BTreeMap<EntityId, String>,
}

impl MappingTable {
    pub fn get(&self, e: &EntityId) -> Option<&str> {
        self.map.get(e).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, native: EntityId, qid: String) -> Result<(), IngestError> {
        if let Some((prev, _)) = self.map.iter().find(|(_, q)| **q == qid) {
            if *prev != native {
                return Err(IngestError::NonInjectiveMapping {
                    qid,
                    first: prev.to_string(),
                    second: native.to_string(),
                });
            }
        }
        self.map.insert(native, qid);
        Ok(())
    }

    /// Loads a two-column TSV `native_id \t QID`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path_str = path.as_ref().display().to_string();
        let file = std::fs::File::open(path.as_ref()).map_err(|source| IngestError::Io {
            path: path_str.clone(),
            source,
        })?;
        let mut table = MappingTable::default();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| IngestError::Io {
                path: path_str.clone(),
                source,
            })?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(native), Some(qid), None) if !native.is_empty() && !qid.is_empty() => {
                    table.insert(EntityId::new(native)?, qid.to_string())?;
                }
                _ => {
                    return Err(IngestError::MalformedMapping {
                        path: path_str,
                        line: lineno + 1,
                    })
                }
            }
        }
        Ok(table)
    }
}

/// Limits for the remote entity fetcher.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FetchPolicy {
    pub max_requests_per_second: f64,
    pub max_retries: usize,
    pub timeout: Duration,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        FetchPolicy {
            max_requests_per_second: 2.0,
            max_retries: 2,
            timeout: Duration::from_secs(10),
        }
    }
}

impl FetchPolicy {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.max_requests_per_second > 0.0
            && self.max_retries > 0
            && self.timeout > Duration::ZERO
        {
            Ok(())
        } else {
            Err(IngestError::BadFetchPolicy)
        }
    }
}

/// Where entity contexts come from: a JSON-lines dump keyed by external id,
/// or a read-only HTTP endpoint serving one record per external id.
#[derive(Debug, Clone)]
pub enum ContextSource {
    Dump(PathBuf),
    Remote { endpoint: String, policy: FetchPolicy },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Entities with a mapping entry.
    pub mapped: usize,
    /// Mapped entities whose context record was found.
    pub fetched: usize,
    /// Mapped entities whose record could not be obtained.
    pub failed: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DumpRecord {
    external_id: String,
    label: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    aliases: Vec<String>,
    #[serde(default)]
    wiki_paragraph: Option<String>,
}

impl DumpRecord {
    fn into_context(self) -> EntityContext {
        EntityContext {
            label: self.label,
            description: self.description,
            aliases: self.aliases,
            wiki_paragraph: self.wiki_paragraph,
            external_id: Some(self.external_id),
        }
    }
}

fn load_dump(path: &Path) -> Result<BTreeMap<String, DumpRecord>, IngestError> {
    let path_str = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path_str.clone(),
        source,
    })?;
    let mut records = BTreeMap::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|source| IngestError::Io {
            path: path_str.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DumpRecord =
            serde_json::from_str(&line).map_err(|source| IngestError::BadRecord {
                path: path_str.clone(),
                source,
            })?;
        records.insert(rec.external_id.clone(), rec);
    }
    Ok(records)
}

fn fetch_remote(
    client: &reqwest::blocking::Client,
    bucket: &TokenBucket,
    endpoint: &str,
    qid: &str,
    policy: &FetchPolicy,
) -> Option<DumpRecord> {
    let url = format!("{}/{}", endpoint.trim_end_matches('/'), qid);
    for _ in 0..=policy.max_retries {
        bucket.acquire();
        let result = client
            .get(&url)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json::<DumpRecord>());
        match result {
            Ok(rec) => return Some(rec),
            Err(e) => log::warn!("fetch of {qid} failed: {e}"),
        }
    }
    None
}

/// Attaches an `EntityContext` to every entity. Mapped entities are looked
/// up in the source by their external id; entities without a mapping (or
/// whose record cannot be obtained) fall back to a minimal context that
/// carries only the native id as label.
pub fn attach_entity_contexts(
    graph: &mut ContextGraph,
    source: &ContextSource,
    mapping: &MappingTable,
) -> Result<CoverageReport, IngestError> {
    let dump = match source {
        ContextSource::Dump(path) => Some(load_dump(path)?),
        ContextSource::Remote { policy, .. } => {
            policy.validate()?;
            None
        }
    };
    let (client, bucket) = match source {
        ContextSource::Remote { policy, .. } => (
            Some(
                reqwest::blocking::Client::builder()
                    .timeout(policy.timeout)
                    .build()
                    .expect("client builds"),
            ),
            Some(TokenBucket::new(policy.max_requests_per_second)),
        ),
        ContextSource::Dump(_) => (None, None),
    };

    let entities: Vec<EntityId> = graph.entities().cloned().collect();
    let mut report = CoverageReport::default();
    for e in entities {
        let ctx = match mapping.get(&e) {
            None => EntityContext::minimal(&e),
            Some(qid) => {
                report.mapped += 1;
                let record = match source {
                    ContextSource::Dump(_) => {
                        dump.as_ref().and_then(|d| d.get(qid).cloned())
                    }
                    ContextSource::Remote { endpoint, policy } => fetch_remote(
                        client.as_ref().unwrap(),
                        bucket.as_ref().unwrap(),
                        endpoint,
                        qid,
                        policy,
                    ),
                };
                match record {
                    Some(rec) => {
                        report.fetched += 1;
                        rec.into_context()
                    }
                    None => {
                        report.failed += 1;
                        let mut ctx = EntityContext::minimal(&e);
                        ctx.external_id = Some(qid.to_string());
                        ctx
                    }
                }
            }
        };
        graph.set_entity_context(&e, ctx)?;
    }
    Ok(report)
}

/// Words of a relation path: slashes and underscores become spaces,
/// e.g. `/location/adjoining_relationship/adjoins` →
/// `location adjoining relationship adjoins`.
pub fn relation_words(raw: &str) -> String {
    raw.split(['/', '_'])
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Natural-language form of a triple used as the scoring query:
/// `{head label} {relation words} {tail label}`.
pub fn verbalize_triple(graph: &ContextGraph, q: &Quadruple) -> String {
    format!(
        "{} {} {}",
        graph.label_of(&q.h),
        relation_words(q.r.raw()),
        graph.label_of(&q.t)
    )
}

/// Tokens a sentence boundary must not follow (common abbreviations).
const ABBREVIATIONS: &[&str] = &[
    "Mr", "Mrs", "Ms", "Dr", "Prof", "St", "Jr", "Sr", "vs", "etc", "e.g", "i.e", "No", "Co",
    "Inc", "Ltd", "U.S", "D.C",
];

fn ends_with_abbreviation(prefix: &str) -> bool {
    let last = prefix
        .trim_end_matches('.')
        .rsplit(|c: char| c.is_whitespace() || c == '(')
        .next()
        .unwrap_or("");
    ABBREVIATIONS.iter().any(|a| last.eq_ignore_ascii_case(a))
}

/// Splits text into sentences on `.`, `!`, `?` followed by whitespace and an
/// uppercase letter or quote, skipping a stop-list of abbreviations. Every
/// returned sentence is a verbatim substring of the input.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (ci, &(i, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        // must be followed by whitespace, then uppercase or a quote
        let mut j = ci + 1;
        if j >= chars.len() || !chars[j].1.is_whitespace() {
            continue;
        }
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        if j >= chars.len() {
            continue;
        }
        let next = chars[j].1;
        if !(next.is_uppercase() || next == '"' || next == '\'' || next == '“') {
            continue;
        }
        if c == '.' && ends_with_abbreviation(&text[start..i]) {
            continue;
        }
        let end = i + c.len_utf8();
        let sentence = text[start..end].trim();
        if !sentence.is_empty() {
            sentences.push(sentence);
        }
        start = end;
    }
    let tail = text[start.min(bytes.len())..].trim();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

/// Extracts relation contexts for every train triple whose endpoints both
/// carry an encyclopedia paragraph: the concatenated paragraphs are split
/// into sentences, each scored against the verbalized triple, and the top-γ
/// sentences (score-descending, ties in document order) stored. Returns the
/// number of triples that received a non-empty context.
pub fn extract_relation_contexts(
    graph: &mut ContextGraph,
    scorer: &dyn TextScorer,
    gamma: usize,
) -> Result<usize, IngestError> {
    assert!(gamma >= 1, "gamma must be at least 1");
    let train: Vec<Quadruple> = graph.split_quads(Split::Train).cloned().collect();
    let mut extracted = 0usize;
    for q in train {
        let h_para = graph
            .entity_context(&q.h)
            .and_then(|c| c.wiki_paragraph.clone());
        let t_para = graph
            .entity_context(&q.t)
            .and_then(|c| c.wiki_paragraph.clone());
        let (Some(hp), Some(tp)) = (h_para, t_para) else {
            graph.set_relation_context(&q.h, &q.r, &q.t, RelationContext::default())?;
            continue;
        };
        let document = format!("{hp} {tp}");
        let sentences: Vec<String> = split_sentences(&document)
            .into_iter()
            .map(str::to_string)
            .collect();
        let query = verbalize_triple(graph, &q);
        let scores = match scorer.score_batch(&query, &sentences) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("scoring failed for ({}, {}, {}): {e}", q.h, q.r, q.t);
                continue;
            }
        };
        let mut order: Vec<usize> = (0..sentences.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.truncate(gamma);
        let rc = RelationContext {
            sentences: order
                .into_iter()
                .map(|i| (sentences[i].clone(), scores[i]))
                .collect(),
        };
        if !rc.is_empty() {
            extracted += 1;
        }
        graph.set_relation_context(&q.h, &q.r, &q.t, rc)?;
    }
    Ok(extracted)
}
