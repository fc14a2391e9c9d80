//! In-memory context graph: entities, relations (with materialized reversed
//! twins), factual quadruples, entity contexts and per-triple relation
//! contexts, plus the indices the pipelines need.
//!
//! The graph is built single-writer, then `freeze()` seals the vocabulary
//! and triple set and builds the adjacency and label indices. Contexts may
//! still be attached after freezing (the vocabulary they describe is fixed);
//! all pipeline stages read from a frozen graph.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum GraphError {
    #[error("malformed line {line} in {path}: expected `head\\trelation\\ttail`")]
    MalformedLine { path: String, line: usize },
    #[error("unknown entity: {0}")]
    UnknownEntity(String),
    #[error("unknown relation: {0}")]
    UnknownRelation(String),
    #[error("empty entity id")]
    EmptyEntityId,
    #[error("empty relation id")]
    EmptyRelationId,
    #[error("graph is frozen; no further triples can be added")]
    Frozen,
    #[error("graph must be frozen before this operation")]
    NotFrozen,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad snapshot {path}: {source}")]
    BadSnapshot {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Opaque entity identifier, e.g. `/m/07h1h5` or `Q42`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(raw: impl Into<String>) -> Result<Self, GraphError> {
        let raw = raw.into();
        if raw.is_empty() {
            return Err(GraphError::EmptyEntityId);
        }
        Ok(EntityId(raw))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Relation identifier. Every stored relation has a reversed twin; the
/// `reversed` flag marks the `r⁻¹` variant so head queries can be expressed
/// as tail queries.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId {
    raw: String,
    reversed: bool,
}

impl RelationId {
    pub fn new(raw: impl Into<String>) -> Result<Self, GraphError> {
        let raw = raw.into();
        if raw.is_empty() {
            return Err(GraphError::EmptyRelationId);
        }
        Ok(RelationId {
            raw,
            reversed: false,
        })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    /// The reversed twin; `reverse(reverse(r)) == r`.
    pub fn reverse(&self) -> RelationId {
        RelationId {
            raw: self.raw.clone(),
            reversed: !self.reversed,
        }
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.reversed {
            write!(f, "{}⁻¹", self.raw)
        } else {
            f.write_str(&self.raw)
        }
    }
}

/// Textual context of an entity: label, short description, aliases and
/// optionally the first encyclopedia paragraph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityContext {
    pub label: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub wiki_paragraph: Option<String>,
    #[serde(default)]
    pub external_id: Option<String>,
}

impl EntityContext {
    /// Minimal context carrying only the native id as label.
    pub fn minimal(id: &EntityId) -> Self {
        EntityContext {
            label: id.as_str().to_string(),
            ..Default::default()
        }
    }
}

/// Top-γ supporting sentences for a triple, scores non-increasing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelationContext {
    pub sentences: Vec<(String, f64)>,
}

impl RelationContext {
    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// A fact `(h, r, t, rc)` with optional relation context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadruple {
    pub h: EntityId,
    pub r: RelationId,
    pub t: EntityId,
    pub rc: Option<RelationContext>,
}

impl Quadruple {
    /// The reversed view `(t, r⁻¹, h)`, sharing the relation context.
    pub fn reversed(&self) -> Quadruple {
        Quadruple {
            h: self.t.clone(),
            r: self.r.reverse(),
            t: self.h.clone(),
            rc: self.rc.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
    Both,
}

/// Result of loading a triple file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadReport {
    pub added: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonEntityRecord {
    entity_id: String,
    label: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    aliases: Vec<String>,
    #[serde(default)]
    wiki_paragraph: Option<String>,
    #[serde(default)]
    external_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonRelationContextRecord {
    h: String,
    r: String,
    t: String,
    sentences: Vec<JsonSentence>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonSentence {
    text: String,
    score: f64,
}

/// The context graph `CG = {E, R, Q, EC, RC}`.
///
/// Reversed relations are materialized in the relation vocabulary, but
/// reversed quadruples are computed views, not stored rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextGraph {
    entities: BTreeSet<EntityId>,
    relations: BTreeSet<RelationId>,
    quads: Vec<Quadruple>,
    entity_contexts: BTreeMap<EntityId, EntityContext>,
    splits: BTreeMap<Split, Vec<usize>>,
    frozen: bool,

    // Built at freeze time; all over the train split only.
    #[serde(skip)]
    by_head: HashMap<EntityId, Vec<usize>>,
    #[serde(skip)]
    by_tail: HashMap<EntityId, Vec<usize>>,
    #[serde(skip)]
    train_triple_set: HashSet<(EntityId, RelationId, EntityId)>,
    #[serde(skip)]
    unseen: Vec<usize>,
    #[serde(skip)]
    split_sets: BTreeMap<Split, HashSet<(EntityId, RelationId, EntityId)>>,
    #[serde(skip)]
    label_index: BTreeMap<String, BTreeSet<EntityId>>,
    #[serde(skip)]
    alias_index: BTreeMap<String, BTreeSet<EntityId>>,
}

impl Default for ContextGraph {
    fn default() -> Self {
        Self::new()
    }
}

/// Whitespace-normalized, case-folded surface form used for label and alias
/// lookup.
pub fn normalize_surface(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl ContextGraph {
    pub fn new() -> Self {
        ContextGraph {
            entities: BTreeSet::new(),
            relations: BTreeSet::new(),
            quads: Vec::new(),
            entity_contexts: BTreeMap::new(),
            splits: BTreeMap::new(),
            frozen: false,
            by_head: HashMap::new(),
            by_tail: HashMap::new(),
            train_triple_set: HashSet::new(),
            unseen: Vec::new(),
            split_sets: BTreeMap::new(),
            label_index: BTreeMap::new(),
            alias_index: BTreeMap::new(),
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Relation count including reversed twins.
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_quads(&self) -> usize {
        self.quads.len()
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityId> {
        self.entities.iter()
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationId> {
        self.relations.iter()
    }

    pub fn contains_entity(&self, e: &EntityId) -> bool {
        self.entities.contains(e)
    }

    pub fn contains_relation(&self, r: &RelationId) -> bool {
        self.relations.contains(r)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.splits.get(&split).map_or(0, |v| v.len())
    }

    /// Quadruples of a split, in insertion order.
    pub fn split_quads(&self, split: Split) -> impl Iterator<Item = &Quadruple> {
        self.splits
            .get(&split)
            .into_iter()
            .flatten()
            .map(move |&i| &self.quads[i])
    }

    /// Adds one triple to a split, registering vocabulary and the reversed
    /// twin relation. Returns false when the triple already exists in the
    /// split (deduplicated).
    pub fn add_triple(
        &mut self,
        h: EntityId,
        r: RelationId,
        t: EntityId,
        split: Split,
    ) -> Result<bool, GraphError> {
        if self.frozen {
            return Err(GraphError::Frozen);
        }
        let key = (h.clone(), r.clone(), t.clone());
        if !self.split_sets.entry(split).or_default().insert(key) {
            return Ok(false);
        }
        self.entities.insert(h.clone());
        self.entities.insert(t.clone());
        self.relations.insert(r.clone());
        self.relations.insert(r.reverse());
        self.quads.push(Quadruple { h, r, t, rc: None });
        let idx = self.quads.len() - 1;
        self.splits.entry(split).or_default().push(idx);
        Ok(true)
    }

    /// Loads a tab-separated `head\trelation\ttail` file into a split.
    /// Duplicates within the split are dropped and counted.
    pub fn load_triples(&mut self, path: impl AsRef<Path>, split: Split) -> Result<LoadReport, GraphError> {
        let path = path.as_ref();
        let path_str = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| GraphError::Io {
            path: path_str.clone(),
            source,
        })?;
        let reader = BufReader::new(file);
        let mut added = 0usize;
        let mut duplicates = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| GraphError::Io {
                path: path_str.clone(),
                source,
            })?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (h, r, t) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(h), Some(r), Some(t), None) if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                    (h, r, t)
                }
                _ => {
                    return Err(GraphError::MalformedLine {
                        path: path_str,
                        line: lineno + 1,
                    })
                }
            };
            let (h, r, t) = (EntityId::new(h)?, RelationId::new(r)?, EntityId::new(t)?);
            if self.add_triple(h, r, t, split)? {
                added += 1;
            } else {
                duplicates += 1;
            }
        }
        if duplicates > 0 {
            log::warn!("{path_str}: dropped {duplicates} duplicate triples");
        }
        Ok(LoadReport { added, duplicates })
    }

    /// Seals vocabulary and triples and builds the indices. Idempotent.
    pub fn freeze(&mut self) {
        if self.frozen {
            return;
        }
        self.frozen = true;
        self.rebuild_indices();
    }

    fn rebuild_indices(&mut self) {
        self.by_head.clear();
        self.by_tail.clear();
        self.train_triple_set.clear();
        self.unseen.clear();
        let mut train_vocab: HashSet<&EntityId> = HashSet::new();
        let mut train_rels: HashSet<&RelationId> = HashSet::new();
        if let Some(train) = self.splits.get(&Split::Train) {
            for &i in train {
                let q = &self.quads[i];
                self.by_head.entry(q.h.clone()).or_default().push(i);
                self.by_tail.entry(q.t.clone()).or_default().push(i);
                self.train_triple_set
                    .insert((q.h.clone(), q.r.clone(), q.t.clone()));
                train_vocab.insert(&q.h);
                train_vocab.insert(&q.t);
                train_rels.insert(&q.r);
            }
        }
        for split in [Split::Valid, Split::Test] {
            for &i in self.splits.get(&split).into_iter().flatten() {
                let q = &self.quads[i];
                if !train_vocab.contains(&q.h)
                    || !train_vocab.contains(&q.t)
                    || !train_rels.contains(&q.r)
                {
                    self.unseen.push(i);
                }
            }
        }
        self.rebuild_label_index();
    }

    fn rebuild_label_index(&mut self) {
        self.label_index.clear();
        self.alias_index.clear();
        for (e, ctx) in &self.entity_contexts {
            if !ctx.label.is_empty() {
                self.label_index
                    .entry(normalize_surface(&ctx.label))
                    .or_default()
                    .insert(e.clone());
            }
            for alias in &ctx.aliases {
                self.alias_index
                    .entry(normalize_surface(alias))
                    .or_default()
                    .insert(e.clone());
            }
        }
    }

    /// Valid/test quad indices whose vocabulary never appears in train.
    /// Such triples are retained and surfaced here, not dropped.
    pub fn unseen_eval_quads(&self) -> &[usize] {
        &self.unseen
    }

    /// Attaches (or replaces) the context of a known entity. Aliases equal
    /// to the label are dropped. Requires a frozen vocabulary.
    pub fn set_entity_context(
        &mut self,
        e: &EntityId,
        mut ctx: EntityContext,
    ) -> Result<(), GraphError> {
        if !self.frozen {
            return Err(GraphError::NotFrozen);
        }
        if !self.entities.contains(e) {
            return Err(GraphError::UnknownEntity(e.to_string()));
        }
        if ctx.label.is_empty() {
            ctx.label = e.as_str().to_string();
        }
        let label_norm = normalize_surface(&ctx.label);
        ctx.aliases.retain(|a| normalize_surface(a) != label_norm);
        ctx.aliases.dedup();
        self.entity_contexts.insert(e.clone(), ctx);
        self.rebuild_label_index();
        Ok(())
    }

    pub fn entity_context(&self, e: &EntityId) -> Option<&EntityContext> {
        self.entity_contexts.get(e)
    }

    /// Label of an entity, falling back to the raw id.
    pub fn label_of(&self, e: &EntityId) -> String {
        self.entity_contexts
            .get(e)
            .map(|c| c.label.clone())
            .unwrap_or_else(|| e.as_str().to_string())
    }

    pub fn description_of(&self, e: &EntityId) -> Option<&str> {
        self.entity_contexts
            .get(e)
            .map(|c| c.description.as_str())
            .filter(|d| !d.is_empty())
    }

    /// Attaches a relation context to a stored (forward) train triple.
    pub fn set_relation_context(
        &mut self,
        h: &EntityId,
        r: &RelationId,
        t: &EntityId,
        rc: RelationContext,
    ) -> Result<(), GraphError> {
        if !self.frozen {
            return Err(GraphError::NotFrozen);
        }
        let idx = self
            .splits
            .get(&Split::Train)
            .into_iter()
            .flatten()
            .copied()
            .find(|&i| {
                let q = &self.quads[i];
                &q.h == h && &q.r == r && &q.t == t
            });
        match idx {
            Some(i) => {
                self.quads[i].rc = Some(rc);
                Ok(())
            }
            None => Err(GraphError::UnknownRelation(format!("({h}, {r}, {t})"))),
        }
    }

    /// Train quadruples incident to `e` in the reverse-closed view:
    /// `Out` has `e` at head (including reversed twins of triples where `e`
    /// is the tail), `In` has `e` at tail, `Both` is their union.
    /// Order is deterministic: relation, then other endpoint, lexicographic.
    pub fn neighbors(&self, e: &EntityId, direction: Direction) -> Result<Vec<Quadruple>, GraphError> {
        if !self.frozen {
            return Err(GraphError::NotFrozen);
        }
        if !self.entities.contains(e) {
            return Err(GraphError::UnknownEntity(e.to_string()));
        }
        let mut out: Vec<Quadruple> = Vec::new();
        let forward = self.by_head.get(e).into_iter().flatten();
        let backward = self.by_tail.get(e).into_iter().flatten();
        match direction {
            Direction::Out => {
                out.extend(forward.map(|&i| self.quads[i].clone()));
                out.extend(backward.map(|&i| self.quads[i].reversed()));
            }
            Direction::In => {
                out.extend(backward.map(|&i| self.quads[i].clone()));
                out.extend(forward.map(|&i| self.quads[i].reversed()));
            }
            Direction::Both => {
                out.extend(forward.map(|&i| self.quads[i].clone()));
                out.extend(backward.map(|&i| self.quads[i].reversed()));
                out.extend(self.by_tail.get(e).into_iter().flatten().map(|&i| self.quads[i].clone()));
                out.extend(self.by_head.get(e).into_iter().flatten().map(|&i| self.quads[i].reversed()));
            }
        }
        out.sort_by(|a, b| {
            (&a.r, &a.h, &a.t)
                .cmp(&(&b.r, &b.h, &b.t))
        });
        out.dedup_by(|a, b| a.h == b.h && a.r == b.r && a.t == b.t);
        Ok(out)
    }

    /// Deduplicated relations (including reversed twins) incident to `e` in
    /// the train split, lexicographic order.
    pub fn relations_of(&self, e: &EntityId) -> Result<Vec<RelationId>, GraphError> {
        let quads = self.neighbors(e, Direction::Out)?;
        let set: BTreeSet<RelationId> = quads.into_iter().map(|q| q.r).collect();
        Ok(set.into_iter().collect())
    }

    /// Tail entities completing `(h, r, ?)` in the reverse-closed train view,
    /// lexicographic order.
    pub fn tails_of(&self, h: &EntityId, r: &RelationId) -> Result<Vec<EntityId>, GraphError> {
        let quads = self.neighbors(h, Direction::Out)?;
        let set: BTreeSet<EntityId> = quads
            .into_iter()
            .filter(|q| &q.r == r)
            .map(|q| q.t)
            .collect();
        Ok(set.into_iter().collect())
    }

    /// Whether `(h, r, t)` is a train triple in the reverse-closed view.
    pub fn has_train_triple(&self, h: &EntityId, r: &RelationId, t: &EntityId) -> bool {
        if r.is_reversed() {
            self.train_triple_set
                .contains(&(t.clone(), r.reverse(), h.clone()))
        } else {
            self.train_triple_set
                .contains(&(h.clone(), r.clone(), t.clone()))
        }
    }

    /// Resolves a surface form to an entity: exact label match first, then
    /// alias match, both case-insensitive after whitespace normalization.
    /// Ambiguity resolves to the lexicographically smallest id.
    pub fn resolve_entity(&self, surface: &str) -> Option<EntityId> {
        let norm = normalize_surface(surface);
        if norm.is_empty() {
            return None;
        }
        if let Some(ids) = self.label_index.get(&norm) {
            return ids.iter().next().cloned();
        }
        if let Some(ids) = self.alias_index.get(&norm) {
            return ids.iter().next().cloned();
        }
        None
    }

    /// Train-split degree (in + out) of an entity.
    pub fn degree(&self, e: &EntityId) -> usize {
        self.by_head.get(e).map_or(0, |v| v.len()) + self.by_tail.get(e).map_or(0, |v| v.len())
    }

    /// SHA-256 over the sorted vocabulary; checkpoints carry this to refuse
    /// loading against a different graph.
    pub fn vocab_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.entities {
            hasher.update(e.as_str().as_bytes());
            hasher.update([0u8]);
        }
        for r in &self.relations {
            hasher.update(r.raw().as_bytes());
            hasher.update([if r.is_reversed() { 1u8 } else { 2u8 }]);
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes all entity contexts as JSON-lines.
    pub fn save_entity_contexts(&self, path: impl AsRef<Path>) -> Result<usize, GraphError> {
        let path_str = path.as_ref().display().to_string();
        let mut file = std::fs::File::create(path.as_ref()).map_err(|source| GraphError::Io {
            path: path_str.clone(),
            source,
        })?;
        let mut n = 0;
        for (e, ctx) in &self.entity_contexts {
            let rec = JsonEntityRecord {
                entity_id: e.as_str().to_string(),
                label: ctx.label.clone(),
                description: ctx.description.clone(),
                aliases: ctx.aliases.clone(),
                wiki_paragraph: ctx.wiki_paragraph.clone(),
                external_id: ctx.external_id.clone(),
            };
            let line = serde_json::to_string(&rec).expect("context serializes");
            writeln!(file, "{line}").map_err(|source| GraphError::Io {
                path: path_str.clone(),
                source,
            })?;
            n += 1;
        }
        Ok(n)
    }

    /// Loads entity contexts from a JSON-lines file (keys: entity_id, label,
    /// description, aliases, wiki_paragraph, external_id). Unknown entities
    /// are skipped with a warning.
    pub fn load_entity_contexts(&mut self, path: impl AsRef<Path>) -> Result<usize, GraphError> {
        if !self.frozen {
            return Err(GraphError::NotFrozen);
        }
        let path_str = path.as_ref().display().to_string();
        let file = std::fs::File::open(path.as_ref()).map_err(|source| GraphError::Io {
            path: path_str.clone(),
            source,
        })?;
        let mut n = 0;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|source| GraphError::Io {
                path: path_str.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonEntityRecord =
                serde_json::from_str(&line).map_err(|source| GraphError::BadSnapshot {
                    path: path_str.clone(),
                    source,
                })?;
            let e = EntityId::new(rec.entity_id.clone())?;
            if !self.entities.contains(&e) {
                log::warn!("context for unknown entity {} skipped", rec.entity_id);
                continue;
            }
            self.set_entity_context(
                &e,
                EntityContext {
                    label: rec.label,
                    description: rec.description,
                    aliases: rec.aliases,
                    wiki_paragraph: rec.wiki_paragraph,
                    external_id: rec.external_id,
                },
            )?;
            n += 1;
        }
        Ok(n)
    }

    /// Writes the relation contexts of train triples as JSON-lines
    /// (keys: h, r, t, sentences: [{text, score}]).
    pub fn save_relation_contexts(&self, path: impl AsRef<Path>) -> Result<usize, GraphError> {
        let path_str = path.as_ref().display().to_string();
        let mut file = std::fs::File::create(path.as_ref()).map_err(|source| GraphError::Io {
            path: path_str.clone(),
            source,
        })?;
        let mut n = 0;
        for q in self.split_quads(Split::Train) {
            if let Some(rc) = &q.rc {
                let rec = JsonRelationContextRecord {
                    h: q.h.as_str().to_string(),
                    r: q.r.raw().to_string(),
                    t: q.t.as_str().to_string(),
                    sentences: rc
                        .sentences
                        .iter()
                        .map(|(text, score)| JsonSentence {
                            text: text.clone(),
                            score: *score,
                        })
                        .collect(),
                };
                let line = serde_json::to_string(&rec).expect("context serializes");
                writeln!(file, "{line}").map_err(|source| GraphError::Io {
                    path: path_str.clone(),
                    source,
                })?;
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn load_relation_contexts(&mut self, path: impl AsRef<Path>) -> Result<usize, GraphError> {
        if !self.frozen {
            return Err(GraphError::NotFrozen);
        }
        let path_str = path.as_ref().display().to_string();
        let file = std::fs::File::open(path.as_ref()).map_err(|source| GraphError::Io {
            path: path_str.clone(),
            source,
        })?;
        let mut n = 0;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|source| GraphError::Io {
                path: path_str.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonRelationContextRecord =
                serde_json::from_str(&line).map_err(|source| GraphError::BadSnapshot {
                    path: path_str.clone(),
                    source,
                })?;
            let h = EntityId::new(rec.h)?;
            let r = RelationId::new(rec.r)?;
            let t = EntityId::new(rec.t)?;
            let rc = RelationContext {
                sentences: rec.sentences.into_iter().map(|s| (s.text, s.score)).collect(),
            };
            self.set_relation_context(&h, &r, &t, rc)?;
            n += 1;
        }
        Ok(n)
    }

    /// Serializes the whole graph (sans derived indices) to a JSON snapshot.
    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        let path_str = path.as_ref().display().to_string();
        let file = std::fs::File::create(path.as_ref()).map_err(|source| GraphError::Io {
            path: path_str.clone(),
            source,
        })?;
        serde_json::to_writer(std::io::BufWriter::new(file), self).map_err(|source| {
            GraphError::BadSnapshot {
                path: path_str,
                source,
            }
        })
    }

    pub fn load_snapshot(path: impl AsRef<Path>) -> Result<ContextGraph, GraphError> {
        let path_str = path.as_ref().display().to_string();
        let file = std::fs::File::open(path.as_ref()).map_err(|source| GraphError::Io {
            path: path_str.clone(),
            source,
        })?;
        let mut graph: ContextGraph = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|source| GraphError::BadSnapshot {
                path: path_str,
                source,
            })?;
        let sets: BTreeMap<Split, HashSet<_>> = graph
            .splits
            .iter()
            .map(|(&split, idxs)| {
                (
                    split,
                    idxs.iter()
                        .map(|&i| {
                            let q = &graph.quads[i];
                            (q.h.clone(), q.r.clone(), q.t.clone())
                        })
                        .collect(),
                )
            })
            .collect();
        graph.split_sets = sets;
        if graph.frozen {
            graph.rebuild_indices();
        }
        Ok(graph)
    }
}
