//! Link-prediction pipeline: retrieve supporting triples and candidate
//! answers (embedding ranking plus LLM suggestions filtered to the top-δ),
//! compose the candidate set C, have the LLM re-rank C, and splice the
//! re-ranked block back onto the untouched remainder of the embedding
//! ranking.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ContextGraph, EntityId, GraphError, Quadruple, RelationId, Split};
use crate::ingest::relation_words;
use crate::kge::{EntityRanker, KgeError};
use crate::llm::{complete, render, ChatBackend, LlmError, ParsedValue, TemplateId};
use crate::ranked::RankedList;
use crate::textsim::TextScorer;

#[derive(Error, Debug)]
pub enum KgcError {
    #[error("re-ranked list is not a permutation of the candidate set C")]
    NotAPermutation,
    #[error(transparent)]
    Kge(#[from] KgeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Pipeline parameters: `k` supporting triples, top-`n` of the embedding
/// ranking enters C, LLM suggestions must sit within the top-`delta` and at
/// most `m_cap` survive, `gamma` supporting sentences per triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgcParams {
    pub k: usize,
    pub n: usize,
    pub delta: usize,
    pub gamma: usize,
    pub m_cap: usize,
    pub retries: usize,
}

impl Default for KgcParams {
    fn default() -> Self {
        KgcParams {
            k: 4,
            n: 20,
            delta: 50,
            gamma: 3,
            m_cap: 20,
            retries: 1,
        }
    }
}

/// A completion query in canonical tail-missing form. Head-missing queries
/// `(?, r, t)` are rewritten to `(t, r⁻¹, ?)` at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct KgcQuery {
    pub known: EntityId,
    pub relation: RelationId,
    pub ground_truth: Option<EntityId>,
}

impl KgcQuery {
    pub fn tail_missing(h: EntityId, r: RelationId, gt: Option<EntityId>) -> Self {
        KgcQuery {
            known: h,
            relation: r,
            ground_truth: gt,
        }
    }

    pub fn head_missing(r: RelationId, t: EntityId, gt: Option<EntityId>) -> Self {
        KgcQuery {
            known: t,
            relation: r.reverse(),
            ground_truth: gt,
        }
    }
}

/// The candidate universe the LLM re-ranks.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub a_kge: RankedList,
    pub a_llm: Vec<EntityId>,
    /// C: top-n of `a_kge` followed by the `a_llm` members not already
    /// inside, in `a_llm` order.
    pub composed: Vec<EntityId>,
    pub params: KgcParams,
}

/// Natural-language form of a query, e.g.
/// `Champaign is the adjoins of what location? The answer is `.
pub fn verbalize_question(graph: &ContextGraph, query: &KgcQuery) -> String {
    let raw = query.relation.raw();
    let segments: Vec<&str> = raw.split('/').filter(|s| !s.is_empty()).collect();
    let last = relation_words(segments.last().copied().unwrap_or(raw));
    let first = relation_words(segments.first().copied().unwrap_or(raw));
    format!(
        "{} is the {} of what {}? The answer is ",
        graph.label_of(&query.known),
        last,
        first
    )
}

fn entity_text(graph: &ContextGraph, e: &EntityId) -> String {
    match graph.description_of(e) {
        Some(d) => format!("{} {}", graph.label_of(e), d),
        None => graph.label_of(e),
    }
}

/// Up to `k` train triples supporting the query, never the query triple
/// itself. Tier 1: same known entity and relation. Tier 2: same relation,
/// ordered by text similarity of the triple's known-side entity to the
/// query's, ties broken lexicographically.
pub fn retrieve_supporting_triples(
    graph: &ContextGraph,
    query: &KgcQuery,
    k: usize,
    scorer: &dyn TextScorer,
) -> Result<Vec<Quadruple>, KgcError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    // All train triples with the query relation, in the reverse-closed view.
    let base = if query.relation.is_reversed() {
        query.relation.reverse()
    } else {
        query.relation.clone()
    };
    let mut pool: Vec<Quadruple> = graph
        .split_quads(Split::Train)
        .filter(|q| q.r == base)
        .map(|q| {
            if query.relation.is_reversed() {
                q.reversed()
            } else {
                q.clone()
            }
        })
        .collect();
    if let Some(gt) = &query.ground_truth {
        pool.retain(|q| !(q.h == query.known && q.t == *gt));
    }
    pool.sort_by(|a, b| (&a.h, &a.t).cmp(&(&b.h, &b.t)));

    let (tier1, tier2): (Vec<Quadruple>, Vec<Quadruple>) =
        pool.into_iter().partition(|q| q.h == query.known);
    let mut out = tier1;
    if out.len() < k && !tier2.is_empty() {
        let query_text = entity_text(graph, &query.known);
        let texts: Vec<String> = tier2.iter().map(|q| entity_text(graph, &q.h)).collect();
        let scores = scorer
            .score_batch(&query_text, &texts)
            .unwrap_or_else(|_| vec![0.0; texts.len()]);
        let mut order: Vec<usize> = (0..tier2.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        out.extend(order.into_iter().map(|i| tier2[i].clone()));
    }
    out.truncate(k);
    Ok(out)
}

/// The full embedding ranking A_KGE for the query.
pub fn retrieve_candidates_kge(
    ranker: &dyn EntityRanker,
    query: &KgcQuery,
) -> Result<RankedList, KgcError> {
    Ok(ranker.rank_all_tail(&query.known, &query.relation)?)
}

/// A_LLM: answers proposed by the LLM from the known entity's encyclopedia
/// paragraph, resolved to entities, deduplicated keeping the first mention,
/// restricted to the top-`delta` of A_KGE and capped at `m_cap`.
/// No paragraph, or LLM failure after retries, yields the empty list.
pub fn retrieve_candidates_text(
    graph: &ContextGraph,
    query: &KgcQuery,
    backend: &dyn ChatBackend,
    a_kge: &RankedList,
    params: &KgcParams,
) -> Result<Vec<EntityId>, KgcError> {
    let Some(paragraph) = graph
        .entity_context(&query.known)
        .and_then(|c| c.wiki_paragraph.clone())
    else {
        return Ok(Vec::new());
    };
    let mut slots = BTreeMap::new();
    slots.insert("context", paragraph);
    slots.insert("task", verbalize_question(graph, query));
    let bundle = render(TemplateId::ReasoningContextAware, &slots)?;
    let reply = match complete(backend, &bundle, params.retries) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("text retrieval failed for ({}, {}): {e}", query.known, query.relation);
            return Ok(Vec::new());
        }
    };
    let ParsedValue::Answers(answers) = reply.value else {
        return Ok(Vec::new());
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for surface in answers {
        let Some(e) = graph.resolve_entity(&surface) else {
            log::debug!("unresolvable answer {surface:?} dropped");
            continue;
        };
        if !seen.insert(e.clone()) {
            continue;
        }
        match a_kge.position(&e) {
            Some(pos) if pos <= params.delta => out.push(e),
            _ => {}
        }
        if out.len() == params.m_cap {
            break;
        }
    }
    Ok(out)
}

/// C = top-n of A_KGE ∪ A_LLM, duplicates removed keeping the earliest
/// position: members already inside the top-n keep their place, the rest
/// are appended in A_LLM order.
pub fn compose_candidates(
    a_kge: RankedList,
    a_llm: Vec<EntityId>,
    params: KgcParams,
) -> CandidateSet {
    let mut composed: Vec<EntityId> = a_kge.top(params.n).cloned().collect();
    let mut members: HashSet<EntityId> = composed.iter().cloned().collect();
    for e in &a_llm {
        if members.insert(e.clone()) {
            composed.push(e.clone());
        }
    }
    CandidateSet {
        a_kge,
        a_llm,
        composed,
        params,
    }
}

/// Builds the per-candidate context lines for the ranking prompt:
/// `label: description` or just the label.
fn candidate_context_lines(graph: &ContextGraph, candidates: &[EntityId]) -> String {
    candidates
        .iter()
        .map(|e| match graph.description_of(e) {
            Some(d) => format!("{}: {}", graph.label_of(e), d),
            None => graph.label_of(e),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// LLM re-ranking of C. The parsed reply is coerced into a permutation of
/// C: hallucinated items are dropped, missing items appended in prior C
/// order. LLM or parse failure after retries falls back to C unchanged.
pub fn rerank(
    graph: &ContextGraph,
    query: &KgcQuery,
    backend: &dyn ChatBackend,
    candidates: &CandidateSet,
) -> Result<Vec<EntityId>, KgcError> {
    let c = &candidates.composed;
    if c.len() <= 1 {
        return Ok(c.clone());
    }
    let labels: Vec<String> = c.iter().map(|e| graph.label_of(e)).collect();
    let mut by_label: HashMap<String, EntityId> = HashMap::new();
    for (e, label) in c.iter().zip(&labels) {
        by_label.entry(label.to_lowercase()).or_insert_with(|| e.clone());
    }

    let mut slots = BTreeMap::new();
    slots.insert("known_context", entity_text(graph, &query.known));
    slots.insert("task", verbalize_question(graph, query));
    slots.insert("candidates", labels.join(", "));
    slots.insert("candidate_contexts", candidate_context_lines(graph, c));
    let mut bundle = render(TemplateId::RankingContextAware, &slots)?;
    bundle.candidates = Some(labels.clone());

    let order = match complete(backend, &bundle, candidates.params.retries) {
        Ok(reply) => match reply.value {
            ParsedValue::FinalOrder(order) => order,
            _ => return Ok(c.clone()),
        },
        Err(e) => {
            log::warn!("re-ranking failed for ({}, {}): {e}; keeping C order", query.known, query.relation);
            return Ok(c.clone());
        }
    };

    let members: HashSet<&EntityId> = c.iter().collect();
    let mut placed: HashSet<EntityId> = HashSet::new();
    let mut a_rr: Vec<EntityId> = Vec::with_capacity(c.len());
    for item in order {
        let resolved = by_label
            .get(&item.to_lowercase())
            .cloned()
            .or_else(|| graph.resolve_entity(&item));
        match resolved {
            Some(e) if members.contains(&e) && placed.insert(e.clone()) => a_rr.push(e),
            _ => log::debug!("re-rank item {item:?} dropped (not in C)"),
        }
    }
    for e in c {
        if !placed.contains(e) {
            a_rr.push(e.clone());
        }
    }
    Ok(a_rr)
}

/// Final ranking over all entities: the re-ranked block A_RR followed by
/// A_KGE with C's members removed, original order preserved. Errors unless
/// `a_rr` is a permutation of C.
pub fn assemble_final(
    a_rr: &[EntityId],
    a_kge: &RankedList,
    composed: &[EntityId],
) -> Result<RankedList, KgcError> {
    let rr_set: HashSet<&EntityId> = a_rr.iter().collect();
    let c_set: HashSet<&EntityId> = composed.iter().collect();
    if a_rr.len() != composed.len() || rr_set != c_set {
        return Err(KgcError::NotAPermutation);
    }
    let mut ids: Vec<EntityId> = a_rr.to_vec();
    ids.extend(a_kge.ids().filter(|e| !c_set.contains(e)).cloned());
    Ok(RankedList::from_order(ids))
}

/// One query's worth of pipeline outputs.
#[derive(Debug, Clone)]
pub struct KgcOutcome {
    pub supporting: Vec<Quadruple>,
    pub candidates: CandidateSet,
    pub a_rr: Vec<EntityId>,
    pub final_list: RankedList,
}

/// Runs the whole retrieve → compose → re-rank → assemble flow for one query.
pub fn run_query(
    graph: &ContextGraph,
    ranker: &dyn EntityRanker,
    backend: &dyn ChatBackend,
    scorer: &dyn TextScorer,
    query: &KgcQuery,
    params: KgcParams,
) -> Result<KgcOutcome, KgcError> {
    let supporting = retrieve_supporting_triples(graph, query, params.k, scorer)?;
    let a_kge = retrieve_candidates_kge(ranker, query)?;
    let a_llm = retrieve_candidates_text(graph, query, backend, &a_kge, &params)?;
    let candidates = compose_candidates(a_kge, a_llm, params);
    let a_rr = rerank(graph, query, backend, &candidates)?;
    let final_list = assemble_final(&a_rr, &candidates.a_kge, &candidates.composed)?;
    Ok(KgcOutcome {
        supporting,
        candidates,
        a_rr,
        final_list,
    })
}

#[derive(Serialize)]
struct SftMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct SftRecord<'a> {
    messages: Vec<SftMessage<'a>>,
    assistant: String,
}

const SFT_SYSTEM: &str =
    "You sort candidate answers to a knowledge-graph completion question from most to least plausible.";

/// Builds a fine-tuning dataset from the validation split: each triple is
/// corrupted in both directions, the embedding model's top-n candidates are
/// collected with the ground truth inserted (deduplicated) and shuffled, and
/// the target restores the plausibility order with the ground truth first.
/// Same seed → byte-identical file. Returns the record count.
pub fn export_sft_dataset(
    graph: &ContextGraph,
    ranker: &dyn EntityRanker,
    n: usize,
    seed: u64,
    out_path: impl AsRef<Path>,
) -> Result<usize, KgcError> {
    let path_str = out_path.as_ref().display().to_string();
    let file = std::fs::File::create(out_path.as_ref()).map_err(|source| KgcError::Io {
        path: path_str.clone(),
        source,
    })?;
    let mut writer = std::io::BufWriter::new(file);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = 0usize;

    let valid: Vec<Quadruple> = graph.split_quads(Split::Valid).cloned().collect();
    for quad in &valid {
        let queries = [
            KgcQuery::tail_missing(quad.h.clone(), quad.r.clone(), Some(quad.t.clone())),
            KgcQuery::head_missing(quad.r.clone(), quad.t.clone(), Some(quad.h.clone())),
        ];
        for query in queries {
            let gt = query.ground_truth.clone().expect("built with ground truth");
            let a_kge = match ranker.rank_all_tail(&query.known, &query.relation) {
                Ok(list) => list,
                Err(e) => {
                    log::warn!("skipping validation query ({}, {}): {e}", query.known, query.relation);
                    continue;
                }
            };
            // Ground truth first, then the top-n candidates minus any
            // duplicate of it: this is the plausibility-ordered target.
            let mut target: Vec<EntityId> = vec![gt.clone()];
            target.extend(a_kge.top(n).filter(|e| **e != gt).cloned());
            let mut shuffled = target.clone();
            shuffled.shuffle(&mut rng);

            let labels: Vec<String> = shuffled.iter().map(|e| graph.label_of(e)).collect();
            let mut slots = BTreeMap::new();
            slots.insert("known_context", entity_text(graph, &query.known));
            slots.insert("task", verbalize_question(graph, &query));
            slots.insert("candidates", labels.join(", "));
            slots.insert("candidate_contexts", candidate_context_lines(graph, &shuffled));
            let bundle = render(TemplateId::RankingContextAware, &slots)?;

            let target_labels: Vec<String> =
                target.iter().map(|e| graph.label_of(e)).collect();
            let record = SftRecord {
                messages: vec![
                    SftMessage {
                        role: "system",
                        content: SFT_SYSTEM,
                    },
                    SftMessage {
                        role: "user",
                        content: &bundle.text,
                    },
                ],
                assistant: format!("The final order: [{}]", target_labels.join(", ")),
            };
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(writer, "{line}").map_err(|source| KgcError::Io {
                path: path_str.clone(),
                source,
            })?;
            count += 1;
        }
    }
    Ok(count)
}
