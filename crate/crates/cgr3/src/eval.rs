//! Evaluation: filtered ranking metrics (MRR, Hits@k) for link prediction,
//! exact-match accuracy for question answering, and long-tail bucketing by
//! the known entity's train degree.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{normalize_surface, ContextGraph, EntityId, RelationId, Split};
use crate::ranked::RankedList;

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("ground truth {gt} missing from the ranked list for ({known}, {relation}, ?)")]
    GroundTruthMissing {
        known: String,
        relation: String,
        gt: String,
    },
    #[error("no ranks to aggregate")]
    EmptyRanks,
}

/// Map from a canonical tail-missing query `(known, relation)` to every
/// valid answer across train ∪ valid ∪ test. Head-direction facts enter
/// under the reversed relation, so one index serves both directions.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    valid: HashMap<(EntityId, RelationId), HashSet<EntityId>>,
}

impl FilterIndex {
    pub fn from_graph(graph: &ContextGraph) -> Self {
        let mut valid: HashMap<(EntityId, RelationId), HashSet<EntityId>> = HashMap::new();
        for split in Split::ALL {
            for q in graph.split_quads(split) {
                valid
                    .entry((q.h.clone(), q.r.clone()))
                    .or_default()
                    .insert(q.t.clone());
                valid
                    .entry((q.t.clone(), q.r.reverse()))
                    .or_default()
                    .insert(q.h.clone());
            }
        }
        FilterIndex { valid }
    }

    pub fn valid_answers(&self, known: &EntityId, relation: &RelationId) -> Option<&HashSet<EntityId>> {
        self.valid.get(&(known.clone(), relation.clone()))
    }
}

/// 1-based rank of the ground truth after deleting every *other* valid
/// answer from the list (the filtered setting).
pub fn filtered_rank(
    list: &RankedList,
    known: &EntityId,
    relation: &RelationId,
    gt: &EntityId,
    filter: &FilterIndex,
) -> Result<usize, EvalError> {
    let others = filter.valid_answers(known, relation);
    let mut rank = 0usize;
    for (e, _) in list.entries() {
        if e == gt {
            return Ok(rank + 1);
        }
        let is_other_valid = others.map_or(false, |set| set.contains(e));
        if !is_other_valid {
            rank += 1;
        }
    }
    Err(EvalError::GroundTruthMissing {
        known: known.to_string(),
        relation: relation.to_string(),
        gt: gt.to_string(),
    })
}

/// One evaluated query: its filtered rank and the train degree of the known
/// entity (for long-tail bucketing).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryRank {
    pub rank: usize,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeBucket {
    /// Inclusive lower edge in log10(degree + 1).
    pub lo: f64,
    /// Upper edge in log10(degree + 1).
    pub hi: f64,
    pub count: usize,
    pub hits1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub ranks: Vec<QueryRank>,
    pub buckets: Vec<DegreeBucket>,
}

const NUM_BUCKETS: usize = 5;

/// Aggregates per-query filtered ranks into MRR, Hits@{1,3,10}, and five
/// equal-width buckets of log10(degree + 1) with per-bucket Hits@1.
pub fn aggregate(ranks: &[QueryRank]) -> Result<MetricReport, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyRanks);
    }
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|q| 1.0 / q.rank as f64).sum::<f64>() / n;
    let mut hits = BTreeMap::new();
    for k in [1usize, 3, 10] {
        let frac = ranks.iter().filter(|q| q.rank <= k).count() as f64 / n;
        hits.insert(k, frac);
    }

    let logdeg: Vec<f64> = ranks
        .iter()
        .map(|q| ((q.degree + 1) as f64).log10())
        .collect();
    let lo = logdeg.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = logdeg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / NUM_BUCKETS as f64 } else { 1.0 };
    let mut counts = [0usize; NUM_BUCKETS];
    let mut hit1 = [0usize; NUM_BUCKETS];
    for (q, &x) in ranks.iter().zip(&logdeg) {
        let b = (((x - lo) / width) as usize).min(NUM_BUCKETS - 1);
        counts[b] += 1;
        if q.rank == 1 {
            hit1[b] += 1;
        }
    }
    let buckets = (0..NUM_BUCKETS)
        .map(|b| DegreeBucket {
            lo: lo + b as f64 * width,
            hi: lo + (b + 1) as f64 * width,
            count: counts[b],
            hits1: if counts[b] == 0 {
                0.0
            } else {
                hit1[b] as f64 / counts[b] as f64
            },
        })
        .collect();

    Ok(MetricReport {
        mrr,
        hits,
        ranks: ranks.to_vec(),
        buckets,
    })
}

/// Exact-match accuracy for one question: 1 iff any predicted answer equals
/// any gold answer after case folding and whitespace collapsing; with a
/// graph supplied, surface forms that resolve to the same entity also match.
pub fn exact_match(predicted: &[String], gold: &[String], graph: Option<&ContextGraph>) -> u8 {
    let gold_norm: HashSet<String> = gold.iter().map(|g| normalize_surface(g)).collect();
    let gold_entities: HashSet<EntityId> = match graph {
        Some(g) => gold.iter().filter_map(|s| g.resolve_entity(s)).collect(),
        None => HashSet::new(),
    };
    for p in predicted {
        if gold_norm.contains(&normalize_surface(p)) {
            return 1;
        }
        if let Some(g) = graph {
            if let Some(e) = g.resolve_entity(p) {
                if gold_entities.contains(&e) {
                    return 1;
                }
            }
        }
    }
    0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EntityContext;

    fn e(s: &str) -> EntityId {
        EntityId::new(s).unwrap()
    }

    fn r(s: &str) -> RelationId {
        RelationId::new(s).unwrap()
    }

    fn list(ids: &[&str]) -> RankedList {
        RankedList::from_order(ids.iter().map(|s| e(s)).collect())
    }

    fn graph_with(triples: &[(&str, &str, &str, Split)]) -> ContextGraph {
        let mut g = ContextGraph::new();
        for (h, rel, t, split) in triples {
            g.add_triple(e(h), r(rel), e(t), *split).unwrap();
        }
        g.freeze();
        g
    }

    #[test]
    fn other_valid_answers_are_deleted_before_ranking() {
        // x is another valid tail for (a, r, ?); gt sits behind it.
        let g = graph_with(&[
            ("a", "r", "x", Split::Train),
            ("a", "r", "gt", Split::Test),
        ]);
        let filter = FilterIndex::from_graph(&g);
        let rank = filtered_rank(&list(&["x", "gt", "y"]), &e("a"), &r("r"), &e("gt"), &filter).unwrap();
        assert_eq!(rank, 1);
    }

    #[test]
    fn empty_filter_keeps_raw_position() {
        let g = graph_with(&[("a", "r", "gt", Split::Test)]);
        let filter = FilterIndex::from_graph(&g);
        let rank = filtered_rank(&list(&["p", "q", "gt"]), &e("a"), &r("r"), &e("gt"), &filter).unwrap();
        assert_eq!(rank, 3);
    }

    #[test]
    fn gt_at_front_is_rank_one_regardless() {
        let g = graph_with(&[
            ("a", "r", "gt", Split::Test),
            ("a", "r", "x", Split::Train),
        ]);
        let filter = FilterIndex::from_graph(&g);
        let rank = filtered_rank(&list(&["gt", "x"]), &e("a"), &r("r"), &e("gt"), &filter).unwrap();
        assert_eq!(rank, 1);
    }

    #[test]
    fn head_queries_filter_through_the_reversed_relation() {
        // (other, r, t) and (gt, r, t): querying (?, r, t) as (t, r⁻¹, ?)
        // must delete `other` from the list.
        let g = graph_with(&[
            ("other", "r", "t", Split::Train),
            ("gt", "r", "t", Split::Test),
        ]);
        let filter = FilterIndex::from_graph(&g);
        let rank = filtered_rank(
            &list(&["other", "gt"]),
            &e("t"),
            &r("r").reverse(),
            &e("gt"),
            &filter,
        )
        .unwrap();
        assert_eq!(rank, 1);
    }

    #[test]
    fn missing_ground_truth_is_an_error() {
        let g = graph_with(&[("a", "r", "gt", Split::Test)]);
        let filter = FilterIndex::from_graph(&g);
        assert!(filtered_rank(&list(&["p", "q"]), &e("a"), &r("r"), &e("gt"), &filter).is_err());
    }

    #[test]
    fn filtering_never_increases_rank_brute_force() {
        // Oracle: filtered rank computed by rescanning and counting.
        let g = graph_with(&[
            ("a", "r", "v1", Split::Train),
            ("a", "r", "v2", Split::Valid),
            ("a", "r", "gt", Split::Test),
        ]);
        let filter = FilterIndex::from_graph(&g);
        let ranking = list(&["v1", "z", "v2", "gt", "w"]);
        let raw = ranking.position(&e("gt")).unwrap();
        let filtered =
            filtered_rank(&ranking, &e("a"), &r("r"), &e("gt"), &filter).unwrap();
        // oracle: positions before gt that are not other valid answers
        let oracle = 1 + ["z"].len(); // v1 and v2 deleted, z survives
        assert_eq!(filtered, oracle);
        assert!(filtered <= raw);
    }

    #[test]
    fn aggregate_matches_hand_arithmetic() {
        let ranks: Vec<QueryRank> = [1usize, 2, 4]
            .iter()
            .map(|&rank| QueryRank { rank, degree: 1 })
            .collect();
        let report = aggregate(&ranks).unwrap();
        assert!((report.mrr - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-12);
        assert!((report.hits[&1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((report.hits[&3] - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.hits[&10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_boundary_reports() {
        let perfect = aggregate(&[QueryRank { rank: 1, degree: 0 }; 4]).unwrap();
        assert_eq!(perfect.mrr, 1.0);
        assert_eq!(perfect.hits[&10], 1.0);
        let miss = aggregate(&[QueryRank { rank: 11, degree: 0 }]).unwrap();
        assert_eq!(miss.hits[&10], 0.0);
    }

    #[test]
    fn hits_are_monotone_and_bounded() {
        let ranks: Vec<QueryRank> = (1..30)
            .map(|i| QueryRank {
                rank: i,
                degree: i * 7 % 40,
            })
            .collect();
        let report = aggregate(&ranks).unwrap();
        assert!(report.hits[&1] <= report.hits[&3]);
        assert!(report.hits[&3] <= report.hits[&10]);
        assert!(report.mrr >= report.hits[&1]);
        assert!(report.mrr <= 1.0);
        assert_eq!(report.buckets.len(), 5);
        assert_eq!(report.buckets.iter().map(|b| b.count).sum::<usize>(), ranks.len());
    }

    #[test]
    fn bucket_edges_are_equal_width_in_log_space() {
        let ranks: Vec<QueryRank> = [0usize, 9, 99, 999]
            .iter()
            .map(|&degree| QueryRank { rank: 1, degree })
            .collect();
        let report = aggregate(&ranks).unwrap();
        let w0 = report.buckets[0].hi - report.buckets[0].lo;
        for b in &report.buckets {
            assert!((b.hi - b.lo - w0).abs() < 1e-12);
        }
        // log10(0+1)=0 .. log10(999+1)=3, so each bucket spans 0.6
        assert!((w0 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn exact_match_case_folds_and_uses_aliases() {
        assert_eq!(exact_match(&["urbana".into()], &["Urbana".into()], None), 1);
        assert_eq!(exact_match(&["x".into()], &["y".into()], None), 0);

        let mut g = graph_with(&[("ist", "r", "x", Split::Train)]);
        g.set_entity_context(
            &e("ist"),
            EntityContext {
                label: "Istanbul".into(),
                aliases: vec!["Constantinople".into()],
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(
            exact_match(&["Constantinople".into()], &["Istanbul".into()], Some(&g)),
            1
        );
    }
}
