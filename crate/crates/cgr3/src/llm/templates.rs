//! Prompt templates. The completion-task templates (retrieval demos,
//! reasoning with and without entity context, candidate re-ranking) are
//! fixed text with named substitution slots; rendered output is checked
//! byte-for-byte against golden files in the test suite, including the
//! literal reply prefixes `The possible answers:` and `The final order:`.

use std::collections::BTreeMap;

use super::{LlmError, ParseKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateId {
    /// Supporting-triple demonstration prompt (candidates + contexts).
    Retrieval,
    /// Answer generation from the known entity's encyclopedia paragraph.
    ReasoningContextAware,
    /// Answer generation from the model's own knowledge only.
    ReasoningContextFree,
    /// Candidate re-ranking with per-candidate descriptions.
    RankingContextAware,
    /// Candidate re-ranking without descriptions.
    RankingContextFree,
    /// KGQA: pick question-relevant exploration queries.
    QaQuerySelection,
    /// KGQA: pick candidate triples worth keeping.
    QaTripleSelection,
    /// KGQA: sufficiency verdict plus answers.
    QaSufficiency,
    /// KGQA: forced answer at depth exhaustion.
    QaForcedAnswer,
    /// KGQA: topic-entity mention extraction.
    QaTopicEntities,
}

const RETRIEVAL: &str = "## KG Triplet for completion: {triplet}\n\n## Task for completion: \"{task}\"\n\n## Task demonstrations:\n\n{demos}\n\n## Candidate entities: [{candidates}]\n\n## Candidate Answers with Contextual Retrieval:\n{candidate_contexts}";

const REASONING_CONTEXT_AWARE: &str = "Here are some materials for you to refer to. {context}\n\n{task} Output all the possible answers you can find in the materials using the format '[answer1, answer2, ..., answerN]' and please start your response with 'The possible answers:'. Do not output anything except the possible answers. If you cannot find any answer, please output some possible answers based on your own knowledge.";

const REASONING_CONTEXT_FREE: &str = "{task} Output all some possible answers based on your own knowledge, using the format '[answer1, answer2, ..., answerN]' and please start your response with 'The possible answers:'. Do not output anything except the possible answers.";

const RANKING_CONTEXT_AWARE: &str = "{known_context}\n{task} The list of candidate answers is [{candidates}].\n{candidate_contexts}\nSort the list to let the candidate answers which are more possible to be the true answer to the question prior. Output the sorted order of candidate answers using the format '[most possible answer, second possible answer, ..., least possible answer]' and please start your response with 'The final order:'.";

const RANKING_CONTEXT_FREE: &str = "{task} The list of candidate answers is [{candidates}].\nSort the list to let the candidate answers which are more possible to be the true answer to the question prior. Output the sorted order of candidate answers using the format '[most possible answer, second possible answer, ..., least possible answer]' and please start your response with 'The final order:'.";

const QA_QUERY_SELECTION: &str = "You are exploring a knowledge graph to answer a question.\nQuestion: {question}\nCurrent reasoning path: {path}\nCandidate queries:\n{queries}\nSelect the {m} queries most relevant to the question. Output the numbers of the selected queries using the format '[number1, number2, ...]' and please start your response with 'The selection:'.";

const QA_TRIPLE_SELECTION: &str = "You are selecting knowledge-graph triples that help answer a question.\nQuestion: {question}\nCandidate triples with supporting sentences:\n{triples}\nSelect the {m} triples most likely to contribute to a correct answer. Output the numbers of the selected triples using the format '[number1, number2, ...]' and please start your response with 'The selection:'.";

const QA_SUFFICIENCY: &str = "{shots}Determine whether the retrieved information is sufficient to answer the question.\nQuestion: {question}\nReasoning paths:\n{paths}\nContext sentences:\n{contexts}\nIf the information is sufficient, reply with 'Sufficient: yes' on the first line followed by 'The possible answers: [answer1, answer2, ..., answerN]'. Otherwise reply with 'Sufficient: no'.";

const QA_FORCED_ANSWER: &str = "Answer the question using the retrieved knowledge below and your own knowledge.\nQuestion: {question}\nReasoning paths:\n{paths}\nContext sentences:\n{contexts}\nOutput all the possible answers using the format '[answer1, answer2, ..., answerN]' and please start your response with 'The possible answers:'.";

const QA_TOPIC_ENTITIES: &str = "Identify the entities mentioned in the question.\nQuestion: {question}\nOutput up to {k} entity mentions using the format '[mention1, mention2, ...]' and please start your response with 'The possible answers:'.";

impl TemplateId {
    fn text(self) -> &'static str {
        match self {
            TemplateId::Retrieval => RETRIEVAL,
            TemplateId::ReasoningContextAware => REASONING_CONTEXT_AWARE,
            TemplateId::ReasoningContextFree => REASONING_CONTEXT_FREE,
            TemplateId::RankingContextAware => RANKING_CONTEXT_AWARE,
            TemplateId::RankingContextFree => RANKING_CONTEXT_FREE,
            TemplateId::QaQuerySelection => QA_QUERY_SELECTION,
            TemplateId::QaTripleSelection => QA_TRIPLE_SELECTION,
            TemplateId::QaSufficiency => QA_SUFFICIENCY,
            TemplateId::QaForcedAnswer => QA_FORCED_ANSWER,
            TemplateId::QaTopicEntities => QA_TOPIC_ENTITIES,
        }
    }

    fn expected(self) -> ParseKind {
        match self {
            TemplateId::Retrieval
            | TemplateId::ReasoningContextAware
            | TemplateId::ReasoningContextFree
            | TemplateId::QaForcedAnswer
            | TemplateId::QaTopicEntities => ParseKind::Answers,
            TemplateId::RankingContextAware | TemplateId::RankingContextFree => {
                ParseKind::FinalOrder
            }
            TemplateId::QaQuerySelection | TemplateId::QaTripleSelection => ParseKind::Selection,
            TemplateId::QaSufficiency => ParseKind::Sufficiency,
        }
    }
}

/// A rendered prompt plus everything needed to interpret its reply.
#[derive(Debug, Clone)]
pub struct PromptBundle {
    pub template: TemplateId,
    pub text: String,
    pub expected: ParseKind,
    /// Context snippets that were substituted in, for run manifests.
    pub provenance: Vec<String>,
    /// Candidate vocabulary for longest-match-first reply parsing; set by
    /// callers whose candidate labels may contain commas.
    pub candidates: Option<Vec<String>>,
}

/// Fills a template's `{slot}` placeholders from `slots`.
/// Text outside substitution slots is reproduced byte-for-byte.
pub fn render(template: TemplateId, slots: &BTreeMap<&str, String>) -> Result<PromptBundle, LlmError> {
    let mut out = String::new();
    let text = template.text();
    let mut rest = text;
    let mut provenance = Vec::new();
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after
            .find('}')
            .ok_or_else(|| LlmError::MissingSlot("unterminated placeholder".into()))?;
        let name = &after[..end];
        let value = slots
            .get(name)
            .ok_or_else(|| LlmError::MissingSlot(name.to_string()))?;
        if matches!(
            name,
            "context" | "candidate_contexts" | "known_context" | "contexts"
        ) && !value.is_empty()
        {
            provenance.push(value.clone());
        }
        out.push_str(value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(PromptBundle {
        template,
        text: out,
        expected: template.expected(),
        provenance,
        candidates: None,
    })
}
