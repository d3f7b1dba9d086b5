//! Fixed prompt templates and the knowledge-context renderer.
//!
//! Placeholders are `{name}`; only the names each renderer documents are
//! substituted, so literal braces such as `{query0}` or `Findings: {}`
//! pass through untouched. The image itself travels in the request's
//! image list; the `{question_image}` slot is rendered as [`IMAGE_TOKEN`].

use serde::{Deserialize, Serialize};

pub const IMAGE_TOKEN: &str = "<image>";

#[cfg(test)]
const CONTEXT_INSTRUCTION: &str = "Please answer the question based on the Retrieved Contents. It should be noted that the diagnostic information in the Reference Reports cannot be directly used as the basis for diagnosis, but should only be used for reference and comparison.";

pub const VQA_TEMPLATE: &str = "{question_image}

Retrieved Contents:
{text_doc}

Reference Reports:
{mm_doc}

{question_text}
Please answer the question based on the Retrieved Contents. It should be noted that the diagnostic information in the Reference Reports cannot be directly used as the basis for diagnosis, but should only be used for reference and comparison.

Answer with the option's letter from the given choices directly.";

pub const REPORT_TEMPLATE: &str = "{question_image}

Retrieved Contents:
{text_doc}

Reference Reports:
{mm_doc}


Please answer the question based on the Retrieved Contents. It should be noted that the diagnostic information in the Reference Reports cannot be directly used as the basis for diagnosis, but should only be used for reference and comparison.

{report_instruction}";

pub const RADIOLOGY_REPORT_INSTRUCTION: &str = "You are a helpful assistant. Please generate a report for the given image, including both findings and impressions. Return the report in the following format: Findings: {} Impression: {}.";

pub const OPHTHALMOLOGY_REPORT_INSTRUCTION: &str = "You are a helpful assistant. Please generate a short report for the given image in 100 words. Please only include the content of the report in your response.";

#[cfg(test)]
const CORPUS_DESCRIPTION: &str = "# Corpus Description
research: The corpus provides access to advanced biomedical research, facilitating access to specialized knowledge and resources.
wiki: The corpus provides access to general knowledge across a wide range of topics.
book: The corpus provides access to medical knowledge resource including various educational resources and textbooks.
guideline: The corpus provides access to clinical guidelines from leading health organizations.
graph: The corpus provides a structured knowledge graph that connects medical definitions and related terms.";

pub const EXPLORATION_TEMPLATE: &str = "{question_image}

# Question (based on the image)
{question_text}

# Corpus Description
research: The corpus provides access to advanced biomedical research, facilitating access to specialized knowledge and resources.
wiki: The corpus provides access to general knowledge across a wide range of topics.
book: The corpus provides access to medical knowledge resource including various educational resources and textbooks.
guideline: The corpus provides access to clinical guidelines from leading health organizations.
graph: The corpus provides a structured knowledge graph that connects medical definitions and related terms.

# Query Format
<research>{query0} ; {query1} ; ... (Use ; to separate the queries)</research>
<wiki>{query0} ; {query1} ; ... (Use ; to separate the queries)</wiki>
<book>{query0} ; {query1} ; ... (Use ; to separate the queries)</book>
<guideline>{query0} ; {query1} ; ... (Use ; to separate the queries)</guideline>
<graph>{query_term0} , {query_relation0} ; {query_term1} , {query_relation1} ; ... (Use ; to separate the queries. Each query should use , to separate the {query_term} and {query_relation})</graph>

To answer the question labeled as # Question, please construct appropriate queries to get the information you need.
1. Each corpus in # Corpus Description must have search queries constructed.
2. Please give the search queries following the format in # Query Format. Each corpus should have 6 queries, separated by ';'.
3. The queries generated for each corpus should exhibit diversity and be closely aligned with the specific information needs and characteristics of that corpus.";

pub const JUDGE_TEMPLATE: &str = "{question_image}

# Question (based on the image)
{question_text}

# Gold Answer
{gold}

# Documents
{documents}

You are a professional medical expert. Please judge whether the information in the # Documents supports the # Gold Answer as a response to the # Question. Please judge whether # Documents supports the # Gold Answer in response to the # Question, rather than evaluating if the # Question's answer is the # Gold Answer. Please first think step-by-step and then show your judgement using the format <answer>yes/no</answer> at the end of your response. Please keep your entire response simple and complete, up to 100 words.";

pub const QUERY_GENERATION_TEMPLATE: &str = "{question_image}

# Question (based on the image)
{question_text}

# Corpus Description
research: The corpus provides access to advanced biomedical research, facilitating access to specialized knowledge and resources.
wiki: The corpus provides access to general knowledge across a wide range of topics.
book: The corpus provides access to medical knowledge resource including various educational resources and textbooks.
guideline: The corpus provides access to clinical guidelines from leading health organizations.
graph: The corpus provides a structured knowledge graph that connects medical definitions and related terms.

# Query Format
<research>{query}</research>
<wiki>{query}</wiki>
<book>{query}</book>
<guideline>{query}</guideline>
<graph>{query_term} , {query_relation} (Each query should use , to separate the {query_term} and {query_relation})</graph>

To answer the question labeled as # Question, please construct appropriate queries to get the information you need.
1. Please give the search queries following the format in # Query Format. For each corpus, if you think no information retrieval is needed, simply output an empty tag for that corpus, for example: <book></book>.
2. The queries generated for each corpus should be closely aligned with the specific information needs and characteristics of that corpus.";

/// Which answer template a sample is rendered with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTask {
    Vqa,
    ReportRad,
    ReportOph,
}

/// A retrieved text passage and the corpus it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDocument {
    pub provenance: String,
    pub text: String,
}

/// Retrieved knowledge attached to one sample: report texts and documents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBundle {
    #[serde(default)]
    pub reports: Vec<String>,
    #[serde(default)]
    pub documents: Vec<ContextDocument>,
}

impl KnowledgeBundle {
    pub fn without_reports(&self) -> Self {
        Self { reports: Vec::new(), documents: self.documents.clone() }
    }

    pub fn without_documents(&self) -> Self {
        Self { reports: self.reports.clone(), documents: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty() && self.documents.is_empty()
    }
}

/// Replaces `{name}` for each listed name in a single left-to-right pass;
/// substituted values are never rescanned.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = values.iter().find(|(name, _)| {
            tail.len() > name.len() + 1
                && tail[1..].starts_with(name)
                && tail[1 + name.len()..].starts_with('}')
        });
        match hit {
            Some((name, value)) => {
                out.push_str(value);
                rest = &tail[name.len() + 2..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// One line per document: `Document {n} [{provenance}]: {text}`, 1-based.
pub fn format_documents(documents: &[ContextDocument]) -> String {
    documents
        .iter()
        .enumerate()
        .map(|(i, d)| format!("Document {} [{}]: {}", i + 1, d.provenance, single_line(&d.text)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One line per report: `Report {n}: {text}`, 1-based.
pub fn format_reports(reports: &[String]) -> String {
    reports
        .iter()
        .enumerate()
        .map(|(i, r)| format!("Report {}: {}", i + 1, single_line(r)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn render_context_prompt(question: &str, knowledge: &KnowledgeBundle, task: PromptTask) -> String {
    let text_doc = format_documents(&knowledge.documents);
    let mm_doc = format_reports(&knowledge.reports);
    let mut values = vec![
        ("question_image", IMAGE_TOKEN),
        ("text_doc", text_doc.as_str()),
        ("mm_doc", mm_doc.as_str()),
    ];
    match task {
        PromptTask::Vqa => {
            values.push(("question_text", question));
            fill(VQA_TEMPLATE, &values)
        }
        PromptTask::ReportRad => {
            values.push(("report_instruction", RADIOLOGY_REPORT_INSTRUCTION));
            fill(REPORT_TEMPLATE, &values)
        }
        PromptTask::ReportOph => {
            values.push(("report_instruction", OPHTHALMOLOGY_REPORT_INSTRUCTION));
            fill(REPORT_TEMPLATE, &values)
        }
    }
}

pub fn render_exploration_prompt(question: &str) -> String {
    fill(EXPLORATION_TEMPLATE, &[("question_image", IMAGE_TOKEN), ("question_text", question)])
}

pub fn render_judge_prompt(question: &str, gold: &str, documents: &[ContextDocument]) -> String {
    let docs = format_documents(documents);
    fill(
        JUDGE_TEMPLATE,
        &[
            ("question_image", IMAGE_TOKEN),
            ("question_text", question),
            ("gold", gold),
            ("documents", docs.as_str()),
        ],
    )
}

pub fn render_query_generation_prompt(question: &str) -> String {
    fill(QUERY_GENERATION_TEMPLATE, &[("question_image", IMAGE_TOKEN), ("question_text", question)])
}
