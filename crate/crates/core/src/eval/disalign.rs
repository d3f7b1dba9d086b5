use serde::{Deserialize, Serialize};

use super::EvalError;

/// Correctness of one sample under each context. Fields are optional on
/// input so that gaps are reported instead of defaulted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRow {
    pub sample_id: String,
    pub original: Option<bool>,
    pub irrelevant: Option<bool>,
    pub no_retrieval: Option<bool>,
    pub with_report_only: Option<bool>,
    pub with_doc_only: Option<bool>,
    pub with_both: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Disalignment {
    pub md: Option<f64>,
    pub kud: Option<f64>,
    pub kid: Option<f64>,
}

struct Complete {
    original: bool,
    irrelevant: bool,
    no_retrieval: bool,
    retrieval: [bool; 3],
}

fn complete(row: &RunRow) -> Result<Complete, EvalError> {
    let get = |v: Option<bool>, name: &str| {
        v.ok_or_else(|| EvalError::Input(format!("sample '{}' lacks '{name}'", row.sample_id)))
    };
    Ok(Complete {
        original: get(row.original, "original")?,
        irrelevant: get(row.irrelevant, "irrelevant")?,
        no_retrieval: get(row.no_retrieval, "no_retrieval")?,
        retrieval: [
            get(row.with_report_only, "with_report_only")?,
            get(row.with_doc_only, "with_doc_only")?,
            get(row.with_both, "with_both")?,
        ],
    })
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// MD: correct with the irrelevant image among those correct with the
/// original. KUD: correct under any retrieval context among those wrong
/// without retrieval. KID: wrong under any retrieval context among those
/// correct without retrieval.
pub fn disalignment_metrics(rows: &[RunRow]) -> Result<Disalignment, EvalError> {
    let rows: Vec<Complete> = rows.iter().map(complete).collect::<Result<_, _>>()?;
    let md_den = rows.iter().filter(|r| r.original).count();
    let md_num = rows.iter().filter(|r| r.original && r.irrelevant).count();
    let kud_den = rows.iter().filter(|r| !r.no_retrieval).count();
    let kud_num = rows.iter().filter(|r| !r.no_retrieval && r.retrieval.iter().any(|&c| c)).count();
    let kid_den = rows.iter().filter(|r| r.no_retrieval).count();
    let kid_num = rows.iter().filter(|r| r.no_retrieval && r.retrieval.iter().any(|&c| !c)).count();
    Ok(Disalignment {
        md: ratio(md_num, md_den),
        kud: ratio(kud_num, kud_den),
        kid: ratio(kid_num, kid_den),
    })
}
