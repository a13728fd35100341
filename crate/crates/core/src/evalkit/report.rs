use std::collections::BTreeMap;

use serde_json::json;

use super::MetricReport;
use crate::error::Result;

/// `metric,qid,value` rows, metrics in the given order, qids sorted.
pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut s = String::from("metric,qid,value\n");
    for r in reports {
        for (q, v) in &r.per_qid {
            s.push_str(&format!("{},{},{}\n", r.name, q, v));
        }
    }
    s
}

/// `{metric: {mean, evaluated, excluded}}`, pretty-printed.
pub fn reports_to_json(reports: &[MetricReport]) -> Result<String> {
    let summary: BTreeMap<&str, serde_json::Value> = reports
        .iter()
        .map(|r| {
            (
                r.name.as_str(),
                json!({"mean": r.mean, "evaluated": r.evaluated, "excluded": r.excluded}),
            )
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&summary)?;
    s.push('\n');
    Ok(s)
}
