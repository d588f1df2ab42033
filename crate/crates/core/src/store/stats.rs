use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calls::extract_tool_calls;
use crate::model::{DataPoint, DomainTag, FileKind};

/// Domain histogram bucket for records without a tag.
pub const UNTAGGED: &str = "untagged";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub datapoints: usize,
    pub files: usize,
    pub tool_calls: usize,
}

/// Dataset composition. Every histogram's counts sum to the matching total:
/// file kinds to `files`, tools to `tool_calls`, steps and domains to
/// `datapoints`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub totals: Totals,
    pub file_kinds: BTreeMap<String, usize>,
    pub tools: BTreeMap<String, usize>,
    pub steps: BTreeMap<usize, usize>,
    pub domains: BTreeMap<String, usize>,
}

impl StatsReport {
    /// `(name, csv)` per histogram, ready for plotting.
    pub fn csv_tables(&self) -> Vec<(&'static str, String)> {
        vec![
            ("file_kinds", histogram_csv(&self.file_kinds)),
            ("tools", histogram_csv(&self.tools)),
            ("steps", histogram_csv(&self.steps)),
            ("domains", histogram_csv(&self.domains)),
        ]
    }
}

pub fn histogram_csv<K: std::fmt::Display>(hist: &BTreeMap<K, usize>) -> String {
    let mut out = String::from("key,count\n");
    for (k, v) in hist {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

/// Histograms over `dataset`. Tool usage counts every call site of a
/// registered tool across all step codes.
pub fn stats<S: AsRef<str>>(dataset: &[DataPoint], registry: &[S]) -> StatsReport {
    let mut r = StatsReport::default();
    for kind in FileKind::ALL {
        r.file_kinds.insert(kind.to_string(), 0);
    }
    for name in registry {
        r.tools.insert(name.as_ref().to_owned(), 0);
    }
    for tag in DomainTag::ALL {
        r.domains.insert(tag.to_string(), 0);
    }
    r.domains.insert(UNTAGGED.into(), 0);

    for dp in dataset {
        r.totals.datapoints += 1;
        for f in &dp.task.files {
            r.totals.files += 1;
            *r.file_kinds.entry(f.kind.to_string()).or_default() += 1;
        }
        for step in &dp.trajectory.steps {
            for tool in extract_tool_calls(&step.code, registry) {
                r.totals.tool_calls += 1;
                *r.tools.entry(tool).or_default() += 1;
            }
        }
        *r.steps.entry(dp.trajectory.steps.len()).or_default() += 1;
        let tag = dp.task.domain_tag.map_or(UNTAGGED.to_owned(), |t| t.to_string());
        *r.domains.entry(tag).or_default() += 1;
    }
    r
}
