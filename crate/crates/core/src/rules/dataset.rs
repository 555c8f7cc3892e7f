//! Labeled evaluation records, one JSON object per line.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpectedAction {
    Allow,
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub prompt: String,
    pub expected_action: ExpectedAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intention_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotated_locations: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotated_behaviors: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset record {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
}

/// Parses either JSON Lines or a single top-level JSON array.
pub fn load_dataset_str(text: &str) -> Result<Vec<DatasetRecord>, DatasetError> {
    let records = if text.trim_start().starts_with('[') {
        serde_json::from_str::<Vec<DatasetRecord>>(text).map_err(|source| DatasetError::Parse {
            line: source.line(),
            source,
        })?
    } else {
        let mut out = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(line).map_err(|source| DatasetError::Parse {
                line: idx + 1,
                source,
            })?;
            out.push(record);
        }
        out
    };
    let mut ids = HashSet::new();
    for record in &records {
        if !ids.insert(record.id.as_str()) {
            return Err(DatasetError::DuplicateId(record.id.clone()));
        }
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, DatasetError> {
    load_dataset_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, action: &str) -> String {
        format!(r#"{{"id":"{id}","prompt":"p {id}","expected_action":"{action}"}}"#)
    }

    #[test]
    fn loads_all_records_in_order() {
        let text: Vec<String> = (1..=412)
            .map(|i| {
                line(
                    &format!("VALUE_{i:04}"),
                    if i % 3 == 0 { "allow" } else { "block" },
                )
            })
            .collect();
        let records = load_dataset_str(&text.join("\n")).unwrap();
        assert_eq!(records.len(), 412);
        assert_eq!(records[0].id, "VALUE_0001");
        assert_eq!(records[411].id, "VALUE_0412");
        assert_eq!(records[2].expected_action, ExpectedAction::Allow);
    }

    #[test]
    fn unknown_action_rejected() {
        let err = load_dataset_str(&line("A", "maybe")).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = format!("{}\n{}", line("A", "allow"), line("A", "block"));
        assert!(matches!(load_dataset_str(&text), Err(DatasetError::DuplicateId(id)) if id == "A"));
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert!(load_dataset_str("").unwrap().is_empty());
        assert!(load_dataset_str("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn optional_annotations_and_array_form() {
        let text = r#"[{"id":"VALUE_0001","prompt":"a party in a mosque","expected_action":"block",
            "difficulty":"easy_violations","intention_type":"direct","annotated_locations":["mosque"],
            "annotated_behaviors":["party"],"severity":"high"}]"#;
        let records = load_dataset_str(text).unwrap();
        assert_eq!(
            records[0].annotated_locations.as_deref(),
            Some(&["mosque".to_string()][..])
        );
        assert_eq!(records[0].difficulty.as_deref(), Some("easy_violations"));
    }
}
