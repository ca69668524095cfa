use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Nominal,
    Ordinal,
    Label,
    Drop,
}

impl ColumnKind {
    pub fn is_feature(self) -> bool {
        matches!(self, ColumnKind::Numeric | ColumnKind::Nominal | ColumnKind::Ordinal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal_order: Option<Vec<String>>,
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        ColumnSchema { name: name.into(), kind, ordinal_order: None }
    }

    pub fn ordinal(name: impl Into<String>, order: &[&str]) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Ordinal,
            ordinal_order: Some(order.iter().map(|s| s.to_string()).collect()),
        }
    }
}

/// Column layout of an input CSV plus how raw label strings become classes.
///
/// `label_map` rewrites raw label values (e.g. NSL-KDD attack names to attack
/// families); values absent from the map fall back to `label_default` when it
/// is set, and pass through unchanged otherwise. `classes`, when given, fixes
/// the class order; otherwise classes are the sorted distinct mapped labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSchema>,
    #[serde(default = "default_true")]
    pub header: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub label_map: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_default: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

fn default_true() -> bool {
    true
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Self {
        Schema {
            columns,
            header: true,
            label_map: BTreeMap::new(),
            label_default: None,
            classes: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&text)
            .map_err(|e| Error::Json { path: path.to_path_buf(), message: e.to_string() })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for col in &self.columns {
            if !names.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", col.name)));
            }
            match (&col.kind, &col.ordinal_order) {
                (ColumnKind::Ordinal, None) => {
                    return Err(Error::Schema(format!(
                        "ordinal column `{}` needs an ordinal_order",
                        col.name
                    )))
                }
                (ColumnKind::Ordinal, Some(order)) => {
                    let distinct: HashSet<_> = order.iter().collect();
                    if distinct.len() != order.len() {
                        return Err(Error::Schema(format!(
                            "ordinal_order of `{}` has duplicates",
                            col.name
                        )));
                    }
                    if order.is_empty() {
                        return Err(Error::Schema(format!("ordinal_order of `{}` is empty", col.name)));
                    }
                }
                (_, Some(_)) => {
                    return Err(Error::Schema(format!(
                        "column `{}` is not ordinal but has an ordinal_order",
                        col.name
                    )))
                }
                _ => {}
            }
        }
        let labels = self.columns.iter().filter(|c| c.kind == ColumnKind::Label).count();
        if labels != 1 {
            return Err(Error::Schema(format!("expected exactly one label column, found {labels}")));
        }
        if !self.columns.iter().any(|c| c.kind.is_feature()) {
            return Err(Error::Schema("no feature columns".into()));
        }
        if let Some(classes) = &self.classes {
            let distinct: HashSet<_> = classes.iter().collect();
            if distinct.len() != classes.len() || classes.len() < 2 {
                return Err(Error::Schema("classes must list at least two distinct names".into()));
            }
        }
        Ok(())
    }

    pub fn label_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.kind == ColumnKind::Label)
            .expect("validated schema has a label column")
    }

    /// Applies `label_map` / `label_default` to a raw label value.
    pub fn map_label<'a>(&'a self, raw: &'a str) -> &'a str {
        match self.label_map.get(raw) {
            Some(mapped) => mapped,
            None => self.label_default.as_deref().unwrap_or(raw),
        }
    }
}
