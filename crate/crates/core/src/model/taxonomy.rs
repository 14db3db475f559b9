use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ValidationError;

pub const UNCLASSIFIED: &str = "Unclassified";

/// Process names shared by the built-in profiles.
pub const DEFAULT_PROCESSES: &[&str] = &[
    "Orientation",
    "Planning",
    "FirstReading",
    "ReReading",
    "Elaboration",
    "Monitoring",
    "Evaluation",
    "Drafting",
    "HelpSeeking",
    "StrategicCycle",
    UNCLASSIFIED,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelProfile {
    Copes,
    Zimmerman,
    Custom,
}

/// An ordered, duplicate-free set of SRL process names, with each process
/// mapped onto a category of the theoretical model it follows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlProcessTaxonomy {
    pub taxonomy_id: String,
    processes: Vec<String>,
    pub model_profile: ModelProfile,
    #[serde(default)]
    categories: BTreeMap<String, String>,
}

impl SrlProcessTaxonomy {
    /// Loads a custom taxonomy. Built-in profiles cannot be constructed here.
    pub fn custom(
        taxonomy_id: impl Into<String>,
        processes: Vec<String>,
        categories: BTreeMap<String, String>,
    ) -> Result<Self, ValidationError> {
        let mut seen = HashSet::new();
        for p in &processes {
            if p.is_empty() || !seen.insert(p.as_str()) {
                return Err(ValidationError::InvalidField {
                    field: "processes".into(),
                    reason: format!("duplicate or empty process name {p:?}"),
                });
            }
        }
        if let Some(bad) = categories.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(ValidationError::InvalidField {
                field: "categories".into(),
                reason: format!("category given for unknown process {bad:?}"),
            });
        }
        Ok(Self {
            taxonomy_id: taxonomy_id.into(),
            processes,
            model_profile: ModelProfile::Custom,
            categories,
        })
    }

    /// Default process set with COPES facet categories.
    pub fn copes() -> Self {
        Self::builtin(
            "copes",
            ModelProfile::Copes,
            &[
                ("Orientation", "Conditions"),
                ("Planning", "Standards"),
                ("FirstReading", "Operations"),
                ("ReReading", "Operations"),
                ("Elaboration", "Operations"),
                ("Monitoring", "Evaluations"),
                ("Evaluation", "Evaluations"),
                ("Drafting", "Products"),
                ("HelpSeeking", "Operations"),
                ("StrategicCycle", "Operations"),
                (UNCLASSIFIED, UNCLASSIFIED),
            ],
        )
    }

    /// Default process set with cyclical-phase categories.
    pub fn zimmerman() -> Self {
        Self::builtin(
            "zimmerman",
            ModelProfile::Zimmerman,
            &[
                ("Orientation", "Forethought"),
                ("Planning", "Forethought"),
                ("FirstReading", "Performance"),
                ("ReReading", "Performance"),
                ("Elaboration", "Performance"),
                ("Monitoring", "Performance"),
                ("Evaluation", "SelfReflection"),
                ("Drafting", "Performance"),
                ("HelpSeeking", "Performance"),
                ("StrategicCycle", "Performance"),
                (UNCLASSIFIED, UNCLASSIFIED),
            ],
        )
    }

    pub fn builtin_by_id(id: &str) -> Option<Self> {
        match id {
            "copes" => Some(Self::copes()),
            "zimmerman" => Some(Self::zimmerman()),
            _ => None,
        }
    }

    fn builtin(id: &str, profile: ModelProfile, mapping: &[(&str, &str)]) -> Self {
        debug_assert_eq!(mapping.len(), DEFAULT_PROCESSES.len());
        Self {
            taxonomy_id: id.into(),
            processes: mapping.iter().map(|(p, _)| p.to_string()).collect(),
            model_profile: profile,
            categories: mapping
                .iter()
                .map(|(p, c)| (p.to_string(), c.to_string()))
                .collect(),
        }
    }

    pub fn processes(&self) -> &[String] {
        &self.processes
    }

    pub fn contains(&self, process: &str) -> bool {
        self.processes.iter().any(|p| p == process)
    }

    pub fn category_of(&self, process: &str) -> Option<&str> {
        self.categories.get(process).map(String::as_str)
    }
}
