use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agents::{Gateway, HttpProvider, HttpProviderConfig, ProviderLimits, ScriptedProvider};

/// A model backend entry in the provider registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderSpec {
    /// OpenAI-compatible endpoint. The credential is read from the named
    /// environment variable at call time.
    Http {
        #[serde(flatten)]
        http: HttpProviderConfig,
        #[serde(default)]
        limits: Option<ProviderLimits>,
    },
    /// Offline provider: replies from the list in order, then `default_reply`.
    Scripted {
        #[serde(default)]
        replies: Vec<String>,
        #[serde(default)]
        default_reply: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Where events and engine state live. `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub port: u16,
    pub shards: usize,
    /// Static bearer token required on /v1/admin routes when set.
    pub admin_token: Option<String>,
    pub providers: BTreeMap<String, ProviderSpec>,
    /// Model used by the writing analyzers and grading.
    pub writing_model: String,
    /// Label rule file; the bundled rules when unset.
    pub label_rules: Option<PathBuf>,
    /// Condition statement table; the bundled table when unset.
    pub statements: Option<PathBuf>,
    /// Scaffold rules and templates; the bundled file when unset.
    pub scaffold_rules: Option<PathBuf>,
    /// Extra lexicons by id. `default` is always available.
    pub lexicons: BTreeMap<String, PathBuf>,
    /// Actions accepted in addition to the built-in vocabulary.
    pub extra_actions: Vec<String>,
    pub tick_ms: u64,
    pub chat_context_budget_tokens: Option<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            port: 8080,
            shards: 4,
            admin_token: None,
            providers: BTreeMap::new(),
            writing_model: "writing".into(),
            label_rules: None,
            statements: None,
            scaffold_rules: None,
            lexicons: BTreeMap::new(),
            extra_actions: Vec::new(),
            tick_ms: crate::scaffold::TICK_MS,
            chat_context_budget_tokens: Some(6000),
        }
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads a configuration file. Relative paths inside it resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.data_dir.as_mut().map(fix);
        cfg.label_rules.as_mut().map(fix);
        cfg.statements.as_mut().map(fix);
        cfg.scaffold_rules.as_mut().map(fix);
        cfg.lexicons.values_mut().for_each(fix);
        Ok(cfg)
    }

    pub fn register_providers(&self, gateway: &Gateway) {
        for (model_ref, spec) in &self.providers {
            match spec {
                ProviderSpec::Http { http, limits } => {
                    let limits = limits.unwrap_or_default();
                    let provider = HttpProvider::new(http.clone(), Duration::from_millis(limits.timeout_ms));
                    gateway.register(model_ref.clone(), Arc::new(provider), limits);
                }
                ProviderSpec::Scripted { replies, default_reply } => {
                    let provider = match default_reply.clone() {
                        Some(d) => ScriptedProvider::with_responder(move |_| Ok(d.clone())),
                        None => ScriptedProvider::new(),
                    };
                    for r in replies {
                        provider.push_reply(r.clone());
                    }
                    gateway.register(model_ref.clone(), Arc::new(provider), ProviderLimits::default());
                }
            }
        }
    }
}
