use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::validate::{Issue, IssueCode, ValidationReport};
use super::{validate_document, DialogueScript, ScriptDocument, ScriptError};

pub const MANIFEST_FILE: &str = "library.json";

/// `library.json`: the version tag plus topic files relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryManifest {
    pub version: String,
    pub topics: Vec<PathBuf>,
}

/// Everything read from a library directory, valid or not.
#[derive(Debug)]
pub struct Corpus {
    pub version: String,
    pub entries: Vec<CorpusEntry>,
}

#[derive(Debug)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub document: Result<ScriptDocument, ScriptError>,
}

impl Corpus {
    pub fn from_documents(version: impl Into<String>, documents: Vec<ScriptDocument>) -> Self {
        Corpus {
            version: version.into(),
            entries: documents
                .into_iter()
                .map(|d| CorpusEntry {
                    path: PathBuf::from(format!("{}.json", d.topic_id)),
                    document: Ok(d),
                })
                .collect(),
        }
    }
}

/// Reads the manifest and every topic file it lists. Only I/O failures and a
/// broken manifest are errors; per-topic parse failures stay in the corpus so
/// that validation can report them.
pub fn load_corpus(dir: &Path) -> Result<Corpus, ScriptError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let bytes = read(&manifest_path)?;
    let manifest: LibraryManifest =
        serde_json::from_slice(&bytes).map_err(|e| ScriptError::Schema {
            message: format!("{}: {e}", manifest_path.display()),
        })?;
    let mut entries = Vec::with_capacity(manifest.topics.len());
    for rel in &manifest.topics {
        let path = dir.join(rel);
        let bytes = read(&path)?;
        entries.push(CorpusEntry {
            path: rel.clone(),
            document: ScriptDocument::from_slice(&bytes),
        });
    }
    Ok(Corpus {
        version: manifest.version,
        entries,
    })
}

fn read(path: &Path) -> Result<Vec<u8>, ScriptError> {
    fs::read(path).map_err(|source| ScriptError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Every invariant violation across the corpus. Pure; an empty corpus is ok.
pub fn validate_library(corpus: &Corpus) -> ValidationReport {
    let mut issues = Vec::new();
    let mut topics = BTreeSet::new();
    for entry in &corpus.entries {
        match &entry.document {
            Ok(doc) => {
                if !topics.insert(doc.topic_id.as_str()) {
                    issues.push(Issue {
                        topic_id: doc.topic_id.clone(),
                        node_id: None,
                        code: IssueCode::DuplicateTopic,
                        message: format!("topic id defined again in {}", entry.path.display()),
                    });
                }
                issues.extend(validate_document(doc));
            }
            Err(err) => issues.push(Issue {
                topic_id: entry.path.display().to_string(),
                node_id: None,
                code: IssueCode::ParseError,
                message: err.to_string(),
            }),
        }
    }
    ValidationReport::from_issues(issues)
}

/// Validated scripts keyed by topic id. Immutable once built; clones share
/// the underlying scripts.
#[derive(Debug, Clone)]
pub struct ScriptLibrary {
    version: String,
    scripts: Arc<BTreeMap<String, DialogueScript>>,
}

impl ScriptLibrary {
    pub fn new(
        version: impl Into<String>,
        scripts: impl IntoIterator<Item = DialogueScript>,
    ) -> Result<Self, ScriptError> {
        let mut map = BTreeMap::new();
        for script in scripts {
            let topic = script.topic_id().to_string();
            if map.insert(topic.clone(), script).is_some() {
                return Err(ScriptError::DuplicateTopic(topic));
            }
        }
        Ok(ScriptLibrary {
            version: version.into(),
            scripts: Arc::new(map),
        })
    }

    pub fn load(dir: &Path) -> Result<Self, ScriptError> {
        Self::from_corpus(load_corpus(dir)?)
    }

    pub fn from_corpus(corpus: Corpus) -> Result<Self, ScriptError> {
        let scripts = corpus
            .entries
            .into_iter()
            .map(|e| e.document.and_then(DialogueScript::try_from))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(corpus.version, scripts)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn get(&self, topic_id: &str) -> Result<&DialogueScript, ScriptError> {
        self.scripts
            .get(topic_id)
            .ok_or_else(|| ScriptError::UnknownTopic(topic_id.to_string()))
    }

    pub fn scripts(&self) -> impl Iterator<Item = &DialogueScript> {
        self.scripts.values()
    }

    pub fn topic_ids(&self) -> impl Iterator<Item = &str> {
        self.scripts.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.scripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scripts.is_empty()
    }
}
