//! Per-domain skill storage and instruction-conditioned pre-recall.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapters::{EmbeddingProvider, ProviderError};
use crate::package::{load_package, validate_package, LoadError, SkillPackage, ValidationReport, ViewType};
use crate::text::{cosine, token_overlap};

pub const LIBRARY_FILE: &str = "library.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.json";
/// Candidate count for GUI domains.
pub const DEFAULT_RECALL_K: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum LibraryError {
    #[error("skill `{0}` is already in the library")]
    Duplicate(String),
    #[error("skill `{name}` is invalid:\n{report}")]
    InvalidPackage { name: String, report: ValidationReport },
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding failed for skill `{name}`: {source}")]
    Embedding { name: String, source: ProviderError },
    #[error("embedding failed for the instruction: {0}")]
    InstructionEmbedding(ProviderError),
    #[error("embedding scorer needs an index; run build_index first")]
    MissingIndex,
    #[error("skill `{0}` has no package directory")]
    NoRoot(String),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", .path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Package(#[from] LoadError),
}

/// Skills of one domain keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkillLibrary {
    pub domain_tag: String,
    packages: BTreeMap<String, SkillPackage>,
    roots: BTreeMap<String, PathBuf>,
    embedding_cache: Option<BTreeMap<String, Vec<f64>>>,
}

impl SkillLibrary {
    pub fn new(domain_tag: impl Into<String>) -> Self {
        SkillLibrary { domain_tag: domain_tag.into(), ..Default::default() }
    }

    /// Add a package whose view images live under `root`; the package is validated there.
    pub fn add_package_at(&mut self, pkg: SkillPackage, root: impl Into<PathBuf>) -> Result<(), LibraryError> {
        let root = root.into();
        let name = pkg.descriptor.skill_name.clone();
        if self.packages.contains_key(&name) {
            return Err(LibraryError::Duplicate(name));
        }
        let report = validate_package(&pkg, &root);
        if !report.is_valid() {
            return Err(LibraryError::InvalidPackage { name, report });
        }
        self.roots.insert(name.clone(), root);
        self.packages.insert(name, pkg);
        Ok(())
    }

    /// Add a package without image storage. Only text-only packages validate this way.
    pub fn add_package(&mut self, pkg: SkillPackage) -> Result<(), LibraryError> {
        let name = pkg.descriptor.skill_name.clone();
        if self.packages.contains_key(&name) {
            return Err(LibraryError::Duplicate(name));
        }
        let report = validate_package(&pkg, Path::new(""));
        if !report.is_valid() {
            return Err(LibraryError::InvalidPackage { name, report });
        }
        self.packages.insert(name, pkg);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&SkillPackage> {
        self.packages.get(name)
    }

    pub fn root(&self, name: &str) -> Option<&Path> {
        self.roots.get(name).map(PathBuf::as_path)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.packages.keys().map(String::as_str)
    }

    pub fn packages(&self) -> impl Iterator<Item = &SkillPackage> {
        self.packages.values()
    }

    pub fn len(&self) -> usize {
        self.packages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packages.is_empty()
    }

    pub fn embedding_cache(&self) -> Option<&BTreeMap<String, Vec<f64>>> {
        self.embedding_cache.as_ref()
    }

    /// Raw bytes of one keyframe view.
    pub fn read_view(&self, skill: &str, state_id: &str, view: ViewType) -> Result<Vec<u8>, LibraryError> {
        let pkg = self.get(skill).ok_or_else(|| LibraryError::UnknownSkill(skill.to_string()))?;
        let image = pkg.view(state_id, view).ok_or_else(|| LibraryError::UnknownSkill(format!("{skill}/{state_id}/{view}")))?;
        let root = self.root(skill).ok_or_else(|| LibraryError::NoRoot(skill.to_string()))?;
        let path = root.join(&image.path);
        fs::read(&path).map_err(|source| LibraryError::Io { path, source })
    }
}

/// Text a scorer sees for one skill: its name plus short description.
pub fn descriptor_text(pkg: &SkillPackage) -> String {
    format!("{} {}", pkg.descriptor.skill_name, pkg.descriptor.short_description)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub skill_name: String,
    pub relevance_score: f64,
}

/// Task-level candidate skills, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub instruction: String,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn names(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.skill_name.as_str()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.candidates.iter().any(|c| c.skill_name == name)
    }

    pub fn with_min_score(mut self, min: f64) -> Self {
        self.candidates.retain(|c| c.relevance_score >= min);
        self
    }
}

/// Scores every skill of a library against an instruction.
pub trait RelevanceScorer {
    /// One score in `[0, 1]` per package, in `lib` iteration order.
    fn score_all(&self, instruction: &str, lib: &SkillLibrary) -> Result<Vec<f64>, LibraryError>;
}

/// Normalized token overlap between the instruction and each descriptor.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl RelevanceScorer for LexicalScorer {
    fn score_all(&self, instruction: &str, lib: &SkillLibrary) -> Result<Vec<f64>, LibraryError> {
        Ok(lib.packages().map(|p| token_overlap(instruction, &descriptor_text(p))).collect())
    }
}

/// Cosine between the embedded instruction and each cached descriptor vector, clamped to `[0, 1]`.
pub struct EmbeddingScorer<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
}

impl RelevanceScorer for EmbeddingScorer<'_> {
    fn score_all(&self, instruction: &str, lib: &SkillLibrary) -> Result<Vec<f64>, LibraryError> {
        let cache = lib.embedding_cache().ok_or(LibraryError::MissingIndex)?;
        let q = self.embedder.embed(instruction).map_err(LibraryError::InstructionEmbedding)?;
        lib.names()
            .map(|name| {
                let v = cache.get(name).ok_or(LibraryError::MissingIndex)?;
                Ok(cosine(&q, v).clamp(0.0, 1.0))
            })
            .collect()
    }
}

/// Best `k` skills for `instruction`, score descending with ties broken by name.
pub fn pre_recall(
    instruction: &str,
    lib: &SkillLibrary,
    k: usize,
    scorer: &dyn RelevanceScorer,
) -> Result<CandidateSet, LibraryError> {
    if k == 0 {
        return Err(LibraryError::ZeroK);
    }
    let scores = scorer.score_all(instruction, lib)?;
    let mut candidates: Vec<Candidate> = lib
        .names()
        .zip(scores)
        .map(|(name, s)| Candidate { skill_name: name.to_string(), relevance_score: s })
        .collect();
    candidates.sort_by(|a, b| {
        b.relevance_score
            .partial_cmp(&a.relevance_score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.skill_name.cmp(&b.skill_name))
    });
    candidates.truncate(k);
    Ok(CandidateSet { instruction: instruction.to_string(), candidates })
}

/// Embed every descriptor into the library's cache.
pub fn build_index(lib: &mut SkillLibrary, embedder: &dyn EmbeddingProvider) -> Result<(), LibraryError> {
    let mut cache = BTreeMap::new();
    for pkg in lib.packages() {
        let name = pkg.descriptor.skill_name.clone();
        let v = embedder
            .embed(&descriptor_text(pkg))
            .map_err(|source| LibraryError::Embedding { name: name.clone(), source })?;
        cache.insert(name, v);
    }
    lib.embedding_cache = Some(cache);
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LibraryManifest {
    domain_tag: String,
    packages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding_cache: Option<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), LibraryError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|source| LibraryError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| LibraryError::Io { path: path.to_path_buf(), source })
}

/// Write `library.json` (and the embedding cache, when built) for packages stored at `root/<skill_name>/`.
pub fn save_library_manifest(lib: &SkillLibrary, root: &Path) -> Result<(), LibraryError> {
    fs::create_dir_all(root).map_err(|source| LibraryError::Io { path: root.to_path_buf(), source })?;
    let manifest = LibraryManifest {
        domain_tag: lib.domain_tag.clone(),
        packages: lib.names().map(str::to_string).collect(),
        embedding_cache: lib.embedding_cache.as_ref().map(|_| EMBEDDINGS_FILE.to_string()),
    };
    if let Some(cache) = &lib.embedding_cache {
        write_json(&root.join(EMBEDDINGS_FILE), cache)?;
    }
    write_json(&root.join(LIBRARY_FILE), &manifest)
}

/// Load `library.json` and every listed package directory.
pub fn load_library(root: &Path) -> Result<SkillLibrary, LibraryError> {
    let path = root.join(LIBRARY_FILE);
    let text = fs::read_to_string(&path).map_err(|source| LibraryError::Io { path: path.clone(), source })?;
    let manifest: LibraryManifest =
        serde_json::from_str(&text).map_err(|source| LibraryError::Json { path: path.clone(), source })?;
    let mut lib = SkillLibrary::new(manifest.domain_tag);
    for name in manifest.packages {
        let dir = root.join(&name);
        let pkg = load_package(&dir)?;
        lib.add_package_at(pkg, dir)?;
    }
    if let Some(file) = manifest.embedding_cache {
        let path = root.join(file);
        let text = fs::read_to_string(&path).map_err(|source| LibraryError::Io { path: path.clone(), source })?;
        lib.embedding_cache = Some(serde_json::from_str(&text).map_err(|source| LibraryError::Json { path, source })?);
    }
    Ok(lib)
}
