//! Offline trajectory-to-skill pipeline: cluster, plan, merge, draft, ground and audit.

mod cluster;
mod draft;
mod gates;
mod ground;
mod plan;
mod pool;
pub mod synthetic;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cluster::{embed_and_cluster, kmeans, nearest, squared_distance, Cluster, ClusterSet};
pub use draft::{draft_text_package, AnchoredCard, CardAnchor, CardPurpose, DraftPackage};
pub use gates::{GateFailure, GateRecord, GeneratorGates};
pub use ground::{crop_focus_region, ground_and_audit, heuristic_focus_bbox, GroundedPackage, ViewProvenance};
pub use plan::{merge_skill_plans, plan_cluster_skills, MergeOutcome, MergedSpec, PlanOutcome, SkillPlan};
pub use pool::{load_pool, write_trajectory, Trajectory, TrajectoryStep, FRAMES_DIR, TASK_FILE};

use crate::adapters::{EmbeddingProvider, ModelProvider, ProviderError};
use crate::library::{save_library_manifest, LibraryError, SkillLibrary};
use crate::package::LoadError;
use crate::protocol::{single_block, Strictness};

pub const REPORT_FILE: &str = "pipeline_report.json";

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("trajectory pool: {0}")]
    Pool(String),
    #[error("{phase}: provider failed: {source}")]
    Provider { phase: &'static str, source: ProviderError },
    #[error("{phase}: reply rejected twice ({message}); raw output: {raw}")]
    Schema { phase: &'static str, message: String, raw: String },
    #[error("no frame for `{task_id}` step {step}")]
    MissingFrame { task_id: String, step: usize },
    #[error("bbox {x},{y} {width}x{height} is outside the {image_width}x{image_height} image")]
    BBoxOutOfBounds { x: u32, y: u32, width: u32, height: u32, image_width: u32, image_height: u32 },
    #[error("gate `{}` failed: {}", .0.gate, .0.message)]
    Gate(GateFailure),
    #[error(transparent)]
    Package(#[from] LoadError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub domain_tag: String,
    pub clusters: usize,
    pub seed: u64,
    pub gates: GeneratorGates,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { domain_tag: "default".into(), clusters: 1, seed: 0, gates: GeneratorGates::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Phase0Report {
    pub pool_size: usize,
    pub clusters: Vec<ClusterSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Phase1Report {
    pub plans: Vec<PlanEntry>,
    pub warnings: Vec<String>,
    pub gates: Vec<GateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub cluster_id: String,
    pub plan: SkillPlan,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Phase2Report {
    pub specs: Vec<MergedSpec>,
    pub gates: Vec<GateRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Phase3Report {
    pub drafts: Vec<DraftSummary>,
    pub warnings: Vec<String>,
    pub gates: Vec<GateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftSummary {
    pub skill_name: String,
    pub cards: Vec<AnchoredCard>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Phase4Report {
    pub packages: Vec<PackageSummary>,
    pub warnings: Vec<String>,
    pub gates: Vec<GateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageSummary {
    pub skill_name: String,
    pub cards: usize,
    pub views: usize,
    pub provenance: Vec<ViewProvenance>,
}

/// Per-phase record of a pipeline run; `error` is set when a phase aborted the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: GeneratorConfig,
    pub phase0: Phase0Report,
    pub phase1: Phase1Report,
    pub phase2: Phase2Report,
    pub phase3: Phase3Report,
    pub phase4: Phase4Report,
    pub library: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Every gate record of every phase, in phase order.
    pub fn gate_records(&self) -> impl Iterator<Item = &GateRecord> {
        self.phase1
            .gates
            .iter()
            .chain(&self.phase2.gates)
            .chain(&self.phase3.gates)
            .chain(&self.phase4.gates)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct PipelineError {
    pub error: GenError,
    /// Whatever the phases before the failure produced.
    pub report: Box<PipelineReport>,
}

pub struct Providers<'a> {
    pub model: &'a dyn ModelProvider,
    pub embedder: &'a dyn EmbeddingProvider,
}

/// Parse the single fenced JSON block of a generator reply.
pub(crate) fn parse_json_reply<T: serde::de::DeserializeOwned>(reply: &str) -> Result<T, String> {
    let (content, _) = single_block(reply, Strictness::Lenient).map_err(|e| e.to_string())?;
    serde_json::from_str(&content).map_err(|e| format!("invalid JSON payload: {e}"))
}

pub(crate) fn retry_feedback(err: &str) -> String {
    format!("\n\nYour previous reply was rejected: {err}. Reply again with one fenced JSON block following the schema exactly.")
}

/// Run phases 0 to 4 over `pool` and write the accepted packages plus `library.json` under `out`.
///
/// Packages are written to `out/<skill_name>/`; the report is not written (see [`write_report`]).
pub fn run_pipeline(
    pool: &[Trajectory],
    cfg: &GeneratorConfig,
    providers: &Providers<'_>,
    out: &Path,
) -> Result<(SkillLibrary, PipelineReport), PipelineError> {
    let mut report = PipelineReport { config: cfg.clone(), ..Default::default() };
    match run_phases(pool, cfg, providers, out, &mut report) {
        Ok(lib) => Ok((lib, report)),
        Err(error) => {
            report.error = Some(error.to_string());
            Err(PipelineError { error, report: Box::new(report) })
        }
    }
}

fn run_phases(
    pool: &[Trajectory],
    cfg: &GeneratorConfig,
    providers: &Providers<'_>,
    out: &Path,
    report: &mut PipelineReport,
) -> Result<SkillLibrary, GenError> {
    let gates = &cfg.gates;
    gates.check_config()?;

    let clusters = embed_and_cluster(pool, providers.embedder, cfg.clusters, cfg.seed)?;
    report.phase0 = Phase0Report {
        pool_size: pool.len(),
        clusters: clusters
            .clusters
            .iter()
            .map(|c| ClusterSummary { cluster_id: c.cluster_id.clone(), members: c.members.clone() })
            .collect(),
    };

    let mut plans = Vec::new();
    for cluster in &clusters.clusters {
        let outcome = plan_cluster_skills(cluster, pool, providers.model, gates)?;
        report.phase1.warnings.extend(outcome.warnings);
        report.phase1.gates.extend(outcome.gates);
        for plan in outcome.plans {
            report.phase1.plans.push(PlanEntry { cluster_id: cluster.cluster_id.clone(), plan: plan.clone() });
            plans.push((cluster.cluster_id.clone(), plan));
        }
    }

    let merged = merge_skill_plans(&plans, pool.len(), gates);
    report.phase2 = Phase2Report { specs: merged.specs.clone(), gates: merged.gates };

    let mut drafts = Vec::new();
    for spec in &merged.specs {
        match draft_text_package(spec, pool, providers.model, gates, &cfg.domain_tag) {
            Ok((draft, warnings)) => {
                report.phase3.warnings.extend(warnings);
                report.phase3.gates.push(GateRecord::pass("anchors", &spec.name));
                report.phase3.drafts.push(DraftSummary { skill_name: spec.name.clone(), cards: draft.cards.clone() });
                drafts.push(draft);
            }
            Err(GenError::Gate(f)) => report.phase3.gates.push(GateRecord::fail(&spec.name, f)),
            Err(e) => return Err(e),
        }
    }

    fs::create_dir_all(out).map_err(|source| GenError::Io { path: out.display().to_string(), source })?;
    let mut lib = SkillLibrary::new(cfg.domain_tag.clone());
    for draft in &drafts {
        let name = draft.descriptor.skill_name.clone();
        match ground_and_audit(draft, pool, providers.model, gates) {
            Ok(grounded) => {
                report.phase4.warnings.extend(grounded.warnings.iter().cloned());
                let dir = out.join(&name);
                if dir.exists() {
                    fs::remove_dir_all(&dir).map_err(|source| GenError::Io { path: dir.display().to_string(), source })?;
                }
                grounded.write(&dir)?;
                // validate_package on the written files is the last audit gate
                let audit = crate::package::validate_package(&grounded.package, &dir);
                if let Err(f) = gates.audit(&grounded.package, &audit) {
                    report.phase4.gates.push(GateRecord::fail(&name, f));
                    fs::remove_dir_all(&dir).map_err(|source| GenError::Io { path: dir.display().to_string(), source })?;
                    continue;
                }
                report.phase4.gates.extend(grounded.gates_passed.iter().cloned());
                report.phase4.gates.push(GateRecord::pass("audit", &name));
                report.phase4.packages.push(PackageSummary {
                    skill_name: name.clone(),
                    cards: grounded.package.state_cards.len(),
                    views: grounded.package.total_views(),
                    provenance: grounded.provenance.clone(),
                });
                lib.add_package_at(grounded.package, dir)?;
            }
            Err(GenError::Gate(f)) => report.phase4.gates.push(GateRecord::fail(&name, f)),
            Err(e) => return Err(e),
        }
    }
    save_library_manifest(&lib, out)?;
    report.library = lib.names().map(str::to_string).collect();
    Ok(lib)
}

pub fn write_report(report: &PipelineReport, path: &Path) -> Result<(), GenError> {
    fs::write(path, report.to_json()).map_err(|source| GenError::Io { path: path.display().to_string(), source })
}
