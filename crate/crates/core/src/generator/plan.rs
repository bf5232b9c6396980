use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::cluster::Cluster;
use super::gates::{GateRecord, GeneratorGates};
use super::pool::Trajectory;
use super::{parse_json_reply, retry_feedback, GenError};
use crate::adapters::ModelProvider;
use crate::protocol::{PromptBundle, PromptSurface};
use crate::text::token_overlap;

const PLAN_SYSTEM: &str = "You design reusable GUI skills from demonstrations of one task family.
Propose atomic skills: each covers one workflow with a clear boundary and a checkable completion condition.
Reply with exactly one fenced JSON block:
```json
{\"skills\": [{\"proposed_name\": \"snake_case_name\", \"workflow_boundary\": \"where the workflow starts and stops\", \"completion_condition\": \"what is visible when it is done\", \"covered_task_ids\": [\"task ids from the list\"]}]}
```
Only cite task ids listed in the prompt.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillPlan {
    pub proposed_name: String,
    pub workflow_boundary: String,
    pub completion_condition: String,
    pub covered_task_ids: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanTable {
    skills: Vec<SkillPlan>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanOutcome {
    pub plans: Vec<SkillPlan>,
    pub warnings: Vec<String>,
    pub gates: Vec<GateRecord>,
}

pub(crate) fn task_lines(ids: &[String], pool: &[Trajectory]) -> String {
    let mut out = String::new();
    for id in ids {
        let Some(t) = pool.iter().find(|t| &t.task_id == id) else { continue };
        out.push_str(&format!("- {}: {}\n", t.task_id, t.instruction));
        for (i, s) in t.steps.iter().enumerate() {
            let action = s.action.lines().collect::<Vec<_>>().join(" ; ");
            out.push_str(&format!("    [{i}] {action}\n"));
        }
    }
    out
}

fn plan_prompt(cluster: &Cluster, pool: &[Trajectory]) -> PromptBundle {
    let user = format!(
        "Cluster {} ({} tasks). Demonstrations with their actions:\n{}",
        cluster.cluster_id,
        cluster.members.len(),
        task_lines(&cluster.members, pool)
    );
    PromptBundle::new(PromptSurface::GeneratorPlan, PLAN_SYSTEM.into(), user)
}

/// Phase 1: ask the model for a plan table for one cluster and gate each row.
pub fn plan_cluster_skills(
    cluster: &Cluster,
    pool: &[Trajectory],
    model: &dyn ModelProvider,
    gates: &GeneratorGates,
) -> Result<PlanOutcome, GenError> {
    if cluster.members.is_empty() {
        return Err(GenError::Config(format!("cluster {} is empty", cluster.cluster_id)));
    }
    let mut bundle = plan_prompt(cluster, pool);
    let mut out = PlanOutcome::default();
    let mut table = None;
    for attempt in 0..2 {
        let raw = model
            .complete(&bundle)
            .map_err(|source| GenError::Provider { phase: "plan_cluster_skills", source })?;
        match parse_json_reply::<PlanTable>(&raw) {
            Ok(t) => {
                table = Some(t);
                break;
            }
            Err(message) if attempt == 0 => {
                out.warnings.push(format!("{}: plan reply rejected ({message}); retrying", cluster.cluster_id));
                bundle.user_text.push_str(&retry_feedback(&message));
            }
            Err(message) => return Err(GenError::Schema { phase: "plan_cluster_skills", message, raw }),
        }
    }
    let table = table.expect("loop returns or sets the table");
    for plan in table.skills {
        let subject = format!("{}/{}", cluster.cluster_id, plan.proposed_name);
        let verdict = gates
            .plan_fields(&plan.proposed_name, &plan.workflow_boundary, &plan.completion_condition, &plan.covered_task_ids)
            .and_then(|_| gates.cluster_membership(&plan.proposed_name, &plan.covered_task_ids, &cluster.members));
        match verdict {
            Ok(()) => {
                out.gates.push(GateRecord::pass("cluster_membership", &subject));
                out.plans.push(plan);
            }
            Err(f) => out.gates.push(GateRecord::fail(&subject, f)),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedSpec {
    pub name: String,
    /// `cluster_id/proposed_name` of every merged plan, sorted.
    pub merged_from: Vec<String>,
    pub generalized_description: String,
    pub completion_condition: String,
    pub reference_task_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeOutcome {
    pub specs: Vec<MergedSpec>,
    pub gates: Vec<GateRecord>,
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    parent[i] = r;
    r
}

/// Phase 2: merge near-duplicate plans across clusters and drop umbrella specs.
///
/// Plans merge when their names are equal or the token overlap of `name + boundary` reaches the
/// threshold; merging is transitive. The result does not depend on input order.
pub fn merge_skill_plans(plans: &[(String, SkillPlan)], pool_size: usize, gates: &GeneratorGates) -> MergeOutcome {
    let mut sorted: Vec<&(String, SkillPlan)> = plans.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.1.proposed_name, &a.1.workflow_boundary, &a.1.completion_condition, &a.1.covered_task_ids, &a.0).cmp(&(
            &b.1.proposed_name,
            &b.1.workflow_boundary,
            &b.1.completion_condition,
            &b.1.covered_task_ids,
            &b.0,
        ))
    });
    let key = |p: &SkillPlan| format!("{} {}", p.proposed_name, p.workflow_boundary);
    let mut parent: Vec<usize> = (0..sorted.len()).collect();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            let (a, b) = (&sorted[i].1, &sorted[j].1);
            if a.proposed_name == b.proposed_name || token_overlap(&key(a), &key(b)) >= gates.merge_threshold {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..sorted.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }

    let mut out = MergeOutcome::default();
    for members in groups.values() {
        // the widest plan names the spec; `sorted` order breaks ties
        let rep = members
            .iter()
            .map(|&i| &sorted[i].1)
            .fold(None::<&SkillPlan>, |best, p| match best {
                Some(b) if b.covered_task_ids.len() >= p.covered_task_ids.len() => Some(b),
                _ => Some(p),
            })
            .expect("groups are non-empty");
        let refs: BTreeSet<&String> = members.iter().flat_map(|&i| &sorted[i].1.covered_task_ids).collect();
        let mut merged_from: Vec<String> =
            members.iter().map(|&i| format!("{}/{}", sorted[i].0, sorted[i].1.proposed_name)).collect();
        merged_from.sort();
        let spec = MergedSpec {
            name: rep.proposed_name.clone(),
            merged_from,
            generalized_description: rep.workflow_boundary.clone(),
            completion_condition: rep.completion_condition.clone(),
            reference_task_ids: refs.into_iter().cloned().collect(),
        };
        match gates.umbrella(&spec.name, spec.reference_task_ids.len(), pool_size) {
            Ok(()) => {
                out.gates.push(GateRecord::pass("umbrella", &spec.name));
                out.specs.push(spec);
            }
            Err(f) => out.gates.push(GateRecord::fail(&spec.name, f)),
        }
    }
    out.specs.sort_by(|a, b| a.name.cmp(&b.name));
    out.gates.sort_by(|a, b| (&a.subject, &a.gate).cmp(&(&b.subject, &b.gate)));
    out
}
