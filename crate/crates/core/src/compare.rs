use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::ids::NodeId;
use crate::node::VersionNode;
use crate::params::GenerationParams;
use crate::stage::StageKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparedNode {
    pub id: NodeId,
    pub stage: StageKind,
    pub image: Digest,
    pub prompt: String,
    pub seed: u64,
    pub params: GenerationParams,
    pub label: Option<String>,
}

impl ComparedNode {
    /// `None` when the node has no image yet.
    pub fn of(node: &VersionNode) -> Option<Self> {
        Some(ComparedNode {
            id: node.id.clone(),
            stage: node.stage,
            image: node.image?,
            prompt: node.prompt.clone(),
            seed: node.seed,
            params: node.params.clone(),
            label: node.label.clone(),
        })
    }
}

/// Tokens removed from the first prompt and added in the second.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDiff {
    pub removed: Vec<String>,
    pub added: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamChange {
    pub field: String,
    pub a: serde_json::Value,
    pub b: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: ComparedNode,
    pub b: ComparedNode,
    pub lowest_common_ancestor: NodeId,
    pub differing_pixels: u64,
    pub total_pixels: u64,
    pub prompt_diff: PromptDiff,
    pub params_diff: Vec<ParamChange>,
}

/// Words of a prompt; commas separate tokens like whitespace does.
pub fn prompt_tokens(prompt: &str) -> Vec<&str> {
    prompt
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .collect()
}

/// Token-level diff via longest common subsequence. Tokens outside the LCS
/// are reported, in their original order.
pub fn diff_prompts(a: &str, b: &str) -> PromptDiff {
    let ta = prompt_tokens(a);
    let tb = prompt_tokens(b);
    let (n, m) = (ta.len(), tb.len());
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if ta[i] == tb[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let mut diff = PromptDiff::default();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if ta[i] == tb[j] {
            i += 1;
            j += 1;
        } else if lcs[i + 1][j] >= lcs[i][j + 1] {
            diff.removed.push(ta[i].to_string());
            i += 1;
        } else {
            diff.added.push(tb[j].to_string());
            j += 1;
        }
    }
    diff.removed.extend(ta[i..].iter().map(|t| t.to_string()));
    diff.added.extend(tb[j..].iter().map(|t| t.to_string()));
    diff
}

/// Field-by-field differences of seed and generation parameters.
pub fn diff_params(a: &ComparedNode, b: &ComparedNode) -> Vec<ParamChange> {
    let mut changes = Vec::new();
    if a.seed != b.seed {
        changes.push(ParamChange {
            field: "seed".into(),
            a: a.seed.into(),
            b: b.seed.into(),
        });
    }
    let to_map = |p: &GenerationParams| match serde_json::to_value(p) {
        Ok(serde_json::Value::Object(m)) => m,
        _ => Default::default(),
    };
    let (pa, pb) = (to_map(&a.params), to_map(&b.params));
    let mut keys: Vec<&String> = pa.keys().chain(pb.keys()).collect();
    keys.sort();
    keys.dedup();
    for key in keys {
        let va = pa.get(key).cloned().unwrap_or(serde_json::Value::Null);
        let vb = pb.get(key).cloned().unwrap_or(serde_json::Value::Null);
        if va != vb {
            changes.push(ParamChange {
                field: key.clone(),
                a: va,
                b: vb,
            });
        }
    }
    changes
}
