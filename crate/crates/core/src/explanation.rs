//! Explanation artifacts and the explanation delta between two of them.
//!
//! Feature attributions are compared by L1 distance over the union of
//! features and by Jaccard similarity of their top-k feature sets. Reasoning
//! traces are compared by Jaccard similarity of whitespace-token 3-shingles.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 5;
pub const SHINGLE_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExplanationArtifact {
    FeatureAttribution { weights: BTreeMap<String, f64> },
    ReasoningTrace { trace: Digest },
}

impl ExplanationArtifact {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ExplanationArtifact::FeatureAttribution { .. } => "feature_attribution",
            ExplanationArtifact::ReasoningTrace { .. } => "reasoning_trace",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ExplanationArtifact::FeatureAttribution { weights } = self {
            if weights.is_empty() {
                return Err(Error::InvalidInput("attribution map must be non-empty".into()));
            }
            if let Some((name, _)) = weights.iter().find(|(_, w)| !w.is_finite()) {
                return Err(Error::InvalidInput(format!("attribution weight for {name:?} is not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub l1_distance: f64,
    pub topk_jaccard: f64,
    pub delta_score: f64,
    pub k: usize,
}

impl DeltaReport {
    fn new(l1_distance: f64, topk_jaccard: f64, k: usize) -> Self {
        Self {
            l1_distance,
            topk_jaccard,
            delta_score: 1.0 - topk_jaccard,
            k,
        }
    }
}

/// Jaccard similarity; two empty sets are identical (1.0).
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Names of the `k` features with largest |weight|; ties go to the
/// lexicographically smaller name. Fewer than `k` features yields all of them.
pub fn top_k(weights: &BTreeMap<String, f64>, k: usize) -> BTreeSet<String> {
    let mut ranked: Vec<(&String, f64)> = weights.iter().map(|(n, w)| (n, w.abs())).collect();
    ranked.sort_by(|(na, wa), (nb, wb)| {
        wb.partial_cmp(wa).unwrap_or(Ordering::Equal).then_with(|| na.cmp(nb))
    });
    ranked.into_iter().take(k).map(|(n, _)| n.clone()).collect()
}

pub fn attribution_delta(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
    k: usize,
) -> Result<DeltaReport> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    let features: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    let l1 = features
        .into_iter()
        .map(|f| (a.get(f).copied().unwrap_or(0.0) - b.get(f).copied().unwrap_or(0.0)).abs())
        .sum();
    Ok(DeltaReport::new(l1, jaccard(&top_k(a, k), &top_k(b, k)), k))
}

/// Token 3-shingles of a trace. A trace shorter than three tokens forms a
/// single shingle of all its tokens; an empty trace has none.
pub fn shingles(text: &str) -> BTreeSet<Vec<&str>> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return BTreeSet::new();
    }
    if tokens.len() < SHINGLE_SIZE {
        return BTreeSet::from([tokens]);
    }
    tokens.windows(SHINGLE_SIZE).map(|w| w.to_vec()).collect()
}

/// For traces `l1_distance` is the size of the shingle symmetric difference.
pub fn trace_delta(a: &str, b: &str, k: usize) -> Result<DeltaReport> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    let sa = shingles(a);
    let sb = shingles(b);
    let sym_diff = sa.symmetric_difference(&sb).count();
    Ok(DeltaReport::new(sym_diff as f64, jaccard(&sa, &sb), k))
}

/// Compare two artifacts. `load_trace` resolves a trace digest to its text.
pub fn explanation_delta<F>(
    a: &ExplanationArtifact,
    b: &ExplanationArtifact,
    k: usize,
    mut load_trace: F,
) -> Result<DeltaReport>
where
    F: FnMut(&Digest) -> Result<String>,
{
    match (a, b) {
        (
            ExplanationArtifact::FeatureAttribution { weights: wa },
            ExplanationArtifact::FeatureAttribution { weights: wb },
        ) => attribution_delta(wa, wb, k),
        (
            ExplanationArtifact::ReasoningTrace { trace: ta },
            ExplanationArtifact::ReasoningTrace { trace: tb },
        ) => {
            let text_a = load_trace(ta)?;
            let text_b = load_trace(tb)?;
            trace_delta(&text_a, &text_b, k)
        }
        _ => Err(Error::KindMismatch),
    }
}
