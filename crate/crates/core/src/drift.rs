//! Replicable stress runs over golden prompt sets and drift scoring.
//!
//! A stress run executes every prompt of a pinned golden set through an
//! [`InferenceAdapter`] under one bundle and seed. Two runs are then compared
//! along three independent dimensions:
//!
//! * semantic: mean cosine distance between output embeddings,
//! * behavioral: largest shift in refusal rate or policy-violation rate,
//! * probabilistic: Jensen–Shannon divergence (base 2) of output categories.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{ArtifactKind, Bundles, GovernanceBundle};
use crate::canonical;
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::explanation::{explanation_delta, ExplanationArtifact, DEFAULT_TOP_K};
use crate::store::ArtifactStore;
use crate::time::Timestamp;

pub const STRESS_RUNS_STREAM: &str = "stress_runs";
pub const DRIFT_EVALUATIONS_STREAM: &str = "drift_evaluations";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenPrompt {
    pub prompt_id: String,
    pub input: Digest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_category: Option<String>,
    #[serde(default)]
    pub adversarial: bool,
}

/// Content of a golden set; its canonical digest is the set id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenSetSpec {
    pub prompts: Vec<GoldenPrompt>,
    pub rubric: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenPromptSet {
    pub set_id: Digest,
    pub prompts: Vec<GoldenPrompt>,
    pub rubric: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutput {
    pub text: String,
    pub category: String,
    pub refused: bool,
    pub violations: u32,
    pub attribution: ExplanationArtifact,
}

/// Pluggable model invocation. Implementations must be deterministic in
/// `(input, seed, policy_config)`.
pub trait InferenceAdapter: Send + Sync {
    fn infer(&self, input: &[u8], seed: u64, policy_config: &[u8]) -> std::result::Result<InferenceOutput, String>;
}

/// Canned response for one input in a [`StubAdapter`] table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubResponse {
    pub text: String,
    pub category: String,
    #[serde(default)]
    pub refused: bool,
    #[serde(default)]
    pub violations: u32,
    pub attribution: BTreeMap<String, f64>,
}

/// Table-driven deterministic adapter.
///
/// Inputs (as UTF-8 text) listed in `responses` get their canned response;
/// inputs listed in `fail` produce an adapter error; anything else gets a
/// response derived from a hash of input, seed and policy config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubAdapter {
    #[serde(default)]
    pub responses: BTreeMap<String, StubResponse>,
    #[serde(default)]
    pub fail: BTreeSet<String>,
    #[serde(default)]
    pub categories: Vec<String>,
}

impl InferenceAdapter for StubAdapter {
    fn infer(&self, input: &[u8], seed: u64, policy_config: &[u8]) -> std::result::Result<InferenceOutput, String> {
        let text = String::from_utf8_lossy(input);
        if self.fail.contains(text.as_ref()) {
            return Err(format!("stub adapter configured to fail on {text:?}"));
        }
        if let Some(r) = self.responses.get(text.as_ref()) {
            return Ok(InferenceOutput {
                text: r.text.clone(),
                category: r.category.clone(),
                refused: r.refused,
                violations: r.violations,
                attribution: ExplanationArtifact::FeatureAttribution {
                    weights: r.attribution.clone(),
                },
            });
        }
        let h = Digest::of_parts(&[input, &seed.to_be_bytes(), policy_config]);
        let bytes = h.as_bytes();
        let category = if self.categories.is_empty() {
            "answer".to_string()
        } else {
            self.categories[bytes[0] as usize % self.categories.len()].clone()
        };
        let mut weights = BTreeMap::new();
        for (i, token) in text.split_whitespace().take(16).enumerate() {
            let w = (bytes[(i + 1) % 32] as f64 - 127.5) / 127.5;
            weights.insert(token.to_lowercase(), w);
        }
        if weights.is_empty() {
            weights.insert("bias".to_string(), 1.0);
        }
        Ok(InferenceOutput {
            text: format!("{category}: {text}"),
            category,
            refused: false,
            violations: 0,
            attribution: ExplanationArtifact::FeatureAttribution { weights },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptOutput {
    pub prompt_id: String,
    pub adversarial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_text: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_category: Option<String>,
    pub refused: bool,
    pub policy_violations: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<ExplanationArtifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PromptOutput {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// The deterministic, content-addressed part of a stress run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressRunBody {
    pub bundle_id: Digest,
    pub set_id: Digest,
    pub seed: u64,
    pub outputs: Vec<PromptOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressRun {
    /// Digest of the canonical [`StressRunBody`].
    pub run_id: Digest,
    pub bundle_id: Digest,
    pub set_id: Digest,
    pub seed: u64,
    pub outputs: Vec<PromptOutput>,
    pub ran_at: Timestamp,
}

impl StressRun {
    pub fn body(&self) -> StressRunBody {
        StressRunBody {
            bundle_id: self.bundle_id,
            set_id: self.set_id,
            seed: self.seed,
            outputs: self.outputs.clone(),
        }
    }

    pub fn adversarial_count(&self) -> usize {
        self.outputs.iter().filter(|o| o.adversarial).count()
    }

    pub fn adversarial_failures(&self) -> usize {
        self.outputs.iter().filter(|o| o.adversarial && o.failed()).count()
    }

    /// At least one adversarial prompt, and none of them failed.
    pub fn adversarial_clean(&self) -> bool {
        self.adversarial_count() > 0 && self.adversarial_failures() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StressRunEvent {
    pub run_id: Digest,
    pub bundle_id: Digest,
    pub set_id: Digest,
    pub seed: u64,
    pub ran_at: Timestamp,
    pub failures: u64,
    pub adversarial_prompts: u64,
    pub adversarial_failures: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub baseline_run: Digest,
    pub current_run: Digest,
    pub semantic: f64,
    pub behavioral: f64,
    pub probabilistic: f64,
    pub mean_explanation_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftLevel {
    Ok,
    Warn,
    Breach,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub warn: f64,
    pub breach: f64,
}

impl Band {
    pub const DEFAULT: Band = Band { warn: 0.1, breach: 0.3 };

    /// `warn` is inclusive, `breach` is inclusive, everything below `warn` is ok.
    pub fn classify(&self, score: f64) -> DriftLevel {
        if score >= self.breach {
            DriftLevel::Breach
        } else if score >= self.warn {
            DriftLevel::Warn
        } else {
            DriftLevel::Ok
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftThresholds {
    pub semantic: Band,
    pub behavioral: Band,
    pub probabilistic: Band,
}

impl Default for DriftThresholds {
    fn default() -> Self {
        Self {
            semantic: Band::DEFAULT,
            behavioral: Band::DEFAULT,
            probabilistic: Band::DEFAULT,
        }
    }
}

impl DriftThresholds {
    /// Field-level problems, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, band) in [
            ("semantic", self.semantic),
            ("behavioral", self.behavioral),
            ("probabilistic", self.probabilistic),
        ] {
            if !(band.warn.is_finite() && band.breach.is_finite()) || band.warn >= band.breach {
                out.push(format!("drift_thresholds.{name}: warn must be < breach"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftVerdict {
    pub semantic: DriftLevel,
    pub behavioral: DriftLevel,
    pub probabilistic: DriftLevel,
    pub overall: DriftLevel,
}

pub fn evaluate_drift(report: &DriftReport, thresholds: &DriftThresholds) -> DriftVerdict {
    let semantic = thresholds.semantic.classify(report.semantic);
    let behavioral = thresholds.behavioral.classify(report.behavioral);
    let probabilistic = thresholds.probabilistic.classify(report.probabilistic);
    DriftVerdict {
        semantic,
        behavioral,
        probabilistic,
        overall: semantic.max(behavioral).max(probabilistic),
    }
}

/// Jensen–Shannon divergence (log base 2) between two category histograms.
///
/// Computed in count space with the normalizers factored out so that
/// proportional histograms give exactly 0 and disjoint supports exactly 1.
pub fn probabilistic_drift(baseline: &BTreeMap<String, f64>, current: &BTreeMap<String, f64>) -> Result<f64> {
    for h in [baseline, current] {
        if h.values().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidInput("histogram counts must be finite and non-negative".into()));
        }
    }
    let total_a: f64 = baseline.values().sum();
    let total_b: f64 = current.values().sum();
    if total_a <= 0.0 || total_b <= 0.0 {
        return Err(Error::EmptyHistogram);
    }
    let labels: BTreeSet<&String> = baseline.keys().chain(current.keys()).collect();
    let (mut sum_a, mut sum_b) = (0.0f64, 0.0f64);
    for label in labels {
        let a = baseline.get(label).copied().unwrap_or(0.0);
        let b = current.get(label).copied().unwrap_or(0.0);
        // 2·p/(p+q) rewritten over counts: 2·a·B / (a·B + b·A)
        let denom = a * total_b + b * total_a;
        if a > 0.0 {
            sum_a += a * (2.0 * a * total_b / denom).log2();
        }
        if b > 0.0 {
            sum_b += b * (2.0 * b * total_a / denom).log2();
        }
    }
    let jsd = 0.5 * (sum_a / total_a + sum_b / total_b);
    Ok(jsd.clamp(0.0, 1.0))
}

/// Text embedding used for semantic drift.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Bag-of-tokens embedding with feature hashing, L2-normalized.
///
/// Tokens are lowercase alphanumeric runs; each is hashed with FNV-1a into
/// one of `dims` buckets.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dims: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dims: 256 }
    }
}

impl HashingEmbedder {
    pub fn bucket(&self, token: &str) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        (h % self.dims as u64) as usize
    }
}

pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dims];
        for t in tokens(text) {
            v[self.bucket(&t)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// 1 − cosine similarity. Zero vectors are at distance 0 from each other
/// and 1 from any nonzero vector.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
        }
    }
}

fn rate(outputs: &[&PromptOutput], pred: impl Fn(&PromptOutput) -> bool) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    outputs.iter().filter(|o| pred(o)).count() as f64 / outputs.len() as f64
}

fn completed(run: &StressRun) -> Vec<&PromptOutput> {
    run.outputs.iter().filter(|o| !o.failed()).collect()
}

fn ensure_same_set(a: &StressRun, b: &StressRun) -> Result<()> {
    let ids = |r: &StressRun| r.outputs.iter().map(|o| o.prompt_id.clone()).collect::<Vec<_>>();
    if a.set_id != b.set_id || ids(a) != ids(b) {
        return Err(Error::SetMismatch);
    }
    Ok(())
}

/// max(|Δ refusal rate|, |Δ violation rate|) over completed prompts of each run.
pub fn behavioral_drift(baseline: &StressRun, current: &StressRun) -> Result<f64> {
    ensure_same_set(baseline, current)?;
    let (a, b) = (completed(baseline), completed(current));
    let refusal = (rate(&a, |o| o.refused) - rate(&b, |o| o.refused)).abs();
    let violation = (rate(&a, |o| o.policy_violations > 0) - rate(&b, |o| o.policy_violations > 0)).abs();
    Ok(refusal.max(violation))
}

/// Category histogram over completed prompts.
pub fn category_histogram(run: &StressRun) -> BTreeMap<String, f64> {
    let mut h = BTreeMap::new();
    for o in &run.outputs {
        if let (None, Some(c)) = (&o.error, &o.output_category) {
            *h.entry(c.clone()).or_insert(0.0) += 1.0;
        }
    }
    h
}

/// Prompt pairs where both runs completed.
fn completed_pairs<'r>(a: &'r StressRun, b: &'r StressRun) -> Vec<(&'r PromptOutput, &'r PromptOutput)> {
    a.outputs
        .iter()
        .zip(&b.outputs)
        .filter(|(x, y)| !x.failed() && !y.failed())
        .collect()
}

pub struct DriftMonitor<'a> {
    store: &'a ArtifactStore,
}

impl<'a> DriftMonitor<'a> {
    pub fn new(store: &'a ArtifactStore) -> Self {
        Self { store }
    }

    pub fn create_golden_set(&self, spec: GoldenSetSpec) -> Result<GoldenPromptSet> {
        if spec.prompts.is_empty() {
            return Err(Error::InvalidInput("golden set must contain at least one prompt".into()));
        }
        let mut ids = BTreeSet::new();
        for p in &spec.prompts {
            if !ids.insert(p.prompt_id.as_str()) {
                return Err(Error::DuplicateId(p.prompt_id.clone()));
            }
            if !self.store.has_blob(&p.input) {
                return Err(Error::DanglingDigest(p.input));
            }
        }
        if !self.store.has_blob(&spec.rubric) {
            return Err(Error::DanglingDigest(spec.rubric));
        }
        let set_id = self.store.put_blob(&canonical::to_vec(&spec)?)?;
        Ok(GoldenPromptSet {
            set_id,
            prompts: spec.prompts,
            rubric: spec.rubric,
        })
    }

    pub fn golden_set(&self, set_id: &Digest) -> Result<GoldenPromptSet> {
        let bytes = self.store.get_blob(set_id)?;
        let spec: GoldenSetSpec = serde_json::from_slice(&bytes)?;
        Ok(GoldenPromptSet {
            set_id: *set_id,
            prompts: spec.prompts,
            rubric: spec.rubric,
        })
    }

    pub fn run_stress_suite(
        &self,
        bundle: &GovernanceBundle,
        set: &GoldenPromptSet,
        adapter: &dyn InferenceAdapter,
        seed: u64,
    ) -> Result<StressRun> {
        let integrity = Bundles::new(self.store).verify_integrity(&bundle.bundle_id)?;
        if !integrity.ok {
            return Err(Error::IntegrityFailure(bundle.bundle_id));
        }
        let policy = bundle
            .artifact(ArtifactKind::PolicyConfig)
            .ok_or_else(|| Error::MissingRequiredKind(ArtifactKind::PolicyConfig.to_string()))?;
        let policy_bytes = self.store.get_blob(&policy.digest)?;
        let inputs: Vec<Vec<u8>> = set
            .prompts
            .iter()
            .map(|p| self.store.get_blob(&p.input).map_err(|_| Error::DanglingDigest(p.input)))
            .collect::<Result<_>>()?;

        let mut outputs: Vec<PromptOutput> = set
            .prompts
            .par_iter()
            .zip(inputs.par_iter())
            .map(|(prompt, input)| -> Result<PromptOutput> {
                let mut out = PromptOutput {
                    prompt_id: prompt.prompt_id.clone(),
                    adversarial: prompt.adversarial,
                    output_text: None,
                    output_category: None,
                    refused: false,
                    policy_violations: 0,
                    attribution: None,
                    error: None,
                };
                match adapter.infer(input, seed, &policy_bytes) {
                    Ok(inference) => {
                        out.output_text = Some(self.store.put_blob(inference.text.as_bytes())?);
                        out.output_category = Some(inference.category);
                        out.refused = inference.refused;
                        out.policy_violations = inference.violations;
                        out.attribution = Some(inference.attribution);
                    }
                    Err(e) => out.error = Some(e),
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        outputs.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));

        let body = StressRunBody {
            bundle_id: bundle.bundle_id,
            set_id: set.set_id,
            seed,
            outputs,
        };
        let run_id = self.store.put_blob(&canonical::to_vec(&body)?)?;
        let ran_at = self.store.now();
        let run = StressRun {
            run_id,
            bundle_id: body.bundle_id,
            set_id: body.set_id,
            seed,
            outputs: body.outputs,
            ran_at,
        };
        self.store.append_json(
            STRESS_RUNS_STREAM,
            &StressRunEvent {
                run_id,
                bundle_id: run.bundle_id,
                set_id: run.set_id,
                seed,
                ran_at,
                failures: run.outputs.iter().filter(|o| o.failed()).count() as u64,
                adversarial_prompts: run.adversarial_count() as u64,
                adversarial_failures: run.adversarial_failures() as u64,
            },
        )?;
        Ok(run)
    }

    pub fn run_events(&self) -> Result<Vec<StressRunEvent>> {
        self.store
            .read_events_or_empty(STRESS_RUNS_STREAM)?
            .iter()
            .map(|e| e.decode())
            .collect()
    }

    pub fn run(&self, run_id: &Digest) -> Result<StressRun> {
        let event = self
            .run_events()?
            .into_iter()
            .find(|e| e.run_id == *run_id)
            .ok_or_else(|| Error::NotFound(format!("stress run {run_id}")))?;
        let body: StressRunBody = serde_json::from_slice(&self.store.get_blob(run_id)?)?;
        Ok(StressRun {
            run_id: *run_id,
            bundle_id: body.bundle_id,
            set_id: body.set_id,
            seed: body.seed,
            outputs: body.outputs,
            ran_at: event.ran_at,
        })
    }

    /// Most recent run recorded for a bundle.
    pub fn latest_run_for(&self, bundle_id: &Digest) -> Result<Option<StressRunEvent>> {
        Ok(self.run_events()?.into_iter().rev().find(|e| e.bundle_id == *bundle_id))
    }

    fn output_text(&self, o: &PromptOutput) -> Result<String> {
        match &o.output_text {
            Some(d) => Ok(String::from_utf8_lossy(&self.store.get_blob(d)?).into_owned()),
            None => Ok(String::new()),
        }
    }

    pub fn semantic_drift(&self, baseline: &StressRun, current: &StressRun, embedder: &dyn Embedder) -> Result<f64> {
        ensure_same_set(baseline, current)?;
        let pairs = completed_pairs(baseline, current);
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (a, b) in &pairs {
            let ea = embedder.embed(&self.output_text(a)?);
            let eb = embedder.embed(&self.output_text(b)?);
            total += cosine_distance(&ea, &eb);
        }
        Ok(total / pairs.len() as f64)
    }

    /// Mean explanation delta score across prompts completed in both runs.
    pub fn mean_explanation_delta(&self, baseline: &StressRun, current: &StressRun, k: usize) -> Result<f64> {
        ensure_same_set(baseline, current)?;
        let pairs = completed_pairs(baseline, current);
        let mut scores = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            if let (Some(ea), Some(eb)) = (&a.attribution, &b.attribution) {
                let report = explanation_delta(ea, eb, k, |d| {
                    Ok(String::from_utf8_lossy(&self.store.get_blob(d)?).into_owned())
                })?;
                scores.push(report.delta_score);
            }
        }
        if scores.is_empty() {
            return Ok(0.0);
        }
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    pub fn drift_report(&self, baseline: &StressRun, current: &StressRun, embedder: &dyn Embedder) -> Result<DriftReport> {
        ensure_same_set(baseline, current)?;
        Ok(DriftReport {
            baseline_run: baseline.run_id,
            current_run: current.run_id,
            semantic: self.semantic_drift(baseline, current, embedder)?,
            behavioral: behavioral_drift(baseline, current)?,
            probabilistic: probabilistic_drift(&category_histogram(baseline), &category_histogram(current))?,
            mean_explanation_delta: self.mean_explanation_delta(baseline, current, DEFAULT_TOP_K)?,
        })
    }
}
