//! Governance bundles: versioned, content-addressed bindings of the model,
//! datasets, policy configuration, prompt sets and evaluation rubric that
//! together define a governed deployment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::canonical;
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::store::ArtifactStore;
use crate::time::Timestamp;

pub const BUNDLES_STREAM: &str = "bundles";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SemVer {
    pub major: u64,
    pub minor: u64,
    pub patch: u64,
}

impl SemVer {
    pub const fn new(major: u64, minor: u64, patch: u64) -> Self {
        Self { major, minor, patch }
    }
}

impl fmt::Display for SemVer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

impl FromStr for SemVer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('.').collect();
        let bad = || Error::InvalidInput(format!("invalid version {s:?}, expected MAJOR.MINOR.PATCH"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let num = |p: &str| -> Result<u64> {
            if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) || (p.len() > 1 && p.starts_with('0')) {
                return Err(bad());
            }
            p.parse().map_err(|_| bad())
        };
        Ok(SemVer::new(num(parts[0])?, num(parts[1])?, num(parts[2])?))
    }
}

impl Serialize for SemVer {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SemVer {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Model,
    Dataset,
    PolicyConfig,
    PromptSet,
    EvalRubric,
    ExplanationConfig,
}

impl ArtifactKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArtifactKind::Model => "model",
            ArtifactKind::Dataset => "dataset",
            ArtifactKind::PolicyConfig => "policy_config",
            ArtifactKind::PromptSet => "prompt_set",
            ArtifactKind::EvalRubric => "eval_rubric",
            ArtifactKind::ExplanationConfig => "explanation_config",
        }
    }

    /// Version component a change to this kind of artifact forces.
    pub fn bump(&self) -> Bump {
        match self {
            ArtifactKind::Model | ArtifactKind::PolicyConfig => Bump::Major,
            ArtifactKind::Dataset | ArtifactKind::PromptSet => Bump::Minor,
            ArtifactKind::EvalRubric | ArtifactKind::ExplanationConfig => Bump::Patch,
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub kind: ArtifactKind,
    pub name: String,
    pub digest: Digest,
}

/// The hashed portion of a bundle. `bundle_id` is the digest of its canonical JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: SemVer,
    pub capability_tier: u8,
    pub artifacts: Vec<ArtifactRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<Digest>,
}

impl BundleManifest {
    /// Sort artifacts so that equal artifact sets always serialize identically.
    pub fn normalized(mut self) -> Self {
        self.artifacts.sort();
        self
    }

    pub fn digest(&self) -> Result<Digest> {
        canonical::digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GovernanceBundle {
    pub bundle_id: Digest,
    pub version: SemVer,
    pub capability_tier: u8,
    pub artifacts: Vec<ArtifactRef>,
    pub created_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<Digest>,
}

impl GovernanceBundle {
    pub fn manifest(&self) -> BundleManifest {
        BundleManifest {
            version: self.version,
            capability_tier: self.capability_tier,
            artifacts: self.artifacts.clone(),
            parent: self.parent,
        }
        .normalized()
    }

    pub fn artifact(&self, kind: ArtifactKind) -> Option<&ArtifactRef> {
        self.artifacts.iter().find(|a| a.kind == kind)
    }

    pub fn artifacts_of(&self, kind: ArtifactKind) -> impl Iterator<Item = &ArtifactRef> {
        self.artifacts.iter().filter(move |a| a.kind == kind)
    }

    pub fn lists_digest(&self, digest: &Digest) -> bool {
        self.artifacts.iter().any(|a| a.digest == *digest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bump {
    None,
    Patch,
    Minor,
    Major,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactChange {
    pub kind: ArtifactKind,
    pub name: String,
    pub from: Digest,
    pub to: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleDiff {
    pub added: Vec<ArtifactRef>,
    pub removed: Vec<ArtifactRef>,
    pub changed: Vec<ArtifactChange>,
    pub bump: Bump,
}

impl BundleDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.changed.is_empty()
    }
}

/// Compare the artifact sets of two bundles, keyed by (kind, name).
///
/// The recommended bump is the maximum over every added, removed or changed
/// artifact of the bump its kind forces.
pub fn diff_bundles(a: &GovernanceBundle, b: &GovernanceBundle) -> BundleDiff {
    let index = |bundle: &GovernanceBundle| -> BTreeMap<(ArtifactKind, String), ArtifactRef> {
        bundle
            .artifacts
            .iter()
            .map(|r| ((r.kind, r.name.clone()), r.clone()))
            .collect()
    };
    let left = index(a);
    let right = index(b);
    let mut diff = BundleDiff {
        added: Vec::new(),
        removed: Vec::new(),
        changed: Vec::new(),
        bump: Bump::None,
    };
    for (key, r) in &right {
        match left.get(key) {
            None => diff.added.push(r.clone()),
            Some(l) if l.digest != r.digest => diff.changed.push(ArtifactChange {
                kind: r.kind,
                name: r.name.clone(),
                from: l.digest,
                to: r.digest,
            }),
            Some(_) => {}
        }
    }
    for (key, l) in &left {
        if !right.contains_key(key) {
            diff.removed.push(l.clone());
        }
    }
    diff.bump = diff
        .added
        .iter()
        .chain(&diff.removed)
        .map(|r| r.kind.bump())
        .chain(diff.changed.iter().map(|c| c.kind.bump()))
        .max()
        .unwrap_or(Bump::None);
    diff
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactStatus {
    Resolved,
    Dangling,
    Corrupt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactCheck {
    pub artifact: ArtifactRef,
    pub status: ArtifactStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub bundle_id: Digest,
    pub id_match: bool,
    pub manifest_stored: bool,
    pub artifacts: Vec<ArtifactCheck>,
    pub ok: bool,
}

/// How to pick a bundle: exact id, or a version optionally narrowed by the
/// name of the bundle's model artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BundleSelector {
    Id(Digest),
    Version { name: Option<String>, version: SemVer },
}

impl FromStr for BundleSelector {
    type Err = Error;

    /// Accepts `<64-hex id>`, `<version>` or `<model-name>@<version>`.
    fn from_str(s: &str) -> Result<Self> {
        if let Ok(d) = s.parse::<Digest>() {
            return Ok(BundleSelector::Id(d));
        }
        match s.rsplit_once('@') {
            Some((name, version)) => Ok(BundleSelector::Version {
                name: Some(name.to_string()),
                version: version.parse()?,
            }),
            None => Ok(BundleSelector::Version {
                name: None,
                version: s.parse()?,
            }),
        }
    }
}

/// Bundle operations over an artifact store.
pub struct Bundles<'a> {
    store: &'a ArtifactStore,
}

impl<'a> Bundles<'a> {
    pub fn new(store: &'a ArtifactStore) -> Self {
        Self { store }
    }

    pub fn list(&self) -> Result<Vec<GovernanceBundle>> {
        self.store
            .read_events_or_empty(BUNDLES_STREAM)?
            .iter()
            .map(|e| e.decode())
            .collect()
    }

    pub fn get(&self, bundle_id: &Digest) -> Result<Option<GovernanceBundle>> {
        Ok(self.list()?.into_iter().find(|b| b.bundle_id == *bundle_id))
    }

    pub fn require(&self, bundle_id: &Digest) -> Result<GovernanceBundle> {
        self.get(bundle_id)?
            .ok_or_else(|| Error::UnknownBundle(bundle_id.to_string()))
    }

    pub fn create(&self, manifest: BundleManifest) -> Result<GovernanceBundle> {
        let manifest = manifest.normalized();
        if !(1..=4).contains(&manifest.capability_tier) {
            return Err(Error::TierOutOfRange(manifest.capability_tier as i64));
        }
        let mut seen = BTreeSet::new();
        for a in &manifest.artifacts {
            if a.name.is_empty() {
                return Err(Error::InvalidInput("artifact name must be non-empty".into()));
            }
            if !seen.insert((a.kind, a.name.as_str())) {
                return Err(Error::DuplicateKindName {
                    kind: a.kind.to_string(),
                    name: a.name.clone(),
                });
            }
        }
        for required in [ArtifactKind::Model, ArtifactKind::PolicyConfig] {
            if !manifest.artifacts.iter().any(|a| a.kind == required) {
                return Err(Error::MissingRequiredKind(required.to_string()));
            }
        }
        if let Some(a) = manifest.artifacts.iter().find(|a| !self.store.has_blob(&a.digest)) {
            return Err(Error::DanglingDigest(a.digest));
        }
        if let Some(parent_id) = &manifest.parent {
            let parent = self.require(parent_id)?;
            if manifest.version <= parent.version {
                return Err(Error::NonMonotonicVersion {
                    version: manifest.version.to_string(),
                    parent_version: parent.version.to_string(),
                });
            }
        }
        let manifest_bytes = canonical::to_vec(&manifest)?;
        let bundle_id = self.store.put_blob(&manifest_bytes)?;
        if let Some(existing) = self.get(&bundle_id)? {
            return Ok(existing);
        }
        let bundle = GovernanceBundle {
            bundle_id,
            version: manifest.version,
            capability_tier: manifest.capability_tier,
            artifacts: manifest.artifacts,
            created_at: self.store.now(),
            parent: manifest.parent,
        };
        self.store.append_json(BUNDLES_STREAM, &bundle)?;
        Ok(bundle)
    }

    pub fn verify_integrity(&self, bundle_id: &Digest) -> Result<IntegrityReport> {
        let bundle = self.require(bundle_id)?;
        let id_match = bundle.manifest().digest()? == *bundle_id;
        let manifest_stored = self.store.get_blob(bundle_id).is_ok();
        let artifacts: Vec<ArtifactCheck> = bundle
            .artifacts
            .iter()
            .map(|a| {
                let status = match self.store.get_blob(&a.digest) {
                    Ok(_) => ArtifactStatus::Resolved,
                    Err(Error::IntegrityViolation { .. }) => ArtifactStatus::Corrupt,
                    Err(_) => ArtifactStatus::Dangling,
                };
                ArtifactCheck {
                    artifact: a.clone(),
                    status,
                }
            })
            .collect();
        let ok = id_match
            && manifest_stored
            && artifacts.iter().all(|c| c.status == ArtifactStatus::Resolved);
        Ok(IntegrityReport {
            bundle_id: *bundle_id,
            id_match,
            manifest_stored,
            artifacts,
            ok,
        })
    }

    pub fn resolve(&self, selector: &BundleSelector) -> Result<GovernanceBundle> {
        match selector {
            BundleSelector::Id(id) => self
                .get(id)?
                .ok_or_else(|| Error::NotFound(format!("bundle {id}"))),
            BundleSelector::Version { name, version } => {
                let matches: Vec<GovernanceBundle> = self
                    .list()?
                    .into_iter()
                    .filter(|b| b.version == *version)
                    .filter(|b| match name {
                        Some(n) => b.artifacts_of(ArtifactKind::Model).any(|m| &m.name == n),
                        None => true,
                    })
                    .collect();
                match matches.len() {
                    0 => Err(Error::NotFound(format!("bundle version {version}"))),
                    1 => Ok(matches.into_iter().next().expect("one match")),
                    _ => Err(Error::AmbiguousSelector(
                        matches.iter().map(|b| b.bundle_id).collect(),
                    )),
                }
            }
        }
    }
}
