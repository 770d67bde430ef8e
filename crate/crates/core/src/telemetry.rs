//! Telemetry ingestion, windowed aggregation, EWMA anomaly detection and
//! routing of alerts to named owners.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::store::ArtifactStore;
use crate::time::Timestamp;

pub const ALERTS_STREAM: &str = "alerts";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    InferencePattern,
    RefusalRate,
    LatencyMs,
    PolicyViolation,
    RetrievalFailure,
}

impl SignalKind {
    pub const ALL: [SignalKind; 5] = [
        SignalKind::InferencePattern,
        SignalKind::RefusalRate,
        SignalKind::LatencyMs,
        SignalKind::PolicyViolation,
        SignalKind::RetrievalFailure,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SignalKind::InferencePattern => "inference_pattern",
            SignalKind::RefusalRate => "refusal_rate",
            SignalKind::LatencyMs => "latency_ms",
            SignalKind::PolicyViolation => "policy_violation",
            SignalKind::RetrievalFailure => "retrieval_failure",
        }
    }

    pub fn stream(&self) -> String {
        format!("telemetry/{}", self.as_str())
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SignalKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown signal kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySignal {
    pub kind: SignalKind,
    pub value: f64,
    pub bundle_id: Digest,
    pub observed_at: Timestamp,
}

impl TelemetrySignal {
    pub fn validate(&self) -> Result<()> {
        let v = self.value;
        let bad = |why: &str| Err(Error::InvalidSignal(format!("{} value {v}: {why}", self.kind)));
        if !v.is_finite() {
            return bad("must be finite");
        }
        match self.kind {
            SignalKind::InferencePattern => Ok(()),
            SignalKind::RefusalRate if !(0.0..=1.0).contains(&v) => bad("rate must lie in [0, 1]"),
            SignalKind::LatencyMs if v < 0.0 => bad("latency must be non-negative"),
            SignalKind::PolicyViolation | SignalKind::RetrievalFailure if v < 0.0 || v.fract() != 0.0 => {
                bad("count must be a non-negative integer")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Timestamp,
    pub end: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    pub mean_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub warn_z: f64,
    pub critical_z: f64,
    pub warmup: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            warn_z: 3.0,
            critical_z: 5.0,
            warmup: 10,
        }
    }
}

impl DetectorConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            out.push("detector_config.alpha: must lie in (0, 1)".to_string());
        }
        if !(self.warn_z.is_finite() && self.warn_z > 0.0) {
            out.push("detector_config.warn_z: must be positive".to_string());
        }
        if self.warn_z.partial_cmp(&self.critical_z) != Some(std::cmp::Ordering::Less) || !self.critical_z.is_finite() {
            out.push("detector_config.warn_z: must be < critical_z".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warn,
    Critical,
}

/// One threshold crossing found by [`ewma_scan`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub index: usize,
    pub z: f64,
    pub observed: f64,
    pub expected: f64,
    pub severity: Severity,
}

/// EWMA mean/variance z-score scan.
///
/// `m₀ = x₀, v₀ = 0`; each later point is scored against the previous state,
/// `z = (xₜ − mₜ₋₁)/√vₜ₋₁`, before the state is updated. Points inside the
/// warmup window and points scored against zero variance never alert.
pub fn ewma_scan(values: &[f64], config: &DetectorConfig) -> Vec<Detection> {
    let mut out = Vec::new();
    let Some((&first, rest)) = values.split_first() else {
        return out;
    };
    let alpha = config.alpha;
    let mut mean = first;
    let mut var = 0.0f64;
    for (i, &x) in rest.iter().enumerate() {
        let index = i + 1;
        let dev = x - mean;
        if var > 0.0 && index as u64 >= config.warmup {
            let z = dev / var.sqrt();
            if z.abs() >= config.warn_z {
                out.push(Detection {
                    index,
                    z,
                    observed: x,
                    expected: mean,
                    severity: if z.abs() >= config.critical_z {
                        Severity::Critical
                    } else {
                        Severity::Warn
                    },
                });
            }
        }
        mean = alpha * x + (1.0 - alpha) * mean;
        var = alpha * dev * dev + (1.0 - alpha) * var;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyAlert {
    pub alert_id: String,
    pub kind: SignalKind,
    pub bundle_id: Digest,
    pub offset: u64,
    pub window_end: Timestamp,
    pub z_score: f64,
    pub observed: f64,
    pub expected: f64,
    pub severity: Severity,
}

/// Owner per signal kind plus the ordered escalation path used for critical alerts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerRoutes {
    #[serde(default)]
    pub owners: BTreeMap<SignalKind, String>,
    #[serde(default)]
    pub escalation_path: Vec<String>,
}

impl OwnerRoutes {
    pub fn owner(&self, kind: SignalKind) -> Option<&str> {
        self.owners
            .get(&kind)
            .map(String::as_str)
            .filter(|o| !o.trim().is_empty())
    }

    /// Every signal kind has a named owner.
    pub fn covers_all(&self) -> bool {
        SignalKind::ALL.iter().all(|k| self.owner(*k).is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedAlert {
    pub alert: AnomalyAlert,
    pub owner: String,
    pub escalation_path: Vec<String>,
}

pub fn route(alert: &AnomalyAlert, routes: &OwnerRoutes) -> Result<RoutedAlert> {
    let owner = routes
        .owner(alert.kind)
        .ok_or_else(|| Error::NoOwner(alert.kind.to_string()))?;
    let escalation_path = match alert.severity {
        Severity::Critical => routes.escalation_path.clone(),
        Severity::Warn => Vec::new(),
    };
    Ok(RoutedAlert {
        alert: alert.clone(),
        owner: owner.to_string(),
        escalation_path,
    })
}

pub struct Telemetry<'a> {
    store: &'a ArtifactStore,
}

impl<'a> Telemetry<'a> {
    pub fn new(store: &'a ArtifactStore) -> Self {
        Self { store }
    }

    /// Validate and append; returns the signal's offset in its kind stream.
    pub fn ingest(&self, signal: &TelemetrySignal) -> Result<u64> {
        signal.validate()?;
        self.store.append_json(&signal.kind.stream(), signal)
    }

    /// Signals of one kind with their stream offsets, in offset order.
    pub fn signals(&self, kind: SignalKind) -> Result<Vec<(u64, TelemetrySignal)>> {
        self.store
            .read_events_or_empty(&kind.stream())?
            .iter()
            .map(|e| Ok((e.offset, e.decode()?)))
            .collect()
    }

    pub fn aggregate(&self, kind: SignalKind, window: TimeWindow) -> Result<WindowStats> {
        if window.end <= window.start {
            return Err(Error::InvalidWindow);
        }
        let values: Vec<f64> = self
            .signals(kind)?
            .into_iter()
            .map(|(_, s)| s)
            .filter(|s| s.observed_at >= window.start && s.observed_at < window.end)
            .map(|s| s.value)
            .collect();
        if values.is_empty() {
            return Ok(WindowStats {
                count: 0,
                mean: None,
                min: None,
                max: None,
                mean_undefined: true,
            });
        }
        Ok(WindowStats {
            count: values.len() as u64,
            mean: Some(values.iter().sum::<f64>() / values.len() as f64),
            min: values.iter().copied().reduce(f64::min),
            max: values.iter().copied().reduce(f64::max),
            mean_undefined: false,
        })
    }

    /// Run the detector over each bundle's signal sequence of `kind`.
    pub fn detect_anomalies(&self, kind: SignalKind, config: &DetectorConfig) -> Result<Vec<AnomalyAlert>> {
        config.validate()?;
        let mut per_bundle: BTreeMap<Digest, Vec<(u64, TelemetrySignal)>> = BTreeMap::new();
        for (offset, s) in self.signals(kind)? {
            per_bundle.entry(s.bundle_id).or_default().push((offset, s));
        }
        let mut alerts = Vec::new();
        for (bundle_id, series) in per_bundle {
            let values: Vec<f64> = series.iter().map(|(_, s)| s.value).collect();
            for d in ewma_scan(&values, config) {
                let (offset, signal) = &series[d.index];
                let alert_key = canonical::digest(&(kind, bundle_id, *offset))?;
                alerts.push(AnomalyAlert {
                    alert_id: format!("al-{}", alert_key.short(16)),
                    kind,
                    bundle_id,
                    offset: *offset,
                    window_end: signal.observed_at,
                    z_score: d.z,
                    observed: d.observed,
                    expected: d.expected,
                    severity: d.severity,
                });
            }
        }
        alerts.sort_by_key(|a| a.offset);
        Ok(alerts)
    }

    /// Bind an alert to its owner and persist it. Ownerless alerts are an error.
    pub fn route_alert(&self, alert: &AnomalyAlert, routes: &OwnerRoutes) -> Result<RoutedAlert> {
        let routed = route(alert, routes)?;
        self.store.append_json(ALERTS_STREAM, &routed)?;
        Ok(routed)
    }

    pub fn alerts(&self) -> Result<Vec<RoutedAlert>> {
        self.store
            .read_events_or_empty(ALERTS_STREAM)?
            .iter()
            .map(|e| e.decode())
            .collect()
    }
}
