//! Service configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::drift::DriftThresholds;
use crate::error::{Error, Result};
use crate::escalation::EscalationPolicy;
use crate::gate::ApprovalTable;
use crate::telemetry::{DetectorConfig, OwnerRoutes};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7317";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub listen_address: String,
    pub owner_routes: OwnerRoutes,
    pub drift_thresholds: DriftThresholds,
    pub approval_table: ApprovalTable,
    pub detector_config: DetectorConfig,
    pub escalation_policy: EscalationPolicy,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("stackd-data"),
            listen_address: DEFAULT_LISTEN.to_string(),
            owner_routes: OwnerRoutes::default(),
            drift_thresholds: DriftThresholds::default(),
            approval_table: ApprovalTable::default(),
            detector_config: DetectorConfig::default(),
            escalation_policy: EscalationPolicy::default(),
        }
    }
}

impl ServiceConfig {
    pub fn with_data_dir(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Apply `STACKD_DATA_DIR` and `STACKD_LISTEN` overrides.
    pub fn apply_env(mut self) -> Self {
        if let Some(dir) = std::env::var_os("STACKD_DATA_DIR") {
            self.data_dir = dir.into();
        }
        if let Ok(listen) = std::env::var("STACKD_LISTEN") {
            self.listen_address = listen;
        }
        self
    }

    /// Field-level problems, empty when the configuration is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.data_dir.as_os_str().is_empty() {
            out.push("data_dir: must be non-empty".to_string());
        }
        match self.listen_address.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => {}
            _ => out.push(format!("listen_address: {:?} is not host:port", self.listen_address)),
        }
        for (kind, owner) in &self.owner_routes.owners {
            if owner.trim().is_empty() {
                out.push(format!("owner_routes.owners.{kind}: owner must be non-empty"));
            }
        }
        out.extend(self.drift_thresholds.problems());
        out.extend(self.detector_config.problems());
        out.extend(self.escalation_policy.problems());
        for (env, counts) in [("staging", self.approval_table.staging), ("prod", self.approval_table.prod)] {
            if counts.windows(2).any(|w| w[0] > w[1]) {
                out.push(format!("approval_table.{env}: counts must not decrease with tier"));
            }
        }
        if self
            .approval_table
            .staging
            .iter()
            .zip(&self.approval_table.prod)
            .any(|(s, p)| s > p)
        {
            out.push("approval_table: staging may not require more approvals than prod".to_string());
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert!(ServiceConfig::default().problems().is_empty());
    }

    #[test]
    fn field_level_reasons() {
        let mut c = ServiceConfig::default();
        c.detector_config.warn_z = 6.0;
        c.listen_address = "nowhere".into();
        let problems = c.problems();
        assert_eq!(problems.len(), 2, "{problems:?}");
        assert!(problems.iter().any(|p| p.starts_with("detector_config.warn_z")));
        assert!(problems.iter().any(|p| p.starts_with("listen_address")));
        assert_eq!(c.validate().unwrap_err().code(), "invalid-config");
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c: ServiceConfig = serde_json::from_str(r#"{"data_dir":"/tmp/x"}"#).unwrap();
        assert_eq!(c.listen_address, DEFAULT_LISTEN);
        assert_eq!(c.approval_table, ApprovalTable::default());
        assert!(serde_json::from_str::<ServiceConfig>(r#"{"bogus":1}"#).is_err());
    }
}
