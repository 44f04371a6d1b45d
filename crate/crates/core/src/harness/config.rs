use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assignment::{AssignMode, ControllerConfig};
use crate::env::{EnvConfig, Schedule};
use crate::error::{Error, Result};
use crate::group::GroupSpec;
use crate::policy::{Architecture, PolicyConfig};
use crate::ppo::PpoConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "covers")]
    Covers,
    #[serde(rename = "covers_gt")]
    CoversGt,
    #[serde(rename = "covers_cnn")]
    CoversCnn,
    #[serde(rename = "equi")]
    Equi,
    #[serde(rename = "cnn")]
    Cnn,
    /// Reserved; not implemented.
    #[serde(rename = "3rl")]
    ThreeRl,
    /// Reserved; not implemented.
    #[serde(rename = "clear")]
    Clear,
}

impl Method {
    pub const IMPLEMENTED: [Method; 5] = [Method::Covers, Method::CoversGt, Method::CoversCnn, Method::Equi, Method::Cnn];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Covers => "covers",
            Method::CoversGt => "covers_gt",
            Method::CoversCnn => "covers_cnn",
            Method::Equi => "equi",
            Method::Cnn => "cnn",
            Method::ThreeRl => "3rl",
            Method::Clear => "clear",
        }
    }

    /// Network family and assignment rule.
    pub fn setup(&self) -> Result<(Architecture, AssignMode)> {
        Ok(match self {
            Method::Covers => (Architecture::Equivariant, AssignMode::Wasserstein),
            Method::CoversGt => (Architecture::Equivariant, AssignMode::GroundTruth),
            Method::CoversCnn => (Architecture::Cnn, AssignMode::Wasserstein),
            Method::Equi => (Architecture::Equivariant, AssignMode::Single),
            Method::Cnn => (Architecture::Cnn, AssignMode::Single),
            Method::ThreeRl | Method::Clear => return Err(Error::NotImplemented(self.name().into())),
        })
    }

    pub fn uses_assignment(&self) -> bool {
        matches!(self, Method::Covers | Method::CoversGt | Method::CoversCnn)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown method `{s}`")))
    }
}

/// A schedule given inline or as a path relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSource {
    Path(PathBuf),
    Inline(Schedule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    /// Defaults to `cycles` passes over the four groups.
    pub schedule: Option<ScheduleSource>,
    pub episodes_per_phase: usize,
    pub cycles: usize,
    pub seeds: Vec<u64>,
    pub group: GroupSpec,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub ppo: PpoConfig,
    pub controller: ControllerConfig,
    /// Save every policy's parameters at the end of each seed.
    pub checkpoints: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Covers,
            schedule: None,
            episodes_per_phase: 200,
            cycles: 2,
            seeds: vec![0, 1, 2],
            group: GroupSpec::d2(),
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            ppo: PpoConfig::default(),
            controller: ControllerConfig::default(),
            checkpoints: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(ScheduleSource::Path(p)) = &cfg.schedule {
            let resolved = match path.parent() {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p.clone(),
            };
            cfg.schedule = Some(ScheduleSource::Inline(Schedule::load(&resolved)?));
        }
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<Schedule> {
        match &self.schedule {
            None => Ok(Schedule::default_cycles(self.episodes_per_phase, self.cycles)),
            Some(ScheduleSource::Inline(s)) => Ok(s.clone()),
            Some(ScheduleSource::Path(p)) => Schedule::load(p),
        }
    }

    /// Checks everything that can fail before training starts.
    pub fn validate(&self) -> Result<()> {
        self.method.setup()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.env.validate()?;
        self.ppo.validate()?;
        self.controller.validate()?;
        self.policy.extractor.validate()?;
        if self.policy.extractor.grid != self.env.grid {
            return Err(Error::Config(format!(
                "extractor grid {} differs from environment grid {}",
                self.policy.extractor.grid, self.env.grid
            )));
        }
        self.schedule()?.validate(self.group)
    }
}
