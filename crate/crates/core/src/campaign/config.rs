use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::harness::sibling_binary;
use crate::evaluator::{EvaluationSettings, HarnessConfig, MockFunction};
use crate::moo::GaConfig;
use crate::space::{builtin_space, Allocator, ParameterSpace};

pub const DRIVER_BINARY: &str = "alloctune-driver";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSection {
    #[serde(flatten)]
    pub settings: EvaluationSettings,
    /// Seed of the synthetic schedule replayed by every candidate.
    pub workload_seed: u64,
    /// Write to every allocated byte so pages are actually committed.
    pub touch: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessSection {
    /// Driver executable; defaults to the one installed next to `alloctune`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub driver: Option<PathBuf>,
    #[serde(flatten)]
    pub templates: HarnessConfig,
}

/// Replaces process measurement with an analytic objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockSection {
    pub function: MockFunction,
}

/// One optimization campaign, as read from TOML.
///
/// Relative paths are resolved against the directory holding the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub allocator: Allocator,
    /// Workload profile; not needed with `[mock]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<PathBuf>,
    pub output: PathBuf,
    /// Custom parameter-space table instead of the built-in one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preload_library: Option<String>,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub harness: HarnessSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockSection>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("campaign config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Reads `path` and makes every relative path in it absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("no such config file: {}", path.display())),
            _ => Error::io(path, e),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let base = std::path::absolute(&base).map_err(|e| Error::io(&base, e))?;
        resolve(&base, &mut cfg.output);
        for p in [&mut cfg.profile, &mut cfg.space, &mut cfg.harness.driver]
            .into_iter()
            .flatten()
        {
            resolve(&base, p);
        }
        Ok(cfg)
    }

    /// Checks settings and that every referenced input exists.
    pub fn check(&self) -> Result<()> {
        self.ga.check()?;
        self.evaluation.settings.check()?;
        let must_exist = |what: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} not found: {}", p.display())))
            }
        };
        if let Some(s) = &self.space {
            must_exist("space file", s)?;
        }
        if self.mock.is_none() {
            match &self.profile {
                Some(p) => must_exist("workload profile", p)?,
                None => return Err(Error::Config("`profile` is required unless [mock] is set".into())),
            }
            if let Some(d) = &self.harness.driver {
                must_exist("driver", d)?;
            }
        }
        let space = self.parameter_space()?;
        if space.allocator != self.allocator {
            return Err(Error::Config(format!(
                "space file is for {} but the campaign targets {}",
                space.allocator, self.allocator
            )));
        }
        Ok(())
    }

    pub fn parameter_space(&self) -> Result<ParameterSpace> {
        let space = match &self.space {
            Some(p) => ParameterSpace::load(p)?,
            None => builtin_space(self.allocator),
        };
        Ok(match &self.preload_library {
            Some(lib) => space.with_preload(lib.clone()),
            None => space,
        })
    }

    pub fn driver(&self) -> Result<PathBuf> {
        match &self.harness.driver {
            Some(d) => Ok(d.clone()),
            None => sibling_binary(DRIVER_BINARY).ok_or_else(|| {
                Error::Config(format!(
                    "cannot find `{DRIVER_BINARY}` next to this executable; set harness.driver"
                ))
            }),
        }
    }

    /// Whether two configurations describe the same search, ignoring the
    /// generation limit and time budget (which a resume may extend).
    pub fn same_search(&self, other: &CampaignConfig) -> bool {
        let strip = |c: &CampaignConfig| {
            let mut c = c.clone();
            c.ga.generations = 0;
            c.ga.time_budget_seconds = None;
            c
        };
        strip(self) == strip(other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
allocator = "glibc"
profile = "profile.toml"
output = "runs/first"

[ga]
population_size = 8
generations = 10
seed = 3

[evaluation]
repetitions = 1
parallelism = 2
workload_seed = 42
touch = true

[harness]
timing_source = "posix"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = CampaignConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.ga.population_size, 8);
        assert_eq!(cfg.ga.crossover_probability, 0.9);
        assert_eq!(cfg.evaluation.settings.parallelism, 2);
        assert_eq!(cfg.evaluation.settings.timeout_seconds, 300.0);
        assert_eq!(cfg.evaluation.workload_seed, 42);
        assert!(cfg.evaluation.touch);
        assert_eq!(cfg.harness.templates.timing_source, crate::evaluator::TimingSource::Posix);
        let again = CampaignConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, SAMPLE).unwrap();
        let cfg = CampaignConfig::load(&path).unwrap();
        assert_eq!(cfg.output, dir.path().join("runs/first"));
        assert_eq!(cfg.profile.as_deref(), Some(dir.path().join("profile.toml").as_path()));
        // the profile does not exist yet
        assert!(cfg.check().is_err());
        std::fs::write(dir.path().join("profile.toml"), "").unwrap();
        cfg.check().unwrap();
    }

    #[test]
    fn unknown_keys_and_missing_profile_are_rejected() {
        assert!(CampaignConfig::from_toml("allocator = \"glibc\"\noutput = \"x\"\nbogus = 1\n").is_err());
        let cfg = CampaignConfig::from_toml("allocator = \"glibc\"\noutput = \"x\"\n").unwrap();
        assert!(cfg.check().is_err());
        let mock = CampaignConfig::from_toml("allocator = \"glibc\"\noutput = \"x\"\n[mock]\nfunction = \"zdt1\"\n").unwrap();
        mock.check().unwrap();
    }
}
