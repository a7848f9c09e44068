use std::path::{Path, PathBuf};

use lowshot::benchmark::BenchmarkConfig;
use lowshot::dataset::SyntheticSpec;
use lowshot::theory::TheoryConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// The `--config` file. Every section is optional and falls back to the
/// library defaults; unknown keys are errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub synthetic: SyntheticSpec,
    pub benchmark: BenchmarkConfig,
    pub verify: TheoryConfig,
    pub paths: Paths,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory holding `train.lsf`, `test.lsf` and `split.json`; defaults
    /// to the `world` directory under `--out`.
    pub data: Option<PathBuf>,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Failure::Config(format!("at `{path}`: {}", e.into_inner().message().trim()))
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// `--seed` replaces the master seed, which also seeds the synthetic
    /// world and the verification suites.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.benchmark.master_seed = s;
            self.verify.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let section = |name: &str, r: lowshot::Result<()>| r.map_err(|e| Failure::Config(format!("at `{name}`: {e}")));
        section("synthetic", self.synthetic.validate())?;
        section("benchmark.representation", self.benchmark.representation.validate())?;
        section("benchmark.hallucinator.generator", self.benchmark.hallucinator.generator.validate())?;
        section("benchmark.hallucinator.clusters", self.benchmark.hallucinator.clusters.validate())?;
        section("benchmark.classifier", self.benchmark.classifier.validate())?;
        section("benchmark", self.benchmark.validate())?;
        if let Some(d) = &self.paths.data {
            if !d.is_dir() {
                return Err(Failure::Config(format!("at `paths.data`: {} is not a directory", d.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfigFile::parse("").unwrap(), RunConfigFile::default());
    }

    #[test]
    fn shipped_default_config_matches_library_defaults() {
        let text = include_str!("../../../configs/default.toml");
        assert_eq!(RunConfigFile::parse(text).unwrap(), RunConfigFile::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfigFile::default().with_seed(Some(12));
        c.paths.data = Some(PathBuf::from("somewhere"));
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfigFile::parse(&text).unwrap(), c);
        assert_eq!(c.benchmark.master_seed, 12);
        assert_eq!(c.verify.seed, 12);
    }

    #[test]
    fn unknown_nested_key_names_its_path() {
        let e = RunConfigFile::parse("[benchmark.hallucinator.generator]\nlamda = 3.0\n").unwrap_err();
        let Failure::Config(m) = e else { panic!("wrong kind") };
        assert!(m.contains("benchmark.hallucinator.generator.lamda"), "{m}");
    }
}
