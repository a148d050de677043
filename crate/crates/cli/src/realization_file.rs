use std::path::Path;

use dyson_cascade::cascade::{CascadeRealization, LevelRecord};
use dyson_cascade::{HierParams, RngStream};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

/// On-disk form of a [`CascadeRealization`]. `rng` is the stream every
/// further level is drawn from, so growth resumed from a file matches
/// uninterrupted growth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealizationFile {
    pub format_version: u32,
    pub params: HierParams,
    pub gamma: f64,
    pub beta_delta: f64,
    pub max_level: u32,
    pub rng: RngStream,
    pub levels: Vec<LevelRecord>,
}

impl From<&CascadeRealization> for RealizationFile {
    fn from(r: &CascadeRealization) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            params: *r.params(),
            gamma: r.gamma(),
            beta_delta: r.beta_delta(),
            max_level: r.max_level(),
            rng: r.rng(),
            levels: r.levels().to_vec(),
        }
    }
}

impl RealizationFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }

    /// Parses without checking any cascade invariant.
    pub fn from_json(text: &str, path: &Path) -> Result<Self, CliError> {
        let file: Self = serde_json::from_str(text).map_err(|source| CliError::Format { path: path.to_path_buf(), source })?;
        if file.format_version != FORMAT_VERSION {
            return Err(CliError::Version { path: path.to_path_buf(), found: file.format_version, supported: FORMAT_VERSION });
        }
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }

    /// Rebuilds the realization, re-verifying every invariant.
    pub fn into_realization(self) -> Result<CascadeRealization, CliError> {
        Ok(CascadeRealization::from_parts(self.params, self.gamma, self.beta_delta, self.levels, self.rng, self.max_level)?)
    }
}

pub fn save(r: &CascadeRealization, path: &Path) -> Result<(), CliError> {
    RealizationFile::from(r).write(path)
}

pub fn load(path: &Path) -> Result<CascadeRealization, CliError> {
    RealizationFile::read(path)?.into_realization()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grown(seed: u64, level: u32) -> CascadeRealization {
        let p = HierParams::new(1.0, 2.0, 0).unwrap();
        let mut r = CascadeRealization::init_root(p, RngStream::new(seed, 0)).unwrap();
        r.grow_to(level).unwrap();
        r
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        let r = grown(3, 6);
        save(&r, &a).unwrap();
        let back = load(&a).unwrap();
        assert_eq!(back, r);
        save(&back, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn resumed_growth_matches_uninterrupted_growth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        save(&grown(5, 2), &path).unwrap();
        let mut resumed = load(&path).unwrap();
        resumed.grow_to(5).unwrap();
        assert_eq!(resumed, grown(5, 5));
    }

    #[test]
    fn corrupted_beta_is_rejected_on_load() {
        let mut file = RealizationFile::from(&grown(8, 3));
        file.levels[2].beta[1] *= 1.0 + 1e-9;
        let err = file.into_realization().unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_INVARIANT);
    }

    #[test]
    fn unknown_version_and_fields_are_rejected() {
        let path = Path::new("r.json");
        let mut file = RealizationFile::from(&grown(8, 1));
        file.format_version = 99;
        assert!(matches!(RealizationFile::from_json(&file.to_json(), path), Err(CliError::Version { found: 99, .. })));
        let extra = RealizationFile::from(&grown(8, 1)).to_json().replacen('{', "{\"comment\": 1,", 1);
        assert!(matches!(RealizationFile::from_json(&extra, path), Err(CliError::Format { .. })));
    }
}
