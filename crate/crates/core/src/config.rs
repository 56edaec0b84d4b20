//! Run configuration shared by the pipeline stages.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimation::MIN_LOCAL_CASES;
use crate::predict::SPEED_ENSEMBLE_SIZE;
use crate::references::{EccSampling, ErrorSelection, ERROR_DRESSING_SIZE};
use crate::verify::ES_SAMPLES;

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "WINDEMOS_DATA_DIR";
pub const DEFAULT_REGIONAL_DAYS: usize = 30;
pub const DEFAULT_LOCAL_DAYS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScopeKind {
    #[default]
    Regional,
    Local,
}

impl std::str::FromStr for ScopeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regional" => Ok(ScopeKind::Regional),
            "local" => Ok(ScopeKind::Local),
            _ => Err(Error::InvalidParameter(format!("scope must be regional or local, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for ScopeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScopeKind::Regional => "regional",
            ScopeKind::Local => "local",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scope: ScopeKind,
    /// Training length in days; `None` picks the default for the scope.
    pub n_train: Option<usize>,
    /// Correlation harmonic; `None` keeps the one selected by the fit.
    pub k: Option<u8>,
    /// Expected number of members, checked against the data when set.
    pub ensemble_size: Option<usize>,
    pub es_samples: usize,
    pub speed_ensemble_size: usize,
    pub error_dress_size: usize,
    pub error_selection: ErrorSelection,
    pub ecc_sampling: EccSampling,
    pub member_means: bool,
    pub min_local_cases: usize,
    pub seed: u64,
    pub knots: bool,
    pub data_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scope: ScopeKind::Regional,
            n_train: None,
            k: None,
            ensemble_size: None,
            es_samples: ES_SAMPLES,
            speed_ensemble_size: SPEED_ENSEMBLE_SIZE,
            error_dress_size: ERROR_DRESSING_SIZE,
            error_selection: ErrorSelection::Random,
            ecc_sampling: EccSampling::Random,
            member_means: false,
            min_local_cases: MIN_LOCAL_CASES,
            seed: 0,
            knots: false,
            data_dir: default_data_dir(),
        }
    }
}

/// `$WINDEMOS_DATA_DIR`, or the current directory.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

impl RunConfig {
    pub fn n_train(&self) -> usize {
        self.n_train.unwrap_or(match self.scope {
            ScopeKind::Regional => DEFAULT_REGIONAL_DAYS,
            ScopeKind::Local => DEFAULT_LOCAL_DAYS,
        })
    }

    /// Relative paths are taken relative to the data directory.
    pub fn resolve(&self, path: impl AsRef<Path>) -> PathBuf {
        let p = path.as_ref();
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == Some(0) {
            return Err(Error::InvalidParameter("n_train must be at least 1".into()));
        }
        if let Some(k) = self.k {
            if !(1..=3).contains(&k) {
                return Err(Error::InvalidParameter(format!("k must be 1, 2 or 3, got {k}")));
            }
        }
        if self.es_samples < 2 {
            return Err(Error::InvalidParameter("es_samples must be at least 2".into()));
        }
        if self.speed_ensemble_size == 0 || self.error_dress_size == 0 {
            return Err(Error::InvalidParameter("sample sizes must be positive".into()));
        }
        Ok(())
    }
}
