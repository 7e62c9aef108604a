//! The fitted-model directory layout: `manifest.json` beside `draws.csv`
//! (and `cv_curve.csv` when selection ran). See docs/manifest_schema.md.

use serde::{Deserialize, Serialize};
use std::path::Path;

use tebfar::dataio::StandardizationParams;
use tebfar::gibbs::{DrawsManifest, PosteriorDraws};

use crate::errors::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DRAWS_FILE: &str = "draws.csv";
pub const CV_CURVE_FILE: &str = "cv_curve.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvEcho {
    pub selected_sigma_y2: f64,
    pub n_folds: usize,
    pub curve_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitManifest {
    #[serde(flatten)]
    pub draws: DrawsManifest,
    pub outcome: String,
    pub standardization: StandardizationParams,
    pub draws_file: String,
    pub cv: Option<CvEcho>,
}

pub fn write_model_dir(
    dir: &Path,
    draws: &PosteriorDraws,
    outcome: &str,
    standardization: &StandardizationParams,
    cv: Option<CvEcho>,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let manifest = FitManifest {
        draws: draws.manifest(),
        outcome: outcome.to_string(),
        standardization: standardization.clone(),
        draws_file: DRAWS_FILE.to_string(),
        cv,
    };
    let file = std::fs::File::create(dir.join(MANIFEST_FILE))?;
    serde_json::to_writer_pretty(file, &manifest)?;
    let table = std::fs::File::create(dir.join(DRAWS_FILE))?;
    draws.write_table(table)?;
    Ok(())
}

pub fn read_model_dir(dir: &Path) -> Result<(FitManifest, PosteriorDraws), CliError> {
    let file = std::fs::File::open(dir.join(MANIFEST_FILE))?;
    let manifest: FitManifest = serde_json::from_reader(file)?;
    let table = std::fs::File::open(dir.join(&manifest.draws_file))?;
    let draws = PosteriorDraws::read_table(&manifest.draws, table).map_err(CliError::Data)?;
    Ok((manifest, draws))
}
