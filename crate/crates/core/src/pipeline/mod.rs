//! The mapping workflow as composable stages: candidate extraction,
//! filter training, the filter run with farm grouping, classification and
//! capacity estimation, and evaluation against known barns.

mod candidates;
mod config;
mod eval;
mod run;
mod train;

use std::path::Path;

use crate::error::{Error, Result};

pub use candidates::{candidates_collection, centroids, extract_candidates, raster_files, read_candidates, Candidate, Layers};
pub use config::{scene_config_text, PipelineConfig, Stage, CONFIG_KEYS};
pub use eval::{auto_labels, evaluate, match_candidates, population_r2_on_reference, EvalReport, MatchRule};
pub use run::{farms_csv, read_candidate_features, read_farms, read_regions, run, RunOutput, StageCounts, StageReport, StageRow, INCOMPLETE_MARKER};
pub use train::{
    best_overall, filter_training_set, parse_type, read_reference_barns, read_reference_farms, reference_farm_rows, train_filter,
    train_population, train_type, BufferScore, FarmModelTraining, FilterManifest, FilterTraining, ReferenceBarn, ReferenceFarm,
    ReferenceFarmRow, FILTER_MANIFEST, POPULATION_MODEL, TYPE_MODEL,
};

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
