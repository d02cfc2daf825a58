#![allow(dead_code)]

use std::path::{Path, PathBuf};

use barnmap::forest::load_model;
use barnmap::labels::append_label;
use barnmap::pipeline::{
    auto_labels, evaluate, extract_candidates, population_r2_on_reference, run, scene_config_text, train_filter,
    train_population, train_type, EvalReport, FarmModelTraining, FilterTraining, PipelineConfig, RunOutput, POPULATION_MODEL,
    TYPE_MODEL,
};
use barnmap::raster::Connectivity;
use barnmap::synth::{export_scene, files, generate_scene, GroundTruth, SceneSpec};

pub fn o(k: &str, v: &str) -> (String, String) {
    (k.to_string(), v.to_string())
}

/// Generates and exports a scene into `root/name`.
pub fn scene(root: &Path, name: &str, spec: &SceneSpec) -> (GroundTruth, PathBuf) {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    let gt = generate_scene(spec).unwrap();
    export_scene(&gt, &dir).unwrap();
    (gt, dir)
}

pub fn scene_config(dir: &Path, seed: u64, overrides: &[(String, String)]) -> PipelineConfig {
    PipelineConfig::from_parts(&scene_config_text(seed), Some(dir), overrides).unwrap()
}

/// Overrides for a small training grid and 5 km blocks.
pub fn quick_training() -> Vec<(String, String)> {
    vec![
        o("grid_n_trees", "60"),
        o("grid_max_depth", "0,20"),
        o("grid_min_split", "2"),
        o("grid_min_leaf", "1"),
        o("grid_max_features", "sqrt"),
        o("block_size_m", "5000"),
    ]
}

pub struct EndToEnd {
    pub train_scene: GroundTruth,
    pub test_scene: GroundTruth,
    pub filter: FilterTraining,
    pub type_model: FarmModelTraining,
    pub population: FarmModelTraining,
    pub output: RunOutput,
    pub report: EvalReport,
    pub heldout_type_accuracy: Option<f64>,
    pub heldout_population_r2: f64,
}

/// Trains on scene `seed` with labels derived from its truth, then maps
/// scene `seed + 1` and scores it.
pub fn end_to_end(root: &Path, seed: u64, spec: &SceneSpec) -> EndToEnd {
    let (train_gt, a) = scene(root, "a", &SceneSpec { seed, ..spec.clone() });
    let (test_gt, b) = scene(root, "b", &SceneSpec { seed: seed + 1, ..spec.clone() });
    let barns_a = a.join(files::BARNS).display().to_string();
    let mut over = quick_training();
    over.push(o("reference_barns", &barns_a));
    over.push(o("reference_farms", &a.join(files::FARMS).display().to_string()));
    let cfg_a = scene_config(&a, seed, &over);

    let conn = Connectivity::from_neighbors(cfg_a.connectivity).unwrap();
    let cands = extract_candidates(cfg_a.prob_dir.as_deref().unwrap(), cfg_a.threshold, conn).unwrap();
    let pairs: Vec<_> = cands.iter().map(|c| (c.id, c.ring.clone())).collect();
    std::fs::create_dir_all(&cfg_a.output_dir).unwrap();
    for rec in auto_labels(&pairs, &train_gt, "truth").unwrap() {
        append_label(&cfg_a.labels_path(), &rec).unwrap();
    }
    let filter = train_filter(&cfg_a).unwrap();
    let type_model = train_type(&cfg_a).unwrap();
    let population = train_population(&cfg_a).unwrap();

    let models = cfg_a.models_dir().display().to_string();
    let cfg_b = scene_config(
        &b,
        seed + 1,
        &[o("models_dir", &models), o("reference_barns", &barns_a), o("size_quantiles", "0.005,0.995")],
    );
    let output = run(&cfg_b).unwrap();
    let kept: Vec<_> = output
        .kept_ids
        .iter()
        .map(|id| (*id, output.candidates[*id as usize - 1].ring.clone()))
        .collect();
    let report = evaluate(&kept, &output.farms, &test_gt).unwrap();
    let tm = load_model(&cfg_a.models_dir().join(TYPE_MODEL)).unwrap();
    let pm = load_model(&cfg_a.models_dir().join(POPULATION_MODEL)).unwrap();
    let (heldout_type_accuracy, heldout_population_r2) = population_r2_on_reference(&test_gt, Some(&tm), &pm).unwrap();
    EndToEnd {
        train_scene: train_gt,
        test_scene: test_gt,
        filter,
        type_model,
        population,
        output,
        report,
        heldout_type_accuracy,
        heldout_population_r2,
    }
}

/// A 20 km scene with a third of the default farm counts.
pub fn small_spec(seed: u64) -> SceneSpec {
    use barnmap::farms::ProductionType;
    use barnmap::synth::{DistractorCounts, TypeParams};
    SceneSpec {
        width_m: 20_000.0,
        height_m: 20_000.0,
        types: vec![
            TypeParams::defaults(ProductionType::Sow, 12),
            TypeParams::defaults(ProductionType::Nursery, 15),
            TypeParams::defaults(ProductionType::Finisher, 25),
            TypeParams::defaults(ProductionType::BoarStud, 8),
        ],
        distractors: DistractorCounts {
            warehouse: 25,
            house: 50,
            parking: 25,
        },
        seed,
        ..SceneSpec::default()
    }
}
