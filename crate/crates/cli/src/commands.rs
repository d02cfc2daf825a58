use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use barnmap::error::Error;
use barnmap::forest::load_model;
use barnmap::labels::append_label;
use barnmap::pipeline::{
    self, auto_labels, candidates_collection, evaluate, extract_candidates, population_r2_on_reference, read_candidates,
    read_farms, scene_config_text, PipelineConfig, StageReport, POPULATION_MODEL, TYPE_MODEL,
};
use barnmap::raster::Connectivity;
use barnmap::synth::{export_scene, generate_scene, import_scene, SceneSpec};
use clap::Args;

use crate::ConfigFlags;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_STAGE: u8 = 3;

pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => EXIT_CONFIG,
        _ => EXIT_STAGE,
    }
}

/// Loads the config file if given, applies flag overrides and validates.
pub fn load_config(flags: &ConfigFlags) -> Result<PipelineConfig> {
    let overrides = flags.overrides();
    let cfg = match &flags.config {
        Some(p) => PipelineConfig::load(p, &overrides)?,
        None => PipelineConfig::from_parts("", None, &overrides)?,
    };
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ensure_output(cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory to write the scene into; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene parameters (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Disable all probability noise, distractors and blobs.
    #[arg(long)]
    pub noise_free: bool,
}

pub fn synth(a: &SynthArgs, flags: &ConfigFlags) -> Result<()> {
    let seed = flags
        .seed
        .as_deref()
        .map(|s| s.parse::<u64>().map_err(|_| Error::Config(format!("seed: {s} is not an integer"))))
        .transpose()?;
    let mut spec = match &a.scene {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            SceneSpec::from_toml_str(&text)?
        }
        None if a.noise_free => SceneSpec::noise_free(0),
        None => SceneSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let gt = generate_scene(&spec)?;
    export_scene(&gt, &a.out)?;
    write(&a.out.join("pipeline.toml"), &scene_config_text(spec.seed))?;
    println!(
        "scene: {} farms, {} barns, {} distractors, {} chips -> {}",
        gt.farms.len(),
        gt.barns.len(),
        gt.distractors.len(),
        gt.chips.len(),
        a.out.display()
    );
    Ok(())
}

pub fn run(flags: &ConfigFlags) -> Result<()> {
    let cfg = load_config(flags)?;
    let out = pipeline::run(&cfg)?;
    print!("{}", out.report.to_text());
    println!("farms: {}  outputs: {}", out.farms.len(), cfg.output_dir.display());
    Ok(())
}

pub fn train_filter(flags: &ConfigFlags) -> Result<()> {
    let cfg = load_config(flags)?;
    ensure_output(&cfg)?;
    let t = pipeline::train_filter(&cfg)?;
    let m = &t.manifest;
    println!("labels: {} barn, {} false_positive", m.n_barn, m.n_false_positive);
    for b in &m.buffers {
        println!(
            "buffer {:>6} m  mean F1 {:.4}  folds {} evaluated, {} skipped",
            b.radius_m, b.mean_f1, b.evaluated_folds, b.skipped_folds
        );
    }
    println!("selected buffer: {} m; models in {}", m.radius_m, cfg.models_dir().display());
    Ok(())
}

fn print_farm_training(name: &str, t: &pipeline::FarmModelTraining) {
    let mean = t.search.mean_scores().map(|s| s.primary());
    println!(
        "{name}: best {}  mean CV score {}",
        t.params.label(),
        mean.map_or("NA".to_string(), |v| format!("{v:.4}"))
    );
}

pub fn train_type(flags: &ConfigFlags) -> Result<()> {
    let cfg = load_config(flags)?;
    ensure_output(&cfg)?;
    print_farm_training("type", &pipeline::train_type(&cfg)?);
    Ok(())
}

pub fn train_pop(flags: &ConfigFlags) -> Result<()> {
    let cfg = load_config(flags)?;
    ensure_output(&cfg)?;
    print_farm_training("population", &pipeline::train_population(&cfg)?);
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scene directory written by `synth`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Append truth-derived labels for the extracted candidates to the labels file.
    #[arg(long)]
    pub write_labels: bool,
}

pub fn eval(a: &EvalArgs, flags: &ConfigFlags) -> Result<()> {
    let cfg = load_config(flags)?;
    let gt = import_scene(&a.truth)?;
    ensure_output(&cfg)?;
    if a.write_labels {
        cfg.require(&["prob_dir"])?;
        let conn = Connectivity::from_neighbors(cfg.connectivity).expect("validated");
        let cands = extract_candidates(cfg.prob_dir.as_deref().expect("required"), cfg.threshold, conn)?;
        candidates_collection(&cands)?.write(&cfg.output_dir.join("candidates.geojson"))?;
        let pairs: Vec<_> = cands.iter().map(|c| (c.id, c.ring.clone())).collect();
        let records = auto_labels(&pairs, &gt, "truth")?;
        let path = cfg.labels_path();
        for r in &records {
            append_label(&path, r)?;
        }
        println!("labels: {} of {} candidates -> {}", records.len(), cands.len(), path.display());
    }
    let barns_path = cfg.output_dir.join("barns.geojson");
    if barns_path.exists() {
        let kept: Vec<_> = read_candidates(&barns_path)?.into_iter().map(|c| (c.id, c.ring)).collect();
        let farms_path = cfg.output_dir.join("farms.json");
        let farms = if farms_path.exists() { read_farms(&farms_path)? } else { Vec::new() };
        let report = evaluate(&kept, &farms, &gt)?;
        write(&cfg.output_dir.join("eval.csv"), &report.to_csv())?;
        print!("{}", report.to_text());
    } else if !a.write_labels {
        bail!(Error::Config(format!("{} not found; run first", barns_path.display())));
    }
    let models = cfg.models_dir();
    if models.join(POPULATION_MODEL).exists() {
        let pm = load_model(&models.join(POPULATION_MODEL))?;
        let tm = match models.join(TYPE_MODEL) {
            p if p.exists() => Some(load_model(&p)?),
            _ => None,
        };
        let (acc, r2) = population_r2_on_reference(&gt, tm.as_ref(), &pm)?;
        if let Some(acc) = acc {
            println!("{:<16} {acc:.4}", "heldout_type_accuracy");
        }
        println!("{:<16} {r2:.4}", "heldout_population_r2");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Print CSV instead of an aligned table.
    #[arg(long)]
    pub csv: bool,
}

pub fn report(a: &ReportArgs, flags: &ConfigFlags) -> Result<()> {
    let cfg = load_config(flags)?;
    let path = cfg.output_dir.join("stage_report.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let report: StageReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if a.csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.to_text());
    }
    for name in ["benchmark.csv", "type_distribution.csv", "type_summary.csv"] {
        let p = cfg.output_dir.join(name);
        if let Ok(t) = fs::read_to_string(&p) {
            println!("\n{name}\n{t}");
        }
    }
    Ok(())
}
