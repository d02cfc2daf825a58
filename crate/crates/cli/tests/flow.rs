mod common;

use std::fs;

use common::{barnmap, ok, small_scene_toml};

#[test]
fn config_problems_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out").display().to_string();
    assert_eq!(barnmap(&["run", "--output_dir", &out]).status.code(), Some(2));
    assert_eq!(barnmap(&["run", "--threshold", "2"]).status.code(), Some(2));
    assert_eq!(barnmap(&["run", "--folds", "many"]).status.code(), Some(2));
    let missing = dir.path().join("none.toml").display().to_string();
    assert_eq!(barnmap(&["run", "--config", &missing]).status.code(), Some(2));
    assert_eq!(barnmap(&["report", "--output_dir", &out]).status.code(), Some(2));
}

#[test]
fn stage_failure_exits_with_3_and_marks_output() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene_toml(dir.path());
    let s = dir.path().join("s");
    ok(&["synth", "--out", s.to_str().unwrap(), "--scene", &scene, "--seed", "4"]);
    let prob = s.join("prob");
    let first = fs::read_dir(&prob).unwrap().map(|e| e.unwrap().path()).min().unwrap();
    fs::write(first, b"garbage").unwrap();
    let cfg = s.join("pipeline.toml").display().to_string();
    let out = barnmap(&["run", "--config", &cfg, "--forest_vote", "false"]);
    assert_eq!(out.status.code(), Some(3));
    let marker = fs::read_to_string(s.join("out").join("INCOMPLETE")).unwrap();
    assert!(marker.contains("extract"), "{marker}");
}

#[test]
fn synth_train_run_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene_toml(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let p = |x: &std::path::Path| x.display().to_string();
    ok(&["synth", "--out", &p(&a), "--scene", &scene, "--seed", "21"]);
    ok(&["synth", "--out", &p(&b), "--scene", &scene, "--seed", "22"]);

    let cfg_a = p(&a.join("pipeline.toml"));
    let labels = ok(&["eval", "--config", &cfg_a, "--truth", &p(&a), "--write-labels"]);
    assert!(labels.starts_with("labels: "), "{labels}");

    let barns_a = p(&a.join("barns.geojson"));
    let training = [
        "--config", &cfg_a,
        "--reference_barns", &barns_a,
        "--reference_farms", &p(&a.join("farms.csv")),
        "--grid_n_trees", "40",
        "--grid_max_depth", "0",
        "--grid_min_split", "2",
        "--grid_min_leaf", "1",
        "--grid_max_features", "sqrt",
        "--block_size_m", "4000",
    ];
    let filter = ok(&[&["train-filter"], &training[..]].concat());
    assert!(filter.contains("selected buffer"), "{filter}");
    assert!(ok(&[&["train-type"], &training[..]].concat()).starts_with("type: best"));
    assert!(ok(&[&["train-pop"], &training[..]].concat()).starts_with("population: best"));
    let models = a.join("out").join("models");
    for f in ["filter_manifest.json", "type_model.json", "population_model.json"] {
        assert!(models.join(f).exists(), "missing {f}");
    }

    let cfg_b = p(&b.join("pipeline.toml"));
    let run = ok(&[
        "run", "--config", &cfg_b,
        "--models_dir", &p(&models),
        "--reference_barns", &barns_a,
        "--size_quantiles", "0.005,0.995",
    ]);
    assert!(run.contains("total"), "{run}");
    let out_b = b.join("out");
    for f in ["barns.geojson", "farms.csv", "farms.json", "stage_report.csv", "removals.csv", "votes.csv", "benchmark.csv"] {
        assert!(out_b.join(f).exists(), "missing {f}");
    }
    assert!(!out_b.join("INCOMPLETE").exists());

    let eval = ok(&["eval", "--config", &cfg_b, "--truth", &p(&b), "--models_dir", &p(&models)]);
    let value = |key: &str| -> f64 {
        let line = eval.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("{key} missing in\n{eval}"));
        line.split_whitespace().last().unwrap().parse().unwrap()
    };
    assert!(value("recall") > 0.8, "{eval}");
    assert!(value("precision") > 0.8, "{eval}");
    assert!(value("heldout_population_r2").is_finite());
    assert!(out_b.join("eval.csv").exists());

    let report = ok(&["report", "--config", &cfg_b, "--csv"]);
    assert!(report.starts_with("region,predicted,after_forest_vote,after_geometric_filter,after_tag_filter\n"), "{report}");
}
