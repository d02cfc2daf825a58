#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use barnmap::farms::ProductionType;
use barnmap::synth::{DistractorCounts, SceneSpec, TypeParams};

pub fn barnmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_barnmap")).args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = barnmap(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Writes a 20 km scene spec file and returns its path.
pub fn small_scene_toml(dir: &Path) -> String {
    let spec = SceneSpec {
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
        ..SceneSpec::default()
    };
    let p = dir.join("scene.toml");
    std::fs::write(&p, toml::to_string(&spec).unwrap()).unwrap();
    p.display().to_string()
}
