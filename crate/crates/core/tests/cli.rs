use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smoothstroke::raster::{BitDepth, Canvas};
use smoothstroke::scene::Scene;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smoothstroke"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn smoothstroke")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Dark disk on white.
fn disk_png(dir: &Path, size: usize) -> PathBuf {
    let c = size as f64 / 2.0;
    let data = (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
            if (x - c).hypot(y - c) < 0.32 * size as f64 { 0.0 } else { 1.0 }
        })
        .collect();
    let path = dir.join("disk.png");
    Canvas::from_data(size, size, 1, data).unwrap().save_png(&path, BitDepth::Eight).unwrap();
    path
}

fn ink(png: &Path) -> f64 {
    let c = Canvas::load_png(png).unwrap().to_gray();
    c.data.iter().map(|v| 1.0 - v).sum::<f64>() / c.data.len() as f64
}

#[test]
fn fill_writes_svg_trace_scene_and_preview() {
    let dir = tempfile::tempdir().unwrap();
    let target = disk_png(dir.path(), 32);
    let out = dir.path().join("nested/a.svg");
    let stdout = ok(&[
        "fill",
        "--target",
        target.to_str().unwrap(),
        "--steps",
        "20",
        "--keypoints",
        "16",
        "--lambda-smooth",
        "1",
        "--checkpoint-every",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&stdout.stdout).contains("20 steps"));
    let svg = std::fs::read_to_string(&out).unwrap();
    assert!(svg.starts_with("<?xml") && svg.contains("<path id=\"item0\""));
    let trace = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert!(lines[0].starts_with("step,lr,coverage,smooth,box,"));
    assert_eq!(lines.len(), 1 + 21);
    let scene = Scene::load(out.with_extension("json")).unwrap();
    assert_eq!((scene.width, scene.height), (32, 32));
    assert!(out.with_extension("png").exists());
    for step in [0, 10, 20] {
        assert!(dir.path().join(format!("nested/a_step{step:04}.svg")).exists(), "checkpoint {step}");
    }

    // render and export reuse the saved scene
    let png = dir.path().join("r.png");
    ok(&["render", "--scene", out.with_extension("json").to_str().unwrap(), "--out", png.to_str().unwrap()]);
    assert_eq!(Canvas::load_png(&png).unwrap().width, 32);
    let again = dir.path().join("again.svg");
    ok(&["export", "--scene", out.with_extension("json").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(std::fs::read_to_string(&again).unwrap(), svg);
    // an exported SVG carries its scene
    let png2 = dir.path().join("r2.png");
    ok(&["render", "--scene", out.to_str().unwrap(), "--out", png2.to_str().unwrap()]);
    assert_eq!(std::fs::read(&png).unwrap(), std::fs::read(&png2).unwrap());
}

#[test]
fn bad_invocations_fail_with_usage() {
    for args in [&["fill", "--no-such-flag"][..], &["paint"][..], &["fill", "--steps", "many"][..]] {
        let out = run(args);
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("Usage") || err.contains("--help"), "{args:?}: {err}");
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[spline]\ndegree = 2\n[smoothing]\norder = 3\n").unwrap();
    let out = run(&["fill", "--config", cfg.to_str().unwrap(), "--target", "x.png"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    disk_png(dir.path(), 24);
    let cfg = dir.path().join("job.toml");
    std::fs::write(&cfg, "[job]\ntarget = \"disk.png\"\nsteps = 500\n\n[spline]\ndegree = 3\n\n[seeding]\nkeypoints = 12\n").unwrap();
    let out = dir.path().join("c.svg");
    ok(&["fill", "--config", cfg.to_str().unwrap(), "--steps", "5", "--out", out.to_str().unwrap()]);
    let scene = Scene::load(out.with_extension("json")).unwrap();
    assert_eq!(scene.items[0].path.degree, 3);
    assert_eq!(std::fs::read_to_string(out.with_extension("csv")).unwrap().lines().count(), 1 + 6);
}

#[test]
fn areas_quantizes_to_the_given_palette() {
    let dir = tempfile::tempdir().unwrap();
    let size = 32;
    let data: Vec<f64> = (0..size * size)
        .flat_map(|i| if i % size < size / 2 { [0.8, 0.1, 0.1] } else { [0.1, 0.1, 0.8] })
        .collect();
    let target = dir.path().join("two.png");
    Canvas::from_data(size, size, 3, data).unwrap().save_png(&target, BitDepth::Eight).unwrap();
    let sal = dir.path().join("sal.png");
    Canvas::filled(size, size, &[0.5]).unwrap().save_png(&sal, BitDepth::Eight).unwrap();
    let out = dir.path().join("areas.svg");
    ok(&[
        "areas",
        "--target",
        target.to_str().unwrap(),
        "--saliency",
        sal.to_str().unwrap(),
        "--palette",
        "#cc1a1a,#1a1acc",
        "--k",
        "2",
        "--areas",
        "8",
        "--steps",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    let svg = std::fs::read_to_string(&out).unwrap();
    let drawing = &svg[svg.find("<g id=\"drawing\"").unwrap()..svg.find("<g id=\"centerlines\"").unwrap()];
    let fills: Vec<&str> = drawing.match_indices("fill=\"#").map(|(i, _)| &drawing[i + 6..i + 13]).collect();
    assert!(!fills.is_empty());
    assert!(fills.iter().all(|f| *f == "#cc1a1a" || *f == "#1a1acc"), "{fills:?}");
}

#[test]
fn lower_target_opacity_uses_less_ink() {
    let dir = tempfile::tempdir().unwrap();
    let target = disk_png(dir.path(), 48);
    let mut measured = Vec::new();
    for opacity in ["1.0", "0.5"] {
        let out = dir.path().join(format!("o{opacity}.svg"));
        ok(&[
            "fill",
            "--target",
            target.to_str().unwrap(),
            "--opacity",
            opacity,
            "--keypoints",
            "32",
            "--steps",
            "120",
            "--out",
            out.to_str().unwrap(),
        ]);
        measured.push(ink(&out.with_extension("png")));
    }
    assert!(measured[1] < measured[0], "ink at 50% {} vs 100% {}", measured[1], measured[0]);
}
