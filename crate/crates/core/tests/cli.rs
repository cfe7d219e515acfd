use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsetrack"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn synth(dir: &Path, preset: &str) {
    ok(dir, &["synth", "--preset", preset, "--frames", "24", "--size", "48", "--truth-flow", "--out", "s"]);
}

#[test]
fn usage_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["eval", "--pred"], &["synth", "--preset", "spiral", "--out", "x"], &[]] {
        let out = run(d.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
    }
    assert_eq!(run(d.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_flow_names_the_input() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "static");
    let out = run(d.path(), &["track", "--anchors", "s/reference.json", "--flow", "nope.rplf", "--out", "t.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.rplf") && err.contains("--video"), "{err}");
}

#[test]
fn data_errors_name_file_and_field() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.json"), r#"{"id": "a", "anchors": []}"#).unwrap();
    let out = run(d.path(), &["eval", "--pred", "bad.json", "--ref", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json") && err.contains("points"), "{err}");
}

#[test]
fn eval_identity_is_perfect() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "translate");
    let out = ok(d.path(), &["eval", "--pred", "s/reference.json", "--ref", "s/reference.json", "--csv", "e.csv"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["dataset_app"], 1.0);
    assert!(v["tracks"].as_array().unwrap().iter().all(|t| t["app"] == 1.0));
    let csv = std::fs::read_to_string(d.path().join("e.csv")).unwrap();
    assert!(csv.starts_with("id,pp_1,pp_2,pp_4,pp_8,pp_16,app,scored_frames\n"));
}

#[test]
fn track_from_seeds_on_truth_flow_matches_reference() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "sinusoid");
    ok(d.path(), &["track", "--anchors", "s/reference.json", "--flow", "s/truth.rplf", "--out", "t.json"]);
    let out = ok(d.path(), &["eval", "--pred", "t.json", "--ref", "s/reference.json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["dataset_app"].as_f64().unwrap() > 0.99, "{v}");
}

#[test]
fn track_computes_and_caches_flow() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "translate");
    let args = ["track", "--anchors", "s/reference.json", "--video", "s/video.tif", "--flow", "c.rplf", "--strategy", "corridor_dp", "--out", "t.json"];
    ok(d.path(), &args);
    assert!(d.path().join("c.rplf").exists());
    let first = std::fs::read(d.path().join("t.json")).unwrap();
    ok(d.path(), &args);
    let second: Value = serde_json::from_slice(&std::fs::read(d.path().join("t.json")).unwrap()).unwrap();
    let first: Value = serde_json::from_slice(&first).unwrap();
    for (a, b) in first.as_array().unwrap().iter().zip(second.as_array().unwrap()) {
        assert_eq!(a["points"], b["points"]);
    }
}

#[test]
fn scaling_full_anchoring_is_exact() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "deform");
    let out = ok(d.path(), &["scaling", "--flow", "s/truth.rplf", "--ref", "s/reference.json", "--track", "blob1", "--trials", "5", "--strategy", "linear"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let last = csv.lines().last().unwrap();
    let cols: Vec<&str> = last.split(',').collect();
    assert_eq!(cols[0], "blob1");
    assert_eq!(cols[1], "linear");
    assert_eq!(cols[3], "1");
}

#[test]
fn replace_reports_before_and_after() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "translate");
    let out = ok(d.path(), &["replace", "--flow", "s/truth.rplf", "--annotated", "s/reference.json", "--ref", "s/reference.json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 8);
    assert_eq!(v[0]["after"]["app"], 1.0);
}

#[test]
fn cost_from_json_and_xml() {
    let d = tempfile::tempdir().unwrap();
    let gt = r#"{"id": "g", "anchors": [{"frame": 0, "x": 10, "y": 10}],
        "points": [{"frame": 0, "x": 10, "y": 10, "visible": true}, {"frame": 1, "x": 11, "y": 10, "visible": true},
                   {"frame": 2, "x": 12, "y": 10, "visible": true}, {"frame": 3, "x": 13, "y": 10, "visible": true}]}"#;
    std::fs::write(d.path().join("gt.json"), gt).unwrap();
    let frags = r#"{"frames": [{"t": 0, "detections": [{"x": 10, "y": 10, "fragment": "a"}]},
        {"t": 1, "detections": [{"x": 11, "y": 10, "fragment": "a"}]},
        {"t": 3, "detections": [{"x": 13, "y": 11, "fragment": 5}]}]}"#;
    std::fs::write(d.path().join("f.json"), frags).unwrap();
    let out = ok(d.path(), &["cost", "--gt", "gt.json", "--fragments", "f.json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["total"]["init_pick"], 2);
    assert_eq!(v["total"]["manual"], 1);
    assert_eq!(v["total"]["total"], 3);

    let xml = r#"<TrackMate><Model><AllSpots>
        <SpotsInFrame frame="0"><Spot ID="1" FRAME="0" POSITION_X="20" POSITION_Y="20"/></SpotsInFrame>
        <SpotsInFrame frame="1"><Spot ID="2" FRAME="1" POSITION_X="22" POSITION_Y="20"/></SpotsInFrame>
        <SpotsInFrame frame="2"><Spot ID="3" FRAME="2" POSITION_X="24" POSITION_Y="20"/></SpotsInFrame>
        <SpotsInFrame frame="3"><Spot ID="4" FRAME="3" POSITION_X="26" POSITION_Y="20"/></SpotsInFrame>
        </AllSpots><AllTracks><Track TRACK_ID="0">
        <Edge SPOT_SOURCE_ID="1" SPOT_TARGET_ID="2"/><Edge SPOT_SOURCE_ID="2" SPOT_TARGET_ID="3"/>
        <Edge SPOT_SOURCE_ID="3" SPOT_TARGET_ID="4"/></Track></AllTracks></Model></TrackMate>"#;
    std::fs::write(d.path().join("f.xml"), xml).unwrap();
    // Coordinates run to 26 on a 14-pixel image, so they get rescaled by 13/26.
    let out = ok(d.path(), &["cost", "--gt", "gt.json", "--fragments", "f.xml", "--width", "14", "--height", "14"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["scale"], 0.5);
    assert_eq!(v["total"]["init_pick"], 1);
    assert_eq!(v["total"]["total"], 1);
}

#[test]
fn rescale_and_readout() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "static");
    ok(d.path(), &["rescale", "--video", "s/video.tif", "--width", "96", "--height", "96", "--out", "big.tif", "--tracks", "s/reference.json", "--tracks-out", "big.json"]);
    let recs: Value = serde_json::from_slice(&std::fs::read(d.path().join("big.json")).unwrap()).unwrap();
    assert_eq!(recs[0]["meta"]["W"], 96);
    let out = ok(d.path(), &["readout", "--video", "big.tif", "--tracks", "big.json", "--track", "blob2", "--mode", "bilinear", "--baseline", "5"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("frame,raw,dff,zscore,valid\n"));
    assert_eq!(csv.lines().count(), 25);
}

#[test]
fn flow_subcommand_writes_cache() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "translate");
    ok(d.path(), &["flow", "--video", "s/video.tif", "--backend", "block_match", "--out", "bm.rplf"]);
    let flow = sparsetrack::flow::read_flow_cache(&d.path().join("bm.rplf")).unwrap();
    assert_eq!((flow.width(), flow.height(), flow.frames()), (48, 48, 24));
}
