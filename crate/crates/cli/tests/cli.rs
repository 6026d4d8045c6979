use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use boxi_core::image::BoxImage;
use boxi_core::runtime::{Binding, Component, Invocation, Role, WorkflowSpec};
use boxi_core::scenarios::{self, Scenario};
use tempfile::TempDir;

const STANDIN: &str = env!("CARGO_BIN_EXE_boxi-standin");

fn boxi(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boxi"))
        .args(args.iter().map(|a| a.as_ref()))
        .output()
        .expect("spawn boxi")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn scenario_one(tmp: &TempDir) -> Scenario {
    scenarios::build_scenario(1, tmp.path(), Path::new(STANDIN), scenarios::DEFAULT_SEED).unwrap()
}

fn data_id(path: &Path) -> u32 {
    boxi_core::runtime::data_partition_id(&BoxImage::open_read(path).unwrap()).unwrap()
}

#[test]
fn run_attaches_trail_visible_in_inspect() {
    let tmp = TempDir::new().unwrap();
    let s = scenario_one(&tmp);
    let out = boxi(&[&"run", &s.spec_path]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("copy events: 2 (zero-copy)"));

    let inspect = stdout(&boxi(&[&"inspect", &s.image("output")]));
    assert!(inspect.contains("partitions 2"), "{inspect}");
    assert!(inspect.contains("metadata"), "{inspect}");
}

#[test]
fn trail_json_is_the_raw_partition_payload() {
    let tmp = TempDir::new().unwrap();
    let s = scenario_one(&tmp);
    assert_eq!(code(&boxi(&[&"run", &s.spec_path])), 0);
    let image = s.image("output");
    let meta_id = BoxImage::open_read(&image)
        .unwrap()
        .partitions_of(boxi_core::image::PartType::Metadata)
        .next()
        .unwrap()
        .id;
    let trail = boxi(&[&"trail", &"--json", &image]);
    let dumped = boxi(&[&"dump", &image, &meta_id.to_string(), &"-"]);
    assert_eq!(code(&trail), 0);
    assert_eq!(trail.stdout, dumped.stdout);

    let table = stdout(&boxi(&[&"trail", &image]));
    assert!(table.contains("application") && table.contains("plot Inputs Outputs"), "{table}");
}

#[test]
fn no_trail_leaves_data_only_output() {
    let tmp = TempDir::new().unwrap();
    let s = scenario_one(&tmp);
    assert_eq!(code(&boxi(&[&"run", &"--no-trail", &s.spec_path])), 0);
    let img = BoxImage::open_read(s.image("output")).unwrap();
    assert_eq!(img.descriptors().len(), 1);
    assert_eq!(code(&boxi(&[&"trail", &s.image("output")])), 2);
}

#[test]
fn modes_write_identical_output_partitions() {
    let mut payloads = Vec::new();
    for mode in ["zero-copy", "two-copy"] {
        let tmp = TempDir::new().unwrap();
        let s = scenario_one(&tmp);
        let out = boxi(&[&"run", &"--json", &"--mode", &mode, &s.spec_path]);
        assert_eq!(code(&out), 0);
        let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(report["mode"], mode);
        assert_eq!(report["copy_events"], if mode == "zero-copy" { 2 } else { 4 });
        assert_eq!(report["trails"].as_array().unwrap().len(), 1);
        let image = s.image("output");
        let dumped = boxi(&[&"dump", &image, &data_id(&image).to_string(), &"-"]);
        payloads.push(dumped.stdout);
    }
    assert!(!payloads[0].is_empty());
    assert_eq!(payloads[0], payloads[1]);
}

#[test]
fn pack_dump_extract_round_trip() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    fs::create_dir_all(src.join("sub")).unwrap();
    fs::write(src.join("sub/a.txt"), "alpha").unwrap();
    let image = tmp.path().join("d.boxi");
    let out = boxi(&[&"pack", &src, &image]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), BoxImage::open_read(&image).unwrap().uuid().hyphenated().to_string());

    let dest = tmp.path().join("out");
    assert_eq!(code(&boxi(&[&"dump", &"--extract", &image, &data_id(&image).to_string(), &dest])), 0);
    assert_eq!(fs::read_to_string(dest.join("sub/a.txt")).unwrap(), "alpha");
}

#[test]
fn add_accepts_codes_and_del_removes() {
    let tmp = TempDir::new().unwrap();
    let image = tmp.path().join("o.boxi");
    assert_eq!(code(&boxi(&[&"new-output", &"Outputs", &image])), 0);
    let file = tmp.path().join("notes.bin");
    fs::write(&file, b"payload").unwrap();

    let out = boxi(&[
        &"add", &image, &file, &"--datatype", &"4", &"--partfs", &"2", &"--parttype", &"3",
        &"--partarch", &"2", &"--name", &"extra",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let id: u32 = stdout(&out).trim().parse().unwrap();
    let json: serde_json::Value = serde_json::from_slice(&boxi(&[&"inspect", &"--json", &image]).stdout).unwrap();
    let parts = json["partitions"].as_array().unwrap();
    let added = parts.iter().find(|p| p["id"] == id).unwrap();
    assert_eq!(added["name"], "extra");
    assert_eq!(added["size"], 7);

    // Aliased spelling, default name from the file.
    let out = boxi(&[&"add", &image, &file, &"--data-type", &"4", &"--arch", &"2"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), (id + 1).to_string());

    assert_eq!(code(&boxi(&[&"del", &image, &id.to_string()])), 0);
    assert_eq!(code(&boxi(&[&"dump", &image, &id.to_string(), &"-"])), 2);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&boxi(&[&"--help"])), 0);
    assert_eq!(code(&boxi(&[&"frobnicate"])), 1);
    assert_eq!(code(&boxi(&[&"run", &"--mode", &"one-copy", &"x.json"])), 1);

    let image = tmp.path().join("o.boxi");
    assert_eq!(code(&boxi(&[&"new-output", &"Outputs", &image])), 0);
    assert_eq!(code(&boxi(&[&"dump", &image, &"99", &"-"])), 2);
    assert_eq!(code(&boxi(&[&"add", &image, &image, &"--datatype", &"77"])), 2);
    assert_eq!(code(&boxi(&[&"new-output", &"..", &tmp.path().join("x.boxi")])), 2);

    // Flip one payload byte: corruption.
    let id = data_id(&image);
    let offset = BoxImage::open_read(&image).unwrap().descriptor(id).unwrap().payload_offset;
    let mut bytes = fs::read(&image).unwrap();
    bytes[offset as usize] ^= 0x01;
    fs::write(&image, &bytes).unwrap();
    assert_eq!(code(&boxi(&[&"dump", &image, &id.to_string(), &"-"])), 4);

    fs::write(&image, b"not an image at all, just text padding it out to sixty bytes").unwrap();
    assert_eq!(code(&boxi(&[&"inspect", &image])), 4);
}

fn failing_app(dir: &Path, status: u8) -> PathBuf {
    let script = dir.join("fail.sh");
    fs::write(&script, format!("#!/bin/sh\nexit {status}\n")).unwrap();
    fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
    let recipe = dir.join("fail.recipe");
    fs::write(&recipe, "[base]\nscratch\n[files]\nfail.sh = fail.sh\n[runscript]\nfail.sh\n").unwrap();
    let image = dir.join("fail.boxi");
    assert_eq!(code(&boxi(&[&"build", &recipe, &image])), 0);
    image
}

#[test]
fn failing_app_exits_runtime_and_still_records_status() {
    let tmp = TempDir::new().unwrap();
    let app = failing_app(tmp.path(), 5);
    let output = tmp.path().join("output.boxi");
    assert_eq!(code(&boxi(&[&"new-output", &"Outputs", &output])), 0);
    let spec = WorkflowSpec {
        label: "failing".into(),
        components: vec![
            Component { id: "app".into(), role: Role::Application, image: app },
            Component { id: "output".into(), role: Role::Output, image: output.clone() },
        ],
        bindings: vec![Binding {
            source: "app:/Outputs".parse().unwrap(),
            target: "output:/Outputs".parse().unwrap(),
        }],
        invocations: vec![Invocation { app: "app".into(), argv: vec![] }],
    };
    let spec_path = tmp.path().join("wf.json");
    fs::write(&spec_path, spec.to_json()).unwrap();

    let out = boxi(&[&"run", &spec_path]);
    assert_eq!(code(&out), 3);
    let trail: serde_json::Value = serde_json::from_slice(&boxi(&[&"trail", &"--json", &output]).stdout).unwrap();
    assert_eq!(trail["exit_status"], 5);
}

#[test]
fn invalid_workflow_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let spec_path = tmp.path().join("wf.json");
    fs::write(&spec_path, "{\"label\": \"x\"").unwrap();
    assert_eq!(code(&boxi(&[&"run", &spec_path])), 2);
}
