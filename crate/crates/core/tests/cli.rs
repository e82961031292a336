//! End-to-end behaviour of the `tinydistill` binary: configuration loading,
//! overrides, output location, stage reuse and error messages.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tinydistill::cli::{read_stage_manifest, FILES_MANIFEST};

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let cfg = serde_json::json!({
            "data": {"phantoms": 24, "height": 32, "width": 32},
            "encoder": {
                "teacher": {"depth": 12, "dim": 8, "heads": 2, "image_size": [32, 32]},
                "student": {"depth": 12, "dim": 8, "heads": 2, "image_size": [32, 32]}
            },
            "pretrain": {"epochs": 1, "trace_epochs": 2},
            "distill": {"epochs": 1},
            "adapt": {
                "classification": {"epochs": 1},
                "segmentation": {"epochs": 1},
                "seg_head": {"neck_dim": 4}
            }
        });
        std::fs::write(dir.path().join("tiny.json"), cfg.to_string()).unwrap();
        Self { dir }
    }

    fn runs(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn raw(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_tinydistill"))
            .args(["--config", "tiny.json"])
            .args(args)
            .current_dir(self.dir.path())
            .env("TINYDISTILL_OUT", self.runs())
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.raw(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).trim().to_string()
    }

    fn err(&self, args: &[&str]) -> String {
        let out = self.raw(args);
        assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
        String::from_utf8_lossy(&out.stderr).to_string()
    }
}

fn config_of(stdout: &str) -> serde_json::Value {
    serde_json::from_str(stdout).unwrap()
}

fn first_field(line: &str) -> PathBuf {
    PathBuf::from(line.split('\t').next().unwrap())
}

fn manifest_hashes(dir: &Path) -> Vec<String> {
    read_stage_manifest(dir).unwrap().files.into_iter().map(|f| f.sha256).collect()
}

#[test]
fn overrides_apply_in_both_spellings() {
    let ws = Workspace::new();
    let cfg = config_of(&ws.ok(&[
        "show-config",
        "--distill.lambda_recon=0.25",
        "--distill.mim",
        "spatial",
        "--encoder.student.dim",
        "16",
    ]));
    assert_eq!(cfg["distill"]["lambda_recon"], 0.25);
    assert_eq!(cfg["distill"]["mim"], "spatial");
    assert_eq!(cfg["encoder"]["student"]["dim"], 16);
    // File values survive where not overridden; the environment wins for the output root.
    assert_eq!(cfg["data"]["phantoms"], 24);
    assert_eq!(cfg["paths"]["output_root"], ws.runs().display().to_string());
}

#[test]
fn bad_configuration_is_reported() {
    let ws = Workspace::new();
    assert!(ws.err(&["show-config", "--distill.no_such_key=1"]).contains("unknown config key"));
    assert!(ws.err(&["show-config", "--distill.lambda_recon"]).contains("needs a value"));
    assert!(ws.err(&["show-config", "--data.split=[0.5,0.5,0.5]"]).contains("split"));
    assert!(ws.err(&["frobnicate"]).starts_with("error:"));
    std::fs::write(ws.dir.path().join("typo.json"), r#"{"distil": {}}"#).unwrap();
    assert!(ws.err(&["--config", "typo.json", "show-config"]).contains("distil"));
}

#[test]
fn help_and_version_succeed() {
    let ws = Workspace::new();
    assert!(ws.ok(&["--help"]).contains("pretrain-teacher"));
    assert!(ws.ok(&["--version"]).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn missing_upstream_stages_name_the_command() {
    let ws = Workspace::new();
    assert!(ws.err(&["pretrain-teacher"]).contains("tinydistill generate"));
    ws.ok(&["generate"]);
    assert!(ws.err(&["distill"]).contains("tinydistill pretrain-teacher"));
    assert!(ws.err(&["evaluate", "--task", "cls"]).contains("tinydistill"));
    assert!(ws.err(&["report"]).contains("no completed runs"));
}

#[test]
fn full_pipeline_reuses_and_forces_stages() {
    let ws = Workspace::new();
    ws.ok(&["generate"]);

    let teacher = PathBuf::from(ws.ok(&["pretrain-teacher"]));
    assert!(teacher.starts_with(ws.runs()));
    let name = teacher.file_name().unwrap().to_string_lossy().into_owned();
    let (kind, hash) = name.rsplit_once('-').unwrap();
    assert_eq!(kind, "teacher");
    assert_eq!(hash.len(), 12);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    for f in [FILES_MANIFEST, "config.json", "teacher.ckpt", "traces.jsonl"] {
        assert!(teacher.join(f).is_file(), "teacher stage lacks {f}");
    }

    // A completed stage is reused untouched; --force recomputes it deterministically.
    let stamp = std::fs::metadata(teacher.join(FILES_MANIFEST)).unwrap().modified().unwrap();
    std::thread::sleep(std::time::Duration::from_millis(20));
    assert_eq!(PathBuf::from(ws.ok(&["pretrain-teacher"])), teacher);
    assert_eq!(std::fs::metadata(teacher.join(FILES_MANIFEST)).unwrap().modified().unwrap(), stamp);
    let before = manifest_hashes(&teacher);
    assert_eq!(PathBuf::from(ws.ok(&["pretrain-teacher", "--force"])), teacher);
    assert_ne!(std::fs::metadata(teacher.join(FILES_MANIFEST)).unwrap().modified().unwrap(), stamp);
    assert_eq!(manifest_hashes(&teacher), before);

    // A different setting lands in a different directory.
    let other = PathBuf::from(ws.ok(&["pretrain-teacher", "--pretrain.epochs=2"]));
    assert_ne!(other, teacher);

    let coreset = PathBuf::from(ws.ok(&["curate"]));
    assert!(coreset.join("coreset.jsonl").is_file());
    let student = PathBuf::from(ws.ok(&["distill"]));
    for f in ["student.ckpt", "distill_log.csv", "val_log.csv", "summary.json"] {
        assert!(student.join(f).is_file(), "distill stage lacks {f}");
    }

    let line = ws.ok(&["adapt", "--task", "cls", "--compare-vanilla"]);
    assert!(line.contains("accuracy") && line.contains("vanilla"), "{line}");
    let adapt = first_field(&line);
    assert!(adapt.join("head.ckpt").is_file());
    assert!(adapt.join("comparison.csv").is_file());

    let eval = first_field(&ws.ok(&["evaluate", "--task", "cls", "--split", "val"]));
    assert!(eval.ends_with("eval_val.csv") && eval.is_file());

    let report = PathBuf::from(ws.ok(&["report"]));
    assert!(report.is_dir());
    assert!(std::fs::read_dir(&report).unwrap().count() > 0);
}
