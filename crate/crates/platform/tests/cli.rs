use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_adhere");

fn adhere(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("ADHERE_DATA")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn score_prints_points_challenges_milestones() {
    let out = stdout(&adhere(&["score", "--trace", &"1".repeat(21)]));
    assert_eq!(out, "points: 21\nchallenges: 3\nmilestones: 1,3\n");
    let out = stdout(&adhere(&["score", "--trace", "1110111", "--json"]));
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["points"], 6);
    assert_eq!(v["challenges"], 0);
    let bad = adhere(&["score", "--trace", "11x1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "11"), (&b, "11"), (&c, "12")] {
        stdout(&adhere(&["simulate", "--out", out.to_str().unwrap(), "--seed", seed]));
    }
    let (ta, tb, tc) = (read_tree(&a), read_tree(&b), read_tree(&c));
    assert_eq!(ta.len(), 67 * 3 + 2);
    assert!(ta == tb);
    assert!(ta != tc);
    // Refuses to overwrite.
    assert!(!adhere(&["simulate", "--out", a.to_str().unwrap()]).status.success());
}

#[test]
fn simulated_store_reports_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("s");
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/trial_shaped.toml");
    stdout(&adhere(&["simulate", "--config", config, "--out", store.to_str().unwrap(), "--seed", "5"]));
    let data = store.to_str().unwrap();
    let json = stdout(&adhere(&["report", "--data", data, "--window", "2024-01-01..2024-06-28", "--json"]));
    let r: Value = serde_json::from_str(&json).unwrap();
    assert_eq!(r["arms"][0]["patients"], 18);
    assert_eq!(r["arms"][1]["patients"], 49);
    for cell in ["cv_comparison", "app_use_fit", "missed_vs_level"] {
        assert_eq!(r[cell]["status"], "available", "{cell}");
    }
    for cell in ["engaged_rate_after_threshold", "nonuser_rate", "ratio_vs_nonusers"] {
        assert_eq!(r["missed_rate"][cell]["status"], "available", "{cell}");
    }
    let text = stdout(&adhere(&["report", "--data", data, "--window", "2024-01-01..2024-06-28", "--text"]));
    for needle in ["Welch", "odds ratio", "Spearman", "nonusers", "other app users"] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
    assert!(!adhere(&["report", "--data", data, "--window", "junk"]).status.success());
}

#[test]
fn import_labs_close_day_and_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    stdout(&adhere(&["simulate", "--out", store.to_str().unwrap(), "--seed", "1"]));
    let labs = dir.path().join("labs.csv");
    std::fs::write(
        &labs,
        "patient_id,draw_date,analyte,value_ng_ml\napp-0000,2024-07-01,tacrolimus,7.9\napp-0000,2024-07-01,tacrolimus,8.1\nnobody,2024-07-01,tacrolimus,8\n",
    )
    .unwrap();

    // ADHERE_DATA wins over --data.
    let out = Command::new(BIN)
        .args(["--data", "/nonexistent/elsewhere", "import-labs", labs.to_str().unwrap()])
        .env("ADHERE_DATA", &store)
        .output()
        .unwrap();
    let text = stdout(&out);
    assert!(text.starts_with("accepted 1, rejected 2"), "{text}");
    assert!(text.contains("duplicate draw") && text.contains("unknown patient"));

    // The simulated 180 days end 2024-06-28; close the next two for everyone.
    let data = store.to_str().unwrap();
    let out = stdout(&adhere(&["close-day", "--data", data, "--date", "2024-06-30", "--now", "2024-07-05T00:00:00Z"]));
    assert!(out.starts_with(&format!("closed {} day(s)", 67 * 2)), "{out}");
    let again = stdout(&adhere(&["close-day", "--data", data, "--date", "2024-06-30", "--now", "2024-07-05T00:00:00Z"]));
    assert!(again.starts_with("closed 0 day(s)"));
}
