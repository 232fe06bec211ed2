use std::fs;
use std::path::Path;
use std::process::Command;

fn embedlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_embedlab")).args(args).output().unwrap()
}

fn quick(sub: &str, dir: &Path, threads: &str) -> std::process::Output {
    let out = dir.to_str().unwrap();
    let mut args = vec![sub, "--seed", "5", "--out-dir", out, "--threads", threads];
    let small = [
        "instances=3", "n_range=2 4", "scatter_n=4", "mc_n=6", "samples=3000", "realizations=3", "schedule_n_max=1000",
    ];
    for s in &small {
        args.push("--set");
        args.push(s);
    }
    if sub == "ratio" {
        args.extend(["--set", "ratio_set=4 3 0.6"]);
    }
    embedlab(&args)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                let mut bytes = fs::read(&p).unwrap();
                if rel.ends_with("_config.txt") {
                    // the recorded output directory is the only intended difference
                    let text = String::from_utf8(bytes).unwrap();
                    bytes = text.lines().filter(|l| !l.starts_with("out_dir ")).collect::<Vec<_>>().join("\n").into_bytes();
                }
                files.push((rel, bytes));
            }
        }
    }
    files.sort();
    files
}

const SUBCOMMANDS: [&str; 7] = ["gen", "theory", "exact-pl", "ratio", "project", "mc", "counterexample"];

#[test]
fn every_subcommand_succeeds_and_reruns_are_byte_identical() {
    for sub in SUBCOMMANDS {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = quick(sub, a.path(), "1");
        assert!(ra.status.success(), "{sub}: {}", String::from_utf8_lossy(&ra.stderr));
        let rb = quick(sub, b.path(), "3");
        assert!(rb.status.success(), "{sub}: {}", String::from_utf8_lossy(&rb.stderr));
        let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
        assert!(!sa.is_empty());
        assert_eq!(sa, sb, "{sub} output depends on the thread count");
        let stdout = String::from_utf8(ra.stdout).unwrap();
        assert!(stdout.contains("audit PASS"), "{sub}: {stdout}");
        assert!(!stdout.contains("audit FAIL"), "{sub}: {stdout}");
    }
}

#[test]
fn different_seeds_change_instances() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = a.path().to_str().unwrap();
    let pb = b.path().to_str().unwrap();
    assert!(embedlab(&["gen", "--seed", "1", "--out-dir", pa, "--set", "instances=2"]).status.success());
    assert!(embedlab(&["gen", "--seed", "2", "--out-dir", pb, "--set", "instances=2"]).status.success());
    let fa = fs::read(a.path().join("instances/n05_i0001.txt")).unwrap();
    let fb = fs::read(b.path().join("instances/n05_i0001.txt")).unwrap();
    assert_ne!(fa, fb);
}

#[test]
fn config_file_is_applied_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# ring\nring_n 7\nbetas 0.3 0.6\n").unwrap();
    let out = dir.path().join("out");
    let r = embedlab(&["counterexample", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let recorded = fs::read_to_string(out.join("counterexample_config.txt")).unwrap();
    assert!(recorded.contains("ring_n 7\n"));
    let ratios = fs::read_to_string(out.join("counterexample_ratios.csv")).unwrap();
    assert_eq!(ratios.lines().count(), 3);
    let stdout = String::from_utf8(r.stdout).unwrap();
    assert!(stdout.contains("PASS: no configuration-independent ratio"), "{stdout}");
}

#[test]
fn bad_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().to_str().unwrap();
    assert!(!embedlab(&["gen", "--out-dir", p, "--set", "bogus=1"]).status.success());
    assert!(!embedlab(&["gen", "--out-dir", p, "--set", "noequals"]).status.success());
    assert!(!embedlab(&["gen", "--out-dir", p, "--set", "experiment=mc-projection"]).status.success());
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "experiment mc-projection\n").unwrap();
    assert!(!embedlab(&["gen", "--out-dir", p, "--config", cfg.to_str().unwrap()]).status.success());
    assert!(!embedlab(&["gen", "--out-dir", p, "--threads", "0"]).status.success());
    assert!(!embedlab(&["nope"]).status.success());
}
