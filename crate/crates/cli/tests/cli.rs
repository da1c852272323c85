use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "
synth.n_days = 520
synth.n_stocks = 4
model.d_model = 16
model.n_heads = 2
model.d_ff = 32
model.n_layers = 1
model.seq_len = 16
ae.epochs = 6
pathway.epochs = 4
sac.hidden = 16,16
sac.batch_size = 16
sac.epochs = 2
sac.steps_per_epoch = 160
finetune.epochs = 1
finetune.sac_steps_per_epoch = 40
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regimeflow"))
        .current_dir(dir)
        .env_remove("REGIMEFLOW_OUT")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn workspace() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("tiny.cfg"), TINY).unwrap();
    d
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generated_data_is_reproducible() {
    let w = workspace();
    for out in ["a", "b"] {
        let o = run(w.path(), &["gen-data", "--config", "tiny.cfg", "--seed", "7", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = tree(&w.path().join("a"));
    assert_eq!(a, tree(&w.path().join("b")));
    let names: Vec<_> = a.iter().map(|(p, _)| p.to_string_lossy().into_owned()).collect();
    for f in ["ohlcv.csv", "sectors.csv", "market.csv", "earnings.csv", "regimes.csv", "resolved_config.txt"] {
        assert!(names.iter().any(|n| n == f), "missing {f}");
    }
}

#[test]
fn train_evaluate_report_round_trip() {
    let w = workspace();
    let p = w.path();
    let o = run(p, &["train", "--config", "tiny.cfg", "--stages", "1-2", "--out", "t"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(p, &["train", "--config", "tiny.cfg", "--stages", "3,4", "--out", "t"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for stage in 1..=4 {
        assert!(p.join(format!("t/checkpoints/stage-{stage}/manifest.json")).exists());
    }
    let diag = fs::read_to_string(p.join("t/logs/stage3_controller.csv")).unwrap();
    assert_eq!(
        diag.lines().next().unwrap(),
        "step,reward,critic1_loss,critic2_loss,actor_loss,alpha_ent,tau,alpha_blend"
    );

    let ckpt = p.join("t/checkpoints/stage-4");
    let before = tree(&ckpt);
    let o = run(p, &["evaluate", "--checkpoint", "t/checkpoints/stage-4", "--out", "e"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(tree(&ckpt), before, "evaluation touched the checkpoint");
    for f in ["report.txt", "report.csv", "regimes.csv", "trajectory.csv", "forecasts.csv", "resolved_config.txt"] {
        assert!(p.join("e").join(f).exists(), "missing {f}");
    }

    let o = run(p, &["report", "--input", "e", "--out", "r"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.txt", "report.csv", "regimes.csv", "trajectory.csv"] {
        assert_eq!(fs::read(p.join("e").join(f)).unwrap(), fs::read(p.join("r").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stage_two_checkpoint_evaluates_with_fixed_threshold() {
    let w = workspace();
    let p = w.path();
    assert_eq!(code(&run(p, &["train", "--config", "tiny.cfg", "--stages", "1-2", "--out", "t"])), 0);
    let o = run(p, &["evaluate", "--checkpoint", "t/checkpoints/stage-2", "--out", "e"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("model: no-sac"));
    let traj = fs::read_to_string(p.join("e/trajectory.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        traj.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[1] == rows[0][1] && r[2] == 0.5));
}

#[test]
fn snapshot_alone_reproduces_a_run() {
    let w = workspace();
    let p = w.path();
    assert_eq!(code(&run(p, &["train", "--config", "tiny.cfg", "--seed", "3", "--stages", "1-2", "--out", "a"])), 0);
    let o = run(p, &["train", "--config", "a/resolved_config.txt", "--stages", "1-2", "--out", "b"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(tree(&p.join("a/checkpoints")), tree(&p.join("b/checkpoints")));
}

#[test]
fn exit_codes() {
    let w = workspace();
    let p = w.path();
    assert_eq!(code(&run(p, &["no-such-command"])), 1);
    assert_eq!(code(&run(p, &["train", "--no-such-flag"])), 1);
    assert_eq!(code(&run(p, &["train", "--set", "no.key=1", "--out", "x"])), 1);
    assert_eq!(code(&run(p, &["train", "--set", "split.train=0.9", "--out", "x"])), 1);
    assert_eq!(code(&run(p, &["--help"])), 0);

    // Resuming without the previous stage is an ordering violation.
    assert_eq!(code(&run(p, &["train", "--config", "tiny.cfg", "--stages", "2-4", "--out", "fresh"])), 2);

    assert_eq!(code(&run(p, &["train", "--config", "tiny.cfg", "--stages", "1", "--out", "t"])), 0);
    let other = run(p, &["train", "--config", "tiny.cfg", "--set", "pathway.lr=0.01", "--stages", "2", "--out", "t"]);
    assert_eq!(code(&other), 2, "config mismatch");
    let forced = run(
        p,
        &["train", "--config", "tiny.cfg", "--set", "pathway.lr=0.01", "--stages", "2", "--out", "t2", "--resume",
          "t/checkpoints/stage-1", "--allow-config-mismatch"],
    );
    assert_eq!(code(&forced), 0, "{}", String::from_utf8_lossy(&forced.stderr));

    let blob = p.join("t/checkpoints/stage-1/tensors.bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&blob, bytes).unwrap();
    assert_eq!(code(&run(p, &["evaluate", "--checkpoint", "t/checkpoints/stage-1", "--out", "e"])), 2);

    let o = run(p, &["gradcheck", "--out", "g"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(p.join("g/gradcheck.csv").exists());
}

#[test]
fn ablation_writes_a_variant_table() {
    let w = workspace();
    let p = w.path();
    let o = run(p, &["ablate", "--config", "tiny.cfg", "--seeds", "4", "--out", "ab"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(p.join("ab/ablation.txt")).unwrap();
    for v in ["full", "no-sac", "no-dual", "no-ae"] {
        assert!(table.lines().any(|l| l.starts_with(v)), "{v} missing from\n{table}");
        assert!(p.join("ab/seed-4").join(v).join("report.csv").exists());
    }
    let csv = fs::read_to_string(p.join("ab/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 3);
}
