use std::fs;
use std::path::Path;

use stratid::kernel::{read_rkhs, rkhs_to_bytes, KernelSpec, RkhsFile, VectorRole};
use stratid::pipeline::*;
use stratid::trajectory::read_manifest;

fn quick() -> PipelineConfig {
    let mut c = PipelineConfig {
        workers: 1,
        ..PipelineConfig::default()
    };
    c.generate.set_counts([2, 2, 2]);
    c.dei.iterations = 2;
    c.dei.episodes_per_iter = 5;
    c.kpirl.max_iterations = 3;
    c.analyze.tsne_iterations = 200;
    c
}

fn learned(dir: &Path, cfg: &PipelineConfig) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("data");
    let out = dir.join("out");
    run_generate(cfg, &data).unwrap();
    let report = run_learn(cfg, &data, &out, false).unwrap();
    assert_eq!(report.exit_code(), EXIT_OK);
    (data, out)
}

#[test]
fn generate_learn_analyze_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick();
    let (data, out) = learned(dir.path(), &cfg);
    let entries = read_manifest(&data).unwrap();
    assert_eq!(entries.len(), 6);
    for e in &entries {
        for role in [VectorRole::Behavior, VectorRole::Reward] {
            let f = read_rkhs(fs::read(rkhs_path(&out, role, &e.match_id)).unwrap().as_slice()).unwrap();
            assert_eq!(f.role, role);
            assert!(!f.vector.is_empty());
        }
        let trace = fs::read_to_string(trace_path(&out, &e.match_id)).unwrap();
        assert!(trace.starts_with("iteration,residual,beta,expert_distance"));
        assert!(trace.lines().count() >= 2);
    }

    let report = run_analyze(&cfg, &data, &out).unwrap();
    assert_eq!(report.roles.len(), 2);
    for r in &report.roles {
        assert_eq!(r.items, 6);
        assert!((0.0..=1.0).contains(&r.loo_accuracy));
        assert_eq!(r.confusion.total(), 6);
        let dir = out.join(ANALYSIS_DIR).join(r.role.to_string());
        for f in ["distances.csv", "tsne.csv", "dendrogram.csv", "dendrogram.svg", "confusion.csv", "accuracy.txt", "clusters.txt"] {
            assert!(dir.join(f).is_file(), "{f}");
        }
    }
    let summary = fs::read_to_string(out.join(ANALYSIS_DIR).join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn learn_resumes_and_force_relearns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick();
    let (data, out) = learned(dir.path(), &cfg);
    let reward = rkhs_path(&out, VectorRole::Reward, "m00");
    let before = fs::read(&reward).unwrap();

    fs::remove_file(rkhs_path(&out, VectorRole::Behavior, "m03")).unwrap();
    let again = run_learn(&cfg, &data, &out, false).unwrap();
    let relearned: Vec<&str> = again
        .outcomes
        .iter()
        .filter(|o| matches!(o.status, LearnStatus::Learned { .. }))
        .map(|o| o.match_id.as_str())
        .collect();
    assert_eq!(relearned, ["m03"]);

    let forced = run_learn(&cfg, &data, &out, true).unwrap();
    assert!(forced.outcomes.iter().all(|o| matches!(o.status, LearnStatus::Learned { .. })));
    assert_eq!(fs::read(&reward).unwrap(), before);
}

#[test]
fn corrupt_match_gives_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick();
    let data = dir.path().join("data");
    run_generate(&cfg, &data).unwrap();
    fs::write(data.join("m01.match"), "not a match\n").unwrap();
    let report = run_learn(&cfg, &data, &dir.path().join("out"), false).unwrap();
    assert_eq!(report.failed(), 1);
    assert_eq!(report.exit_code(), EXIT_PARTIAL);
    assert!(rkhs_path(&dir.path().join("out"), VectorRole::Reward, "m00").exists());
}

#[test]
fn analyze_needs_four_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick();
    cfg.generate.set_counts([1, 1, 1]);
    let (data, out) = learned(dir.path(), &cfg);
    let e = run_analyze(&cfg, &data, &out).unwrap_err();
    assert_eq!(e.exit_code(), EXIT_FAILURE);
}

#[test]
fn replay_writes_overlay_and_rejects_foreign_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick();
    cfg.generate.set_counts([1, 1, 1]);
    let (data, out) = learned(dir.path(), &cfg);
    let reward = rkhs_path(&out, VectorRole::Reward, "m00");
    let replay_dir = dir.path().join("replay");
    let r = run_replay(&cfg, &data.join("m00.match"), &reward, &replay_dir).unwrap();
    let csv = fs::read_to_string(replay_dir.join("m00_overlay.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "time,expert_x,expert_y,policy_x,policy_y");
    assert_eq!(csv.lines().count(), r.rows.len() + 1);
    assert_eq!(r.rows[0].displacement(), 0.0);
    assert!(replay_dir.join("m00_overlay.svg").is_file());

    let mut file = read_rkhs(fs::read(&reward).unwrap().as_slice()).unwrap();
    file.spec = KernelSpec::new(0.5, file.spec.arena_width, file.spec.arena_height).unwrap();
    let foreign = dir.path().join("foreign.rkhs");
    fs::write(&foreign, rkhs_to_bytes(&file)).unwrap();
    let e = run_replay(&cfg, &data.join("m00.match"), &foreign, &replay_dir).unwrap_err();
    assert_eq!(e.exit_code(), EXIT_FAILURE);

    let behavior = RkhsFile {
        role: VectorRole::Behavior,
        ..file
    };
    fs::write(&foreign, rkhs_to_bytes(&behavior)).unwrap();
    assert!(run_replay(&cfg, &data.join("m00.match"), &foreign, &replay_dir).is_err());
}

#[test]
fn bench_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick();
    cfg.bench.rewards = 3;
    cfg.bench.budget = 500;
    cfg.bench.crop_ticks = 5;
    cfg.bench.eval_episodes = 5;
    let report = run_bench_rl(&cfg, dir.path()).unwrap();
    assert_eq!(report.rows.len(), 12);
    let summary = fs::read_to_string(dir.path().join("bench_summary.txt")).unwrap();
    assert!(summary.contains("budget=500"));
    assert!(summary.contains("crop_ticks=5"));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
}
