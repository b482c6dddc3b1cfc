use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use coopbo::agents::PolicyKind;
use coopbo::experiment::{
    aggregate, read_metrics, run_suite, scores_by_user, trace_path, PriorPair, SuiteConfig, Table, METRICS_FILE, TABLES_DIR, TRACES_DIR,
};
use coopbo::game::{verify_scores, GameTrace};
use coopbo::grid::PriorKind;
use coopbo::plot::{emit_plots, render_from_csv};

fn small_suite(dir: &Path) -> SuiteConfig {
    SuiteConfig {
        output_dir: dir.to_path_buf(),
        seed: 42,
        policies: vec![PolicyKind::RandomAi, PolicyKind::GreedyAi],
        prior_pairs: vec![PriorPair::new(PriorKind::Global, PriorKind::Local)],
        n_functions: 1,
        n_prior_samples: 2,
        rounds: 5,
        entropy_samples: 50,
        ..SuiteConfig::default()
    }
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn suite_writes_one_trace_and_row_per_episode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_suite(tmp.path());
    let summary = run_suite(&cfg, Some(1)).unwrap();
    assert_eq!(summary.episodes, 16);
    assert_eq!(summary.reused, 0);
    assert_eq!(fs::read_dir(tmp.path().join(TRACES_DIR)).unwrap().count(), 16);

    let rows = read_metrics(tmp.path()).unwrap();
    assert_eq!(rows.len(), 16);
    for (row, ep) in rows.iter().zip(cfg.episodes()) {
        assert_eq!(row.id, ep.id);
        assert_eq!(row.scores.len(), 5);
        let trace: GameTrace = serde_json::from_str(&fs::read_to_string(trace_path(tmp.path(), &ep.id)).unwrap()).unwrap();
        assert_eq!(verify_scores(&trace).unwrap(), row.scores);
        assert_eq!(row.final_score, *row.scores.last().unwrap());
    }

    let table = scores_by_user(&rows);
    assert_eq!(table.columns.len(), 4);
    assert_eq!(table.rows.len(), 2);
}

#[test]
fn reruns_are_byte_identical_and_resume_reuses_traces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_suite(&small_suite(a.path()), Some(1)).unwrap();
    run_suite(&small_suite(b.path()), Some(2)).unwrap();
    for t in Table::ALL {
        aggregate(a.path(), t).unwrap();
        aggregate(b.path(), t).unwrap();
    }
    let sa = snapshot(a.path());
    let sb = snapshot(b.path());
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        if k.file_name().unwrap() != "suite.toml" {
            assert!(v == &sb[k], "{} differs", k.display());
        }
    }

    // Drop a few traces and the metrics file; a rerun restores them exactly.
    let cfg = small_suite(a.path());
    let eps = cfg.episodes();
    for ep in eps.iter().step_by(5) {
        fs::remove_file(trace_path(a.path(), &ep.id)).unwrap();
    }
    fs::remove_file(a.path().join(METRICS_FILE)).unwrap();
    let summary = run_suite(&cfg, Some(1)).unwrap();
    assert_eq!(summary.reused, 16 - eps.iter().step_by(5).count());
    assert_eq!(fs::read(a.path().join(METRICS_FILE)).unwrap(), sb[Path::new(METRICS_FILE)]);

    // A different planner configuration invalidates every stored trace.
    let mut changed = cfg.clone();
    changed.planner.c = 0.5;
    assert_eq!(run_suite(&changed, Some(1)).unwrap().reused, 0);
}

#[test]
fn single_episode_cells_have_zero_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_suite(tmp.path());
    cfg.n_prior_samples = 1;
    run_suite(&cfg, Some(1)).unwrap();
    let table = scores_by_user(&read_metrics(tmp.path()).unwrap());
    for (_, cells) in &table.rows {
        for cell in cells.iter().flatten() {
            assert_eq!(cell.n, 1);
            assert_eq!(cell.sd, 0.0);
        }
    }
}

#[test]
fn score_curves_and_plots_regenerate_from_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_suite(tmp.path());
    run_suite(&cfg, Some(1)).unwrap();
    let [csv, txt] = aggregate(tmp.path(), Table::ScoreCurves).unwrap();
    assert!(csv.starts_with(tmp.path().join(TABLES_DIR)) && txt.exists());
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * cfg.rounds);
    for p in [PolicyKind::RandomAi, PolicyKind::GreedyAi] {
        assert_eq!(lines.iter().filter(|l| l.starts_with(&format!("{},", p.label()))).count(), cfg.rounds);
    }

    let written = emit_plots(tmp.path(), &[]).unwrap();
    assert!(written.iter().any(|p| p.extension().is_some_and(|e| e == "svg")));
    let before: Vec<(PathBuf, Vec<u8>)> = written.iter().map(|p| (p.clone(), fs::read(p).unwrap())).collect();
    fs::remove_dir_all(tmp.path().join(TRACES_DIR)).unwrap();
    for (p, _) in &before {
        if p.extension().is_some_and(|e| e == "svg") {
            fs::remove_file(p).unwrap();
        }
    }
    render_from_csv(tmp.path()).unwrap();
    for (p, bytes) in before {
        assert_eq!(fs::read(&p).unwrap(), bytes, "{}", p.display());
    }
}
