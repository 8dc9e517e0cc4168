use std::fs;

use trackattack::attack::basic::{BasicAttackConfig, Method, Schedule};
use trackattack::attack::spark::SparkConfig;
use trackattack::harness::report::FRAMES_HEADER;
use trackattack::harness::{run_suite, AttackSpec, ExperimentConfig, KernelPair, RunOptions, SuiteSpec};
use trackattack::objective::ObjectiveKind;
use trackattack::scene::SceneConfig;
use trackattack::tracker::FeatureKernel;

fn config() -> ExperimentConfig {
    ExperimentConfig {
        suite: SuiteSpec {
            count: 3,
            scene: SceneConfig {
                num_frames: 16,
                ..SceneConfig::default()
            },
        },
        attacks: vec![
            AttackSpec::spark("spark", SparkConfig::default()),
            AttackSpec::basic(
                "ba_r2",
                BasicAttackConfig {
                    method: Method::Bim,
                    schedule: Schedule::BaR2,
                    ..BasicAttackConfig::default()
                },
            ),
        ],
        objectives: vec![ObjectiveKind::Ua, ObjectiveKind::Ta],
        kernel_pairs: vec![
            KernelPair::white_box(FeatureKernel::Identity),
            KernelPair {
                attacker: FeatureKernel::BoxBlur3,
                victim: FeatureKernel::Identity,
            },
        ],
        plot_videos: 3,
        ..ExperimentConfig::default()
    }
}

#[test]
fn resume_skips_finished_cells_and_matches_a_fresh_run() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        out: Some(dir.path().to_path_buf()),
        workers: Some(1),
    };
    let first = run_suite(&cfg, &opts).unwrap();
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();

    // drop a few cells as if the run had been interrupted
    let mut removed = 0;
    for c in first.cells.iter().step_by(5) {
        fs::remove_file(dir.path().join(&c.id).join("metrics.json")).unwrap();
        removed += 1;
    }
    assert!(removed > 0);
    let resumed = run_suite(&cfg, &opts).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("results.csv")).unwrap(), csv);
    assert_eq!(resumed.cells, first.cells);

    let fresh = run_suite(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(fresh.table.to_csv(), csv);
}

#[test]
fn plots_are_valid_svg_and_agree_with_frames_csv() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let suite = run_suite(
        &cfg,
        &RunOptions {
            out: Some(dir.path().to_path_buf()),
            workers: Some(2),
        },
    )
    .unwrap();
    let cols: Vec<&str> = FRAMES_HEADER.split(',').collect();
    for c in &suite.cells {
        let cell = dir.path().join(&c.id);
        let frames = fs::read_to_string(cell.join("frames.csv")).unwrap();
        let rows: Vec<Vec<String>> = frames.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
        assert_eq!(rows.len(), cfg.suite.scene.num_frames);
        for (svg, series) in [("distance.svg", "cle_gt"), ("perturbation.svg", "mean_abs_pert")] {
            let text = fs::read_to_string(cell.join(svg)).unwrap();
            let doc = roxmltree::Document::parse(&text).unwrap();
            let line = doc
                .descendants()
                .find(|n| n.attribute("data-series") == Some(series))
                .unwrap_or_else(|| panic!("{svg} lacks {series}"));
            let col = cols.iter().position(|h| *h == series).unwrap();
            let from_csv: Vec<f64> = rows.iter().map(|r| r[col].parse().unwrap()).collect();
            let from_svg: Vec<f64> = line.attribute("data-values").unwrap().split(';').map(|v| v.parse().unwrap()).collect();
            assert_eq!(from_csv, from_svg, "{} {svg}", c.id);
        }
        if c.objective == ObjectiveKind::Ta {
            let text = fs::read_to_string(cell.join("distance.svg")).unwrap();
            let doc = roxmltree::Document::parse(&text).unwrap();
            assert!(doc.descendants().any(|n| n.attribute("data-series") == Some("cle_target")));
        }
    }
}

#[test]
fn summary_json_holds_the_transfer_identities() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let suite = run_suite(
        &cfg,
        &RunOptions {
            out: Some(dir.path().to_path_buf()),
            workers: Some(1),
        },
    )
    .unwrap();
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!(rows.len(), suite.table.rows.len());
    for r in rows.iter().filter(|r| r["attack"] != "clean") {
        // drop = org − attacked, for every row including the transfer pair
        let (org, prec, drop) = (r["org_prec"].as_f64().unwrap(), r["precision"].as_f64().unwrap(), r["prec_drop"].as_f64().unwrap());
        assert!((org - prec - drop).abs() < 1e-9, "{r}");
    }
    let transfer = rows
        .iter()
        .filter(|r| r["attacker_kernel"] == "box_blur_3" && r["victim_kernel"] == "identity")
        .count();
    assert_eq!(transfer, cfg.attacks.len() * cfg.objectives.len());
    let cells = summary["cells"].as_array().unwrap();
    assert_eq!(cells.len(), suite.cells.len());
    assert!(cells.iter().all(|c| c["error"].is_null()));
}
