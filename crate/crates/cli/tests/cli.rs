use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use iopscope::commands::{annotate_with, cmd_analyze, cmd_annotate, cmd_ingest, cmd_score};
use iopscope::{ErrorClass, RunConfig};
use iopscope_core::calendar::DateRange;
use iopscope_core::detect::Detection;
use iopscope_core::export::{read_spectrogram, write_detections};
use iopscope_core::fixtures;
use iopscope_core::ingest::{save_manifest, ManifestEntry, QueryManifest, TimeSeries};
use iopscope_core::kb::{load_kb, save_kb, set_implementation};
use iopscope_core::review::{DelayEntry, DelayTable};
use iopscope_core::scoring::NO_BASELINE_NOTE;
use iopscope_core::wavelet::WaveletKind;
use iopscope_core::Workspace;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_iopscope"));
    c.env("RUST_LOG", "info");
    for (k, _) in std::env::vars() {
        if k.starts_with("IOPSCOPE_") {
            c.env_remove(k);
        }
    }
    c
}

fn date(s: &str) -> chrono::NaiveDate {
    s.parse().unwrap()
}

fn scores_fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/nasu_scores.toml")
}

/// Fifteen-entry manifest over the second half of 2015 with file sources.
fn write_inputs(dir: &Path, skip: Option<u32>) -> RunConfig {
    let range: DateRange = "2015-07-01..2015-12-31".parse().unwrap();
    let ids = [5u32, 6, 7, 8, 9, 10, 11, 12, 13, 14, 18, 20, 23, 24, 25];
    let manifest = QueryManifest {
        period: range,
        entries: ids
            .iter()
            .map(|&id| ManifestEntry {
                component_id: id,
                query: format!("q{id}"),
                label: format!("c{id}"),
            })
            .collect(),
    };
    let series_dir = dir.join("raw");
    std::fs::create_dir_all(&series_dir).unwrap();
    for &id in &ids {
        if Some(id) == skip {
            continue;
        }
        let s = fixtures::synthetic_series(u64::from(id), id, range, 2.0, &[]);
        std::fs::write(series_dir.join(format!("c{id}.csv")), s.to_csv()).unwrap();
    }
    std::fs::write(dir.join("manifest.toml"), save_manifest(&manifest)).unwrap();
    RunConfig {
        manifest: Some(dir.join("manifest.toml")),
        series_dir: Some(series_dir),
        out: dir.join("out"),
        ..RunConfig::default()
    }
}

#[test]
fn ingest_writes_one_series_per_entry_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_inputs(dir.path(), None);
    let summary = cmd_ingest(&cfg).unwrap();
    assert_eq!(summary.series.len(), 15);
    assert!(summary.series.iter().all(|&(_, days)| days == 184));
    let ws = cfg.workspace();
    let first: Vec<Vec<u8>> = summary
        .series
        .iter()
        .map(|(id, _)| std::fs::read(ws.series_path(*id)).unwrap())
        .collect();
    std::fs::remove_dir_all(&cfg.out).unwrap();
    cmd_ingest(&cfg).unwrap();
    let second: Vec<Vec<u8>> = summary
        .series
        .iter()
        .map(|(id, _)| std::fs::read(ws.series_path(*id)).unwrap())
        .collect();
    assert_eq!(first, second);
}

#[test]
fn ingest_missing_source_names_the_entry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_inputs(dir.path(), Some(7));
    let err = cmd_ingest(&cfg).unwrap_err();
    assert_eq!(err.class, ErrorClass::Input);
    assert!(err.to_string().contains("entry 7"), "{err}");

    let out = bin()
        .args(["ingest", "--manifest"])
        .arg(cfg.manifest.as_ref().unwrap())
        .arg("--series-dir")
        .arg(cfg.series_dir.as_ref().unwrap())
        .arg("--out")
        .arg(&cfg.out)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("entry 7"));
}

fn workspace_with(dir: &Path, series: &[TimeSeries]) -> RunConfig {
    let cfg = RunConfig {
        out: dir.join("out"),
        ..RunConfig::default()
    };
    let ws = cfg.workspace();
    for s in series {
        ws.write_series(s).unwrap();
    }
    cfg
}

#[test]
fn analyze_finds_the_injected_burst() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = workspace_with(dir.path(), &[fixtures::synthetic_burst(3)]);
    let period: DateRange = "2015-07-01..2015-12-31".parse().unwrap();
    cfg.periods = Some(vec![period]);
    let summary = cmd_analyze(&cfg).unwrap();
    assert_eq!(summary.cells, 1);
    assert_eq!(summary.detections.len(), 1);
    let d = &summary.detections[0];
    assert_eq!(d.component_id, 14);
    assert!((d.onset - date("2015-11-30")).num_days().abs() <= 2);
    assert!(d.duration_days.abs_diff(14) <= 4);
    let ws = cfg.workspace();
    let stored: Vec<Detection> = iopscope_core::export::read_detections(&ws.detections_path()).unwrap();
    assert_eq!(stored, summary.detections);
    for kind in [WaveletKind::Morlet, WaveletKind::MexicanHat] {
        let s = read_spectrogram(&ws.analysis_dir(&period), 14, kind).unwrap();
        assert_eq!(s.days(), 184);
    }
}

#[test]
fn analyze_flat_zero_series() {
    let dir = tempfile::tempdir().unwrap();
    let period: DateRange = "2016-01-01..2016-12-31".parse().unwrap();
    let mut cfg = workspace_with(dir.path(), &[TimeSeries::new(9, period.start, vec![0; 366])]);
    cfg.periods = Some(vec![period]);
    let summary = cmd_analyze(&cfg).unwrap();
    assert!(summary.detections.is_empty());
    let s = read_spectrogram(&cfg.workspace().analysis_dir(&period), 9, WaveletKind::Morlet).unwrap();
    assert!(s.coefficients.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn analyze_rejects_series_too_short_for_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let period: DateRange = "2016-01-01..2016-01-10".parse().unwrap();
    let mut cfg = workspace_with(dir.path(), &[TimeSeries::new(9, period.start, vec![1; 10])]);
    cfg.periods = Some(vec![period]);
    let err = cmd_analyze(&cfg).unwrap_err();
    assert_eq!(err.class, ErrorClass::Input);
}

fn detection(component: u32, onset: &str, days: u32) -> Detection {
    Detection {
        component_id: component,
        onset: date(onset),
        duration_days: days,
        peak_scale: 8.0,
        intensity: 20.0,
        wavelets_agreeing: vec![WaveletKind::Morlet, WaveletKind::MexicanHat],
    }
}

fn annotate_setup(dir: &Path, detections: &[Detection], delays: &DelayTable) -> RunConfig {
    let kb_path = dir.join("kb.toml");
    std::fs::write(&kb_path, save_kb(&fixtures::nasu_base())).unwrap();
    let delays_path = dir.join("delays.toml");
    std::fs::write(&delays_path, delays.to_toml()).unwrap();
    let cfg = RunConfig {
        kb: Some(kb_path),
        delays: Some(delays_path),
        out: dir.join("out"),
        ..RunConfig::default()
    };
    write_detections(&cfg.workspace().detections_path(), detections).unwrap();
    cfg
}

#[test]
fn annotate_component_14_with_table_delay() {
    let dir = tempfile::tempdir().unwrap();
    let delays = DelayTable {
        default_months: None,
        entries: vec![DelayEntry {
            component: 14,
            months: 10,
            onset: Some(date("2015-11-30")),
        }],
    };
    let cfg = annotate_setup(dir.path(), &[detection(14, "2015-11-30", 14)], &delays);
    let summary = cmd_annotate(&cfg).unwrap();
    assert_eq!(summary.accepted, 1);
    assert!(summary.kb_changed);
    let kb = load_kb(&std::fs::read_to_string(cfg.kb.as_ref().unwrap()).unwrap()).unwrap();
    let node = &kb.nodes[&14];
    assert_eq!(
        node.formulation,
        "Understatement of the level of scientific achievements of the NASU"
    );
    assert_eq!(node.annotations.len(), 1);
    let a = &node.annotations[0];
    assert_eq!(
        (a.onset, a.duration_days, a.impact_delay_months),
        (date("2015-11-30"), 14, 10)
    );

    // A second run has nothing pending and leaves the file alone.
    let before = std::fs::read(cfg.kb.as_ref().unwrap()).unwrap();
    let again = cmd_annotate(&cfg).unwrap();
    assert_eq!((again.accepted, again.kb_changed), (0, false));
    assert_eq!(std::fs::read(cfg.kb.as_ref().unwrap()).unwrap(), before);
}

#[test]
fn annotate_empty_detection_list_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = annotate_setup(dir.path(), &[], &DelayTable::default());
    let before = std::fs::read(cfg.kb.as_ref().unwrap()).unwrap();
    let summary = cmd_annotate(&cfg).unwrap();
    assert!(!summary.kb_changed);
    assert_eq!(std::fs::read(cfg.kb.as_ref().unwrap()).unwrap(), before);
}

#[test]
fn annotate_two_throwins_splits_the_project() {
    let dir = tempfile::tempdir().unwrap();
    let delays = DelayTable {
        default_months: None,
        entries: vec![
            DelayEntry {
                component: 25,
                months: 9,
                onset: Some(date("2015-03-16")),
            },
            DelayEntry {
                component: 25,
                months: 11,
                onset: Some(date("2015-07-06")),
            },
        ],
    };
    let cfg = annotate_setup(
        dir.path(),
        &[detection(25, "2015-03-16", 9), detection(25, "2015-07-06", 15)],
        &delays,
    );
    cmd_annotate(&cfg).unwrap();
    let kb = load_kb(&std::fs::read_to_string(cfg.kb.as_ref().unwrap()).unwrap()).unwrap();
    let family: Vec<_> = kb
        .projects()
        .filter(|n| n.id == 25 || n.clone_of == Some(25))
        .map(|n| {
            (
                n.formulation.as_str(),
                n.annotations[0].duration_days,
                n.annotations[0].impact_delay_months,
            )
        })
        .collect();
    assert_eq!(
        family,
        vec![
            ("Bureaucracy in the NASU 2", 15, 11),
            ("Bureaucracy in the NASU 1", 9, 9)
        ]
    );
}

#[test]
fn annotate_unknown_component_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let delays = DelayTable {
        default_months: Some(6),
        entries: Vec::new(),
    };
    let cfg = annotate_setup(dir.path(), &[detection(99, "2015-03-16", 9)], &delays);
    let err = cmd_annotate(&cfg).unwrap_err();
    assert_eq!(err.class, ErrorClass::Validation);
    assert!(err.to_string().contains("99"), "{err}");
}

#[test]
fn interactive_review_accepts_rejects_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let delays = DelayTable {
        default_months: Some(6),
        entries: Vec::new(),
    };
    let ds = [
        detection(5, "2015-06-01", 10),
        detection(6, "2015-07-01", 7),
        detection(8, "2015-08-01", 12),
    ];
    let cfg = annotate_setup(dir.path(), &ds, &delays);
    let mut input = std::io::Cursor::new("y\nwhat\nn\n3\n");
    let mut output = Vec::new();
    let summary = annotate_with(&cfg, Some((&mut input, &mut output))).unwrap();
    assert_eq!((summary.accepted, summary.rejected, summary.pending), (2, 1, 0));
    let shown = String::from_utf8(output).unwrap();
    assert!(shown.contains("unrecognised answer"));
    assert!(shown.contains("Lack of implementation"));
    let kb = load_kb(&std::fs::read_to_string(cfg.kb.as_ref().unwrap()).unwrap()).unwrap();
    assert_eq!(kb.nodes[&5].annotations[0].impact_delay_months, 6);
    assert!(kb.nodes[&6].annotations.is_empty());
    assert_eq!(kb.nodes[&8].annotations[0].impact_delay_months, 3);
}

#[test]
fn interactive_quit_leaves_rest_pending() {
    let dir = tempfile::tempdir().unwrap();
    let delays = DelayTable {
        default_months: Some(6),
        entries: Vec::new(),
    };
    let cfg = annotate_setup(
        dir.path(),
        &[detection(5, "2015-06-01", 10), detection(6, "2015-07-01", 7)],
        &delays,
    );
    let mut input = std::io::Cursor::new("s\nq\n");
    let mut output = Vec::new();
    let summary = annotate_with(&cfg, Some((&mut input, &mut output))).unwrap();
    assert_eq!((summary.accepted, summary.pending, summary.kb_changed), (0, 2, false));
}

#[test]
fn score_sheet_reproduces_published_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        scores: Some(scores_fixture()),
        out: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let report = cmd_score(&cfg).unwrap();
    assert!((report.retrospective_average.unwrap() - 0.512007).abs() < 1e-6);
    assert_eq!(report.forecast, 0.4886508);
    let md = std::fs::read_to_string(Workspace::new(dir.path()).report_md_path()).unwrap();
    for needle in ["0.512007", "0.4886508", "io_likely", "4.6%"] {
        assert!(md.contains(needle), "{needle} missing from\n{md}");
    }

    // The flag wins over the sheet's factor.
    let cfg = RunConfig {
        factor: Some(1.0),
        ..cfg
    };
    assert_eq!(cmd_score(&cfg).unwrap().forecast, 0.2443254);
}

#[test]
fn score_all_zero_degrees_reports_zero_average() {
    let dir = tempfile::tempdir().unwrap();
    let mut kb = fixtures::nasu_2015();
    let ids: Vec<u32> = kb.projects().map(|n| n.id).collect();
    for id in ids {
        kb = set_implementation(&kb, id, 0.0).unwrap();
    }
    let kb_path = dir.path().join("kb.toml");
    std::fs::write(&kb_path, save_kb(&kb)).unwrap();
    let out = bin()
        .args([
            "score",
            "--periods",
            "2015-01-01..2015-12-31,2016-01-01..2016-06-30",
            "--kb",
        ])
        .arg(&kb_path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("zero"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn score_single_period_has_no_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let kb_path = dir.path().join("kb.toml");
    std::fs::write(&kb_path, fixtures::NASU_2015).unwrap();
    let cfg = RunConfig {
        kb: Some(kb_path),
        periods: Some(vec![DateRange::calendar_year(2016)]),
        out: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let report = cmd_score(&cfg).unwrap();
    assert_eq!(report.verdict, None);
    assert_eq!(report.notes, vec![NO_BASELINE_NOTE.to_string()]);
    let md = std::fs::read_to_string(Workspace::new(dir.path()).report_md_path()).unwrap();
    assert!(md.contains(NO_BASELINE_NOTE));
}

#[test]
fn report_subcommand_prints_stored_report() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .arg("score")
        .arg("--scores")
        .arg(scores_fixture())
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    let out = bin().arg("report").arg("--out").arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("Verdict: io_likely"));
}

#[test]
fn config_errors_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let overlapping = bin()
        .args(["score", "--periods", "2015-01-01..2015-12-31,2015-06-01..2016-06-30"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(overlapping.status.code(), Some(2));
    let missing_kb = bin().arg("annotate").arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(missing_kb.status.code(), Some(2));
    let bad_flag = bin().args(["score", "--periods", "2015"]).output().unwrap();
    assert_eq!(bad_flag.status.code(), Some(2));
}

#[test]
fn config_file_and_env_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "scores = \"scores.toml\"\nfactor = 1.5\nout = \"ws\"\n[detection]\nthreshold_k = 5.0\n",
    )
    .unwrap();
    std::fs::copy(scores_fixture(), dir.path().join("scores.toml")).unwrap();
    let out = bin().arg("score").arg("--config").arg(&cfg_path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("ws/report.json")).unwrap();
    assert!(report.contains("\"extrapolation_factor\": 1.5"), "{report}");

    let out = bin()
        .arg("score")
        .arg("--config")
        .arg(&cfg_path)
        .env("IOPSCOPE_FACTOR", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("0.4886508"));
    let out = bin()
        .arg("score")
        .arg("--config")
        .arg(&cfg_path)
        .env("IOPSCOPE_FACTOR", "2")
        .args(["--factor", "1"])
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("= 0.2443254"));
}

#[test]
fn serve_refuses_invalid_kb() {
    let dir = tempfile::tempdir().unwrap();
    let kb_path = dir.path().join("kb.toml");
    std::fs::write(
        &kb_path,
        "format = 1\nroot = 0\n[[nodes]]\nid = 0\nformulation = \"x\"\nkind = \"goal\"\n",
    )
    .unwrap();
    let out = bin()
        .arg("serve")
        .arg("--kb")
        .arg(&kb_path)
        .args(["--port", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

#[test]
fn serve_answers_health() {
    let dir = tempfile::tempdir().unwrap();
    let kb_path = dir.path().join("kb.toml");
    std::fs::write(&kb_path, fixtures::NASU_2015).unwrap();
    let port = free_port();
    let mut child = bin()
        .arg("serve")
        .arg("--kb")
        .arg(&kb_path)
        .arg("--out")
        .arg(dir.path())
        .args(["--port", &port.to_string()])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let response = loop {
        if let Ok(mut stream) = TcpStream::connect(("127.0.0.1", port)) {
            write!(
                stream,
                "GET /api/v1/health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n"
            )
            .unwrap();
            let mut text = String::new();
            stream.read_to_string(&mut text).unwrap();
            break text;
        }
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    let stderr = BufReader::new(child.stderr.take().unwrap());
    let _ = stderr.lines().count();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"status\":\"ok\""));
}
