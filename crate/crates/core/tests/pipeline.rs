mod common;

use common::{diff, small_spec, snapshot, synth};
use vidsum_core::grouping::{read_scores_csv, WindowsManifest, SCORES_CSV, WINDOWS_MANIFEST};
use vidsum_core::manifest::{RunManifest, StageId};
use vidsum_core::pipeline::{evaluate_run, read_accounting, Pipeline, Stage2State, STAGE2_STATE};
use vidsum_core::summarizer::{Modality, SummaryTree, SUMMARY_TEXT, SUMMARY_TREE};
use vidsum_core::util;
use vidsum_core::Error;

#[test]
fn full_run_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let (video, config) = synth(&small_spec(), dir.path());
    let run = dir.path().join("run");
    let mut p = Pipeline::open(&run, config.clone()).unwrap();
    p.run(&video.frames_dir, Some(&video.transcript)).unwrap();

    for f in [
        "frames.json",
        "changepoints.json",
        "sampling.json",
        "stage1.json",
        "captions.json",
        "labels.json",
        "assignments.json",
        "stage2.json",
        "windows.json",
        "summary_tree.json",
        "summary.txt",
        "scores.csv",
        "run.json",
        "logs/timings.jsonl",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let m = RunManifest::load(&run).unwrap().unwrap();
    assert_eq!(m.completed, StageId::ALL.to_vec());

    let acc = read_accounting(&run).unwrap();
    assert_eq!(acc.extracted, 120);
    assert!(acc.extracted >= acc.filtered);
    assert!(acc.filtered >= acc.selected);
    assert!(acc.selected >= acc.anchored);
    assert!(acc.anchored >= acc.windows);
    assert_eq!(acc.windows, acc.anchored.div_ceil(4));
    // The black-screen phase is rejected by validation.
    assert!(acc.anchored < acc.selected);

    let tree: SummaryTree = util::read_json(&run.join(SUMMARY_TREE)).unwrap();
    assert_eq!(tree.modality, Modality::VisionText);
    let summary = std::fs::read_to_string(run.join(SUMMARY_TEXT)).unwrap();
    assert_eq!(summary, tree.final_text);
    assert!(!summary.is_empty());

    let scores = read_scores_csv(&run.join(SCORES_CSV)).unwrap();
    assert_eq!(scores.len(), 120);
    let st2: Stage2State = util::read_json(&run.join(STAGE2_STATE)).unwrap();
    for (s, f) in scores.iter().zip(&st2.frames) {
        assert!((0.0..=1.0).contains(&s.final_score));
        assert_eq!(s.final_score, (s.s1 + s.s2 + s.s3 + s.s4) / 4.0);
        if f.dropped_at.as_deref() == Some("s1") {
            assert_eq!((s.s2, s.s3, s.s4), (0.0, 0.0, 0.0));
        }
    }

    let report = evaluate_run(&run, &config).unwrap();
    assert_eq!(report.ranking.unwrap().n_frames, 120);
    assert!(report.text.unwrap().candidate_tokens > 0);
    assert!(run.join("eval_report.json").is_file());
    assert!(run.join("eval_pairs.jsonl").is_file());
}

#[test]
fn reruns_are_byte_identical_and_resume_at_every_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let (video, config) = synth(&small_spec(), dir.path());
    let golden = dir.path().join("golden");
    Pipeline::open(&golden, config.clone())
        .unwrap()
        .run(&video.frames_dir, Some(&video.transcript))
        .unwrap();
    let want = snapshot(&golden);

    let again = dir.path().join("again");
    Pipeline::open(&again, config.clone())
        .unwrap()
        .run(&video.frames_dir, Some(&video.transcript))
        .unwrap();
    assert_eq!(diff(&want, &snapshot(&again)), Vec::<String>::new());

    for stop in 0..StageId::ALL.len() {
        let run = dir.path().join(format!("resume{stop}"));
        {
            let mut p = Pipeline::open(&run, config.clone()).unwrap();
            p.ingest(&video.frames_dir, Some(&video.transcript)).unwrap();
            for s in &StageId::ALL[1..=stop] {
                p.run_stage(*s).unwrap();
            }
        }
        let mut p = Pipeline::open(&run, config.clone()).unwrap();
        p.run(&video.frames_dir, Some(&video.transcript)).unwrap();
        assert_eq!(diff(&want, &snapshot(&run)), Vec::<String>::new(), "resume after stage {stop}");
    }
}

#[test]
fn interrupted_stage_output_is_replaced_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (video, config) = synth(&small_spec(), dir.path());
    let golden = dir.path().join("golden");
    Pipeline::open(&golden, config.clone())
        .unwrap()
        .run(&video.frames_dir, None)
        .unwrap();

    let run = dir.path().join("run");
    let mut p = Pipeline::open(&run, config.clone()).unwrap();
    p.ingest(&video.frames_dir, None).unwrap();
    p.run_stage(StageId::Stage1).unwrap();
    // A kill during stage 2 leaves partial files but no completion record.
    std::fs::write(run.join("captions.json"), b"[").unwrap();
    drop(p);
    Pipeline::open(&run, config)
        .unwrap()
        .run(&video.frames_dir, None)
        .unwrap();
    assert_eq!(diff(&snapshot(&golden), &snapshot(&run)), Vec::<String>::new());
}

#[test]
fn config_or_input_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (video, config) = synth(&small_spec(), dir.path());
    let run = dir.path().join("run");
    Pipeline::open(&run, config.clone())
        .unwrap()
        .ingest(&video.frames_dir, None)
        .unwrap();
    let mut other = config.clone();
    other.semantics.tau = 0.5;
    assert!(matches!(Pipeline::open(&run, other), Err(Error::Config(_))));
    let mut p = Pipeline::open(&run, config).unwrap();
    assert!(p.run(&video.frames_dir, Some(&video.transcript)).is_err());
}

#[test]
fn stage_order_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config) = synth(&small_spec(), dir.path());
    let mut p = Pipeline::open(&dir.path().join("run"), config).unwrap();
    let err = p.run_stage(StageId::Stage2).unwrap_err();
    assert!(err.to_string().contains("stage2"), "{err}");
}

#[test]
fn ablation_paths() {
    let dir = tempfile::tempdir().unwrap();
    let (video, config) = synth(&small_spec(), dir.path());

    let mut no2 = config.clone();
    no2.run.skip_stage2 = true;
    let run = dir.path().join("no2");
    Pipeline::open(&run, no2).unwrap().run(&video.frames_dir, None).unwrap();
    let st2: Stage2State = util::read_json(&run.join(STAGE2_STATE)).unwrap();
    assert!(st2.anchored.iter().all(|a| a.label.starts_with("segment-")));
    assert!(!run.join("labels.json").exists());
    let scores = read_scores_csv(&run.join(SCORES_CSV)).unwrap();
    assert!(scores.iter().all(|s| s.s3 == 0.0));

    let mut no1 = config.clone();
    no1.run.skip_stage1 = true;
    let run = dir.path().join("no1");
    Pipeline::open(&run, no1).unwrap().run(&video.frames_dir, None).unwrap();
    let acc = read_accounting(&run).unwrap();
    assert_eq!(acc.selected, 120);
    assert!(!run.join("changepoints.json").exists());

    let mut none = config.clone();
    none.run.skip_stage1 = true;
    none.run.skip_stage2 = true;
    none.run.no_grouping = true;
    let run = dir.path().join("none");
    Pipeline::open(&run, none).unwrap().run(&video.frames_dir, None).unwrap();
    let acc = read_accounting(&run).unwrap();
    assert_eq!((acc.windows, acc.representative_calls), (0, 120));
    let w: WindowsManifest = util::read_json(&run.join(WINDOWS_MANIFEST)).unwrap();
    assert!(w.windows.is_empty());

    let mut vo = config;
    vo.run.video_only = true;
    let run = dir.path().join("vo");
    Pipeline::open(&run, vo).unwrap().run(&video.frames_dir, Some(&video.transcript)).unwrap();
    let tree: SummaryTree = util::read_json(&run.join(SUMMARY_TREE)).unwrap();
    assert_eq!(tree.modality, Modality::Vision);
}

#[test]
fn empty_anchor_set_yields_empty_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (video, mut config) = synth(&small_spec(), dir.path());
    let run = dir.path().join("run");
    let mut fixtures = vidsum_core::chat::MockFixtures::load(&video.chat_fixtures).unwrap();
    fixtures.rules.insert(
        0,
        vidsum_core::chat::MockRule {
            prompt_contains: Some("Imagine you are an expert on validating labels.".into()),
            reply: Some("0".into()),
            ..Default::default()
        },
    );
    let reject = dir.path().join("reject.json");
    fixtures.save(&reject).unwrap();
    config.backends.chat.as_mut().unwrap().fixtures = Some(reject);
    Pipeline::open(&run, config).unwrap().run(&video.frames_dir, None).unwrap();
    let m = RunManifest::load(&run).unwrap().unwrap();
    assert_eq!(m.latest(StageId::Stage2).unwrap().status.as_deref(), Some("empty-anchors"));
    assert_eq!(std::fs::read_to_string(run.join(SUMMARY_TEXT)).unwrap(), "");
    let scores = read_scores_csv(&run.join(SCORES_CSV)).unwrap();
    assert!(scores.iter().all(|s| s.s4 == 0.0));
}
