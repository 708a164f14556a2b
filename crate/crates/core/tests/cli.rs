use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gliding_vertex::dataio::{parse_det_text, parse_gt_concat, read_gts, Layout};
use gliding_vertex::trainer::HeadModel;

fn gliding(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gliding")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = gliding(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_fixture(dir: &Path) {
    fs::create_dir_all(dir.join("gts")).unwrap();
    fs::create_dir_all(dir.join("dets")).unwrap();
    fs::write(
        dir.join("gts/a.txt"),
        "0 0 10 0 10 10 0 10 ship 0\n20 0 30 0 30 10 20 10 ship 0\n",
    )
    .unwrap();
    // one hit at IoU 0.818, one exact hit, one false positive
    fs::write(
        dir.join("dets/a.txt"),
        "ship 0.9 1 0 11 0 11 10 1 10\nship 0.8 20 0 30 0 30 10 20 10\nship 0.7 50 50 60 50 60 60 50 60\n",
    )
    .unwrap();
}

#[test]
fn help_lists_defaults() {
    let help = ok(&["pipeline", "--help"]);
    for needle in [
        "--t-r <T_R>",
        "[default: 0.8]",
        "[default: voc07]",
        "[default: 16]",
        "[default: 0.9]",
        "[default: 0.0005]",
        "[default: 0.0075]",
        "[default: 64]",
        "[default: 0.05]",
        "[default: 3]",
        "[default: 7]",
        "[default: 4000 5500]",
    ] {
        assert!(help.contains(needle), "pipeline help lacks {needle}");
    }
    let help = ok(&["eval", "map", "--help"]);
    assert!(help.contains("[default: 0.5]") && help.contains("all-points"));
    assert!(ok(&["nms", "--help"]).contains("[default: 0.5]"));
    assert!(ok(&["--help"]).contains("train-demo"));
}

#[test]
fn usage_errors_exit_2_with_one_line() {
    let out = gliding(&["eval", "map", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: kind=usage msg=\""), "{err}");

    let out = gliding(&["eval", "map", "--dets", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--gts"));

    let out = gliding(&["decode", "--in", "x", "--out", "y", "--t-r", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error: kind=config"));
}

#[test]
fn config_file_precedence_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_fixture(d);
    let cfg = d.join("run.cfg");
    fs::write(&cfg, "# eval settings\niou = 0.9\nap_mode = all-points\n").unwrap();
    let report = d.join("map.txt");
    let (dets, gts) = (d.join("dets"), d.join("gts"));
    let args = [
        "eval", "map", "--dets", p(&dets), "--gts", p(&gts), "--out", p(&report), "--config",
        p(&cfg), "--iou", "0.5",
    ];
    ok(&args);
    let text = fs::read_to_string(&report).unwrap();
    // the command line wins for iou, the file supplies ap-mode
    assert!(text.contains("iou_threshold: 0.50"), "{text}");
    assert!(text.contains("ap_mode: all-points"), "{text}");
    // ranked TP, TP, FP over 2 GT: all-points AP = 1
    assert!(text.contains("mAP: 1.000000"), "{text}");

    let manifest = fs::read_to_string(d.join("map.txt.manifest")).unwrap();
    assert!(manifest.contains("command: eval map"));
    assert!(manifest.contains("config: iou = 0.5 (cli)"), "{manifest}");
    assert!(manifest.contains("config: ap-mode = all-points (file)"), "{manifest}");
    assert!(manifest.contains("config: layout = per-image (default)"), "{manifest}");
    let gt_hash = gliding_vertex::cli::manifest::git_blob_hash(&fs::read(d.join("gts/a.txt")).unwrap());
    assert!(manifest.contains(&gt_hash), "{manifest}");
    assert!(manifest.contains(&format!("output: {}", report.display())));

    // without the flag the file value applies; at IoU 0.9 the top-ranked
    // shifted box is a false positive: FP, TP, FP gives AP = 0.5 * 0.5
    ok(&args[..args.len() - 2]);
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.contains("iou_threshold: 0.90"));
    assert!(text.contains("mAP: 0.250000"), "{text}");
}

#[test]
fn unknown_config_key_leaves_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_fixture(d);
    let cfg = d.join("bad.cfg");
    fs::write(&cfg, "iou = 0.5\nthreshold = 0.3\n").unwrap();
    let out_path = d.join("map.txt");
    let out = gliding(&[
        "eval", "map", "--dets", p(&d.join("dets")), "--gts", p(&d.join("gts")), "--out", p(&out_path), "--config",
        p(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("threshold"));
    assert!(!out_path.exists());
    assert!(!d.join("map.txt.manifest").exists());
}

#[test]
fn failures_leave_no_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_fixture(d);

    // unreadable input
    let out = gliding(&["eval", "lamr", "--dets", p(&d.join("nope")), "--gts", p(&d.join("gts")), "--out", p(&d.join("l.txt"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: kind=io"));
    assert!(!d.join("l.txt").exists());

    // malformed input
    fs::write(d.join("dets/b.txt"), "ship 0.9 1 2 3\n").unwrap();
    let out = gliding(&["nms", "--in", p(&d.join("dets")), "--out", p(&d.join("kept"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("kind=parse"), "{}", stderr(&out));
    assert!(!d.join("kept").exists());

    // a write that fails half way: the second output's directory is blocked by a file
    fs::write(d.join("blocker"), "").unwrap();
    let out = gliding(&[
        "eval", "fmeasure", "--dets", p(&d.join("gts")), "--gts", p(&d.join("gts")), "--out", p(&d.join("f/f.txt")),
        "--csv", p(&d.join("blocker/f.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("f").exists(), "partial output directory left behind");
}

#[test]
fn encode_decode_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let gt = d.join("gt.txt");
    ok(&["synth", "--out", p(&gt), "--layout", "concatenated", "--images", "3", "--seed", "5"]);
    let manifest = fs::read_to_string(d.join("gt.txt.manifest")).unwrap();
    assert!(manifest.contains("config: seed = 5 (cli)"));
    ok(&["encode", "--in", p(&gt), "--layout", "concatenated", "--out", p(&d.join("reps.csv"))]);
    let csv = fs::read_to_string(d.join("reps.csv")).unwrap();
    assert!(csv.starts_with("image_id,class,x,y,w,h,alpha1,alpha2,alpha3,alpha4,r\n"));
    ok(&["decode", "--in", p(&d.join("reps.csv")), "--out", p(&d.join("dec.txt"))]);

    let orig = read_gts(&gt, Layout::Concatenated).unwrap();
    let back = parse_gt_concat(&fs::read_to_string(d.join("dec.txt")).unwrap()).unwrap();
    assert_eq!(orig.keys().collect::<Vec<_>>(), back.keys().collect::<Vec<_>>());
    for (id, recs) in &orig {
        assert_eq!(recs.len(), back[id].len());
        for (a, b) in recs.iter().zip(&back[id]) {
            assert_eq!(a.class, b.class);
            // only the 6-decimal text rounding separates them
            assert!(a.quad.iou(&b.quad) > 0.9999, "{id}");
        }
    }

    // selection with t_r = 0 turns every object into its horizontal box
    ok(&["decode", "--in", p(&d.join("reps.csv")), "--out", p(&d.join("hbox.txt")), "--t-r", "0"]);
    let hb = parse_gt_concat(&fs::read_to_string(d.join("hbox.txt")).unwrap()).unwrap();
    for (id, recs) in &orig {
        for (a, b) in recs.iter().zip(&hb[id]) {
            let want = a.quad.aabb().unwrap();
            let got = b.quad.aabb().unwrap();
            assert!((want.w * want.h - b.quad.area()).abs() < 1e-3 * want.w * want.h);
            assert!((got.x - want.x).abs() < 1e-5 && (got.y - want.y).abs() < 1e-5);
        }
    }
}

#[test]
fn nms_per_image_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_fixture(d);
    fs::write(
        d.join("dets/b.txt"),
        "plane 0.6 0 0 10 0 10 10 0 10\nplane 0.9 1 0 11 0 11 10 1 10\nship 0.5 0 0 10 0 10 10 0 10\n",
    )
    .unwrap();
    let summary = ok(&["nms", "--in", p(&d.join("dets")), "--out", p(&d.join("kept")), "--iou", "0.5"]);
    assert_eq!(summary, "kept 5 of 6 detections\n");
    let b = parse_det_text(&fs::read_to_string(d.join("kept/b.txt")).unwrap()).unwrap();
    let got: Vec<(&str, f64)> = b.iter().map(|r| (r.class.as_str(), r.score)).collect();
    assert_eq!(got, vec![("plane", 0.9), ("ship", 0.5)]);
    assert_eq!(fs::read_dir(d.join("kept")).unwrap().count(), 2);
    assert!(d.join("kept.manifest").exists());
}

#[test]
fn detection_metrics_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_fixture(d);
    let (dets, gts) = (d.join("dets"), d.join("gts"));
    let s = ok(&[
        "eval", "fmeasure", "--dets", p(&dets), "--gts", p(&gts), "--out", p(&d.join("f.txt")), "--csv",
        p(&d.join("f.csv")),
    ]);
    // 2 matched of 3 kept detections (all score >= 0.6) and 2 GT
    assert_eq!(s, "P 0.666667 R 1.000000 F 0.800000\n");
    assert!(fs::read_to_string(d.join("f.csv")).unwrap().lines().count() >= 2);
    let s = ok(&["eval", "fmeasure", "--dets", p(&dets), "--gts", p(&gts), "--out", p(&d.join("f.txt")), "--score-thresh", "0.85"]);
    assert_eq!(s, "P 1.000000 R 0.500000 F 0.666667\n");

    ok(&["eval", "lamr", "--dets", p(&dets), "--gts", p(&gts), "--out", p(&d.join("l.txt")), "--csv", p(&d.join("l.csv"))]);
    let text = fs::read_to_string(d.join("l.txt")).unwrap();
    assert!(text.contains("iou_threshold: 0.50"));
    assert!(fs::read_to_string(d.join("l.csv")).unwrap().contains("fppi"));
}

#[test]
fn simulation_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = d.join("sweep.cfg");
    fs::write(&cfg, "aspects = 4,16\nangles = 0,4\nkinds = rbox,gliding\n").unwrap();
    ok(&["robustness", "--out", p(&d.join("r.csv")), "--trials", "100", "--config", p(&cfg)]);
    let csv = fs::read_to_string(d.join("r.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "kind,aspect,epsilon,mean_iou,std_iou,trials");
    assert_eq!(rows.len(), 1 + 2 * 2 * 2);
    assert!(csv.starts_with("# mean IoU"));

    let s = ok(&["confusion", "--out", p(&d.join("c.csv")), "--aspect", "4"]);
    assert!(s.contains("between -0.1000 and 0.0000 deg"), "{s}");
    let csv = fs::read_to_string(d.join("c.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 200);
}

#[test]
fn train_demo_writes_loadable_model() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = d.join("demo");
    let s = ok(&["train-demo", "--out", p(&out), "--images", "4", "--steps", "300", "--decay-steps", "200", "--hidden", "16"]);
    assert!(s.contains("initial_loss"));
    let (model, classes) = HeadModel::from_json(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(classes, ["plane", "ship", "vehicle"]);
    assert_eq!(model.n_hidden(), 16);
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert!(loss.starts_with("step,lr,loss,cls,h,alpha,r\n"));
    let manifest = fs::read_to_string(d.join("demo.manifest")).unwrap();
    assert!(manifest.contains("config: seed = 0 (default)"));

    // training on given ground truth
    let gt = d.join("gt.txt");
    ok(&["synth", "--out", p(&gt), "--layout", "concatenated", "--images", "2", "--classes", "car,boat"]);
    ok(&["train-demo", "--out", p(&d.join("demo2")), "--gts", p(&gt), "--layout", "concatenated", "--steps", "50"]);
    let (_, classes) = HeadModel::from_json(&fs::read_to_string(d.join("demo2/model.json")).unwrap()).unwrap();
    assert_eq!(classes, ["boat", "car"]);
    assert!(fs::read_to_string(d.join("demo2.manifest")).unwrap().contains("input: gts"));
}

#[test]
fn small_pipeline_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let args = [
        "pipeline", "--out", p(&out), "--train-images", "6", "--test-images", "3", "--steps", "300", "--decay-steps",
        "200,250",
    ];
    ok(&args);
    let files = ["train_gt.txt", "test_gt.txt", "model.json", "loss.csv", "detections.txt", "metrics.txt", "map50.csv"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
    let manifest = fs::read(tmp.path().join("p.manifest")).unwrap();
    ok(&args);
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&fs::read(out.join(f)).unwrap(), bytes, "{f} differs");
    }
    assert_eq!(fs::read(tmp.path().join("p.manifest")).unwrap(), manifest);
    let m = gliding_vertex::cli::read_metrics(&out.join("metrics.txt")).unwrap();
    assert_eq!(m["seed"], "7");
    let (m50, m70): (f64, f64) = (m["map@0.5"].parse().unwrap(), m["map@0.7"].parse().unwrap());
    assert!(m70 <= m50);

    // a different seed changes the data
    ok(&[
        "pipeline", "--out", p(&out), "--seed", "8", "--train-images", "6", "--test-images", "3", "--steps", "10",
        "--decay-steps", "5",
    ]);
    assert_ne!(fs::read(out.join("train_gt.txt")).unwrap(), first[0]);
}
