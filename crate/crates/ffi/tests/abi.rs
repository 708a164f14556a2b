use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use gliding_vertex_ffi::*;

fn pt(x: f64, y: f64) -> GvPoint {
    GvPoint { x, y }
}

fn square(x0: f64, side: f64) -> [GvPoint; 4] {
    [pt(x0, 0.0), pt(x0 + side, 0.0), pt(x0 + side, side), pt(x0, side)]
}

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    unsafe {
        gv_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn encode_decode_roundtrip() {
    let quad = [pt(2.0, 0.0), pt(6.0, 2.0), pt(4.0, 6.0), pt(0.0, 4.0)];
    let mut rep = GvGlidingRep::default();
    let mut back = [GvPoint::default(); 4];
    let mut iou = 0.0;
    unsafe {
        assert_eq!(gv_encode(quad.as_ptr(), &mut rep), GvStatus::Ok);
        assert_eq!(gv_decode(&rep, back.as_mut_ptr()), GvStatus::Ok);
        assert_eq!(gv_iou(quad.as_ptr(), back.as_ptr(), &mut iou), GvStatus::Ok);
    }
    assert_eq!((rep.x, rep.y, rep.w, rep.h), (3.0, 3.0, 6.0, 6.0));
    assert!((iou - 1.0).abs() < 1e-9);
    // r = 20 / 36 is below the default threshold, so selection keeps the quad
    let mut sel = [GvPoint::default(); 4];
    unsafe { assert_eq!(gv_select(&rep, 0.8, sel.as_mut_ptr()), GvStatus::Ok) };
    assert_eq!(sel, back);
    unsafe { assert_eq!(gv_select(&rep, 0.5, sel.as_mut_ptr()), GvStatus::Ok) };
    assert_eq!(sel, square(0.0, 6.0));
}

#[test]
fn errors_are_codes_with_messages() {
    let mut rep = GvGlidingRep::default();
    let collinear = [pt(0.0, 0.0), pt(1.0, 0.0), pt(2.0, 0.0), pt(3.0, 0.0)];
    unsafe {
        assert_eq!(gv_encode(ptr::null(), &mut rep), GvStatus::NullPointer);
        assert!(last_error().contains("null"));
        assert_eq!(gv_encode(collinear.as_ptr(), &mut rep), GvStatus::DegenerateGeometry);
        assert!(!last_error().is_empty());
        let bad = GvGlidingRep { w: 4.0, h: 4.0, ..Default::default() };
        let mut out = [GvPoint::default(); 4];
        assert_eq!(gv_select(&bad, 1.5, out.as_mut_ptr()), GvStatus::InvalidInput);
        assert_eq!(out, [GvPoint::default(); 4], "outputs untouched on failure");
        let name = CStr::from_ptr(gv_status_name(GvStatus::IndexOutOfRange));
        assert_eq!(name.to_str().unwrap(), "index-out-of-range");
    }
    assert_eq!(rep, GvGlidingRep::default());
}

#[test]
fn truncated_error_buffer() {
    unsafe {
        assert_eq!(gv_detection_set_nms(ptr::null_mut(), 0.5), GvStatus::NullPointer);
        let full = gv_last_error_message(ptr::null_mut(), 0);
        let mut small = [1 as std::ffi::c_char; 4];
        assert_eq!(gv_last_error_message(small.as_mut_ptr(), 4), full);
        assert_eq!(small[3], 0);
    }
}

#[test]
fn detection_set_nms_per_class() {
    let set = gv_detection_set_new();
    let (a, b) = (square(0.0, 10.0), square(1.0, 10.0));
    unsafe {
        assert_eq!(gv_detection_set_push(set, a.as_ptr(), 0.9, 0), GvStatus::Ok);
        assert_eq!(gv_detection_set_push(set, b.as_ptr(), 0.95, 0), GvStatus::Ok);
        assert_eq!(gv_detection_set_push(set, a.as_ptr(), 0.5, 3), GvStatus::Ok);
        assert_eq!(gv_detection_set_push(set, a.as_ptr(), f64::NAN, 3), GvStatus::InvalidInput);
        assert_eq!(gv_detection_set_len(set), 3);
        assert_eq!(gv_detection_set_nms(set, 0.5), GvStatus::Ok);
        assert_eq!(gv_detection_set_len(set), 2);
        let mut q = [GvPoint::default(); 4];
        let (mut s, mut c) = (0.0, 0u32);
        assert_eq!(gv_detection_set_get(set, 0, q.as_mut_ptr(), &mut s, &mut c), GvStatus::Ok);
        assert_eq!((s, c), (0.95, 0));
        assert_eq!(q, b);
        assert_eq!(gv_detection_set_get(set, 1, q.as_mut_ptr(), &mut s, &mut c), GvStatus::Ok);
        assert_eq!((s, c), (0.5, 3));
        assert_eq!(
            gv_detection_set_get(set, 2, q.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()),
            GvStatus::IndexOutOfRange
        );
        gv_detection_set_free(set);
        gv_detection_set_free(ptr::null_mut());
        assert_eq!(gv_detection_set_len(ptr::null()), 0);
    }
}

#[test]
fn evaluator_map() {
    let ev = gv_evaluator_new();
    let id = c"img_0";
    let gt = square(0.0, 10.0);
    let hit = square(1.0, 10.0); // IoU 90/110
    let miss = square(50.0, 10.0);
    let mut ap = -1.0;
    unsafe {
        assert_eq!(gv_evaluator_add_gt(ev, id.as_ptr(), gt.as_ptr(), 1, false), GvStatus::Ok);
        assert_eq!(gv_evaluator_add_det(ev, id.as_ptr(), miss.as_ptr(), 0.9, 1), GvStatus::Ok);
        assert_eq!(gv_evaluator_add_det(ev, id.as_ptr(), hit.as_ptr(), 0.8, 1), GvStatus::Ok);
        // FP then TP: all-points AP is the precision at full recall
        assert_eq!(gv_evaluator_map(ev, 0.5, 0, &mut ap), GvStatus::Ok);
        assert!((ap - 0.5).abs() < 1e-12);
        assert_eq!(gv_evaluator_map(ev, 0.9, 0, &mut ap), GvStatus::Ok);
        assert_eq!(ap, 0.0);
        assert_eq!(gv_evaluator_map(ev, 0.0, 1, &mut ap), GvStatus::InvalidInput);
        assert_eq!(gv_evaluator_add_gt(ev, ptr::null(), gt.as_ptr(), 1, false), GvStatus::NullPointer);
        gv_evaluator_free(ev);
    }
}

#[test]
fn header_is_current_and_complete() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/gliding_vertex.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    for line in src.lines() {
        if let Some(rest) = line.split("extern \"C\" fn ").nth(1) {
            let name = rest.split('(').next().unwrap();
            assert!(header.contains(&format!("{name}(")), "{name} missing from header");
        }
    }
    assert!(header.contains("typedef struct GvDetectionSet GvDetectionSet;"));
    assert!(header.contains("typedef struct GvEvaluator GvEvaluator;"));
}

/// Compiles and runs a C program against the generated header and the static library.
#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler ({cc}); skipping");
        return;
    }
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib = deps.join("libgliding_vertex_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let exe = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("gv_smoke");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(dir.join("include"))
        .arg(dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout), "ok\n");
}
