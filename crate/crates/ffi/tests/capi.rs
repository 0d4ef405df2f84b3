use std::ffi::{CStr, CString};
use std::ptr;

use vvf_ffi::*;

const SCENARIO: &str = "\
[road]
edges = -3.75 3.75
markings = 0
[sequence]
frames = 2
horizon = 5
[vehicle]
target = true
position = 0 -1.875
velocity = 30 0
size = 5 2
[vehicle]
position = 20 -1.875
velocity = 10 0
size = 5 2
";

fn last_error() -> String {
    let p = vvf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn sequence() -> *mut VvfSequence {
    let text = CString::new(SCENARIO).unwrap();
    let mut seq = ptr::null_mut();
    assert_eq!(unsafe { vvf_sequence_from_scenario(text.as_ptr(), &mut seq) }, VvfStatus::Ok);
    assert!(!seq.is_null());
    seq
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(vvf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn sequence_dims_and_truth() {
    let seq = sequence();
    let (mut h, mut p) = (0, 0);
    assert_eq!(unsafe { vvf_sequence_dims(seq, &mut h, &mut p) }, VvfStatus::Ok);
    assert_eq!((h, p), (2, 5));

    let mut xy = vec![0.0; 10];
    assert_eq!(unsafe { vvf_sequence_truth(seq, xy.as_mut_ptr(), xy.len()) }, VvfStatus::Ok);
    assert!((xy[0] - 6.0).abs() < 1e-9 && xy[1].abs() < 1e-9);
    assert!((xy[8] - 30.0).abs() < 1e-9);

    let mut short = [0.0; 3];
    assert_eq!(
        unsafe { vvf_sequence_truth(seq, short.as_mut_ptr(), short.len()) },
        VvfStatus::BufferTooSmall
    );
    assert!(last_error().contains("need 10"));
    unsafe { vvf_sequence_free(seq) };
}

#[test]
fn solve_write_read_predict() {
    let seq = sequence();
    let mut field = ptr::null_mut();
    assert_eq!(unsafe { vvf_solve(seq, ptr::null(), &mut field) }, VvfStatus::Ok);

    let mut shape = [0usize; 4];
    assert_eq!(unsafe { vvf_field_shape(field, shape.as_mut_ptr()) }, VvfStatus::Ok);
    assert_eq!(shape, [2, 3, 32, 256]);
    let n: usize = shape.iter().product();
    let mut data = vec![0f32; n];
    assert_eq!(unsafe { vvf_field_copy(field, data.as_mut_ptr(), n) }, VvfStatus::Ok);
    assert!(data.iter().all(|v| v.is_finite()));
    assert!(data[..32 * 256].contains(&2.0));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("a.vvf").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { vvf_field_write(field, path.as_ptr()) }, VvfStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { vvf_field_read(path.as_ptr(), &mut back) }, VvfStatus::Ok);
    let mut again = vec![0f32; n];
    assert_eq!(unsafe { vvf_field_copy(back, again.as_mut_ptr(), n) }, VvfStatus::Ok);
    assert_eq!(
        data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        again.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );

    let mut tensors = ptr::null_mut();
    assert_eq!(unsafe { vvf_field_to_tensors(field, &mut tensors) }, VvfStatus::Ok);
    assert_eq!(unsafe { vvf_field_shape(tensors, shape.as_mut_ptr()) }, VvfStatus::Ok);
    assert_eq!(shape, [1, 3, 64, 256]);

    let mut xy = vec![0.0; 10];
    assert_eq!(unsafe { vvf_predict(field, 5, xy.as_mut_ptr(), xy.len()) }, VvfStatus::Ok);
    assert!(xy.iter().all(|v| v.is_finite()));
    assert!(xy[8] > 0.0, "streamline moves forward");

    unsafe {
        vvf_field_free(tensors);
        vvf_field_free(back);
        vvf_field_free(field);
        vvf_sequence_free(seq);
    }
}

#[test]
fn solve_options_are_validated() {
    let seq = sequence();
    let mut field = ptr::null_mut();
    let mut opts = vvf_solve_options_default();
    assert_eq!(opts.max_iters, 5000);
    opts.tau_mode = 7;
    assert_eq!(unsafe { vvf_solve(seq, &opts, &mut field) }, VvfStatus::InvalidArgument);
    assert!(field.is_null());
    assert!(last_error().contains("tau mode"));

    opts = vvf_solve_options_default();
    opts.conv_tol = 0.0;
    assert_eq!(unsafe { vvf_solve(seq, &opts, &mut field) }, VvfStatus::Solver);
    unsafe { vvf_sequence_free(seq) };
}

#[test]
fn error_codes() {
    let mut seq = ptr::null_mut();
    assert_eq!(unsafe { vvf_sequence_from_scenario(ptr::null(), &mut seq) }, VvfStatus::NullPointer);
    let bad = CString::new("[road]\nedges = 1\n").unwrap();
    assert_eq!(unsafe { vvf_sequence_from_scenario(bad.as_ptr(), &mut seq) }, VvfStatus::Parse);
    assert!(last_error().contains("line 2"));
    assert!(seq.is_null());

    let missing = CString::new("/nonexistent/x.vvf").unwrap();
    let mut field = ptr::null_mut();
    assert_eq!(unsafe { vvf_field_read(missing.as_ptr(), &mut field) }, VvfStatus::Io);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.vvf");
    std::fs::write(&path, b"NOPE0000000000000000").unwrap();
    let path = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { vvf_field_read(path.as_ptr(), &mut field) }, VvfStatus::CorruptFile);

    unsafe {
        vvf_sequence_free(ptr::null_mut());
        vvf_field_free(ptr::null_mut());
    }
}

#[test]
fn huber_matches_core() {
    let truth = [0.0; 6];
    let small = [0.0, 0.0, 0.0, 0.6, 0.0, 0.0];
    let large = [3.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut out = 0.0;
    assert_eq!(
        unsafe { vvf_huber_loss(small.as_ptr(), truth.as_ptr(), 6, 1.0, false, &mut out) },
        VvfStatus::Ok
    );
    assert!((out - 0.18).abs() < 1e-12);
    assert_eq!(
        unsafe { vvf_huber_loss(large.as_ptr(), truth.as_ptr(), 6, 1.0, false, &mut out) },
        VvfStatus::Ok
    );
    assert!((out - 2.5).abs() < 1e-12);
    assert_eq!(
        unsafe { vvf_huber_loss(large.as_ptr(), truth.as_ptr(), 6, 0.0, false, &mut out) },
        VvfStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { vvf_huber_loss(ptr::null(), truth.as_ptr(), 6, 1.0, false, &mut out) },
        VvfStatus::NullPointer
    );
}

#[test]
fn bench_reports_throughput() {
    let mut mlups = 0.0;
    assert_eq!(unsafe { vvf_bench(32, 16, 10, &mut mlups) }, VvfStatus::Ok);
    assert!(mlups > 0.0);
    assert_eq!(unsafe { vvf_bench(8, 8, 10, &mut mlups) }, VvfStatus::InvalidArgument);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/vvf.h")).unwrap();
    for name in [
        "vvf_last_error",
        "vvf_version",
        "vvf_solve_options_default",
        "vvf_sequence_from_scenario",
        "vvf_sequence_read_scenario",
        "vvf_sequence_dims",
        "vvf_sequence_truth",
        "vvf_sequence_free",
        "vvf_solve",
        "vvf_field_read",
        "vvf_field_write",
        "vvf_field_shape",
        "vvf_field_copy",
        "vvf_field_to_tensors",
        "vvf_predict",
        "vvf_field_free",
        "vvf_huber_loss",
        "vvf_bench",
        "typedef struct VvfField VvfField;",
        "VVF_STATUS_BUFFER_TOO_SMALL = 8",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
