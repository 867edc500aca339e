use std::ffi::CString;
use std::ptr;

use graphau_pain::data::{synth_generate, SynthConfig};
use graphau_pain::model::{forward, Mode};
use graphau_pain::Checkpoint;
use graphau_pain_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { graphau_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn pspi_through_the_abi() {
    let codes = [4u8, 6, 7, 9, 10, 43];
    let values = [3i32, 2, 4, 0, 1, 1];
    let mut out = 0u8;
    let st =
        unsafe { graphau_compute_pspi(codes.as_ptr(), values.as_ptr(), codes.len(), &mut out) };
    assert_eq!(st, GraphauStatus::Ok);
    assert_eq!(out, 3 + 4 + 1 + 1);

    let st = unsafe { graphau_compute_pspi(codes.as_ptr(), values.as_ptr(), 5, &mut out) };
    assert_eq!(st, GraphauStatus::Data);
    assert!(last_error().contains("AU43"), "{}", last_error());

    let bad = [3i32, 2, 4, 0, 1, 2];
    let st = unsafe { graphau_compute_pspi(codes.as_ptr(), bad.as_ptr(), 6, &mut out) };
    assert_eq!(st, GraphauStatus::Data);

    let st = unsafe { graphau_compute_pspi(ptr::null(), values.as_ptr(), 6, &mut out) };
    assert_eq!(st, GraphauStatus::NullPointer);
}

#[test]
fn categories_and_weights() {
    let mut c = 9u32;
    let table3 = [(0, 0), (1, 1), (4, 1), (5, 2), (16, 2)];
    for (p, want) in table3 {
        assert_eq!(
            unsafe { graphau_categorize(p, 3, &mut c) },
            GraphauStatus::Ok
        );
        assert_eq!(c, want, "pspi {p}");
    }
    let table4 = [(0, 0), (1, 1), (2, 2), (3, 3), (16, 3)];
    for (p, want) in table4 {
        assert_eq!(
            unsafe { graphau_categorize(p, 4, &mut c) },
            GraphauStatus::Ok
        );
        assert_eq!(c, want, "pspi {p}");
    }
    assert_eq!(
        unsafe { graphau_categorize(17, 3, &mut c) },
        GraphauStatus::Data
    );
    assert_eq!(
        unsafe { graphau_categorize(2, 5, &mut c) },
        GraphauStatus::Config
    );

    let rates = [0.82, 0.15, 0.03];
    let mut w = [0.0f64; 3];
    assert_eq!(
        unsafe { graphau_class_weights(rates.as_ptr(), 3, w.as_mut_ptr()) },
        GraphauStatus::Ok
    );
    let want = [0.08876, 0.48521, 2.42604];
    for (a, b) in w.iter().zip(want) {
        assert!((a - b).abs() < 1e-5, "{w:?}");
    }
    let zero = [0.9, 0.1, 0.0];
    assert_ne!(
        unsafe { graphau_class_weights(zero.as_ptr(), 3, w.as_mut_ptr()) },
        GraphauStatus::Ok
    );
}

#[test]
fn model_handle_lifecycle() {
    let mut model: *mut GraphauModel = ptr::null_mut();
    assert_eq!(
        unsafe { graphau_model_new_desk(5, 3, &mut model) },
        GraphauStatus::Ok
    );
    assert!(!model.is_null());
    let (mut side, mut classes, mut aus) = (0usize, 0usize, 0usize);
    assert_eq!(
        unsafe { graphau_model_shape(model, &mut side, &mut classes, &mut aus) },
        GraphauStatus::Ok
    );
    assert_eq!((side, classes, aus), (96, 3, 8));

    let data = synth_generate(&SynthConfig {
        count: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let rec = &data.manifest.records()[0];
    let img = data.images.get(&rec.frame_id).unwrap().to_array::<f32>();
    let pixels: Vec<f32> = img.iter().copied().collect();
    let mut logits = [0f32; 3];
    let mut probs = [0f32; 8];
    let st = unsafe {
        graphau_model_forward(
            model,
            pixels.as_ptr(),
            pixels.len(),
            logits.as_mut_ptr(),
            3,
            probs.as_mut_ptr(),
            8,
        )
    };
    assert_eq!(st, GraphauStatus::Ok, "{}", last_error());

    // Same numbers as the library call on a saved and reloaded copy.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { graphau_model_save(model, cpath.as_ptr()) },
        GraphauStatus::Ok
    );
    let ckpt = Checkpoint::load(&path).unwrap();
    let direct = forward(img.view(), &ckpt.params, &ckpt.model, Mode::Eval).unwrap();
    assert_eq!(direct.logits.to_vec(), logits.to_vec());
    assert_eq!(direct.probs.to_vec(), probs.to_vec());

    let mut loaded: *mut GraphauModel = ptr::null_mut();
    assert_eq!(
        unsafe { graphau_model_load(cpath.as_ptr(), &mut loaded) },
        GraphauStatus::Ok
    );
    let mut again = [0f32; 3];
    let st = unsafe {
        graphau_model_forward(
            loaded,
            pixels.as_ptr(),
            pixels.len(),
            again.as_mut_ptr(),
            3,
            probs.as_mut_ptr(),
            8,
        )
    };
    assert_eq!(st, GraphauStatus::Ok);
    assert_eq!(again, logits);

    let st = unsafe {
        graphau_model_forward(
            model,
            pixels.as_ptr(),
            10,
            logits.as_mut_ptr(),
            3,
            probs.as_mut_ptr(),
            8,
        )
    };
    assert_eq!(st, GraphauStatus::InvalidArgument);
    let st = unsafe {
        graphau_model_forward(
            model,
            pixels.as_ptr(),
            pixels.len(),
            logits.as_mut_ptr(),
            2,
            probs.as_mut_ptr(),
            8,
        )
    };
    assert_eq!(st, GraphauStatus::BufferTooSmall);
    let st = unsafe {
        graphau_model_forward(
            ptr::null(),
            pixels.as_ptr(),
            pixels.len(),
            logits.as_mut_ptr(),
            3,
            probs.as_mut_ptr(),
            8,
        )
    };
    assert_eq!(st, GraphauStatus::NullPointer);

    unsafe {
        graphau_model_free(model);
        graphau_model_free(loaded);
        graphau_model_free(ptr::null_mut());
    }
}

#[test]
fn load_errors_are_reported() {
    let mut model: *mut GraphauModel = ptr::null_mut();
    let missing = CString::new("/nonexistent/m.bin").unwrap();
    assert_eq!(
        unsafe { graphau_model_load(missing.as_ptr(), &mut model) },
        GraphauStatus::Io
    );
    assert!(model.is_null());
    assert!(!last_error().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let cjunk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { graphau_model_load(cjunk.as_ptr(), &mut model) },
        GraphauStatus::IncompatibleCheckpoint
    );
    // Success clears the message.
    let mut c = 0u32;
    unsafe { graphau_categorize(1, 3, &mut c) };
    assert_eq!(last_error(), "");
}
