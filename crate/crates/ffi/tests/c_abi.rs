use std::ffi::{CStr, CString};
use std::ptr;

use mimo_gfm_ffi::*;

fn last_error() -> String {
    let p = mg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn reference() -> *mut MgSession {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { mg_session_reference(&mut s) }, MgStatus::Ok);
    s
}

#[test]
fn reference_session_lists_both_designs() {
    let s = reference();
    unsafe {
        assert_eq!(mg_session_gain_set_count(s), 2);
        let names: Vec<String> = (0..2)
            .map(|k| {
                CStr::from_ptr(mg_session_gain_set_name(s, k))
                    .to_string_lossy()
                    .into_owned()
            })
            .collect();
        assert_eq!(names, ["traditional", "hinf"]);
        assert!(mg_session_gain_set_name(s, 2).is_null());
        mg_session_free(s);
    }
}

#[test]
fn equilibrium_and_analysis() {
    let s = reference();
    let hinf = CString::new("hinf").unwrap();
    let mut z = [0.0; MG_N_STATES];
    unsafe {
        assert_eq!(
            mg_equilibrium(s, hinf.as_ptr(), z.as_mut_ptr(), z.len()),
            MgStatus::Ok
        );
        assert!((z[8] - 1.0).abs() < 1e-9, "v_dc = {}", z[8]);

        // Two gain sets and no active one: the caller has to choose.
        assert_eq!(
            mg_equilibrium(s, ptr::null(), z.as_mut_ptr(), z.len()),
            MgStatus::Config
        );
        assert!(last_error().contains("several gain sets"));
        assert_eq!(
            mg_equilibrium(s, hinf.as_ptr(), z.as_mut_ptr(), 3),
            MgStatus::InvalidArgument
        );

        let mut a = MgAnalysis::default();
        assert_eq!(mg_analyze(s, hinf.as_ptr(), &mut a), MgStatus::Ok);
        assert!(a.stable && a.spectral_abscissa < 0.0);
        assert_eq!(a.n_channels, 3);
        let max = a.channel_norms[..3].iter().copied().fold(0.0, f64::max);
        assert_eq!(max, a.objective);
        mg_session_free(s);
    }
}

#[test]
fn simulation_trace_access() {
    let s = reference();
    let scn = CString::new("p_ref_step").unwrap();
    let hinf = CString::new("hinf").unwrap();
    let mut t = ptr::null_mut();
    unsafe {
        assert_eq!(
            mg_simulate(s, scn.as_ptr(), hinf.as_ptr(), &mut t),
            MgStatus::Ok
        );
        let (rows, cols) = (mg_trace_rows(t), mg_trace_columns(t));
        assert_eq!(rows, 20_001);
        let names: Vec<String> = (0..cols)
            .map(|k| {
                CStr::from_ptr(mg_trace_column_name(t, k))
                    .to_string_lossy()
                    .into_owned()
            })
            .collect();
        let p = names.iter().position(|n| n == "p").unwrap();
        let data = std::slice::from_raw_parts(mg_trace_data(t), rows * (cols + 1));
        let last = &data[(rows - 1) * (cols + 1)..];
        assert!((last[0] - 2.0).abs() < 1e-12);
        assert!((last[1 + p] - 1.0).abs() < 1e-3);
        mg_trace_free(t);

        let missing = CString::new("nope").unwrap();
        assert_eq!(
            mg_simulate(s, missing.as_ptr(), hinf.as_ptr(), &mut t),
            MgStatus::Config
        );
        mg_session_free(s);
    }
}

#[test]
fn plant_derivative_matches_library() {
    let params = mg_plant_params_reference();
    let x = [1.0, 0.0, 0.5, 0.05, 1.0, 0.0, 0.5, 0.0, 1.0, 0.05];
    let mut dx = [0.0; MG_N_PLANT_STATES];
    unsafe {
        assert_eq!(
            mg_plant_deriv(
                x.as_ptr(),
                1.0,
                0.0,
                0.5,
                1.0,
                1.0,
                &params,
                dx.as_mut_ptr()
            ),
            MgStatus::Ok
        );
    }
    let p: mimo_gfm::plant::PlantParams = params.into();
    let want = mimo_gfm::plant::plant_deriv(
        &mimo_gfm::plant::PlantState::from_slice(&x),
        (1.0, 0.0),
        &mimo_gfm::plant::ControlInput {
            i_u: 0.5,
            omega_u: 1.0,
            e_u: 1.0,
        },
        &p,
    )
    .unwrap();
    assert_eq!(dx, want.to_array());

    let mut collapsed = x;
    collapsed[8] = 0.0;
    let status = unsafe {
        mg_plant_deriv(
            collapsed.as_ptr(),
            1.0,
            0.0,
            0.5,
            1.0,
            1.0,
            &params,
            dx.as_mut_ptr(),
        )
    };
    assert_ne!(status, MgStatus::Ok);
    assert!(last_error().contains("v_dc"));
}

#[test]
fn hinf_norm_of_first_order_lag() {
    let (a, b, c, d) = ([-1.0], [1.0], [1.0], [0.0]);
    let mut v = 0.0;
    unsafe {
        assert_eq!(
            mg_hinf_norm(
                1,
                1,
                1,
                a.as_ptr(),
                b.as_ptr(),
                c.as_ptr(),
                d.as_ptr(),
                1e-8,
                &mut v
            ),
            MgStatus::Ok
        );
        assert!((v - 1.0).abs() < 1e-6);
        let unstable = [1.0];
        let s = mg_hinf_norm(
            1,
            1,
            1,
            unstable.as_ptr(),
            b.as_ptr(),
            c.as_ptr(),
            d.as_ptr(),
            1e-8,
            &mut v,
        );
        assert_eq!(s, MgStatus::Unstable);
        assert_eq!(
            mg_hinf_norm(
                1,
                1,
                1,
                ptr::null(),
                b.as_ptr(),
                c.as_ptr(),
                d.as_ptr(),
                1e-8,
                &mut v
            ),
            MgStatus::NullPointer
        );
    }
}

#[test]
fn short_synthesis_run() {
    let s = reference();
    let mut theta = [0.0; MG_N_GAINS];
    let mut r = MgSynthesis::default();
    unsafe {
        assert_eq!(
            mg_synthesize(s, ptr::null(), 20, 3, theta.as_mut_ptr(), &mut r),
            MgStatus::Ok
        );
        mg_session_free(s);
    }
    assert!(r.objective <= r.initial_objective);
    assert!(r.evaluations <= 20);
    // k_12, k_14, k_15 are frozen at zero in the reference settings.
    assert_eq!(&theta[14..], &[0.0, 0.0, 0.0]);
}

#[test]
fn null_handles_are_rejected() {
    let mut z = [0.0; MG_N_STATES];
    unsafe {
        assert_eq!(
            mg_equilibrium(ptr::null(), ptr::null(), z.as_mut_ptr(), z.len()),
            MgStatus::NullPointer
        );
        assert_eq!(mg_session_reference(ptr::null_mut()), MgStatus::NullPointer);
        assert_eq!(mg_session_gain_set_count(ptr::null()), 0);
        mg_session_free(ptr::null_mut());
        mg_trace_free(ptr::null_mut());
        let missing = CString::new("/nonexistent/x.cfg").unwrap();
        let mut s = ptr::null_mut();
        assert_eq!(
            mg_session_from_file(missing.as_ptr(), &mut s),
            MgStatus::Config
        );
        assert!(s.is_null());
    }
    assert!(!mg_version().is_null());
}

#[test]
fn generated_header_declares_the_api() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mimo_gfm.h"))
            .unwrap();
    for sym in [
        "mg_session_reference",
        "mg_equilibrium",
        "mg_analyze",
        "mg_simulate",
        "mg_hinf_norm",
        "mg_synthesize",
        "MG_STATUS_OK",
        "typedef struct MgSession",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}
