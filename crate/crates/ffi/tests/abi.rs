use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use gramscore_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = gs_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn refset(answers: &[&str]) -> *mut GsReferenceSet {
    let owned: Vec<CString> = answers.iter().map(|a| cstr(a)).collect();
    let ptrs: Vec<*const std::ffi::c_char> = owned.iter().map(|s| s.as_ptr()).collect();
    let mut out = ptr::null_mut();
    let status = unsafe { gs_refset_new(cstr("q1").as_ptr(), ptrs.as_ptr(), ptrs.len(), &mut out) };
    assert_eq!(status, GsStatus::Ok);
    assert!(!out.is_null());
    out
}

fn rules(source: &str) -> *mut GsRuleSet {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { gs_rules_parse(cstr(source).as_ptr(), &mut out) },
        GsStatus::Ok
    );
    out
}

#[test]
fn scores_match_the_library() {
    let answers = ["the sky is blue", "the sky looks blue", "blue sky today"];
    let handle = refset(&answers);
    assert_eq!(unsafe { gs_refset_len(handle) }, 3);
    let r = rules("\"sky\"\n2\tANY(\"blue\", \"azure\")\n");
    let mut triple = GsMetricTriple::default();
    let status = unsafe {
        gs_score(
            handle,
            r,
            cstr("the sky is blue").as_ptr(),
            0.005,
            &mut triple,
        )
    };
    assert_eq!(status, GsStatus::Ok);

    let table = gramscore::text::NormalizationRuleTable::default();
    let punct = gramscore::PunctuationSet::default();
    let texts = answers
        .iter()
        .map(|a| gramscore::normalize_text(a, &table, &punct))
        .collect();
    let direct_refset = gramscore::ReferenceSet::new("q1", texts)
        .calibrated(gramscore::CalibrationMode::SelfInclusive)
        .unwrap();
    let direct_rules = gramscore::parse_rules("\"sky\"\n2\tANY(\"blue\", \"azure\")\n").unwrap();
    let text = gramscore::normalize_text("the sky is blue", &table, &punct);
    let direct = gramscore::score_response(&text, &direct_refset, &direct_rules, 0.005).unwrap();
    assert_eq!(triple.fluency, direct.fluency);
    assert_eq!(triple.truthfulness, direct.truthfulness);
    assert_eq!(triple.helpfulness, 1.0);
    assert_eq!(triple.score, direct.score);

    unsafe {
        gs_rules_free(r);
        gs_refset_free(handle);
    }
}

#[test]
fn error_codes_and_messages() {
    let mut out = ptr::null_mut();
    let status = unsafe { gs_rules_parse(cstr("ANY()").as_ptr(), &mut out) };
    assert_eq!(status, GsStatus::Parse);
    assert!(out.is_null());
    assert!(last_error().contains("1:"), "{}", last_error());

    assert_eq!(
        unsafe { gs_rules_parse(ptr::null(), &mut out) },
        GsStatus::NullPointer
    );
    let bad = [0x66u8, 0xff, 0x00];
    assert_eq!(
        unsafe { gs_rules_parse(bad.as_ptr().cast(), &mut out) },
        GsStatus::InvalidUtf8
    );

    let mut rs = ptr::null_mut();
    let status = unsafe { gs_refset_new(cstr("q").as_ptr(), ptr::null(), 0, &mut rs) };
    assert_eq!(status, GsStatus::Config);
    assert!(rs.is_null());

    let handle = refset(&["abc", "abd"]);
    let r = rules("\"a\"\n");
    let mut triple = GsMetricTriple::default();
    let status = unsafe { gs_score(handle, r, cstr("abc").as_ptr(), 0.0, &mut triple) };
    assert_eq!(status, GsStatus::Argument);
    assert_eq!(
        unsafe { gs_score(ptr::null(), r, cstr("abc").as_ptr(), 0.005, &mut triple) },
        GsStatus::NullPointer
    );

    let mut rs = ptr::null_mut();
    let status = unsafe { gs_refset_load(cstr("/nonexistent/q.refset").as_ptr(), &mut rs) };
    assert_eq!(status, GsStatus::Io);
    unsafe {
        gs_rules_free(r);
        gs_refset_free(handle);
        gs_refset_free(ptr::null_mut());
        gs_rules_free(ptr::null_mut());
    }
}

#[test]
fn loads_refset_files() {
    let dir = tempfile::tempdir().unwrap();
    let digest = gramscore::text::NormalizationRuleTable::default().digest_hex();
    let answers: Vec<gramscore::formats::RefsetAnswer> = ["abc", "abd", "abe"]
        .iter()
        .map(|t| gramscore::formats::RefsetAnswer {
            source: "m".into(),
            text: t.to_string(),
        })
        .collect();
    let path = gramscore::formats::refset_path(dir.path(), "q9");
    std::fs::write(
        &path,
        gramscore::formats::encode_refset("q9", &digest, &answers).unwrap(),
    )
    .unwrap();
    let mut rs = ptr::null_mut();
    let p = cstr(path.to_str().unwrap());
    assert_eq!(unsafe { gs_refset_load(p.as_ptr(), &mut rs) }, GsStatus::Ok);
    assert_eq!(unsafe { gs_refset_len(rs) }, 3);
    unsafe { gs_refset_free(rs) };

    std::fs::write(
        &path,
        gramscore::formats::encode_refset("q9", "other", &answers).unwrap(),
    )
    .unwrap();
    assert_eq!(
        unsafe { gs_refset_load(p.as_ptr(), &mut rs) },
        GsStatus::Config
    );
}

#[test]
fn scalar_helpers() {
    assert_eq!(gs_discount(125), 0.5);
    assert_eq!(gs_discount(10), 1.0);
    let (xs, ys) = ([1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 5.0, 4.0]);
    let mut r = 0.0;
    assert_eq!(
        unsafe { gs_pearson(xs.as_ptr(), ys.as_ptr(), 4, &mut r) },
        GsStatus::Ok
    );
    assert!((r - 3.5 / (5.0f64 * 4.75).sqrt()).abs() < 1e-12);
    let flat = [1.0; 4];
    assert_eq!(
        unsafe { gs_pearson(flat.as_ptr(), ys.as_ptr(), 4, &mut r) },
        GsStatus::Failed
    );
    let v = unsafe { CStr::from_ptr(gs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "gramscore.h"

int main(void) {
    const char *answers[] = {"the sky is blue", "the sky looks blue", "blue sky today"};
    GsReferenceSet *rs = NULL;
    GsRuleSet *rules = NULL;
    GsMetricTriple t;
    if (gs_refset_new("q1", answers, 3, &rs) != GS_STATUS_OK) return 1;
    if (gs_rules_parse("\"sky\"\n", &rules) != GS_STATUS_OK) return 2;
    if (gs_score(rs, rules, "the sky is blue", 0.005, &t) != GS_STATUS_OK) return 3;
    if (gs_rules_parse("ANY()", &rules) != GS_STATUS_PARSE) return 4;
    if (gs_last_error_message() == NULL) return 5;
    printf("%.17g %.17g %.17g\n", t.fluency, t.truthfulness, t.helpfulness);
    gs_refset_free(rs);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf()
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok()
}

#[test]
fn header_compiles_as_c_and_cpp() {
    if !have_cc() {
        eprintln!("cc not found; header check skipped");
        return;
    }
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let c = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(c.status.success(), "{}", String::from_utf8_lossy(&c.stderr));
    let cpp = Command::new("c++")
        .args(["-x", "c++", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output();
    if let Ok(cpp) = cpp {
        assert!(
            cpp.status.success(),
            "{}",
            String::from_utf8_lossy(&cpp.stderr)
        );
    }
}

#[test]
fn c_program_links_and_runs() {
    let lib = target_dir().join("libgramscore_ffi.a");
    if !have_cc() || !lib.exists() {
        eprintln!("cc or {} missing; link check skipped", lib.display());
        return;
    }
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let build = Command::new("cc")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(
        build.status.success(),
        "{}",
        String::from_utf8_lossy(&build.stderr)
    );
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let fields: Vec<f64> = String::from_utf8(run.stdout)
        .unwrap()
        .split_whitespace()
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(fields.len(), 3);
    assert_eq!(fields[2], 1.0);
    assert!(fields[0] > 0.0 && fields[1] > 0.0);
}
