use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ubc_core::cli::Artifact;
use ubc_core::golden::{encode_image, ImageFormat};

fn program(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../programs").join(name)
}

fn ubc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ubc")).args(args).env("UBC_SEED", "3").output().unwrap()
}

fn compile_to(dir: &Path, prog: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join("a.json");
    let p = program(prog);
    let mut args = vec!["compile", p.to_str().unwrap(), "-o", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = ubc(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn load(p: &Path) -> Artifact {
    Artifact::from_json(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn compile_brighten_blur_onto_wide_fetch() {
    let dir = tempfile::tempdir().unwrap();
    let a = load(&compile_to(dir.path(), "brighten_blur.ub", &["--target", "widefetch", "--fw", "4", "--capacity", "512"]));
    assert_eq!(a.compiled.design.stats.mem_tiles, 1);
    let srs: usize = a.compiled.design.buffers.iter().map(|b| b.shift_registers.len()).sum();
    assert_eq!(srs, 2);

    let seq = load(&compile_to(dir.path(), "brighten_blur.ub", &["--strategy", "sequential"]));
    assert!(seq.compiled.design.stats.completion_cycles > a.compiled.design.stats.completion_cycles);
    assert!(seq.compiled.design.stats.total_sram_words > a.compiled.design.stats.total_sram_words);
}

#[test]
fn empty_program_is_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("empty.ub");
    std::fs::write(&f, "").unwrap();
    assert_eq!(ubc(&["compile", f.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn simulate_passes_and_dumps_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let art = compile_to(dir.path(), "brighten_blur.ub", &[]);
    let img = dir.path().join("in.pgm");
    let pixels: Vec<u16> = (0..4096).map(|i| (i * 7 % 251) as u16).collect();
    std::fs::write(&img, encode_image(&pixels, &[64, 64], ImageFormat::Text)).unwrap();
    let trace = dir.path().join("trace.csv");
    let outs = dir.path().join("out");
    let o = ubc(&[
        "simulate",
        art.to_str().unwrap(),
        "--input",
        &format!("input={}", img.display()),
        "--dump-trace",
        trace.to_str().unwrap(),
        "--out-dir",
        outs.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = std::fs::read_to_string(trace).unwrap();
    assert!(csv.starts_with("cycle,unit,port,op,address,data\n"));
    assert!(csv.lines().count() > 4096);
    assert_eq!(std::fs::read(outs.join("blur.bin")).unwrap().len(), 63 * 63 * 2);
}

#[test]
fn tiny_cycle_budget_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let art = compile_to(dir.path(), "brighten_blur.ub", &[]);
    assert_eq!(ubc(&["simulate", art.to_str().unwrap(), "--max-cycles", "100"]).status.code(), Some(3));
}

#[test]
fn corrupted_address_delta_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let art = compile_to(dir.path(), "brighten_blur.ub", &["--target", "dualport"]);
    let text = std::fs::read_to_string(&art).unwrap();

    // edited without refreshing the digest: rejected on load
    let tampered = text.replacen("\"deltas\": [\n", "\"deltas\": [\n 7,", 1);
    std::fs::write(&art, &tampered).unwrap();
    assert_eq!(ubc(&["simulate", art.to_str().unwrap()]).status.code(), Some(1));

    // consistent digest but a wrong read address delta: the diff catches it
    let mut a = Artifact::from_json(&text).unwrap();
    let mem = a.compiled.design.buffers.iter_mut().flat_map(|b| b.mems.iter_mut()).next().unwrap();
    mem.reads[0].address_ag.deltas[0] += 1;
    std::fs::write(&art, Artifact::new(a.compiled).unwrap().to_json().unwrap()).unwrap();
    let o = ubc(&["simulate", art.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn compare_copy_and_gaussian() {
    let o = ubc(&[
        "compare-schedules",
        program("copy.ub").to_str().unwrap(),
        program("gaussian.ub").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<Vec<&str>> = out.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0].join(","), "app,seq_cycles,opt_cycles,speedup,seq_sram_words,opt_sram_words,reduction");
    assert_eq!(rows[1][3], "1.00");
    assert_eq!(rows[2][0], "gaussian");
    assert_eq!(rows[2][5], "128");
    assert!(rows[2][3].parse::<f64>().unwrap() > 5.0);
}
