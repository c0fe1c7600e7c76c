//! End-to-end tests against the built binary: determinism, the exit-code
//! contract, and the printed headline numbers.

use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn streamtom(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamtom"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn generate(dir: &Path, path: &str, extra: &[&str]) {
    let mut args: Vec<&str> = vec!["generate", "-o", path];
    for pair in [
        ["--seed", "7"],
        ["--frames", "64"],
        ["--n", "196"],
        ["--dim", "32"],
    ] {
        if !extra.contains(&pair[0]) {
            args.extend_from_slice(&pair);
        }
    }
    args.extend_from_slice(extra);
    let out = streamtom(dir, &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "a.toks", &[]);
    generate(dir.path(), "b.toks", &[]);
    let a = fs::read(dir.path().join("a.toks")).unwrap();
    let b = fs::read(dir.path().join("b.toks")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    generate(dir.path(), "c.toks", &["--seed", "8"]);
    assert_ne!(a, fs::read(dir.path().join("c.toks")).unwrap());
}

#[test]
fn generate_rejects_out_of_range_fraction() {
    let dir = TempDir::new().unwrap();
    let out = streamtom(
        dir.path(),
        &["generate", "-o", "x.toks", "--static-fraction", "1.5"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_zero_frames_is_valid() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "empty.toks", &["--frames", "0"]);
    let out = streamtom(
        dir.path(),
        &["run", "--stream", "empty.toks", "--snapshot", "e.oqm1", "--metrics", "e.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("frames processed: 0"));
}

#[test]
fn run_prints_headline_ratio_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "s.toks", &[]);
    let run = |snap: &str, csv: &str, extra: &[&str]| {
        let mut args = vec!["run", "--stream", "s.toks", "--snapshot", snap, "--metrics", csv];
        args.extend_from_slice(extra);
        let out = streamtom(dir.path(), &args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        stdout(&out)
    };
    let text = run("a.oqm1", "a.csv", &[]);
    assert!(text.contains("15.7"), "summary was: {text}");
    assert!(text.contains("6.4%"), "summary was: {text}");

    let _ = run("b.oqm1", "b.csv", &[]);
    assert_eq!(
        fs::read(dir.path().join("a.oqm1")).unwrap(),
        fs::read(dir.path().join("b.oqm1")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("a.csv")).unwrap(),
        fs::read(dir.path().join("b.csv")).unwrap()
    );

    // driver batching must not change any stored byte
    let _ = run("c.oqm1", "c.csv", &["--batch", "8"]);
    let _ = run("d.oqm1", "d.csv", &["--batch", "32"]);
    assert_eq!(
        fs::read(dir.path().join("a.oqm1")).unwrap(),
        fs::read(dir.path().join("c.oqm1")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("c.oqm1")).unwrap(),
        fs::read(dir.path().join("d.oqm1")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("a.csv")).unwrap(),
        fs::read(dir.path().join("d.csv")).unwrap()
    );
}

#[test]
fn run_two_bit_prints_table_row() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "s.toks", &["--frames", "8"]);
    let out = streamtom(
        dir.path(),
        &[
            "run", "--stream", "s.toks", "--snapshot", "s.oqm1", "--metrics", "s.csv",
            "--tokens", "50", "--bits", "2",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("31.4"), "summary was: {text}");
    assert!(text.contains("3.2%"), "summary was: {text}");
}

#[test]
fn run_missing_stream_is_io_error() {
    let dir = TempDir::new().unwrap();
    let out = streamtom(dir.path(), &["run", "--stream", "missing.toks"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_names_the_invalid_frame() {
    use streamtom::core::Matrix;
    use streamtom::stream_file::{write_stored, StoredFrame};

    let dir = TempDir::new().unwrap();
    let frame = |bad: bool| StoredFrame {
        features: Matrix::from_rows(&vec![vec![0.5f32; 4]; 8]).unwrap(),
        saliency: Some(vec![if bad { 1.5 } else { 0.5 }; 8]),
    };
    let frames = vec![frame(false), frame(false), frame(true)];
    let mut bytes = Vec::new();
    write_stored(&mut bytes, 0.5, 8, 4, &frames).unwrap();
    fs::write(dir.path().join("bad.toks"), bytes).unwrap();

    let out = streamtom(
        dir.path(),
        &["run", "--stream", "bad.toks", "--tokens", "4", "--snapshot", "x.oqm1", "--metrics", "x.csv"],
    );
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("frame 2"), "stderr was: {stderr}");
}

#[test]
fn run_rejects_invalid_config_as_usage() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "s.toks", &["--frames", "2"]);
    // budget larger than tokens/frame
    let out = streamtom(
        dir.path(),
        &["run", "--stream", "s.toks", "--tokens", "500"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn query_reports_bounded_active_set_and_ranks_rep_key_first() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "s.toks", &["--frames", "12"]);
    let out = streamtom(
        dir.path(),
        &["run", "--stream", "s.toks", "--snapshot", "s.oqm1", "--metrics", "s.csv"],
    );
    assert!(out.status.success());

    // k >= T activates every stored group
    let all = vec!["0.1"; 512].join(" ");
    fs::write(dir.path().join("q.txt"), all).unwrap();
    let out = streamtom(
        dir.path(),
        &["query", "--snapshot", "s.oqm1", "--query", "q.txt", "--k", "500"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("active retained tokens: 600"), "got: {text}");

    // querying with a stored rep key ranks that group first
    let file = fs::File::open(dir.path().join("s.oqm1")).unwrap();
    let store = streamtom::oqm::snapshot::read_snapshot(&mut BufReader::new(file)).unwrap();
    let rep = store.groups()[7]
        .rep_key
        .iter()
        .map(f32::to_string)
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(dir.path().join("rep.txt"), rep).unwrap();
    let out = streamtom(
        dir.path(),
        &["query", "--snapshot", "s.oqm1", "--query", "rep.txt", "--k", "3"],
    );
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(
        text.contains("retrieved groups (ranked): 7"),
        "got: {text}"
    );
}

#[test]
fn query_rejects_malformed_snapshot() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.oqm1"), b"not a snapshot at all").unwrap();
    fs::write(dir.path().join("q.txt"), "0.0").unwrap();
    let out = streamtom(
        dir.path(),
        &["query", "--snapshot", "bad.oqm1", "--query", "q.txt"],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn query_rejects_wrong_length_vector() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "s.toks", &["--frames", "2"]);
    let out = streamtom(
        dir.path(),
        &["run", "--stream", "s.toks", "--snapshot", "s.oqm1", "--metrics", "s.csv"],
    );
    assert!(out.status.success());
    fs::write(dir.path().join("q.txt"), "0.5 0.5 0.5").unwrap();
    let out = streamtom(
        dir.path(),
        &["query", "--snapshot", "s.oqm1", "--query", "q.txt"],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn model_memory_defaults_print_footprints() {
    let dir = TempDir::new().unwrap();
    let out = streamtom(dir.path(), &["model-memory"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("18.8"), "got: {text}");
    assert!(text.contains("1.2"), "got: {text}");
    assert!(text.contains("15.7"), "got: {text}");
}

#[test]
fn model_memory_table_rows() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (&["--tokens", "40", "--bits", "4"][..], "5.1%"),
        (&["--tokens", "60", "--bits", "2"][..], "3.8%"),
        (&["--tokens", "60", "--bits", "4"][..], "7.7%"),
    ];
    for (extra, want) in cases {
        let mut args = vec!["model-memory"];
        args.extend_from_slice(extra);
        let out = streamtom(dir.path(), &args);
        assert!(out.status.success());
        assert!(stdout(&out).contains(want), "missing {want}");
    }
}

#[test]
fn model_memory_rejects_nonpositive_params() {
    let dir = TempDir::new().unwrap();
    let out = streamtom(dir.path(), &["model-memory", "--layers", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "s.toks", &["--frames", "16"]);
    let run_with_threads = |threads: &str, snap: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_streamtom"))
            .current_dir(dir.path())
            .env("STREAMTOM_THREADS", threads)
            .args(["run", "--stream", "s.toks", "--snapshot", snap, "--metrics", "m.csv"])
            .output()
            .unwrap();
        assert!(out.status.success());
    };
    run_with_threads("1", "t1.oqm1");
    run_with_threads("4", "t4.oqm1");
    assert_eq!(
        fs::read(dir.path().join("t1.oqm1")).unwrap(),
        fs::read(dir.path().join("t4.oqm1")).unwrap()
    );
    let out = Command::new(env!("CARGO_BIN_EXE_streamtom"))
        .current_dir(dir.path())
        .env("STREAMTOM_THREADS", "lots")
        .args(["model-memory"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
