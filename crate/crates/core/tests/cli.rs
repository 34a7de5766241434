use std::process::Command;

use hpgmxp::metrics::parse_report;

fn hpgmxp(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hpgmxp"))
        .args(args)
        .output()
        .unwrap()
}

const TINY: &[&str] = &[
    "--local-nx",
    "4",
    "--local-ny",
    "4",
    "--local-nz",
    "4",
    "--levels",
    "2",
    "--max-iters",
    "5",
    "--time-seconds",
    "0",
];

#[test]
fn emits_report() {
    let dir = std::env::temp_dir().join(format!("hpgmxp-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("report.json");
    let mut args = TINY.to_vec();
    args.extend([
        "--ranks",
        "2",
        "--coloring",
        "jpl",
        "--report-path",
        path.to_str().unwrap(),
    ]);
    let out = hpgmxp(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = parse_report(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(report.config.ranks, 2);
    assert_eq!(report.config.global, [4, 4, 8]);
    assert_eq!(report.config.coloring, "jpl");
    let written = parse_report(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(written.without_timing(), report.without_timing());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn exit_codes() {
    let mut args = TINY.to_vec();
    args.extend(["--local-nx", "6", "--levels", "3"]);
    assert_eq!(hpgmxp(&args).status.code(), Some(2));

    let mut args = TINY.to_vec();
    args.extend(["--nd-cap", "1"]);
    assert_eq!(hpgmxp(&args).status.code(), Some(3));

    assert_eq!(hpgmxp(&["--validation", "partial"]).status.code(), Some(2));
}

#[test]
fn dumps_matrix_market() {
    let path = std::env::temp_dir().join(format!("hpgmxp-mm-{}.mtx", std::process::id()));
    let out = hpgmxp(&[
        "--local-nx",
        "2",
        "--local-ny",
        "2",
        "--local-nz",
        "2",
        "--ranks",
        "2",
        "--levels",
        "1",
        "--dump-matrix",
        path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('%'));
    // 2 x 2 x 4 global grid.
    let header: Vec<usize> = lines
        .next()
        .unwrap()
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(header[..2], [16, 16]);
    assert_eq!(header[2], lines.count());
    std::fs::remove_file(&path).ok();
}
