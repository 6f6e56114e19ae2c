use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pooling"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pooling-cli-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (
        status.code().unwrap(),
        String::from_utf8(stdout).unwrap(),
        String::from_utf8(stderr).unwrap(),
    )
}

#[test]
fn generate_is_deterministic() {
    let (c1, a, _) = run(bin().args(["generate", "--tanks", "3", "--horizon", "5", "--seed", "11"]));
    let (c2, b, _) = run(bin().args(["generate", "--tanks", "3", "--horizon", "5", "--seed", "11"]));
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(a, b);
    assert!(a.starts_with("pooling-instance 1\n"));
}

#[test]
fn solve_writes_report_and_schedule() {
    let dir = scratch("solve");
    let inst = dir.join("slack.txt");
    let (c, _, _) = run(bin()
        .args([
            "generate",
            "--family",
            "slack",
            "--horizon",
            "4",
            "--seed",
            "2",
            "--out",
        ])
        .arg(&inst));
    assert_eq!(c, 0);
    let (report, schedule) = (dir.join("r.csv"), dir.join("s.csv"));
    let (c, table, err) = run(bin()
        .arg("solve")
        .arg(&inst)
        .args(["--mode", "reschedule", "--relax", "socp", "--out"])
        .arg(&report)
        .arg("--schedule")
        .arg(&schedule));
    assert_eq!(c, 0, "{err}");
    assert!(table.contains("satisfied"), "{table}");
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("name,relax,mode,"));
    assert!(csv.lines().nth(1).unwrap().starts_with("slack,socp,reschedule,"));
    assert!(fs::read_to_string(&schedule)
        .unwrap()
        .starts_with("record,step,a,b,value\n"));

    let (c, shown, _) = run(bin().arg("report").arg(&report));
    assert_eq!(c, 0);
    assert_eq!(shown.lines().count(), 2);
}

#[test]
fn starved_instance_exits_unrepairable() {
    let dir = scratch("starved");
    let inst = dir.join("starved.txt");
    run(bin()
        .args(["generate", "--family", "starved", "--horizon", "4", "--out"])
        .arg(&inst));
    let (c, table, _) = run(bin().arg("solve").arg(&inst));
    assert_eq!(c, 4, "{table}");
    assert!(table.contains("unrepairable"));
}

#[test]
fn parse_errors_exit_with_two() {
    let dir = scratch("bad");
    let inst = dir.join("bad.txt");
    fs::write(&inst, "pooling-instance 1\nhorizon x\n").unwrap();
    let (c, _, err) = run(bin().arg("solve").arg(&inst));
    assert_eq!(c, 2);
    assert!(err.contains("line 2, column 9"), "{err}");
    let (c, _, _) = run(bin().arg("solve").arg(dir.join("missing.txt")));
    assert_eq!(c, 2);
}

#[test]
fn verify_passes_on_generated_instance() {
    let dir = scratch("verify");
    let inst = dir.join("g.txt");
    run(bin().args(["generate", "--horizon", "3", "--out"]).arg(&inst));
    for relax in ["lp", "socp"] {
        let (c, out, err) = run(bin().arg("verify").arg(&inst).args(["--relax", relax]));
        assert_eq!(c, 0, "{out}{err}");
        assert!(out.lines().nth(1).unwrap().ends_with("pass"));
    }
}

#[test]
fn standard_files_relax_only() {
    let dir = scratch("standard");
    let file = dir.join("haverly.txt");
    fs::write(
        &file,
        "pooling-standard 1\nqualities 1\ninputs\n1 6 0 - 3\n2 16 0 - 1\n3 10 0 - 2\npools\n4 -\noutputs\n5 9 0 100 2.5\n6 15 0 200 1.5\narcs\n1 4 0 -\n2 4 0 -\n4 5 0 -\n4 6 0 -\n3 5 0 -\n3 6 0 -\n",
    )
    .unwrap();
    let (c, table, err) = run(bin().arg("solve").arg(&file).args(["--mode", "relax"]));
    assert_eq!(c, 0, "{err}");
    assert!(table.contains("-2099.96"), "{table}");
    let (c, _, _) = run(bin().arg("solve").arg(&file).args(["--mode", "ffs"]));
    assert_eq!(c, 2);
}

#[test]
fn batch_reports_keep_file_order() {
    let dir = scratch("batch");
    let mut files = Vec::new();
    for (k, h) in [(1, 5), (2, 2), (3, 4)] {
        let f = dir.join(format!("g{k}.txt"));
        run(bin()
            .args([
                "generate",
                "--horizon",
                &h.to_string(),
                "--seed",
                &k.to_string(),
                "--out",
            ])
            .arg(&f));
        files.push(f);
    }
    let report = dir.join("batch.csv");
    let (c, _, err) = run(bin()
        .arg("solve")
        .args(&files)
        .args(["--mode", "relax", "--out"])
        .arg(&report));
    assert_eq!(c, 0, "{err}");
    let names: Vec<String> = fs::read_to_string(&report)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(names, ["g1", "g2", "g3"]);
}
