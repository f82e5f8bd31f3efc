use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pio_core::cost::{cost_pio_buffered, CostProfile};

const SMALL: [&str; 4] = ["--initial", "20000", "--key-domain", "40000"];

fn pio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pio"))
        .args(args)
        .output()
        .expect("run pio")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bench_run_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = pio(&[
        &[
            "bench",
            "run",
            "--workload",
            "mixed",
            "--insert-ratio",
            "0.5",
            "--ops",
            "5000",
            "--verify",
            "--out",
            path(&out),
        ],
        &SMALL[..],
    ]
    .concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config:"));
    assert!(lines[1].starts_with("experiment,index,"));
    assert_eq!(lines.len(), 4);
    for row in &lines[2..] {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], "mixed");
        let count = |i: usize| cols[i].parse::<u64>().unwrap();
        assert_eq!(count(4), 5000);
        assert_eq!(count(5) + count(6) + count(7) + count(8) + count(9), 5000);
    }
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = pio(&["bench", "run", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = pio(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_values_are_usage_errors() {
    assert_eq!(pio(&["tune", "--rs", "0.5", "--ri", "0.7"]).status.code(), Some(2));
    assert_eq!(pio(&["bench", "run", "--insert-ratio", "1.5"]).status.code(), Some(2));
    assert_eq!(pio(&["bench", "run", "--wal"]).status.code(), Some(2));
    assert_eq!(
        pio(&["verify", "--data", "/nonexistent/pio.dat"]).status.code(),
        Some(2)
    );
}

#[test]
fn calibrate_reports_device_latencies() {
    let o = pio(&["calibrate", "--channels", "16"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("pr_us = 100.000"), "{text}");
    assert!(text.contains("pw_us = 200.000"));
    assert!(text.contains("pr_batch_us = 6.250"));
}

#[test]
fn tune_matches_grid_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let lat = dir.path().join("lat.txt");
    fs::write(
        &lat,
        "pr_us = 100\npw_us = 200\npio_max = 64\npr_batch_us = 6.25\npw_batch_us = 12.5\n\
         pr_extent_1_us = 100\npr_extent_2_us = 100\npr_extent_4_us = 160\npr_extent_8_us = 250\npr_extent_16_us = 500\n",
    )
    .unwrap();
    let report = dir.path().join("tune.txt");
    let o = pio(&[
        "tune",
        "--rs",
        "0.9",
        "--ri",
        "0.1",
        "--latencies",
        path(&lat),
        "--out",
        path(&report),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let extent = |l: u32| match l {
        1 | 2 => 100.0,
        4 => 160.0,
        8 => 250.0,
        _ => 500.0,
    };
    let mut best: Option<(u32, u32, f64)> = None;
    for l in [1u32, 2, 4, 8, 16] {
        let mut o = 1u32;
        while o <= 512 {
            let p = CostProfile {
                n: 1e6,
                fanout: 255.0,
                utilization: 0.7,
                leaf_segments: f64::from(l),
                pr: 100.0,
                pw: 200.0,
                pr_leaf: extent(l),
                pr_batch: 6.25,
                pw_batch: 12.5,
                rs: 0.9,
                ri: 0.1,
                m: 1024.0,
                o: f64::from(o),
                bcnt: 5000.0,
            };
            let c = cost_pio_buffered(&p).unwrap();
            if best.is_none_or(|(_, _, b)| c < b) {
                best = Some((l, o, c));
            }
            o *= 2;
        }
    }
    let (l, o, _) = best.unwrap();
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.contains(&format!("l_opt = {l}\n")), "{text}");
    assert!(text.contains(&format!("o_opt = {o}\n")), "{text}");
    assert!(stdout(&pio(&["tune", "--ri", "0.1", "--latencies", path(&lat)]))
        .contains(&format!("(L_opt, O_opt) = ({l}, {o})")));
}

#[test]
fn bench_run_takes_tuning_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("tune.txt");
    fs::write(&report, "l_opt = 2\no_opt = 4\n").unwrap();
    let out = dir.path().join("r.csv");
    let o = pio(&[
        &[
            "bench",
            "run",
            "--index",
            "pio",
            "--ops",
            "500",
            "--tuning",
            path(&report),
            "--out",
            path(&out),
        ],
        &SMALL[..],
    ]
    .concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.contains("leaf_segments=2 opq_pages=4"), "{csv}");
}

#[test]
fn trace_replay() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace");
    fs::write(&trace, "# probe\ni 1\ns 1\nr 0 10\nd 1\ns 1\n").unwrap();
    let o = pio(&[
        "bench",
        "run",
        "--trace",
        path(&trace),
        "--verify",
        "--initial",
        "100",
        "--key-domain",
        "100000",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains("ops=5 ")).count(), 2);
    fs::write(&trace, "s 1\nq 2\n").unwrap();
    assert_eq!(pio(&["bench", "run", "--trace", path(&trace)]).status.code(), Some(2));
}

#[test]
fn sweep_opq_is_non_increasing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = pio(&[
        &[
            "bench",
            "sweep",
            "--dimension",
            "opq",
            "--grid",
            "1,4,16",
            "--ops",
            "2000",
            "--out",
            path(&out),
        ],
        &SMALL[..],
    ]
    .concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let pio_insert: Vec<f64> = csv
        .lines()
        .skip(2)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|c| c[1] == "pio")
        .map(|c| c[11].parse::<f64>().unwrap() + c[15].parse::<f64>().unwrap())
        .collect();
    assert_eq!(pio_insert.len(), 3);
    assert!(pio_insert.windows(2).all(|w| w[1] <= w[0]), "{pio_insert:?}");
}

#[test]
fn crash_recover_verify() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("d");
    let o = pio(&[
        &[
            "bench",
            "run",
            "--device",
            "file",
            "--data-dir",
            path(&data_dir),
            "--index",
            "pio",
            "--wal",
            "--workload",
            "insert",
            "--ops",
            "3000",
            "--opq-pages",
            "1",
            "--crash-at",
            "before-node-write:2",
        ],
        &SMALL[..],
    ]
    .concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("simulated crash at before-node-write"),
        "{}",
        stdout(&o)
    );
    let data = data_dir.join("run-pio.dat");
    let log = data_dir.join("run-pio.wal");

    let o = pio(&["recover", "--data", path(&data), "--log", path(&log)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("undone_flushes=1"), "{text}");
    let entries = |text: &str| -> u64 {
        let tail = text.split("consistent: ").nth(1).unwrap();
        tail.split_whitespace().next().unwrap().parse().unwrap()
    };
    let recovered = entries(&text);
    assert!(recovered > 20000 && recovered < 23000, "{recovered}");

    let o = pio(&["verify", "--data", path(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(entries(&stdout(&o)), recovered);
}

#[test]
fn verify_flags_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("d");
    let o = pio(&[
        &[
            "bench",
            "run",
            "--device",
            "file",
            "--data-dir",
            path(&data_dir),
            "--index",
            "bplus",
            "--ops",
            "100",
        ],
        &SMALL[..],
    ]
    .concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let data = data_dir.join("run-bplus.dat");
    let o = pio(&["verify", "--data", path(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let mut bytes = fs::read(&data).unwrap();
    let page = 4096 * 10;
    bytes[page + 16..page + 64].fill(0xAB);
    fs::write(&data, bytes).unwrap();
    let o = pio(&["verify", "--data", path(&data)]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}
