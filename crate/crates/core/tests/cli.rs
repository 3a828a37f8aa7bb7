use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dsc_accel::cli::report::{COUNTERS_HEADER, DSE_HEADER, REDUCTION_HEADER, ZERO_STATS_HEADER};
use dsc_accel::cli::RunManifest;
use dsc_accel::engine::random_network_params;
use dsc_accel::workload::{builtin_mobilenet_v1_cifar10, LayerShape, Network};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsc-accel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_builtin(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("mobilenet.json");
    fs::write(&path, builtin_mobilenet_v1_cifar10().to_json()).unwrap();
    path
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let net = write_builtin(tmp.path());
    let (a, b) = (tmp.path().join("run1"), tmp.path().join("run2"));
    for out in [&a, &b] {
        let o = run(&[
            "simulate",
            "--network",
            s(&net),
            "--seed",
            "7",
            "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut files: Vec<String> = (0..13).map(|i| format!("L{i}.ofmap")).collect();
    files.extend(["counters.csv".into(), "zero_stats.csv".into()]);
    for f in &files {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let c = run(&[
        "simulate",
        "--network",
        s(&net),
        "--seed",
        "8",
        "--out",
        s(&tmp.path().join("run3")),
    ]);
    assert!(c.status.success());
    assert_ne!(
        fs::read(a.join("L12.ofmap")).unwrap(),
        fs::read(tmp.path().join("run3/L12.ofmap")).unwrap()
    );
}

#[test]
fn fused_and_sequential_ofmaps_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (f, q) = (tmp.path().join("fused"), tmp.path().join("seq"));
    assert!(run(&["simulate", "--seed", "3", "--out", s(&f)])
        .status
        .success());
    assert!(run(&[
        "simulate",
        "--seed",
        "3",
        "--mode",
        "sequential",
        "--out",
        s(&q)
    ])
    .status
    .success());
    for i in 0..13 {
        let name = format!("L{i}.ofmap");
        assert_eq!(
            fs::read(f.join(&name)).unwrap(),
            fs::read(q.join(&name)).unwrap(),
            "{name}"
        );
    }
    assert_ne!(
        fs::read(f.join("counters.csv")).unwrap(),
        fs::read(q.join("counters.csv")).unwrap()
    );
}

#[test]
fn simulate_reads_weight_bundles() {
    let tmp = tempfile::tempdir().unwrap();
    let net = builtin_mobilenet_v1_cifar10();
    let (_, params) = random_network_params(&net, 11);
    let wdir = tmp.path().join("weights");
    fs::create_dir(&wdir).unwrap();
    for (i, p) in params.iter().enumerate() {
        p.write_bundle(&wdir, i).unwrap();
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&["simulate", "--seed", "11", "--out", s(&a)])
        .status
        .success());
    let o = run(&[
        "simulate",
        "--seed",
        "11",
        "--weights",
        s(&wdir),
        "--out",
        s(&b),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(a.join("L12.ofmap")).unwrap(),
        fs::read(b.join("L12.ofmap")).unwrap()
    );

    let missing = wdir.join("L5.pwc.w");
    fs::remove_file(&missing).unwrap();
    let o = run(&[
        "simulate",
        "--weights",
        s(&wdir),
        "--out",
        s(&tmp.path().join("c")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("L5.pwc.w"), "{}", stderr(&o));
}

#[test]
fn malformed_and_invalid_networks() {
    let tmp = tempfile::tempdir().unwrap();
    let garbage = tmp.path().join("garbage.json");
    fs::write(&garbage, "{not json").unwrap();
    let out = tmp.path().join("out");
    for cmd in ["simulate", "explore", "timing", "golden"] {
        assert_eq!(
            run(&[cmd, "--network", s(&garbage), "--out", s(&out)])
                .status
                .code(),
            Some(2),
            "{cmd}"
        );
    }

    let broken = Network {
        name: "broken".into(),
        layers: vec![
            LayerShape::new(0, 8, 8, 8, 16, 1, 1),
            LayerShape::new(1, 8, 8, 32, 16, 1, 1),
        ],
    };
    let path = tmp.path().join("broken.json");
    fs::write(&path, broken.to_json()).unwrap();
    let o = run(&["simulate", "--network", s(&path), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!stderr(&o).is_empty());
    assert_eq!(
        run(&["timing", "--network", s(&path), "--out", s(&out)])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        run(&["timing", "--freq", "0", "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["simulate", "--spatial-cap", "3", "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn explore_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = run(&["explore", "--out", s(&out)]);
    assert!(o.status.success());
    let top = stdout(&o).lines().next().unwrap().to_string();
    assert!(top.contains("La, Tn=Tm=2, case 6"), "{top}");

    let dse = fs::read_to_string(out.join("dse.csv")).unwrap();
    assert_eq!(dse.lines().next().unwrap(), DSE_HEADER.join(","));
    assert_eq!(dse.lines().count(), 1 + 24 * 14);

    let red = fs::read_to_string(out.join("reduction.csv")).unwrap();
    assert_eq!(red.lines().next().unwrap(), REDUCTION_HEADER.join(","));
    let raw_total = red.lines().find(|l| l.starts_with("raw,total,")).unwrap();
    let pct: f64 = raw_total.rsplit(',').next().unwrap().parse().unwrap();
    assert!((pct - 40.1).abs() < 0.05, "{raw_total}");
    assert!(red.lines().any(|l| l.starts_with("tableII,")));

    let only = tmp.path().join("y");
    assert!(
        run(&["explore", "--convention", "tableII", "--out", s(&only)])
            .status
            .success()
    );
    let red = fs::read_to_string(only.join("reduction.csv")).unwrap();
    assert!(red.lines().skip(1).all(|l| l.starts_with("tableII,")));
    assert_eq!(red.lines().count(), 1 + 14);
}

fn timing_doc(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("timing.json")).unwrap()).unwrap()
}

#[test]
fn timing_report_and_frequency_scaling() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&["timing", "--out", s(&a)]).status.success());
    assert!(run(&["timing", "--freq", "0.5e9", "--out", s(&b)])
        .status
        .success());
    let (ja, jb) = (timing_doc(&a), timing_doc(&b));
    let keys = |v: &serde_json::Value| {
        let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    };
    assert_eq!(
        keys(&ja),
        ["layers", "mean_gops", "total_ns", "weighted_gops"]
    );
    assert_eq!(
        keys(&ja["layers"][0]),
        ["cycles", "dwc_util", "gops", "index", "ns", "ops", "pwc_util"]
    );
    let l12 = ja["layers"][12]["gops"].as_f64().unwrap();
    assert!((l12 - 905.6).abs() < 0.05, "{l12}");
    for (x, y) in ja["layers"]
        .as_array()
        .unwrap()
        .iter()
        .zip(jb["layers"].as_array().unwrap())
    {
        assert_eq!(y["ns"].as_f64().unwrap(), 2.0 * x["ns"].as_f64().unwrap());
        assert!((y["gops"].as_f64().unwrap() - x["gops"].as_f64().unwrap() / 2.0).abs() < 1e-9);
        assert_eq!(x["cycles"], y["cycles"]);
    }
}

#[test]
fn timing_crosscheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["timing", "--crosscheck", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("crosscheck"));
}

#[test]
fn golden_pass_fault_and_layer_filter() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    let o = run(&["golden", "--seed", "7", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("golden.txt")).unwrap();
    assert!(text.lines().last().unwrap().starts_with("PASS: 13 of 13"));

    let o = run(&[
        "golden",
        "--seed",
        "7",
        "--inject-fault",
        "--layers",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(5));
    let err = stderr(&o);
    assert!(
        err.contains("layer 3") && err.contains("row 0, col 0, ch 0"),
        "{err}"
    );

    let o = run(&[
        "golden",
        "--seed",
        "7",
        "--layers",
        "12",
        "--trials",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("golden.txt")).unwrap();
    let checks: Vec<_> = text.lines().filter(|l| l.starts_with("layer ")).collect();
    assert_eq!(checks.len(), 2);
    assert!(checks.iter().all(|l| l.starts_with("layer 12 ")));

    assert_eq!(
        run(&["golden", "--layers", "13", "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn manifest_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("m");
    assert!(run(&[
        "timing",
        "--seed",
        "9",
        "--freq",
        "2e9",
        "--spatial-cap",
        "4",
        "--out",
        s(&out)
    ])
    .status
    .success());
    let text = fs::read_to_string(out.join("manifest.json")).unwrap();
    let m = RunManifest::from_json(&text).unwrap();
    assert_eq!(
        (m.command.as_str(), m.seed, m.spatial_cap, m.t_period_ns),
        ("timing", 9, 4, Some(0.5))
    );
    assert_eq!(RunManifest::from_json(&m.to_json()).unwrap(), m);
}

#[test]
fn csv_headers_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&["simulate", "--out", s(tmp.path())]).status.success());
    assert_eq!(
        first_line(&tmp.path().join("counters.csv")),
        "layer,mode,dwc_act_reads,dwc_wgt_reads,dwc_out_writes,intermediate_reads,pwc_act_reads,pwc_wgt_reads,pwc_psum_accesses,pwc_out_writes,cycles"
    );
    assert_eq!(
        first_line(&tmp.path().join("counters.csv")),
        COUNTERS_HEADER.join(",")
    );
    assert_eq!(
        first_line(&tmp.path().join("zero_stats.csv")),
        "layer,dwc_zero_fraction,pwc_zero_fraction"
    );
    assert_eq!(
        first_line(&tmp.path().join("zero_stats.csv")),
        ZERO_STATS_HEADER.join(",")
    );
    assert_eq!(
        DSE_HEADER.join(","),
        "order,Tn,Tm,Td,Tk,layer,dwc_act,dwc_wgt,pwc_act,pwc_wgt,psum,pe_dwc,pe_pwc"
    );
    assert_eq!(
        REDUCTION_HEADER.join(","),
        "convention,layer,baseline,proposed,reduction_pct"
    );
}

#[test]
fn crosscheck_mismatch_on_ragged_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let net = Network {
        name: "ragged".into(),
        layers: vec![LayerShape::new(0, 10, 10, 8, 16, 1, 1)],
    };
    let path = tmp.path().join("ragged.json");
    fs::write(&path, net.to_json()).unwrap();
    let o = run(&[
        "timing",
        "--network",
        s(&path),
        "--crosscheck",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("layer 0"));
    let o = run(&[
        "timing",
        "--network",
        s(&path),
        "--spatial-cap",
        "10",
        "--crosscheck",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
