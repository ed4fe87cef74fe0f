use std::path::Path;
use std::process::{Command, Output};

use fier::cli::{bench_config, cmd_quantize, Cli, Command as Sub, QuantizeArgs};
use fier::report;
use fier::run::parallel_sweep;
use fier_core::harness::{generate, margin_and_errors, sweep, token_position_map, Generator, WorkloadSpec};
use fier_core::{quantize, GroupSpec, PolicyKind};

fn fier(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fier")).args(args).output().expect("spawn fier")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

const SMALL: [&str; 8] = ["--len", "256", "--dim", "16", "--seed", "9", "--queries", "2"];

#[test]
fn full_policy_has_recall_one() {
    let out = fier(&["bench", "--len", "64", "--dim", "8", "--policy", "full", "--budgets", "8", "--trials", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = report::from_csv(&out.stdout).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].recall_mean, 1.0);
    assert_eq!(rows[0].trials, 3);
}

#[test]
fn bench_matches_library_sweep() {
    let mut args = vec!["bench"];
    args.extend(SMALL);
    args.extend(["--generator", "outlier_channels", "--outlier-count", "2", "--policy", "fier:g=16", "--policy", "quest:L=8"]);
    args.extend(["--policy", "h2o:recent=4", "--budgets", "8,32", "--trials", "5"]);
    let out = fier(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let spec = WorkloadSpec::new(256, 16, Generator::OutlierChannels { count: 2, scale: 8.0 }, 9).with_queries(2);
    let mut parsed = vec!["fier"];
    parsed.extend(&args);
    let Sub::Bench(a) = <Cli as clap::Parser>::parse_from(parsed).command else { panic!() };
    let expected = report::to_csv(&report::rows(&sweep(&spec, &bench_config(&a)).unwrap().rows)).unwrap();
    assert_eq!(out.stdout, expected);
}

#[test]
fn replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for format in ["csv", "json"] {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let file = path(dir.path(), &format!("r{run}.{format}"));
            let mut args = vec!["bench"];
            args.extend(SMALL);
            args.extend(["--policy", "fier", "--policy", "streaming_llm", "--budgets", "16", "--trials", "4"]);
            args.extend(["--format", format, "--out", &file]);
            assert_eq!(fier(&args).status.code(), Some(0));
            outputs.push(std::fs::read(&file).unwrap());
        }
        assert_eq!(outputs[0], outputs[1]);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let spec = WorkloadSpec::new(128, 8, Generator::Gaussian, 1).with_queries(3);
    let mut args = vec!["fier", "bench", "--policy", "fier:g=8", "--policy", "h2o", "--budgets", "4,16", "--trials", "7"];
    args.extend(["--len", "128", "--dim", "8"]);
    let Sub::Bench(a) = <Cli as clap::Parser>::parse_from(args).command else { panic!() };
    let cfg = bench_config(&a);
    let one = parallel_sweep(&spec, &cfg, 1).unwrap();
    assert_eq!(parallel_sweep(&spec, &cfg, 4).unwrap(), one);
    assert_eq!(sweep(&spec, &cfg).unwrap(), one);
}

#[test]
fn quantize_reports_formula_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let dump = path(dir.path(), "d.kvd");
    assert_eq!(fier(&["gen", "--len", "4096", "--dim", "128", "--seed", "5", "-o", &dump]).status.code(), Some(0));
    let out = fier(&["quantize", "-i", &dump, "-g", "32", "-o", &path(dir.path(), "k.fier")]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("counted load ratio 1/8 = 0.125"), "{text}");
    assert!(text.contains("formula load ratio 1/8 = 0.125"), "{text}");

    let index = path(dir.path(), "one.fier");
    let mut buf = Vec::new();
    let args = QuantizeArgs { input: dump.clone().into(), group_size: 1, output: index.clone().into() };
    cmd_quantize(&args, &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().contains("round trip lossless"));
    let out = fier(&["inspect", &index]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().next(), Some("packed index: l 4096 d 128 g 1"));
}

#[test]
fn usage_errors_exit_one() {
    let out = fier(&["bench", "--len", "64", "--policy", "snapkv", "--budgets", "8"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    for name in PolicyKind::NAMES {
        assert!(err.contains(name), "{err}");
    }
    assert_eq!(fier(&["bench", "--len", "64", "--dim", "8", "--policy", "full", "--budgets", "65"]).status.code(), Some(1));
    assert_eq!(fier(&["bench", "--policy", "full", "--budgets", "0"]).status.code(), Some(1));
    assert_eq!(fier(&["bench", "--budgets", "8"]).status.code(), Some(1));
    assert_eq!(fier(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fier(&["--help"]).status.code(), Some(0));
}

#[test]
fn posmap_rows_and_golden() {
    let dir = tempfile::tempdir().unwrap();
    let dump = path(dir.path(), "spikes.kvd");
    let mut args = vec!["gen", "--generator", "planted_spikes", "--spike-count", "16", "--spike-gain", "12"];
    args.extend(SMALL);
    args.extend(["--dtype", "f32", "-o", &dump]);
    assert_eq!(fier(&args).status.code(), Some(0));

    let out_csv = path(dir.path(), "map.csv");
    let out = fier(&["posmap", "--dump", &dump, "--policy", "fier:g=8", "--policy", "quest:L=16", "--policy", "full", "--budget", "16", "--out", &out_csv]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 4);

    let bytes = std::fs::read(&out_csv).unwrap();
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    assert_eq!(reader.headers().unwrap().len(), 2 + 256);
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 3 + 1);
    let ones = |r: &csv::StringRecord| r.iter().skip(2).filter(|v| *v == "1").count();
    assert_eq!(&records[0][0], "oracle");
    assert_eq!(ones(&records[0]), 16);
    assert_eq!(ones(&records[3]), 256);

    let inst = fier::cli::read_dump(Path::new(&dump)).unwrap().instance;
    let policies = [PolicyKind::Fier { group_size: 8 }, fier::parse_policy("quest:L=16").unwrap(), PolicyKind::Full];
    let maps = token_position_map(&inst, 0, &policies, 16, true).unwrap();
    assert_eq!(report::position_maps_csv(&maps).unwrap(), bytes);
}

#[test]
fn fier_map_covers_spikes_under_margin_condition() {
    let g = Generator::PlantedSpikes { count: 16, gain: 20.0, avoid_head: 0, avoid_tail: 0 };
    let inst = generate(&WorkloadSpec::new(256, 16, g, 9)).unwrap();
    let pk = quantize(&inst.keys, GroupSpec::new(8).unwrap());
    let report = margin_and_errors(&inst.queries[0], &inst.keys, &pk, 16).unwrap();
    assert!(report.preserves_top_k(), "{report:?}");
    let maps = token_position_map(&inst, 0, &[PolicyKind::Fier { group_size: 8 }], 16, true).unwrap();
    let selected: Vec<usize> = (0..256).filter(|&t| maps[1].mask[t] == 1).collect();
    assert_eq!(selected, inst.spikes[0]);
}

#[test]
fn corrupted_files_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let dump = path(dir.path(), "d.kvd");
    assert_eq!(fier(&["gen", "--len", "64", "--dim", "8", "-o", &dump]).status.code(), Some(0));
    let good = std::fs::read(&dump).unwrap();

    let bad = path(dir.path(), "bad.kvd");
    std::fs::write(&bad, &good[..good.len() - 3]).unwrap();
    let out = fier(&["quantize", "-i", &bad, "-o", &path(dir.path(), "x.fier")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("payload length mismatch"));
    assert!(!dir.path().join("x.fier").exists());

    let mut b = good.clone();
    b[14] = 9;
    std::fs::write(&bad, &b).unwrap();
    let out = fier(&["bench", "--dump", &bad, "--policy", "oracle", "--budgets", "4", "--trials", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("dtype"));

    assert_eq!(fier(&["inspect", &path(dir.path(), "missing.kvd")]).status.code(), Some(2));
}
