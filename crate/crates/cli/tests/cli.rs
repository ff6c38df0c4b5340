use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use g2dyn::io::{read_surface, write_surface, Metadata, SurfaceFile};
use g2dyn::{Configuration, CorrelationSurface, Origin, Quantity, TimeAxis};

fn g2dyn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_g2dyn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = g2dyn(dir, args);
    assert!(
        out.status.success(),
        "g2dyn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn run_pipeline(dir: &Path) {
    ok(dir, &["simulate", "--scenario", "904nm", "--seed", "17", "--cycles", "20000", "--out", "photons.txt"]);
    ok(dir, &["detect", "photons.txt", "--interferometer", "hbt", "--out", "hbt.tags"]);
    ok(dir, &["detect", "photons.txt", "--interferometer", "hom", "--out", "hom.tags"]);
    ok(dir, &["detect", "photons.txt", "--interferometer", "hom", "--format", "binary", "--out", "hom.bin"]);
    ok(dir, &["correlate", "hbt.tags", "--bin-ns", "0.5", "--out", "hbt.surf"]);
    ok(dir, &["correlate", "hom.tags", "--bin-ns", "0.5", "--out", "hom.surf"]);
    ok(dir, &["coalesce", "hbt.surf", "hom.surf", "--out", "c.surf"]);
    ok(dir, &["analytic", "--scenario", "904nm", "--bin-ns", "0.5", "--out", "model"]);
    ok(dir, &["fit-lifetime", "photons.txt", "--out", "lifetime.fit"]);
    ok(dir, &["export", "model/g2_hbt.txt", "--cut", "antidiagonal:4", "--out", "anti.csv"]);
    ok(dir, &["export", "c.surf", "--format", "matrix", "--out", "c.csv"]);
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path());
    run_pipeline(b.path());
    let files = [
        "photons.txt",
        "hbt.tags",
        "hom.tags",
        "hom.bin",
        "hbt.surf",
        "hom.surf",
        "c.surf",
        "model/g2_hbt.txt",
        "model/g2_hom.txt",
        "model/g1_squared.txt",
        "model/coalescence.txt",
        "lifetime.fit",
        "anti.csv",
        "c.csv",
    ];
    for f in files {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} is empty");
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn headers_carry_provenance() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path());
    for f in ["photons.txt", "hbt.tags", "hbt.surf", "c.surf", "model/g2_hom.txt", "lifetime.fit"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        for key in ["scenario_hash=", "master_seed=", "tool_version="] {
            assert!(text.contains(key), "{f} lacks {key}");
        }
    }
    let tags = fs::read_to_string(dir.path().join("hbt.tags")).unwrap();
    assert!(tags.contains("detect_seed=17"));
}

#[test]
fn binary_and_text_tags_give_the_same_surface() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--scenario", "893nm", "--seed", "3", "--cycles", "20000", "--out", "p.txt"]);
    ok(d, &["detect", "p.txt", "--interferometer", "hom", "--out", "t.tags"]);
    ok(d, &["detect", "p.txt", "--interferometer", "hom", "--format", "binary", "--out", "t.bin"]);
    let text = ok(d, &["correlate", "t.tags"]);
    let binary = ok(d, &["correlate", "t.bin", "--interferometer", "hom", "--cycles", "20000"]);
    let (SurfaceFile::Correlation(x, _), SurfaceFile::Correlation(y, _)) = (
        read_surface(std::str::from_utf8(&text).unwrap()).unwrap(),
        read_surface(std::str::from_utf8(&binary).unwrap()).unwrap(),
    ) else {
        panic!("expected g2 surfaces")
    };
    assert_eq!(x.numerator, y.numerator);
    assert_eq!(x.marginal1, y.marginal1);
    assert_eq!(x.n_events, y.n_events);
}

#[test]
fn diagonal_export_of_constant_surface_is_ones() {
    let dir = tempfile::tempdir().unwrap();
    let axis = TimeAxis::new(0.2, 13.14).unwrap();
    let n = axis.n_bins();
    let s = CorrelationSurface::from_parts(
        axis,
        Configuration::Hbt,
        Quantity::G2,
        Origin::Model,
        vec![1.0; n * n],
        vec![1.0; n],
        vec![1.0; n],
        1.0,
    )
    .unwrap();
    fs::write(dir.path().join("one.surf"), write_surface(&s, &Metadata::new())).unwrap();
    let csv = String::from_utf8(ok(dir.path(), &["export", "one.surf", "--cut", "diagonal"])).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("coordinate_ns,t1_bin,t2_bin,value,ci_low,ci_high"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), n);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[1], f[2]);
        assert_eq!(&f[3..], ["1", "1", "1"]);
    }
}

#[test]
fn hand_enumerated_tag_file() {
    let dir = tempfile::tempdir().unwrap();
    let tags = "#g2dyn-tags v1\nperiod_ns=13.14\nn_cycles=4\nconfiguration=HBT\n\
                channel,cycle,delay_ps\n2,1,610\n1,1,700\n1,2,650\n2,3,799\n";
    fs::write(dir.path().join("four.tags"), tags).unwrap();
    let text = String::from_utf8(ok(dir.path(), &["correlate", "four.tags", "--bin-ns", "0.2"])).unwrap();
    let row = text.lines().find(|l| l.starts_with("3,3,")).expect("bin (3, 3)");
    let f: Vec<&str> = row.split(',').collect();
    assert_eq!(f[2], "1");
    assert_eq!(f[3], "1");
    let SurfaceFile::Correlation(s, _) = read_surface(&text).unwrap() else {
        panic!("expected a g2 surface")
    };
    assert_eq!(s.value(3, 3), Some(1.0));
}

#[test]
fn malformed_input_fails_with_location() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.tags"),
        "#g2dyn-tags v1\nperiod_ns=13.14\nchannel,cycle,delay_ps\n1,0,5\n3,1,5\n",
    )
    .unwrap();
    let out = g2dyn(dir.path(), &["correlate", "bad.tags"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5"), "{err}");

    fs::write(dir.path().join("bad.bin"), b"G2TG\x01\x00").unwrap();
    let out = g2dyn(dir.path(), &["correlate", "bad.bin"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));

    let out = g2dyn(dir.path(), &["simulate", "--scenario", "no-such-preset"]);
    assert!(!out.status.success());
}

#[test]
fn config_supplies_defaults_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("run.toml"),
        "scenario = \"893nm\"\nmaster_seed = 5\nn_cycles = 5000\nbin_width_ns = 0.5\n\
         [optics.interferometer]\nconfiguration = \"HBT\"\n\
         [[optics.detectors]]\njitter_fwhm = 0.3\n[[optics.detectors]]\njitter_fwhm = 0.3\n\
         [outputs]\nphotons = \"p.txt\"\ntags = \"t.tags\"\nsurface = \"s.surf\"\n",
    )
    .unwrap();
    ok(d, &["simulate", "--config", "run.toml"]);
    ok(d, &["detect", "p.txt", "--config", "run.toml"]);
    ok(d, &["correlate", "t.tags", "--config", "run.toml"]);
    let photons = fs::read_to_string(d.join("p.txt")).unwrap();
    assert!(photons.contains("master_seed=5\n") && photons.contains("n_cycles=5000\n"));
    let tags = fs::read_to_string(d.join("t.tags")).unwrap();
    assert!(tags.contains("jitter_fwhm_ns=0.3,0.3\n") && tags.contains("configuration=HBT\n"));
    let surf = fs::read_to_string(d.join("s.surf")).unwrap();
    assert!(surf.contains("bin_width_ns=0.5\n"));
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in [
        "simulate",
        "detect",
        "correlate",
        "coalesce",
        "analytic",
        "fit-lifetime",
        "fit-g2",
        "export",
    ] {
        let help = String::from_utf8(ok(dir.path(), &[cmd, "--help"])).unwrap();
        assert!(help.contains("Usage:"), "{cmd}");
    }
}

#[test]
fn window_start_flows_through_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--scenario", "755nm", "--seed", "5", "--cycles", "5000", "--out", "p.txt"]);
    ok(d, &["detect", "p.txt", "--window-start-ns", "-1", "--out", "t.tags"]);
    let tags = fs::read_to_string(d.join("t.tags")).unwrap();
    assert!(tags.contains("window_start_ns=-1"), "{}", &tags[..400.min(tags.len())]);
    ok(d, &["correlate", "t.tags", "--bin-ns", "0.5", "--out", "t.surf"]);
    ok(d, &["analytic", "--scenario", "755nm", "--bin-ns", "0.5", "--window-start-ns", "-1", "--out", "model"]);
    for f in ["t.surf", "model/g2_hbt.txt"] {
        let text = fs::read_to_string(d.join(f)).unwrap();
        let SurfaceFile::Correlation(s, _) = read_surface(&text).unwrap() else {
            panic!("{f} is not a g2 surface")
        };
        assert_eq!(s.axis.start_ps(), -1000, "{f}");
    }
    let bad = g2dyn(d, &["detect", "p.txt", "--window-start-ns", "0.5"]);
    assert!(!bad.status.success());
}
