use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

fn gqmu(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gqmu")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = gqmu(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let d = dir.to_str().unwrap();
    let mut args = vec!["protocol", "synth", "--size", "8", "--sources", "5", "--purity", "0.9", "--seed", "4", "--out-dir", d];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn ls_unmix_skips_the_quantum_stack_and_reproduces_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("trial"), &["--prior", "ls"]);
    let msi = tmp.path().join("trial/msi.btf");
    let run = |name: &str| {
        let out = tmp.path().join(name);
        ok(&["unmix", "--msi", msi.to_str().unwrap(), "--n-sources", "5", "--prior", "ls", "--out-dir", out.to_str().unwrap()]);
        read_tree(&out)
    };
    let first = run("a");
    let second = run("b");
    assert_eq!(first, second);
    let meta = json(&first["run.json"]);
    assert_eq!(meta["quantum_constructed"], false);
    assert_eq!(meta["prior"], "ls");
    assert!(meta.get("runtime_sec").is_none());
    assert!(!first.contains_key("qdip_loss.csv"));
    for name in ["B.csv", "A.csv", "S.btf", "Y.btf", "Zh.btf", "diagnostics.csv", "abundance_0.pgm", "abundance_4.pgm"] {
        assert!(first.contains_key(name), "missing {name}");
    }
    assert!(first["abundance_0.pgm"].starts_with(b"P5\n8 8\n65535\n"));
}

#[test]
fn protocol_outputs_reproduce_except_for_timings() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["--prior", "qdip", "--qdip-iters", "5"];
    synth(&tmp.path().join("a"), &args);
    synth(&tmp.path().join("b"), &args);
    let a = read_tree(&tmp.path().join("a"));
    let b = read_tree(&tmp.path().join("b"));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        if name != "report.json" {
            assert_eq!(bytes, &b[name], "{name} differs");
        }
    }
    let strip = |v: &serde_json::Value| {
        let mut v = v.clone();
        for side in ["method", "baseline"] {
            let obj = v[side].as_object_mut().unwrap();
            let keys: Vec<_> = obj.keys().cloned().collect();
            assert_eq!(keys, ["permutation", "phi_ab_deg", "phi_en_deg", "rmse_x100", "runtime_sec"]);
            obj.remove("runtime_sec");
        }
        v
    };
    let ra = json(&a["report.json"]);
    assert_eq!(ra.as_object().unwrap().keys().collect::<Vec<_>>(), ["baseline", "method"]);
    assert_eq!(strip(&ra), strip(&json(&b["report.json"])));
    assert_eq!(json(&a["method/run.json"])["quantum_constructed"], true);
    assert!(a.contains_key("method/qdip_loss.csv"));
}

#[test]
fn metrics_scores_a_perfect_estimate_as_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path().join("t");
    synth(&t, &["--prior", "ls"]);
    let p = |n: &str| t.join(n).to_str().unwrap().to_owned();
    let out = tmp.path().join("m.json");
    ok(&["metrics", "--ref-b", &p("b_ref.csv"), "--est-b", &p("b_ref.csv"), "--ref-s", &p("s_ref.btf"), "--est-s", &p("s_ref.btf"), "--out", out.to_str().unwrap()]);
    let r = json(&fs::read(&out).unwrap());
    assert_eq!(r["phi_en_deg"], 0.0);
    assert_eq!(r["phi_ab_deg"], 0.0);
    assert_eq!(r["rmse_x100"], 0.0);
}

#[test]
fn augment_writes_the_virtual_image_and_response() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path().join("t");
    synth(&t, &["--prior", "ls"]);
    let zh = tmp.path().join("zh.btf");
    let srf = tmp.path().join("d.csv");
    ok(&["augment", "--input", t.join("msi.btf").to_str().unwrap(), "--out", zh.to_str().unwrap(), "--srf", srf.to_str().unwrap(), "--tau", "2"]);
    let z = gqmu::io::read_btf(&zh).unwrap();
    assert_eq!(z.dims(), (8, 8, 8));
    assert_eq!(gqmu::io::read_csv(&srf).unwrap(), gqmu::augment::build_srf(4, 2));
}

#[test]
fn exit_codes_separate_usage_from_runtime_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_flag = gqmu(&["unmix", "--bogus"]);
    assert_eq!(bad_flag.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_flag.stderr).contains("Valid flags"));

    let missing = tmp.path().join("none.btf");
    let out = tmp.path().join("o");
    let r = gqmu(&["unmix", "--msi", missing.to_str().unwrap(), "--n-sources", "3", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));

    let t = tmp.path().join("t");
    ok(&["protocol", "synth", "--size", "6", "--sources", "5", "--purity", "0.9", "--prior", "ls", "--out-dir", t.to_str().unwrap()]);
    let r = gqmu(&["unmix", "--msi", t.join("msi.btf").to_str().unwrap(), "--n-sources", "5", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("Crop or pad"));

    let r = gqmu(&["unmix", "--msi", t.join("msi.btf").to_str().unwrap(), "--n-sources", "5", "--tau", "3", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
}
