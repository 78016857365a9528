//! End-to-end acceptance on the toy corpus through the `evicode` binary.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{evicode, json_files, s, stderr, toy_dir};
use serde_json::Value;

type Check = Result<String, String>;

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

fn code_and_eval(config: &Path, corpus: &Path, out: &Path, flags: &[&str]) -> Result<(f64, Vec<Value>), String> {
    let mut args = vec!["--config", s(config)];
    args.extend_from_slice(flags);
    let mut code = args.clone();
    code.extend(["code", "--in", s(corpus), "--out", s(out)]);
    let run = evicode(&code);
    ensure(run.status.code() == Some(0), || {
        format!("code {flags:?}: {}", stderr(&run))
    })?;
    let report = out.with_extension("report.json");
    let mut eval = args;
    eval.extend(["eval", "--in", s(corpus), "--results", s(out), "--report", s(&report)]);
    let run = evicode(&eval);
    ensure(run.status.code() == Some(0), || {
        format!("eval {flags:?}: {}", stderr(&run))
    })?;
    let report: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let results = json_files(out)
        .iter()
        .map(|p| serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap())
        .collect();
    Ok((report["accuracy"].as_f64().unwrap(), results))
}

/// Candidate codes per (record, diagnosis).
fn candidate_sets(results: &[Value]) -> BTreeMap<(String, u64), BTreeSet<String>> {
    let mut out = BTreeMap::new();
    for r in results {
        for d in r["diagnoses"].as_array().unwrap() {
            let key = (
                r["record_id"].as_str().unwrap().to_string(),
                d["diagnosis_index"].as_u64().unwrap(),
            );
            let codes = d["candidates"]
                .as_array()
                .unwrap()
                .iter()
                .map(|c| c.as_str().unwrap().to_string());
            out.insert(key, codes.collect());
        }
    }
    out
}

fn toy_end_to_end() -> Check {
    let started = Instant::now();
    let (dir, config) = toy_dir();
    // one worker thread
    let mut settings: Value = serde_json::from_str(&fs::read_to_string(&config).unwrap()).unwrap();
    settings["runtime"]["workers"] = 1.into();
    fs::write(&config, settings.to_string()).unwrap();
    let corpus = dir.path().join("corpus");

    let (accuracy, results) = code_and_eval(&config, &corpus, &dir.path().join("full"), &[])?;
    ensure(accuracy == 1.0, || format!("accuracy {accuracy}"))?;
    let mut recommendations = 0;
    for r in &results {
        for d in r["diagnoses"].as_array().unwrap() {
            for rec in d["recommendations"].as_array().unwrap() {
                recommendations += 1;
                ensure(rec["support_level"] == "Fully", || {
                    format!(
                        "{} diagnosis {}: {} is {}",
                        r["record_id"], d["diagnosis_index"], rec["code"], rec["support_level"]
                    )
                })?;
            }
        }
    }
    ensure(recommendations > 0, || "no recommendations".into())?;

    let (_, again) = code_and_eval(&config, &corpus, &dir.path().join("again"), &[])?;
    for (a, b) in json_files(&dir.path().join("full"))
        .iter()
        .zip(json_files(&dir.path().join("again")))
    {
        ensure(fs::read(a).unwrap() == fs::read(&b).unwrap(), || {
            format!("{} differs between runs", a.display())
        })?;
    }
    ensure(again.len() == results.len(), || {
        "rerun wrote a different number of files".into()
    })?;
    let took = started.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:.2?}"))?;

    let full_candidates = candidate_sets(&results);
    let mut ablations = Vec::new();
    for flag in ["--no-evidence-filter", "--summary-only", "--plain-template"] {
        let out = dir.path().join(flag.trim_start_matches('-'));
        let (ablated, ablated_results) = code_and_eval(&config, &corpus, &out, &[flag])?;
        ensure(ablated <= accuracy, || format!("{flag} raised accuracy to {ablated}"))?;
        for (key, codes) in candidate_sets(&ablated_results) {
            let full = full_candidates
                .get(&key)
                .ok_or(format!("{flag}: extra diagnosis {key:?}"))?;
            ensure(codes.is_subset(full), || format!("{flag}: {key:?} gained candidates"))?;
        }
        ablations.push(format!("{flag} {:.0}%", ablated * 100.0));
    }
    Ok(format!(
        "accuracy 100%, {recommendations} recommendations all Fully, reruns byte-identical, {took:.2?}; ablations: {}",
        ablations.join(", ")
    ))
}

#[test]
fn acceptance() {
    let outcome = toy_end_to_end();
    let line = match &outcome {
        Ok(detail) => format!("PASS  toy corpus end to end through the CLI: {detail}"),
        Err(reason) => format!("FAIL  toy corpus end to end through the CLI: {reason}"),
    };
    // bypasses the test harness's capture so the line always shows
    writeln!(std::io::stdout(), "{line}").unwrap();
    assert!(outcome.is_ok(), "{line}");
}
