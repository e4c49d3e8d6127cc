//! Full battery at default trial counts, one pass/fail line per criterion.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use tblab_harness::coverage::COVERAGE;
use tblab_harness::report::SuiteOutput;
use tblab_harness::suites::{run_one, Shared};
use tblab_harness::{Check, ExperimentConfig};

/// Value of `key` in `family[k=v,...]`.
fn param<'a>(name: &'a str, key: &str) -> Option<&'a str> {
    let inner = name.split_once('[')?.1.strip_suffix(']')?;
    inner
        .split(',')
        .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
}

/// Sum of the distinct per-group runtimes, grouped by all parameters and then summed per `keys`.
fn runtime_by(checks: &[&Check], keys: &[&str]) -> BTreeMap<String, Duration> {
    let mut groups: BTreeMap<(String, String), Duration> = BTreeMap::new();
    for c in checks {
        let params = c.name.split_once('[').map_or("", |(_, p)| p).to_string();
        let label = keys
            .iter()
            .map(|k| format!("{k}={}", param(&c.name, k).unwrap_or("?")))
            .collect::<Vec<_>>()
            .join(",");
        groups.entry((label, params)).or_insert(c.runtime);
    }
    let mut out: BTreeMap<String, Duration> = BTreeMap::new();
    for ((label, _), t) in groups {
        *out.entry(label).or_default() += t;
    }
    out
}

struct Criterion {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(checks: &[&Check]) -> (bool, String) {
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.name.as_str())
        .collect();
    let pass = !checks.is_empty() && failed.is_empty();
    let detail = if checks.is_empty() {
        "no checks".to_string()
    } else if failed.is_empty() {
        format!("{} checks", checks.len())
    } else {
        format!(
            "{} of {} failed: {}",
            failed.len(),
            checks.len(),
            failed.join(" ")
        )
    };
    (pass, detail)
}

fn main() -> ExitCode {
    let cfg = ExperimentConfig::default();
    cfg.validate().expect("default config is valid");
    let shared = Shared::new(&cfg);
    let battery_start = Instant::now();

    let mut outputs: BTreeMap<&str, (SuiteOutput, Duration)> = BTreeMap::new();
    let mut ladder_time = Duration::ZERO;
    // Identities first so that its wall time includes building the fixture battery.
    for name in [
        "identities",
        "layers",
        "badcubes",
        "matrix",
        "ledger",
        "paraproduct",
        "comparable",
        "carleson",
        "decoupling",
        "sqfn",
    ] {
        if name == "carleson" {
            let t = Instant::now();
            shared.ladders().expect("square-function ladders");
            ladder_time = t.elapsed();
        }
        let t = Instant::now();
        let out = run_one(&shared, name);
        outputs.insert(name, (out, t.elapsed()));
    }
    let total = battery_start.elapsed();

    let checks = |suite: &str| -> Vec<&Check> { outputs[suite].0.checks.iter().collect() };
    let family = |suite: &str, fams: &[&str]| -> Vec<&Check> {
        outputs[suite]
            .0
            .checks
            .iter()
            .filter(|c| fams.contains(&c.family()))
            .collect()
    };
    let mut criteria = Vec::new();

    let rec = family("identities", &["reconstruction"]);
    let (mut pass, mut detail) = verdict(&rec);
    let t1 = outputs["identities"].1;
    pass &= t1 < Duration::from_secs(30);
    detail.push_str(&format!(
        ", {:.1} s incl. fixtures (limit 30 s)",
        t1.as_secs_f64()
    ));
    criteria.push(Criterion {
        id: 1,
        title: "reconstruction",
        pass,
        detail,
    });

    let ids: Vec<&Check> = checks("identities")
        .into_iter()
        .filter(|c| c.family() != "reconstruction")
        .collect();
    let (pass, detail) = verdict(&ids);
    criteria.push(Criterion {
        id: 2,
        title: "algebraic identities and explicit constants",
        pass,
        detail,
    });

    let (pass, detail) = verdict(&checks("layers"));
    criteria.push(Criterion {
        id: 3,
        title: "layer decay",
        pass,
        detail,
    });

    let bad = checks("badcubes");
    let (mut pass, mut detail) = verdict(&bad);
    let per = runtime_by(&bad, &["gamma", "r"]);
    let slowest = per.values().copied().max().unwrap_or_default();
    pass &= slowest < Duration::from_secs(120)
        && per.len() == cfg.badcubes.gammas.len() * cfg.badcubes.rs.len();
    detail.push_str(&format!(
        ", slowest (gamma, r) {:.1} s (limit 120 s)",
        slowest.as_secs_f64()
    ));
    criteria.push(Criterion {
        id: 4,
        title: "bad-cube probability",
        pass,
        detail,
    });

    let (pass, detail) = verdict(&checks("matrix"));
    criteria.push(Criterion {
        id: 5,
        title: "matrix decay",
        pass,
        detail,
    });

    let (pass, detail) = verdict(&checks("ledger"));
    criteria.push(Criterion {
        id: 6,
        title: "exact ledger and bad-mass decrease",
        pass,
        detail,
    });

    let sq: Vec<&Check> = checks("sqfn")
        .into_iter()
        .chain(checks("carleson"))
        .collect();
    let (mut pass, mut detail) = verdict(&sq);
    // Shared ladder construction is charged in full to every (p, rho).
    let mut per = BTreeMap::new();
    for suite in ["sqfn", "carleson"] {
        let grouped: Vec<&Check> = checks(suite)
            .into_iter()
            .filter(|c| param(&c.name, "p").is_some())
            .collect();
        for (k, t) in runtime_by(&grouped, &["p", "rho"]) {
            *per.entry(k).or_insert(ladder_time) += t;
        }
    }
    let slowest = per.values().copied().max().unwrap_or_default();
    pass &=
        slowest < Duration::from_secs(300) && per.len() == cfg.sqfn.ps.len() * cfg.sqfn.rhos.len();
    detail.push_str(&format!(
        ", slowest (p, rho) {:.1} s incl. {:.1} s ladder build (limit 300 s)",
        slowest.as_secs_f64(),
        ladder_time.as_secs_f64()
    ));
    criteria.push(Criterion {
        id: 7,
        title: "square-function suites",
        pass,
        detail,
    });

    let (pass, detail) = verdict(&checks("decoupling"));
    criteria.push(Criterion {
        id: 8,
        title: "decoupling",
        pass,
        detail,
    });

    let geo: Vec<&Check> = family(
        "comparable",
        &[
            "classification",
            "child_containment",
            "partition_exact",
            "comparable_msum",
        ],
    )
    .into_iter()
    .chain(checks("paraproduct"))
    .collect();
    let (pass, detail) = verdict(&geo);
    criteria.push(Criterion {
        id: 9,
        title: "geometry partitions and stopping map",
        pass,
        detail,
    });

    let (pass, detail) = verdict(&family("comparable", &["collar_bound", "collar_linearity"]));
    criteria.push(Criterion {
        id: 10,
        title: "boundary collar probability",
        pass,
        detail,
    });

    let unmapped: Vec<&str> = outputs
        .values()
        .flat_map(|(o, _)| o.checks.iter())
        .filter(|c| !COVERAGE.iter().any(|(_, f, _)| *f == c.family()))
        .map(|c| c.name.as_str())
        .collect();

    let mut ok = true;
    for c in &criteria {
        ok &= c.pass;
        println!(
            "{} criterion {:>2} ({}): {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.id,
            c.title,
            c.detail
        );
    }
    for (name, (_, t)) in &outputs {
        println!("     {name}: {:.1} s", t.as_secs_f64());
    }
    let in_budget = total < Duration::from_secs(15 * 60);
    println!(
        "{} full battery wall time {:.1} s (limit 900 s)",
        if in_budget { "PASS" } else { "FAIL" },
        total.as_secs_f64()
    );
    if !unmapped.is_empty() {
        println!(
            "FAIL checks missing from the coverage table: {}",
            unmapped.join(" ")
        );
    }
    if ok && in_budget && unmapped.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
