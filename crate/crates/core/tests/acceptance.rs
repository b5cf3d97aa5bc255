//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use common::*;
use elastic::checkpoint::{restore, snapshot, CheckpointImage};
use elastic::wire::Message;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: u64 = 20;
const ORACLE_INSTANCES: u64 = 100;
const PROPTEST_CASES: u32 = 1000;
/// Floating-point tolerance for results that go through different paths.
const FLOAT_TOL: f64 = 1e-12;
const BUDGET: Duration = Duration::from_secs(60);
const PARALLEL: usize = 5;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

/// Run `f(i)` for every index, `PARALLEL` at a time.
fn batched<T: Send>(count: u64, f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    let mut out = Vec::new();
    let ids: Vec<u64> = (0..count).collect();
    for chunk in ids.chunks(PARALLEL) {
        let results: Vec<T> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let f = &f;
                    s.spawn(move || f(i))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        out.extend(results);
    }
    out
}

fn grow_trials(load_max: u32, seed_base: u64) -> (u64, Vec<String>) {
    let results = batched(TRIALS, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_base + i);
        let load = rng.gen_range(0..=load_max);
        let t = ring_grow(4, &[2], seed_base + i, load);
        grow_violations(&t, 4, 6, 1)
            .into_iter()
            .map(|v| format!("trial {i}: {v}"))
            .collect::<Vec<_>>()
    });
    let clean = results.iter().filter(|v| v.is_empty()).count() as u64;
    (clean, results.concat())
}

fn summarize(what: &str, clean: u64, total: u64, violations: &[String]) -> Verdict {
    if violations.is_empty() {
        Ok(format!("{clean}/{total} {what}, 0 violations"))
    } else {
        Err(format!(
            "{clean}/{total} {what}, {} violations; first: {}",
            violations.len(),
            violations[0]
        ))
    }
}

fn criterion_1() -> Verdict {
    let (clean, v) = grow_trials(4, 1000);
    summarize("trials", clean, TRIALS, &v)
}

fn criterion_2() -> Verdict {
    let mut v = Vec::new();
    for (n, m) in [(2u32, 1u32), (4, 2), (4, 4)] {
        let job = Job::new(&format!("fork{n}x{m}"));
        let done = run_plain(
            &job,
            n,
            2,
            &strings(&[PROBE, "--report-dir", &job.rep(), "fork", "--m", &m.to_string()]),
        );
        if done.code != Some(0) {
            v.push(format!("({n},{m}) exited {:?}", done.code));
        }
        for r in 0..n + m {
            let rep = job.report(r);
            let want = if r < n { m as i32 } else { 0 };
            if rep.parse_key::<i32>("fork") != Some(want) {
                v.push(format!(
                    "({n},{m}) rank {r} fork {:?}, wanted {want}",
                    rep.get("fork")
                ));
            }
            if rep.get("children") != Some(ranks(n, n + m).as_str()) {
                v.push(format!("({n},{m}) rank {r} CHILDREN {:?}", rep.get("children")));
            }
        }
        for c in 0..m {
            let read = |r: u32| std::fs::read(job.report_dir().join(format!("state-{r}.bin"))).ok();
            if read(c).is_none() || read(c) != read(n + c) {
                v.push(format!("({n},{m}) child {} state differs from rank {c}", n + c));
            }
        }
    }
    for (n, m, extra, code) in [(3u32, 1u32, Some("1"), "-1"), (2, 3, None, "-2")] {
        let job = Job::new("forkbad");
        let mut program = strings(&[PROBE, "--report-dir", &job.rep(), "fork", "--m", &m.to_string()]);
        if let Some(r) = extra {
            program.extend(strings(&["--mismatch-rank", r]));
        }
        run_plain(&job, n, 1, &program);
        for r in 0..n {
            if job.report(r).get("fork") != Some(code) {
                v.push(format!(
                    "n={n} m={m} rank {r} fork {:?}, wanted {code}",
                    job.report(r).get("fork")
                ));
            }
        }
    }
    summarize("fork checks", if v.is_empty() { 5 } else { 0 }, 5, &v)
}

fn criterion_3() -> Verdict {
    let mut v = Vec::new();
    let init: Vec<f64> = random_f64s(&mut ChaCha8Rng::seed_from_u64(3), 20);
    let job = Job::new("smerge");
    let program = relax_program(&job, &csv(&init), 12, false, &["--poll-resized"]);
    let held = with_hold(&job, 4, &program, 4, |job| {
        job.mctl_ready(&["spawn-merge", "2", &job.jobid])
    });
    if !held.mctl.status.success() || held.job.code != Some(0) {
        v.push(format!(
            "mctl {:?} job {:?}",
            held.mctl.status.code(),
            held.job.code
        ));
    }
    if parse_f64s(&read_out(&job)) != oracle_relax_f64(&init, 12) {
        v.push("result differs from the oracle".into());
    }
    let mut lag = 0;
    for r in 0..4 {
        let rep = job.report(r);
        if rep.get("resized_world_before") != Some("NULL") {
            v.push(format!(
                "rank {r} resized_world before {:?}",
                rep.get("resized_world_before")
            ));
        }
        if rep.get("resized_world") != Some(ranks(0, 6).as_str()) {
            v.push(format!(
                "rank {r} resized_world after {:?}",
                rep.get("resized_world")
            ));
        }
        match (
            rep.parse_key::<u32>("notice_iter"),
            rep.parse_key::<u32>("detect_iter"),
        ) {
            (Some(n), Some(d)) if d >= n && d - n <= 1 => lag = lag.max(d - n),
            other => v.push(format!("rank {r} notice/detect {other:?}")),
        }
    }
    // Application spawn: the parents pass high = false and so come first.
    let job = Job::new("aspawn");
    run_plain(
        &job,
        3,
        2,
        &strings(&[PROBE, "--report-dir", &job.rep(), "spawn", "--k", "2"]),
    );
    for r in 0..5 {
        if job.report(r).get("merged") != Some(ranks(0, 5).as_str()) {
            v.push(format!(
                "merged order at rank {r}: {:?}",
                job.report(r).get("merged")
            ));
        }
    }
    if job.report(0).get("resized_before") != Some("NULL") {
        v.push("resized_world not NULL before spawn".into());
    }
    if v.is_empty() {
        Ok(format!("detected within {lag} iteration(s), low group first"))
    } else {
        Err(v.join("; "))
    }
}

fn criterion_4() -> Verdict {
    let t = ring_grow(4, &[2, 2], 44, 3);
    let mut v = grow_violations(&t, 4, 8, 2);
    for (r, rep) in t.reports.iter().enumerate().take(4) {
        for (key, want) in [
            ("members_v0", ranks(0, 4)),
            ("members_v1", ranks(0, 6)),
            ("members_v2", ranks(0, 8)),
            ("members_latest", ranks(0, 8)),
            ("parents", "NULL".into()),
            ("children", "NULL".into()),
        ] {
            if rep.get(key) != Some(want.as_str()) {
                v.push(format!("rank {r} {key} {:?}, wanted {want}", rep.get(key)));
            }
        }
    }
    summarize("membership checks", if v.is_empty() { 1 } else { 0 }, 1, &v)
}

/// Results of the three paths for one (variant, k).
fn equivalence(int: bool, k: u32, iters: u32, init: &str) -> Result<[String; 3], String> {
    let plain = Job::new("eqa");
    let a = run_plain(&plain, 4, 2, &relax_program(&plain, init, iters, int, &[]));
    if a.code != Some(0) {
        return Err(format!("uninterrupted run exited {:?}", a.code));
    }
    let ck = Job::new("eqb");
    let program = relax_program(&ck, init, iters, int, &[]);
    let (first, mctl) = checkpoint_halt(&ck, 4, &program, k);
    if !mctl.status.success() || first.code != Some(0) {
        return Err(format!(
            "checkpoint at {k}: mctl {:?} job {:?}",
            mctl.status.code(),
            first.code
        ));
    }
    let b = restart(&ck, "eqb2", 6, &program);
    if b.code != Some(0) {
        return Err(format!("restart after {k} exited {:?}", b.code));
    }
    let live = Job::new("eqc");
    let held = live_grow(&live, 4, 2, &relax_program(&live, init, iters, int, &[]), k);
    if !held.mctl.status.success() || held.job.code != Some(0) {
        return Err(format!(
            "live grow at {k}: mctl {:?} job {:?}",
            held.mctl.status.code(),
            held.job.code
        ));
    }
    if live.report(0).get("size") != Some("6") || ck.report(5).get("size") != Some("6") {
        return Err(format!("k={k}: grown runs did not end at size 6"));
    }
    Ok([read_out(&plain), read_out(&ck), read_out(&live)])
}

fn criterion_5() -> Verdict {
    let iters = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fl = random_f64s(&mut rng, 26);
    let il = random_i64s(&mut rng, 26);
    let cases: Vec<(bool, u32)> = [false, true]
        .into_iter()
        .flat_map(|int| [1, iters / 2, iters].map(|k| (int, k)))
        .collect();
    let (fs, is) = (csv(&fl), csv(&il));
    let results = batched(cases.len() as u64, |i| {
        let (int, k) = cases[i as usize];
        equivalence(int, k, iters, if int { &is } else { &fs })
    });
    let mut v = Vec::new();
    let mut worst = 0.0f64;
    for ((int, k), res) in cases.iter().zip(results) {
        let [a, b, c] = match res {
            Ok(outs) => outs,
            Err(e) => {
                v.push(e);
                continue;
            }
        };
        if *int {
            let want = oracle_relax_i64(&il, iters);
            for (name, out) in [("uninterrupted", &a), ("restart", &b), ("live", &c)] {
                if parse_i64s(out) != want {
                    v.push(format!("int k={k}: {name} differs"));
                }
            }
        } else {
            let (a, b, c) = (parse_f64s(&a), parse_f64s(&b), parse_f64s(&c));
            if a.len() != fl.len() || b.len() != a.len() || c.len() != a.len() {
                v.push(format!("float k={k}: missing output"));
                continue;
            }
            let d = max_abs_diff(&a, &b).max(max_abs_diff(&a, &c));
            worst = worst.max(d);
            if d > FLOAT_TOL {
                v.push(format!("float k={k}: max difference {d:e}"));
            }
        }
    }
    if v.is_empty() {
        Ok(format!(
            "k in {{1,{},{iters}}} x {{int,float}}: int exact, float max diff {worst:e} <= {FLOAT_TOL:e}",
            iters / 2
        ))
    } else {
        Err(v.join("; "))
    }
}

fn criterion_6() -> Verdict {
    let results = batched(ORACLE_INSTANCES, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + i);
        let n: u32 = rng.gen_range(1..=4);
        let grid = rng.gen_range(n.max(2) as usize..=64);
        let iters = rng.gen_range(0..=50);
        let int = rng.gen_bool(0.5);
        let job = Job::new(&format!("orc{i}"));
        let (init, want) = if int {
            let v = random_i64s(&mut rng, grid);
            (csv(&v), csv(&oracle_relax_i64(&v, iters)))
        } else {
            let v = random_f64s(&mut rng, grid);
            let bits = |x: &[f64]| csv(&x.iter().map(|f| f.to_bits()).collect::<Vec<_>>());
            (csv(&v), bits(&oracle_relax_f64(&v, iters)))
        };
        let done = run_plain(
            &job,
            n,
            rng.gen_range(1..=2),
            &relax_program(&job, &init, iters, int, &[]),
        );
        let out = read_out(&job);
        let got = if int {
            csv(&parse_i64s(&out))
        } else {
            csv(&parse_f64s(&out).iter().map(|f| f.to_bits()).collect::<Vec<_>>())
        };
        if done.code == Some(0) && got == want {
            None
        } else {
            Some(format!(
                "instance {i} (n={n} grid={grid} iters={iters} int={int}) exit {:?}",
                done.code
            ))
        }
    });
    let bad: Vec<String> = results.into_iter().flatten().collect();
    summarize(
        "instances bit-identical",
        ORACLE_INSTANCES - bad.len() as u64,
        ORACLE_INSTANCES,
        &bad,
    )
}

fn criterion_7() -> Verdict {
    let config = || Config {
        cases: PROPTEST_CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let mut v = Vec::new();
    let mut runner = TestRunner::new(config());
    if let Err(e) = runner.run(&arb_message(), |m| {
        prop_assert_eq!(Message::decode(&m.encode()).unwrap(), m);
        Ok(())
    }) {
        v.push(format!("wire: {e}"));
    }
    let mut runner = TestRunner::new(config());
    if let Err(e) = runner.run(&arb_image(), |img| {
        prop_assert_eq!(CheckpointImage::decode(&img.encode()).unwrap(), img);
        Ok(())
    }) {
        v.push(format!("image: {e}"));
    }
    let mut runner = TestRunner::new(config());
    let strat = (arb_metadata(), prop::collection::vec(any::<u8>(), 0..4096));
    if let Err(e) = runner.run(&strat, |(meta, state)| {
        let image = CheckpointImage::decode(&snapshot(&state, &meta).unwrap().encode()).unwrap();
        let back = restore(&image, &empty_overrides()).unwrap();
        prop_assert_eq!(back.state, state);
        prop_assert_eq!(back.metadata, meta);
        Ok(())
    }) {
        v.push(format!("restore: {e}"));
    }
    if v.is_empty() {
        Ok(format!("3 properties x {PROPTEST_CASES} cases"))
    } else {
        Err(v.join("; "))
    }
}

fn criterion_8() -> Verdict {
    let (clean, v) = grow_trials(8, 8000);
    summarize("trials with zero gaps and duplicates", clean, TRIALS, &v)
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("protocol atomicity", criterion_1),
        ("fork contract", criterion_2),
        ("spawn-merge", criterion_3),
        ("versioned communicators", criterion_4),
        ("checkpoint-grow equivalence", criterion_5),
        ("oracle equivalence", criterion_6),
        ("codec and image round trips", criterion_7),
        ("no message loss across resize", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let verdict = match verdict {
            Ok(_) if took > BUDGET => Err(format!(
                "took {:.1}s, over the {}s budget",
                took.as_secs_f64(),
                BUDGET.as_secs()
            )),
            v => v,
        };
        match verdict {
            Ok(detail) => println!(
                "ACCEPTANCE {}: PASS {name} ({detail}) [{:.1}s]",
                i + 1,
                took.as_secs_f64()
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "ACCEPTANCE {}: FAIL {name} ({detail}) [{:.1}s]",
                    i + 1,
                    took.as_secs_f64()
                );
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
