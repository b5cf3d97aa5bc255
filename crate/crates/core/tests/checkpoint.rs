mod common;

use common::*;

const INIT: &str = "1,-4,6,2,0,9,-3,5,7,-2,4,8,-6,3,1";

#[test]
fn checkpoint_then_restart_larger() {
    let init = parse_i64s(&INIT.replace(',', " "));
    let job = Job::new("ck");
    let program = relax_program(&job, INIT, 10, true, &[]);
    let (first, mctl) = checkpoint_halt(&job, 4, &program, 5);
    assert!(mctl.status.success(), "{}", String::from_utf8_lossy(&mctl.stderr));
    assert_eq!(first.code, Some(0), "{}", first.stderr);
    assert!(!job.path("out").exists(), "halted job must not finish");
    assert!(job.ckpt_dir().join("manifest").exists());
    for r in 0..4 {
        assert!(job.ckpt_dir().join(format!("rank-{r}.elck")).exists());
    }
    let second = restart(&job, "ck2", 6, &program);
    assert_eq!(second.code, Some(0), "{}", second.stderr);
    assert_eq!(parse_i64s(&read_out(&job)), oracle_relax_i64(&init, 10));
    for r in 0..6 {
        let rep = job.report(r);
        assert_eq!(rep.get("size"), Some("6"));
        assert_eq!(rep.get("origin"), Some(if r < 4 { "restored" } else { "grow" }));
    }
}

#[test]
fn restart_at_the_same_size() {
    let init = parse_f64s(&INIT.replace(',', " "));
    let job = Job::new("same");
    let program = relax_program(&job, INIT, 8, false, &[]);
    let (first, mctl) = checkpoint_halt(&job, 3, &program, 2);
    assert!(mctl.status.success());
    assert_eq!(first.code, Some(0));
    let second = restart(&job, "same2", 3, &program);
    assert_eq!(second.code, Some(0), "{}", second.stderr);
    assert_eq!(parse_f64s(&read_out(&job)), oracle_relax_f64(&init, 8));
    assert_eq!(job.report(0).get("version"), Some("v0"));
}

#[test]
fn restart_smaller_is_refused() {
    let job = Job::new("shrink");
    let program = relax_program(&job, INIT, 6, false, &[]);
    let (_, mctl) = checkpoint_halt(&job, 4, &program, 1);
    assert!(mctl.status.success());
    let done = restart(&job, "shrink2", 2, &program);
    assert_eq!(done.code, Some(3), "{}", done.stderr);
}

#[test]
fn quiesce_timeout_leaves_the_job_running() {
    let init = parse_f64s(&INIT.replace(',', " "));
    let job = Job::new("qto");
    let program = relax_program(&job, INIT, 6, false, &[]);
    let held = with_hold(&job, 2, &program, 3, |job| {
        job.mctl_ready(&["checkpoint", &job.jobid, "--timeout-ms", "300"])
    });
    assert_eq!(held.mctl.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&held.mctl.stderr).contains("QuiesceTimeout"));
    assert!(!held.status.contains("checkpoint pending"), "{}", held.status);
    assert_eq!(held.job.code, Some(0), "{}", held.job.stderr);
    assert_eq!(parse_f64s(&read_out(&job)), oracle_relax_f64(&init, 6));
}

#[test]
fn checkpoint_after_the_last_sweep() {
    let init = parse_f64s(&INIT.replace(',', " "));
    let job = Job::new("last");
    let program = relax_program(&job, INIT, 7, false, &[]);
    let (first, mctl) = checkpoint_halt(&job, 4, &program, 7);
    assert!(mctl.status.success());
    assert_eq!(first.code, Some(0));
    let second = restart(&job, "last2", 6, &program);
    assert_eq!(second.code, Some(0), "{}", second.stderr);
    assert_eq!(parse_f64s(&read_out(&job)), oracle_relax_f64(&init, 7));
    assert_eq!(job.report(5).get("size"), Some("6"));
}
