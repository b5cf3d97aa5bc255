mod common;

use std::process::Command;

use common::*;

const INIT: &str = "0,3,-1,7,2,9,-4,5,1,8,0";

#[test]
fn four_ranks_on_two_nodes_match_the_oracle() {
    let job = Job::new("plain");
    let init = parse_f64s(&INIT.replace(',', " "));
    let done = run_plain(&job, 4, 2, &relax_program(&job, INIT, 13, false, &[]));
    assert_eq!(done.code, Some(0), "{}", done.stderr);
    assert_eq!(parse_f64s(&read_out(&job)), oracle_relax_f64(&init, 13));
    for r in 0..4 {
        let rep = job.report(r);
        assert_eq!(rep.get("origin"), Some("launched"));
        assert_eq!(rep.get("resized"), Some("0"));
        assert_eq!(rep.get("version"), Some("v0"));
    }
}

#[test]
fn integer_variant_is_exact() {
    let job = Job::new("int");
    let init = parse_i64s(&INIT.replace(',', " "));
    let done = run_plain(&job, 3, 1, &relax_program(&job, INIT, 9, true, &[]));
    assert_eq!(done.code, Some(0), "{}", done.stderr);
    assert_eq!(parse_i64s(&read_out(&job)), oracle_relax_i64(&init, 9));
}

#[test]
fn missing_head_executable_is_a_launch_failure() {
    let job = Job::new("nohead");
    let program = relax_program(&job, INIT, 2, false, &[]);
    let child = job.mrun(2, 1, &["--head-exe", "/nonexistent/elastic-head"], &program, &[]);
    let done = finish(child, JOB_TIMEOUT);
    assert_eq!(done.code, Some(1));
    assert!(done.stderr.contains("LaunchFailed(head)"), "{}", done.stderr);
}

#[test]
fn missing_program_is_rejected_up_front() {
    let job = Job::new("noprog");
    let done = finish(
        job.mrun(2, 1, &[], &strings(&["/nonexistent/prog"]), &[]),
        JOB_TIMEOUT,
    );
    assert_eq!(done.code, Some(1));
    assert!(done.stderr.contains("not found"), "{}", done.stderr);
}

#[test]
fn rank_exit_code_is_passed_on() {
    let job = Job::new("exit7");
    let done = run_plain(&job, 2, 1, &strings(&["sh", "-c", "exit 7"]));
    assert_eq!(done.code, Some(7), "{}", done.stderr);
}

#[test]
fn bad_restart_directory_exits_two() {
    let job = Job::new("badck");
    std::fs::create_dir_all(job.ckpt_dir()).unwrap();
    let done = restart(&job, "badck2", 4, &relax_program(&job, INIT, 2, false, &[]));
    assert_eq!(done.code, Some(2), "{}", done.stderr);
}

#[test]
fn unknown_job_exits_three() {
    let job = Job::new("ghost");
    let out = job.mctl(&["status", "ghost"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("JobNotFound"));
}

#[test]
fn status_lists_every_rank() {
    let job = Job::new("stat");
    let program = relax_program(&job, INIT, 4, false, &[]);
    let held = with_hold(&job, 3, &program, 2, |job| job.mctl(&["status", &job.jobid]));
    assert_eq!(held.job.code, Some(0), "{}", held.job.stderr);
    let text = String::from_utf8_lossy(&held.mctl.stdout).into_owned();
    assert!(text.starts_with("version v0 size 3 pending none"), "{text}");
    assert!(text.contains("ranks 0:up 1:up 2:up"), "{text}");
}

#[test]
fn elasticd_rejects_unknown_subcommands() {
    let out = Command::new(ELASTICD).arg("bogus").output().unwrap();
    assert!(!out.status.success());
}
