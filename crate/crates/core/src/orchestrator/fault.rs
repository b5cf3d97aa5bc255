//! Per-rank fault daemon: starts the rank process, reports how it ended,
//! and kills it if the head goes away.

use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use super::hub::exit_code;
use crate::wire::{self, ControlMsg, LaunchTier, Message};
use crate::world::{Endpoint, Rank};

pub fn run(head: &Endpoint, rank: Rank, connect_timeout: Duration) -> i32 {
    let link = match wire::connect(head, connect_timeout) {
        Ok(l) => l,
        Err(e) => {
            tracing::error!(rank, "fault cannot reach head {head}: {e}");
            return 1;
        }
    };
    let (mut reader, mut writer) = match link.split() {
        Ok(parts) => parts,
        Err(e) => {
            tracing::error!(rank, "fault: {e}");
            return 1;
        }
    };
    if writer
        .send(&Message::Control(ControlMsg::FaultHello { rank }))
        .is_err()
    {
        return 1;
    }
    let spec = loop {
        match reader.recv() {
            Ok(Some(Message::Control(ControlMsg::FaultGo { spec }))) => break spec,
            Ok(Some(other)) => tracing::warn!(rank, "fault: ignoring {other:?}"),
            Ok(None) | Err(_) => return 1,
        }
    };

    let mut report = |msg: ControlMsg| {
        let _ = writer.send(&Message::Control(msg));
    };
    let Some((exe, args)) = spec.argv.split_first() else {
        report(ControlMsg::LaunchFailed {
            tier: LaunchTier::Rank,
            rank,
            reason: "empty command".into(),
        });
        return 1;
    };
    let mut child = match Command::new(exe)
        .args(args)
        .envs(spec.env.iter().map(|(k, v)| (k, v)))
        .stdin(Stdio::null())
        .spawn()
    {
        Ok(c) => c,
        Err(e) => {
            report(ControlMsg::LaunchFailed {
                tier: LaunchTier::Rank,
                rank,
                reason: format!("{exe}: {e}"),
            });
            return 1;
        }
    };

    let orphaned = Arc::new(AtomicBool::new(false));
    {
        let orphaned = Arc::clone(&orphaned);
        thread::spawn(move || {
            while let Ok(Some(_)) = reader.recv() {}
            orphaned.store(true, Ordering::SeqCst);
        });
    }
    let code = loop {
        match child.try_wait() {
            Ok(Some(status)) => break exit_code(status),
            Ok(None) => {}
            Err(_) => break -1,
        }
        if orphaned.load(Ordering::SeqCst) {
            tracing::info!(rank, "head gone; killing rank");
            let _ = child.kill();
            let code = child.wait().map(exit_code).unwrap_or(-1);
            return if code == 0 { 0 } else { 1 };
        }
        thread::sleep(Duration::from_millis(10));
    };
    report(ControlMsg::RankExit { rank, code });
    0
}
