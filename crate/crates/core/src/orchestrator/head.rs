//! Per-node head daemon: starts one fault daemon per rank placed on its node
//! and relays their reports to the controller.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::hub::{ConnId, Hub, HubEvent};
use crate::wire::{ControlMsg, LaunchSpec, LaunchTier};
use crate::world::{Endpoint, Rank};

const SHUTDOWN_GRACE: Duration = Duration::from_secs(10);

#[derive(Clone, Debug)]
pub struct HeadConfig {
    pub node: u32,
    pub controller: Endpoint,
    pub fault_exe: PathBuf,
    pub connect_timeout: Duration,
}

#[derive(Default)]
struct Fault {
    spec: Option<LaunchSpec>,
    conn: Option<ConnId>,
    process_exited: bool,
    reported: bool,
}

pub fn run(cfg: HeadConfig) -> i32 {
    let hub = match Hub::bind() {
        Ok(h) => h,
        Err(e) => {
            tracing::error!(node = cfg.node, "head cannot listen: {e}");
            return 1;
        }
    };
    let ctl = match hub.connect(&cfg.controller, cfg.connect_timeout) {
        Ok(c) => c,
        Err(e) => {
            tracing::error!(
                node = cfg.node,
                "head cannot reach controller {}: {e}",
                cfg.controller
            );
            return 1;
        }
    };
    hub.send(ctl, ControlMsg::HeadHello { node: cfg.node });

    let mut faults: BTreeMap<Rank, Fault> = BTreeMap::new();
    let mut by_conn: HashMap<ConnId, Rank> = HashMap::new();
    let mut shutdown: Option<Instant> = None;

    let report_failure = |hub: &Hub, rank: Rank, reason: String| {
        hub.send(
            ctl,
            ControlMsg::LaunchFailed {
                tier: LaunchTier::Fault,
                rank,
                reason,
            },
        );
    };

    loop {
        if let Some(at) = shutdown {
            if faults.values().all(|f| f.process_exited) {
                return 0;
            }
            if at.elapsed() > SHUTDOWN_GRACE {
                tracing::warn!(node = cfg.node, "faults still running at shutdown");
                return 1;
            }
        }
        let Some(ev) = hub.recv_timeout(Duration::from_millis(100)) else {
            continue;
        };
        match ev {
            HubEvent::Message(conn, msg) if conn == ctl => match msg {
                ControlMsg::HeadAck => tracing::debug!(node = cfg.node, "head registered"),
                ControlMsg::SpawnFaults { specs } => {
                    for spec in specs {
                        let rank = spec.rank;
                        let child = Command::new(&cfg.fault_exe)
                            .arg("fault")
                            .args(["--head", &hub.endpoint().to_string()])
                            .args(["--rank", &rank.to_string()])
                            .stdin(Stdio::null())
                            .spawn();
                        let fault = faults.entry(rank).or_default();
                        fault.spec = Some(spec);
                        match child {
                            Ok(child) => hub.watch_child(rank as u64, child),
                            Err(e) => {
                                fault.process_exited = true;
                                fault.reported = true;
                                report_failure(&hub, rank, format!("{}: {e}", cfg.fault_exe.display()));
                            }
                        }
                    }
                }
                ControlMsg::Shutdown => {
                    shutdown.get_or_insert_with(Instant::now);
                    for &c in by_conn.keys() {
                        hub.close(c);
                    }
                }
                other => tracing::warn!("head: unexpected {:#x} from controller", other.kind()),
            },
            HubEvent::Message(conn, ControlMsg::FaultHello { rank }) => {
                let Some(fault) = faults.get_mut(&rank) else {
                    hub.send(
                        conn,
                        ControlMsg::Error {
                            text: format!("no launch for rank {rank}"),
                        },
                    );
                    continue;
                };
                fault.conn = Some(conn);
                by_conn.insert(conn, rank);
                if shutdown.is_some() {
                    hub.close(conn);
                    continue;
                }
                hub.send(ctl, ControlMsg::FaultRegistered { rank, node: cfg.node });
                let spec = fault.spec.clone().expect("spec stored at spawn");
                hub.send(conn, ControlMsg::FaultGo { spec });
            }
            HubEvent::Message(
                conn,
                msg @ (ControlMsg::RankExit { .. } | ControlMsg::LaunchFailed { .. }),
            ) => {
                if let Some(f) = by_conn.get(&conn).and_then(|r| faults.get_mut(r)) {
                    f.reported = true;
                }
                hub.send(ctl, msg);
            }
            HubEvent::Message(conn, other) => {
                tracing::warn!(conn, "head: unexpected {:#x}", other.kind());
            }
            HubEvent::Closed(conn) if conn == ctl => {
                tracing::info!(node = cfg.node, "controller gone; stopping faults");
                shutdown.get_or_insert_with(Instant::now);
                for &c in by_conn.keys() {
                    hub.close(c);
                }
            }
            HubEvent::Closed(conn) => {
                let Some(rank) = by_conn.remove(&conn) else {
                    continue;
                };
                let f = faults.get_mut(&rank).expect("known rank");
                if !f.reported && shutdown.is_none() {
                    f.reported = true;
                    report_failure(&hub, rank, "fault daemon dropped its link".into());
                }
            }
            HubEvent::Exited { tag, code } => {
                let rank = tag as Rank;
                let Some(f) = faults.get_mut(&rank) else { continue };
                f.process_exited = true;
                // A fault that connected reports through its link, which closes after.
                if f.conn.is_none() && !f.reported && shutdown.is_none() {
                    f.reported = true;
                    report_failure(
                        &hub,
                        rank,
                        format!("fault daemon exited with code {code} before registering"),
                    );
                }
            }
        }
    }
}
