//! Event plumbing shared by the daemons: every inbound link and watched
//! child process feeds one channel drained by a single owner thread.

use std::collections::HashMap;
use std::io;
use std::net::TcpListener;
use std::process::{Child, ExitStatus};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::wire::{self, ControlMsg, Link, LinkReader, LinkWriter, Message, WireResult};
use crate::world::Endpoint;

pub type ConnId = u64;

#[derive(Debug)]
pub enum HubEvent {
    Message(ConnId, ControlMsg),
    Closed(ConnId),
    Exited { tag: u64, code: i32 },
}

pub struct Hub {
    endpoint: Endpoint,
    tx: Sender<HubEvent>,
    rx: Receiver<HubEvent>,
    writers: Arc<Mutex<HashMap<ConnId, LinkWriter>>>,
    next: Arc<AtomicU64>,
}

/// Exit status as a single integer; signals map to 128 + signal number.
pub fn exit_code(status: ExitStatus) -> i32 {
    if let Some(code) = status.code() {
        return code;
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(sig) = status.signal() {
            return 128 + sig;
        }
    }
    -1
}

impl Hub {
    pub fn bind() -> io::Result<Hub> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let endpoint = Endpoint::new("127.0.0.1", listener.local_addr()?.port());
        let (tx, rx) = mpsc::channel();
        let hub = Hub {
            endpoint,
            tx,
            rx,
            writers: Arc::default(),
            next: Arc::new(AtomicU64::new(1)),
        };
        let (tx, writers, next) = (hub.tx.clone(), Arc::clone(&hub.writers), Arc::clone(&hub.next));
        thread::Builder::new().name("hub-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let Ok((reader, writer)) = Link::from_stream(stream).split() else {
                    continue;
                };
                let id = next.fetch_add(1, Ordering::SeqCst);
                writers.lock().unwrap().insert(id, writer);
                spawn_reader(id, reader, tx.clone());
            }
        })?;
        Ok(hub)
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Open an outbound link whose traffic arrives on the same channel.
    pub fn connect(&self, endpoint: &Endpoint, timeout: Duration) -> WireResult<ConnId> {
        let (reader, writer) = wire::connect(endpoint, timeout)?.split()?;
        let id = self.next.fetch_add(1, Ordering::SeqCst);
        self.writers.lock().unwrap().insert(id, writer);
        spawn_reader(id, reader, self.tx.clone());
        Ok(id)
    }

    pub fn send(&self, conn: ConnId, msg: ControlMsg) -> bool {
        let mut writers = self.writers.lock().unwrap();
        let Some(w) = writers.get_mut(&conn) else {
            return false;
        };
        if let Err(e) = w.send(&Message::Control(msg)) {
            tracing::debug!(conn, "send failed: {e}");
            writers.remove(&conn);
            return false;
        }
        true
    }

    pub fn close(&self, conn: ConnId) {
        if let Some(w) = self.writers.lock().unwrap().remove(&conn) {
            w.close();
        }
    }

    pub fn conns(&self) -> Vec<ConnId> {
        self.writers.lock().unwrap().keys().copied().collect()
    }

    /// Report the child's exit as `HubEvent::Exited { tag, .. }`.
    pub fn watch_child(&self, tag: u64, mut child: Child) {
        let tx = self.tx.clone();
        thread::spawn(move || {
            let code = match child.wait() {
                Ok(status) => exit_code(status),
                Err(_) => -1,
            };
            let _ = tx.send(HubEvent::Exited { tag, code });
        });
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<HubEvent> {
        match self.rx.recv_timeout(timeout) {
            Ok(ev) => Some(ev),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => None,
        }
    }
}

fn spawn_reader(id: ConnId, mut reader: LinkReader, tx: Sender<HubEvent>) {
    thread::spawn(move || {
        loop {
            match reader.recv() {
                Ok(Some(Message::Control(msg))) => {
                    if tx.send(HubEvent::Message(id, msg)).is_err() {
                        return;
                    }
                }
                Ok(Some(Message::Envelope(_))) => {
                    tracing::warn!(conn = id, "envelope on a control link ignored");
                }
                Ok(None) => break,
                Err(e) => {
                    tracing::debug!(conn = id, "link error: {e}");
                    break;
                }
            }
        }
        let _ = tx.send(HubEvent::Closed(id));
    });
}
