//! Background receivers and the queues they fill.

use std::collections::{HashSet, VecDeque};
use std::net::TcpListener;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use crate::wire::{ControlMsg, Envelope, Link, LinkReader, Message};
use crate::world::Rank;

#[derive(Default)]
pub(crate) struct Inbox {
    pub envelopes: VecDeque<Envelope>,
    pub control: VecDeque<ControlMsg>,
    /// Peers whose inbound link reached EOF.
    pub closed_peers: HashSet<Rank>,
    pub controller_closed: bool,
    /// Bumped on every change so waiters can detect missed wakeups.
    pub generation: u64,
}

#[derive(Default)]
pub(crate) struct Shared {
    inbox: Mutex<Inbox>,
    cv: Condvar,
}

impl Shared {
    pub fn lock(&self) -> MutexGuard<'_, Inbox> {
        self.inbox.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn update(&self, f: impl FnOnce(&mut Inbox)) {
        let mut inbox = self.lock();
        f(&mut inbox);
        inbox.generation += 1;
        drop(inbox);
        self.cv.notify_all();
    }

    pub fn push_envelope(&self, env: Envelope) {
        self.update(|i| i.envelopes.push_back(env));
    }

    pub fn push_control(&self, msg: ControlMsg) {
        self.update(|i| i.control.push_back(msg));
    }

    /// Sleep until something changes after `seen`, or `timeout` passes.
    pub fn wait_past(&self, seen: u64, timeout: Duration) {
        let inbox = self.lock();
        if inbox.generation != seen {
            return;
        }
        let _ = self.cv.wait_timeout(inbox, timeout);
    }
}

pub(crate) fn spawn_controller_reader(mut reader: LinkReader, shared: Arc<Shared>) {
    thread::Builder::new()
        .name("elastic-ctl".into())
        .spawn(move || {
            loop {
                match reader.recv() {
                    Ok(Some(Message::Control(msg))) => shared.push_control(msg),
                    Ok(Some(Message::Envelope(_))) => {
                        tracing::warn!("envelope on the controller link ignored");
                    }
                    Ok(None) => break,
                    Err(e) => {
                        tracing::debug!("controller link: {e}");
                        break;
                    }
                }
            }
            shared.update(|i| i.controller_closed = true);
        })
        .expect("spawn controller reader");
}

pub(crate) fn spawn_acceptor(listener: TcpListener, shared: Arc<Shared>) {
    thread::Builder::new()
        .name("elastic-accept".into())
        .spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let Ok((reader, _)) = Link::from_stream(stream).split() else {
                    continue;
                };
                let shared = Arc::clone(&shared);
                let _ = thread::Builder::new()
                    .name("elastic-peer".into())
                    .spawn(move || peer_reader(reader, shared));
            }
        })
        .expect("spawn acceptor");
}

fn peer_reader(mut reader: LinkReader, shared: Arc<Shared>) {
    let mut src = None;
    loop {
        match reader.recv() {
            Ok(Some(Message::Envelope(env))) => {
                src = Some(env.src);
                shared.push_envelope(env);
            }
            Ok(Some(Message::Control(msg))) => {
                tracing::warn!("control message {:#x} on a peer link ignored", msg.kind());
            }
            Ok(None) => break,
            Err(e) => {
                tracing::debug!("peer link: {e}");
                break;
            }
        }
    }
    if let Some(src) = src {
        shared.update(|i| {
            i.closed_peers.insert(src);
        });
    }
}
