//! Distributed 1-D Jacobi relaxation that follows world changes.
//!
//! By default a rank notices growth the way a grow is announced: the world
//! size changes across a WORLD barrier. With `poll_resized` it instead checks
//! `resized_world()` at the top of every iteration and moves onto it.

use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use super::{decode_values, encode_values, plan_transfers, sweep_block, DemoError, Layout, Value};
use crate::runtime::{Runtime, Status};
use crate::wire::{Decoder, Encoder, Origin};
use crate::world::{CommRef, Rank, VersionTag};

const TAG_LEFT: i32 = 100;
const TAG_RIGHT: i32 = 101;
const TAG_MOVE: i32 = 200;
const TAG_GATHER: i32 = 300;

#[derive(Clone, Debug)]
pub struct RelaxOptions<V> {
    pub iters: u32,
    /// Initial grid; its length is the grid size.
    pub init: Vec<V>,
    pub poll_resized: bool,
    /// Rank 0 stops before the barrier that follows sweep `hold_at`, writes
    /// `<hold_file>.reached` and waits for `<hold_file>.go`.
    pub hold_at: Option<u32>,
    pub hold_file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelaxOutcome<V> {
    /// The final grid, on the rank that gathered it.
    pub result: Option<Vec<V>>,
    pub resized: u32,
    pub size: u32,
    pub version: VersionTag,
    pub notice_iter: Option<u32>,
    pub detect_iter: Option<u32>,
}

struct Relax<'a, V: Value> {
    rt: &'a mut Runtime,
    opts: &'a RelaxOptions<V>,
    n: usize,
    me: Rank,
    layout: Layout,
    data: Vec<V>,
    comm: CommRef,
    it: u32,
    resized: u32,
    notice_iter: Option<u32>,
    detect_iter: Option<u32>,
}

fn encode_state<V: Value>(it: u32, lo: usize, data: &[V]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.u32(it).u32(lo as u32).bytes(&encode_values(data));
    enc.finish()
}

fn decode_state<V: Value>(bytes: &[u8]) -> Result<(u32, usize, Vec<V>), DemoError> {
    let bad = |e: crate::wire::WireError| DemoError::Protocol(format!("restored state: {e}"));
    let mut dec = Decoder::new(bytes);
    let it = dec.u32().map_err(bad)?;
    let lo = dec.u32().map_err(bad)? as usize;
    let values = decode_values(&dec.bytes().map_err(bad)?)?;
    dec.finish().map_err(bad)?;
    Ok((it, lo, values))
}

pub fn run<V: Value>(rt: &mut Runtime, opts: &RelaxOptions<V>) -> Result<RelaxOutcome<V>, DemoError> {
    let n = opts.init.len();
    let me = rt.rank();
    let size = rt.size();
    if n < size as usize {
        return Err(DemoError::Protocol(format!(
            "grid of {n} points is smaller than the world ({size})"
        )));
    }
    let mut r = Relax {
        layout: Layout::blocks(n, (0..size).collect()),
        data: Vec::new(),
        comm: CommRef::world(),
        it: 0,
        resized: 0,
        notice_iter: None,
        detect_iter: None,
        rt,
        opts,
        n,
        me,
    };
    match r.rt.origin() {
        Origin::Launched => {
            let range = r.layout.range_of(me).expect("member");
            r.data = opts.init[range].to_vec();
        }
        Origin::Restored => {
            let state =
                r.rt.inherited_state()
                    .ok_or_else(|| DemoError::Protocol("restored without state".into()))?;
            let (it, lo, data) = decode_state::<V>(state)?;
            let range = r.layout.range_of(me).expect("member");
            if range.start != lo || range.len() != data.len() {
                return Err(DemoError::PartitionMismatch(format!(
                    "restored block {lo}+{} does not match {range:?}",
                    data.len()
                )));
            }
            r.it = it;
            r.data = data;
        }
        Origin::GrowNew => {
            let prev = r.rt.world().expect("initialized").prev_size;
            let old = Layout::blocks(n, (0..prev).collect());
            let new = Layout::blocks(n, (0..size).collect());
            r.layout = old;
            r.repartition(new, CommRef::world())?;
        }
        Origin::SpawnedWorker => {
            let parent =
                r.rt.parent_comm()
                    .ok_or_else(|| DemoError::Protocol("spawned without a parent".into()))?;
            r.rt.intercomm_merge(&parent, true)?;
            let comm = if opts.poll_resized {
                r.rt.resized_world()
            } else {
                CommRef::world()
            };
            let members = r.rt.membership(comm)?;
            r.layout = Layout::blocks(n, parent.remote.clone());
            r.repartition(Layout::blocks(n, members), comm)?;
            r.comm = comm;
        }
        Origin::ForkChild => return Err(DemoError::Protocol("relaxation does not fork".into())),
    }

    while r.it < opts.iters {
        if opts.poll_resized {
            r.poll_resized()?;
        }
        r.sweep()?;
        if !opts.poll_resized {
            let lo = r.layout.range_of(me).expect("member").start;
            r.rt.register_state(encode_state(r.it + 1, lo, &r.data))?;
        }
        if opts.hold_at == Some(r.it + 1) && r.layout.position(me) == Some(0) {
            hold(opts.hold_file.as_ref())?;
        }
        let s = r.rt.barrier(r.comm)?;
        r.note(s);
        r.it += 1;
        r.after_barrier()?;
    }
    // The closing barrier counts as step iters + 1 so that ranks joining
    // through it do not enter it a second time.
    if r.it == opts.iters {
        let s = r.rt.barrier(r.comm)?;
        r.note(s);
        r.it += 1;
        r.after_barrier()?;
    }
    if opts.poll_resized {
        r.poll_resized()?;
    }
    let result = r.gather()?;
    Ok(RelaxOutcome {
        result,
        resized: r.resized,
        size: r.rt.size(),
        version: r.rt.version(),
        notice_iter: r.notice_iter,
        detect_iter: r.detect_iter,
    })
}

/// Write `<file>.reached`, then wait for `<file>.go`.
pub fn hold(file: Option<&PathBuf>) -> Result<(), DemoError> {
    let Some(file) = file else { return Ok(()) };
    let with = |ext: &str| {
        let mut s = file.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    std::fs::write(with(".reached"), b"")?;
    let go = with(".go");
    while !go.exists() {
        thread::sleep(Duration::from_millis(5));
    }
    Ok(())
}

impl<V: Value> Relax<'_, V> {
    fn note(&mut self, s: Status) {
        if s == Status::WorldResized {
            self.resized += 1;
            self.notice_iter.get_or_insert(self.it);
        }
    }

    fn after_barrier(&mut self) -> Result<(), DemoError> {
        if !self.opts.poll_resized && self.rt.size() as usize != self.layout.members.len() {
            let new = Layout::blocks(self.n, (0..self.rt.size()).collect());
            self.repartition(new, CommRef::world())?;
        }
        Ok(())
    }

    fn poll_resized(&mut self) -> Result<(), DemoError> {
        let rw = self.rt.resized_world();
        if rw.is_null() || rw == self.comm {
            return Ok(());
        }
        self.detect_iter.get_or_insert(self.it);
        let members = self.rt.membership(rw)?;
        self.repartition(Layout::blocks(self.n, members), rw)?;
        self.comm = rw;
        Ok(())
    }

    fn sweep(&mut self) -> Result<(), DemoError> {
        let mut resized = 0;
        self.data = sweep_exchange(self.rt, &self.layout, self.n, &self.data, self.comm, &mut |s| {
            resized += u32::from(s == Status::WorldResized)
        })?;
        for _ in 0..resized {
            self.note(Status::WorldResized);
        }
        Ok(())
    }

    /// Move from the current layout to `new`, then synchronize on `comm`.
    fn repartition(&mut self, new: Layout, comm: CommRef) -> Result<(), DemoError> {
        let transfers = plan_transfers(&self.layout, &new)?;
        let old_range = self.layout.range_of(self.me);
        let new_range = new.range_of(self.me);
        let mut out: Vec<Option<V>> = vec![None; new_range.as_ref().map_or(0, |r| r.len())];
        let mut place = |range: &std::ops::Range<usize>, values: &[V]| {
            let base = new_range.as_ref().expect("receiver owns a block").start;
            for (k, v) in values.iter().enumerate() {
                out[range.start - base + k] = Some(*v);
            }
        };
        let mut it = old_range.as_ref().map(|_| self.it);
        let me = self.me;
        for t in transfers.iter().filter(|t| t.from == me) {
            let base = old_range.as_ref().expect("sender owns a block").start;
            let slice = &self.data[t.range.start - base..t.range.end - base];
            if t.to == me {
                place(&t.range, slice);
            } else {
                let mut enc = Encoder::new();
                enc.u32(self.it)
                    .u32(t.range.start as u32)
                    .u32(t.range.end as u32)
                    .bytes(&encode_values(slice));
                let s = self.rt.send(t.to, TAG_MOVE, &enc.finish(), comm)?;
                self.note(s);
            }
        }
        for t in transfers.iter().filter(|t| t.to == me && t.from != me) {
            let (bytes, s) = self.rt.recv(t.from, TAG_MOVE, comm)?;
            self.note(s);
            let bad = |e: crate::wire::WireError| DemoError::Protocol(format!("slice from {}: {e}", t.from));
            let mut dec = Decoder::new(&bytes);
            let their_it = dec.u32().map_err(bad)?;
            let lo = dec.u32().map_err(bad)? as usize;
            let hi = dec.u32().map_err(bad)? as usize;
            let values = decode_values::<V>(&dec.bytes().map_err(bad)?)?;
            if (lo..hi) != t.range || values.len() != hi - lo {
                return Err(DemoError::PartitionMismatch(format!(
                    "rank {} sent {lo}..{hi}, expected {:?}",
                    t.from, t.range
                )));
            }
            if *it.get_or_insert(their_it) != their_it {
                return Err(DemoError::Protocol(format!(
                    "rank {} is at iteration {their_it}, not {}",
                    t.from,
                    it.unwrap_or_default()
                )));
            }
            place(&t.range, &values);
        }
        self.data = out
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                v.ok_or_else(|| DemoError::PartitionMismatch(format!("no value for local index {k}")))
            })
            .collect::<Result<_, _>>()?;
        self.it = it.unwrap_or(self.it);
        self.layout = new;
        let s = self.rt.barrier(comm)?;
        self.note(s);
        Ok(())
    }

    fn gather(&mut self) -> Result<Option<Vec<V>>, DemoError> {
        let mut resized = 0;
        let out = gather(self.rt, &self.layout, &self.data, self.comm, &mut |s| {
            resized += u32::from(s == Status::WorldResized)
        })?;
        for _ in 0..resized {
            self.note(Status::WorldResized);
        }
        Ok(out)
    }
}

/// Halo exchange with the neighbouring blocks, then one sweep of `data`.
pub fn sweep_exchange<V: Value>(
    rt: &mut Runtime,
    layout: &Layout,
    n: usize,
    data: &[V],
    comm: CommRef,
    note: &mut dyn FnMut(Status),
) -> Result<Vec<V>, DemoError> {
    let me = rt.rank();
    let pos = layout.position(me).expect("member");
    let range = layout.ranges[pos].clone();
    let left = pos.checked_sub(1).map(|p| layout.members[p]);
    let right = layout.members.get(pos + 1).copied();
    let first = data[0];
    let last = *data.last().expect("non-empty block");
    if let Some(l) = left {
        note(rt.send(l, TAG_LEFT, &encode_values(&[first]), comm)?);
    }
    if let Some(r) = right {
        note(rt.send(r, TAG_RIGHT, &encode_values(&[last]), comm)?);
    }
    let mut halo = |src: Option<Rank>, tag: i32| -> Result<Option<V>, DemoError> {
        let Some(src) = src else { return Ok(None) };
        let (bytes, s) = rt.recv(src, tag, comm)?;
        note(s);
        match decode_values::<V>(&bytes)?[..] {
            [v] => Ok(Some(v)),
            _ => Err(DemoError::Protocol(format!("halo from {src} is not one value"))),
        }
    };
    let lv = halo(left, TAG_RIGHT)?;
    let rv = halo(right, TAG_LEFT)?;
    Ok(sweep_block(data, range.start, n, lv, rv))
}

/// Collect every block on the first member of `layout`.
pub fn gather<V: Value>(
    rt: &mut Runtime,
    layout: &Layout,
    data: &[V],
    comm: CommRef,
    note: &mut dyn FnMut(Status),
) -> Result<Option<Vec<V>>, DemoError> {
    let me = rt.rank();
    let root = layout.members[0];
    let range = layout.range_of(me).expect("member");
    if me != root {
        let mut enc = Encoder::new();
        enc.u32(range.start as u32).bytes(&encode_values(data));
        note(rt.send(root, TAG_GATHER, &enc.finish(), comm)?);
        return Ok(None);
    }
    let mut full = data.to_vec();
    for (i, &src) in layout.members.iter().enumerate().skip(1) {
        let (bytes, s) = rt.recv(src, TAG_GATHER, comm)?;
        note(s);
        let bad = |e: crate::wire::WireError| DemoError::Protocol(format!("gather from {src}: {e}"));
        let mut dec = Decoder::new(&bytes);
        let lo = dec.u32().map_err(bad)? as usize;
        let values = decode_values::<V>(&dec.bytes().map_err(bad)?)?;
        if lo != layout.ranges[i].start || values.len() != layout.ranges[i].len() {
            return Err(DemoError::PartitionMismatch(format!(
                "rank {src} returned {lo}+{}",
                values.len()
            )));
        }
        full.extend(values);
    }
    Ok(Some(full))
}
