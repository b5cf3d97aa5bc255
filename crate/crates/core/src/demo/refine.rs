//! Coarse-to-fine relaxation: relax a coarse grid, fork, and let every rank
//! continue on a finer grid interpolated from the state the children
//! inherited.

use super::relax::{gather, sweep_exchange};
use super::{decode_values, encode_values, interpolate, DemoError, Layout};
use crate::runtime::{Runtime, Status};
use crate::wire::Origin;
use crate::world::{CommRef, Rank};

const TAG_ALLGATHER: i32 = 400;
const TAG_PARENT_STATE: i32 = 401;

#[derive(Clone, Debug)]
pub struct RefineOptions {
    /// Total sweeps, coarse and fine.
    pub iters: u32,
    pub coarse: Vec<f64>,
    pub fine: usize,
    pub fork_at: u32,
    pub fork_m: u32,
    /// This rank asks for a different `m` than everyone else.
    pub mismatch: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineOutcome {
    pub result: Option<Vec<f64>>,
    pub fork_code: i32,
    /// For children: inherited state equals what the parent held.
    pub inherited_ok: Option<bool>,
    pub size: u32,
}

pub fn run(rt: &mut Runtime, opts: &RefineOptions) -> Result<RefineOutcome, DemoError> {
    let me = rt.rank();
    let mut ignore = |_: Status| {};
    let (coarse, code, inherited_ok) = if rt.origin() == Origin::ForkChild {
        let state = rt
            .inherited_state()
            .ok_or_else(|| DemoError::Protocol("fork child without state".into()))?
            .to_vec();
        let code = rt.fork(opts.fork_m)?;
        let prev = rt.world().expect("initialized").prev_size;
        let parent: Rank = me - prev;
        let (parent_state, _) = rt.recv(parent, TAG_PARENT_STATE, CommRef::world())?;
        (decode_values::<f64>(&state)?, code, Some(parent_state == state))
    } else {
        let n = opts.coarse.len();
        let layout = Layout::blocks(n, (0..rt.size()).collect());
        let mut data = opts.coarse[layout.range_of(me).expect("member")].to_vec();
        for _ in 0..opts.fork_at {
            data = sweep_exchange(rt, &layout, n, &data, CommRef::world(), &mut ignore)?;
        }
        let full = allgather(rt, &layout, &data)?;
        let state = encode_values(&full);
        rt.register_state(state.clone())?;
        let m = if opts.mismatch {
            opts.fork_m + 1
        } else {
            opts.fork_m
        };
        let code = rt.fork(m)?;
        if code < 0 {
            return Err(DemoError::Fork(code));
        }
        if me < code as u32 {
            let child = layout.members.len() as Rank + me;
            rt.send(child, TAG_PARENT_STATE, &state, CommRef::world())?;
        }
        (full, code, None)
    };

    let fine = interpolate(&coarse, opts.fine);
    let layout = Layout::blocks(opts.fine, (0..rt.size()).collect());
    let mut data = fine[layout.range_of(me).expect("member")].to_vec();
    for _ in opts.fork_at..opts.iters {
        data = sweep_exchange(rt, &layout, opts.fine, &data, CommRef::world(), &mut ignore)?;
    }
    rt.barrier(CommRef::world())?;
    let result = gather(rt, &layout, &data, CommRef::world(), &mut ignore)?;
    Ok(RefineOutcome {
        result,
        fork_code: code,
        inherited_ok,
        size: rt.size(),
    })
}

fn allgather(rt: &mut Runtime, layout: &Layout, data: &[f64]) -> Result<Vec<f64>, DemoError> {
    let me = rt.rank();
    let bytes = encode_values(data);
    for &r in layout.members.iter().filter(|&&r| r != me) {
        rt.send(r, TAG_ALLGATHER, &bytes, CommRef::world())?;
    }
    let mut full = Vec::with_capacity(layout.len());
    for (i, &r) in layout.members.iter().enumerate() {
        let block = if r == me {
            data.to_vec()
        } else {
            decode_values(&rt.recv(r, TAG_ALLGATHER, CommRef::world())?.0)?
        };
        if block.len() != layout.ranges[i].len() {
            return Err(DemoError::PartitionMismatch(format!(
                "rank {r} holds {} values",
                block.len()
            )));
        }
        full.extend(block);
    }
    Ok(full)
}
