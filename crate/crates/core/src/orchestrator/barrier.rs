use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::world::{CommRef, Rank};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BarrierError {
    #[error("StrayEnter: rank {rank} is not a member of {comm}")]
    StrayEnter { rank: Rank, comm: CommRef },
    #[error("rank {rank} re-entered {comm} barrier {seq}")]
    Replayed { rank: Rank, comm: CommRef, seq: u32 },
}

#[derive(Default, Debug)]
struct Key {
    released_upto: u32,
    entered: BTreeMap<u32, BTreeSet<Rank>>,
}

/// Counts barrier entries per concrete communicator and sequence number.
#[derive(Default, Debug)]
pub struct BarrierService {
    keys: HashMap<CommRef, Key>,
}

impl BarrierService {
    pub fn new() -> Self {
        Self::default()
    }

    /// The lowest sequence number not yet released on `comm`.
    pub fn next_seq(&self, comm: CommRef) -> u32 {
        self.keys.get(&comm).map_or(0, |k| k.released_upto) + 1
    }

    pub fn enter(
        &mut self,
        comm: CommRef,
        seq: u32,
        rank: Rank,
        members: &[Rank],
    ) -> Result<(), BarrierError> {
        if !members.contains(&rank) {
            return Err(BarrierError::StrayEnter { rank, comm });
        }
        let key = self.keys.entry(comm).or_default();
        if seq <= key.released_upto || !key.entered.entry(seq).or_default().insert(rank) {
            return Err(BarrierError::Replayed { rank, comm, seq });
        }
        Ok(())
    }

    pub fn entered(&self, comm: CommRef, seq: u32) -> BTreeSet<Rank> {
        self.keys
            .get(&comm)
            .and_then(|k| k.entered.get(&seq))
            .cloned()
            .unwrap_or_default()
    }

    /// True when every member has entered barrier `seq` on `comm`.
    pub fn is_full(&self, comm: CommRef, seq: u32, members: &[Rank]) -> bool {
        let entered = self.entered(comm, seq);
        members.iter().all(|r| entered.contains(r))
    }

    /// The next sequence number, if it can be released now.
    pub fn ready(&self, comm: CommRef, members: &[Rank]) -> Option<u32> {
        let seq = self.next_seq(comm);
        self.is_full(comm, seq, members).then_some(seq)
    }

    pub fn mark_released(&mut self, comm: CommRef, seq: u32) {
        let key = self.keys.entry(comm).or_default();
        key.released_upto = key.released_upto.max(seq);
        key.entered.retain(|s, _| *s > seq);
    }

    pub fn reset(&mut self) {
        self.keys.clear();
    }
}
