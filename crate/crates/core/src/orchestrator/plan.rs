use std::collections::BTreeMap;

use thiserror::Error;

use crate::wire::PlanKind;
use crate::world::Rank;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("ResizeInProgress: a {0} is already pending")]
    ResizeInProgress(PlanKind),
    #[error("InvalidM: m={m} is not valid for a {kind} of a {n}-rank world")]
    InvalidM { kind: PlanKind, m: u32, n: u32 },
}

/// What a grow, fork or spawn-merge will add.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrowPlan {
    pub kind: PlanKind,
    pub m: u32,
    pub new_ranks: Vec<Rank>,
    /// Ranks whose images seed the new ranks; only set for forks.
    pub clone_sources: Vec<Rank>,
    /// New rank -> logical node.
    pub placements: BTreeMap<Rank, u32>,
}

/// Least-loaded node, ties to the lowest index. Bumps its load.
pub fn place(loads: &mut [u32]) -> u32 {
    let (node, _) = loads
        .iter()
        .enumerate()
        .min_by_key(|(i, load)| (**load, *i))
        .expect("at least one node");
    loads[node] += 1;
    node as u32
}

/// `loads[i]` is the number of ranks currently on node `i`.
pub fn plan_grow(
    n: u32,
    loads: &[u32],
    kind: PlanKind,
    m: u32,
    pending: Option<PlanKind>,
) -> Result<GrowPlan, PlanError> {
    if let Some(p) = pending {
        return Err(PlanError::ResizeInProgress(p));
    }
    if m == 0 || (kind == PlanKind::Fork && m > n) {
        return Err(PlanError::InvalidM { kind, m, n });
    }
    let mut loads = loads.to_vec();
    let new_ranks: Vec<Rank> = (n..n + m).collect();
    let placements = new_ranks.iter().map(|&r| (r, place(&mut loads))).collect();
    let clone_sources = match kind {
        PlanKind::Fork => (0..m).collect(),
        _ => Vec::new(),
    };
    Ok(GrowPlan {
        kind,
        m,
        new_ranks,
        clone_sources,
        placements,
    })
}
