//! Membership and versioning model.
//!
//! A job's world is an append-only sequence of [`WorldView`]s, one per
//! committed epoch. Every grow, spawn-merge or fork commits exactly one new
//! view with the next [`VersionTag`]. New ranks always take the dense suffix
//! `n..n+m`, so `WORLD@vK` is simply `0..size_K` and historical membership can
//! be answered from the stored views without any bookkeeping on the side.

use std::fmt;

use thiserror::Error;

pub type Rank = u32;

/// Epoch counter of the world. `v0` is the initial launch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VersionTag(pub u32);

impl VersionTag {
    pub const INITIAL: VersionTag = VersionTag(0);

    pub fn next(self) -> VersionTag {
        VersionTag(self.0 + 1)
    }

    pub fn prev(self) -> Option<VersionTag> {
        self.0.checked_sub(1).map(VersionTag)
    }
}

impl fmt::Display for VersionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl std::str::FromStr for VersionTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix('v').unwrap_or(s);
        digits
            .parse::<u32>()
            .map(VersionTag)
            .map_err(|_| format!("bad version tag {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        Endpoint {
            host: host.into(),
            port,
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl std::str::FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| format!("endpoint {s:?} is not host:port"))?;
        if host.is_empty() {
            return Err(format!("endpoint {s:?} has an empty host"));
        }
        let port = port
            .parse::<u16>()
            .map_err(|_| format!("endpoint {s:?} has a bad port"))?;
        Ok(Endpoint::new(host, port))
    }
}

/// How a view came to be.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Transition {
    Initial,
    Grow,
    Fork,
    /// Spawn + intercommunicator merge. `parents_low` records whether the
    /// pre-existing group comes first in the merged rank order.
    SpawnMerge {
        parents_low: bool,
    },
}

impl Transition {
    pub fn code(self) -> u8 {
        match self {
            Transition::Initial => 0,
            Transition::Grow => 1,
            Transition::Fork => 2,
            Transition::SpawnMerge { parents_low: true } => 3,
            Transition::SpawnMerge { parents_low: false } => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Transition> {
        Some(match code {
            0 => Transition::Initial,
            1 => Transition::Grow,
            2 => Transition::Fork,
            3 => Transition::SpawnMerge { parents_low: true },
            4 => Transition::SpawnMerge { parents_low: false },
            _ => return None,
        })
    }

    fn letter(self) -> char {
        match self {
            Transition::Initial => 'i',
            Transition::Grow => 'g',
            Transition::Fork => 'f',
            Transition::SpawnMerge { parents_low: true } => 'm',
            Transition::SpawnMerge { parents_low: false } => 'n',
        }
    }

    fn from_letter(c: char) -> Option<Transition> {
        Some(match c {
            'i' => Transition::Initial,
            'g' => Transition::Grow,
            'f' => Transition::Fork,
            'm' => Transition::SpawnMerge { parents_low: true },
            'n' => Transition::SpawnMerge { parents_low: false },
            _ => return None,
        })
    }
}

/// Membership snapshot at one epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldView {
    pub version: VersionTag,
    pub size: u32,
    /// Indexed by rank.
    pub endpoints: Vec<Endpoint>,
    pub transition: Transition,
    /// Size of the view this one was derived from (equal to `size` for v0).
    pub prev_size: u32,
}

impl WorldView {
    pub fn initial(endpoints: Vec<Endpoint>) -> WorldView {
        let size = endpoints.len() as u32;
        WorldView {
            version: VersionTag::INITIAL,
            size,
            endpoints,
            transition: Transition::Initial,
            prev_size: size,
        }
    }

    /// The view that results from adding `endpoints.len()` ranks on top of `self`.
    pub fn successor(&self, transition: Transition, added: Vec<Endpoint>) -> WorldView {
        let mut endpoints = self.endpoints.clone();
        endpoints.extend(added);
        WorldView {
            version: self.version.next(),
            size: endpoints.len() as u32,
            endpoints,
            transition,
            prev_size: self.size,
        }
    }

    pub fn ranks(&self) -> Vec<Rank> {
        (0..self.size).collect()
    }

    /// Pre-existing ranks of a fork view; empty for any other transition.
    pub fn parents(&self) -> Vec<Rank> {
        match self.transition {
            Transition::Fork => (0..self.prev_size).collect(),
            _ => Vec::new(),
        }
    }

    /// Ranks created by a fork view; empty for any other transition.
    pub fn children(&self) -> Vec<Rank> {
        match self.transition {
            Transition::Fork => (self.prev_size..self.size).collect(),
            _ => Vec::new(),
        }
    }

    /// Rank order of the merged intracommunicator for spawn-merge views.
    pub fn merged_order(&self) -> Vec<Rank> {
        match self.transition {
            Transition::SpawnMerge { parents_low } => {
                let old = 0..self.prev_size;
                let new = self.prev_size..self.size;
                if parents_low {
                    old.chain(new).collect()
                } else {
                    new.chain(old).collect()
                }
            }
            _ => Vec::new(),
        }
    }

    fn check(&self) -> Result<(), WorldError> {
        if self.size == 0 {
            return Err(WorldError::InvalidView("world size must be positive".into()));
        }
        if self.endpoints.len() != self.size as usize {
            return Err(WorldError::InvalidView(format!(
                "{} endpoints for {} ranks",
                self.endpoints.len(),
                self.size
            )));
        }
        if self.prev_size > self.size {
            return Err(WorldError::ShrinkUnsupported {
                from: self.prev_size,
                to: self.size,
            });
        }
        match self.transition {
            Transition::Initial if self.prev_size != self.size => Err(WorldError::InvalidView(
                "initial view cannot have a predecessor".into(),
            )),
            Transition::Fork | Transition::SpawnMerge { .. } if self.prev_size == self.size => Err(
                WorldError::InvalidView("fork and spawn-merge must add at least one rank".into()),
            ),
            Transition::Fork if self.size - self.prev_size > self.prev_size => {
                Err(WorldError::InvalidView(format!(
                    "fork of {} ranks exceeds {} clone sources",
                    self.size - self.prev_size,
                    self.prev_size
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Communicator family named by a [`CommRef`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    World,
    Parents,
    Children,
    ResizedWorld,
    /// The merged intracommunicator committed at the given epoch.
    Merged(VersionTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VersionSel {
    Latest,
    At(VersionTag),
}

/// Handle naming a communicator, or NULL.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CommRef {
    Null,
    Comm { family: Family, version: VersionSel },
}

impl CommRef {
    pub const NULL: CommRef = CommRef::Null;

    pub fn latest(family: Family) -> CommRef {
        CommRef::Comm {
            family,
            version: VersionSel::Latest,
        }
    }

    pub fn at(family: Family, version: VersionTag) -> CommRef {
        CommRef::Comm {
            family,
            version: VersionSel::At(version),
        }
    }

    pub fn world() -> CommRef {
        CommRef::latest(Family::World)
    }

    pub fn is_null(&self) -> bool {
        matches!(self, CommRef::Null)
    }
}

impl fmt::Display for CommRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommRef::Null => write!(f, "NULL"),
            CommRef::Comm { family, version } => {
                match family {
                    Family::World => write!(f, "WORLD")?,
                    Family::Parents => write!(f, "PARENTS")?,
                    Family::Children => write!(f, "CHILDREN")?,
                    Family::ResizedWorld => write!(f, "RESIZED_WORLD")?,
                    Family::Merged(id) => write!(f, "MERGED({id})")?,
                }
                match version {
                    VersionSel::Latest => write!(f, "@LATEST"),
                    VersionSel::At(v) => write!(f, "@{v}"),
                }
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorldError {
    #[error("operation on a NULL communicator")]
    NullCommunicator,
    #[error("version {requested} is not committed (latest is {latest})")]
    UnknownVersion {
        requested: VersionTag,
        latest: VersionTag,
    },
    #[error("expected version {expected}, got {got}")]
    VersionSkew { expected: VersionTag, got: VersionTag },
    #[error("world cannot shrink from {from} to {to} ranks")]
    ShrinkUnsupported { from: u32, to: u32 },
    #[error("invalid view: {0}")]
    InvalidView(String),
}

/// Append-only list of committed views; `views[k].version == vk`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldHistory {
    views: Vec<WorldView>,
}

impl WorldHistory {
    pub fn new(initial: WorldView) -> Result<WorldHistory, WorldError> {
        if initial.version != VersionTag::INITIAL {
            return Err(WorldError::VersionSkew {
                expected: VersionTag::INITIAL,
                got: initial.version,
            });
        }
        if initial.transition != Transition::Initial {
            return Err(WorldError::InvalidView("first view must be initial".into()));
        }
        initial.check()?;
        Ok(WorldHistory { views: vec![initial] })
    }

    /// Rebuild a history from a list of views, validating every commit.
    pub fn from_views(views: Vec<WorldView>) -> Result<WorldHistory, WorldError> {
        let mut it = views.into_iter();
        let first = it
            .next()
            .ok_or_else(|| WorldError::InvalidView("empty history".into()))?;
        let mut history = WorldHistory::new(first)?;
        for view in it {
            history.commit_view(view)?;
        }
        Ok(history)
    }

    pub fn latest(&self) -> &WorldView {
        self.views.last().expect("history is never empty")
    }

    pub fn latest_version(&self) -> VersionTag {
        self.latest().version
    }

    pub fn view(&self, version: VersionTag) -> Option<&WorldView> {
        self.views.get(version.0 as usize)
    }

    pub fn views(&self) -> &[WorldView] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn endpoint(&self, rank: Rank) -> Option<&Endpoint> {
        self.latest().endpoints.get(rank as usize)
    }

    /// Append the next view. Earlier views are never touched.
    pub fn commit_view(&mut self, next: WorldView) -> Result<(), WorldError> {
        let expected = self.latest_version().next();
        if next.version != expected {
            return Err(WorldError::VersionSkew {
                expected,
                got: next.version,
            });
        }
        let current = self.latest().size;
        if next.size < current {
            return Err(WorldError::ShrinkUnsupported {
                from: current,
                to: next.size,
            });
        }
        if next.prev_size != current {
            return Err(WorldError::InvalidView(format!(
                "view records predecessor size {} but current size is {}",
                next.prev_size, current
            )));
        }
        if next.transition == Transition::Initial {
            return Err(WorldError::InvalidView("only v0 may be an initial view".into()));
        }
        next.check()?;
        self.views.push(next);
        Ok(())
    }

    /// Replace LATEST with the newest committed tag.
    pub fn resolve_default_version(&self, comm: CommRef) -> CommRef {
        match comm {
            CommRef::Comm {
                family,
                version: VersionSel::Latest,
            } => CommRef::at(family, self.latest_version()),
            other => other,
        }
    }

    pub fn resolve_version(&self, sel: VersionSel) -> Result<VersionTag, WorldError> {
        let latest = self.latest_version();
        match sel {
            VersionSel::Latest => Ok(latest),
            VersionSel::At(v) if v <= latest => Ok(v),
            VersionSel::At(v) => Err(WorldError::UnknownVersion { requested: v, latest }),
        }
    }

    /// Newest fork view at or before `at`.
    pub fn last_fork(&self, at: VersionTag) -> Option<&WorldView> {
        self.views[..=at.0 as usize]
            .iter()
            .rev()
            .find(|v| v.transition == Transition::Fork)
    }

    /// Newest spawn-merge view at or before `at`.
    pub fn last_merge(&self, at: VersionTag) -> Option<&WorldView> {
        self.views[..=at.0 as usize]
            .iter()
            .rev()
            .find(|v| matches!(v.transition, Transition::SpawnMerge { .. }))
    }

    /// Ordered ranks of `comm`.
    pub fn membership(&self, comm: CommRef) -> Result<Vec<Rank>, WorldError> {
        let CommRef::Comm { family, version } = comm else {
            return Err(WorldError::NullCommunicator);
        };
        let at = self.resolve_version(version)?;
        match family {
            Family::World => Ok(self.views[at.0 as usize].ranks()),
            Family::Parents => self
                .last_fork(at)
                .map(WorldView::parents)
                .ok_or(WorldError::NullCommunicator),
            Family::Children => self
                .last_fork(at)
                .map(WorldView::children)
                .ok_or(WorldError::NullCommunicator),
            Family::ResizedWorld => self
                .last_merge(at)
                .map(WorldView::merged_order)
                .ok_or(WorldError::NullCommunicator),
            Family::Merged(id) => {
                let view = self.view(id).ok_or(WorldError::UnknownVersion {
                    requested: id,
                    latest: self.latest_version(),
                })?;
                match view.transition {
                    Transition::SpawnMerge { .. } => Ok(view.merged_order()),
                    _ => Err(WorldError::NullCommunicator),
                }
            }
        }
    }

    /// Compact `size+kind` list, e.g. `4i,6g,8f`. Endpoints are not included.
    pub fn shape(&self) -> String {
        self.views
            .iter()
            .map(|v| format!("{}{}", v.size, v.transition.letter()))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Inverse of [`shape`](Self::shape); every view gets the supplied
    /// current endpoints (rank identity is stable across epochs).
    pub fn from_shape(shape: &str, endpoints: &[Endpoint]) -> Result<WorldHistory, WorldError> {
        let mut views: Vec<WorldView> = Vec::new();
        for (k, item) in shape.split(',').enumerate() {
            let bad = || WorldError::InvalidView(format!("bad history entry {item:?}"));
            let letter = item.chars().last().ok_or_else(bad)?;
            let transition = Transition::from_letter(letter).ok_or_else(bad)?;
            let size: u32 = item[..item.len() - 1].parse().map_err(|_| bad())?;
            if endpoints.len() < size as usize {
                return Err(WorldError::InvalidView(format!(
                    "history needs {size} endpoints, have {}",
                    endpoints.len()
                )));
            }
            let prev_size = views.last().map(|v| v.size).unwrap_or(size);
            views.push(WorldView {
                version: VersionTag(k as u32),
                size,
                endpoints: endpoints[..size as usize].to_vec(),
                transition,
                prev_size,
            });
        }
        WorldHistory::from_views(views)
    }
}
