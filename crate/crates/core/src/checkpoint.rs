//! Cooperative rank snapshots.
//!
//! A rank registers an opaque state blob; a snapshot pairs that blob with a
//! metadata table (rank, world size, epoch, controller endpoint, ...) in a
//! self-contained image. Restoring may override selected metadata keys, which
//! is how a fork child takes on a new rank and how a restarted world learns
//! its new size.
//!
//! Image layout, little-endian:
//!
//! ```text
//! "ELCK" | format_version: u16 | n: u32 | n x (key: str, value: str) | payload: bytes
//! ```
//!
//! where `str`/`bytes` are `u32` length-prefixed. Metadata is stored sorted by
//! key, so identical inputs always produce identical bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::wire::{Decoder, Encoder, WireError};
use crate::world::VersionTag;

pub const MAGIC: &[u8; 4] = b"ELCK";
pub const FORMAT_VERSION: u16 = 1;

pub const KEY_RANK: &str = "rank";
pub const KEY_WORLD_SIZE: &str = "world_size";
pub const KEY_EPOCH: &str = "epoch";
pub const KEY_PENDING: &str = "pending";
pub const KEY_CONTROLLER: &str = "controller";
pub const KEY_CONFIG: &str = "config";
pub const KEY_JOBID: &str = "jobid";
pub const KEY_HISTORY: &str = "history";

/// Keys a restore may set even if the image does not carry them.
const ALWAYS_OVERRIDABLE: [&str; 4] = [KEY_RANK, KEY_WORLD_SIZE, KEY_EPOCH, KEY_PENDING];

pub type Metadata = BTreeMap<String, String>;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("state could not be serialized: {0}")]
    SerializationFailed(String),
    #[error("image does not start with ELCK")]
    BadMagic,
    #[error("image format version {0} is not supported")]
    VersionUnsupported(u16),
    #[error("override of unknown metadata key {0:?}")]
    OverrideConflict(String),
    #[error("corrupt image: {0}")]
    Corrupt(String),
    #[error("metadata key {0:?} missing or invalid")]
    BadMetadata(String),
    #[error("quiesce timed out")]
    QuiesceTimeout,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<WireError> for CheckpointError {
    fn from(e: WireError) -> Self {
        CheckpointError::Corrupt(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointImage {
    pub format_version: u16,
    pub metadata: Metadata,
    pub payload: Vec<u8>,
}

impl CheckpointImage {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        for b in MAGIC {
            enc.u8(*b);
        }
        enc.u16(self.format_version);
        enc.u32(self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            enc.str(k).str(v);
        }
        enc.bytes(&self.payload);
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<CheckpointImage, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut dec = Decoder::new(&bytes[4..]);
        let format_version = dec.u16()?;
        if format_version != FORMAT_VERSION {
            return Err(CheckpointError::VersionUnsupported(format_version));
        }
        let n = dec.u32()?;
        dec.bounded(n, 8)?;
        let mut metadata = Metadata::new();
        for _ in 0..n {
            let k = dec.str()?;
            let v = dec.str()?;
            if metadata.insert(k.clone(), v).is_some() {
                return Err(CheckpointError::Corrupt(format!("duplicate key {k:?}")));
            }
        }
        let payload = dec.bytes()?;
        dec.finish()?;
        Ok(CheckpointImage {
            format_version,
            metadata,
            payload,
        })
    }

    pub fn read(path: &Path) -> Result<CheckpointImage, CheckpointError> {
        CheckpointImage::decode(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, &self.encode())?;
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }
}

/// Write via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// State that knows how to turn itself into bytes.
pub trait CaptureState {
    fn capture(&self) -> Result<Vec<u8>, String>;
}

impl CaptureState for [u8] {
    fn capture(&self) -> Result<Vec<u8>, String> {
        Ok(self.to_vec())
    }
}

impl CaptureState for Vec<u8> {
    fn capture(&self) -> Result<Vec<u8>, String> {
        Ok(self.clone())
    }
}

pub fn snapshot<S: CaptureState + ?Sized>(
    state: &S,
    meta: &Metadata,
) -> Result<CheckpointImage, CheckpointError> {
    let payload = state.capture().map_err(CheckpointError::SerializationFailed)?;
    Ok(CheckpointImage {
        format_version: FORMAT_VERSION,
        metadata: meta.clone(),
        payload,
    })
}

/// Result of a restore: the state bytes and the metadata after overrides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Restored {
    pub state: Vec<u8>,
    pub metadata: Metadata,
}

impl Restored {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CheckpointError> {
        self.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CheckpointError::BadMetadata(key.to_string()))
    }
}

pub fn apply_overrides(mut metadata: Metadata, overrides: &Metadata) -> Result<Metadata, CheckpointError> {
    for (k, v) in overrides {
        if !metadata.contains_key(k) && !ALWAYS_OVERRIDABLE.contains(&k.as_str()) {
            return Err(CheckpointError::OverrideConflict(k.clone()));
        }
        metadata.insert(k.clone(), v.clone());
    }
    Ok(metadata)
}

/// Restore without hooks.
pub fn restore(image: &CheckpointImage, overrides: &Metadata) -> Result<Restored, CheckpointError> {
    if image.format_version != FORMAT_VERSION {
        return Err(CheckpointError::VersionUnsupported(image.format_version));
    }
    Ok(Restored {
        state: image.payload.clone(),
        metadata: apply_overrides(image.metadata.clone(), overrides)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HookPhase {
    Init,
    PreCheckpoint,
    Restart,
}

impl fmt::Display for HookPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HookPhase::Init => "init",
            HookPhase::PreCheckpoint => "pre_checkpoint",
            HookPhase::Restart => "restart",
        })
    }
}

/// What a hook may look at and change.
pub struct HookContext<'a> {
    pub phase: HookPhase,
    pub metadata: &'a mut Metadata,
    pub state: &'a mut Vec<u8>,
}

pub type Hook = Box<dyn FnMut(&mut HookContext<'_>) + Send>;

/// Ordered callbacks per phase. Duplicates are allowed and run in
/// registration order.
#[derive(Default)]
pub struct HookRegistry {
    on_init: Vec<Hook>,
    on_pre_checkpoint: Vec<Hook>,
    on_restart: Vec<Hook>,
}

impl HookRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_hook(&mut self, phase: HookPhase, hook: Hook) {
        self.list(phase).push(hook);
    }

    pub fn len(&self, phase: HookPhase) -> usize {
        match phase {
            HookPhase::Init => self.on_init.len(),
            HookPhase::PreCheckpoint => self.on_pre_checkpoint.len(),
            HookPhase::Restart => self.on_restart.len(),
        }
    }

    fn list(&mut self, phase: HookPhase) -> &mut Vec<Hook> {
        match phase {
            HookPhase::Init => &mut self.on_init,
            HookPhase::PreCheckpoint => &mut self.on_pre_checkpoint,
            HookPhase::Restart => &mut self.on_restart,
        }
    }

    pub fn run(&mut self, phase: HookPhase, metadata: &mut Metadata, state: &mut Vec<u8>) {
        for hook in self.list(phase).iter_mut() {
            hook(&mut HookContext {
                phase,
                metadata,
                state,
            });
        }
    }

    /// Run pre-checkpoint hooks, then capture.
    pub fn snapshot(
        &mut self,
        state: &mut Vec<u8>,
        meta: &Metadata,
    ) -> Result<CheckpointImage, CheckpointError> {
        let mut meta = meta.clone();
        self.run(HookPhase::PreCheckpoint, &mut meta, state);
        snapshot(state.as_slice(), &meta)
    }

    /// Restore, then run every restart hook before handing the state back.
    pub fn restore(
        &mut self,
        image: &CheckpointImage,
        overrides: &Metadata,
    ) -> Result<Restored, CheckpointError> {
        let mut restored = restore(image, overrides)?;
        self.run(HookPhase::Restart, &mut restored.metadata, &mut restored.state);
        Ok(restored)
    }
}

/// Whole-world checkpoint index.
///
/// ```text
/// version v<tag> size <n>
/// rank 0 rank-0.elck
/// ...
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub version: VersionTag,
    pub size: u32,
    /// `(rank, filename)` in rank order; filenames are relative to the manifest.
    pub images: Vec<(u32, String)>,
}

pub const MANIFEST_NAME: &str = "manifest";

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("version {} size {}\n", self.version, self.size);
        for (rank, file) in &self.images {
            out.push_str(&format!("rank {rank} {file}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Manifest, CheckpointError> {
        let bad = |msg: String| CheckpointError::Manifest(msg);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head = lines.next().ok_or_else(|| bad("empty manifest".into()))?;
        let parts: Vec<_> = head.split_whitespace().collect();
        let (version, size) = match parts.as_slice() {
            ["version", v, "size", n] => (
                v.parse::<VersionTag>().map_err(bad)?,
                n.parse::<u32>().map_err(|_| bad(format!("bad size {n:?}")))?,
            ),
            _ => return Err(bad(format!("bad header line {head:?}"))),
        };
        let mut images = Vec::new();
        for line in lines {
            match line.split_whitespace().collect::<Vec<_>>().as_slice() {
                ["rank", r, file] => {
                    let rank = r.parse::<u32>().map_err(|_| bad(format!("bad rank {r:?}")))?;
                    images.push((rank, file.to_string()));
                }
                _ => return Err(bad(format!("bad line {line:?}"))),
            }
        }
        if size == 0 {
            return Err(bad("size must be positive".into()));
        }
        let ranks: Vec<u32> = images.iter().map(|(r, _)| *r).collect();
        if ranks != (0..size).collect::<Vec<_>>() {
            return Err(bad(format!(
                "expected one image per rank 0..{size}, got ranks {ranks:?}"
            )));
        }
        Ok(Manifest {
            version,
            size,
            images,
        })
    }

    pub fn read(dir: &Path) -> Result<Manifest, CheckpointError> {
        let text = fs::read_to_string(dir.join(MANIFEST_NAME))
            .map_err(|e| CheckpointError::Manifest(format!("{}: {e}", dir.display())))?;
        Manifest::parse(&text)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CheckpointError> {
        write_atomic(&dir.join(MANIFEST_NAME), self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn image_path(&self, dir: &Path, rank: u32) -> Option<PathBuf> {
        self.images
            .iter()
            .find(|(r, _)| *r == rank)
            .map(|(_, f)| dir.join(f))
    }
}

pub fn image_file_name(rank: u32) -> String {
    format!("rank-{rank}.elck")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    fn meta(rank: u32, epoch: u32) -> Metadata {
        [
            (KEY_RANK, rank.to_string()),
            (KEY_WORLD_SIZE, "4".to_string()),
            (KEY_EPOCH, epoch.to_string()),
            (KEY_CONTROLLER, "127.0.0.1:7000".to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    struct Unserializable;

    impl CaptureState for Unserializable {
        fn capture(&self) -> Result<Vec<u8>, String> {
            Err("file handle".into())
        }
    }

    #[test]
    fn snapshot_captures_state_and_rank() {
        let img = snapshot(b"abc".as_slice(), &meta(1, 0)).unwrap();
        let back = CheckpointImage::decode(&img.encode()).unwrap();
        assert_eq!(back.payload, b"abc");
        assert_eq!(back.get(KEY_RANK), Some("1"));
    }

    #[test]
    fn snapshot_is_deterministic() {
        let a = snapshot(b"abc".as_slice(), &meta(1, 0)).unwrap().encode();
        let b = snapshot(b"abc".as_slice(), &meta(1, 0)).unwrap().encode();
        assert_eq!(a, b);
    }

    #[test]
    fn unserializable_state_fails() {
        assert!(matches!(
            snapshot(&Unserializable, &meta(0, 0)),
            Err(CheckpointError::SerializationFailed(_))
        ));
    }

    #[test]
    fn restore_with_rank_override() {
        let img = snapshot(b"parent".as_slice(), &meta(0, 0)).unwrap();
        let overrides: Metadata = [(KEY_RANK.to_string(), "4".to_string())].into();
        let r = restore(&img, &overrides).unwrap();
        assert_eq!(r.state, b"parent");
        assert_eq!(r.parse::<u32>(KEY_RANK).unwrap(), 4);
        assert_eq!(r.get(KEY_WORLD_SIZE), Some("4"));
    }

    #[test]
    fn restore_with_world_size_override() {
        let img = snapshot(b"x".as_slice(), &meta(2, 0)).unwrap();
        let overrides: Metadata = [(KEY_WORLD_SIZE.to_string(), "6".to_string())].into();
        let r = restore(&img, &overrides).unwrap();
        assert_eq!(r.parse::<u32>(KEY_WORLD_SIZE).unwrap(), 6);
        assert_eq!(r.get(KEY_RANK), Some("2"));
    }

    #[test]
    fn pending_may_be_added_but_unknown_keys_conflict() {
        let img = snapshot(b"x".as_slice(), &meta(2, 0)).unwrap();
        let ok: Metadata = [(KEY_PENDING.to_string(), "1".to_string())].into();
        assert_eq!(restore(&img, &ok).unwrap().get(KEY_PENDING), Some("1"));
        let bad: Metadata = [("colour".to_string(), "red".to_string())].into();
        assert!(matches!(
            restore(&img, &bad),
            Err(CheckpointError::OverrideConflict(k)) if k == "colour"
        ));
    }

    #[test]
    fn corrupt_magic() {
        let mut bytes = snapshot(b"x".as_slice(), &meta(0, 0)).unwrap().encode();
        bytes[0] = b'X';
        assert!(matches!(
            CheckpointImage::decode(&bytes),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn unsupported_format_version() {
        let mut bytes = snapshot(b"x".as_slice(), &meta(0, 0)).unwrap().encode();
        bytes[4] = 9;
        assert!(matches!(
            CheckpointImage::decode(&bytes),
            Err(CheckpointError::VersionUnsupported(9))
        ));
    }

    #[test]
    fn restart_hook_fires_once() {
        let count = Arc::new(Mutex::new(0));
        let mut hooks = HookRegistry::new();
        let c = count.clone();
        hooks.register_hook(HookPhase::Restart, Box::new(move |_| *c.lock().unwrap() += 1));
        let img = snapshot(b"x".as_slice(), &meta(0, 0)).unwrap();
        hooks.restore(&img, &Metadata::new()).unwrap();
        assert_eq!(*count.lock().unwrap(), 1);
    }

    #[test]
    fn restart_hooks_run_in_registration_order() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let mut hooks = HookRegistry::new();
        for name in ["A", "B"] {
            let s = seen.clone();
            hooks.register_hook(
                HookPhase::Restart,
                Box::new(move |ctx| s.lock().unwrap().push((name, ctx.metadata[KEY_RANK].clone()))),
            );
        }
        let img = snapshot(b"x".as_slice(), &meta(0, 0)).unwrap();
        let overrides: Metadata = [(KEY_RANK.to_string(), "5".to_string())].into();
        hooks.restore(&img, &overrides).unwrap();
        // hooks see the effective (overridden) metadata
        assert_eq!(
            *seen.lock().unwrap(),
            vec![("A", "5".to_string()), ("B", "5".to_string())]
        );
    }

    #[test]
    fn pre_checkpoint_hook_mutation_is_captured() {
        let mut hooks = HookRegistry::new();
        hooks.register_hook(
            HookPhase::PreCheckpoint,
            Box::new(|ctx| ctx.state.extend_from_slice(b"!")),
        );
        let mut state = b"abc".to_vec();
        let img = hooks.snapshot(&mut state, &meta(0, 0)).unwrap();
        assert_eq!(img.payload, b"abc!");
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let m = Manifest {
            version: VersionTag(0),
            size: 2,
            images: vec![(0, image_file_name(0)), (1, image_file_name(1))],
        };
        let text = m.to_text();
        assert!(text.starts_with("version v0 size 2\nrank 0 rank-0.elck\n"));
        assert_eq!(Manifest::parse(&text).unwrap(), m);
        assert!(Manifest::parse("version v0 size 3\nrank 0 a\n").is_err());
        assert!(Manifest::parse("garbage").is_err());
    }
}
