use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::StorageError;
use crate::message::{Entry, Snapshot};
use crate::{LogIndex, NodeId, Term};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardState {
    pub term: Term,
    pub voted_for: Option<NodeId>,
}

/// Everything a node needs to resume after a restart.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PersistentState {
    pub hard_state: HardState,
    pub snapshot: Option<Snapshot>,
    /// Entries following the snapshot, contiguous.
    pub entries: Vec<Entry>,
}

impl PersistentState {
    pub fn is_empty(&self) -> bool {
        self.hard_state == HardState::default() && self.snapshot.is_none() && self.entries.is_empty()
    }
}

/// Durable sink for Raft state. Every call must be durable when it returns.
pub trait Storage {
    fn load(&mut self) -> Result<PersistentState, StorageError>;
    fn save_hard_state(&mut self, hard_state: &HardState) -> Result<(), StorageError>;
    fn append(&mut self, entries: &[Entry]) -> Result<(), StorageError>;
    /// Removes entries with index >= `index`.
    fn truncate_from(&mut self, index: LogIndex) -> Result<(), StorageError>;
    /// Installs a snapshot; `retained` is the full log suffix that remains after it.
    fn save_snapshot(&mut self, snapshot: &Snapshot, retained: &[Entry]) -> Result<(), StorageError>;
}

impl<S: Storage + ?Sized> Storage for Box<S> {
    fn load(&mut self) -> Result<PersistentState, StorageError> {
        (**self).load()
    }
    fn save_hard_state(&mut self, hard_state: &HardState) -> Result<(), StorageError> {
        (**self).save_hard_state(hard_state)
    }
    fn append(&mut self, entries: &[Entry]) -> Result<(), StorageError> {
        (**self).append(entries)
    }
    fn truncate_from(&mut self, index: LogIndex) -> Result<(), StorageError> {
        (**self).truncate_from(index)
    }
    fn save_snapshot(&mut self, snapshot: &Snapshot, retained: &[Entry]) -> Result<(), StorageError> {
        (**self).save_snapshot(snapshot, retained)
    }
}

/// Shared in-memory storage. Clones share the same state, so a simulation can
/// drop a node and rebuild it from the surviving handle.
#[derive(Debug, Clone, Default)]
pub struct MemStorage {
    state: Arc<Mutex<PersistentState>>,
}

impl MemStorage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> PersistentState {
        self.state.lock().expect("storage lock poisoned").clone()
    }
}

impl Storage for MemStorage {
    fn load(&mut self) -> Result<PersistentState, StorageError> {
        Ok(self.state())
    }

    fn save_hard_state(&mut self, hard_state: &HardState) -> Result<(), StorageError> {
        self.state.lock().expect("storage lock poisoned").hard_state = *hard_state;
        Ok(())
    }

    fn append(&mut self, entries: &[Entry]) -> Result<(), StorageError> {
        self.state.lock().expect("storage lock poisoned").entries.extend_from_slice(entries);
        Ok(())
    }

    fn truncate_from(&mut self, index: LogIndex) -> Result<(), StorageError> {
        self.state.lock().expect("storage lock poisoned").entries.retain(|e| e.index < index);
        Ok(())
    }

    fn save_snapshot(&mut self, snapshot: &Snapshot, retained: &[Entry]) -> Result<(), StorageError> {
        let mut state = self.state.lock().expect("storage lock poisoned");
        state.snapshot = Some(snapshot.clone());
        state.entries = retained.to_vec();
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum WalRecord {
    HardState(HardState),
    Entries { entries: Vec<Entry> },
    Truncate { from: LogIndex },
}

const WAL_FILE: &str = "wal.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

/// Line-delimited JSON write-ahead log plus a snapshot file in one directory.
///
/// A torn final WAL line (crash mid-write) is discarded on load; corruption
/// anywhere else is an error.
#[derive(Debug)]
pub struct FileStorage {
    dir: PathBuf,
    wal: Option<File>,
    fsync: bool,
    hard_state: HardState,
}

impl FileStorage {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StorageError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, wal: None, fsync: true, hard_state: HardState::default() })
    }

    /// Skips `fsync` after writes. Only for tests.
    pub fn without_fsync(mut self) -> Self {
        self.fsync = false;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn wal_path(&self) -> PathBuf {
        self.dir.join(WAL_FILE)
    }

    fn snapshot_path(&self) -> PathBuf {
        self.dir.join(SNAPSHOT_FILE)
    }

    fn wal(&mut self) -> Result<&mut File, StorageError> {
        if self.wal.is_none() {
            let file = OpenOptions::new().create(true).append(true).open(self.wal_path())?;
            self.wal = Some(file);
        }
        Ok(self.wal.as_mut().expect("wal opened above"))
    }

    fn write_record(&mut self, record: &WalRecord) -> Result<(), StorageError> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let fsync = self.fsync;
        let wal = self.wal()?;
        wal.write_all(&line)?;
        if fsync {
            wal.sync_data()?;
        }
        Ok(())
    }

    fn write_atomically(&self, path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
        let tmp = path.with_extension("tmp");
        {
            let mut file = File::create(&tmp)?;
            file.write_all(bytes)?;
            if self.fsync {
                file.sync_all()?;
            }
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    fn rewrite_wal(&mut self, entries: &[Entry]) -> Result<(), StorageError> {
        let mut buf = Vec::new();
        for record in [
            WalRecord::HardState(self.hard_state),
            WalRecord::Entries { entries: entries.to_vec() },
        ] {
            serde_json::to_writer(&mut buf, &record)?;
            buf.push(b'\n');
        }
        self.wal = None;
        let path = self.wal_path();
        self.write_atomically(&path, &buf)
    }
}

impl Storage for FileStorage {
    fn load(&mut self) -> Result<PersistentState, StorageError> {
        let snapshot = match fs::read(self.snapshot_path()) {
            Ok(bytes) => Some(serde_json::from_slice::<Snapshot>(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };

        let mut hard_state = HardState::default();
        let mut entries: Vec<Entry> = Vec::new();
        let mut torn_tail = false;
        match File::open(self.wal_path()) {
            Ok(file) => {
                let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
                let count = lines.len();
                for (n, line) in lines.into_iter().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let record = match serde_json::from_str::<WalRecord>(&line) {
                        Ok(record) => record,
                        Err(_) if n + 1 == count => {
                            torn_tail = true;
                            break;
                        }
                        Err(e) => return Err(StorageError::Corrupt(format!("wal line {}: {e}", n + 1))),
                    };
                    match record {
                        WalRecord::HardState(hs) => hard_state = hs,
                        WalRecord::Entries { entries: batch } => {
                            for entry in batch {
                                entries.retain(|e| e.index < entry.index);
                                entries.push(entry);
                            }
                        }
                        WalRecord::Truncate { from } => entries.retain(|e| e.index < from),
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }

        let base = snapshot.as_ref().map_or(0, |s| s.last_index);
        entries.retain(|e| e.index > base);
        for (i, entry) in entries.iter().enumerate() {
            if entry.index != base + 1 + i as u64 {
                return Err(StorageError::Corrupt(format!(
                    "log gap: expected index {}, found {}",
                    base + 1 + i as u64,
                    entry.index
                )));
            }
        }
        self.hard_state = hard_state;
        if torn_tail {
            self.rewrite_wal(&entries)?;
        }
        Ok(PersistentState { hard_state, snapshot, entries })
    }

    fn save_hard_state(&mut self, hard_state: &HardState) -> Result<(), StorageError> {
        self.hard_state = *hard_state;
        self.write_record(&WalRecord::HardState(*hard_state))
    }

    fn append(&mut self, entries: &[Entry]) -> Result<(), StorageError> {
        if entries.is_empty() {
            return Ok(());
        }
        self.write_record(&WalRecord::Entries { entries: entries.to_vec() })
    }

    fn truncate_from(&mut self, index: LogIndex) -> Result<(), StorageError> {
        self.write_record(&WalRecord::Truncate { from: index })
    }

    fn save_snapshot(&mut self, snapshot: &Snapshot, retained: &[Entry]) -> Result<(), StorageError> {
        let path = self.snapshot_path();
        self.write_atomically(&path, &serde_json::to_vec(snapshot)?)?;
        self.rewrite_wal(retained)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(index: LogIndex, term: Term) -> Entry {
        Entry { index, term, data: format!("cmd-{index}").into_bytes() }
    }

    #[test]
    fn file_storage_replays_wal() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = FileStorage::open(dir.path()).unwrap().without_fsync();
            s.save_hard_state(&HardState { term: 3, voted_for: Some(2) }).unwrap();
            s.append(&[entry(1, 1), entry(2, 1), entry(3, 2)]).unwrap();
            s.truncate_from(3).unwrap();
            s.append(&[entry(3, 3)]).unwrap();
        }
        let mut s = FileStorage::open(dir.path()).unwrap();
        let state = s.load().unwrap();
        assert_eq!(state.hard_state, HardState { term: 3, voted_for: Some(2) });
        assert_eq!(state.entries, vec![entry(1, 1), entry(2, 1), entry(3, 3)]);
        assert!(state.snapshot.is_none());
    }

    #[test]
    fn snapshot_rewrites_wal() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = FileStorage::open(dir.path()).unwrap().without_fsync();
            s.save_hard_state(&HardState { term: 2, voted_for: None }).unwrap();
            s.append(&(1..=6).map(|i| entry(i, 2)).collect::<Vec<_>>()).unwrap();
            let snap = Snapshot { last_index: 4, last_term: 2, data: b"state".to_vec() };
            s.save_snapshot(&snap, &[entry(5, 2), entry(6, 2)]).unwrap();
            s.append(&[entry(7, 2)]).unwrap();
        }
        let state = FileStorage::open(dir.path()).unwrap().load().unwrap();
        assert_eq!(state.snapshot.as_ref().unwrap().last_index, 4);
        assert_eq!(state.entries.iter().map(|e| e.index).collect::<Vec<_>>(), vec![5, 6, 7]);
        assert_eq!(state.hard_state.term, 2);
    }

    #[test]
    fn torn_tail_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = FileStorage::open(dir.path()).unwrap().without_fsync();
            s.append(&[entry(1, 1), entry(2, 1)]).unwrap();
        }
        let mut wal = OpenOptions::new().append(true).open(dir.path().join(WAL_FILE)).unwrap();
        wal.write_all(b"{\"record\":\"entries\",\"entries\":[{\"ind").unwrap();
        drop(wal);
        let state = FileStorage::open(dir.path()).unwrap().load().unwrap();
        assert_eq!(state.entries.len(), 2);
        // the tail was dropped on disk too, so later appends stay readable
        let mut s = FileStorage::open(dir.path()).unwrap();
        s.load().unwrap();
        s.append(&[entry(3, 1)]).unwrap();
        assert_eq!(FileStorage::open(dir.path()).unwrap().load().unwrap().entries.len(), 3);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(WAL_FILE), "garbage\n{\"record\":\"truncate\",\"from\":1}\n").unwrap();
        let err = FileStorage::open(dir.path()).unwrap().load().unwrap_err();
        assert!(matches!(err, StorageError::Corrupt(_)));
    }
}
