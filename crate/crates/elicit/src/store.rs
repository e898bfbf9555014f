//! Append-only event log with periodic snapshots.
//!
//! Layout of a data directory:
//!
//! ```text
//! events.jsonl    one EventRecord per line, never rewritten
//! snapshot.json   State after some prefix of the log
//! lock            held by the process that owns the directory
//! ```
//!
//! Opening replays the log on top of the snapshot. Records already in the
//! snapshot are skipped by id. A final line that does not parse is a write
//! cut short by a crash and is truncated; a bad line anywhere else is
//! corruption and opening fails.

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use elicit_core::protocol::ProtocolError;
use elicit_core::state::{Event, EventRecord, State};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const LOCK_FILE: &str = "lock";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("data directory {} is in use by another process", .0.display())]
    Locked(PathBuf),
    #[error("{}:{line}: {message}", .path.display())]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("storage is read-only after a write failure")]
    ReadOnly,
    #[error("log replay: {0}")]
    Replay(ProtocolError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.into(), source }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock(Mutex::new(start))
    }

    pub fn set(&self, t: DateTime<Utc>) {
        *self.0.lock().expect("clock lock") = t;
    }

    pub fn advance(&self, seconds: i64) {
        let mut t = self.0.lock().expect("clock lock");
        *t += chrono::Duration::seconds(seconds);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock lock")
    }
}

/// Where appended records go. Files sync their data on every append.
pub trait LogSink: Send {
    fn append(&mut self, line: &[u8]) -> io::Result<()>;
}

impl LogSink for File {
    fn append(&mut self, line: &[u8]) -> io::Result<()> {
        self.write_all(line)?;
        self.sync_data()
    }
}

pub struct Store {
    dir: PathBuf,
    state: State,
    log: Box<dyn LogSink>,
    snapshot_every: u64,
    read_only: bool,
    _lock: File,
}

impl Store {
    /// Opens (creating if needed) a data directory and rebuilds its state.
    /// `snapshot_every` = 0 disables snapshots.
    pub fn open(dir: &Path, snapshot_every: u64) -> Result<Store, StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let lock_path = dir.join(LOCK_FILE);
        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(&lock_path).map_err(io_err(&lock_path))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(StoreError::Locked(dir.into())),
            Err(TryLockError::Error(e)) => return Err(io_err(&lock_path)(e)),
        }
        let state = load(dir, true)?;
        let log_path = dir.join(EVENTS_FILE);
        let log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(io_err(&log_path))?;
        Ok(Store { dir: dir.into(), state, log: Box::new(log), snapshot_every, read_only: false, _lock: lock })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn is_read_only(&self) -> bool {
        self.read_only
    }

    /// Swaps the log sink. Used to exercise write failures.
    pub fn set_sink(&mut self, sink: Box<dyn LogSink>) {
        self.log = sink;
    }

    /// Persists `event`, then applies it. The event must come from one of
    /// the state's `prepare_*` methods.
    pub fn commit(&mut self, event: Event) -> Result<EventRecord, StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        let seq = self.state.last_seq() + 1;
        let record = EventRecord { id: format!("e{seq:08}"), seq, event };
        let mut line = serde_json::to_vec(&record).expect("events serialize");
        line.push(b'\n');
        if let Err(source) = self.log.append(&line) {
            self.read_only = true;
            return Err(StoreError::Io { path: self.dir.join(EVENTS_FILE), source });
        }
        self.state.apply(&record).map_err(StoreError::Replay)?;
        if self.snapshot_every > 0 && seq.is_multiple_of(self.snapshot_every) {
            // the log alone is enough to recover, so a failed snapshot is not fatal
            if let Err(e) = self.snapshot() {
                eprintln!("warning: snapshot failed: {e}");
            }
        }
        Ok(record)
    }

    /// Writes `snapshot.json` atomically.
    pub fn snapshot(&self) -> Result<(), StoreError> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let body = serde_json::to_vec(&self.state).expect("state serializes");
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&body).and_then(|_| f.sync_all()).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

/// Rebuilds the state of a data directory without taking the lock or
/// repairing a torn tail.
pub fn read_state(dir: &Path) -> Result<State, StoreError> {
    load(dir, false)
}

fn load(dir: &Path, repair: bool) -> Result<State, StoreError> {
    let snap = dir.join(SNAPSHOT_FILE);
    let mut state = match fs::read(&snap) {
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
            path: snap.clone(),
            line: e.line(),
            message: e.to_string(),
        })?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => State::new(),
        Err(e) => return Err(io_err(&snap)(e)),
    };
    let path = dir.join(EVENTS_FILE);
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(state),
        Err(e) => return Err(io_err(&path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut good_len = 0u64;
    let mut line_no = 0usize;
    let mut buf = Vec::new();
    let mut pending: Option<(usize, String)> = None;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(io_err(&path))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if let Some((line, message)) = pending.take() {
            return Err(StoreError::Corrupt { path, line, message });
        }
        let text = String::from_utf8_lossy(&buf);
        if text.trim().is_empty() {
            good_len += n as u64;
            continue;
        }
        match serde_json::from_str::<EventRecord>(&text) {
            Ok(record) if buf.ends_with(b"\n") => {
                state.apply(&record).map_err(StoreError::Replay)?;
                good_len += n as u64;
            }
            Ok(_) => pending = Some((line_no, "record is missing its line terminator".into())),
            Err(e) => pending = Some((line_no, e.to_string())),
        }
    }
    if pending.is_some() && repair {
        let f = OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
        f.set_len(good_len).and_then(|_| f.sync_all()).map_err(io_err(&path))?;
    }
    Ok(state)
}
