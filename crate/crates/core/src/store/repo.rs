//! Directory-backed dataset store.
//!
//! ```text
//! <root>/datasets/<id>/base.json        ingested interchange document
//!                     /events.ndjson    one EditEvent per line
//!                     /snapshot.json    cached Snapshot, rewritten periodically
//!                     /pixels/<image>.png
//! ```
//!
//! Writes to one dataset are serialized by a per-dataset lock; readers get
//! owned snapshots.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use image::GrayImage;
use thiserror::Error;

use super::events::{replay, EditAction, EditError, EditEvent, Snapshot};
use super::interchange::{load_interchange, to_json, InterchangeError};
use crate::model::{Dataset, ImageId};

const SNAPSHOT_EVERY: u64 = 64;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("unknown image {0}")]
    UnknownImage(ImageId),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Interchange(#[from] InterchangeError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("pixels: {0}")]
    Pixels(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

struct Live {
    dir: PathBuf,
    base: Dataset,
    events: Vec<EditEvent>,
    head: Snapshot,
}

pub struct Store {
    root: PathBuf,
    live: Mutex<HashMap<String, Arc<Mutex<Live>>>>,
    create: Mutex<()>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn valid_id(id: &str) -> bool {
    id.strip_prefix("ds").is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

/// Writes via a temporary file and rename so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_events(path: &Path) -> Result<Vec<EditEvent>, StoreError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(io_err(path)(e)),
    };
    let torn_tail = !text.is_empty() && !text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out: Vec<EditEvent> = Vec::with_capacity(lines.len());
    for (k, line) in lines.iter().enumerate() {
        let corrupt = |message: String| StoreError::Corrupt { path: path.to_path_buf(), line: k + 1, message };
        match serde_json::from_str::<EditEvent>(line) {
            Ok(e) => {
                if e.seq != out.len() as u64 + 1 {
                    return Err(corrupt(format!("expected seq {}, found {}", out.len() + 1, e.seq)));
                }
                out.push(e);
            }
            // A write cut short by a crash; the append never returned.
            Err(_) if torn_tail && k + 1 == lines.len() => break,
            Err(e) => return Err(corrupt(e.to_string())),
        }
    }
    Ok(out)
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let datasets = root.join("datasets");
        fs::create_dir_all(&datasets).map_err(io_err(&datasets))?;
        Ok(Self { root, live: Mutex::new(HashMap::new()), create: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(id)
    }

    /// Dataset ids in creation order.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("datasets");
        let mut ids: Vec<(u64, String)> = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let name = entry.map_err(io_err(&dir))?.file_name().to_string_lossy().into_owned();
            if valid_id(&name) && self.dir(&name).join("base.json").exists() {
                ids.push((name[2..].parse().unwrap_or(u64::MAX), name));
            }
        }
        ids.sort();
        Ok(ids.into_iter().map(|(_, s)| s).collect())
    }

    /// Persists `ds` as a new dataset and returns its id. Names need not be
    /// unique.
    pub fn create(&self, mut ds: Dataset) -> Result<String, StoreError> {
        let _guard = lock(&self.create);
        let next = self
            .list()?
            .iter()
            .filter_map(|s| s[2..].parse::<u64>().ok())
            .max()
            .map_or(1, |m| m + 1);
        let id = format!("ds{next}");
        let dir = self.dir(&id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        ds.id = id.clone();
        let events = dir.join("events.ndjson");
        File::create(&events).and_then(|f| f.sync_all()).map_err(io_err(&events))?;
        write_atomic(&dir.join("base.json"), to_json(&ds).as_bytes())?;
        Ok(id)
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<Live>>, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::UnknownDataset(id.to_string()));
        }
        let mut live = lock(&self.live);
        if let Some(h) = live.get(id) {
            return Ok(h.clone());
        }
        let dir = self.dir(id);
        let base_path = dir.join("base.json");
        if !base_path.exists() {
            return Err(StoreError::UnknownDataset(id.to_string()));
        }
        let base = load_interchange(&base_path)?;
        let events = read_events(&dir.join("events.ndjson"))?;
        let cached: Option<Snapshot> = fs::read_to_string(dir.join("snapshot.json"))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .filter(|s: &Snapshot| s.seq <= events.len() as u64);
        let head = match cached {
            Some(mut s) => {
                for e in &events[s.seq as usize..] {
                    s.apply(e)?;
                }
                s
            }
            None => replay(&base, &events, None)?,
        };
        let h = Arc::new(Mutex::new(Live { dir, base, events, head }));
        live.insert(id.to_string(), h.clone());
        Ok(h)
    }

    /// State after event `upto`, or the latest state.
    pub fn snapshot(&self, id: &str, upto: Option<u64>) -> Result<Snapshot, StoreError> {
        let h = self.handle(id)?;
        let live = lock(&h);
        match upto {
            Some(u) if u < live.head.seq => Ok(replay(&live.base, &live.events, Some(u))?),
            _ => Ok(live.head.clone()),
        }
    }

    pub fn base(&self, id: &str) -> Result<Dataset, StoreError> {
        let h = self.handle(id)?;
        let base = lock(&h).base.clone();
        Ok(base)
    }

    pub fn events(&self, id: &str) -> Result<Vec<EditEvent>, StoreError> {
        let h = self.handle(id)?;
        let events = lock(&h).events.clone();
        Ok(events)
    }

    pub fn append(&self, id: &str, actor: &str, action: EditAction) -> Result<EditEvent, StoreError> {
        self.append_with(id, actor, Utc::now(), |_| Ok(action))
    }

    /// Builds the action from the current head under the dataset's write
    /// lock, applies it and appends it durably. A rejected action appends
    /// nothing.
    pub fn append_with(
        &self,
        id: &str,
        actor: &str,
        timestamp: DateTime<Utc>,
        build: impl FnOnce(&Snapshot) -> Result<EditAction, StoreError>,
    ) -> Result<EditEvent, StoreError> {
        let h = self.handle(id)?;
        let mut live = lock(&h);
        let action = build(&live.head)?;
        let event = EditEvent { seq: live.head.seq + 1, actor: actor.to_string(), timestamp, action };
        let mut next = live.head.clone();
        next.apply(&event)?;

        let path = live.dir.join("events.ndjson");
        let mut line = serde_json::to_string(&event).expect("event serializes");
        line.push('\n');
        let mut f = OpenOptions::new().append(true).create(true).open(&path).map_err(io_err(&path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))?;

        live.events.push(event.clone());
        live.head = next;
        if event.seq.is_multiple_of(SNAPSHOT_EVERY) {
            let bytes = serde_json::to_vec(&live.head).expect("snapshot serializes");
            // The log is authoritative; a failed cache write only costs replay time.
            if let Err(e) = write_atomic(&live.dir.join("snapshot.json"), &bytes) {
                tracing::warn!("snapshot cache not written: {e}");
            }
        }
        Ok(event)
    }

    fn pixel_path(&self, id: &str, image: ImageId) -> PathBuf {
        self.dir(id).join("pixels").join(format!("{image}.png"))
    }

    /// Stores the image's pixels after checking they decode to its size.
    pub fn put_pixels(&self, id: &str, image: ImageId, png: &[u8]) -> Result<(), StoreError> {
        let h = self.handle(id)?;
        let live = lock(&h);
        let rec = live.head.dataset.image(image).ok_or(StoreError::UnknownImage(image))?;
        let decoded = image::load_from_memory(png).map_err(|e| StoreError::Pixels(e.to_string()))?;
        if (decoded.width(), decoded.height()) != (rec.width, rec.height) {
            return Err(StoreError::Pixels(format!(
                "pixels are {}x{}, image is {}x{}",
                decoded.width(),
                decoded.height(),
                rec.width,
                rec.height
            )));
        }
        let dir = live.dir.join("pixels");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_atomic(&self.pixel_path(id, image), png)
    }

    pub fn pixels_png(&self, id: &str, image: ImageId) -> Result<Option<Vec<u8>>, StoreError> {
        let h = self.handle(id)?;
        if lock(&h).head.dataset.image(image).is_none() {
            return Err(StoreError::UnknownImage(image));
        }
        let path = self.pixel_path(id, image);
        match fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Grayscale pixels, when stored.
    pub fn gray(&self, id: &str, image: ImageId) -> Result<Option<GrayImage>, StoreError> {
        match self.pixels_png(id, image)? {
            Some(b) => Ok(Some(
                image::load_from_memory(&b).map_err(|e| StoreError::Pixels(e.to_string()))?.to_luma8(),
            )),
            None => Ok(None),
        }
    }
}
