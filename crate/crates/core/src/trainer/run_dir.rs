use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Checkpoint, EpochRecord, TrainError};

pub const BEST_MARKER: &str = "best";
pub const LOG_FILE: &str = "train-log.jsonl";

/// `<run>/<slot>/epoch-<n>` checkpoints, a `best` marker naming one of
/// them, and the line-delimited training log. Only the latest and the best
/// checkpoint are kept on disk.
#[derive(Clone, Debug)]
pub struct RunDir {
    dir: PathBuf,
}

fn epoch_of(name: &str) -> Option<usize> {
    name.strip_prefix("epoch-")?.parse().ok()
}

impl RunDir {
    pub fn create(run: &Path, slot: &str) -> Result<Self, TrainError> {
        let dir = run.join(slot);
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn open(run: &Path, slot: &str) -> Self {
        Self { dir: run.join(slot) }
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn epoch_path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch-{epoch}"))
    }

    pub fn epochs(&self) -> Result<Vec<usize>, TrainError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            if let Some(n) = entry?.file_name().to_str().and_then(epoch_of) {
                out.push(n);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn best_epoch(&self) -> Result<Option<usize>, TrainError> {
        let path = self.dir.join(BEST_MARKER);
        if !path.exists() {
            return Ok(None);
        }
        Ok(epoch_of(fs::read_to_string(path)?.trim()))
    }

    pub fn latest(&self) -> Result<Option<Checkpoint>, TrainError> {
        match self.epochs()?.last() {
            Some(&n) => Ok(Some(Checkpoint::load(&self.epoch_path(n))?)),
            None => Ok(None),
        }
    }

    pub fn best(&self) -> Result<Option<Checkpoint>, TrainError> {
        match self.best_epoch()? {
            Some(n) => Ok(Some(Checkpoint::load(&self.epoch_path(n))?)),
            None => Ok(None),
        }
    }

    /// Epoch hook: saves the checkpoint, moves the marker, appends the log
    /// line and prunes superseded checkpoints.
    pub fn record(&self, rec: &EpochRecord, ckpt: &Checkpoint, is_best: bool) -> Result<(), TrainError> {
        ckpt.save(&self.epoch_path(ckpt.epoch))?;
        if is_best {
            fs::write(self.dir.join(BEST_MARKER), format!("epoch-{}\n", ckpt.epoch))?;
        }
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(LOG_FILE))?;
        writeln!(log, "{}", serde_json::to_string(rec).expect("record serializes"))?;
        let best = self.best_epoch()?;
        for n in self.epochs()? {
            if n != ckpt.epoch && Some(n) != best {
                fs::remove_file(self.epoch_path(n))?;
            }
        }
        Ok(())
    }
}
