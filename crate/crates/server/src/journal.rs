//! Append-only JSON-lines journal of TANs, enqueued entries and sealed
//! batches. Compacted whenever a batch is sealed or data is purged, which
//! also drops the upload-ordered enqueue records of the sealed batch.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::batch::{BatchEntry, SealedBatchRecord};
use crate::tan::UploadAuthorization;
use crate::ServerError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub(crate) enum JournalRecord {
    Tan(UploadAuthorization),
    TanUsed { tan: String },
    Opened { batch_id: u64, opened_at: DateTime<Utc> },
    Enqueue { batch_id: u64, entries: Vec<BatchEntry> },
    Sealed(SealedBatchRecord),
}

#[derive(Debug)]
pub(crate) struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    pub fn open(path: &Path) -> Result<(Self, Vec<JournalRecord>), ServerError> {
        let mut records = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record = serde_json::from_str(&line).map_err(|e| ServerError::Journal {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
                records.push(record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((
            Journal {
                path: path.to_owned(),
                file,
            },
            records,
        ))
    }

    pub fn append(&mut self, records: &[JournalRecord]) -> Result<(), ServerError> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).map_err(std::io::Error::from)?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf)?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn rewrite(
        &mut self,
        records: impl IntoIterator<Item = JournalRecord>,
    ) -> Result<(), ServerError> {
        let tmp = self.path.with_extension("compact");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            for r in records {
                serde_json::to_writer(&mut out, &r).map_err(std::io::Error::from)?;
                out.write_all(b"\n")?;
            }
            out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        Ok(())
    }
}
