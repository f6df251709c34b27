//! Episode files: one JSON header line followed by one JSON record per line.
//!
//! Floats are written in their shortest round-trip form (at most 17
//! significant digits), so reading a file back gives bit-identical values.
//! Missing scanner returns are written as `null`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use sixthsense_core::dataset::{Episode, EpisodeHeader, EpisodeRecord, EPISODE_FORMAT_VERSION};

use crate::error::{io_err, Error, Result};

pub struct EpisodeWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl EpisodeWriter {
    pub fn create(path: &Path, header: &EpisodeHeader) -> Result<Self> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = Self { path: path.to_path_buf(), out: BufWriter::new(file) };
        w.line(header)?;
        Ok(w)
    }

    fn line<T: serde::Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n").map_err(io_err(&self.path))
    }

    pub fn write(&mut self, record: &EpisodeRecord) -> Result<()> {
        self.line(record)
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

pub fn write_episode(path: &Path, episode: &Episode) -> Result<()> {
    let mut w = EpisodeWriter::create(path, &episode.header)?;
    for r in &episode.records {
        w.write(r)?;
    }
    w.finish()
}

/// Streams the records of an episode file.
pub struct EpisodeReader {
    path: PathBuf,
    header: EpisodeHeader,
    lines: Lines<BufReader<File>>,
    line: usize,
    last_timestamp: f64,
}

impl EpisodeReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut lines = BufReader::new(file).lines();
        let first = match lines.next() {
            Some(l) => l.map_err(io_err(path))?,
            None => return Err(Error::Format { path: path.into(), message: "empty file, header missing".into() }),
        };
        // check the version before the full header so old files fail clearly
        let probe: serde_json::Value =
            serde_json::from_str(&first).map_err(|source| Error::Parse { path: path.into(), line: 1, source })?;
        let found = probe.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != EPISODE_FORMAT_VERSION {
            return Err(Error::Version { path: path.into(), found, expected: EPISODE_FORMAT_VERSION });
        }
        let header: EpisodeHeader =
            serde_json::from_value(probe).map_err(|source| Error::Parse { path: path.into(), line: 1, source })?;
        Ok(Self { path: path.into(), header, lines, line: 1, last_timestamp: f64::NEG_INFINITY })
    }

    pub fn header(&self) -> &EpisodeHeader {
        &self.header
    }
}

impl Iterator for EpisodeReader {
    type Item = Result<EpisodeRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let text = match self.lines.next()? {
            Ok(t) => t,
            Err(e) => return Some(Err(io_err(&self.path)(e))),
        };
        self.line += 1;
        let rec: EpisodeRecord = match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(source) => return Some(Err(Error::Parse { path: self.path.clone(), line: self.line, source })),
        };
        if !(rec.timestamp > self.last_timestamp) {
            return Some(Err(Error::Format {
                path: self.path.clone(),
                message: format!("line {}: timestamp {} does not increase", self.line, rec.timestamp),
            }));
        }
        self.last_timestamp = rec.timestamp;
        Some(Ok(rec))
    }
}

pub fn read_episode(path: &Path) -> Result<Episode> {
    let reader = EpisodeReader::open(path)?;
    let header = reader.header().clone();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok(Episode { header, records })
}
