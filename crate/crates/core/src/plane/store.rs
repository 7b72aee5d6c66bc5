use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::protocol::{decode_frame, encode_sample, Frame, TelemetrySample};

use super::PlaneError;

/// Samples of one device.
#[derive(Debug, Default)]
struct DeviceSamples {
    /// Ordered by (t_ms, seq).
    by_time: BTreeMap<(u64, u64), TelemetrySample>,
    seqs: BTreeSet<u64>,
    file: Option<File>,
}

/// Per-device append-only frame logs with an in-memory time index.
///
/// With a data directory every accepted sample is written to
/// `<dir>/<device>.log` before it is acknowledged; [`SampleStore::open`]
/// replays those logs to rebuild the index.
#[derive(Debug, Default)]
pub struct SampleStore {
    dir: Option<PathBuf>,
    devices: BTreeMap<String, DeviceSamples>,
    /// Lines skipped during replay (torn writes).
    pub replay_skipped: u64,
}

impl SampleStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, PlaneError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| PlaneError::Storage(e.to_string()))?;
        let mut store = SampleStore {
            dir: Some(dir.clone()),
            ..SampleStore::default()
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| PlaneError::Storage(e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "log"))
            .collect();
        paths.sort();
        for path in paths {
            let file = File::open(&path).map_err(|e| PlaneError::Storage(e.to_string()))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| PlaneError::Storage(e.to_string()))?;
                match decode_frame(&line) {
                    Ok(Frame::Sample(s)) => {
                        store.index(s);
                    }
                    _ => store.replay_skipped += 1,
                }
            }
        }
        Ok(store)
    }

    fn index(&mut self, sample: TelemetrySample) -> bool {
        let dev = self.devices.entry(sample.dev.clone()).or_default();
        if !dev.seqs.insert(sample.seq) {
            return false;
        }
        dev.by_time.insert((sample.t_ms, sample.seq), sample);
        true
    }

    pub fn contains(&self, device_id: &str, seq: u64) -> bool {
        self.devices
            .get(device_id)
            .is_some_and(|d| d.seqs.contains(&seq))
    }

    /// Persists and indexes `sample` unless `(dev, seq)` is already stored.
    /// Returns whether it was new.
    pub fn insert(&mut self, sample: &TelemetrySample) -> Result<bool, PlaneError> {
        if self.contains(&sample.dev, sample.seq) {
            return Ok(false);
        }
        let line = encode_sample(sample).map_err(|e| PlaneError::BadRequest(e.to_string()))?;
        // keep exactly what a replay would produce
        let Ok(Frame::Sample(canonical)) = decode_frame(&line) else {
            return Err(PlaneError::BadRequest("sample does not round-trip".into()));
        };
        if let Some(dir) = &self.dir {
            let dev = self.devices.entry(sample.dev.clone()).or_default();
            if dev.file.is_none() {
                let path = dir.join(format!("{}.log", sample.dev));
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| PlaneError::Storage(e.to_string()))?;
                dev.file = Some(f);
            }
            if let Some(f) = dev.file.as_mut() {
                f.write_all(line.as_bytes())
                    .map_err(|e| PlaneError::Storage(e.to_string()))?;
            }
        }
        Ok(self.index(canonical))
    }

    /// Samples with `from_ms <= t_ms <= to_ms`, ascending by time.
    pub fn query(&self, device_id: &str, from_ms: u64, to_ms: u64) -> Vec<TelemetrySample> {
        let Some(dev) = self.devices.get(device_id) else {
            return Vec::new();
        };
        if from_ms > to_ms {
            return Vec::new();
        }
        dev.by_time
            .range((from_ms, 0)..=(to_ms, u64::MAX))
            .map(|(_, s)| s.clone())
            .collect()
    }

    pub fn latest(&self, device_id: &str) -> Option<&TelemetrySample> {
        self.devices
            .get(device_id)
            .and_then(|d| d.by_time.values().next_back())
    }

    pub fn seqs(&self, device_id: &str) -> Vec<u64> {
        self.devices
            .get(device_id)
            .map(|d| d.seqs.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn len(&self, device_id: &str) -> usize {
        self.devices.get(device_id).map_or(0, |d| d.seqs.len())
    }

    /// Smallest stored seq above `after`, used to walk contiguous runs.
    pub fn has_seq_after(&self, device_id: &str, after: u64) -> Option<u64> {
        self.devices
            .get(device_id)
            .and_then(|d| d.seqs.range(after + 1..).next().copied())
    }
}
