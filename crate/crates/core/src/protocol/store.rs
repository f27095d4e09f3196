//! Verifier-side CRP store: one JSON record per line.
//!
//! Writes append a line and sync it; on open, later lines for the same
//! (device, offset, length) key supersede earlier ones and the file is
//! rewritten with only the live records.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::CrpRecord;

type Key = (String, u32, u32);

#[derive(Debug)]
pub struct CrpStore {
    path: PathBuf,
    records: HashMap<Key, (u64, CrpRecord)>,
    seq: u64,
}

impl CrpStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut store = CrpStore {
            path,
            records: HashMap::new(),
            seq: 0,
        };
        if store.path.exists() {
            let f = File::open(&store.path)?;
            for (lineno, line) in BufReader::new(f).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CrpRecord = serde_json::from_str(&line)
                    .map_err(|e| Error::format(format!("{}:{}: {e}", store.path.display(), lineno + 1)))?;
                rec.validate()?;
                store.seq += 1;
                store.records.insert(rec.key(), (store.seq, rec));
            }
            store.compact()?;
        } else {
            if let Some(dir) = store.path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            File::create(&store.path)?;
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, device_id: &str, offset: u32, length: u32) -> bool {
        self.records.contains_key(&(device_id.to_owned(), offset, length))
    }

    /// Most recently written record for `device_id`.
    pub fn latest_for(&self, device_id: &str) -> Option<&CrpRecord> {
        self.records
            .values()
            .filter(|(_, r)| r.device_id == device_id)
            .max_by_key(|(seq, _)| *seq)
            .map(|(_, r)| r)
    }

    pub fn records(&self) -> impl Iterator<Item = &CrpRecord> {
        let mut v: Vec<_> = self.records.values().collect();
        v.sort_by_key(|(seq, _)| *seq);
        v.into_iter().map(|(_, r)| r)
    }

    pub fn insert(&mut self, record: CrpRecord, overwrite: bool) -> Result<()> {
        record.validate()?;
        let key = record.key();
        if !overwrite && self.records.contains_key(&key) {
            return Err(Error::DuplicateEnrollment(record.device_id));
        }
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        let mut f = OpenOptions::new().append(true).create(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        self.seq += 1;
        self.records.insert(key, (self.seq, record));
        Ok(())
    }

    /// Rewrites the file with only live records, in write order.
    pub fn compact(&mut self) -> Result<()> {
        let tmp = self.path.with_extension("jsonl.tmp");
        {
            let mut f = File::create(&tmp)?;
            for r in self.records() {
                serde_json::to_writer(&mut f, r)?;
                f.write_all(b"\n")?;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamming::HammingVariant;
    use crate::protocol::{Challenge, EcSite};

    fn record(id: &str, bits: &str, offset: u32) -> CrpRecord {
        CrpRecord {
            device_id: id.into(),
            challenge: Challenge {
                offset,
                length: bits.len() as u32,
                nonce: [1; 8],
            },
            enrolled_response: bits.parse().unwrap(),
            variant: Some(HammingVariant::H7_4),
            ec_site: EcSite::Entity,
            mv_count: 5,
            enrolled_at: 1,
        }
    }

    #[test]
    fn duplicate_requires_overwrite_and_latest_wins_after_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("crp.jsonl");
        let mut s = CrpStore::open(&path).unwrap();
        s.insert(record("a", "1010", 0), false).unwrap();
        assert!(matches!(
            s.insert(record("a", "1111", 0), false),
            Err(Error::DuplicateEnrollment(_))
        ));
        s.insert(record("a", "1111", 0), true).unwrap();
        s.insert(record("b", "0000", 0), false).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 3);

        let s = CrpStore::open(&path).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.latest_for("a").unwrap().enrolled_response.to_string(), "1111");
        // compacted on open
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn latest_for_prefers_most_recent_window() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = CrpStore::open(dir.path().join("crp.jsonl")).unwrap();
        s.insert(record("a", "1010", 0), false).unwrap();
        s.insert(record("a", "1100", 4), false).unwrap();
        assert_eq!(s.latest_for("a").unwrap().challenge.offset, 4);
        assert!(s.latest_for("zzz").is_none());
        assert!(s.contains("a", 0, 4));
    }

    #[test]
    fn inconsistent_record_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = CrpStore::open(dir.path().join("crp.jsonl")).unwrap();
        let mut r = record("a", "1010", 0);
        r.challenge.length = 8;
        assert!(s.insert(r, false).is_err());
    }

    #[test]
    fn corrupt_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("crp.jsonl");
        fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(CrpStore::open(&path), Err(Error::Format(_))));
    }
}
