//! On-disk cell results: one `tower_id,x` file per finished cell plus an
//! append-only journal. Cell files are written to a temporary name and
//! renamed, so a crash leaves at most one orphaned temporary file.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::cdr::{TowerId, TowerRegistry};
use crate::error::{Error, Result};
use crate::hda::CellCounts;
use crate::synth::Tally;

const JOURNAL: &str = "journal.csv";
const JOURNAL_HEADER: &str =
    "hda,window,status,users_active,users_assigned,ties,correct,total,migrant_correct,migrant_total,resident_correct,resident_total,detail";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredAccuracy {
    pub overall: Tally,
    pub migrants: Tally,
    pub non_migrants: Tally,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredCell {
    pub counts: CellCounts,
    pub accuracy: Option<StoredAccuracy>,
}

/// Replaces characters that are awkward in file names.
pub fn file_stem(hda: &str, window: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
            .collect()
    };
    format!("{}__{}", clean(hda), clean(window))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[derive(Debug)]
pub struct CellStore {
    dir: PathBuf,
    journal: File,
}

impl CellStore {
    /// Opens `dir`. Without `resume` any previous contents are discarded.
    pub fn open(dir: &Path, resume: bool) -> Result<Self> {
        if !resume && dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(JOURNAL);
        let fresh = !path.exists();
        let mut journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if fresh {
            writeln!(journal, "{JOURNAL_HEADER}").map_err(|e| Error::io(&path, e))?;
        } else {
            // a torn last line must not swallow the next row
            let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if text.last().is_some_and(|&b| b != b'\n') {
                writeln!(journal).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(CellStore {
            dir: dir.to_path_buf(),
            journal,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn cell_path(&self, hda: &str, window: &str) -> PathBuf {
        self.dir.join(format!("{}.csv", file_stem(hda, window)))
    }

    /// Cells recorded as finished whose count file is present and matches the registry.
    /// A torn last journal line is ignored.
    pub fn load(&self, registry: &TowerRegistry) -> Result<BTreeMap<(String, String), StoredCell>> {
        let path = self.dir.join(JOURNAL);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BTreeMap::new();
        for line in BufReader::new(file).lines().skip(1) {
            let line = line.map_err(|e| Error::io(&path, e))?;
            let Some(row) = parse_journal_line(&line) else { continue };
            let key = (row.hda.clone(), row.window.clone());
            if row.status != "ok" {
                out.remove(&key);
                continue;
            }
            if let Some(x) = self.read_counts(&row.hda, &row.window, registry) {
                let counts = CellCounts {
                    x,
                    users_active: row.users_active,
                    users_assigned: row.users_assigned,
                    ties: row.ties,
                };
                out.insert(key, StoredCell { counts, accuracy: row.accuracy });
            }
        }
        Ok(out)
    }

    fn read_counts(&self, hda: &str, window: &str, registry: &TowerRegistry) -> Option<Vec<u64>> {
        let mut rdr = csv::Reader::from_path(self.cell_path(hda, window)).ok()?;
        let mut x = Vec::with_capacity(registry.len());
        for (rec, tower) in rdr.records().zip(registry.towers()) {
            let rec = rec.ok()?;
            if rec.len() != 2 || rec[0].parse::<u32>().ok().map(TowerId) != Some(tower.id) {
                return None;
            }
            x.push(rec[1].parse().ok()?);
        }
        (x.len() == registry.len()).then_some(x)
    }

    /// Persists a finished cell, then journals it.
    pub fn save(&mut self, hda: &str, window: &str, cell: &StoredCell, registry: &TowerRegistry) -> Result<()> {
        let mut body = String::from("tower_id,x\n");
        for (t, x) in registry.towers().iter().zip(&cell.counts.x) {
            body.push_str(&format!("{},{}\n", t.id, x));
        }
        write_atomic(&self.cell_path(hda, window), body.as_bytes())?;
        let acc = cell.accuracy.as_ref();
        let tally = |f: fn(&StoredAccuracy) -> Tally| acc.map(f);
        let fields = [
            tally(|a| a.overall),
            tally(|a| a.migrants),
            tally(|a| a.non_migrants),
        ];
        let mut row = vec![
            hda.to_string(),
            window.to_string(),
            "ok".to_string(),
            cell.counts.users_active.to_string(),
            cell.counts.users_assigned.to_string(),
            cell.counts.ties.to_string(),
        ];
        for t in fields {
            row.push(t.map(|t| t.correct.to_string()).unwrap_or_default());
            row.push(t.map(|t| t.total.to_string()).unwrap_or_default());
        }
        row.push(String::new());
        self.append(&row)
    }

    pub fn record_failure(&mut self, hda: &str, window: &str, detail: &str) -> Result<()> {
        let mut row = vec![hda.to_string(), window.to_string(), "failed".to_string()];
        row.extend(std::iter::repeat_n(String::new(), 9));
        row.push(detail.to_string());
        self.append(&row)
    }

    fn append(&mut self, row: &[String]) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(row)?;
        let bytes = w.into_inner().map_err(|e| Error::Sweep(e.to_string()))?;
        let path = self.dir.join(JOURNAL);
        self.journal.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
        self.journal.flush().map_err(|e| Error::io(&path, e))
    }
}

struct JournalRow {
    hda: String,
    window: String,
    status: String,
    users_active: u64,
    users_assigned: u64,
    ties: u64,
    accuracy: Option<StoredAccuracy>,
}

fn parse_journal_line(line: &str) -> Option<JournalRow> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(line.as_bytes());
    let rec = rdr.records().next()?.ok()?;
    if rec.len() != 13 {
        return None;
    }
    let status = rec[2].to_string();
    let num = |i: usize| rec[i].parse::<u64>().ok();
    let (users_active, users_assigned, ties) = if status == "ok" {
        (num(3)?, num(4)?, num(5)?)
    } else {
        (0, 0, 0)
    };
    let tally = |i: usize| {
        Some(Tally {
            correct: num(i)?,
            total: num(i + 1)?,
        })
    };
    let accuracy = match (tally(6), tally(8), tally(10)) {
        (Some(overall), Some(migrants), Some(non_migrants)) => Some(StoredAccuracy {
            overall,
            migrants,
            non_migrants,
        }),
        _ => None,
    };
    Some(JournalRow {
        hda: rec[0].to_string(),
        window: rec[1].to_string(),
        status,
        users_active,
        users_assigned,
        ties,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdr::Tower;

    fn registry() -> TowerRegistry {
        TowerRegistry::new(
            (1..=3)
                .map(|i| Tower {
                    id: TowerId(i),
                    lon: 0.0,
                    lat: 0.0,
                    population: 10.0,
                })
                .collect(),
        )
        .unwrap()
    }

    fn cell(x: Vec<u64>) -> StoredCell {
        StoredCell {
            counts: CellCounts {
                users_active: x.iter().sum::<u64>() + 1,
                users_assigned: x.iter().sum(),
                ties: 1,
                x,
            },
            accuracy: None,
        }
    }

    #[test]
    fn save_load_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let reg = registry();
        let mut store = CellStore::open(dir.path(), false).unwrap();
        store.save("MA", "14d-01", &cell(vec![1, 2, 3]), &reg).unwrap();
        let mut with_acc = cell(vec![0, 0, 5]);
        with_acc.accuracy = Some(StoredAccuracy {
            overall: Tally { correct: 4, total: 5 },
            migrants: Tally { correct: 0, total: 1 },
            non_migrants: Tally { correct: 4, total: 4 },
        });
        store.save("TC-19-9", "full", &with_acc, &reg).unwrap();
        store.record_failure("DD", "full", "disk, full").unwrap();
        drop(store);

        let store = CellStore::open(dir.path(), true).unwrap();
        let loaded = store.load(&reg).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[&("MA".into(), "14d-01".into())], cell(vec![1, 2, 3]));
        assert_eq!(loaded[&("TC-19-9".into(), "full".into())], with_acc);

        let fresh = CellStore::open(dir.path(), false).unwrap();
        assert!(fresh.load(&reg).unwrap().is_empty());
    }

    #[test]
    fn torn_journal_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let reg = registry();
        let mut store = CellStore::open(dir.path(), false).unwrap();
        store.save("MA", "full", &cell(vec![1, 1, 1]), &reg).unwrap();
        drop(store);
        let mut j = OpenOptions::new().append(true).open(dir.path().join(JOURNAL)).unwrap();
        write!(j, "DD,full,ok,3").unwrap();
        drop(j);
        let mut store = CellStore::open(dir.path(), true).unwrap();
        assert_eq!(store.load(&reg).unwrap().len(), 1);
        store.save("DD", "full", &cell(vec![0, 1, 0]), &reg).unwrap();
        assert_eq!(store.load(&reg).unwrap().len(), 2);
    }

    #[test]
    fn stems_are_file_safe() {
        assert_eq!(file_stem("TC-19-9-WE", "month-2007-06"), "TC-19-9-WE__month-2007-06");
        assert_eq!(file_stem("a/b", "c d"), "a_b__c_d");
    }
}
