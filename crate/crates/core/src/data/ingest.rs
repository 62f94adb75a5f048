//! CSV ingestion and export.
//!
//! Schema (header required): `user_id,item_id,scenario_id,timestamp,click`
//! with integer fields and click in {0,1}, plus an optional `interest`
//! column carrying ground-truth interest for synthetic exports. Raw ids
//! are remapped to dense ids in order of first appearance; the mapping
//! persists as a two-column `raw_id,dense_id` CSV per entity.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{DataError, InteractionRecord};

/// Column names to resolve in the header.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub user: String,
    pub item: String,
    pub scenario: String,
    pub timestamp: String,
    pub click: String,
    pub interest: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            user: "user_id".into(),
            item: "item_id".into(),
            scenario: "scenario_id".into(),
            timestamp: "timestamp".into(),
            click: "click".into(),
            interest: "interest".into(),
        }
    }
}

/// Raw-to-dense id mapping for one entity, in first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    map: HashMap<u64, u32>,
    raw: Vec<u64>,
}

impl Vocab {
    pub fn intern(&mut self, raw: u64) -> u32 {
        *self.map.entry(raw).or_insert_with(|| {
            self.raw.push(raw);
            (self.raw.len() - 1) as u32
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw_of(&self, dense: u32) -> Option<u64> {
        self.raw.get(dense as usize).copied()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Vocabularies {
    pub users: Vocab,
    pub items: Vocab,
    pub scenarios: Vocab,
}

fn parse_int(field: &str, name: &str, line: usize) -> Result<i64, DataError> {
    field.trim().parse::<i64>().map_err(|_| DataError::Parse {
        line,
        msg: format!("column `{name}`: expected integer, got `{}`", field.trim()),
    })
}

/// Parses an interaction log, building dense vocabularies in file order.
pub fn read_events_csv(
    path: &Path,
    schema: &CsvSchema,
) -> Result<(Vec<InteractionRecord>, Vocabularies), DataError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Empty)?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| -> Result<usize, DataError> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| DataError::MissingColumn { name: name.into() })
    };
    let ui = find(&schema.user)?;
    let ii = find(&schema.item)?;
    let si = find(&schema.scenario)?;
    let ti = find(&schema.timestamp)?;
    let ci = find(&schema.click)?;
    let gi = cols.iter().position(|c| *c == schema.interest);

    let mut vocabs = Vocabularies::default();
    let mut records = Vec::new();
    for (lineno, raw_line) in lines {
        let line = lineno + 1; // 1-based, matching editors
        if raw_line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw_line.split(',').collect();
        let need = [ui, ii, si, ti, ci]
            .iter()
            .chain(gi.iter())
            .copied()
            .max()
            .unwrap_or(0);
        if fields.len() <= need {
            return Err(DataError::Parse {
                line,
                msg: format!("expected at least {} columns, got {}", need + 1, fields.len()),
            });
        }
        let user = parse_int(fields[ui], &schema.user, line)? as u64;
        let item = parse_int(fields[ii], &schema.item, line)? as u64;
        let scen = parse_int(fields[si], &schema.scenario, line)? as u64;
        let timestamp = parse_int(fields[ti], &schema.timestamp, line)?;
        let click = match fields[ci].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(DataError::InvalidClick {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let interest = match gi {
            None => None,
            Some(g) => {
                let f = fields[g].trim();
                if f.is_empty() {
                    None
                } else {
                    Some(f.parse::<f64>().map_err(|_| DataError::Parse {
                        line,
                        msg: format!("column `{}`: expected real, got `{f}`", schema.interest),
                    })?)
                }
            }
        };
        records.push(InteractionRecord {
            user_id: vocabs.users.intern(user),
            item_id: vocabs.items.intern(item),
            scenario_id: vocabs.scenarios.intern(scen),
            timestamp,
            click,
            interest,
        });
    }
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    Ok((records, vocabs))
}

/// Writes records in the standard schema; the `interest` column is
/// included when any record carries one.
pub fn write_events_csv(path: &Path, records: &[InteractionRecord]) -> Result<(), DataError> {
    let with_interest = records.iter().any(|r| r.interest.is_some());
    let mut out = String::new();
    out.push_str("user_id,item_id,scenario_id,timestamp,click");
    if with_interest {
        out.push_str(",interest");
    }
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.user_id, r.item_id, r.scenario_id, r.timestamp, r.click as u8
        ));
        if with_interest {
            match r.interest {
                Some(m) => out.push_str(&format!(",{m}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Persists a vocabulary as `raw_id,dense_id` rows.
pub fn write_vocab_csv(path: &Path, vocab: &Vocab) -> Result<(), DataError> {
    let mut out = String::from("raw_id,dense_id\n");
    for dense in 0..vocab.len() {
        out.push_str(&format!("{},{}\n", vocab.raw_of(dense as u32).unwrap(), dense));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(name: &str, content: &str) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(format!("mscan-ingest-{name}-{}", std::process::id()));
        fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn happy_path_three_rows() {
        let path = write_tmp(
            "ok",
            "user_id,item_id,scenario_id,timestamp,click\n10,100,1,5,1\n11,100,2,6,0\n10,101,2,7,1\n",
        );
        let (records, vocabs) = read_events_csv(&path, &CsvSchema::default()).unwrap();
        assert_eq!(records.len(), 3);
        // Dense ids in first-appearance order.
        assert_eq!(records[0].user_id, 0);
        assert_eq!(records[1].user_id, 1);
        assert_eq!(records[2].user_id, 0);
        assert_eq!(vocabs.items.len(), 2);
        assert!(records[2].click);
        fs::remove_file(path).ok();
    }

    #[test]
    fn click_outside_domain_names_the_line() {
        let path = write_tmp(
            "click2",
            "user_id,item_id,scenario_id,timestamp,click\n1,1,1,1,1\n1,2,1,2,2\n",
        );
        let err = read_events_csv(&path, &CsvSchema::default()).unwrap_err();
        match err {
            DataError::InvalidClick { line, value } => {
                assert_eq!(line, 3);
                assert_eq!(value, "2");
            }
            other => panic!("unexpected {other:?}"),
        }
        fs::remove_file(path).ok();
    }

    #[test]
    fn missing_column_is_reported() {
        let path = write_tmp("nocol", "user_id,item_id,scenario_id,timestamp\n1,1,1,1\n");
        let err = read_events_csv(&path, &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn { name } if name == "click"));
        fs::remove_file(path).ok();
    }

    #[test]
    fn identical_files_give_identical_outputs() {
        let content = "user_id,item_id,scenario_id,timestamp,click\n7,3,1,1,0\n9,4,2,2,1\n";
        let a = write_tmp("det-a", content);
        let b = write_tmp("det-b", content);
        let (ra, _) = read_events_csv(&a, &CsvSchema::default()).unwrap();
        let (rb, _) = read_events_csv(&b, &CsvSchema::default()).unwrap();
        assert_eq!(ra, rb);
        fs::remove_file(a).ok();
        fs::remove_file(b).ok();
    }

    #[test]
    fn roundtrip_preserves_records_and_interest() {
        // Ids appear in first-appearance order, so re-interning on the
        // way back assigns the same dense ids.
        let records = vec![
            InteractionRecord {
                user_id: 0,
                item_id: 0,
                scenario_id: 0,
                timestamp: 3,
                click: true,
                interest: Some(0.25),
            },
            InteractionRecord {
                user_id: 1,
                item_id: 1,
                scenario_id: 1,
                timestamp: 4,
                click: false,
                interest: Some(0.75),
            },
        ];
        let path = std::env::temp_dir().join(format!("mscan-rt-{}", std::process::id()));
        write_events_csv(&path, &records).unwrap();
        let (back, _) = read_events_csv(&path, &CsvSchema::default()).unwrap();
        assert_eq!(back, records);
        fs::remove_file(path).ok();
    }
}

#[cfg(test)]
mod vocab_tests {
    use super::*;

    #[test]
    fn vocab_csv_lists_raw_to_dense_in_order() {
        let mut vocab = Vocab::default();
        assert_eq!(vocab.intern(500), 0);
        assert_eq!(vocab.intern(7), 1);
        assert_eq!(vocab.intern(500), 0);
        let path = std::env::temp_dir().join(format!("mscan-vocab-{}.csv", std::process::id()));
        write_vocab_csv(&path, &vocab).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "raw_id,dense_id\n500,0\n7,1\n");
        fs::remove_file(path).ok();
    }
}
