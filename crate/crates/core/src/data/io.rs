use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, InteractionTable, SplitMode, SplitSet};

/// Input file layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// `user<TAB>item[<TAB>ignored…]`; `#` lines are comments.
    Tsv,
    /// Same as `Tsv` with a leading header row (the `user_artists.dat` layout).
    Lastfm,
}

impl FromStr for Format {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(Format::Tsv),
            "lastfm" => Ok(Format::Lastfm),
            other => Err(DataError::Invalid(format!(
                "unknown format `{other}` (expected tsv or lastfm)"
            ))),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads interactions, assigning dense ids to raw ids in order of first
/// appearance. Duplicate pairs collapse to one record.
pub fn load_interactions(path: &Path, format: Format) -> Result<InteractionTable, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_interactions(&text, format)
}

pub(crate) fn parse_interactions(
    text: &str,
    format: Format,
) -> Result<InteractionTable, DataError> {
    let mut users: HashMap<&str, u32> = HashMap::new();
    let mut items: HashMap<&str, u32> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut records = Vec::new();
    let skip = usize::from(format == Format::Lastfm);
    for (n, line) in text.lines().enumerate().skip(skip) {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(u), Some(i)) = (fields.next(), fields.next()) else {
            return Err(DataError::Malformed {
                line: n + 1,
                reason: "expected at least two tab-separated fields".into(),
            });
        };
        let (u, i) = (u.trim(), i.trim());
        if u.is_empty() || i.is_empty() {
            return Err(DataError::Malformed {
                line: n + 1,
                reason: "empty user or item id".into(),
            });
        }
        let uid = *users.entry(u).or_insert_with(|| {
            user_ids.push(u.to_string());
            (user_ids.len() - 1) as u32
        });
        let iid = *items.entry(i).or_insert_with(|| {
            item_ids.push(i.to_string());
            (item_ids.len() - 1) as u32
        });
        records.push((uid, iid));
    }
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    InteractionTable::with_ids(Arc::new(user_ids), Arc::new(item_ids), records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub users: usize,
    pub items: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// `manifest.json` written next to the split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub counts: SplitCounts,
    /// SHA-256 over `train.tsv`, `validation.tsv`, `test.tsv` in that order.
    pub checksum: String,
    #[serde(default)]
    pub source_checksum: Option<String>,
    #[serde(default)]
    pub k_core: Option<usize>,
    #[serde(default)]
    pub mode: SplitMode,
}

const PART_FILES: [&str; 3] = ["train.tsv", "validation.tsv", "test.tsv"];

fn encode_part(table: &InteractionTable) -> String {
    let mut s = String::with_capacity(table.len() * 12);
    for (u, i) in table.records() {
        s.push_str(&format!("{u}\t{i}\n"));
    }
    s
}

pub(crate) fn sha256_hex(chunks: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for c in chunks {
        h.update(c);
    }
    hex::encode(h.finalize())
}

/// Writes the three parts as index-pair tsv files, the raw-id maps as JSON
/// arrays and a manifest. Returns the manifest.
pub fn write_split(
    dir: &Path,
    split: &SplitSet,
    extra: (Option<String>, Option<usize>),
) -> Result<SplitManifest, DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let parts = [&split.train, &split.validation, &split.test].map(encode_part);
    for (name, body) in PART_FILES.iter().zip(&parts) {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| io_err(&p, e))?;
    }
    let maps = [
        ("user_map.json", split.train.user_ids()),
        ("item_map.json", split.train.item_ids()),
    ];
    for (name, ids) in maps {
        let p = dir.join(name);
        fs::write(&p, serde_json::to_vec(ids)?).map_err(|e| io_err(&p, e))?;
    }
    let manifest = SplitManifest {
        seed: split.seed,
        ratios: split.ratios,
        counts: SplitCounts {
            users: split.user_count(),
            items: split.item_count(),
            train: split.train.len(),
            validation: split.validation.len(),
            test: split.test.len(),
        },
        checksum: sha256_hex(&parts.iter().map(|s| s.as_bytes()).collect::<Vec<_>>()),
        source_checksum: extra.0,
        k_core: extra.1,
        mode: split.mode,
    };
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_vec_pretty(&manifest)?).map_err(|e| io_err(&p, e))?;
    Ok(manifest)
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String, DataError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(sha256_hex(&[&bytes]))
}

pub fn read_manifest(dir: &Path) -> Result<SplitManifest, DataError> {
    let p = dir.join("manifest.json");
    let text = fs::read(&p).map_err(|e| io_err(&p, e))?;
    Ok(serde_json::from_slice(&text)?)
}

/// Loads a split written by [`write_split`], verifying its checksum.
pub fn read_split(dir: &Path) -> Result<(SplitSet, SplitManifest), DataError> {
    let manifest = read_manifest(dir)?;
    let read_ids = |name: &str| -> Result<Arc<Vec<String>>, DataError> {
        let p = dir.join(name);
        let bytes = fs::read(&p).map_err(|e| io_err(&p, e))?;
        Ok(Arc::new(serde_json::from_slice(&bytes)?))
    };
    let user_ids = read_ids("user_map.json")?;
    let item_ids = read_ids("item_map.json")?;
    let mut bodies = Vec::new();
    for name in PART_FILES {
        let p = dir.join(name);
        bodies.push(fs::read_to_string(&p).map_err(|e| io_err(&p, e))?);
    }
    let sum = sha256_hex(&bodies.iter().map(|s| s.as_bytes()).collect::<Vec<_>>());
    if sum != manifest.checksum {
        return Err(DataError::Invalid(format!(
            "split checksum mismatch in {}: manifest {}, files {sum}",
            dir.display(),
            manifest.checksum
        )));
    }
    let mut tables = Vec::new();
    for body in &bodies {
        let mut recs = Vec::new();
        for (n, line) in body.lines().enumerate() {
            let mut f = line.split('\t');
            let parse = |s: Option<&str>| s.and_then(|v| v.parse::<u32>().ok());
            match (parse(f.next()), parse(f.next())) {
                (Some(u), Some(i)) => recs.push((u, i)),
                _ => {
                    return Err(DataError::Malformed {
                        line: n + 1,
                        reason: "expected two integer indices".into(),
                    })
                }
            }
        }
        tables.push(InteractionTable::with_ids(
            Arc::clone(&user_ids),
            Arc::clone(&item_ids),
            recs,
        )?);
    }
    let test = tables.pop().unwrap();
    let validation = tables.pop().unwrap();
    let train = tables.pop().unwrap();
    Ok((
        SplitSet {
            train,
            validation,
            test,
            seed: manifest.seed,
            ratios: manifest.ratios,
            mode: manifest.mode,
        },
        manifest,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, SplitMode};

    #[test]
    fn three_lines() {
        let t = parse_interactions("a\tx\nb\ty\na\ty\n", Format::Tsv).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.user_ids(), &["a", "b"]);
        assert_eq!(t.item_ids(), &["x", "y"]);
    }

    #[test]
    fn duplicates_collapse() {
        let t = parse_interactions("1\t5\t3.0\n1\t5\t4.0\n", Format::Tsv).unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn comments_and_header() {
        let t = parse_interactions("# c\n1\t2\n", Format::Tsv).unwrap();
        assert_eq!(t.len(), 1);
        let t = parse_interactions(
            "userID\tartistID\tweight\n2\t51\t13883\n2\t52\t11690\n",
            Format::Lastfm,
        )
        .unwrap();
        assert_eq!((t.user_count(), t.item_count(), t.len()), (1, 2, 2));
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_interactions("1\t2\nbad\n", Format::Tsv).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_dataset() {
        assert!(matches!(
            parse_interactions("# nothing\n", Format::Tsv),
            Err(DataError::Empty)
        ));
    }

    #[test]
    fn missing_file() {
        let r = load_interactions(Path::new("/nonexistent/file.tsv"), Format::Tsv);
        assert!(matches!(r, Err(DataError::Io { .. })));
    }

    #[test]
    fn split_roundtrip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let text: String = (0..30)
            .flat_map(|u| (0..(u % 11 + 1)).map(move |i| format!("u{u}\ti{}\n", (i * 3 + u) % 17)))
            .collect();
        let t = parse_interactions(&text, Format::Tsv).unwrap();
        let s = split(&t, [0.7, 0.2, 0.1], 4, SplitMode::PerUser).unwrap();
        let m = write_split(dir.path(), &s, (None, None)).unwrap();
        let (back, m2) = read_split(dir.path()).unwrap();
        assert_eq!(back, s);
        assert_eq!(m, m2);
        fs::write(dir.path().join("test.tsv"), "0\t0\n").unwrap();
        assert!(read_split(dir.path()).is_err());
    }
}
