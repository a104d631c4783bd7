//! Dataset files: one JSON sequence per line, raw (unnormalized) values,
//! with a sidecar manifest carrying the generation settings and a sha256
//! checksum of the data bytes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{DataMode, GenConfig, TransitionSequence};

use super::{io_err, IoError, IoResult};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub env: String,
    pub mode: DataMode,
    pub count: usize,
    pub gen: GenConfig,
    pub sha256: String,
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.json");
    p.into()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write sequences as JSON lines plus the manifest sidecar. Returns the
/// manifest (with checksum) that was written.
pub fn write_dataset(
    path: &Path,
    sequences: &[TransitionSequence],
    env: &str,
    mode: DataMode,
    gen: &GenConfig,
) -> IoResult<DatasetManifest> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut body = Vec::new();
    for seq in sequences {
        serde_json::to_writer(&mut body, seq).map_err(|e| IoError::Format {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        body.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&body).map_err(|e| io_err(path, e))?;

    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        env: env.to_string(),
        mode,
        count: sequences.len(),
        gen: gen.clone(),
        sha256: sha256_hex(&body),
    };
    let mpath = manifest_path(path);
    fs::write(
        &mpath,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| io_err(&mpath, e))?;
    Ok(manifest)
}

/// Read a dataset back, verifying the manifest checksum first.
pub fn read_dataset(path: &Path) -> IoResult<(Vec<TransitionSequence>, DatasetManifest)> {
    let mpath = manifest_path(path);
    let mbytes = fs::read(&mpath).map_err(|e| io_err(&mpath, e))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&mbytes).map_err(|e| IoError::Format {
            path: mpath.display().to_string(),
            msg: e.to_string(),
        })?;
    if manifest.version != DATASET_VERSION {
        return Err(IoError::Version {
            path: mpath.display().to_string(),
            got: manifest.version,
            supported: DATASET_VERSION,
        });
    }

    let body = fs::read(path).map_err(|e| io_err(path, e))?;
    let got = sha256_hex(&body);
    if got != manifest.sha256 {
        return Err(IoError::Integrity {
            path: path.display().to_string(),
            expected: manifest.sha256,
            got,
        });
    }
    if body.is_empty() {
        return Err(IoError::EmptyDataset {
            path: path.display().to_string(),
        });
    }

    let reader = BufReader::new(&body[..]);
    let mut sequences = Vec::with_capacity(manifest.count);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.is_empty() {
            continue;
        }
        let seq: TransitionSequence =
            serde_json::from_str(&line).map_err(|e| IoError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        sequences.push(seq);
    }
    if sequences.len() != manifest.count {
        return Err(IoError::Format {
            path: path.display().to_string(),
            msg: format!(
                "manifest promises {} sequences, file holds {}",
                manifest.count,
                sequences.len()
            ),
        });
    }
    Ok((sequences, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_sequence;
    use crate::env::{Env, EnvKind};
    use crate::policy::TaskPolicy;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("sysid-dataset-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_field_exact() {
        let env = Env::new(EnvKind::Hockey);
        let policy = TaskPolicy::default();
        let gen = GenConfig::default();
        let seqs: Vec<_> = (0..5)
            .map(|s| generate_sequence(&env, &policy, &gen, DataMode::Rbs, s))
            .collect();
        let path = tmp("hockey_roundtrip.jsonl");
        write_dataset(&path, &seqs, "hockey", DataMode::Rbs, &gen).unwrap();
        let (back, manifest) = read_dataset(&path).unwrap();
        assert_eq!(back, seqs);
        assert_eq!(manifest.count, 5);
    }

    #[test]
    fn corruption_is_detected() {
        let env = Env::new(EnvKind::Scoop);
        let policy = TaskPolicy::default();
        let gen = GenConfig::default();
        let seqs: Vec<_> = (0..3)
            .map(|s| generate_sequence(&env, &policy, &gen, DataMode::Rbs, s))
            .collect();
        let path = tmp("scoop_corrupt.jsonl");
        write_dataset(&path, &seqs, "scoop", DataMode::Rbs, &gen).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] = bytes[mid].wrapping_add(1);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(IoError::Integrity { .. })
        ));
    }

    #[test]
    fn empty_dataset_is_an_explicit_error() {
        let path = tmp("empty.jsonl");
        let gen = GenConfig::default();
        write_dataset(&path, &[], "scoop", DataMode::Rbs, &gen).unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(IoError::EmptyDataset { .. })
        ));
    }

    #[test]
    fn unknown_version_is_refused() {
        let env = Env::new(EnvKind::Scoop);
        let policy = TaskPolicy::default();
        let gen = GenConfig::default();
        let seqs = vec![generate_sequence(&env, &policy, &gen, DataMode::Rbs, 0)];
        let path = tmp("versioned.jsonl");
        write_dataset(&path, &seqs, "scoop", DataMode::Rbs, &gen).unwrap();
        let mpath = manifest_path(&path);
        let text = fs::read_to_string(&mpath)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 999");
        fs::write(&mpath, text).unwrap();
        assert!(matches!(read_dataset(&path), Err(IoError::Version { .. })));
    }
}
