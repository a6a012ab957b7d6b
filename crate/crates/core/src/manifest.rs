//! Stage manifests: what went in, which seed and parameters were used, and what came out, all
//! addressed by SHA-256. Manifests carry no timestamps so that identical runs produce identical
//! bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub seed: Option<u64>,
    pub params: BTreeMap<String, serde_json::Value>,
    /// Content hash per input, keyed by file name.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            ..Default::default()
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn param(mut self, key: &str, value: impl Serialize) -> Self {
        self.params.insert(
            key.to_string(),
            serde_json::to_value(value).expect("serializable parameter"),
        );
        self
    }

    /// Records a file or, for a directory, every file inside it.
    pub fn input(&mut self, path: &Path) -> io::Result<()> {
        record(&mut self.inputs, path)
    }

    pub fn output(&mut self, path: &Path) -> io::Result<()> {
        record(&mut self.outputs, path)
    }

    pub fn file_name(&self) -> String {
        format!("manifest-{}.json", self.stage)
    }

    /// Writes `manifest-<stage>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(self.file_name()), text)
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

fn record(map: &mut BTreeMap<String, String>, path: &Path) -> io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            let name = e.file_name().to_string_lossy().into_owned();
            // Manifests describe other files; hashing them would make outputs self-referential.
            if p.is_file() && !(name.starts_with("manifest-") && name.ends_with(".json")) {
                map.insert(label(&p), hash_file(&p)?);
            }
        }
    } else {
        map.insert(label(path), hash_file(path)?);
    }
    Ok(())
}

fn label(path: &Path) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> io::Result<String> {
    Ok(hash_bytes(&fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            hash_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn identical_runs_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.csv"), "2").unwrap();
        fs::write(dir.path().join("a.csv"), "1").unwrap();
        let build = |out: &Path| {
            let mut m = Manifest::new("train").seed(7).param("algo", "wizard");
            m.input(dir.path()).unwrap();
            m.write(out).unwrap();
            fs::read(out.join("manifest-train.json")).unwrap()
        };
        let o1 = tempfile::tempdir().unwrap();
        let o2 = tempfile::tempdir().unwrap();
        assert_eq!(build(o1.path()), build(o2.path()));
        let m = Manifest::read(&o1.path().join("manifest-train.json")).unwrap();
        assert_eq!(m.inputs.keys().collect::<Vec<_>>(), ["a.csv", "b.csv"]);
        assert_eq!(m.seed, Some(7));
    }
}
