use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::seed;

/// Record of one completed stage: its identity, inputs, and the hash of
/// every file it wrote (paths relative to the run directory).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub stage_seed: u64,
    /// Digest of the upstream manifests this stage consumed.
    pub inputs: String,
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "stage={}\nconfig_hash={}\nstage_seed={}\ninputs={}\n",
            self.stage, self.config_hash, self.stage_seed, self.inputs
        );
        for (path, hash) in &self.files {
            out.push_str(&format!("file={hash} {path}\n"));
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::Corrupt {
            path: origin.to_path_buf(),
            reason,
        };
        let mut fields = BTreeMap::new();
        let mut files = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| corrupt(format!("bad line {line:?}")))?;
            if k == "file" {
                let (hash, path) = v
                    .split_once(' ')
                    .ok_or_else(|| corrupt(format!("bad file line {line:?}")))?;
                files.insert(path.to_string(), hash.to_string());
            } else {
                fields.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| corrupt(format!("missing {k}")))
        };
        Ok(Self {
            stage: get("stage")?,
            config_hash: get("config_hash")?,
            stage_seed: get("stage_seed")?
                .parse()
                .map_err(|_| corrupt("bad stage_seed".into()))?,
            inputs: get("inputs")?,
            files,
        })
    }

    /// Digest of the file table; downstream stages record it as input.
    pub fn digest(&self) -> String {
        seed::hash_hex(self.to_text().as_bytes())
    }

    /// Files that are missing or whose content no longer matches.
    pub fn mismatches(&self, root: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|(path, hash)| match fs::read(root.join(path)) {
                Ok(bytes) => &seed::hash_hex(&bytes) != *hash,
                Err(_) => true,
            })
            .map(|(p, _)| p.clone())
            .collect()
    }
}

pub fn manifest_path(root: &Path, stage: &str) -> PathBuf {
    root.join("manifests").join(format!("{stage}.txt"))
}

pub fn read_manifest(root: &Path, stage: &str) -> Result<Option<Manifest>> {
    let path = manifest_path(root, stage);
    match fs::read_to_string(&path) {
        Ok(text) => Manifest::from_text(&text, &path).map(Some),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(&path, e)),
    }
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    let path = manifest_path(root, &manifest.stage);
    let dir = path.parent().expect("manifest dir");
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))
}

/// Hashes every file under `root/dir`, keyed by path relative to `root`.
pub fn hash_tree(root: &Path, dir: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.join(dir)];
    while let Some(d) = stack.pop() {
        let entries = match fs::read_dir(&d) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => return Err(Error::io(&d, e)),
        };
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let rel = path
                    .strip_prefix(root)
                    .expect("under root")
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, seed::hash_hex(&bytes));
            }
        }
    }
    Ok(out)
}
