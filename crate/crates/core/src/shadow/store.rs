use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::pool::Assignment;
use super::population::{ModelRecord, Role};
use crate::error::{Error, Result};
use crate::nn::{FeedforwardNet, LossCurve};

pub const NET_FILE: &str = "net.txt";
pub const LABEL_FILE: &str = "label.txt";
pub const CURVE_FILE: &str = "curve.csv";
pub const META_FILE: &str = "meta.txt";

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses `key=value` lines.
pub fn parse_kv(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Writes a record into `dir` (created if missing).
pub fn save_record(dir: &Path, record: &ModelRecord) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(NET_FILE), record.net.to_text().as_bytes())?;
    write(&dir.join(LABEL_FILE), record.label.to_text().as_bytes())?;
    write(&dir.join(CURVE_FILE), record.loss_curve.to_csv().as_bytes())?;
    let meta = format!(
        "id={}\nrole={}\ntest_accuracy={:?}\nseed={}\nattempt={}\n",
        record.id, record.role, record.test_accuracy, record.seed, record.attempt
    );
    write(&dir.join(META_FILE), meta.as_bytes())
}

/// Loads a record and verifies its content address.
pub fn load_record(dir: &Path) -> Result<ModelRecord> {
    let corrupt = |reason: String| Error::Corrupt {
        path: dir.to_path_buf(),
        reason,
    };
    let net = FeedforwardNet::from_text(&read(&dir.join(NET_FILE))?)?;
    let label = Assignment::from_text(&read(&dir.join(LABEL_FILE))?)?;
    let loss_curve = LossCurve::from_csv(&read(&dir.join(CURVE_FILE))?)?;
    let meta = parse_kv(&read(&dir.join(META_FILE))?);
    let field = |k: &str| {
        meta.get(k)
            .cloned()
            .ok_or_else(|| corrupt(format!("meta missing {k}")))
    };
    let id = field("id")?;
    if id != ModelRecord::content_id(&net, &label) {
        return Err(corrupt("content hash does not match id".into()));
    }
    let role = match field("role")?.as_str() {
        "shadow" => Role::Shadow,
        "target" => Role::Target,
        other => return Err(corrupt(format!("unknown role {other}"))),
    };
    let num = |k: &str| -> Result<f64> {
        field(k)?
            .parse()
            .map_err(|_| corrupt(format!("bad number for {k}")))
    };
    let int = |k: &str| -> Result<u64> {
        field(k)?
            .parse()
            .map_err(|_| corrupt(format!("bad integer for {k}")))
    };
    Ok(ModelRecord {
        id,
        role,
        label,
        net,
        test_accuracy: num("test_accuracy")?,
        loss_curve,
        seed: int("seed")?,
        attempt: int("attempt")? as usize,
    })
}
