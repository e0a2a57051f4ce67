use super::{DatasetError, SourceTag};
use crate::eval::{proprio, EpisodeRecord};
use crate::scene::{sha256_hex, ComposedScene};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// One (observation, action, proprio) triple. Images are blob hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataStep {
    pub images: BTreeMap<String, String>,
    pub action: Vec<f64>,
    pub proprio: Vec<f64>,
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub id: String,
    pub steps: usize,
    pub source: SourceTag,
    pub action_dim: usize,
    pub proprio_dim: usize,
    pub instruction: String,
}

/// A dataset directory. Cheap to clone; all state lives on disk.
#[derive(Debug, Clone)]
pub struct EpisodeDataset {
    root: PathBuf,
}

const MANIFEST: &str = "manifest.psv";

fn psv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().delimiter(b'|').from_reader(text.as_bytes())
}

impl EpisodeDataset {
    /// Opens `root`, creating the layout if needed.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let root = root.into();
        fs::create_dir_all(root.join("episodes"))?;
        fs::create_dir_all(root.join("blobs"))?;
        let ds = Self { root };
        if !ds.manifest_path().exists() {
            ds.store_manifest(&[])?;
        }
        Ok(ds)
    }

    /// Opens an existing dataset.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let root = root.into();
        if !root.join(MANIFEST).is_file() {
            return Err(DatasetError::Format(format!("{} has no {MANIFEST}", root.display())));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    fn blob_path(&self, hash: &str) -> PathBuf {
        self.root.join("blobs").join(format!("{hash}.png"))
    }

    /// Stores PNG bytes; returns their sha256.
    pub fn put_blob(&self, png: &[u8]) -> Result<String, DatasetError> {
        let hash = sha256_hex(png);
        let path = self.blob_path(&hash);
        if !path.exists() {
            let tmp = self.root.join("blobs").join(format!(".{hash}.{}.tmp", std::process::id()));
            fs::write(&tmp, png)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(hash)
    }

    pub fn put_image(&self, img: &image::RgbImage) -> Result<String, DatasetError> {
        let mut png = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| DatasetError::Format(e.to_string()))?;
        self.put_blob(&png)
    }

    pub fn blob(&self, hash: &str) -> Result<Vec<u8>, DatasetError> {
        fs::read(self.blob_path(hash)).map_err(|_| DatasetError::MissingBlob(hash.to_string()))
    }

    pub fn has_blob(&self, hash: &str) -> bool {
        self.blob_path(hash).is_file()
    }

    /// Current manifest rows.
    pub fn episodes(&self) -> Result<Vec<EpisodeMeta>, DatasetError> {
        let text = fs::read_to_string(self.manifest_path())?;
        psv_reader(&text)
            .deserialize()
            .map(|r| r.map_err(|e| DatasetError::Format(format!("{MANIFEST}: {e}"))))
            .collect()
    }

    fn store_manifest(&self, rows: &[EpisodeMeta]) -> Result<(), DatasetError> {
        let mut w = csv::WriterBuilder::new().delimiter(b'|').from_writer(Vec::new());
        if rows.is_empty() {
            w.write_record(["id", "steps", "source", "action_dim", "proprio_dim", "instruction"])
                .map_err(|e| DatasetError::Format(e.to_string()))?;
        }
        for r in rows {
            w.serialize(r).map_err(|e| DatasetError::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| DatasetError::Format(e.to_string()))?;
        let tmp = self.root.join(format!(".{MANIFEST}.{}.tmp", std::process::id()));
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, self.manifest_path())?;
        Ok(())
    }

    /// Writes an episode and appends it to the manifest. Episode files are
    /// staged under a private name; the id is assigned and the manifest
    /// replaced while holding an exclusive lock.
    pub fn write_episode(&self, instruction: &str, source: SourceTag, steps: &[DataStep]) -> Result<String, DatasetError> {
        let first = steps.first().ok_or(DatasetError::EmptyEpisode)?;
        let (ad, pd) = (first.action.len(), first.proprio.len());
        for (t, s) in steps.iter().enumerate() {
            if s.action.len() != ad || s.proprio.len() != pd {
                return Err(DatasetError::Dimension(format!(
                    "step {t} has action {} / proprio {}, expected {ad} / {pd}",
                    s.action.len(),
                    s.proprio.len()
                )));
            }
            if s.action.iter().chain(&s.proprio).any(|v| !v.is_finite()) {
                return Err(DatasetError::Format(format!("step {t} has a non-finite value")));
            }
            for (name, h) in &s.images {
                if name.is_empty() || name.contains(['=', ';', ',']) {
                    return Err(DatasetError::Format(format!("bad image name {name:?}")));
                }
                if !self.has_blob(h) {
                    return Err(DatasetError::MissingBlob(h.clone()));
                }
            }
        }
        let staging = tempfile_dir(&self.root.join("episodes"))?;
        fs::write(staging.join("steps.csv"), steps_csv(steps, ad, pd))?;

        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(self.root.join(".lock"))?;
        lock.lock()?;
        let result = (|| {
            let mut rows = self.episodes()?;
            if let Some(r) = rows.first() {
                if r.action_dim != ad || r.proprio_dim != pd {
                    return Err(DatasetError::Dimension(format!(
                        "dataset uses action {} / proprio {}, episode has {ad} / {pd}",
                        r.action_dim, r.proprio_dim
                    )));
                }
            }
            let next = rows.iter().filter_map(|r| r.id.parse::<u64>().ok()).max().map_or(0, |m| m + 1);
            let id = format!("{next:06}");
            fs::rename(&staging, self.root.join("episodes").join(&id))?;
            rows.push(EpisodeMeta {
                id: id.clone(),
                steps: steps.len(),
                source,
                action_dim: ad,
                proprio_dim: pd,
                instruction: instruction.to_string(),
            });
            self.store_manifest(&rows)?;
            Ok(id)
        })();
        lock.unlock()?;
        if result.is_err() && staging.exists() {
            let _ = fs::remove_dir_all(&staging);
        }
        result
    }

    pub fn meta(&self, id: &str) -> Result<EpisodeMeta, DatasetError> {
        self.episodes()?
            .into_iter()
            .find(|m| m.id == id)
            .ok_or_else(|| DatasetError::UnknownEpisode(id.to_string()))
    }

    /// Reads every step of an episode and checks its blobs exist.
    pub fn read_episode(&self, id: &str) -> Result<Vec<DataStep>, DatasetError> {
        let meta = self.meta(id)?;
        let text = fs::read_to_string(self.root.join("episodes").join(id).join("steps.csv"))?;
        let steps = parse_steps(&text, meta.action_dim, meta.proprio_dim)?;
        if steps.len() != meta.steps {
            return Err(DatasetError::Format(format!(
                "episode {id}: manifest says {} steps, file has {}",
                meta.steps,
                steps.len()
            )));
        }
        for s in &steps {
            for h in s.images.values() {
                if !self.has_blob(h) {
                    return Err(DatasetError::MissingBlob(h.clone()));
                }
            }
        }
        Ok(steps)
    }

    pub fn read_step(&self, id: &str, step: usize) -> Result<DataStep, DatasetError> {
        let mut steps = self.read_episode(id)?;
        if step >= steps.len() {
            return Err(DatasetError::Format(format!("episode {id} has {} steps", steps.len())));
        }
        Ok(steps.swap_remove(step))
    }
}

fn tempfile_dir(parent: &Path) -> Result<PathBuf, DatasetError> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    loop {
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.subsec_nanos());
        let p = parent.join(format!(".staging-{}-{n}-{nanos}", std::process::id()));
        match fs::create_dir(&p) {
            Ok(()) => return Ok(p),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
}

fn steps_csv(steps: &[DataStep], ad: usize, pd: usize) -> String {
    let mut s = String::from("step");
    (0..ad).for_each(|i| write!(s, ",a{i}").unwrap());
    (0..pd).for_each(|i| write!(s, ",p{i}").unwrap());
    s.push_str(",images\n");
    for (t, st) in steps.iter().enumerate() {
        write!(s, "{t}").unwrap();
        // shortest round-trip formatting keeps values exact
        st.action.iter().chain(&st.proprio).for_each(|v| write!(s, ",{v}").unwrap());
        let refs: Vec<String> = st.images.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(s, ",{}", refs.join(";")).unwrap();
    }
    s
}

fn parse_steps(text: &str, ad: usize, pd: usize) -> Result<Vec<DataStep>, DatasetError> {
    let mut out = Vec::new();
    let bad = |line: usize, m: &str| DatasetError::Format(format!("steps.csv line {line}: {m}"));
    for (n, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + ad + pd {
            return Err(bad(n + 1, "wrong field count"));
        }
        let nums: Result<Vec<f64>, _> = fields[1..1 + ad + pd].iter().map(|f| f.parse::<f64>()).collect();
        let nums = nums.map_err(|e| bad(n + 1, &e.to_string()))?;
        let mut images = BTreeMap::new();
        let refs = fields[1 + ad + pd];
        if !refs.is_empty() {
            for r in refs.split(';') {
                let (k, v) = r.split_once('=').ok_or_else(|| bad(n + 1, "bad image ref"))?;
                images.insert(k.to_string(), v.to_string());
            }
        }
        out.push(DataStep {
            images,
            action: nums[..ad].to_vec(),
            proprio: nums[ad..].to_vec(),
        });
    }
    Ok(out)
}

/// Dataset steps of an evaluation episode: at step t the frames rendered
/// before acting, the commanded action row and the proprio of the state
/// the action was chosen in.
pub fn episode_from_record(ds: &EpisodeDataset, scene: &ComposedScene, rec: &EpisodeRecord) -> Result<Vec<DataStep>, DatasetError> {
    let mut frames: BTreeMap<usize, BTreeMap<String, String>> = BTreeMap::new();
    for (step, cam, png) in &rec.frames {
        frames.entry(*step).or_default().insert(cam.clone(), ds.put_blob(png)?);
    }
    let mut prev = &rec.initial;
    let mut out = Vec::with_capacity(rec.steps.len());
    for s in &rec.steps {
        out.push(DataStep {
            // a step record is numbered by the actions taken including its own
            images: frames.remove(&(s.step - 1)).unwrap_or_default(),
            action: s.action.to_vec(),
            proprio: proprio(scene, prev).to_vec(),
        });
        prev = &s.state;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(t: usize) -> DataStep {
        DataStep {
            images: BTreeMap::new(),
            action: vec![t as f64 * 0.1, 1.0 / 3.0],
            proprio: vec![-1e-300, t as f64],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = EpisodeDataset::create(dir.path()).unwrap();
        let h = ds.put_blob(b"not really a png").unwrap();
        let mut steps: Vec<DataStep> = (0..5).map(step).collect();
        steps[2].images.insert("front".into(), h.clone());
        let id = ds.write_episode("pick | place", SourceTag::Sim, &steps).unwrap();
        assert_eq!(ds.read_episode(&id).unwrap(), steps);
        assert_eq!(ds.meta(&id).unwrap().instruction, "pick | place");
        fs::remove_file(ds.blob_path(&h)).unwrap();
        assert!(matches!(ds.read_episode(&id), Err(DatasetError::MissingBlob(_))));
    }

    #[test]
    fn validation() {
        let dir = tempfile::tempdir().unwrap();
        let ds = EpisodeDataset::create(dir.path()).unwrap();
        assert!(matches!(ds.write_episode("x", SourceTag::Sim, &[]), Err(DatasetError::EmptyEpisode)));
        let mut bad = vec![step(0), step(1)];
        bad[1].action.push(0.0);
        assert!(matches!(ds.write_episode("x", SourceTag::Sim, &bad), Err(DatasetError::Dimension(_))));
        ds.write_episode("x", SourceTag::Sim, &[step(0)]).unwrap();
        let other = DataStep {
            images: BTreeMap::new(),
            action: vec![0.0; 3],
            proprio: vec![0.0; 2],
        };
        assert!(matches!(ds.write_episode("x", SourceTag::Sim, &[other]), Err(DatasetError::Dimension(_))));
        let mut missing = step(0);
        missing.images.insert("front".into(), "ab".repeat(32));
        assert!(matches!(ds.write_episode("x", SourceTag::Sim, &[missing]), Err(DatasetError::MissingBlob(_))));
        assert_eq!(ds.episodes().unwrap().len(), 1);
        // no staging leftovers
        let names: Vec<_> = fs::read_dir(ds.root().join("episodes")).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, ["000000"]);
    }
}
