//! Episode files, manifests and train/validation splits.
//!
//! Dataset file layout (integers and floats little-endian):
//!
//! ```text
//! b"PGDY" | version: u32 | episodes N: u32 | frames T: u32 | objects K: u32
//! vars: u32 (= 6) | order_len: u32 | order: utf-8 ("x,y,vx,vy,theta,omega")
//! N·K × { kind: u8 (0 circle, 1 rect) | p1: f32 | p2: f32 }
//! N·T·K·6 × f32      states; episodes, then frames, then objects
//! N·T × u8           contact labels, bit0 object_wall, bit1 object_object
//! ```
//!
//! Circles store `(radius, 0)`, rectangles `(half_w, half_h)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sim::{sample_episode, ContactLabels, Episode, EpisodeConfig, ObjectMix, ObjectState, Shape, WorldConfig};

const MAGIC: &[u8; 4] = b"PGDY";
pub const FORMAT_VERSION: u32 = 1;
pub const VARIABLES: [&str; 6] = ["x", "y", "vx", "vy", "theta", "omega"];

/// Episodes sharing a frame count and object count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub frames: usize,
    pub objects: usize,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn new(frames: usize, objects: usize, episodes: Vec<Episode>) -> Result<Self> {
        for (i, ep) in episodes.iter().enumerate() {
            let ok = ep.frames.len() == frames
                && ep.labels.len() == frames
                && ep.shapes.len() == objects
                && ep.frames.iter().all(|f| f.len() == objects);
            if !ok {
                return Err(Error::Format(format!(
                    "episode {i} does not have {frames} frames of {objects} objects"
                )));
            }
        }
        Ok(Dataset {
            frames,
            objects,
            episodes,
        })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Total number of stored object states.
    pub fn object_states(&self) -> usize {
        self.len() * self.frames * self.objects
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            frames: self.frames,
            objects: self.objects,
            episodes: indices.iter().map(|&i| self.episodes[i].clone()).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_dataset(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_dataset(BufReader::new(File::open(path)?))
    }
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit the header")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_dataset(w: &mut impl Write, d: &Dataset) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    put_u32(w, d.len())?;
    put_u32(w, d.frames)?;
    put_u32(w, d.objects)?;
    put_u32(w, VARIABLES.len())?;
    let order = VARIABLES.join(",");
    put_u32(w, order.len())?;
    w.write_all(order.as_bytes())?;
    for ep in &d.episodes {
        for shape in &ep.shapes {
            let (kind, p1, p2) = match *shape {
                Shape::Circle { radius } => (0u8, radius, 0.0),
                Shape::Rect { half_w, half_h } => (1u8, half_w, half_h),
            };
            w.write_all(&[kind])?;
            w.write_all(&(p1 as f32).to_le_bytes())?;
            w.write_all(&(p2 as f32).to_le_bytes())?;
        }
    }
    for ep in &d.episodes {
        for frame in &ep.frames {
            for s in frame {
                for v in s.to_array() {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
        }
    }
    for ep in &d.episodes {
        let bytes: Vec<u8> = ep.labels.iter().map(|l| l.to_byte()).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format("dataset payload is truncated".into())
            } else {
                Error::Io(e)
            }
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .bytes(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

pub fn read_dataset(r: impl Read) -> Result<Dataset> {
    let mut r = Reader { inner: r };
    if r.bytes(4)? != MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let (n, t, k) = (r.u32()?, r.u32()?, r.u32()?);
    let vars = r.u32()?;
    let order_len = r.u32()?;
    let order = String::from_utf8(r.bytes(order_len)?)
        .map_err(|_| Error::Format("variable order is not utf-8".into()))?;
    if vars != VARIABLES.len() || order != VARIABLES.join(",") {
        return Err(Error::Format(format!("unsupported variable layout `{order}`")));
    }
    let mut shapes = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ep = Vec::with_capacity(k);
        for _ in 0..k {
            let kind = r.bytes(1)?[0];
            let p = r.f32s(2)?;
            ep.push(match kind {
                0 => Shape::Circle { radius: p[0] },
                1 => Shape::Rect { half_w: p[0], half_h: p[1] },
                other => return Err(Error::Format(format!("unknown shape kind {other}"))),
            });
        }
        shapes.push(ep);
    }
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let values = r.f32s(t * k * 6)?;
        let ep: Vec<Vec<ObjectState>> = values
            .chunks(k * 6)
            .map(|f| {
                f.chunks(6)
                    .map(|s| ObjectState::from_array(s.try_into().expect("6 values")))
                    .collect()
            })
            .collect();
        frames.push(if k == 0 { vec![Vec::new(); t] } else { ep });
    }
    let mut episodes = Vec::with_capacity(n);
    for (shapes, frames) in shapes.into_iter().zip(frames) {
        let labels = r
            .bytes(t)?
            .into_iter()
            .map(ContactLabels::from_byte)
            .collect::<Result<Vec<_>>>()?;
        episodes.push(Episode { shapes, frames, labels });
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after dataset payload".into()));
    }
    Dataset::new(t, k, episodes)
}

/// Everything needed to regenerate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub objects: String,
    pub episodes: usize,
    pub seed: u64,
    pub world: WorldConfig,
    pub episode: EpisodeConfig,
}

impl GenerateConfig {
    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        config_hash(self).expect("config serializes")
    }
}

/// SHA-256 (hex) of the TOML rendering of any serializable config.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let text = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// Record of one command invocation: its fully resolved config and hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest<T> {
    pub command: String,
    pub config_hash: String,
    pub config: T,
}

impl<T: Serialize> RunManifest<T> {
    pub fn new(command: &str, config: T) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            config_hash: config_hash(&config)?,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Human-readable companion of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub episodes: usize,
    pub frames: usize,
    pub objects: usize,
    pub object_states: usize,
    pub variables: Vec<String>,
    /// True when the episodes are model rollouts rather than simulations.
    pub predicted: bool,
    pub config_hash: String,
    pub config: Option<GenerateConfig>,
}

impl Manifest {
    pub fn for_dataset(d: &Dataset, config: Option<GenerateConfig>, predicted: bool) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            episodes: d.len(),
            frames: d.frames,
            objects: d.objects,
            object_states: d.object_states(),
            variables: VARIABLES.iter().map(|s| s.to_string()).collect(),
            predicted,
            config_hash: config.as_ref().map(|c| c.hash()).unwrap_or_default(),
            config,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}

/// Manifest location for a dataset file.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.as_os_str().to_owned();
    name.push(".toml");
    PathBuf::from(name)
}

/// Simulates `cfg.episodes` episodes in parallel; episode `i` draws from
/// stream `i` of a generator seeded with `cfg.seed`.
pub fn generate(cfg: &GenerateConfig) -> Result<Dataset> {
    let mix: ObjectMix = cfg.objects.parse()?;
    cfg.world.validate()?;
    let episodes = (0..cfg.episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            sample_episode(&mut rng, &mix, &cfg.world, &cfg.episode)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(cfg.episode.frames, mix.len(), episodes)
}

/// Episode-level split: `round(n · val_fraction)` shuffled indices go to
/// validation. Both lists are sorted.
pub fn split(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("validation fraction {val_fraction} outside [0, 1]")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * val_fraction).round() as usize;
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}
