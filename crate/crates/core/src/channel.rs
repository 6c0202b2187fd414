//! Channel-sample generation and the on-disk dataset format.
//!
//! Each sample `i` is drawn from its own ChaCha20 stream: the generator is
//! seeded with the dataset seed and switched to stream `i`, so a sample's
//! content does not depend on generation order. Within a stream the draw
//! order is: user-count index (always drawn, even for a single-K list),
//! then per user a distance followed by `N_T` complex Gaussian entries
//! (real part, then imaginary part).
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "BFDS" | version u32 = 1 | n_antennas u32 | count u64 | flags u32
//! per sample: K u32, then K * N_T (re f64, im f64) pairs, row-major
//! if flags & 1: count f64 labels
//! ```
//!
//! `flags` bit 0 marks labels, bit 1 a various-K dataset. A JSON manifest
//! is written next to the binary (`<path>.json`) and carries the dataset
//! spec and a CRC-64/XZ checksum of every byte after the header.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crc::{Crc, CRC_64_XZ};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{BeamError, Result};
use crate::linalg::CMatrix;
use crate::model::{ChannelSet, SystemConfig};

pub const MAGIC: &[u8; 4] = b"BFDS";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
pub const FLAG_LABELS: u32 = 1;
pub const FLAG_VARIOUS_K: u32 = 2;

/// Upper bound on the channel payload a single dataset may hold.
pub const MAX_PAYLOAD_BYTES: u64 = 8 << 30;

pub const BANDWIDTH_HZ: f64 = 10e6;
pub const NOISE_DBM_PER_HZ: f64 = -162.0;
pub const DISTANCE_KM: (f64, f64) = (0.05, 0.3);

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

/// Which parts of an experiment a dataset is meant for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Train,
    Test,
    Both,
}

impl DatasetKind {
    pub fn has_train(self) -> bool {
        matches!(self, DatasetKind::Train | DatasetKind::Both)
    }
}

/// How large-scale fading enters the generated channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathLoss {
    /// Every user's large-scale gain is normalized to one, leaving the noise
    /// power `gamma` as the only SNR knob.
    #[default]
    Normalized,
    /// Physical gain `beta(d) / noise_power` with the distance-based model.
    Raw,
}

fn default_p_max() -> f64 {
    1.0
}

fn default_p_circuit() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_antennas: usize,
    pub k_users_list: Vec<usize>,
    /// Average inverse SNR; used as every user's noise power.
    pub gamma: f64,
    /// Common per-user rate floor.
    pub xi: f64,
    pub count: usize,
    pub seed: u64,
    pub kind: DatasetKind,
    #[serde(default)]
    pub path_loss: PathLoss,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
    #[serde(default = "default_p_circuit")]
    pub p_circuit: f64,
}

impl DatasetSpec {
    pub fn new(n_antennas: usize, k_users: usize, gamma: f64, xi: f64, count: usize, seed: u64) -> Self {
        Self {
            n_antennas,
            k_users_list: vec![k_users],
            gamma,
            xi,
            count,
            seed,
            kind: DatasetKind::Both,
            path_loss: PathLoss::Normalized,
            p_max: default_p_max(),
            p_circuit: default_p_circuit(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(BeamError::InvalidInput(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.count == 0 {
            return Err(BeamError::InvalidInput("count must be >= 1".into()));
        }
        if self.k_users_list.is_empty() || self.k_users_list.contains(&0) {
            return Err(BeamError::InvalidInput("k_users_list must be nonempty and positive".into()));
        }
        if self.n_antennas == 0 {
            return Err(BeamError::InvalidInput("n_antennas must be >= 1".into()));
        }
        if !(self.xi >= 0.0) {
            return Err(BeamError::InvalidInput(format!("xi must be >= 0, got {}", self.xi)));
        }
        Ok(())
    }

    pub fn is_various(&self) -> bool {
        self.k_users_list.len() > 1
    }

    /// Cell parameters for a sample with `k_users` users.
    pub fn system_config(&self, k_users: usize) -> SystemConfig {
        SystemConfig {
            p_max: self.p_max,
            p_circuit: self.p_circuit,
            noise_powers: vec![self.gamma; k_users],
            rate_floors: vec![self.xi; k_users],
        }
    }

    fn payload_bytes(&self) -> Option<u64> {
        let kmax = *self.k_users_list.iter().max()? as u64;
        (self.count as u64)
            .checked_mul(kmax)?
            .checked_mul(self.n_antennas as u64)?
            .checked_mul(16)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<ChannelSet>,
    /// Per-sample maximum EE; `NaN` where no label could be produced.
    pub labels: Option<Vec<f64>>,
}

impl Dataset {
    pub fn system_config(&self, i: usize) -> SystemConfig {
        self.spec.system_config(self.samples[i].k_users())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct user counts in order of first appearance.
    pub fn k_values(&self) -> Vec<usize> {
        let mut ks = Vec::new();
        for s in &self.samples {
            if !ks.contains(&s.k_users()) {
                ks.push(s.k_users());
            }
        }
        ks
    }

    /// New dataset holding the given sample indices (labels follow).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut spec = self.spec.clone();
        spec.count = idx.len();
        Dataset {
            spec,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Path-loss gain `10^{-(140.7 + 36.7 log10 d)/10}` for a distance in km.
pub fn path_loss_gain(distance_km: f64) -> f64 {
    10f64.powf(-(140.7 + 36.7 * distance_km.log10()) / 10.0)
}

/// Thermal noise power over the full band, in watts.
pub fn noise_power_watts() -> f64 {
    10f64.powf((NOISE_DBM_PER_HZ - 30.0) / 10.0) * BANDWIDTH_HZ
}

/// Generator for sample `index` of a dataset seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws sample `index` of `spec`.
pub fn generate_sample(spec: &DatasetSpec, index: usize) -> ChannelSet {
    let mut rng = sample_rng(spec.seed, index as u64);
    let k = spec.k_users_list[rng.gen_range(0..spec.k_users_list.len())];
    let n = spec.n_antennas;
    let noise = noise_power_watts();
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let mut h = CMatrix::zeros(k, n);
    for user in 0..k {
        let d: f64 = rng.gen_range(DISTANCE_KM.0..DISTANCE_KM.1);
        let scale = match spec.path_loss {
            PathLoss::Normalized => 1.0,
            PathLoss::Raw => (path_loss_gain(d) / noise).sqrt(),
        };
        for z in h.row_mut(user) {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *z = Complex::new(re * half * scale, im * half * scale);
        }
    }
    ChannelSet::new(h).expect("generated channels are finite and non-empty")
}

/// Generates every sample of `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    match spec.payload_bytes() {
        Some(b) if b <= MAX_PAYLOAD_BYTES => {}
        _ => {
            return Err(BeamError::Capacity(format!(
                "count * K * N_T exceeds the {} byte dataset budget",
                MAX_PAYLOAD_BYTES
            )))
        }
    }
    let samples = (0..spec.count).map(|i| generate_sample(spec, i)).collect();
    Ok(Dataset {
        spec: spec.clone(),
        samples,
        labels: None,
    })
}

pub fn attach_labels(mut ds: Dataset, labels: Vec<f64>) -> Result<Dataset> {
    if labels.len() != ds.samples.len() {
        return Err(BeamError::InvalidInput(format!(
            "expected {} labels, got {}",
            ds.samples.len(),
            labels.len()
        )));
    }
    ds.labels = Some(labels);
    Ok(ds)
}

/// Sidecar manifest stored next to a dataset binary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub spec: DatasetSpec,
    pub count: usize,
    pub labels_present: bool,
    /// Set when labels were attached to a training-only dataset.
    pub labels_on_train_set: bool,
    pub bandwidth_hz: f64,
    pub noise_dbm_per_hz: f64,
    pub path_loss_model: String,
    pub distance_km: (f64, f64),
    /// CRC-64/XZ of the bytes following the header, as 16 hex digits.
    pub checksum_crc64: String,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode(ds: &Dataset) -> Vec<u8> {
    let n = ds.spec.n_antennas;
    let mut flags = 0u32;
    if ds.labels.is_some() {
        flags |= FLAG_LABELS;
    }
    if ds.spec.is_various() {
        flags |= FLAG_VARIOUS_K;
    }
    let mut out = Vec::with_capacity(HEADER_LEN + ds.samples.len() * (4 + n * 16 * 4));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(ds.samples.len() as u64).to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    for s in &ds.samples {
        out.extend_from_slice(&(s.k_users() as u32).to_le_bytes());
        for z in s.h().as_slice() {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    if let Some(labels) = &ds.labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn checksum(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes.get(HEADER_LEN..).unwrap_or(&[]))
}

/// Decoded binary contents without the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub n_antennas: usize,
    pub flags: u32,
    pub samples: Vec<ChannelSet>,
    pub labels: Option<Vec<f64>>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(BeamError::Format {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<RawDataset> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(BeamError::Format {
            offset: 0,
            msg: "bad magic, expected BFDS".into(),
        });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(BeamError::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let n = r.u32("n_antennas")? as usize;
    let count = r.u64("count")?;
    let flags = r.u32("flags")?;
    if n == 0 {
        return Err(BeamError::Format {
            offset: 8,
            msg: "n_antennas is zero".into(),
        });
    }
    // Every sample needs at least its K field.
    if count > (bytes.len() as u64) / 4 {
        return Err(BeamError::Format {
            offset: 12,
            msg: format!("count {count} cannot fit in {} bytes", bytes.len()),
        });
    }
    let mut samples = Vec::with_capacity(count as usize);
    for i in 0..count {
        let at = r.pos as u64;
        let k = r.u32("user count")? as usize;
        if k == 0 {
            return Err(BeamError::Format {
                offset: at,
                msg: format!("sample {i} has zero users"),
            });
        }
        let need = k.checked_mul(n).and_then(|x| x.checked_mul(16));
        let raw = match need {
            Some(need) => r.take(need, "channel entries")?,
            None => {
                return Err(BeamError::Format {
                    offset: at,
                    msg: "dimension overflow".into(),
                })
            }
        };
        let data = raw
            .chunks_exact(16)
            .map(|c| {
                Complex::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        let h = CMatrix::from_vec(k, n, data)?;
        let ch = ChannelSet::new(h).map_err(|e| BeamError::Format {
            offset: at,
            msg: format!("sample {i}: {e}"),
        })?;
        samples.push(ch);
    }
    let labels = if flags & FLAG_LABELS != 0 {
        let mut l = Vec::with_capacity(count as usize);
        for _ in 0..count {
            l.push(r.f64("labels")?);
        }
        Some(l)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(BeamError::Format {
            offset: r.pos as u64,
            msg: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(RawDataset {
        n_antennas: n,
        flags,
        samples,
        labels,
    })
}

pub fn manifest_for(ds: &Dataset, bytes: &[u8]) -> DatasetManifest {
    DatasetManifest {
        format: "BFDS".into(),
        version: FORMAT_VERSION,
        spec: ds.spec.clone(),
        count: ds.samples.len(),
        labels_present: ds.labels.is_some(),
        labels_on_train_set: ds.labels.is_some() && ds.spec.kind == DatasetKind::Train,
        bandwidth_hz: BANDWIDTH_HZ,
        noise_dbm_per_hz: NOISE_DBM_PER_HZ,
        path_loss_model: "10^(-(140.7 + 36.7 log10 d_km)/10)".into(),
        distance_km: DISTANCE_KM,
        checksum_crc64: format!("{:016x}", checksum(bytes)),
    }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes the binary and its manifest; returns the manifest.
pub fn save(ds: &Dataset, path: &Path) -> Result<DatasetManifest> {
    let bytes = encode(ds);
    let manifest = manifest_for(ds, &bytes);
    write_atomic(path, &bytes)?;
    write_atomic(&manifest_path(path), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(manifest_path(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a dataset written by [`save`], verifying it against its manifest.
pub fn load(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let raw = decode(&bytes)?;
    let manifest = read_manifest(path)?;
    let sum = format!("{:016x}", checksum(&bytes));
    if sum != manifest.checksum_crc64 {
        return Err(BeamError::Format {
            offset: HEADER_LEN as u64,
            msg: format!("checksum mismatch: file {sum}, manifest {}", manifest.checksum_crc64),
        });
    }
    if raw.n_antennas != manifest.spec.n_antennas || raw.samples.len() != manifest.count {
        return Err(BeamError::Format {
            offset: 8,
            msg: "binary dimensions disagree with manifest".into(),
        });
    }
    if let Some(bad) = raw
        .samples
        .iter()
        .position(|s| !manifest.spec.k_users_list.contains(&s.k_users()))
    {
        return Err(BeamError::Format {
            offset: HEADER_LEN as u64,
            msg: format!("sample {bad} has a user count outside the manifest's list"),
        });
    }
    Ok(Dataset {
        spec: manifest.spec,
        samples: raw.samples,
        labels: raw.labels,
    })
}
