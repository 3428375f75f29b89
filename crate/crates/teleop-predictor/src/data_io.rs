//! Kinematics input: JIGSAWS-style file parsing, synthetic trajectory
//! generation, z-score normalization, and sliding-window slicing.
//!
//! JIGSAWS kinematics rows carry 76 whitespace-separated floats: four
//! 19-variable manipulator blocks (master-left, master-right, slave-left,
//! slave-right), each ordered as position (3), rotation matrix (9), linear
//! velocity (3), angular velocity (3), grasper angle (1). Frames are sampled
//! at 30 Hz; timestamps are derived from the line index.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::fmt_g9;

/// Sampling rate of the kinematic stream.
pub const SAMPLE_RATE_HZ: f64 = 30.0;
/// Fields per row in a kinematics file.
pub const ROW_FIELDS: usize = 76;
/// Fields per manipulator block.
pub const BLOCK_FIELDS: usize = 19;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, field {field}: cannot parse '{token}' as a number")]
    Parse {
        line: usize,
        field: usize,
        token: String,
    },
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trial '{0}' has no samples")]
    EmptyTrial(String),
    #[error("no samples to fit normalizer on")]
    EmptyInput,
    #[error("trial length {len} too short for windows (need at least {need})")]
    TrialTooShort { len: usize, need: usize },
    #[error("invalid window spec: {0}")]
    BadWindowSpec(String),
    #[error("malformed csv: {0}")]
    Csv(String),
}

/// One 30 Hz kinematic frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicSample {
    /// Time in seconds (frame index / 30 Hz).
    pub t: f64,
    /// Tool-tip position, meters.
    pub p: [f64; 3],
    /// Rotation matrix, row-major.
    pub r: [f64; 9],
    /// Linear velocity, m/s.
    pub v: [f64; 3],
    /// Angular velocity, rad/s.
    pub w: [f64; 3],
    /// Grasper angle, radians.
    pub theta: f64,
}

impl KinematicSample {
    /// The 19 block fields in file order (p, R, v, w, theta).
    pub fn block_fields(&self) -> [f64; BLOCK_FIELDS] {
        let mut out = [0.0; BLOCK_FIELDS];
        out[0..3].copy_from_slice(&self.p);
        out[3..12].copy_from_slice(&self.r);
        out[12..15].copy_from_slice(&self.v);
        out[15..18].copy_from_slice(&self.w);
        out[18] = self.theta;
        out
    }
}

/// Which 19-variable block of the 76-column row to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManipulatorBlock {
    MasterLeft,
    MasterRight,
    /// The patient-side manipulator; default for position prediction.
    SlaveLeft,
    SlaveRight,
}

impl ManipulatorBlock {
    pub fn offset(self) -> usize {
        match self {
            ManipulatorBlock::MasterLeft => 0,
            ManipulatorBlock::MasterRight => BLOCK_FIELDS,
            ManipulatorBlock::SlaveLeft => 2 * BLOCK_FIELDS,
            ManipulatorBlock::SlaveRight => 3 * BLOCK_FIELDS,
        }
    }
}

impl Default for ManipulatorBlock {
    fn default() -> Self {
        ManipulatorBlock::SlaveLeft
    }
}

impl fmt::Display for ManipulatorBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ManipulatorBlock::MasterLeft => "master-left",
            ManipulatorBlock::MasterRight => "master-right",
            ManipulatorBlock::SlaveLeft => "slave-left",
            ManipulatorBlock::SlaveRight => "slave-right",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialSource {
    JigsawsFile,
    Synthetic,
}

/// An ordered sequence of kinematic samples with a uniform 1/30 s timestep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trial {
    pub id: String,
    pub samples: Vec<KinematicSample>,
    pub source: TrialSource,
}

impl Trial {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Positions as a packed sequence of 3-vectors.
    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.samples.iter().map(|s| s.p).collect()
    }
}

/// Parse one 76-column kinematics row and extract the selected block.
///
/// The timestamp is not encoded in the row; the caller (`load_trial`) assigns
/// it from the line index. `line_no` is 1-based and used only for errors.
pub fn parse_kinematics_row(
    line: &str,
    block: ManipulatorBlock,
) -> Result<KinematicSample, DataError> {
    parse_kinematics_row_at(line, block, 0)
}

fn parse_kinematics_row_at(
    line: &str,
    block: ManipulatorBlock,
    line_no: usize,
) -> Result<KinematicSample, DataError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != ROW_FIELDS {
        return Err(DataError::FieldCount {
            line: line_no,
            expected: ROW_FIELDS,
            found: tokens.len(),
        });
    }
    let off = block.offset();
    let mut fields = [0.0_f64; BLOCK_FIELDS];
    for (i, slot) in fields.iter_mut().enumerate() {
        let tok = tokens[off + i];
        *slot = tok.parse::<f64>().map_err(|_| DataError::Parse {
            line: line_no,
            field: off + i + 1,
            token: tok.to_string(),
        })?;
    }
    let mut p = [0.0; 3];
    let mut r = [0.0; 9];
    let mut v = [0.0; 3];
    let mut w = [0.0; 3];
    p.copy_from_slice(&fields[0..3]);
    r.copy_from_slice(&fields[3..12]);
    v.copy_from_slice(&fields[12..15]);
    w.copy_from_slice(&fields[15..18]);
    Ok(KinematicSample {
        t: 0.0,
        p,
        r,
        v,
        w,
        theta: fields[18],
    })
}

/// Load a kinematics file as a trial. Timestamps are `line_index / 30` s.
/// Blank lines are skipped; any malformed line aborts with its line number.
pub fn load_trial(path: &Path, block: ManipulatorBlock) -> Result<Trial, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut sample = parse_kinematics_row_at(&line, block, idx + 1)?;
        sample.t = samples.len() as f64 / SAMPLE_RATE_HZ;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(DataError::EmptyTrial(id));
    }
    Ok(Trial {
        id,
        samples,
        source: TrialSource::JigsawsFile,
    })
}

/// Which channels a normalizer covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelSelector {
    /// The 3 position channels (model default).
    Positions,
    /// All 19 kinematic channels.
    AllKinematics,
}

impl ChannelSelector {
    pub fn width(self) -> usize {
        match self {
            ChannelSelector::Positions => 3,
            ChannelSelector::AllKinematics => BLOCK_FIELDS,
        }
    }

    fn extract(self, s: &KinematicSample) -> Vec<f64> {
        match self {
            ChannelSelector::Positions => s.p.to_vec(),
            ChannelSelector::AllKinematics => s.block_fields().to_vec(),
        }
    }
}

/// Per-channel z-score statistics, fitted on training trials only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Lower bound on the fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

impl NormStats {
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.mean.len(), "channel count mismatch");
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.mean.len(), "channel count mismatch");
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| v * s + m)
            .collect()
    }

    pub fn normalize3(&self, p: [f64; 3]) -> [f64; 3] {
        let z = self.normalize(&p);
        [z[0], z[1], z[2]]
    }

    pub fn denormalize3(&self, z: [f64; 3]) -> [f64; 3] {
        let p = self.denormalize(&z);
        [p[0], p[1], p[2]]
    }
}

/// Fit per-channel mean and population std over all samples of all trials.
/// Std is floored at `STD_FLOOR` so constant channels stay invertible.
pub fn fit_normalizer(
    trials: &[Trial],
    channels: ChannelSelector,
) -> Result<NormStats, DataError> {
    let width = channels.width();
    let mut sum = vec![0.0_f64; width];
    let mut count = 0_usize;
    for trial in trials {
        for s in &trial.samples {
            for (acc, v) in sum.iter_mut().zip(channels.extract(s)) {
                *acc += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(DataError::EmptyInput);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0_f64; width];
    for trial in trials {
        for s in &trial.samples {
            for ((acc, v), m) in sq.iter_mut().zip(channels.extract(s)).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
    }
    let std: Vec<f64> = sq
        .iter()
        .map(|s| (s / count as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormStats { mean, std })
}

/// Window geometry for encoder/decoder slicing.
///
/// `tau` is an extra input-history lag: targets start `tau` samples after the
/// encoder window ends, modeling network-induced staleness of the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub enc_len: usize,
    pub label_len: usize,
    pub pred_len: usize,
    pub stride: usize,
    #[serde(default)]
    pub tau: usize,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.enc_len < 1 || self.label_len < 1 || self.pred_len < 1 || self.stride < 1 {
            return Err(DataError::BadWindowSpec(
                "enc_len, label_len, pred_len, stride must all be >= 1".into(),
            ));
        }
        if self.label_len > self.enc_len {
            return Err(DataError::BadWindowSpec(format!(
                "label_len {} exceeds enc_len {}",
                self.label_len, self.enc_len
            )));
        }
        Ok(())
    }

    /// Samples consumed by one window.
    pub fn span(&self) -> usize {
        self.enc_len + self.tau + self.pred_len
    }
}

/// Index ranges of one sliding window: encoder input and prediction target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowIndices {
    pub enc: Range<usize>,
    pub target: Range<usize>,
}

/// Slide windows over a trial of length `len`.
///
/// Window count is `floor((len - span) / stride) + 1` where
/// `span = enc_len + tau + pred_len`.
pub fn windows_for_len(len: usize, spec: &WindowSpec) -> Result<Vec<WindowIndices>, DataError> {
    spec.validate()?;
    let span = spec.span();
    if len < span {
        return Err(DataError::TrialTooShort { len, need: span });
    }
    let count = (len - span) / spec.stride + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let s = k * spec.stride;
        let enc = s..s + spec.enc_len;
        let tstart = s + spec.enc_len + spec.tau;
        out.push(WindowIndices {
            enc,
            target: tstart..tstart + spec.pred_len,
        });
    }
    Ok(out)
}

/// Slide windows over a trial: encoder input indices and the `pred_len` true
/// positions following each encoder window (after `tau` lag).
pub fn make_windows(trial: &Trial, spec: &WindowSpec) -> Result<Vec<WindowIndices>, DataError> {
    windows_for_len(trial.len(), spec)
}

/// Two superposed sinusoids plus Gaussian noise on one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisParams {
    pub amp: [f64; 2],
    pub freq_hz: [f64; 2],
    #[serde(default)]
    pub phase: [f64; 2],
    #[serde(default)]
    pub noise_std: f64,
}

impl AxisParams {
    fn value(&self, t: f64) -> f64 {
        let two_pi = std::f64::consts::TAU;
        self.amp[0] * (two_pi * self.freq_hz[0] * t + self.phase[0]).sin()
            + self.amp[1] * (two_pi * self.freq_hz[1] * t + self.phase[1]).sin()
    }

    fn derivative(&self, t: f64) -> f64 {
        let two_pi = std::f64::consts::TAU;
        self.amp[0] * two_pi * self.freq_hz[0] * (two_pi * self.freq_hz[0] * t + self.phase[0]).cos()
            + self.amp[1]
                * two_pi
                * self.freq_hz[1]
                * (two_pi * self.freq_hz[1] * t + self.phase[1]).cos()
    }
}

/// Per-axis synthetic trajectory parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub axes: [AxisParams; 3],
}

impl Default for SyntheticParams {
    fn default() -> Self {
        // Centimeter-scale motions at sub-Hz rates, roughly tool-tip like.
        SyntheticParams {
            axes: [
                AxisParams {
                    amp: [0.050, 0.020],
                    freq_hz: [0.30, 0.90],
                    phase: [0.0, 0.0],
                    noise_std: 0.002,
                },
                AxisParams {
                    amp: [0.040, 0.015],
                    freq_hz: [0.25, 1.10],
                    phase: [0.7, 0.0],
                    noise_std: 0.002,
                },
                AxisParams {
                    amp: [0.030, 0.010],
                    freq_hz: [0.40, 0.70],
                    phase: [1.3, 0.4],
                    noise_std: 0.002,
                },
            ],
        }
    }
}

/// Generate an `n`-sample synthetic trial at 30 Hz.
///
/// Positions are sums of two sinusoids plus seeded Gaussian noise; linear
/// velocity is the analytic derivative of the noiseless signal; the rotation
/// matrix stays at identity, so angular velocity is zero.
pub fn gen_synthetic(n: usize, seed: u64, params: &SyntheticParams) -> Trial {
    assert!(n >= 1, "need at least one sample");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / SAMPLE_RATE_HZ;
        let mut p = [0.0; 3];
        let mut v = [0.0; 3];
        for axis in 0..3 {
            let ap = &params.axes[axis];
            let noise = if ap.noise_std > 0.0 {
                ap.noise_std * normal.sample(&mut rng)
            } else {
                // Keep the draw count independent of noise_std so seeds stay
                // comparable across configurations.
                let _ = normal.sample(&mut rng);
                0.0
            };
            p[axis] = ap.value(t) + noise;
            v[axis] = ap.derivative(t);
        }
        let mut r = [0.0; 9];
        r[0] = 1.0;
        r[4] = 1.0;
        r[8] = 1.0;
        samples.push(KinematicSample {
            t,
            p,
            r,
            v,
            w: [0.0; 3],
            theta: 0.0,
        });
    }
    Trial {
        id: format!("synthetic-{seed:08x}"),
        samples,
        source: TrialSource::Synthetic,
    }
}

/// Generate a family of synthetic trials with per-trial random phases, so
/// trials differ while sharing the same spectral content.
pub fn synthetic_dataset(
    n_trials: usize,
    n_samples: usize,
    seed: u64,
    base: &SyntheticParams,
) -> Vec<Trial> {
    let mut trials = Vec::with_capacity(n_trials);
    for k in 0..n_trials {
        let trial_seed = crate::util::derive_seed(seed, "synthetic-trial", k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let mut params = *base;
        for axis in params.axes.iter_mut() {
            axis.phase[0] += rng.random::<f64>() * std::f64::consts::TAU;
            axis.phase[1] += rng.random::<f64>() * std::f64::consts::TAU;
        }
        let mut trial = gen_synthetic(n_samples, trial_seed, &params);
        trial.id = format!("synthetic-{k:03}");
        trials.push(trial);
    }
    trials
}

/// Trial-level 70/15/15 split by shuffled trial id order under a fixed seed.
/// Returns (train, val, test) index lists into `ids`.
pub fn split_trials(ids: &[String], seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let mut rng = ChaCha8Rng::seed_from_u64(crate::util::derive_seed(seed, "trial-split", 0));
    // Fisher-Yates on the sorted order.
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n = order.len();
    if n < 3 {
        return (order, Vec::new(), Vec::new());
    }
    let n_val = ((n as f64 * 0.15).floor() as usize).max(1);
    let n_test = n_val;
    let n_train = n - n_val - n_test;
    let train = order[..n_train].to_vec();
    let val = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();
    (train, val, test)
}

const TRIAL_CSV_HEADER: &str =
    "t,x,y,z,r11,r12,r13,r21,r22,r23,r31,r32,r33,vx,vy,vz,wx,wy,wz,theta";

/// Serialize a trial as CSV, one sample per row.
pub fn write_trial_csv<W: Write>(trial: &Trial, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{TRIAL_CSV_HEADER}")?;
    for s in &trial.samples {
        let mut row = Vec::with_capacity(20);
        row.push(fmt_g9(s.t));
        for v in s.p.iter().chain(s.r.iter()).chain(s.v.iter()).chain(s.w.iter()) {
            row.push(fmt_g9(*v));
        }
        row.push(fmt_g9(s.theta));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Read a trial back from the CSV written by [`write_trial_csv`].
pub fn read_trial_csv<R: BufRead>(reader: R, id: &str) -> Result<Trial, DataError> {
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io {
            path: id.to_string(),
            source,
        })?;
        if idx == 0 {
            if line.trim() != TRIAL_CSV_HEADER {
                return Err(DataError::Csv(format!("unexpected header '{line}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 20 {
            return Err(DataError::Csv(format!(
                "line {}: expected 20 fields, found {}",
                idx + 1,
                fields.len()
            )));
        }
        let parse = |i: usize| -> Result<f64, DataError> {
            fields[i].parse::<f64>().map_err(|_| DataError::Parse {
                line: idx + 1,
                field: i + 1,
                token: fields[i].to_string(),
            })
        };
        let mut vals = [0.0_f64; 20];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = parse(i)?;
        }
        let mut p = [0.0; 3];
        let mut r = [0.0; 9];
        let mut v3 = [0.0; 3];
        let mut w = [0.0; 3];
        p.copy_from_slice(&vals[1..4]);
        r.copy_from_slice(&vals[4..13]);
        v3.copy_from_slice(&vals[13..16]);
        w.copy_from_slice(&vals[16..19]);
        samples.push(KinematicSample {
            t: vals[0],
            p,
            r,
            v: v3,
            w,
            theta: vals[19],
        });
    }
    if samples.is_empty() {
        return Err(DataError::EmptyTrial(id.to_string()));
    }
    Ok(Trial {
        id: id.to_string(),
        samples,
        source: TrialSource::Synthetic,
    })
}
