//! Network channel simulation: a 4-state hidden-Markov packet-loss model with
//! per-packet delay and jitter, plus the corruption step that maps a true
//! position stream to the zero-filled sequence the predictor sees.
//!
//! States: S1 gap-receive, S2 burst-receive, S3 burst-loss, S4 gap-loss.
//! A packet is lost when the chain sits in a loss state, when an independent
//! random-loss draw fires, or when its delay exceeds the deadline (late
//! packets are useless for real-time control and count as lost).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::fmt_g9;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid transition matrix: {0}")]
    InvalidMatrix(String),
    #[error("matrix is not row-stochastic: row {row} sums to {sum}")]
    NonStochastic { row: usize, sum: f64 },
    #[error("invalid channel config: {0}")]
    BadConfig(String),
    #[error("length mismatch: {positions} positions vs {outcomes} packets")]
    LengthMismatch { positions: usize, outcomes: usize },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("malformed trace csv: {0}")]
    Csv(String),
}

/// The four channel states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelState {
    /// Successful reception during a gap period.
    S1,
    /// Successful reception during a burst period.
    S2,
    /// Loss during a burst period.
    S3,
    /// Loss during a gap period.
    S4,
}

pub const ALL_STATES: [ChannelState; 4] = [
    ChannelState::S1,
    ChannelState::S2,
    ChannelState::S3,
    ChannelState::S4,
];

impl ChannelState {
    pub fn index(self) -> usize {
        match self {
            ChannelState::S1 => 0,
            ChannelState::S2 => 1,
            ChannelState::S3 => 2,
            ChannelState::S4 => 3,
        }
    }

    pub fn from_index(i: usize) -> ChannelState {
        ALL_STATES[i]
    }

    /// Loss states are S3 (burst) and S4 (gap).
    pub fn is_loss(self) -> bool {
        matches!(self, ChannelState::S3 | ChannelState::S4)
    }

    pub fn label(self) -> &'static str {
        match self {
            ChannelState::S1 => "S1",
            ChannelState::S2 => "S2",
            ChannelState::S3 => "S3",
            ChannelState::S4 => "S4",
        }
    }

    pub fn from_label(s: &str) -> Option<ChannelState> {
        match s {
            "S1" => Some(ChannelState::S1),
            "S2" => Some(ChannelState::S2),
            "S3" => Some(ChannelState::S3),
            "S4" => Some(ChannelState::S4),
            _ => None,
        }
    }
}

/// Row-stochastic 4x4 transition matrix over [S1, S2, S3, S4].
pub type TransitionMatrix = [[f64; 4]; 4];

const ROW_SUM_TOL: f64 = 1e-12;

pub fn validate_matrix(p: &TransitionMatrix) -> Result<(), ChannelError> {
    for (r, row) in p.iter().enumerate() {
        for &v in row {
            if !(0.0..=1.0).contains(&v) || v.is_nan() {
                return Err(ChannelError::InvalidMatrix(format!(
                    "entry {v} in row {r} outside [0, 1]"
                )));
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(ChannelError::NonStochastic { row: r, sum });
        }
    }
    Ok(())
}

/// Channel parameters. `p_random` is the independent sporadic-loss
/// probability applied on top of the Markov loss states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Transition matrix, rows S1..S4.
    pub transition: TransitionMatrix,
    pub initial_state: ChannelState,
    /// Fixed propagation delay, seconds.
    pub base_delay: f64,
    /// Std of the Gaussian jitter added to the delay, seconds.
    pub jitter_std: f64,
    /// Packets later than this are treated as lost, seconds.
    pub deadline: f64,
    /// Independent per-packet loss probability.
    pub p_random: f64,
}

impl Default for ChannelConfig {
    /// Bursty default: visible gap/burst alternation with a stationary
    /// Markov loss rate near 15%.
    fn default() -> Self {
        ChannelConfig {
            transition: [
                [0.94, 0.02, 0.01, 0.03],
                [0.10, 0.50, 0.35, 0.05],
                [0.05, 0.30, 0.60, 0.05],
                [0.70, 0.05, 0.05, 0.20],
            ],
            initial_state: ChannelState::S1,
            base_delay: 0.010,
            jitter_std: 0.003,
            deadline: 1.0 / 30.0,
            p_random: 0.01,
        }
    }
}

impl ChannelConfig {
    /// Milder bursty profile tuned so the stationary Markov loss rate sits
    /// near 10% (bursts still dominate over sporadic loss).
    pub fn bursty_10pct() -> Self {
        ChannelConfig {
            transition: [
                [0.96, 0.015, 0.005, 0.02],
                [0.10, 0.50, 0.35, 0.05],
                [0.05, 0.30, 0.60, 0.05],
                [0.80, 0.05, 0.05, 0.10],
            ],
            initial_state: ChannelState::S1,
            base_delay: 0.010,
            jitter_std: 0.003,
            deadline: 1.0 / 30.0,
            p_random: 0.002,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        validate_matrix(&self.transition)?;
        if self.deadline <= 0.0 {
            return Err(ChannelError::BadConfig("deadline must be > 0".into()));
        }
        if self.jitter_std < 0.0 {
            return Err(ChannelError::BadConfig("jitter_std must be >= 0".into()));
        }
        if self.base_delay < 0.0 {
            return Err(ChannelError::BadConfig("base_delay must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.p_random) {
            return Err(ChannelError::BadConfig("p_random must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Outcome of one packet through the channel.
///
/// `t_received`, `delay` and `jitter` are always populated (the draw happens
/// whether or not the packet survives); `lost` marks whether the receiver can
/// use it. `jitter` is arrival-minus-expected where expected arrival is
/// `t_sent + base_delay`, so `jitter == delay - base_delay` by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketOutcome {
    pub index: usize,
    pub state: ChannelState,
    pub lost: bool,
    pub t_sent: f64,
    pub t_received: f64,
    pub delay: f64,
    pub jitter: f64,
    pub deadline_missed: bool,
}

/// A full simulated channel run, with the seed and config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTrace {
    pub outcomes: Vec<PacketOutcome>,
    pub seed: u64,
    pub config: ChannelConfig,
}

impl ChannelTrace {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn loss_mask(&self) -> Vec<u8> {
        self.outcomes.iter().map(|o| o.lost as u8).collect()
    }
}

/// The corrupted stream the predictor sees: zero-filled positions, the loss
/// mask, and the aligned ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptedWindow {
    pub p_hat: Vec<[f64; 3]>,
    pub mask: Vec<u8>,
    pub truth: Vec<[f64; 3]>,
}

impl CorruptedWindow {
    pub fn len(&self) -> usize {
        self.p_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_hat.is_empty()
    }

    /// Slice out a sub-window.
    pub fn slice(&self, range: std::ops::Range<usize>) -> CorruptedWindow {
        CorruptedWindow {
            p_hat: self.p_hat[range.clone()].to_vec(),
            mask: self.mask[range.clone()].to_vec(),
            truth: self.truth[range].to_vec(),
        }
    }
}

/// Draw the next state from the categorical distribution in `p[state]`.
pub fn step_hmm(
    state: ChannelState,
    p: &TransitionMatrix,
    rng: &mut ChaCha8Rng,
) -> Result<ChannelState, ChannelError> {
    validate_matrix(p)?;
    Ok(step_hmm_unchecked(state, p, rng))
}

fn step_hmm_unchecked(state: ChannelState, p: &TransitionMatrix, rng: &mut ChaCha8Rng) -> ChannelState {
    let row = &p[state.index()];
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &pr) in row.iter().enumerate() {
        acc += pr;
        if u < acc {
            return ChannelState::from_index(j);
        }
    }
    // Float drift can leave u just above the accumulated sum; take the last
    // state with nonzero probability.
    let last = row.iter().rposition(|&pr| pr > 0.0).unwrap_or(3);
    ChannelState::from_index(last)
}

/// Stationary distribution of a transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stationary {
    pub pi: [f64; 4],
    /// Set when the chain is not irreducible; `pi` is then one valid
    /// stationary distribution, not the unique one.
    pub reducible: bool,
    /// Achieved `max_j |(pi P)_j - pi_j|`.
    pub residual: f64,
}

/// Solve `pi P = pi`, `sum(pi) = 1` by direct Gaussian elimination, falling
/// back to averaged fixed-point iteration if the system is singular.
pub fn stationary_distribution(p: &TransitionMatrix) -> Result<Stationary, ChannelError> {
    validate_matrix(p)?;
    let reducible = !is_irreducible(p);
    let pi = solve_stationary_direct(p).unwrap_or_else(|| solve_stationary_cesaro(p));
    let mut pi = pi;
    // Clamp float dust and renormalize.
    for v in pi.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    for v in pi.iter_mut() {
        *v /= total;
    }
    let residual = stationary_residual(&pi, p);
    Ok(Stationary {
        pi,
        reducible,
        residual,
    })
}

fn stationary_residual(pi: &[f64; 4], p: &TransitionMatrix) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..4 {
        let mut acc = 0.0;
        for i in 0..4 {
            acc += pi[i] * p[i][j];
        }
        worst = worst.max((acc - pi[j]).abs());
    }
    worst
}

fn is_irreducible(p: &TransitionMatrix) -> bool {
    // Boolean transitive closure over edges with positive probability.
    let mut reach = [[false; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            reach[i][j] = i == j || p[i][j] > 0.0;
        }
    }
    for k in 0..4 {
        for i in 0..4 {
            for j in 0..4 {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    reach.iter().all(|row| row.iter().all(|&r| r))
}

/// Gaussian elimination on (P^T - I) with the last equation replaced by
/// the normalization constraint. Returns None when the pivot collapses
/// (multiple stationary distributions).
fn solve_stationary_direct(p: &TransitionMatrix) -> Option<[f64; 4]> {
    let n = 4;
    let mut a = [[0.0_f64; 5]; 4];
    for j in 0..n {
        for i in 0..n {
            a[j][i] = p[i][j] - if i == j { 1.0 } else { 0.0 };
        }
        a[j][n] = 0.0;
    }
    for i in 0..n {
        a[n - 1][i] = 1.0;
    }
    a[n - 1][n] = 1.0;

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())?;
        if a[pivot_row][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot_row);
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r][col] / a[col][col];
            for c in col..=n {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut pi = [0.0; 4];
    for i in 0..n {
        pi[i] = a[i][n] / a[i][i];
    }
    Some(pi)
}

/// Cesaro-averaged fixed-point iteration; converges for any stochastic
/// matrix, including periodic and reducible chains.
fn solve_stationary_cesaro(p: &TransitionMatrix) -> [f64; 4] {
    let mut cur = [0.25_f64; 4];
    let mut avg = [0.0_f64; 4];
    let iters = 200_000;
    for _ in 0..iters {
        let mut next = [0.0_f64; 4];
        for j in 0..4 {
            for i in 0..4 {
                next[j] += cur[i] * p[i][j];
            }
        }
        for k in 0..4 {
            avg[k] += next[k];
        }
        cur = next;
    }
    for v in avg.iter_mut() {
        *v /= iters as f64;
    }
    avg
}

/// Simulate `n` packets sent every `dt` seconds.
///
/// Per packet the draws happen in a fixed order (state transition, jitter,
/// random loss) so traces are bit-reproducible under a seed. Packet 0 uses
/// the configured initial state directly.
pub fn simulate_trace(
    config: &ChannelConfig,
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<ChannelTrace, ChannelError> {
    config.validate()?;
    if n < 1 {
        return Err(ChannelError::BadConfig("need at least one packet".into()));
    }
    if dt <= 0.0 {
        return Err(ChannelError::BadConfig("dt must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut outcomes = Vec::with_capacity(n);
    let mut state = config.initial_state;
    for i in 0..n {
        if i > 0 {
            state = step_hmm_unchecked(state, &config.transition, &mut rng);
        }
        let g: f64 = normal.sample(&mut rng) * config.jitter_std;
        let delay = (config.base_delay + g).max(0.0);
        let random_loss: bool = rng.random::<f64>() < config.p_random;
        let t_sent = i as f64 * dt;
        let deadline_missed = delay > config.deadline;
        let lost = state.is_loss() || random_loss || deadline_missed;
        outcomes.push(PacketOutcome {
            index: i,
            state,
            lost,
            t_sent,
            t_received: t_sent + delay,
            delay,
            jitter: delay - config.base_delay,
            deadline_missed,
        });
    }
    Ok(ChannelTrace {
        outcomes,
        seed,
        config: config.clone(),
    })
}

/// Zero-fill lost packets: received positions pass through, lost ones become
/// the exact zero vector, and the mask records the losses.
pub fn apply_channel(
    positions: &[[f64; 3]],
    trace: &ChannelTrace,
) -> Result<CorruptedWindow, ChannelError> {
    if positions.len() != trace.outcomes.len() {
        return Err(ChannelError::LengthMismatch {
            positions: positions.len(),
            outcomes: trace.outcomes.len(),
        });
    }
    let mut p_hat = Vec::with_capacity(positions.len());
    let mut mask = Vec::with_capacity(positions.len());
    for (p, o) in positions.iter().zip(&trace.outcomes) {
        if o.lost {
            p_hat.push([0.0, 0.0, 0.0]);
            mask.push(1);
        } else {
            p_hat.push(*p);
            mask.push(0);
        }
    }
    Ok(CorruptedWindow {
        p_hat,
        mask,
        truth: positions.to_vec(),
    })
}

/// Aggregate statistics of one trace. A burst is a maximal run of lost
/// packets; delay and jitter statistics run over all packets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub loss_rate: f64,
    pub mean_burst_len: f64,
    pub burst_len_histogram: BTreeMap<usize, usize>,
    pub mean_delay: f64,
    pub jitter_std_est: f64,
}

pub fn trace_stats(trace: &ChannelTrace) -> Result<TraceStats, ChannelError> {
    if trace.outcomes.is_empty() {
        return Err(ChannelError::EmptyTrace);
    }
    let n = trace.outcomes.len();
    let mut lost_count = 0_usize;
    let mut bursts: Vec<usize> = Vec::new();
    let mut run = 0_usize;
    for o in &trace.outcomes {
        if o.lost {
            lost_count += 1;
            run += 1;
        } else if run > 0 {
            bursts.push(run);
            run = 0;
        }
    }
    if run > 0 {
        bursts.push(run);
    }
    let mut histogram = BTreeMap::new();
    for &b in &bursts {
        *histogram.entry(b).or_insert(0) += 1;
    }
    let mean_burst_len = if bursts.is_empty() {
        0.0
    } else {
        bursts.iter().sum::<usize>() as f64 / bursts.len() as f64
    };
    let mean_delay = trace.outcomes.iter().map(|o| o.delay).sum::<f64>() / n as f64;
    let mean_jitter = trace.outcomes.iter().map(|o| o.jitter).sum::<f64>() / n as f64;
    let jitter_var = trace
        .outcomes
        .iter()
        .map(|o| {
            let d = o.jitter - mean_jitter;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    Ok(TraceStats {
        loss_rate: lost_count as f64 / n as f64,
        mean_burst_len,
        burst_len_histogram: histogram,
        mean_delay,
        jitter_std_est: jitter_var.sqrt(),
    })
}

const TRACE_CSV_HEADER: &str = "index,state,lost,t_sent,t_received,delay,jitter,deadline_missed";

/// Serialize a trace as CSV.
pub fn write_trace_csv<W: Write>(trace: &ChannelTrace, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for o in &trace.outcomes {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            o.index,
            o.state.label(),
            o.lost as u8,
            fmt_g9(o.t_sent),
            fmt_g9(o.t_received),
            fmt_g9(o.delay),
            fmt_g9(o.jitter),
            o.deadline_missed as u8,
        )?;
    }
    Ok(())
}

/// Read back a trace CSV (outcomes only; seed/config travel separately).
pub fn read_trace_csv<R: BufRead>(reader: R) -> Result<Vec<PacketOutcome>, ChannelError> {
    let mut outcomes = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ChannelError::Csv(format!("read error: {e}")))?;
        if idx == 0 {
            if line.trim() != TRACE_CSV_HEADER {
                return Err(ChannelError::Csv(format!("unexpected header '{line}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(ChannelError::Csv(format!(
                "line {}: expected 8 fields, found {}",
                idx + 1,
                f.len()
            )));
        }
        let num = |s: &str| -> Result<f64, ChannelError> {
            s.parse::<f64>()
                .map_err(|_| ChannelError::Csv(format!("line {}: bad number '{s}'", idx + 1)))
        };
        outcomes.push(PacketOutcome {
            index: f[0]
                .parse()
                .map_err(|_| ChannelError::Csv(format!("line {}: bad index", idx + 1)))?,
            state: ChannelState::from_label(f[1])
                .ok_or_else(|| ChannelError::Csv(format!("line {}: bad state '{}'", idx + 1, f[1])))?,
            lost: f[2] == "1",
            t_sent: num(f[3])?,
            t_received: num(f[4])?,
            delay: num(f[5])?,
            jitter: num(f[6])?,
            deadline_missed: f[7] == "1",
        });
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const IDENTITY: TransitionMatrix = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];

    /// Independent oracle: plain power iteration to a tight tolerance.
    fn power_iteration_oracle(p: &TransitionMatrix) -> [f64; 4] {
        let mut pi = [0.25_f64; 4];
        for _ in 0..100_000 {
            let mut next = [0.0_f64; 4];
            for j in 0..4 {
                for i in 0..4 {
                    next[j] += pi[i] * p[i][j];
                }
            }
            let diff: f64 = next
                .iter()
                .zip(&pi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            pi = next;
            if diff < 1e-15 {
                break;
            }
        }
        pi
    }

    #[test]
    fn step_identity_is_absorbing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = step_hmm(ChannelState::S1, &IDENTITY, &mut rng).unwrap();
            assert_eq!(s, ChannelState::S1);
        }
    }

    #[test]
    fn step_deterministic_row_goes_to_s4() {
        let mut p = IDENTITY;
        p[0] = [0.0, 0.0, 0.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert_eq!(step_hmm(ChannelState::S1, &p, &mut rng).unwrap(), ChannelState::S4);
        }
    }

    #[test]
    fn step_uniform_row_frequencies() {
        let p: TransitionMatrix = [[0.25; 4]; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0_usize; 4];
        let n = 100_000;
        for _ in 0..n {
            let s = step_hmm_unchecked(ChannelState::S1, &p, &mut rng);
            counts[s.index()] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() < 0.01, "freq {freq}");
        }
    }

    #[test]
    fn step_rejects_bad_matrix() {
        let mut p = IDENTITY;
        p[1][1] = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            step_hmm(ChannelState::S1, &p, &mut rng),
            Err(ChannelError::NonStochastic { row: 1, .. })
        ));
    }

    #[test]
    fn stationary_identity_is_reducible() {
        let s = stationary_distribution(&IDENTITY).unwrap();
        assert!(s.reducible);
        assert!(s.residual <= 1e-10);
        let sum: f64 = s.pi.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_doubly_stochastic_is_uniform() {
        let p: TransitionMatrix = [
            [0.1, 0.2, 0.3, 0.4],
            [0.2, 0.1, 0.4, 0.3],
            [0.3, 0.4, 0.1, 0.2],
            [0.4, 0.3, 0.2, 0.1],
        ];
        let s = stationary_distribution(&p).unwrap();
        assert!(!s.reducible);
        for v in s.pi {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_default_matches_power_iteration_oracle() {
        let config = ChannelConfig::default();
        let s = stationary_distribution(&config.transition).unwrap();
        assert!(!s.reducible);
        assert!(s.residual <= 1e-10, "residual {}", s.residual);
        let oracle = power_iteration_oracle(&config.transition);
        for (a, b) in s.pi.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-10, "solver {a} vs oracle {b}");
        }
    }

    #[test]
    fn trace_no_loss_path() {
        let config = ChannelConfig {
            transition: IDENTITY,
            initial_state: ChannelState::S1,
            base_delay: 0.005,
            jitter_std: 0.0,
            deadline: 1.0 / 30.0,
            p_random: 0.0,
        };
        let trace = simulate_trace(&config, 1000, 1.0 / 30.0, 9).unwrap();
        assert!(trace.outcomes.iter().all(|o| !o.lost));
        let stats = trace_stats(&trace).unwrap();
        assert_eq!(stats.loss_rate, 0.0);
        assert!(stats.burst_len_histogram.is_empty());
    }

    #[test]
    fn trace_all_loss_path() {
        let mut transition = IDENTITY;
        for row in transition.iter_mut() {
            *row = [0.0, 0.0, 1.0, 0.0];
        }
        let config = ChannelConfig {
            transition,
            initial_state: ChannelState::S3,
            base_delay: 0.005,
            jitter_std: 0.0,
            deadline: 1.0 / 30.0,
            p_random: 0.0,
        };
        let trace = simulate_trace(&config, 500, 1.0 / 30.0, 9).unwrap();
        let stats = trace_stats(&trace).unwrap();
        assert_eq!(stats.loss_rate, 1.0);
        assert_eq!(stats.mean_burst_len, 500.0);
    }

    #[test]
    fn trace_is_bit_reproducible() {
        let config = ChannelConfig::default();
        let a = simulate_trace(&config, 5000, 1.0 / 30.0, 77).unwrap();
        let b = simulate_trace(&config, 5000, 1.0 / 30.0, 77).unwrap();
        assert_eq!(a, b);
        let c = simulate_trace(&config, 5000, 1.0 / 30.0, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_loss_matches_stationary() {
        let mut config = ChannelConfig::default();
        config.p_random = 0.0;
        config.jitter_std = 0.0;
        let trace = simulate_trace(&config, 200_000, 1.0 / 30.0, 5).unwrap();
        let stats = trace_stats(&trace).unwrap();
        let st = stationary_distribution(&config.transition).unwrap();
        let expected = st.pi[2] + st.pi[3];
        assert!(
            (stats.loss_rate - expected).abs() < 0.01,
            "empirical {} vs stationary {}",
            stats.loss_rate,
            expected
        );
    }

    #[test]
    fn apply_channel_matches_piecewise_definition() {
        let config = ChannelConfig {
            transition: IDENTITY,
            initial_state: ChannelState::S1,
            base_delay: 0.0,
            jitter_std: 0.0,
            deadline: 1.0,
            p_random: 0.0,
        };
        let mut trace = simulate_trace(&config, 6, 1.0 / 30.0, 0).unwrap();
        let positions: Vec<[f64; 3]> = (0..6).map(|i| [i as f64 + 1.0, 0.5, -0.5]).collect();

        // No losses: identity channel.
        let w = apply_channel(&positions, &trace).unwrap();
        assert_eq!(w.p_hat, positions);
        assert!(w.mask.iter().all(|&m| m == 0));

        // Losses at indices 2 and 5.
        trace.outcomes[2].lost = true;
        trace.outcomes[5].lost = true;
        let w = apply_channel(&positions, &trace).unwrap();
        for i in 0..6 {
            if i == 2 || i == 5 {
                assert_eq!(w.p_hat[i], [0.0, 0.0, 0.0]);
                assert_eq!(w.mask[i], 1);
            } else {
                assert_eq!(w.p_hat[i], positions[i]);
                assert_eq!(w.mask[i], 0);
            }
        }
        assert_eq!(w.truth, positions);

        // All lost.
        for o in trace.outcomes.iter_mut() {
            o.lost = true;
        }
        let w = apply_channel(&positions, &trace).unwrap();
        assert!(w.p_hat.iter().all(|p| *p == [0.0, 0.0, 0.0]));
        assert!(w.mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn apply_channel_rejects_length_mismatch() {
        let config = ChannelConfig::default();
        let trace = simulate_trace(&config, 5, 1.0 / 30.0, 0).unwrap();
        let positions = vec![[0.0; 3]; 4];
        assert!(matches!(
            apply_channel(&positions, &trace),
            Err(ChannelError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn burst_stats_count_runs() {
        let config = ChannelConfig::default();
        let mut trace = simulate_trace(&config, 5, 1.0 / 30.0, 1).unwrap();
        let pattern = [false, true, true, false, true];
        for (o, &l) in trace.outcomes.iter_mut().zip(&pattern) {
            o.lost = l;
        }
        let stats = trace_stats(&trace).unwrap();
        assert_eq!(stats.loss_rate, 0.6);
        assert_eq!(stats.mean_burst_len, 1.5);
        assert_eq!(stats.burst_len_histogram.get(&2), Some(&1));
        assert_eq!(stats.burst_len_histogram.get(&1), Some(&1));
    }

    #[test]
    fn geometric_burst_length_oracle() {
        // Self-loop q on the loss state gives geometric bursts, mean 1/(1-q).
        let q = 0.6;
        let enter = 0.2;
        let transition: TransitionMatrix = [
            [1.0 - enter, 0.0, enter, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [1.0 - q, 0.0, q, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let config = ChannelConfig {
            transition,
            initial_state: ChannelState::S1,
            base_delay: 0.0,
            jitter_std: 0.0,
            deadline: 1.0,
            p_random: 0.0,
        };
        let trace = simulate_trace(&config, 1_000_000, 1.0 / 30.0, 13).unwrap();
        let stats = trace_stats(&trace).unwrap();
        let expected = 1.0 / (1.0 - q);
        let rel = (stats.mean_burst_len - expected).abs() / expected;
        assert!(rel < 0.02, "mean burst {} vs {}", stats.mean_burst_len, expected);
    }

    #[test]
    fn jitter_delay_deadline_relations_hold() {
        let mut config = ChannelConfig::default();
        config.jitter_std = 0.02;
        config.deadline = 0.02;
        let trace = simulate_trace(&config, 20_000, 1.0 / 30.0, 21).unwrap();
        let mut missed = 0;
        for o in &trace.outcomes {
            assert_eq!(o.jitter, o.delay - config.base_delay);
            assert_eq!(o.deadline_missed, o.delay > config.deadline);
            assert!((o.t_received - o.t_sent - o.delay).abs() < 1e-15);
            assert!(o.delay >= 0.0);
            if o.deadline_missed {
                missed += 1;
                assert!(o.lost);
            }
        }
        assert!(missed > 0, "deadline path never exercised");
    }

    #[test]
    fn trace_csv_round_trips() {
        let config = ChannelConfig::default();
        let trace = simulate_trace(&config, 50, 1.0 / 30.0, 3).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let back = read_trace_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back.len(), trace.outcomes.len());
        for (a, b) in trace.outcomes.iter().zip(&back) {
            assert_eq!(a.index, b.index);
            assert_eq!(a.state, b.state);
            assert_eq!(a.lost, b.lost);
            assert_eq!(a.deadline_missed, b.deadline_missed);
        }
    }

    proptest! {
        #[test]
        fn mask_iff_zero_when_positions_offset(seed in 0u64..5000, n in 1usize..200) {
            let config = ChannelConfig::default();
            let trace = simulate_trace(&config, n, 1.0 / 30.0, seed).unwrap();
            // Positions bounded away from zero so p_hat == 0 only via loss.
            let positions: Vec<[f64; 3]> = (0..n)
                .map(|i| [1.0 + (i as f64 * 0.37).sin().abs(), 2.0, 3.0])
                .collect();
            let w = apply_channel(&positions, &trace).unwrap();
            for i in 0..n {
                let is_zero = w.p_hat[i] == [0.0, 0.0, 0.0];
                prop_assert_eq!(w.mask[i] == 1, is_zero);
                prop_assert_eq!(w.mask[i] == 1, trace.outcomes[i].lost);
            }
        }
    }
}
