//! Monte-Carlo simulation of the uplink lattice coding chain (both relay
//! strategies) and the downlink broadcast, at desk-scale blocklengths.
//!
//! All lattices here are uniform-scale. The shaping lattices are sized so
//! their second moments match the configured powers exactly. Randomness is
//! counter-based: every trial derives its own generator from
//! `(master seed, trial index)`, so results are bit-identical regardless
//! of execution order or thread count.

use crate::lattice::{
    build_codebook, Lattice, LatticeCodebook, LatticeError, NestedPair,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("recovered point is not in the codebook")]
    NotInCodebook,
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Rational square-root gain `sqrt(g) = num/den`, reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SqrtGain {
    num: u32,
    den: u32,
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 { a } else { gcd(b, a % b) }
}

impl SqrtGain {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(SimError::InvalidConfig("sqrt(g) = num/den needs num, den >= 1".into()));
        }
        let d = gcd(num, den);
        Ok(Self { num: num / d, den: den / d })
    }

    /// Rationalize `sqrt(g)` with denominator up to `max_den`; `None` when
    /// no small fraction matches to within 1e-9 relative.
    pub fn approximate(g: f64, max_den: u32) -> Option<Self> {
        if !(g > 0.0) || !g.is_finite() {
            return None;
        }
        let s = g.sqrt();
        for den in 1..=max_den {
            let num = (s * den as f64).round();
            if num >= 1.0 && ((num / den as f64) - s).abs() <= 1e-9 * s.max(1.0) {
                return Self::new(num as u32, den).ok();
            }
        }
        None
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn sqrt_g(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn g(&self) -> f64 {
        let s = self.sqrt_g();
        s * s
    }
}

/// Relay strategy plus its codebook sizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    /// Integer-combination decoding: shared shaping lattice, per-node fine
    /// lattices at spacings `delta/fine1` and `delta/fine2` (`fine1`
    /// divides `fine2`), integer coefficient `a`.
    Scheme1 { a: i64, fine1: u32, fine2: u32 },
    /// Scaled-lattice decoding: common fine lattice at spacing
    /// `delta / (den * refinement)`.
    Scheme2 { refinement: u32 },
}

/// Receiver scaling selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaMode {
    /// Minimize the effective-noise variance.
    Mmse,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub dim: usize,
    pub sqrt_gain: SqrtGain,
    pub alpha: AlphaMode,
}

/// Uplink experiment: scheme, source power, relay noise, trial budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacSimConfig {
    pub scheme: SchemeConfig,
    /// Source power (per-dimension second moment of the shaping lattices).
    pub p: f64,
    /// Relay noise variance; zero is allowed and means a noiseless uplink.
    pub n_r: f64,
    pub trials: u64,
    pub seed: u64,
}

/// Trial counts with a Wilson 95% interval on the error probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimResult {
    pub trials: u64,
    pub errors: u64,
    pub error_rate: f64,
    pub wilson_ci_95: (f64, f64),
}

impl SimResult {
    pub fn from_counts(trials: u64, errors: u64) -> Self {
        assert!(errors <= trials && trials > 0);
        let n = trials as f64;
        let p = errors as f64 / n;
        let z = 1.959963984540054_f64;
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        // clamp so the interval always contains the point estimate
        let lo = (center - half).max(0.0).min(p);
        let hi = (center + half).min(1.0).max(p);
        SimResult { trials, errors, error_rate: p, wilson_ci_95: (lo, hi) }
    }
}

/// Everything derived from a `MacSimConfig`: lattices, codebooks, and the
/// resolved scaling coefficient.
#[derive(Debug, Clone)]
pub struct MacContext {
    pub cfg: MacSimConfig,
    /// Shaping lattice of node 1 (second moment `p`).
    pub coarse1: Lattice<f64>,
    /// Shaping lattice of node 2 (second moment `p`).
    pub coarse2: Lattice<f64>,
    /// Lattice the relay quantizes onto.
    pub quantizer: Lattice<f64>,
    /// Lattice the relay reduces modulo before quantizing; also the
    /// modulus under which decoded and true combinations are compared.
    /// Equals the node-1 shaping lattice when `sqrt(g)` is an integer and
    /// the scaled lattice `sqrt(g) * coarse2` when `sqrt(g)` is a
    /// reciprocal integer.
    pub chain: Lattice<f64>,
    /// The coarser of the two shaping/scaled lattices; the target
    /// combination is defined modulo this lattice.
    pub outer: Lattice<f64>,
    pub book1: LatticeCodebook<f64>,
    pub book2: LatticeCodebook<f64>,
    pub alpha: f64,
    pub sqrt_g: f64,
    pub g: f64,
    /// Integer coefficient: `a` for the integer-combination scheme, unused
    /// otherwise.
    pub a: i64,
}

impl MacSimConfig {
    pub fn context(&self) -> Result<MacContext> {
        if self.trials == 0 {
            return Err(SimError::InvalidConfig("trials must be >= 1".into()));
        }
        if !(self.p > 0.0) || !self.p.is_finite() {
            return Err(SimError::InvalidConfig("power p must be positive".into()));
        }
        if !(self.n_r >= 0.0) || !self.n_r.is_finite() {
            return Err(SimError::InvalidConfig("noise n_r must be nonnegative".into()));
        }
        let n = self.scheme.dim;
        let sq = self.scheme.sqrt_gain;
        let sqrt_g = sq.sqrt_g();
        let g = sq.g();
        // sigma^2(delta Z^n) = delta^2/12 = p
        let delta = (12.0 * self.p).sqrt();
        let coarse = Lattice::uniform(n, delta)?;

        let (coarse1, coarse2, quantizer, chain, outer, book1, book2, a) = match self.scheme.kind {
            SchemeKind::Scheme1 { a, fine1, fine2 } => {
                if fine1 == 0 || fine2 == 0 || fine2 % fine1 != 0 {
                    return Err(SimError::InvalidConfig(
                        "scheme 1 needs fine1 >= 1 dividing fine2".into(),
                    ));
                }
                let f1 = Lattice::uniform(n, delta / fine1 as f64)?;
                let f2 = Lattice::uniform(n, delta / fine2 as f64)?;
                let b1 = build_codebook(&NestedPair::new(coarse.clone(), f1)?)?;
                let b2 = build_codebook(&NestedPair::new(coarse.clone(), f2.clone())?)?;
                (coarse.clone(), coarse.clone(), f2, coarse.clone(), coarse, b1, b2, a)
            }
            SchemeKind::Scheme2 { refinement } => {
                if refinement == 0 {
                    return Err(SimError::InvalidConfig("refinement must be >= 1".into()));
                }
                let m = refinement as f64;
                let q = sq.den() as f64;
                let scaled = coarse.scale_by(sqrt_g)?; // sqrt(g) * coarse2, second moment g*p
                let common = Lattice::uniform(n, delta / (q * m))?;
                let fine2 = Lattice::uniform(n, delta / (sq.num() as f64 * m))?;
                // the finest lattice containing both shaping-side lattices:
                // all dither-quantization offsets reduce away modulo it
                let chain = Lattice::uniform(n, delta / q)?;
                let outer = if g >= 1.0 { scaled.clone() } else { coarse.clone() };
                let b1 = build_codebook(&NestedPair::new(coarse.clone(), common.clone())?)?;
                let b2 = build_codebook(&NestedPair::new(coarse.clone(), fine2)?)?;
                (coarse.clone(), coarse, common, chain, outer, b1, b2, 0)
            }
        };

        let alpha = match self.scheme.alpha {
            AlphaMode::Fixed(a) => {
                if !a.is_finite() {
                    return Err(SimError::InvalidConfig("alpha must be finite".into()));
                }
                a
            }
            AlphaMode::Mmse => match self.scheme.kind {
                SchemeKind::Scheme1 { a, .. } => {
                    (a as f64 * sqrt_g + 1.0) * self.p / ((g + 1.0) * self.p + self.n_r)
                }
                SchemeKind::Scheme2 { .. } => {
                    (g + 1.0) * self.p / ((g + 1.0) * self.p + self.n_r)
                }
            },
        };

        Ok(MacContext {
            cfg: *self,
            coarse1,
            coarse2,
            quantizer,
            chain,
            outer,
            book1,
            book2,
            alpha,
            sqrt_g,
            g,
            a,
        })
    }
}

/// Dithered encoder: `X = [v - d] mod coarse`.
pub fn encode_node(v: &[f64], dither: &[f64], coarse: &Lattice<f64>) -> Result<Vec<f64>> {
    if v.len() != dither.len() {
        return Err(SimError::Lattice(LatticeError::DimensionMismatch {
            expected: v.len(),
            got: dither.len(),
        }));
    }
    let diff: Vec<f64> = v.iter().zip(dither.iter()).map(|(a, b)| a - b).collect();
    Ok(coarse.mod_lattice(&diff)?)
}

/// Uplink channel: `Y = X1 + sqrt(g) X2 + Z`, `Z ~ N(0, n_r I)`.
pub fn mac_channel<G: Rng + ?Sized>(
    x1: &[f64],
    x2: &[f64],
    sqrt_g: f64,
    n_r: f64,
    rng: &mut G,
) -> Vec<f64> {
    let sd = n_r.sqrt();
    x1.iter()
        .zip(x2.iter())
        .map(|(a, b)| {
            let z: f64 = StandardNormal.sample(rng);
            a + sqrt_g * b + sd * z
        })
        .collect()
}

/// The combination the relay tries to recover:
/// `[v1 + a v2] mod coarse` or `[v1 + sqrt(g) v2] mod outer`.
pub fn target_t(ctx: &MacContext, v1: &[f64], v2: &[f64]) -> Result<Vec<f64>> {
    let scale = match ctx.cfg.scheme.kind {
        SchemeKind::Scheme1 { .. } => ctx.a as f64,
        SchemeKind::Scheme2 { .. } => ctx.sqrt_g,
    };
    let sum: Vec<f64> = v1.iter().zip(v2.iter()).map(|(a, b)| a + scale * b).collect();
    Ok(ctx.outer.mod_lattice(&sum)?)
}

/// Relay decode output, with the reductions a caller may want to inspect.
#[derive(Debug, Clone)]
pub struct RelayDecode {
    /// Quantized lattice point before any final reduction.
    pub point: Vec<f64>,
    /// `point` reduced modulo the chain lattice; the coset actually
    /// recovered by the relay.
    pub mod_chain: Vec<f64>,
    /// `point` reduced modulo the outer (coarser) lattice.
    pub mod_outer: Vec<f64>,
}

fn relay_decode_common(
    ctx: &MacContext,
    y: &[f64],
    d1: &[f64],
    d2: &[f64],
    dither_scale: f64,
) -> Result<RelayDecode> {
    let s: Vec<f64> = y
        .iter()
        .zip(d1.iter().zip(d2.iter()))
        .map(|(y, (a, b))| ctx.alpha * y + a + dither_scale * b)
        .collect();
    let reduced = ctx.chain.mod_lattice(&s)?;
    let q = ctx.quantizer.nearest_point(&reduced)?;
    let point = match ctx.cfg.scheme.kind {
        // the integer-combination relay folds the quantized point back
        // into the shaping cell
        SchemeKind::Scheme1 { .. } => ctx.outer.mod_lattice(&q)?,
        SchemeKind::Scheme2 { .. } => q,
    };
    let mod_chain = ctx.chain.mod_lattice(&point)?;
    let mod_outer = ctx.outer.mod_lattice(&point)?;
    Ok(RelayDecode { point, mod_chain, mod_outer })
}

/// Integer-combination relay: `[Q_fine([alpha y + d1 + a d2] mod coarse)] mod coarse`.
pub fn relay_decode_scheme1(
    ctx: &MacContext,
    y: &[f64],
    d1: &[f64],
    d2: &[f64],
) -> Result<RelayDecode> {
    relay_decode_common(ctx, y, d1, d2, ctx.a as f64)
}

/// Scaled-lattice relay: quantize `[alpha y + d1 + sqrt(g) d2]` onto the
/// common fine lattice after reducing modulo the chain lattice.
pub fn relay_decode_scheme2(
    ctx: &MacContext,
    y: &[f64],
    d1: &[f64],
    d2: &[f64],
) -> Result<RelayDecode> {
    relay_decode_common(ctx, y, d1, d2, ctx.sqrt_g)
}

pub fn relay_decode(ctx: &MacContext, y: &[f64], d1: &[f64], d2: &[f64]) -> Result<RelayDecode> {
    match ctx.cfg.scheme.kind {
        SchemeKind::Scheme1 { .. } => relay_decode_scheme1(ctx, y, d1, d2),
        SchemeKind::Scheme2 { .. } => relay_decode_scheme2(ctx, y, d1, d2),
    }
}

/// Node-2 side recovery from a decoded combination:
/// `[t_hat - a v2] mod coarse` / `[t_hat - sqrt(g) v2] mod outer`,
/// looked up in node 1's codebook.
pub fn node2_recover(ctx: &MacContext, t_hat: &[f64], v2: &[f64]) -> Result<Vec<f64>> {
    let scale = match ctx.cfg.scheme.kind {
        SchemeKind::Scheme1 { .. } => ctx.a as f64,
        SchemeKind::Scheme2 { .. } => ctx.sqrt_g,
    };
    let diff: Vec<f64> = t_hat.iter().zip(v2.iter()).map(|(a, b)| a - scale * b).collect();
    let reduced = ctx.outer.mod_lattice(&diff)?;
    match ctx.book1.position(&reduced) {
        Some(i) => Ok(ctx.book1.codewords()[i].clone()),
        None => Err(SimError::NotInCodebook),
    }
}

/// Per-trial generator keyed by `(master seed, trial index)`.
fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

/// Coset equality modulo `lat` within a componentwise tolerance of
/// `1e-6 * delta`.
fn same_coset(lat: &Lattice<f64>, a: &[f64], b: &[f64]) -> Result<bool> {
    let diff: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    let r = lat.mod_lattice(&diff)?;
    let tol = 1e-6 * lat.uniform_spacing().unwrap_or(1.0);
    Ok(r.iter().all(|v| v.abs() <= tol))
}

/// One uplink trial; returns whether the relay missed the combination.
fn mac_trial(ctx: &MacContext, trial: u64) -> Result<bool> {
    let mut rng = trial_rng(ctx.cfg.seed, trial);
    let i1 = rng.random_range(0..ctx.book1.len());
    let i2 = rng.random_range(0..ctx.book2.len());
    let v1 = ctx.book1.codewords()[i1].clone();
    let v2 = ctx.book2.codewords()[i2].clone();
    let d1 = ctx.coarse1.sample_voronoi(&mut rng);
    let d2 = ctx.coarse2.sample_voronoi(&mut rng);
    let x1 = encode_node(&v1, &d1, &ctx.coarse1)?;
    let x2 = encode_node(&v2, &d2, &ctx.coarse2)?;
    let y = mac_channel(&x1, &x2, ctx.sqrt_g, ctx.cfg.n_r, &mut rng);
    let decode = relay_decode(ctx, &y, &d1, &d2)?;
    let t = target_t(ctx, &v1, &v2)?;
    Ok(!same_coset(&ctx.chain, &decode.point, &t)?)
}

/// Run the uplink experiment: fresh codewords and dithers every trial,
/// errors counted as coset mismatches modulo the chain lattice.
pub fn run_mac_experiment(cfg: &MacSimConfig) -> Result<SimResult> {
    let ctx = cfg.context()?;
    let errors = (0..cfg.trials)
        .into_par_iter()
        .map(|t| mac_trial(&ctx, t).map(|e| e as u64))
        .try_reduce(|| 0u64, |a, b| Ok(a + b))?;
    Ok(SimResult::from_counts(cfg.trials, errors))
}

/// Per-trial record for optional logging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialRecord {
    pub trial: u64,
    pub error: bool,
}

/// Like [`run_mac_experiment`], also returning the per-trial outcomes in
/// trial order.
pub fn run_mac_experiment_logged(cfg: &MacSimConfig) -> Result<(SimResult, Vec<TrialRecord>)> {
    let ctx = cfg.context()?;
    let records: Vec<TrialRecord> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| mac_trial(&ctx, t).map(|e| TrialRecord { trial: t, error: e }))
        .collect::<Result<Vec<_>>>()?;
    let errors = records.iter().filter(|r| r.error).count() as u64;
    Ok((SimResult::from_counts(cfg.trials, errors), records))
}

/// Downlink configuration appended to an uplink experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndToEndConfig {
    pub mac: MacSimConfig,
    pub p_r: f64,
    pub n_1: f64,
    pub n_2: f64,
    /// Number of rows in the relay's random codebook (<= 4096).
    pub broadcast_size: usize,
    /// Symbols per broadcast codeword.
    pub broadcast_len: usize,
}

/// Maximum relay codebook size for the downlink.
pub const MAX_BROADCAST_SIZE: usize = 4096;

/// Gaussian broadcast codebook with per-symbol power `p_r`.
#[derive(Debug, Clone)]
pub struct BroadcastCodebook {
    rows: Vec<Vec<f64>>,
}

impl BroadcastCodebook {
    pub fn generate(size: usize, len: usize, p_r: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = p_r.sqrt();
        let rows = (0..size)
            .map(|_| {
                (0..len)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        sd * z
                    })
                    .collect()
            })
            .collect();
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Transmit row `t_index`, add white noise of variance `noise_var`, and
/// decode by minimum Euclidean distance over the whole codebook.
pub fn broadcast_phase<G: Rng + ?Sized>(
    t_index: usize,
    codebook: &BroadcastCodebook,
    noise_var: f64,
    rng: &mut G,
) -> usize {
    let row = &codebook.rows[t_index];
    let sd = noise_var.sqrt();
    let y: Vec<f64> = row
        .iter()
        .map(|&s| {
            let z: f64 = StandardNormal.sample(rng);
            s + sd * z
        })
        .collect();
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (k, cand) in codebook.rows.iter().enumerate() {
        let d: f64 = y.iter().zip(cand.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Derived state for an end-to-end run.
pub struct EndToEndContext {
    mac: MacContext,
    n_1: f64,
    n_2: f64,
    /// Enumeration of the relay's decodable cosets (fine lattice points in
    /// the chain-lattice cell); the broadcast index set.
    relay_symbols: LatticeCodebook<f64>,
    /// Operating codebooks: node-1 codewords and node-2 codewords, index
    /// aligned with `relay_symbols` for the scaled-lattice scheme.
    op_book1: Vec<Vec<f64>>,
    op_book2: Vec<Vec<f64>>,
    /// Reverse map for node 1 under the integer-combination scheme:
    /// key of `[a v2] mod coarse` -> index of `v2`.
    reverse2: HashMap<Vec<i64>, usize>,
    broadcast: BroadcastCodebook,
}

impl EndToEndConfig {
    pub fn context(&self) -> Result<EndToEndContext> {
        if !(self.p_r > 0.0) || !self.p_r.is_finite() {
            return Err(SimError::InvalidConfig("relay power must be positive".into()));
        }
        if !(self.n_1 >= 0.0) || !(self.n_2 >= 0.0) {
            return Err(SimError::InvalidConfig("node noise must be nonnegative".into()));
        }
        if self.broadcast_len == 0 {
            return Err(SimError::InvalidConfig("broadcast blocklength must be >= 1".into()));
        }
        if self.broadcast_size > MAX_BROADCAST_SIZE {
            return Err(SimError::InvalidConfig(format!(
                "broadcast codebook size {} above {MAX_BROADCAST_SIZE}",
                self.broadcast_size
            )));
        }
        let mac = self.mac.context()?;
        let pair = NestedPair::new(mac.chain.clone(), mac.quantizer.clone())?;
        let relay_symbols = build_codebook(&pair)?;
        if self.broadcast_size < relay_symbols.len() {
            return Err(SimError::InvalidConfig(format!(
                "broadcast codebook size {} below the {} relay cosets",
                self.broadcast_size,
                relay_symbols.len()
            )));
        }

        let (op_book1, op_book2, reverse2) = match mac.cfg.scheme.kind {
            SchemeKind::Scheme1 { .. } => {
                // full codebooks; node 1 inverts v2 -> [a v2] mod coarse,
                // which must be one-to-one for the message to be decodable
                let mut reverse2 = HashMap::new();
                for (i, v) in mac.book2.codewords().iter().enumerate() {
                    let scaled: Vec<f64> = v.iter().map(|x| x * mac.a as f64).collect();
                    let reduced = mac.outer.mod_lattice(&scaled)?;
                    let key = mac
                        .quantizer
                        .integer_coords(&reduced)
                        .ok_or_else(|| SimError::InvalidConfig("coset key failure".into()))?;
                    if reverse2.insert(key, i).is_some() {
                        return Err(SimError::InvalidConfig(format!(
                            "coefficient a = {} folds distinct node-2 codewords together; \
                             pick a per-dimension codebook size coprime to a",
                            mac.a
                        )));
                    }
                }
                (mac.book1.codewords().to_vec(), mac.book2.codewords().to_vec(), reverse2)
            }
            SchemeKind::Scheme2 { .. } => {
                // operate both nodes on the cosets the relay can actually
                // resolve: node-1 codewords are the relay symbols, node-2
                // codewords are the same points scaled back by sqrt(g)
                let b1: Vec<Vec<f64>> = relay_symbols.codewords().to_vec();
                let b2: Vec<Vec<f64>> = relay_symbols
                    .codewords()
                    .iter()
                    .map(|s| s.iter().map(|x| x / mac.sqrt_g).collect())
                    .collect();
                (b1, b2, HashMap::new())
            }
        };

        let bc_seed = {
            // fixed stream tag so the codebook is shared by every trial
            let mut z = self.mac.seed ^ 0xB04D_CA57_5EED_0001u64;
            z = (z ^ (z >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
            z ^ (z >> 33)
        };
        let broadcast =
            BroadcastCodebook::generate(self.broadcast_size, self.broadcast_len, self.p_r, bc_seed);

        Ok(EndToEndContext {
            mac,
            n_1: self.n_1,
            n_2: self.n_2,
            relay_symbols,
            op_book1,
            op_book2,
            reverse2,
            broadcast,
        })
    }
}

/// Error rates for every stage and for the exchanged messages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndToEndResult {
    /// Relay failed to recover the combination.
    pub mac: SimResult,
    /// Broadcast index decoding at node 1 / node 2.
    pub broadcast_node1: SimResult,
    pub broadcast_node2: SimResult,
    /// Message errors: node 1's estimate of W2, node 2's estimate of W1.
    pub node1_message: SimResult,
    pub node2_message: SimResult,
    /// Either message wrong.
    pub joint: SimResult,
}

fn end_to_end_trial(ctx: &EndToEndContext, trial: u64) -> Result<[bool; 6]> {
    let mac = &ctx.mac;
    let mut rng = trial_rng(mac.cfg.seed, trial);
    let i1 = rng.random_range(0..ctx.op_book1.len());
    let i2 = rng.random_range(0..ctx.op_book2.len());
    let v1 = &ctx.op_book1[i1];
    let v2 = &ctx.op_book2[i2];
    let d1 = mac.coarse1.sample_voronoi(&mut rng);
    let d2 = mac.coarse2.sample_voronoi(&mut rng);
    let x1 = encode_node(v1, &d1, &mac.coarse1)?;
    let x2 = encode_node(v2, &d2, &mac.coarse2)?;
    let y = mac_channel(&x1, &x2, mac.sqrt_g, mac.cfg.n_r, &mut rng);
    let decode = relay_decode(mac, &y, &d1, &d2)?;
    let t = target_t(mac, v1, v2)?;
    let mac_err = !same_coset(&mac.chain, &decode.point, &t)?;

    let sent = ctx
        .relay_symbols
        .position(&decode.mod_chain)
        .ok_or_else(|| SimError::InvalidConfig("relay coset outside the symbol set".into()))?;
    let idx1 = broadcast_phase(sent, &ctx.broadcast, ctx.n_1, &mut rng);
    let idx2 = broadcast_phase(sent, &ctx.broadcast, ctx.n_2, &mut rng);
    let bc1_err = idx1 != sent;
    let bc2_err = idx2 != sent;

    let scale = match mac.cfg.scheme.kind {
        SchemeKind::Scheme1 { .. } => mac.a as f64,
        SchemeKind::Scheme2 { .. } => mac.sqrt_g,
    };

    // node 2 holds v2 and decodes W1 from its broadcast estimate; a
    // broadcast decode outside the relay's index range is a failure
    let w1_err = match ctx.relay_symbols.codewords().get(idx2) {
        None => true,
        Some(t2) => {
            let diff: Vec<f64> =
                t2.iter().zip(v2.iter()).map(|(a, b)| a - scale * b).collect();
            let rec1 = mac.chain.mod_lattice(&diff)?;
            match mac.cfg.scheme.kind {
                SchemeKind::Scheme1 { .. } => match mac.book1.position(&rec1) {
                    Some(j) => j != i1,
                    None => true,
                },
                SchemeKind::Scheme2 { .. } => match ctx.relay_symbols.position(&rec1) {
                    Some(j) => j != i1,
                    None => true,
                },
            }
        }
    };

    // node 1 holds v1 and decodes W2
    let w2_err = match ctx.relay_symbols.codewords().get(idx1) {
        None => true,
        Some(t1) => {
            let diff: Vec<f64> = t1.iter().zip(v1.iter()).map(|(a, b)| a - b).collect();
            let rec2 = mac.chain.mod_lattice(&diff)?;
            match mac.cfg.scheme.kind {
                SchemeKind::Scheme1 { .. } => {
                    match mac.quantizer.integer_coords(&rec2).and_then(|k| ctx.reverse2.get(&k)) {
                        Some(&j) => j != i2,
                        None => true,
                    }
                }
                SchemeKind::Scheme2 { .. } => match ctx.relay_symbols.position(&rec2) {
                    Some(j) => j != i2,
                    None => true,
                },
            }
        }
    };

    Ok([mac_err, bc1_err, bc2_err, w2_err, w1_err, w1_err || w2_err])
}

impl EndToEndContext {
    pub fn mac(&self) -> &MacContext {
        &self.mac
    }

    pub fn relay_symbols(&self) -> &LatticeCodebook<f64> {
        &self.relay_symbols
    }

    pub fn operating_books(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.op_book1, &self.op_book2)
    }
}

/// Chain uplink decode, broadcast of the decoded coset index, and
/// node-side message recovery; reports per-stage and per-message error
/// rates on the same trials.
pub fn run_end_to_end(cfg: &EndToEndConfig) -> Result<EndToEndResult> {
    let ctx = cfg.context()?;
    let trials = cfg.mac.trials;
    let counts = (0..trials)
        .into_par_iter()
        .map(|t| {
            end_to_end_trial(&ctx, t).map(|flags| {
                let mut c = [0u64; 6];
                for (ci, &f) in c.iter_mut().zip(flags.iter()) {
                    *ci = f as u64;
                }
                c
            })
        })
        .try_reduce(
            || [0u64; 6],
            |a, b| Ok([a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3], a[4] + b[4], a[5] + b[5]]),
        )?;
    Ok(EndToEndResult {
        mac: SimResult::from_counts(trials, counts[0]),
        broadcast_node1: SimResult::from_counts(trials, counts[1]),
        broadcast_node2: SimResult::from_counts(trials, counts[2]),
        node1_message: SimResult::from_counts(trials, counts[3]),
        node2_message: SimResult::from_counts(trials, counts[4]),
        joint: SimResult::from_counts(trials, counts[5]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;

    fn scheme1_cfg(g_num: u32, g_den: u32, a: i64, k: u32, dim: usize) -> SchemeConfig {
        SchemeConfig {
            kind: SchemeKind::Scheme1 { a, fine1: k, fine2: k },
            dim,
            sqrt_gain: SqrtGain::new(g_num, g_den).unwrap(),
            alpha: AlphaMode::Mmse,
        }
    }

    fn scheme2_cfg(g_num: u32, g_den: u32, m: u32, dim: usize) -> SchemeConfig {
        SchemeConfig {
            kind: SchemeKind::Scheme2 { refinement: m },
            dim,
            sqrt_gain: SqrtGain::new(g_num, g_den).unwrap(),
            alpha: AlphaMode::Mmse,
        }
    }

    fn mac_cfg(scheme: SchemeConfig, p: f64, n_r: f64, trials: u64, seed: u64) -> MacSimConfig {
        MacSimConfig { scheme, p, n_r, trials, seed }
    }

    #[test]
    fn sqrt_gain_reduction_and_approximation() {
        let s = SqrtGain::new(6, 4).unwrap();
        assert_eq!((s.num(), s.den()), (3, 2));
        assert_eq!(s.g(), 2.25);
        assert!(SqrtGain::new(0, 1).is_err());
        assert_eq!(SqrtGain::approximate(4.0, 16), Some(SqrtGain::new(2, 1).unwrap()));
        assert_eq!(SqrtGain::approximate(0.25, 16), Some(SqrtGain::new(1, 2).unwrap()));
        assert_eq!(SqrtGain::approximate(2.25, 16), Some(SqrtGain::new(3, 2).unwrap()));
        assert_eq!(SqrtGain::approximate(2.0, 16), None); // sqrt(2) irrational
    }

    #[test]
    fn sim_result_wilson_interval() {
        let r = SimResult::from_counts(1000, 100);
        assert!(r.wilson_ci_95.0 <= r.error_rate && r.error_rate <= r.wilson_ci_95.1);
        assert!(r.wilson_ci_95.0 >= 0.0 && r.wilson_ci_95.1 <= 1.0);
        let zero = SimResult::from_counts(1000, 0);
        assert_eq!(zero.error_rate, 0.0);
        assert_eq!(zero.wilson_ci_95.0, 0.0);
        assert!(zero.wilson_ci_95.1 > 0.0);
        let full = SimResult::from_counts(10, 10);
        assert_eq!(full.wilson_ci_95.1, 1.0);
    }

    #[test]
    fn encode_node_examples() {
        let coarse = Lattice::uniform(2, 4.0).unwrap();
        let z = vec![0.0, 0.0];
        assert_eq!(encode_node(&z, &z, &coarse).unwrap(), z);
        let v = vec![1.0, -1.0];
        assert_eq!(encode_node(&v, &v, &coarse).unwrap(), z);
        // transmitted power matches the shaping second moment within 2%
        let p = 2.5f64;
        let coarse = Lattice::uniform(1, (12.0 * p).sqrt()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut acc = 0.0;
        let trials = 100_000;
        for _ in 0..trials {
            let d = coarse.sample_voronoi(&mut rng);
            let x = encode_node(&[1.0], &d, &coarse).unwrap();
            acc += x[0] * x[0];
        }
        let emp = acc / trials as f64;
        assert!((emp - p).abs() < 0.02 * p, "power {emp} vs {p}");
    }

    #[test]
    fn mac_channel_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = mac_channel(&[1.0, 2.0], &[3.0, -1.0], 2.0, 0.0, &mut rng);
        assert_eq!(y, vec![7.0, 0.0]);
        // g = 0 removes the second input
        let y = mac_channel(&[1.5], &[99.0], 0.0, 0.0, &mut rng);
        assert_eq!(y, vec![1.5]);
        // empirical noise variance within 1%
        let mut acc = 0.0;
        let n = 1_000_000;
        for _ in 0..n {
            let y = mac_channel(&[0.0], &[0.0], 1.0, 3.0, &mut rng);
            acc += y[0] * y[0];
        }
        let emp = acc / n as f64;
        assert!((emp - 3.0).abs() < 0.03, "noise var {emp}");
    }

    #[test]
    fn target_t_matches_brute_force() {
        let cfg = mac_cfg(scheme1_cfg(1, 1, 1, 4, 1), 4.0 / 3.0, 1.0, 1, 0);
        let ctx = cfg.context().unwrap();
        assert_eq!(ctx.book1.len(), 4);
        let zero = vec![0.0];
        assert_eq!(target_t(&ctx, &zero, &zero).unwrap(), zero);
        for v1 in ctx.book1.codewords() {
            // target(v1, 0) is just the reduction of v1
            let t = target_t(&ctx, v1, &zero).unwrap();
            assert_eq!(&t, v1);
            for v2 in ctx.book2.codewords() {
                let t = target_t(&ctx, v1, v2).unwrap();
                // oracle: reduce the integer combination by exhaustive
                // search over coarse lattice points
                let raw = v1[0] + v2[0];
                let mut best = f64::INFINITY;
                let mut red = raw;
                for k in -4..=4 {
                    let cand = raw - 4.0 * k as f64;
                    if cand.abs() < best - 1e-12 {
                        best = cand.abs();
                        red = cand;
                    } else if (cand.abs() - best).abs() <= 1e-12 && cand > red {
                        // reduction keeps the representative in (-2, 2]
                        red = cand;
                    }
                }
                assert!((t[0] - red).abs() < 1e-9, "{} + {} -> {} vs {}", v1[0], v2[0], t[0], red);
            }
        }
    }

    #[test]
    fn relay_decode_scheme1_hand_computed() {
        // delta = 4, fine spacing 1, a = 1, alpha = 1, zero noise
        let mut scheme = scheme1_cfg(1, 1, 1, 4, 1);
        scheme.alpha = AlphaMode::Fixed(1.0);
        let ctx = mac_cfg(scheme, 4.0 / 3.0, 0.0, 1, 0).context().unwrap();
        let v1 = vec![1.0];
        let v2 = vec![2.0];
        let d1 = vec![0.3];
        let d2 = vec![-0.7];
        let x1 = encode_node(&v1, &d1, &ctx.coarse1).unwrap();
        let x2 = encode_node(&v2, &d2, &ctx.coarse2).unwrap();
        assert!((x1[0] - 0.7).abs() < 1e-12);
        assert!((x2[0] - -1.3).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = mac_channel(&x1, &x2, 1.0, 0.0, &mut rng);
        let dec = relay_decode_scheme1(&ctx, &y, &d1, &d2).unwrap();
        assert!((dec.point[0] - -1.0).abs() < 1e-12);
        let t = target_t(&ctx, &v1, &v2).unwrap();
        assert!((t[0] - -1.0).abs() < 1e-12);
        // wrong dither at the relay corrupts the estimate
        let bad = vec![d2[0] + 0.9];
        let dec_bad = relay_decode_scheme1(&ctx, &y, &d1, &bad).unwrap();
        assert!((dec_bad.point[0] - t[0]).abs() > 0.5);
    }

    fn zero_noise_exhaustive(scheme: SchemeConfig, p: f64) {
        let mut scheme = scheme;
        scheme.alpha = AlphaMode::Fixed(1.0);
        let ctx = mac_cfg(scheme, p, 0.0, 1, 0).context().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        for v1 in ctx.book1.codewords() {
            for v2 in ctx.book2.codewords() {
                let d1 = ctx.coarse1.sample_voronoi(&mut rng);
                let d2 = ctx.coarse2.sample_voronoi(&mut rng);
                let x1 = encode_node(v1, &d1, &ctx.coarse1).unwrap();
                let x2 = encode_node(v2, &d2, &ctx.coarse2).unwrap();
                let y = mac_channel(&x1, &x2, ctx.sqrt_g, 0.0, &mut rng);
                let dec = relay_decode(&ctx, &y, &d1, &d2).unwrap();
                let t = target_t(&ctx, v1, v2).unwrap();
                assert!(
                    same_coset(&ctx.chain, &dec.point, &t).unwrap(),
                    "scheme {:?} v1={v1:?} v2={v2:?}",
                    ctx.cfg.scheme.kind
                );
            }
        }
    }

    #[test]
    fn relay_decode_zero_noise_exact() {
        zero_noise_exhaustive(scheme1_cfg(1, 1, 1, 4, 2), 1.0);
        zero_noise_exhaustive(scheme1_cfg(2, 1, 2, 3, 2), 1.0);
        zero_noise_exhaustive(scheme2_cfg(1, 1, 4, 2), 1.0);
        zero_noise_exhaustive(scheme2_cfg(2, 1, 2, 2), 1.0);
        zero_noise_exhaustive(scheme2_cfg(1, 2, 2, 2), 1.0);
        zero_noise_exhaustive(scheme2_cfg(3, 2, 2, 1), 1.0);
    }

    #[test]
    fn schemes_agree_at_unit_gain_same_seed() {
        let trials = 5000;
        let c1 = mac_cfg(scheme1_cfg(1, 1, 1, 4, 2), 2.0, 0.8, trials, 7);
        let c2 = mac_cfg(scheme2_cfg(1, 1, 4, 2), 2.0, 0.8, trials, 7);
        let (r1, log1) = run_mac_experiment_logged(&c1).unwrap();
        let (r2, log2) = run_mac_experiment_logged(&c2).unwrap();
        assert_eq!(log1, log2);
        assert_eq!(r1, r2);
        assert!(r1.errors > 0, "want a nontrivial operating point");
    }

    #[test]
    fn scheme2_above_threshold_rate_errors() {
        // rate 3 bits/dim against a threshold around 0.66 bits: decoding
        // must fail often
        let cfg = mac_cfg(scheme2_cfg(1, 1, 8, 2), 2.0, 1.0, 2000, 3);
        let r = run_mac_experiment(&cfg).unwrap();
        assert!(r.error_rate > 0.3, "rate above threshold should fail, got {}", r.error_rate);
    }

    #[test]
    fn node2_recover_identity_exhaustive() {
        for scheme in [
            scheme1_cfg(1, 1, 1, 4, 1),
            scheme1_cfg(2, 1, 2, 3, 2),
            scheme2_cfg(2, 1, 2, 2),
            scheme2_cfg(1, 2, 2, 2),
        ] {
            let ctx = mac_cfg(scheme, 1.5, 1.0, 1, 0).context().unwrap();
            for v1 in ctx.book1.codewords() {
                for v2 in ctx.book2.codewords() {
                    let t = target_t(&ctx, v1, v2).unwrap();
                    let rec = node2_recover(&ctx, &t, v2).unwrap();
                    assert_eq!(&rec, v1);
                }
            }
            // v2 = 0: recovery is the plain reduction of t_hat
            let zero = vec![0.0; ctx.cfg.scheme.dim];
            let v1 = ctx.book1.codewords().last().unwrap();
            let t = target_t(&ctx, v1, &zero).unwrap();
            assert_eq!(&node2_recover(&ctx, &t, &zero).unwrap(), v1);
            // corrupting t_hat off the fine lattice is detected
            let mut bad = t.clone();
            bad[0] += 0.37 * ctx.quantizer.uniform_spacing().unwrap();
            assert!(matches!(node2_recover(&ctx, &bad, &zero), Err(SimError::NotInCodebook)));
        }
    }

    #[test]
    fn broadcast_phase_examples() {
        let book = BroadcastCodebook::generate(16, 4, 2.0, 99);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // noiseless: always exact
        for i in 0..16 {
            assert_eq!(broadcast_phase(i, &book, 0.0, &mut rng), i);
        }
        // single codeword: always correct whatever the noise
        let one = BroadcastCodebook::generate(1, 2, 1.0, 7);
        assert_eq!(broadcast_phase(0, &one, 1e9, &mut rng), 0);
        // far above capacity: near random guessing, error ~ 1 - 1/size
        let book = BroadcastCodebook::generate(64, 1, 1.0, 11);
        let mut errors = 0;
        let trials = 20_000;
        for t in 0..trials {
            let sent = t % 64;
            if broadcast_phase(sent, &book, 1e9, &mut rng) != sent {
                errors += 1;
            }
        }
        let rate = errors as f64 / trials as f64;
        assert!((rate - (1.0 - 1.0 / 64.0)).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn mac_experiment_zero_noise_and_determinism() {
        let cfg = mac_cfg(scheme1_cfg(2, 1, 2, 3, 2), 1.0, 0.0, 10_000, 42);
        let r = run_mac_experiment(&cfg).unwrap();
        assert_eq!(r.errors, 0);
        // bit-identical rerun
        let cfg2 = mac_cfg(scheme1_cfg(1, 1, 1, 4, 4), 1.0, 0.5, 20_000, 42);
        let a = run_mac_experiment(&cfg2).unwrap();
        let b = run_mac_experiment(&cfg2).unwrap();
        assert_eq!(a, b);
        assert!(a.errors > 0);
    }

    #[test]
    fn mac_experiment_deterministic_across_thread_counts() {
        let cfg = mac_cfg(scheme2_cfg(2, 1, 2, 4), 1.0, 0.3, 20_000, 9);
        let mut results = Vec::new();
        for threads in [1usize, 4] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let (res, log) = pool.install(|| run_mac_experiment_logged(&cfg).unwrap());
            results.push((res, log));
        }
        assert_eq!(results[0], results[1]);
    }

    #[test]
    fn mac_error_rate_monotone_in_backoff() {
        // same seed base, same channel, larger codebook (smaller back-off)
        // must not decode better
        let p = 1.0;
        let n_r = p / 100.0;
        let small = mac_cfg(scheme1_cfg(1, 1, 1, 3, 8), p, n_r, 30_000, 77);
        let large = mac_cfg(scheme1_cfg(1, 1, 1, 9, 8), p, n_r, 30_000, 77);
        let rs = run_mac_experiment(&small).unwrap();
        let rl = run_mac_experiment(&large).unwrap();
        assert!(
            rs.error_rate <= rl.error_rate,
            "back-off monotonicity: {} vs {}",
            rs.error_rate,
            rl.error_rate
        );
        assert!(rl.errors > 0);
    }

    #[test]
    fn effective_noise_variance_matches_closed_form() {
        // Z_eff = (alpha-1) X1 + (alpha sqrt(g) - a) X2 + alpha Z
        let p = 2.0;
        let n_r = 1.0;
        let (g, a, alpha) = (4.0f64, 2i64, 0.8f64);
        let want = ((alpha * g.sqrt() - a as f64).powi(2) + (alpha - 1.0).powi(2)) * p
            + alpha * alpha * n_r;
        let coarse = Lattice::uniform(1, (12.0 * p).sqrt()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let trials = 300_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let x1 = coarse.sample_voronoi(&mut rng)[0];
            let x2 = coarse.sample_voronoi(&mut rng)[0];
            let z: f64 = StandardNormal.sample(&mut rng);
            let zeff = (alpha - 1.0) * x1 + (alpha * g.sqrt() - a as f64) * x2
                + alpha * z * n_r.sqrt();
            acc += zeff * zeff;
        }
        let emp = acc / trials as f64;
        assert!((emp - want).abs() < 0.03 * want, "{emp} vs {want}");
    }

    #[test]
    fn crypto_lemma_in_situ_independence() {
        // the transmitted signal is independent of the codeword:
        // contingency chi-square over (codeword, 16-bin X) with a
        // 4-codeword one-dimensional codebook
        let ctx = mac_cfg(scheme1_cfg(1, 1, 1, 4, 1), 1.0, 1.0, 1, 0).context().unwrap();
        let delta = ctx.coarse1.uniform_spacing().unwrap();
        let bins = 16usize;
        let mut table = vec![vec![0u64; bins]; 4];
        let samples = 100_000u64;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..samples {
            let iv = rng.random_range(0..4usize);
            let v = ctx.book1.codewords()[iv].clone();
            let d = ctx.coarse1.sample_voronoi(&mut rng);
            let x = encode_node(&v, &d, &ctx.coarse1).unwrap()[0];
            let t = ((x / delta + 0.5).rem_euclid(1.0) * bins as f64) as usize;
            table[iv][t.min(bins - 1)] += 1;
        }
        let row: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
        let col: Vec<f64> =
            (0..bins).map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
        let n = samples as f64;
        let mut chi2 = 0.0;
        for i in 0..4 {
            for j in 0..bins {
                let e = row[i] * col[j] / n;
                if e > 0.0 {
                    let o = table[i][j] as f64;
                    chi2 += (o - e) * (o - e) / e;
                }
            }
        }
        // chi-square 0.999 quantile at (4-1)(16-1) = 45 degrees of freedom
        assert!(chi2 < 80.07673201081901, "independence chi2 = {chi2}");
    }

    fn e2e_cfg(
        scheme: SchemeConfig,
        p: f64,
        n_r: f64,
        node_noise: f64,
        trials: u64,
        seed: u64,
        size: usize,
        len: usize,
    ) -> EndToEndConfig {
        EndToEndConfig {
            mac: mac_cfg(scheme, p, n_r, trials, seed),
            p_r: p,
            n_1: node_noise,
            n_2: node_noise,
            broadcast_size: size,
            broadcast_len: len,
        }
    }

    #[test]
    fn end_to_end_noiseless_is_exact() {
        for scheme in [
            scheme1_cfg(1, 1, 1, 4, 2),
            scheme1_cfg(2, 1, 2, 3, 2),
            scheme1_cfg(3, 1, 3, 4, 1),
            scheme2_cfg(2, 1, 2, 2),
            scheme2_cfg(1, 2, 2, 2),
            scheme2_cfg(3, 1, 2, 1),
        ] {
            let mut scheme = scheme;
            scheme.alpha = AlphaMode::Fixed(1.0);
            let cfg = e2e_cfg(scheme, 1.0, 0.0, 0.0, 3000, 5, 256, 4);
            let r = run_end_to_end(&cfg).unwrap();
            assert_eq!(r.mac.errors, 0, "{:?}", scheme.kind);
            assert_eq!(r.joint.errors, 0, "{:?}", scheme.kind);
        }
    }

    #[test]
    fn end_to_end_error_isolation_and_union_bound() {
        // noiseless uplink, noisy downlink: every message error comes from
        // the broadcast
        let cfg = e2e_cfg(scheme1_cfg(1, 1, 1, 4, 2), 1.0, 0.0, 30.0, 20_000, 11, 256, 2);
        let r = run_end_to_end(&cfg).unwrap();
        assert_eq!(r.mac.errors, 0);
        assert!(r.joint.errors > 0);
        assert!(r.broadcast_node1.errors > 0);
        // union bound on the same trials
        assert!(r.joint.errors <= r.mac.errors + r.broadcast_node1.errors + r.broadcast_node2.errors);
        // per-node message errors are bounded by their own chain errors
        assert!(r.node2_message.errors <= r.mac.errors + r.broadcast_node2.errors);
        assert!(r.node1_message.errors <= r.mac.errors + r.broadcast_node1.errors);
    }

    #[test]
    fn end_to_end_rejects_bad_configs() {
        // a = 2 with an even per-dimension codebook size folds codewords
        let cfg = e2e_cfg(scheme1_cfg(2, 1, 2, 4, 1), 1.0, 0.1, 0.1, 10, 0, 256, 2);
        assert!(matches!(run_end_to_end(&cfg), Err(SimError::InvalidConfig(_))));
        // broadcast codebook too small for the relay coset count
        let cfg = e2e_cfg(scheme1_cfg(1, 1, 1, 4, 2), 1.0, 0.1, 0.1, 10, 0, 8, 2);
        assert!(matches!(run_end_to_end(&cfg), Err(SimError::InvalidConfig(_))));
        // broadcast codebook above the hard cap
        let cfg = e2e_cfg(scheme1_cfg(1, 1, 1, 4, 2), 1.0, 0.1, 0.1, 10, 0, 5000, 2);
        assert!(matches!(run_end_to_end(&cfg), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn config_validation() {
        assert!(mac_cfg(scheme1_cfg(1, 1, 1, 4, 2), 1.0, 1.0, 0, 0).context().is_err());
        assert!(mac_cfg(scheme1_cfg(1, 1, 1, 4, 2), 0.0, 1.0, 1, 0).context().is_err());
        assert!(mac_cfg(scheme1_cfg(1, 1, 1, 4, 2), 1.0, -1.0, 1, 0).context().is_err());
        // fine1 must divide fine2
        let bad = SchemeConfig {
            kind: SchemeKind::Scheme1 { a: 1, fine1: 3, fine2: 4 },
            dim: 2,
            sqrt_gain: SqrtGain::new(1, 1).unwrap(),
            alpha: AlphaMode::Mmse,
        };
        assert!(mac_cfg(bad, 1.0, 1.0, 1, 0).context().is_err());
        // codebook size cap: 64^4 = 2^24 per-node codewords
        let big = scheme1_cfg(1, 1, 1, 64, 4);
        assert!(mac_cfg(big, 1.0, 1.0, 1, 0).context().is_err());
    }

    #[test]
    fn mmse_alpha_resolution() {
        let ctx = mac_cfg(scheme2_cfg(1, 1, 4, 1), 10.0, 1.0, 1, 0).context().unwrap();
        assert!((ctx.alpha - 20.0 / 21.0).abs() < 1e-15);
        // zero channel noise drives the MMSE coefficient to one
        let ctx = mac_cfg(scheme2_cfg(2, 1, 2, 1), 10.0, 0.0, 1, 0).context().unwrap();
        assert_eq!(ctx.alpha, 1.0);
    }
}
