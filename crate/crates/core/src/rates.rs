//! Closed-form rate analysis for the two-way relay setup.
//!
//! MMSE scaling coefficients, achievable MAC rates for the two relay
//! strategies, upper convex envelopes with tangent-point root solving,
//! downlink rates, the cut-set outer bound, the high-SNR region, the
//! error exponent for lattice decoding, and the gap-to-outer-bound
//! formulas.
//!
//! All rates are bits per real channel use; all powers and variances are
//! linear. Callers convert dB at the boundary.

use crate::real::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RatesError {
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("channel gain must be nonnegative")]
    NegativeGain,
    #[error("input must be finite")]
    NonFinite,
    #[error("curve offset >= 1: the curve passes through the origin, no time sharing needed")]
    NoTimeSharing,
    #[error("root bracket has no sign change")]
    NoBracket,
    #[error("SNR must be nonnegative")]
    NegativeSnr,
    #[error("high-SNR region needs P/N_R > 1 and g*P/N_R > 1")]
    SnrTooLow,
    #[error("error exponent is defined for x >= 1")]
    ExponentDomain,
    #[error("rate must stay below the threshold rate for the bound to hold")]
    VacuousBound,
    #[error("gain {0} outside the domain of this gap formula")]
    GainOutOfRange(f64),
}

pub type Result<T> = std::result::Result<T, RatesError>;

/// Source and relay powers, channel gain, and noise variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams<R: Real> {
    /// Source power (both sources).
    pub p: R,
    /// Relay power.
    pub p_r: R,
    /// Power gain of the node-2 -> relay link (amplitude gain `sqrt(g)`).
    pub g: R,
    /// Noise variance at the relay.
    pub n_r: R,
    /// Noise variance at node 1.
    pub n_1: R,
    /// Noise variance at node 2.
    pub n_2: R,
}

impl<R: Real> ChannelParams<R> {
    pub fn new(p: R, p_r: R, g: R, n_r: R, n_1: R, n_2: R) -> Result<Self> {
        for (v, name) in [(p, "p"), (p_r, "p_r"), (n_r, "n_r"), (n_1, "n_1"), (n_2, "n_2")] {
            if !(v > R::zero()) || !v.is_finite() {
                return Err(RatesError::NonPositive(name));
            }
        }
        if !(g >= R::zero()) || !g.is_finite() {
            return Err(RatesError::NegativeGain);
        }
        Ok(Self { p, p_r, g, n_r, n_1, n_2 })
    }

    /// Equal powers and equal noise variances everywhere.
    pub fn symmetric(p: R, g: R, n: R) -> Result<Self> {
        Self::new(p, p, g, n, n, n)
    }

    pub fn is_symmetric(&self) -> bool {
        self.p == self.p_r && self.n_1 == self.n_2 && self.n_1 == self.n_r
    }

    /// Uplink signal-to-noise ratio `P / N_R`.
    pub fn snr(&self) -> R {
        self.p / self.n_r
    }
}

/// Rectangular achievable region: `(R1, R2)` is in the region iff
/// `R1 <= r1_max` and `R2 <= r2_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRegion<R: Real> {
    pub r1_max: R,
    pub r2_max: R,
}

impl<R: Real> RateRegion<R> {
    pub fn contains(&self, r1: R, r2: R) -> bool {
        r1 >= R::zero() && r2 >= R::zero() && r1 <= self.r1_max && r2 <= self.r2_max
    }
}

/// `[x]+ = max(0, x)`.
pub fn clip_plus<R: Real>(x: R) -> R {
    x.max(R::zero())
}

/// Closest integer to `sqrt(g)`, half-integer ties rounding up.
pub fn closest_integer_to_sqrt_gain<R: Real>(g: R) -> i64 {
    let s = g.sqrt() + R::cast(0.5);
    s.floor().to_f64().map(|v| v as i64).unwrap_or(0)
}

/// MMSE scaling for the integer-combination strategy: the coefficient
/// minimizing the effective-noise variance for integer coefficient `a`.
pub fn alpha_mmse_scheme1<R: Real>(params: &ChannelParams<R>, a: i64) -> R {
    let af = R::cast(a as f64);
    (af * params.g.sqrt() + R::one()) * params.p
        / ((params.g + R::one()) * params.p + params.n_r)
}

/// MMSE scaling when the target combination uses the exact gain `sqrt(g)`.
pub fn alpha_mmse_scheme2<R: Real>(params: &ChannelParams<R>) -> R {
    (params.g + R::one()) * params.p / ((params.g + R::one()) * params.p + params.n_r)
}

/// Effective-noise variance after scaling by `alpha`:
/// `((alpha*sqrt(g) - a)^2 + (alpha - 1)^2) P + alpha^2 N_R`.
pub fn scheme1_effective_noise<R: Real>(params: &ChannelParams<R>, a: i64, alpha: R) -> R {
    let af = R::cast(a as f64);
    let m1 = alpha * params.g.sqrt() - af;
    let m2 = alpha - R::one();
    (m1 * m1 + m2 * m2) * params.p + alpha * alpha * params.n_r
}

/// Achievable exchange rate of the integer-combination strategy:
/// `[1/2 log2(P / N_eq)]+` with `a` the closest integer to `sqrt(g)` and
/// `alpha` at its MMSE value.
pub fn scheme1_mac_rate<R: Real>(params: &ChannelParams<R>) -> R {
    let a = closest_integer_to_sqrt_gain(params.g);
    let alpha = alpha_mmse_scheme1(params, a);
    let n_eq = scheme1_effective_noise(params, a, alpha);
    clip_plus((params.p / n_eq).half_log2())
}

/// Per-user MAC rate thresholds of the scaled-lattice strategy:
/// `r1* = [1/2 log2(1/(g+1) + P/N_R)]+`,
/// `r2* = [1/2 log2(g/(g+1) + g P/N_R)]+`.
pub fn scheme2_mac_rates<R: Real>(params: &ChannelParams<R>) -> (R, R) {
    let g = params.g;
    let snr = params.snr();
    let one = R::one();
    let r1 = clip_plus((one / (g + one) + snr).half_log2());
    let r2 = if g == R::zero() {
        R::zero()
    } else {
        clip_plus((g / (g + one) + g * snr).half_log2())
    };
    (r1, r2)
}

/// Tangent point of the line through the origin touching
/// `f(x) = 1/2 log2(c + b x)`: the unique positive root of
/// `b x / (c + b x) = ln(c + b x)`, found by bisection on `[1e-12, 1e9]`.
///
/// Requires `0 < c < 1` (for `c >= 1` the curve already passes through the
/// origin and no time sharing is needed).
pub fn tangent_point<R: Real>(c: R, b: R) -> Result<R> {
    if !(b > R::zero()) || !b.is_finite() {
        return Err(RatesError::NonPositive("gain b"));
    }
    if !(c > R::zero()) || !c.is_finite() {
        return Err(RatesError::NonPositive("offset c"));
    }
    if c >= R::one() {
        return Err(RatesError::NoTimeSharing);
    }
    let h = |x: R| -> R {
        let u = c + b * x;
        b * x / u - u.ln()
    };
    let mut lo = R::cast(1e-12);
    let mut hi = R::cast(1e9);
    if !(h(lo) > R::zero()) || !(h(hi) < R::zero()) {
        return Err(RatesError::NoBracket);
    }
    let tol = R::cast(1e-10).max(R::epsilon() * R::cast(4.0));
    for _ in 0..200 {
        let mid = (lo + hi) * R::cast(0.5);
        if h(mid) > R::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol {
            break;
        }
    }
    let x = (lo + hi) * R::cast(0.5);
    let residual_limit = R::cast(1e-8).max(R::epsilon() * R::cast(100.0));
    if h(x).abs() > residual_limit {
        return Err(RatesError::NoBracket);
    }
    Ok(x)
}

/// Piecewise upper convex envelope of `[1/2 log2(c + b x)]+` with respect
/// to SNR `x`: a line through the origin up to the tangent point, the raw
/// curve beyond it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UceCurve<R: Real> {
    /// Additive constant inside the log, in `(0, 1]`.
    pub offset: R,
    /// Multiplier of SNR inside the log.
    pub gain: R,
    /// Tangent point `x*` (zero when `offset == 1`).
    pub tangent_point: R,
    /// Slope of the linear segment, `f'(x*)` in bits per unit SNR.
    pub slope: R,
}

impl<R: Real> UceCurve<R> {
    pub fn new(offset: R, gain: R) -> Result<Self> {
        if !(gain > R::zero()) || !gain.is_finite() {
            return Err(RatesError::NonPositive("gain b"));
        }
        if !(offset > R::zero()) || offset > R::one() {
            return Err(RatesError::NonPositive("offset c"));
        }
        let ln2x2 = R::cast(2.0 * std::f64::consts::LN_2);
        if offset == R::one() {
            // curve passes through the origin; envelope equals the curve
            return Ok(Self {
                offset,
                gain,
                tangent_point: R::zero(),
                slope: gain / ln2x2,
            });
        }
        let x = tangent_point(offset, gain)?;
        let slope = gain / (ln2x2 * (offset + gain * x));
        Ok(Self { offset, gain, tangent_point: x, slope })
    }

    /// Envelope value at `snr >= 0`.
    pub fn rate(&self, snr: R) -> Result<R> {
        if !(snr >= R::zero()) {
            return Err(RatesError::NegativeSnr);
        }
        if snr >= self.tangent_point {
            Ok((self.offset + self.gain * snr).half_log2())
        } else {
            Ok(self.slope * snr)
        }
    }

    /// Raw (clipped) rate curve without time sharing.
    pub fn raw_rate(&self, snr: R) -> Result<R> {
        if !(snr >= R::zero()) {
            return Err(RatesError::NegativeSnr);
        }
        Ok(clip_plus((self.offset + self.gain * snr).half_log2()))
    }
}

/// Envelope for the user-1 curve `1/2 log2(1/(g+1) + x)`.
pub fn r1_uce_curve<R: Real>(g: R) -> Result<UceCurve<R>> {
    if !(g >= R::zero()) {
        return Err(RatesError::NegativeGain);
    }
    UceCurve::new(R::one() / (g + R::one()), R::one())
}

/// Envelope for the user-2 curve `1/2 log2(g/(g+1) + g x)`; `g > 0`.
pub fn r2_uce_curve<R: Real>(g: R) -> Result<UceCurve<R>> {
    if !(g > R::zero()) {
        return Err(RatesError::NonPositive("g"));
    }
    UceCurve::new(g / (g + R::one()), g)
}

/// Downlink capacities: `(cap for R1, cap for R2)` =
/// `(1/2 log2(1 + P_R/N_2), 1/2 log2(1 + P_R/N_1))`.
/// R1 travels to node 2 and R2 to node 1, hence the crossed noise terms.
pub fn downlink_rates<R: Real>(params: &ChannelParams<R>) -> (R, R) {
    let one = R::one();
    (
        (one + params.p_r / params.n_2).half_log2(),
        (one + params.p_r / params.n_1).half_log2(),
    )
}

/// Achievable region of the integer-combination scheme: both users are
/// capped by the combination-decoding rate and their own downlink rate.
///
/// User 2 is additionally capped by the single-user bound of its
/// attenuated uplink, `1/2 log2(1 + g P/N_R)`: when the rounded
/// coefficient mismatches `sqrt(g)` badly the raw decoding rate can poke
/// above that converse, and with `a = 0` the decoded combination carries
/// no user-2 information at all.
pub fn scheme1_region<R: Real>(params: &ChannelParams<R>) -> RateRegion<R> {
    let a = closest_integer_to_sqrt_gain(params.g);
    let mac = scheme1_mac_rate(params);
    let (cap1, cap2) = downlink_rates(params);
    let r2_uplink_cut = (R::one() + params.g * params.snr()).half_log2();
    let r2 = if a == 0 { R::zero() } else { mac.min(r2_uplink_cut).min(cap2) };
    RateRegion { r1_max: mac.min(cap1), r2_max: r2 }
}

/// Achievable region of the scaled-lattice scheme with time sharing.
pub fn scheme2_region<R: Real>(params: &ChannelParams<R>) -> Result<RateRegion<R>> {
    let snr = params.snr();
    let (cap1, cap2) = downlink_rates(params);
    let r1 = r1_uce_curve(params.g)?.rate(snr)?.min(cap1);
    let r2 = if params.g == R::zero() {
        R::zero()
    } else {
        r2_uce_curve(params.g)?.rate(snr)?.min(cap2)
    };
    Ok(RateRegion { r1_max: r1, r2_max: r2 })
}

/// Cut-set outer bound.
pub fn cutset_region<R: Real>(params: &ChannelParams<R>) -> RateRegion<R> {
    let one = R::one();
    let up1 = (one + params.snr()).half_log2();
    let up2 = (one + params.g * params.snr()).half_log2();
    let (cap1, cap2) = downlink_rates(params);
    RateRegion { r1_max: up1.min(cap1), r2_max: up2.min(cap2) }
}

/// Region achievable with unit scaling at high SNR; requires
/// `P/N_R > 1` and `g P/N_R > 1`.
pub fn high_snr_region<R: Real>(params: &ChannelParams<R>) -> Result<RateRegion<R>> {
    let snr = params.snr();
    if !(snr > R::one()) || !(params.g * snr > R::one()) {
        return Err(RatesError::SnrTooLow);
    }
    let (cap1, cap2) = downlink_rates(params);
    Ok(RateRegion {
        r1_max: snr.half_log2().min(cap1),
        r2_max: (params.g * snr).half_log2().min(cap2),
    })
}

/// Error exponent for minimum-distance lattice decoding as a function of
/// the volume-to-noise ratio `x >= 1`, in natural units:
///
/// * `1 <= x <= 2`: `(x-1)/2 - ln(x)/2`
/// * `2 <= x <= 4`: `(1 + ln(x/4))/2`
/// * `x >= 4`:      `x/8`
///
/// The first branch is the standard continuous form; the piecewise
/// function is continuous at both breakpoints and vanishes at `x = 1`.
pub fn poltyrev_exponent<R: Real>(x: R) -> Result<R> {
    if !(x >= R::one()) || !x.is_finite() {
        return Err(RatesError::ExponentDomain);
    }
    let one = R::one();
    let two = R::cast(2.0);
    let four = R::cast(4.0);
    let half = R::cast(0.5);
    if x <= two {
        Ok((x - one) * half - x.ln() * half)
    } else if x <= four {
        Ok((one + (x / four).ln()) * half)
    } else {
        Ok(x / R::cast(8.0))
    }
}

/// Upper bound on the relay decoding error probability at blocklength `n`
/// for a code rate `r` strictly below the threshold `r_star`:
/// `exp(-n * E_P(2^(2 (r_star - r))))`, vanishing `o(n)` terms dropped.
pub fn error_prob_bound<R: Real>(n: u64, r: R, r_star: R) -> Result<R> {
    if n == 0 {
        return Err(RatesError::NonPositive("n"));
    }
    if !(r < r_star) {
        return Err(RatesError::VacuousBound);
    }
    let x = R::cast(2.0).powf(R::cast(2.0) * (r_star - r));
    let e = poltyrev_exponent(x)?;
    Ok((-R::cast(n as f64) * e).exp())
}

/// Gap regime classification by channel gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainRegime {
    BelowOne,
    One,
    AboveOne,
}

/// Gap-to-outer-bound summary at a given gain (symmetric parameters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport<R: Real> {
    pub g: R,
    pub gap_r1: R,
    pub gap_r2: R,
    pub gap_sum: R,
    pub regime: GainRegime,
    /// True when the `g > 1` zero-gap branch applied to the user-2 gap
    /// (the time-sharing line never dips below the outer bound).
    pub r2_branch_active: bool,
}

const LN2X2: f64 = 2.0 * std::f64::consts::LN_2;

/// The two candidate maxima of the gap between `1/2 log2(1 + x)` and the
/// tangent-line envelope of a curve with log argument `u = c + b x*` at
/// the tangent point. Shared by all the gap formulas.
fn gap_terms<R: Real>(c: R, b: R) -> Result<(R, R)> {
    let x = tangent_point(c, b)?;
    let u = c + b * x;
    let ln2x2 = R::cast(LN2X2);
    let t1 = u.half_log2() - (u - R::one()) / (ln2x2 * u);
    let t2 = (R::one() + (R::one() - c) / u).half_log2();
    Ok((t1, t2))
}

/// Worst-case gap (over SNR, symmetric parameters) between the user-1
/// outer bound and the time-shared achievable rate, as a function of `g`.
pub fn gap_r1<R: Real>(g: R) -> Result<R> {
    if !(g > R::zero()) || !g.is_finite() {
        return Err(RatesError::NonPositive("g"));
    }
    let (t1, t2) = gap_terms(R::one() / (g + R::one()), R::one())?;
    Ok(t1.max(t2))
}

/// Worst-case user-2 gap for `0 < g < 1`.
pub fn gap_r2_low<R: Real>(g: R) -> Result<R> {
    let gf = g.to_f64().unwrap_or(f64::NAN);
    if !(g > R::zero()) || !(g < R::one()) {
        return Err(RatesError::GainOutOfRange(gf));
    }
    let (t1, t2) = gap_terms(g / (g + R::one()), g)?;
    Ok(t1.max(t2))
}

/// Worst-case user-2 gap for `g >= 1`, evaluated numerically: zero when
/// the time-sharing line clears the outer bound everywhere, otherwise the
/// supremum of `[outer - envelope]+` over a geometric SNR grid with
/// golden-section refinement around the arg max.
pub fn gap_r2_high<R: Real>(g: R) -> Result<R> {
    Ok(gap_r2_high_details(g)?.0)
}

/// `(gap, zero_branch_active)` for the `g >= 1` user-2 gap.
pub fn gap_r2_high_details<R: Real>(g: R) -> Result<(R, bool)> {
    let gf = g.to_f64().unwrap_or(f64::NAN);
    if !(g >= R::one()) || !g.is_finite() {
        return Err(RatesError::GainOutOfRange(gf));
    }
    let curve = r2_uce_curve(g)?;
    // The line y = slope * x intersects 1/2 log2(1 + x) at some x > 0 iff
    // its slope is below the outer bound's slope at the origin.
    let origin_slope = R::one() / R::cast(LN2X2);
    if curve.slope >= origin_slope {
        return Ok((R::zero(), true));
    }
    let diff = |x: R| -> R {
        clip_plus((R::one() + x).half_log2() - curve.rate(x).unwrap_or(R::zero()))
    };
    // geometric grid of 1e4 points on [1e-6, 1e6]
    let points = 10_000usize;
    let lo = 1e-6f64;
    let hi = 1e6f64;
    let step = (hi / lo).powf(1.0 / (points as f64 - 1.0));
    let mut best = R::zero();
    let mut best_i = 0usize;
    let mut x = lo;
    let mut grid = Vec::with_capacity(points);
    for i in 0..points {
        let xr = R::cast(x);
        grid.push(xr);
        let v = diff(xr);
        if v > best {
            best = v;
            best_i = i;
        }
        x *= step;
    }
    // golden-section refinement on the bracket around the grid arg max
    let a0 = grid[best_i.saturating_sub(1)];
    let b0 = grid[(best_i + 1).min(points - 1)];
    let refined = golden_max(diff, a0, b0, R::cast(1e-8));
    Ok((best.max(refined), false))
}

/// Golden-section search for the maximum of a unimodal function.
fn golden_max<R: Real, F: Fn(R) -> R>(f: F, mut a: R, mut b: R, tol: R) -> R {
    let phi = R::cast((5.0f64.sqrt() - 1.0) / 2.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..400 {
        if b - a <= tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd)
}

/// Worst-case sum-rate gap: for `g < 1` the two per-user gap terms add;
/// for `g >= 1` the user-2 term is the numeric `g >= 1` gap (zero when
/// its no-intersection branch applies).
pub fn gap_sum<R: Real>(g: R) -> Result<R> {
    if !(g > R::zero()) || !g.is_finite() {
        return Err(RatesError::NonPositive("g"));
    }
    if g < R::one() {
        Ok(gap_r1(g)? + gap_r2_low(g)?)
    } else {
        Ok(gap_r1(g)? + gap_r2_high(g)?)
    }
}

/// Full gap summary at gain `g`.
pub fn gap_report<R: Real>(g: R) -> Result<GapReport<R>> {
    if !(g > R::zero()) || !g.is_finite() {
        return Err(RatesError::NonPositive("g"));
    }
    let (regime, gap_r2_v, branch) = if g < R::one() {
        (GainRegime::BelowOne, gap_r2_low(g)?, false)
    } else {
        let (v, b) = gap_r2_high_details(g)?;
        (if g == R::one() { GainRegime::One } else { GainRegime::AboveOne }, v, b)
    };
    let r1 = gap_r1(g)?;
    let sum = gap_sum(g)?;
    debug_assert!(sum <= r1 + gap_r2_v + R::cast(1e-12));
    Ok(GapReport { g, gap_r1: r1, gap_r2: gap_r2_v, gap_sum: sum, regime, r2_branch_active: branch })
}
