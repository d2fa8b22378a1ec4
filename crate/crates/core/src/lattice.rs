//! Lattice geometry and modulo arithmetic.
//!
//! Quantizers, Voronoi membership, second moments, dither sampling, and
//! nested-code construction, at dimensions small enough for exact
//! computation (n <= 16).
//!
//! Uniform-scale lattices `delta * Z^n` get closed-form treatment; explicit
//! generator lattices use Babai rounding plus an exhaustive `{-1,0,1}^n`
//! offset search, which is exact for the well-conditioned bases used here.

use crate::real::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use thiserror::Error;

/// Largest supported lattice dimension.
pub const MAX_DIMENSION: usize = 16;
/// Enumeration bound for nested-code construction.
pub const MAX_CODEBOOK: u64 = 1 << 20;
/// Default relative tolerance for point-equality tests.
pub const DEFAULT_SCALE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("dimension {0} outside 1..={MAX_DIMENSION}")]
    BadDimension(usize),
    #[error("dimension mismatch: lattice has {expected}, vector has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input vector has a non-finite component")]
    NonFinite,
    #[error("generator matrix is singular within tolerance")]
    SingularBasis,
    #[error("scale factor must be positive")]
    BadScale,
    #[error("exact second moment is only defined for uniform-scale lattices")]
    ExactUnsupported,
    #[error("Monte-Carlo second moment needs >= 1000 trials, got {0}")]
    TooFewTrials(u64),
    #[error("not nested: coarse basis vector {0} has non-integer fine coordinates")]
    NotNested(usize),
    #[error("coarse cell volume is smaller than the fine cell volume")]
    VolumeOrder,
    #[error("codebook would hold ~{0} codewords, above the bound {MAX_CODEBOOK}")]
    CodebookTooLarge(u64),
    #[error("codeword enumeration found {got}, volume ratio predicts {expected}")]
    EnumerationMismatch { got: usize, expected: usize },
    #[error("vector lies outside the fundamental Voronoi region")]
    OutsideVoronoi,
}

pub type Result<T> = std::result::Result<T, LatticeError>;

/// Second-moment evaluation mode.
#[derive(Debug, Clone, Copy)]
pub enum SecondMomentMode {
    /// Closed form `delta^2 / 12`; uniform-scale lattices only.
    Exact,
    /// Average `||u||^2 / n` over points uniform in the Voronoi region.
    MonteCarlo { trials: u64, seed: u64 },
}

#[derive(Debug, Clone)]
enum Basis<R: Real> {
    Uniform(R),
    Generator {
        /// `cols[j]` is the j-th basis vector.
        cols: Vec<Vec<R>>,
        /// Row-major inverse of the matrix whose columns are the basis vectors.
        inv: Vec<Vec<R>>,
        abs_det: R,
    },
}

/// An n-dimensional lattice, either `delta * Z^n` or spanned by an explicit
/// full-rank generator matrix.
#[derive(Debug, Clone)]
pub struct Lattice<R: Real> {
    dim: usize,
    basis: Basis<R>,
    tol: R,
}

/// Round to nearest integer, breaking .5 ties toward minus infinity.
fn round_half_down<R: Real>(t: R) -> R {
    (t - R::cast(0.5)).ceil()
}

/// Gauss-Jordan inverse with partial pivoting. Returns `(inverse, |det|)`.
/// Matrices here are tiny (n <= 16) and well conditioned.
fn invert<R: Real>(n: usize, m: &[Vec<R>]) -> Option<(Vec<Vec<R>>, R)> {
    let mut a: Vec<Vec<R>> = m.to_vec();
    let mut inv: Vec<Vec<R>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { R::one() } else { R::zero() }).collect())
        .collect();
    let mut det = R::one();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() == R::zero() {
            return None;
        }
        if pivot != col {
            a.swap(pivot, col);
            inv.swap(pivot, col);
            det = -det;
        }
        let p = a[col][col];
        det = det * p;
        for j in 0..n {
            a[col][j] = a[col][j] / p;
            inv[col][j] = inv[col][j] / p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = a[i][col];
            if f == R::zero() {
                continue;
            }
            for j in 0..n {
                a[i][j] = a[i][j] - f * a[col][j];
                inv[i][j] = inv[i][j] - f * inv[col][j];
            }
        }
    }
    Some((inv, det.abs()))
}

impl<R: Real> Lattice<R> {
    /// The lattice `delta * Z^n`.
    pub fn uniform(dim: usize, delta: R) -> Result<Self> {
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(LatticeError::BadDimension(dim));
        }
        if !(delta > R::zero()) || !delta.is_finite() {
            return Err(LatticeError::BadScale);
        }
        Ok(Self { dim, basis: Basis::Uniform(delta), tol: R::cast(DEFAULT_SCALE_TOLERANCE) })
    }

    /// A lattice spanned by explicit basis vectors (`basis[j]` is one vector).
    pub fn from_generator(basis: Vec<Vec<R>>) -> Result<Self> {
        let dim = basis.len();
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(LatticeError::BadDimension(dim));
        }
        if basis.iter().any(|v| v.len() != dim) {
            return Err(LatticeError::DimensionMismatch {
                expected: dim,
                got: basis.iter().map(|v| v.len()).find(|&l| l != dim).unwrap_or(dim),
            });
        }
        if basis.iter().flatten().any(|x| !x.is_finite()) {
            return Err(LatticeError::NonFinite);
        }
        // row-major matrix whose columns are the basis vectors
        let m: Vec<Vec<R>> = (0..dim).map(|i| (0..dim).map(|j| basis[j][i]).collect()).collect();
        let (inv, abs_det) = invert(dim, &m).ok_or(LatticeError::SingularBasis)?;
        let tol = R::cast(DEFAULT_SCALE_TOLERANCE);
        if !(abs_det > tol) {
            return Err(LatticeError::SingularBasis);
        }
        Ok(Self { dim, basis: Basis::Generator { cols: basis, inv, abs_det }, tol })
    }

    /// Override the point-equality tolerance.
    pub fn with_tolerance(mut self, tol: R) -> Self {
        self.tol = tol;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale_tolerance(&self) -> R {
        self.tol
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.basis, Basis::Uniform(_))
    }

    /// Spacing `delta` for uniform-scale lattices.
    pub fn uniform_spacing(&self) -> Option<R> {
        match self.basis {
            Basis::Uniform(d) => Some(d),
            Basis::Generator { .. } => None,
        }
    }

    /// Basis vectors, materialized as `delta * e_j` for uniform lattices.
    pub fn basis_vectors(&self) -> Vec<Vec<R>> {
        match &self.basis {
            Basis::Uniform(d) => (0..self.dim)
                .map(|j| (0..self.dim).map(|i| if i == j { *d } else { R::zero() }).collect())
                .collect(),
            Basis::Generator { cols, .. } => cols.clone(),
        }
    }

    /// Volume of the fundamental cell.
    pub fn cell_volume(&self) -> R {
        match &self.basis {
            Basis::Uniform(d) => d.powi(self.dim as i32),
            Basis::Generator { abs_det, .. } => *abs_det,
        }
    }

    /// A characteristic length used to scale tolerances.
    fn scale(&self) -> R {
        match &self.basis {
            Basis::Uniform(d) => *d,
            Basis::Generator { abs_det, .. } => abs_det.powf(R::one() / R::cast(self.dim as f64)),
        }
    }

    fn check_input(&self, x: &[R]) -> Result<()> {
        if x.len() != self.dim {
            return Err(LatticeError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LatticeError::NonFinite);
        }
        Ok(())
    }

    /// Nearest-neighbor quantizer: the lattice point closest to `x` in
    /// Euclidean norm. Ties go toward minus infinity componentwise on
    /// uniform lattices and to the lexicographically smallest integer
    /// coordinates on generator lattices.
    pub fn nearest_point(&self, x: &[R]) -> Result<Vec<R>> {
        self.check_input(x)?;
        match &self.basis {
            Basis::Uniform(d) => Ok(x.iter().map(|&v| *d * round_half_down(v / *d)).collect()),
            Basis::Generator { cols, inv, .. } => {
                let n = self.dim;
                // Babai rounding in basis coordinates.
                let z0: Vec<R> = (0..n)
                    .map(|j| {
                        let mut acc = R::zero();
                        for i in 0..n {
                            acc = acc + inv[j][i] * x[i];
                        }
                        round_half_down(acc)
                    })
                    .collect();
                let point = |z: &[R]| -> Vec<R> {
                    (0..n)
                        .map(|i| {
                            let mut acc = R::zero();
                            for j in 0..n {
                                acc = acc + cols[j][i] * z[j];
                            }
                            acc
                        })
                        .collect()
                };
                let dist2 = |p: &[R]| -> R {
                    let mut acc = R::zero();
                    for i in 0..n {
                        let d = x[i] - p[i];
                        acc = acc + d * d;
                    }
                    acc
                };
                let mut best_z = z0.clone();
                let mut best_p = point(&z0);
                let mut best_d = dist2(&best_p);
                let eps = self.tol * (R::one() + best_d);
                // exhaustive offsets in {-1,0,1}^n around the Babai point
                let mut offs = vec![-1i8; n];
                loop {
                    let z: Vec<R> = (0..n).map(|j| z0[j] + R::cast(offs[j] as f64)).collect();
                    let p = point(&z);
                    let d = dist2(&p);
                    let tie_eps = self.tol * (R::one() + best_d.max(d));
                    if d + tie_eps < best_d
                        || ((d - best_d).abs() <= tie_eps && lex_less(&z, &best_z))
                    {
                        best_z = z;
                        best_p = p;
                        best_d = d;
                    }
                    // mixed-radix increment over {-1,0,1}^n
                    let mut k = 0;
                    loop {
                        if k == n {
                            let _ = eps;
                            return Ok(best_p);
                        }
                        if offs[k] < 1 {
                            offs[k] += 1;
                            break;
                        }
                        offs[k] = -1;
                        k += 1;
                    }
                }
            }
        }
    }

    /// Modulo-lattice reduction `x - nearest_point(x)`; the result lies in
    /// the fundamental Voronoi region.
    pub fn mod_lattice(&self, x: &[R]) -> Result<Vec<R>> {
        let q = self.nearest_point(x)?;
        Ok(x.iter().zip(q.iter()).map(|(&a, &b)| a - b).collect())
    }

    /// True when the quantizer maps `x` to the origin (within tolerance).
    pub fn in_voronoi(&self, x: &[R]) -> Result<bool> {
        let q = self.nearest_point(x)?;
        let lim = self.tol * self.scale();
        Ok(q.iter().all(|&v| v.abs() <= lim))
    }

    /// Second moment per dimension of a point uniform over the Voronoi region.
    pub fn second_moment(&self, mode: SecondMomentMode) -> Result<R> {
        match mode {
            SecondMomentMode::Exact => match &self.basis {
                Basis::Uniform(d) => Ok(*d * *d / R::cast(12.0)),
                Basis::Generator { .. } => Err(LatticeError::ExactUnsupported),
            },
            SecondMomentMode::MonteCarlo { trials, seed } => {
                if trials < 1000 {
                    return Err(LatticeError::TooFewTrials(trials));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = R::cast(self.dim as f64);
                let mut acc = R::zero();
                for _ in 0..trials {
                    let u = self.sample_voronoi(&mut rng);
                    let mut s = R::zero();
                    for &v in &u {
                        s = s + v * v;
                    }
                    acc = acc + s / n;
                }
                Ok(acc / R::cast(trials as f64))
            }
        }
    }

    /// One point uniform over the fundamental Voronoi region: draw uniform
    /// in the fundamental parallelepiped and fold it back with the modulo
    /// map (a volume-preserving bijection onto the Voronoi region a.e.).
    pub fn sample_voronoi<G: Rng + ?Sized>(&self, rng: &mut G) -> Vec<R> {
        let raw: Vec<R> = match &self.basis {
            Basis::Uniform(d) => (0..self.dim)
                .map(|_| *d * (R::cast(rng.random::<f64>()) - R::cast(0.5)))
                .collect(),
            Basis::Generator { cols, .. } => {
                let u: Vec<R> = (0..self.dim).map(|_| R::cast(rng.random::<f64>())).collect();
                (0..self.dim)
                    .map(|i| {
                        let mut acc = R::zero();
                        for j in 0..self.dim {
                            acc = acc + cols[j][i] * u[j];
                        }
                        acc
                    })
                    .collect()
            }
        };
        self.mod_lattice(&raw).expect("sampled vector is finite")
    }

    /// Deterministic dither draw, uniform over the Voronoi region.
    pub fn sample_dither(&self, seed: u64) -> DitherVector<R> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let value = self.sample_voronoi(&mut rng);
        DitherVector { value, lattice: self.clone() }
    }

    /// Scale every basis vector by `c > 0`; second moments scale by `c^2`.
    pub fn scale_by(&self, c: R) -> Result<Self> {
        if !(c > R::zero()) || !c.is_finite() {
            return Err(LatticeError::BadScale);
        }
        match &self.basis {
            Basis::Uniform(d) => Lattice::uniform(self.dim, *d * c),
            Basis::Generator { cols, .. } => {
                let scaled = cols.iter().map(|v| v.iter().map(|&x| x * c).collect()).collect();
                Lattice::from_generator(scaled)
            }
        }
        .map(|l| l.with_tolerance(self.tol))
    }

    /// Coordinates of `x` in this lattice's basis.
    fn basis_coords(&self, x: &[R]) -> Vec<R> {
        match &self.basis {
            Basis::Uniform(d) => x.iter().map(|&v| v / *d).collect(),
            Basis::Generator { inv, .. } => (0..self.dim)
                .map(|j| {
                    let mut acc = R::zero();
                    for i in 0..self.dim {
                        acc = acc + inv[j][i] * x[i];
                    }
                    acc
                })
                .collect(),
        }
    }

    /// Integer basis coordinates of a lattice point, for exact hashing.
    /// Returns `None` when `x` is not a lattice point within tolerance.
    pub fn integer_coords(&self, x: &[R]) -> Option<Vec<i64>> {
        if x.len() != self.dim {
            return None;
        }
        let w = self.basis_coords(x);
        let mut out = Vec::with_capacity(self.dim);
        for &c in &w {
            let r = round_half_down(c);
            if (c - r).abs() > self.tol * (R::one() + c.abs()) {
                return None;
            }
            out.push(r.to_f64().unwrap() as i64);
        }
        Some(out)
    }

    /// The lattice point with the given integer basis coordinates.
    pub fn point_from_coords(&self, z: &[i64]) -> Vec<R> {
        match &self.basis {
            Basis::Uniform(d) => z.iter().map(|&k| *d * R::cast(k as f64)).collect(),
            Basis::Generator { cols, .. } => (0..self.dim)
                .map(|i| {
                    let mut acc = R::zero();
                    for j in 0..self.dim {
                        acc = acc + cols[j][i] * R::cast(z[j] as f64);
                    }
                    acc
                })
                .collect(),
        }
    }
}

fn lex_less<R: Real>(a: &[R], b: &[R]) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// A dither: a vector uniform over (and constrained to) the fundamental
/// Voronoi region of its lattice.
#[derive(Debug, Clone)]
pub struct DitherVector<R: Real> {
    value: Vec<R>,
    lattice: Lattice<R>,
}

impl<R: Real> DitherVector<R> {
    /// Wrap an explicit vector, checking Voronoi membership.
    pub fn new(value: Vec<R>, lattice: Lattice<R>) -> Result<Self> {
        if !lattice.in_voronoi(&value)? {
            return Err(LatticeError::OutsideVoronoi);
        }
        Ok(Self { value, lattice })
    }

    pub fn value(&self) -> &[R] {
        &self.value
    }

    pub fn lattice(&self) -> &Lattice<R> {
        &self.lattice
    }
}

/// A coarse/fine lattice pair with the coarse lattice nested in the fine one.
#[derive(Debug, Clone)]
pub struct NestedPair<R: Real> {
    coarse: Lattice<R>,
    fine: Lattice<R>,
}

impl<R: Real> NestedPair<R> {
    /// Checks `coarse` is a sublattice of `fine`: every coarse basis vector
    /// has integer fine-basis coordinates, and the cell volumes are ordered.
    pub fn new(coarse: Lattice<R>, fine: Lattice<R>) -> Result<Self> {
        if coarse.dim() != fine.dim() {
            return Err(LatticeError::DimensionMismatch {
                expected: coarse.dim(),
                got: fine.dim(),
            });
        }
        for (j, v) in coarse.basis_vectors().iter().enumerate() {
            if fine.integer_coords(v).is_none() {
                return Err(LatticeError::NotNested(j));
            }
        }
        let tol = coarse.scale_tolerance();
        if coarse.cell_volume() < fine.cell_volume() * (R::one() - tol) {
            return Err(LatticeError::VolumeOrder);
        }
        Ok(Self { coarse, fine })
    }

    pub fn coarse(&self) -> &Lattice<R> {
        &self.coarse
    }

    pub fn fine(&self) -> &Lattice<R> {
        &self.fine
    }

    /// Number of fine-modulo-coarse cosets predicted by the volume ratio.
    pub fn coset_count(&self) -> Result<u64> {
        let ratio = self.coarse.cell_volume() / self.fine.cell_volume();
        let rounded = round_half_down(ratio + ratio * self.coarse.scale_tolerance());
        let n = rounded.to_f64().ok_or(LatticeError::VolumeOrder)?;
        if !(n >= 1.0) {
            return Err(LatticeError::VolumeOrder);
        }
        let count = n as u64;
        let back = R::cast(count as f64);
        if (ratio - back).abs() > self.coarse.scale_tolerance() * back.max(R::one()) {
            return Err(LatticeError::EnumerationMismatch {
                got: count as usize,
                expected: ratio.to_f64().unwrap_or(f64::NAN).round() as usize,
            });
        }
        if count > MAX_CODEBOOK {
            return Err(LatticeError::CodebookTooLarge(count));
        }
        Ok(count)
    }
}

/// Coset representatives of fine modulo coarse, reduced into the coarse
/// Voronoi region, with the code rate in bits per dimension.
#[derive(Debug, Clone)]
pub struct LatticeCodebook<R: Real> {
    pair: NestedPair<R>,
    codewords: Vec<Vec<R>>,
    index: HashMap<Vec<i64>, usize>,
    rate: R,
}

/// Enumerate the nested-code codebook by a breadth-first walk of the fine
/// lattice quotient: start at the origin, step by fine basis vectors,
/// reduce modulo the coarse lattice, and deduplicate on integer fine
/// coordinates of the reduced representative.
pub fn build_codebook<R: Real>(pair: &NestedPair<R>) -> Result<LatticeCodebook<R>> {
    let expected = pair.coset_count()? as usize;
    let fine = pair.fine();
    let coarse = pair.coarse();
    let n = fine.dim();

    let key_of = |p: &[R]| -> Result<Vec<i64>> {
        fine.integer_coords(p).ok_or(LatticeError::EnumerationMismatch { got: 0, expected })
    };

    let origin = vec![R::zero(); n];
    let mut index: HashMap<Vec<i64>, usize> = HashMap::with_capacity(expected);
    let mut codewords: Vec<Vec<R>> = Vec::with_capacity(expected);
    let mut queue: Vec<Vec<R>> = vec![origin.clone()];
    index.insert(key_of(&origin)?, 0);
    codewords.push(origin);

    while let Some(p) = queue.pop() {
        for step in fine.basis_vectors() {
            for sign in [R::one(), -R::one()] {
                let q: Vec<R> =
                    p.iter().zip(step.iter()).map(|(&a, &b)| a + sign * b).collect();
                let reduced = coarse.mod_lattice(&q)?;
                let key = key_of(&reduced)?;
                if !index.contains_key(&key) {
                    if codewords.len() == expected {
                        return Err(LatticeError::EnumerationMismatch {
                            got: expected + 1,
                            expected,
                        });
                    }
                    index.insert(key, codewords.len());
                    codewords.push(reduced.clone());
                    queue.push(reduced);
                }
            }
        }
    }
    if codewords.len() != expected {
        return Err(LatticeError::EnumerationMismatch { got: codewords.len(), expected });
    }

    // deterministic order: sort by integer fine coordinates
    let mut order: Vec<usize> = (0..codewords.len()).collect();
    let keys: Vec<Vec<i64>> = {
        let mut ks = vec![Vec::new(); codewords.len()];
        for (k, &i) in &index {
            ks[i] = k.clone();
        }
        ks
    };
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let codewords: Vec<Vec<R>> = order.iter().map(|&i| codewords[i].clone()).collect();
    let index: HashMap<Vec<i64>, usize> =
        order.iter().enumerate().map(|(new, &old)| (keys[old].clone(), new)).collect();

    let rate = R::cast((expected as f64).log2() / n as f64);
    Ok(LatticeCodebook { pair: pair.clone(), codewords, index, rate })
}

impl<R: Real> LatticeCodebook<R> {
    pub fn pair(&self) -> &NestedPair<R> {
        &self.pair
    }

    pub fn codewords(&self) -> &[Vec<R>] {
        &self.codewords
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    /// Rate in bits per dimension: `log2(|C|) / n`.
    pub fn rate(&self) -> R {
        self.rate
    }

    /// Index of a codeword given any point in its coset (reduced or not).
    pub fn position(&self, point: &[R]) -> Option<usize> {
        let reduced = self.pair.coarse().mod_lattice(point).ok()?;
        let key = self.pair.fine().integer_coords(&reduced)?;
        self.index.get(&key).copied()
    }
}
