//! Selective encryption channel.
//!
//! Encryption is modelled by its information content: an encrypted coordinate is
//! removed from the attacker's view. The restriction `R: R^D -> R^d` keeps the
//! unencrypted coordinates, Gaussian noise is added to what remains, and the
//! prolongation `P = R^T` puts the result back into `R^D` with zeros at encrypted
//! positions. A real deployment would send the encrypted block through a cipher
//! backend at the point where [`restrict`] drops it; no such backend is provided
//! here.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

/// How encrypted coordinates are chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskStrategy {
    /// Encrypt the largest `|g_j|`; ties go to the lower index.
    Magnitude,
    /// Uniform sample without replacement.
    Random,
    /// Encrypt exactly these indices; the requested ratio is ignored.
    FixedIndices(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefenseConfig {
    pub z: f64,
    pub sigma: f64,
    pub strategy: MaskStrategy,
}

impl DefenseConfig {
    pub fn new(z: f64, sigma: f64, strategy: MaskStrategy) -> Result<Self> {
        check_ratio(z)?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(Self { z, sigma, strategy })
    }
}

fn check_ratio(z: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::config(format!("z out of [0,1]: {z}")));
    }
    Ok(())
}

/// Number of encrypted coordinates for ratio `z`: `round(z * D)`, half away from zero.
pub fn encrypted_count(z: f64, dim: usize) -> usize {
    ((z * dim as f64).round() as usize).min(dim)
}

/// Number of unencrypted coordinates `d = D - round(z D)`.
pub fn unencrypted_count(z: f64, dim: usize) -> usize {
    dim - encrypted_count(z, dim)
}

/// Partition of `0..D` into encrypted and unencrypted coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptionMask {
    dim: usize,
    unencrypted: Vec<usize>,
}

impl EncryptionMask {
    /// `unencrypted` must be strictly increasing and below `dim`.
    pub fn new(dim: usize, unencrypted: Vec<usize>) -> Result<Self> {
        if unencrypted.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("unencrypted indices must be strictly increasing"));
        }
        if let Some(&last) = unencrypted.last() {
            if last >= dim {
                return Err(Error::config(format!("index {last} out of range for D = {dim}")));
            }
        }
        Ok(Self { dim, unencrypted })
    }

    pub fn all_visible(dim: usize) -> Self {
        Self {
            dim,
            unencrypted: (0..dim).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `d`
    pub fn visible_count(&self) -> usize {
        self.unencrypted.len()
    }

    pub fn unencrypted(&self) -> &[usize] {
        &self.unencrypted
    }

    pub fn encrypted(&self) -> Vec<usize> {
        let mut visible = self.unencrypted.iter().peekable();
        (0..self.dim)
            .filter(|j| {
                if visible.peek() == Some(&j) {
                    visible.next();
                    false
                } else {
                    true
                }
            })
            .collect()
    }

    /// `(D - d) / D`; zero for an empty parameter vector.
    pub fn realized_ratio(&self) -> f64 {
        if self.dim == 0 {
            0.0
        } else {
            (self.dim - self.unencrypted.len()) as f64 / self.dim as f64
        }
    }

    /// Text form: `"D d"` then the space-separated unencrypted indices.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.dim, self.unencrypted.len());
        for (k, j) in self.unencrypted.iter().enumerate() {
            if k > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{j}");
        }
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::config("empty mask file"))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::config(format!("bad mask header {header:?}"))))
            .collect::<Result<_>>()?;
        let [dim, d] = nums[..] else {
            return Err(Error::config("mask header must be \"D d\""));
        };
        let indices: Vec<usize> = lines
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::config(format!("bad mask index {t:?}"))))
            .collect::<Result<_>>()?;
        if indices.len() != d {
            return Err(Error::config(format!("header says d = {d}, found {}", indices.len())));
        }
        Self::new(dim, indices)
    }

    /// Explicit `d x D` restriction matrix.
    pub fn restriction_matrix(&self) -> BinaryMatrix {
        let mut m = BinaryMatrix::zeros(self.unencrypted.len(), self.dim);
        for (k, &j) in self.unencrypted.iter().enumerate() {
            m.set(k, j, 1);
        }
        m
    }

    /// Explicit `D x d` prolongation matrix.
    pub fn prolongation_matrix(&self) -> BinaryMatrix {
        let mut m = BinaryMatrix::zeros(self.dim, self.unencrypted.len());
        for (k, &j) in self.unencrypted.iter().enumerate() {
            m.set(j, k, 1);
        }
        m
    }
}

/// Dense 0/1 integer matrix used to check the operator identities exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<u32>,
}

impl BinaryMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1);
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.data[r * self.cols + c]
    }

    fn set(&mut self, r: usize, c: usize, v: u32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.get(k, c);
                }
            }
        }
        out
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.rows).all(|r| (0..self.cols).all(|c| r == c || self.get(r, c) == 0))
    }
}

/// Choose which coordinates of `g` to encrypt.
pub fn select_mask(
    g: &[f64],
    z: f64,
    strategy: &MaskStrategy,
    seed: u64,
) -> Result<EncryptionMask> {
    let dim = g.len();
    if let Some(j) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::config(format!("gradient coordinate {j} is not finite")));
    }
    let mut hidden = vec![false; dim];
    match strategy {
        MaskStrategy::Magnitude => {
            check_ratio(z)?;
            let k = encrypted_count(z, dim);
            let mut order: Vec<usize> = (0..dim).collect();
            order.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()).then(a.cmp(&b)));
            for &j in &order[..k] {
                hidden[j] = true;
            }
        }
        MaskStrategy::Random => {
            check_ratio(z)?;
            let k = encrypted_count(z, dim);
            let mut r = rng::stream(rng::derive(seed, "mask", 0));
            for j in index::sample(&mut r, dim, k) {
                hidden[j] = true;
            }
        }
        MaskStrategy::FixedIndices(list) => {
            for &j in list {
                if j >= dim {
                    return Err(Error::config(format!("encrypted index {j} out of range for D = {dim}")));
                }
                if hidden[j] {
                    return Err(Error::config(format!("duplicate encrypted index {j}")));
                }
                hidden[j] = true;
            }
        }
    }
    let unencrypted = (0..dim).filter(|&j| !hidden[j]).collect();
    Ok(EncryptionMask { dim, unencrypted })
}

/// `R g`: the unencrypted coordinates in mask order.
pub fn restrict(g: &[f64], mask: &EncryptionMask) -> Result<Vec<f64>> {
    if g.len() != mask.dim {
        return Err(Error::config(format!(
            "gradient has length {}, mask expects D = {}",
            g.len(),
            mask.dim
        )));
    }
    Ok(mask.unencrypted.iter().map(|&j| g[j]).collect())
}

/// `P u`: zeros at encrypted coordinates.
pub fn prolong(u: &[f64], mask: &EncryptionMask) -> Result<Vec<f64>> {
    if u.len() != mask.unencrypted.len() {
        return Err(Error::config(format!(
            "reduced vector has length {}, mask expects d = {}",
            u.len(),
            mask.unencrypted.len()
        )));
    }
    let mut y = vec![0.0; mask.dim];
    for (&j, &v) in mask.unencrypted.iter().zip(u) {
        y[j] = v;
    }
    Ok(y)
}

/// Seeded draw of `d` i.i.d. `N(0, sigma^2)` values.
pub fn gaussian_noise(d: usize, sigma: f64, seed: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; d];
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut r = rng::stream(rng::derive(seed, "defense-noise", 0));
    (0..d).map(|_| normal.sample(&mut r)).collect()
}

/// What the attacker sees: `y = P(R g + noise)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DefendedGradient {
    y: Vec<f64>,
    mask: EncryptionMask,
    sigma: f64,
    seed: u64,
}

impl DefendedGradient {
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn mask(&self) -> &EncryptionMask {
        &self.mask
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Observed unencrypted block, `R y`.
    pub fn visible(&self) -> Vec<f64> {
        self.mask.unencrypted.iter().map(|&j| self.y[j]).collect()
    }

    /// `GSDG1`: magic, `D` and `d` as LE u64, sigma as LE f64, seed as LE u64,
    /// `d` LE u64 unencrypted indices, then the `D` LE f64 entries of `y`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(37 + 8 * (self.mask.unencrypted.len() + self.y.len()));
        buf.extend_from_slice(GRADIENT_MAGIC);
        buf.extend_from_slice(&(self.mask.dim as u64).to_le_bytes());
        buf.extend_from_slice(&(self.mask.unencrypted.len() as u64).to_le_bytes());
        buf.extend_from_slice(&self.sigma.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        for &j in &self.mask.unencrypted {
            buf.extend_from_slice(&(j as u64).to_le_bytes());
        }
        for v in &self.y {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let (dim, d, rest) = crate::nn::read_header(path, bytes, GRADIENT_MAGIC)?;
        let bad = |reason: &str| Error::Ingestion {
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        if rest.len() != 16 + 8 * (d + dim) {
            return Err(bad("payload length does not match header"));
        }
        let word = |i: usize| -> [u8; 8] { rest[i * 8..i * 8 + 8].try_into().expect("8 bytes") };
        let sigma = f64::from_le_bytes(word(0));
        let seed = u64::from_le_bytes(word(1));
        let unencrypted = (0..d).map(|k| u64::from_le_bytes(word(2 + k)) as usize).collect();
        let y: Vec<f64> = (0..dim).map(|j| f64::from_le_bytes(word(2 + d + j))).collect();
        let mask = EncryptionMask::new(dim, unencrypted).map_err(|e| bad(&e.to_string()))?;
        if mask.encrypted().iter().any(|&j| y[j] != 0.0) {
            return Err(bad("nonzero value at an encrypted coordinate"));
        }
        Ok(Self {
            y,
            mask,
            sigma,
            seed,
        })
    }
}

const GRADIENT_MAGIC: &[u8; 5] = b"GSDG1";

/// Restrict, add seeded `N(0, sigma^2 I_d)` noise, prolong.
pub fn apply_defense(
    g: &[f64],
    mask: &EncryptionMask,
    sigma: f64,
    seed: u64,
) -> Result<DefendedGradient> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let mut u = restrict(g, mask)?;
    let noise = gaussian_noise(u.len(), sigma, seed);
    for (v, n) in u.iter_mut().zip(&noise) {
        *v += n;
    }
    let y = prolong(&u, mask)?;
    if let Some(j) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            location: format!("defended coordinate {j}"),
            detail: "non-finite value".into(),
        });
    }
    Ok(DefendedGradient {
        y,
        mask: mask.clone(),
        sigma,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn magnitude_selection() {
        let g = [3.0, -1.0, 2.0, 0.0];
        let mask = select_mask(&g, 0.5, &MaskStrategy::Magnitude, 0).unwrap();
        assert_eq!(mask.encrypted(), vec![0, 2]);
        assert_eq!(mask.unencrypted(), &[1, 3]);
        assert_eq!(restrict(&g, &mask).unwrap(), vec![-1.0, 0.0]);
        assert_eq!(prolong(&[-1.0, 0.0], &mask).unwrap(), vec![0.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn ratio_boundaries() {
        let g = [3.0, -1.0, 2.0, 0.0];
        let none = select_mask(&g, 0.0, &MaskStrategy::Magnitude, 0).unwrap();
        assert_eq!(none.unencrypted(), &[0, 1, 2, 3]);
        assert_eq!(restrict(&g, &none).unwrap(), g.to_vec());
        let all = select_mask(&g, 1.0, &MaskStrategy::Magnitude, 0).unwrap();
        assert!(all.unencrypted().is_empty());
        assert!(restrict(&g, &all).unwrap().is_empty());
        assert_eq!(prolong(&[], &all).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn magnitude_ties_go_to_lower_index() {
        let mask = select_mask(&[1.0, -1.0], 0.5, &MaskStrategy::Magnitude, 0).unwrap();
        assert_eq!(mask.encrypted(), vec![0]);
    }

    #[test]
    fn fixed_indices_validation() {
        let g = [0.0; 5];
        let m = select_mask(&g, 0.0, &MaskStrategy::FixedIndices(vec![4, 1]), 0).unwrap();
        assert_eq!(m.unencrypted(), &[0, 2, 3]);
        assert!(select_mask(&g, 0.0, &MaskStrategy::FixedIndices(vec![5]), 0).is_err());
        assert!(select_mask(&g, 0.0, &MaskStrategy::FixedIndices(vec![1, 1]), 0).is_err());
    }

    #[test]
    fn random_strategy_is_seeded() {
        let g = vec![1.0; 50];
        let a = select_mask(&g, 0.3, &MaskStrategy::Random, 4).unwrap();
        let b = select_mask(&g, 0.3, &MaskStrategy::Random, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.visible_count(), 35);
        assert!(select_mask(&g, 1.5, &MaskStrategy::Random, 4).is_err());
    }

    #[test]
    fn length_mismatches_rejected() {
        let mask = EncryptionMask::all_visible(3);
        assert!(restrict(&[1.0, 2.0], &mask).is_err());
        assert!(prolong(&[1.0], &mask).is_err());
        assert!(EncryptionMask::new(3, vec![2, 1]).is_err());
        assert!(EncryptionMask::new(3, vec![3]).is_err());
    }

    #[test]
    fn noiseless_defense_is_exact() {
        let g = [0.5, -2.0, 1.25, 3.0];
        let mask = select_mask(&g, 0.5, &MaskStrategy::Magnitude, 0).unwrap();
        let out = apply_defense(&g, &mask, 0.0, 1).unwrap();
        assert_eq!(out.y(), &prolong(&restrict(&g, &mask).unwrap(), &mask).unwrap()[..]);
    }

    #[test]
    fn noise_moments_at_visible_coordinate() {
        let g = [0.7, -0.2, 5.0];
        let mask = EncryptionMask::new(3, vec![0, 1]).unwrap();
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for s in 0..n {
            let out = apply_defense(&g, &mask, 1.0, s).unwrap();
            assert_eq!(out.y()[2], 0.0);
            sum += out.y()[0];
            sum_sq += out.y()[0] * out.y()[0];
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((mean - 0.7).abs() < 0.01, "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "variance {var}");
    }

    #[test]
    fn mask_text_round_trip() {
        let mask = EncryptionMask::new(6, vec![0, 3, 5]).unwrap();
        let text = mask.to_text();
        assert_eq!(text, "6 3\n0 3 5\n");
        assert_eq!(EncryptionMask::from_text(&text).unwrap(), mask);
        let empty = EncryptionMask::new(2, vec![]).unwrap();
        assert_eq!(EncryptionMask::from_text(&empty.to_text()).unwrap(), empty);
        assert!(EncryptionMask::from_text("4 2\n1\n").is_err());
    }

    #[test]
    fn defended_gradient_binary_round_trip() {
        let g = [0.5, -2.0, 1.25, 3.0, 0.1];
        let mask = select_mask(&g, 0.4, &MaskStrategy::Magnitude, 0).unwrap();
        let out = apply_defense(&g, &mask, 0.3, 77).unwrap();
        let bytes = out.to_bytes();
        assert_eq!(&bytes[..5], b"GSDG1");
        let back = DefendedGradient::from_bytes(Path::new("mem"), &bytes).unwrap();
        assert_eq!(back, out);
        assert!(DefendedGradient::from_bytes(Path::new("mem"), &bytes[..30]).is_err());
    }

    #[test]
    fn operator_identities_small() {
        let mask = EncryptionMask::new(5, vec![1, 2, 4]).unwrap();
        let r = mask.restriction_matrix();
        let p = mask.prolongation_matrix();
        assert_eq!(p, r.transpose());
        assert_eq!(r.matmul(&p), BinaryMatrix::identity(3));
        let ppt = p.matmul(&p.transpose());
        assert!(ppt.is_diagonal());
        assert_eq!((0..5).map(|i| ppt.get(i, i)).collect::<Vec<_>>(), vec![0, 1, 1, 0, 1]);
    }

    proptest! {
        #[test]
        fn restrict_after_prolong_is_identity(
            dim in 1usize..40,
            z in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let g = vec![1.0; dim];
            let mask = select_mask(&g, z, &MaskStrategy::Random, seed).unwrap();
            let u: Vec<f64> = (0..mask.visible_count()).map(|k| k as f64 - 3.5).collect();
            prop_assert_eq!(restrict(&prolong(&u, &mask).unwrap(), &mask).unwrap(), u);
            prop_assert!((mask.realized_ratio() - z).abs() <= 1.0 / dim as f64);
        }

        #[test]
        fn defended_support_is_visible_set(
            values in proptest::collection::vec(-10.0f64..10.0, 1..30),
            z in 0.0f64..=1.0,
            sigma in 0.0f64..2.0,
            seed in any::<u64>(),
        ) {
            let mask = select_mask(&values, z, &MaskStrategy::Magnitude, 0).unwrap();
            let out = apply_defense(&values, &mask, sigma, seed).unwrap();
            for j in mask.encrypted() {
                prop_assert_eq!(out.y()[j], 0.0);
            }
            prop_assert_eq!(&out, &apply_defense(&values, &mask, sigma, seed).unwrap());
        }
    }
}
