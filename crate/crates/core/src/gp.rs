//! Feature banks, neighbor retrieval and GP pseudo-labels.
//!
//! A bank holds the `(s, z)` tap pairs of one domain, captured with frozen
//! weights at the start of an epoch. For a query image the GP regresses `z`
//! on `s` over the query's nearest neighbors (found in `z` space) and returns
//! the posterior mean as a pseudo-label together with a scalar posterior
//! variance that scales the latent loss.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{Domain, Patch};
use crate::error::{Error, Result};
use crate::kernels::{effective_kernel, effective_kernel_grad_x, gram_sym, KernelSpec};
use crate::linalg::{cholesky, dot, sq_dist, CholFactor};
use crate::nets::Generator;

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub s: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    domain: Domain,
    entries: Vec<BankEntry>,
    epoch_stamp: u64,
}

impl FeatureBank {
    pub fn new(domain: Domain, epoch_stamp: u64) -> Self {
        FeatureBank {
            domain,
            entries: Vec::new(),
            epoch_stamp,
        }
    }

    pub fn push(&mut self, s: Vec<f64>, z: Vec<f64>) -> Result<()> {
        if let Some(first) = self.entries.first() {
            if s.len() != first.s.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.s.len(),
                    got: s.len(),
                });
            }
            if z.len() != first.z.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.z.len(),
                    got: z.len(),
                });
            }
        }
        self.entries.push(BankEntry { s, z });
        Ok(())
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn epoch_stamp(&self) -> u64 {
        self.epoch_stamp
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn s_dim(&self) -> usize {
        self.entries.first().map_or(0, |e| e.s.len())
    }

    pub fn z_dim(&self) -> usize {
        self.entries.first().map_or(0, |e| e.z.len())
    }

    /// Median Euclidean distance between the `s` vectors of distinct entries,
    /// or `None` with fewer than two entries.
    pub fn median_s_distance(&self) -> Option<f64> {
        let n = self.entries.len();
        if n < 2 {
            return None;
        }
        let mut d = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                d.push(sq_dist(&self.entries[i].s, &self.entries[j].s).sqrt());
            }
        }
        let mid = d.len() / 2;
        let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
        Some(*m)
    }

    /// Reorders entries; `order[i]` is the old index of the new entry `i`.
    pub fn permuted(&self, order: &[usize]) -> FeatureBank {
        FeatureBank {
            domain: self.domain,
            entries: order.iter().map(|&i| self.entries[i].clone()).collect(),
            epoch_stamp: self.epoch_stamp,
        }
    }
}

/// Runs every image through `generator` and stores its taps in order.
pub fn bank_build(
    images: &[Patch],
    generator: &Generator,
    domain: Domain,
    epoch: u64,
) -> Result<FeatureBank> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut bank = FeatureBank::new(domain, epoch);
    for img in images {
        let out = generator.forward(&img.pixels)?;
        bank.push(out.s, out.z)?;
    }
    Ok(bank)
}

/// Indices of the `n` entries closest to `query_z` (Euclidean, ties to the
/// lower index), nearest first.
pub fn knn_select(bank: &FeatureBank, query_z: &[f64], n: usize) -> Result<Vec<usize>> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if query_z.len() != bank.z_dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.z_dim(),
            got: query_z.len(),
        });
    }
    let mut scored: Vec<(f64, usize)> = bank
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (sq_dist(&e.z, query_z), i))
        .collect();
    let k = n.max(1).min(scored.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// GP posterior for a single query.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPosterior {
    /// Posterior mean of `z`, used as the pseudo-label.
    pub pseudo_label: Vec<f64>,
    /// Scalar posterior variance including observation noise.
    pub variance: f64,
    pub neighbor_ids: Vec<usize>,
}

struct Conditioned {
    factor: CholFactor,
    cross: Vec<f64>,
    weights: Vec<f64>,
    prior_var: f64,
}

fn condition_parts(
    spec: &KernelSpec,
    bank: &FeatureBank,
    neighbor_ids: &[usize],
    query_s: &[f64],
) -> Result<Conditioned> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if neighbor_ids.is_empty() {
        return Err(Error::InvalidConfig(
            "at least one neighbor required".into(),
        ));
    }
    if query_s.len() != bank.s_dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.s_dim(),
            got: query_s.len(),
        });
    }
    let mut points = Vec::with_capacity(neighbor_ids.len());
    for &i in neighbor_ids {
        let e = bank.entries.get(i).ok_or(Error::BadNeighbor {
            index: i,
            len: bank.len(),
        })?;
        points.push(e.s.as_slice());
    }
    let mut k = gram_sym(spec, &points)?;
    k.add_diagonal(spec.noise_var);
    let factor = cholesky(&k)?;
    let cross = points
        .iter()
        .map(|p| effective_kernel(spec, query_s, p))
        .collect::<Result<Vec<_>>>()?;
    let weights = factor.solve_vec(&cross)?;
    let prior_var = effective_kernel(spec, query_s, query_s)?;
    Ok(Conditioned {
        factor,
        cross,
        weights,
        prior_var,
    })
}

/// Conditions the zero-mean GP on the neighbors' `(s, z)` pairs:
/// mean `kᵀ(K+σ²I)⁻¹Z`, variance `k(s̃,s̃) − kᵀ(K+σ²I)⁻¹k + σ²`.
pub fn gp_condition(
    spec: &KernelSpec,
    bank: &FeatureBank,
    neighbor_ids: &[usize],
    query_s: &[f64],
) -> Result<GpPosterior> {
    let c = condition_parts(spec, bank, neighbor_ids, query_s)?;
    let mut mean = vec![0.0; bank.z_dim()];
    for (&i, &w) in neighbor_ids.iter().zip(&c.weights) {
        for (m, z) in mean.iter_mut().zip(&bank.entries[i].z) {
            *m += w * z;
        }
    }
    let explained = dot(&c.cross, &c.weights);
    let variance = (c.prior_var - explained).max(0.0) + spec.noise_var;
    Ok(GpPosterior {
        pseudo_label: mean,
        variance,
        neighbor_ids: neighbor_ids.to_vec(),
    })
}

fn check_pred(posterior: &GpPosterior, z_pred: &[f64]) -> Result<()> {
    if z_pred.len() != posterior.pseudo_label.len() {
        return Err(Error::DimensionMismatch {
            expected: posterior.pseudo_label.len(),
            got: z_pred.len(),
        });
    }
    Ok(())
}

/// Gaussian negative log-likelihood with isotropic covariance `σ̃² I_d`:
/// `‖z − z̃ᵖ‖² / σ̃² + d log σ̃²`.
pub fn pseudo_loss(posterior: &GpPosterior, z_pred: &[f64]) -> Result<f64> {
    check_pred(posterior, z_pred)?;
    let v = posterior.variance;
    let d = z_pred.len() as f64;
    Ok(sq_dist(z_pred, &posterior.pseudo_label) / v + d * v.ln())
}

/// Gradient of [`pseudo_loss`] in `z_pred`, with the posterior held fixed.
pub fn pseudo_loss_grad(posterior: &GpPosterior, z_pred: &[f64]) -> Result<Vec<f64>> {
    check_pred(posterior, z_pred)?;
    let v = posterior.variance;
    Ok(z_pred
        .iter()
        .zip(&posterior.pseudo_label)
        .map(|(z, p)| 2.0 * (z - p) / v)
        .collect())
}

/// Gradient of the pseudo loss with respect to the query `s̃` through the
/// kernel terms (pseudo-label mean and posterior variance), with `z_pred`
/// and the bank held fixed.
pub fn pseudo_loss_grad_query(
    spec: &KernelSpec,
    bank: &FeatureBank,
    neighbor_ids: &[usize],
    query_s: &[f64],
    z_pred: &[f64],
) -> Result<Vec<f64>> {
    let c = condition_parts(spec, bank, neighbor_ids, query_s)?;
    let dz = bank.z_dim();
    if z_pred.len() != dz {
        return Err(Error::DimensionMismatch {
            expected: dz,
            got: z_pred.len(),
        });
    }
    let mut mean = vec![0.0; dz];
    for (&i, &w) in neighbor_ids.iter().zip(&c.weights) {
        for (m, z) in mean.iter_mut().zip(&bank.entries[i].z) {
            *m += w * z;
        }
    }
    let raw_var = c.prior_var - dot(&c.cross, &c.weights);
    let var = raw_var.max(0.0) + spec.noise_var;
    let resid: Vec<f64> = z_pred.iter().zip(&mean).map(|(z, m)| z - m).collect();
    let r2 = dot(&resid, &resid);
    // dL/dmean and dL/dvar.
    let g_mean: Vec<f64> = resid.iter().map(|r| -2.0 * r / var).collect();
    let g_var = if raw_var > 0.0 {
        -r2 / (var * var) + dz as f64 / var
    } else {
        0.0
    };
    // mean = Σ_i k_i A_i with A = K⁻¹Z, so dL/dk = K⁻¹ (Z g_mean); var = k_ss − kᵀK⁻¹k.
    let zg: Vec<f64> = neighbor_ids
        .iter()
        .map(|&i| dot(&bank.entries[i].z, &g_mean))
        .collect();
    let a_g = c.factor.solve_vec(&zg)?;
    let g_cross: Vec<f64> = a_g
        .iter()
        .zip(&c.weights)
        .map(|(a, w)| a - 2.0 * g_var * w)
        .collect();
    let mut grad = vec![0.0; query_s.len()];
    for (&i, &gk) in neighbor_ids.iter().zip(&g_cross) {
        let (_, dk) = effective_kernel_grad_x(spec, query_s, &bank.entries[i].s)?;
        grad.iter_mut().zip(&dk).for_each(|(g, d)| *g += gk * d);
    }
    if g_var != 0.0 {
        // d k(s̃, s̃)/d s̃ counts both arguments; the kernels here are symmetric.
        let (_, dself) = effective_kernel_grad_x(spec, query_s, query_s)?;
        grad.iter_mut()
            .zip(&dself)
            .for_each(|(g, d)| *g += g_var * 2.0 * d);
    }
    Ok(grad)
}

/// Flat little-endian bank dump:
///
/// ```text
/// magic  8 bytes "DGPBANK1"
/// domain u8      0 = clean, 1 = weather
/// epoch  u64
/// count  u64
/// s_dim  u64
/// z_dim  u64
/// count x (s_dim + z_dim) f64, each entry's s followed by its z
/// ```
pub fn write_bank(path: &Path, bank: &FeatureBank) -> Result<()> {
    let mut out = Vec::with_capacity(41 + bank.len() * (bank.s_dim() + bank.z_dim()) * 8);
    out.extend_from_slice(BANK_MAGIC);
    out.push(match bank.domain {
        Domain::Clean => 0,
        Domain::Weather => 1,
    });
    for v in [
        bank.epoch_stamp,
        bank.len() as u64,
        bank.s_dim() as u64,
        bank.z_dim() as u64,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for e in &bank.entries {
        for v in e.s.iter().chain(&e.z) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub const BANK_MAGIC: &[u8; 8] = b"DGPBANK1";

pub fn read_bank(path: &Path) -> Result<FeatureBank> {
    let bytes = fs::read(path)?;
    if bytes.len() < 41 || &bytes[..8] != BANK_MAGIC {
        return Err(Error::malformed(path, "bad bank header"));
    }
    let domain = match bytes[8] {
        0 => Domain::Clean,
        1 => Domain::Weather,
        d => return Err(Error::malformed(path, format!("unknown domain byte {d}"))),
    };
    let word =
        |i: usize| u64::from_le_bytes(bytes[9 + 8 * i..17 + 8 * i].try_into().expect("8 bytes"));
    let (epoch, count, s_dim, z_dim) = (
        word(0),
        word(1) as usize,
        word(2) as usize,
        word(3) as usize,
    );
    let expected = count
        .checked_mul(s_dim + z_dim)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(41));
    if expected != Some(bytes.len()) {
        return Err(Error::malformed(path, "payload size does not match header"));
    }
    let mut values = bytes[41..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut bank = FeatureBank::new(domain, epoch);
    for _ in 0..count {
        let s: Vec<f64> = values.by_ref().take(s_dim).collect();
        let z: Vec<f64> = values.by_ref().take(z_dim).collect();
        bank.push(s, z)?;
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank_of(points: &[(Vec<f64>, Vec<f64>)]) -> FeatureBank {
        let mut b = FeatureBank::new(Domain::Clean, 0);
        for (s, z) in points {
            b.push(s.clone(), z.clone()).unwrap();
        }
        b
    }

    #[test]
    fn one_point_closed_form() {
        let z = vec![1.0, -2.0, 0.5];
        let bank = bank_of(&[(vec![0.3, 0.7], z.clone())]);
        let spec = KernelSpec::homogeneous_se(4, 1.0, 0.01);
        let post = gp_condition(&spec, &bank, &[0], &[0.3, 0.7]).unwrap();
        for (p, zi) in post.pseudo_label.iter().zip(&z) {
            assert!((p - zi / 1.01).abs() < 1e-14);
            assert!((p - 0.990099 * zi).abs() < 1e-6);
        }
        assert!((post.variance - (1.0 - 1.0 / 1.01 + 0.01)).abs() < 1e-14);
        assert!((post.variance - 0.019901).abs() < 1e-6);
    }

    #[test]
    fn noiseless_interpolation() {
        let bank = bank_of(&[
            (vec![0.0, 0.0], vec![1.0, 2.0]),
            (vec![1.0, 0.5], vec![-1.0, 0.5]),
            (vec![-0.5, 1.5], vec![3.0, 0.0]),
        ]);
        let spec = KernelSpec::homogeneous_se(2, 1.0, 0.0);
        let post = gp_condition(&spec, &bank, &[0, 1, 2], &[1.0, 0.5]).unwrap();
        assert!((post.pseudo_label[0] + 1.0).abs() < 1e-9);
        assert!((post.pseudo_label[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn knn_basics() {
        let bank = bank_of(&[
            (vec![0.0], vec![0.0, 0.0]),
            (vec![0.0], vec![1.0, 0.0]),
            (vec![0.0], vec![0.0, 1.0]),
            (vec![0.0], vec![5.0, 5.0]),
        ]);
        assert_eq!(knn_select(&bank, &[5.0, 5.0], 1).unwrap(), vec![3]);
        // Ties at equal distance resolve to the lower index.
        assert_eq!(knn_select(&bank, &[0.5, 0.5], 4).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(knn_select(&bank, &[0.0, 0.0], 10).unwrap().len(), 4);
        let empty = FeatureBank::new(Domain::Clean, 0);
        assert!(matches!(
            knn_select(&empty, &[0.0], 1),
            Err(Error::EmptyBank)
        ));
    }

    #[test]
    fn pseudo_loss_cases() {
        let post = GpPosterior {
            pseudo_label: vec![0.0, 0.0],
            variance: 0.5,
            neighbor_ids: vec![],
        };
        let l = pseudo_loss(&post, &[1.0, 1.0]).unwrap();
        assert!((l - (4.0 + 2.0 * 0.5f64.ln())).abs() < 1e-14);
        assert!((l - 2.613706).abs() < 1e-6);
        assert_eq!(pseudo_loss(&post, &[0.0, 0.0]).unwrap(), 2.0 * 0.5f64.ln());
        let unit = GpPosterior {
            variance: 1.0,
            ..post.clone()
        };
        assert_eq!(pseudo_loss(&unit, &[1.0, 2.0]).unwrap(), 5.0);
        assert_eq!(
            pseudo_loss_grad(&unit, &[1.0, 2.0]).unwrap(),
            vec![2.0, 4.0]
        );
        assert_eq!(
            pseudo_loss_grad(&post, &[0.0, 0.0]).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(pseudo_loss(&post, &[1.0]).is_err());
    }

    #[test]
    fn bad_neighbor_rejected() {
        let bank = bank_of(&[(vec![0.0], vec![0.0])]);
        let spec = KernelSpec::default();
        assert!(matches!(
            gp_condition(&spec, &bank, &[3], &[0.0]),
            Err(Error::BadNeighbor { .. })
        ));
    }

    #[test]
    fn bank_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.bin");
        let bank = bank_of(&[
            (vec![0.25, -1.0], vec![3.0]),
            (vec![1.5, 2.0], vec![-0.125]),
        ]);
        write_bank(&path, &bank).unwrap();
        assert_eq!(read_bank(&path).unwrap(), bank);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_bank(&path).is_err());
    }
}
