//! Streaming accumulation of the inner-product sufficient statistics.
//!
//! The restricted likelihood never touches an `N`-row matrix once
//! `{m_yy, m_0, m_p, M_00, M_0p, M_pq}` are known. Blocks contribute
//! additively, so per-block stores can be built on independent workers and
//! merged; the finalized store is all the fit stage ever reads.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SammError};
use crate::terms::TermBlock;

const STORE_MAGIC: &[u8; 8] = b"SAMMIPS\x01";

/// Compressed sufficient statistics of the model. `M_pq` is stored for
/// `p <= q` only; the transpose is implied.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerProductStore {
    k: usize,
    widths: Vec<usize>,
    pub m_yy: f64,
    /// `X'y`
    pub m_0: DVector<f64>,
    /// `A_p'y` per term
    pub m_p: Vec<DVector<f64>>,
    /// `X'X`
    pub m_00: DMatrix<f64>,
    /// `X'A_p` per term
    pub m_0p: Vec<DMatrix<f64>>,
    /// `A_p'A_q` for `p <= q`; `cross[p][q - p]`
    cross: Vec<Vec<DMatrix<f64>>>,
    n_seen: usize,
    finalized: bool,
}

/// All-zero store with the given fixed-effect count and term widths.
pub fn init_store(k: usize, widths: &[usize]) -> Result<InnerProductStore> {
    if k == 0 {
        return Err(SammError::InvalidParameter(
            "store needs at least one fixed-effect column".into(),
        ));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(SammError::InvalidParameter(
            "term widths must be at least 1".into(),
        ));
    }
    let p = widths.len();
    Ok(InnerProductStore {
        k,
        widths: widths.to_vec(),
        m_yy: 0.0,
        m_0: DVector::zeros(k),
        m_p: widths.iter().map(|&w| DVector::zeros(w)).collect(),
        m_00: DMatrix::zeros(k, k),
        m_0p: widths.iter().map(|&w| DMatrix::zeros(k, w)).collect(),
        cross: (0..p)
            .map(|i| {
                (i..p)
                    .map(|j| DMatrix::zeros(widths[i], widths[j]))
                    .collect()
            })
            .collect(),
        n_seen: 0,
        finalized: false,
    })
}

/// Adds one data block's contribution to the store. The block matrices are
/// free to be dropped immediately afterwards.
pub fn accumulate_block(
    store: &mut InnerProductStore,
    x_block: &DMatrix<f64>,
    y_block: &DVector<f64>,
    a_blocks: &[TermBlock],
) -> Result<()> {
    if store.finalized {
        return Err(SammError::InvalidInput(
            "cannot accumulate into a finalized store".into(),
        ));
    }
    let n_b = y_block.len();
    if x_block.nrows() != n_b {
        return Err(SammError::ShapeMismatch(format!(
            "X block has {} rows, y block has {n_b}",
            x_block.nrows()
        )));
    }
    if x_block.ncols() != store.k {
        return Err(SammError::ShapeMismatch(format!(
            "X block has {} columns, store expects {}",
            x_block.ncols(),
            store.k
        )));
    }
    if a_blocks.len() != store.widths.len() {
        return Err(SammError::ShapeMismatch(format!(
            "{} term blocks supplied, store expects {}",
            a_blocks.len(),
            store.widths.len()
        )));
    }
    for (p, a) in a_blocks.iter().enumerate() {
        if a.nrows() != n_b || a.ncols() != store.widths[p] {
            return Err(SammError::ShapeMismatch(format!(
                "term block {p} is {}x{}, expected {n_b}x{}",
                a.nrows(),
                a.ncols(),
                store.widths[p]
            )));
        }
    }
    if n_b == 0 {
        return Ok(());
    }

    store.m_yy += y_block.dot(y_block);
    store.m_0.gemv_tr(1.0, x_block, y_block, 1.0);
    store.m_00.gemm_tr(1.0, x_block, x_block, 1.0);
    for (p, a) in a_blocks.iter().enumerate() {
        store.m_p[p].gemv_tr(1.0, a.matrix(), y_block, 1.0);
        store.m_0p[p].gemm_tr(1.0, x_block, a.matrix(), 1.0);
        for (j, b) in a_blocks.iter().enumerate().skip(p) {
            store.cross[p][j - p].gemm_tr(1.0, a.matrix(), b.matrix(), 1.0);
        }
    }
    store.n_seen += n_b;
    Ok(())
}

/// Fieldwise sum of two stores built over disjoint row sets.
pub fn merge_stores(a: &InnerProductStore, b: &InnerProductStore) -> Result<InnerProductStore> {
    if a.k != b.k || a.widths != b.widths {
        return Err(SammError::ShapeMismatch(format!(
            "stores disagree: K {} vs {}, widths {:?} vs {:?}",
            a.k, b.k, a.widths, b.widths
        )));
    }
    if a.finalized || b.finalized {
        return Err(SammError::InvalidInput(
            "cannot merge finalized stores".into(),
        ));
    }
    let mut out = a.clone();
    out.m_yy += b.m_yy;
    out.m_0 += &b.m_0;
    out.m_00 += &b.m_00;
    for p in 0..out.widths.len() {
        out.m_p[p] += &b.m_p[p];
        out.m_0p[p] += &b.m_0p[p];
        for j in 0..out.cross[p].len() {
            out.cross[p][j] += &b.cross[p][j];
        }
    }
    out.n_seen += b.n_seen;
    Ok(out)
}

impl InnerProductStore {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn term_count(&self) -> usize {
        self.widths.len()
    }

    /// `A_p'A_q` for `p <= q` by reference.
    pub fn cross_ref(&self, p: usize, q: usize) -> &DMatrix<f64> {
        assert!(p <= q, "cross_ref expects p <= q");
        &self.cross[p][q - p]
    }

    /// `A_p'A_q` for any order (transposing as needed).
    pub fn cross(&self, p: usize, q: usize) -> DMatrix<f64> {
        if p <= q {
            self.cross[p][q - p].clone()
        } else {
            self.cross[q][p - q].transpose()
        }
    }

    /// Marks the store complete: checks the declared row count, enforces
    /// exact symmetry of the Gram diagonal blocks.
    pub fn finalize(mut self, declared_n: usize) -> Result<InnerProductStore> {
        if self.n_seen == 0 {
            return Err(SammError::EmptyData(
                "no rows were accumulated into the store".into(),
            ));
        }
        if self.n_seen != declared_n {
            return Err(SammError::InvalidInput(format!(
                "store saw {} rows but {declared_n} were declared",
                self.n_seen
            )));
        }
        symmetrize(&mut self.m_00);
        for p in 0..self.widths.len() {
            symmetrize(&mut self.cross[p][0]);
        }
        self.finalized = true;
        Ok(self)
    }

    /// Smallest-eigenvalue check on `M_00` and every `M_pp`:
    /// `lambda_min >= -1e-8 * trace`. Diagnostic; used by the test suites.
    pub fn check_psd(&self) -> Result<()> {
        let check = |m: &DMatrix<f64>, name: &str| -> Result<()> {
            let eig = m.clone().symmetric_eigen();
            let min = eig.eigenvalues.min();
            let trace = m.trace();
            if min < -1e-8 * trace.max(f64::MIN_POSITIVE) {
                return Err(SammError::NumericalInconsistency(format!(
                    "{name} has eigenvalue {min:.3e} below -1e-8 x trace ({trace:.3e})"
                )));
            }
            Ok(())
        };
        check(&self.m_00, "M_00")?;
        for p in 0..self.widths.len() {
            check(&self.cross[p][0], &format!("M_{p}{p}"))?;
        }
        Ok(())
    }

    /// Largest relative entry difference against another store, over every
    /// field. Used by partition-invariance checks.
    pub fn max_rel_diff(&self, other: &InnerProductStore) -> f64 {
        let mut worst = rel_diff(self.m_yy, other.m_yy);
        let scan = |a: &[f64], b: &[f64], worst: &mut f64| {
            for (x, y) in a.iter().zip(b) {
                *worst = worst.max(rel_diff(*x, *y));
            }
        };
        scan(self.m_0.as_slice(), other.m_0.as_slice(), &mut worst);
        scan(self.m_00.as_slice(), other.m_00.as_slice(), &mut worst);
        for p in 0..self.widths.len() {
            scan(self.m_p[p].as_slice(), other.m_p[p].as_slice(), &mut worst);
            scan(
                self.m_0p[p].as_slice(),
                other.m_0p[p].as_slice(),
                &mut worst,
            );
            for j in 0..self.cross[p].len() {
                scan(
                    self.cross[p][j].as_slice(),
                    other.cross[p][j].as_slice(),
                    &mut worst,
                );
            }
        }
        worst
    }

    /// Writes the versioned binary sidecar so a refit can start without
    /// re-streaming the data.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(STORE_MAGIC)?;
        write_u64(&mut w, self.finalized as u64)?;
        write_u64(&mut w, self.k as u64)?;
        write_u64(&mut w, self.widths.len() as u64)?;
        for &width in &self.widths {
            write_u64(&mut w, width as u64)?;
        }
        write_u64(&mut w, self.n_seen as u64)?;
        write_f64(&mut w, self.m_yy)?;
        write_slice(&mut w, self.m_0.as_slice())?;
        write_slice(&mut w, self.m_00.as_slice())?;
        for p in 0..self.widths.len() {
            write_slice(&mut w, self.m_p[p].as_slice())?;
            write_slice(&mut w, self.m_0p[p].as_slice())?;
            for j in 0..self.cross[p].len() {
                write_slice(&mut w, self.cross[p][j].as_slice())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<InnerProductStore> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(SammError::ModelFile(format!(
                "unrecognized store sidecar header {magic:?} (expected version 1)"
            )));
        }
        let finalized = read_u64(&mut r)? != 0;
        let k = read_u64(&mut r)? as usize;
        let p = read_u64(&mut r)? as usize;
        let mut widths = Vec::with_capacity(p);
        for _ in 0..p {
            widths.push(read_u64(&mut r)? as usize);
        }
        let mut store = init_store(k, &widths)?;
        store.n_seen = read_u64(&mut r)? as usize;
        store.m_yy = read_f64(&mut r)?;
        read_into(&mut r, store.m_0.as_mut_slice())?;
        read_into(&mut r, store.m_00.as_mut_slice())?;
        for p in 0..widths.len() {
            read_into(&mut r, store.m_p[p].as_mut_slice())?;
            read_into(&mut r, store.m_0p[p].as_mut_slice())?;
            for j in 0..(widths.len() - p) {
                read_into(&mut r, store.cross[p][j].as_mut_slice())?;
            }
        }
        store.finalized = finalized;
        Ok(store)
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_slice<W: Write>(w: &mut W, s: &[f64]) -> Result<()> {
    for &v in s {
        write_f64(w, v)?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_into<R: Read>(r: &mut R, out: &mut [f64]) -> Result<()> {
    for v in out.iter_mut() {
        *v = read_f64(r)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memtrack;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_data(
        n: usize,
        k: usize,
        widths: &[usize],
        seed: u64,
    ) -> (DMatrix<f64>, DVector<f64>, Vec<DMatrix<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let a = widths
            .iter()
            .map(|&w| DMatrix::from_fn(n, w, |_, _| rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        (x, y, a)
    }

    fn accumulate_rows(
        store: &mut InnerProductStore,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        a: &[DMatrix<f64>],
        range: std::ops::Range<usize>,
    ) {
        let xb = x.rows(range.start, range.len()).into_owned();
        let yb = DVector::from_column_slice(&y.as_slice()[range.clone()]);
        let ab: Vec<TermBlock> = a
            .iter()
            .map(|m| TermBlock::from_matrix(m.rows(range.start, range.len()).into_owned()))
            .collect();
        accumulate_block(store, &xb, &yb, &ab).unwrap();
    }

    #[test]
    fn zero_store_shapes() {
        let store = init_store(2, &[3]).unwrap();
        assert_eq!(store.m_0.len(), 2);
        assert_eq!(store.m_p[0].len(), 3);
        assert_eq!(store.m_00.shape(), (2, 2));
        assert_eq!(store.m_0p[0].shape(), (2, 3));
        assert_eq!(store.cross_ref(0, 0).shape(), (3, 3));
        assert_eq!(store.n_seen(), 0);
        assert!(store.m_00.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_store_cannot_finalize() {
        let store = init_store(2, &[3]).unwrap();
        assert!(matches!(store.finalize(0), Err(SammError::EmptyData(_))));
    }

    #[test]
    fn merging_zero_stores_is_zero() {
        let a = init_store(2, &[3, 4]).unwrap();
        let b = init_store(2, &[3, 4]).unwrap();
        let m = merge_stores(&a, &b).unwrap();
        assert_eq!(m, a);
    }

    #[test]
    fn single_block_matches_dense_oracle() {
        // The independent oracle is plain triple-loop matrix arithmetic.
        let (n, k, widths) = (120, 3, vec![4usize, 6]);
        let (x, y, a) = random_data(n, k, &widths, 42);
        let mut store = init_store(k, &widths).unwrap();
        accumulate_rows(&mut store, &x, &y, &a, 0..n);
        let store = store.finalize(n).unwrap();

        let dense_dot = |u: &[f64], v: &[f64]| -> f64 {
            u.iter().zip(v).map(|(a, b)| a * b).sum()
        };
        let col = |m: &DMatrix<f64>, j: usize| -> Vec<f64> {
            (0..m.nrows()).map(|i| m[(i, j)]).collect()
        };
        let yv: Vec<f64> = y.iter().copied().collect();

        assert_abs_diff_eq!(store.m_yy, dense_dot(&yv, &yv), epsilon = 1e-12 * n as f64);
        for j in 0..k {
            let xj = col(&x, j);
            assert_abs_diff_eq!(store.m_0[j], dense_dot(&xj, &yv), epsilon = 1e-10);
            for j2 in 0..k {
                assert_abs_diff_eq!(
                    store.m_00[(j, j2)],
                    dense_dot(&xj, &col(&x, j2)),
                    epsilon = 1e-10
                );
            }
            for (p, ap) in a.iter().enumerate() {
                for c in 0..widths[p] {
                    assert_abs_diff_eq!(
                        store.m_0p[p][(j, c)],
                        dense_dot(&xj, &col(ap, c)),
                        epsilon = 1e-10
                    );
                }
            }
        }
        for p in 0..widths.len() {
            for c in 0..widths[p] {
                assert_abs_diff_eq!(
                    store.m_p[p][c],
                    dense_dot(&col(&a[p], c), &yv),
                    epsilon = 1e-10
                );
                for q in p..widths.len() {
                    for c2 in 0..widths[q] {
                        assert_abs_diff_eq!(
                            store.cross_ref(p, q)[(c, c2)],
                            dense_dot(&col(&a[p], c), &col(&a[q], c2)),
                            epsilon = 1e-10
                        );
                    }
                }
            }
        }
        store.check_psd().unwrap();
    }

    #[test]
    fn empty_block_is_a_no_op() {
        let (x, y, a) = random_data(10, 2, &[3], 1);
        let mut store = init_store(2, &[3]).unwrap();
        accumulate_rows(&mut store, &x, &y, &a, 0..10);
        let before = store.clone();
        let empty_x = DMatrix::<f64>::zeros(0, 2);
        let empty_y = DVector::<f64>::zeros(0);
        let empty_a = vec![TermBlock::from_matrix(DMatrix::<f64>::zeros(0, 3))];
        accumulate_block(&mut store, &empty_x, &empty_y, &empty_a).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn sequential_blocks_match_concatenation() {
        let (n, k, widths) = (90, 2, vec![5usize]);
        let (x, y, a) = random_data(n, k, &widths, 7);
        let mut whole = init_store(k, &widths).unwrap();
        accumulate_rows(&mut whole, &x, &y, &a, 0..n);
        let mut split = init_store(k, &widths).unwrap();
        accumulate_rows(&mut split, &x, &y, &a, 0..40);
        accumulate_rows(&mut split, &x, &y, &a, 40..n);
        assert!(whole.max_rel_diff(&split) < 1e-10);
    }

    #[test]
    fn partition_invariance_over_worker_counts() {
        let (n, k, widths) = (210, 3, vec![4usize, 7]);
        let (x, y, a) = random_data(n, k, &widths, 9);
        let mut reference = init_store(k, &widths).unwrap();
        accumulate_rows(&mut reference, &x, &y, &a, 0..n);
        let reference = reference.finalize(n).unwrap();

        for h in [2usize, 3, 7] {
            let size = n.div_ceil(h);
            let mut parts = Vec::new();
            for b in 0..h {
                let lo = b * size;
                let hi = ((b + 1) * size).min(n);
                let mut s = init_store(k, &widths).unwrap();
                if lo < hi {
                    accumulate_rows(&mut s, &x, &y, &a, lo..hi);
                }
                parts.push(s);
            }
            let merged = parts
                .into_iter()
                .reduce(|acc, s| merge_stores(&acc, &s).unwrap())
                .unwrap()
                .finalize(n)
                .unwrap();
            assert!(reference.max_rel_diff(&merged) < 1e-10, "H = {h}");
            merged.check_psd().unwrap();
        }
    }

    #[test]
    fn merge_is_commutative_bitwise() {
        let (x, y, a) = random_data(60, 2, &[4], 11);
        let mut s1 = init_store(2, &[4]).unwrap();
        accumulate_rows(&mut s1, &x, &y, &a, 0..30);
        let mut s2 = init_store(2, &[4]).unwrap();
        accumulate_rows(&mut s2, &x, &y, &a, 30..60);
        let ab = merge_stores(&s1, &s2).unwrap();
        let ba = merge_stores(&s2, &s1).unwrap();
        assert_eq!(ab, ba);
        // merge with zero is the identity
        let zero = init_store(2, &[4]).unwrap();
        assert_eq!(merge_stores(&s1, &zero).unwrap(), s1);
    }

    #[test]
    fn declared_count_mismatch_is_rejected() {
        let (x, y, a) = random_data(20, 2, &[3], 3);
        let mut store = init_store(2, &[3]).unwrap();
        accumulate_rows(&mut store, &x, &y, &a, 0..20);
        assert!(matches!(
            store.finalize(21),
            Err(SammError::InvalidInput(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (x, y, _) = random_data(20, 2, &[3], 3);
        let mut store = init_store(2, &[3]).unwrap();
        let wrong = vec![TermBlock::from_matrix(DMatrix::zeros(20, 4))];
        assert!(matches!(
            accumulate_block(&mut store, &x, &y, &wrong),
            Err(SammError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn streaming_pass_tracks_peak_block_size() {
        memtrack::reset();
        let (n, k, widths) = (100, 2, vec![6usize]);
        let (x, y, a) = random_data(n, k, &widths, 13);
        let h = 4;
        let size = n.div_ceil(h);
        let mut store = init_store(k, &widths).unwrap();
        for b in 0..h {
            let lo = b * size;
            let hi = ((b + 1) * size).min(n);
            accumulate_rows(&mut store, &x, &y, &a, lo..hi);
        }
        let stats = memtrack::stats();
        assert!(stats.max_rows <= size);
        assert!(stats.peak_single_entries <= size * 6);
        store.finalize(n).unwrap();
    }

    #[test]
    fn sidecar_roundtrip_is_exact() {
        let (n, k, widths) = (50, 2, vec![3usize, 4]);
        let (x, y, a) = random_data(n, k, &widths, 21);
        let mut store = init_store(k, &widths).unwrap();
        accumulate_rows(&mut store, &x, &y, &a, 0..n);
        let store = store.finalize(n).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.bin");
        store.save(&path).unwrap();
        let loaded = InnerProductStore::load(&path).unwrap();
        assert_eq!(store, loaded);
        assert!(loaded.is_finalized());
    }

    #[test]
    fn sidecar_rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTASTOREFILE").unwrap();
        assert!(matches!(
            InnerProductStore::load(&path),
            Err(SammError::ModelFile(_)) | Err(SammError::Io(_))
        ));
    }
}
