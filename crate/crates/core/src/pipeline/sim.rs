//! Synthetic data generators.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::GaussianStream;
use crate::error::{Result, XcanError};
use crate::model::DataMatrix;

/// Derives the seed of sub-stream `k` from a run seed.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Variance of a uniform draw on `[0.5, 1.5)`.
const LATENT_VARIANCE: f64 = 1.0 / 12.0;

/// Population mean of `|corr(x_j, x_k)|` over column pairs for the model
/// `x_j = a_j z + noise_sd · e_j`.
fn mean_abs_correlation(loadings: &[f64], noise_sd: f64) -> f64 {
    let var = noise_sd * noise_sd;
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..loadings.len() {
        for k in (j + 1)..loadings.len() {
            let (a, b) = (loadings[j], loadings[k]);
            let (sa, sb) = (LATENT_VARIANCE * a * a, LATENT_VARIANCE * b * b);
            sum += LATENT_VARIANCE * (a * b).abs() / ((sa + var) * (sb + var)).sqrt();
            count += 1;
        }
    }
    sum / count as f64
}

/// `n × m` matrix whose columns share one latent factor.
///
/// Entry `(i, j)` is `a_j · z_i + σ · e_ij` with `e_ij` standard normal.
/// Loadings `a_j` are a random sign times a magnitude uniform in
/// `[0.5, 1.5)`; latent scores `z_i` are uniform in `[0.5, 1.5)`, so every
/// row carries the shared factor with the same orientation.
/// Draw order: `a` (sign then magnitude per column), `z`, then `e` row by
/// row. `σ` is solved by bisection so the population mean absolute
/// correlation between columns is at least `corr_level`.
pub fn simulate_correlated(n: usize, m: usize, corr_level: f64, seed: u64) -> Result<DataMatrix> {
    let (values, _) = correlated_draw(n, m, corr_level, seed)?;
    DataMatrix::unlabeled(values)
}

/// [`simulate_correlated`] values together with the loadings `a`.
fn correlated_draw(
    n: usize,
    m: usize,
    corr_level: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if n < 2 || m < 2 {
        return Err(XcanError::invalid(format!(
            "need at least 2x2 data, got {n}x{m}"
        )));
    }
    if !(corr_level > 0.0 && corr_level < 1.0) {
        return Err(XcanError::invalid(format!(
            "correlation level must lie in (0, 1), got {corr_level}"
        )));
    }
    let mut rng = GaussianStream::new(seed);
    let loadings: Vec<f64> = (0..m)
        .map(|_| {
            let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            sign * rng.uniform_in(0.5, 1.5)
        })
        .collect();
    let latent: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.5, 1.5)).collect();

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while mean_abs_correlation(&loadings, hi) >= corr_level {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_abs_correlation(&loadings, mid) >= corr_level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let noise_sd = lo;

    let mut values = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            values[(i, j)] = loadings[j] * latent[i] + noise_sd * rng.standard_normal();
        }
    }
    Ok((values, loadings))
}

/// Largest `|cos|` allowed between the loadings of two blocks that share columns.
pub const MAX_SHARED_PATTERN_COSINE: f64 = 0.5;

/// Redraws tried before giving up on a distinct block pattern.
const MAX_REDRAWS: u64 = 1000;

fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffBlockFill {
    /// Noise is added to every cell, including off-block zeros.
    Noisy,
    /// Off-block cells stay exactly zero; noise only touches the blocks.
    Zero,
}

/// Layout of a block-structured simulation.
///
/// Blocks are stacked vertically, each occupying its own row group. Blocks
/// with the same `column_groups` entry share columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub block_sizes: Vec<(usize, usize)>,
    pub column_groups: Vec<usize>,
    pub scale_factors: Vec<f64>,
    pub noise_sd: f64,
    pub corr_level: f64,
    pub offblocks: OffBlockFill,
    pub seed: u64,
}

impl Default for SimSpec {
    /// Three 5×5 blocks: the first alone on columns 1–5, the second and a
    /// doubled third stacked on columns 6–10, noise 0.15 everywhere.
    fn default() -> Self {
        SimSpec {
            block_sizes: vec![(5, 5); 3],
            column_groups: vec![0, 1, 1],
            scale_factors: vec![1.0, 1.0, 2.0],
            noise_sd: 0.15,
            corr_level: 0.9,
            offblocks: OffBlockFill::Noisy,
            seed: 0,
        }
    }
}

impl SimSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Column offset and width of each group.
    fn group_spans(&self) -> Result<Vec<(usize, usize)>> {
        let k = self.block_sizes.len();
        if k == 0 {
            return Err(XcanError::invalid("simulation needs at least one block"));
        }
        if self.column_groups.len() != k || self.scale_factors.len() != k {
            return Err(XcanError::invalid(
                "block sizes, column groups and scale factors must have the same length",
            ));
        }
        if self.block_sizes.iter().any(|&(r, c)| r == 0 || c == 0) {
            return Err(XcanError::invalid("block sizes must be positive"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(XcanError::invalid(
                "noise standard deviation must be nonnegative",
            ));
        }
        let n_groups = self.column_groups.iter().max().unwrap() + 1;
        let mut widths = vec![None; n_groups];
        for (&(_, cols), &g) in self.block_sizes.iter().zip(&self.column_groups) {
            match widths[g] {
                None => widths[g] = Some(cols),
                Some(w) if w != cols => {
                    return Err(XcanError::invalid(format!(
                        "blocks in column group {g} have different widths ({w} and {cols})"
                    )))
                }
                _ => {}
            }
        }
        let mut spans = Vec::with_capacity(n_groups);
        let mut offset = 0;
        for (g, w) in widths.into_iter().enumerate() {
            let w =
                w.ok_or_else(|| XcanError::invalid(format!("column group {g} has no blocks")))?;
            spans.push((offset, w));
            offset += w;
        }
        Ok(spans)
    }
}

/// Ground-truth group index of every row and column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockTruth {
    pub row_groups: Vec<usize>,
    pub col_groups: Vec<usize>,
}

impl BlockTruth {
    pub fn n_row_groups(&self) -> usize {
        self.row_groups.iter().max().map_or(0, |g| g + 1)
    }

    pub fn n_col_groups(&self) -> usize {
        self.col_groups.iter().max().map_or(0, |g| g + 1)
    }
}

/// Assembles the block matrix and adds Gaussian noise.
///
/// Block `k` is `scale_factors[k] · simulate_correlated(.., s_k)` where `s_k`
/// is `derive_seed(seed, k + 1)`. When an earlier block on the same columns
/// has loadings with `|cos|` above [`MAX_SHARED_PATTERN_COSINE`], the block is
/// redrawn with `derive_seed(s_k, t)` for `t = 1, 2, ..`. The noise stream
/// uses `derive_seed(seed, 0)`.
pub fn build_block_data(spec: &SimSpec) -> Result<(DataMatrix, BlockTruth)> {
    let spans = spec.group_spans()?;
    let n: usize = spec.block_sizes.iter().map(|b| b.0).sum();
    let m: usize = spans.iter().map(|s| s.1).sum();
    let mut values = DMatrix::zeros(n, m);
    let mut in_block = DMatrix::from_element(n, m, false);
    let mut row_groups = Vec::with_capacity(n);
    let mut patterns: Vec<Vec<Vec<f64>>> = vec![Vec::new(); spans.len()];

    let mut row = 0;
    for (k, ((&(rows, cols), &g), &scale)) in spec
        .block_sizes
        .iter()
        .zip(&spec.column_groups)
        .zip(&spec.scale_factors)
        .enumerate()
    {
        let base = derive_seed(spec.seed, k as u64 + 1);
        let mut attempt = 0;
        let draw = loop {
            let seed = if attempt == 0 {
                base
            } else {
                derive_seed(base, attempt)
            };
            let (draw, loadings) = correlated_draw(rows, cols, spec.corr_level, seed)?;
            if patterns[g]
                .iter()
                .all(|p| abs_cosine(p, &loadings) <= MAX_SHARED_PATTERN_COSINE)
            {
                patterns[g].push(loadings);
                break draw;
            }
            attempt += 1;
            if attempt == MAX_REDRAWS {
                return Err(XcanError::invalid(format!(
                    "could not draw block {k} distinct from the other blocks on its columns"
                )));
            }
        };
        let (col0, _) = spans[g];
        for i in 0..rows {
            for j in 0..cols {
                values[(row + i, col0 + j)] = scale * draw[(i, j)];
                in_block[(row + i, col0 + j)] = true;
            }
        }
        row_groups.extend(std::iter::repeat_n(k, rows));
        row += rows;
    }

    let mut col_groups = vec![0; m];
    for (g, &(off, w)) in spans.iter().enumerate() {
        col_groups[off..off + w].iter_mut().for_each(|c| *c = g);
    }

    if spec.noise_sd > 0.0 {
        let mut rng = GaussianStream::new(derive_seed(spec.seed, 0));
        for i in 0..n {
            for j in 0..m {
                let e = rng.standard_normal();
                if spec.offblocks == OffBlockFill::Noisy || in_block[(i, j)] {
                    values[(i, j)] += spec.noise_sd * e;
                }
            }
        }
    }

    Ok((
        DataMatrix::unlabeled(values)?,
        BlockTruth {
            row_groups,
            col_groups,
        },
    ))
}

/// Nonnegative spectra built from Gaussian peaks on a sloped baseline, in two classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraSpec {
    pub per_class: usize,
    pub wavelengths: usize,
    /// Peak centers as fractions of the wavelength axis.
    pub peak_centers: Vec<f64>,
    /// Peak width (standard deviation) as a fraction of the wavelength axis.
    pub peak_width: f64,
    /// `class_peaks[c][k]`: maximum concentration of peak `k` in class `c`.
    pub class_peaks: Vec<Vec<f64>>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SpectraSpec {
    fn default() -> Self {
        SpectraSpec {
            per_class: 12,
            wavelengths: 60,
            peak_centers: vec![0.2, 0.5, 0.8],
            peak_width: 0.06,
            class_peaks: vec![vec![1.0, 0.3, 0.0], vec![0.0, 0.3, 1.0]],
            noise_sd: 0.005,
            seed: 0,
        }
    }
}

/// Labelled synthetic spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectra {
    pub data: DataMatrix,
    pub classes: Vec<String>,
    pub peaks: DMatrix<f64>,
    pub baseline: DVector<f64>,
}

/// Each row is `baseline + Σ_k c_k · peak_k + noise`, with `c_k` uniform in
/// `[0, class_peaks[class][k])`, clamped at zero.
pub fn simulate_spectra(spec: &SpectraSpec) -> Result<Spectra> {
    let m = spec.wavelengths;
    let k = spec.peak_centers.len();
    if spec.per_class == 0 || m < 2 || k == 0 || spec.class_peaks.is_empty() {
        return Err(XcanError::invalid(
            "spectra need classes, samples, wavelengths and peaks",
        ));
    }
    if spec.class_peaks.iter().any(|c| c.len() != k) {
        return Err(XcanError::invalid(
            "every class needs one concentration per peak",
        ));
    }
    let axis = |j: usize| j as f64 / (m - 1) as f64;
    let peaks = DMatrix::from_fn(m, k, |j, p| {
        let d = (axis(j) - spec.peak_centers[p]) / spec.peak_width;
        (-0.5 * d * d).exp()
    });
    let baseline = DVector::from_fn(m, |j, _| 0.5 + 0.3 * axis(j));

    let mut rng = GaussianStream::new(spec.seed);
    let n = spec.per_class * spec.class_peaks.len();
    let mut values = DMatrix::zeros(n, m);
    let mut classes = Vec::with_capacity(n);
    let mut row_labels = Vec::with_capacity(n);
    for (c, maxima) in spec.class_peaks.iter().enumerate() {
        let class = char::from(b'A' + (c % 26) as u8).to_string();
        for s in 0..spec.per_class {
            let i = c * spec.per_class + s;
            let conc: Vec<f64> = maxima.iter().map(|&mx| rng.uniform_in(0.0, mx)).collect();
            for j in 0..m {
                let mut v = baseline[j];
                for (p, &cp) in conc.iter().enumerate() {
                    v += cp * peaks[(j, p)];
                }
                values[(i, j)] = (v + spec.noise_sd * rng.standard_normal()).max(0.0);
            }
            row_labels.push(format!("{class}{}", s + 1));
            classes.push(class.clone());
        }
    }
    let col_labels = (0..m).map(|j| format!("w{}", j + 1)).collect();
    Ok(Spectra {
        data: DataMatrix::new(values, row_labels, col_labels)?,
        classes,
        peaks,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    fn mean_abs_pairwise(x: &DataMatrix) -> f64 {
        let cols: Vec<Vec<f64>> = x
            .values()
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect();
        let mut s = 0.0;
        let mut k = 0;
        for i in 0..cols.len() {
            for j in (i + 1)..cols.len() {
                s += pearson(&cols[i], &cols[j]).abs();
                k += 1;
            }
        }
        s / k as f64
    }

    #[test]
    fn high_correlation_level_is_reached() {
        let x = simulate_correlated(5, 5, 0.9, 11).unwrap();
        assert!(mean_abs_pairwise(&x) >= 0.7, "{}", mean_abs_pairwise(&x));
    }

    #[test]
    fn low_correlation_level_stays_low() {
        let x = simulate_correlated(60, 5, 0.01, 3).unwrap();
        assert!(mean_abs_pairwise(&x) < 0.5);
    }

    #[test]
    fn simulate_is_deterministic_and_validates() {
        assert_eq!(
            simulate_correlated(4, 3, 0.5, 9).unwrap(),
            simulate_correlated(4, 3, 0.5, 9).unwrap()
        );
        assert!(simulate_correlated(4, 3, 1.0, 9).is_err());
        assert!(simulate_correlated(4, 3, 0.0, 9).is_err());
        assert!(simulate_correlated(1, 3, 0.5, 9).is_err());
    }

    #[test]
    fn default_block_layout() {
        let (x, truth) = build_block_data(&SimSpec::default()).unwrap();
        assert_eq!((x.n_obs(), x.n_vars()), (15, 10));
        assert_eq!(truth.n_row_groups(), 3);
        assert_eq!(truth.n_col_groups(), 2);
        assert_eq!(
            &truth.row_groups[..],
            &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2]
        );
        assert_eq!(&truth.col_groups[..], &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn zero_offblocks_without_noise() {
        let spec = SimSpec {
            noise_sd: 0.0,
            offblocks: OffBlockFill::Zero,
            ..SimSpec::default()
        };
        let (x, truth) = build_block_data(&spec).unwrap();
        for i in 0..x.n_obs() {
            for j in 0..x.n_vars() {
                let own = (truth.row_groups[i] == 0) == (truth.col_groups[j] == 0);
                if !own {
                    assert_eq!(x.values()[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn scale_factor_doubles_block_norm() {
        let spec = SimSpec {
            column_groups: vec![0, 1, 2],
            ..SimSpec::default().with_seed(4)
        };
        let (x, _) = build_block_data(&spec).unwrap();
        let raw = simulate_correlated(5, 5, spec.corr_level, derive_seed(spec.seed, 3)).unwrap();
        let block = x.values().view((10, 10), (5, 5)).into_owned();
        let noise = (&block - raw.values() * 2.0).norm();
        // 25 cells of sd 0.15 noise: expected norm 0.75
        assert!(noise < 1.5, "noise norm {noise}");
        assert!((block.norm() - 2.0 * raw.values().norm()).abs() <= noise + 1e-12);
    }

    #[test]
    fn shared_column_blocks_have_distinct_patterns() {
        for seed in 0..20 {
            let spec = SimSpec {
                noise_sd: 0.0,
                ..SimSpec::default().with_seed(seed)
            };
            let (x, _) = build_block_data(&spec).unwrap();
            let leading = |r0: usize| {
                let b = x.values().view((r0, 5), (5, 5)).into_owned();
                b.svd(false, true).v_t.unwrap().row(0).transpose()
            };
            let (a, b) = (leading(5), leading(10));
            assert!(
                a.dot(&b).abs() < MAX_SHARED_PATTERN_COSINE + 0.1,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn inconsistent_groups_rejected() {
        let spec = SimSpec {
            block_sizes: vec![(5, 5), (5, 4)],
            column_groups: vec![0, 0],
            scale_factors: vec![1.0, 1.0],
            ..SimSpec::default()
        };
        assert!(build_block_data(&spec).is_err());
    }

    #[test]
    fn spectra_are_nonnegative_and_labelled() {
        let s = simulate_spectra(&SpectraSpec::default()).unwrap();
        assert_eq!(s.data.n_obs(), 24);
        assert!(s.data.values().iter().all(|&v| v >= 0.0));
        assert_eq!(s.classes.iter().filter(|c| *c == "A").count(), 12);
    }
}
