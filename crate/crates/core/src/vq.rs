//! Vector-quantization bottleneck: codebook, nearest-neighbor lookup, the
//! two VQ loss terms with their stop-gradient routing, the per-dimension
//! update counter, and latent manipulation.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VqpError};

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// K x D; entry e_i is row i (1-indexed in reports).
    pub entries: Array2<f64>,
}

impl Codebook {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() < 2 || entries.ncols() < 1 {
            return Err(VqpError::ShapeError(format!(
                "codebook needs K >= 2 and D >= 1, got {} x {}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(VqpError::BadValue("codebook entries must be finite".into()));
        }
        Ok(Codebook { entries })
    }

    /// Random initialization, uniform in [-1/K, 1/K] per component.
    pub fn init_uniform(k: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / k as f64;
        let entries = Array2::from_shape_fn((k, d), |_| rng.random_range(-bound..bound));
        Codebook::new(entries)
    }

    pub fn k(&self) -> usize {
        self.entries.nrows()
    }

    pub fn d(&self) -> usize {
        self.entries.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeResult {
    /// T x D, row t is a bit-identical copy of the selected code.
    pub z_q: Array2<f64>,
    pub indices: Vec<usize>,
    /// Encoder output retained for the loss terms and gradient routing.
    pub z_e: Array2<f64>,
}

/// Nearest code per time step under L2; ties break to the lowest index.
pub fn quantize(z_e: &Array2<f64>, book: &Codebook) -> Result<QuantizeResult> {
    if z_e.ncols() != book.d() {
        return Err(VqpError::ShapeError(format!(
            "z_e has D={}, codebook has D={}",
            z_e.ncols(),
            book.d()
        )));
    }
    if z_e.nrows() == 0 {
        return Err(VqpError::EmptyInput("z_e has zero time steps".into()));
    }
    let (t_len, d) = (z_e.nrows(), z_e.ncols());
    let mut z_q = Array2::zeros((t_len, d));
    let mut indices = vec![0usize; t_len];
    for t in 0..t_len {
        let row = z_e.row(t);
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (j, code) in book.entries.outer_iter().enumerate() {
            let mut d2 = 0.0;
            for (a, b) in row.iter().zip(code.iter()) {
                let diff = a - b;
                d2 += diff * diff;
            }
            if d2 < best_d2 {
                best_d2 = d2;
                best = j;
            }
        }
        indices[t] = best;
        z_q.row_mut(t).assign(&book.entries.row(best));
    }
    Ok(QuantizeResult { z_q, indices, z_e: z_e.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqLossTerms {
    pub codebook_loss: f64,
    pub commitment_loss: f64,
    pub beta: f64,
}

/// codebook_loss = mean over t of ||z_e[t] - e_k(t)||^2; commitment_loss is
/// beta times the same mean. Gradient routing contract: codebook_loss
/// gradients flow only to codebook entries (z_e held constant), commitment
/// gradients flow only to z_e (entries held constant); see the network's
/// backward pass for the implementation of both routes.
pub fn vq_loss(result: &QuantizeResult, book: &Codebook, beta: f64) -> Result<VqLossTerms> {
    if beta <= 0.0 {
        return Err(VqpError::BadValue(format!("beta must be > 0, got {beta}")));
    }
    if result.z_e.ncols() != book.d() {
        return Err(VqpError::ShapeError("z_e and codebook disagree on D".into()));
    }
    let t_len = result.z_e.nrows();
    let mut total = 0.0;
    for t in 0..t_len {
        let code = book.entries.row(result.indices[t]);
        for (a, b) in result.z_e.row(t).iter().zip(code.iter()) {
            let diff = a - b;
            total += diff * diff;
        }
    }
    let mean = total / t_len as f64;
    Ok(VqLossTerms { codebook_loss: mean, commitment_loss: beta * mean, beta })
}

/// The straight-through estimator: the adjoint crosses the quantizer unchanged.
pub fn straight_through(grad_wrt_z_q: &Array2<f64>) -> Array2<f64> {
    grad_wrt_z_q.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterMode {
    /// accum[d] += |mean over codes of delta[., d]| (default reading).
    MeanThenAbs,
    /// accum[d] += mean over codes of |delta[., d]| (alternative reading).
    AbsThenMean,
}

impl CounterMode {
    pub fn name(&self) -> &'static str {
        match self {
            CounterMode::MeanThenAbs => "mean_then_abs",
            CounterMode::AbsThenMean => "abs_then_mean",
        }
    }
}

impl std::str::FromStr for CounterMode {
    type Err = VqpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_then_abs" => Ok(CounterMode::MeanThenAbs),
            "abs_then_mean" => Ok(CounterMode::AbsThenMean),
            other => Err(VqpError::BadValue(format!("unknown counter mode '{other}'"))),
        }
    }
}

/// Per-dimension accumulator of absolute average codebook movement.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookCounter {
    pub accum: Array1<f64>,
    pub steps: u64,
    pub mode: CounterMode,
}

impl CodebookCounter {
    pub fn new(d: usize, mode: CounterMode) -> Self {
        CodebookCounter { accum: Array1::zeros(d), steps: 0, mode }
    }
}

pub fn counter_update(
    counter: &mut CodebookCounter,
    before: &Codebook,
    after: &Codebook,
) -> Result<()> {
    if before.entries.dim() != after.entries.dim() {
        return Err(VqpError::ShapeError("codebooks differ in shape".into()));
    }
    if before.d() != counter.accum.len() {
        return Err(VqpError::ShapeError("counter dimension mismatch".into()));
    }
    let k = before.k() as f64;
    for d in 0..before.d() {
        let contribution = match counter.mode {
            CounterMode::MeanThenAbs => {
                let mut sum = 0.0;
                for i in 0..before.k() {
                    sum += after.entries[[i, d]] - before.entries[[i, d]];
                }
                (sum / k).abs()
            }
            CounterMode::AbsThenMean => {
                let mut sum = 0.0;
                for i in 0..before.k() {
                    sum += (after.entries[[i, d]] - before.entries[[i, d]]).abs();
                }
                sum / k
            }
        };
        counter.accum[d] += contribution;
    }
    counter.steps += 1;
    Ok(())
}

/// Dimensions (1-indexed) by accumulated value, descending; ties to the
/// lower index.
pub fn rank_dimensions(counter: &CodebookCounter) -> Result<Vec<usize>> {
    if counter.steps == 0 {
        return Err(VqpError::EmptyCounter);
    }
    let mut dims: Vec<usize> = (0..counter.accum.len()).collect();
    dims.sort_by(|&a, &b| {
        counter.accum[b]
            .partial_cmp(&counter.accum[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    Ok(dims.into_iter().map(|d| d + 1).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManipulateMode {
    Override,
    Offset,
}

impl std::str::FromStr for ManipulateMode {
    type Err = VqpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "override" => Ok(ManipulateMode::Override),
            "offset" => Ok(ManipulateMode::Offset),
            other => Err(VqpError::BadValue(format!("unknown manipulate mode '{other}'"))),
        }
    }
}

/// Set (override) or shift (offset) one latent column, 1-indexed, at every
/// time step; all other columns are untouched.
pub fn manipulate_latent(
    z_q: &Array2<f64>,
    dim: usize,
    value: f64,
    mode: ManipulateMode,
) -> Result<Array2<f64>> {
    if dim < 1 || dim > z_q.ncols() {
        return Err(VqpError::BadDimension(format!(
            "dim {dim} outside 1..={}",
            z_q.ncols()
        )));
    }
    let mut out = z_q.clone();
    let col = dim - 1;
    for t in 0..out.nrows() {
        match mode {
            ManipulateMode::Override => out[[t, col]] = value,
            ManipulateMode::Offset => out[[t, col]] += value,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn exact_match_selects_that_code() {
        let book = Codebook::new(array![
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [0.5, 0.5],
        ])
        .unwrap();
        let z_e = array![[0.5, 0.5]];
        let q = quantize(&z_e, &book).unwrap();
        assert_eq!(q.indices, vec![3]);
        assert_eq!(q.z_q.row(0), book.entries.row(3));
    }

    #[test]
    fn picks_nearer_of_two_codes() {
        let book = Codebook::new(array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let q = quantize(&array![[0.9, 0.8]], &book).unwrap();
        assert_eq!(q.indices, vec![1]);
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let book = Codebook::new(array![[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]]).unwrap();
        let q = quantize(&array![[0.0, 0.0]], &book).unwrap();
        assert_eq!(q.indices, vec![0]);
    }

    #[test]
    fn loss_hand_case() {
        let book = Codebook::new(array![[0.0, 0.0], [5.0, 5.0]]).unwrap();
        let z_e = array![[1.0, 0.0]];
        let q = quantize(&z_e, &book).unwrap();
        let loss = vq_loss(&q, &book, 0.25).unwrap();
        assert_eq!(loss.codebook_loss, 1.0);
        assert_eq!(loss.commitment_loss, 0.25);
    }

    #[test]
    fn zero_distance_means_zero_loss() {
        let book = Codebook::new(array![[0.25, -0.5], [2.0, 2.0]]).unwrap();
        let z_e = array![[0.25, -0.5], [2.0, 2.0]];
        let q = quantize(&z_e, &book).unwrap();
        let loss = vq_loss(&q, &book, 0.25).unwrap();
        assert_eq!(loss.codebook_loss, 0.0);
        assert_eq!(loss.commitment_loss, 0.0);
    }

    #[test]
    fn straight_through_is_identity() {
        let g = array![[1.5, -2.0], [0.0, 3.25]];
        assert_eq!(straight_through(&g), g);
    }

    #[test]
    fn counter_zero_delta_only_bumps_steps() {
        let book = Codebook::init_uniform(4, 3, 7).unwrap();
        let mut counter = CodebookCounter::new(3, CounterMode::MeanThenAbs);
        counter_update(&mut counter, &book, &book).unwrap();
        assert_eq!(counter.steps, 1);
        assert!(counter.accum.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn counter_uniform_shift_in_one_dimension() {
        let before = Codebook::new(Array2::zeros((4, 3))).unwrap();
        let mut after = before.clone();
        for i in 0..4 {
            after.entries[[i, 2]] = 0.5;
        }
        let mut counter = CodebookCounter::new(3, CounterMode::MeanThenAbs);
        counter_update(&mut counter, &before, &after).unwrap();
        assert_eq!(counter.accum.to_vec(), vec![0.0, 0.0, 0.5]);
        let mut counter = CodebookCounter::new(3, CounterMode::AbsThenMean);
        counter_update(&mut counter, &before, &after).unwrap();
        assert_eq!(counter.accum.to_vec(), vec![0.0, 0.0, 0.5]);
    }

    #[test]
    fn counter_modes_differ_on_cancelling_moves() {
        let before = Codebook::new(Array2::zeros((2, 1))).unwrap();
        let mut after = before.clone();
        after.entries[[0, 0]] = 1.0;
        after.entries[[1, 0]] = -1.0;
        let mut ma = CodebookCounter::new(1, CounterMode::MeanThenAbs);
        counter_update(&mut ma, &before, &after).unwrap();
        assert_eq!(ma.accum[0], 0.0);
        let mut am = CodebookCounter::new(1, CounterMode::AbsThenMean);
        counter_update(&mut am, &before, &after).unwrap();
        assert_eq!(am.accum[0], 1.0);
    }

    #[test]
    fn ranking_matches_hand_sort() {
        let mut counter = CodebookCounter::new(3, CounterMode::MeanThenAbs);
        counter.accum = array![0.0, 5.0, 1.0];
        counter.steps = 1;
        assert_eq!(rank_dimensions(&counter).unwrap(), vec![2, 3, 1]);
    }

    #[test]
    fn ranking_all_equal_is_identity() {
        let mut counter = CodebookCounter::new(4, CounterMode::MeanThenAbs);
        counter.accum = array![0.3, 0.3, 0.3, 0.3];
        counter.steps = 5;
        assert_eq!(rank_dimensions(&counter).unwrap(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn ranking_empty_counter_is_error() {
        let counter = CodebookCounter::new(4, CounterMode::MeanThenAbs);
        assert!(matches!(rank_dimensions(&counter), Err(VqpError::EmptyCounter)));
    }

    #[test]
    fn override_sets_column() {
        let z = array![[1.0, 2.0], [3.0, 4.0]];
        let out = manipulate_latent(&z, 2, 4.0, ManipulateMode::Override).unwrap();
        assert_eq!(out, array![[1.0, 4.0], [3.0, 4.0]]);
        assert_eq!(out.column(0), z.column(0));
    }

    #[test]
    fn offset_zero_is_identity() {
        let z = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(manipulate_latent(&z, 1, 0.0, ManipulateMode::Offset).unwrap(), z);
    }

    #[test]
    fn offset_round_trip_restores() {
        let z = array![[1.0, 2.0], [3.0, 4.0]];
        let out = manipulate_latent(&z, 1, -4.0, ManipulateMode::Offset).unwrap();
        let back = manipulate_latent(&out, 1, 4.0, ManipulateMode::Offset).unwrap();
        for (a, b) in back.iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_dim_is_error() {
        let z = array![[1.0, 2.0]];
        assert!(matches!(
            manipulate_latent(&z, 0, 1.0, ManipulateMode::Override),
            Err(VqpError::BadDimension(_))
        ));
        assert!(matches!(
            manipulate_latent(&z, 3, 1.0, ManipulateMode::Override),
            Err(VqpError::BadDimension(_))
        ));
    }
}
