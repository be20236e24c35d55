//! Network layers with explicit forward/backward passes. Every layer caches
//! what its backward needs during forward and consumes the cache on backward;
//! calling backward without a recorded forward is an error.

use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VqpError};

/// Uniform fan-in initialization: U[-sqrt(3/fan_in), sqrt(3/fan_in)].
pub(crate) fn uniform_fan_in(rng: &mut ChaCha8Rng, fan_in: usize) -> impl FnMut() -> f64 + '_ {
    let bound = (3.0 / fan_in as f64).sqrt();
    move || rng.random_range(-bound..bound)
}

fn take_cache<T>(cache: &mut Option<T>) -> Result<T> {
    cache.take().ok_or(VqpError::NoRecordedComputation)
}

/// Output length and left padding for "same"-style zero padding:
/// out = ceil(in/stride), pad split left/right with the extra on the right.
pub(crate) fn same_padding(t_in: usize, k: usize, stride: usize) -> (usize, usize) {
    let t_out = t_in.div_ceil(stride);
    let total = ((t_out - 1) * stride + k).saturating_sub(t_in);
    (t_out, total / 2)
}

pub struct ConvCache {
    /// im2col matrix, (B*T_out) x (Cin*k).
    col: Array2<f64>,
    b: usize,
    t_in: usize,
    t_out: usize,
    pad_left: usize,
}

/// 1-D convolution over (B, T, C) with zero "same" padding.
pub struct Conv1d {
    /// (Cout, Cin, k)
    pub w: Array3<f64>,
    pub b: Array1<f64>,
    pub stride: usize,
    pub gw: Array3<f64>,
    pub gb: Array1<f64>,
    cache: Option<ConvCache>,
}

impl Conv1d {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut init = uniform_fan_in(rng, c_in * k);
        let w = Array3::from_shape_fn((c_out, c_in, k), |_| init());
        Conv1d {
            w,
            b: Array1::zeros(c_out),
            stride,
            gw: Array3::zeros((c_out, c_in, k)),
            gb: Array1::zeros(c_out),
            cache: None,
        }
    }

    fn run(&self, x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let (b, t_in, c_in) = x.dim();
        let (c_out, _, k) = self.w.dim();
        let (t_out, pad_left) = same_padding(t_in, k, self.stride);

        let mut col = Array2::zeros((b * t_out, c_in * k));
        for bi in 0..b {
            for t in 0..t_out {
                let row = bi * t_out + t;
                for dk in 0..k {
                    let src = (t * self.stride + dk) as isize - pad_left as isize;
                    if src >= 0 && (src as usize) < t_in {
                        for c in 0..c_in {
                            col[[row, c * k + dk]] = x[[bi, src as usize, c]];
                        }
                    }
                }
            }
        }

        let w2 = self
            .w
            .view()
            .into_shape_with_order((c_out, c_in * k))
            .expect("conv weight is contiguous");
        let mut y2 = col.dot(&w2.t());
        for mut row in y2.outer_iter_mut() {
            row += &self.b;
        }
        let y = y2
            .into_shape_with_order((b, t_out, c_out))
            .expect("conv output reshape");
        (y, ConvCache { col, b, t_in, t_out, pad_left })
    }

    pub fn apply(&self, x: &Array3<f64>) -> Array3<f64> {
        self.run(x).0
    }

    pub fn forward(&mut self, x: &Array3<f64>) -> Array3<f64> {
        let (y, cache) = self.run(x);
        self.cache = Some(cache);
        y
    }

    pub fn backward(&mut self, gy: &Array3<f64>) -> Result<Array3<f64>> {
        let ConvCache { col, b, t_in, t_out, pad_left } = take_cache(&mut self.cache)?;
        let (c_out, c_in, k) = self.w.dim();
        let gy2 = gy
            .view()
            .into_shape_with_order((b * t_out, c_out))
            .map_err(|_| VqpError::ShapeError("conv backward adjoint shape".into()))?;

        self.gb += &gy2.sum_axis(ndarray::Axis(0));
        let gw2 = gy2.t().dot(&col);
        let gw3 = gw2
            .into_shape_with_order((c_out, c_in, k))
            .expect("conv grad reshape");
        self.gw += &gw3;

        let w2 = self
            .w
            .view()
            .into_shape_with_order((c_out, c_in * k))
            .expect("conv weight is contiguous");
        let gcol = gy2.dot(&w2);

        let mut gx = Array3::zeros((b, t_in, c_in));
        for bi in 0..b {
            for t in 0..t_out {
                let row = bi * t_out + t;
                for dk in 0..k {
                    let src = (t * self.stride + dk) as isize - pad_left as isize;
                    if src >= 0 && (src as usize) < t_in {
                        for c in 0..c_in {
                            gx[[bi, src as usize, c]] += gcol[[row, c * k + dk]];
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

/// Elementwise max(0, x) over (B, T, C).
pub struct Relu {
    cache: Option<Array3<f64>>, // forward output; positive entries pass gradient
}

impl Relu {
    pub fn new() -> Self {
        Relu { cache: None }
    }

    pub fn apply(&self, x: &Array3<f64>) -> Array3<f64> {
        x.mapv(|v| v.max(0.0))
    }

    pub fn forward(&mut self, x: &Array3<f64>) -> Array3<f64> {
        let y = self.apply(x);
        self.cache = Some(y.clone());
        y
    }

    pub fn backward(&mut self, gy: &Array3<f64>) -> Result<Array3<f64>> {
        let y = take_cache(&mut self.cache)?;
        let mut gx = gy.clone();
        gx.zip_mut_with(&y, |g, &v| {
            if v <= 0.0 {
                *g = 0.0;
            }
        });
        Ok(gx)
    }
}

/// x + relu(conv_k3_s1(x)).
pub struct ResidualBlock {
    pub conv: Conv1d,
    relu: Relu,
}

impl ResidualBlock {
    pub fn new(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        ResidualBlock { conv: Conv1d::new(channels, channels, 3, 1, rng), relu: Relu::new() }
    }

    pub fn apply(&self, x: &Array3<f64>) -> Array3<f64> {
        x + &self.relu.apply(&self.conv.apply(x))
    }

    pub fn forward(&mut self, x: &Array3<f64>) -> Array3<f64> {
        x + &self.relu.forward(&self.conv.forward(x))
    }

    pub fn backward(&mut self, gy: &Array3<f64>) -> Result<Array3<f64>> {
        let g_branch = self.conv.backward(&self.relu.backward(gy)?)?;
        Ok(gy + &g_branch)
    }
}

/// Affine map over the last axis of a 2-D input; callers flatten (B, T, C)
/// to (B*T, C) for time-distributed use.
pub struct Linear {
    /// (out, in)
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
    cache: Option<Array2<f64>>, // input
}

impl Linear {
    pub fn new(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut init = uniform_fan_in(rng, n_in);
        let w = Array2::from_shape_fn((n_out, n_in), |_| init());
        Linear {
            w,
            b: Array1::zeros(n_out),
            gw: Array2::zeros((n_out, n_in)),
            gb: Array1::zeros(n_out),
            cache: None,
        }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.t());
        for mut row in y.outer_iter_mut() {
            row += &self.b;
        }
        y
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let y = self.apply(x);
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Result<Array2<f64>> {
        let x = take_cache(&mut self.cache)?;
        self.gw += &gy.t().dot(&x);
        self.gb += &gy.sum_axis(ndarray::Axis(0));
        Ok(gy.dot(&self.w))
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

struct GruCache {
    x: Array3<f64>,
    /// h[., 0, .] is the zero initial state; h[., t+1, .] the state after step t.
    h: Array3<f64>,
    r: Array3<f64>,
    z: Array3<f64>,
    n: Array3<f64>,
    /// W_hn h_prev + b_hn, needed because r gates it multiplicatively.
    hn_lin: Array3<f64>,
}

/// Single-layer GRU (reset/update/new gating); returns the final hidden state.
pub struct Gru {
    /// (3H, D) stacked [r | z | n].
    pub w_ih: Array2<f64>,
    /// (3H, H) stacked [r | z | n].
    pub w_hh: Array2<f64>,
    pub b_ih: Array1<f64>,
    pub b_hh: Array1<f64>,
    pub gw_ih: Array2<f64>,
    pub gw_hh: Array2<f64>,
    pub gb_ih: Array1<f64>,
    pub gb_hh: Array1<f64>,
    hidden: usize,
    cache: Option<GruCache>,
}

impl Gru {
    pub fn new(n_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_ih = {
            let mut init = uniform_fan_in(rng, n_in);
            Array2::from_shape_fn((3 * hidden, n_in), |_| init())
        };
        let w_hh = {
            let mut init = uniform_fan_in(rng, hidden);
            Array2::from_shape_fn((3 * hidden, hidden), |_| init())
        };
        Gru {
            w_ih,
            w_hh,
            b_ih: Array1::zeros(3 * hidden),
            b_hh: Array1::zeros(3 * hidden),
            gw_ih: Array2::zeros((3 * hidden, n_in)),
            gw_hh: Array2::zeros((3 * hidden, hidden)),
            gb_ih: Array1::zeros(3 * hidden),
            gb_hh: Array1::zeros(3 * hidden),
            hidden,
            cache: None,
        }
    }

    fn run(&self, x: &Array3<f64>) -> (Array2<f64>, GruCache) {
        let (b, t_len, _) = x.dim();
        let hn = self.hidden;
        let mut h = Array3::zeros((b, t_len + 1, hn));
        let mut r = Array3::zeros((b, t_len, hn));
        let mut z = Array3::zeros((b, t_len, hn));
        let mut n = Array3::zeros((b, t_len, hn));
        let mut hn_lin = Array3::zeros((b, t_len, hn));

        for t in 0..t_len {
            let x_t = x.slice(s![.., t, ..]);
            let h_prev = h.slice(s![.., t, ..]).to_owned();
            let mut gi = x_t.dot(&self.w_ih.t());
            for mut row in gi.outer_iter_mut() {
                row += &self.b_ih;
            }
            let mut gh = h_prev.dot(&self.w_hh.t());
            for mut row in gh.outer_iter_mut() {
                row += &self.b_hh;
            }
            for bi in 0..b {
                for u in 0..hn {
                    let rv = sigmoid(gi[[bi, u]] + gh[[bi, u]]);
                    let zv = sigmoid(gi[[bi, hn + u]] + gh[[bi, hn + u]]);
                    let hl = gh[[bi, 2 * hn + u]];
                    let nv = (gi[[bi, 2 * hn + u]] + rv * hl).tanh();
                    r[[bi, t, u]] = rv;
                    z[[bi, t, u]] = zv;
                    n[[bi, t, u]] = nv;
                    hn_lin[[bi, t, u]] = hl;
                    h[[bi, t + 1, u]] = (1.0 - zv) * nv + zv * h[[bi, t, u]];
                }
            }
        }
        let h_last = h.slice(s![.., t_len, ..]).to_owned();
        (h_last, GruCache { x: x.clone(), h, r, z, n, hn_lin })
    }

    pub fn apply(&self, x: &Array3<f64>) -> Array2<f64> {
        self.run(x).0
    }

    pub fn forward(&mut self, x: &Array3<f64>) -> Array2<f64> {
        let (y, cache) = self.run(x);
        self.cache = Some(cache);
        y
    }

    /// Backpropagate from the gradient of the final hidden state.
    pub fn backward(&mut self, gh_last: &Array2<f64>) -> Result<Array3<f64>> {
        let GruCache { x, h, r, z, n, hn_lin } = take_cache(&mut self.cache)?;
        let (b, t_len, _) = x.dim();
        let hn = self.hidden;
        let mut gx = Array3::zeros(x.dim());
        let mut dh = gh_last.clone();

        for t in (0..t_len).rev() {
            let mut dgi = Array2::zeros((b, 3 * hn));
            let mut dgh = Array2::zeros((b, 3 * hn));
            let mut dh_prev = Array2::zeros((b, hn));
            for bi in 0..b {
                for u in 0..hn {
                    let (rv, zv, nv, hl) =
                        (r[[bi, t, u]], z[[bi, t, u]], n[[bi, t, u]], hn_lin[[bi, t, u]]);
                    let h_prev = h[[bi, t, u]];
                    let d = dh[[bi, u]];
                    let dz = d * (h_prev - nv);
                    let dn = d * (1.0 - zv);
                    dh_prev[[bi, u]] = d * zv;
                    let dn_pre = dn * (1.0 - nv * nv);
                    let dr = dn_pre * hl;
                    let dhl = dn_pre * rv;
                    let dz_pre = dz * zv * (1.0 - zv);
                    let dr_pre = dr * rv * (1.0 - rv);
                    dgi[[bi, u]] = dr_pre;
                    dgi[[bi, hn + u]] = dz_pre;
                    dgi[[bi, 2 * hn + u]] = dn_pre;
                    dgh[[bi, u]] = dr_pre;
                    dgh[[bi, hn + u]] = dz_pre;
                    dgh[[bi, 2 * hn + u]] = dhl;
                }
            }
            let x_t = x.slice(s![.., t, ..]);
            let h_prev = h.slice(s![.., t, ..]);
            self.gw_ih += &dgi.t().dot(&x_t);
            self.gw_hh += &dgh.t().dot(&h_prev);
            self.gb_ih += &dgi.sum_axis(ndarray::Axis(0));
            self.gb_hh += &dgh.sum_axis(ndarray::Axis(0));
            gx.slice_mut(s![.., t, ..]).assign(&dgi.dot(&self.w_ih));
            dh = dh_prev + dgh.dot(&self.w_hh);
        }
        Ok(gx)
    }
}

/// Nearest-neighbor temporal upsampling by 2: each frame is repeated once.
pub struct Upsample2x {
    cache: Option<usize>, // input length
}

impl Upsample2x {
    pub fn new() -> Self {
        Upsample2x { cache: None }
    }

    pub fn apply(&self, x: &Array3<f64>) -> Array3<f64> {
        let (b, t_len, c) = x.dim();
        let mut y = Array3::zeros((b, 2 * t_len, c));
        for t in 0..t_len {
            y.slice_mut(s![.., 2 * t, ..]).assign(&x.slice(s![.., t, ..]));
            y.slice_mut(s![.., 2 * t + 1, ..]).assign(&x.slice(s![.., t, ..]));
        }
        y
    }

    pub fn forward(&mut self, x: &Array3<f64>) -> Array3<f64> {
        self.cache = Some(x.dim().1);
        self.apply(x)
    }

    pub fn backward(&mut self, gy: &Array3<f64>) -> Result<Array3<f64>> {
        let t_len = take_cache(&mut self.cache)?;
        let (b, _, c) = gy.dim();
        let mut gx = Array3::zeros((b, t_len, c));
        for t in 0..t_len {
            let sum = &gy.slice(s![.., 2 * t, ..]) + &gy.slice(s![.., 2 * t + 1, ..]);
            gx.slice_mut(s![.., t, ..]).assign(&sum);
        }
        Ok(gx)
    }
}
