//! Input-concave network: forward pass, reverse-mode gradients and the
//! heteroscedastic negative log-likelihood.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// `x` for `x > 0`, `gamma (e^x - 1)` otherwise.
#[inline]
pub fn elu(x: f64, gamma: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        gamma * x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64, gamma: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        gamma * x.exp()
    }
}

/// `log(1 + gamma + elu(s))`, written to stay accurate as it approaches 0.
#[inline]
fn variance_link(s: f64, gamma: f64) -> f64 {
    if s > 0.0 {
        (gamma + s).ln_1p()
    } else {
        (gamma * s.exp()).ln_1p()
    }
}

/// `d variance_link / ds`.
#[inline]
fn variance_link_grad(s: f64, gamma: f64) -> f64 {
    if s > 0.0 {
        1.0 / (1.0 + gamma + s)
    } else {
        let g = gamma * s.exp();
        g / (1.0 + g)
    }
}

/// One affine layer. `wz` maps the previous hidden state and is absent for
/// the first layer; `wp` maps the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub wz: Option<Array2<f64>>,
    pub wp: Array2<f64>,
    pub b: Array1<f64>,
}

/// Parameters of one network. Layers `0..L` are hidden; layer `L` is the
/// scalar output whose negation is the mean prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct IcnnParams {
    pub input_dim: usize,
    pub gamma: f64,
    pub layers: Vec<Layer>,
    pub w_sigma: Array1<f64>,
    pub b_sigma: f64,
    /// Affine map from raw to reported units: `mu = shift + scale * mu_raw`,
    /// `sigma^2 = scale^2 * sigma^2_raw`.
    pub output_shift: f64,
    pub output_scale: f64,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!("gamma {gamma} must be in (0, 1] for a convex activation")));
    }
    Ok(())
}

impl IcnnParams {
    /// Fan-in uniform initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// with the hidden-state weights replaced by their absolute values.
    pub fn init(input_dim: usize, hidden: &[usize], gamma: f64, rng: &mut SimRng) -> Result<Self> {
        check_gamma(gamma)?;
        if input_dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::invalid("network needs a nonzero input and at least one nonzero hidden layer"));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = 0;
        for &out in hidden.iter().chain(std::iter::once(&1)) {
            let bound = 1.0 / ((prev + input_dim) as f64).sqrt();
            let mut u = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-bound..bound));
            let wz = (prev > 0).then(|| u(out, prev).mapv(f64::abs));
            let wp = u(out, input_dim);
            let b = Array1::from_shape_fn(out, |_| rng.random_range(-bound..bound));
            layers.push(Layer { wz, wp, b });
            prev = out;
        }
        let last = *hidden.last().unwrap();
        let bound = 1.0 / (last as f64).sqrt();
        let w_sigma = Array1::from_shape_fn(last, |_| rng.random_range(-bound..bound));
        let b_sigma = rng.random_range(-bound..bound);
        Ok(IcnnParams {
            input_dim,
            gamma,
            layers,
            w_sigma,
            b_sigma,
            output_shift: 0.0,
            output_scale: 1.0,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(input_dim: usize, hidden: &[usize], gamma: f64) -> Result<Self> {
        let mut p = Self::init(input_dim, hidden, gamma, &mut crate::rng::rng_from_seed(0))?;
        p.map_params(|_| 0.0);
        Ok(p)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.b.len()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Every trainable array, in a fixed order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            if let Some(wz) = &l.wz {
                v.push(wz.as_slice().unwrap());
            }
            v.push(l.wp.as_slice().unwrap());
            v.push(l.b.as_slice().unwrap());
        }
        v.push(self.w_sigma.as_slice().unwrap());
        v.push(std::slice::from_ref(&self.b_sigma));
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            if let Some(wz) = &mut l.wz {
                v.push(wz.as_slice_mut().unwrap());
            }
            v.push(l.wp.as_slice_mut().unwrap());
            v.push(l.b.as_slice_mut().unwrap());
        }
        v.push(self.w_sigma.as_slice_mut().unwrap());
        v.push(std::slice::from_mut(&mut self.b_sigma));
        v
    }

    fn map_params(&mut self, f: impl Fn(f64) -> f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x = f(*x));
        }
    }

    /// Clips every hidden-state weight at zero.
    pub fn project(&mut self) {
        for l in &mut self.layers {
            if let Some(wz) = &mut l.wz {
                wz.mapv_inplace(|x| x.max(0.0));
            }
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.layers
            .iter()
            .filter_map(|l| l.wz.as_ref())
            .all(|wz| wz.iter().all(|&x| x >= 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if !self.is_feasible() {
            return Err(Error::invalid("negative hidden-state weight"));
        }
        if !(self.output_scale > 0.0) {
            return Err(Error::invalid("output_scale must be positive"));
        }
        Ok(())
    }

    fn check_input(&self, p: &ArrayView2<f64>) -> Result<()> {
        if p.ncols() != self.input_dim {
            return Err(Error::invalid(format!(
                "input has {} columns, network expects {}",
                p.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Raw-unit forward pass over a batch (one policy per row).
    pub(crate) fn forward_cache(&self, p: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&p)?;
        let nl = self.layers.len();
        let mut pre = Vec::with_capacity(nl - 1);
        let mut act: Vec<Array2<f64>> = Vec::with_capacity(nl - 1);
        for (k, l) in self.layers[..nl - 1].iter().enumerate() {
            let mut a = p.dot(&l.wp.t());
            if let Some(wz) = &l.wz {
                a += &act[k - 1].dot(&wz.t());
            }
            a += &l.b;
            act.push(a.mapv(|x| elu(x, self.gamma)));
            pre.push(a);
        }
        let z_last = act.last().unwrap();
        let out = &self.layers[nl - 1];
        let mut a_out = p.dot(&out.wp.row(0)) + out.b[0];
        if let Some(wz) = &out.wz {
            a_out += &z_last.dot(&wz.row(0));
        }
        let s = z_last.dot(&self.w_sigma) + self.b_sigma;
        let mu = a_out.mapv(|x| -x);
        let var = s.mapv(|x| variance_link(x, self.gamma));
        Ok(ForwardCache {
            input: p.to_owned(),
            pre,
            act,
            s,
            mu,
            var,
        })
    }

    /// Reported-unit mean and variance for each row of `p`.
    pub fn forward_batch(&self, p: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let c = self.forward_cache(p)?;
        let sc = self.output_scale;
        Ok((c.mu.mapv(|m| self.output_shift + sc * m), c.var.mapv(|v| sc * sc * v)))
    }

    /// Reported-unit `(mu, sigma^2)` at a single policy.
    pub fn forward(&self, p: &[f64]) -> Result<(f64, f64)> {
        let view = ArrayView2::from_shape((1, p.len()), p).map_err(|e| Error::invalid(e.to_string()))?;
        let (m, v) = self.forward_batch(view)?;
        Ok((m[0], v[0]))
    }

    /// Reverse pass. `g_mu` and `g_var` are derivatives of a scalar with
    /// respect to each row's raw mean and raw variance. Returns parameter
    /// gradients (when asked) and input gradients.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        g_mu: &Array1<f64>,
        g_var: &Array1<f64>,
        want_params: bool,
    ) -> (Option<IcnnParams>, Array2<f64>) {
        let nl = self.layers.len();
        let gamma = self.gamma;
        let p = &cache.input;
        let delta_out = g_mu.mapv(|g| -g);
        let delta_s = ndarray::Zip::from(g_var)
            .and(&cache.s)
            .map_collect(|&g, &s| g * variance_link_grad(s, gamma));
        let z_last = cache.act.last().unwrap();
        let out = &self.layers[nl - 1];

        let mut grads = want_params.then(|| {
            let mut g = self.clone();
            g.map_params(|_| 0.0);
            g
        });
        if let Some(g) = grads.as_mut() {
            let go = &mut g.layers[nl - 1];
            if let Some(wz) = &mut go.wz {
                wz.row_mut(0).assign(&z_last.t().dot(&delta_out));
            }
            go.wp.row_mut(0).assign(&p.t().dot(&delta_out));
            go.b[0] = delta_out.sum();
            g.w_sigma = z_last.t().dot(&delta_s);
            g.b_sigma = delta_s.sum();
        }

        let col = |v: &Array1<f64>| v.view().insert_axis(Axis(1)).to_owned();
        let row = |v: ndarray::ArrayView1<f64>| v.insert_axis(Axis(0)).to_owned();
        let mut d_input = col(&delta_out).dot(&row(out.wp.row(0)));
        let mut dz = col(&delta_s).dot(&row(self.w_sigma.view()));
        if let Some(wz) = &out.wz {
            dz += &col(&delta_out).dot(&row(wz.row(0)));
        }

        for k in (0..nl - 1).rev() {
            let l = &self.layers[k];
            let delta = ndarray::Zip::from(&dz)
                .and(&cache.pre[k])
                .map_collect(|&d, &a| d * elu_grad(a, gamma));
            if let Some(g) = grads.as_mut() {
                let gl = &mut g.layers[k];
                gl.wp = delta.t().dot(p);
                gl.b = delta.sum_axis(Axis(0));
                if let Some(wz) = &mut gl.wz {
                    *wz = delta.t().dot(&cache.act[k - 1]);
                }
            }
            d_input += &delta.dot(&l.wp);
            if let Some(wz) = &l.wz {
                dz = delta.dot(wz);
            }
        }
        (grads, d_input)
    }
}

/// Intermediate values of a raw-unit forward pass.
pub(crate) struct ForwardCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    act: Vec<Array2<f64>>,
    s: Array1<f64>,
    pub mu: Array1<f64>,
    pub var: Array1<f64>,
}

/// `1/2 sum_k (y_k - mu_k)^2 / var_k + 1/2 sum_k log var_k` in the
/// reported units of the network.
pub fn nll_loss(params: &IcnnParams, policies: ArrayView2<f64>, targets: &[f64]) -> Result<f64> {
    if policies.nrows() == 0 || policies.nrows() != targets.len() {
        return Err(Error::invalid("dataset must be non-empty with one target per policy"));
    }
    let (mu, var) = params.forward_batch(policies)?;
    Ok(nll_terms(&mu, &var, targets))
}

fn nll_terms(mu: &Array1<f64>, var: &Array1<f64>, y: &[f64]) -> f64 {
    mu.iter()
        .zip(var)
        .zip(y)
        .map(|((&m, &v), &t)| 0.5 * (t - m).powi(2) / v + 0.5 * v.ln())
        .sum()
}

/// Raw-unit NLL and its parameter gradient. `targets` must already be in
/// raw units (`(y - shift) / scale`).
pub(crate) fn nll_and_grad(params: &IcnnParams, policies: ArrayView2<f64>, targets: &[f64]) -> Result<(f64, IcnnParams)> {
    let cache = params.forward_cache(policies)?;
    let loss = nll_terms(&cache.mu, &cache.var, targets);
    let g_mu = ndarray::Zip::from(&cache.mu)
        .and(&cache.var)
        .and(&ndarray::aview1(targets))
        .map_collect(|&m, &v, &t| -(t - m) / v);
    let g_var = ndarray::Zip::from(&cache.mu)
        .and(&cache.var)
        .and(&ndarray::aview1(targets))
        .map_collect(|&m, &v, &t| 0.5 / v - 0.5 * (t - m).powi(2) / (v * v));
    let (g, _) = params.backward(&cache, &g_mu, &g_var, true);
    Ok((loss, g.unwrap()))
}

/// Reported-unit mean, variance and their input gradients for each row.
pub struct InputGradients {
    pub mu: Array1<f64>,
    pub var: Array1<f64>,
    pub d_mu: Array2<f64>,
    pub d_var: Array2<f64>,
}

pub fn input_gradients(params: &IcnnParams, p: ArrayView2<f64>) -> Result<InputGradients> {
    let cache = params.forward_cache(p)?;
    let b = p.nrows();
    let ones = Array1::ones(b);
    let zeros = Array1::zeros(b);
    let sc = params.output_scale;
    let (_, d_mu) = params.backward(&cache, &ones, &zeros, false);
    let (_, d_var) = params.backward(&cache, &zeros, &ones, false);
    Ok(InputGradients {
        mu: cache.mu.mapv(|m| params.output_shift + sc * m),
        var: cache.var.mapv(|v| sc * sc * v),
        d_mu: d_mu * sc,
        d_var: d_var * (sc * sc),
    })
}

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    wz: Option<MatrixFile>,
    wp: MatrixFile,
    b: Vec<f64>,
}

/// Checkpoint schema: per-layer shapes with row-major weights.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    input_dim: usize,
    gamma: f64,
    layers: Vec<LayerFile>,
    w_sigma: Vec<f64>,
    b_sigma: f64,
    output_shift: f64,
    output_scale: f64,
}

fn to_matrix(a: &Array2<f64>) -> MatrixFile {
    MatrixFile {
        shape: [a.nrows(), a.ncols()],
        data: a.iter().copied().collect(),
    }
}

fn from_matrix(m: MatrixFile) -> Result<Array2<f64>> {
    Array2::from_shape_vec((m.shape[0], m.shape[1]), m.data).map_err(|e| Error::invalid(format!("bad matrix: {e}")))
}

impl IcnnParams {
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let file = CheckpointFile {
            input_dim: self.input_dim,
            gamma: self.gamma,
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    wz: l.wz.as_ref().map(to_matrix),
                    wp: to_matrix(&l.wp),
                    b: l.b.to_vec(),
                })
                .collect(),
            w_sigma: self.w_sigma.to_vec(),
            b_sigma: self.b_sigma,
            output_shift: self.output_shift,
            output_scale: self.output_scale,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self> {
        let f: CheckpointFile = serde_json::from_str(s)?;
        let mut layers = Vec::with_capacity(f.layers.len());
        let mut prev = 0;
        for (k, l) in f.layers.into_iter().enumerate() {
            let wp = from_matrix(l.wp)?;
            let wz = l.wz.map(from_matrix).transpose()?;
            let out = wp.nrows();
            let shape_ok = wp.ncols() == f.input_dim
                && l.b.len() == out
                && match &wz {
                    None => k == 0,
                    Some(w) => k > 0 && w.nrows() == out && w.ncols() == prev,
                };
            if !shape_ok {
                return Err(Error::invalid(format!("layer {k} has inconsistent shapes")));
            }
            layers.push(Layer {
                wz,
                wp,
                b: Array1::from(l.b),
            });
            prev = out;
        }
        if layers.len() < 2 || prev != 1 {
            return Err(Error::invalid("checkpoint needs hidden layers and a scalar output"));
        }
        let last_hidden = layers[layers.len() - 2].b.len();
        if f.w_sigma.len() != last_hidden {
            return Err(Error::invalid("variance head width mismatch"));
        }
        let p = IcnnParams {
            input_dim: f.input_dim,
            gamma: f.gamma,
            layers,
            w_sigma: Array1::from(f.w_sigma),
            b_sigma: f.b_sigma,
            output_shift: f.output_shift,
            output_scale: f.output_scale,
        };
        p.validate()?;
        Ok(p)
    }
}
