//! Minimal dense-network stack: row-major matrices, ReLU MLPs with exact
//! backward passes, and Adam.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::agents::checkpoint::AgentCheckpoint;
use crate::error::AgentError;

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn xavier(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Mat {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    /// y = W x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            y[r] = acc;
        }
    }

    /// x += Wᵀ d (accumulates the input gradient)
    pub fn matvec_transpose_acc(&self, d: &[f64], x: &mut [f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let dv = d[r];
            for (xg, w) in x.iter_mut().zip(row) {
                *xg += w * dv;
            }
        }
    }

    /// W += d xᵀ (accumulates the outer-product gradient)
    pub fn outer_acc(&mut self, d: &[f64], x: &[f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for r in 0..self.rows {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            let dv = d[r];
            for (w, xv) in row.iter_mut().zip(x) {
                *w += dv * xv;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Mat,
    pub b: Vec<f64>,
}

/// Fully connected net: ReLU on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    preacts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub layers: Vec<(Mat, Vec<f64>)>,
    pub d_input: Vec<f64>,
}

impl DenseNet {
    pub fn new(sizes: &[usize], rng: &mut ChaCha12Rng) -> DenseNet {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer { w: Mat::xavier(w[1], w[0], rng), b: vec![0.0; w[1]] })
            .collect();
        DenseNet { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").w.rows
    }

    pub fn check_input(&self, x: &[f64]) -> Result<(), AgentError> {
        if x.len() != self.input_dim() {
            return Err(AgentError::ShapeMismatch {
                layer: "dense input".into(),
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, DenseCache) {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut preacts = Vec::with_capacity(n);
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.w.rows];
            layer.w.matvec(&cur, &mut z);
            for (zv, bv) in z.iter_mut().zip(&layer.b) {
                *zv += bv;
            }
            inputs.push(cur);
            preacts.push(z.clone());
            if i + 1 < n {
                for zv in &mut z {
                    *zv = zv.max(0.0);
                }
            }
            cur = z;
        }
        (cur, DenseCache { inputs, preacts })
    }

    /// Output without cache (inference).
    pub fn infer(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).0
    }

    /// Backward pass from dL/dy; returns parameter gradients and dL/dx.
    pub fn backward(&self, cache: &DenseCache, dy: &[f64]) -> DenseGrads {
        let n = self.layers.len();
        let mut grads: Vec<(Mat, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (Mat::zeros(l.w.rows, l.w.cols), vec![0.0; l.b.len()]))
            .collect();
        let mut delta = dy.to_vec();
        for i in (0..n).rev() {
            if i + 1 < n {
                // ReLU gate on this layer's pre-activation.
                for (d, z) in delta.iter_mut().zip(&cache.preacts[i]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            grads[i].0.outer_acc(&delta, &cache.inputs[i]);
            for (g, d) in grads[i].1.iter_mut().zip(&delta) {
                *g += d;
            }
            let mut d_input = vec![0.0; self.layers[i].w.cols];
            self.layers[i].w.matvec_transpose_acc(&delta, &mut d_input);
            delta = d_input;
        }
        DenseGrads { layers: grads, d_input: delta }
    }

    pub fn zero_grads(&self) -> DenseGrads {
        DenseGrads {
            layers: self
                .layers
                .iter()
                .map(|l| (Mat::zeros(l.w.rows, l.w.cols), vec![0.0; l.b.len()]))
                .collect(),
            d_input: vec![0.0; self.input_dim()],
        }
    }

    pub fn accumulate(acc: &mut DenseGrads, g: &DenseGrads, scale: f64) {
        for ((aw, ab), (gw, gb)) in acc.layers.iter_mut().zip(&g.layers) {
            for (a, v) in aw.data.iter_mut().zip(&gw.data) {
                *a += scale * v;
            }
            for (a, v) in ab.iter_mut().zip(gb) {
                *a += scale * v;
            }
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            out.push(layer.w.data.as_mut_slice());
            out.push(layer.b.as_mut_slice());
        }
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            out.push(layer.w.data.as_slice());
            out.push(layer.b.as_slice());
        }
        out
    }

    pub fn grad_slices(grads: &DenseGrads) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(grads.layers.len() * 2);
        for (w, b) in &grads.layers {
            out.push(w.data.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    /// target <- tau * online + (1 - tau) * target
    pub fn soft_update_from(&mut self, online: &DenseNet, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (tv, ov) in t.w.data.iter_mut().zip(&o.w.data) {
                *tv = tau * ov + (1.0 - tau) * *tv;
            }
            for (tv, ov) in t.b.iter_mut().zip(&o.b) {
                *tv = tau * ov + (1.0 - tau) * *tv;
            }
        }
    }

    pub fn pack(&self, prefix: &str, ck: &mut AgentCheckpoint) {
        for (i, layer) in self.layers.iter().enumerate() {
            ck.arrays.insert(format!("{prefix}.w{i}"), layer.w.data.clone());
            ck.arrays.insert(format!("{prefix}.b{i}"), layer.b.clone());
        }
    }

    pub fn unpack_into(&mut self, prefix: &str, ck: &AgentCheckpoint) -> Result<(), AgentError> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let w = ck.array(&format!("{prefix}.w{i}"), layer.w.data.len())?;
            let b = ck.array(&format!("{prefix}.b{i}"), layer.b.len())?;
            layer.w.data.copy_from_slice(w);
            layer.b.copy_from_slice(b);
        }
        Ok(())
    }
}

/// Adam over an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, shapes: &[usize]) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[&[f64]]) -> AdamState {
        let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        AdamState::new(lr, &shapes)
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.len() {
                let grad = g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad * grad;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    pub fn pack(&self, prefix: &str, ck: &mut AgentCheckpoint) {
        ck.scalars.insert(format!("{prefix}.lr"), self.lr);
        ck.ints.insert(format!("{prefix}.steps"), self.step_count as i64);
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            ck.arrays.insert(format!("{prefix}.m{i}"), m.clone());
            ck.arrays.insert(format!("{prefix}.v{i}"), v.clone());
        }
    }

    pub fn unpack_into(&mut self, prefix: &str, ck: &AgentCheckpoint) -> Result<(), AgentError> {
        self.lr = ck.scalar(&format!("{prefix}.lr"))?;
        self.step_count = ck.int(&format!("{prefix}.steps"))? as u64;
        for i in 0..self.m.len() {
            let m = ck.array(&format!("{prefix}.m{i}"), self.m[i].len())?;
            let v = ck.array(&format!("{prefix}.v{i}"), self.v[i].len())?;
            self.m[i].copy_from_slice(m);
            self.v[i].copy_from_slice(v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_net_outputs_zero() {
        let mut r = rng::stream(1, &["nets"]);
        let mut net = DenseNet::new(&[3, 4, 2], &mut r);
        for layer in &mut net.layers {
            layer.w.data.iter_mut().for_each(|w| *w = 0.0);
        }
        let (y, _) = net.forward(&[1.0, -2.0, 3.0]);
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn one_by_one_net_is_hand_checkable() {
        let mut r = rng::stream(2, &["nets"]);
        let mut net = DenseNet::new(&[1, 1, 1], &mut r);
        net.layers[0].w.data[0] = 2.0;
        net.layers[0].b[0] = -1.0;
        net.layers[1].w.data[0] = 3.0;
        net.layers[1].b[0] = 0.5;
        // x=1: relu(2*1-1)=1, y=3*1+0.5=3.5
        assert!((net.infer(&[1.0])[0] - 3.5).abs() < 1e-12);
        // x=0: relu(-1)=0, y=0.5
        assert!((net.infer(&[0.0])[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        // Central differences on a scalar loss L = sum(y^2) / 2.
        let mut r = rng::stream(3, &["nets-fd"]);
        for _ in 0..5 {
            let mut net = DenseNet::new(&[4, 6, 3], &mut r);
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            let (y, cache) = net.forward(&x);
            let dy: Vec<f64> = y.clone();
            let grads = net.backward(&cache, &dy);

            let loss = |net: &DenseNet, x: &[f64]| -> f64 {
                let y = net.infer(x);
                0.5 * y.iter().map(|v| v * v).sum::<f64>()
            };
            let probe = 1e-5;
            for li in 0..net.layers.len() {
                for wi in 0..net.layers[li].w.data.len() {
                    let orig = net.layers[li].w.data[wi];
                    net.layers[li].w.data[wi] = orig + probe;
                    let up = loss(&net, &x);
                    net.layers[li].w.data[wi] = orig - probe;
                    let down = loss(&net, &x);
                    net.layers[li].w.data[wi] = orig;
                    let fd = (up - down) / (2.0 * probe);
                    let an = grads.layers[li].0.data[wi];
                    let denom = fd.abs().max(an.abs()).max(1e-8);
                    assert!(
                        ((fd - an) / denom).abs() < 1e-5,
                        "layer {li} w[{wi}]: fd {fd} vs {an}"
                    );
                }
            }
            // Input gradient too.
            let mut x_var = x.clone();
            for xi in 0..x_var.len() {
                let orig = x_var[xi];
                x_var[xi] = orig + probe;
                let up = loss(&net, &x_var);
                x_var[xi] = orig - probe;
                let down = loss(&net, &x_var);
                x_var[xi] = orig;
                let fd = (up - down) / (2.0 * probe);
                let an = grads.d_input[xi];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(((fd - an) / denom).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut adam = AdamState::new(0.05, &[2]);
        let mut params = vec![5.0, -3.0];
        for _ in 0..2000 {
            let grads: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
            let mut view: Vec<&mut [f64]> = vec![params.as_mut_slice()];
            adam.step(&mut view, &[&grads]);
        }
        assert!(params.iter().all(|p| p.abs() < 1e-3), "{params:?}");
    }

    #[test]
    fn soft_update_convex_combination_trajectory() {
        let mut r = rng::stream(4, &["soft"]);
        let online = DenseNet::new(&[2, 3, 1], &mut r);
        let mut target = DenseNet::new(&[2, 3, 1], &mut r);
        let target0 = target.clone();
        let tau = 0.1;
        let n = 25;
        for _ in 0..n {
            target.soft_update_from(&online, tau);
        }
        let decay = (1.0 - tau).powi(n);
        for li in 0..target.layers.len() {
            for wi in 0..target.layers[li].w.data.len() {
                let expect = decay * target0.layers[li].w.data[wi]
                    + (1.0 - decay) * online.layers[li].w.data[wi];
                assert!((target.layers[li].w.data[wi] - expect).abs() < 1e-12);
            }
        }
    }
}
