//! Fully connected ReLU networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>`. Layer `l` stores its weight matrix
//! row-major with shape `(fan_in, fan_out)` followed by its bias vector, so a
//! batch forward pass is `X · W + b` without transposes.
//!
//! Two evaluation paths exist: per-sample loops ([`Mlp::forward`],
//! [`Mlp::grad`]) and batched matrix products ([`Mlp::forward_batch`],
//! [`Mlp::backward_batch`]) used by the trainers.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, ScasError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    /// `scale ⊙ tanh(z)`; outputs are bounded by `scale` elementwise.
    TanhScaled {
        scale: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    pub output_activation: OutputActivation,
}

#[derive(Clone, Copy, Debug)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    w_offset: usize,
    b_offset: usize,
}

impl LayerLayout {
    fn weight_range(&self) -> std::ops::Range<usize> {
        self.w_offset..self.b_offset
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        self.b_offset..self.b_offset + self.fan_out
    }
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, output_activation: OutputActivation) -> Result<Self> {
        let spec = Self {
            layer_widths,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// ReLU hidden layers of equal width with an identity head.
    pub fn regression(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self::new(widths, OutputActivation::Identity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(ScasError::InvalidInput(
                "an MLP needs at least an input and an output layer".into(),
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(ScasError::InvalidInput(
                "layer widths must be positive".into(),
            ));
        }
        if let OutputActivation::TanhScaled { scale } = &self.output_activation {
            check_len("tanh output scale", self.output_dim(), scale.len())?;
            if scale.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
                return Err(ScasError::InvalidInput(
                    "tanh output scale must be strictly positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layers(&self) -> impl Iterator<Item = LayerLayout> + '_ {
        let mut offset = 0;
        self.layer_widths.windows(2).map(move |w| {
            let layout = LayerLayout {
                fan_in: w[0],
                fan_out: w[1],
                w_offset: offset,
                b_offset: offset + w[0] * w[1],
            };
            offset += w[0] * w[1] + w[1];
            layout
        })
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases; the
    /// last layer is additionally multiplied by `final_layer_scale`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, final_layer_scale: f64) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        let last = self.num_layers() - 1;
        for (l, layer) in self.layers().enumerate() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let scale = if l == last { final_layer_scale } else { 1.0 };
            for p in &mut params[layer.w_offset..layer.b_offset + layer.fan_out] {
                *p = scale * rng.random_range(-bound..=bound);
            }
        }
        params
    }
}

/// Saved intermediate values of a batched forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    /// Input followed by each hidden activation (post-ReLU).
    inputs: Vec<Array2<f64>>,
    /// `tanh(z)` of the output layer, only for `TanhScaled` heads.
    tanh: Option<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn new(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        check_len("mlp parameters", spec.num_params(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ScasError::InvalidInput("non-finite MLP parameter".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R, final_layer_scale: f64) -> Self {
        let params = spec.init_params(rng, final_layer_scale);
        Self { spec, params }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn weights(&self, layer: &LayerLayout) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (layer.fan_in, layer.fan_out),
            &self.params[layer.weight_range()],
        )
        .expect("layout matches parameter vector")
    }

    fn bias(&self, layer: &LayerLayout) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[layer.bias_range()])
    }

    /// Single-sample evaluation with explicit loops.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("mlp input", self.spec.input_dim(), input.len())?;
        let (out, _) = self.forward_sample(input);
        Ok(out)
    }

    /// Returns the output and every layer input (the original input first).
    fn forward_sample(&self, input: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n_layers = self.spec.num_layers();
        let mut acts = Vec::with_capacity(n_layers);
        let mut current = input.to_vec();
        for (l, layer) in self.spec.layers().enumerate() {
            let w = &self.params[layer.weight_range()];
            let mut z = self.params[layer.bias_range()].to_vec();
            for (i, &x) in current.iter().enumerate() {
                let row = &w[i * layer.fan_out..(i + 1) * layer.fan_out];
                for (zj, &wij) in z.iter_mut().zip(row) {
                    *zj += x * wij;
                }
            }
            acts.push(std::mem::take(&mut current));
            if l + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            } else if let OutputActivation::TanhScaled { scale } = &self.spec.output_activation {
                for (v, c) in z.iter_mut().zip(scale) {
                    *v = c * v.tanh();
                }
            }
            current = z;
        }
        (current, acts)
    }

    /// Vector-Jacobian products of one sample: `(upstream · ∂y/∂params,
    /// upstream · ∂y/∂input)`.
    pub fn grad(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("mlp input", self.spec.input_dim(), input.len())?;
        check_len(
            "mlp upstream gradient",
            self.spec.output_dim(),
            upstream.len(),
        )?;
        let (out, acts) = self.forward_sample(input);
        let layers: Vec<LayerLayout> = self.spec.layers().collect();
        let mut param_grad = vec![0.0; self.num_params()];

        let mut delta: Vec<f64> = match &self.spec.output_activation {
            OutputActivation::Identity => upstream.to_vec(),
            OutputActivation::TanhScaled { scale } => upstream
                .iter()
                .zip(&out)
                .zip(scale)
                .map(|((g, y), c)| {
                    let t = y / c;
                    g * c * (1.0 - t * t)
                })
                .collect(),
        };

        for (l, layer) in layers.iter().enumerate().rev() {
            let a = &acts[l];
            for (i, &ai) in a.iter().enumerate() {
                let row = &mut param_grad[layer.w_offset + i * layer.fan_out..][..layer.fan_out];
                for (g, &d) in row.iter_mut().zip(&delta) {
                    *g += ai * d;
                }
            }
            for (g, &d) in param_grad[layer.bias_range()].iter_mut().zip(&delta) {
                *g += d;
            }
            let w = &self.params[layer.weight_range()];
            let mut prev = vec![0.0; layer.fan_in];
            for (i, p) in prev.iter_mut().enumerate() {
                let row = &w[i * layer.fan_out..(i + 1) * layer.fan_out];
                *p = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
            }
            if l > 0 {
                for (p, &ai) in prev.iter_mut().zip(a) {
                    if ai <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok((param_grad, delta))
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_impl(x, false).0
    }

    /// Batched forward pass that keeps what [`Mlp::backward_batch`] needs.
    pub fn forward_batch_taped(&self, x: ArrayView2<f64>) -> (Array2<f64>, Tape) {
        let (out, tape) = self.forward_impl(x, true);
        (out, tape.expect("taped forward"))
    }

    fn forward_impl(&self, x: ArrayView2<f64>, keep: bool) -> (Array2<f64>, Option<Tape>) {
        assert_eq!(x.ncols(), self.spec.input_dim(), "mlp batch input width");
        let n_layers = self.spec.num_layers();
        let mut inputs = Vec::with_capacity(if keep { n_layers } else { 0 });
        let mut current = x.to_owned();
        let mut tanh = None;
        for (l, layer) in self.spec.layers().enumerate() {
            let mut z = current.dot(&self.weights(&layer));
            z += &self.bias(&layer);
            if keep {
                inputs.push(current);
            }
            if l + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
            } else if let OutputActivation::TanhScaled { scale } = &self.spec.output_activation {
                z.mapv_inplace(f64::tanh);
                if keep {
                    tanh = Some(z.clone());
                }
                z *= &ArrayView1::from(scale.as_slice());
            }
            current = z;
        }
        let tape = keep.then_some(Tape { inputs, tanh });
        (current, tape)
    }

    /// Batched reverse pass. `upstream` holds one row of output cotangents
    /// per sample. Parameter gradients are summed over the batch and added to
    /// `param_grad` when given; the input gradient is returned when requested.
    pub fn backward_batch(
        &self,
        tape: &Tape,
        upstream: ArrayView2<f64>,
        mut param_grad: Option<&mut [f64]>,
        want_input_grad: bool,
    ) -> Option<Array2<f64>> {
        assert_eq!(
            upstream.ncols(),
            self.spec.output_dim(),
            "mlp upstream width"
        );
        assert_eq!(
            upstream.nrows(),
            tape.inputs[0].nrows(),
            "mlp upstream rows"
        );
        if let Some(g) = param_grad.as_deref() {
            assert_eq!(g.len(), self.num_params(), "mlp gradient buffer");
        }
        let mut delta = upstream.to_owned();
        if let (OutputActivation::TanhScaled { scale }, Some(t)) =
            (&self.spec.output_activation, &tape.tanh)
        {
            for (mut row, t_row) in delta.rows_mut().into_iter().zip(t.rows()) {
                for ((d, &t), &c) in row.iter_mut().zip(t_row).zip(scale) {
                    *d *= c * (1.0 - t * t);
                }
            }
        }
        let layers: Vec<LayerLayout> = self.spec.layers().collect();
        for (l, layer) in layers.iter().enumerate().rev() {
            let a = &tape.inputs[l];
            if let Some(g) = param_grad.as_deref_mut() {
                let mut gw = ArrayViewMut2::from_shape(
                    (layer.fan_in, layer.fan_out),
                    &mut g[layer.weight_range()],
                )
                .expect("layout matches gradient buffer");
                general_mat_mul(1.0, &a.t(), &delta, 1.0, &mut gw);
                let gb: Array1<f64> = delta.sum_axis(Axis(0));
                for (dst, src) in g[layer.bias_range()].iter_mut().zip(gb.iter()) {
                    *dst += src;
                }
            }
            if l == 0 && !want_input_grad {
                return None;
            }
            let mut prev = delta.dot(&self.weights(layer).t());
            if l > 0 {
                prev.zip_mut_with(a, |p, &ai| {
                    if ai <= 0.0 {
                        *p = 0.0;
                    }
                });
            }
            delta = prev;
        }
        Some(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(widths: Vec<usize>, tanh: bool, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = *widths.last().unwrap();
        let act = if tanh {
            OutputActivation::TanhScaled {
                scale: (0..out).map(|i| 0.5 + i as f64).collect(),
            }
        } else {
            OutputActivation::Identity
        };
        Mlp::init(MlpSpec::new(widths, act).unwrap(), &mut rng, 1.0)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::regression(3, &[4, 4], 2).unwrap();
        let n = spec.num_params();
        let net = Mlp::new(spec, vec![0.0; n]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let spec = MlpSpec::regression(2, &[], 2).unwrap();
        let net = Mlp::new(spec, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[0.25, -7.0]).unwrap(), vec![0.25, -7.0]);
    }

    #[test]
    fn scalar_linear_gradients() {
        // y = w x + b with w = 3, b = 0.5
        let net = Mlp::new(MlpSpec::regression(1, &[], 1).unwrap(), vec![3.0, 0.5]).unwrap();
        let (pg, ig) = net.grad(&[2.0], &[1.0]).unwrap();
        assert_eq!(pg, vec![2.0, 1.0]);
        assert_eq!(ig, vec![3.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = random_net(vec![3, 5, 2], true, 1);
        let (pg, ig) = net.grad(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(pg.iter().all(|&g| g == 0.0));
        assert!(ig.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn shape_errors() {
        let net = random_net(vec![3, 5, 2], false, 1);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(ScasError::ShapeMismatch { .. })
        ));
        assert!(net.grad(&[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(MlpSpec::new(vec![3], OutputActivation::Identity).is_err());
        assert!(MlpSpec::new(
            vec![3, 2],
            OutputActivation::TanhScaled {
                scale: vec![1.0, 0.0]
            }
        )
        .is_err());
    }

    // Golden values produced by an independent numpy evaluation of the same
    // parameter vector (weights stored (fan_in, fan_out) row-major, then bias).
    #[test]
    fn forward_matches_golden_three_layer_net() {
        let spec = MlpSpec::new(
            vec![2, 3, 2, 1],
            OutputActivation::TanhScaled { scale: vec![2.0] },
        )
        .unwrap();
        let params: Vec<f64> = (0..spec.num_params())
            .map(|i| ((i as f64) * 0.37).sin())
            .collect();
        let net = Mlp::new(spec, params).unwrap();
        let y = net.forward(&[0.3, -1.2]).unwrap();
        assert!((y[0] - GOLDEN_THREE_LAYER).abs() < 1e-12, "{}", y[0]);
    }
    const GOLDEN_THREE_LAYER: f64 = 1.1821343210269755;

    #[test]
    fn batched_forward_matches_per_sample() {
        let net = random_net(vec![3, 8, 8, 2], true, 7);
        let x = array![[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0], [0.0, 0.0, 0.0]];
        let batch = net.forward_batch(x.view());
        for (i, row) in x.rows().into_iter().enumerate() {
            let single = net.forward(row.as_slice().unwrap()).unwrap();
            for j in 0..2 {
                assert!((batch[[i, j]] - single[j]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn batched_gradients_equal_averaged_per_sample_gradients() {
        let net = random_net(vec![4, 16, 16, 3], true, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = 9;
        let x = Array2::from_shape_fn((b, 4), |_| rng.random_range(-2.0..2.0));
        let up = Array2::from_shape_fn((b, 3), |_| rng.random_range(-1.0..1.0) / b as f64);
        let (_, tape) = net.forward_batch_taped(x.view());
        let mut pg = vec![0.0; net.num_params()];
        let ig = net
            .backward_batch(&tape, up.view(), Some(&mut pg), true)
            .unwrap();
        let mut pg_ref = vec![0.0; net.num_params()];
        for i in 0..b {
            let (p, inp) = net
                .grad(x.row(i).as_slice().unwrap(), up.row(i).as_slice().unwrap())
                .unwrap();
            for (acc, v) in pg_ref.iter_mut().zip(p) {
                *acc += v;
            }
            for j in 0..4 {
                assert!((ig[[i, j]] - inp[j]).abs() < 1e-12);
            }
        }
        for (a, r) in pg.iter().zip(&pg_ref) {
            assert!((a - r).abs() < 1e-10);
        }
    }

    #[test]
    fn tanh_head_is_bounded() {
        let spec = MlpSpec::new(
            vec![1, 4, 2],
            OutputActivation::TanhScaled {
                scale: vec![0.3, 2.0],
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::init(spec, &mut rng, 50.0);
        for x in [-1e6, -3.0, 0.0, 3.0, 1e6] {
            let y = net.forward(&[x]).unwrap();
            assert!(y[0].abs() <= 0.3 && y[1].abs() <= 2.0);
        }
    }
}
