use std::str::FromStr;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Zip};
use rand::Rng;

use crate::error::{Result, SgpError};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Silu => silu(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    pub fn derivative<F: Real>(self, x: F) -> F {
        match self {
            Activation::Silu => silu_grad(x),
            Activation::Tanh => {
                let t = x.tanh();
                F::one() - t * t
            }
            Activation::Identity => F::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = SgpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Activation::Silu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(SgpError::Config(format!("unknown activation '{other}'"))),
        }
    }
}

pub fn silu<F: Real>(x: F) -> F {
    x / (F::one() + (-x).exp())
}

pub fn silu_grad<F: Real>(x: F) -> F {
    let sig = F::one() / (F::one() + (-x).exp());
    sig * (F::one() + x * (F::one() - sig))
}

pub(crate) fn uniform_matrix<F: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Array2<F> {
    Array2::from_shape_simple_fn((rows, cols), || F::from_f64_lossy(rng.random_range(-bound..=bound)))
}

/// Block-diagonal linear map: group `j` reads its own slice of the input row
/// and writes its own slice of the output, `out_j = σ(x_j · Θ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedLinear<F> {
    weights: Vec<Array2<F>>,
    in_offsets: Vec<usize>,
    out_offsets: Vec<usize>,
    activation: Activation,
}

impl<F: Real> GroupedLinear<F> {
    pub fn from_weights(weights: Vec<Array2<F>>, activation: Activation) -> Result<Self> {
        if weights.is_empty() {
            return Err(SgpError::Config("grouped layer needs at least one group".into()));
        }
        let mut in_offsets = vec![0];
        let mut out_offsets = vec![0];
        for w in &weights {
            if w.nrows() == 0 || w.ncols() == 0 {
                return Err(SgpError::Shape(format!("empty group weight {:?}", w.dim())));
            }
            in_offsets.push(in_offsets.last().unwrap() + w.nrows());
            out_offsets.push(out_offsets.last().unwrap() + w.ncols());
        }
        let weights = weights.into_iter().map(|w| w.as_standard_layout().into_owned()).collect();
        Ok(GroupedLinear {
            weights,
            in_offsets,
            out_offsets,
            activation,
        })
    }

    /// Uniform ±1/√fan_in initialisation, one `in_width × out_width` block per group.
    pub fn random<R: Rng>(groups: &[(usize, usize)], activation: Activation, rng: &mut R) -> Result<Self> {
        let weights = groups
            .iter()
            .map(|&(i, o)| uniform_matrix(rng, i, o, 1.0 / (i.max(1) as f64).sqrt()))
            .collect();
        Self::from_weights(weights, activation)
    }

    pub fn num_groups(&self) -> usize {
        self.weights.len()
    }

    pub fn input_width(&self) -> usize {
        *self.in_offsets.last().unwrap()
    }

    pub fn output_width(&self) -> usize {
        *self.out_offsets.last().unwrap()
    }

    pub fn input_widths(&self) -> Vec<usize> {
        self.weights.iter().map(|w| w.nrows()).collect()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<F>] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Array2<F>] {
        &mut self.weights
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    fn check_width(&self, x: &ArrayView2<F>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(SgpError::Shape(format!(
                "grouped layer expects width {}, got {}",
                self.input_width(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn preactivations(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_width(&x)?;
        let mut out = Array2::zeros((x.nrows(), self.output_width()));
        for (j, w) in self.weights.iter().enumerate() {
            let xj = x.slice(s![.., self.in_offsets[j]..self.in_offsets[j + 1]]);
            let mut oj = out.slice_mut(s![.., self.out_offsets[j]..self.out_offsets[j + 1]]);
            general_mat_mul(F::one(), &xj, w, F::zero(), &mut oj);
        }
        Ok(out)
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        let act = self.activation;
        Ok(self.preactivations(x)?.mapv_into(|v| act.apply(v)))
    }

    /// Weight cotangents given the input, the cached pre-activations and the
    /// cotangent of the activated output.
    pub(crate) fn weight_grads(&self, x: ArrayView2<F>, pre: &Array2<F>, d_out: ArrayView2<F>) -> Vec<Array2<F>> {
        let act = self.activation;
        let mut d_pre = d_out.to_owned();
        Zip::from(&mut d_pre).and(pre).for_each(|d, &p| *d *= act.derivative(p));
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let xj = x.slice(s![.., self.in_offsets[j]..self.in_offsets[j + 1]]);
                let dj = d_pre.slice(s![.., self.out_offsets[j]..self.out_offsets[j + 1]]);
                let mut g = Array2::zeros(w.raw_dim());
                general_mat_mul(F::one(), &xj.t(), &dj, F::zero(), &mut g);
                g
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block_diagonal(layer: &GroupedLinear<f32>) -> Array2<f64> {
        let mut m = Array2::zeros((layer.input_width(), layer.output_width()));
        let (mut r, mut c) = (0, 0);
        for w in layer.weights() {
            for ((i, j), v) in w.indexed_iter() {
                m[[r + i, c + j]] = *v as f64;
            }
            r += w.nrows();
            c += w.ncols();
        }
        m
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let layer = GroupedLinear::<f32>::from_weights(vec![Array2::zeros((3, 2)), Array2::zeros((2, 2))], Activation::Tanh)
            .unwrap();
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i + j) as f32);
        assert!(layer.forward(x.view()).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_group_copies_input() {
        let layer = GroupedLinear::<f32>::from_weights(vec![Array2::eye(3)], Activation::Identity).unwrap();
        let x = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f32 - 2.5);
        assert_eq!(layer.forward(x.view()).unwrap(), x);
    }

    #[test]
    fn six_groups_match_block_diagonal_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let groups = [(3, 4), (5, 4), (2, 4), (3, 4), (5, 4), (2, 4)];
        let layer = GroupedLinear::<f32>::random(&groups, Activation::Identity, &mut rng).unwrap();
        let x = uniform_matrix::<f32, _>(&mut rng, 4, 20, 1.0);
        let got = layer.forward(x.view()).unwrap();
        let expected = x.mapv(|v| v as f64).dot(&block_diagonal(&layer));
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
        assert_eq!(layer.num_parameters(), 20 * 4);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let layer = GroupedLinear::<f32>::from_weights(vec![Array2::eye(3)], Activation::Silu).unwrap();
        let x = Array2::<f32>::zeros((2, 4));
        assert!(matches!(layer.forward(x.view()), Err(SgpError::Shape(_))));
    }

    #[test]
    fn silu_values_and_slope() {
        assert_eq!(silu(0.0f64), 0.0);
        assert!((silu(1.0f64) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0f64] {
            let fd = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
            assert!((silu_grad(x) - fd).abs() < 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn grouped_equals_dense(seed in 0u64..10_000, groups in 1usize..7, batch in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shapes: Vec<(usize, usize)> = (0..groups).map(|_| (rng.random_range(1..6), rng.random_range(1..5))).collect();
            let layer = GroupedLinear::<f32>::random(&shapes, Activation::Identity, &mut rng).unwrap();
            let x = uniform_matrix::<f32, _>(&mut rng, batch, layer.input_width(), 2.0);
            let got = layer.forward(x.view()).unwrap();
            let expected = x.mapv(|v| v as f64).dot(&block_diagonal(&layer));
            for (a, b) in got.iter().zip(expected.iter()) {
                prop_assert!((*a as f64 - b).abs() < 1e-6);
            }
        }
    }
}
