//! Dense row-major tensors and the handful of kernels the model needs.
//!
//! The public [`Tensor`] type carries a shape and checks it; the hot paths in
//! the composition network and the LSTM work directly on slices through the
//! kernel functions at the bottom of this module.

use crate::error::{Error, Result};

/// Inputs to `exp` (and therefore sigmoid) are clamped to this range.
pub const EXP_CLAMP: f64 = 50.0;

/// Largest double strictly below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {shape:?} has a zero extent"
            )));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Dimension {
                context: "tensor data length vs shape",
                left: vec![data.len()],
                right: shape.to_vec(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("tensor contains non-finite values".into()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(&[rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count for a matrix, length for a vector.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

/// `W·x + b`.
pub fn affine(w: &Tensor, x: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    if w.shape.len() != 2 || x.shape.len() != 1 || w.shape[1] != x.shape[0] {
        return Err(Error::Dimension {
            context: "affine W·x",
            left: w.shape.clone(),
            right: x.shape.clone(),
        });
    }
    let mut out = vec![0.0; w.shape[0]];
    if let Some(b) = b {
        if b.shape != [w.shape[0]] {
            return Err(Error::Dimension {
                context: "affine bias",
                left: w.shape.clone(),
                right: b.shape.clone(),
            });
        }
        out.copy_from_slice(&b.data);
    }
    matvec_acc(&w.data, w.shape[1], &x.data, &mut out);
    Ok(Tensor::vector(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Exp,
}

impl Activation {
    pub fn scalar(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Exp => clamped_exp(x),
        }
    }
}

pub fn elementwise(f: Activation, x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| f.scalar(v)).collect(),
    }
}

pub fn clamped_exp(x: f64) -> f64 {
    x.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
}

/// Logistic function on the clamped input, kept inside the open interval (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-EXP_CLAMP, EXP_CLAMP);
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.min(ONE_MINUS_ULP)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += W·x` with `W` row-major `out.len() × cols`.
pub fn matvec_acc(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(w.len(), cols * out.len());
    for (row, o) in w.chunks_exact(cols).zip(out.iter_mut()) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ·g`.
pub fn matvec_t_acc(w: &[f64], cols: usize, g: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), cols);
    debug_assert_eq!(w.len(), cols * g.len());
    for (row, &gi) in w.chunks_exact(cols).zip(g) {
        if gi == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += gi * wij;
        }
    }
}

/// `dW += g ⊗ x`.
pub fn outer_acc(dw: &mut [f64], g: &[f64], x: &[f64]) {
    debug_assert_eq!(dw.len(), g.len() * x.len());
    for (row, &gi) in dw.chunks_exact_mut(x.len()).zip(g) {
        if gi == 0.0 {
            continue;
        }
        for (d, &xj) in row.iter_mut().zip(x) {
            *d += gi * xj;
        }
    }
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_without_bias() {
        let x = Tensor::vector(vec![3.0, 4.0]);
        let y = affine(&Tensor::identity(2), &x, None).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_zero_matrix_returns_bias() {
        let x = Tensor::vector(vec![3.0, 4.0]);
        let b = Tensor::vector(vec![1.0, 1.0]);
        let y = affine(&Tensor::zeros(&[2, 2]), &x, Some(&b)).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0]);
    }

    #[test]
    fn affine_hand_evaluated() {
        let w = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = Tensor::vector(vec![1.0, 1.0]);
        let b = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(affine(&w, &x, Some(&b)).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn affine_shape_mismatch_names_both_shapes() {
        let w = Tensor::zeros(&[2, 3]);
        let x = Tensor::vector(vec![1.0, 1.0]);
        let err = affine(&w, &x, None).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2]"), "{err}");
    }

    #[test]
    fn activations_at_known_points() {
        let z = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(elementwise(Activation::Sigmoid, &z).data(), &[0.5, 0.5]);
        assert_eq!(elementwise(Activation::Tanh, &Tensor::vector(vec![0.0])).data(), &[0.0]);
        let s = elementwise(Activation::Sigmoid, &Tensor::vector(vec![3f64.ln()]));
        assert!((s.data()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn exp_is_clamped() {
        assert_eq!(clamped_exp(1e6), 50f64.exp());
        assert_eq!(clamped_exp(-1e6), (-50f64).exp());
        assert!(clamped_exp(1e6).is_finite());
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::from_vec(&[2], vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn transpose_kernels_agree_with_explicit_transpose() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let g = [1.0, -1.0];
        let mut out = [0.0; 3];
        matvec_t_acc(&w, 3, &g, &mut out);
        assert_eq!(out, [-3.0, -3.0, -3.0]);
        let mut dw = [0.0; 6];
        outer_acc(&mut dw, &g, &[1.0, 2.0, 3.0]);
        assert_eq!(dw, [1.0, 2.0, 3.0, -1.0, -2.0, -3.0]);
    }

    proptest::proptest! {
        #[test]
        fn sigmoid_strictly_inside_unit_interval(x in -1e3f64..1e3) {
            let s = sigmoid(x);
            proptest::prop_assert!(s > 0.0 && s < 1.0);
        }
    }
}
