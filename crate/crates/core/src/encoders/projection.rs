use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::rng;
use crate::SHARED_DIM;

/// Two-layer MLP into the shared embedding space: `tanh(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    hidden: Array2<f64>,
}

impl ProjectionHead {
    /// Randomly initialised head `input -> hidden -> 256`.
    pub fn new(input: usize, hidden: usize, seed: u64, stream: &str) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("projection widths must be positive".into()));
        }
        let mut r = rng::substream(seed, stream, &[]);
        let mut init = |rows: usize, cols: usize| {
            let scale = 1.0 / (rows as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| {
                let z: f64 = StandardNormal.sample(&mut r);
                z * scale
            })
        };
        let w1 = init(input, hidden);
        let w2 = init(hidden, SHARED_DIM);
        Ok(ProjectionHead {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(SHARED_DIM),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ProjectionHead {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.w2.ncols()
    }

    /// Pre-activation of the first layer.
    pub fn first_layer(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w1) + &self.b1
    }

    /// Project a batch of row vectors.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, HeadCache)> {
        if x.ncols() != self.input_width() {
            return Err(Error::InvalidArgument(format!(
                "projection expects width {}, got {}",
                self.input_width(),
                x.ncols()
            )));
        }
        let hidden = self.first_layer(x).mapv(f64::tanh);
        let out = hidden.dot(&self.w2) + &self.b2;
        Ok((out, HeadCache { hidden }))
    }

    /// Accumulate parameter gradients; returns `dL/dx` when `input_grad` is set.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        cache: &HeadCache,
        d_out: &Array2<f64>,
        grads: &mut ProjectionHead,
        input_grad: bool,
    ) -> Option<Array2<f64>> {
        grads.w2 += &cache.hidden.t().dot(d_out);
        grads.b2 += &d_out.sum_axis(Axis(0));
        let d_hidden = d_out.dot(&self.w2.t()) * cache.hidden.mapv(|h| 1.0 - h * h);
        grads.w1 += &x.t().dot(&d_hidden);
        grads.b1 += &d_hidden.sum_axis(Axis(0));
        input_grad.then(|| d_hidden.dot(&self.w1.t()))
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
        ]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }

    fn array_table(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let (i, h, o) = (self.input_width(), self.hidden_width(), self.output_width());
        vec![
            (format!("{prefix}.w1"), vec![i, h]),
            (format!("{prefix}.b1"), vec![h]),
            (format!("{prefix}.w2"), vec![h, o]),
            (format!("{prefix}.b2"), vec![o]),
        ]
    }

    pub fn write_arrays(&self, prefix: &str, archive: &mut Archive) {
        for ((name, shape), data) in self.array_table(prefix).into_iter().zip(self.param_slices()) {
            archive.push(name, shape, data);
        }
    }

    pub fn read_arrays(input: usize, hidden: usize, prefix: &str, archive: &mut Archive) -> Result<Self> {
        let mut head = ProjectionHead {
            w1: Array2::zeros((input, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, SHARED_DIM)),
            b2: Array1::zeros(SHARED_DIM),
        };
        let table = head.array_table(prefix);
        for ((name, shape), slot) in table.iter().zip(head.param_slices_mut()) {
            slot.copy_from_slice(&archive.take(name, shape)?);
        }
        Ok(head)
    }
}

/// Project a single vector into the shared space.
pub fn project(vector: &[f64], head: &ProjectionHead) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, vector.len()), vector).expect("row view");
    let (out, _) = head.forward(x)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection output".into()));
    }
    Ok(out.into_raw_vec_and_offset().0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::Rng;

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let head = ProjectionHead::new(12, 16, 1, "t").unwrap();
        let y = project(&[0.0; 12], &head).unwrap();
        assert_eq!(y.len(), SHARED_DIM);
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_first_layer_passes_input() {
        let mut head = ProjectionHead::new(6, 6, 1, "t").unwrap();
        head.w1 = Array2::eye(6);
        let x = Array::from_shape_vec((1, 6), vec![0.1, -0.2, 0.3, 0.0, 1.5, -2.0]).unwrap();
        assert_eq!(head.first_layer(x.view()), x);
    }

    #[test]
    fn width_mismatch() {
        let head = ProjectionHead::new(6, 4, 1, "t").unwrap();
        assert!(project(&[1.0; 5], &head).is_err());
    }

    #[test]
    fn jvp_matches_central_differences() {
        let mut r = rng::substream(5, "jvp", &[]);
        let head = ProjectionHead::new(10, 7, 3, "t").unwrap();
        let x: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let dir_x: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut dir_p = head.zeros_like();
        for s in dir_p.param_slices_mut() {
            s.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
        }
        let w: Vec<f64> = (0..SHARED_DIM).map(|_| r.random_range(-1.0..1.0)).collect();
        // scalar objective f = w . project(x)
        let f = |x: &[f64], h: &ProjectionHead| project(x, h).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();

        let xv = ArrayView2::from_shape((1, 10), &x).unwrap();
        let (_, cache) = head.forward(xv).unwrap();
        let d_out = Array2::from_shape_vec((1, SHARED_DIM), w.clone()).unwrap();
        let mut g = head.zeros_like();
        let dx = head.backward(xv, &cache, &d_out, &mut g, true).unwrap();
        let analytic: f64 = dx.iter().zip(&dir_x).map(|(a, b)| a * b).sum::<f64>()
            + g.param_slices()
                .iter()
                .zip(dir_p.param_slices())
                .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>())
                .sum::<f64>();

        let eps = 1e-5;
        let shifted = |sign: f64| {
            let xs: Vec<f64> = x.iter().zip(&dir_x).map(|(a, d)| a + sign * eps * d).collect();
            let mut hs = head.clone();
            for (p, d) in hs.param_slices_mut().into_iter().zip(dir_p.param_slices()) {
                p.iter_mut().zip(d).for_each(|(v, dv)| *v += sign * eps * dv);
            }
            f(&xs, &hs)
        };
        let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        assert!(rel <= 1e-4, "rel err {rel}: {analytic} vs {numeric}");
    }
}
