use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::scalar::Scalar;

/// Square convolution, stride 1, zero same-padding. Weights are stored as
/// `[tap][in][out]` with taps in raster order over the kernel window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv<T> {
    pub kernel: usize,
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv<T> {
    pub fn zeros(kernel: usize, cin: usize, cout: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Self { kernel, cin, cout, weight: vec![T::zero(); kernel * kernel * cin * cout], bias: vec![T::zero(); cout] }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(kernel: usize, cin: usize, cout: usize, seed: u64) -> Self {
        let mut c = Self::zeros(kernel, cin, cout);
        let taps = (kernel * kernel) as f64;
        let a = (6.0 / (taps * cin as f64 + taps * cout as f64)).sqrt();
        let mut r = rng::seeded(seed);
        for w in c.weight.iter_mut() {
            *w = T::lit(r.random_range(-a..a));
        }
        c
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Valid `(tap, dy, dx)` triples; `dy`, `dx` are input offsets.
    fn taps(&self) -> impl Iterator<Item = (usize, isize, isize)> + '_ {
        let k = self.kernel as isize;
        let r = k / 2;
        (0..k * k).map(move |t| (t as usize, t / k - r, t % k - r))
    }

    pub fn forward(&self, input: &[T], h: usize, w: usize) -> Vec<T> {
        debug_assert_eq!(input.len(), h * w * self.cin);
        let (cin, cout) = (self.cin, self.cout);
        let mut out = Vec::with_capacity(h * w * cout);
        for _ in 0..h * w {
            out.extend_from_slice(&self.bias);
        }
        for y in 0..h {
            for x in 0..w {
                let o = &mut out[(y * w + x) * cout..(y * w + x + 1) * cout];
                for (tap, dy, dx) in self.taps() {
                    let (iy, ix) = (y as isize + dy, x as isize + dx);
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        continue;
                    }
                    let ip = (iy as usize * w + ix as usize) * cin;
                    let inp = &input[ip..ip + cin];
                    let wt = &self.weight[tap * cin * cout..(tap + 1) * cin * cout];
                    for (ic, &v) in inp.iter().enumerate() {
                        let row = &wt[ic * cout..(ic + 1) * cout];
                        for (acc, &wv) in o.iter_mut().zip(row) {
                            *acc += v * wv;
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input when `input_grad` is set.
    pub fn backward(&self, input: &[T], grad_out: &[T], h: usize, w: usize, grad: &mut Conv<T>, input_grad: bool) -> Option<Vec<T>> {
        let (cin, cout) = (self.cin, self.cout);
        let mut gin = input_grad.then(|| vec![T::zero(); h * w * cin]);
        for y in 0..h {
            for x in 0..w {
                let g = &grad_out[(y * w + x) * cout..(y * w + x + 1) * cout];
                for (b, &gv) in grad.bias.iter_mut().zip(g) {
                    *b += gv;
                }
                for (tap, dy, dx) in self.taps() {
                    let (iy, ix) = (y as isize + dy, x as isize + dx);
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        continue;
                    }
                    let ip = (iy as usize * w + ix as usize) * cin;
                    let span = tap * cin * cout..(tap + 1) * cin * cout;
                    let gw = &mut grad.weight[span.clone()];
                    for (ic, &v) in input[ip..ip + cin].iter().enumerate() {
                        for (acc, &gv) in gw[ic * cout..(ic + 1) * cout].iter_mut().zip(g) {
                            *acc += v * gv;
                        }
                    }
                    if let Some(gin) = gin.as_mut() {
                        let wt = &self.weight[span];
                        for ic in 0..cin {
                            let row = &wt[ic * cout..(ic + 1) * cout];
                            let mut s = T::zero();
                            for (&wv, &gv) in row.iter().zip(g) {
                                s += wv * gv;
                            }
                            gin[ip + ic] += s;
                        }
                    }
                }
            }
        }
        gin
    }
}
