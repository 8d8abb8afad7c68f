//! Layers shared by both policies: dense maps and an LSTM cell.

use rand::Rng;
use redp_autodiff::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};

use crate::error::{Error, Result};

pub(crate) fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// Affine map `x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(format!("{name}.w"), glorot(d_in, d_out, rng))?,
            b: store.add(format!("{name}.b"), Tensor::zeros(&[d_out]))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, p[self.w])?;
        Ok(tape.add(xw, p[self.b])?)
    }
}

/// LSTM weights with gates laid out as `[input, forget, candidate, output]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub units: usize,
}

/// Forget biases `ln u` with `u ~ U(1, t_max - 1)` and input biases `-b_f`.
pub fn chrono_biases<R: Rng + ?Sized>(units: usize, t_max: usize, rng: &mut R) -> Result<Vec<f64>> {
    if t_max < 2 {
        return Err(Error::InvalidConfig(format!("t_max must be >= 2, got {t_max}")));
    }
    let hi = (t_max - 1) as f64;
    let mut b = vec![0.0; 4 * units];
    for j in 0..units {
        let u = if hi > 1.0 { rng.gen_range(1.0..=hi) } else { 1.0 };
        b[units + j] = u.ln();
        b[j] = -b[units + j];
    }
    Ok(b)
}

pub(crate) enum LstmBias {
    Chrono { t_max: usize },
    Forget(f64),
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        units: usize,
        bias: LstmBias,
        rng: &mut R,
    ) -> Result<Self> {
        let w_x = store.add(format!("{name}.w_x"), glorot(d_in, 4 * units, rng))?;
        let w_h = store.add(format!("{name}.w_h"), glorot(units, 4 * units, rng))?;
        let b = match bias {
            LstmBias::Chrono { t_max } => chrono_biases(units, t_max, rng)?,
            LstmBias::Forget(v) => {
                let mut b = vec![0.0; 4 * units];
                b[units..2 * units].iter_mut().for_each(|x| *x = v);
                b
            }
        };
        let b = store.add(format!("{name}.b"), Tensor::vector(b))?;
        Ok(Self { w_x, w_h, b, units })
    }

    /// One step from pre-activations `gx = x W_x + b` of the input.
    pub fn step(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        gx: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let n = self.units;
        let gh = tape.matmul(h, p[self.w_h])?;
        let g = tape.add(gx, gh)?;
        let i = tape.slice(g, 0, n)?;
        let f = tape.slice(g, n, 2 * n)?;
        let cand = tape.slice(g, 2 * n, 3 * n)?;
        let o = tape.slice(g, 3 * n, 4 * n)?;
        let (i, f, cand, o) = (
            tape.sigmoid(i),
            tape.sigmoid(f),
            tape.tanh(cand),
            tape.sigmoid(o),
        );
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, cand)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok((h, c))
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
