use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{BoundParams, ParamStore};
use crate::tape::{Tape, Var};

/// Symmetric finite-difference stencil.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h^2).
    #[default]
    ThreePoint,
    /// Richardson extrapolation of two three-point differences, error O(h^4).
    FivePoint,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    pub stencil: Stencil,
    /// Coordinates sampled per parameter; all of them when the tensor is
    /// smaller.
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            stencil: Stencil::ThreePoint,
            coords_per_param: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// Compares reverse-mode gradients with central differences of the loss
/// value. The relative error of one coordinate is
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(store: &ParamStore, loss_fn: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = tape.bind(s);
        let l = loss_fn(&mut tape, &vars)?;
        Ok(tape.value(l).item())
    };

    let mut tape = Tape::new();
    let vars = tape.bind(store);
    let loss = loss_fn(&mut tape, &vars)?;
    let analytic = tape.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
    };
    for (id, p) in store.iter() {
        if !p.trainable {
            continue;
        }
        let n = p.tensor.len();
        let coords: Vec<usize> = if n <= cfg.coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, cfg.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = p.tensor.data()[i];
            let mut at = |x: f64| -> Result<f64> {
                probe.tensor_mut(id).data_mut()[i] = x;
                eval(&probe)
            };
            let h = cfg.eps;
            let d1 = (at(orig + h)? - at(orig - h)?) / (2.0 * h);
            let numeric = match cfg.stencil {
                Stencil::ThreePoint => d1,
                Stencil::FivePoint => {
                    let d2 = (at(orig + 2.0 * h)? - at(orig - 2.0 * h)?) / (4.0 * h);
                    (4.0 * d1 - d2) / 3.0
                }
            };
            probe.tensor_mut(id).data_mut()[i] = orig;

            let a = analytic.get(id).data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = p.name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn cubic_error(stencil: Stencil) -> f64 {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.3, -1.2, 2.0])).unwrap();
        let report = grad_check(
            &store,
            |tape, p| {
                let sq = tape.mul(p[w], p[w])?;
                let cube = tape.mul(sq, p[w])?;
                tape.reduce_sum(cube, None)
            },
            GradCheckConfig {
                eps: 1e-2,
                stencil,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(report.coords_checked, 3);
        report.max_rel_error
    }

    #[test]
    fn five_point_stencil_is_exact_on_cubics() {
        assert!(cubic_error(Stencil::ThreePoint) > 1e-6);
        assert!(cubic_error(Stencil::FivePoint) < 1e-12);
    }
}
