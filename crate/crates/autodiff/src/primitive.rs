//! Name-addressable primitive inventory, mostly for tooling and tests that
//! sweep every primitive. Model code calls the typed [`Tape`] methods.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AutodiffError, Result};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Concat { axis: usize },
    Tanh,
    Sigmoid,
    Relu,
    Softmax { axis: usize, mask: Option<Vec<bool>> },
    Log,
    Exp,
    Conv1d,
    /// Dropout with a mask drawn from a generator seeded by `seed`.
    Dropout { rate: f64, train: bool, seed: u64 },
    L2Normalize { axis: usize, eps: f64 },
    CosineSimilarity { eps: f64 },
    ReduceSum { axis: Option<usize> },
    ReduceMean { axis: Option<usize> },
    ReduceMax { axis: Option<usize> },
    Scale(f64),
}

impl Primitive {
    pub fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::Div
            | Primitive::Conv1d
            | Primitive::CosineSimilarity { .. } => Some(2),
            Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Concat { .. } => "concat",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Relu => "relu",
            Primitive::Softmax { .. } => "softmax",
            Primitive::Log => "log",
            Primitive::Exp => "exp",
            Primitive::Conv1d => "conv1d",
            Primitive::Dropout { .. } => "dropout",
            Primitive::L2Normalize { .. } => "l2_normalize",
            Primitive::CosineSimilarity { .. } => "cosine_similarity",
            Primitive::ReduceSum { .. } => "reduce_sum",
            Primitive::ReduceMean { .. } => "reduce_mean",
            Primitive::ReduceMax { .. } => "reduce_max",
            Primitive::Scale(_) => "scale",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses a primitive name with default arguments (axis 0, no mask,
/// dropout disabled, `eps = 1e-12`, full reductions, unit scale).
impl FromStr for Primitive {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "matmul" => Primitive::MatMul,
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "mul" => Primitive::Mul,
            "div" => Primitive::Div,
            "concat" => Primitive::Concat { axis: 0 },
            "tanh" => Primitive::Tanh,
            "sigmoid" => Primitive::Sigmoid,
            "relu" => Primitive::Relu,
            "softmax" => Primitive::Softmax { axis: 0, mask: None },
            "log" => Primitive::Log,
            "exp" => Primitive::Exp,
            "conv1d" => Primitive::Conv1d,
            "dropout" => Primitive::Dropout {
                rate: 0.0,
                train: false,
                seed: 0,
            },
            "l2_normalize" => Primitive::L2Normalize { axis: 0, eps: 1e-12 },
            "cosine_similarity" => Primitive::CosineSimilarity { eps: 1e-12 },
            "reduce_sum" => Primitive::ReduceSum { axis: None },
            "reduce_mean" => Primitive::ReduceMean { axis: None },
            "reduce_max" => Primitive::ReduceMax { axis: None },
            "scale" => Primitive::Scale(1.0),
            other => return Err(AutodiffError::UnknownPrimitive(other.to_string())),
        })
    }
}

impl Tape {
    /// Applies `op` to `inputs`, checking arity and shapes.
    pub fn apply(&mut self, op: &Primitive, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = op.arity() {
            if inputs.len() != n {
                return Err(AutodiffError::InvalidArgument {
                    op: op.name(),
                    msg: format!("expected {n} inputs, got {}", inputs.len()),
                });
            }
        }
        let x = inputs.first().copied().ok_or(AutodiffError::EmptyInput("apply"))?;
        match op {
            Primitive::MatMul => self.matmul(x, inputs[1]),
            Primitive::Add => self.add(x, inputs[1]),
            Primitive::Sub => self.sub(x, inputs[1]),
            Primitive::Mul => self.mul(x, inputs[1]),
            Primitive::Div => self.div(x, inputs[1]),
            Primitive::Concat { axis } => self.concat(inputs, *axis),
            Primitive::Tanh => Ok(self.tanh(x)),
            Primitive::Sigmoid => Ok(self.sigmoid(x)),
            Primitive::Relu => Ok(self.relu(x)),
            Primitive::Softmax { axis, mask } => self.softmax_masked(x, *axis, mask.as_deref()),
            Primitive::Log => Ok(self.log(x)),
            Primitive::Exp => Ok(self.exp(x)),
            Primitive::Conv1d => self.conv1d(x, inputs[1]),
            Primitive::Dropout { rate, train, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                self.dropout(x, *rate, *train, &mut rng)
            }
            Primitive::L2Normalize { axis, eps } => self.l2_normalize(x, *axis, *eps),
            Primitive::CosineSimilarity { eps } => self.cosine_similarity(x, inputs[1], *eps),
            Primitive::ReduceSum { axis } => self.reduce_sum(x, *axis),
            Primitive::ReduceMean { axis } => self.reduce_mean(x, *axis),
            Primitive::ReduceMax { axis } => self.reduce_max(x, *axis),
            Primitive::Scale(s) => self.scale(x, *s),
        }
    }
}
