use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::FeatureSequence;
use crate::error::{invalid, Result};
use crate::math::{self, Matrix};
use crate::rng::Rng;

/// `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return invalid(format!(
                "bias length {} does not match {} outputs",
                bias.len(),
                weight.rows()
            ));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return invalid("non-finite bias");
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weight: Matrix::identity(n),
            bias: vec![0.0; n],
        }
    }

    /// Weights uniform in `±1/√fan_in`, zero bias.
    pub fn uniform(outputs: usize, inputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / libm::sqrt(inputs as f64);
        let mut a = Self::zeros(outputs, inputs);
        for w in a.weight.as_mut_slice() {
            *w = rng.uniform(-bound, bound);
        }
        a
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        math::axpy(1.0, &self.bias, &mut y);
        y
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

/// How encoder weights start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EncoderInit {
    /// Uniform in `±1/√fan_in`, zero bias.
    #[default]
    Uniform,
    /// Identity maps; requires every encoder layer to be square.
    Identity,
}

/// Per-modality encoder: an affine map, optionally preceded by one rectified
/// hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub hidden: Option<Affine>,
    pub output: Affine,
}

impl Encoder {
    pub fn new(hidden: Option<Affine>, output: Affine) -> Result<Self> {
        if let Some(h) = &hidden {
            if h.outputs() != output.inputs() {
                return invalid("hidden width does not feed the output layer");
            }
        }
        Ok(Self { hidden, output })
    }

    pub fn identity(width: usize) -> Self {
        Self {
            hidden: None,
            output: Affine::identity(width),
        }
    }

    pub fn init(input: usize, hidden: Option<usize>, output: usize, init: EncoderInit, rng: &mut Rng) -> Result<Self> {
        match init {
            EncoderInit::Uniform => {
                let h = hidden.map(|h| Affine::uniform(h, input, rng));
                let fan_in = hidden.unwrap_or(input);
                Self::new(h, Affine::uniform(output, fan_in, rng))
            }
            EncoderInit::Identity => {
                let h = hidden.unwrap_or(input);
                if input != h || h != output {
                    return invalid(format!(
                        "identity encoder init needs equal widths, got {input} -> {h} -> {output}"
                    ));
                }
                Self::new(hidden.map(Affine::identity), Affine::identity(output))
            }
        }
    }

    pub fn input_width(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.output).inputs()
    }

    pub fn output_width(&self) -> usize {
        self.output.outputs()
    }

    pub fn hidden_width(&self) -> Option<usize> {
        self.hidden.as_ref().map(Affine::outputs)
    }

    pub fn encode(&self, raw: &FeatureSequence) -> Result<FeatureSequence> {
        self.encode_traced(raw).map(|(z, _)| z)
    }

    /// Encodes and also returns the rectified hidden activations, if any.
    pub(crate) fn encode_traced(&self, raw: &FeatureSequence) -> Result<(FeatureSequence, Option<Matrix>)> {
        if raw.width() != self.input_width() {
            return invalid(format!(
                "{:?} input width {} does not match encoder width {}",
                raw.modality(),
                raw.width(),
                self.input_width()
            ));
        }
        let steps = raw.steps();
        let mut out = Matrix::zeros(steps, self.output_width());
        let mut hidden = self.hidden.as_ref().map(|h| Matrix::zeros(steps, h.outputs()));
        for t in 0..steps {
            let z = match (&self.hidden, hidden.as_mut()) {
                (Some(layer), Some(acts)) => {
                    let mut h = layer.apply(raw.row(t));
                    for v in &mut h {
                        *v = v.max(0.0);
                    }
                    acts.row_mut(t).copy_from_slice(&h);
                    self.output.apply(&h)
                }
                _ => self.output.apply(raw.row(t)),
            };
            out.row_mut(t).copy_from_slice(&z);
        }
        if !out.is_finite() {
            return Err(crate::Error::NumericFailure("encoder produced non-finite values".into()));
        }
        Ok((FeatureSequence::new(raw.modality(), out)?, hidden))
    }

    pub fn is_finite(&self) -> bool {
        self.output.is_finite() && self.hidden.as_ref().is_none_or(Affine::is_finite)
    }
}
