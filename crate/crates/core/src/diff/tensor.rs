use crate::error::{Error, Result};
use crate::group::Representation;

/// Dense row-major array of `f64`, optionally tagged with the representation
/// acting on its last (channel) axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub rep_tag: Option<Representation>,
}

impl FieldTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            rep_tag: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
            rep_tag: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            values: vec![v],
            rep_tag: None,
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
            rep_tag: None,
        }
    }

    pub fn with_rep(mut self, rep: Representation) -> Self {
        self.rep_tag = Some(rep);
        self
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn item(&self) -> f64 {
        self.values[0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
