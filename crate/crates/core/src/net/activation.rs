use serde::{Deserialize, Serialize};

/// Element-wise nonlinearity applied to each neuron's scalar pre-activation.
///
/// Both kinds have output, first and second derivative bounded by 1 in
/// absolute value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn eval(self, s: f64) -> f64 {
        match self {
            Activation::Tanh => s.tanh(),
            Activation::Sigmoid => sigmoid(s),
        }
    }

    #[inline]
    pub fn deriv(self, s: f64) -> f64 {
        self.eval_with_deriv(s).1
    }

    /// Value and first derivative in one evaluation.
    #[inline]
    pub fn eval_with_deriv(self, s: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let t = s.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Sigmoid => {
                let p = sigmoid(s);
                (p, p * (1.0 - p))
            }
        }
    }

    pub fn second_deriv(self, s: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = s.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Sigmoid => {
                let p = sigmoid(s);
                p * (1.0 - p) * (1.0 - 2.0 * p)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}
