use std::fmt;
use std::str::FromStr;

use crate::autodiff::Var;
use crate::error::Error;

/// Scale of the positive branch of SELU.
pub const SELU_LAMBDA: f64 = 1.0507;
/// Saturation constant of the negative branch of SELU.
pub const SELU_ALPHA: f64 = 1.67326;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Selu,
    Gelu,
    Elu { alpha: f64 },
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Gelu,
        Activation::Relu,
        Activation::Elu { alpha: 1.0 },
        Activation::Selu,
    ];

    pub fn elu() -> Self {
        Activation::Elu { alpha: 1.0 }
    }

    pub fn apply<'g>(&self, x: Var<'g>) -> Var<'g> {
        match *self {
            Activation::Relu => x.relu(),
            Activation::Selu => x.selu(),
            Activation::Gelu => x.gelu(),
            Activation::Elu { alpha } => x.elu(alpha),
        }
    }

    /// Scalar evaluation, identical to [`Activation::apply`] elementwise.
    pub fn eval(&self, x: f64) -> f64 {
        use crate::autodiff::Graph;
        let g = Graph::new();
        let v = g.constant(vec![1], vec![x]).expect("scalar");
        self.apply(v).item()
    }

    /// Short label used in reports: GeLU, ReLU, ELU, SeLU.
    pub fn label(&self) -> &'static str {
        match self {
            Activation::Relu => "ReLU",
            Activation::Selu => "SeLU",
            Activation::Gelu => "GeLU",
            Activation::Elu { .. } => "ELU",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::Selu => f.write_str("selu"),
            Activation::Gelu => f.write_str("gelu"),
            Activation::Elu { .. } => f.write_str("elu"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "selu" => Ok(Activation::Selu),
            "gelu" => Ok(Activation::Gelu),
            "elu" => Ok(Activation::elu()),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        assert_eq!(Activation::Relu.eval(-1.0), 0.0);
        assert_eq!(Activation::Relu.eval(2.0), 2.0);
        assert!((Activation::Selu.eval(1.0) - 1.0507).abs() < 1e-15);
        for a in Activation::ALL {
            assert_eq!(a.eval(0.0), 0.0, "{a}");
        }
    }

    #[test]
    fn negative_branches() {
        let x: f64 = -0.7;
        assert!((Activation::elu().eval(x) - x.exp_m1()).abs() < 1e-15);
        assert!((Activation::Elu { alpha: 2.0 }.eval(x) - 2.0 * x.exp_m1()).abs() < 1e-15);
        assert!((Activation::Selu.eval(x) - SELU_LAMBDA * SELU_ALPHA * x.exp_m1()).abs() < 1e-15);
    }

    #[test]
    fn parse_round_trip() {
        for a in Activation::ALL {
            assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
        }
        assert!("tanh".parse::<Activation>().is_err());
    }
}
