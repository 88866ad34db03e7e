use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, TensorId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Nlmse,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Nlmse => "nlmse",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "nlmse" => Ok(LossKind::Nlmse),
            _ => Err(format!("unknown loss {s:?} (expected mse or nlmse)")),
        }
    }
}

/// `(1/n)·Σ(pred − target)²`.
pub fn mse_loss<E: Element>(g: &mut Graph<E>, pred: TensorId, target: TensorId) -> Result<TensorId> {
    let d = g.sub(pred, target)?;
    let sq = g.square(d)?;
    g.mean(sq)
}

/// `(1/n)·ln(Σ(pred − target)² + epsilon)`: the log is taken of the sum and
/// the `1/n` applied outside it.
pub fn nlmse_loss<E: Element>(
    g: &mut Graph<E>,
    pred: TensorId,
    target: TensorId,
    epsilon: f64,
) -> Result<TensorId> {
    if !(epsilon > 0.0) {
        return Err(Error::usage(format!("nlmse epsilon must be positive, got {epsilon}")));
    }
    let n = g.value(pred).len();
    let d = g.sub(pred, target)?;
    let sq = g.square(d)?;
    let total = g.sum(sq)?;
    let shifted = g.add_scalar(total, E::from_f64_lossy(epsilon))?;
    let log = g.log(shifted)?;
    g.mul_scalar(log, E::from_f64_lossy(1.0 / n as f64))
}

pub fn loss<E: Element>(
    g: &mut Graph<E>,
    kind: LossKind,
    pred: TensorId,
    target: TensorId,
    epsilon: f64,
) -> Result<TensorId> {
    match kind {
        LossKind::Mse => mse_loss(g, pred, target),
        LossKind::Nlmse => nlmse_loss(g, pred, target, epsilon),
    }
}
