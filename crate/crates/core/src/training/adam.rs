use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// How weight decay enters the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayMode {
    /// L2 term added to the gradient before the moments.
    Coupled,
    /// `θ ← θ − lr·wd·θ` applied next to the Adam step.
    Decoupled,
}

impl DecayMode {
    pub fn name(self) -> &'static str {
        match self {
            DecayMode::Coupled => "coupled",
            DecayMode::Decoupled => "decoupled",
        }
    }
}

impl std::str::FromStr for DecayMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "coupled" => Ok(DecayMode::Coupled),
            "decoupled" => Ok(DecayMode::Decoupled),
            _ => Err(format!("unknown weight decay mode {s:?} (expected coupled or decoupled)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
            decay_mode: DecayMode::Decoupled,
        }
    }
}

/// First and second moments, one pair per parameter, plus the step count
/// used for bias correction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<E: Element> {
    pub t: u64,
    pub m: Vec<Tensor<E>>,
    pub v: Vec<Tensor<E>>,
}

impl<E: Element> AdamState<E> {
    /// Zero moments shaped like `params`.
    pub fn for_params<'a>(params: impl IntoIterator<Item = &'a Tensor<E>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self { t: 0, m, v }
    }

    fn check(&self, params: &[&mut Tensor<E>]) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::usage(format!(
                "optimizer holds moments for {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (k, p) in params.iter().enumerate() {
            if self.m[k].shape() != p.shape() || self.v[k].shape() != p.shape() {
                return Err(Error::dim(format!(
                    "moment {k} has shape {:?}, parameter has {:?}",
                    self.m[k].shape(),
                    p.shape()
                )));
            }
        }
        Ok(())
    }
}

/// One Adam update. Coupled decay adds `wd·θ` to the gradient before the
/// moments; decoupled decay shrinks `θ` by `lr·wd·θ` outside them.
/// Arithmetic is done in `f64` and rounded back to `E`.
pub fn adam_step<E: Element>(
    params: &mut [&mut Tensor<E>],
    grads: &[Option<&[E]>],
    state: &mut AdamState<E>,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.m.is_empty() && !params.is_empty() {
        *state = AdamState::for_params(params.iter().map(|p| &**p));
    }
    state.check(params)?;
    if grads.len() != params.len() {
        return Err(Error::usage(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        match g {
            None => return Err(Error::usage(format!("parameter {k} has no gradient"))),
            Some(g) if g.len() != p.len() => {
                return Err(Error::dim(format!(
                    "gradient {k} has {} elements, parameter has {}",
                    g.len(),
                    p.len()
                )))
            }
            Some(_) => {}
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (l2, shrink) = match cfg.decay_mode {
        DecayMode::Coupled => (cfg.weight_decay, 0.0),
        DecayMode::Decoupled => (0.0, cfg.learning_rate * cfg.weight_decay),
    };
    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].expect("checked above");
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (i, theta) in p.data_mut().iter_mut().enumerate() {
            let th = theta.as_f64();
            let ge = g[i].as_f64() + l2 * th;
            let mi = cfg.beta1 * m[i].as_f64() + (1.0 - cfg.beta1) * ge;
            let vi = cfg.beta2 * v[i].as_f64() + (1.0 - cfg.beta2) * ge * ge;
            m[i] = E::from_f64_lossy(mi);
            v[i] = E::from_f64_lossy(vi);
            let step = cfg.learning_rate * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            *theta = E::from_f64_lossy(th - shrink * th - step);
        }
    }
    Ok(())
}
