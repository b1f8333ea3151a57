//! Channel-independent time-domain predictors mapping `L` steps to `H` steps.

use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, NodeId, ParamId, ParamSet, RealArray};

/// Moving-average kernel of the trend/residual decomposition.
pub const TREND_KERNEL: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// `W₂·ReLU(W₁x + b₁) + b₂`.
    TimeembHead,
    PlainLinear,
    PlainMlp,
    TrendResidualLinear,
}

impl BackboneKind {
    pub fn parse(token: &str) -> Option<Self> {
        Some(match token {
            "timeemb_head" => Self::TimeembHead,
            "plain_linear" => Self::PlainLinear,
            "plain_mlp" => Self::PlainMlp,
            "trend_residual_linear" => Self::TrendResidualLinear,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::TimeembHead => "timeemb_head",
            Self::PlainLinear => "plain_linear",
            Self::PlainMlp => "plain_mlp",
            Self::TrendResidualLinear => "trend_residual_linear",
        }
    }

    pub fn parameter_count(&self, lookback: usize, horizon: usize, hidden: usize) -> usize {
        match self {
            Self::TimeembHead | Self::PlainMlp => hidden * lookback + hidden + horizon * hidden + horizon,
            Self::PlainLinear => horizon * lookback + horizon,
            Self::TrendResidualLinear => 2 * (horizon * lookback + horizon),
        }
    }
}

/// Parameter handles of an instantiated backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Backbone {
    Mlp {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
    },
    Linear {
        w: ParamId,
        b: ParamId,
    },
    TrendResidual {
        trend_w: ParamId,
        trend_b: ParamId,
        residual_w: ParamId,
        residual_b: ParamId,
    },
}

fn uniform_linear(
    params: &mut ParamSet,
    rng: &mut impl Rng,
    prefix: &str,
    out: usize,
    fan_in: usize,
) -> Result<(ParamId, ParamId)> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let w: Vec<f64> = (0..out * fan_in).map(|_| rng.sample(dist)).collect();
    let b: Vec<f64> = (0..out).map(|_| rng.sample(dist)).collect();
    let w = params.add(format!("{prefix}.w"), RealArray::from_vec(&[out, fan_in], w)?)?;
    let b = params.add(format!("{prefix}.b"), RealArray::from_vec(&[out], b)?)?;
    Ok((w, b))
}

impl Backbone {
    /// Registers the backbone's weights, drawn from `U(±1/√fan_in)`.
    pub fn init(
        kind: BackboneKind,
        params: &mut ParamSet,
        rng: &mut impl Rng,
        lookback: usize,
        horizon: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(match kind {
            BackboneKind::TimeembHead | BackboneKind::PlainMlp => {
                if hidden == 0 {
                    return Err(Error::config("model.hidden", "must be at least 1"));
                }
                let (w1, b1) = uniform_linear(params, rng, "head.layer1", hidden, lookback)?;
                let (w2, b2) = uniform_linear(params, rng, "head.layer2", horizon, hidden)?;
                Self::Mlp { w1, b1, w2, b2 }
            }
            BackboneKind::PlainLinear => {
                let (w, b) = uniform_linear(params, rng, "linear", horizon, lookback)?;
                Self::Linear { w, b }
            }
            BackboneKind::TrendResidualLinear => {
                let (trend_w, trend_b) = uniform_linear(params, rng, "trend", horizon, lookback)?;
                let (residual_w, residual_b) = uniform_linear(params, rng, "residual", horizon, lookback)?;
                Self::TrendResidual {
                    trend_w,
                    trend_b,
                    residual_w,
                    residual_b,
                }
            }
        })
    }

    /// Maps `(rows) × L` to `(rows) × H` with weights shared across rows.
    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        match *self {
            Self::Mlp { w1, b1, w2, b2 } => {
                let (w1, b1, w2, b2) = (g.param(w1), g.param(b1), g.param(w2), g.param(b2));
                let h = g.affine(x, w1, Some(b1))?;
                let h = g.relu(h)?;
                g.affine(h, w2, Some(b2))
            }
            Self::Linear { w, b } => {
                let (w, b) = (g.param(w), g.param(b));
                g.affine(x, w, Some(b))
            }
            Self::TrendResidual {
                trend_w,
                trend_b,
                residual_w,
                residual_b,
            } => {
                let len = g.value(x).row_len();
                let avg = g.input(moving_average_matrix(len, TREND_KERNEL))?;
                let trend = g.affine(x, avg, None)?;
                let residual = g.sub(x, trend)?;
                let (tw, tb) = (g.param(trend_w), g.param(trend_b));
                let (rw, rb) = (g.param(residual_w), g.param(residual_b));
                let t = g.affine(trend, tw, Some(tb))?;
                let r = g.affine(residual, rw, Some(rb))?;
                g.add(t, r)
            }
        }
    }
}

/// `L × L` operator of a centred moving average with edge replication.
pub fn moving_average_matrix(len: usize, kernel: usize) -> RealArray {
    let half = (kernel.saturating_sub(1) / 2) as isize;
    let mut a = RealArray::zeros(&[len, len]);
    let w = 1.0 / (2 * half + 1) as f64;
    for t in 0..len as isize {
        for j in -half..=half {
            let s = (t + j).clamp(0, len as isize - 1) as usize;
            let prev = a.at2(t as usize, s);
            a.set2(t as usize, s, prev + w);
        }
    }
    a
}

/// `W₂·ReLU(W₁x + b₁) + b₂` on one series, outside any graph.
pub fn head_forward(x: &[f64], w1: &RealArray, b1: &[f64], w2: &RealArray, b2: &[f64]) -> Result<Vec<f64>> {
    let (&[d, l], &[h, d2]) = (w1.shape(), w2.shape()) else {
        return Err(Error::dim("head weights must be matrices"));
    };
    if l != x.len() || d2 != d || b1.len() != d || b2.len() != h {
        return Err(Error::dim(format!(
            "head shapes W₁ {d}×{l}, W₂ {h}×{d2}, b₁ {}, b₂ {} do not fit an input of {}",
            b1.len(),
            b2.len(),
            x.len()
        )));
    }
    let hidden: Vec<f64> = (0..d)
        .map(|i| {
            let z = b1[i] + (0..l).map(|j| w1.at2(i, j) * x[j]).sum::<f64>();
            z.max(0.0)
        })
        .collect();
    Ok((0..h)
        .map(|o| b2[o] + (0..d).map(|i| w2.at2(o, i) * hidden[i]).sum::<f64>())
        .collect())
}
