//! Model configuration and the learned parameter set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComposeKind {
    Mlp,
    TreeLstm,
}

/// Nonlinearity between the two affine layers of the MLP composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MlpActivation {
    Tanh,
    /// No activation: the two layers collapse to one affine map.
    Linear,
}

/// How the output gate combines with `tanh(c)` in the leaf transform and TreeLSTM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateOutput {
    /// `h = o + tanh(c)`
    Additive,
    /// `h = o ⊙ tanh(c)`
    Multiplicative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub compose: ComposeKind,
    /// MLP only: feed `[hi; hj; hi⊙hj; hi−hj]` instead of `[hi; hj]`.
    pub kernel: bool,
    /// Width between the two MLP layers; `None` means `hidden_dim`.
    pub mlp_hidden: Option<usize>,
    pub mlp_activation: MlpActivation,
    pub gate_output: GateOutput,
    /// Outside composition and score matrix alias the inside ones.
    pub share: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 64,
            hidden_dim: 400,
            compose: ComposeKind::Mlp,
            kernel: false,
            mlp_hidden: None,
            mlp_activation: MlpActivation::Tanh,
            gate_output: GateOutput::Additive,
            share: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.mlp_hidden == Some(0) {
            return Err(Error::Invalid("model dimensions must be positive".into()));
        }
        if self.kernel && self.compose != ComposeKind::Mlp {
            return Err(Error::Invalid("the kernel input is only defined for MLP composition".into()));
        }
        Ok(())
    }

    pub fn mlp_width(&self) -> usize {
        self.mlp_hidden.unwrap_or(self.hidden_dim)
    }
}

/// Parameter handles for one composition function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComposeIds {
    /// `h = W1 act(W0 ⟨hi, hj⟩ + b0) + b1`
    Mlp {
        w0: ParamId,
        b0: ParamId,
        w1: ParamId,
        b1: ParamId,
    },
    /// Gate matrix over `[hi; hj]` producing `[x; fi; fj; o; u]`.
    TreeLstm { u: ParamId, b: ParamId },
}

/// All learned tensors plus the handles that say what each one is.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub leaf_weight: ParamId,
    /// Separate leaf bias; `None` when the leaf transform reads the TreeLSTM gate bias.
    pub leaf_bias: Option<ParamId>,
    pub inside: ComposeIds,
    pub outside: ComposeIds,
    pub inside_score: ParamId,
    pub outside_score: ParamId,
    pub root_bias: ParamId,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: Real) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

fn fan_in(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    uniform(rng, &[rows, cols], 1.0 / (cols as Real).sqrt())
}

impl ModelParams {
    /// Seeded initialization: fan-in uniform matrices, zero biases,
    /// root outside bias uniform in ±0.01.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let mut store = ParamStore::new();

        let leaf_weight = store.add("leaf.weight", fan_in(&mut rng, 3 * d, config.input_dim));
        let leaf_bias = match config.compose {
            ComposeKind::Mlp => Some(store.add("leaf.bias", Tensor::zeros(&[3 * d]))),
            ComposeKind::TreeLstm => None,
        };

        let add_compose = |store: &mut ParamStore, rng: &mut ChaCha8Rng, side: &str| match config
            .compose
        {
            ComposeKind::Mlp => {
                let input = if config.kernel { 4 * d } else { 2 * d };
                let h = config.mlp_width();
                ComposeIds::Mlp {
                    w0: store.add(format!("{side}.w0"), fan_in(rng, h, input)),
                    b0: store.add(format!("{side}.b0"), Tensor::zeros(&[h])),
                    w1: store.add(format!("{side}.w1"), fan_in(rng, d, h)),
                    b1: store.add(format!("{side}.b1"), Tensor::zeros(&[d])),
                }
            }
            ComposeKind::TreeLstm => ComposeIds::TreeLstm {
                u: store.add(format!("{side}.u"), fan_in(rng, 5 * d, 2 * d)),
                b: store.add(format!("{side}.b"), Tensor::zeros(&[5 * d])),
            },
        };
        let inside = add_compose(&mut store, &mut rng, "inside");
        let inside_score = store.add("inside.score", fan_in(&mut rng, d, d));
        let (outside, outside_score) = if config.share {
            (inside, inside_score)
        } else {
            let o = add_compose(&mut store, &mut rng, "outside");
            (o, store.add("outside.score", fan_in(&mut rng, d, d)))
        };
        let root_bias = store.add("root.bias", uniform(&mut rng, &[d], 0.01));

        Ok(ModelParams {
            config: config.clone(),
            store,
            leaf_weight,
            leaf_bias,
            inside,
            outside,
            inside_score,
            outside_score,
            root_bias,
        })
    }

    /// Rebuilds handles for a store whose names follow [`ModelParams::init`].
    pub fn from_store(config: &ModelConfig, store: ParamStore) -> Result<Self> {
        let reference = ModelParams::init(config, 0)?;
        let mut ids = Vec::new();
        for (_, name, t) in reference.store.iter() {
            let id = store
                .id_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if store.get(id).shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    store.get(id).shape(),
                    t.shape()
                )));
            }
            ids.push(id);
        }
        if store.len() != reference.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                reference.store.len(),
                store.len()
            )));
        }
        let remap = |id: ParamId| ids[id.index()];
        let remap_compose = |c: ComposeIds| match c {
            ComposeIds::Mlp { w0, b0, w1, b1 } => ComposeIds::Mlp {
                w0: remap(w0),
                b0: remap(b0),
                w1: remap(w1),
                b1: remap(b1),
            },
            ComposeIds::TreeLstm { u, b } => ComposeIds::TreeLstm {
                u: remap(u),
                b: remap(b),
            },
        };
        Ok(ModelParams {
            config: config.clone(),
            leaf_weight: remap(reference.leaf_weight),
            leaf_bias: reference.leaf_bias.map(remap),
            inside: remap_compose(reference.inside),
            outside: remap_compose(reference.outside),
            inside_score: remap(reference.inside_score),
            outside_score: remap(reference.outside_score),
            root_bias: remap(reference.root_bias),
            store,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn compose_ids(&self, side: Side) -> ComposeIds {
        match side {
            Side::Inside => self.inside,
            Side::Outside => self.outside,
        }
    }

    pub fn score_id(&self, side: Side) -> ParamId {
        match side {
            Side::Inside => self.inside_score,
            Side::Outside => self.outside_score,
        }
    }
}

/// Which pass a composition belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Inside,
    Outside,
}

impl Side {
    /// TreeLSTM forget-gate offset ω.
    pub fn forget_bias(self) -> Real {
        match self {
            Side::Inside => 1.0,
            Side::Outside => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sharing_aliases_outside_to_inside() {
        let cfg = ModelConfig {
            share: true,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(&cfg, 1).unwrap();
        assert_eq!(p.inside, p.outside);
        assert_eq!(p.inside_score, p.outside_score);
        let q = ModelParams::init(&ModelConfig { share: false, ..cfg }, 1).unwrap();
        assert_ne!(q.inside, q.outside);
        assert!(q.store.len() > p.store.len());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::default();
        assert_eq!(ModelParams::init(&cfg, 5).unwrap(), ModelParams::init(&cfg, 5).unwrap());
        assert_ne!(ModelParams::init(&cfg, 5).unwrap(), ModelParams::init(&cfg, 6).unwrap());
    }

    #[test]
    fn kernel_requires_mlp() {
        let cfg = ModelConfig {
            compose: ComposeKind::TreeLstm,
            kernel: true,
            ..ModelConfig::default()
        };
        assert!(ModelParams::init(&cfg, 0).is_err());
    }

    #[test]
    fn from_store_round_trips_handles() {
        for compose in [ComposeKind::Mlp, ComposeKind::TreeLstm] {
            for share in [false, true] {
                let cfg = ModelConfig {
                    compose,
                    share,
                    ..ModelConfig::default()
                };
                let p = ModelParams::init(&cfg, 3).unwrap();
                let q = ModelParams::from_store(&cfg, p.store.clone()).unwrap();
                assert_eq!(p, q);
            }
        }
    }
}
