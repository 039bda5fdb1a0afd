//! Learnable weights, generic over what is stored per slot: tensors for a
//! parameter set, [`Var`]s while a forward pass is being recorded.

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{HeadVariant, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;
use crate::tensor::{Checkpoint, GradTape, Tensor, Var};

/// Standard deviation of the truncated-normal initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<W> {
    pub ln1_gain: W,
    pub ln1_bias: W,
    pub w_q: W,
    pub w_k: W,
    pub w_v: W,
    /// Output projection applied to the concatenated heads.
    pub w_o: W,
    pub ln2_gain: W,
    pub ln2_bias: W,
    pub mlp_w1: W,
    pub mlp_b1: W,
    pub mlp_w2: W,
    pub mlp_b2: W,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeadWeights<W> {
    Linear {
        weight: W,
        bias: W,
    },
    TanhHidden {
        hidden_w: W,
        hidden_b: W,
        out_w: W,
        out_b: W,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Weights<W> {
    pub embed_weight: W,
    pub embed_bias: W,
    pub cls_token: W,
    pub pos_embed: W,
    pub layers: Vec<LayerWeights<W>>,
    pub head: HeadWeights<W>,
}

/// All learnable tensors of a model.
pub type ModelParams<T> = Weights<Tensor<T>>;
/// The same slots recorded on a tape.
pub type ParamVars = Weights<Var>;

/// How a slot is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

impl<W> LayerWeights<W> {
    fn slots(&self) -> [(&'static str, &W); 12] {
        [
            ("ln1.gain", &self.ln1_gain),
            ("ln1.bias", &self.ln1_bias),
            ("msa.w_q", &self.w_q),
            ("msa.w_k", &self.w_k),
            ("msa.w_v", &self.w_v),
            ("msa.w_o", &self.w_o),
            ("ln2.gain", &self.ln2_gain),
            ("ln2.bias", &self.ln2_bias),
            ("mlp.fc1.weight", &self.mlp_w1),
            ("mlp.fc1.bias", &self.mlp_b1),
            ("mlp.fc2.weight", &self.mlp_w2),
            ("mlp.fc2.bias", &self.mlp_b2),
        ]
    }

    fn map<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &W) -> U) -> LayerWeights<U> {
        let mut g = |name: &str, w: &W| f(&format!("{prefix}.{name}"), w);
        LayerWeights {
            ln1_gain: g("ln1.gain", &self.ln1_gain),
            ln1_bias: g("ln1.bias", &self.ln1_bias),
            w_q: g("msa.w_q", &self.w_q),
            w_k: g("msa.w_k", &self.w_k),
            w_v: g("msa.w_v", &self.w_v),
            w_o: g("msa.w_o", &self.w_o),
            ln2_gain: g("ln2.gain", &self.ln2_gain),
            ln2_bias: g("ln2.bias", &self.ln2_bias),
            mlp_w1: g("mlp.fc1.weight", &self.mlp_w1),
            mlp_b1: g("mlp.fc1.bias", &self.mlp_b1),
            mlp_w2: g("mlp.fc2.weight", &self.mlp_w2),
            mlp_b2: g("mlp.fc2.bias", &self.mlp_b2),
        }
    }
}

impl<W> Weights<W> {
    /// Every slot with its canonical checkpoint name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &W)> {
        let mut out = vec![
            ("embed.weight".to_owned(), &self.embed_weight),
            ("embed.bias".to_owned(), &self.embed_bias),
            ("cls_token".to_owned(), &self.cls_token),
            ("pos_embed".to_owned(), &self.pos_embed),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, w) in layer.slots() {
                out.push((format!("layer.{i}.{name}"), w));
            }
        }
        match &self.head {
            HeadWeights::Linear { weight, bias } => {
                out.push(("head.linear.weight".into(), weight));
                out.push(("head.linear.bias".into(), bias));
            }
            HeadWeights::TanhHidden {
                hidden_w,
                hidden_b,
                out_w,
                out_b,
            } => {
                out.push(("head.hidden.weight".into(), hidden_w));
                out.push(("head.hidden.bias".into(), hidden_b));
                out.push(("head.out.weight".into(), out_w));
                out.push(("head.out.bias".into(), out_b));
            }
        }
        out
    }

    /// Structure-preserving map; `f` sees slots in [`Weights::named`] order.
    pub fn map<U>(&self, mut f: impl FnMut(&str, &W) -> U) -> Weights<U> {
        let embed_weight = f("embed.weight", &self.embed_weight);
        let embed_bias = f("embed.bias", &self.embed_bias);
        let cls_token = f("cls_token", &self.cls_token);
        let pos_embed = f("pos_embed", &self.pos_embed);
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.map(&format!("layer.{i}"), &mut f))
            .collect();
        let head = match &self.head {
            HeadWeights::Linear { weight, bias } => HeadWeights::Linear {
                weight: f("head.linear.weight", weight),
                bias: f("head.linear.bias", bias),
            },
            HeadWeights::TanhHidden {
                hidden_w,
                hidden_b,
                out_w,
                out_b,
            } => HeadWeights::TanhHidden {
                hidden_w: f("head.hidden.weight", hidden_w),
                hidden_b: f("head.hidden.bias", hidden_b),
                out_w: f("head.out.weight", out_w),
                out_b: f("head.out.bias", out_b),
            },
        };
        Weights {
            embed_weight,
            embed_bias,
            cls_token,
            pos_embed,
            layers,
            head,
        }
    }

    /// Mutable slots in [`Weights::named`] order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut W)> {
        let Weights {
            embed_weight,
            embed_bias,
            cls_token,
            pos_embed,
            layers,
            head,
        } = self;
        let mut out = vec![
            ("embed.weight".to_owned(), embed_weight),
            ("embed.bias".to_owned(), embed_bias),
            ("cls_token".to_owned(), cls_token),
            ("pos_embed".to_owned(), pos_embed),
        ];
        for (i, l) in layers.iter_mut().enumerate() {
            let LayerWeights {
                ln1_gain,
                ln1_bias,
                w_q,
                w_k,
                w_v,
                w_o,
                ln2_gain,
                ln2_bias,
                mlp_w1,
                mlp_b1,
                mlp_w2,
                mlp_b2,
            } = l;
            let slots = [
                ("ln1.gain", ln1_gain),
                ("ln1.bias", ln1_bias),
                ("msa.w_q", w_q),
                ("msa.w_k", w_k),
                ("msa.w_v", w_v),
                ("msa.w_o", w_o),
                ("ln2.gain", ln2_gain),
                ("ln2.bias", ln2_bias),
                ("mlp.fc1.weight", mlp_w1),
                ("mlp.fc1.bias", mlp_b1),
                ("mlp.fc2.weight", mlp_w2),
                ("mlp.fc2.bias", mlp_b2),
            ];
            out.extend(slots.into_iter().map(|(n, w)| (format!("layer.{i}.{n}"), w)));
        }
        match head {
            HeadWeights::Linear { weight, bias } => {
                out.push(("head.linear.weight".into(), weight));
                out.push(("head.linear.bias".into(), bias));
            }
            HeadWeights::TanhHidden {
                hidden_w,
                hidden_b,
                out_w,
                out_b,
            } => {
                out.push(("head.hidden.weight".into(), hidden_w));
                out.push(("head.hidden.bias".into(), hidden_b));
                out.push(("head.out.weight".into(), out_w));
                out.push(("head.out.bias".into(), out_b));
            }
        }
        out
    }

    /// Slot count.
    pub fn len(&self) -> usize {
        self.named().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Shape and initializer of every slot for `config`.
pub fn layout(config: &ModelConfig) -> Result<Weights<(Vec<usize>, Init)>> {
    config.validate()?;
    let d = config.embed_dim;
    let hid = config.mlp_hidden();
    let seq = config.sequence_len()?;
    let k = config.classes;
    let layer = LayerWeights {
        ln1_gain: (vec![d], Init::Ones),
        ln1_bias: (vec![d], Init::Zeros),
        w_q: (vec![d, d], Init::Normal),
        w_k: (vec![d, d], Init::Normal),
        w_v: (vec![d, d], Init::Normal),
        w_o: (vec![d, d], Init::Normal),
        ln2_gain: (vec![d], Init::Ones),
        ln2_bias: (vec![d], Init::Zeros),
        mlp_w1: (vec![d, hid], Init::Normal),
        mlp_b1: (vec![hid], Init::Zeros),
        mlp_w2: (vec![hid, d], Init::Normal),
        mlp_b2: (vec![d], Init::Zeros),
    };
    let head = match config.head {
        HeadVariant::Linear => HeadWeights::Linear {
            weight: (vec![d, k], Init::Normal),
            bias: (vec![k], Init::Zeros),
        },
        HeadVariant::TanhHidden => HeadWeights::TanhHidden {
            hidden_w: (vec![d, d], Init::Normal),
            hidden_b: (vec![d], Init::Zeros),
            out_w: (vec![d, k], Init::Normal),
            out_b: (vec![k], Init::Zeros),
        },
    };
    Ok(Weights {
        embed_weight: (vec![config.tubelet_volume(), d], Init::Normal),
        embed_bias: (vec![d], Init::Zeros),
        cls_token: (vec![1, d], Init::Zeros),
        pos_embed: (vec![seq, d], Init::Normal),
        layers: vec![layer; config.layers],
        head,
    })
}

fn truncated_normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Fresh parameters: dense weights and `pos_embed` from a normal with
/// std 0.02 truncated at two standard deviations, biases and `cls_token`
/// zero, layer-norm gains one.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    let mut rng = rng_from_seed(seed);
    Ok(layout(config)?.map(|_, (shape, init)| match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::ones(shape),
        Init::Normal => {
            let n = shape.iter().product();
            let data = (0..n).map(|_| T::lit(truncated_normal(&mut rng, INIT_STD))).collect();
            Tensor::new(shape.clone(), data).expect("layout shapes are consistent")
        }
    }))
}

impl<T: Scalar> ModelParams<T> {
    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    /// Checks every slot against the layout for `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let want = layout(config)?;
        let want = want.named();
        let have = self.named();
        if want.len() != have.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter set has {} tensors, config expects {}",
                have.len(),
                want.len()
            )));
        }
        for ((name, (shape, _)), (hname, t)) in want.iter().zip(&have) {
            if name != hname || t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "parameter shape",
                    lhs: t.shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
        }
        Ok(())
    }

    /// Records every tensor as a trainable leaf.
    pub fn record(&self, tape: &mut GradTape<T>) -> ParamVars {
        self.map(|_, t| tape.param(t.clone()))
    }

    /// Records every tensor as a constant.
    pub fn record_constant(&self, tape: &mut GradTape<T>) -> ParamVars {
        self.map(|_, t| tape.constant(t.clone()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        self.map(|_, t| t.cast())
    }

    /// Zeroes the classification head.
    pub fn zero_head(&mut self) {
        let zero = |t: &mut Tensor<T>| *t = Tensor::zeros(t.shape());
        match &mut self.head {
            HeadWeights::Linear { weight, bias } => {
                zero(weight);
                zero(bias);
            }
            HeadWeights::TanhHidden {
                hidden_w,
                hidden_b,
                out_w,
                out_b,
            } => {
                zero(hidden_w);
                zero(hidden_b);
                zero(out_w);
                zero(out_b);
            }
        }
    }

    pub fn to_checkpoint(&self, config: &ModelConfig) -> Checkpoint {
        Checkpoint {
            tensors: self.named().into_iter().map(|(n, t)| (n, t.cast())).collect(),
            manifest: config.to_manifest(),
        }
    }

    /// Rebuilds parameters and config from a checkpoint; names and shapes
    /// must match the manifest's layout exactly.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(ModelConfig, Self)> {
        let config = ModelConfig::from_manifest(&ckpt.manifest)?;
        let mut missing = None;
        let params = layout(&config)?.map(|name, (shape, _)| match ckpt.get(name) {
            Some(t) if t.shape() == shape.as_slice() => t.cast(),
            Some(t) => {
                missing.get_or_insert_with(|| Error::Shape {
                    op: "checkpoint tensor",
                    lhs: t.shape().to_vec(),
                    rhs: shape.clone(),
                });
                Tensor::zeros(shape)
            }
            None => {
                missing.get_or_insert_with(|| Error::format(None, format!("checkpoint lacks tensor {name}")));
                Tensor::zeros(shape)
            }
        });
        if let Some(e) = missing {
            return Err(e);
        }
        if ckpt.tensors.len() != params.len() {
            return Err(Error::format(None, "checkpoint has unexpected extra tensors"));
        }
        Ok((config, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form count: embedding `(thwC + 1)·D`, CLS `D`, positions
    /// `(N + 1)·D`, per layer `4D² + 2rD² + 5D + rD`, linear head `D·K + K`.
    fn closed_form_count(cfg: &ModelConfig, tokens: usize) -> usize {
        let d = cfg.embed_dim;
        let r = cfg.mlp_ratio;
        let k = cfg.classes;
        let thwc = cfg.tubelet.t * cfg.tubelet.h * cfg.tubelet.w * cfg.input.channels;
        (thwc + 1) * d + d + (tokens + 1) * d + cfg.layers * (4 * d * d + 2 * r * d * d + 5 * d + r * d) + d * k + k
    }

    #[test]
    fn default_parameter_count() {
        let cfg = ModelConfig::default();
        let p = init_params::<f32>(&cfg, 0).unwrap();
        assert_eq!(p.parameter_count(), closed_form_count(&cfg, 448));
        assert_eq!(p.parameter_count(), 1_836_674);
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = ModelConfig::tiny();
        let a = init_params::<f32>(&cfg, 3).unwrap();
        let b = init_params::<f32>(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params::<f32>(&cfg, 4).unwrap());
    }

    #[test]
    fn shapes_and_init_rules() {
        let cfg = ModelConfig {
            head: HeadVariant::TanhHidden,
            ..ModelConfig::tiny()
        };
        let p = init_params::<f64>(&cfg, 1).unwrap();
        p.check_shapes(&cfg).unwrap();
        assert!(p.cls_token.data().iter().all(|&v| v == 0.0));
        assert!(p.embed_bias.data().iter().all(|&v| v == 0.0));
        assert!(p.layers[0].ln1_gain.data().iter().all(|&v| v == 1.0));
        assert!(p.pos_embed.data().iter().any(|&v| v != 0.0));
        assert!(p.embed_weight.data().iter().all(|&v| v.abs() <= 2.0 * INIT_STD));
        assert!(p.check_shapes(&ModelConfig::tiny()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ModelConfig::tiny();
        let p = init_params::<f32>(&cfg, 5).unwrap();
        let ckpt = p.to_checkpoint(&cfg);
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, None).unwrap();
        let (cfg2, p2) = ModelParams::<f32>::from_checkpoint(&back).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(p2, p);
        assert!(ckpt.get("layer.1.msa.w_q").is_some());
        assert!(ckpt.get("head.linear.weight").is_some());
    }
}
