use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::NetworkConfig;
use super::lstm::LstmParams;
use crate::error::{Error, Result};
use crate::tensor::{Checkpoint, ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BlstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

/// All weights of the transducer: encoder, SlowRNN, Readout, FF_emit, FF_Σ.
#[derive(Debug, Clone, PartialEq)]
pub struct TransducerParams {
    pub config: NetworkConfig,
    pub encoder: Vec<BlstmParams>,
    /// Label embedding; row `num_labels` is the begin-of-sequence input.
    pub embed: Tensor,
    pub slow: LstmParams,
    pub readout_enc: Tensor,
    pub readout_slow: Tensor,
    pub readout_bias: Tensor,
    pub emit_w: Tensor,
    pub emit_b: Tensor,
    pub label_w: Tensor,
    pub label_b: Tensor,
}

pub const TRANSDUCER_KIND: &str = "transducer";

impl TransducerParams {
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::with_capacity(config.encoder_layers);
        let mut in_dim = config.input_dim;
        for _ in 0..config.encoder_layers {
            encoder.push(BlstmParams {
                fwd: LstmParams::new(in_dim, config.encoder_hidden, &mut rng),
                bwd: LstmParams::new(in_dim, config.encoder_hidden, &mut rng),
            });
            in_dim = 2 * config.encoder_hidden;
        }
        let k = config.num_labels;
        let pre = config.readout_pre_dim();
        Ok(Self {
            config: config.clone(),
            encoder,
            embed: Tensor::glorot(&[k + 1, config.slow_embed], &mut rng),
            slow: LstmParams::new(config.slow_embed, config.slow_hidden, &mut rng),
            readout_enc: Tensor::glorot(&[pre, config.encoder_output_dim()], &mut rng),
            readout_slow: Tensor::glorot(&[pre, config.slow_hidden], &mut rng),
            readout_bias: Tensor::zeros(&[pre]),
            emit_w: Tensor::glorot(&[1, config.readout_dim], &mut rng),
            emit_b: Tensor::zeros(&[1]),
            label_w: Tensor::glorot(&[k, config.readout_dim], &mut rng),
            label_b: Tensor::zeros(&[k]),
        })
    }

    pub fn num_labels(&self) -> usize {
        self.config.num_labels
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let cfg = serde_json::to_value(&self.config).expect("config serializes");
        Checkpoint::from_params(TRANSDUCER_KIND, cfg, self)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != TRANSDUCER_KIND {
            return Err(Error::invalid(format!(
                "expected a {TRANSDUCER_KIND} checkpoint, found {:?}",
                ckpt.kind
            )));
        }
        let config: NetworkConfig = serde_json::from_value(ckpt.config.clone())?;
        let mut params = Self::init(&config, 0)?;
        ckpt.load_into(&mut params)?;
        Ok(params)
    }
}

impl ParamSet for TransducerParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.iter().enumerate() {
            for (dir, p) in [("fwd", &layer.fwd), ("bwd", &layer.bwd)] {
                let [w_ih, w_hh, b] = p.tensors();
                out.push((format!("encoder.{l}.{dir}.w_ih"), w_ih));
                out.push((format!("encoder.{l}.{dir}.w_hh"), w_hh));
                out.push((format!("encoder.{l}.{dir}.bias"), b));
            }
        }
        out.push(("slow.embed".into(), &self.embed));
        let [w_ih, w_hh, b] = self.slow.tensors();
        out.push(("slow.w_ih".into(), w_ih));
        out.push(("slow.w_hh".into(), w_hh));
        out.push(("slow.bias".into(), b));
        out.push(("readout.w_enc".into(), &self.readout_enc));
        out.push(("readout.w_slow".into(), &self.readout_slow));
        out.push(("readout.bias".into(), &self.readout_bias));
        out.push(("emit.w".into(), &self.emit_w));
        out.push(("emit.b".into(), &self.emit_b));
        out.push(("label.w".into(), &self.label_w));
        out.push(("label.b".into(), &self.label_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for layer in &mut self.encoder {
            out.extend(layer.fwd.tensors_mut());
            out.extend(layer.bwd.tensors_mut());
        }
        out.push(&mut self.embed);
        out.extend(self.slow.tensors_mut());
        out.push(&mut self.readout_enc);
        out.push(&mut self.readout_slow);
        out.push(&mut self.readout_bias);
        out.push(&mut self.emit_w);
        out.push(&mut self.emit_b);
        out.push(&mut self.label_w);
        out.push(&mut self.label_b);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_and_mut_order_agree() {
        let cfg = NetworkConfig {
            encoder_layers: 2,
            pooling: vec![2, 1],
            ..Default::default()
        };
        let mut p = TransducerParams::init(&cfg, 3).unwrap();
        let shapes: Vec<Vec<usize>> = p.tensors().iter().map(|(_, t)| t.shape.clone()).collect();
        let shapes_mut: Vec<Vec<usize>> = p.tensors_mut().iter().map(|t| t.shape.clone()).collect();
        assert_eq!(shapes, shapes_mut);
        assert_eq!(p.tensors().len(), 2 * 6 + 4 + 7);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = TransducerParams::init(&NetworkConfig::default(), 11).unwrap();
        let text = serde_json::to_string(&p.to_checkpoint()).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        let q = TransducerParams::from_checkpoint(&back).unwrap();
        for ((_, a), (_, b)) in p.tensors().iter().zip(q.tensors().iter()) {
            let ab: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn checkpoint_shape_mismatch_is_reported() {
        let p = TransducerParams::init(&NetworkConfig::default(), 1).unwrap();
        let mut ck = p.to_checkpoint();
        ck.tensors[0].shape = vec![1, 1];
        assert!(TransducerParams::from_checkpoint(&ck).is_err());
        let mut ck = p.to_checkpoint();
        ck.kind = "lm".into();
        assert!(TransducerParams::from_checkpoint(&ck).is_err());
    }
}
