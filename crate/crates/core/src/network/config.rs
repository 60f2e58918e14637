use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions and regularization of the transducer network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub num_labels: usize,
    pub encoder_layers: usize,
    /// Per-direction hidden size of each BLSTM layer.
    pub encoder_hidden: usize,
    /// Max-pool factor applied after each encoder layer; the product is the
    /// total time reduction.
    pub pooling: Vec<usize>,
    pub slow_embed: usize,
    pub slow_hidden: usize,
    /// Readout width after maxout.
    pub readout_dim: usize,
    pub maxout_group: usize,
    pub zoneout: f64,
    /// Recurrent DropConnect rate on the encoder; 0 disables it.
    pub encoder_weight_dropout: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_dim: 8,
            num_labels: 8,
            encoder_layers: 1,
            encoder_hidden: 16,
            pooling: vec![1],
            slow_embed: 8,
            slow_hidden: 16,
            readout_dim: 16,
            maxout_group: 2,
            zoneout: 0.05,
            encoder_weight_dropout: 0.0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_labels == 0 {
            return Err(Error::invalid("input_dim and num_labels must be positive"));
        }
        if self.pooling.len() != self.encoder_layers {
            return Err(Error::invalid(format!(
                "pooling has {} factors for {} encoder layers",
                self.pooling.len(),
                self.encoder_layers
            )));
        }
        if self.pooling.contains(&0) {
            return Err(Error::invalid("pooling factors must be >= 1"));
        }
        if self.encoder_layers > 0 && self.encoder_hidden == 0 {
            return Err(Error::invalid("encoder_hidden must be positive"));
        }
        if self.slow_embed == 0 || self.slow_hidden == 0 || self.readout_dim == 0 {
            return Err(Error::invalid("slow_embed, slow_hidden and readout_dim must be positive"));
        }
        if self.maxout_group == 0 {
            return Err(Error::invalid("maxout_group must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.zoneout) || !(0.0..1.0).contains(&self.encoder_weight_dropout) {
            return Err(Error::invalid("zoneout and weight dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn reduction_factor(&self) -> usize {
        self.pooling.iter().product()
    }

    pub fn encoder_output_dim(&self) -> usize {
        if self.encoder_layers == 0 {
            self.input_dim
        } else {
            2 * self.encoder_hidden
        }
    }

    /// Width of the readout pre-activation (before maxout).
    pub fn readout_pre_dim(&self) -> usize {
        self.readout_dim * self.maxout_group
    }

    /// Number of encoder frames produced for `input_frames` feature frames.
    pub fn output_frames(&self, input_frames: usize) -> usize {
        self.pooling.iter().fold(input_frames, |n, &r| n.div_ceil(r))
    }
}

/// Splits a total time reduction over `layers` layers by handing out prime
/// factors (largest first) to the layer with the smallest product so far.
pub fn factor_reduction(total: usize, layers: usize) -> Result<Vec<usize>> {
    if total == 0 {
        return Err(Error::invalid("reduction factor must be positive"));
    }
    if layers == 0 {
        return if total == 1 {
            Ok(vec![])
        } else {
            Err(Error::invalid("cannot pool without encoder layers"))
        };
    }
    let mut primes = Vec::new();
    let mut n = total;
    let mut p = 2;
    while p * p <= n {
        while n.is_multiple_of(p) {
            primes.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        primes.push(n);
    }
    primes.sort_unstable_by(|a, b| b.cmp(a));
    let mut out = vec![1; layers];
    for prime in primes {
        let (idx, _) = out
            .iter()
            .enumerate()
            .min_by_key(|(i, &v)| (v, *i))
            .expect("layers > 0");
        out[idx] *= prime;
    }
    Ok(out)
}
