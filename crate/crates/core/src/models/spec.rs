use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::social::SocialConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Conv1d,
    Conv2d,
    Lstm,
    EncDec,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Conv1d => "conv1d",
            Family::Conv2d => "conv2d",
            Family::Lstm => "lstm",
            Family::EncDec => "encdec",
        }
    }

    pub fn is_conv(self) -> bool {
        matches!(self, Family::Conv1d | Family::Conv2d)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv1d" => Ok(Family::Conv1d),
            "conv2d" => Ok(Family::Conv2d),
            "lstm" => Ok(Family::Lstm),
            "encdec" | "enc-dec" => Ok(Family::EncDec),
            _ => Err(Error::Config(format!("unknown model family `{s}` (expected conv1d, conv2d, lstm or encdec)"))),
        }
    }
}

/// Declarative description of a predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub kernel_size: usize,
    pub positional_embedding: bool,
    pub residual: bool,
    pub transpose_conv: bool,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    /// Width of the first output layer of the recurrent models.
    pub out_hidden: usize,
    pub social: SocialConfig,
    /// Per conv layer `(in, out)` channels; `None` selects the family default.
    pub channels: Option<Vec<(usize, usize)>>,
    /// Conv layers before the 8→12 transition.
    pub head_layers: usize,
    pub batch_norm: Option<bool>,
    /// ReLU after hidden conv layers.
    pub activation: bool,
    /// 2-D model: pad the two reduction convs symmetrically, shrinking the
    /// feature axis by 4 instead of keeping it.
    pub symmetric_reduction_padding: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            family: Family::Conv2d,
            kernel_size: 5,
            positional_embedding: false,
            residual: false,
            transpose_conv: false,
            embed_dim: 64,
            lstm_hidden: 128,
            out_hidden: 64,
            social: SocialConfig::default(),
            channels: None,
            head_layers: 3,
            batch_norm: None,
            activation: true,
            symmetric_reduction_padding: false,
        }
    }
}

pub const CONV2D_CHANNELS: [(usize, usize); 7] = [(1, 16), (16, 32), (32, 48), (48, 48), (48, 32), (32, 16), (16, 1)];

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        ModelSpec { family, ..Default::default() }
    }

    pub fn conv2d(kernel_size: usize) -> Self {
        ModelSpec { kernel_size, ..Self::new(Family::Conv2d) }
    }

    pub fn conv1d(kernel_size: usize) -> Self {
        ModelSpec { kernel_size, ..Self::new(Family::Conv1d) }
    }

    pub fn lstm() -> Self {
        Self::new(Family::Lstm)
    }

    pub fn encdec() -> Self {
        Self::new(Family::EncDec)
    }

    pub fn uses_batch_norm(&self) -> bool {
        self.batch_norm.unwrap_or(self.family == Family::Conv2d)
    }

    /// Resolved channel schedule for conv families.
    pub fn channel_schedule(&self) -> Vec<(usize, usize)> {
        if let Some(c) = &self.channels {
            return c.clone();
        }
        match self.family {
            Family::Conv2d => CONV2D_CHANNELS.to_vec(),
            _ => vec![(self.embed_dim, self.embed_dim); 7],
        }
    }

    /// Short label like `conv2d-ks5` used in tables and file names.
    pub fn label(&self) -> String {
        let mut s = self.family.to_string();
        if self.family.is_conv() {
            s.push_str(&format!("-ks{}", self.kernel_size));
        }
        for (on, tag) in [(self.positional_embedding, "pe"), (self.residual, "rc"), (self.transpose_conv, "tc")] {
            if on {
                s.push('-');
                s.push_str(tag);
            }
        }
        if self.social.feature_len() > 0 {
            s.push_str(&format!("-{:?}", self.social.kind).to_lowercase());
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.social.validate()?;
        let fail = |m: String| Err(Error::Build(m));
        if self.embed_dim == 0 || self.lstm_hidden == 0 || self.out_hidden == 0 {
            return fail("embedding and hidden sizes must be positive".into());
        }
        if !self.family.is_conv() {
            if self.positional_embedding || self.residual || self.transpose_conv || self.channels.is_some() {
                return fail(format!("variant flags and channel schedules only apply to conv models, not {}", self.family));
            }
            return Ok(());
        }
        let k = self.kernel_size;
        if k < 3 || k.is_multiple_of(2) {
            return fail(format!("kernel size must be odd and ≥ 3, got {k}"));
        }
        if self.family == Family::Conv2d && (self.residual || self.transpose_conv) {
            return fail("residual and transpose-conv variants are defined for the 1-D model only".into());
        }
        let sched = self.channel_schedule();
        if sched.len() < self.head_layers + 3 {
            return fail(format!(
                "channel schedule needs {} head layers, 2 reduction layers and at least one tail layer; got {} layers",
                self.head_layers,
                sched.len()
            ));
        }
        if sched.iter().any(|&(i, o)| i == 0 || o == 0) {
            return fail("channel counts must be positive".into());
        }
        for w in sched.windows(2) {
            if w[0].1 != w[1].0 {
                return fail(format!("channel schedule breaks between {:?} and {:?}", w[0], w[1]));
            }
        }
        let (first_in, last_out) = (sched[0].0, sched[sched.len() - 1].1);
        match self.family {
            Family::Conv2d if first_in != 1 || last_out != 1 => {
                fail(format!("2-D schedule must start and end with one channel, got {first_in} → {last_out}"))
            }
            Family::Conv1d if first_in != self.embed_dim => {
                fail(format!("1-D schedule must start with {} channels, got {first_in}", self.embed_dim))
            }
            Family::Conv1d if self.residual && sched.iter().any(|&(i, o)| i != o) => {
                fail("residual connections need equal in/out channels on every layer".into())
            }
            Family::Conv2d if self.symmetric_reduction_padding && self.embed_dim <= 4 => {
                fail("embedding too small for symmetric reduction padding".into())
            }
            _ => Ok(()),
        }
    }
}
