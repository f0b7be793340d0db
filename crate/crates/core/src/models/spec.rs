use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Pool size applied after every convolutional block.
pub const POOL_SIZE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    CnnLstm,
    Cnn,
    Lstm,
    Rnn,
}

impl ModelKind {
    /// Order used for benchmark tables.
    pub const ALL: [ModelKind; 4] = [ModelKind::CnnLstm, ModelKind::Cnn, ModelKind::Lstm, ModelKind::Rnn];

    pub fn key(self) -> &'static str {
        match self {
            ModelKind::CnnLstm => "cnn_lstm",
            ModelKind::Cnn => "cnn",
            ModelKind::Lstm => "lstm",
            ModelKind::Rnn => "rnn",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::CnnLstm => "CNN-LSTM",
            ModelKind::Cnn => "CNN",
            ModelKind::Lstm => "LSTM",
            ModelKind::Rnn => "RNN",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ModelKind::CnnLstm => 0,
            ModelKind::Cnn => 1,
            ModelKind::Lstm => 2,
            ModelKind::Rnn => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn has_conv(self) -> bool {
        matches!(self, ModelKind::CnnLstm | ModelKind::Cnn)
    }

    pub fn is_recurrent(self) -> bool {
        !matches!(self, ModelKind::Cnn)
    }

    /// Recurrent kinds carry hidden state across consecutive forward calls.
    pub fn is_stateful(self) -> bool {
        self.is_recurrent()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.key() == norm)
            .ok_or_else(|| Error::Config(format!("unknown model kind '{s}' (expected cnn_lstm, cnn, lstm or rnn)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_channels: usize,
    pub window_len: usize,
    /// `(kernel_size, filters)` per convolutional block.
    pub conv: Vec<(usize, usize)>,
    /// Number of stacked recurrent layers.
    pub lstm_layers: usize,
    pub hidden: usize,
    pub dropout_rate: f64,
    pub output_dim: usize,
}

impl ModelSpec {
    pub const DEFAULT_WINDOW: usize = 8;
    pub const DEFAULT_CONV: [(usize, usize); 2] = [(3, 64), (5, 128)];
    pub const DEFAULT_LAYERS: usize = 2;
    pub const DEFAULT_HIDDEN: usize = 128;
    pub const DEFAULT_DROPOUT: f64 = 0.3;

    pub fn new(kind: ModelKind, input_channels: usize) -> Self {
        Self {
            kind,
            input_channels,
            window_len: Self::DEFAULT_WINDOW,
            conv: Self::DEFAULT_CONV.to_vec(),
            lstm_layers: Self::DEFAULT_LAYERS,
            hidden: Self::DEFAULT_HIDDEN,
            dropout_rate: Self::DEFAULT_DROPOUT,
            output_dim: 1,
        }
    }

    pub fn with_window(mut self, window_len: usize) -> Self {
        self.window_len = window_len;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if self.input_channels == 0 {
            return fail("input_channels must be positive".into());
        }
        if self.window_len == 0 {
            return fail("window_len must be positive".into());
        }
        if self.output_dim == 0 {
            return fail("output_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        if self.kind.has_conv() {
            if self.conv.is_empty() {
                return fail(format!("{} needs at least one conv block", self.kind));
            }
            for &(k, f) in &self.conv {
                if k % 2 == 0 || f == 0 {
                    return fail(format!("conv block ({k}, {f}) needs an odd kernel size and filters >= 1"));
                }
            }
            let min = POOL_SIZE.pow(self.conv.len() as u32);
            if self.window_len < min {
                return fail(format!(
                    "window_len {} < {min}: {} pooling layers would shrink it to zero",
                    self.window_len,
                    self.conv.len()
                ));
            }
        }
        if self.kind.is_recurrent() && (self.lstm_layers == 0 || self.hidden == 0) {
            return fail("recurrent kinds need lstm_layers >= 1 and hidden >= 1".into());
        }
        Ok(())
    }

    /// Temporal length after the convolutional stack (the raw window otherwise).
    pub fn pooled_len(&self) -> usize {
        if self.kind.has_conv() {
            self.conv.iter().fold(self.window_len, |t, _| t / POOL_SIZE)
        } else {
            self.window_len
        }
    }

    pub fn conv_out_channels(&self) -> usize {
        self.conv.last().map(|&(_, f)| f).unwrap_or(self.input_channels)
    }
}
