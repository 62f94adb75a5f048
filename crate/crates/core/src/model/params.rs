//! Model configuration, parameter layout, and initialization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Parameter, Tensor, TensorError};
use crate::rng::Prng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{kind} id {id} out of range (vocabulary size {size})")]
    VocabOutOfRange {
        kind: &'static str,
        id: u32,
        size: usize,
    },
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
}

/// Network shape and initialization knobs.
///
/// FFN layer lists give every layer width including the final scalar;
/// hidden layers use ReLU, the last layer is linear.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub gru_hidden: usize,
    pub attn_ffn_layers: Vec<usize>,
    pub interest_ffn_layers: Vec<usize>,
    pub scenario_ffn_layers: Vec<usize>,
    /// History caps `(L_h, L_s)`.
    pub caps: (usize, usize),
    pub init_seed: u64,
    pub init_scale: f64,
    /// Cross-scenario co-attention path on/off.
    pub saca: bool,
    /// Scenario-bias branch on/off.
    pub sbe: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = 8;
        ModelConfig {
            embed_dim: d,
            gru_hidden: 8,
            attn_ffn_layers: vec![d, 1],
            interest_ffn_layers: vec![128, 64, 1],
            scenario_ffn_layers: vec![16, 1],
            caps: crate::data::DEFAULT_CAPS,
            init_seed: 42,
            init_scale: 0.1,
            saca: true,
            sbe: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.gru_hidden == 0 {
            return Err(ModelError::BadConfig("zero embed_dim or gru_hidden".into()));
        }
        if self.caps.0 == 0 || self.caps.1 == 0 {
            return Err(ModelError::BadConfig("history caps must be positive".into()));
        }
        for (name, layers) in [
            ("attn_ffn_layers", &self.attn_ffn_layers),
            ("interest_ffn_layers", &self.interest_ffn_layers),
            ("scenario_ffn_layers", &self.scenario_ffn_layers),
        ] {
            if layers.is_empty() || layers.iter().any(|&w| w == 0) {
                return Err(ModelError::BadConfig(format!("{name}: widths must be positive")));
            }
            if *layers.last().unwrap() != 1 {
                return Err(ModelError::BadConfig(format!("{name}: final width must be 1")));
            }
        }
        Ok(())
    }

    /// Width of the interest head input: `[u + i + s + h_final (+ R_h)]`.
    pub fn interest_input_dim(&self) -> usize {
        let base = 3 * self.embed_dim + self.gru_hidden;
        if self.saca {
            base + self.embed_dim
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub users: usize,
    pub items: usize,
    pub scenarios: usize,
}

/// One fully connected layer: `x W + b`.
#[derive(Debug, Clone)]
pub struct FfnLayer {
    pub w: Parameter,
    pub b: Parameter,
}

/// A stack of layers with ReLU between them and a linear last layer.
#[derive(Debug, Clone)]
pub struct Ffn {
    pub layers: Vec<FfnLayer>,
}

impl Ffn {
    fn init(prefix: &str, input: usize, widths: &[usize], rng: &mut Prng, scale: f64) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (li, &out) in widths.iter().enumerate() {
            let data: Vec<f64> = (0..fan_in * out).map(|_| rng.uniform(-scale, scale)).collect();
            layers.push(FfnLayer {
                w: Parameter::new(
                    format!("{prefix}.{li}.w"),
                    Tensor::matrix(fan_in, out, data).unwrap(),
                ),
                b: Parameter::new(format!("{prefix}.{li}.b"), Tensor::zeros(vec![out])),
            });
            fan_in = out;
        }
        Ffn { layers }
    }
}

#[derive(Debug, Clone)]
pub struct GruWeights {
    pub w_z: Parameter,
    pub w_r: Parameter,
    pub w_h: Parameter,
    pub u_z: Parameter,
    pub u_r: Parameter,
    pub u_h: Parameter,
    pub b_z: Parameter,
    pub b_r: Parameter,
    pub b_h: Parameter,
}

/// Every learnable array of the network.
///
/// The attention FFN exists only when the co-attention path is enabled,
/// and the scenario FFN only when the bias branch is enabled.
#[derive(Debug, Clone)]
pub struct MScanParameters {
    pub user_table: Parameter,
    pub item_table: Parameter,
    pub scenario_table: Parameter,
    pub gru: GruWeights,
    pub attention_ffn: Option<Ffn>,
    pub interest_ffn: Ffn,
    pub scenario_ffn: Option<Ffn>,
}

impl MScanParameters {
    /// Deterministic initialization: weights uniform in
    /// `[-init_scale, init_scale]` from `init_seed`, biases zero.
    pub fn init(config: &ModelConfig, vocab: VocabSizes) -> Self {
        let mut rng = Prng::new(config.init_seed);
        let scale = config.init_scale;
        let d = config.embed_dim;
        let gh = config.gru_hidden;
        let table = |rng: &mut Prng, name: &str, rows: usize, cols: usize| {
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect();
            Parameter::new(name, Tensor::matrix(rows, cols, data).unwrap())
        };

        let user_table = table(&mut rng, "embed.user", vocab.users, d);
        let item_table = table(&mut rng, "embed.item", vocab.items, d);
        let scenario_table = table(&mut rng, "embed.scenario", vocab.scenarios, d);
        let gru = GruWeights {
            w_z: table(&mut rng, "gru.w_z", d, gh),
            w_r: table(&mut rng, "gru.w_r", d, gh),
            w_h: table(&mut rng, "gru.w_h", d, gh),
            u_z: table(&mut rng, "gru.u_z", gh, gh),
            u_r: table(&mut rng, "gru.u_r", gh, gh),
            u_h: table(&mut rng, "gru.u_h", gh, gh),
            b_z: Parameter::new("gru.b_z", Tensor::zeros(vec![gh])),
            b_r: Parameter::new("gru.b_r", Tensor::zeros(vec![gh])),
            b_h: Parameter::new("gru.b_h", Tensor::zeros(vec![gh])),
        };
        let attention_ffn = config
            .saca
            .then(|| Ffn::init("attn_ffn", 3 * d, &config.attn_ffn_layers, &mut rng, scale));
        let interest_ffn = Ffn::init(
            "interest_ffn",
            config.interest_input_dim(),
            &config.interest_ffn_layers,
            &mut rng,
            scale,
        );
        let scenario_ffn = config
            .sbe
            .then(|| Ffn::init("scenario_ffn", d, &config.scenario_ffn_layers, &mut rng, scale));

        MScanParameters {
            user_table,
            item_table,
            scenario_table,
            gru,
            attention_ffn,
            interest_ffn,
            scenario_ffn,
        }
    }

    /// All parameters in a fixed structural order.
    pub fn iter(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.user_table, &self.item_table, &self.scenario_table];
        let g = &self.gru;
        out.extend([&g.w_z, &g.w_r, &g.w_h, &g.u_z, &g.u_r, &g.u_h, &g.b_z, &g.b_r, &g.b_h]);
        if let Some(ffn) = &self.attention_ffn {
            for l in &ffn.layers {
                out.push(&l.w);
                out.push(&l.b);
            }
        }
        for l in &self.interest_ffn.layers {
            out.push(&l.w);
            out.push(&l.b);
        }
        if let Some(ffn) = &self.scenario_ffn {
            for l in &ffn.layers {
                out.push(&l.w);
                out.push(&l.b);
            }
        }
        out
    }

    pub fn iter_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> =
            vec![&mut self.user_table, &mut self.item_table, &mut self.scenario_table];
        let g = &mut self.gru;
        out.extend([
            &mut g.w_z, &mut g.w_r, &mut g.w_h, &mut g.u_z, &mut g.u_r, &mut g.u_h, &mut g.b_z,
            &mut g.b_r, &mut g.b_h,
        ]);
        if let Some(ffn) = &mut self.attention_ffn {
            for l in &mut ffn.layers {
                out.push(&mut l.w);
                out.push(&mut l.b);
            }
        }
        for l in &mut self.interest_ffn.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        if let Some(ffn) = &mut self.scenario_ffn {
            for l in &mut ffn.layers {
                out.push(&mut l.w);
                out.push(&mut l.b);
            }
        }
        out
    }

    pub fn zero_gradients(&mut self) {
        for p in self.iter_mut() {
            p.zero_grad();
        }
    }

    pub fn checksum(&self) -> String {
        checksum_parameters(self.iter().into_iter())
    }
}

/// FNV-1a over parameter names and value bits, in iteration order.
pub fn checksum_parameters<'a>(params: impl Iterator<Item = &'a Parameter>) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |byte: u8| {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for p in params {
        for b in p.name.as_bytes() {
            eat(*b);
        }
        for v in p.value.data() {
            for b in v.to_bits().to_le_bytes() {
                eat(b);
            }
        }
    }
    format!("{hash:016x}")
}
