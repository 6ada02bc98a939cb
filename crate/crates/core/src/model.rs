//! Deterministic desk-scale decoder-only transformer.
//!
//! Pre-norm blocks with RMS normalization, multi-head causal attention with
//! pluggable rotary config and logit-scaling policy, and a two-matrix SiLU
//! MLP at ratio 4. Weights are reproducible bit-for-bit from a seed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2};
use thiserror::Error;

use crate::attention::{attend, AttentionError, AttentionTrace, TraceMode};
use crate::rope::{compute_theta, RopeConfig, RopeError};
use crate::scaling::ScalingPolicy;
use crate::Real;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("d_model mismatch: n_heads {n_heads} * d_head {d_head} != {d_model}")]
    BadDimensions {
        n_heads: usize,
        d_head: usize,
        d_model: usize,
    },
    #[error("token id {id} out of vocabulary (size {vocab})")]
    TokenOutOfVocab { id: usize, vocab: usize },
    #[error("sequence length {len} exceeds max positions {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("rope head dimension {rope_d} does not match model d_head {d_head}")]
    RopeDimMismatch { rope_d: usize, d_head: usize },
    #[error("bad weight file header: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Rope(#[from] RopeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Toy transformer hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Per-head dimension; must be even.
    pub d_head: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub seed: u64,
    /// Half-width of the uniform init interval, in units of 1e-2 of itself;
    /// weights are drawn from [-init_range, init_range].
    pub init_range: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            n_layers: 4,
            n_heads: 8,
            d_head: 32,
            vocab_size: 32_000,
            max_positions: 4096,
            seed: 42,
            init_range: 0.02,
        }
    }
}

impl ModelSpec {
    pub fn d_model(&self) -> usize {
        self.n_heads * self.d_head
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_layers == 0
            || self.n_heads == 0
            || self.d_head == 0
            || self.d_head % 2 != 0
            || self.vocab_size < 2
        {
            return Err(ModelError::BadDimensions {
                n_heads: self.n_heads,
                d_head: self.d_head,
                d_model: self.d_model(),
            });
        }
        Ok(())
    }
}

/// SplitMix64 generator; the weight-init stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in [-range, range), using the top 53 bits.
    pub fn next_uniform(&mut self, range: f64) -> f64 {
        let unit = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (2.0 * unit - 1.0) * range
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T: Real> {
    pub wq: Array2<T>,
    pub wk: Array2<T>,
    pub wv: Array2<T>,
    pub wo: Array2<T>,
    pub w_in: Array2<T>,
    pub w_out: Array2<T>,
    pub attn_norm: Array1<T>,
    pub mlp_norm: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T: Real> {
    pub embedding: Array2<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Array1<T>,
}

fn draw_matrix<T: Real>(rng: &mut SplitMix64, rows: usize, cols: usize, range: f64) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| {
        T::from_f64_lossy(rng.next_uniform(range))
    })
}

/// Fill all weights from a SplitMix64 stream seeded with `spec.seed`.
///
/// Consumption order: embedding (row-major), then per layer Q, K, V, O,
/// MLP-in, MLP-out; norm gains are constant ones and consume no draws.
pub fn init_weights<T: Real>(spec: &ModelSpec) -> Result<ModelWeights<T>, ModelError> {
    spec.validate()?;
    let d = spec.d_model();
    let mut rng = SplitMix64::new(spec.seed);
    let embedding = draw_matrix(&mut rng, spec.vocab_size, d, spec.init_range);
    let layers = (0..spec.n_layers)
        .map(|_| LayerWeights {
            wq: draw_matrix(&mut rng, d, d, spec.init_range),
            wk: draw_matrix(&mut rng, d, d, spec.init_range),
            wv: draw_matrix(&mut rng, d, d, spec.init_range),
            wo: draw_matrix(&mut rng, d, d, spec.init_range),
            w_in: draw_matrix(&mut rng, d, 4 * d, spec.init_range),
            w_out: draw_matrix(&mut rng, 4 * d, d, spec.init_range),
            attn_norm: Array1::ones(d),
            mlp_norm: Array1::ones(d),
        })
        .collect();
    Ok(ModelWeights {
        embedding,
        layers,
        final_norm: Array1::ones(d),
    })
}

impl<T: Real> ModelWeights<T> {
    /// Replace every query projection with zeros, forcing uniform attention.
    pub fn zero_query_projections(&mut self) {
        for layer in &mut self.layers {
            layer.wq.fill(T::zero());
        }
    }

    /// Write `TTW1` header plus all weights as little-endian f64 in
    /// consumption order (norm gains follow each layer's MLP-out; the final
    /// norm gain comes last).
    pub fn save(&self, spec: &ModelSpec, path: &Path) -> Result<(), ModelError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(
            out,
            "TTW1 {} {} {} {}",
            spec.n_layers, spec.n_heads, spec.d_head, spec.vocab_size
        )?;
        let mut write_all = |values: &mut dyn Iterator<Item = T>| -> std::io::Result<()> {
            for v in values {
                out.write_all(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes())?;
            }
            Ok(())
        };
        write_all(&mut self.embedding.iter().copied())?;
        for layer in &self.layers {
            write_all(&mut layer.wq.iter().copied())?;
            write_all(&mut layer.wk.iter().copied())?;
            write_all(&mut layer.wv.iter().copied())?;
            write_all(&mut layer.wo.iter().copied())?;
            write_all(&mut layer.w_in.iter().copied())?;
            write_all(&mut layer.w_out.iter().copied())?;
            write_all(&mut layer.attn_norm.iter().copied())?;
            write_all(&mut layer.mlp_norm.iter().copied())?;
        }
        write_all(&mut self.final_norm.iter().copied())?;
        Ok(())
    }

    /// Load weights written by [`ModelWeights::save`], returning them with
    /// the spec reconstructed from the header (seed and max_positions keep
    /// their defaults; they do not affect a loaded forward pass).
    pub fn load(path: &Path) -> Result<(ModelSpec, ModelWeights<T>), ModelError> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "TTW1" {
            return Err(ModelError::BadHeader(header.trim().to_string()));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| ModelError::BadHeader(header.trim().to_string()))
        };
        let spec = ModelSpec {
            n_layers: parse(fields[1])?,
            n_heads: parse(fields[2])?,
            d_head: parse(fields[3])?,
            vocab_size: parse(fields[4])?,
            ..ModelSpec::default()
        };
        spec.validate()?;
        let d = spec.d_model();
        let mut read_vec = |len: usize| -> Result<Vec<T>, ModelError> {
            let mut buf = [0u8; 8];
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                reader.read_exact(&mut buf)?;
                values.push(T::from_f64_lossy(f64::from_le_bytes(buf)));
            }
            Ok(values)
        };
        let embedding =
            Array2::from_shape_vec((spec.vocab_size, d), read_vec(spec.vocab_size * d)?)
                .expect("shape");
        let mut layers = Vec::with_capacity(spec.n_layers);
        for _ in 0..spec.n_layers {
            layers.push(LayerWeights {
                wq: Array2::from_shape_vec((d, d), read_vec(d * d)?).expect("shape"),
                wk: Array2::from_shape_vec((d, d), read_vec(d * d)?).expect("shape"),
                wv: Array2::from_shape_vec((d, d), read_vec(d * d)?).expect("shape"),
                wo: Array2::from_shape_vec((d, d), read_vec(d * d)?).expect("shape"),
                w_in: Array2::from_shape_vec((d, 4 * d), read_vec(d * 4 * d)?).expect("shape"),
                w_out: Array2::from_shape_vec((4 * d, d), read_vec(4 * d * d)?).expect("shape"),
                attn_norm: Array1::from_vec(read_vec(d)?),
                mlp_norm: Array1::from_vec(read_vec(d)?),
            });
        }
        let final_norm = Array1::from_vec(read_vec(d)?);
        Ok((spec, ModelWeights { embedding, layers, final_norm }))
    }
}

fn rms_norm<T: Real>(x: &Array2<T>, gain: &Array1<T>) -> Array2<T> {
    let eps = T::from_f64_lossy(1e-6);
    let d = T::from_usize_lossy(x.ncols());
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let mean_sq = row.iter().map(|&v| v * v).sum::<T>() / d;
        let inv = T::one() / (mean_sq + eps).sqrt();
        for (v, &g) in row.iter_mut().zip(gain.iter()) {
            *v = *v * inv * g;
        }
    }
    out
}

fn silu<T: Real>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

/// Attention traces for one layer, one entry per head.
pub type LayerTrace<T> = Vec<AttentionTrace<T>>;

/// Full forward pass; returns logits `[n x vocab_size]` and per-layer traces.
pub fn forward<T: Real>(
    spec: &ModelSpec,
    weights: &ModelWeights<T>,
    tokens: &[usize],
    rope_config: &RopeConfig<T>,
    policy: &ScalingPolicy<T>,
    mode: TraceMode,
) -> Result<(Array2<T>, Vec<LayerTrace<T>>), ModelError> {
    spec.validate()?;
    if rope_config.d != spec.d_head {
        return Err(ModelError::RopeDimMismatch {
            rope_d: rope_config.d,
            d_head: spec.d_head,
        });
    }
    if tokens.len() > spec.max_positions {
        return Err(ModelError::SequenceTooLong {
            len: tokens.len(),
            max: spec.max_positions,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&id| id >= spec.vocab_size) {
        return Err(ModelError::TokenOutOfVocab {
            id,
            vocab: spec.vocab_size,
        });
    }
    let spectrum = compute_theta(rope_config)?;
    let n = tokens.len();
    let d = spec.d_model();

    let mut x = Array2::zeros((n, d));
    for (row, &id) in tokens.iter().enumerate() {
        x.row_mut(row).assign(&weights.embedding.row(id));
    }

    let mut traces = Vec::with_capacity(spec.n_layers);
    for (layer_idx, layer) in weights.layers.iter().enumerate() {
        let h = rms_norm(&x, &layer.attn_norm);
        let q = h.dot(&layer.wq);
        let k = h.dot(&layer.wk);
        let v = h.dot(&layer.wv);
        let mut attn_out = Array2::zeros((n, d));
        let mut head_traces = Vec::with_capacity(spec.n_heads);
        for head in 0..spec.n_heads {
            let cols = head * spec.d_head..(head + 1) * spec.d_head;
            let qh = q.slice(s![.., cols.clone()]).to_owned();
            let kh = k.slice(s![.., cols.clone()]).to_owned();
            let vh = v.slice(s![.., cols.clone()]).to_owned();
            let (out, trace) = attend(
                qh.view(),
                kh.view(),
                vh.view(),
                layer_idx,
                rope_config,
                &spectrum,
                policy,
                mode,
            )?;
            attn_out.slice_mut(s![.., cols]).assign(&out);
            head_traces.push(trace);
        }
        traces.push(head_traces);
        x = x + attn_out.dot(&layer.wo);

        let h2 = rms_norm(&x, &layer.mlp_norm);
        let mlp = h2.dot(&layer.w_in).mapv(silu).dot(&layer.w_out);
        x = x + mlp;
    }

    let final_h = rms_norm(&x, &weights.final_norm);
    let logits = final_h.dot(&weights.embedding.t());
    Ok((logits, traces))
}
