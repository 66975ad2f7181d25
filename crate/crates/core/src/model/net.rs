//! Encoder, feedback channel and decoder.
//!
//! Encoder: realified CSI tokens (one per subcarrier) are projected to
//! `N_embed`, summed with the CQI embedding and a learnable positional
//! encoding, passed through pre-norm transformer blocks, flattened, and
//! mapped by the modulator head to `M × K` logits (JCM) or `2M` reals
//! (analog). Decoder: the received `M` complex values are projected back to
//! `L` tokens, receive their own CQI embedding and positional encoding, pass
//! through transformer blocks, and a per-token head emits `2·N_t` reals that
//! are reassembled into `Ĥ`.

use super::config::{HardDecision, ModelConfig, ModulationMode};
use super::constellation::Constellation;
use super::params::{ParamId, ParamStore};
use crate::channel::ChannelMatrix;
use crate::cqi::{CqiMode, CqiReport, NUM_CQI};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::Rng;
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy)]
enum Init {
    /// `U(±1/√fan_in)`
    Uniform(usize),
    Zeros,
    Ones,
    Normal(f64),
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    ln1: Norm,
    q: Affine,
    k: Affine,
    v: Affine,
    o: Affine,
    ln2: Norm,
    fc1: Affine,
    fc2: Affine,
}

#[derive(Debug, Clone)]
struct Stack {
    input: Affine,
    pos: ParamId,
    cqi: Affine,
    blocks: Vec<Block>,
    ln_f: Norm,
    head: Affine,
}

#[derive(Debug, Clone)]
struct Layout {
    enc: Stack,
    dec: Stack,
}

/// Which half of the autoencoder a CQI embedding belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

impl Side {
    fn prefix(self) -> &'static str {
        match self {
            Side::Encoder => "enc",
            Side::Decoder => "dec",
        }
    }
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.embed_dim;
    let l = cfg.tokens();
    let hidden = d * cfg.mlp_ratio;
    let k = cfg.constellation_order;
    let m = cfg.channel_uses;
    let head_out = match cfg.modulation {
        ModulationMode::Jcm => m * k,
        ModulationMode::Analog => 2 * m,
    };
    let mut specs = Vec::new();
    let affine = |specs: &mut Vec<_>, name: String, fan_in: usize, fan_out: usize| {
        specs.push((format!("{name}.w"), vec![fan_in, fan_out], Init::Uniform(fan_in)));
        specs.push((format!("{name}.b"), vec![fan_out], Init::Zeros));
    };
    for side in [Side::Encoder, Side::Decoder] {
        let p = side.prefix();
        match side {
            Side::Encoder => affine(&mut specs, format!("{p}.in"), 2 * cfg.n_t, d),
            Side::Decoder => affine(&mut specs, format!("{p}.in"), 2 * m, l * d),
        }
        specs.push((format!("{p}.pos"), vec![l, d], Init::Normal(0.02)));
        affine(&mut specs, format!("{p}.cqi"), NUM_CQI, d);
        for i in 0..cfg.depth {
            let b = format!("{p}.blocks.{i}");
            for ln in ["ln1", "ln2"] {
                specs.push((format!("{b}.{ln}.g"), vec![d], Init::Ones));
                specs.push((format!("{b}.{ln}.b"), vec![d], Init::Zeros));
            }
            for proj in ["q", "k", "v", "o"] {
                affine(&mut specs, format!("{b}.attn.{proj}"), d, d);
            }
            affine(&mut specs, format!("{b}.mlp.fc1"), d, hidden);
            affine(&mut specs, format!("{b}.mlp.fc2"), hidden, d);
        }
        specs.push((format!("{p}.ln_f.g"), vec![d], Init::Ones));
        specs.push((format!("{p}.ln_f.b"), vec![d], Init::Zeros));
        match side {
            Side::Encoder => affine(&mut specs, format!("{p}.head"), l * d, head_out),
            Side::Decoder => affine(&mut specs, format!("{p}.head"), d, 2 * cfg.n_t),
        }
    }
    specs
}

impl Layout {
    fn resolve(cfg: &ModelConfig, store: &ParamStore) -> Result<Layout> {
        for (name, shape, _) in param_specs(cfg) {
            let t = store
                .by_name(&name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "parameter `{name}` has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
        }
        if store.len() != param_specs(cfg).len() {
            return Err(Error::Config(format!(
                "parameter set has {} tensors, config expects {}",
                store.len(),
                param_specs(cfg).len()
            )));
        }
        let id = |n: String| store.id(&n);
        let affine = |n: String| -> Result<Affine> {
            Ok(Affine {
                w: id(format!("{n}.w"))?,
                b: id(format!("{n}.b"))?,
            })
        };
        let norm = |n: String| -> Result<Norm> {
            Ok(Norm {
                g: id(format!("{n}.g"))?,
                b: id(format!("{n}.b"))?,
            })
        };
        let stack = |p: &str| -> Result<Stack> {
            let blocks = (0..cfg.depth)
                .map(|i| {
                    let b = format!("{p}.blocks.{i}");
                    Ok(Block {
                        ln1: norm(format!("{b}.ln1"))?,
                        q: affine(format!("{b}.attn.q"))?,
                        k: affine(format!("{b}.attn.k"))?,
                        v: affine(format!("{b}.attn.v"))?,
                        o: affine(format!("{b}.attn.o"))?,
                        ln2: norm(format!("{b}.ln2"))?,
                        fc1: affine(format!("{b}.mlp.fc1"))?,
                        fc2: affine(format!("{b}.mlp.fc2"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Stack {
                input: affine(format!("{p}.in"))?,
                pos: id(format!("{p}.pos"))?,
                cqi: affine(format!("{p}.cqi"))?,
                blocks,
                ln_f: norm(format!("{p}.ln_f"))?,
                head: affine(format!("{p}.head"))?,
            })
        };
        Ok(Layout {
            enc: stack("enc")?,
            dec: stack("dec")?,
        })
    }
}

/// Parameters recorded on a tape; `vars[i]` belongs to parameter `i`.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// How the encoder output is turned into channel symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SymbolMode {
    /// Gumbel-softmax relaxation at temperature `tau`; `gumbel = false`
    /// disables the noise (plain tempered softmax).
    Soft { tau: f64, gumbel: bool },
    /// Discrete constellation points.
    Hard,
}

/// Modulator output for one feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSequence {
    /// `softmax(logits)`, `M × K` row-major (JCM only).
    pub distribution: Option<Vec<f64>>,
    /// Relaxed one-hot weights used in soft mode, `M × K`.
    pub weights: Option<Vec<f64>>,
    /// Chosen constellation indices in hard mode.
    pub indices: Option<Vec<usize>>,
    /// The `M` transmitted complex values.
    pub symbols: Vec<Complex64>,
}

impl SymbolSequence {
    pub fn mean_power(&self) -> f64 {
        self.symbols.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.symbols.len() as f64
    }
}

/// Options for one pass through the whole link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkOptions {
    pub symbols: SymbolMode,
    /// Feedback SNR; `None` is a noiseless link.
    pub snr_db: Option<f64>,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Encoder output: `M × K` logits or `M × 2` analog symbols.
    pub encoded: Var,
    /// Transmitted symbols, `M × 2`.
    pub transmitted: Var,
    /// Reconstruction in normalized units, `N_c × 2N_t`.
    pub output: Var,
    pub sequence: SymbolSequence,
}

/// Standard Gumbel draw.
pub fn gumbel(rng: &mut Rng) -> f64 {
    let mut u: f64 = rng.random();
    while u <= 0.0 {
        u = rng.random();
    }
    -(-u.ln()).ln()
}

/// Circularly-symmetric complex Gaussian noise with `E|ε|² = 10^(−snr_db/10)`.
pub fn awgn_noise(m: usize, snr_db: f64, rng: &mut Rng) -> Vec<Complex64> {
    let sigma2 = 10f64.powf(-snr_db / 10.0);
    let s = (sigma2 / 2.0).sqrt();
    (0..m)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * s, im * s)
        })
        .collect()
}

/// `ŝ = s + ε`; `snr_db = None` (or `+∞`) passes symbols through unchanged.
pub fn awgn(symbols: &[Complex64], snr_db: Option<f64>, rng: &mut Rng) -> Vec<Complex64> {
    match snr_db {
        Some(snr) if snr.is_finite() => symbols
            .iter()
            .zip(awgn_noise(symbols.len(), snr, rng))
            .map(|(s, e)| s + e)
            .collect(),
        _ => symbols.to_vec(),
    }
}

fn row_softmax(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(k) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for x in row.iter_mut() {
            *x = (*x - mx).exp();
            s += *x;
        }
        row.iter_mut().for_each(|x| *x /= s);
    }
    out
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_index(row: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

fn symbols_from_pairs(v: &[f64]) -> Vec<Complex64> {
    v.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

fn pairs_from_symbols(s: &[Complex64]) -> Vec<f64> {
    s.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// Maps `M × K` logits to symbols.
///
/// Soft mode: `y = softmax((logits + g) / τ)` with Gumbel noise `g`, emitted
/// symbol `Σ_k y_k c_k` (differentiable; with `straight_through`, the forward
/// value is the one-hot of `argmax y`). Hard mode: one category per channel
/// use, by argmax or by sampling per `decision`, emitted as the exact point.
pub fn modulate_jcm_on_tape(
    tape: &mut Tape,
    logits: Var,
    cst: &Constellation,
    mode: SymbolMode,
    decision: HardDecision,
    straight_through: bool,
    rng: &mut Rng,
) -> Result<(Var, SymbolSequence)> {
    let k = cst.len();
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[1] != k {
        return Err(Error::Dimension(format!(
            "logits {shape:?} do not match a {k}-point constellation"
        )));
    }
    let m = shape[0];
    let distribution = row_softmax(tape.value(logits).data(), k);
    match mode {
        SymbolMode::Soft { tau, gumbel: use_gumbel } => {
            if tau <= 0.0 {
                return Err(Error::Contract(format!("temperature must be positive, got {tau}")));
            }
            let noisy = if use_gumbel {
                let g = Tensor::from_fn(&[m, k], |_| gumbel(rng));
                let g = tape.constant(g);
                tape.add(logits, g)?
            } else {
                logits
            };
            let scaled = tape.scale(noisy, 1.0 / tau)?;
            let mut y = tape.softmax(scaled)?;
            if straight_through {
                let vals = tape.value(y).data();
                let mut onehot = vec![0.0; m * k];
                for (r, row) in vals.chunks(k).enumerate() {
                    onehot[r * k + argmax(row)] = 1.0;
                }
                y = tape.straight_through(y, Tensor::raw(vec![m, k], onehot))?;
            }
            let c = tape.constant(Tensor::raw(vec![k, 2], cst.as_matrix()));
            let s = tape.matmul(y, c)?;
            let seq = SymbolSequence {
                distribution: Some(distribution),
                weights: Some(tape.value(y).data().to_vec()),
                indices: None,
                symbols: symbols_from_pairs(tape.value(s).data()),
            };
            Ok((s, seq))
        }
        SymbolMode::Hard => {
            let indices: Vec<usize> = distribution
                .chunks(k)
                .map(|row| match decision {
                    HardDecision::Argmax => argmax(row),
                    HardDecision::Sample => sample_index(row, rng),
                })
                .collect();
            let symbols: Vec<Complex64> = indices.iter().map(|&i| cst.point(i)).collect();
            let s = tape.constant(Tensor::raw(vec![m, 2], pairs_from_symbols(&symbols)));
            let seq = SymbolSequence {
                distribution: Some(distribution),
                weights: None,
                indices: Some(indices),
                symbols,
            };
            Ok((s, seq))
        }
    }
}

/// Tape-free variant of [`modulate_jcm_on_tape`].
pub fn modulate_jcm(
    logits: &Tensor,
    cst: &Constellation,
    mode: SymbolMode,
    decision: HardDecision,
    rng: &mut Rng,
) -> Result<SymbolSequence> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    modulate_jcm_on_tape(&mut tape, l, cst, mode, decision, false, rng).map(|(_, s)| s)
}

/// Transformer autoencoder for CSI feedback.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    constellation: Constellation,
    /// Multiplies raw `H` before tokenization.
    input_scale: f64,
    layout: Layout,
}

impl Model {
    /// Fresh parameters: affine weights `U(±1/√fan_in)`, biases 0, positional
    /// encodings `N(0, 0.02²)`, layernorm gains 1.
    pub fn new(cfg: ModelConfig, rng: &mut Rng) -> Result<Model> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        for (name, shape, init) in param_specs(&cfg) {
            let t = match init {
                Init::Uniform(fan_in) => {
                    let a = 1.0 / (fan_in as f64).sqrt();
                    Tensor::from_fn(&shape, |_| rng.random_range(-a..a))
                }
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::full(&shape, 1.0),
                Init::Normal(std) => Tensor::from_fn(&shape, |_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * std
                }),
            };
            store.insert(name, t)?;
        }
        Model::from_parts(cfg, store, 1.0)
    }

    pub fn from_parts(cfg: ModelConfig, params: ParamStore, input_scale: f64) -> Result<Model> {
        cfg.validate()?;
        if !(input_scale.is_finite() && input_scale > 0.0) {
            return Err(Error::Config(format!("input scale {input_scale} must be positive")));
        }
        let layout = Layout::resolve(&cfg, &params)?;
        let constellation = Constellation::from_kind(cfg.constellation, cfg.constellation_order)?;
        Ok(Model {
            cfg,
            params,
            constellation,
            input_scale,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn set_input_scale(&mut self, s: f64) -> Result<()> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Config(format!("input scale {s} must be positive")));
        }
        self.input_scale = s;
        Ok(())
    }

    pub fn compression_ratio(&self) -> f64 {
        self.cfg.compression_ratio()
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.params.bind(tape),
        }
    }

    fn check_dims(&self, h: &ChannelMatrix) -> Result<()> {
        if h.dims() != (self.cfg.n_t, self.cfg.n_c) {
            return Err(Error::Config(format!(
                "channel is {:?} but the model expects {}x{}",
                h.dims(),
                self.cfg.n_t,
                self.cfg.n_c
            )));
        }
        Ok(())
    }

    /// Normalized, realified `H`: row `n` is `[Re h_n, Im h_n] · scale`.
    pub fn realify(&self, h: &ChannelMatrix) -> Result<Tensor> {
        self.check_dims(h)?;
        let (n_t, n_c) = h.dims();
        let mut out = vec![0.0; n_c * 2 * n_t];
        for n in 0..n_c {
            for a in 0..n_t {
                let z = h.get(a, n) * self.input_scale;
                out[n * 2 * n_t + a] = z.re;
                out[n * 2 * n_t + n_t + a] = z.im;
            }
        }
        Ok(Tensor::raw(vec![n_c, 2 * n_t], out))
    }

    /// Inverse of [`Model::realify`].
    pub fn to_channel(&self, t: &Tensor) -> Result<ChannelMatrix> {
        let (n_t, n_c) = (self.cfg.n_t, self.cfg.n_c);
        if t.shape() != [n_c, 2 * n_t] {
            return Err(Error::Dimension(format!(
                "decoder output {:?} is not {n_c}x{}",
                t.shape(),
                2 * n_t
            )));
        }
        let d = t.data();
        let mut h = ChannelMatrix::zeros(n_t, n_c);
        for n in 0..n_c {
            for a in 0..n_t {
                let z = Complex64::new(d[n * 2 * n_t + a], d[n * 2 * n_t + n_t + a]);
                h.set(a, n, z / self.input_scale);
            }
        }
        Ok(h)
    }

    fn affine(&self, tape: &mut Tape, p: &Bound, x: Var, a: Affine) -> Result<Var> {
        let y = tape.matmul(x, p.get(a.w))?;
        tape.add(y, p.get(a.b))
    }

    fn norm(&self, tape: &mut Tape, p: &Bound, x: Var, n: Norm) -> Result<Var> {
        tape.layernorm(x, p.get(n.g), p.get(n.b), self.cfg.layernorm_eps)
    }

    fn block(&self, tape: &mut Tape, p: &Bound, x: Var, b: &Block) -> Result<Var> {
        let h = self.norm(tape, p, x, b.ln1)?;
        let q = self.affine(tape, p, h, b.q)?;
        let k = self.affine(tape, p, h, b.k)?;
        let v = self.affine(tape, p, h, b.v)?;
        let dh = self.cfg.head_dim();
        let inv = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for i in 0..self.cfg.heads {
            let (lo, hi) = (i * dh, (i + 1) * dh);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, inv)?;
            let attn = tape.softmax(scores)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let o = self.affine(tape, p, cat, b.o)?;
        let x = tape.add(x, o)?;
        let h = self.norm(tape, p, x, b.ln2)?;
        let h = self.affine(tape, p, h, b.fc1)?;
        let h = tape.gelu(h)?;
        let h = self.affine(tape, p, h, b.fc2)?;
        tape.add(x, h)
    }

    /// One-hot CQI assignment per token, `L × 16`.
    pub fn cqi_onehot(&self, k: &CqiReport) -> Result<Option<Tensor>> {
        k.validate()?;
        if k.mode() != self.cfg.cqi_mode {
            return Err(Error::Contract(format!(
                "CQI report is {} but the model uses {}",
                k.mode(),
                self.cfg.cqi_mode
            )));
        }
        let l = self.cfg.tokens();
        let index_of = |token: usize| -> Result<u8> {
            match k {
                CqiReport::None => unreachable!(),
                CqiReport::Wideband(w) => Ok(*w),
                CqiReport::Subband(v) => {
                    let per = self.cfg.subcarriers_per_subband;
                    if v.len() * per != l {
                        return Err(Error::Contract(format!(
                            "{} subband indices do not cover {l} subcarriers",
                            v.len()
                        )));
                    }
                    Ok(v[token / per])
                }
            }
        };
        if matches!(k, CqiReport::None) {
            return Ok(None);
        }
        let mut data = vec![0.0; l * NUM_CQI];
        for t in 0..l {
            data[t * NUM_CQI + index_of(t)? as usize] = 1.0;
        }
        Ok(Some(Tensor::raw(vec![l, NUM_CQI], data)))
    }

    /// `X_H`: one token per subcarrier, `L × N_embed`.
    pub fn tokenize_csi(&self, tape: &mut Tape, p: &Bound, h: &ChannelMatrix) -> Result<Var> {
        let x = tape.constant(self.realify(h)?);
        self.affine(tape, p, x, self.layout.enc.input)
    }

    /// `e_q`, `L × N_embed`; `None` in mode `none`.
    pub fn embed_cqi(&self, tape: &mut Tape, p: &Bound, side: Side, k: &CqiReport) -> Result<Option<Var>> {
        let Some(onehot) = self.cqi_onehot(k)? else {
            return Ok(None);
        };
        let stack = match side {
            Side::Encoder => &self.layout.enc,
            Side::Decoder => &self.layout.dec,
        };
        let x = tape.constant(onehot);
        self.affine(tape, p, x, stack.cqi).map(Some)
    }

    fn run_stack(&self, tape: &mut Tape, p: &Bound, stack: &Stack, mut x: Var) -> Result<Var> {
        for b in &stack.blocks {
            x = self.block(tape, p, x, b)?;
        }
        self.norm(tape, p, x, stack.ln_f)
    }

    /// `z_N`: encoder token features after the transformer stack.
    pub fn encode_tokens(&self, tape: &mut Tape, p: &Bound, h: &ChannelMatrix, k: &CqiReport) -> Result<Var> {
        let enc = &self.layout.enc;
        let mut z = self.tokenize_csi(tape, p, h)?;
        if let Some(e) = self.embed_cqi(tape, p, Side::Encoder, k)? {
            z = tape.add(z, e)?;
        }
        z = tape.add(z, p.get(enc.pos))?;
        self.run_stack(tape, p, enc, z)
    }

    /// Encoder `f(H, k)`: `M × K` logits (JCM) or `M × 2` unit-power symbols (analog).
    pub fn encode(&self, tape: &mut Tape, p: &Bound, h: &ChannelMatrix, k: &CqiReport) -> Result<Var> {
        let z = self.encode_tokens(tape, p, h, k)?;
        let (l, d) = (self.cfg.tokens(), self.cfg.embed_dim);
        let flat = tape.reshape(z, &[1, l * d])?;
        let out = self.affine(tape, p, flat, self.layout.enc.head)?;
        let m = self.cfg.channel_uses;
        match self.cfg.modulation {
            ModulationMode::Jcm => tape.reshape(out, &[m, self.cfg.constellation_order]),
            ModulationMode::Analog => {
                let s = tape.reshape(out, &[m, 2])?;
                tape.power_normalize(s, m as f64)
            }
        }
    }

    /// Turns the encoder output into transmitted symbols (`M × 2`).
    pub fn modulate(&self, tape: &mut Tape, encoded: Var, mode: SymbolMode, rng: &mut Rng) -> Result<(Var, SymbolSequence)> {
        match self.cfg.modulation {
            ModulationMode::Jcm => modulate_jcm_on_tape(
                tape,
                encoded,
                &self.constellation,
                mode,
                self.cfg.hard_decision,
                self.cfg.straight_through,
                rng,
            ),
            ModulationMode::Analog => {
                let seq = SymbolSequence {
                    distribution: None,
                    weights: None,
                    indices: None,
                    symbols: symbols_from_pairs(tape.value(encoded).data()),
                };
                Ok((encoded, seq))
            }
        }
    }

    /// Decoder `g(ŝ, k)`: `N_c × 2N_t` reals in normalized units.
    pub fn decode(&self, tape: &mut Tape, p: &Bound, received: Var, k: &CqiReport) -> Result<Var> {
        let m = self.cfg.channel_uses;
        if tape.value(received).numel() != 2 * m {
            return Err(Error::Config(format!(
                "decoder expects {m} complex values, got {} reals",
                tape.value(received).numel()
            )));
        }
        let dec = &self.layout.dec;
        let (l, d) = (self.cfg.tokens(), self.cfg.embed_dim);
        let flat = tape.reshape(received, &[1, 2 * m])?;
        let x = self.affine(tape, p, flat, dec.input)?;
        let mut z = tape.reshape(x, &[l, d])?;
        if let Some(e) = self.embed_cqi(tape, p, Side::Decoder, k)? {
            z = tape.add(z, e)?;
        }
        z = tape.add(z, p.get(dec.pos))?;
        let z = self.run_stack(tape, p, dec, z)?;
        self.affine(tape, p, z, dec.head)
    }

    /// Encoder → modulator → AWGN → decoder.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        h: &ChannelMatrix,
        k: &CqiReport,
        opts: LinkOptions,
        rng: &mut Rng,
    ) -> Result<Forward> {
        let encoded = self.encode(tape, p, h, k)?;
        let (transmitted, sequence) = self.modulate(tape, encoded, opts.symbols, rng)?;
        let received = match opts.snr_db {
            Some(snr) if snr.is_finite() => {
                let noise = awgn_noise(self.cfg.channel_uses, snr, rng);
                let n = tape.constant(Tensor::raw(
                    vec![self.cfg.channel_uses, 2],
                    pairs_from_symbols(&noise),
                ));
                tape.add(transmitted, n)?
            }
            _ => transmitted,
        };
        let output = self.decode(tape, p, received, k)?;
        Ok(Forward {
            encoded,
            transmitted,
            output,
            sequence,
        })
    }

    /// Reconstructs `Ĥ` in raw units without recording gradients.
    pub fn reconstruct(
        &self,
        h: &ChannelMatrix,
        k: &CqiReport,
        opts: LinkOptions,
        rng: &mut Rng,
    ) -> Result<(ChannelMatrix, SymbolSequence)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let f = self.forward(&mut tape, &p, h, k, opts, rng)?;
        Ok((self.to_channel(tape.value(f.output))?, f.sequence))
    }

    /// `Σ (out − target)²` on the tape, target = normalized realified `H`.
    pub fn squared_error(&self, tape: &mut Tape, output: Var, h: &ChannelMatrix) -> Result<Var> {
        let target = tape.constant(self.realify(h)?);
        let diff = tape.sub(output, target)?;
        let sq = tape.mul(diff, diff)?;
        tape.sum(sq)
    }

    /// Unused parameters for the configured CQI mode are still present; this
    /// lists which are inert.
    pub fn inert_params(&self) -> Vec<&str> {
        if self.cfg.cqi_mode == CqiMode::None {
            self.params
                .names()
                .iter()
                .filter(|n| n.contains(".cqi."))
                .map(String::as_str)
                .collect()
        } else {
            Vec::new()
        }
    }
}
