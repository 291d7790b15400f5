//! Forward reference of the stack-attention feature path at toy scale.
//!
//! Features live on a [`TokenGrid`] of `M` stack entries, each a grid of
//! `h x w` tokens with `C` channels. One extraction layer runs
//!
//! 1. a per-image block: spatial self-attention with residual, then a
//!    two-layer SiLU MLP with residual, independently for every stack entry;
//! 2. the focus-distance embedding `mlp(log d_i)` added to every token of
//!    entry `i`;
//! 3. stack attention: at every spatial token, softmax self-attention across
//!    the `M` entries with residual.
//!
//! [`collapse`] averages over the stack. Attention is single-head with
//! `1/sqrt(C)` scaling and no normalization layers.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::randomization::SeededRng;
use crate::raster::RgbImage;

/// `M x h x w` tokens of `C` channels, token-major:
/// `data[((i * h + y) * w + x) * C + ch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    m: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl TokenGrid {
    pub fn new(m: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || c == 0 || h == 0 || w == 0 {
            return Err(invalid("token grid dimensions must be >= 1"));
        }
        if data.len() != m * c * h * w {
            return Err(mismatch(format!(
                "expected {} token values for {m}x{c}x{h}x{w}, got {}",
                m * c * h * w,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("token values must be finite"));
        }
        Ok(TokenGrid { m, c, h, w, data })
    }

    pub fn random(m: usize, c: usize, h: usize, w: usize, rng: &mut SeededRng) -> Result<Self> {
        let data = (0..m * c * h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        TokenGrid::new(m, c, h, w, data)
    }

    pub fn stack_len(&self) -> usize {
        self.m
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn tokens_per_entry(&self) -> usize {
        self.h * self.w
    }

    pub fn token(&self, i: usize, y: usize, x: usize) -> &[f64] {
        let s = ((i * self.h + y) * self.w + x) * self.c;
        &self.data[s..s + self.c]
    }

    fn entry(&self, i: usize) -> &[f64] {
        let n = self.tokens_per_entry() * self.c;
        &self.data[i * n..(i + 1) * n]
    }

    fn entry_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.tokens_per_entry() * self.c;
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Stack entries reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<TokenGrid> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.m).collect::<Vec<_>>() {
            return Err(invalid("not a permutation of the stack"));
        }
        let data = order.iter().flat_map(|&i| self.entry(i).iter().copied()).collect();
        TokenGrid::new(self.m, self.c, self.h, self.w, data)
    }
}

/// `C x h x w` grid after collapsing the stack, token-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn value(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.data[(y * self.w + x) * self.c + ch]
    }
}

/// Affine map `y = W x + b`, `W` row-major `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(n_in: usize, n_out: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != n_in * n_out || bias.len() != n_out {
            return Err(mismatch(format!("linear {n_in}->{n_out} has wrong parameter sizes")));
        }
        Ok(Linear { n_in, n_out, weight, bias })
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Linear {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    /// Uniform in `[-1/sqrt(n_in), 1/sqrt(n_in)]`, zero bias.
    pub fn random(n_in: usize, n_out: usize, rng: &mut SeededRng) -> Self {
        let s = 1.0 / (n_in as f64).sqrt();
        Linear {
            n_in,
            n_out,
            weight: (0..n_in * n_out).map(|_| rng.uniform(-s, s)).collect(),
            bias: vec![0.0; n_out],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                let row = &self.weight[o * self.n_in..(o + 1) * self.n_in];
                row.iter().zip(x).fold(self.bias[o], |acc, (w, v)| acc + w * v)
            })
            .collect()
    }
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Two affine layers with SiLU in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = self.fc1.apply(x).into_iter().map(silu).collect();
        self.fc2.apply(&hidden)
    }
}

/// Focus-distance embedding: `1 -> C -> C` MLP on `log d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdMlp(pub Mlp);

impl FdMlp {
    pub fn zeros(c: usize) -> Self {
        FdMlp(Mlp {
            fc1: Linear::zeros(1, c),
            fc2: Linear::zeros(c, c),
        })
    }

    pub fn random(c: usize, rng: &mut SeededRng) -> Self {
        FdMlp(Mlp {
            fc1: Linear::random(1, c, rng),
            fc2: Linear::random(c, c, rng),
        })
    }

    pub fn embed(&self, fd_m: f64) -> Result<Vec<f64>> {
        if !(fd_m.is_finite() && fd_m > 0.0) {
            return Err(invalid(format!("focus distance {fd_m} must be positive")));
        }
        Ok(self.0.apply(&[fd_m.ln()]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl AttentionParams {
    pub fn random(c: usize, rng: &mut SeededRng) -> Self {
        AttentionParams {
            q: Linear::random(c, c, rng),
            k: Linear::random(c, c, rng),
            v: Linear::random(c, c, rng),
            o: Linear::random(c, c, rng),
        }
    }

    fn channels(&self) -> usize {
        self.q.n_in
    }

    fn check(&self, c: usize) -> Result<()> {
        for l in [&self.q, &self.k, &self.v, &self.o] {
            if l.n_in != c || l.n_out != c {
                return Err(mismatch(format!(
                    "attention projections must be {c}x{c}, got {}x{}",
                    l.n_out, l.n_in
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBlockParams {
    pub attn: AttentionParams,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackLayerParams {
    pub image_block: ImageBlockParams,
    pub fd_mlp: FdMlp,
    pub stack_attn: AttentionParams,
}

impl StackLayerParams {
    /// Random projections and image MLP; FD MLP zero as at initialization.
    pub fn random(c: usize, rng: &mut SeededRng) -> Self {
        StackLayerParams {
            image_block: ImageBlockParams {
                attn: AttentionParams::random(c, rng),
                mlp: Mlp {
                    fc1: Linear::random(c, c, rng),
                    fc2: Linear::random(c, c, rng),
                },
            },
            fd_mlp: FdMlp::zeros(c),
            stack_attn: AttentionParams::random(c, rng),
        }
    }
}

/// Attention maps and work counters recorded by [`stack_attention_traced`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTrace {
    /// One `M x M` row-major map per spatial token.
    pub weights: Vec<Vec<f64>>,
    /// Query-key dot products evaluated.
    pub score_evaluations: u64,
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Self-attention among `tokens` (each `C` long) with residual. Returns the
/// new tokens and the row-major attention map.
fn attend(tokens: &[Vec<f64>], p: &AttentionParams) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = tokens.len();
    let c = p.channels();
    let scale = 1.0 / (c as f64).sqrt();
    let q: Vec<Vec<f64>> = tokens.iter().map(|t| p.q.apply(t)).collect();
    let k: Vec<Vec<f64>> = tokens.iter().map(|t| p.k.apply(t)).collect();
    let v: Vec<Vec<f64>> = tokens.iter().map(|t| p.v.apply(t)).collect();
    let mut weights = Vec::with_capacity(n * n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let scores: Vec<f64> = k.iter().map(|kj| dot(&q[i], kj) * scale).collect();
        let a = softmax(&scores);
        let mut mixed = vec![0.0; c];
        for (aj, vj) in a.iter().zip(&v) {
            for ch in 0..c {
                mixed[ch] += aj * vj[ch];
            }
        }
        let proj = p.o.apply(&mixed);
        out.push(tokens[i].iter().zip(&proj).map(|(x, y)| x + y).collect());
        weights.extend(a);
    }
    (out, weights)
}

pub fn stack_attention(tokens: &TokenGrid, params: &AttentionParams) -> Result<TokenGrid> {
    Ok(stack_attention_traced(tokens, params)?.0)
}

pub fn stack_attention_traced(tokens: &TokenGrid, params: &AttentionParams) -> Result<(TokenGrid, AttentionTrace)> {
    params.check(tokens.c)?;
    let (m, h, w) = (tokens.m, tokens.h, tokens.w);
    let mut out = tokens.clone();
    let mut trace = AttentionTrace::default();
    for y in 0..h {
        for x in 0..w {
            let column: Vec<Vec<f64>> = (0..m).map(|i| tokens.token(i, y, x).to_vec()).collect();
            let (new, weights) = attend(&column, params);
            trace.score_evaluations += (m * m) as u64;
            trace.weights.push(weights);
            for (i, t) in new.into_iter().enumerate() {
                let s = ((i * h + y) * w + x) * tokens.c;
                out.data[s..s + tokens.c].copy_from_slice(&t);
            }
        }
    }
    Ok((out, trace))
}

/// Spatial attention plus MLP, each with residual, per stack entry.
pub fn image_block(tokens: &TokenGrid, params: &ImageBlockParams) -> Result<TokenGrid> {
    let c = tokens.c;
    params.attn.check(c)?;
    if params.mlp.fc1.n_in != c || params.mlp.fc2.n_out != c || params.mlp.fc1.n_out != params.mlp.fc2.n_in {
        return Err(mismatch("image-block MLP does not map C to C"));
    }
    let mut out = tokens.clone();
    for i in 0..tokens.m {
        let entry: Vec<Vec<f64>> = tokens.entry(i).chunks(c).map(|t| t.to_vec()).collect();
        let (attended, _) = attend(&entry, &params.attn);
        let dst = out.entry_mut(i);
        for (n, t) in attended.iter().enumerate() {
            let m = params.mlp.apply(t);
            for ch in 0..c {
                dst[n * c + ch] = t[ch] + m[ch];
            }
        }
    }
    Ok(out)
}

/// Adds `fd_mlp(log d_i)` to every token of stack entry `i`.
pub fn add_fd_embedding(tokens: &TokenGrid, fds_m: &[f64], fd_mlp: &FdMlp) -> Result<TokenGrid> {
    if fds_m.len() != tokens.m {
        return Err(mismatch(format!("{} focus distances for {} stack entries", fds_m.len(), tokens.m)));
    }
    if fd_mlp.0.fc2.n_out != tokens.c {
        return Err(mismatch("focus-distance embedding width differs from C"));
    }
    let c = tokens.c;
    let mut out = tokens.clone();
    for (i, &fd) in fds_m.iter().enumerate() {
        let e = fd_mlp.embed(fd)?;
        for t in out.entry_mut(i).chunks_mut(c) {
            for ch in 0..c {
                t[ch] += e[ch];
            }
        }
    }
    Ok(out)
}

pub fn collapse(tokens: &TokenGrid) -> FeatureGrid {
    let n = tokens.tokens_per_entry() * tokens.c;
    let mut data = vec![0.0; n];
    for i in 0..tokens.m {
        for (d, v) in data.iter_mut().zip(tokens.entry(i)) {
            *d += v;
        }
    }
    let inv = tokens.m as f64;
    data.iter_mut().for_each(|d| *d /= inv);
    FeatureGrid {
        c: tokens.c,
        h: tokens.h,
        w: tokens.w,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub inject_fd: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions { inject_fd: true }
    }
}

/// `layers.len()` extraction layers followed by the stack collapse.
pub fn forward_extract(
    tokens: &TokenGrid,
    fds_m: &[f64],
    layers: &[StackLayerParams],
    opts: ForwardOptions,
) -> Result<FeatureGrid> {
    if fds_m.len() != tokens.m {
        return Err(mismatch(format!("{} focus distances for {} stack entries", fds_m.len(), tokens.m)));
    }
    let mut x = tokens.clone();
    for layer in layers {
        x = image_block(&x, &layer.image_block)?;
        if opts.inject_fd {
            x = add_fd_embedding(&x, fds_m, &layer.fd_mlp)?;
        }
        x = stack_attention(&x, &layer.stack_attn)?;
    }
    Ok(collapse(&x))
}

/// Non-overlapping `patch x patch` linear embedding of each image to `C`
/// channels. `proj` maps the `3 * patch^2` patch values (row-major, RGB
/// interleaved) to `C`.
pub fn patch_embed(images: &[RgbImage], patch: usize, proj: &Linear) -> Result<TokenGrid> {
    let first = images.first().ok_or_else(|| invalid("no images to embed"))?;
    let (w, h) = first.dims();
    if patch == 0 || w % patch != 0 || h % patch != 0 {
        return Err(invalid(format!("patch size {patch} must divide {w}x{h}")));
    }
    if images.iter().any(|i| i.dims() != (w, h)) {
        return Err(mismatch("stack images differ in size"));
    }
    if proj.n_in != 3 * patch * patch {
        return Err(mismatch(format!("patch projection expects {} inputs", 3 * patch * patch)));
    }
    let (gh, gw) = (h / patch, w / patch);
    let mut data = Vec::with_capacity(images.len() * gh * gw * proj.n_out);
    for img in images {
        for ty in 0..gh {
            for tx in 0..gw {
                let mut v = Vec::with_capacity(proj.n_in);
                for py in 0..patch {
                    for px in 0..patch {
                        let p = img.pixel(tx * patch + px, ty * patch + py);
                        v.extend(p.iter().map(|c| *c as f64));
                    }
                }
                data.extend(proj.apply(&v));
            }
        }
    }
    TokenGrid::new(images.len(), proj.n_out, gh, gw, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry_weight_is_one() {
        let mut rng = SeededRng::new(1);
        let t = TokenGrid::random(1, 3, 2, 2, &mut rng).unwrap();
        let p = AttentionParams::random(3, &mut rng);
        let (out, trace) = stack_attention_traced(&t, &p).unwrap();
        assert!(trace.weights.iter().all(|w| w == &vec![1.0]));
        let x = t.token(0, 1, 0);
        let expected: Vec<f64> = x.iter().zip(p.o.apply(&p.v.apply(x))).map(|(a, b)| a + b).collect();
        assert_eq!(out.token(0, 1, 0), expected.as_slice());
    }

    #[test]
    fn zero_fd_mlp_embeds_to_zero() {
        let mlp = FdMlp::zeros(4);
        for d in [0.3, 1.0, 12.0] {
            assert_eq!(mlp.embed(d).unwrap(), vec![0.0; 4]);
        }
        assert!(mlp.embed(0.0).is_err());
    }

    #[test]
    fn scalar_fd_mlp_by_hand() {
        let mlp = FdMlp(Mlp {
            fc1: Linear::new(1, 1, vec![2.0], vec![0.5]).unwrap(),
            fc2: Linear::new(1, 1, vec![-3.0], vec![1.0]).unwrap(),
        });
        let d: f64 = 2.0;
        let h = 2.0 * d.ln() + 0.5;
        let expected = -3.0 * (h / (1.0 + (-h).exp())) + 1.0;
        assert_eq!(mlp.embed(d).unwrap(), vec![expected]);
    }

    #[test]
    fn collapse_of_opposites_is_zero() {
        let mut rng = SeededRng::new(5);
        let a = TokenGrid::random(1, 2, 2, 3, &mut rng).unwrap();
        let mut data = a.data().to_vec();
        data.extend(a.data().iter().map(|v| -v));
        let t = TokenGrid::new(2, 2, 2, 3, data).unwrap();
        assert!(collapse(&t).data.iter().all(|v| *v == 0.0));
        assert_eq!(collapse(&a).data, a.data());
    }

    #[test]
    fn patch_embed_shapes() {
        let img = RgbImage::filled(4, 6, [0.5, 0.25, 1.0]).unwrap();
        let mut rng = SeededRng::new(2);
        let proj = Linear::random(12, 5, &mut rng);
        let t = patch_embed(&[img.clone(), img.clone()], 2, &proj).unwrap();
        assert_eq!((t.stack_len(), t.channels(), t.grid_dims()), (2, 5, (3, 2)));
        assert!(patch_embed(&[img], 4, &Linear::random(48, 5, &mut rng)).is_err());
    }

    #[test]
    fn mismatched_fds_are_rejected() {
        let mut rng = SeededRng::new(0);
        let t = TokenGrid::random(2, 2, 1, 1, &mut rng).unwrap();
        let layers = vec![StackLayerParams::random(2, &mut rng)];
        assert!(forward_extract(&t, &[1.0], &layers, ForwardOptions::default()).is_err());
    }
}
