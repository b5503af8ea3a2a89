//! Serialized feed-forward denoisers (`DNSR` files).
//!
//! Layout, all little-endian:
//!
//! ```text
//! "DNSR" | u32 version = 1 | u32 input_dim | u32 node_count | node*
//! ```
//!
//! Value 0 is the input; node `i` produces value `i + 1`; the output is the
//! last value and must have length `input_dim`. Each node starts with a `u32`
//! kind followed by `u32` header fields and `f32` payload:
//!
//! | kind | node        | header                                   | payload                                   |
//! |------|-------------|------------------------------------------|-------------------------------------------|
//! | 1    | affine      | src, out_dim                             | weight `[out_dim][in]`, bias `[out_dim]`  |
//! | 2    | conv2d      | src, in_ch, out_ch, height, width, ksize | weight `[out][in][k][k]`, bias `[out]`    |
//! | 3    | relu        | src                                      |                                           |
//! | 4    | add         | src_a, src_b                             |                                           |
//! | 5    | sigma_embed | src, n_levels                            | levels `[n]`, table `[n][len(src)]`       |
//!
//! Convolutions use zero "same" padding with odd `ksize` on channel-major
//! `[ch][height][width]` tensors. `sigma_embed` adds the table row whose level
//! is nearest to the query σ in log space.

use std::path::Path;

use nalgebra::DVector;

use super::Denoiser;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"DNSR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum GraphNode {
    Affine {
        src: usize,
        out_dim: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
    },
    Conv2d {
        src: usize,
        in_ch: usize,
        out_ch: usize,
        height: usize,
        width: usize,
        ksize: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
    },
    Relu {
        src: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    SigmaEmbed {
        src: usize,
        levels: Vec<f32>,
        table: Vec<f32>,
    },
}

impl GraphNode {
    fn kind(&self) -> u32 {
        match self {
            GraphNode::Affine { .. } => 1,
            GraphNode::Conv2d { .. } => 2,
            GraphNode::Relu { .. } => 3,
            GraphNode::Add { .. } => 4,
            GraphNode::SigmaEmbed { .. } => 5,
        }
    }
}

/// A validated denoiser graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserGraph {
    input_dim: usize,
    nodes: Vec<GraphNode>,
    lens: Vec<usize>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl DenoiserGraph {
    pub fn new(input_dim: usize, nodes: Vec<GraphNode>) -> Result<Self> {
        let mut lens = vec![input_dim];
        for (i, node) in nodes.iter().enumerate() {
            let src_len = |s: usize| {
                lens.get(s)
                    .copied()
                    .ok_or_else(|| fmt_err(format!("node {i} reads value {s} before it exists")))
            };
            let shape = |what: &str, expected: usize, found: usize| {
                fmt_err(format!("node {i}: {what} expected {expected}, found {found}"))
            };
            let out = match node {
                GraphNode::Affine {
                    src,
                    out_dim,
                    weight,
                    bias,
                } => {
                    let n_in = src_len(*src)?;
                    if weight.len() != out_dim * n_in {
                        return Err(shape("affine weight", out_dim * n_in, weight.len()));
                    }
                    if bias.len() != *out_dim {
                        return Err(shape("affine bias", *out_dim, bias.len()));
                    }
                    *out_dim
                }
                GraphNode::Conv2d {
                    src,
                    in_ch,
                    out_ch,
                    height,
                    width,
                    ksize,
                    weight,
                    bias,
                } => {
                    let n_in = src_len(*src)?;
                    if n_in != in_ch * height * width {
                        return Err(shape("conv input", in_ch * height * width, n_in));
                    }
                    if ksize % 2 == 0 {
                        return Err(fmt_err(format!("node {i}: conv kernel size {ksize} must be odd")));
                    }
                    if weight.len() != out_ch * in_ch * ksize * ksize {
                        return Err(shape("conv weight", out_ch * in_ch * ksize * ksize, weight.len()));
                    }
                    if bias.len() != *out_ch {
                        return Err(shape("conv bias", *out_ch, bias.len()));
                    }
                    out_ch * height * width
                }
                GraphNode::Relu { src } => src_len(*src)?,
                GraphNode::Add { a, b } => {
                    let (la, lb) = (src_len(*a)?, src_len(*b)?);
                    if la != lb {
                        return Err(shape("add operand", la, lb));
                    }
                    la
                }
                GraphNode::SigmaEmbed { src, levels, table } => {
                    let n = src_len(*src)?;
                    if levels.is_empty() {
                        return Err(fmt_err(format!("node {i}: embedding has no levels")));
                    }
                    if table.len() != levels.len() * n {
                        return Err(shape("embedding table", levels.len() * n, table.len()));
                    }
                    n
                }
            };
            lens.push(out);
        }
        if *lens.last().unwrap_or(&0) != input_dim {
            return Err(Error::DimensionMismatch {
                what: "denoiser graph output",
                expected: input_dim,
                found: *lens.last().unwrap_or(&0),
            });
        }
        Ok(Self { input_dim, nodes, lens })
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    fn forward_all(&self, sigma: f64, x: &DVector<f64>) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "denoiser input",
                expected: self.input_dim,
                found: x.len(),
            });
        }
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len() + 1);
        vals.push(x.as_slice().to_vec());
        for node in &self.nodes {
            let out = match node {
                GraphNode::Affine {
                    src,
                    out_dim,
                    weight,
                    bias,
                } => {
                    let inp = &vals[*src];
                    let n = inp.len();
                    (0..*out_dim)
                        .map(|r| {
                            let row = &weight[r * n..(r + 1) * n];
                            f64::from(bias[r]) + row.iter().zip(inp).map(|(w, v)| f64::from(*w) * v).sum::<f64>()
                        })
                        .collect()
                }
                GraphNode::Conv2d {
                    src,
                    in_ch,
                    out_ch,
                    height,
                    width,
                    ksize,
                    weight,
                    bias,
                } => conv_forward(&vals[*src], *in_ch, *out_ch, *height, *width, *ksize, weight, bias),
                GraphNode::Relu { src } => vals[*src].iter().map(|v| v.max(0.0)).collect(),
                GraphNode::Add { a, b } => vals[*a].iter().zip(&vals[*b]).map(|(p, q)| p + q).collect(),
                GraphNode::SigmaEmbed { src, levels, table } => {
                    let n = vals[*src].len();
                    let k = nearest_level(levels, sigma);
                    vals[*src]
                        .iter()
                        .zip(&table[k * n..(k + 1) * n])
                        .map(|(v, e)| v + f64::from(*e))
                        .collect()
                }
            };
            vals.push(out);
        }
        Ok(vals)
    }

    /// Encodes the graph in the `DNSR` layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        let put_f = |out: &mut Vec<u8>, vs: &[f32]| {
            for v in vs {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        put(&mut out, VERSION as usize);
        put(&mut out, self.input_dim);
        put(&mut out, self.nodes.len());
        for node in &self.nodes {
            put(&mut out, node.kind() as usize);
            match node {
                GraphNode::Affine {
                    src,
                    out_dim,
                    weight,
                    bias,
                } => {
                    put(&mut out, *src);
                    put(&mut out, *out_dim);
                    put_f(&mut out, weight);
                    put_f(&mut out, bias);
                }
                GraphNode::Conv2d {
                    src,
                    in_ch,
                    out_ch,
                    height,
                    width,
                    ksize,
                    weight,
                    bias,
                } => {
                    for v in [*src, *in_ch, *out_ch, *height, *width, *ksize] {
                        put(&mut out, v);
                    }
                    put_f(&mut out, weight);
                    put_f(&mut out, bias);
                }
                GraphNode::Relu { src } => put(&mut out, *src),
                GraphNode::Add { a, b } => {
                    put(&mut out, *a);
                    put(&mut out, *b);
                }
                GraphNode::SigmaEmbed { src, levels, table } => {
                    put(&mut out, *src);
                    put(&mut out, levels.len());
                    put_f(&mut out, levels);
                    put_f(&mut out, table);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(fmt_err("missing DNSR magic"));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(fmt_err(format!("unsupported version {version}")));
        }
        let input_dim = cur.usize()?;
        let count = cur.usize()?;
        let mut lens = vec![input_dim];
        let mut nodes = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let kind = cur.u32()?;
            let src_len = |lens: &[usize], s: usize| {
                lens.get(s)
                    .copied()
                    .ok_or_else(|| fmt_err(format!("node {i} reads value {s} before it exists")))
            };
            let node = match kind {
                1 => {
                    let src = cur.usize()?;
                    let out_dim = cur.usize()?;
                    let n_in = src_len(&lens, src)?;
                    let weight = cur.f32s(out_dim.checked_mul(n_in).ok_or_else(|| fmt_err("affine too large"))?)?;
                    let bias = cur.f32s(out_dim)?;
                    lens.push(out_dim);
                    GraphNode::Affine {
                        src,
                        out_dim,
                        weight,
                        bias,
                    }
                }
                2 => {
                    let [src, in_ch, out_ch, height, width, ksize] = [
                        cur.usize()?,
                        cur.usize()?,
                        cur.usize()?,
                        cur.usize()?,
                        cur.usize()?,
                        cur.usize()?,
                    ];
                    src_len(&lens, src)?;
                    let wn = out_ch
                        .checked_mul(in_ch)
                        .and_then(|v| v.checked_mul(ksize))
                        .and_then(|v| v.checked_mul(ksize))
                        .ok_or_else(|| fmt_err("conv too large"))?;
                    let weight = cur.f32s(wn)?;
                    let bias = cur.f32s(out_ch)?;
                    lens.push(out_ch * height * width);
                    GraphNode::Conv2d {
                        src,
                        in_ch,
                        out_ch,
                        height,
                        width,
                        ksize,
                        weight,
                        bias,
                    }
                }
                3 => {
                    let src = cur.usize()?;
                    lens.push(src_len(&lens, src)?);
                    GraphNode::Relu { src }
                }
                4 => {
                    let (a, b) = (cur.usize()?, cur.usize()?);
                    lens.push(src_len(&lens, a)?);
                    src_len(&lens, b)?;
                    GraphNode::Add { a, b }
                }
                5 => {
                    let src = cur.usize()?;
                    let n_levels = cur.usize()?;
                    let n = src_len(&lens, src)?;
                    let levels = cur.f32s(n_levels)?;
                    let table = cur.f32s(n_levels.checked_mul(n).ok_or_else(|| fmt_err("table too large"))?)?;
                    lens.push(n);
                    GraphNode::SigmaEmbed { src, levels, table }
                }
                other => return Err(Error::UnsupportedNode(other)),
            };
            nodes.push(node);
        }
        if cur.pos != bytes.len() {
            return Err(fmt_err(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Self::new(input_dim, nodes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(fmt_err(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| fmt_err("payload too large"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

fn nearest_level(levels: &[f32], sigma: f64) -> usize {
    let key = |l: f32| {
        let l = f64::from(l);
        if sigma > 0.0 && l > 0.0 {
            (l.ln() - sigma.ln()).abs()
        } else {
            (l - sigma).abs()
        }
    };
    let mut best = 0;
    for (k, l) in levels.iter().enumerate() {
        if key(*l) < key(levels[best]) {
            best = k;
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    inp: &[f64],
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
    k: usize,
    weight: &[f32],
    bias: &[f32],
) -> Vec<f64> {
    let p = (k / 2) as isize;
    let mut out = vec![0.0; out_ch * h * w];
    for co in 0..out_ch {
        for y in 0..h {
            for x in 0..w {
                let mut acc = f64::from(bias[co]);
                for ci in 0..in_ch {
                    for dy in 0..k {
                        let yy = y as isize + dy as isize - p;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for dx in 0..k {
                            let xx = x as isize + dx as isize - p;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let wv = weight[((co * in_ch + ci) * k + dy) * k + dx];
                            acc += f64::from(wv) * inp[(ci * h + yy as usize) * w + xx as usize];
                        }
                    }
                }
                out[(co * h + y) * w + x] = acc;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    g: &[f64],
    grad_in: &mut [f64],
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
    k: usize,
    weight: &[f32],
) {
    let p = (k / 2) as isize;
    for co in 0..out_ch {
        for y in 0..h {
            for x in 0..w {
                let gv = g[(co * h + y) * w + x];
                if gv == 0.0 {
                    continue;
                }
                for ci in 0..in_ch {
                    for dy in 0..k {
                        let yy = y as isize + dy as isize - p;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for dx in 0..k {
                            let xx = x as isize + dx as isize - p;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let wv = weight[((co * in_ch + ci) * k + dy) * k + dx];
                            grad_in[(ci * h + yy as usize) * w + xx as usize] += f64::from(wv) * gv;
                        }
                    }
                }
            }
        }
    }
}

impl Denoiser for DenoiserGraph {
    fn dim(&self) -> usize {
        self.input_dim
    }

    fn denoise(&self, sigma: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut vals = self.forward_all(sigma, x)?;
        Ok(DVector::from_vec(vals.pop().expect("input value present")))
    }

    /// Reverse-mode pass through the graph.
    fn vjp(&self, sigma: f64, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let vals = self.forward_all(sigma, x)?;
        let mut grads: Vec<Vec<f64>> = self.lens.iter().map(|n| vec![0.0; *n]).collect();
        grads[self.nodes.len()].copy_from_slice(v.as_slice());
        for (i, node) in self.nodes.iter().enumerate().rev() {
            let g = std::mem::take(&mut grads[i + 1]);
            match node {
                GraphNode::Affine { src, out_dim, weight, .. } => {
                    let n = self.lens[*src];
                    let gs = &mut grads[*src];
                    for r in 0..*out_dim {
                        if g[r] == 0.0 {
                            continue;
                        }
                        for (c, wv) in weight[r * n..(r + 1) * n].iter().enumerate() {
                            gs[c] += f64::from(*wv) * g[r];
                        }
                    }
                }
                GraphNode::Conv2d {
                    src,
                    in_ch,
                    out_ch,
                    height,
                    width,
                    ksize,
                    weight,
                    ..
                } => conv_backward(&g, &mut grads[*src], *in_ch, *out_ch, *height, *width, *ksize, weight),
                GraphNode::Relu { src } => {
                    for ((gs, gi), xv) in grads[*src].iter_mut().zip(&g).zip(&vals[*src]) {
                        if *xv > 0.0 {
                            *gs += gi;
                        }
                    }
                }
                GraphNode::Add { a, b } => {
                    for (gs, gi) in grads[*a].iter_mut().zip(&g) {
                        *gs += gi;
                    }
                    for (gs, gi) in grads[*b].iter_mut().zip(&g) {
                        *gs += gi;
                    }
                }
                GraphNode::SigmaEmbed { src, .. } => {
                    for (gs, gi) in grads[*src].iter_mut().zip(&g) {
                        *gs += gi;
                    }
                }
            }
        }
        Ok(DVector::from_vec(std::mem::take(&mut grads[0])))
    }

    fn exact_vjp(&self) -> bool {
        true
    }
}

/// Loads a `DNSR` file. Nothing is returned unless the whole file parses and
/// validates.
pub fn load_external_denoiser(path: &Path) -> Result<DenoiserGraph> {
    DenoiserGraph::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_graph() -> DenoiserGraph {
        // conv -> relu -> affine, plus skip from input and a sigma embedding
        let nodes = vec![
            GraphNode::Conv2d {
                src: 0,
                in_ch: 1,
                out_ch: 2,
                height: 2,
                width: 3,
                ksize: 3,
                weight: (0..18).map(|i| ((i * 7) % 5) as f32 * 0.1 - 0.2).collect(),
                bias: vec![0.05, -0.1],
            },
            GraphNode::Relu { src: 1 },
            GraphNode::Affine {
                src: 2,
                out_dim: 6,
                weight: (0..72).map(|i| ((i * 11) % 9) as f32 * 0.05 - 0.2).collect(),
                bias: vec![0.0, 0.1, 0.0, -0.1, 0.2, 0.0],
            },
            GraphNode::Add { a: 3, b: 0 },
            GraphNode::SigmaEmbed {
                src: 4,
                levels: vec![0.01, 1.0, 10.0],
                table: (0..18).map(|i| i as f32 * 0.01).collect(),
            },
        ];
        DenoiserGraph::new(6, nodes).unwrap()
    }

    #[test]
    fn identity_graph() {
        let g = DenoiserGraph::new(4, Vec::new()).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        assert_eq!(g.denoise(0.3, &x).unwrap(), x);
        let back = DenoiserGraph::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn round_trip_and_vjp_matches_finite_differences() {
        let g = small_graph();
        let back = DenoiserGraph::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back, g);
        let x = DVector::from_vec(vec![0.3, -0.2, 0.9, 0.1, -0.7, 0.4]);
        let v = DVector::from_vec(vec![1.0, 0.5, -0.3, 0.2, 0.0, -1.0]);
        let vjp = g.vjp(1.1, &x, &v).unwrap();
        let h = 1e-6;
        for k in 0..6 {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (g.denoise(1.1, &xp).unwrap() - g.denoise(1.1, &xm).unwrap()).dot(&v) / (2.0 * h);
            assert!((fd - vjp[k]).abs() < 1e-6, "{k}: {fd} vs {}", vjp[k]);
        }
    }

    #[test]
    fn nearest_level_in_log_space() {
        let levels = [0.01f32, 1.0, 10.0];
        assert_eq!(nearest_level(&levels, 0.0), 0);
        assert_eq!(nearest_level(&levels, 0.08), 0);
        assert_eq!(nearest_level(&levels, 0.12), 1);
        assert_eq!(nearest_level(&levels, 50.0), 2);
    }

    #[test]
    fn malformed_inputs_error() {
        let bytes = small_graph().to_bytes();
        assert!(matches!(DenoiserGraph::from_bytes(&bytes[..bytes.len() - 2]), Err(Error::Format(_))));
        let mut bad_kind = bytes.clone();
        bad_kind[16..20].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(DenoiserGraph::from_bytes(&bad_kind), Err(Error::UnsupportedNode(9))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(DenoiserGraph::from_bytes(&extra).is_err());
        assert!(matches!(DenoiserGraph::from_bytes(b"XXXX"), Err(Error::Format(_))));
        let wrong_out = DenoiserGraph::new(
            3,
            vec![GraphNode::Affine {
                src: 0,
                out_dim: 2,
                weight: vec![0.0; 6],
                bias: vec![0.0; 2],
            }],
        );
        assert!(matches!(wrong_out, Err(Error::DimensionMismatch { .. })));
    }
}
