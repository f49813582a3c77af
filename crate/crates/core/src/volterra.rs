//! Second-order Volterra convolution layers.
//!
//! A channel computes, for every output pixel, a linear term plus a
//! symmetric quadratic form over the zero-padded `k x k x c_in` input patch:
//!
//! ```text
//! y = Σ_τ h1[τ] x_τ + Σ_{τ1,τ2} h2[τ1][τ2] x_τ1 x_τ2
//! ```
//!
//! `h2` is symmetric, so only its upper triangle (row-major, `i <= j`) is
//! stored; an off-diagonal stored entry therefore contributes twice. Taps are
//! flattened as `τ = c * k² + dy * k + dx`. There is no bias, no activation
//! and no stride: spatial size is preserved. Higher orders come from
//! stacking banks with [`cascade`].

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor3};
use std::io::{Read, Write};

const BANK_MAGIC: &[u8; 4] = b"VLTB";
const BANK_VERSION: u16 = 1;

/// Index of the stored entry `(i, j)`, `i <= j`, in a `p x p` upper triangle.
#[inline]
pub fn tri_index(p: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < p);
    i * (2 * p - i + 1) / 2 + (j - i)
}

/// One output map of a bank.
#[derive(Clone, Debug, PartialEq)]
pub struct VolterraChannel {
    filter_size: usize,
    in_channels: usize,
    /// First input channel of the bank's input this channel reads.
    input_offset: usize,
    linear: Vec<f64>,
    quadratic: Vec<f64>,
}

impl VolterraChannel {
    /// All-zero channel. `filter_size` must be odd for same-padding.
    pub fn zeros(filter_size: usize, in_channels: usize, input_offset: usize) -> Result<Self> {
        if filter_size == 0 || filter_size.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "filter size must be odd and positive, got {filter_size}"
            )));
        }
        if in_channels == 0 {
            return Err(Error::InvalidInput("a channel needs at least one input".into()));
        }
        let p = filter_size * filter_size * in_channels;
        Ok(VolterraChannel {
            filter_size,
            in_channels,
            input_offset,
            linear: vec![0.0; p],
            quadratic: vec![0.0; p * (p + 1) / 2],
        })
    }

    /// Uniform init: linear in `±sqrt(6/p)`, quadratic in a tenth of that.
    pub fn random(
        filter_size: usize,
        in_channels: usize,
        input_offset: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut ch = Self::zeros(filter_size, in_channels, input_offset)?;
        let bound = (6.0 / ch.taps() as f64).sqrt();
        ch.linear.iter_mut().for_each(|v| *v = rng.uniform(-bound, bound));
        ch.quadratic
            .iter_mut()
            .for_each(|v| *v = 0.1 * rng.uniform(-bound, bound));
        Ok(ch)
    }

    pub fn filter_size(&self) -> usize {
        self.filter_size
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn input_offset(&self) -> usize {
        self.input_offset
    }

    /// Patch length `p = k² * c_in`.
    pub fn taps(&self) -> usize {
        self.linear.len()
    }

    pub fn param_count(&self) -> usize {
        self.linear.len() + self.quadratic.len()
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn linear_mut(&mut self) -> &mut [f64] {
        &mut self.linear
    }

    /// Stored upper triangle of the quadratic kernel.
    pub fn quadratic(&self) -> &[f64] {
        &self.quadratic
    }

    pub fn quadratic_mut(&mut self) -> &mut [f64] {
        &mut self.quadratic
    }

    /// Symmetric kernel entry `h2[i][j]`.
    pub fn h2(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.quadratic[tri_index(self.taps(), a, b)]
    }

    /// `(channel, dy, dx)` of tap `τ`.
    pub fn tap_position(&self, tau: usize) -> (usize, usize, usize) {
        let k2 = self.filter_size * self.filter_size;
        let c = tau / k2;
        let rem = tau % k2;
        (c, rem / self.filter_size, rem % self.filter_size)
    }

    fn radius(&self) -> usize {
        self.filter_size / 2
    }
}

/// How a bank combines its channel outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BankOutput {
    /// Channel `i` becomes output channel `i`.
    Stacked,
    /// All channel outputs are summed into a single output channel.
    Summed,
}

/// A set of Volterra channels reading one input tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct VolterraBank {
    in_channels: usize,
    channels: Vec<VolterraChannel>,
    output: BankOutput,
}

/// Gradients of one bank evaluation.
#[derive(Clone, Debug)]
pub struct BankGrad {
    /// Flattened like [`VolterraBank::params`].
    pub params: Vec<f64>,
    pub input: Option<Tensor3>,
}

impl VolterraBank {
    pub fn new(
        in_channels: usize,
        channels: Vec<VolterraChannel>,
        output: BankOutput,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidInput("a bank needs at least one channel".into()));
        }
        for (i, ch) in channels.iter().enumerate() {
            if ch.input_offset + ch.in_channels > in_channels {
                return Err(Error::Shape(format!(
                    "channel {i} reads inputs {}..{} of a {in_channels}-channel input",
                    ch.input_offset,
                    ch.input_offset + ch.in_channels
                )));
            }
        }
        Ok(VolterraBank {
            in_channels,
            channels,
            output,
        })
    }

    /// Encoder bank: every channel reads every input channel. `mix` lists
    /// `(channel count, filter size)` groups in order.
    pub fn encoder(in_channels: usize, mix: &[(usize, usize)], rng: &mut Rng) -> Result<Self> {
        let mut channels = Vec::new();
        for &(count, k) in mix {
            for _ in 0..count {
                channels.push(VolterraChannel::random(k, in_channels, 0, rng)?);
            }
        }
        Self::new(in_channels, channels, BankOutput::Stacked)
    }

    /// Decoder mirroring an encoder built from `mix`: channel `i` reads
    /// latent channel `i` with the same filter size and the outputs are
    /// summed into one channel.
    pub fn mirrored_decoder(mix: &[(usize, usize)], rng: &mut Rng) -> Result<Self> {
        let mut channels = Vec::new();
        for &(count, k) in mix {
            for _ in 0..count {
                let offset = channels.len();
                channels.push(VolterraChannel::random(k, 1, offset, rng)?);
            }
        }
        let n = channels.len();
        Self::new(n, channels, BankOutput::Summed)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        match self.output {
            BankOutput::Stacked => self.channels.len(),
            BankOutput::Summed => 1,
        }
    }

    pub fn output_mode(&self) -> BankOutput {
        self.output
    }

    pub fn channels(&self) -> &[VolterraChannel] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [VolterraChannel] {
        &mut self.channels
    }

    /// `Σ_channels k² c_in + p (p + 1) / 2`.
    pub fn param_count(&self) -> usize {
        self.channels.iter().map(VolterraChannel::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for ch in &self.channels {
            out.extend_from_slice(&ch.linear);
            out.extend_from_slice(&ch.quadratic);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "bank has {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut at = 0;
        for ch in &mut self.channels {
            let nl = ch.linear.len();
            ch.linear.copy_from_slice(&params[at..at + nl]);
            at += nl;
            let nq = ch.quadratic.len();
            ch.quadratic.copy_from_slice(&params[at..at + nq]);
            at += nq;
        }
        Ok(())
    }

    fn radius(&self) -> usize {
        self.channels.iter().map(VolterraChannel::radius).max().unwrap_or(0)
    }

    fn check_input(&self, x: &Tensor3) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "bank expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        self.check_input(x)?;
        let (h, w, _) = x.shape();
        let padded = Padded::new(x, self.radius());
        let mut out = Tensor3::zeros(h, w, self.out_channels());
        let mut wide = vec![0.0; padded.wide_len()];
        let mut scratch = vec![0.0; padded.wide_len()];
        for (i, ch) in self.channels.iter().enumerate() {
            if self.output == BankOutput::Stacked {
                wide.iter_mut().for_each(|v| *v = 0.0);
            }
            forward_channel(ch, &padded, &mut wide, &mut scratch);
            if self.output == BankOutput::Stacked {
                padded.compact_from(&wide, out.channel_mut(i));
            }
        }
        if self.output == BankOutput::Summed {
            padded.compact_from(&wide, out.channel_mut(0));
        }
        Ok(out)
    }

    /// Gradients of `<upstream, forward(x)>` with respect to the weights
    /// and, when `want_input` is set, the input.
    pub fn backward(&self, x: &Tensor3, upstream: &Tensor3, want_input: bool) -> Result<BankGrad> {
        self.check_input(x)?;
        let (h, w, _) = x.shape();
        if upstream.shape() != (h, w, self.out_channels()) {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, bank output is {:?}",
                upstream.shape(),
                (h, w, self.out_channels())
            )));
        }
        let padded = Padded::new(x, self.radius());
        let mut grad_padded = want_input.then(|| vec![0.0; padded.data.len()]);
        let mut params = Vec::with_capacity(self.param_count());
        let mut scratch = vec![0.0; padded.wide_len()];
        let wide: Vec<Vec<f64>> = (0..upstream.channels())
            .map(|c| padded.to_wide(upstream.channel(c)))
            .collect();
        for (i, ch) in self.channels.iter().enumerate() {
            let g = match self.output {
                BankOutput::Stacked => &wide[i],
                BankOutput::Summed => &wide[0],
            };
            backward_channel(ch, &padded, g, &mut params, grad_padded.as_deref_mut(), &mut scratch);
        }
        let input = grad_padded.map(|gp| padded.unpad(&gp));
        Ok(BankGrad { params, input })
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(BANK_MAGIC)?;
        w.write_all(&BANK_VERSION.to_le_bytes())?;
        w.write_all(&(self.in_channels as u32).to_le_bytes())?;
        w.write_all(&[match self.output {
            BankOutput::Stacked => 0u8,
            BankOutput::Summed => 1u8,
        }])?;
        w.write_all(&(self.channels.len() as u32).to_le_bytes())?;
        for ch in &self.channels {
            for v in [
                ch.filter_size,
                ch.in_channels,
                ch.input_offset,
                ch.linear.len(),
                ch.quadratic.len(),
            ] {
                w.write_all(&(v as u32).to_le_bytes())?;
            }
        }
        for v in self.params() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(format!("truncated Volterra bank: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != BANK_MAGIC {
            return Err(Error::Format("bad Volterra bank magic".into()));
        }
        let version = read_u16(r).map_err(fmt)?;
        if version != BANK_VERSION {
            return Err(Error::Format(format!("unsupported bank version {version}")));
        }
        let in_channels = read_u32(r).map_err(fmt)? as usize;
        let mut mode = [0u8; 1];
        r.read_exact(&mut mode).map_err(fmt)?;
        let output = match mode[0] {
            0 => BankOutput::Stacked,
            1 => BankOutput::Summed,
            m => return Err(Error::Format(format!("unknown bank output mode {m}"))),
        };
        let count = read_u32(r).map_err(fmt)? as usize;
        let mut channels = Vec::with_capacity(count);
        for _ in 0..count {
            let k = read_u32(r).map_err(fmt)? as usize;
            let cin = read_u32(r).map_err(fmt)? as usize;
            let offset = read_u32(r).map_err(fmt)? as usize;
            let nl = read_u32(r).map_err(fmt)? as usize;
            let nq = read_u32(r).map_err(fmt)? as usize;
            let ch = VolterraChannel::zeros(k, cin, offset)?;
            if ch.linear.len() != nl || ch.quadratic.len() != nq {
                return Err(Error::Format(format!(
                    "channel {k}x{k}x{cin} declares {nl}+{nq} weights"
                )));
            }
            channels.push(ch);
        }
        let mut bank = Self::new(in_channels, channels, output)?;
        let mut params = vec![0.0; bank.param_count()];
        let mut buf = [0u8; 8];
        for p in params.iter_mut() {
            r.read_exact(&mut buf).map_err(fmt)?;
            *p = f64::from_le_bytes(buf);
        }
        bank.set_params(&params)?;
        Ok(bank)
    }
}

fn read_u16(r: &mut impl Read) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Feeds `x` through each bank in turn.
pub fn cascade(banks: &[VolterraBank], x: &Tensor3) -> Result<Tensor3> {
    let Some((first, rest)) = banks.split_first() else {
        return Err(Error::InvalidInput("cascade of zero banks".into()));
    };
    let mut y = first.forward(x)?;
    for (i, bank) in rest.iter().enumerate() {
        if bank.in_channels() != y.channels() {
            return Err(Error::Shape(format!(
                "cascade stage {} expects {} channels, previous stage yields {}",
                i + 1,
                bank.in_channels(),
                y.channels()
            )));
        }
        y = bank.forward(&y)?;
    }
    Ok(y)
}

/// Zero-padded copy of an input tensor.
///
/// Kernels work on "wide" planes of `height x stride` values: output pixel
/// `(y, x)` sits at `y * stride + x` and the `stride - width` trailing
/// columns of each row are scratch space that is discarded. This lets every
/// tap be a single contiguous slice of the padded data.
struct Padded {
    data: Vec<f64>,
    height: usize,
    width: usize,
    radius: usize,
    /// Padded row stride.
    stride: usize,
    /// Padded plane size.
    plane: usize,
    channels: usize,
}

impl Padded {
    fn new(x: &Tensor3, radius: usize) -> Self {
        let (h, w, c) = x.shape();
        let stride = w + 2 * radius;
        let plane = stride * (h + 2 * radius);
        // one extra row so the last wide tap slice stays in bounds
        let mut data = vec![0.0; plane * c + stride];
        for ch in 0..c {
            let src = x.channel(ch);
            for y in 0..h {
                let at = ch * plane + (y + radius) * stride + radius;
                data[at..at + w].copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
        Padded {
            data,
            height: h,
            width: w,
            radius,
            stride,
            plane,
            channels: c,
        }
    }

    fn wide_len(&self) -> usize {
        self.height * self.stride
    }

    /// Offset of output pixel (0, 0) for tap `tau` of `ch`.
    fn tap_base(&self, ch: &VolterraChannel, tau: usize) -> usize {
        let (c, dy, dx) = ch.tap_position(tau);
        let shift = self.radius - ch.radius();
        (ch.input_offset + c) * self.plane + (dy + shift) * self.stride + dx + shift
    }

    /// Tap values for every wide output position.
    #[inline]
    fn span(&self, base: usize) -> &[f64] {
        &self.data[base..base + self.wide_len()]
    }

    fn to_wide(&self, compact: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.wide_len()];
        for y in 0..self.height {
            out[y * self.stride..y * self.stride + self.width]
                .copy_from_slice(&compact[y * self.width..(y + 1) * self.width]);
        }
        out
    }

    fn compact_from(&self, wide: &[f64], compact: &mut [f64]) {
        for y in 0..self.height {
            compact[y * self.width..(y + 1) * self.width]
                .copy_from_slice(&wide[y * self.stride..y * self.stride + self.width]);
        }
    }

    fn unpad(&self, grad: &[f64]) -> Tensor3 {
        let mut out = Tensor3::zeros(self.height, self.width, self.channels);
        for ch in 0..self.channels {
            let dst = out.channel_mut(ch);
            for y in 0..self.height {
                let at = ch * self.plane + (y + self.radius) * self.stride + self.radius;
                dst[y * self.width..(y + 1) * self.width]
                    .copy_from_slice(&grad[at..at + self.width]);
            }
        }
        out
    }
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Accumulates one channel's response into the wide plane `out`.
fn forward_channel(ch: &VolterraChannel, x: &Padded, out: &mut [f64], acc: &mut [f64]) {
    let p = ch.taps();
    let bases: Vec<usize> = (0..p).map(|t| x.tap_base(ch, t)).collect();
    for (t, &base) in bases.iter().enumerate() {
        axpy(out, ch.linear[t], x.span(base));
    }
    // Σ_i x_i * (Σ_{j >= i} c_ij x_j) with c_ii = h2_ii and c_ij = 2 h2_ij.
    for i in 0..p {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let mut any = false;
        for (j, &base) in bases.iter().enumerate().skip(i) {
            let stored = ch.quadratic[tri_index(p, i, j)];
            if stored == 0.0 {
                continue;
            }
            any = true;
            let c = if i == j { stored } else { 2.0 * stored };
            axpy(acc, c, x.span(base));
        }
        if any {
            for ((d, s), v) in out.iter_mut().zip(x.span(bases[i])).zip(acc.iter()) {
                *d += s * v;
            }
        }
    }
}

const LANES: usize = 8;

/// Dot product with a fixed set of lane accumulators, so the summation
/// order is the same on every machine while still vectorizing.
fn lane_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let split = a.len() - a.len() % LANES;
    for (ca, cb) in a[..split].chunks_exact(LANES).zip(b[..split].chunks_exact(LANES)) {
        for k in 0..LANES {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in a[split..].iter().zip(&b[split..]) {
        tail += x * y;
    }
    acc.iter().sum::<f64>() + tail
}

/// Appends this channel's weight gradients to `params` and, when requested,
/// accumulates the input gradient into `grad_padded`. `g` is the upstream
/// gradient as a wide plane with zero scratch columns.
fn backward_channel(
    ch: &VolterraChannel,
    x: &Padded,
    g: &[f64],
    params: &mut Vec<f64>,
    grad_padded: Option<&mut [f64]>,
    scratch: &mut [f64],
) {
    let p = ch.taps();
    let bases: Vec<usize> = (0..p).map(|t| x.tap_base(ch, t)).collect();
    for &base in &bases {
        params.push(lane_dot(x.span(base), g));
    }
    let quad_start = params.len();
    params.resize(quad_start + ch.quadratic.len(), 0.0);
    for i in 0..p {
        for ((d, a), b) in scratch.iter_mut().zip(x.span(bases[i])).zip(g) {
            *d = a * b;
        }
        for j in i..p {
            let s = lane_dot(x.span(bases[j]), scratch);
            params[quad_start + tri_index(p, i, j)] = if i == j { s } else { 2.0 * s };
        }
    }

    let Some(gp) = grad_padded else { return };
    let len = x.wide_len();
    // dy/dx_τ = h1[τ] + 2 Σ_j h2[τ][j] x_j
    for t in 0..p {
        scratch.iter_mut().for_each(|v| *v = ch.linear[t]);
        for (j, &base) in bases.iter().enumerate() {
            let c = 2.0 * ch.h2(t, j);
            if c != 0.0 {
                axpy(scratch, c, x.span(base));
            }
        }
        let dst = &mut gp[bases[t]..bases[t] + len];
        for ((d, a), b) in dst.iter_mut().zip(g).zip(scratch.iter()) {
            *d += a * b;
        }
    }
}
