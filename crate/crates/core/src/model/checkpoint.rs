//! Checkpoint files.
//!
//! ```text
//! VMSC-CHECKPOINT 1\n
//! key=value\n            one line per header field
//! \n                     blank line ends the header
//! encoder 0, decoder 0, encoder 1, ... as Volterra bank streams
//! b"SELF", u64 LE count, count f64 LE self-expressive parameters
//! ```
//!
//! Header fields: `preset`, `seed`, `modalities`, `shapes`, `n`, `mask`,
//! `gamma`, `mu`, `lambda`, `reg`, `decoder_input`, `flatten_order`, plus
//! caller metadata under `meta.<key>`.

use super::{DecoderInput, LossWeights, VmscModel};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::selfexpr::{MaskKind, SelfExpressiveLayer};
use crate::volterra::VolterraBank;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &str = "VMSC-CHECKPOINT 1";
/// How latents are laid out in `L`.
pub const FLATTEN_ORDER: &str = "modality,channel,row,col";
const SELF_MAGIC: &[u8; 4] = b"SELF";

fn header(model: &VmscModel, meta: &[(&str, String)]) -> String {
    let w = model.weights();
    let shapes: Vec<String> = model
        .shapes()
        .iter()
        .map(|(h, wd, c)| format!("{h}x{wd}x{c}"))
        .collect();
    let mut lines = vec![
        CHECKPOINT_MAGIC.to_string(),
        format!("preset={}", model.preset_name()),
        format!("seed={}", model.init_seed()),
        format!("modalities={}", model.modality_count()),
        format!("shapes={}", shapes.join(",")),
        format!("n={}", model.n()),
        format!("mask={}", model.selfexpr().kind()),
        format!("gamma={:?}", w.gamma),
        format!("mu={:?}", w.mu),
        format!("lambda={:?}", w.lambda),
        format!("reg={}", w.reg.as_str()),
        format!("decoder_input={}", model.decoder_input().as_str()),
        format!("flatten_order={FLATTEN_ORDER}"),
    ];
    for (k, v) in meta {
        lines.push(format!("meta.{k}={}", v.replace(['\n', '\r'], " ")));
    }
    lines.join("\n") + "\n\n"
}

pub fn write_checkpoint(model: &VmscModel, meta: &[(&str, String)], path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut buf = header(model, meta).into_bytes();
    for (enc, dec) in model.encoders().iter().zip(model.decoders()) {
        enc.write_to(&mut buf).map_err(io)?;
        dec.write_to(&mut buf).map_err(io)?;
    }
    let params = model.selfexpr().params();
    buf.extend_from_slice(SELF_MAGIC);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&buf).map_err(io)
}

/// Reads a checkpoint, returning the model and the `meta.*` fields.
pub fn read_checkpoint(path: &Path) -> Result<(VmscModel, BTreeMap<String, String>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_from(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn read_from(r: &mut impl BufRead) -> Result<(VmscModel, BTreeMap<String, String>)> {
    let mut fields = BTreeMap::new();
    let mut first = true;
    loop {
        let mut line = String::new();
        r.read_line(&mut line)
            .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
        if line.is_empty() {
            return Err(Error::Format("header not terminated".into()));
        }
        let line = line.trim_end_matches('\n');
        if first {
            if line != CHECKPOINT_MAGIC {
                return Err(Error::Format(format!("not a checkpoint (first line {line:?})")));
            }
            first = false;
            continue;
        }
        if line.is_empty() {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| {
        fields
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("header lacks {k}")))
    };
    fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Format(format!("bad header value {k}={v}")))
    }

    let t_count: usize = parse("modalities", get("modalities")?)?;
    let shapes = get("shapes")?
        .split(',')
        .map(|s| {
            let dims: Vec<usize> = s
                .split('x')
                .map(|d| parse("shapes", d))
                .collect::<Result<_>>()?;
            match dims.as_slice() {
                [h, w, c] => Ok((*h, *w, *c)),
                _ => Err(Error::Format(format!("bad shape {s:?}"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if shapes.len() != t_count {
        return Err(Error::Format(format!("{} shapes for {t_count} modalities", shapes.len())));
    }
    if get("flatten_order")? != FLATTEN_ORDER {
        return Err(Error::Format(format!("unsupported flatten order {}", get("flatten_order")?)));
    }
    let n: usize = parse("n", get("n")?)?;
    let mask: MaskKind = get("mask")?
        .parse()
        .map_err(|_| Error::Format(format!("bad mask {}", get("mask").unwrap_or(""))))?;
    let weights = LossWeights {
        gamma: parse("gamma", get("gamma")?)?,
        mu: parse("mu", get("mu")?)?,
        lambda: parse("lambda", get("lambda")?)?,
        reg: get("reg")?.parse().map_err(|_| Error::Format("bad reg".into()))?,
    };
    let decoder_input: DecoderInput = get("decoder_input")?
        .parse()
        .map_err(|_| Error::Format("bad decoder_input".into()))?;
    let seed: u64 = parse("seed", get("seed")?)?;
    let preset = get("preset")?.to_string();

    let mut encoders = Vec::with_capacity(t_count);
    let mut decoders = Vec::with_capacity(t_count);
    for _ in 0..t_count {
        encoders.push(VolterraBank::read_from(r)?);
        decoders.push(VolterraBank::read_from(r)?);
    }
    let trunc = |e: std::io::Error| Error::Format(format!("truncated coefficients: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != SELF_MAGIC {
        return Err(Error::Format("bad coefficient block magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(trunc)?;
    let len = u64::from_le_bytes(len) as usize;
    // Mask structure is rebuilt from the header; initial values are overwritten.
    let mut selfexpr = SelfExpressiveLayer::new(n, mask, &mut Rng::new(0))?;
    if len != selfexpr.param_len() {
        return Err(Error::Format(format!(
            "coefficient block holds {len} values, mask needs {}",
            selfexpr.param_len()
        )));
    }
    let mut params = vec![0.0; len];
    let mut b = [0u8; 8];
    for p in params.iter_mut() {
        r.read_exact(&mut b).map_err(trunc)?;
        *p = f64::from_le_bytes(b);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(trunc)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    selfexpr.set_params(&params)?;
    let model = VmscModel::new(shapes, encoders, decoders, selfexpr, weights, decoder_input)?
        .with_origin(&preset, seed);
    let meta = fields
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v)))
        .collect();
    Ok((model, meta))
}
