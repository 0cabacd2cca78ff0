//! Versioned checkpoint files.
//!
//! Layout: a text header line `PMCK 1`, a config line, a schedule line with
//! the step count followed by the betas as little-endian `f64`, then one
//! `tensor <name> <d0>x<d1>...` line per parameter tensor followed by its
//! values as little-endian `f32`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Shape;

use super::model::{Denoiser, DenoiserConfig};
use super::schedule::NoiseSchedule;

const MAGIC: &str = "PMCK 1";

pub fn save_checkpoint(path: &Path, model: &Denoiser, schedule: &NoiseSchedule) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let c = model.config();
    let mut head = format!(
        "{MAGIC}\nconfig latent={} hidden={} layers={} embed={} global={} classes={}\nschedule {}\n",
        c.latent, c.hidden, c.conv_layers, c.embed_dim, c.global_hidden, c.classes,
        schedule.steps()
    )
    .into_bytes();
    for b in schedule.betas() {
        head.extend_from_slice(&b.to_le_bytes());
    }
    w.write_all(&head).map_err(io)?;
    for spec in model.specs() {
        let dims: Vec<String> = spec.dims.iter().map(|d| d.to_string()).collect();
        writeln!(w, "tensor {} {}", spec.name, dims.join("x")).map_err(io)?;
        let mut buf = Vec::with_capacity(spec.len() * 4);
        for v in &model.params()[spec.range()] {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(Denoiser, NoiseSchedule)> {
    let io = |e| Error::io(path, e);
    let bad = |d: String| Error::format("checkpoint", path, d);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<File>| -> Result<String> {
        line.clear();
        r.read_line(&mut line).map_err(io)?;
        Ok(line.trim_end_matches('\n').to_string())
    };

    if next_line(&mut r)? != MAGIC {
        return Err(bad("missing PMCK 1 header".into()));
    }
    let cfg_line = next_line(&mut r)?;
    let mut cfg = DenoiserConfig::new(Shape::new(1, 1, 1));
    let mut fields = cfg_line.split_whitespace();
    if fields.next() != Some("config") {
        return Err(bad("expected config line".into()));
    }
    for kv in fields {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad config field {kv:?}")))?;
        let num = || v.parse::<usize>().map_err(|_| bad(format!("bad value in {kv:?}")));
        match k {
            "latent" => cfg.latent = Shape::parse(v)?,
            "hidden" => cfg.hidden = num()?,
            "layers" => cfg.conv_layers = num()?,
            "embed" => cfg.embed_dim = num()?,
            "global" => cfg.global_hidden = num()?,
            "classes" => cfg.classes = num()?,
            _ => return Err(bad(format!("unknown config field {k:?}"))),
        }
    }
    let sched_line = next_line(&mut r)?;
    let steps: usize = sched_line
        .strip_prefix("schedule ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("expected schedule line".into()))?;
    let mut raw = vec![0u8; steps * 8];
    r.read_exact(&mut raw).map_err(io)?;
    let betas = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let schedule = NoiseSchedule::from_betas(betas)?;

    let mut model = Denoiser::zeroed(cfg)?;
    let specs = model.specs().to_vec();
    for spec in specs {
        let l = next_line(&mut r)?;
        let dims: Vec<String> = spec.dims.iter().map(|d| d.to_string()).collect();
        let want = format!("tensor {} {}", spec.name, dims.join("x"));
        if l != want {
            return Err(bad(format!("expected {want:?}, found {l:?}")));
        }
        let mut buf = vec![0u8; spec.len() * 4];
        r.read_exact(&mut buf).map_err(io)?;
        for (p, c) in model.params_mut()[spec.range()].iter_mut().zip(buf.chunks_exact(4)) {
            *p = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
    }
    if !model.is_finite() {
        return Err(bad("non-finite parameter".into()));
    }
    Ok((model, schedule))
}
