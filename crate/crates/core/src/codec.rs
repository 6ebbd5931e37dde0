//! Replayable on-disk encodings of [`PosteriorSet`].
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size      field
//! 0       4         magic  b"BFPS"
//! 4       4         u32    shape_tag byte length L
//! 8       L         UTF-8  shape_tag
//! 8+L     8         u64    parameter count P
//! 16+L    8*P       f64    means[0..P]
//! 16+L+8P 8*P       f64    variances[0..P]
//! ```
//!
//! Text layout: first line `shape_tag`, second line `P`, then P lines of
//! `mean variance` using Rust's shortest round-trip float formatting.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::gaussian::PosteriorSet;

pub const MAGIC: &[u8; 4] = b"BFPS";

pub fn write_binary<W: Write>(post: &PosteriorSet, mut out: W) -> Result<()> {
    let tag = post.shape_tag().as_bytes();
    let tag_len = u32::try_from(tag.len()).map_err(|_| Error::invalid("shape tag too long"))?;
    out.write_all(MAGIC)?;
    out.write_all(&tag_len.to_le_bytes())?;
    out.write_all(tag)?;
    out.write_all(&(post.len() as u64).to_le_bytes())?;
    for g in post.params() {
        out.write_all(&g.mean().to_le_bytes())?;
    }
    for g in post.params() {
        out.write_all(&g.variance().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<PosteriorSet> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Validation("not a posterior file (bad magic)".into()));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf)?;
    let mut tag = vec![0u8; u32::from_le_bytes(u32buf) as usize];
    input.read_exact(&mut tag)?;
    let tag = String::from_utf8(tag).map_err(|e| Error::Validation(format!("shape tag: {e}")))?;
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut read_f64s = || -> Result<Vec<f64>> {
        (0..count)
            .map(|_| {
                input.read_exact(&mut u64buf)?;
                Ok(f64::from_le_bytes(u64buf))
            })
            .collect()
    };
    let means = read_f64s()?;
    let variances = read_f64s()?;
    PosteriorSet::from_moments(tag, &means, &variances)
}

pub fn write_text<W: Write>(post: &PosteriorSet, mut out: W) -> Result<()> {
    writeln!(out, "{}", post.shape_tag())?;
    writeln!(out, "{}", post.len())?;
    for g in post.params() {
        writeln!(out, "{} {}", g.mean(), g.variance())?;
    }
    Ok(())
}

pub fn read_text<R: BufRead>(input: R) -> Result<PosteriorSet> {
    let mut lines = input.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, line)) => Ok((i + 1, line?)),
            None => Err(Error::Parse {
                line: 0,
                message: format!("unexpected end of input, expected {what}"),
            }),
        }
    };
    let (_, tag) = next("shape tag")?;
    let (line, count) = next("parameter count")?;
    let count: usize = count.trim().parse().map_err(|e| Error::Parse {
        line,
        message: format!("parameter count: {e}"),
    })?;
    let mut means = Vec::with_capacity(count);
    let mut variances = Vec::with_capacity(count);
    for _ in 0..count {
        let (line, text) = next("mean/variance pair")?;
        let mut fields = text.split_whitespace().map(str::parse::<f64>);
        match (fields.next(), fields.next(), fields.next()) {
            (Some(Ok(m)), Some(Ok(v)), None) => {
                means.push(m);
                variances.push(v);
            }
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected `mean variance`, got `{text}`"),
                })
            }
        }
    }
    PosteriorSet::from_moments(tag, &means, &variances)
}
