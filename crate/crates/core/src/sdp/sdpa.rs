//! Sparse SDPA (`.dat-s`) reader and writer.
//!
//! A [`BlockSdp`] maps onto the SDPA dual form `max F₀•Y s.t. Fᵢ•Y = cᵢ, Y ⪰ 0`:
//! equality `k` becomes `F_k` with `c_k` its right-hand side, diagonal blocks are
//! written with negative size, and `F₀` is the objective (negated for
//! minimization). Names and the original sense travel in `*` comment lines
//! that other readers ignore.

use super::{BlockKind, BlockSdp, Entry, Equality, Sense};
use crate::error::{Error, Result};
use crate::scalar::Real;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

fn fmt_num<S: Real>(v: S) -> String {
    let f = v.to_f64_lossy();
    if f == f.trunc() && f.abs() < 1e15 {
        format!("{}", f as i64)
    } else {
        format!("{f:e}")
    }
}

pub fn to_sdpa_string<S: Real>(sdp: &BlockSdp<S>) -> String {
    let mut out = String::new();
    let sense = match sdp.sense {
        Sense::Minimize => "minimize",
        Sense::Maximize => "maximize",
    };
    let _ = writeln!(out, "* lyapsgd sense={sense}");
    for (k, b) in sdp.blocks.iter().enumerate() {
        let _ = writeln!(out, "* block {} {}", k + 1, b.name);
    }
    for (name, b, i) in &sdp.scalar_names {
        let _ = writeln!(out, "* scalar {} {} {}", b + 1, i + 1, name);
    }
    for (k, eq) in sdp.equalities.iter().enumerate() {
        let _ = writeln!(out, "* label {} {}", k + 1, eq.label);
    }
    let _ = writeln!(out, "{}", sdp.equalities.len());
    let _ = writeln!(out, "{}", sdp.blocks.len());
    let sizes: Vec<String> = sdp
        .blocks
        .iter()
        .map(|b| match b.kind {
            BlockKind::Psd => format!("{}", b.size),
            BlockKind::NonnegDiag => format!("-{}", b.size),
        })
        .collect();
    let _ = writeln!(out, "{}", sizes.join(" "));
    let rhs: Vec<String> = sdp.equalities.iter().map(|e| fmt_num(e.rhs)).collect();
    let _ = writeln!(out, "{}", rhs.join(" "));
    let f0_sign = match sdp.sense {
        Sense::Maximize => S::one(),
        Sense::Minimize => -S::one(),
    };
    let mut write_entries = |matno: usize, entries: &[Entry<S>], sign: S| {
        for e in entries {
            if e.value == S::zero() {
                continue;
            }
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                matno,
                e.block + 1,
                e.i + 1,
                e.j + 1,
                fmt_num(e.value * sign)
            );
        }
    };
    write_entries(0, &sdp.objective, f0_sign);
    for (k, eq) in sdp.equalities.iter().enumerate() {
        write_entries(k + 1, &eq.entries, S::one());
    }
    out
}

pub fn write_sdpa<S: Real>(sdp: &BlockSdp<S>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(to_sdpa_string(sdp).as_bytes())?;
    Ok(())
}

pub fn read_sdpa<S: Real>(path: &Path) -> Result<BlockSdp<S>> {
    let text = std::fs::read_to_string(path)?;
    parse_sdpa(&text)
}

pub fn parse_sdpa<S: Real>(text: &str) -> Result<BlockSdp<S>> {
    let bad = |msg: &str| Error::Invalid(format!("SDPA: {msg}"));
    let mut sense = Sense::Maximize;
    let mut block_names = Vec::new();
    let mut scalar_names = Vec::new();
    let mut labels = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.starts_with('*') || t.starts_with('"') {
            let body = t.trim_start_matches(['*', '"']).trim();
            if body == "lyapsgd sense=minimize" {
                sense = Sense::Minimize;
            } else if let Some(rest) = body.strip_prefix("block ") {
                if let Some((k, name)) = rest.split_once(' ') {
                    block_names.push((k.parse::<usize>().unwrap_or(0), name.to_string()));
                }
            } else if let Some(rest) = body.strip_prefix("scalar ") {
                let parts: Vec<&str> = rest.splitn(3, ' ').collect();
                if parts.len() == 3 {
                    if let (Ok(b), Ok(i)) = (parts[0].parse::<usize>(), parts[1].parse::<usize>()) {
                        scalar_names.push((parts[2].to_string(), b - 1, i - 1));
                    }
                }
            } else if let Some(rest) = body.strip_prefix("label ") {
                if let Some((k, name)) = rest.split_once(' ') {
                    labels.push((k.parse::<usize>().unwrap_or(0), name.to_string()));
                }
            }
            continue;
        }
        tokens.extend(
            t.split(|c: char| c.is_whitespace() || matches!(c, ',' | '{' | '}' | '(' | ')'))
                .filter(|s| !s.is_empty())
                .map(String::from),
        );
    }
    let mut it = tokens.into_iter();
    let mut next = |what: &str| it.next().ok_or_else(|| bad(&format!("missing {what}")));
    let mdim: usize = next("mDIM")?.parse().map_err(|_| bad("mDIM"))?;
    let nblock: usize = next("nBLOCK")?.parse().map_err(|_| bad("nBLOCK"))?;
    let mut sdp = BlockSdp::<S>::new(sense);
    for k in 0..nblock {
        let sz: i64 = next("block size")?.parse().map_err(|_| bad("block size"))?;
        let name = block_names
            .iter()
            .find(|(i, _)| *i == k + 1)
            .map(|(_, n)| n.clone())
            .unwrap_or_else(|| format!("block{}", k + 1));
        let kind = if sz < 0 {
            BlockKind::NonnegDiag
        } else {
            BlockKind::Psd
        };
        sdp.add_block(&name, sz.unsigned_abs() as usize, kind);
    }
    let mut eqs = Vec::with_capacity(mdim);
    for k in 0..mdim {
        let v: f64 = next("c vector")?.parse().map_err(|_| bad("c vector"))?;
        let label = labels
            .iter()
            .find(|(i, _)| *i == k + 1)
            .map(|(_, n)| n.clone())
            .unwrap_or_else(|| format!("c{}", k + 1));
        eqs.push(Equality {
            label,
            entries: Vec::new(),
            rhs: S::lit(v),
        });
    }
    let f0_sign = match sense {
        Sense::Maximize => S::one(),
        Sense::Minimize => -S::one(),
    };
    loop {
        let Some(first) = it.next() else { break };
        let matno: usize = first.parse().map_err(|_| bad("matno"))?;
        let mut num = |what: &str| -> Result<String> {
            it.next()
                .ok_or_else(|| bad(&format!("truncated entry: {what}")))
        };
        let blk: usize = num("block")?.parse().map_err(|_| bad("block index"))?;
        let i: usize = num("i")?.parse().map_err(|_| bad("row index"))?;
        let j: usize = num("j")?.parse().map_err(|_| bad("column index"))?;
        let v: f64 = num("value")?.parse().map_err(|_| bad("value"))?;
        if blk == 0 || blk > nblock || i == 0 || j == 0 || matno > mdim {
            return Err(bad("index out of range"));
        }
        let (i, j) = if i <= j {
            (i - 1, j - 1)
        } else {
            (j - 1, i - 1)
        };
        let e = Entry {
            block: blk - 1,
            i,
            j,
            value: S::lit(v),
        };
        if matno == 0 {
            sdp.objective.push(Entry {
                value: e.value * f0_sign,
                ..e
            });
        } else {
            eqs[matno - 1].entries.push(e);
        }
    }
    sdp.equalities = eqs;
    sdp.scalar_names = scalar_names;
    sdp.validate().map_err(Error::Invalid)?;
    Ok(sdp)
}
