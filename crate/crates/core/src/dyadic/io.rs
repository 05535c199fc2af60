//! Tree serialization: a compact binary layout, JSON and CSV.
//!
//! Binary: `MFA1`, `u32` LE max scale, `u8` flags (bit 0: signs present),
//! then each level's `2^j` magnitudes as `f64` LE for `j = 0..=J`, then the
//! sign bits packed LSB-first in the same node order.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CoefficientTree, MAX_SCALE_LIMIT};
use crate::error::{MfaError, Result};

const MAGIC: &[u8; 4] = b"MFA1";
const FLAG_SIGNS: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeFormat {
    Binary,
    Json,
    Csv,
}

impl FromStr for TreeFormat {
    type Err = MfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" | "bin" | "mfa" => Ok(TreeFormat::Binary),
            "json" => Ok(TreeFormat::Json),
            "csv" => Ok(TreeFormat::Csv),
            other => Err(MfaError::Domain(format!("unknown tree format '{other}'"))),
        }
    }
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> MfaError {
    MfaError::Parse { location: location.into(), message: message.into() }
}

pub fn write_tree<W: Write>(tree: &CoefficientTree, format: TreeFormat, mut out: W) -> Result<()> {
    match format {
        TreeFormat::Binary => write_binary(tree, &mut out),
        TreeFormat::Json => {
            let doc = JsonTree {
                max_scale: tree.max_scale(),
                levels: tree.levels().to_vec(),
                signs: tree.signs().map(|s| s.to_vec()),
            };
            serde_json::to_writer(&mut out, &doc)?;
            Ok(())
        }
        TreeFormat::Csv => write_csv(tree, &mut out),
    }
}

pub fn read_tree<R: Read>(mut source: R, format: TreeFormat) -> Result<CoefficientTree> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    match format {
        TreeFormat::Binary => read_binary(&buf),
        TreeFormat::Json => {
            let doc: JsonTree =
                serde_json::from_slice(&buf).map_err(|e| parse_err(format!("line {}", e.line()), e.to_string()))?;
            if doc.levels.len() != doc.max_scale as usize + 1 {
                return Err(parse_err(
                    "header",
                    format!("J = {} but {} levels given", doc.max_scale, doc.levels.len()),
                ));
            }
            let tree = CoefficientTree::new(doc.levels)?;
            match doc.signs {
                Some(s) => tree.with_signs(s),
                None => Ok(tree),
            }
        }
        TreeFormat::Csv => {
            let text = std::str::from_utf8(&buf).map_err(|e| parse_err("input", e.to_string()))?;
            read_csv(text)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonTree {
    #[serde(rename = "J")]
    max_scale: u32,
    levels: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    signs: Option<Vec<Vec<bool>>>,
}

fn write_binary<W: Write>(tree: &CoefficientTree, out: &mut W) -> Result<()> {
    let mut buf = Vec::with_capacity(9 + 8 * tree.node_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&tree.max_scale().to_le_bytes());
    buf.push(if tree.signs().is_some() { FLAG_SIGNS } else { 0 });
    for v in tree.levels().iter().flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(signs) = tree.signs() {
        let mut packed = vec![0u8; tree.node_count().div_ceil(8)];
        for (i, neg) in signs.iter().flatten().enumerate() {
            if *neg {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        buf.extend_from_slice(&packed);
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_binary(buf: &[u8]) -> Result<CoefficientTree> {
    if buf.len() < 9 {
        return Err(parse_err("header", "stream shorter than the 9-byte header"));
    }
    if &buf[..4] != MAGIC {
        return Err(parse_err("header", "bad magic, expected MFA1"));
    }
    let max_scale = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if max_scale == 0 || max_scale > MAX_SCALE_LIMIT {
        return Err(parse_err("header", format!("unsupported max scale {max_scale}")));
    }
    let flags = buf[8];
    if flags & !FLAG_SIGNS != 0 {
        return Err(parse_err("header", format!("unknown flag bits {flags:#04x}")));
    }
    let mut body = &buf[9..];
    let mut levels = Vec::with_capacity(max_scale as usize + 1);
    for j in 0..=max_scale {
        let expected = 1usize << j;
        let available = body.len() / 8;
        if available < expected {
            return Err(parse_err(
                format!("scale {j}"),
                format!("level {j} expected {expected} nodes, got {available}"),
            ));
        }
        let mut level = Vec::with_capacity(expected);
        for (k, chunk) in body[..expected * 8].chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() || v < 0.0 {
                return Err(parse_err(
                    format!("scale {j}, offset {k}"),
                    format!("magnitude {v} is not a finite non-negative number"),
                ));
            }
            level.push(v);
        }
        levels.push(level);
        body = &body[expected * 8..];
    }
    let tree = CoefficientTree::new(levels)?;
    let n = tree.node_count();
    if flags & FLAG_SIGNS != 0 {
        let need = n.div_ceil(8);
        if body.len() != need {
            return Err(parse_err("sign block", format!("expected {need} bytes of sign bits, got {}", body.len())));
        }
        let mut idx = 0usize;
        let signs = tree
            .levels()
            .iter()
            .map(|l| {
                l.iter()
                    .map(|_| {
                        let bit = body[idx / 8] >> (idx % 8) & 1 == 1;
                        idx += 1;
                        bit
                    })
                    .collect()
            })
            .collect();
        tree.with_signs(signs)
    } else {
        if !body.is_empty() {
            return Err(parse_err("trailer", format!("{} unexpected trailing bytes", body.len())));
        }
        Ok(tree)
    }
}

fn write_csv<W: Write>(tree: &CoefficientTree, out: &mut W) -> Result<()> {
    let mut s = String::with_capacity(24 * tree.node_count());
    let signs = tree.signs();
    s.push_str(if signs.is_some() { "j,k,value,sign\n" } else { "j,k,value\n" });
    for (j, level) in tree.levels().iter().enumerate() {
        for (k, v) in level.iter().enumerate() {
            match signs {
                Some(sg) => {
                    let sign = if sg[j][k] { -1 } else { 1 };
                    s.push_str(&format!("{j},{k},{v:?},{sign}\n"));
                }
                None => s.push_str(&format!("{j},{k},{v:?}\n")),
            }
        }
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn read_csv(text: &str) -> Result<CoefficientTree> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err("line 1", "empty input"))?;
    let with_signs = match header.trim() {
        "j,k,value" => false,
        "j,k,value,sign" => true,
        other => return Err(parse_err("line 1", format!("unexpected header '{other}'"))),
    };
    let mut rows: Vec<(u32, u64, f64, bool)> = Vec::new();
    let mut max_scale = 0u32;
    for (n, line) in lines {
        let loc = || format!("line {}", n + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != if with_signs { 4 } else { 3 } {
            return Err(parse_err(loc(), format!("expected {} columns", if with_signs { 4 } else { 3 })));
        }
        let j: u32 = fields[0].parse().map_err(|_| parse_err(loc(), "bad scale"))?;
        let k: u64 = fields[1].parse().map_err(|_| parse_err(loc(), "bad position"))?;
        let v: f64 = fields[2].parse().map_err(|_| parse_err(loc(), "bad value"))?;
        if j > MAX_SCALE_LIMIT {
            return Err(parse_err(loc(), format!("scale {j} exceeds {MAX_SCALE_LIMIT}")));
        }
        if k >= 1u64 << j {
            return Err(parse_err(format!("scale {j}, offset {k}"), "position out of range"));
        }
        if !v.is_finite() || v < 0.0 {
            return Err(parse_err(
                format!("scale {j}, offset {k}"),
                format!("magnitude {v} is not a finite non-negative number"),
            ));
        }
        let neg = if with_signs {
            match fields[3] {
                "1" | "+1" => false,
                "-1" => true,
                other => return Err(parse_err(loc(), format!("bad sign '{other}'"))),
            }
        } else {
            false
        };
        max_scale = max_scale.max(j);
        rows.push((j, k, v, neg));
    }
    if max_scale == 0 {
        return Err(parse_err("input", "tree must reach at least scale 1"));
    }
    let mut levels: Vec<Vec<Option<f64>>> = (0..=max_scale).map(|j| vec![None; 1 << j]).collect();
    let mut signs: Vec<Vec<bool>> = (0..=max_scale).map(|j| vec![false; 1 << j]).collect();
    for (j, k, v, neg) in rows {
        let slot = &mut levels[j as usize][k as usize];
        if slot.is_some() {
            return Err(parse_err(format!("scale {j}, offset {k}"), "duplicate node"));
        }
        *slot = Some(v);
        signs[j as usize][k as usize] = neg;
    }
    let mut out = Vec::with_capacity(levels.len());
    for (j, level) in levels.into_iter().enumerate() {
        let expected = level.len();
        let got = level.iter().filter(|v| v.is_some()).count();
        if got != expected {
            return Err(parse_err(format!("scale {j}"), format!("level {j} expected {expected} nodes, got {got}")));
        }
        out.push(level.into_iter().map(Option::unwrap).collect());
    }
    let tree = CoefficientTree::new(out)?;
    if with_signs {
        tree.with_signs(signs)
    } else {
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_tree() -> CoefficientTree {
        CoefficientTree::from_fn(5, |j, k| ((j * 7 + k as u32 * 3) % 5) as f64 * 0.1 + 1e-300).unwrap()
    }

    #[test]
    fn binary_smallest_tree() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"MFA1");
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.push(0);
        for i in 0..7 {
            buf.extend_from_slice(&(i as f64).to_le_bytes());
        }
        let t = read_tree(&buf[..], TreeFormat::Binary).unwrap();
        let sizes: Vec<usize> = t.levels().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1, 2, 4]);
        assert_eq!(t.level(2), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn binary_short_level_is_reported() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"MFA1");
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.push(0);
        for i in 0..6 {
            buf.extend_from_slice(&(i as f64).to_le_bytes());
        }
        let err = read_tree(&buf[..], TreeFormat::Binary).unwrap_err();
        assert!(err.to_string().contains("level 2 expected 4 nodes, got 3"), "{err}");
    }

    #[test]
    fn binary_rejects_bad_header_and_values() {
        assert!(read_tree(&b"MFA2\x02\0\0\0\0"[..], TreeFormat::Binary).is_err());
        let mut buf = Vec::new();
        buf.extend_from_slice(b"MFA1");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.push(0);
        for v in [0.0, f64::NAN, 1.0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let err = read_tree(&buf[..], TreeFormat::Binary).unwrap_err();
        assert!(err.to_string().contains("scale 1, offset 0"), "{err}");
    }

    #[test]
    fn csv_in_any_order_matches_binary() {
        let t = sample_tree();
        let mut csv = String::from("j,k,value\n");
        for j in (0..=5u32).rev() {
            for k in (0..1u64 << j).rev() {
                csv.push_str(&format!("{j},{k},{:?}\n", t.level(j)[k as usize]));
            }
        }
        let from_csv = read_tree(csv.as_bytes(), TreeFormat::Csv).unwrap();
        let mut bin = Vec::new();
        write_tree(&t, TreeFormat::Binary, &mut bin).unwrap();
        let from_bin = read_tree(&bin[..], TreeFormat::Binary).unwrap();
        assert_eq!(from_csv, from_bin);
    }

    #[test]
    fn csv_missing_node_and_negative() {
        let err = read_tree("j,k,value\n0,0,1\n1,0,1\n".as_bytes(), TreeFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("level 1 expected 2 nodes, got 1"), "{err}");
        let err = read_tree("j,k,value\n0,0,1\n1,0,1\n1,1,-2\n".as_bytes(), TreeFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("scale 1, offset 1"), "{err}");
    }

    #[test]
    fn json_header_mismatch() {
        let err = read_tree(r#"{"J": 2, "levels": [[0.0],[1.0,2.0]]}"#.as_bytes(), TreeFormat::Json).unwrap_err();
        assert!(matches!(err, MfaError::Parse { .. }));
    }

    #[test]
    fn signs_round_trip_all_formats() {
        let t = sample_tree();
        let signs =
            t.levels().iter().enumerate().map(|(j, l)| (0..l.len()).map(|k| (j + k) % 3 == 0).collect()).collect();
        let t = t.with_signs(signs).unwrap();
        for f in [TreeFormat::Binary, TreeFormat::Json, TreeFormat::Csv] {
            let mut buf = Vec::new();
            write_tree(&t, f, &mut buf).unwrap();
            assert_eq!(read_tree(&buf[..], f).unwrap(), t, "{f:?}");
        }
    }
}
