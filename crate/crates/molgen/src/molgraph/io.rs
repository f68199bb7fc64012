//! File formats: the crate's MGF text format and V2000 SDF export.
//!
//! MGF, one molecule per block:
//! ```text
//! N <n>
//! A <element> <charge> <x> <y> <z>     (n lines, 6-decimal coordinates)
//! B <i> <j> <order>                    (i < j, 0-based, order in 1..3)
//! <blank line>
//! ```
//! Writing quantizes coordinates to 6 decimals, and read/write round-trips
//! bit-exactly on that quantized representation.

use super::{charge_token, charge_value, element_of_token, tok, Element, MolGraph};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("molecule {index} contains a {token} token, which has no file representation")]
    UnwritableToken { index: usize, token: &'static str },
}

fn parse_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse { line, msg: msg.into() }
}

pub fn format_mgf(mols: &[MolGraph]) -> Result<String, IoError> {
    let mut out = String::new();
    for (index, g) in mols.iter().enumerate() {
        if g.contains_mask() {
            return Err(IoError::UnwritableToken { index, token: "MASK" });
        }
        writeln!(out, "N {}", g.n()).unwrap();
        for i in 0..g.n() {
            let elem = element_of_token(g.atoms[i])
                .ok_or(IoError::UnwritableToken { index, token: "FAKE" })?;
            writeln!(
                out,
                "A {} {} {:.6} {:.6} {:.6}",
                elem.symbol(),
                charge_value(g.charges[i]),
                g.x[i][0],
                g.x[i][1],
                g.x[i][2]
            )
            .unwrap();
        }
        for i in 0..g.n() {
            for j in (i + 1)..g.n() {
                let b = g.bond(i, j);
                if b != tok::BOND_NONE {
                    writeln!(out, "B {} {} {}", i, j, b).unwrap();
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_mgf(mols: &[MolGraph], path: &Path) -> Result<(), IoError> {
    std::fs::write(path, format_mgf(mols)?)?;
    Ok(())
}

pub fn parse_mgf(text: &str) -> Result<Vec<MolGraph>, IoError> {
    let mut mols = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some(&(lineno, line)) = lines.peek() {
        if line.trim().is_empty() {
            lines.next();
            continue;
        }
        let rest = line
            .strip_prefix("N ")
            .ok_or_else(|| parse_err(lineno + 1, format!("expected 'N <count>', got '{line}'")))?;
        let n: usize = rest
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno + 1, format!("bad atom count '{rest}'")))?;
        lines.next();
        let mut g = MolGraph::new(n);
        for i in 0..n {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| parse_err(lineno + 1, "unexpected end of file in atom block"))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 || fields[0] != "A" {
                return Err(parse_err(lineno + 1, format!("expected atom line, got '{line}'")));
            }
            let elem = Element::from_symbol(fields[1])
                .ok_or_else(|| parse_err(lineno + 1, format!("unknown element '{}'", fields[1])))?;
            g.atoms[i] = super::token_of_element(elem);
            let chg: i32 = fields[2]
                .parse()
                .map_err(|_| parse_err(lineno + 1, format!("bad charge '{}'", fields[2])))?;
            g.charges[i] = charge_token(chg)
                .ok_or_else(|| parse_err(lineno + 1, format!("charge {chg} out of range")))?;
            for (a, f) in fields[3..6].iter().enumerate() {
                g.x[i][a] = f
                    .parse()
                    .map_err(|_| parse_err(lineno + 1, format!("bad coordinate '{f}'")))?;
            }
        }
        // bond lines until a blank line or end of input
        while let Some(&(lineno, line)) = lines.peek() {
            if line.trim().is_empty() {
                lines.next();
                break;
            }
            if line.starts_with("N ") {
                break;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 || fields[0] != "B" {
                return Err(parse_err(lineno + 1, format!("expected bond line, got '{line}'")));
            }
            let i: usize = fields[1]
                .parse()
                .map_err(|_| parse_err(lineno + 1, format!("bad bond index '{}'", fields[1])))?;
            let j: usize = fields[2]
                .parse()
                .map_err(|_| parse_err(lineno + 1, format!("bad bond index '{}'", fields[2])))?;
            let order: usize = fields[3]
                .parse()
                .map_err(|_| parse_err(lineno + 1, format!("bad bond order '{}'", fields[3])))?;
            if i >= j {
                return Err(parse_err(lineno + 1, format!("bond indices must satisfy i < j, got {i} {j}")));
            }
            if j >= n {
                return Err(parse_err(lineno + 1, format!("bond index {j} out of range for {n} atoms")));
            }
            if !(1..=3).contains(&order) {
                return Err(parse_err(lineno + 1, format!("bond order {order} out of range")));
            }
            g.set_bond(i, j, order);
            lines.next();
        }
        mols.push(g);
    }
    Ok(mols)
}

pub fn read_mgf(path: &Path) -> Result<Vec<MolGraph>, IoError> {
    parse_mgf(&std::fs::read_to_string(path)?)
}

/// V2000 SDF export with `M  CHG` lines for nonzero formal charges.
pub fn write_sdf(mols: &[MolGraph], path: &Path) -> Result<(), IoError> {
    let mut out = String::new();
    for (index, g) in mols.iter().enumerate() {
        if g.contains_mask() {
            return Err(IoError::UnwritableToken { index, token: "MASK" });
        }
        writeln!(out, "molgen-{index}").unwrap();
        writeln!(out, "  molgen          3D").unwrap();
        out.push('\n');
        let n_bonds = (0..g.n())
            .flat_map(|i| ((i + 1)..g.n()).map(move |j| (i, j)))
            .filter(|&(i, j)| g.bond(i, j) != tok::BOND_NONE)
            .count();
        writeln!(out, "{:3}{:3}  0  0  0  0  0  0  0  0999 V2000", g.n(), n_bonds).unwrap();
        for i in 0..g.n() {
            let elem = element_of_token(g.atoms[i])
                .ok_or(IoError::UnwritableToken { index, token: "FAKE" })?;
            writeln!(
                out,
                "{:10.4}{:10.4}{:10.4} {:<3} 0  0  0  0  0  0  0  0  0  0  0  0",
                g.x[i][0],
                g.x[i][1],
                g.x[i][2],
                elem.symbol()
            )
            .unwrap();
        }
        for i in 0..g.n() {
            for j in (i + 1)..g.n() {
                let b = g.bond(i, j);
                if b != tok::BOND_NONE {
                    writeln!(out, "{:3}{:3}{:3}  0", i + 1, j + 1, b).unwrap();
                }
            }
        }
        let charged: Vec<(usize, i32)> = (0..g.n())
            .map(|i| (i, charge_value(g.charges[i])))
            .filter(|&(_, c)| c != 0)
            .collect();
        for chunk in charged.chunks(8) {
            write!(out, "M  CHG{:3}", chunk.len()).unwrap();
            for &(i, c) in chunk {
                write!(out, "{:4}{:4}", i + 1, c).unwrap();
            }
            out.push('\n');
        }
        writeln!(out, "M  END").unwrap();
        writeln!(out, "$$$$").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}
