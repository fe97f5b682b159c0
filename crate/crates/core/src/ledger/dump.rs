use std::io::{BufRead, Write};

use super::block::Block;
use super::LedgerError;

/// One canonical-encoded block per line.
pub fn write_chain_dump<W: Write>(mut w: W, chain: &[Block]) -> std::io::Result<()> {
    for b in chain {
        let line = crate::canonical::to_vec(b).map_err(std::io::Error::other)?;
        w.write_all(&line)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_chain_dump<R: BufRead>(r: R) -> Result<Vec<Block>, LedgerError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let b = crate::canonical::from_slice(line.as_bytes())
            .map_err(|e| LedgerError::Dump { line: i + 1, message: e.to_string() })?;
        out.push(b);
    }
    Ok(out)
}
