//! Checkpoint files: a UTF-8 header, the vocabulary, then raw parameters.
//!
//! ```text
//! fedgram-cifg 1
//! vocab <V>
//! layers <N_l>
//! hidden <N_h>
//! embed <N_e>
//! layer_norm <0|1>
//! residual <0|1>
//! groups <k>
//! params <S_total>
//! <V lines, one token per id in id order>
//! data
//! <S_total little-endian f64 values>
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::cifg::CifgLstm;
use super::config::CifgConfig;
use crate::error::{Error, Result};
use crate::symbols::SymbolTable;

const MAGIC: &str = "fedgram-cifg 1";

pub fn write_checkpoint<W: Write>(model: &CifgLstm, mut w: W) -> std::io::Result<()> {
    let c = model.config();
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "vocab {}", c.vocab)?;
    writeln!(w, "layers {}", c.layers)?;
    writeln!(w, "hidden {}", c.hidden)?;
    writeln!(w, "embed {}", c.embed)?;
    writeln!(w, "layer_norm {}", c.layer_norm as u8)?;
    writeln!(w, "residual {}", c.residual as u8)?;
    writeln!(w, "groups {}", c.groups)?;
    writeln!(w, "params {}", model.num_params())?;
    for t in model.symbols_arc().tokens() {
        writeln!(w, "{t}")?;
    }
    writeln!(w, "data")?;
    let mut buf = Vec::with_capacity(model.num_params() * 8);
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<CifgLstm> {
    let mut r = BufReader::new(r);
    let mut line_no = 0;
    let mut next = |r: &mut BufReader<R>| -> Result<String> {
        let mut s = String::new();
        line_no += 1;
        let n = r.read_line(&mut s).map_err(|e| Error::parse(line_no, e.to_string()))?;
        if n == 0 {
            return Err(Error::parse(line_no, "unexpected end of checkpoint"));
        }
        Ok(s.trim_end_matches(['\n', '\r']).to_string())
    };
    if next(&mut r)? != MAGIC {
        return Err(Error::parse(1, "not a CIFG checkpoint"));
    }
    let mut field = |r: &mut BufReader<R>, name: &str| -> Result<usize> {
        let line = next(r)?;
        let value = line
            .strip_prefix(name)
            .and_then(|v| v.strip_prefix(' '))
            .ok_or_else(|| Error::Invalid(format!("checkpoint: expected field `{name}`, found `{line}`")))?;
        value.parse().map_err(|_| Error::Invalid(format!("checkpoint: bad value for `{name}`: `{value}`")))
    };
    let vocab = field(&mut r, "vocab")?;
    let layers = field(&mut r, "layers")?;
    let hidden = field(&mut r, "hidden")?;
    let embed = field(&mut r, "embed")?;
    let layer_norm = field(&mut r, "layer_norm")? != 0;
    let residual = field(&mut r, "residual")? != 0;
    let groups = field(&mut r, "groups")?;
    let n = field(&mut r, "params")?;
    let cfg = CifgConfig { vocab, layers, hidden, embed, layer_norm, residual, groups };
    cfg.validate()?;
    if cfg.param_count() != n {
        return Err(Error::Invalid(format!("checkpoint declares {n} parameters, shape implies {}", cfg.param_count())));
    }
    let mut tokens = Vec::with_capacity(vocab);
    for _ in 0..vocab {
        let mut s = String::new();
        r.read_line(&mut s).map_err(|e| Error::Invalid(e.to_string()))?;
        tokens.push(s.trim_end_matches(['\n', '\r']).to_string());
    }
    let mut s = String::new();
    r.read_line(&mut s).map_err(|e| Error::Invalid(e.to_string()))?;
    if s.trim_end() != "data" {
        return Err(Error::Invalid("checkpoint: missing `data` marker".into()));
    }
    let symbols = SymbolTable::from_tokens(tokens.iter().skip(3));
    if symbols.tokens() != &tokens[..] {
        return Err(Error::Invalid("checkpoint: vocabulary does not start with the reserved symbols".into()));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::Invalid(e.to_string()))?;
    if bytes.len() != n * 8 {
        return Err(Error::Invalid(format!("checkpoint: expected {} data bytes, found {}", n * 8, bytes.len())));
    }
    let params = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    CifgLstm::from_params(cfg, Arc::new(symbols), params)
}

pub fn save(model: &CifgLstm, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(model, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<CifgLstm> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(f)
}
