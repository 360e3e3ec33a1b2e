//! Whitespace-tokenized corpora, client shard directories and a synthetic
//! cased corpus generator.

pub mod synth;

use std::path::Path;

use crate::error::{Error, Result};

/// One sentence per non-empty line, tokens split on whitespace.
pub fn parse_corpus(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn read_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_corpus(&text))
}

pub fn format_corpus<S: AsRef<str>>(sentences: &[Vec<S>]) -> String {
    let mut out = String::new();
    for s in sentences {
        let line: Vec<&str> = s.iter().map(|t| t.as_ref()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_corpus<S: AsRef<str>>(path: &Path, sentences: &[Vec<S>]) -> Result<()> {
    std::fs::write(path, format_corpus(sentences)).map_err(|e| Error::io(path, e))
}

/// The local data of one simulated device.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientShard {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
}

/// Reads every regular file of `dir` as one client, sorted by id.
pub fn read_shards(dir: &Path) -> Result<Vec<ClientShard>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut shards = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let id = entry
            .file_name()
            .into_string()
            .map_err(|_| Error::Invalid(format!("{}: client id is not UTF-8", path.display())))?;
        shards.push(ClientShard { id, sentences: read_corpus(&path)? });
    }
    shards.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(shards)
}

pub fn write_shards(dir: &Path, shards: &[ClientShard]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in shards {
        write_corpus(&dir.join(&s.id), &s.sentences)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shards_round_trip_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let shards = vec![
            ClientShard { id: "b".into(), sentences: vec![vec!["x".into(), "y".into()]] },
            ClientShard { id: "a".into(), sentences: vec![] },
        ];
        write_shards(dir.path(), &shards).unwrap();
        let back = read_shards(dir.path()).unwrap();
        assert_eq!(back.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(back[1].sentences, shards[0].sentences);
        assert!(back[0].sentences.is_empty());
    }

    #[test]
    fn blank_lines_skipped() {
        assert_eq!(parse_corpus("a  b\n\n c\n"), vec![vec!["a", "b"], vec!["c"]]);
    }
}
