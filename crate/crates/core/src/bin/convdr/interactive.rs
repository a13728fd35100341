use std::io::{BufRead, Write};

use convdr::corpus::{Dataset, TokenId};
use convdr::encoder::{assemble_turns, EncoderParams};
use convdr::error::{Error, Result};
use convdr::index::DenseIndex;

use crate::args::QueryArgs;

const HELP: &str = "type a question; :reset starts a new conversation, :quit exits";

/// Reads turns from stdin, retrieving with the whole session as context.
pub fn run(a: QueryArgs) -> Result<()> {
    if !a.interactive {
        return Err(invalid!("query currently only supports --interactive"));
    }
    let data = Dataset::load(&a.data)?;
    let enc = EncoderParams::load(&a.encoder)?;
    let index = DenseIndex::load(&a.index)?;
    if index.dim() != enc.dim() {
        return Err(invalid!(
            "encoder dim {} does not match index dim {}",
            enc.dim(),
            index.dim()
        ));
    }
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    let io_err = |e| Error::Io {
        path: "<stdio>".into(),
        source: e,
    };
    let mut session: Vec<Vec<TokenId>> = Vec::new();
    eprintln!("{HELP}");
    for line in stdin.lock().lines() {
        let line = line.map_err(io_err)?;
        let text = line.trim();
        match text {
            "" => continue,
            ":quit" | ":q" => break,
            ":reset" => {
                session.clear();
                eprintln!("conversation reset");
                continue;
            }
            ":help" => {
                eprintln!("{HELP}");
                continue;
            }
            _ => {}
        }
        let tok = data.vocab.tokenize(text);
        if tok.ids.is_empty() {
            eprintln!("no known words in {text:?}; turn ignored");
            continue;
        }
        session.push(tok.ids);
        let turns: Vec<&[TokenId]> = session.iter().map(Vec::as_slice).collect();
        let input = assemble_turns(&turns, enc.config.max_len)?;
        let hits = index.search(&enc.encode(&input)?, a.k)?;
        writeln!(stdout, "turn {}:", session.len()).map_err(io_err)?;
        for (rank, h) in hits.iter().enumerate() {
            let id = index.doc_id(h.row);
            let text = match data.corpus.get(id) {
                Some(d) => data.vocab.detokenize(&d.tokens)?,
                None => String::new(),
            };
            writeln!(stdout, "{:>3}. {} {:.4}  {}", rank + 1, id, h.score, text).map_err(io_err)?;
        }
        stdout.flush().map_err(io_err)?;
    }
    Ok(())
}
