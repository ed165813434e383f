use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, TokenKind, Vocab};

/// A tokenized program: one token sequence per source line. Line numbers are
/// 1-based everywhere outside this struct.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Program {
    pub lines: Vec<Vec<TokenId>>,
}

impl Program {
    pub fn new(lines: Vec<Vec<TokenId>>) -> Program {
        Program { lines }
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn token_count(&self) -> usize {
        self.lines.iter().map(Vec::len).sum()
    }

    pub fn line(&self, line_no: usize) -> Option<&[TokenId]> {
        line_no.checked_sub(1).and_then(|i| self.lines.get(i)).map(Vec::as_slice)
    }

    /// Copy of the program with line `line_no` replaced; `None` when the line
    /// does not exist.
    pub fn with_line(&self, line_no: usize, tokens: &[TokenId]) -> Option<Program> {
        let idx = line_no.checked_sub(1).filter(|&i| i < self.lines.len())?;
        let mut lines = self.lines.clone();
        lines[idx] = tokens.to_vec();
        Some(Program { lines })
    }

    /// `(line_no, token)` pairs in source order.
    pub fn tokens(&self) -> impl Iterator<Item = (usize, TokenId)> + '_ {
        self.lines.iter().enumerate().flat_map(|(i, l)| l.iter().map(move |&t| (i + 1, t)))
    }

    /// Renames identifiers to pool names in first-occurrence order. Returns
    /// the renamed program and the old→new mapping so that companion token
    /// sequences (fixes) can be renamed consistently.
    pub fn canonicalize(&self, vocab: &Vocab) -> (Program, HashMap<TokenId, TokenId>) {
        let mut map = HashMap::new();
        let lines = self.lines.iter().map(|line| line.iter().map(|&t| rename(vocab, &mut map, t)).collect()).collect();
        (Program { lines }, map)
    }

    /// Flat encoder input: every line is introduced by its `LINE_k` marker
    /// and the whole program is closed by `_eos_`. Lines beyond the
    /// vocabulary's line range get no marker.
    pub fn encoder_tokens(&self, vocab: &Vocab) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(self.token_count() + self.lines.len() + 1);
        for (i, line) in self.lines.iter().enumerate() {
            if let Some(marker) = vocab.line_token(i + 1) {
                out.push(marker);
            }
            out.extend_from_slice(line);
        }
        out.push(vocab.eos());
        out
    }

    /// Token-stream form: one line per program line, `kind:lexeme` tokens
    /// separated by single spaces.
    pub fn to_token_stream(&self, vocab: &Vocab) -> String {
        self.lines.iter().map(|l| render_tokens(vocab, l)).collect::<Vec<_>>().join("\n")
    }
}

/// Applies (and extends) an identifier renaming to one token.
pub fn rename(vocab: &Vocab, map: &mut HashMap<TokenId, TokenId>, t: TokenId) -> TokenId {
    if vocab.kind(t) != TokenKind::Identifier {
        return t;
    }
    if let Some(&n) = map.get(&t) {
        return n;
    }
    // Pool exhaustion cannot happen when renaming within a pool-sized program:
    // there are at most `id_pool` distinct identifiers to begin with.
    let n = vocab.ident(map.len()).unwrap_or(t);
    map.insert(t, n);
    n
}

pub fn render_tokens(vocab: &Vocab, tokens: &[TokenId]) -> String {
    tokens.iter().map(|&t| vocab.render(t)).collect::<Vec<_>>().join(" ")
}

/// Parses a space-separated `kind:lexeme` sequence.
pub fn parse_tokens(vocab: &Vocab, s: &str) -> Result<Vec<TokenId>, String> {
    s.split(' ').filter(|w| !w.is_empty()).map(|w| vocab.parse_rendered(w).ok_or_else(|| format!("unknown token `{w}`"))).collect()
}
