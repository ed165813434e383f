use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lang::{check, Program, TokenId, TokenKind, Vocab, ASSIGN_OPS, BINARY_OPS, STEP_OPS, UNARY_OPS};

use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MutationFamily {
    Typographic,
    MissingDeclaration,
}

impl MutationFamily {
    pub const ALL: [MutationFamily; 2] = [MutationFamily::Typographic, MutationFamily::MissingDeclaration];

    pub fn name(self) -> &'static str {
        match self {
            MutationFamily::Typographic => "Typographic",
            MutationFamily::MissingDeclaration => "MissingDeclaration",
        }
    }
}

impl fmt::Display for MutationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MutationFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MutationFamily::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| format!("unknown mutation family `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditKind {
    DeleteToken,
    InsertToken,
    ReplaceToken,
    DropDeclarator,
}

/// One applied mutation. `column` is the 1-based token position the edit
/// starts at; `payload` holds the removed or inserted tokens (for a
/// replacement: the original followed by its substitute).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub family: MutationFamily,
    pub line: usize,
    pub column: usize,
    pub edit: EditKind,
    pub payload: Vec<TokenId>,
}

/// The fix for one line: its number and its corrected content. As a decoder
/// target it is `LINE_k tokens.. _eos_`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixTarget {
    pub line_no: usize,
    pub tokens: Vec<TokenId>,
}

impl FixTarget {
    /// Decoder target sequence. `None` when the line number has no
    /// `LINE_k` token.
    pub fn to_sequence(&self, vocab: &Vocab) -> Option<Vec<TokenId>> {
        let mut seq = Vec::with_capacity(self.tokens.len() + 2);
        seq.push(vocab.line_token(self.line_no)?);
        seq.extend_from_slice(&self.tokens);
        seq.push(vocab.eos());
        Some(seq)
    }

    /// Parses `LINE_k tokens.. _eos_`. A bare `_eos_`, a missing line token or
    /// a missing terminator all yield `None`.
    pub fn from_sequence(vocab: &Vocab, seq: &[TokenId]) -> Option<FixTarget> {
        let (&first, rest) = seq.split_first()?;
        let line_no = vocab.line_number(first)?;
        let (&last, body) = rest.split_last()?;
        if last != vocab.eos() || body.contains(&vocab.eos()) {
            return None;
        }
        Some(FixTarget { line_no, tokens: body.to_vec() })
    }
}

fn delimiters(vocab: &Vocab) -> [TokenId; 6] {
    [
        vocab.fixed(TokenKind::Semicolon, ";"),
        vocab.fixed(TokenKind::OpenParen, "("),
        vocab.fixed(TokenKind::CloseParen, ")"),
        vocab.fixed(TokenKind::OpenBrace, "{"),
        vocab.fixed(TokenKind::CloseBrace, "}"),
        vocab.fixed(TokenKind::Comma, ","),
    ]
}

fn is_delimiter(vocab: &Vocab, t: TokenId) -> bool {
    matches!(
        vocab.kind(t),
        TokenKind::Semicolon
            | TokenKind::OpenParen
            | TokenKind::CloseParen
            | TokenKind::OpenBrace
            | TokenKind::CloseBrace
            | TokenKind::Comma
    )
}

const OPERATOR_CLASSES: [&[&str]; 4] = [&ASSIGN_OPS, &BINARY_OPS, &UNARY_OPS, &STEP_OPS];

fn operator_class(lexeme: &str) -> usize {
    OPERATOR_CLASSES.iter().position(|c| c.contains(&lexeme)).unwrap_or(0)
}

/// Applies one typographic edit without checking the precondition on `p`.
pub(crate) fn apply_typographic<R: Rng>(vocab: &Vocab, p: &Program, rng: &mut R) -> Result<(Program, MutationRecord), CorpusError> {
    let eligible: Vec<usize> = (0..p.lines.len()).filter(|&i| p.lines[i].iter().any(|&t| vocab.kind(t).is_mutable())).collect();
    let &li = eligible.choose(rng).ok_or(CorpusError::NoMutableSite)?;
    let line = &p.lines[li];
    let deletable: Vec<usize> = (0..line.len()).filter(|&i| is_delimiter(vocab, line[i])).collect();
    let replaceable: Vec<usize> = (0..line.len()).filter(|&i| vocab.kind(line[i]) == TokenKind::Operator).collect();
    let mut edits = vec![EditKind::InsertToken];
    if !deletable.is_empty() {
        edits.push(EditKind::DeleteToken);
    }
    if !replaceable.is_empty() {
        edits.push(EditKind::ReplaceToken);
    }
    let edit = *edits.choose(rng).unwrap();
    let mut new_line = line.clone();
    let (column, payload) = match edit {
        EditKind::DeleteToken => {
            let &i = deletable.choose(rng).unwrap();
            (i + 1, vec![new_line.remove(i)])
        }
        EditKind::InsertToken => {
            let &t = delimiters(vocab).choose(rng).unwrap();
            let i = rng.random_range(0..=new_line.len());
            new_line.insert(i, t);
            (i + 1, vec![t])
        }
        EditKind::ReplaceToken => {
            let &i = replaceable.choose(rng).unwrap();
            let old = new_line[i];
            let own = operator_class(vocab.lexeme(old));
            let classes: Vec<usize> = (0..OPERATOR_CLASSES.len()).filter(|&c| c != own).collect();
            let &class = classes.choose(rng).unwrap();
            let &lex = OPERATOR_CLASSES[class].choose(rng).unwrap();
            let new = vocab.fixed(TokenKind::Operator, lex);
            new_line[i] = new;
            (i + 1, vec![old, new])
        }
        EditKind::DropDeclarator => unreachable!(),
    };
    let mut out = p.clone();
    out.lines[li] = new_line;
    let record = MutationRecord { family: MutationFamily::Typographic, line: li + 1, column, edit, payload };
    Ok((out, record))
}

/// Declarator spans `[start, end)` of a declaration line, split at top-level
/// commas. Empty for non-declarations.
fn declarators(vocab: &Vocab, line: &[TokenId]) -> Vec<(usize, usize)> {
    if line.first().map(|&t| vocab.kind(t)) != Some(TokenKind::TypeName) {
        return Vec::new();
    }
    let end = match line.iter().position(|&t| vocab.kind(t) == TokenKind::Semicolon) {
        Some(e) => e,
        None => return Vec::new(),
    };
    let mut spans = Vec::new();
    let mut start = 1;
    let mut depth = 0i32;
    for (i, &t) in line.iter().enumerate().take(end).skip(1) {
        match vocab.kind(t) {
            TokenKind::OpenParen => depth += 1,
            TokenKind::CloseParen => depth -= 1,
            TokenKind::Comma if depth == 0 => {
                spans.push((start, i));
                start = i + 1;
            }
            _ => {}
        }
    }
    spans.push((start, end));
    spans.retain(|&(s, e)| e > s && vocab.kind(line[s]) == TokenKind::Identifier);
    spans
}

/// Applies one declarator drop without checking the precondition on `p`.
pub(crate) fn apply_missing_decl<R: Rng>(vocab: &Vocab, p: &Program, rng: &mut R) -> Result<(Program, MutationRecord), CorpusError> {
    // (line index, declarator span) pairs whose variable is used on a later line.
    let mut sites = Vec::new();
    for (li, line) in p.lines.iter().enumerate() {
        for span in declarators(vocab, line) {
            let var = line[span.0];
            if p.lines[li + 1..].iter().any(|l| l.contains(&var)) {
                sites.push((li, span));
            }
        }
    }
    let &(li, (s, e)) = sites.choose(rng).ok_or(CorpusError::NoMutableSite)?;
    let line = &p.lines[li];
    let total = declarators(vocab, line).len();
    let new_line: Vec<TokenId> = if total == 1 {
        vec![vocab.fixed(TokenKind::Semicolon, ";")]
    } else {
        // Remove the declarator together with one adjacent comma.
        let comma_after = vocab.kind(line[e]) == TokenKind::Comma;
        let (cut_s, cut_e) = if comma_after { (s, e + 1) } else { (s - 1, e) };
        line[..cut_s].iter().chain(&line[cut_e..]).copied().collect()
    };
    let record = MutationRecord {
        family: MutationFamily::MissingDeclaration,
        line: li + 1,
        column: s + 1,
        edit: EditKind::DropDeclarator,
        payload: line[s..e].to_vec(),
    };
    let mut out = p.clone();
    out.lines[li] = new_line;
    Ok((out, record))
}

fn require_accepted(vocab: &Vocab, p: &Program) -> Result<(), CorpusError> {
    if check(vocab, p).accepted() {
        Ok(())
    } else {
        Err(CorpusError::SeedRejected { index: 0 })
    }
}

fn fix_for(p: &Program, record: &MutationRecord) -> FixTarget {
    FixTarget { line_no: record.line, tokens: p.lines[record.line - 1].clone() }
}

/// Deletes a delimiter, inserts an extraneous one, or swaps an operator for
/// one of an incompatible class, on a uniformly chosen eligible line. The fix
/// is the original line.
pub fn mutate_typographic<R: Rng>(vocab: &Vocab, p: &Program, rng: &mut R) -> Result<(Program, FixTarget, MutationRecord), CorpusError> {
    require_accepted(vocab, p)?;
    let (x, record) = apply_typographic(vocab, p, rng)?;
    Ok((x, fix_for(p, &record), record))
}

/// Drops one declarator whose variable is used later. A sole declarator
/// leaves the empty statement `;` behind. The fix is the original line.
pub fn mutate_missing_decl<R: Rng>(vocab: &Vocab, p: &Program, rng: &mut R) -> Result<(Program, FixTarget, MutationRecord), CorpusError> {
    require_accepted(vocab, p)?;
    let (x, record) = apply_missing_decl(vocab, p, rng)?;
    Ok((x, fix_for(p, &record), record))
}

/// Applies `count` mutations of one family in sequence. Returns the mutated
/// program, the fix for the first line that differs from `p`, and the
/// records in application order. Missing-declaration stacks stop early once
/// no declarator is left to drop.
pub(crate) fn stack<R: Rng>(
    vocab: &Vocab,
    p: &Program,
    family: MutationFamily,
    count: usize,
    rng: &mut R,
) -> Result<(Program, FixTarget, Vec<MutationRecord>), CorpusError> {
    let mut x = p.clone();
    let mut records = Vec::with_capacity(count);
    for k in 0..count {
        let step = match family {
            MutationFamily::Typographic => apply_typographic(vocab, &x, rng),
            MutationFamily::MissingDeclaration => apply_missing_decl(vocab, &x, rng),
        };
        match step {
            Ok((next, record)) => {
                x = next;
                records.push(record);
            }
            Err(CorpusError::NoMutableSite) if k > 0 => break,
            Err(e) => return Err(e),
        }
    }
    let touched: HashSet<usize> = records.iter().map(|r| r.line).collect();
    let first =
        (1..=p.lines.len()).find(|&l| touched.contains(&l) && x.lines[l - 1] != p.lines[l - 1]).ok_or(CorpusError::NoMutableSite)?;
    let fix = FixTarget { line_no: first, tokens: p.lines[first - 1].clone() };
    Ok((x, fix, records))
}
