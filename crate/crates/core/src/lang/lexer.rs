use std::collections::HashMap;

use thiserror::Error;

use super::program::Program;
use super::vocab::{TokenId, TokenKind, Vocab, KEYWORDS, NUM, STR, TYPE_NAMES};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexError {
    #[error("line {line}, column {column}: character {ch:?} is not part of the language")]
    BadChar { line: usize, column: usize, ch: char },
    #[error("line {line}: unterminated literal")]
    Unterminated { line: usize },
    #[error("line {line}: identifier `{name}` exceeds the pool of {pool} names")]
    TooManyIdentifiers { line: usize, name: String, pool: usize },
}

const TWO_CHAR_OPS: [&str; 12] = ["+=", "-=", "*=", "/=", "==", "!=", "<=", ">=", "&&", "||", "++", "--"];

/// Splits source text into lines of vocabulary tokens. Identifiers are renamed
/// to `ID_k` in order of first occurrence; every numeric or character literal
/// becomes `NUM` and every string literal `STR`.
pub fn tokenize(vocab: &Vocab, source: &str) -> Result<Program, LexError> {
    tokenize_mapped(vocab, source).map(|(p, _)| p)
}

/// Original spellings behind a tokenized program.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceMap {
    /// Source name of `ID_k`, by `k`.
    pub names: Vec<String>,
    /// Literal spellings per line, in order of appearance.
    pub literals: Vec<Vec<String>>,
}

impl SourceMap {
    /// Renders a token line with identifiers restored and literals taken,
    /// in order, from line `line_no` of the source where available.
    pub fn restore_line(&self, vocab: &Vocab, line_no: usize, tokens: &[TokenId]) -> String {
        let mut lits = self.literals.get(line_no.wrapping_sub(1)).map(|l| l.iter()).into_iter().flatten();
        tokens
            .iter()
            .map(|&t| match vocab.ident_index(t) {
                Some(k) => self.names.get(k).cloned().unwrap_or_else(|| vocab.lexeme(t).to_string()),
                None if t == vocab.num() || t == vocab.fixed(TokenKind::Special, STR) => {
                    lits.next().cloned().unwrap_or_else(|| vocab.lexeme(t).to_string())
                }
                None => vocab.lexeme(t).to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// [`tokenize`] that also returns the original identifier and literal text.
pub fn tokenize_mapped(vocab: &Vocab, source: &str) -> Result<(Program, SourceMap), LexError> {
    let mut names: HashMap<String, TokenId> = HashMap::new();
    let mut map = SourceMap::default();
    let mut lines = Vec::new();
    for (li, text) in source.lines().enumerate() {
        let line_no = li + 1;
        let mut out = Vec::new();
        let mut lits = Vec::new();
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            let bad = || LexError::BadChar { line: line_no, column: i + 1, ch: text[i..].chars().next().unwrap_or(c) };
            if !c.is_ascii() {
                return Err(bad());
            }
            if c == ' ' || c == '\t' || c == '\r' {
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                let id = if KEYWORDS.contains(&word) {
                    vocab.fixed(TokenKind::Keyword, word)
                } else if TYPE_NAMES.contains(&word) {
                    vocab.fixed(TokenKind::TypeName, word)
                } else if word == NUM {
                    lits.push(word.to_string());
                    vocab.num()
                } else if word == STR {
                    lits.push(word.to_string());
                    vocab.fixed(TokenKind::Special, STR)
                } else if let Some(&id) = names.get(word) {
                    id
                } else {
                    let id = vocab.ident(names.len()).ok_or_else(|| LexError::TooManyIdentifiers {
                        line: line_no,
                        name: word.to_string(),
                        pool: vocab.config().id_pool,
                    })?;
                    names.insert(word.to_string(), id);
                    map.names.push(word.to_string());
                    id
                };
                out.push(id);
                continue;
            }
            if c.is_ascii_digit() {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                lits.push(text[start..i].to_string());
                out.push(vocab.num());
                continue;
            }
            if c == '"' || c == '\'' {
                let start = i;
                let quote = bytes[i];
                i += 1;
                loop {
                    match bytes.get(i) {
                        None => return Err(LexError::Unterminated { line: line_no }),
                        Some(b'\\') => i += 2,
                        Some(&b) if b == quote => {
                            i += 1;
                            break;
                        }
                        Some(b) if !b.is_ascii() => {
                            return Err(LexError::BadChar { line: line_no, column: i + 1, ch: text[i..].chars().next().unwrap_or('?') })
                        }
                        Some(_) => i += 1,
                    }
                }
                lits.push(text[start..i.min(bytes.len())].to_string());
                out.push(if quote == b'"' { vocab.fixed(TokenKind::Special, STR) } else { vocab.num() });
                continue;
            }
            if text[i..].starts_with("//") {
                break;
            }
            if let Some(op) = TWO_CHAR_OPS.iter().find(|op| text[i..].starts_with(*op)) {
                out.push(vocab.fixed(TokenKind::Operator, op));
                i += 2;
                continue;
            }
            let single = match c {
                '=' | '+' | '-' | '*' | '/' | '%' | '<' | '>' | '!' => Some((TokenKind::Operator, c)),
                '&' => Some((TokenKind::Separator, c)),
                '{' => Some((TokenKind::OpenBrace, c)),
                '}' => Some((TokenKind::CloseBrace, c)),
                '(' => Some((TokenKind::OpenParen, c)),
                ')' => Some((TokenKind::CloseParen, c)),
                ';' => Some((TokenKind::Semicolon, c)),
                ',' => Some((TokenKind::Comma, c)),
                _ => None,
            };
            match single {
                Some((kind, ch)) => {
                    out.push(vocab.fixed(kind, ch.encode_utf8(&mut [0; 4])));
                    i += 1;
                }
                None => return Err(bad()),
            }
        }
        lines.push(out);
        map.literals.push(lits);
    }
    Ok((Program { lines }, map))
}

/// Inverse of [`tokenize`] on canonical token streams: lexemes joined by a
/// single space, lines joined by `\n`.
pub fn detokenize(vocab: &Vocab, program: &Program) -> String {
    program.lines.iter().map(|line| line_text(vocab, line)).collect::<Vec<_>>().join("\n")
}

pub fn line_text(vocab: &Vocab, tokens: &[TokenId]) -> String {
    tokens.iter().map(|&t| vocab.lexeme(t)).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexemes(v: &Vocab, p: &Program) -> Vec<Vec<String>> {
        p.lines.iter().map(|l| l.iter().map(|&t| v.render(t)).collect()).collect()
    }

    #[test]
    fn source_map_restores_spellings() {
        let v = Vocab::default();
        let src = "int total = 42 ;\nprintf ( \"%d\\n\" , total ) ;";
        let (p, map) = tokenize_mapped(&v, src).unwrap();
        assert_eq!(map.names, vec!["total".to_string()]);
        for (i, line) in p.lines.iter().enumerate() {
            assert_eq!(map.restore_line(&v, i + 1, line), src.lines().nth(i).unwrap());
        }
        let fresh = v.ident(3).unwrap();
        assert_eq!(map.restore_line(&v, 1, &[fresh]), "ID_3");
        assert_eq!(map.restore_line(&v, 1, &[v.num(), v.num()]), "42 NUM");
    }

    #[test]
    fn declaration_and_assignment() {
        let v = Vocab::default();
        let p = tokenize(&v, "int a ; a = 1 ;").unwrap();
        assert_eq!(
            lexemes(&v, &p),
            vec![vec!["TypeName:int", "Identifier:ID_0", "Semicolon:;", "Identifier:ID_0", "Operator:=", "IntLiteral:NUM", "Semicolon:;"]]
        );
    }

    #[test]
    fn empty_source_has_no_lines() {
        let v = Vocab::default();
        assert_eq!(tokenize(&v, "").unwrap().line_count(), 0);
    }

    #[test]
    fn first_occurrence_renaming_and_literals() {
        let v = Vocab::default();
        let p = tokenize(&v, "int x; int y; y = x + 2;").unwrap();
        let r = lexemes(&v, &p).concat();
        assert_eq!(r[1], "Identifier:ID_0");
        assert_eq!(r[4], "Identifier:ID_1");
        assert_eq!(r[8], "Identifier:ID_0");
        assert_eq!(r[10], "IntLiteral:NUM");
        let p2 = tokenize(&v, "int x; x = 17; x = 3.5;").unwrap();
        assert_eq!(p2.lines[0][5], p2.lines[0][9]);
    }

    #[test]
    fn operators_use_longest_match() {
        let v = Vocab::default();
        let p = tokenize(&v, "a<=b&&c++").unwrap();
        let r: Vec<_> = p.lines[0].iter().map(|&t| v.lexeme(t).to_string()).collect();
        assert_eq!(r, ["ID_0", "<=", "ID_1", "&&", "ID_2", "++"]);
    }

    #[test]
    fn strings_and_chars() {
        let v = Vocab::default();
        let p = tokenize(&v, r#"printf("%d \"q\"\n", 'x');"#).unwrap();
        let r: Vec<_> = p.lines[0].iter().map(|&t| v.lexeme(t).to_string()).collect();
        assert_eq!(r, ["printf", "(", "STR", ",", "NUM", ")", ";"]);
        assert_eq!(tokenize(&v, "printf(\"abc"), Err(LexError::Unterminated { line: 1 }));
    }

    #[test]
    fn rejects_foreign_characters() {
        let v = Vocab::default();
        assert_eq!(tokenize(&v, "int a;\n#include"), Err(LexError::BadChar { line: 2, column: 1, ch: '#' }));
        assert!(matches!(tokenize(&v, "a[0] = 1;"), Err(LexError::BadChar { ch: '[', .. })));
        assert!(matches!(tokenize(&v, "a | b"), Err(LexError::BadChar { ch: '|', .. })));
        assert!(matches!(tokenize(&v, "é"), Err(LexError::BadChar { ch: 'é', .. })));
    }

    #[test]
    fn identifier_pool_overflow() {
        let v = Vocab::new(crate::lang::VocabConfig { id_pool: 2, max_lines: 8 });
        assert!(matches!(
            tokenize(&v, "a b c"),
            Err(LexError::TooManyIdentifiers { name, .. }) if name == "c"
        ));
    }

    #[test]
    fn line_comments_are_skipped() {
        let v = Vocab::default();
        let p = tokenize(&v, "a = 1 ; // note\n// whole line").unwrap();
        assert_eq!(p.lines[0].len(), 4);
        assert!(p.lines[1].is_empty());
    }

    #[test]
    fn detokenize_examples() {
        let v = Vocab::default();
        let p = Program::new(vec![vec![v.fixed(TokenKind::TypeName, "int"), v.ident(0).unwrap(), v.fixed(TokenKind::Semicolon, ";")]]);
        assert_eq!(detokenize(&v, &p), "int ID_0 ;");
        assert_eq!(detokenize(&v, &Program::default()), "");
        let two = tokenize(&v, "int a ;\na = 1 ;").unwrap();
        assert_eq!(detokenize(&v, &two), "int ID_0 ;\nID_0 = NUM ;");
    }
}
