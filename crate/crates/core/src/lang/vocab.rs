use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Lexical class of a vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenKind {
    Keyword,
    TypeName,
    Identifier,
    IntLiteral,
    Operator,
    Separator,
    OpenBrace,
    CloseBrace,
    OpenParen,
    CloseParen,
    Semicolon,
    Comma,
    Special,
}

impl TokenKind {
    pub const ALL: [TokenKind; 13] = [
        TokenKind::Keyword,
        TokenKind::TypeName,
        TokenKind::Identifier,
        TokenKind::IntLiteral,
        TokenKind::Operator,
        TokenKind::Separator,
        TokenKind::OpenBrace,
        TokenKind::CloseBrace,
        TokenKind::OpenParen,
        TokenKind::CloseParen,
        TokenKind::Semicolon,
        TokenKind::Comma,
        TokenKind::Special,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TokenKind::Keyword => "Keyword",
            TokenKind::TypeName => "TypeName",
            TokenKind::Identifier => "Identifier",
            TokenKind::IntLiteral => "IntLiteral",
            TokenKind::Operator => "Operator",
            TokenKind::Separator => "Separator",
            TokenKind::OpenBrace => "OpenBrace",
            TokenKind::CloseBrace => "CloseBrace",
            TokenKind::OpenParen => "OpenParen",
            TokenKind::CloseParen => "CloseParen",
            TokenKind::Semicolon => "Semicolon",
            TokenKind::Comma => "Comma",
            TokenKind::Special => "Special",
        }
    }

    pub fn from_name(name: &str) -> Option<TokenKind> {
        TokenKind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Delimiters and operators: the sites typographic mutations may touch.
    pub fn is_mutable(self) -> bool {
        matches!(
            self,
            TokenKind::Semicolon
                | TokenKind::OpenParen
                | TokenKind::CloseParen
                | TokenKind::OpenBrace
                | TokenKind::CloseBrace
                | TokenKind::Comma
                | TokenKind::Operator
        )
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Index into a [`Vocab`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const PAD: TokenId = TokenId(0);
    pub const EOS: TokenId = TokenId(1);
    pub const GO: TokenId = TokenId(2);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub const KEYWORDS: [&str; 7] = ["if", "else", "while", "for", "return", "printf", "scanf"];
pub const TYPE_NAMES: [&str; 4] = ["int", "float", "char", "double"];
pub const ASSIGN_OPS: [&str; 5] = ["=", "+=", "-=", "*=", "/="];
pub const BINARY_OPS: [&str; 13] = ["+", "-", "*", "/", "%", "==", "!=", "<", "<=", ">", ">=", "&&", "||"];
pub const UNARY_OPS: [&str; 1] = ["!"];
pub const STEP_OPS: [&str; 2] = ["++", "--"];

pub const PAD: &str = "_pad_";
pub const EOS: &str = "_eos_";
pub const GO: &str = "_go_";
pub const STR: &str = "STR";
pub const NUM: &str = "NUM";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    /// Size of the normalized identifier pool `ID_0..ID_{K-1}`.
    pub id_pool: usize,
    /// Highest addressable line, i.e. the number of `LINE_k` tokens.
    pub max_lines: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig { id_pool: 32, max_lines: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    kind: TokenKind,
    lexeme: String,
}

/// The closed vocabulary: a bijection between ids and `(kind, lexeme)` pairs.
#[derive(Debug, Clone)]
pub struct Vocab {
    config: VocabConfig,
    entries: Vec<Entry>,
    lookup: HashMap<(TokenKind, String), TokenId>,
    first_ident: u32,
    first_line: u32,
}

impl Vocab {
    pub fn new(config: VocabConfig) -> Vocab {
        let mut entries = Vec::new();
        let mut push = |kind: TokenKind, lexeme: &str| {
            entries.push(Entry { kind, lexeme: lexeme.to_string() });
        };
        push(TokenKind::Special, PAD);
        push(TokenKind::Special, EOS);
        push(TokenKind::Special, GO);
        push(TokenKind::Special, STR);
        push(TokenKind::IntLiteral, NUM);
        for kw in KEYWORDS {
            push(TokenKind::Keyword, kw);
        }
        for ty in TYPE_NAMES {
            push(TokenKind::TypeName, ty);
        }
        for op in ASSIGN_OPS.iter().chain(&BINARY_OPS).chain(&UNARY_OPS).chain(&STEP_OPS) {
            push(TokenKind::Operator, op);
        }
        push(TokenKind::Separator, "&");
        push(TokenKind::OpenBrace, "{");
        push(TokenKind::CloseBrace, "}");
        push(TokenKind::OpenParen, "(");
        push(TokenKind::CloseParen, ")");
        push(TokenKind::Semicolon, ";");
        push(TokenKind::Comma, ",");
        let first_ident = entries.len() as u32;
        for k in 0..config.id_pool {
            entries.push(Entry { kind: TokenKind::Identifier, lexeme: format!("ID_{k}") });
        }
        let first_line = entries.len() as u32;
        for k in 1..=config.max_lines {
            entries.push(Entry { kind: TokenKind::Special, lexeme: format!("LINE_{k}") });
        }
        let lookup = entries.iter().enumerate().map(|(i, e)| ((e.kind, e.lexeme.clone()), TokenId(i as u32))).collect();
        Vocab { config, entries, lookup, first_ident, first_line }
    }

    pub fn config(&self) -> VocabConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn kind(&self, id: TokenId) -> TokenKind {
        self.entries[id.index()].kind
    }

    pub fn lexeme(&self, id: TokenId) -> &str {
        &self.entries[id.index()].lexeme
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id.index() < self.entries.len()
    }

    pub fn get(&self, kind: TokenKind, lexeme: &str) -> Option<TokenId> {
        self.lookup.get(&(kind, lexeme.to_string())).copied()
    }

    /// Looks up a fixed (non-pool) token. Panics on unknown lexemes, so only
    /// use it with the constants of this module.
    pub fn fixed(&self, kind: TokenKind, lexeme: &str) -> TokenId {
        self.get(kind, lexeme).unwrap_or_else(|| panic!("{kind}:{lexeme} is not in the vocabulary"))
    }

    pub fn pad(&self) -> TokenId {
        TokenId::PAD
    }

    pub fn eos(&self) -> TokenId {
        TokenId::EOS
    }

    pub fn go(&self) -> TokenId {
        TokenId::GO
    }

    pub fn num(&self) -> TokenId {
        TokenId(4)
    }

    pub fn ident(&self, k: usize) -> Option<TokenId> {
        (k < self.config.id_pool).then(|| TokenId(self.first_ident + k as u32))
    }

    /// Pool index of an identifier token.
    pub fn ident_index(&self, id: TokenId) -> Option<usize> {
        let i = id.0.checked_sub(self.first_ident)? as usize;
        (i < self.config.id_pool).then_some(i)
    }

    /// `LINE_k` token for a 1-based line number.
    pub fn line_token(&self, line_no: usize) -> Option<TokenId> {
        (1..=self.config.max_lines).contains(&line_no).then(|| TokenId(self.first_line + line_no as u32 - 1))
    }

    /// Inverse of [`Vocab::line_token`].
    pub fn line_number(&self, id: TokenId) -> Option<usize> {
        let i = id.0.checked_sub(self.first_line)? as usize;
        (i < self.config.max_lines).then_some(i + 1)
    }

    /// `kind:lexeme` form used by token-stream files.
    pub fn render(&self, id: TokenId) -> String {
        let e = &self.entries[id.index()];
        format!("{}:{}", e.kind, e.lexeme)
    }

    pub fn parse_rendered(&self, s: &str) -> Option<TokenId> {
        let (kind, lexeme) = s.split_once(':')?;
        self.get(TokenKind::from_name(kind)?, lexeme)
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new(VocabConfig::default())
    }
}
