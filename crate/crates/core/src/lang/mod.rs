//! The C-subset language: vocabulary, tokenizer and checker.

mod checker;
mod lexer;
mod program;
mod vocab;

pub use checker::{check, check_with_cap, Diagnostic, DiagnosticCode, DiagnosticReport, DEFAULT_MAX_DIAGNOSTICS};
pub use lexer::{detokenize, line_text, tokenize, tokenize_mapped, LexError, SourceMap};
pub use program::{parse_tokens, rename, render_tokens, Program};
pub use vocab::{
    TokenId, TokenKind, Vocab, VocabConfig, ASSIGN_OPS, BINARY_OPS, EOS, GO, KEYWORDS, NUM, PAD, STEP_OPS, STR, TYPE_NAMES, UNARY_OPS,
};
