//! The diagnostic-emitting checker that plays the compiler's role in repair.
//!
//! Grammar, recovery rules and the diagnostic catalogue are written down in
//! `docs/diagnostics.md`; this file is the executable form of that document.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::program::Program;
use super::vocab::{TokenId, TokenKind, Vocab};

pub const DEFAULT_MAX_DIAGNOSTICS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiagnosticCode {
    UnbalancedParen,
    UnbalancedBrace,
    MissingSemicolon,
    UndeclaredVariable,
    MalformedExpression,
    EmptyProgram,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub code: DiagnosticCode,
    pub detail: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {:?}: {}", self.line, self.column, self.code, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub diagnostics: Vec<Diagnostic>,
    /// `min(diagnostics.len(), cap)`.
    pub count: usize,
}

impl DiagnosticReport {
    pub fn accepted(&self) -> bool {
        self.count == 0
    }

    pub fn first(&self) -> Option<&Diagnostic> {
        self.diagnostics.first()
    }

    pub fn has(&self, code: DiagnosticCode) -> bool {
        self.diagnostics.iter().any(|d| d.code == code)
    }
}

/// Checks a program with the default diagnostic cap.
pub fn check(vocab: &Vocab, program: &Program) -> DiagnosticReport {
    check_with_cap(vocab, program, DEFAULT_MAX_DIAGNOSTICS)
}

pub fn check_with_cap(vocab: &Vocab, program: &Program, cap: usize) -> DiagnosticReport {
    let toks: Vec<Tok> = program
        .lines
        .iter()
        .enumerate()
        .flat_map(|(li, line)| {
            line.iter().enumerate().map(move |(ci, &id)| Tok { line: li + 1, column: ci + 1, sym: classify(vocab, id), id })
        })
        .collect();

    let mut diags = Vec::new();
    if toks.is_empty() {
        diags.push(Diagnostic { line: 1, column: 1, code: DiagnosticCode::EmptyProgram, detail: "program contains no tokens".into() });
    } else {
        let mut parser = Parser { toks: &toks, pos: 0, diags: Vec::new(), declared: HashSet::new(), reported: HashSet::new() };
        parser.program();
        diags = parser.diags;
        diags.extend(balance(&toks, Sym::LParen, Sym::RParen, DiagnosticCode::UnbalancedParen));
        diags.extend(balance(&toks, Sym::LBrace, Sym::RBrace, DiagnosticCode::UnbalancedBrace));
    }
    diags.sort_by_key(|d| (d.line, d.column));
    let count = diags.len().min(cap);
    DiagnosticReport { diagnostics: diags, count }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sym {
    If,
    Else,
    While,
    For,
    Return,
    Printf,
    Scanf,
    Type,
    Ident,
    Num,
    Str,
    Eq,
    Assign,
    Step,
    Bin(u8),
    Minus,
    Not,
    Amp,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Semi,
    Comma,
    Other,
}

impl Sym {
    fn precedence(self) -> Option<u8> {
        match self {
            Sym::Bin(p) => Some(p),
            Sym::Minus => Some(5),
            _ => None,
        }
    }

    fn starts_statement(self) -> bool {
        matches!(self, Sym::Type | Sym::If | Sym::While | Sym::For | Sym::Return | Sym::Printf | Sym::Scanf | Sym::LBrace | Sym::RBrace)
    }
}

fn classify(vocab: &Vocab, id: TokenId) -> Sym {
    let lex = vocab.lexeme(id);
    match vocab.kind(id) {
        TokenKind::Keyword => match lex {
            "if" => Sym::If,
            "else" => Sym::Else,
            "while" => Sym::While,
            "for" => Sym::For,
            "return" => Sym::Return,
            "printf" => Sym::Printf,
            "scanf" => Sym::Scanf,
            _ => Sym::Other,
        },
        TokenKind::TypeName => Sym::Type,
        TokenKind::Identifier => Sym::Ident,
        TokenKind::IntLiteral => Sym::Num,
        TokenKind::Operator => match lex {
            "=" => Sym::Eq,
            "+=" | "-=" | "*=" | "/=" => Sym::Assign,
            "++" | "--" => Sym::Step,
            "||" => Sym::Bin(1),
            "&&" => Sym::Bin(2),
            "==" | "!=" => Sym::Bin(3),
            "<" | "<=" | ">" | ">=" => Sym::Bin(4),
            "+" => Sym::Bin(5),
            "-" => Sym::Minus,
            "*" | "/" | "%" => Sym::Bin(6),
            "!" => Sym::Not,
            _ => Sym::Other,
        },
        TokenKind::Separator => Sym::Amp,
        TokenKind::OpenBrace => Sym::LBrace,
        TokenKind::CloseBrace => Sym::RBrace,
        TokenKind::OpenParen => Sym::LParen,
        TokenKind::CloseParen => Sym::RParen,
        TokenKind::Semicolon => Sym::Semi,
        TokenKind::Comma => Sym::Comma,
        TokenKind::Special if lex == super::vocab::STR => Sym::Str,
        TokenKind::Special => Sym::Other,
    }
}

#[derive(Debug, Clone, Copy)]
struct Tok {
    line: usize,
    column: usize,
    sym: Sym,
    id: TokenId,
}

/// A diagnostic has been recorded; the caller must resynchronize.
struct Fail;

type PResult = Result<(), Fail>;

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
    diags: Vec<Diagnostic>,
    declared: HashSet<TokenId>,
    reported: HashSet<TokenId>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<Sym> {
        self.toks.get(self.pos).map(|t| t.sym)
    }

    fn at(&self, sym: Sym) -> bool {
        self.peek() == Some(sym)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos];
        self.pos += 1;
        t
    }

    fn eat(&mut self, sym: Sym) -> bool {
        if self.at(sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    /// Position just after the previously consumed token.
    fn after_prev(&self) -> (usize, usize) {
        match self.pos.checked_sub(1).and_then(|p| self.toks.get(p)) {
            Some(t) => (t.line, t.column + 1),
            None => (1, 1),
        }
    }

    fn here(&self) -> (usize, usize) {
        match self.toks.get(self.pos) {
            Some(t) => (t.line, t.column),
            None => self.after_prev(),
        }
    }

    fn report(&mut self, (line, column): (usize, usize), code: DiagnosticCode, detail: impl Into<String>) {
        self.diags.push(Diagnostic { line, column, code, detail: detail.into() });
    }

    fn malformed(&mut self, expected: &str) -> Fail {
        let found = match self.toks.get(self.pos) {
            Some(t) => format!("{:?}", t.sym),
            None => "end of program".to_string(),
        };
        self.report(self.here(), DiagnosticCode::MalformedExpression, format!("expected {expected}, found {found}"));
        Fail
    }

    fn expect(&mut self, sym: Sym, what: &str) -> PResult {
        if self.eat(sym) {
            Ok(())
        } else {
            Err(self.malformed(what))
        }
    }

    /// Requires a `;`. When it is missing but the next token opens a new line
    /// or a new statement, nothing is skipped.
    fn expect_semi(&mut self) -> PResult {
        if self.eat(Sym::Semi) {
            return Ok(());
        }
        let at = self.after_prev();
        self.report(at, DiagnosticCode::MissingSemicolon, "expected `;`");
        match self.toks.get(self.pos) {
            None => Ok(()),
            Some(t) if t.line != at.0 || t.sym.starts_statement() => Ok(()),
            Some(_) => Err(Fail),
        }
    }

    /// Panic-mode recovery: skip through the next `;`, or up to the next brace.
    fn sync(&mut self) {
        while let Some(sym) = self.peek() {
            match sym {
                Sym::Semi => {
                    self.pos += 1;
                    return;
                }
                Sym::LBrace | Sym::RBrace => return,
                _ => self.pos += 1,
            }
        }
    }

    fn use_ident(&mut self, tok: Tok) {
        if !self.declared.contains(&tok.id) && self.reported.insert(tok.id) {
            self.report((tok.line, tok.column), DiagnosticCode::UndeclaredVariable, "use of undeclared identifier");
        }
    }

    fn program(&mut self) {
        while self.pos < self.toks.len() {
            if self.at(Sym::RBrace) {
                // Stray closer; reported by the balance pass.
                self.pos += 1;
                continue;
            }
            self.statement();
        }
    }

    fn statement(&mut self) {
        let start = self.pos;
        let result = match self.peek() {
            Some(Sym::Type) => self.declaration(),
            Some(Sym::Ident) => self.simple().and_then(|_| self.expect_semi()),
            Some(Sym::If) => self.if_statement(),
            Some(Sym::While) => self.while_statement(),
            Some(Sym::For) => self.for_statement(),
            Some(Sym::Return) => self.return_statement(),
            Some(Sym::Printf) => self.printf_statement(),
            Some(Sym::Scanf) => self.scanf_statement(),
            Some(Sym::LBrace) => self.block(),
            Some(Sym::Semi) => {
                self.pos += 1;
                Ok(())
            }
            Some(Sym::RBrace) | None => return,
            Some(_) => {
                let f = self.malformed("a statement");
                self.pos += 1;
                Err(f)
            }
        };
        if result.is_err() {
            self.sync();
        }
        if self.pos == start {
            self.pos += 1;
        }
    }

    fn declaration(&mut self) -> PResult {
        self.bump();
        loop {
            if !self.at(Sym::Ident) {
                return Err(self.malformed("a declarator"));
            }
            let name = self.bump();
            self.declared.insert(name.id);
            if self.eat(Sym::Eq) {
                self.expression(1)?;
            } else if self.at(Sym::Assign) {
                return Err(self.malformed("`=` in initializer"));
            }
            if !self.eat(Sym::Comma) {
                break;
            }
        }
        self.expect_semi()
    }

    /// `ID assign-op expr`, `ID ++` or `ID --`.
    fn simple(&mut self) -> PResult {
        if !self.at(Sym::Ident) {
            return Err(self.malformed("an identifier"));
        }
        let name = self.bump();
        self.use_ident(name);
        match self.peek() {
            Some(Sym::Eq | Sym::Assign) => {
                self.pos += 1;
                self.expression(1)
            }
            Some(Sym::Step) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.malformed("an assignment")),
        }
    }

    fn block(&mut self) -> PResult {
        self.expect(Sym::LBrace, "`{`")?;
        loop {
            match self.peek() {
                Some(Sym::RBrace) => {
                    self.pos += 1;
                    return Ok(());
                }
                // Unclosed block; reported by the balance pass.
                None => return Ok(()),
                Some(_) => self.statement(),
            }
        }
    }

    fn condition(&mut self) -> PResult {
        self.expect(Sym::LParen, "`(`")?;
        self.expression(1)?;
        self.expect(Sym::RParen, "`)`")
    }

    fn if_statement(&mut self) -> PResult {
        self.bump();
        self.condition()?;
        self.block()?;
        if self.eat(Sym::Else) {
            if self.at(Sym::If) {
                return self.if_statement();
            }
            self.block()?;
        }
        Ok(())
    }

    fn while_statement(&mut self) -> PResult {
        self.bump();
        self.condition()?;
        self.block()
    }

    fn for_semi(&mut self) {
        if !self.eat(Sym::Semi) {
            let at = self.after_prev();
            self.report(at, DiagnosticCode::MissingSemicolon, "expected `;` in loop header");
        }
    }

    fn for_statement(&mut self) -> PResult {
        self.bump();
        self.expect(Sym::LParen, "`(`")?;
        if !self.at(Sym::Semi) {
            self.simple()?;
        }
        self.for_semi();
        if !self.at(Sym::Semi) {
            self.expression(1)?;
        }
        self.for_semi();
        if !self.at(Sym::RParen) {
            self.simple()?;
        }
        self.expect(Sym::RParen, "`)`")?;
        self.block()
    }

    fn return_statement(&mut self) -> PResult {
        self.bump();
        if !self.at(Sym::Semi) {
            self.expression(1)?;
        }
        self.expect_semi()
    }

    fn printf_statement(&mut self) -> PResult {
        self.bump();
        self.expect(Sym::LParen, "`(`")?;
        self.expect(Sym::Str, "a format string")?;
        while self.eat(Sym::Comma) {
            self.expression(1)?;
        }
        self.expect(Sym::RParen, "`)`")?;
        self.expect_semi()
    }

    fn scanf_statement(&mut self) -> PResult {
        self.bump();
        self.expect(Sym::LParen, "`(`")?;
        self.expect(Sym::Str, "a format string")?;
        while self.eat(Sym::Comma) {
            self.expect(Sym::Amp, "`&`")?;
            if !self.at(Sym::Ident) {
                return Err(self.malformed("an identifier"));
            }
            let name = self.bump();
            self.use_ident(name);
        }
        self.expect(Sym::RParen, "`)`")?;
        self.expect_semi()
    }

    fn expression(&mut self, min_prec: u8) -> PResult {
        self.unary()?;
        while let Some(p) = self.peek().and_then(Sym::precedence) {
            if p < min_prec {
                break;
            }
            self.pos += 1;
            self.expression(p + 1)?;
        }
        Ok(())
    }

    fn unary(&mut self) -> PResult {
        if self.eat(Sym::Not) || self.eat(Sym::Minus) {
            return self.unary();
        }
        match self.peek() {
            Some(Sym::Ident) => {
                let t = self.bump();
                self.use_ident(t);
                Ok(())
            }
            Some(Sym::Num) => {
                self.pos += 1;
                Ok(())
            }
            Some(Sym::LParen) => {
                self.pos += 1;
                self.expression(1)?;
                self.expect(Sym::RParen, "`)`")
            }
            _ => Err(self.malformed("an operand")),
        }
    }
}

/// One diagnostic per delimiter pair at the earliest offending position: the
/// first closer without an opener, or the first opener never closed.
fn balance(toks: &[Tok], open: Sym, close: Sym, code: DiagnosticCode) -> Option<Diagnostic> {
    let mut stack: Vec<&Tok> = Vec::new();
    let mut first_stray: Option<&Tok> = None;
    for t in toks {
        if t.sym == open {
            stack.push(t);
        } else if t.sym == close && stack.pop().is_none() && first_stray.is_none() {
            first_stray = Some(t);
        }
    }
    let unclosed = stack.first().copied();
    let at = match (first_stray, unclosed) {
        (Some(a), Some(b)) => Some(if (a.line, a.column) <= (b.line, b.column) { a } else { b }),
        (a, b) => a.or(b),
    }?;
    let detail = if first_stray.is_some_and(|s| std::ptr::eq(s, at)) {
        "closing delimiter without a matching opener"
    } else {
        "opening delimiter is never closed"
    };
    Some(Diagnostic { line: at.line, column: at.column, code, detail: detail.into() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::tokenize;

    fn report(src: &str) -> DiagnosticReport {
        let v = Vocab::default();
        check(&v, &tokenize(&v, src).unwrap())
    }

    fn codes(src: &str) -> Vec<(usize, DiagnosticCode)> {
        report(src).diagnostics.iter().map(|d| (d.line, d.code)).collect()
    }

    #[test]
    fn accepts_well_formed_program() {
        assert_eq!(report("int ID_0 ; ID_0 = NUM ;").count, 0);
        let src = "int a , b = 2 ;\nfloat s ;\nscanf ( \"%d\" , & a ) ;\nfor ( b = 0 ; b < a ; b ++ ) {\nif ( b % 2 == 0 && ! ( a > 3 ) ) {\ns += - b * ( a - 1 ) ;\n} else if ( b > 1 ) {\ns = s / 2 ;\n} else {\n;\n}\n}\nwhile ( a > 0 ) {\na -- ;\n}\nprintf ( \"%f\" , s ) ;\nreturn 0 ;";
        assert_eq!(codes(src), vec![]);
    }

    #[test]
    fn missing_semicolon_on_line_one() {
        let r = report("int ID_0 ID_0 = NUM ;");
        assert!(r.count >= 1);
        assert_eq!(r.first().unwrap().code, DiagnosticCode::MissingSemicolon);
        assert_eq!(r.first().unwrap().line, 1);
    }

    #[test]
    fn undeclared_use_reported_once() {
        assert_eq!(codes("ID_0 = NUM ;"), vec![(1, DiagnosticCode::UndeclaredVariable)]);
        assert_eq!(codes("a = 1 ;\na = a + 1 ;"), vec![(1, DiagnosticCode::UndeclaredVariable)]);
    }

    #[test]
    fn empty_program() {
        assert_eq!(codes(""), vec![(1, DiagnosticCode::EmptyProgram)]);
        assert_eq!(codes("\n\n"), vec![(1, DiagnosticCode::EmptyProgram)]);
        assert_eq!(report(";").count, 0);
    }

    #[test]
    fn missing_semicolon_before_new_line_skips_nothing() {
        // Line 2's own error must still be reported.
        assert_eq!(codes("int a\nb = 1 ;"), vec![(1, DiagnosticCode::MissingSemicolon), (2, DiagnosticCode::UndeclaredVariable)]);
        assert_eq!(codes("int a ;\na = 1"), vec![(2, DiagnosticCode::MissingSemicolon)]);
    }

    #[test]
    fn unbalanced_delimiters() {
        assert_eq!(
            codes("int a ;\nif ( a > 1 {\na = 2 ;\n}"),
            vec![(2, DiagnosticCode::UnbalancedParen), (2, DiagnosticCode::MalformedExpression)]
        );
        assert_eq!(codes("int a ;\nwhile ( a ) {\na = 2 ;"), vec![(2, DiagnosticCode::UnbalancedBrace)]);
        assert_eq!(codes("int a ;\n}"), vec![(2, DiagnosticCode::UnbalancedBrace)]);
        assert_eq!(codes("int a ;\na = ( a ) ) ;"), vec![(2, DiagnosticCode::MissingSemicolon), (2, DiagnosticCode::UnbalancedParen)]);
    }

    #[test]
    fn incompatible_operator_is_malformed() {
        assert_eq!(codes("int a ;\nwhile ( a = 1 ) {\n}"), vec![(2, DiagnosticCode::MalformedExpression)]);
        assert_eq!(codes("int a ;\na == 1 ;"), vec![(2, DiagnosticCode::MalformedExpression)]);
        assert_eq!(codes("int a ;\na = 1 + ;"), vec![(2, DiagnosticCode::MalformedExpression)]);
        assert_eq!(codes("int a += 1 ;"), vec![(1, DiagnosticCode::MalformedExpression)]);
    }

    #[test]
    fn for_header_missing_semicolon_recovers_in_place() {
        assert_eq!(codes("int i ;\nfor ( i = 0 i < 3 ; i ++ ) {\n}"), vec![(2, DiagnosticCode::MissingSemicolon)]);
    }

    #[test]
    fn panic_mode_resumes_after_semicolon() {
        // The malformed statement's remainder is skipped; the next statement is checked.
        assert_eq!(
            codes("int a ;\na = 1 2 3 ; b = 1 ;"),
            vec![(2, DiagnosticCode::MissingSemicolon), (2, DiagnosticCode::UndeclaredVariable)]
        );
    }

    #[test]
    fn cap_limits_count() {
        let v = Vocab::default();
        let src = (0..60).map(|_| "else ;").collect::<Vec<_>>().join("\n");
        let p = tokenize(&v, &src).unwrap();
        let r = check(&v, &p);
        assert_eq!(r.diagnostics.len(), 60);
        assert_eq!(r.count, 50);
        assert_eq!(check_with_cap(&v, &p, 5).count, 5);
    }

    #[test]
    fn deterministic() {
        let src = "int a\nif ( a > ) {\nb = ( 1 ;\n}\n}";
        assert_eq!(report(src), report(src));
    }
}
