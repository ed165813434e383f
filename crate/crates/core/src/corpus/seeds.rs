//! Template-instantiated seed programs: declarations followed by loops,
//! conditionals, arithmetic and I/O over a handful of variables. Every seed
//! is accepted by the checker.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lang::{check, tokenize, Program, Vocab};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub max_lines: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { min_tokens: 75, max_tokens: 450, max_lines: 64 }
    }
}

const NAMES: [&str; 16] = ["n", "i", "j", "k", "sum", "count", "total", "x", "y", "tmp", "best", "val", "lo", "hi", "step", "acc"];
const FORMATS: [&str; 3] = ["\"%d\\n\"", "\"%d \"", "\"result %d\\n\""];

struct Builder<'r, R: Rng> {
    rng: &'r mut R,
    vars: Vec<&'static str>,
    lines: Vec<String>,
    tokens: usize,
}

impl<R: Rng> Builder<'_, R> {
    fn emit(&mut self, depth: usize, text: String) {
        self.tokens += text.split_whitespace().count();
        self.lines.push(format!("{}{}", "    ".repeat(depth), text));
    }

    fn var(&mut self) -> &'static str {
        self.vars.choose(self.rng).copied().unwrap_or("n")
    }

    fn operand(&mut self) -> String {
        if self.rng.random_bool(0.65) {
            self.var().to_string()
        } else {
            self.rng.random_range(0..20).to_string()
        }
    }

    fn expr(&mut self, depth: usize) -> String {
        if depth == 0 || self.rng.random_bool(0.45) {
            return self.operand();
        }
        let op = *["+", "-", "*", "/", "%"].choose(self.rng).unwrap();
        let lhs = self.expr(depth - 1);
        let rhs = self.expr(depth - 1);
        if self.rng.random_bool(0.25) {
            format!("( {lhs} {op} {rhs} )")
        } else {
            format!("{lhs} {op} {rhs}")
        }
    }

    fn cond(&mut self) -> String {
        let op = *["<", "<=", ">", ">=", "==", "!="].choose(self.rng).unwrap();
        let lhs = self.var();
        let rhs = self.expr(1);
        let base = format!("{lhs} {op} {rhs}");
        match self.rng.random_range(0..8) {
            0 => {
                let v = self.var();
                format!("{base} && {v} > 0")
            }
            1 => {
                let v = self.var();
                format!("{v} % 2 == 0 || {base}")
            }
            2 => format!("! ( {base} )"),
            _ => base,
        }
    }

    fn simple(&mut self, depth: usize) {
        let v = self.var();
        let text = match self.rng.random_range(0..10) {
            0..=4 => format!("{v} = {} ;", self.expr(2)),
            5 | 6 => {
                let op = *["+=", "-=", "*="].choose(self.rng).unwrap();
                format!("{v} {op} {} ;", self.expr(1))
            }
            7 => format!("{v} {} ;", ["++", "--"].choose(self.rng).unwrap()),
            8 => format!("printf ( {} , {} ) ;", FORMATS.choose(self.rng).unwrap(), self.expr(1)),
            _ => format!("scanf ( \"%d\" , & {v} ) ;"),
        };
        self.emit(depth, text);
    }

    fn body(&mut self, depth: usize, budget: usize) {
        for _ in 0..budget.max(1) {
            self.statement(depth);
        }
    }

    fn statement(&mut self, depth: usize) {
        let roll = if depth >= 2 { 0 } else { self.rng.random_range(0..10) };
        match roll {
            0..=5 => self.simple(depth),
            6 | 7 => {
                let c = self.cond();
                self.emit(depth, format!("if ( {c} ) {{"));
                let n = self.rng.random_range(1..3);
                self.body(depth + 1, n);
                if self.rng.random_bool(0.4) {
                    self.emit(depth, "} else {".into());
                    let n = self.rng.random_range(1..3);
                    self.body(depth + 1, n);
                }
                self.emit(depth, "}".into());
            }
            8 => {
                let c = self.cond();
                self.emit(depth, format!("while ( {c} ) {{"));
                let n = self.rng.random_range(1..3);
                self.body(depth + 1, n);
                let v = self.var();
                self.emit(depth + 1, format!("{v} ++ ;"));
                self.emit(depth, "}".into());
            }
            _ => {
                let v = self.var();
                let bound = self.operand();
                self.emit(depth, format!("for ( {v} = 0 ; {v} < {bound} ; {v} ++ ) {{"));
                let n = self.rng.random_range(1..3);
                self.body(depth + 1, n);
                self.emit(depth, "}".into());
            }
        }
    }
}

/// Source text of one seed program. Not guaranteed to satisfy the token
/// bounds; [`generate_seed`] filters.
pub fn seed_source<R: Rng>(rng: &mut R, target_tokens: usize, max_lines: usize) -> String {
    let n_vars = rng.random_range(3..=7);
    let mut pool: Vec<&'static str> = NAMES.to_vec();
    let mut vars = Vec::with_capacity(n_vars);
    for _ in 0..n_vars {
        let i = rng.random_range(0..pool.len());
        vars.push(pool.swap_remove(i));
    }
    let mut b = Builder { rng, vars: vars.clone(), lines: Vec::new(), tokens: 0 };

    // Declarations: mostly one declarator per line, occasionally two.
    let mut pending = vars.clone();
    while !pending.is_empty() {
        let ty = *["int", "int", "int", "float", "char"].choose(b.rng).unwrap();
        let take = if pending.len() >= 2 && b.rng.random_bool(0.25) { 2 } else { 1 };
        let decls: Vec<String> = pending
            .drain(..take)
            .map(|v| if b.rng.random_bool(0.3) { format!("{v} = {}", b.rng.random_range(0..10)) } else { v.to_string() })
            .collect();
        b.emit(0, format!("{ty} {} ;", decls.join(" , ")));
    }
    loop {
        let before = (b.lines.len(), b.tokens);
        b.statement(0);
        if b.lines.len() + 1 > max_lines {
            b.lines.truncate(before.0);
            b.tokens = before.1;
            break;
        }
        if b.tokens >= target_tokens {
            break;
        }
    }
    if b.rng.random_bool(0.5) && b.lines.len() < max_lines {
        b.emit(0, "return 0 ;".into());
    }
    b.lines.join("\n")
}

/// Draws one accepted seed program within the configured bounds.
pub fn generate_seed<R: Rng>(vocab: &Vocab, cfg: &SeedConfig, rng: &mut R) -> Program {
    let max_lines = cfg.max_lines.min(vocab.config().max_lines);
    loop {
        let target = rng.random_range(cfg.min_tokens..=cfg.max_tokens.max(cfg.min_tokens));
        let src = seed_source(rng, target, max_lines);
        let Ok(p) = tokenize(vocab, &src) else { continue };
        let n = p.token_count();
        if n < cfg.min_tokens || n > cfg.max_tokens || p.line_count() > max_lines {
            continue;
        }
        if check(vocab, &p).accepted() {
            return p;
        }
    }
}

/// `n` seeds, each drawn from its own derived stream.
pub fn generate_seeds(vocab: &Vocab, cfg: &SeedConfig, n: usize, seed: u64) -> Vec<Program> {
    (0..n).map(|i| generate_seed(vocab, cfg, &mut rng::derive(seed, &[0x5eed, i as u64]))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_respect_bounds_and_are_accepted() {
        let v = Vocab::default();
        let cfg = SeedConfig::default();
        for p in generate_seeds(&v, &cfg, 20, 3) {
            assert!((cfg.min_tokens..=cfg.max_tokens).contains(&p.token_count()));
            assert!(p.line_count() <= cfg.max_lines);
            assert!(check(&v, &p).accepted());
        }
    }

    #[test]
    fn small_bounds() {
        let v = Vocab::default();
        let cfg = SeedConfig { min_tokens: 30, max_tokens: 60, max_lines: 16 };
        let seeds = generate_seeds(&v, &cfg, 10, 1);
        assert!(seeds.iter().all(|p| p.line_count() <= 16 && p.token_count() <= 60));
        assert_eq!(seeds, generate_seeds(&v, &cfg, 10, 1));
    }
}
