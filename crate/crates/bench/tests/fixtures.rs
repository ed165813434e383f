use fixsmith::lang::{check, Vocab};
use fixsmith_bench::{desk_model, toy_pairs};

#[test]
fn fixtures_are_valid_inputs() {
    let v = Vocab::default();
    let pairs = toy_pairs(&v, 10);
    assert_eq!(pairs.len(), 10);
    assert!(pairs.iter().all(|p| check(&v, &p.x).count >= 1));
    assert_eq!(desk_model(&v).config.vocab_size, v.len());
}
