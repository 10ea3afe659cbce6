use std::collections::HashMap;

use easyasr_core::edit_distance;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

/// Levenshtein distance by direct recursion on the definition, memoized on
/// suffix positions.
fn recursive(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let d = (recursive(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]))
        .min(recursive(&a[1..], b, memo) + 1)
        .min(recursive(a, &b[1..], memo) + 1);
    memo.insert((a.len(), b.len()), d);
    d
}

fn all_sequences(max_len: usize, alphabet: u8) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s: &Vec<u8>| {
                (0..alphabet).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

pub fn oracle() -> Outcome {
    let seqs = all_sequences(6, 3);
    let mut pairs = 0usize;
    let mut memo = HashMap::new();
    for a in &seqs {
        for b in &seqs {
            memo.clear();
            let expected = recursive(a, b, &mut memo);
            let ops = edit_distance(a, b);
            ensure(ops.distance == expected, || format!("{a:?} vs {b:?}: {} != {expected}", ops.distance))?;
            ensure(ops.substitutions + ops.insertions + ops.deletions == expected, || {
                format!("{a:?} vs {b:?}: operation counts {ops:?}")
            })?;
            pairs += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut random = || -> Vec<u8> {
        let n = rng.gen_range(0..12);
        (0..n).map(|_| rng.gen_range(0..4)).collect()
    };
    for _ in 0..10_000 {
        let (a, b, c) = (random(), random(), random());
        let ab = edit_distance(&a, &b).distance;
        ensure(edit_distance(&a, &a).distance == 0, || format!("d(a, a) > 0 for {a:?}"))?;
        ensure((ab == 0) == (a == b), || format!("identity of indiscernibles fails for {a:?}, {b:?}"))?;
        ensure(ab == edit_distance(&b, &a).distance, || format!("asymmetric on {a:?}, {b:?}"))?;
        let via = edit_distance(&a, &c).distance + edit_distance(&c, &b).distance;
        ensure(ab <= via, || format!("triangle fails on {a:?}, {b:?} via {c:?}"))?;
        ensure(ab <= a.len().max(b.len()) && ab >= a.len().abs_diff(b.len()), || {
            format!("bounds fail on {a:?}, {b:?}")
        })?;
    }
    Ok(format!("{pairs} exhaustive pairs match, axioms hold on 10^4 random triples"))
}
