//! Brute-force metric oracles over whitespace-split, already-normalized text.

use aligncap::evalkit::{EvalCorpus, EvalItem};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// All n-grams of `t` with multiplicity, found by linear scan.
fn grams<'a>(t: &[&'a str], n: usize) -> Vec<(Vec<&'a str>, usize)> {
    let mut out: Vec<(Vec<&str>, usize)> = Vec::new();
    if t.len() < n {
        return out;
    }
    for i in 0..=t.len() - n {
        let g = t[i..i + n].to_vec();
        match out.iter_mut().find(|(h, _)| *h == g) {
            Some((_, c)) => *c += 1,
            None => out.push((g, 1)),
        }
    }
    out
}

fn count_of(list: &[(Vec<&str>, usize)], g: &[&str]) -> usize {
    list.iter().find(|(h, _)| h == g).map(|(_, c)| *c).unwrap_or(0)
}

/// Corpus BLEU-4 (unsmoothed) or the mean of sentence scores.
pub fn bleu_oracle(items: &[(String, Vec<String>)], sentence_mean: bool) -> f64 {
    let mut stats = Vec::new();
    for (c, refs) in items {
        let c = words(c);
        let refs: Vec<Vec<&str>> = refs.iter().map(|r| words(r)).collect();
        let mut m = [0usize; 4];
        let mut t = [0usize; 4];
        for n in 1..=4 {
            for (g, k) in grams(&c, n) {
                let best = refs.iter().map(|r| count_of(&grams(r, n), &g)).max().unwrap_or(0);
                m[n - 1] += k.min(best);
                t[n - 1] += k;
            }
        }
        let mut rl = usize::MAX;
        let mut best_d = usize::MAX;
        for r in &refs {
            let d = (r.len() as i64 - c.len() as i64).unsigned_abs() as usize;
            if d < best_d || (d == best_d && r.len() < rl) {
                best_d = d;
                rl = r.len();
            }
        }
        stats.push((m, t, c.len(), rl));
    }
    let score = |m: [usize; 4], t: [usize; 4], c: usize, r: usize| -> f64 {
        if c == 0 || m.contains(&0) {
            return 0.0;
        }
        let mut prod = 1.0;
        for n in 0..4 {
            prod *= m[n] as f64 / t[n] as f64;
        }
        let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        bp * prod.powf(0.25)
    };
    if items.is_empty() {
        return 0.0;
    }
    if sentence_mean {
        stats.iter().map(|&(m, t, c, r)| score(m, t, c, r)).sum::<f64>() / stats.len() as f64
    } else {
        let mut m = [0; 4];
        let mut t = [0; 4];
        let (mut c, mut r) = (0, 0);
        for s in &stats {
            for n in 0..4 {
                m[n] += s.0[n];
                t[n] += s.1[n];
            }
            c += s.2;
            r += s.3;
        }
        score(m, t, c, r)
    }
}

fn is_subsequence(sub: &[&str], of: &[&str]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|w| it.any(|x| x == w))
}

/// Longest common subsequence by trying every subset of `a` (|a| ≤ 16).
pub fn lcs_exhaustive(a: &[&str], b: &[&str]) -> usize {
    assert!(a.len() <= 16);
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<&str> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        if is_subsequence(&sub, b) {
            best = k;
        }
    }
    best
}

pub fn rouge_oracle(items: &[(String, Vec<String>)]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (c, refs) in items {
        let c = words(c);
        let mut best: f64 = 0.0;
        for r in refs {
            let r = words(r);
            let l = lcs_exhaustive(&c, &r) as f64;
            if l > 0.0 {
                let p = l / c.len() as f64;
                let rec = l / r.len() as f64;
                let b2 = 1.2f64 * 1.2;
                best = best.max((1.0 + b2) * p * rec / (rec + b2 * p));
            }
        }
        total += best;
    }
    total / items.len() as f64
}

/// CIDEr with dense vectors over the list of every n-gram seen anywhere.
pub fn cider_oracle(items: &[(String, Vec<String>)]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let n_docs = items.len() as f64;
    let mut total = 0.0;
    for (c, refs) in items {
        let c = words(c);
        let mut item = 0.0;
        for n in 1..=4 {
            // dictionary: every n-gram of this candidate and its references
            let mut dict: Vec<Vec<&str>> = Vec::new();
            for t in std::iter::once(&c).chain(refs.iter().map(|r| words(r)).collect::<Vec<_>>().iter()) {
                for (g, _) in grams(t, n) {
                    if !dict.contains(&g) {
                        dict.push(g);
                    }
                }
            }
            let idf: Vec<f64> = dict
                .iter()
                .map(|g| {
                    let df = items
                        .iter()
                        .filter(|(_, rs)| rs.iter().any(|r| count_of(&grams(&words(r), n), g) > 0))
                        .count();
                    n_docs.ln() - (df.max(1) as f64).ln()
                })
                .collect();
            let vec_of = |t: &[&str]| -> Vec<f64> {
                let gs = grams(t, n);
                dict.iter().zip(&idf).map(|(g, w)| count_of(&gs, g) as f64 * w).collect()
            };
            let vc = vec_of(&c);
            let mut s = 0.0;
            for r in refs {
                let vr = vec_of(&words(r));
                let dot: f64 = vc.iter().zip(&vr).map(|(a, b)| a * b).sum();
                let na: f64 = vc.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nb: f64 = vr.iter().map(|a| a * a).sum::<f64>().sqrt();
                if na > 0.0 && nb > 0.0 {
                    s += dot / (na * nb);
                }
            }
            item += s / refs.len() as f64;
        }
        total += 10.0 * item / 4.0;
    }
    total / items.len() as f64
}

const WORDS: [&str; 6] = ["sad", "low", "voice", "slow", "speaker", "calm"];

pub fn random_sentence(r: &mut ChaCha8Rng, max_len: usize) -> String {
    let n = r.random_range(0..=max_len);
    (0..n).map(|_| WORDS[r.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Small random corpus; candidates may be empty, references never are.
pub fn random_case(r: &mut ChaCha8Rng, max_len: usize) -> Vec<(String, Vec<String>)> {
    let n_items = r.random_range(1..=5);
    (0..n_items)
        .map(|_| {
            let c = random_sentence(r, max_len);
            let n_refs = r.random_range(1..=3);
            let refs = (0..n_refs)
                .map(|_| {
                    let mut s = random_sentence(r, max_len);
                    if s.is_empty() {
                        s = WORDS[r.random_range(0..WORDS.len())].to_string();
                    }
                    s
                })
                .collect();
            (c, refs)
        })
        .collect()
}

pub fn to_corpus(items: &[(String, Vec<String>)]) -> EvalCorpus {
    EvalCorpus::from(
        items
            .iter()
            .map(|(c, rs)| EvalItem::new(c.clone(), rs.iter().cloned()))
            .collect::<Vec<_>>(),
    )
}
